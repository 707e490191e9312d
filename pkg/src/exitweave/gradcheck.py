"""Finite-difference audits of the analytic gradient chain.

Four suites compare hand-derived gradients against central differences
on a deliberately tiny instance:

  1. backbone_per_sample: every per-sample per-exit loss gradient,
  2. weight_gradient: d(meta objective)/d(weight matrix) through the
     pseudo step,
  3. wpn_backward: the weight network's parameter gradients for a fixed
     linear probe of the weight matrix,
  4. end_to_end: d(meta objective)/d(weight network parameters) through
     squash, normalization, pseudo step and allocated meta loss.

The meta allocation is held fixed at the base point in suites 2 and 4:
it is a discrete selection, constant under infinitesimal perturbation.
Relative errors are vector-norm based, so isolated zero crossings do
not blow up the score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import (
    BackboneConfig,
    BackboneParams,
    batch_weighted_grad,
    forward_all,
    init_params,
    param_layout,
    per_sample_grads,
    pseudo_step,
)
from .errors import ConfigError
from .numkit import RngStream
from .trainer import meta_objective
from .exitpolicy import allocate_meta
from .wpn import WpnConfig, WpnParams, init_wpn, make_weights, meta_weight_grad, wpn_backward, wpn_forward

PARAM_CAP = 2000


@dataclass
class SuiteResult:
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance


def rel_err(analytic: np.ndarray, fd: np.ndarray) -> float:
    """||a - f|| / max(||a||, ||f||); 0 when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    f = np.asarray(fd, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(f))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - f) / denom)


def fd_loss_grads(params: BackboneParams, batch: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Central-difference per-sample per-exit gradients, (B, K, P)."""
    flat = params.flatten()
    b = batch.shape[0]
    k = params.config.num_exits
    out = np.empty((b, k, flat.shape[0]))
    for p in range(flat.shape[0]):
        step = 1e-5 * max(1.0, abs(flat[p]))
        up, dn = flat.copy(), flat.copy()
        up[p] += step
        dn[p] -= step
        plus = forward_all(BackboneParams.from_flat(params.config, up), batch, labels).losses
        minus = forward_all(BackboneParams.from_flat(params.config, dn), batch, labels).losses
        out[:, :, p] = (plus - minus) / (2.0 * step)
    return out


def _flip_largest(arr: np.ndarray) -> np.ndarray:
    """Sabotage helper: negate the largest-magnitude entry."""
    out = arr.copy()
    idx = np.unravel_index(np.argmax(np.abs(out)), out.shape)
    out[idx] = -out[idx]
    return out


@dataclass
class _Instance:
    backbone: BackboneParams
    wpn: WpnParams
    train_x: np.ndarray
    train_y: np.ndarray
    meta_x: np.ndarray
    meta_y: np.ndarray
    alpha: float


_KINK_MARGIN = 1e-3


def _min_preactivation(params: BackboneParams, batch: np.ndarray) -> float:
    """Smallest |z| over every rectifier input in the trunk."""
    h = batch
    worst = np.inf
    for block in params.blocks:
        z = h @ block.weight.T + block.bias
        worst = min(worst, float(np.min(np.abs(z))))
        h = np.maximum(z, 0.0)
    return worst


def _build_instance(backbone_cfg: BackboneConfig, wpn_cfg: WpnConfig, seed: int) -> _Instance:
    total = param_layout(backbone_cfg)[2]
    if total > PARAM_CAP:
        raise ConfigError(
            f"gradcheck refuses configurations above {PARAM_CAP} backbone parameters "
            f"(got {total}); finite differences at that size are too slow to be useful"
        )
    root = RngStream(seed)
    backbone = init_params(backbone_cfg, root.child("init-backbone"))
    wpn_params = init_wpn(wpn_cfg, root.child("init-wpn"))
    data = root.child("data")
    b = 6
    # central differences are only meaningful away from the rectifier kinks
    # (a dead layer over zero-initialized biases lands exactly on one), so
    # redraw any batch whose preactivations come too close; the meta batch
    # is screened at the pseudo params, where its forwards get differentiated
    for _ in range(64):
        train_x = data.standard_normal((b, backbone_cfg.input_dim))
        train_y = data.integers(0, backbone_cfg.num_classes, b).astype(np.int64)
        meta_x = data.standard_normal((b, backbone_cfg.input_dim))
        meta_y = data.integers(0, backbone_cfg.num_classes, b).astype(np.int64)
        inst = _Instance(backbone, wpn_params, train_x, train_y, meta_x, meta_y, alpha=0.05)
        if _min_preactivation(backbone, train_x) <= _KINK_MARGIN:
            continue
        psg = per_sample_grads(backbone, train_x, train_y)
        losses = forward_all(backbone, train_x, train_y).losses
        raw, _ = wpn_forward(wpn_params, losses)
        _, weights, _ = make_weights(raw, wpn_cfg.delta)
        pseudo = pseudo_step(backbone, psg, weights, inst.alpha)
        if _min_preactivation(pseudo, meta_x) > _KINK_MARGIN:
            return inst
    raise ConfigError(
        "could not draw a finite-difference instance clear of rectifier kinks; "
        "try a different seed"
    )


def run_suites(
    backbone_cfg: BackboneConfig,
    wpn_cfg: WpnConfig,
    seed: int = 0,
    q: float = 0.75,
    sabotage: bool = False,
) -> list[SuiteResult]:
    """Run all four FD suites; sabotage flips one sign in the first suite."""
    inst = _build_instance(backbone_cfg, wpn_cfg, seed)
    results = []

    # 1. per-sample backbone gradients
    analytic = per_sample_grads(inst.backbone, inst.train_x, inst.train_y)
    if sabotage:
        analytic = _flip_largest(analytic)
    fd = fd_loss_grads(inst.backbone, inst.train_x, inst.train_y)
    worst = max(
        rel_err(analytic[i, k], fd[i, k])
        for i in range(analytic.shape[0])
        for k in range(analytic.shape[1])
    )
    results.append(SuiteResult("backbone_per_sample", worst, 1e-5))

    # shared pieces for the meta chain
    psg = per_sample_grads(inst.backbone, inst.train_x, inst.train_y)
    tr_losses = forward_all(inst.backbone, inst.train_x, inst.train_y).losses
    raw, fwd_cache = wpn_forward(inst.wpn, tr_losses)
    _, weights, w_cache = make_weights(raw, inst.wpn.config.delta)
    pseudo = pseudo_step(inst.backbone, psg, weights, inst.alpha)
    meta_outs = forward_all(pseudo, inst.meta_x, inst.meta_y)
    alloc = allocate_meta(meta_outs.confidences, q)
    _, mask = meta_objective(meta_outs, alloc)

    def meta_loss_for_weights(w: np.ndarray) -> float:
        stepped = pseudo_step(inst.backbone, psg, w, inst.alpha)
        outs = forward_all(stepped, inst.meta_x, inst.meta_y)
        return float(np.sum(mask * outs.losses))

    # 2. weight gradient through the pseudo step (allocation fixed)
    meta_grad = batch_weighted_grad(pseudo, inst.meta_x, inst.meta_y, mask)
    dl_dw = meta_weight_grad(psg, meta_grad, inst.alpha, inst.train_x.shape[0])
    fd_w = np.empty_like(weights)
    for i in range(weights.shape[0]):
        for k in range(weights.shape[1]):
            step = 1e-4 * max(1.0, abs(weights[i, k]))
            wp, wm = weights.copy(), weights.copy()
            wp[i, k] += step
            wm[i, k] -= step
            fd_w[i, k] = (meta_loss_for_weights(wp) - meta_loss_for_weights(wm)) / (2.0 * step)
    results.append(SuiteResult("weight_gradient", rel_err(dl_dw, fd_w), 1e-4))

    # 3. weight-network backward for a fixed linear probe sum(c * weights)
    probe = RngStream(seed).child("probe").standard_normal(weights.shape)
    analytic_wpn = wpn_backward(inst.wpn, fwd_cache, w_cache, probe)
    flat_g = inst.wpn.flatten()

    def probe_value(flat: np.ndarray) -> float:
        r, _ = wpn_forward(WpnParams.from_flat(inst.wpn.config, flat), tr_losses)
        _, w, _ = make_weights(r, inst.wpn.config.delta)
        return float(np.sum(probe * w))

    fd_wpn = np.empty_like(flat_g)
    for p in range(flat_g.shape[0]):
        step = 1e-5 * max(1.0, abs(flat_g[p]))
        up, dn = flat_g.copy(), flat_g.copy()
        up[p] += step
        dn[p] -= step
        fd_wpn[p] = (probe_value(up) - probe_value(dn)) / (2.0 * step)
    results.append(SuiteResult("wpn_backward", rel_err(analytic_wpn, fd_wpn), 1e-6))

    # 4. end to end: meta objective as a function of the network params
    analytic_e2e = wpn_backward(inst.wpn, fwd_cache, w_cache, dl_dw)

    def chain_value(flat: np.ndarray) -> float:
        r, _ = wpn_forward(WpnParams.from_flat(inst.wpn.config, flat), tr_losses)
        _, w, _ = make_weights(r, inst.wpn.config.delta)
        return meta_loss_for_weights(w)

    fd_e2e = np.empty_like(flat_g)
    for p in range(flat_g.shape[0]):
        step = 1e-4 * max(1.0, abs(flat_g[p]))
        up, dn = flat_g.copy(), flat_g.copy()
        up[p] += step
        dn[p] -= step
        fd_e2e[p] = (chain_value(up) - chain_value(dn)) / (2.0 * step)
    results.append(SuiteResult("end_to_end", rel_err(analytic_e2e, fd_e2e), 1e-4))
    return results
