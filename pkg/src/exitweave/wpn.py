"""Weight prediction network: per-sample loss vectors in, loss weights out.

A small ReLU MLP maps each sample's K per-exit losses to K raw scores.
The scores are squashed and normalized into training weights:

    s      = sigmoid(raw)                 entries in (0, 1)
    pre    = delta * (2 s - 1)            entries in (-delta, +delta)
    ptb    = pre - mean(pre)              mean over ALL B*K entries
    weight = 1 + ptb                      mean exactly 1

so the network can only redistribute emphasis between samples and exits,
never change the total. With delta = 0 every weight is exactly 1 and the
whole mechanism degenerates to plain unweighted training.

The backward pass here is hand-derived. Its input is dL/d(weight) for a
downstream scalar L; the zero-sum normalization is its own transpose
(g -> g - mean(g)), the squash contributes 2 * delta * s * (1 - s), and
the rest is a standard MLP backward. `meta_weight_grad` supplies that
dL/d(weight) for the lookahead objective: because the lookahead step is
affine in the weights, the exact derivative is an inner product between
the objective's parameter gradient and the stored per-sample gradients,
with no second-order terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import Affine
from .errors import ConfigError, ShapeError, UsageError
from .numkit import RngStream, require_finite, sigmoid_stable


@dataclass(frozen=True)
class WpnConfig:
    """Shape of the weight prediction network.

    num_exits fixes both the input and output width. delta bounds the
    perturbation magnitude; delta = 0 is the degenerate all-ones case.
    """

    num_exits: int
    hidden_width: int = 500
    hidden_depth: int = 1
    delta: float = 0.8

    def __post_init__(self) -> None:
        if self.num_exits < 1:
            raise ConfigError(f"num_exits must be >= 1, got {self.num_exits}")
        if self.hidden_width < 1 or self.hidden_depth < 1:
            raise ConfigError("hidden_width and hidden_depth must be >= 1")
        if not (0.0 <= self.delta < 1.0):
            raise ConfigError(f"delta must lie in [0, 1), got {self.delta}")


@dataclass
class WpnParams:
    config: WpnConfig
    layers: list[Affine]

    @property
    def num_params(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)

    def flatten(self) -> np.ndarray:
        parts = []
        for layer in self.layers:
            parts.append(layer.weight.ravel())
            parts.append(layer.bias)
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, config: WpnConfig, flat: np.ndarray) -> "WpnParams":
        flat = np.asarray(flat, dtype=np.float64)
        dims = _layer_dims(config)
        total = sum(o * i + o for i, o in dims)
        if flat.shape != (total,):
            raise ShapeError(f"flat parameter vector has shape {flat.shape}, expected ({total},)")
        layers = []
        offset = 0
        for i, o in dims:
            w = flat[offset : offset + o * i].reshape(o, i).copy()
            offset += o * i
            b = flat[offset : offset + o].copy()
            offset += o
            layers.append(Affine(w, b))
        return cls(config, layers)

    def copy(self) -> "WpnParams":
        return WpnParams.from_flat(self.config, self.flatten())


def _layer_dims(config: WpnConfig) -> list[tuple[int, int]]:
    """(in, out) of each affine layer: K -> width (x depth, ReLU) -> K."""
    dims = [(config.num_exits, config.hidden_width)]
    for _ in range(config.hidden_depth - 1):
        dims.append((config.hidden_width, config.hidden_width))
    dims.append((config.hidden_width, config.num_exits))
    return dims


def init_wpn(config: WpnConfig, rng: RngStream) -> WpnParams:
    """Fan-in scaled uniform weights, zero biases, fixed draw order."""
    layers = []
    for i, o in _layer_dims(config):
        s = 1.0 / np.sqrt(i)
        layers.append(Affine(rng.uniform(-s, s, (o, i)), np.zeros(o)))
    return WpnParams(config, layers)


@dataclass
class WpnForwardCache:
    """Activations a forward pass leaves behind for the backward pass."""

    inputs: list[np.ndarray]
    preacts: list[np.ndarray]


def wpn_forward(params: WpnParams, loss_matrix) -> tuple[np.ndarray, WpnForwardCache]:
    """Raw (B, K) scores for a (B, K) matrix of per-exit sample losses."""
    x = np.ascontiguousarray(loss_matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.config.num_exits:
        raise ShapeError(
            f"loss matrix shape {x.shape} does not match num_exits={params.config.num_exits}"
        )
    require_finite(x, "loss matrix")
    inputs = [x]
    preacts = []
    h = x
    for layer in params.layers[:-1]:
        z = h @ layer.weight.T + layer.bias
        preacts.append(z)
        h = np.maximum(z, 0.0)
        inputs.append(h)
    last = params.layers[-1]
    raw = h @ last.weight.T + last.bias
    return raw, WpnForwardCache(inputs, preacts)


@dataclass
class WeightCache:
    """Squash state needed to backpropagate through make_weights."""

    sigmoids: np.ndarray
    delta: float


def make_weights(raw, delta: float) -> tuple[np.ndarray, np.ndarray, WeightCache]:
    """Turn raw scores into zero-sum perturbations and mean-one weights.

    Returns (perturbation, weights, cache): perturbation sums to zero
    over the whole matrix, weights = 1 + perturbation. Weights stay
    positive whenever delta < 0.5; larger delta admits negative weights.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2:
        raise ShapeError(f"raw scores must be 2-D, got ndim={raw.ndim}")
    if not (0.0 <= delta < 1.0):
        raise ConfigError(f"delta must lie in [0, 1), got {delta}")
    require_finite(raw, "raw scores")
    s = sigmoid_stable(raw)
    pre = delta * (2.0 * s - 1.0)
    ptb = pre - pre.mean()
    return ptb, 1.0 + ptb, WeightCache(s, delta)


def meta_weight_grad(psg: np.ndarray, meta_grad: np.ndarray, alpha: float, n: int) -> np.ndarray:
    """Exact d(lookahead objective)/d(weight matrix), shape (B, K).

    The lookahead parameters are theta - (alpha/n) * sum w[i,k] g[i,k],
    an affine map of the weights, so the derivative wrt w[i,k] is the
    inner product -(alpha/n) * <meta_grad, g[i,k]> with no curvature
    correction.
    """
    psg = np.asarray(psg, dtype=np.float64)
    meta_grad = np.asarray(meta_grad, dtype=np.float64)
    if psg.ndim != 3 or meta_grad.shape != (psg.shape[2],):
        raise ShapeError(
            f"per-sample grads {psg.shape} and objective grad {meta_grad.shape} do not align"
        )
    if n < 1:
        raise ShapeError(f"normalizer n must be >= 1, got {n}")
    return -(alpha / n) * np.einsum("bkp,p->bk", psg, meta_grad)


def wpn_backward(
    params: WpnParams,
    fwd_cache: WpnForwardCache,
    weight_cache: WeightCache,
    dl_dweights: np.ndarray,
) -> np.ndarray:
    """Flat gradient wrt the network parameters given dL/d(weights).

    Chain: weights = 1 + (pre - mean(pre)) with pre = delta*(2*sigmoid(raw)-1),
    then the MLP. The caches must come from the same forward pass;
    mismatched batch shapes raise UsageError.
    """
    g = np.asarray(dl_dweights, dtype=np.float64)
    if g.ndim != 2:
        raise ShapeError(f"dl_dweights must be 2-D, got ndim={g.ndim}")
    if weight_cache.sigmoids.shape != g.shape or fwd_cache.inputs[0].shape[0] != g.shape[0]:
        raise UsageError(
            "backward caches do not match the gradient shape; "
            "wpn_backward must consume caches from the matching forward pass"
        )
    if g.shape[1] != params.config.num_exits:
        raise ShapeError(f"gradient width {g.shape[1]} != num_exits {params.config.num_exits}")
    # Zero-sum normalization: J = I - (1/BK) 11^T is symmetric.
    g = g - g.mean()
    s = weight_cache.sigmoids
    dz = g * (2.0 * weight_cache.delta) * s * (1.0 - s)
    grads: list[tuple[np.ndarray, np.ndarray] | None] = [None] * len(params.layers)
    for idx in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[idx]
        grads[idx] = (dz.T @ fwd_cache.inputs[idx], dz.sum(axis=0))
        if idx > 0:
            dh = dz @ layer.weight
            dz = dh * (fwd_cache.preacts[idx - 1] > 0)
    parts = []
    for gw, gb in grads:
        parts.append(gw.ravel())
        parts.append(gb)
    return np.concatenate(parts)


@dataclass
class AdamState:
    """First/second moment buffers plus the step counter."""

    m: np.ndarray
    v: np.ndarray
    step: int

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(
    flat_params: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[np.ndarray, AdamState]:
    """Standard bias-corrected Adam on a flat parameter vector."""
    flat_params = np.asarray(flat_params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != flat_params.shape:
        raise ShapeError(f"grad shape {grad.shape} does not match params {flat_params.shape}")
    require_finite(grad, "grad")
    t = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new = flat_params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new, AdamState(m, v, t)
