"""Training loops: meta-learned sample weighting plus ablation variants.

The full method ("learned") interleaves three updates on each half of a
mini-batch:

  1. Lookahead. Per-sample per-exit gradients of the train half are
     stored; the weight network scores the train half's loss matrix into
     a weight matrix w; a momentum-free pseudo step moves the backbone
     against the w-weighted loss.
  2. Weight network update. The pseudo backbone is evaluated on the
     other half (the meta half); a budget-driven greedy allocation
     assigns each meta sample to one exit by confidence; the meta
     objective averages each exit's loss over its allocated subset. Its
     gradient reaches the weight network through an exact analytic
     chain: the pseudo parameters are affine in w, so d(meta)/dw is an
     inner product of stored gradients, and the rest is the weight
     network's own backward pass, consumed by Adam.
  3. Real update. Weights are recomputed with the updated weight
     network and the backbone takes an SGD(momentum, weight decay) step
     against the reweighted loss.

Each mini-batch is split into two halves which swap train/meta roles, so
every sample contributes to both sides per iteration. Steps 1-2 run only
on iterations where t % interval == 0; step 3 runs every time.

Variants reuse the same half-batch schedule with pieces disabled:
"baseline" is one unweighted full-batch step, "fixed_*" applies a
constant per-exit weight row, "selection" trains on the allocated
subsets without weighting, "frozen_wpn" loads a weight network from a
checkpoint and never updates it, "whole_meta" replaces the allocated
meta objective with each exit's mean loss over the entire meta half.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .backbone import (
    BackboneConfig,
    BackboneParams,
    ExitOutputs,
    batch_weighted_grad,
    forward_all,
    grad_weighted_loss,
    init_params,
    per_sample_grads,
    pseudo_step,
    sgd_step,
)
from .datahub import Dataset, make_batches
from .errors import ConfigError, NumericError, TrainingError
from .exitpolicy import AllocationResult, allocate_meta, calibrate_thresholds, dynamic_infer
from .numkit import RngStream
from .wpn import (
    AdamState,
    WpnConfig,
    WpnParams,
    adam_step,
    init_wpn,
    make_weights,
    meta_weight_grad,
    wpn_backward,
    wpn_forward,
)

VARIANT_NAMES = (
    "learned",
    "baseline",
    "fixed_ascending",
    "fixed_descending",
    "selection",
    "frozen_wpn",
    "whole_meta",
)

LR_SCHEDULES = ("constant", "cosine")

# Variants that carry a weight prediction network.
_WPN_VARIANTS = ("learned", "whole_meta", "frozen_wpn")

FIXED_WEIGHT_LOW = 0.6
FIXED_WEIGHT_HIGH = 1.4


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run.

    alpha is the backbone learning rate (also the pseudo-step size),
    beta the Adam rate for the weight network, interval the WPN update
    period in iterations, q the budget knob used for meta allocation.
    batch_size must be even because every batch is split into two
    halves that exchange train and meta roles.
    """

    epochs: int
    batch_size: int
    alpha: float
    variant: str = "learned"
    beta: float = 1e-4
    interval: int = 1
    q: float = 0.75
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_schedule: str = "cosine"
    seed: int = 0
    frozen_wpn_path: str | None = None
    log_weight_scatter: bool = False
    scatter_cap: int = 2000

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 2 or self.batch_size % 2 != 0:
            raise ConfigError(f"batch_size must be even and >= 2, got {self.batch_size}")
        if self.alpha <= 0 or self.beta <= 0:
            raise ConfigError("alpha and beta must be positive")
        if self.interval < 1:
            raise ConfigError(f"interval must be >= 1, got {self.interval}")
        if self.q <= 0:
            raise ConfigError(f"q must be positive, got {self.q}")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}")
        if self.variant not in VARIANT_NAMES:
            raise ConfigError(f"variant must be one of {VARIANT_NAMES}, got {self.variant!r}")
        if self.variant == "frozen_wpn" and not self.frozen_wpn_path:
            raise ConfigError("frozen_wpn variant requires frozen_wpn_path")
        if self.scatter_cap < 0:
            raise ConfigError(f"scatter_cap must be >= 0, got {self.scatter_cap}")


@dataclass
class TrainState:
    """Everything that evolves across iterations."""

    backbone: BackboneParams
    wpn: WpnParams | None
    velocity: np.ndarray | None
    adam: AdamState | None
    iteration: int = 0


@dataclass
class History:
    """Per-iteration and per-epoch training records (plain JSON-able dicts)."""

    iterations: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Learning rate for one epoch: constant, or half-cosine decay to 0."""
    if config.lr_schedule == "constant" or config.epochs <= 1:
        return config.alpha
    return config.alpha * 0.5 * (1.0 + math.cos(math.pi * epoch / config.epochs))


def split_batch(features: np.ndarray, labels: np.ndarray):
    """Split a batch into two equal halves (first half, second half)."""
    n = features.shape[0]
    if n % 2 != 0 or n < 2:
        raise ConfigError(f"batch of size {n} cannot be split into equal halves")
    h = n // 2
    return (features[:h], labels[:h]), (features[h:], labels[h:])


def meta_objective(outputs: ExitOutputs, allocation: AllocationResult) -> tuple[float, np.ndarray]:
    """Allocated meta loss and its coefficient mask.

    Each exit contributes the mean loss over its allocated subset;
    exits with empty subsets contribute nothing. The mask holds
    1/|subset_k| at allocated (sample, exit) cells and 0 elsewhere, so
    sum(mask * losses) reproduces the value and the mask doubles as the
    coefficient matrix of the objective's gradient.
    """
    b, k_exits = outputs.losses.shape
    mask = np.zeros((b, k_exits))
    for k, subset in enumerate(allocation.subsets):
        if subset.size:
            mask[subset, k] = 1.0 / subset.size
    return float(np.sum(mask * outputs.losses)), mask


def whole_meta_objective(outputs: ExitOutputs) -> tuple[float, np.ndarray]:
    """Ablation objective: every exit averages over the entire meta half."""
    b, k_exits = outputs.losses.shape
    mask = np.full((b, k_exits), 1.0 / b)
    return float(np.sum(mask * outputs.losses)), mask


def meta_chain(
    pseudo: BackboneParams,
    meta_x: np.ndarray,
    meta_y: np.ndarray,
    q: float,
    psg_train: np.ndarray,
    alpha: float,
    wpn_params: WpnParams,
    fwd_cache,
    weight_cache,
    whole_meta: bool = False,
):
    """Analytic gradient of the meta objective wrt the weight network.

    Returns (wpn_grad, dl_dweights, meta_value, allocation, mask, meta_outputs).
    The allocation (and hence the mask) is treated as constant: it is a
    discrete selection, so the objective's dependence on parameters
    flows only through the allocated losses.
    """
    outs = forward_all(pseudo, meta_x, meta_y)
    if whole_meta:
        alloc = None
        value, mask = whole_meta_objective(outs)
    else:
        alloc = allocate_meta(outs.confidences, q)
        value, mask = meta_objective(outs, alloc)
    meta_grad = batch_weighted_grad(pseudo, meta_x, meta_y, mask)
    dl_dw = meta_weight_grad(psg_train, meta_grad, alpha, psg_train.shape[0])
    wpn_grad = wpn_backward(wpn_params, fwd_cache, weight_cache, dl_dw)
    return wpn_grad, dl_dw, value, alloc, mask, outs


def _check_losses(losses: np.ndarray, iteration: int) -> None:
    if not np.all(np.isfinite(losses)):
        raise TrainingError(f"non-finite training loss at iteration {iteration}; run diverged")


def weighted_substep(
    state: TrainState,
    train_x: np.ndarray,
    train_y: np.ndarray,
    meta_x: np.ndarray,
    meta_y: np.ndarray,
    config: TrainConfig,
    alpha_t: float,
    update_wpn: bool,
    scatter_budget: int = 0,
) -> dict:
    """One weighted substep; mutates state, returns a record fragment.

    With update_wpn the full lookahead/meta/real sequence runs; without
    it (off-interval iterations, frozen networks) only the reweighted
    real update happens. delta comes from the weight network's config.
    """
    delta = state.wpn.config.delta
    outs = forward_all(state.backbone, train_x, train_y)
    _check_losses(outs.losses, state.iteration)
    raw, fwd_cache = wpn_forward(state.wpn, outs.losses)
    _, weights, w_cache = make_weights(raw, delta)
    frag: dict = {
        "loss_sum": outs.losses.sum(axis=0),
        "count": train_x.shape[0],
        "alloc_sizes": None,
        "meta_loss": None,
        "scatter": [],
    }
    if update_wpn:
        psg = per_sample_grads(state.backbone, train_x, train_y)
        pseudo = pseudo_step(state.backbone, psg, weights, alpha_t)
        wpn_grad, _, meta_value, alloc, _, meta_outs = meta_chain(
            pseudo, meta_x, meta_y, config.q, psg, alpha_t,
            state.wpn, fwd_cache, w_cache,
            whole_meta=config.variant == "whole_meta",
        )
        new_flat, state.adam = adam_step(state.wpn.flatten(), wpn_grad, state.adam, config.beta)
        state.wpn = WpnParams.from_flat(state.wpn.config, new_flat)
        raw, _ = wpn_forward(state.wpn, outs.losses)
        _, weights, _ = make_weights(raw, delta)
        grad = grad_weighted_loss(psg, weights)
        frag["meta_loss"] = meta_value
        if alloc is not None:
            frag["alloc_sizes"] = [int(s) for s in alloc.sizes]
        if scatter_budget > 0 and alloc is not None:
            # What weight would the fresh network give each meta sample,
            # and did exit 1 claim it? (loss, weight, claimed) triples.
            m_raw, _ = wpn_forward(state.wpn, meta_outs.losses)
            _, m_weights, _ = make_weights(m_raw, delta)
            claimed = np.zeros(meta_x.shape[0], dtype=bool)
            claimed[alloc.subsets[0]] = True
            take = min(scatter_budget, meta_x.shape[0])
            frag["scatter"] = [
                [float(meta_outs.losses[i, 0]), float(m_weights[i, 0]), int(claimed[i])]
                for i in range(take)
            ]
    else:
        grad = batch_weighted_grad(state.backbone, train_x, train_y, weights / train_x.shape[0])
    frag["weights"] = weights
    state.backbone, state.velocity = sgd_step(
        state.backbone, grad, alpha_t, config.momentum, config.weight_decay, state.velocity
    )
    return frag


def _fixed_weight_row(num_exits: int, ascending: bool) -> np.ndarray:
    row = np.linspace(FIXED_WEIGHT_LOW, FIXED_WEIGHT_HIGH, num_exits)
    return row if ascending else row[::-1].copy()


def _plain_substep(
    state: TrainState,
    x: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
    alpha_t: float,
) -> dict:
    """Substep for the no-WPN variants (fixed rows / selection)."""
    outs = forward_all(state.backbone, x, y)
    _check_losses(outs.losses, state.iteration)
    n = x.shape[0]
    frag: dict = {
        "loss_sum": outs.losses.sum(axis=0),
        "count": n,
        "alloc_sizes": None,
        "meta_loss": None,
        "scatter": [],
        "weights": None,
    }
    if config.variant == "selection":
        alloc = allocate_meta(outs.confidences, config.q)
        _, mask = meta_objective(outs, alloc)
        grad = batch_weighted_grad(state.backbone, x, y, mask)
        frag["alloc_sizes"] = [int(s) for s in alloc.sizes]
    else:
        row = _fixed_weight_row(outs.num_exits, config.variant == "fixed_ascending")
        weights = np.broadcast_to(row, outs.losses.shape)
        grad = batch_weighted_grad(state.backbone, x, y, weights / n)
        frag["weights"] = weights
    state.backbone, state.velocity = sgd_step(
        state.backbone, grad, alpha_t, config.momentum, config.weight_decay, state.velocity
    )
    return frag


def train_step(
    state: TrainState,
    batch_x: np.ndarray,
    batch_y: np.ndarray,
    config: TrainConfig,
    alpha_t: float,
    scatter_budget: int = 0,
) -> dict:
    """One mini-batch update; mutates state and returns an iteration record.

    Half-batch variants perform two substeps (each half serves once as
    the train side and once as the other side's meta side); baseline
    performs a single unweighted full-batch step. The iteration counter
    advances once per mini-batch regardless of variant.
    """
    t = state.iteration
    if config.variant == "baseline":
        outs = forward_all(state.backbone, batch_x, batch_y)
        _check_losses(outs.losses, t)
        n = batch_x.shape[0]
        grad = batch_weighted_grad(state.backbone, batch_x, batch_y, np.full(outs.losses.shape, 1.0 / n))
        state.backbone, state.velocity = sgd_step(
            state.backbone, grad, alpha_t, config.momentum, config.weight_decay, state.velocity
        )
        frags = [{
            "loss_sum": outs.losses.sum(axis=0), "count": n, "alloc_sizes": None,
            "meta_loss": None, "scatter": [], "weights": None,
        }]
    elif config.variant in _WPN_VARIANTS:
        update = config.variant != "frozen_wpn" and t % config.interval == 0
        (xa, ya), (xb, yb) = split_batch(batch_x, batch_y)
        frags = [
            weighted_substep(state, xa, ya, xb, yb, config, alpha_t, update, scatter_budget),
        ]
        used = len(frags[0]["scatter"])
        frags.append(
            weighted_substep(state, xb, yb, xa, ya, config, alpha_t, update, scatter_budget - used)
        )
    else:
        (xa, ya), (xb, yb) = split_batch(batch_x, batch_y)
        frags = [
            _plain_substep(state, xa, ya, config, alpha_t),
            _plain_substep(state, xb, yb, config, alpha_t),
        ]
    state.iteration = t + 1
    return _merge_fragments(t, alpha_t, frags)


def _merge_fragments(t: int, alpha_t: float, frags: list[dict]) -> dict:
    total = sum(f["count"] for f in frags)
    loss = sum(f["loss_sum"] for f in frags) / total
    record: dict = {
        "iteration": t,
        "lr": alpha_t,
        "train_loss_per_exit": [float(v) for v in loss],
    }
    weight_mats = [f["weights"] for f in frags if f["weights"] is not None]
    if weight_mats:
        stacked = np.concatenate(weight_mats, axis=0)
        record["weight_mean"] = [float(v) for v in stacked.mean(axis=0)]
        record["weight_min"] = [float(v) for v in stacked.min(axis=0)]
        record["weight_max"] = [float(v) for v in stacked.max(axis=0)]
    else:
        record["weight_mean"] = record["weight_min"] = record["weight_max"] = None
    allocs = [f["alloc_sizes"] for f in frags if f["alloc_sizes"] is not None]
    record["allocation_sizes"] = allocs if allocs else None
    metas = [f["meta_loss"] for f in frags if f["meta_loss"] is not None]
    record["meta_loss"] = float(np.mean(metas)) if metas else None
    scatter = [p for f in frags for p in f["scatter"]]
    if scatter:
        record["weight_scatter"] = scatter
    return record


def _eval_epoch(state: TrainState, val_set: Dataset, config: TrainConfig, epoch: int, alpha_t: float) -> dict:
    outs = forward_all(state.backbone, val_set.features, val_set.labels)
    anytime = (outs.predictions == outs.labels[:, None]).mean(axis=0)
    thresholds = calibrate_thresholds(outs.confidences, config.q)
    dyn = dynamic_infer(outs, thresholds)
    return {
        "epoch": epoch,
        "lr": alpha_t,
        "val_anytime_accuracy": [float(a) for a in anytime],
        "val_dynamic_accuracy": dyn.accuracy,
        "val_exit_counts": [int(c) for c in dyn.exit_counts],
        "val_thresholds": [float(e) for e in thresholds],
    }


def run_training(
    config: TrainConfig,
    backbone_config: BackboneConfig,
    wpn_config: WpnConfig,
    train_set: Dataset,
    val_set: Dataset,
) -> tuple[TrainState, History]:
    """Train a backbone from scratch under the configured variant.

    Initialization, shuffling and everything downstream draw from child
    streams of config.seed, so a (config, data) pair fully determines
    the result. Returns the final state plus the full history; with
    epochs == 0 the initial state and an empty history come back.
    """
    if backbone_config.num_exits < 2:
        raise ConfigError("training requires a backbone with at least 2 exits")
    if wpn_config.num_exits != backbone_config.num_exits:
        raise ConfigError(
            f"weight network is sized for {wpn_config.num_exits} exits, "
            f"backbone has {backbone_config.num_exits}"
        )
    for ds, name in ((train_set, "train"), (val_set, "val")):
        if ds.dim != backbone_config.input_dim:
            raise ConfigError(f"{name} set feature dim {ds.dim} != input_dim {backbone_config.input_dim}")
        if ds.num_classes != backbone_config.num_classes:
            raise ConfigError(f"{name} set has {ds.num_classes} classes, model expects {backbone_config.num_classes}")
    root = RngStream(config.seed)
    backbone = init_params(backbone_config, root.child("init-backbone"))
    if config.variant in _WPN_VARIANTS:
        if config.variant == "frozen_wpn":
            from .checkpoint import load_wpn_params

            wpn_params = load_wpn_params(config.frozen_wpn_path)
            if wpn_params.config.num_exits != backbone_config.num_exits:
                raise ConfigError(
                    f"frozen weight network expects {wpn_params.config.num_exits} exits, "
                    f"backbone has {backbone_config.num_exits}"
                )
        else:
            wpn_params = init_wpn(wpn_config, root.child("init-wpn"))
        adam = AdamState.zeros(wpn_params.num_params)
    else:
        wpn_params, adam = None, None
    state = TrainState(backbone=backbone, wpn=wpn_params, velocity=None, adam=adam)
    history = History()
    for epoch in range(config.epochs):
        alpha_t = lr_at(config, epoch)
        budget = config.scatter_cap if config.log_weight_scatter else 0
        for idx in make_batches(train_set, config.batch_size, epoch, config.seed, drop_last=True):
            try:
                record = train_step(
                    state, train_set.features[idx], train_set.labels[idx], config, alpha_t, budget
                )
            except NumericError as exc:
                # overflow in a forward or gradient before the loss check fires
                raise TrainingError(
                    f"non-finite values at iteration {state.iteration}; run diverged"
                ) from exc
            budget -= len(record.get("weight_scatter", []))
            history.iterations.append(record)
        history.epochs.append(_eval_epoch(state, val_set, config, epoch, alpha_t))
    return state, history
