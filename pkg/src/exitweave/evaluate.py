"""Model evaluation: anytime accuracy tables and budget sweeps.

Anytime evaluation asks how accurate each exit is when every sample is
forced through it. The dynamic sweep asks what the threshold policy
delivers across a grid of budget knobs: for each q, thresholds are
calibrated on a validation split and replayed on a test split, yielding
(accuracy, expected cost) pairs that trace the accuracy/compute curve.
Forward passes are shared across the whole grid, so sweeping is cheap.
"""

from __future__ import annotations

import numpy as np

from .backbone import BackboneParams, count_mul_adds, forward_all
from .datahub import Dataset
from .exitpolicy import calibrate_thresholds, dynamic_infer, expected_cost


def anytime_accuracy(params: BackboneParams, dataset: Dataset) -> np.ndarray:
    """Per-exit accuracy with every sample routed through every exit, (K,)."""
    outs = forward_all(params, dataset.features, dataset.labels)
    return (outs.predictions == outs.labels[:, None]).mean(axis=0)


def default_q_grid() -> np.ndarray:
    """The standard budget sweep: 40 points from 0.05 to 2.0 inclusive."""
    return np.linspace(0.05, 2.0, 40)


def dynamic_sweep(
    params: BackboneParams,
    val_set: Dataset,
    test_set: Dataset,
    q_grid=None,
) -> list[dict]:
    """Calibrate on val and score on test at every q in the grid.

    Returns one row per q: thresholds, test exit counts, test accuracy,
    and expected per-sample mul-adds under the architecture's cost
    vector. Rows are ordered exactly as the grid.
    """
    grid = default_q_grid() if q_grid is None else np.asarray(q_grid, dtype=np.float64)
    costs = count_mul_adds(params.config)
    val_outs = forward_all(params, val_set.features, val_set.labels)
    test_outs = forward_all(params, test_set.features, test_set.labels)
    rows = []
    for q in grid:
        thresholds = calibrate_thresholds(val_outs.confidences, float(q))
        result = dynamic_infer(test_outs, thresholds)
        rows.append({
            "q": float(q),
            "thresholds": [float(e) for e in thresholds],
            "exit_counts": [int(c) for c in result.exit_counts],
            "accuracy": result.accuracy,
            "expected_muladds": expected_cost(result.exit_counts, costs),
        })
    return rows
