"""Command line interface: train, eval, gradcheck, allocate.

Runs are described by a JSON config file with four semantic sections
(dataset, backbone, wpn, train) plus an output section. Unknown keys
are rejected anywhere in the document, defaults are materialized, and
the resolved config is written next to the run outputs together with a
hash of its semantic sections; that hash doubles as the run id, so the
same config and seed always produce the same id and byte-identical
history/metrics files.

Exit codes: 0 success, 2 configuration or file-format problems
(including a missing config file, which is reported by path), 1
runtime/numeric failures such as a diverged run.

EXITWEAVE_THREADS caps the BLAS thread pools. It must take effect
before numpy first loads, which is why this module defers every heavy
import until after the cap is applied.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from .errors import (
    CompatibilityError,
    ConfigError,
    DomainError,
    ExitweaveError,
    FormatError,
    NumericError,
    ShapeError,
    TrainingError,
    UsageError,
)

CONFIG_FORMAT = "exitweave-config"
HISTORY_FORMAT = "exitweave-history"
METRICS_FORMAT = "exitweave-metrics"
VERSION = 1

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)


def _apply_thread_cap() -> None:
    cap = os.environ.get("EXITWEAVE_THREADS")
    if cap is None or cap == "":
        return
    if not cap.isdigit() or int(cap) < 1:
        raise ConfigError(f"EXITWEAVE_THREADS must be a positive integer, got {cap!r}")
    for var in _THREAD_VARS:
        os.environ.setdefault(var, cap)


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------

_TRAIN_DEFAULTS = {
    "variant": "learned",
    "beta": 1e-4,
    "interval": 1,
    "q": 0.75,
    "momentum": 0.9,
    "weight_decay": 1e-4,
    "lr_schedule": "cosine",
    "seed": 0,
    "frozen_wpn_path": None,
    "log_weight_scatter": False,
    "scatter_cap": 2000,
}
_TRAIN_REQUIRED = {"epochs", "batch_size", "alpha"}

_WPN_DEFAULTS = {"hidden_width": 500, "hidden_depth": 1, "delta": 0.8}

_DATASET_KEYS = {
    "synthetic": (
        {"classes", "dim", "train_per_class", "val_per_class", "test_per_class"},
        {"spread": 1.0, "radius": 3.0, "seed": 0, "longtail_factor": 1.0},
    ),
    "container": ({"train", "val", "test"}, {"longtail_factor": 1.0, "seed": 0}),
    "idx": (
        {"train_images", "train_labels", "val_images", "val_labels", "test_images", "test_labels"},
        {"longtail_factor": 1.0, "seed": 0},
    ),
    "cifar_bin": (
        {"train", "test", "val_holdout"},
        {"num_classes": 10, "seed": 0, "longtail_factor": 1.0},
    ),
}


def _check_keys(section: dict, allowed: set, required: set, where: str) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    missing = sorted(required - set(section))
    if missing:
        raise ConfigError(f"missing required key(s) in {where}: {', '.join(missing)}")


def _resolve_section(section: dict, required: set, defaults: dict, where: str) -> dict:
    _check_keys(section, required | set(defaults), required, where)
    out = dict(defaults)
    out.update(section)
    return out


def load_config(path) -> dict:
    """Read, validate and default-fill a run config file."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{p}: config must be a JSON object")
    _check_keys(doc, {"dataset", "backbone", "wpn", "train", "output"}, {"dataset", "backbone", "train"}, "config")

    ds = doc["dataset"]
    if not isinstance(ds, dict) or "kind" not in ds:
        raise ConfigError("dataset section must be an object with a 'kind' key")
    kind = ds["kind"]
    if kind not in _DATASET_KEYS:
        raise ConfigError(f"unknown dataset kind {kind!r}; expected one of {sorted(_DATASET_KEYS)}")
    required, defaults = _DATASET_KEYS[kind]
    resolved_ds = _resolve_section(
        {k: v for k, v in ds.items() if k != "kind"}, required, defaults, f"dataset ({kind})"
    )
    resolved_ds["kind"] = kind

    bb = _resolve_section(
        doc["backbone"], {"trunk_widths"}, {"input_dim": None, "num_classes": None}, "backbone"
    )
    wpn = _resolve_section(doc.get("wpn", {}), set(), _WPN_DEFAULTS, "wpn")
    train = _resolve_section(doc["train"], _TRAIN_REQUIRED, _TRAIN_DEFAULTS, "train")
    output = _resolve_section(doc.get("output", {}), set(), {"dir": "runs/default"}, "output")
    return {"dataset": resolved_ds, "backbone": bb, "wpn": wpn, "train": train, "output": output}


def config_hash(resolved: dict) -> str:
    """Hash of the semantic sections; the output location does not count."""
    semantic = {k: resolved[k] for k in ("dataset", "backbone", "wpn", "train") if k in resolved}
    payload = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _resolve_path(base_dir: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base_dir / p


def build_datasets(ds_doc: dict, base_dir: Path):
    """Materialize (train, val, test) Datasets from a resolved dataset section."""
    from .datahub import (
        Dataset,
        gen_synthetic_gaussians,
        load_cifar_bin,
        load_dataset,
        load_idx,
        longtail_subsample,
    )
    from .numkit import RngStream

    kind = ds_doc["kind"]
    seed = int(ds_doc.get("seed", 0))
    root = RngStream(seed)
    if kind == "synthetic":
        splits = []
        for split, per_class in (
            ("train", ds_doc["train_per_class"]),
            ("val", ds_doc["val_per_class"]),
            ("test", ds_doc["test_per_class"]),
        ):
            splits.append(
                gen_synthetic_gaussians(
                    int(ds_doc["classes"]), int(ds_doc["dim"]), int(per_class),
                    float(ds_doc["spread"]), root.child(f"synth-{split}"),
                    split=split, radius=float(ds_doc["radius"]),
                )
            )
        train, val, test = splits
    elif kind == "container":
        train = load_dataset(_resolve_path(base_dir, ds_doc["train"]))
        val = load_dataset(_resolve_path(base_dir, ds_doc["val"]))
        test = load_dataset(_resolve_path(base_dir, ds_doc["test"]))
    elif kind == "idx":
        train = load_idx(
            _resolve_path(base_dir, ds_doc["train_images"]),
            _resolve_path(base_dir, ds_doc["train_labels"]), split="train",
        )
        val = load_idx(
            _resolve_path(base_dir, ds_doc["val_images"]),
            _resolve_path(base_dir, ds_doc["val_labels"]), split="val",
        )
        test = load_idx(
            _resolve_path(base_dir, ds_doc["test_images"]),
            _resolve_path(base_dir, ds_doc["test_labels"]), split="test",
        )
    else:  # cifar_bin
        paths = ds_doc["train"]
        if isinstance(paths, str):
            paths = [paths]
        full = load_cifar_bin([_resolve_path(base_dir, p) for p in paths],
                              num_classes=int(ds_doc["num_classes"]), split="train")
        holdout = int(ds_doc["val_holdout"])
        if not (0 < holdout < len(full)):
            raise ConfigError(f"val_holdout must lie in (0, {len(full)}), got {holdout}")
        import numpy as np

        perm = root.child("val-holdout").permutation(len(full))
        val = full.subset(np.sort(perm[:holdout]), split="val")
        train = full.subset(np.sort(perm[holdout:]), split="train")
        test = load_cifar_bin(_resolve_path(base_dir, ds_doc["test"]),
                              num_classes=int(ds_doc["num_classes"]), split="test")
    factor = float(ds_doc.get("longtail_factor", 1.0))
    if factor != 1.0:
        train = longtail_subsample(train, factor, root.child("longtail"))
    return train, val, test


def _model_configs(resolved: dict, train_set):
    from .backbone import BackboneConfig
    from .trainer import TrainConfig
    from .wpn import WpnConfig

    bb = resolved["backbone"]
    input_dim = bb["input_dim"] if bb["input_dim"] is not None else train_set.dim
    num_classes = bb["num_classes"] if bb["num_classes"] is not None else train_set.num_classes
    backbone_cfg = BackboneConfig(int(input_dim), tuple(bb["trunk_widths"]), int(num_classes))
    w = resolved["wpn"]
    wpn_cfg = WpnConfig(
        backbone_cfg.num_exits, int(w["hidden_width"]), int(w["hidden_depth"]), float(w["delta"])
    )
    train_cfg = TrainConfig(
        epochs=int(resolved["train"]["epochs"]),
        batch_size=int(resolved["train"]["batch_size"]),
        alpha=float(resolved["train"]["alpha"]),
        variant=str(resolved["train"]["variant"]),
        beta=float(resolved["train"]["beta"]),
        interval=int(resolved["train"]["interval"]),
        q=float(resolved["train"]["q"]),
        momentum=float(resolved["train"]["momentum"]),
        weight_decay=float(resolved["train"]["weight_decay"]),
        lr_schedule=str(resolved["train"]["lr_schedule"]),
        seed=int(resolved["train"]["seed"]),
        frozen_wpn_path=resolved["train"]["frozen_wpn_path"],
        log_weight_scatter=bool(resolved["train"]["log_weight_scatter"]),
        scatter_cap=int(resolved["train"]["scatter_cap"]),
    )
    # Echo derived values back into the resolved doc so the hash pins them.
    resolved["backbone"]["input_dim"] = backbone_cfg.input_dim
    resolved["backbone"]["num_classes"] = backbone_cfg.num_classes
    resolved["backbone"]["trunk_widths"] = list(backbone_cfg.trunk_widths)
    return backbone_cfg, wpn_cfg, train_cfg


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    from .checkpoint import save_run_checkpoint
    from .serial import write_json
    from .trainer import run_training

    resolved = load_config(args.config)
    if args.seed is not None:
        resolved["train"]["seed"] = int(args.seed)
    base_dir = Path(args.config).resolve().parent
    out_dir = Path(args.out) if args.out else Path(resolved["output"]["dir"])
    train_set, val_set, _ = build_datasets(resolved["dataset"], base_dir)
    backbone_cfg, wpn_cfg, train_cfg = _model_configs(resolved, train_set)
    digest = config_hash(resolved)
    state, history = run_training(train_cfg, backbone_cfg, wpn_cfg, train_set, val_set)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "resolved_config.json",
               {"format": CONFIG_FORMAT, "version": VERSION, **resolved})
    save_run_checkpoint(out_dir / "checkpoint.json", state, train_cfg)
    write_json(out_dir / "history.json", {
        "format": HISTORY_FORMAT,
        "version": VERSION,
        "run_id": digest[:12],
        "config_hash": digest,
        "iterations": history.iterations,
        "epochs": history.epochs,
    })
    print(
        f"trained variant={train_cfg.variant} epochs={train_cfg.epochs} "
        f"iterations={state.iteration}; outputs in {out_dir}"
    )
    return 0


def _parse_q_grid(text: str):
    import numpy as np

    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"--q-grid range must be start:stop:count, got {text!r}")
        try:
            start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError as exc:
            raise ConfigError(f"--q-grid range {text!r}: {exc}") from exc
        if count < 1:
            raise ConfigError("--q-grid count must be >= 1")
        grid = np.linspace(start, stop, count)
    else:
        try:
            grid = np.asarray([float(v) for v in text.split(",") if v != ""], dtype=np.float64)
        except ValueError as exc:
            raise ConfigError(f"--q-grid list {text!r}: {exc}") from exc
    if grid.size == 0 or np.any(grid <= 0):
        raise ConfigError("--q-grid must contain positive values")
    return grid


def _dataset_doc_for_eval(args, checkpoint_path: Path) -> tuple[dict, Path]:
    if args.dataset:
        p = Path(args.dataset)
        if not p.is_file():
            raise ConfigError(f"dataset config file not found: {p}")
        doc = json.loads(p.read_text())
        ds = doc.get("dataset", doc) if isinstance(doc, dict) else None
        if not isinstance(ds, dict) or "kind" not in ds:
            raise ConfigError(f"{p}: expected a dataset section with a 'kind' key")
        kind = ds["kind"]
        if kind not in _DATASET_KEYS:
            raise ConfigError(f"unknown dataset kind {kind!r}")
        required, defaults = _DATASET_KEYS[kind]
        resolved = _resolve_section(
            {k: v for k, v in ds.items() if k != "kind"}, required, defaults, f"dataset ({kind})"
        )
        resolved["kind"] = kind
        return resolved, p.resolve().parent
    sibling = checkpoint_path.resolve().parent / "resolved_config.json"
    if sibling.is_file():
        doc = json.loads(sibling.read_text())
        if isinstance(doc, dict) and isinstance(doc.get("dataset"), dict):
            return doc["dataset"], sibling.parent
    raise ConfigError(
        "no dataset available: pass --dataset or keep resolved_config.json next to the checkpoint"
    )


def _scatter_from_history(checkpoint_path: Path) -> list:
    sibling = checkpoint_path.resolve().parent / "history.json"
    if not sibling.is_file():
        return []
    try:
        doc = json.loads(sibling.read_text())
    except json.JSONDecodeError:
        return []
    points = []
    for rec in doc.get("iterations", []):
        points.extend(rec.get("weight_scatter", []))
    return points


def _write_curves_csv(path, rows, num_exits: int) -> None:
    header = (
        ["q", "accuracy", "expected_muladds"]
        + [f"exit_count_{i + 1}" for i in range(num_exits)]
        + [f"threshold_{i + 1}" for i in range(num_exits)]
    )
    lines = [",".join(header)]
    for r in rows:
        cells = [repr(r["q"]), repr(r["accuracy"]), repr(r["expected_muladds"])]
        cells += [str(c) for c in r["exit_counts"]]
        cells += [repr(t) for t in r["thresholds"]]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_eval(args) -> int:
    from .checkpoint import backbone_config_doc, load_run_checkpoint, train_config_doc, wpn_config_doc
    from .evaluate import anytime_accuracy, default_q_grid, dynamic_sweep
    from .backbone import count_mul_adds
    from .serial import write_json

    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.is_file():
        raise ConfigError(f"checkpoint file not found: {ckpt_path}")
    state, train_cfg = load_run_checkpoint(ckpt_path)
    ds_doc, base_dir = _dataset_doc_for_eval(args, ckpt_path)
    _, val_set, test_set = build_datasets(ds_doc, base_dir)
    config = state.backbone.config
    if val_set.dim != config.input_dim or val_set.num_classes != config.num_classes:
        raise CompatibilityError(
            f"checkpoint expects dim={config.input_dim}, classes={config.num_classes}; "
            f"dataset provides dim={val_set.dim}, classes={val_set.num_classes}"
        )
    grid = _parse_q_grid(args.q_grid) if args.q_grid else default_q_grid()
    rows = dynamic_sweep(state.backbone, val_set, test_set, grid)
    anytime = anytime_accuracy(state.backbone, test_set)
    semantic = {
        "dataset": ds_doc,
        "backbone": backbone_config_doc(config),
        "wpn": None if state.wpn is None else wpn_config_doc(state.wpn.config),
        "train": train_config_doc(train_cfg),
    }
    digest = hashlib.sha256(
        json.dumps(semantic, sort_keys=True, separators=(",", ":")).encode("utf-8")
    ).hexdigest()
    out_dir = Path(args.out) if args.out else ckpt_path.resolve().parent
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics = {
        "format": METRICS_FORMAT,
        "version": VERSION,
        "run_id": digest[:12],
        "config_hash": digest,
        "iteration": state.iteration,
        "variant": train_cfg.variant,
        "anytime": {
            "accuracy": [float(a) for a in anytime],
            "exit_muladds": [int(c) for c in count_mul_adds(config)],
        },
        "dynamic": rows,
        "weight_scatter": _scatter_from_history(ckpt_path),
    }
    write_json(out_dir / "metrics.json", metrics)
    _write_curves_csv(out_dir / "curves.csv", rows, config.num_exits)
    print(f"evaluated {len(rows)} budget points; outputs in {out_dir}")
    return 0


def cmd_gradcheck(args) -> int:
    from .backbone import BackboneConfig
    from .gradcheck import run_suites
    from .wpn import WpnConfig

    if args.config:
        resolved = load_config(args.config)
        bb = resolved["backbone"]
        if bb["input_dim"] is None or bb["num_classes"] is None:
            raise ConfigError("gradcheck configs must state backbone input_dim and num_classes")
        backbone_cfg = BackboneConfig(int(bb["input_dim"]), tuple(bb["trunk_widths"]), int(bb["num_classes"]))
        w = resolved["wpn"]
        wpn_cfg = WpnConfig(backbone_cfg.num_exits, int(w["hidden_width"]),
                            int(w["hidden_depth"]), float(w["delta"]))
        q = float(resolved["train"]["q"])
        seed = int(resolved["train"]["seed"])
    else:
        backbone_cfg = BackboneConfig(3, (4, 3), 3)
        wpn_cfg = WpnConfig(2, hidden_width=8, hidden_depth=1, delta=0.6)
        q, seed = 0.75, 0
    if args.seed is not None:
        seed = int(args.seed)
    sabotage = os.environ.get("EXITWEAVE_GRADCHECK_SABOTAGE", "") not in ("", "0")
    results = run_suites(backbone_cfg, wpn_cfg, seed=seed, q=q, sabotage=sabotage)
    ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        ok = ok and r.passed
        print(f"{r.name}: max_rel_err={r.max_rel_err:.3e} tolerance={r.tolerance:.0e} {status}")
    print("gradcheck: " + ("all suites passed" if ok else "FAILED"))
    return 0 if ok else 1


def cmd_allocate(args) -> int:
    import numpy as np

    from .exitpolicy import allocate_meta, calibrate_thresholds

    path = Path(args.confidences)
    if not path.is_file():
        raise ConfigError(f"confidence CSV not found: {path}")
    rows = []
    width = None
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        cells = line.split(",")
        try:
            row = [float(c) for c in cells]
        except ValueError as exc:
            raise FormatError(f"{path}: line {lineno}: {exc}") from exc
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise FormatError(
                f"{path}: line {lineno}: expected {width} columns, got {len(row)}"
            )
        rows.append(row)
    if not rows:
        raise FormatError(f"{path}: no confidence rows found")
    table = np.asarray(rows, dtype=np.float64)
    if args.num_exits is not None and args.num_exits != table.shape[1]:
        raise ConfigError(
            f"--num-exits={args.num_exits} but the CSV has {table.shape[1]} columns"
        )
    alloc = allocate_meta(table, args.q)
    thresholds = calibrate_thresholds(table, args.q)
    doc = {
        "num_samples": int(table.shape[0]),
        "num_exits": int(table.shape[1]),
        "q": args.q,
        "sizes": [int(s) for s in alloc.sizes],
        "thresholds": [float(e) for e in thresholds],
        "subsets": [[int(i) for i in subset] for subset in alloc.subsets],
    }
    print(json.dumps(doc, indent=1, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exitweave",
        description="Train and evaluate multi-exit classifiers with meta-learned sample weights.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a JSON config")
    p_train.add_argument("--config", required=True, help="path to the run config file")
    p_train.add_argument("--out", default=None, help="output directory (default: config's output.dir)")
    p_train.add_argument("--seed", type=int, default=None, help="override train.seed")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint across a budget grid")
    p_eval.add_argument("--checkpoint", required=True, help="path to a run checkpoint")
    p_eval.add_argument("--dataset", default=None,
                        help="JSON file with a dataset section (default: resolved_config.json next to the checkpoint)")
    p_eval.add_argument("--out", default=None, help="output directory (default: checkpoint directory)")
    p_eval.add_argument("--q-grid", dest="q_grid", default=None,
                        help="comma list of q values or start:stop:count (default 0.05:2.0:40)")
    p_eval.set_defaults(func=cmd_eval)

    p_grad = sub.add_parser("gradcheck", help="finite-difference audit of the gradient chain")
    p_grad.add_argument("--config", default=None, help="optional config naming a tiny architecture")
    p_grad.add_argument("--seed", type=int, default=None, help="override the audit seed")
    p_grad.set_defaults(func=cmd_gradcheck)

    p_alloc = sub.add_parser("allocate", help="greedy budget allocation for a confidence CSV")
    p_alloc.add_argument("confidences", help="CSV of confidence rows, one column per exit")
    p_alloc.add_argument("--q", type=float, required=True, help="budget knob, q > 0")
    p_alloc.add_argument("--num-exits", dest="num_exits", type=int, default=None,
                         help="expected exit count; validated against the CSV width")
    p_alloc.set_defaults(func=cmd_allocate)
    return parser


def main(argv=None) -> int:
    try:
        _apply_thread_cap()
        args = _build_parser().parse_args(argv)
        return args.func(args)
    except (ConfigError, FormatError, CompatibilityError, DomainError, ShapeError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, NumericError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ExitweaveError as exc:  # pragma: no cover - safety net
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
