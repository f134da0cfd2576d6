"""Command-line front door: dataset generation, two-phase training,
evaluation, the ablation grid, and the gradient self-check.

Configuration is a flat ``key = value`` text file; command-line flags win
over file values, which win over the built-in defaults.  Every run writes a
manifest into its output directory before any long computation starts.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .datasets import gen_synthetic, load_dataset, save_dataset
from .gradcheck import TOLERANCE, run_suite
from .losses import LossConfig
from .metrics import confusion_matrix, miou, trimap_miou
from .networks import SegNetParams, load_params, predict_labels
from .svgplot import line_plot
from .training import (TrainConfig, train_edge_net, train_seg_net,
                       write_metrics_csv, write_timing_csv)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class NumericError(Exception):
    pass


# configuration keys, their types, and defaults; config files and flags both
# resolve into this flat namespace
_CONFIG_SPEC = {
    "seed": (int, 0),
    "classes": (int, 5),
    "count": (int, 600),
    "size": (int, 64),
    "val_fraction": (float, 1.0 / 6.0),
    "batch_size": (int, 8),
    "edge_epochs": (int, 30),
    "seg_epochs": (int, 60),
    "edge_lr": (float, 1e-1),
    "seg_lr": (float, 1e-2),
    "momentum": (float, 0.9),
    "sigma": (float, 0.5),
    "mirror": (bool, True),
    "crop_size": (int, None),
    "strategy": (str, "semeda"),
    "lambda1": (float, 0.0),
    "lambda2": (float, 1.0),
    "lambda3": (float, 0.0),
    "match_point": (str, "before_relu"),
    "distance": (str, "l1"),
    "layer3_embedding": (str, "logits"),
    "reduction": (str, "mean"),
    "void_label": (int, 255),
    "trimap_widths": (str, "1,2,5,10"),
}

# the ablation grid: (strategy, match_point, lambda1, lambda2, lambda3)
ABLATION_GRID = (
    ("ppce", "before_relu", 0.0, 0.0, 0.0),
    ("multitask", "before_relu", 1.0, 0.0, 0.0),
    ("multitask", "before_relu", 0.5, 0.0, 0.0),
    ("multitask", "before_relu", 5.0, 0.0, 0.0),
    ("ppce_on_edges", "before_relu", 1.0, 0.0, 0.0),
    ("ppce_on_edges", "before_relu", 5.0, 0.0, 0.0),
    ("semeda", "after_relu", 1.0, 0.0, 0.0),
    ("semeda", "after_relu", 0.0, 0.5, 0.0),
    ("semeda", "before_relu", 1.0, 0.0, 0.0),
    ("semeda", "before_relu", 0.5, 0.0, 0.0),
    ("semeda", "before_relu", 0.0, 1.0, 0.0),
    ("semeda", "before_relu", 0.0, 0.0, 1.0),
    ("semeda", "before_relu", 1.0, 0.5, 0.25),
    ("semeda", "before_relu", 0.25, 0.5, 1.0),
)


def _coerce(key: str, raw: str):
    typ, _ = _CONFIG_SPEC[key]
    if typ is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"config key {key!r}: expected a boolean, got {raw!r}")
    if raw.strip().lower() == "none":
        return None
    try:
        return typ(raw.strip())
    except ValueError:
        raise UsageError(f"config key {key!r}: expected {typ.__name__}, got {raw!r}")


def parse_config_file(path) -> dict:
    """Read a flat key = value file; '#' starts a comment, blank lines ignored."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}")
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_SPEC:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return values


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so exit codes stay ours."""

    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="semeda", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def common(p):
        p.add_argument("--config", type=str, default=None, help="key = value file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", type=str, default=None, help="output directory")
        p.add_argument("--data", type=str, default=None, help="dataset directory")

    p = sub.add_parser("gen-data", help="write a synthetic shapes dataset")
    common(p)
    p.add_argument("--count", type=int, default=None, help="total sample count")
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--val-fraction", type=float, default=None)

    p = sub.add_parser("train-edge", help="phase 1: train the edge net")
    common(p)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--classes", type=int, default=None)

    p = sub.add_parser("train-seg", help="phase 2: train the segmentation net")
    common(p)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--strategy", type=str, default=None,
                   choices=["ppce", "multitask", "ppce_on_edges", "semeda"])
    p.add_argument("--lambda1", type=float, default=None)
    p.add_argument("--lambda2", type=float, default=None)
    p.add_argument("--lambda3", type=float, default=None)
    p.add_argument("--match-point", type=str, default=None,
                   choices=["before", "after"])
    p.add_argument("--edge-checkpoint", type=str, default=None)

    p = sub.add_parser("eval", help="mIoU and boundary-band evaluation")
    common(p)
    p.add_argument("--checkpoint", type=str, default=None, required=False)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--trimap-widths", type=str, default=None,
                   help="comma-separated band widths, e.g. 1,2,5,10")

    p = sub.add_parser("ablate", help="run the full loss-configuration grid")
    common(p)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--edge-checkpoint", type=str, default=None,
                   help="reuse a trained edge net instead of training one")

    p = sub.add_parser("gradcheck", help="finite-difference gradient self-check")
    common(p)
    p.add_argument("--instances", type=int, default=None,
                   help="random probes per primitive (default 20)")
    return parser


_FLAG_TO_KEY = {
    "count": "count", "size": "size", "classes": "classes",
    "val_fraction": "val_fraction", "batch": "batch_size", "sigma": "sigma",
    "strategy": "strategy", "lambda1": "lambda1", "lambda2": "lambda2",
    "lambda3": "lambda3", "trimap_widths": "trimap_widths", "seed": "seed",
}


def resolve_config(args) -> dict:
    """defaults < config file < explicit flags."""
    resolved = {key: default for key, (_, default) in _CONFIG_SPEC.items()}
    if getattr(args, "config", None):
        resolved.update(parse_config_file(args.config))
    for flag, key in _FLAG_TO_KEY.items():
        value = getattr(args, flag, None)
        if value is not None:
            resolved[key] = value
    epochs = getattr(args, "epochs", None)
    if epochs is not None:
        resolved["edge_epochs" if args.command == "train-edge" else "seg_epochs"] = epochs
    lr = getattr(args, "lr", None)
    if lr is not None:
        resolved["edge_lr" if args.command == "train-edge" else "seg_lr"] = lr
    match = getattr(args, "match_point", None)
    if match is not None:
        resolved["match_point"] = match + "_relu"
    return resolved


def _loss_config(cfg: dict) -> LossConfig:
    try:
        return LossConfig(strategy=cfg["strategy"], lambda1=cfg["lambda1"],
                          lambda2=cfg["lambda2"], lambda3=cfg["lambda3"],
                          match_point=cfg["match_point"], distance=cfg["distance"],
                          layer3_embedding=cfg["layer3_embedding"],
                          void_label=cfg["void_label"], reduction=cfg["reduction"])
    except ValueError as exc:
        raise UsageError(str(exc))


def _train_config(cfg: dict, loss: LossConfig) -> TrainConfig:
    try:
        return TrainConfig(batch_size=cfg["batch_size"],
                           edge_epochs=cfg["edge_epochs"],
                           seg_epochs=cfg["seg_epochs"], edge_lr=cfg["edge_lr"],
                           seg_lr=cfg["seg_lr"], momentum=cfg["momentum"],
                           sigma=cfg["sigma"], seed=cfg["seed"],
                           mirror=cfg["mirror"], crop_size=cfg["crop_size"],
                           loss=loss)
    except ValueError as exc:
        raise UsageError(str(exc))


def _require(args, name: str):
    value = getattr(args, name, None)
    if value is None:
        raise UsageError(f"--{name.replace('_', '-')} is required for this command")
    return value


def write_run_manifest(out_dir: Path, command: str, argv, cfg: dict, outputs) -> None:
    """Record everything needed to reproduce the run, before it starts."""
    lines = [f"semeda_version = {__version__}",
             f"command = {command}",
             f"argv = {' '.join(argv)}",
             f"created_utc = {time.strftime('%Y-%m-%dT%H:%M:%SZ', time.gmtime())}"]
    lines += [f"{key} = {cfg[key]}" for key in sorted(cfg)]
    lines += [f"output = {name}" for name in outputs]
    (out_dir / "manifest.txt").write_text("".join(f"{l}\n" for l in lines),
                                          encoding="utf-8")


def _out_dir(args) -> Path:
    out = Path(_require(args, "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_split(data_dir: str, manifest: str):
    try:
        return load_dataset(data_dir, manifest)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc))


def _check_finite_history(history) -> None:
    for row in history:
        if not np.isfinite(row["loss"]):
            raise NumericError(f"non-finite loss at epoch {row['epoch']}")
        if row.get("val_miou") is not None and not np.isfinite(row["val_miou"]):
            raise NumericError(f"non-finite validation mIoU at epoch {row['epoch']}")


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SEMEDA_THREADS", "1")))
    except ValueError:
        return 1


def _predict_all(params, samples):
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        return list(pool.map(lambda s: predict_labels(params, s.image), samples))


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args, argv) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args)
    write_run_manifest(out, "gen-data", argv, cfg,
                       ["img_*.ppm", "mask_*.pgm", "train.txt", "val.txt"])
    samples = gen_synthetic(cfg["count"], cfg["size"], cfg["classes"], cfg["seed"])
    n_train, n_val = save_dataset(samples, out, cfg["val_fraction"])
    print(f"wrote {n_train} train + {n_val} val samples "
          f"({cfg['size']}x{cfg['size']}, {cfg['classes']} classes) to {out}")
    return EXIT_OK


def cmd_train_edge(args, argv) -> int:
    cfg = resolve_config(args)
    data_dir = _require(args, "data")
    out = _out_dir(args)
    write_run_manifest(out, "train-edge", argv, cfg,
                       ["edge.ckpt", "metrics.csv", "timing.csv"])
    masks = [s.mask for s in _load_split(data_dir, "train.txt")]
    config = _train_config(cfg, _loss_config(cfg))
    config.edge_checkpoint = str(out / "edge.ckpt")
    params, history = train_edge_net(masks, config, n_classes=cfg["classes"])
    write_metrics_csv(history, out / "metrics.csv")
    write_timing_csv(history, out / "timing.csv")
    _check_finite_history(history)
    last = history[-1]["loss"] if history else float("nan")
    print(f"edge net trained for {config.edge_epochs} epochs on {len(masks)} masks; "
          f"final loss {last:.6g}; checkpoint {out / 'edge.ckpt'}")
    return EXIT_OK


def cmd_train_seg(args, argv) -> int:
    cfg = resolve_config(args)
    data_dir = _require(args, "data")
    loss = _loss_config(cfg)
    edge_params = None
    if loss.strategy in ("semeda", "ppce_on_edges"):
        ckpt = getattr(args, "edge_checkpoint", None)
        if ckpt is None:
            raise UsageError(f"--edge-checkpoint is required for strategy "
                             f"{loss.strategy!r}")
        try:
            edge_params = load_params(ckpt)
        except (OSError, ValueError) as exc:
            raise DataError(str(exc))
    out = _out_dir(args)
    write_run_manifest(out, "train-seg", argv, cfg,
                       ["seg.ckpt", "metrics.csv", "timing.csv"])
    train = _load_split(data_dir, "train.txt")
    val = _load_split(data_dir, "val.txt")
    config = _train_config(cfg, loss)
    config.seg_checkpoint = str(out / "seg.ckpt")
    params, history = train_seg_net(train, edge_params, config,
                                    n_classes=cfg["classes"], val_samples=val)
    write_metrics_csv(history, out / "metrics.csv")
    write_timing_csv(history, out / "timing.csv")
    _check_finite_history(history)
    last = history[-1] if history else {"loss": float("nan"), "val_miou": None}
    val_txt = "n/a" if last.get("val_miou") is None else f"{last['val_miou']:.4f}"
    print(f"seg net ({loss.strategy}) trained for {config.seg_epochs} epochs; "
          f"final loss {last['loss']:.6g}, val mIoU {val_txt}; "
          f"checkpoint {out / 'seg.ckpt'}")
    return EXIT_OK


def _parse_widths(text: str) -> list[int]:
    try:
        widths = [int(w) for w in text.split(",") if w.strip()]
    except ValueError:
        raise UsageError(f"bad trimap width list {text!r}")
    if not widths or any(w < 1 for w in widths):
        raise UsageError(f"trimap widths must be positive, got {text!r}")
    return widths


def _eval_rows(params, samples, widths, n_classes, void_label):
    preds = _predict_all(params, samples)
    gts = [s.mask for s in samples]
    total = np.zeros((n_classes, n_classes), dtype=np.int64)
    for pred, gt in zip(preds, gts):
        total += confusion_matrix(pred, gt, n_classes, void_label=void_label)
    score, per_class = miou(total)
    rows = [{"width": 0, "region": "all", "miou": score, "per_class": per_class}]
    rows += trimap_miou(preds, gts, widths, n_classes, void_label=void_label)
    return rows


def write_eval_csv(rows, n_classes: int, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["width", "region", "miou"]
                        + [f"iou_{c}" for c in range(n_classes)])
        for row in rows:
            ious = ["" if np.isnan(v) else f"{v:.12g}" for v in row["per_class"]]
            writer.writerow([row["width"], row["region"], f"{row['miou']:.12g}"] + ious)


def cmd_eval(args, argv) -> int:
    cfg = resolve_config(args)
    data_dir = _require(args, "data")
    ckpt = _require(args, "checkpoint")
    widths = _parse_widths(cfg["trimap_widths"])
    out = _out_dir(args)
    write_run_manifest(out, "eval", argv, cfg, ["eval.csv", "trimap_miou.svg"])
    try:
        params = load_params(ckpt)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc))
    if not isinstance(params, SegNetParams):
        raise DataError(f"{ckpt} holds an edge net, not a segmentation net")
    samples = _load_split(data_dir, "val.txt")
    if not samples:
        raise DataError("validation manifest is empty")
    try:
        rows = _eval_rows(params, samples, widths, cfg["classes"], cfg["void_label"])
    except ValueError as exc:  # e.g. a band so wide one region is empty
        raise DataError(str(exc))
    write_eval_csv(rows, cfg["classes"], out / "eval.csv")
    by_region = {region: [r["miou"] for r in rows if r["region"] == region]
                 for region in ("boundary", "interior")}
    svg = line_plot(widths, by_region, "mIoU vs. trimap band width",
                    "band width (pixels)", "mIoU")
    (out / "trimap_miou.svg").write_text(svg, encoding="utf-8")
    print(f"overall mIoU {rows[0]['miou']:.4f} over {len(samples)} images; "
          f"wrote {out / 'eval.csv'} and {out / 'trimap_miou.svg'}")
    return EXIT_OK


def cmd_ablate(args, argv) -> int:
    cfg = resolve_config(args)
    data_dir = _require(args, "data")
    out = _out_dir(args)
    write_run_manifest(out, "ablate", argv, cfg, ["ablate.csv", "edge.ckpt"])
    train = _load_split(data_dir, "train.txt")
    val = _load_split(data_dir, "val.txt")
    base_loss = _loss_config(cfg)

    ckpt = getattr(args, "edge_checkpoint", None)
    if ckpt is not None:
        try:
            edge_params = load_params(ckpt)
        except (OSError, ValueError) as exc:
            raise DataError(str(exc))
    else:
        config = _train_config(cfg, base_loss)
        config.edge_checkpoint = str(out / "edge.ckpt")
        print(f"training shared edge net ({config.edge_epochs} epochs)...")
        edge_params, edge_history = train_edge_net(
            [s.mask for s in train], config, n_classes=cfg["classes"])
        _check_finite_history(edge_history)

    header = ["strategy", "match_point", "lambda1", "lambda2", "lambda3",
              "val_miou", "boundary_miou_w1", "boundary_miou_w2"]
    out_rows = []
    for strategy, match_point, lam1, lam2, lam3 in ABLATION_GRID:
        loss = LossConfig(strategy=strategy, lambda1=lam1, lambda2=lam2,
                          lambda3=lam3, match_point=match_point,
                          distance=cfg["distance"],
                          layer3_embedding=cfg["layer3_embedding"],
                          void_label=cfg["void_label"], reduction=cfg["reduction"])
        config = _train_config(cfg, loss)
        params, history = train_seg_net(train, edge_params, config,
                                        n_classes=cfg["classes"], val_samples=val)
        _check_finite_history(history)
        rows = _eval_rows(params, val, [1, 2], cfg["classes"], cfg["void_label"])
        val_miou = rows[0]["miou"]
        boundary = {r["width"]: r["miou"] for r in rows if r["region"] == "boundary"}
        out_rows.append([strategy, match_point, f"{lam1:g}", f"{lam2:g}",
                         f"{lam3:g}", f"{val_miou:.12g}",
                         f"{boundary[1]:.12g}", f"{boundary[2]:.12g}"])
        print(f"{strategy:>14} {match_point:<12} l=({lam1:g},{lam2:g},{lam3:g}) "
              f"mIoU {val_miou:.4f} boundary@1 {boundary[1]:.4f}")
    with (out / "ablate.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(out_rows)
    print(f"wrote {out / 'ablate.csv'}")
    return EXIT_OK


def cmd_gradcheck(args, argv) -> int:
    cfg = resolve_config(args)
    instances = getattr(args, "instances", None)
    if instances is None:
        instances = 20
    if instances < 1:
        raise UsageError(f"--instances must be >= 1, got {instances}")
    results = run_suite(n_instances=instances, seed=cfg["seed"])
    worst = 0.0
    for name, err in results.items():
        flag = "ok" if err < TOLERANCE else "FAIL"
        print(f"{name:<24} max rel err {err:.3e}  {flag}")
        worst = max(worst, err)
    if not np.isfinite(worst) or worst >= TOLERANCE:
        print(f"gradient check FAILED: worst error {worst:.3e} >= {TOLERANCE:g}",
              file=sys.stderr)
        return EXIT_NUMERIC
    print(f"all gradients within {TOLERANCE:g} (worst {worst:.3e})")
    return EXIT_OK


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-edge": cmd_train_edge,
    "train-seg": cmd_train_seg,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def run(argv) -> int:
    """Parse argv (without the program name) and execute one subcommand."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage())
        return _COMMANDS[args.command](args, argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
