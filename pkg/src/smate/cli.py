"""Command-line entry point: train / eval / export-embeddings / gradcheck.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every command is
deterministic given --seed. Configuration precedence is defaults < config
file (--config, JSON) < explicit command-line flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import kernels
from .classify import evaluate
from .data import (
    MtsDataset,
    SplitSpec,
    apply_supervision,
    load_dataset_pair,
    normalization_stats,
    parse_ts,
    write_embedding_csv,
)
from .gradcheck import DEFAULT_TOL, run_suite
from .model import (
    SmateConfig,
    SmateModel,
    compute_centroids,
    encode_dataset,
    load_checkpoint,
    save_checkpoint,
    train,
)

DEFAULTS = {
    "data": None,
    "dataset": None,
    "ratio": 1.0,
    "seed": 0,
    "epochs": 300,
    "lr": 1e-3,
    "pool": None,
    "embed_dim": 64,
    "gru_dim": 64,
    "conv_filters": 64,
    "window": 3,
    "lam": 1.0,
    "normalize": True,
    "no_smb": False,
    "out": "smate_out",
    "method": "centroid",
    "k": 1,
    "split": "train",
}


def _ratio(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"ratio must be a number, got {text!r}")
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"ratio must be in [0, 1], got {value}")
    return value


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smate",
        description="Semi-supervised spatio-temporal representation learning "
                    "for multivariate time series.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with default flag values")
    common.add_argument("--data", help="directory holding <name>/<name>_TRAIN.ts")
    common.add_argument("--dataset", help="dataset name")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")

    hyper = argparse.ArgumentParser(add_help=False)
    hyper.add_argument("--ratio", type=_ratio,
                       help="supervision ratio r in [0, 1]")
    hyper.add_argument("--epochs", type=_positive_int)
    hyper.add_argument("--lr", type=float)
    hyper.add_argument("--pool", type=_positive_int,
                       help="pool size P (default: T // 8, at least 1)")
    hyper.add_argument("--embed-dim", type=_positive_int, dest="embed_dim")
    hyper.add_argument("--gru-dim", type=_positive_int, dest="gru_dim")
    hyper.add_argument("--conv-filters", type=_positive_int, dest="conv_filters")
    hyper.add_argument("--window", type=_positive_int,
                       help="convolution and calibration window m")
    hyper.add_argument("--lambda", type=float, dest="lam",
                       help="loss balance (default 1)")
    hyper.add_argument("--normalize", type=_bool,
                       help="per-variable z-normalization (default true)")
    hyper.add_argument("--no-smb", action="store_true", default=None,
                       dest="no_smb", help="disable the spatial calibration block")

    sub.add_parser("train", parents=[common, hyper],
                   help="train and write a checkpoint plus a loss log")

    p_eval = sub.add_parser("eval", parents=[common],
                            help="evaluate a checkpoint on the test split")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--method", choices=("centroid", "knn"))
    p_eval.add_argument("-k", type=_positive_int, help="neighbors for knn")
    p_eval.add_argument("--report", help="path for the JSON report")

    p_exp = sub.add_parser("export-embeddings", parents=[common],
                           help="write embeddings plus centroids as CSV")
    p_exp.add_argument("--checkpoint", required=True)
    p_exp.add_argument("--split", choices=("train", "test"))

    p_grad = sub.add_parser("gradcheck", parents=[common],
                            help="finite-difference check of every op kind")
    p_grad.add_argument("--trials", type=_positive_int, default=10)
    return parser


def _merge_config(args: argparse.Namespace) -> dict:
    merged = dict(DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            loaded = json.loads(Path(config_path).read_text())
        except OSError as exc:
            raise RuntimeError(f"cannot read config file {config_path}: {exc}")
        except json.JSONDecodeError as exc:
            raise RuntimeError(f"config file {config_path} is not valid JSON: {exc}")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise RuntimeError(
                f"config file {config_path} has unknown keys {sorted(unknown)}")
        if "ratio" in loaded and not 0.0 <= loaded["ratio"] <= 1.0:
            raise RuntimeError("config file: ratio must be in [0, 1]")
        merged.update(loaded)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _threads() -> int:
    raw = os.environ.get("SMATE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise RuntimeError(f"SMATE_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise RuntimeError(f"SMATE_THREADS must be >= 1, got {n}")
    if n > 1:
        print("note: SMATE_THREADS > 1 requested; this build runs the "
              "training loop single-threaded", file=sys.stderr)
    return n


def _load_train_split(opts: dict) -> MtsDataset:
    if not opts.get("data") or not opts.get("dataset"):
        raise RuntimeError("--data and --dataset are required")
    path = Path(opts["data"]) / opts["dataset"] / f"{opts['dataset']}_TRAIN.ts"
    if not path.exists():
        raise RuntimeError(f"dataset file not found: {path}")
    return parse_ts(path)


def cmd_train(args: argparse.Namespace) -> int:
    opts = _merge_config(args)
    _threads()
    ds = _load_train_split(opts)
    norm_stats = None
    if opts["normalize"]:
        norm_stats = normalization_stats(ds)
        from .data import apply_normalization
        ds = apply_normalization(ds, norm_stats)
    ds = apply_supervision(ds, SplitSpec(ratio=opts["ratio"], seed=opts["seed"]))
    config = SmateConfig(
        t=ds.t, m=ds.m, d_g=opts["gru_dim"], d_c=opts["conv_filters"],
        conv_window=opts["window"], smb_window=opts["window"],
        pool=opts["pool"], embed_dim=opts["embed_dim"], lam=opts["lam"],
        lr=opts["lr"], epochs=opts["epochs"], seed=opts["seed"],
        use_smb=not opts["no_smb"])
    model = SmateModel(config)
    started = time.perf_counter()

    def progress(stats):
        if stats.epoch == 1 or stats.epoch % 25 == 0 \
                or stats.epoch == config.epochs:
            print(f"epoch {stats.epoch:4d}  L_R {stats.recon:.6f}  "
                  f"L_Reg {stats.reg:.6f}  total {stats.total:.6f}",
                  file=sys.stderr)

    log = train(model, ds, progress=progress)
    centroids = compute_centroids(model, ds)
    out_dir = Path(opts["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / f"{opts['dataset']}_checkpoint.json"
    log_path = out_dir / f"{opts['dataset']}_train_log.csv"
    save_checkpoint(model, ckpt_path, ds.label_set, norm_stats, centroids,
                    ds.supervision_mask)
    log_path.write_text(log.to_csv())
    print(f"kernel backend: {kernels.backend_name}", file=sys.stderr)
    print(f"trained {config.epochs} epochs in "
          f"{time.perf_counter() - started:.1f}s", file=sys.stderr)
    print(f"checkpoint: {ckpt_path}")
    print(f"log: {log_path}")
    print(f"final: L_R {log.final.recon!r} L_Reg {log.final.reg!r} "
          f"total {log.final.total!r}")
    return 0


def _load_checkpoint_and_split(args, opts, split: str):
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        raise RuntimeError(f"checkpoint not found: {ckpt_path}")
    ckpt = load_checkpoint(ckpt_path)
    if not opts.get("data") or not opts.get("dataset"):
        raise RuntimeError("--data and --dataset are required")
    suffix = "TRAIN" if split == "train" else "TEST"
    path = Path(opts["data"]) / opts["dataset"] / f"{opts['dataset']}_{suffix}.ts"
    if not path.exists():
        raise RuntimeError(f"dataset file not found: {path}")
    ds = parse_ts(path)
    if ds.values.shape[1:] != (ckpt.model.config.t, ckpt.model.config.m):
        raise RuntimeError(
            f"dataset {path} has samples of shape {ds.values.shape[1:]} but the "
            f"checkpoint was trained on "
            f"({ckpt.model.config.t}, {ckpt.model.config.m})")
    if ckpt.norm_stats is not None:
        from .data import apply_normalization
        ds = apply_normalization(ds, ckpt.norm_stats)
    return ckpt, ds


def cmd_eval(args: argparse.Namespace) -> int:
    opts = _merge_config(args)
    ckpt, test_ds = _load_checkpoint_and_split(args, opts, "test")
    if ckpt.centroids is None:
        raise RuntimeError("checkpoint carries no centroids; re-train first")
    method = opts["method"]
    kwargs = {}
    if method == "knn":
        _, train_ds = _load_checkpoint_and_split(args, opts, "train")
        if ckpt.supervision_mask is not None:
            train_ds = train_ds.with_mask(ckpt.supervision_mask)
        emb = encode_dataset(ckpt.model, train_ds)
        visible = train_ds.visible_labels()
        keep = [i for i, y in enumerate(visible) if y is not None]
        kwargs = {"train_embeddings": [emb[i] for i in keep],
                  "train_labels": [visible[i] for i in keep],
                  "k": opts["k"]}
    report = evaluate(ckpt.model, ckpt.centroids, test_ds, method=method,
                      **kwargs)
    print(report.to_json())
    report_path = Path(args.report) if args.report else \
        Path(opts["out"]) / f"{opts['dataset']}_eval_{method}.json"
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(report.to_json() + "\n")
    print(f"report: {report_path}", file=sys.stderr)
    return 0


def cmd_export_embeddings(args: argparse.Namespace) -> int:
    opts = _merge_config(args)
    split = opts["split"]
    ckpt, ds = _load_checkpoint_and_split(args, opts, split)
    if split == "train" and ckpt.supervision_mask is not None:
        ds = ds.with_mask(ckpt.supervision_mask)
    emb = encode_dataset(ckpt.model, ds)
    out_dir = Path(opts["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{opts['dataset']}_{split}_embeddings.csv"
    write_embedding_csv(csv_path, ds, emb, ckpt.centroids)
    print(f"embeddings: {csv_path}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    opts = _merge_config(args)
    rows = run_suite(seed=opts["seed"], trials=args.trials)
    width = max(len(name) for name, _, _ in rows)
    failures = 0
    for name, err, passed in rows:
        print(f"{name:<{width}}  {err:12.3e}  {'pass' if passed else 'FAIL'}")
        failures += 0 if passed else 1
    print(f"{len(rows) - failures}/{len(rows)} op kinds below relative "
          f"error {DEFAULT_TOL:g}")
    return 1 if failures else 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "train": cmd_train,
        "eval": cmd_eval,
        "export-embeddings": cmd_export_embeddings,
        "gradcheck": cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except (RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
