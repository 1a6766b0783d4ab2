"""``zonescan`` command line.

Exit status is 0 on success, 1 when a stage fails and 2 for usage errors.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__, pipeline
from .config import PipelineConfig, load_config
from .errors import ConfigError, ZonescanError

THREADS_ENV = "ZONESCAN_THREADS"
CONFIG_KEYS = {f.name for f in fields(PipelineConfig)}
S = argparse.SUPPRESS


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("common options")
    g.add_argument("--config", default=S, metavar="FILE", help="key = value configuration file")
    g.add_argument("--work-dir", dest="work_dir", default=S, metavar="DIR", help="base directory for default paths")
    g.add_argument("--threads", type=int, default=S, metavar="N", help=f"worker cap; falls back to ${THREADS_ENV}; 1 is the reference path")
    g.add_argument("--set", dest="set_", action="append", default=S, metavar="KEY=VALUE", help="override any configuration key")
    g.add_argument("-v", "--verbose", action="store_true", default=S, help="log progress to stderr")
    return p


def _add(sub, name: str, help_: str, common) -> argparse.ArgumentParser:
    return sub.add_parser(name, help=help_, parents=[common], description=help_)


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="zonescan", description="Body-scan zone segmentation and threat classification pipeline.", parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = _add(sub, "synth", "generate phantom volumes, ground-truth zones and a threat table", common)
    p.add_argument("--bodies", type=int, default=S)
    p.add_argument("--threats", type=int, default=S, help="maximum threats per body")
    p.add_argument("--threat-fraction", dest="threat_fraction", type=float, default=S, help="share of bodies carrying threats")
    p.add_argument("--seed", dest="synth_seed", type=int, default=S)
    p.add_argument("--out", dest="volumes_dir", default=S, metavar="DIR")

    p = _add(sub, "preprocess", "binarize every volume into a foreground mask", common)
    p.add_argument("--volumes", dest="volumes_dir", default=S, metavar="DIR")
    p.add_argument("--masks", dest="masks_dir", default=S, metavar="DIR")
    p.add_argument("--sigma", type=float, default=S)
    p.add_argument("--window", dest="sauvola_window", type=int, default=S)
    p.add_argument("--k", dest="sauvola_k", type=float, default=S)
    p.add_argument("--R", dest="sauvola_R", type=float, default=S)
    p.add_argument("--dilation-radius", dest="dilation_radius", type=int, default=S)
    p.add_argument("--min-area", dest="min_area", type=int, default=S)

    p = _add(sub, "segment", "assign the 17 body zones to each mask", common)
    p.add_argument("--masks", dest="masks_dir", default=S, metavar="DIR")
    p.add_argument("--zones", dest="zones_dir", default=S, metavar="DIR")
    p.add_argument("--zone-table", dest="zone_table", default=S, metavar="CSV")
    p.add_argument("--no-points", dest="write_points", action="store_false", default=S, help="skip per-zone point files")

    p = _add(sub, "build-dataset", "crop zone slices into a 34-class image set and split it", common)
    p.add_argument("--volumes", dest="volumes_dir", default=S, metavar="DIR")
    p.add_argument("--zones", dest="zones_dir", default=S, metavar="DIR")
    p.add_argument("--threat-table", dest="threat_table", default=S, metavar="CSV")
    p.add_argument("--dataset", dest="dataset_dir", default=S, metavar="DIR")
    p.add_argument("--seed", dest="split_seed", type=int, default=S)
    p.add_argument("--min-area", dest="min_area", type=int, default=S)

    p = _add(sub, "train", "train the classifier with minibatch SGD", common)
    p.add_argument("--dataset", dest="dataset_dir", default=S, metavar="DIR")
    p.add_argument("--model", dest="model_dir", default=S, metavar="DIR")
    p.add_argument("--epochs", type=int, default=S)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--momentum", type=float, default=S)
    p.add_argument("--seed", dest="train_seed", type=int, default=S)
    p.add_argument("--dropout", type=float, default=S)
    p.add_argument("--no-flip", dest="flip_threats", action="store_false", default=S, help="skip mirrored threat samples")

    p = _add(sub, "evaluate", "score a dataset split with the trained model", common)
    p.add_argument("--dataset", dest="dataset_dir", default=S, metavar="DIR")
    p.add_argument("--model", dest="model_dir", default=S, metavar="DIR")
    p.add_argument("--out", dest="eval_dir", default=S, metavar="DIR")
    p.add_argument("--split", dest="eval_split", choices=("train", "val", "test"), default=S)

    p = _add(sub, "report", "write metric tables and figures from the predictions", common)
    p.add_argument("--model", dest="model_dir", default=S, metavar="DIR")
    p.add_argument("--eval", dest="eval_dir", default=S, metavar="DIR")
    p.add_argument("--out", dest="reports_dir", default=S, metavar="DIR")

    p = _add(sub, "classify-one", "classify one PNG and list the five most likely classes", common)
    p.add_argument("image", type=Path)
    p.add_argument("--model", dest="model_dir", default=S, metavar="DIR")
    p.add_argument("--stats", action="store_true", help="also write per-layer statistics")
    p.add_argument("--stats-out", type=Path, metavar="CSV", help="statistics file (default: <reports_dir>/layer_stats.csv)")
    return parser


def _threads(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    if hasattr(args, "threads"):
        n = args.threads
    elif os.environ.get(THREADS_ENV):
        try:
            n = int(os.environ[THREADS_ENV])
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {os.environ[THREADS_ENV]!r}") from exc
    else:
        n = cfg.threads
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    return n


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config(getattr(args, "config", None))
    for item in getattr(args, "set_", []):
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        cfg.set(key.strip(), value)
    cfg.update({k: v for k, v in vars(args).items() if k in CONFIG_KEYS and k != "threads"})
    cfg.threads = _threads(args, cfg)
    return cfg


def _classify(cfg: PipelineConfig, args: argparse.Namespace) -> str:
    stats = (args.stats_out or cfg.path("reports_dir") / "layer_stats.csv") if args.stats else None
    probs, top = pipeline.classify_one(cfg, args.image, stats)
    for rank, (name, p) in enumerate(top, start=1):
        print(f"{rank}. {name} {p:.6f}")
    msg = f"classify-one: {args.image} -> {top[0][0]} ({top[0][1]:.4f}), {len(probs)} probabilities summing to {probs.sum():.6f}"
    return msg + (f", layer statistics in {stats}" if stats else "")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        parser.error(str(exc))
    stage = args.command
    try:
        with threadpool_limits(limits=cfg.threads):
            summary = _classify(cfg, args) if stage == "classify-one" else pipeline.STAGES[stage](cfg)
    except (ZonescanError, OSError, ValueError) as exc:
        print(f"zonescan {stage}: error: {exc}", file=sys.stderr)
        return 1
    print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
