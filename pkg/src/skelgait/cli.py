"""Command-line entry point: ``skelgait {synth,train,embed,eval,print-config}``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .config import TrainConfig, ValidationError, load_config, parse_kv
from .datapipe import SamplingError, SynthConfig, load_dataset, write_synthetic
from .evalproto import (
    EmbeddingSet,
    ProtocolError,
    cross_view_eval,
    format_table,
    gallery_size_sweep,
    read_embeddings,
    write_embeddings,
    write_matrix_csv,
)
from .jrpm import build_pyramid
from .model import load_model
from .numerics import CheckpointError, Rng, set_deterministic
from .skeleton import ConfigurationError, DegenerateInputError, IngestionError, build_layout
from .train import embed, train

log = logging.getLogger("skelgait")

# exception type -> (exit code, category); first match wins
ERROR_CATEGORIES = [
    (ValidationError, 2, "config"),
    (ConfigurationError, 2, "config"),
    (IngestionError, 3, "ingestion"),
    (DegenerateInputError, 3, "ingestion"),
    (CheckpointError, 4, "checkpoint"),
    (ProtocolError, 5, "protocol"),
    (SamplingError, 5, "sampling"),
    (OSError, 6, "io"),
]


def _overrides(pairs) -> dict[str, str]:
    out = {}
    for p in pairs or []:
        if "=" not in p:
            raise ValidationError(f"--set expects key=value, got {p!r}")
        k, v = p.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _header(cmd: str, **items) -> None:
    log.info("skelgait %s", cmd)
    for k, v in items.items():
        log.info("  %s: %s", k, v)


def run_config_text(cfg: TrainConfig) -> str:
    spec = build_pyramid(build_layout(cfg.layout), cfg.scales, cfg.pool_mode)
    # pyramid tables are derived output; drop stale copies read back from a saved config
    cfg = dataclasses.replace(cfg, extra={k: v for k, v in cfg.extra.items() if not k.startswith("pyramid.")})
    extra = "".join(f"{k} = {v}\n" for k, v in spec.to_config().items())
    return cfg.to_text() + extra


def cmd_synth(args) -> int:
    kv = parse_kv(Path(args.config).read_text()) if args.config else {}
    cfg = SynthConfig.from_mapping(kv)
    flags = {"identities": args.identities, "clips_per_identity": args.clips, "frames": args.frames,
             "noise_sigma": args.noise, "seed": args.seed}
    cfg = SynthConfig(**{**cfg.__dict__, **{k: v for k, v in flags.items() if v is not None},
                         **({"views": tuple(int(v) for v in args.views.split(","))} if args.views else {})})
    _header("synth", out=args.out, seed=cfg.seed)
    manifest = write_synthetic(cfg, args.out)
    log.info("wrote %d clips; manifest %s", cfg.identities * len(cfg.views) * cfg.clips_per_identity, manifest)
    return 0


def _train_config(args) -> TrainConfig:
    ov = _overrides(args.set)
    if getattr(args, "data", None):
        ov["data.root"] = args.data
    if getattr(args, "out", None):
        ov["output.dir"] = args.out
    return load_config(args.config, ov).validate()


def cmd_train(args) -> int:
    cfg = _train_config(args)
    if args.print_config:
        sys.stdout.write(run_config_text(cfg))
        return 0
    out = Path(cfg.output_dir)
    _header("train", config=args.config or "(defaults)", data=cfg.dataset_root, out=out, seed=cfg.seed)
    if not cfg.dataset_root:
        raise ValidationError("no dataset root (use --data or data.root)")
    index = load_dataset(cfg.dataset_root, cfg.dataset_format, cfg.protocol, seed=cfg.seed)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(run_config_text(cfg))
    result = train(cfg, index, out)
    if result.history and not args.no_figures:
        plotting.loss_curve(result.history, out / "loss_curve.png")
    log.info("final checkpoint %s", result.checkpoints[-1])
    return 0


def cmd_embed(args) -> int:
    ckpt = Path(args.checkpoint)
    cfg_path = args.config or ckpt.parent / "config.txt"
    ov = _overrides(args.set)
    if args.data:
        ov["data.root"] = args.data
    cfg = load_config(cfg_path, ov).validate()
    _header("embed", checkpoint=ckpt, config=cfg_path, data=cfg.dataset_root, split=args.split,
            out=args.out, seed=args.seed)
    set_deterministic(cfg.threads)
    model = load_model(cfg, ckpt)
    index = load_dataset(cfg.dataset_root, cfg.dataset_format, cfg.protocol, seed=cfg.seed)
    emb = embed(model, index, args.split, cfg.frames, seed=args.seed)
    if len(emb) == 0:
        raise ProtocolError(f"split {args.split!r} is empty")
    write_embeddings(args.out, emb)
    log.info("wrote %d embeddings of dim %d", len(emb), emb.dim)
    return 0


def _concat(sets: list[EmbeddingSet]) -> EmbeddingSet:
    dims = {s.dim for s in sets}
    if len(dims) != 1:
        raise ProtocolError(f"probe files have different dimensions {sorted(dims)}")
    return EmbeddingSet(np.concatenate([s.embeddings for s in sets]),
                        np.concatenate([s.labels for s in sets]),
                        np.concatenate([s.views for s in sets]),
                        np.concatenate([s.conditions for s in sets]),
                        [c for s in sets for c in s.clip_ids])


def cmd_eval(args) -> int:
    out = Path(args.out)
    _header("eval", gallery=args.gallery, probe=",".join(args.probe), out=out, seed=args.seed)
    gallery = read_embeddings(args.gallery)
    probe = _concat([read_embeddings(p) for p in args.probe])
    if gallery.dim != probe.dim:
        raise ProtocolError(f"gallery dim {gallery.dim} != probe dim {probe.dim}")
    views = [int(v) for v in args.views.split(",")] if args.views else None
    conds = [c.strip().upper() for c in args.conditions.split(",")]
    report = cross_view_eval(gallery, probe, views, conds)
    out.mkdir(parents=True, exist_ok=True)
    for w in report.warnings:
        log.warning(w)
    for cond, rep in report.conditions.items():
        write_matrix_csv(out / f"crossview_{cond}.csv", rep)
        if not args.no_figures:
            plotting.cross_view_heatmap(rep, out / f"crossview_{cond}.png")
    table = format_table(report)
    (out / "crossview.txt").write_text(table)
    sys.stdout.write(table)
    if args.sweep:
        sizes = [int(s) for s in args.sweep.split(",")]
        acc = gallery_size_sweep(gallery, probe, sizes, args.trials, Rng(args.seed))
        with (out / "gallery_sweep.csv").open("w") as fh:
            fh.write("gallery_size,rank1\n")
            for s in sizes:
                fh.write(f"{s},{acc[s]!r}\n")
        if not args.no_figures:
            plotting.gallery_sweep(acc, out / "gallery_sweep.png")
    return 0


def cmd_print_config(args) -> int:
    sys.stdout.write(run_config_text(_train_config(args)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skelgait", description=__doc__)
    p.add_argument("-q", "--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic walker dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--identities", type=int)
    s.add_argument("--views", help="comma-separated degrees")
    s.add_argument("--clips", type=int, help="clips per identity and view")
    s.add_argument("--frames", type=int)
    s.add_argument("--noise", type=float)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train on a dataset")
    t.add_argument("--config")
    t.add_argument("--data")
    t.add_argument("--out")
    t.add_argument("--set", action="append", metavar="KEY=VALUE")
    t.add_argument("--print-config", action="store_true")
    t.add_argument("--no-figures", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("embed", help="write embeddings for one split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config")
    e.add_argument("--data")
    e.add_argument("--split", required=True, choices=("train", "gallery", "probe"))
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--set", action="append", metavar="KEY=VALUE")
    e.set_defaults(func=cmd_embed)

    v = sub.add_parser("eval", help="cross-view report from embedding files")
    v.add_argument("--gallery", required=True)
    v.add_argument("--probe", required=True, action="append")
    v.add_argument("--out", required=True)
    v.add_argument("--views")
    v.add_argument("--conditions", default="NM,BG,CL")
    v.add_argument("--sweep", help="comma-separated gallery sizes")
    v.add_argument("--trials", type=int, default=10)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--no-figures", action="store_true")
    v.set_defaults(func=cmd_eval)

    c = sub.add_parser("print-config", help="print the effective training config")
    c.add_argument("--config")
    c.add_argument("--set", action="append", metavar="KEY=VALUE")
    c.set_defaults(func=cmd_print_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except Exception as exc:  # mapped to a one-line category below
        for etype, code, cat in ERROR_CATEGORIES:
            if isinstance(exc, etype):
                print(f"error: {cat}: {exc}", file=sys.stderr)
                return code
        if isinstance(exc, ValueError):
            print(f"error: value: {exc}", file=sys.stderr)
            return 1
        raise


if __name__ == "__main__":
    sys.exit(main())
