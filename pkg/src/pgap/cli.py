"""``pgap <command>``: generate, validate, mine, train, evaluate, benchmark, export.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 runtime failure.
``PGAP_THREADS`` caps worker threads; 0 (the default) runs single-threaded and
bit-reproducibly.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .dataio import downsample, load_sequence
from .errors import PgapError
from .mining import build_ground_truth, mine_tuples, write_ground_truth_csv, write_tuples_csv
from .model import ModelConfig, describe_many, load_checkpoint, save_checkpoint
from .retrieval import benchmark_runtime, evaluate_descriptors, save_descriptors
from .synthgen import generate_to
from .training import HISTORY_HEADER, TrainConfig, train

log = logging.getLogger("pgap")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def thread_count() -> int:
    raw = os.environ.get("PGAP_THREADS", "0")
    try:
        return max(0, int(raw))
    except ValueError:
        raise UsageError(f"PGAP_THREADS must be an integer, got {raw!r}") from None


def _limit_blas(workers: int):
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, workers))


# ---------------------------------------------------------------------------
# manifests


def hash_inputs(paths) -> dict[str, str]:
    """SHA-256 over every file under each path, in sorted relative-path order."""
    out = {}
    for p in paths:
        p = Path(p)
        h = hashlib.sha256()
        files = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
        for f in files:
            h.update(str(f.relative_to(p) if p.is_dir() else f.name).encode())
            h.update(f.read_bytes())
        out[str(p)] = h.hexdigest()
    return out


def write_manifest(path: Path, command: str, argv: list[str], config: dict, seeds: dict, inputs) -> dict:
    manifest = {
        "command": command,
        "argv": argv,
        "config": config,
        "seeds": seeds,
        "inputs": hash_inputs(inputs),
        "tool_version": __version__,
        "threads": thread_count(),
        "started": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    cfg = load_config(args.spec, default_section="orchard")
    spec = cfg.orchard.validate()
    out = Path(args.out)
    seq = generate_to(spec, out)
    (out / "orchard.txt").write_text("".join(f"{k} = {v}\n" for k, v in spec.to_dict().items()))
    print(f"wrote {seq.meta.frame_count} frames, {spec.num_segments} segments to {out}")
    return 0


def cmd_validate(args) -> int:
    seq = load_sequence(args.data)
    counts = np.bincount(seq.segments())
    per_seg = ", ".join(f"{s}:{c}" for s, c in enumerate(counts) if c)
    print(f"{args.data}: {seq.meta.frame_count} frames, {seq.meta.num_segments} segments ({per_seg})")
    return 0


def cmd_mine(args) -> int:
    cfg = load_config(args.config)
    seq = load_sequence(args.data)
    tuples = mine_tuples(seq, cfg.mining)
    gt = build_ground_truth(seq, cfg.mining, segment_aware=args.segment_aware)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_tuples_csv(out / "tuples.csv", tuples)
    write_ground_truth_csv(out / "ground_truth.csv", gt)
    print(f"training anchors: {len(tuples)}  test anchors: {gt.num_valid()}")
    return 0


def _history_path(ckpt: Path) -> Path:
    return ckpt.with_name(ckpt.stem + "_history.csv")


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.no_slc:
        cfg.loss.slc_enabled = False
    if args.epochs is not None:
        cfg.optim.max_epochs = args.epochs
    if args.num_points is not None:
        cfg.train.num_points = args.num_points
    ckpt = Path(args.out)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    write_manifest(
        ckpt.with_name(ckpt.name + ".manifest.json"),
        "train",
        sys.argv[1:],
        cfg.to_dict(),
        {"optim": cfg.optim.seed, "mining": cfg.mining.seed, "val": cfg.train.val_seed},
        list(args.data) + [args.val] + ([args.config] if args.config else []),
    )
    seqs = [load_sequence(d) for d in args.data]
    val = load_sequence(args.val)
    hist_path = _history_path(ckpt)
    with open(hist_path, "w", newline="") as f:
        csv.writer(f, lineterminator="\n").writerow(HISTORY_HEADER)

    def on_epoch(rec, params, is_best):
        with open(hist_path, "a", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow([rec.epoch, repr(rec.loss), repr(rec.triplet), repr(rec.segment), repr(rec.val_recall_at_1)])
        if is_best:
            save_checkpoint(ckpt, params, seed=cfg.optim.seed, epoch=rec.epoch, train=asdict(cfg.train), history=[r.row() for r in result_rows] + [rec.row()])
        result_rows.append(rec)

    result_rows: list = []
    with _limit_blas(thread_count()):
        result = train(seqs, val, cfg.model, cfg.mining, cfg.loss, cfg.optim, cfg.train, on_epoch=on_epoch)
    print(f"best epoch {result.best_epoch}: val recall@1 {result.best_recall:.4f}; checkpoint {ckpt}")
    return 0


def _eval_clouds(seq, num_points: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.stack([downsample(c, num_points, rng) for c in seq.clouds()])


def _ckpt_train_config(header: dict) -> TrainConfig:
    return TrainConfig(**header.get("train", {}))


def cmd_evaluate(args) -> int:
    params, header = load_checkpoint(args.ckpt)
    seq = load_sequence(args.data)
    cfg = load_config(args.config)
    tcfg = _ckpt_train_config(header)
    n = args.num_points or tcfg.num_points
    with _limit_blas(thread_count()):
        desc = describe_many(_eval_clouds(seq, n, tcfg.val_seed), params, workers=thread_count())
    gt = build_ground_truth(seq, cfg.mining, segment_aware=args.segment_aware)
    report = evaluate_descriptors(desc, seq.positions(), seq.segments(), gt, segment_aware=args.segment_aware)
    paths = report.write(args.out)
    print(f"recall@1 {report.recall_at_1:.4f}  recall@1% {report.recall_at_1pct:.4f}  queries {report.num_queries}  -> {paths['json']}")
    return 0


def cmd_benchmark(args) -> int:
    if args.ckpt:
        params, header = load_checkpoint(args.ckpt)
    else:
        from .model import init_params

        params, header = init_params(ModelConfig(), 0), {}
    n = args.num_points or _ckpt_train_config(header).num_points
    if args.data:
        seq = load_sequence(args.data)
        clouds = seq.clouds()[: args.batch]
        clouds = (clouds * args.batch)[: args.batch]
        rng = np.random.default_rng(0)
        scans = np.stack([downsample(c, n, rng) for c in clouds])
    else:
        scans = np.random.default_rng(0).normal(0.0, 5.0, (args.batch, n, 3))
    dtype = np.float32 if args.float32 else np.float64
    with _limit_blas(thread_count()):
        report = benchmark_runtime(params, scans, repetitions=args.reps, dtype=dtype)
    text = json.dumps(report.to_json(), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_export(args) -> int:
    params, header = load_checkpoint(args.ckpt)
    seq = load_sequence(args.data)
    tcfg = _ckpt_train_config(header)
    n = args.num_points or tcfg.num_points
    with _limit_blas(thread_count()):
        desc = describe_many(_eval_clouds(seq, n, tcfg.val_seed), params, workers=thread_count())
    save_descriptors(args.out, desc, seq.meta.name)
    print(f"wrote {desc.shape[0]} x {desc.shape[1]} descriptors to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pgap", description="PointNetPGAP place recognition toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic orchard sequence")
    g.add_argument("--spec", help="key = value orchard spec (defaults if omitted)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    v = sub.add_parser("validate", help="check a sequence directory")
    v.add_argument("--data", required=True)
    v.set_defaults(func=cmd_validate)

    m = sub.add_parser("mine", help="dump training tuples and ground truth as CSV")
    m.add_argument("--data", required=True)
    m.add_argument("--config")
    m.add_argument("--segment-aware", action="store_true")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mine)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", nargs="+", required=True)
    t.add_argument("--val", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--no-slc", action="store_true", help="train with the triplet loss only")
    t.add_argument("--epochs", type=int)
    t.add_argument("--num-points", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="recall report for one sequence")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--config")
    e.add_argument("--segment-aware", action="store_true")
    e.add_argument("--num-points", type=int)
    e.add_argument("--out", required=True, help="report path prefix")
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("benchmark", help="time descriptor extraction for one batch")
    b.add_argument("--ckpt")
    b.add_argument("--data")
    b.add_argument("--batch", type=int, default=20)
    b.add_argument("--reps", type=int, default=10)
    b.add_argument("--num-points", type=int)
    b.add_argument("--float32", action="store_true")
    b.add_argument("--out")
    b.set_defaults(func=cmd_benchmark)

    x = sub.add_parser("export", help="dump descriptors of a sequence")
    x.add_argument("--data", required=True)
    x.add_argument("--ckpt", required=True)
    x.add_argument("--num-points", type=int)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
        thread_count()
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except PgapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
