"""Command-line entry point: ``ndec {synth,train,eval,ablate,report}``."""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
import time

from .checkpoint import CheckpointBundle, CheckpointError
from .config import ConfigError, RunConfig, load_config
from .align import TrainingDiverged
from .pipeline import aggregate, load_data, run_ablate, run_eval, run_train
from .report import emit_report, parse_document, stem
from .signals import EmptySelectionError, EpochFormatError, save_split

log = logging.getLogger("ndec")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.updated(**{"train.seed": args.seed})
    return cfg


@contextlib.contextmanager
def _threads(n):
    if n is None:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=n):
        yield


def _ckpt_path(out, cfg: RunConfig) -> str:
    return os.path.join(out, f"checkpoint_{stem(cfg.hash, cfg.train.seed)}.ndck")


def cmd_synth(args) -> int:
    cfg = _config(args)
    if cfg.data.source != "synth":
        raise ConfigError("synth needs data.source = synth")
    train, test = load_data(cfg.updated(**{"ablation.band": "all", "ablation.region": "all"}))
    os.makedirs(args.out, exist_ok=True)
    save_split(args.out, "train", train)
    save_split(args.out, "test", test)
    print(f"wrote {len(train)} train and {len(test)} test epochs to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    os.makedirs(args.out, exist_ok=True)
    path = _ckpt_path(args.out, cfg)
    resume = CheckpointBundle.load(args.resume, cfg.hash) if args.resume else None
    with _threads(args.threads):
        bundle, trainlog = run_train(cfg, resume=resume, checkpoint_path=path)
    for rec in trainlog.records[-3:]:
        log.info("%s", rec)
    print(path)
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    t0 = time.perf_counter()
    with _threads(args.threads):
        if args.checkpoint:
            bundle = CheckpointBundle.load(args.checkpoint, cfg.hash)
            reports = run_eval(bundle, cfg, args.split, threads=args.threads)
        else:
            runs = []
            for r in range(args.repeat):
                c = cfg.updated(**{"train.seed": cfg.train.seed + r})
                data = load_data(c)
                bundle, _ = run_train(c, data)
                runs.append(run_eval(bundle, c, data[1] if args.split == "test" else data[0],
                                     threads=args.threads))
            reports = runs[0] if args.repeat == 1 else aggregate(runs)
    runtime = time.perf_counter() - t0 if args.runtime else None
    for p in emit_report(reports, args.out, cfg.hash, cfg.train.seed, runtime_sec=runtime):
        print(p)
    for r in reports:
        print(f"{r.modality:>7s}  top1={r.top1:.3f}  top5={r.top5:.3f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    t0 = time.perf_counter()
    with _threads(args.threads):
        reports = run_ablate(cfg, args.axis, repeat=args.repeat)
    runtime = time.perf_counter() - t0 if args.runtime else None
    for p in emit_report(reports, args.out, cfg.hash, cfg.train.seed, args.axis, runtime):
        print(p)
    for r in reports:
        if r.modality == "fusion":
            print(f"{r.tags['row']:>10s}  top1={r.top1:.3f}  top5={r.top5:.3f}")
    return 0


def cmd_report(args) -> int:
    """Validate an existing JSON report and re-emit its CSV table."""
    with open(args.report, encoding="utf-8") as fh:
        doc, reports = parse_document(fh.read())
    for p in emit_report(reports, args.out, doc["config_hash"], doc["seed"],
                         doc.get("ablation_axis"), doc["runtime_sec"]):
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ndec", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, repeat=False):
        p.add_argument("--config", help="run configuration file")
        p.add_argument("--seed", type=int, help="override train.seed")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--threads", type=int, help="BLAS thread count")
        p.add_argument("--runtime", action="store_true",
                       help="record wall-clock runtime in the JSON (breaks byte-identity)")
        if repeat:
            p.add_argument("--repeat", type=int, default=1, help="independent seeds to average")
        return p

    common(sub.add_parser("synth", help="write the synthetic benchmark to disk")).set_defaults(func=cmd_synth)
    p = common(sub.add_parser("train", help="run the three training stages"))
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)
    p = common(sub.add_parser("eval", help="retrieval reports per modality"), repeat=True)
    p.add_argument("--checkpoint", help="evaluate this checkpoint instead of training")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(func=cmd_eval)
    p = common(sub.add_parser("ablate", help="ablation table along one axis"), repeat=True)
    p.add_argument("--axis", choices=("module", "band", "region", "encoder"), default="module")
    p.set_defaults(func=cmd_ablate)
    p = sub.add_parser("report", help="validate a JSON report and rewrite its tables")
    p.add_argument("report")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if getattr(args, "repeat", 1) < 1:
        print("error: --repeat must be at least 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, CheckpointError, EpochFormatError, EmptySelectionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
