"""Command-line entry point: ``adkd <subcommand> [options]``.

Subcommands:

* ``gen``       write a synthetic corpus (MVTec layout)
* ``train``     train the student against the frozen teacher
* ``infer``     anomaly maps for individual images
* ``eval``      per-class AUROC / PRO / latency table for a dataset
* ``gradcheck`` finite-difference verification of every differentiable op
* ``bench``     timed single-threaded inference loop

Usage errors exit with status 2, operational failures with status 1.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import weights as wfile
from .config import TrainConfig
from .data.layout import LayoutError, scan_layout
from .data.pnm import PnmError, load_image
from .data.synth import CorpusSpec, generate_corpus
from .errors import ConfigError, ContractError, DimensionError, TrainingDiverged, UndefinedMetricError

log = logging.getLogger("adkd")

OPERATIONAL_ERRORS = (
    ConfigError, ContractError, DimensionError, FileNotFoundError, LayoutError, PnmError, TrainingDiverged,
    UndefinedMetricError, wfile.NamedTensorError, wfile.WeightsFormatError,
)


class CliError(Exception):
    """An operational failure reported as a one-line diagnostic."""


def thread_limit() -> int | None:
    """Thread cap from ``ADKD_THREADS``; 0 means a single deterministic context."""
    raw = os.environ.get("ADKD_THREADS", "").strip()
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"ADKD_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise CliError("ADKD_THREADS must be >= 0")
    return max(n, 1)


def _require_file(path: Path, what: str) -> Path:
    if not path.is_file():
        raise CliError(f"{what} not found: {path}")
    return path


def _run_config(args) -> TrainConfig:
    cfg = TrainConfig.profile(args.profile)
    if args.config:
        cfg = TrainConfig.from_file(_require_file(Path(args.config), "config file"), base=cfg)
    overrides = []
    if args.data:
        overrides.append(("data_root", args.data))
    if args.checkpoint:
        overrides.append(("checkpoint_path", args.checkpoint))
    if args.seed is not None:
        overrides.append(("seed", str(args.seed)))
    return cfg.with_pairs(overrides) if overrides else cfg


# --- subcommands ---------------------------------------------------------


def cmd_gen(args) -> int:
    spec = CorpusSpec.from_file(_require_file(Path(args.config), "corpus spec")) if args.config else CorpusSpec()
    if args.seed is not None:
        spec = CorpusSpec.from_text(spec.to_text() + f"seed = {args.seed}\n")
    root = generate_corpus(spec, args.out)
    counts = scan_layout(root).counts()
    for name, c in counts.items():
        print(f"{name}: {c['train']} train, {c['test_normal']} test normal, {c['test_anomalous']} test anomalous")
    print(f"corpus written to {root}")
    return 0


def cmd_train(args) -> int:
    from .trainer import Checkpoint, resume, train

    cfg = _run_config(args)
    if not cfg.data_root:
        raise CliError("no dataset given: pass --data or set data_root in the config")
    dataset = scan_layout(cfg.data_root)

    def on_epoch(epoch, result):
        print(f"epoch {epoch:4d}  train {result.epoch_losses[-1]:.6f}  val {result.val_losses[-1]:.6f}", flush=True)

    if args.resume:
        ckpt = Checkpoint.load(_require_file(Path(cfg.checkpoint_path), "checkpoint"))
        result = resume(ckpt, dataset, cfg, on_epoch)
    else:
        result = train(cfg, dataset, on_epoch)
    best = result.checkpoint
    if best is None:
        print("no epochs were run; nothing saved")
        return 0
    print(f"initial val loss {result.initial_val_loss:.6f}; best val loss {best.best_val_loss:.6f} at epoch "
          f"{best.epoch}; {len(result.step_losses)} optimizer steps")
    print(f"checkpoint: {cfg.checkpoint_path}")
    return 0


def _detector(path: str):
    from .inference import Detector

    return Detector.from_checkpoint(_require_file(Path(path), "checkpoint"))


def cmd_infer(args) -> int:
    from .inference import save_anomaly_map

    det = _detector(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    used: set[str] = set()
    for name in args.images:
        image = load_image(_require_file(Path(name), "image"))
        r = det(image)
        stem = Path(name).stem
        if stem in used:  # e.g. good/000.ppm and scratch/000.ppm
            stem = f"{Path(name).parent.name}_{stem}"
        used.add(stem)
        raw, pgm = save_anomaly_map(r.map, out / stem)
        print(f"{name}\tscore {r.score:.6f}\t{r.seconds:.4f}s\t{raw}")
    return 0


def cmd_eval(args) -> int:
    from .evaluation import evaluate

    det = _detector(args.checkpoint)
    report = evaluate(det, scan_layout(args.data), fpr_limit=args.fpr_limit)
    print(report.table(), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.tsv").write_text(report.tsv(), encoding="utf-8")
        (out / "latency.tsv").write_text(report.latency_tsv(), encoding="utf-8")
        (out / "eval.txt").write_text(report.table(), encoding="utf-8")
        print(f"written {out / 'eval.tsv'}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import format_results, run_suite

    results = run_suite(instances=args.instances, seed=args.seed or 0)
    print(format_results(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return 1
    print(f"all {len(results)} cases passed")
    return 0


def cmd_bench(args) -> int:
    from .metrics import latency_report

    det = _detector(args.checkpoint)
    dataset = scan_layout(args.data)
    times: dict[str, list[float]] = {}
    # latency is measured in a single context regardless of ADKD_THREADS
    with threadpool_limits(limits=1):
        for split in dataset.classes:
            refs = split.test or split.train
            images = [r.load().image for r in refs[: args.limit]]
            det(images[0])  # warm-up, excluded
            times[split.name] = [det(img).seconds for _ in range(args.repeat) for img in images]
    rep = latency_report(times)
    for name, mean in rep.class_means.items():
        print(f"{name}\t{mean:.6f} s/image\t({rep.class_counts[name]} timed)")
    print(f"weighted mean\t{rep.overall:.6f} s/image")
    return 0


# --- parser --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adkd", description="Attention-refined knowledge distillation for "
                                                              "multi-class anomaly detection.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{gen,train,infer,eval,gradcheck,bench}")

    def common(p, config=True, data=False, checkpoint=False, out=False, seed=False, profile=False):
        if config:
            p.add_argument("--config", help="key = value file")
        if data:
            p.add_argument("--data", help="dataset root in MVTec layout")
        if checkpoint:
            p.add_argument("--checkpoint", default=None, help="checkpoint path")
        if out:
            p.add_argument("--out", help="output directory")
        if seed:
            p.add_argument("--seed", type=int, help="override the seed")
        if profile:
            p.add_argument("--profile", choices=("desk", "paper"), default="desk", help="base hyperparameters")

    p = sub.add_parser("gen", help="generate the synthetic corpus")
    common(p, seed=True)
    p.add_argument("--out", required=True, help="corpus root to create")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a student")
    common(p, data=True, checkpoint=True, seed=True, profile=True)
    p.add_argument("--resume", action="store_true", help="continue from --checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="anomaly maps for images")
    common(p, config=False, out=True)
    p.add_argument("--checkpoint", default="checkpoint.adkd", help="checkpoint path")
    p.add_argument("images", nargs="+", help="PPM/PGM images")
    p.set_defaults(func=cmd_infer, out="maps")

    p = sub.add_parser("eval", help="per-class evaluation table")
    common(p, config=False, out=True)
    p.add_argument("--data", required=True, help="dataset root in MVTec layout")
    p.add_argument("--checkpoint", default="checkpoint.adkd", help="checkpoint path")
    p.add_argument("--fpr-limit", type=float, default=0.3, help="PRO integration limit")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    common(p, config=False, seed=True)
    p.add_argument("--instances", type=int, default=20, help="random instances per case")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="timed inference loop")
    common(p, config=False)
    p.add_argument("--data", required=True, help="dataset root in MVTec layout")
    p.add_argument("--checkpoint", default="checkpoint.adkd", help="checkpoint path")
    p.add_argument("--repeat", type=int, default=1, help="passes over the images")
    p.add_argument("--limit", type=int, default=None, help="images per class")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        limit = thread_limit()
        ctx = threadpool_limits(limits=limit) if limit is not None else contextlib.nullcontext()
        with ctx:
            return args.func(args)
    except CliError as exc:
        print(f"adkd: error: {exc}", file=sys.stderr)
        return 1
    except OPERATIONAL_ERRORS as exc:
        print(f"adkd: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
