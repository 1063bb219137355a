"""Command line entry point: ``mtscene <command> [options]``.

Failures print one JSON object ``{"error": <category>, "message": ...}`` to
stderr and exit with the category's code (config 2, shape 3, data 4,
checkpoint 5, numerical 6, anything else 1).  Usage errors exit 2 with
category ``usage``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import List, Optional

from ..data.io import load_split, read_sample, write_dataset
from ..data.synth import SplitSpec
from ..errors import ConfigError, SceneError
from .config import TrainConfig

log = logging.getLogger("mtscene")


def _config(args) -> TrainConfig:
    cfg = TrainConfig.from_json(args.config) if getattr(args, "config", None) else TrainConfig()
    changes = {}
    if getattr(args, "epochs", None) is not None:
        changes["epochs"] = args.epochs
    if getattr(args, "data", None) is not None:
        changes["dataset"] = dataclasses.replace(cfg.dataset, path=str(args.data))
    if getattr(args, "mode", None) is not None:
        changes["balancer"] = dataclasses.replace(cfg.balancer, mode=args.mode)
    if changes:
        cfg = dataclasses.replace(cfg, **changes)
    if getattr(args, "seed", None) is not None:
        from .train import with_seed

        cfg = with_seed(cfg, args.seed)
    return cfg


def cmd_synth(args) -> int:
    cfg = _config(args)
    scene = cfg.dataset.scene
    splits = SplitSpec(
        train=args.train if args.train is not None else cfg.dataset.splits.train,
        val=args.val if args.val is not None else cfg.dataset.splits.val,
        test=args.test if args.test is not None else cfg.dataset.splits.test,
    )
    base = args.seed if args.seed is not None else cfg.dataset.base_seed
    manifest = write_dataset(args.out, scene, splits, base)
    print(json.dumps({"out": str(args.out), "splits": {k: len(v) for k, v in manifest["splits"].items()}}))
    return 0


def cmd_train(args) -> int:
    from .plots import plot_runlog
    from .train import RUNLOG_NAME, train

    cfg = _config(args)
    result = train(cfg, args.out, progress=None if args.quiet else (lambda m: print(m, file=sys.stderr)))
    if args.plot:
        plot_runlog(Path(args.out) / RUNLOG_NAME, Path(args.out) / "runlog.svg")
    summary = {"best_epoch": result.best_epoch, "checkpoint": str(result.checkpoint_path), **result.best_report.csv_row()}
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_evaluate(args) -> int:
    from .checkpoint import check_compatible, load
    from .evaluate import evaluate
    from .train import load_splits

    ckpt = load(args.checkpoint)
    if args.config:
        check_compatible(ckpt, TrainConfig.from_json(args.config))
    if args.data:
        samples = load_split(args.data, args.split)
    else:
        samples = load_splits(ckpt.config, (args.split,))[args.split]
    report = evaluate(ckpt, samples)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json())
        (out / "report.csv").write_text(report.to_csv())
    sys.stdout.write(report.to_json())
    return 0


def cmd_ablate(args) -> int:
    from .ablate import ablate

    cfg = _config(args)
    result = ablate(
        cfg,
        seeds=args.seeds,
        modes=args.modes,
        out_dir=args.out,
        split=args.split,
        progress=None if args.quiet else (lambda m: print(m, file=sys.stderr)),
    )
    sys.stdout.write(result.summary_csv())
    sys.stdout.write("\n" + result.table())
    return 0


def cmd_reconstruct(args) -> int:
    from .reconstruct import reconstruct

    if (args.image is None) == (args.data is None):
        raise ConfigError("give exactly one of --image or --data (with --index)")
    source = args.image if args.image is not None else read_sample(args.data, args.index)
    stem = Path(args.image).stem if args.image is not None else f"{args.index:05d}"
    rec = reconstruct(args.checkpoint, source, args.out, stem=stem, ply_format=args.ply_format)
    print(
        json.dumps(
            {
                "depth": str(rec.depth_path),
                "ply": str(rec.ply_path),
                "overlay": str(rec.overlay_path),
                "points": len(rec.cloud),
                "detections": len(rec.detections),
            }
        )
    )
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import LOSS_TOLERANCE, MODEL_TOLERANCE, passed, run_all

    errors = run_all(args.seed if args.seed is not None else 0, args.coords)
    for name, err in errors.items():
        tol = MODEL_TOLERANCE if name == "model_end_to_end" else LOSS_TOLERANCE
        print(f"{name:20s} {err:.3e}  {'ok' if err < tol else 'FAIL'} (< {tol:g})")
    if args.out:
        Path(args.out).write_text(json.dumps({k: float(v) for k, v in errors.items()}, indent=1, sort_keys=True) + "\n")
    if not passed(errors):
        from ..errors import NumericalError

        raise NumericalError("gradient check exceeded tolerance")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, json.dumps({"error": "usage", "message": message}) + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mtscene", description=__doc__.splitlines()[0])
    p.add_argument("--log-level", default="WARNING", help="python logging level")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True, config=True):
        if config:
            sp.add_argument("--config", help="JSON training config (see README for the schema)")
        sp.add_argument("--seed", type=int, help="override the run seed")
        sp.add_argument("--out", required=out_required, help="output directory")

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    common(sp)
    sp.add_argument("--train", type=int)
    sp.add_argument("--val", type=int)
    sp.add_argument("--test", type=int)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train a model")
    common(sp)
    sp.add_argument("--data", help="dataset directory written by 'synth'")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--mode", choices=("fixed", "awu", "gradient-alignment"))
    sp.add_argument("--plot", action="store_true", help="also write runlog.svg (needs matplotlib)")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="score a checkpoint on a split")
    common(sp, out_required=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", help="dataset directory; default regenerates the checkpoint's dataset")
    sp.add_argument("--split", default="val")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("ablate", help="matched-seed comparison of balancer modes")
    common(sp)
    sp.add_argument("--data")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    sp.add_argument("--modes", nargs="+", default=["fixed", "awu"])
    sp.add_argument("--split", default="test")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("reconstruct", help="export depth PNG, PLY and overlay for one image")
    common(sp, config=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--image", help="RGB image file")
    sp.add_argument("--data", help="dataset directory (use with --index)")
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--ply-format", default="binary_little_endian", choices=("ascii", "binary_little_endian"))
    sp.set_defaults(func=cmd_reconstruct)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every loss and the full model")
    common(sp, out_required=False, config=False)
    sp.add_argument("--coords", type=int, default=200, help="parameters sampled in the end-to-end check")
    sp.set_defaults(func=cmd_gradcheck)
    return p


def _fail(category: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": category, "message": message}) + "\n")
    return code


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING))
    warnings.simplefilter("default")
    try:
        return args.func(args)
    except SceneError as exc:
        return _fail(exc.category, str(exc), exc.exit_code)
    except OSError as exc:
        return _fail("io", str(exc), 1)
    except Exception as exc:  # noqa: BLE001 - reported as a machine-readable failure
        log.debug("unhandled error", exc_info=True)
        return _fail("internal", f"{type(exc).__name__}: {exc}", 1)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
