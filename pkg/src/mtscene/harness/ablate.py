"""Matched-seed comparison of balancer modes.

Each seed trains one model per mode with identical data, initialisation and
batch order; only the task weighting differs.  Models are selected on the
validation split and scored on the test split.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..balancer import MODES
from ..errors import ConfigError
from .config import TrainConfig
from .evaluate import evaluate_model
from .train import load_splits, train, with_seed

SUMMARY_FIELDS = ("mode", "dice_mean", "dice_std", "map_mean", "map_std")
RUN_FIELDS = ("mode", "seed", "dice", "map50", "miou", "depth_mae_mm", "score", "best_epoch", "seconds")

# display rows in the style of a with/without ablation table
_LABELS = {"fixed": "uniform weights (w/o)", "awu": "adversarial update (with)", "gradient-alignment": "gradient alignment"}


@dataclass
class AblationResult:
    runs: List[dict]
    summary: List[dict]

    def by_mode(self, mode: str) -> List[dict]:
        return [r for r in self.runs if r["mode"] == mode]

    def mean_score(self, mode: str) -> float:
        return float(np.mean([r["score"] for r in self.by_mode(mode)]))

    def summary_csv(self) -> str:
        return _csv(self.summary, SUMMARY_FIELDS)

    def runs_csv(self) -> str:
        return _csv(self.runs, RUN_FIELDS)

    def table(self) -> str:
        """Markdown table: Model | Regime | Arch. | Segmentation Dice | Object detection mAP."""
        lines = [
            "| Model | Regime | Arch. | Segmentation | Object detection |",
            "|---|---|---|---|---|",
            "| | | | Dice | mAP |",
        ]
        for row in self.summary:
            label = _LABELS.get(row["mode"], row["mode"])
            lines.append(
                f"| {label} | Seg. & Det. & Depth | Trfmr | "
                f"{_pm(row['dice_mean'], row['dice_std'])} | {_pm(row['map_mean'], row['map_std'])} |"
            )
        return "\n".join(lines) + "\n"


def _pm(mean: float, std: float) -> str:
    return f"{mean:.3f}" if not np.isfinite(std) else f"{mean:.3f} ± {std:.3f}"


def _csv(rows, fields) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([repr(float(r[k])) if isinstance(r[k], (float, np.floating)) else r[k] for k in fields])
    return buf.getvalue()


def summarize(runs: Sequence[dict], modes: Sequence[str]) -> List[dict]:
    out = []
    for mode in modes:
        rs = [r for r in runs if r["mode"] == mode]
        dice = np.array([r["dice"] for r in rs])
        maps = np.array([r["map50"] for r in rs])
        ddof_ok = len(rs) >= 2
        out.append(
            {
                "mode": mode,
                "dice_mean": float(dice.mean()),
                "dice_std": float(dice.std(ddof=1)) if ddof_ok else float("nan"),
                "map_mean": float(maps.mean()),
                "map_std": float(maps.std(ddof=1)) if ddof_ok else float("nan"),
            }
        )
    return out


def ablate(
    cfg: TrainConfig,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    modes: Sequence[str] = ("fixed", "awu"),
    out_dir=None,
    split: str = "test",
    progress: Optional[Callable[[str], None]] = None,
) -> AblationResult:
    for m in modes:
        if m not in MODES:
            raise ConfigError(f"unknown balancer mode {m!r}; choose from {MODES}")
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ConfigError("ablation needs at least one seed")
    if len(seeds) < 2:
        warnings.warn("fewer than two seeds: the sample standard deviation is undefined and reported as nan")
    splits = load_splits(cfg, ("train", cfg.eval_split, split))
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    runs = []
    for seed in seeds:
        for mode in modes:
            run_cfg = with_seed(cfg, seed)
            run_cfg = dataclasses.replace(run_cfg, balancer=dataclasses.replace(cfg.balancer, mode=mode))
            run_dir = None if out is None else out / f"{mode}_seed{seed}"
            result = train(run_cfg, run_dir, splits=splits)
            rep = evaluate_model(result.model, splits[split], cfg.model.num_classes, cfg.objectness_threshold, cfg.nms_iou)
            row = {
                "mode": mode,
                "seed": seed,
                "dice": rep.dice,
                "map50": rep.map50,
                "miou": rep.miou,
                "depth_mae_mm": rep.depth_mae_mm,
                "score": rep.score,
                "best_epoch": result.best_epoch,
                "seconds": round(result.seconds, 1),
            }
            runs.append(row)
            if progress is not None:
                progress(f"{mode} seed={seed} dice={rep.dice:.3f} map50={rep.map50:.3f} mae={rep.depth_mae_mm:.2f}mm")
    result = AblationResult(runs, summarize(runs, modes))
    if out is not None:
        (out / "ablation.csv").write_text(result.summary_csv())
        (out / "runs.csv").write_text(result.runs_csv())
        (out / "ablation.md").write_text(result.table())
    return result
