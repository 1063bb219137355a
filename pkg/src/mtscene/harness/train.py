"""Training loop.

One step: forward, the three task losses, the balancer's next weights, the
weighted total, backward, optimizer update.  After each epoch the model is
scored on the evaluation split; the exponential schedule then the plateau
schedule (on the uniform-weighted validation loss) adjust the learning rate,
and the best checkpoint by ``(Dice + mAP) / 2`` is kept.

The loop is single-threaded and seeded, so a config reproduces byte-identical
logs and checkpoints.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..autodiff import grad
from ..balancer import init_state, needs_gradients, next_weights
from ..data.io import load_split
from ..data.synth import Sample, generate_scene, sample_seed
from ..detection import match_batch
from ..errors import DataError, NumericalError
from ..losses import TASKS, depth_loss, detection_loss, seg_loss, total_loss
from ..metrics import EvalReport
from ..model import MultiTaskNet
from . import checkpoint
from .config import TrainConfig
from .evaluate import evaluate_model, validation_loss
from .optim import AdamW, ExponentialLR, LRSchedule, ReduceOnPlateau
from .validation import check_samples, images_to_array

log = logging.getLogger(__name__)

RUNLOG_FIELDS = ("step", "epoch", "seg", "depth", "detection", "total", "w_seg", "w_depth", "w_det", "lr", "mode")
VAL_FIELDS = ("epoch", "val_seg", "val_depth", "val_detection", "val_total") + EvalReport.CSV_FIELDS + ("lr",)

RUNLOG_NAME = "runlog.csv"
VALLOG_NAME = "validation.csv"
BEST_NAME = "best.ckpt"
LAST_GOOD_NAME = "last_good.ckpt"


def with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    """Same config with the run seed and model initialisation seed set to ``seed``."""
    return dataclasses.replace(cfg, seed=int(seed), model=dataclasses.replace(cfg.model, seed=int(seed)))


def load_splits(cfg: TrainConfig, names: Sequence[str] = ("train", "val", "test")) -> Dict[str, List[Sample]]:
    ds = cfg.dataset
    if ds.path is not None:
        return {n: load_split(ds.path, n) for n in names}
    ranges = ds.splits.ranges()
    out = {}
    for n in names:
        if n not in ranges:
            raise DataError(f"unknown split {n!r}")
        out[n] = [generate_scene(sample_seed(ds.base_seed, i), ds.scene) for i in ranges[n]]
    return out


def _fmt(x) -> str:
    if isinstance(x, float) or isinstance(x, np.floating):
        return repr(float(x))
    return str(x)


class CsvLog:
    def __init__(self, path: Optional[Path], fields: Sequence[str]):
        self.path = path
        self.fields = tuple(fields)
        self.rows: List[dict] = []
        if path is not None:
            with open(path, "w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(self.fields)

    def write(self, row: dict) -> None:
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow([_fmt(row[k]) for k in self.fields])


@dataclass
class TrainResult:
    model: MultiTaskNet
    config: TrainConfig
    best_epoch: int
    best_report: EvalReport
    runlog: List[dict]
    validation: List[dict]
    out_dir: Optional[Path] = None
    seconds: float = 0.0
    reports: List[EvalReport] = field(default_factory=list)

    @property
    def checkpoint_path(self) -> Optional[Path]:
        return None if self.out_dir is None else self.out_dir / BEST_NAME


def task_losses(model: MultiTaskNet, batch: Sequence[Sample], cfg: TrainConfig, training: bool, rng=None):
    """Forward a batch; returns the three task-loss tensors and their named components."""
    x = images_to_array(batch)
    p = model(x, training=training, rng=rng)
    masks = np.stack([s.mask for s in batch]).astype(np.int64)
    depths = np.stack([s.depth for s in batch])
    seg, seg_c = seg_loss(p.seg_logits, masks, cfg.seg_loss)
    dep, dep_c = depth_loss(p.depth, depths, cfg.depth_loss)
    matched = match_batch([s.boxes for s in batch], p.det_grid.extents, p.det_grid.stride)
    det, det_c = detection_loss(p.det_grid, matched)
    comps = {f"seg.{k}": v for k, v in seg_c.items()}
    comps.update({f"depth.{k}": v for k, v in dep_c.items()})
    comps.update({f"detection.{k}": v for k, v in det_c.items()})
    return [seg, dep, det], comps


def _first_bad(values: Dict[str, float]) -> Optional[str]:
    for k, v in values.items():
        if not np.isfinite(v):
            return k
    return None


def train(
    cfg: TrainConfig,
    out_dir=None,
    splits: Optional[Dict[str, List[Sample]]] = None,
    progress: Optional[Callable[[str], None]] = None,
) -> TrainResult:
    """Train a model; with ``out_dir`` the run log, validation log and best checkpoint are written there."""
    t0 = time.perf_counter()
    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.to_json())
    splits = splits if splits is not None else load_splits(cfg, ("train", cfg.eval_split))
    train_set = check_samples(splits["train"])
    val_set = check_samples(splits[cfg.eval_split])

    model = MultiTaskNet(cfg.model)
    params = [t for _, t in model.named_parameters()]
    shared = model.shared_parameters()
    opt = AdamW(params, cfg.optimizer)
    schedule = LRSchedule(opt, ExponentialLR(cfg.schedulers.exponential), ReduceOnPlateau(cfg.schedulers.reduce_on_plateau))
    bcfg = cfg.balancer
    state = init_state(cfg.initial_weights)

    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    gate_rng = np.random.default_rng([cfg.seed, 2])
    runlog = CsvLog(out / RUNLOG_NAME if out else None, RUNLOG_FIELDS)
    vallog = CsvLog(out / VALLOG_NAME if out else None, VAL_FIELDS)

    best_score, best_epoch, best_report = -np.inf, -1, None
    best_params = checkpoint.snapshot(model)
    reports: List[EvalReport] = []
    step = 0
    n = len(train_set)
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = [train_set[i] for i in order[start : start + cfg.batch_size]]
            tensors, comps = task_losses(model, batch, cfg, training=True, rng=gate_rng)
            values = [t.item() for t in tensors]
            bad = _first_bad(dict(zip(TASKS, values)))
            if bad is not None:
                _abort(out, model, cfg, step, f"{bad} loss", comps)
            grads = None
            if needs_gradients(state, bcfg):
                grads = np.stack([np.concatenate([g.reshape(-1) for g in grad(t, shared)]) for t in tensors])
            weights = next_weights(state, values, grads, bcfg)
            breakdown = total_loss(*tensors, weights, comps)
            opt.zero_grad()
            breakdown.tensor.backward()
            for name, t in model.named_parameters():
                if t.grad is not None and not np.all(np.isfinite(t.grad)):
                    _abort(out, model, cfg, step, f"gradient of {name}", comps)
            row = {
                "step": step,
                "epoch": epoch,
                "seg": values[0],
                "depth": values[1],
                "detection": values[2],
                "total": breakdown.total,
                "w_seg": weights[0],
                "w_depth": weights[1],
                "w_det": weights[2],
                "lr": opt.lr,
                "mode": bcfg.mode,
            }
            opt.step()
            runlog.write(row)
            step += 1

        vl = validation_loss(model, val_set, cfg)
        report = evaluate_model(model, val_set, cfg.model.num_classes, cfg.objectness_threshold, cfg.nms_iou)
        reports.append(report)
        if report.score > best_score:
            best_score, best_epoch, best_report = report.score, epoch, report
            best_params = checkpoint.snapshot(model)
            if out is not None:
                checkpoint.save(out / BEST_NAME, model, cfg, {"epoch": epoch, "step": step})
        lr = opt.lr
        vallog.write(
            {"epoch": epoch, "val_seg": vl["seg"], "val_depth": vl["depth"], "val_detection": vl["detection"],
             "val_total": vl["total"], **report.csv_row(), "lr": lr}
        )
        schedule.epoch_end(vl["total"])
        if progress is not None:
            progress(
                f"epoch {epoch + 1}/{cfg.epochs} val_total={vl['total']:.4f} dice={report.dice:.3f} "
                f"map50={report.map50:.3f} mae={report.depth_mae_mm:.2f}mm lr={lr:.2e}"
            )

    for (name, arr), (_, t) in zip(best_params, model.named_parameters()):
        t.data[...] = arr
    return TrainResult(
        model=model,
        config=cfg,
        best_epoch=best_epoch,
        best_report=best_report,
        runlog=runlog.rows,
        validation=vallog.rows,
        out_dir=out,
        seconds=time.perf_counter() - t0,
        reports=reports,
    )


def _abort(out, model, cfg, step, what, comps):
    # parameters have not been updated with the bad step yet
    where = ""
    if out is not None:
        checkpoint.save(out / LAST_GOOD_NAME, model, cfg, {"step": step, "aborted": True})
        where = f"; last good parameters saved to {out / LAST_GOOD_NAME}"
    detail = _first_bad(comps)
    extra = f" (component {detail})" if detail else ""
    raise NumericalError(f"non-finite {what} at step {step}{extra}{where}")
