"""Optional SVG plots of a run log (needs matplotlib)."""

from __future__ import annotations

import csv
from pathlib import Path

from ..errors import ConfigError


def _read(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"{path} has no rows to plot")
    return {k: [r[k] for r in rows] for k in rows[0]}


def plot_runlog(runlog_csv, out_svg) -> Path:
    """Two panels: per-task losses and task weights against step."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise ConfigError("plotting needs matplotlib (pip install 'mtscene[plot]')") from exc
    cols = _read(runlog_csv)
    step = [int(s) for s in cols["step"]]
    fig, (a, b) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for key in ("seg", "depth", "detection", "total"):
        a.plot(step, [float(v) for v in cols[key]], label=key, lw=1)
    a.set_ylabel("loss")
    a.set_yscale("log")
    a.legend(frameon=False)
    for key in ("w_seg", "w_depth", "w_det"):
        b.plot(step, [float(v) for v in cols[key]], label=key, lw=1)
    b.set_ylabel("task weight")
    b.set_xlabel("step")
    b.legend(frameon=False)
    fig.tight_layout()
    out = Path(out_svg)
    # fixed metadata keeps the SVG reproducible
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out
