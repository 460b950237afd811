"""Snapshot figures of a run.

Every snapshot shows the targets, the base data, the batch of that step and the codebook in one frame that is
fixed across the snapshots of a run, so motion between them is directly comparable.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import matplotlib as mpl
import numpy as np
from matplotlib.figure import Figure

from vqdrift.exception import InvalidInput

if TYPE_CHECKING:
    from vqdrift.harness.harness import TraceLog, TraceRecord

# Fixed salt and no date keep the SVG output byte-stable
_SVG_RC = {"svg.hashsalt": "vqdrift", "svg.fonttype": "none"}
_SVG_METADATA = {"Date": None}

MARGIN = 0.05


@dataclass(frozen=True)
class SnapshotColors:
    target: str = "purple"
    base: str = "green"
    batch: str = "blue"
    codebook: str = "red"


def snapshot_limits(trace: TraceLog) -> tuple[tuple[float, float], tuple[float, float]]:
    """Return the ``(xlim, ylim)`` frame covering every point drawn in any snapshot of ``trace``."""
    process = trace.process
    clouds = [process.base[:, :2], process.targets[:, :2]]
    for record in trace.snapshots():
        clouds.append(record.codebook.codes[:, :2])
        clouds.append(trace.batch_points(record)[:, :2])

    points = np.vstack(clouds)
    lo, hi = points.min(axis=0), points.max(axis=0)
    pad = np.maximum((hi - lo) * MARGIN, 1e-6)
    lo, hi = lo - pad, hi + pad
    return (float(lo[0]), float(hi[0])), (float(lo[1]), float(hi[1]))


def render_snapshot(
    trace: TraceLog,
    record: TraceRecord,
    limits: tuple[tuple[float, float], tuple[float, float]] | None = None,
    colors: SnapshotColors | None = None,
) -> Figure:
    """Draw one snapshot. Only the first two coordinates are plotted."""
    if trace.process.d < 2:
        raise InvalidInput("snapshots need at least two dimensions")

    colors = colors or SnapshotColors()
    limits = limits or snapshot_limits(trace)
    process = trace.process

    fig = Figure(figsize=(4, 4))
    ax = fig.add_subplot()
    ax.scatter(process.targets[:, 0], process.targets[:, 1], s=2, c=colors.target, label="target")
    ax.scatter(process.base[:, 0], process.base[:, 1], s=2, c=colors.base, label="base")

    batch = trace.batch_points(record)
    if len(batch):
        ax.scatter(batch[:, 0], batch[:, 1], s=6, c=colors.batch, label="batch")

    codes = record.codebook.codes
    ax.scatter(codes[:, 0], codes[:, 1], s=40, c=colors.codebook, marker="x", label="codebook")

    ax.set_xlim(*limits[0])
    ax.set_ylim(*limits[1])
    ax.set_title(f"step {record.step}")
    ax.legend(loc="upper left", fontsize=6)
    return fig


def write_snapshots(
    trace: TraceLog, out_dir: Path | str, colors: SnapshotColors | None = None, prefix: str = "snap"
) -> list[Path]:
    """Write ``snap_1.svg`` up to ``snap_<n>.svg`` for the snapshot steps of ``trace``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    limits = snapshot_limits(trace)

    paths = []
    with mpl.rc_context(_SVG_RC):
        for i, record in enumerate(trace.snapshots(), start=1):
            path = out_dir / f"{prefix}_{i}.svg"
            fig = render_snapshot(trace, record, limits, colors)
            fig.savefig(path, format="svg", metadata=_SVG_METADATA)
            paths.append(path)
    return paths
