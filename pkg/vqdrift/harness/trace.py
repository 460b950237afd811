from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import TYPE_CHECKING, TextIO

if TYPE_CHECKING:
    from collections.abc import Iterable

    from vqdrift.harness.harness import RuleComparison, SweepResult, TraceLog

TRACE_COLUMNS = (
    "step",
    "rule",
    "process",
    "B",
    "theta_or_A",
    "distortion_current",
    "distortion_target",
    "utilization",
    "dead_codes",
)

SWEEP_COLUMNS = (
    "B",
    "samples",
    "final_distortion",
    "final_distortion_target",
    "final_utilization",
    "dead_codes",
)

COMPARISON_COLUMNS = (
    "rule",
    "final_distortion",
    "final_distortion_target",
    "final_utilization",
    "min_utilization",
    "dead_codes",
)

STATE_SEPARATOR = ";"


def _float(value: float) -> str:
    # repr is the shortest string that round-trips
    return repr(float(value))


def _write(rows: Iterable[Iterable[str]], columns: tuple[str, ...], fh: TextIO | Path | str) -> None:
    if isinstance(fh, (str, Path)):
        with Path(fh).open("w", newline="") as out:
            _write(rows, columns, out)
        return

    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)


def trace_rows(trace: TraceLog) -> Iterable[list[str]]:
    config = trace.config
    for record in trace:
        yield [
            str(record.step),
            config.rule.label,
            config.process.value,
            str(config.batch_size),
            STATE_SEPARATOR.join(_float(v) for v in record.state),
            _float(record.distortion_current),
            _float(record.distortion_target),
            _float(record.utilization),
            str(record.dead_codes),
        ]


def write_trace(trace: TraceLog, fh: TextIO | Path | str) -> None:
    """Write one row per trace record; ``theta_or_A`` is the flattened drift state joined by ``;``."""
    _write(trace_rows(trace), TRACE_COLUMNS, fh)


def write_sweep(result: SweepResult, fh: TextIO | Path | str) -> None:
    rows = (
        [
            str(row.batch_size),
            str(row.samples),
            _float(row.final_distortion),
            _float(row.final_distortion_target),
            _float(row.final_utilization),
            str(row.dead_codes),
        ]
        for row in result.rows
    )
    _write(rows, SWEEP_COLUMNS, fh)


def write_comparison(comparison: RuleComparison, fh: TextIO | Path | str) -> None:
    rows = (
        [str(row[name]) if isinstance(row[name], (str, int)) else _float(row[name]) for name in COMPARISON_COLUMNS]
        for row in comparison.summary()
    )
    _write(rows, COMPARISON_COLUMNS, fh)


def trace_csv(trace: TraceLog) -> str:
    """Return the trace CSV as a string."""
    buf = io.StringIO()
    write_trace(trace, buf)
    return buf.getvalue()
