from __future__ import annotations

from vqdrift.harness.checks import CHECKS, CheckOptions, CheckResult, run_checks
from vqdrift.harness.config import (
    CodebookInit,
    ExperimentConfig,
    demo_config,
    dump_config,
    load_config,
    parse_config,
)
from vqdrift.harness.harness import (
    RuleComparison,
    SweepResult,
    SweepRow,
    TraceLog,
    TraceRecord,
    batch_size_sweep,
    compare_rules,
    run_experiment,
)
from vqdrift.harness.trace import write_comparison, write_sweep, write_trace

__all__ = [
    "CHECKS",
    "CheckOptions",
    "CheckResult",
    "CodebookInit",
    "ExperimentConfig",
    "RuleComparison",
    "SweepResult",
    "SweepRow",
    "TraceLog",
    "TraceRecord",
    "batch_size_sweep",
    "compare_rules",
    "demo_config",
    "dump_config",
    "load_config",
    "parse_config",
    "run_checks",
    "run_experiment",
    "write_comparison",
    "write_sweep",
    "write_trace",
]
