from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from scipy.stats import spearmanr

from vqdrift.core import Batch, Codebook, assign_batch, distortion, measure, nearest_code
from vqdrift.exception import InvalidInput
from vqdrift.harness.config import CodebookInit, ExperimentConfig
from vqdrift.kmeans import init_codebook, lloyd
from vqdrift.streams import DriftProcess, drift_delta, encode, next_batch, sample_base
from vqdrift.transvq.projector import ProjectorConfig, ProjectorParams, init_params, project, train_step
from vqdrift.updaters import RuleKind, UpdateRule, apply_schedules, update_batch

if TYPE_CHECKING:
    from collections.abc import Iterator, Sequence

log = logging.getLogger(__name__)
log.setLevel(os.getenv("VQDRIFT_LOG_HARNESS", "CRITICAL"))

# Sweep distortions this close (relative) count as one value
TIE_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class TraceRecord:
    """The state of a run after one step.

    Step ``0`` is the initial state, before any batch was drawn. Metrics are measured over a full pass of the
    dataset under the drift state of the step.
    """

    step: int
    epoch: int
    state: np.ndarray
    codebook: Codebook
    batch_indices: tuple[int, ...]
    winners: tuple[int, ...]
    distortion_current: float
    distortion_target: float
    utilization: float
    dead_codes: int


def snapshot_steps(total_steps: int, count: int) -> tuple[int, ...]:
    """Return the steps ``⌈i·T/count⌉`` for ``i = 1..count``, or only step ``0`` for an empty run."""
    if total_steps == 0:
        return (0,)
    return tuple(sorted({math.ceil(i * total_steps / count) for i in range(1, count + 1)}))


@dataclass(eq=False)
class TraceLog:
    """Per-step records of a run, together with the process it ran on."""

    config: ExperimentConfig
    process: DriftProcess
    records: list[TraceRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TraceRecord]:
        return iter(self.records)

    def append(self, record: TraceRecord) -> None:
        if self.records and record.step <= self.records[-1].step:
            raise InvalidInput(
                f"trace steps must be strictly increasing, got {record.step} after {self.records[-1].step}"
            )
        self.records.append(record)

    def at(self, step: int) -> TraceRecord:
        # Steps are recorded contiguously from 0
        if not 0 <= step < len(self.records) or self.records[step].step != step:
            raise IndexError(f"no record for step {step}")
        return self.records[step]

    @property
    def final(self) -> TraceRecord:
        return self.records[-1]

    @property
    def total_steps(self) -> int:
        return self.records[-1].step

    @property
    def snapshot_steps(self) -> tuple[int, ...]:
        return snapshot_steps(self.total_steps, self.config.snapshots)

    def snapshots(self) -> list[TraceRecord]:
        return [self.at(step) for step in self.snapshot_steps]

    def batch_points(self, record: TraceRecord) -> np.ndarray:
        """Return the drifted batch of ``record`` as it was presented to the update rule.

        The batch was drawn before the drift step of its own step, so it is encoded with the previous state.
        """
        if not record.batch_indices:
            return np.empty((0, self.process.d))
        return encode(self.process, self.process.base[list(record.batch_indices)], self.at(record.step - 1).state)

    def utilization(self) -> np.ndarray:
        return np.array([record.utilization for record in self.records])

    def distortion(self) -> np.ndarray:
        return np.array([record.distortion_current for record in self.records])

    def distortion_target(self) -> np.ndarray:
        return np.array([record.distortion_target for record in self.records])


def _record(
    step: int,
    epoch: int,
    process: DriftProcess,
    codebook: Codebook,
    batch_indices: Sequence[int] = (),
    winners: Sequence[int] = (),
) -> TraceRecord:
    metrics = measure(process.drifted(), codebook)
    state = process.state
    state.setflags(write=False)
    return TraceRecord(
        step=step,
        epoch=epoch,
        state=state,
        codebook=codebook,
        batch_indices=tuple(int(i) for i in batch_indices),
        winners=tuple(int(w) for w in winners),
        distortion_current=metrics.distortion,
        distortion_target=distortion(process.targets, codebook),
        utilization=metrics.utilization,
        dead_codes=metrics.dead_codes,
    )


def _initial_codebook(config: ExperimentConfig, process: DriftProcess, seed: np.random.SeedSequence) -> Codebook:
    if config.init is CodebookInit.LLOYD:
        return lloyd(process.base, config.k, init=int(seed.generate_state(1)[0])).codebook
    if config.init is CodebookInit.KMEANS_PP:
        return init_codebook(process.base, config.k, "kmeans++", seed=int(seed.generate_state(1)[0]))
    return Codebook(np.random.default_rng(seed).standard_normal((config.k, config.d)))


def _train_projector(
    params: ProjectorParams, base: Codebook, codebook: Codebook, batch: Batch, config: ExperimentConfig
) -> tuple[ProjectorParams, Codebook]:
    for x in batch.points:
        winner, _ = nearest_code(x, codebook)
        params, report = train_step(params, base, x, winner, config.projector_lr, max_grad_norm=config.max_grad_norm)
        codebook = report.codebook
    return params, codebook


def run_experiment(config: ExperimentConfig) -> TraceLog:
    """Run one toy experiment and return its trace.

    Every step draws the next batch of a per-epoch permutation, assigns it to the current codebook, updates the
    codebook with the rule (as scheduled for the current epoch) and then advances the drift state by one step.
    The run is fully determined by ``config``, including its seed.

    With the ``transvq`` rule the initial codebook is the frozen base of a projector that starts as the identity
    map; every sample takes one projector training step and the transformed codebook is what gets assigned and
    measured. A projector that diverges despite gradient clipping raises
    :class:`~vqdrift.exception.DivergenceError`.
    """
    data_seed, code_seed, order_seed, projector_seed = np.random.SeedSequence(config.seed).spawn(4)

    process = sample_base(
        config.n,
        config.process,
        config.noise_scale,
        seed=np.random.default_rng(data_seed),
        d=config.d,
        rate=config.rate,
        offset=config.offset,
        shrink=config.shrink,
    )
    codebook = _initial_codebook(config, process, code_seed)

    params = None
    if config.rule.kind is RuleKind.TRANSVQ:
        base = codebook
        projector = ProjectorConfig(d=config.d, d_model=config.d_model, ratio=config.mlp_ratio)
        params = init_params(projector, np.random.default_rng(projector_seed))
        codebook, _ = project(params, base)

    order_rng = np.random.default_rng(order_seed)
    trace = TraceLog(config, process)
    trace.append(_record(0, 0, process, codebook))

    step = 0
    for epoch in range(config.epochs):
        rule = apply_schedules(config.rule, epoch)
        log.info("Epoch %d: eta=%.6g tau=%.6g two_sigma_sq=%.6g", epoch, rule.eta, rule.tau, rule.two_sigma_sq)

        order = order_rng.permutation(config.n)
        for start in range(0, config.n, config.batch_size):
            step += 1
            batch, targets = next_batch(process, order[start : start + config.batch_size], step)
            winners = assign_batch(batch, codebook).winners
            delta = drift_delta(process, batch, targets)

            if params is not None:
                params, codebook = _train_projector(params, base, codebook, batch, config)
            else:
                codebook = update_batch(rule, codebook, batch, process, delta, targets)

            process.set_state(process.state + delta)
            trace.append(_record(step, epoch, process, codebook, batch.source_indices, winners))

        final = trace.final
        log.info(
            "Epoch %d done: distortion %.6g, target distortion %.6g, utilization %.3f",
            epoch,
            final.distortion_current,
            final.distortion_target,
            final.utilization,
        )

    return trace


@dataclass(frozen=True)
class SweepRow:
    batch_size: int
    samples: int
    final_distortion: float
    final_distortion_target: float
    final_utilization: float
    dead_codes: int


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def correlation(self) -> float:
        """Spearman rank correlation between batch size and final distortion.

        NaN for fewer than two rows or when all distortions agree to within :data:`TIE_RTOL`.
        """
        if len(self.rows) < 2:
            return math.nan

        distortions = np.array([row.final_distortion for row in self.rows])
        if np.ptp(distortions) <= TIE_RTOL * max(1.0, float(np.abs(distortions).max())):
            return math.nan
        return float(spearmanr([row.batch_size for row in self.rows], distortions).statistic)


def batch_size_sweep(
    base_config: ExperimentConfig, batch_sizes: Sequence[int], workers: int | None = None
) -> SweepResult:
    """Run ``base_config`` once per batch size and tabulate the final metrics.

    The number of epochs and the seed are shared, so every run processes the same number of samples drawn from
    the same data. With ``workers`` the runs execute on a thread pool; the table keeps the input order.
    """
    if not batch_sizes:
        raise InvalidInput("batch_sizes must not be empty")
    configs = [base_config.replace(batch_size=b) for b in batch_sizes]

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(run_experiment, configs))
    else:
        traces = [run_experiment(config) for config in configs]

    rows = []
    for config, trace in zip(configs, traces):
        final = trace.final
        rows.append(
            SweepRow(
                batch_size=config.batch_size,
                samples=config.epochs * config.n,
                final_distortion=final.distortion_current,
                final_distortion_target=final.distortion_target,
                final_utilization=final.utilization,
                dead_codes=final.dead_codes,
            )
        )
    return SweepResult(tuple(rows))


@dataclass(frozen=True, eq=False)
class RuleComparison:
    """Traces of several rules run on identical data, codebook initialization and batch order."""

    runs: tuple[tuple[UpdateRule, TraceLog], ...]

    def __iter__(self) -> Iterator[tuple[UpdateRule, TraceLog]]:
        return iter(self.runs)

    @property
    def labels(self) -> list[str]:
        return [rule.label for rule, _ in self.runs]

    def summary(self) -> list[dict[str, float | int | str]]:
        """Return one row per rule with its final and worst metrics."""
        rows = []
        for rule, trace in self.runs:
            rows.append(
                {
                    "rule": rule.label,
                    "final_distortion": trace.final.distortion_current,
                    "final_distortion_target": trace.final.distortion_target,
                    "final_utilization": trace.final.utilization,
                    "min_utilization": float(trace.utilization().min()),
                    "dead_codes": trace.final.dead_codes,
                }
            )
        return rows


def compare_rules(config: ExperimentConfig, rules: Sequence[UpdateRule]) -> RuleComparison:
    """Run ``config`` once per rule; all runs share the seed and therefore the data and batch order."""
    if len(rules) < 2:
        raise InvalidInput("compare_rules needs at least two rules")
    return RuleComparison(tuple((rule, run_experiment(config.replace(rule=rule))) for rule in rules))
