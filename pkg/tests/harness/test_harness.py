from __future__ import annotations

import statistics

import numpy as np
import pytest

from vqdrift.core import Codebook, distortion
from vqdrift.exception import DivergenceError, InvalidInput
from vqdrift.harness.config import CodebookInit, ExperimentConfig, demo_config, sweep_config
from vqdrift.harness.harness import (
    SweepResult,
    SweepRow,
    TraceLog,
    TraceRecord,
    batch_size_sweep,
    compare_rules,
    run_experiment,
    snapshot_steps,
)
from vqdrift.harness.trace import COMPARISON_COLUMNS, trace_csv
from vqdrift.kmeans import lloyd
from vqdrift.updaters import RuleKind, UpdateRule


@pytest.fixture
def small_config() -> ExperimentConfig:
    return ExperimentConfig(n=200, k=8, batch_size=20, epochs=2, rule=UpdateRule(kind=RuleKind.EMA))


@pytest.mark.parametrize(
    ("total", "count", "expected"),
    [
        pytest.param(470, 5, (94, 188, 282, 376, 470), id="demo"),
        pytest.param(3, 5, (1, 2, 3), id="fewer-steps"),
        pytest.param(0, 5, (0,), id="empty"),
    ],
)
def test_snapshot_steps(total: int, count: int, expected: tuple[int, ...]) -> None:
    assert snapshot_steps(total, count) == expected


def test_zero_epochs(small_config: ExperimentConfig) -> None:
    trace = run_experiment(small_config.replace(epochs=0))

    assert len(trace) == 1
    assert trace.total_steps == 0
    assert [record.step for record in trace.snapshots()] == [0]
    assert trace.final.batch_indices == ()


def test_trace_structure(small_config: ExperimentConfig) -> None:
    trace = run_experiment(small_config)

    assert small_config.total_steps == 20
    assert [record.step for record in trace] == list(range(21))
    assert [record.epoch for record in trace][1:] == [0] * 10 + [1] * 10
    assert trace.snapshot_steps == (4, 8, 12, 16, 20)

    # Every epoch visits each point once
    seen = sorted(i for record in trace.records[1:11] for i in record.batch_indices)
    assert seen == list(range(200))

    for record in trace.records[1:]:
        assert len(record.winners) == len(record.batch_indices) == 20
        assert record.utilization == 1.0 - record.dead_codes / 8


def test_trace_metrics(small_config: ExperimentConfig) -> None:
    trace = run_experiment(small_config)
    record = trace.at(7)

    drifted = trace.process.base + record.state
    assert record.distortion_current == pytest.approx(distortion(drifted, record.codebook), rel=1e-12)
    assert record.distortion_target == distortion(trace.process.targets, record.codebook)
    presented = trace.process.base + trace.at(6).state
    assert np.array_equal(trace.batch_points(record), presented[list(record.batch_indices)])

    assert np.array_equal(trace.utilization(), [r.utilization for r in trace])
    assert trace.distortion().shape == trace.distortion_target().shape == (21,)


def test_trace_log_append_and_lookup(small_config: ExperimentConfig) -> None:
    trace = run_experiment(small_config.replace(epochs=0))
    record = trace.final

    with pytest.raises(InvalidInput, match="strictly increasing"):
        trace.append(record)
    with pytest.raises(IndexError):
        trace.at(1)

    log = TraceLog(small_config, trace.process)
    log.append(TraceRecord(**{**record.__dict__, "step": 3}))
    assert log.final.step == 3
    with pytest.raises(IndexError):
        log.at(3)


def test_determinism(small_config: ExperimentConfig) -> None:
    config = small_config.replace(rule=UpdateRule(kind=RuleKind.NSVQ_SOFTMAX))
    first = run_experiment(config)
    second = run_experiment(config)

    assert trace_csv(first) == trace_csv(second)
    for step in first.snapshot_steps:
        assert np.array_equal(first.at(step).codebook.codes, second.at(step).codebook.codes)
        assert np.array_equal(first.at(step).state, second.at(step).state)
        assert first.at(step).winners == second.at(step).winners


def test_seed_changes_run(small_config: ExperimentConfig) -> None:
    first = run_experiment(small_config)
    second = run_experiment(small_config.replace(seed=1))
    assert not np.array_equal(first.final.codebook.codes, second.final.codebook.codes)


@pytest.mark.parametrize("init", list(CodebookInit))
def test_codebook_init(small_config: ExperimentConfig, init: CodebookInit) -> None:
    trace = run_experiment(small_config.replace(init=init, epochs=0))
    assert trace.final.codebook.codes.shape == (8, 2)

    if init is CodebookInit.LLOYD:
        expected = lloyd(trace.process.base, 8, init=trace.final.codebook).codebook
        assert np.allclose(trace.final.codebook.codes, expected.codes)


def test_stationary_vanilla_from_lloyd() -> None:
    config = demo_config(
        "translation",
        rate=0.0,
        init=CodebookInit.LLOYD,
        epochs=3,
        rule=UpdateRule(kind=RuleKind.VANILLA_SA, eta=0.01),
    )
    trace = run_experiment(config)

    initial = trace.at(0).distortion_current
    assert abs(trace.final.distortion_current - initial) / initial < 0.01
    assert np.array_equal(trace.final.state, [0.0, 0.0])


def test_ema_full_batch_is_lloyd() -> None:
    config = ExperimentConfig(
        n=300, k=8, batch_size=300, epochs=6, rate=0.0, rule=UpdateRule(kind=RuleKind.EMA, alpha=1.0)
    )
    history = run_experiment(config).distortion()
    assert np.all(np.diff(history) <= 1e-12)


def test_dead_codes_and_rescue() -> None:
    ema = run_experiment(demo_config("translation", rule=UpdateRule(kind=RuleKind.EMA)))
    nsvq = run_experiment(demo_config("translation", rule=UpdateRule(kind=RuleKind.NSVQ_SOFTMAX)))

    assert ema.final.utilization == 0.125
    assert ema.final.dead_codes == 14
    assert nsvq.final.utilization == 1.0
    assert nsvq.final.distortion_target < ema.final.distortion_target


def test_transvq_run() -> None:
    config = ExperimentConfig(
        n=100, k=4, batch_size=25, epochs=1, d_model=8, projector_lr=1e-2, rule=UpdateRule(kind=RuleKind.TRANSVQ)
    )
    trace = run_experiment(config)

    assert len(trace) == 5
    initial, final = trace.at(0).codebook, trace.final.codebook
    assert isinstance(final, Codebook)
    # Every transformed code moves, not only the winners
    assert np.all(np.any(initial.codes != final.codes, axis=1))


def test_transvq_demo_stays_finite() -> None:
    trace = run_experiment(demo_config("translation", epochs=2, rule=UpdateRule(kind=RuleKind.TRANSVQ)))

    assert len(trace) == 95
    assert all(np.isfinite(record.codebook.codes).all() for record in trace)
    assert trace.final.distortion_target < trace.at(0).distortion_target


def test_transvq_divergence() -> None:
    config = demo_config("translation", epochs=1, projector_lr=1e100, rule=UpdateRule(kind=RuleKind.TRANSVQ))
    with pytest.raises(DivergenceError):
        run_experiment(config)


def test_batch_size_sweep(small_config: ExperimentConfig) -> None:
    result = batch_size_sweep(small_config, [10, 20, 50])

    assert [row.batch_size for row in result.rows] == [10, 20, 50]
    assert {row.samples for row in result.rows} == {400}

    single = batch_size_sweep(small_config, [20]).rows[0]
    trace = run_experiment(small_config)
    assert single.final_distortion == trace.final.distortion_current
    assert single.final_utilization == trace.final.utilization
    assert np.isnan(batch_size_sweep(small_config, [20]).correlation)

    with pytest.raises(InvalidInput):
        batch_size_sweep(small_config, [])


def test_batch_size_sweep_threads_match_sequential(small_config: ExperimentConfig) -> None:
    sequential = batch_size_sweep(small_config, [5, 10, 40])
    threaded = batch_size_sweep(small_config, [5, 10, 40], workers=3)
    assert threaded.rows == sequential.rows


def _sweep_row(batch_size: int, final_distortion: float) -> SweepRow:
    return SweepRow(batch_size, 100, final_distortion, final_distortion, 1.0, 0)


def test_sweep_correlation_ties() -> None:
    assert np.isnan(SweepResult((_sweep_row(1, 1.0), _sweep_row(4, 1.0 + 1e-15))).correlation)
    assert np.isnan(SweepResult((_sweep_row(1, 1e-20), _sweep_row(4, 2e-20))).correlation)

    rows = (_sweep_row(1, 3.0), _sweep_row(4, 2.0), _sweep_row(16, 1.0))
    assert SweepResult(rows).correlation == pytest.approx(-1.0)


def test_larger_batches_reduce_distortion() -> None:
    correlations = []
    for seed in range(10):
        config = sweep_config(seed=seed, rule=UpdateRule(kind=RuleKind.VANILLA_SA))
        assert config.epochs * config.n == 1200
        correlations.append(batch_size_sweep(config, [1, 4, 16, 64], workers=4).correlation)

    assert statistics.median(correlations) <= -0.8


def test_compare_rules_same_rule_twice(small_config: ExperimentConfig) -> None:
    rule = UpdateRule(kind=RuleKind.VANILLA_SA)
    comparison = compare_rules(small_config, [rule, rule])

    (_, first), (_, second) = comparison.runs
    assert np.array_equal(first.distortion(), second.distortion())
    assert np.array_equal(first.utilization(), second.utilization())

    with pytest.raises(InvalidInput):
        compare_rules(small_config, [rule])


def test_compare_rules_ntk_exact_keeps_every_code() -> None:
    config = demo_config("translation", init=CodebookInit.LLOYD, epochs=2)
    comparison = compare_rules(config, [UpdateRule(kind=RuleKind.VANILLA_SA), UpdateRule(kind=RuleKind.NTK_EXACT)])

    assert comparison.labels == ["vanilla_sa", "ntk_exact"]
    _, ntk_trace = comparison.runs[1]
    assert ntk_trace.utilization().min() == 1.0


def test_compare_rules_split_schema(small_config: ExperimentConfig) -> None:
    config = small_config.replace(process="split")
    comparison = compare_rules(
        config, [UpdateRule(kind=RuleKind.NSVQ_RBF), UpdateRule(kind=RuleKind.DELTA_E_WEIGHTED)]
    )

    rows = comparison.summary()
    assert [row["rule"] for row in rows] == ["nsvq_rbf", "delta_e_weighted"]
    assert rows[0].keys() == rows[1].keys()
    assert tuple(rows[0]) == COMPARISON_COLUMNS
    for row in rows:
        assert 0.0 < row["min_utilization"] <= 1.0
