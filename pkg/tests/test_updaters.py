from __future__ import annotations

import math

import numpy as np
import pytest

from vqdrift.core import Batch, Codebook
from vqdrift.exception import InvalidInput
from vqdrift.streams import (
    DriftKind,
    DriftProcess,
    drift_delta,
    encode,
    encoder_change,
    next_batch,
    sample_base,
)
from vqdrift.updaters import (
    RuleKind,
    UpdateRule,
    apply_schedules,
    delta_e_weighted_step,
    ema_batch_step,
    modified_ste_step,
    nsvq_rbf_step,
    nsvq_softmax_step,
    ntk_exact_step,
    parse_rule_kind,
    rbf_weight,
    softmax_weights,
    update_batch,
    vanilla_full_batch_step,
    vanilla_sa_step,
)


@pytest.mark.parametrize(
    ("value", "expected"),
    [
        pytest.param("vanilla", RuleKind.VANILLA_SA, id="alias"),
        pytest.param("nsvq-softmax", RuleKind.NSVQ_SOFTMAX, id="dashed"),
        pytest.param("delta_e_weighted", RuleKind.DELTA_E_WEIGHTED, id="value"),
        pytest.param(RuleKind.EMA, RuleKind.EMA, id="kind"),
    ],
)
def test_parse_rule_kind(value: str | RuleKind, expected: RuleKind) -> None:
    assert parse_rule_kind(value) is expected


def test_parse_rule_kind_unknown() -> None:
    with pytest.raises(InvalidInput, match="unknown update rule"):
        parse_rule_kind("adam")


@pytest.mark.parametrize(
    "changes",
    [
        pytest.param({"eta": 0.0}, id="eta-zero"),
        pytest.param({"eta": 1.5}, id="eta-large"),
        pytest.param({"alpha": 0.0}, id="alpha"),
        pytest.param({"tau": -1.0}, id="tau"),
        pytest.param({"two_sigma_sq": 0.0}, id="sigma"),
        pytest.param({"d_eff": 0}, id="d-eff"),
        pytest.param({"lr_decay": 0.0}, id="decay"),
    ],
)
def test_update_rule_invalid(changes: dict) -> None:
    with pytest.raises(InvalidInput):
        UpdateRule(**changes)


def test_update_rule_dict() -> None:
    rule = UpdateRule.from_dict({"kind": "nsvq-rbf", "two_sigma_sq": 2.0})
    assert rule.kind is RuleKind.NSVQ_RBF
    assert rule.to_dict()["kind"] == "nsvq_rbf"
    assert UpdateRule.from_dict(rule.to_dict()) == rule

    with pytest.raises(InvalidInput, match="unknown rule fields"):
        UpdateRule.from_dict({"momentum": 0.9})


def test_vanilla_sa_step() -> None:
    codebook = Codebook([[0.0, 0.0], [4.0, 0.0]])
    report = vanilla_sa_step(codebook, np.array([1.0, 0.0]), eta=0.5)

    assert report.winner == 0
    assert np.array_equal(report.codebook.codes, [[0.5, 0.0], [4.0, 0.0]])
    assert list(report.moved) == [True, False]
    assert report.weights is None


def test_vanilla_sa_step_eta_one_and_on_code(square_codebook: Codebook) -> None:
    report = vanilla_sa_step(square_codebook, np.array([0.2, 0.3]), eta=1.0)
    assert np.array_equal(report.codebook[0], [0.2, 0.3])

    report = vanilla_sa_step(square_codebook, np.array([1.0, 1.0]))
    assert not report.moved.any()


def test_vanilla_sa_step_invalid_eta(square_codebook: Codebook) -> None:
    with pytest.raises(InvalidInput):
        vanilla_sa_step(square_codebook, np.zeros(2), eta=0.0)


def test_vanilla_full_batch_step_on_single_cell() -> None:
    points = np.array([[0.0, 0.0], [2.0, 0.0]])
    report = vanilla_full_batch_step(Codebook([[0.0, 1.0], [50.0, 50.0]]), points, eta=0.5)

    assert np.allclose(report.displacements[0], [0.5, -0.5])
    assert np.array_equal(report.displacements[1], [0.0, 0.0])


def test_ema_batch_step() -> None:
    codebook = Codebook([[0.0, 0.0], [10.0, 10.0]])
    batch = Batch([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]], range(3))
    report = ema_batch_step(codebook, batch, alpha=0.3)

    assert np.allclose(report.codebook[0], [0.3 * 2.0, 0.0])
    assert np.array_equal(report.codebook[1], [10.0, 10.0])
    assert not report.moved[1]

    full = ema_batch_step(codebook, batch, alpha=1.0)
    assert np.allclose(full.codebook[0], [2.0, 0.0])


def test_nsvq_softmax_single_code_is_vanilla() -> None:
    codebook = Codebook([[1.0, 1.0]])
    x = np.array([3.0, -1.0])
    softmax = nsvq_softmax_step(codebook, x, lr=0.2, tau=1.0)
    vanilla = vanilla_sa_step(codebook, x, eta=0.2)

    assert np.array_equal(softmax.codebook.codes, vanilla.codebook.codes)


def test_nsvq_softmax_weights_by_hand() -> None:
    # Distances from the winner: 0, 1 and 4
    codebook = Codebook([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    x = np.array([-0.5, 0.0])
    report = nsvq_softmax_step(codebook, x, lr=0.1, tau=1.0)

    norm = 1.0 + math.exp(-1.0) + math.exp(-4.0)
    assert report.winner == 0
    assert report.weights[1] == pytest.approx(math.exp(-1.0) / norm)
    assert report.weights[2] == pytest.approx(math.exp(-4.0) / norm)
    assert np.allclose(report.displacements[0], 0.1 * (x - codebook[0]))
    assert np.allclose(report.displacements[1], 0.1 * math.exp(-1.0) / norm * (x - codebook[1]))
    assert np.allclose(report.displacements[2], 0.1 * math.exp(-4.0) / norm * (x - codebook[2]))


def test_nsvq_softmax_default_temperature_pulls_every_code(rng: np.random.Generator) -> None:
    codebook = Codebook(rng.standard_normal((16, 2)))
    report = nsvq_softmax_step(codebook, np.array([10.0, 10.0]), lr=0.1)

    others = np.arange(16) != report.winner
    assert np.all(np.abs(report.weights[others] * 16 - 1.0) < 0.1)
    assert report.moved.all()


def test_nsvq_softmax_symmetric_weights() -> None:
    codebook = Codebook([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
    report = nsvq_softmax_step(codebook, np.array([0.0, 0.1]), lr=0.1, tau=2.0)
    assert report.weights[1] == report.weights[2]


def test_nsvq_rbf_step_by_hand() -> None:
    codebook = Codebook([[-1.0], [2.0]])
    report = nsvq_rbf_step(codebook, np.array([0.0]), two_sigma_sq=1.0, eta=1.0)

    assert report.winner == 0
    assert report.displacements[0][0] == 1.0
    assert report.displacements[1][0] == pytest.approx(-2.0 * math.exp(-4.0))


def test_nsvq_rbf_step_limits() -> None:
    codebook = Codebook([[0.0, 0.0], [0.0, 0.0], [1e6, 0.0]])
    report = nsvq_rbf_step(codebook, np.array([0.0, 0.0]), two_sigma_sq=1.0, eta=0.5)

    # The second code ties with the winner: weight one but no displacement
    assert report.weights[1] == 1.0
    assert np.array_equal(report.displacements[1], [0.0, 0.0])
    # A far code keeps the smallest positive weight instead of underflowing to zero
    assert report.weights[2] == np.finfo(np.float64).tiny
    assert np.array_equal(report.codebook[2], [1e6, 0.0])


def test_kernel_weights_never_underflow() -> None:
    sq_dist = np.array([0.0, 1.0, 1e4, 1e9])

    for weights in (rbf_weight(sq_dist, 1.0), softmax_weights(sq_dist, 1.0)):
        assert np.all(weights > 0.0)
        assert np.all(weights <= 1.0)
    assert rbf_weight(sq_dist, 1.0)[0] == 1.0


def test_delta_e_weighted_step() -> None:
    codebook = Codebook([[0.0, 0.0], [1.0, 1.0], [5.0, 5.0]])
    x = np.array([0.1, 0.0])

    still = delta_e_weighted_step(codebook, x, np.zeros(2), two_sigma_sq=1.0, eta=0.5)
    assert list(still.moved) == [True, False, False]

    report = delta_e_weighted_step(codebook, np.array([0.0, 0.0]), np.array([1.0, 0.0]), two_sigma_sq=2.0)
    assert report.weights[1] == pytest.approx(math.exp(-1.0))
    assert np.allclose(report.displacements[1], [math.exp(-1.0), 0.0])


def test_delta_e_weighted_step_coinciding_codes() -> None:
    codebook = Codebook([[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
    e_step = np.array([0.25, -0.5])
    report = delta_e_weighted_step(codebook, np.zeros(2), e_step, two_sigma_sq=1.0)

    assert np.array_equal(report.displacements[1], e_step)
    assert np.array_equal(report.displacements[2], e_step)


@pytest.mark.parametrize(
    ("e_x", "enc_grad", "expected"),
    [
        pytest.param([1.0, 0.0], [0.0, 5.0], [1.0, 0.5], id="both-terms"),
        pytest.param([0.0, 0.0], [0.0, 5.0], [0.0, 0.5], id="encoder-term"),
        pytest.param([1.0, 0.0], [0.0, 0.0], [1.0, 0.0], id="embedding-term"),
    ],
)
def test_modified_ste_step(e_x: list[float], enc_grad: list[float], expected: list[float]) -> None:
    codebook = Codebook([[0.0, 0.0], [10.0, 10.0]])
    report = modified_ste_step(codebook, np.array(e_x), np.array(enc_grad), eta=1.0, lam=0.1, d_eff=2)

    assert np.allclose(report.displacements[0], expected)
    assert not report.moved[1]


def test_ntk_exact_step_translation(rng: np.random.Generator) -> None:
    process = sample_base(20, DriftKind.TRANSLATION, seed=0)
    codebook = Codebook(rng.standard_normal((6, 2)))
    delta = np.array([0.3, -0.1])
    report = ntk_exact_step(codebook, process, np.zeros(2), delta)

    others = np.arange(6) != report.winner
    assert np.array_equal(report.displacements[others], np.tile(delta, (5, 1)))

    still = ntk_exact_step(codebook, process, np.zeros(2), np.zeros(2))
    assert list(still.moved) == [i == still.winner for i in range(6)]


def test_ntk_exact_step_split() -> None:
    process = sample_base(20, DriftKind.SPLIT, seed=0)
    codebook = Codebook([[5.0, 5.0], [-1.0, 2.0]])
    report = ntk_exact_step(codebook, process, np.array([5.0, 5.0]), np.array([0.3, 0.3]))

    assert report.winner == 0
    assert np.allclose(report.displacements[1], [-0.3, 0.3])


@pytest.mark.parametrize("kind", list(DriftKind))
def test_ntk_exact_step_matches_true_encoder_change(kind: DriftKind) -> None:
    rng = np.random.default_rng(11)
    process = sample_base(20, kind, seed=rng)
    codebook = Codebook(rng.standard_normal((8, 2)))
    delta = 0.1 * rng.standard_normal(process.state_size)

    report = ntk_exact_step(codebook, process, process.base[0], delta)
    others = np.arange(8) != report.winner

    true_change = encode(process, codebook.codes, process.state + delta) - encode(process, codebook.codes)
    assert np.allclose(report.displacements[others], true_change[others], atol=1e-12)


def test_rbf_propagation_approaches_exact_translation(rng: np.random.Generator) -> None:
    process = sample_base(20, DriftKind.TRANSLATION, seed=0)
    codebook = Codebook(rng.standard_normal((8, 2)))
    x = process.base[0]
    delta = np.array([0.5, 0.5])
    exact = ntk_exact_step(codebook, process, x, delta)

    errors = []
    for two_sigma_sq in (0.5, 5.0, 50.0, 5000.0):
        approx = delta_e_weighted_step(codebook, x, encoder_change(process, x, delta), two_sigma_sq)
        errors.append(np.abs(approx.displacements - exact.displacements).max())
    assert errors == sorted(errors, reverse=True)
    assert errors[-1] < 1e-2


def test_kernel_weight_properties(rng: np.random.Generator) -> None:
    bandwidth = rng.uniform(0.1, 10.0, 10_000)
    near = rng.uniform(1e-6, 20.0, 10_000) * bandwidth
    far = near + rng.uniform(1e-6, 20.0, 10_000) * bandwidth

    assert np.all(rbf_weight(np.zeros(10_000), bandwidth) == 1.0)
    for weights in (rbf_weight(near, bandwidth), rbf_weight(far, bandwidth)):
        assert np.all((weights > 0.0) & (weights < 1.0))
    assert np.all(rbf_weight(far, bandwidth) < rbf_weight(near, bandwidth))

    dists = np.sort(rng.uniform(0.0, 20.0, 50))
    softmax = softmax_weights(dists, 3.0)
    assert softmax.sum() == pytest.approx(1.0)
    assert np.all(np.diff(softmax) <= 0.0)


@pytest.mark.parametrize(
    ("epoch", "expected"),
    [
        pytest.param(0, (1.0, 1.0, 1.0), id="epoch-0"),
        pytest.param(2, (0.81, 0.25, 0.81), id="epoch-2"),
        pytest.param(3, (0.729, 0.125, 0.729), id="epoch-3"),
    ],
)
def test_apply_schedules(epoch: int, expected: tuple[float, float, float]) -> None:
    rule = apply_schedules(UpdateRule(eta=1.0, tau=1.0, two_sigma_sq=1.0), epoch)
    assert (rule.eta, rule.tau, rule.two_sigma_sq) == pytest.approx(expected)
    assert rule.alpha == UpdateRule().alpha


def test_apply_schedules_stays_positive() -> None:
    rule = apply_schedules(UpdateRule(), 10_000)
    assert rule.eta > 0.0
    assert rule.tau > 0.0
    assert rule.two_sigma_sq > 0.0

    with pytest.raises(InvalidInput):
        apply_schedules(UpdateRule(), -1)


def test_locality_of_winner_take_all_rules(rng: np.random.Generator) -> None:
    codebook = Codebook(np.vstack([rng.standard_normal((4, 2)), [[100.0, 100.0]]]))
    batch = Batch(rng.standard_normal((16, 2)), range(16))

    assert not ema_batch_step(codebook, batch).moved[4]
    for x in batch.points:
        assert not vanilla_sa_step(codebook, x).moved[4]


def _drift_batch(process: DriftProcess) -> tuple[Batch, np.ndarray, np.ndarray]:
    batch, targets = next_batch(process, range(8))
    return batch, targets, drift_delta(process, batch, targets)


@pytest.mark.parametrize("kind", [kind for kind in RuleKind if kind is not RuleKind.TRANSVQ])
def test_update_batch_all_rules(kind: RuleKind, translation_process: DriftProcess) -> None:
    codebook = Codebook(np.random.default_rng(0).standard_normal((4, 2)))
    batch, targets, delta = _drift_batch(translation_process)

    updated = update_batch(UpdateRule(kind=kind), codebook, batch, translation_process, delta, targets)
    assert updated.codes.shape == (4, 2)
    assert not np.array_equal(updated.codes, codebook.codes)


def test_update_batch_vanilla_is_sequential(translation_process: DriftProcess) -> None:
    codebook = Codebook(np.random.default_rng(0).standard_normal((4, 2)))
    batch, targets, delta = _drift_batch(translation_process)

    expected = codebook
    for x in batch.points:
        expected = vanilla_sa_step(expected, x, 0.1).codebook

    updated = update_batch(UpdateRule(kind=RuleKind.VANILLA_SA, eta=0.1), codebook, batch)
    assert np.array_equal(updated.codes, expected.codes)


def test_update_batch_requires_drift(translation_process: DriftProcess) -> None:
    codebook = Codebook(np.zeros((2, 2)) + [[0.0], [1.0]])
    batch, _, _ = _drift_batch(translation_process)

    with pytest.raises(InvalidInput):
        update_batch(UpdateRule(kind=RuleKind.NTK_EXACT), codebook, batch)
    with pytest.raises(InvalidInput):
        update_batch(UpdateRule(kind=RuleKind.MODIFIED_STE), codebook, batch, translation_process)
    with pytest.raises(InvalidInput):
        update_batch(UpdateRule(kind=RuleKind.TRANSVQ), codebook, batch)
