"""Codebook update rules.

Every single-sample rule takes the current :class:`~vqdrift.core.Codebook` and returns a :class:`StepReport`
holding the updated codebook and the displacement of every code. Weights are always computed from the codebook
as it was before the step.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

import numpy as np

from vqdrift.core import Batch, Codebook, assign_batch, cell_means, nearest_code
from vqdrift.exception import InvalidInput
from vqdrift.streams import encoder_change

if TYPE_CHECKING:
    from vqdrift.streams import DriftProcess

DEFAULT_ETA = 0.1
DEFAULT_ALPHA = 0.3
# On squared code distances; well above the squared drift offset of the toy demos
DEFAULT_TAU = 1000.0
DEFAULT_TWO_SIGMA_SQ = 1.0
DEFAULT_LAMBDA = 0.1

LR_DECAY = 0.9
TAU_DECAY = 0.5
SIGMA_DECAY = 0.9

# Schedules and kernel weights never go below this
_FLOOR = np.finfo(np.float64).tiny


class RuleKind(enum.Enum):
    VANILLA_SA = "vanilla_sa"
    EMA = "ema"
    NSVQ_SOFTMAX = "nsvq_softmax"
    NSVQ_RBF = "nsvq_rbf"
    DELTA_E_WEIGHTED = "delta_e_weighted"
    MODIFIED_STE = "modified_ste"
    NTK_EXACT = "ntk_exact"
    TRANSVQ = "transvq"


RULE_ALIASES = {
    "vanilla": RuleKind.VANILLA_SA,
    "vanilla-sa": RuleKind.VANILLA_SA,
    "ema": RuleKind.EMA,
    "nsvq": RuleKind.NSVQ_SOFTMAX,
    "nsvq-softmax": RuleKind.NSVQ_SOFTMAX,
    "nsvq-rbf": RuleKind.NSVQ_RBF,
    "delta-e": RuleKind.DELTA_E_WEIGHTED,
    "delta-e-weighted": RuleKind.DELTA_E_WEIGHTED,
    "modified-ste": RuleKind.MODIFIED_STE,
    "ntk-exact": RuleKind.NTK_EXACT,
    "transvq": RuleKind.TRANSVQ,
}


def parse_rule_kind(value: RuleKind | str) -> RuleKind:
    """Resolve a rule kind from its value (``nsvq_softmax``) or command line alias (``nsvq-softmax``)."""
    if isinstance(value, RuleKind):
        return value
    if value in RULE_ALIASES:
        return RULE_ALIASES[value]
    try:
        return RuleKind(value)
    except ValueError:
        raise InvalidInput(f"unknown update rule: {value!r}")


@dataclass(frozen=True)
class UpdateRule:
    """A codebook update strategy with its hyper-parameters and per-epoch decay factors.

    Args:
        kind: The update algorithm.
        eta: Step size (``lr``) of the sample-wise rules.
        alpha: EMA mixing factor.
        tau: Softmax temperature of ``nsvq_softmax``.
        two_sigma_sq: RBF bandwidth ``2σ²`` of ``nsvq_rbf`` and ``delta_e_weighted``.
        lam: Encoder step size ``λ`` of ``modified_ste``.
        d_eff: Effective dimension of the ``2/d`` factor of ``modified_ste``; ``None`` uses the batch size.
        lr_decay: Per-epoch factor applied to ``eta``.
        tau_decay: Per-epoch factor applied to ``tau``.
        sigma_decay: Per-epoch factor applied to ``two_sigma_sq``.
    """

    kind: RuleKind = RuleKind.VANILLA_SA
    eta: float = DEFAULT_ETA
    alpha: float = DEFAULT_ALPHA
    tau: float = DEFAULT_TAU
    two_sigma_sq: float = DEFAULT_TWO_SIGMA_SQ
    lam: float = DEFAULT_LAMBDA
    d_eff: int | None = None
    lr_decay: float = LR_DECAY
    tau_decay: float = TAU_DECAY
    sigma_decay: float = SIGMA_DECAY

    def __post_init__(self):
        object.__setattr__(self, "kind", parse_rule_kind(self.kind))

        if not 0.0 < self.eta <= 1.0:
            raise InvalidInput(f"eta must be in (0, 1], got {self.eta}")
        if not 0.0 < self.alpha <= 1.0:
            raise InvalidInput(f"alpha must be in (0, 1], got {self.alpha}")
        if self.tau <= 0.0:
            raise InvalidInput("tau must be positive")
        if self.two_sigma_sq <= 0.0:
            raise InvalidInput("two_sigma_sq must be positive")
        if self.lam < 0.0:
            raise InvalidInput("lam must be non-negative")
        if self.d_eff is not None and self.d_eff < 1:
            raise InvalidInput("d_eff must be at least 1")
        for name in ("lr_decay", "tau_decay", "sigma_decay"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise InvalidInput(f"{name} must be in (0, 1]")

    @property
    def label(self) -> str:
        return self.kind.value

    def replace(self, **changes: Any) -> UpdateRule:
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, values: dict[str, Any]) -> UpdateRule:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - names
        if unknown:
            raise InvalidInput(f"unknown rule fields: {', '.join(sorted(unknown))}")
        return cls(**values)

    def to_dict(self) -> dict[str, Any]:
        values = dataclasses.asdict(self)
        values["kind"] = self.kind.value
        return values


@dataclass(frozen=True, eq=False)
class StepReport:
    """Result of one update step.

    ``weights`` holds the factor applied to every code: ``1`` for the winner and the kernel weight for the
    non-winners. It is ``None`` for rules that never move non-winners.
    """

    codebook: Codebook
    winner: int | None
    displacements: np.ndarray
    weights: np.ndarray | None = None
    loss: float | None = None

    @property
    def moved(self) -> np.ndarray:
        """Boolean mask of the codes with a nonzero displacement."""
        return np.any(self.displacements != 0.0, axis=1)


def _check_unit(name: str, value: float) -> None:
    if not 0.0 < value <= 1.0:
        raise InvalidInput(f"{name} must be in (0, 1], got {value}")


def _check_positive(name: str, value: float | np.ndarray) -> None:
    if not np.all(np.asarray(value) > 0.0):
        raise InvalidInput(f"{name} must be positive, got {value}")


def _report(
    codebook: Codebook, winner: int | None, disp: np.ndarray, weights: np.ndarray | None = None
) -> StepReport:
    return StepReport(codebook.replace(codebook.codes + disp), winner, disp, weights)


def rbf_weight(sq_dist: np.ndarray | float, two_sigma_sq: float | np.ndarray) -> np.ndarray:
    """Gaussian kernel weight ``exp(-‖·‖² / 2σ²)`` of a squared distance.

    Weights that would underflow to zero are clamped to the smallest positive double, so every weight lies in
    ``(0, 1]``.
    """
    _check_positive("two_sigma_sq", two_sigma_sq)
    return np.maximum(np.exp(-np.asarray(sq_dist, dtype=np.float64) / two_sigma_sq), _FLOOR)


def softmax_weights(sq_dist: np.ndarray, tau: float) -> np.ndarray:
    """Softmax of ``-sq_dist / tau``, normalized over the given entries and clamped like :func:`rbf_weight`."""
    _check_positive("tau", tau)
    logits = -np.asarray(sq_dist, dtype=np.float64) / tau
    weights = np.exp(logits - logits.max())
    return np.maximum(weights / weights.sum(), _FLOOR)


def vanilla_sa_step(codebook: Codebook, x: np.ndarray, eta: float = DEFAULT_ETA) -> StepReport:
    """Winner-take-all online step: only the nearest code moves, by ``eta · (x - c_w)``."""
    _check_unit("eta", eta)
    x = np.asarray(x, dtype=np.float64)
    w, _ = nearest_code(x, codebook)

    disp = np.zeros_like(codebook.codes)
    disp[w] = eta * (x - codebook.codes[w])
    return _report(codebook, w, disp)


def vanilla_full_batch_step(codebook: Codebook, points: np.ndarray, eta: float = DEFAULT_ETA) -> StepReport:
    """Expected winner-take-all update over a full pass of ``points``.

    Code ``k`` moves by ``eta · (1/N) · Σ_{x ∈ V_k} (x - c_k)``, the mean of the online displacements. At a Lloyd
    fixed point every displacement is zero.
    """
    _check_unit("eta", eta)
    points = np.asarray(points, dtype=np.float64)
    winners = assign_batch(Batch(points, range(points.shape[0])), codebook).winners
    means, counts = cell_means(points, winners, codebook.k)

    used = counts > 0
    disp = np.zeros_like(codebook.codes)
    disp[used] = eta * (counts[used, None] / points.shape[0]) * (means[used] - codebook.codes[used])
    return _report(codebook, None, disp)


def ema_batch_step(codebook: Codebook, batch: Batch, alpha: float = DEFAULT_ALPHA) -> StepReport:
    """Move every code with assigned samples to ``(1 - alpha) · c_k + alpha · mean(cell_k)``.

    Codes without samples in ``batch`` are left untouched.
    """
    _check_unit("alpha", alpha)
    assignment = assign_batch(batch, codebook)
    means, counts = cell_means(batch.points, assignment.winners, codebook.k)

    used = counts > 0
    codes = codebook.mutable()
    codes[used] = (1.0 - alpha) * codes[used] + alpha * means[used]
    disp = codes - codebook.codes
    return StepReport(codebook.replace(codes), None, disp)


def nsvq_softmax_step(
    codebook: Codebook, x: np.ndarray, lr: float = DEFAULT_ETA, tau: float = DEFAULT_TAU
) -> StepReport:
    """Online step that also pulls non-winners toward ``x``.

    The winner moves by ``lr · (x - c_w)``; every other code moves by ``lr · ω_k · (x - c_k)`` where ``ω`` is the
    softmax of ``-‖c_k - c_w‖² / tau`` over all codes, the winner included in the normalization. A temperature
    large against the squared spread of the codebook pulls every code at nearly the same rate ``lr / K``.
    """
    _check_positive("lr", lr)
    _check_positive("tau", tau)
    x = np.asarray(x, dtype=np.float64)
    w, _ = nearest_code(x, codebook)
    codes = codebook.codes

    diff = codes - codes[w]
    weights = softmax_weights(np.einsum("kd,kd->k", diff, diff), tau)
    weights[w] = 1.0

    disp = lr * weights[:, None] * (x - codes)
    return _report(codebook, w, disp, weights)


def nsvq_rbf_step(
    codebook: Codebook, e_x: np.ndarray, two_sigma_sq: float = DEFAULT_TWO_SIGMA_SQ, eta: float = DEFAULT_ETA
) -> StepReport:
    """Kernel-propagated step.

    The winner takes the embedding-loss step ``eta · (e_x - c_w)``; each non-winner moves by
    ``eta · exp(-‖e_x - c_j‖² / 2σ²) · (e_x - c_j)``.
    """
    _check_positive("eta", eta)
    e_x = np.asarray(e_x, dtype=np.float64)
    w, _ = nearest_code(e_x, codebook)

    offsets = e_x - codebook.codes
    weights = rbf_weight(np.einsum("kd,kd->k", offsets, offsets), two_sigma_sq)
    weights[w] = 1.0

    disp = eta * weights[:, None] * offsets
    return _report(codebook, w, disp, weights)


def delta_e_weighted_step(
    codebook: Codebook,
    x_i: np.ndarray,
    e_step: np.ndarray,
    two_sigma_sq: float = DEFAULT_TWO_SIGMA_SQ,
    eta: float = DEFAULT_ETA,
) -> StepReport:
    """Distribute a fraction of the encoder change ``e_step = ΔE(x_i)`` to the non-winners.

    The winner takes the embedding-loss step ``eta · (x_i - c_w)``; non-winner ``n`` moves by ``w_n · e_step`` with
    ``w_n = exp(-‖c_n - x_i‖² / 2σ²)``.
    """
    _check_positive("eta", eta)
    x_i = np.asarray(x_i, dtype=np.float64)
    e_step = np.asarray(e_step, dtype=np.float64)
    w, _ = nearest_code(x_i, codebook)

    offsets = codebook.codes - x_i
    weights = rbf_weight(np.einsum("kd,kd->k", offsets, offsets), two_sigma_sq)
    weights[w] = 1.0

    disp = weights[:, None] * e_step
    disp[w] = eta * (x_i - codebook.codes[w])
    return _report(codebook, w, disp, weights)


def modified_ste_step(
    codebook: Codebook,
    e_x: np.ndarray,
    enc_grad: np.ndarray,
    eta: float = DEFAULT_ETA,
    lam: float = DEFAULT_LAMBDA,
    d_eff: int = 1,
) -> StepReport:
    """Winner step with the delay-free encoder correction.

    The winner moves by ``eta · [(2/d) · (e_x - c_w) + (2λ/d) · enc_grad]``, where ``enc_grad`` is the gradient
    reaching the encoder output; non-winners are untouched.
    """
    _check_positive("eta", eta)
    if d_eff < 1:
        raise InvalidInput("d_eff must be at least 1")
    e_x = np.asarray(e_x, dtype=np.float64)
    w, _ = nearest_code(e_x, codebook)

    disp = np.zeros_like(codebook.codes)
    disp[w] = eta * ((2.0 / d_eff) * (e_x - codebook.codes[w]) + (2.0 * lam / d_eff) * np.asarray(enc_grad))
    return _report(codebook, w, disp)


def ntk_exact_step(
    codebook: Codebook,
    process: DriftProcess,
    x_i: np.ndarray,
    delta_state: np.ndarray,
    eta: float = DEFAULT_ETA,
) -> StepReport:
    """Propagate a known drift-state increment exactly.

    The winner takes the embedding-loss step ``eta · (x_i - c_w)``; every non-winner moves by ``J(c_j) · delta_state``
    with the process Jacobian evaluated at the code vector itself.
    """
    _check_positive("eta", eta)
    x_i = np.asarray(x_i, dtype=np.float64)
    w, _ = nearest_code(x_i, codebook)

    disp = encoder_change(process, codebook.codes, delta_state)
    disp[w] = eta * (x_i - codebook.codes[w])
    return _report(codebook, w, disp)


def apply_schedules(rule: UpdateRule, epoch: int) -> UpdateRule:
    """Return ``rule`` as it is after ``epoch`` completed epochs.

    ``eta`` and ``two_sigma_sq`` decay by ``0.9`` and ``tau`` halves per epoch by default; ``alpha`` is constant.
    """
    if epoch < 0:
        raise InvalidInput("epoch must be non-negative")
    if epoch == 0:
        return rule
    return rule.replace(
        eta=max(rule.eta * rule.lr_decay**epoch, _FLOOR),
        tau=max(rule.tau * rule.tau_decay**epoch, _FLOOR),
        two_sigma_sq=max(rule.two_sigma_sq * rule.sigma_decay**epoch, _FLOOR),
    )


def update_batch(
    rule: UpdateRule,
    codebook: Codebook,
    batch: Batch,
    process: DriftProcess | None = None,
    delta_state: np.ndarray | None = None,
    targets: np.ndarray | None = None,
) -> Codebook:
    """Apply ``rule`` to a whole mini-batch and return the updated codebook.

    EMA updates once per batch. The other rules run sample by sample in batch order. Rules that use the drift
    (``delta_e_weighted``, ``ntk_exact``) receive an equal ``1/B`` share of the batch state increment
    ``delta_state`` per sample; ``modified_ste`` uses ``r · mean(Y - X_b)`` over the sample's cell as the encoder
    gradient and the batch size as ``d_eff`` unless the rule fixes it.
    """
    kind = rule.kind

    if kind is RuleKind.EMA:
        return ema_batch_step(codebook, batch, rule.alpha).codebook

    if kind is RuleKind.TRANSVQ:
        raise InvalidInput("the transvq rule updates projector parameters, not a codebook")

    if kind in (RuleKind.DELTA_E_WEIGHTED, RuleKind.NTK_EXACT):
        if process is None or delta_state is None:
            raise InvalidInput(f"{kind.value} requires the drift process and its state increment")
        share = np.asarray(delta_state, dtype=np.float64) / len(batch)

    if kind is RuleKind.DELTA_E_WEIGHTED:
        e_steps = encoder_change(process, process.base[list(batch.source_indices)], share)

    if kind is RuleKind.MODIFIED_STE:
        if process is None or targets is None:
            raise InvalidInput("modified_ste requires the drift process and the batch targets")
        cells = assign_batch(batch, codebook).winners
        residual_means, _ = cell_means(np.asarray(targets) - batch.points, cells, codebook.k)
        enc_grads = process.rate * residual_means[cells]
        d_eff = rule.d_eff or len(batch)

    for i, x in enumerate(batch.points):
        if kind is RuleKind.VANILLA_SA:
            report = vanilla_sa_step(codebook, x, rule.eta)
        elif kind is RuleKind.NSVQ_SOFTMAX:
            report = nsvq_softmax_step(codebook, x, rule.eta, rule.tau)
        elif kind is RuleKind.NSVQ_RBF:
            report = nsvq_rbf_step(codebook, x, rule.two_sigma_sq, rule.eta)
        elif kind is RuleKind.DELTA_E_WEIGHTED:
            report = delta_e_weighted_step(codebook, x, e_steps[i], rule.two_sigma_sq, rule.eta)
        elif kind is RuleKind.MODIFIED_STE:
            report = modified_ste_step(codebook, x, enc_grads[i], rule.eta, rule.lam, d_eff)
        elif kind is RuleKind.NTK_EXACT:
            report = ntk_exact_step(codebook, process, x, share, rule.eta)
        else:
            raise NotImplementedError(f"Unsupported update rule: {kind}")
        codebook = report.codebook

    return codebook
