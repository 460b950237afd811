"""Parametric non-stationary data processes.

Each process owns a base dataset ``X`` and a fixed target ``Y``. A drift state (a vector ``theta`` for the
translation and split processes, a matrix ``A`` for the scaling process) maps base points to the current
"encoder output" and is pulled toward the targets by :func:`drift_step`. All three encoders are affine in
their state, so :func:`exact_jacobian` is exact and first order predictions of the drift are exact too.
"""

from __future__ import annotations

import enum
import logging
import os
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from vqdrift.core import Batch
from vqdrift.exception import DegenerateInputError, InvalidInput, ShapeMismatchError

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

log = logging.getLogger(__name__)
log.setLevel(os.getenv("VQDRIFT_LOG_STREAMS", "CRITICAL"))

DEFAULT_N = 1500
DEFAULT_RATE = 0.1
DEFAULT_OFFSET = 10.0
DEFAULT_NOISE_SCALE = 1.0
SPLIT_MEAN = 0.5

EXPANSION_NORM = (1.5, 2.5)
SHRINK_NORM = (0.3, 0.7)


class DriftKind(enum.Enum):
    TRANSLATION = "translation"
    SCALING = "scaling"
    SPLIT = "split"


def sign(x: np.ndarray) -> np.ndarray:
    """Elementwise sign with ``sign(0) = +1``."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


@dataclass(eq=False)
class DriftProcess:
    """A drifting data process.

    Args:
        kind: Which encoder form the process uses.
        base: The ``N x d`` base dataset ``X``.
        targets: The ``N x d`` fixed targets ``Y``.
        rate: Drift rate ``r``.
        m: The target matrix of a scaling process.
        offset: Target offset magnitude of the translation and split processes.
    """

    kind: DriftKind
    base: np.ndarray
    targets: np.ndarray
    rate: float = DEFAULT_RATE
    m: np.ndarray | None = None
    offset: float = DEFAULT_OFFSET
    theta: np.ndarray = field(init=False)
    a: np.ndarray = field(init=False)

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.base.ndim != 2 or self.base.shape != self.targets.shape:
            raise ShapeMismatchError("base points and targets must be matching N x d matrices")
        if self.rate < 0:
            raise InvalidInput("drift rate must be non-negative")

        d = self.d
        self.theta = np.zeros(d, dtype=np.float64)
        self.a = np.eye(d, dtype=np.float64)

    def __repr__(self) -> str:
        return f"<DriftProcess kind={self.kind.value} n={self.n} d={self.d} state={self.state.tolist()}>"

    @property
    def n(self) -> int:
        return self.base.shape[0]

    @property
    def d(self) -> int:
        return self.base.shape[1]

    @property
    def state(self) -> np.ndarray:
        """The flattened drift state: ``theta``, or ``A`` in row-major order."""
        if self.kind is DriftKind.SCALING:
            return self.a.ravel().copy()
        return self.theta.copy()

    @property
    def state_size(self) -> int:
        return self.d * self.d if self.kind is DriftKind.SCALING else self.d

    def set_state(self, state: np.ndarray) -> None:
        state = np.asarray(state, dtype=np.float64)
        if state.shape != (self.state_size,):
            raise ShapeMismatchError(f"expected a state of size {self.state_size}, got shape {state.shape}")
        if self.kind is DriftKind.SCALING:
            self.a = state.reshape(self.d, self.d).copy()
        else:
            self.theta = state.copy()

    def drifted(self) -> np.ndarray:
        """Return the whole dataset under the current state."""
        return encode(self, self.base)

    def view(self) -> EncoderView:
        return EncoderView(
            apply=lambda x: encode(self, x),
            jacobian_wrt_state=lambda x: exact_jacobian(self, x),
        )


@dataclass(frozen=True)
class EncoderView:
    """The encoder of a process as a pair of callables: the drifted point and its Jacobian w.r.t. the state."""

    apply: Callable[[np.ndarray], np.ndarray]
    jacobian_wrt_state: Callable[[np.ndarray], np.ndarray]


def encode(process: DriftProcess, x: np.ndarray, state: np.ndarray | None = None) -> np.ndarray:
    """Map base point(s) ``x`` to their drifted position under ``state`` (default: the current state)."""
    x = np.asarray(x, dtype=np.float64)
    if state is None:
        state = process.state

    if process.kind is DriftKind.SCALING:
        return x @ state.reshape(process.d, process.d).T
    if process.kind is DriftKind.SPLIT:
        return x + sign(x) * state
    return x + state


def sample_base(
    n: int = DEFAULT_N,
    kind: DriftKind | str = DriftKind.TRANSLATION,
    noise_scale: float = DEFAULT_NOISE_SCALE,
    mean: Sequence[float] | np.ndarray | None = None,
    seed: int | np.random.Generator | None = None,
    *,
    d: int = 2,
    rate: float = DEFAULT_RATE,
    offset: float = DEFAULT_OFFSET,
    shrink: bool = False,
    m: np.ndarray | None = None,
) -> DriftProcess:
    """Sample a base dataset with its targets and wrap it in a fresh :class:`DriftProcess`.

    The base points are ``N(mean, noise_scale² I)``; ``mean`` defaults to the origin for translation and scaling
    and to ``0.5`` per coordinate for the split process. The targets are:

    - translation: ``Y = X + offset`` in every coordinate;
    - scaling: ``Y = X Mᵀ``, with ``M`` sampled to have spectral norm in ``[1.5, 2.5]`` (or ``[0.3, 0.7]`` when
      ``shrink`` is set) unless given explicitly;
    - split: ``Y = X + offset · sign(X)``.

    Args:
        n: Number of base points.
        kind: The drift process kind.
        noise_scale: Standard deviation of the base cloud.
        mean: Mean of the base cloud.
        seed: Seed or generator for sampling.
        d: Dimension.
        rate: Drift rate ``r``.
        offset: Target offset magnitude.
        shrink: Sample a contracting ``M`` for the scaling process.
        m: Explicit scaling target matrix.
    """
    kind = DriftKind(kind)
    if n < 1:
        raise InvalidInput("n must be at least 1")
    if d < 1:
        raise InvalidInput("d must be at least 1")

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    if mean is None:
        mean = np.full(d, SPLIT_MEAN) if kind is DriftKind.SPLIT else np.zeros(d)
    mean = np.broadcast_to(np.asarray(mean, dtype=np.float64), (d,))

    base = mean + noise_scale * rng.standard_normal((n, d))

    if kind is DriftKind.SCALING:
        if m is None:
            lo, hi = SHRINK_NORM if shrink else EXPANSION_NORM
            g = rng.standard_normal((d, d))
            m = g / np.linalg.norm(g, 2) * rng.uniform(lo, hi)
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (d, d):
            raise ShapeMismatchError(f"target matrix must be {d} x {d}")
        targets = base @ m.T
    elif kind is DriftKind.SPLIT:
        targets = base + offset * sign(base)
    else:
        targets = base + offset

    return DriftProcess(kind, base, targets, rate=rate, m=m, offset=offset)


def next_batch(
    process: DriftProcess, batch_indices: Sequence[int] | np.ndarray, step: int = 0
) -> tuple[Batch, np.ndarray]:
    """Return the drifted points at ``batch_indices`` and their targets without touching the drift state.

    Raises:
        IndexError: If an index is outside the dataset.
    """
    idx = np.asarray(batch_indices, dtype=np.int64)
    if idx.size == 0:
        raise InvalidInput("batch indices are empty")
    if idx.min() < 0 or idx.max() >= process.n:
        raise IndexError(f"batch index out of range for a dataset of {process.n} points")

    log.debug("Step %d: batch of %d points at state %s", step, idx.size, process.state.tolist())
    return Batch(encode(process, process.base[idx]), idx.tolist()), process.targets[idx]


def drift_delta(process: DriftProcess, batch: Batch, targets: np.ndarray) -> np.ndarray:
    """Return the state increment :func:`drift_step` would apply for ``batch``, without applying it.

    Translation and split move ``theta`` by ``r · mean(Y_b - X_b)``. Scaling moves ``A`` by ``r · g_A`` with
    ``E = Y_b - X_b Aᵀ`` and ``g_A = (2 / B) Eᵀ X_b``, where ``X_b`` are the undrifted base points.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != batch.points.shape:
        raise ShapeMismatchError("targets must match the batch shape")

    residual = targets - batch.points
    if process.kind is DriftKind.SCALING:
        base = process.base[list(batch.source_indices)]
        g_a = (2.0 / len(batch)) * residual.T @ base
        return process.rate * g_a.ravel()
    return process.rate * residual.mean(axis=0)


def drift_step(process: DriftProcess, batch: Batch, targets: np.ndarray) -> np.ndarray:
    """Advance the drift state of ``process`` by one step and return the new (flattened) state."""
    process.set_state(process.state + drift_delta(process, batch, targets))
    return process.state


def exact_jacobian(process: DriftProcess, x: np.ndarray) -> np.ndarray:
    """Return the Jacobian of the encoder at base point ``x`` with respect to the flattened state.

    The result is ``d x d`` for translation (identity) and split (``diag(sign(x))``) and ``d x d²`` for scaling,
    where ``∂(Ax)_i / ∂A_jk = δ_ij x_k``.

    Raises:
        DegenerateInputError: For the split process if a coordinate of ``x`` is exactly zero.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (process.d,):
        raise ShapeMismatchError(f"expected a point of dimension {process.d}")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("point contains non-finite values")

    if process.kind is DriftKind.SCALING:
        return np.kron(np.eye(process.d), x[None, :])
    if process.kind is DriftKind.SPLIT:
        if np.any(x == 0.0):
            raise DegenerateInputError("sign derivative is undefined at a zero coordinate")
        return np.diag(sign(x))
    return np.eye(process.d)


def encoder_change(process: DriftProcess, x: np.ndarray, delta_state: np.ndarray) -> np.ndarray:
    """Return ``J(x) · delta_state``, the change of the encoding of base point(s) ``x`` for a state increment.

    Accepts a single point or an ``n x d`` matrix and evaluates the products without building the Jacobians.
    """
    x = np.asarray(x, dtype=np.float64)
    delta_state = np.asarray(delta_state, dtype=np.float64)
    if delta_state.shape != (process.state_size,):
        raise ShapeMismatchError(f"expected a state increment of size {process.state_size}")

    xs = np.atleast_2d(x)
    if xs.shape[1] != process.d:
        raise ShapeMismatchError(f"expected points of dimension {process.d}")
    if not np.all(np.isfinite(xs)):
        raise InvalidInput("points contain non-finite values")

    if process.kind is DriftKind.SCALING:
        change = xs @ delta_state.reshape(process.d, process.d).T
    elif process.kind is DriftKind.SPLIT:
        if np.any(xs == 0.0):
            raise DegenerateInputError("sign derivative is undefined at a zero coordinate")
        change = sign(xs) * delta_state
    else:
        change = np.tile(delta_state, (xs.shape[0], 1))

    return change[0] if x.ndim == 1 else change


def ntk(process: DriftProcess, x_j: np.ndarray, x_i: np.ndarray) -> np.ndarray:
    """Return the tangent kernel ``J(x_j) J(x_i)ᵀ`` of the process encoder."""
    return exact_jacobian(process, x_j) @ exact_jacobian(process, x_i).T
