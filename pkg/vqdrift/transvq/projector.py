"""A learnable codebook projector ``C′ = P_φ(C)``.

The projector treats every code vector as a token and runs one single-head linear attention layer followed by a
small MLP, both with residual connections and without normalization:

    h0 = C W_ei + b_ei
    a  = ((h0 W_q + b_q)(h0 W_k + b_k)ᵀ / √m)(h0 W_v + b_v) W_o + b_o
    h1 = h0 + a
    f  = tanh(h1 W_in + b_in) W_out + b_out
    C′ = C + (a + f) W_eo + b_eo

The base codebook ``C`` is never trained; only the parameters ``φ`` are. Gradients are computed by hand in
:func:`backward` from the activations cached on a :class:`ProjectorTape`.
"""

from __future__ import annotations

import logging
import math
import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from vqdrift.core import Codebook, as_codebook
from vqdrift.exception import DivergenceError, InvalidInput, ShapeMismatchError
from vqdrift.transvq.exception import StaleTapeError
from vqdrift.updaters import StepReport

if TYPE_CHECKING:
    from collections.abc import Iterator

log = logging.getLogger(__name__)
log.setLevel(os.getenv("VQDRIFT_LOG_TRANSVQ", "CRITICAL"))

PARAM_NAMES = (
    "w_embed_in",
    "b_embed_in",
    "w_q",
    "b_q",
    "w_k",
    "b_k",
    "w_v",
    "b_v",
    "w_o",
    "b_o",
    "w_in",
    "b_in",
    "w_out",
    "b_out",
    "w_embed_out",
    "b_embed_out",
)

# Zeroing these makes the projector the identity map
OUTPUT_PARAMS = ("w_o", "b_o", "w_out", "b_out", "b_embed_out")

DESK_D_MODEL = 16
FULL_D_MODEL = 256
DEFAULT_RATIO = 2

DEFAULT_EPSILON = 1e-5
BIAS_SCALE = 0.1

# Global L2 norm the gradient of one training step is clipped to
DEFAULT_MAX_GRAD_NORM = 1.0


@contextmanager
def _finite(what: str) -> Iterator[None]:
    """Turn floating point overflow and invalid operations inside the block into :class:`DivergenceError`."""
    with np.errstate(over="raise", invalid="raise"):
        try:
            yield
        except FloatingPointError as e:
            raise DivergenceError(f"{what} diverged: {e}")


@dataclass(frozen=True)
class ProjectorConfig:
    """Shape configuration of a projector.

    Args:
        d: Dimension of the code vectors.
        d_model: Width of the token representation.
        ratio: Hidden width of the MLP as a multiple of ``d_model``.
    """

    d: int = 2
    d_model: int = DESK_D_MODEL
    ratio: int = DEFAULT_RATIO

    def __post_init__(self):
        for name in ("d", "d_model", "ratio"):
            if getattr(self, name) < 1:
                raise InvalidInput(f"{name} must be at least 1")

    @classmethod
    def full_size(cls, d: int = 2) -> ProjectorConfig:
        """The full-size preset: model dimension 256 with an MLP ratio of 2."""
        return cls(d=d, d_model=FULL_D_MODEL, ratio=DEFAULT_RATIO)

    @property
    def hidden(self) -> int:
        return self.ratio * self.d_model

    def shapes(self) -> dict[str, tuple[int, ...]]:
        d, m, h = self.d, self.d_model, self.hidden
        return {
            "w_embed_in": (d, m),
            "b_embed_in": (m,),
            "w_q": (m, m),
            "b_q": (m,),
            "w_k": (m, m),
            "b_k": (m,),
            "w_v": (m, m),
            "b_v": (m,),
            "w_o": (m, m),
            "b_o": (m,),
            "w_in": (m, h),
            "b_in": (h,),
            "w_out": (h, m),
            "b_out": (m,),
            "w_embed_out": (m, d),
            "b_embed_out": (d,),
        }


@dataclass(eq=False)
class ProjectorParams:
    """The trainable parameters ``φ`` of a projector, with one gradient buffer per tensor.

    ``version`` increases on every in-place modification, which invalidates tapes recorded before it.
    """

    config: ProjectorConfig
    tensors: dict[str, np.ndarray]
    version: int = 0
    grads: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        shapes = self.config.shapes()
        if set(self.tensors) != set(shapes):
            missing = sorted(set(shapes) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(shapes))
            raise InvalidInput(f"parameter set mismatch, missing={missing} unexpected={extra}")

        tensors = {}
        for name in PARAM_NAMES:
            value = np.array(self.tensors[name], dtype=np.float64, copy=True)
            if value.shape != shapes[name]:
                raise ShapeMismatchError(f"{name}: expected shape {shapes[name]}, got {value.shape}")
            if not np.all(np.isfinite(value)):
                raise InvalidInput(f"{name} contains non-finite values")
            tensors[name] = value

        self.tensors = tensors
        self.grads = {name: np.zeros_like(value) for name, value in tensors.items()}

    def __repr__(self) -> str:
        return f"<ProjectorParams d={self.config.d} d_model={self.config.d_model} version={self.version}>"

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self):
        return iter(PARAM_NAMES)

    @property
    def size(self) -> int:
        """Total number of scalar parameters."""
        return sum(value.size for value in self.tensors.values())

    def copy(self) -> ProjectorParams:
        return ProjectorParams(self.config, self.tensors)

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.tensors[name].ravel() for name in PARAM_NAMES])

    def apply_gradient(self, grads: dict[str, np.ndarray], lr: float) -> None:
        """Take a plain gradient descent step ``φ ← φ - lr · grad`` in place."""
        for name in PARAM_NAMES:
            self.tensors[name] -= lr * grads[name]
        self.version += 1

    def set(self, name: str, value: np.ndarray) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.tensors[name].shape:
            raise ShapeMismatchError(f"{name}: expected shape {self.tensors[name].shape}, got {value.shape}")
        self.tensors[name] = value.copy()
        self.version += 1


def init_params(
    config: ProjectorConfig, seed: int | np.random.Generator | None = None, *, zero_outputs: bool = True
) -> ProjectorParams:
    """Initialize projector parameters.

    Weights are ``N(0, 1/fan_in)`` and biases ``N(0, 0.1²)``. With ``zero_outputs`` the output projections of the
    attention and the MLP and the final bias are zero, so the projector starts as the identity map.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    tensors = {}
    for name, shape in config.shapes().items():
        if name.startswith("w_"):
            tensors[name] = rng.standard_normal(shape) / np.sqrt(shape[0])
        else:
            tensors[name] = BIAS_SCALE * rng.standard_normal(shape)

    if zero_outputs:
        for name in OUTPUT_PARAMS:
            tensors[name] = np.zeros_like(tensors[name])

    return ProjectorParams(config, tensors)


@dataclass(eq=False)
class ProjectorTape:
    """Activations of one forward pass, as needed by :func:`backward`."""

    params: ProjectorParams
    version: int
    base: np.ndarray
    h0: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    scores: np.ndarray
    mixed: np.ndarray
    a: np.ndarray
    h1: np.ndarray
    hidden: np.ndarray
    f: np.ndarray
    delta: np.ndarray
    out: np.ndarray

    @property
    def stale(self) -> bool:
        return self.params.version != self.version

    def replay(self) -> np.ndarray:
        """Run the forward pass again from the recorded inputs."""
        if self.stale:
            raise StaleTapeError("parameters were modified after this tape was recorded")
        out, _ = project(self.params, self.base)
        return out.codes


def project(params: ProjectorParams, base_codebook: Codebook | np.ndarray) -> tuple[Codebook, ProjectorTape]:
    """Transform ``base_codebook`` into ``C′ = P_φ(C)`` and record the activations.

    Raises:
        ShapeMismatchError: If the code dimension does not match the projector.
        DivergenceError: If the parameters are too large for ``C′`` to be finite.
    """
    base = as_codebook(base_codebook).codes
    if base.shape[1] != params.config.d:
        raise ShapeMismatchError(
            f"codebook dimension {base.shape[1]} does not match projector dimension {params.config.d}"
        )

    p = params.tensors
    scale = 1.0 / np.sqrt(params.config.d_model)

    with _finite("projector output"):
        h0 = base @ p["w_embed_in"] + p["b_embed_in"]
        q = h0 @ p["w_q"] + p["b_q"]
        k = h0 @ p["w_k"] + p["b_k"]
        v = h0 @ p["w_v"] + p["b_v"]
        scores = (q @ k.T) * scale
        mixed = scores @ v
        a = mixed @ p["w_o"] + p["b_o"]
        h1 = h0 + a
        hidden = np.tanh(h1 @ p["w_in"] + p["b_in"])
        f = hidden @ p["w_out"] + p["b_out"]
        delta = a + f
        out = base + (delta @ p["w_embed_out"] + p["b_embed_out"])
    if not np.all(np.isfinite(out)):
        raise DivergenceError("projector output contains non-finite values")

    tape = ProjectorTape(
        params=params,
        version=params.version,
        base=base,
        h0=h0,
        q=q,
        k=k,
        v=v,
        scores=scores,
        mixed=mixed,
        a=a,
        h1=h1,
        hidden=hidden,
        f=f,
        delta=delta,
        out=out,
    )
    return Codebook(out), tape


def embedding_loss(c_prime_winner: np.ndarray, e_x: np.ndarray) -> tuple[float, np.ndarray]:
    """Return ``‖c′_w - e_x‖²`` and its gradient ``2 · (c′_w - e_x)`` with respect to ``c′_w``."""
    c_prime_winner = np.asarray(c_prime_winner, dtype=np.float64)
    e_x = np.asarray(e_x, dtype=np.float64)
    if c_prime_winner.shape != e_x.shape:
        raise ShapeMismatchError("code vector and encoder output dimensions differ")

    diff = c_prime_winner - e_x
    return float(diff @ diff), 2.0 * diff


def backward(tape: ProjectorTape, upstream: np.ndarray) -> dict[str, np.ndarray]:
    """Return the gradient of every parameter given ``upstream = ∂L/∂C′``.

    The gradients are also stored in the parameters' gradient buffers. The base codebook receives no gradient.

    Raises:
        StaleTapeError: If the parameters changed since the tape was recorded.
        ShapeMismatchError: If ``upstream`` does not match the shape of ``C′``.
    """
    if tape.stale:
        raise StaleTapeError("parameters were modified after this tape was recorded")

    g_out = np.asarray(upstream, dtype=np.float64)
    if g_out.shape != tape.out.shape:
        raise ShapeMismatchError(f"expected an upstream gradient of shape {tape.out.shape}, got {g_out.shape}")

    p = tape.params.tensors
    scale = 1.0 / np.sqrt(tape.params.config.d_model)
    grads = {}

    # C′ = C + delta W_eo + b_eo
    grads["b_embed_out"] = g_out.sum(axis=0)
    grads["w_embed_out"] = tape.delta.T @ g_out
    g_delta = g_out @ p["w_embed_out"].T

    # f = tanh(h1 W_in + b_in) W_out + b_out
    grads["b_out"] = g_delta.sum(axis=0)
    grads["w_out"] = tape.hidden.T @ g_delta
    g_pre = (g_delta @ p["w_out"].T) * (1.0 - tape.hidden**2)
    grads["b_in"] = g_pre.sum(axis=0)
    grads["w_in"] = tape.h1.T @ g_pre
    g_h1 = g_pre @ p["w_in"].T

    # a reaches C′ directly and through h1
    g_a = g_delta + g_h1
    grads["b_o"] = g_a.sum(axis=0)
    grads["w_o"] = tape.mixed.T @ g_a
    g_mixed = g_a @ p["w_o"].T

    g_scores = g_mixed @ tape.v.T
    g_v = tape.scores.T @ g_mixed
    g_q = (g_scores @ tape.k) * scale
    g_k = (g_scores.T @ tape.q) * scale

    g_h0 = g_h1.copy()
    for name, g in (("q", g_q), ("k", g_k), ("v", g_v)):
        grads[f"b_{name}"] = g.sum(axis=0)
        grads[f"w_{name}"] = tape.h0.T @ g
        g_h0 += g @ p[f"w_{name}"].T

    grads["b_embed_in"] = g_h0.sum(axis=0)
    grads["w_embed_in"] = tape.base.T @ g_h0

    for name, value in grads.items():
        tape.params.grads[name][...] = value

    return {name: grads[name] for name in PARAM_NAMES}


def train_step(
    params: ProjectorParams,
    base_codebook: Codebook | np.ndarray,
    e_x: np.ndarray,
    winner_index: int,
    lr: float,
    *,
    max_grad_norm: float | None = DEFAULT_MAX_GRAD_NORM,
) -> tuple[ProjectorParams, StepReport]:
    """Take one gradient step on ``φ`` with the embedding loss of the winner row only.

    The gradient is rescaled so that its global L2 norm over all parameter tensors is at most ``max_grad_norm``;
    ``None`` disables clipping.

    Returns the updated parameters (``params`` itself is left untouched) and a report over the transformed
    codebook: the displacement of every row of ``C′`` and the loss before the step.

    Raises:
        DivergenceError: If the gradient, the updated parameters or the transformed codebook are not finite.
    """
    base = as_codebook(base_codebook)
    if not 0 <= winner_index < base.k:
        raise IndexError(f"winner index {winner_index} out of range for {base.k} codes")
    if lr < 0.0:
        raise InvalidInput("lr must be non-negative")
    if max_grad_norm is not None and not max_grad_norm > 0.0:
        raise InvalidInput("max_grad_norm must be positive")

    before, tape = project(params, base)
    loss, g_row = embedding_loss(before[winner_index], e_x)

    upstream = np.zeros_like(before.codes)
    upstream[winner_index] = g_row
    with _finite("projector gradient"):
        grads = backward(tape, upstream)
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))

    # Checked before clipping, an infinite norm would scale the gradient to nan
    if not math.isfinite(norm):
        raise DivergenceError(f"projector gradient norm is not finite at loss {loss:.6g}")
    if max_grad_norm is not None and norm > max_grad_norm:
        scale = max_grad_norm / (norm + 1e-6)
        grads = {name: g * scale for name, g in grads.items()}
        log.debug("Projector step: clipped gradient norm %.6g to %.6g", norm, max_grad_norm)

    updated = params.copy()
    with _finite("projector parameters"):
        updated.apply_gradient(grads, lr)
    if not np.all(np.isfinite(updated.flatten())):
        raise DivergenceError(f"projector parameters are not finite after a step with lr={lr:g}")

    after, _ = project(updated, base)
    displacements = after.codes - before.codes

    log.debug(
        "Projector step: winner %d, loss %.6g, max displacement %.3g", winner_index, loss, np.abs(displacements).max()
    )
    return updated, StepReport(after, winner_index, displacements, loss=loss)


def gradient_check(
    params: ProjectorParams,
    base_codebook: Codebook | np.ndarray,
    epsilon: float = DEFAULT_EPSILON,
    seed: int | None = 0,
    corrupt: str | None = None,
) -> float:
    """Compare :func:`backward` against central finite differences.

    The scalar checked is ``sum(G ⊙ C′)`` for a random ``G``. For every parameter tensor the relative error is
    ``‖analytic - numeric‖ / (‖analytic‖ + ‖numeric‖ + 1e-12)``; the maximum over tensors is returned.

    Args:
        params: The parameters to check. They are not modified.
        base_codebook: The base codebook.
        epsilon: Finite difference step, in ``[1e-7, 1e-3]``.
        seed: Seed for the random upstream gradient.
        corrupt: Name of a tensor whose analytic gradient is doubled before comparing.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise InvalidInput(f"epsilon must be in [1e-7, 1e-3], got {epsilon}")
    if corrupt is not None and corrupt not in PARAM_NAMES:
        raise InvalidInput(f"unknown parameter tensor: {corrupt!r}")

    base = as_codebook(base_codebook)
    perturbed = params.copy()
    out, tape = project(perturbed, base)
    upstream = np.random.default_rng(seed).standard_normal(out.codes.shape)
    analytic = backward(tape, upstream)
    if corrupt is not None:
        analytic[corrupt] = 2.0 * analytic[corrupt]

    def objective() -> float:
        return float(np.sum(upstream * project(perturbed, base)[0].codes))

    worst = 0.0
    for name in PARAM_NAMES:
        tensor = perturbed.tensors[name]
        numeric = np.zeros_like(tensor)
        for idx in np.ndindex(tensor.shape):
            orig = tensor[idx]
            tensor[idx] = orig + epsilon
            plus = objective()
            tensor[idx] = orig - epsilon
            minus = objective()
            tensor[idx] = orig
            numeric[idx] = (plus - minus) / (2.0 * epsilon)

        diff = np.linalg.norm(analytic[name] - numeric)
        error = diff / (np.linalg.norm(analytic[name]) + np.linalg.norm(numeric) + 1e-12)
        log.debug("Gradient check %s: relative error %.3g", name, error)
        worst = max(worst, float(error))

    return worst


def jacobian(params: ProjectorParams, base_codebook: Codebook | np.ndarray) -> np.ndarray:
    """Return ``∂vec(C′)/∂φ`` as a ``(K·d) x |φ|`` matrix, one reverse-mode pass per output entry.

    Columns follow :data:`PARAM_NAMES` order with every tensor flattened row-major.
    """
    base = as_codebook(base_codebook)
    out, tape = project(params, base)

    rows = []
    for idx in np.ndindex(out.codes.shape):
        upstream = np.zeros_like(out.codes)
        upstream[idx] = 1.0
        grads = backward(tape, upstream)
        rows.append(np.concatenate([grads[name].ravel() for name in PARAM_NAMES]))
    return np.vstack(rows)


def tangent_kernel(params: ProjectorParams, base_codebook: Codebook | np.ndarray) -> np.ndarray:
    """Return the ``K x K x d x d`` tangent kernel blocks ``J_φ(c_j) J_φ(c_i)ᵀ`` of the projector."""
    base = as_codebook(base_codebook)
    jac = jacobian(params, base).reshape(base.k, base.d, -1)
    return np.einsum("jap,ibp->jiab", jac, jac)
