from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal

import numpy as np

from vqdrift.core import Codebook, as_codebook, cell_means, distortion, squared_distances
from vqdrift.exception import DegenerateInputError, InfeasibleError, InvalidInput

if TYPE_CHECKING:
    from collections.abc import Sequence

log = logging.getLogger(__name__)
log.setLevel(os.getenv("VQDRIFT_LOG_KMEANS", "CRITICAL"))

InitStrategy = Literal["random-sample", "kmeans++", "explicit"]

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 500


@dataclass(frozen=True)
class LloydResult:
    """Outcome of a batch Lloyd run.

    ``history`` holds the distortion of the codebook at the start of every iteration followed by the distortion
    of the returned codebook, so it is non-increasing and ends with ``final_distortion``.
    """

    codebook: Codebook
    iterations: int
    final_distortion: float
    converged: bool
    history: tuple[float, ...] = field(default=())


def _as_points(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise InvalidInput("expected a non-empty N x d point matrix")
    if not np.all(np.isfinite(points)):
        raise InvalidInput("points contain non-finite values")
    return points


def init_codebook(
    points: np.ndarray,
    k: int,
    strategy: InitStrategy = "kmeans++",
    seed: int | None = None,
    codes: Codebook | np.ndarray | Sequence[Sequence[float]] | None = None,
) -> Codebook:
    """Pick ``k`` initial code vectors from ``points``.

    Args:
        points: The ``N x d`` dataset.
        k: Number of codes.
        strategy: ``random-sample`` draws ``k`` distinct rows uniformly, ``kmeans++`` uses D² seeding and
            ``explicit`` returns ``codes`` unchanged.
        seed: Seed for the random generator.
        codes: The explicit codebook for the ``explicit`` strategy.

    Raises:
        InfeasibleError: If there are fewer points than codes.
        DegenerateInputError: If fewer than ``k`` distinct points exist.
    """
    points = _as_points(points)
    n = points.shape[0]

    if strategy == "explicit":
        if codes is None:
            raise InvalidInput("explicit initialization requires codes")
        codebook = as_codebook(codes)
        if codebook.k != k or codebook.d != points.shape[1]:
            raise InvalidInput(f"explicit codebook has shape {codebook.codes.shape}, expected ({k}, {points.shape[1]})")
        return codebook

    if k < 1:
        raise InvalidInput("k must be at least 1")
    if n < k:
        raise InfeasibleError(f"cannot pick {k} codes from {n} points")

    rng = np.random.default_rng(seed)

    if strategy == "random-sample":
        _, unique_idx = np.unique(points, axis=0, return_index=True)
        if len(unique_idx) < k:
            raise DegenerateInputError(f"only {len(unique_idx)} distinct points for {k} codes")
        if k == n:
            return Codebook(points)
        chosen = rng.choice(np.sort(unique_idx), size=k, replace=False)
        return Codebook(points[chosen])

    if strategy == "kmeans++":
        if k == n:
            if len(np.unique(points, axis=0)) < k:
                raise DegenerateInputError("dataset contains duplicate points")
            return Codebook(points)

        centroids = np.empty((k, points.shape[1]), dtype=np.float64)
        centroids[0] = points[rng.integers(0, n)]
        closest = np.einsum("nd,nd->n", points - centroids[0], points - centroids[0])
        for i in range(1, k):
            total = closest.sum()
            if total <= 0.0:
                raise DegenerateInputError(f"only {i} distinct points for {k} codes")
            centroids[i] = points[rng.choice(n, p=closest / total)]
            diff = points - centroids[i]
            np.minimum(closest, np.einsum("nd,nd->n", diff, diff), out=closest)
        return Codebook(centroids)

    raise InvalidInput(f"unknown initialization strategy: {strategy!r}")


def lloyd(
    points: np.ndarray,
    k: int,
    init: int | Codebook | np.ndarray | None = None,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    strategy: InitStrategy = "kmeans++",
) -> LloydResult:
    """Run batch Lloyd iterations until the largest centroid displacement drops below ``tol``.

    Empty cells are reseeded with the point that currently has the largest quantization error, so ``K`` stays
    constant and the distortion never increases.

    Args:
        points: The ``N x d`` dataset.
        k: Number of codes.
        init: A seed for ``strategy`` or an explicit initial codebook.
        max_iter: Maximum number of iterations.
        tol: Convergence threshold on the maximum centroid displacement.
        strategy: Initialization strategy used when ``init`` is a seed or ``None``.

    Raises:
        InfeasibleError: If there are fewer points than codes.
    """
    points = _as_points(points)
    if points.shape[0] < k:
        raise InfeasibleError(f"cannot fit {k} codes to {points.shape[0]} points")
    if tol <= 0:
        raise InvalidInput("tol must be positive")
    if max_iter < 1:
        raise InvalidInput("max_iter must be at least 1")

    if init is None or isinstance(init, (int, np.integer)):
        codebook = init_codebook(points, k, strategy, seed=init)
    else:
        codebook = init_codebook(points, k, "explicit", codes=init)

    codes = codebook.mutable()
    history = []
    converged = False
    iterations = 0

    for iterations in range(1, max_iter + 1):
        dist = squared_distances(points, codes)
        winners = np.argmin(dist, axis=1)
        errors = dist[np.arange(len(winners)), winners]
        history.append(float(np.mean(errors)))

        means, counts = cell_means(points, winners, k)
        new_codes = np.where(counts[:, None] > 0, means, codes)

        empty = np.flatnonzero(counts == 0)
        if len(empty):
            log.debug("Reseeding %d empty cells at iteration %d", len(empty), iterations)
            for cell in empty:
                worst = int(np.argmax(errors))
                new_codes[cell] = points[worst]
                errors[worst] = -1.0

        displacement = float(np.max(np.linalg.norm(new_codes - codes, axis=1)))
        codes = new_codes

        if displacement < tol:
            converged = True
            break

    result = Codebook(codes)
    final = distortion(points, result)
    history.append(final)

    if converged:
        log.debug("Lloyd converged after %d iterations, distortion %.6g", iterations, final)
    else:
        log.warning("Lloyd did not converge within %d iterations", max_iter)

    return LloydResult(result, iterations, final, converged, tuple(history))


def is_fixed_point(points: np.ndarray, codebook: Codebook, tol: float = DEFAULT_TOL) -> bool:
    """Return whether every non-empty Voronoi cell of ``codebook`` has its code within ``tol`` of the cell mean."""
    points = _as_points(points)
    codebook = as_codebook(codebook)

    winners = np.argmin(squared_distances(points, codebook.codes), axis=1)
    means, counts = cell_means(points, winners, codebook.k)
    used = counts > 0
    offsets = np.linalg.norm(codebook.codes[used] - means[used], axis=1)
    return bool(np.all(offsets <= tol))
