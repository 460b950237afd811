from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from vqdrift.exception import InvalidInput, ShapeMismatchError

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence


def _frozen(values: np.ndarray) -> np.ndarray:
    values = np.array(values, dtype=np.float64, copy=True)
    values.setflags(write=False)
    return values


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise InvalidInput(f"{what} contains non-finite values")


@dataclass(frozen=True, eq=False)
class Codebook:
    """A ``K x d`` matrix of code vectors.

    Codes are addressed by their row index, which stays stable across updates: update rules return a new
    :class:`Codebook` with the same ``K`` and ``d``.

    Args:
        codes: The code vectors, one per row.

    Raises:
        ShapeMismatchError: If ``codes`` is not a non-empty two dimensional matrix.
        InvalidInput: If any entry is NaN or infinite.
    """

    codes: np.ndarray

    def __post_init__(self):
        codes = _frozen(self.codes)
        if codes.ndim != 2 or codes.shape[0] < 1 or codes.shape[1] < 1:
            raise ShapeMismatchError(f"codebook must be a non-empty K x d matrix, got shape {codes.shape}")
        _check_finite(codes, "codebook")
        object.__setattr__(self, "codes", codes)

    def __repr__(self) -> str:
        return f"<Codebook k={self.k} d={self.d}>"

    def __len__(self) -> int:
        return self.k

    def __getitem__(self, idx: int) -> np.ndarray:
        return self.codes[idx]

    @property
    def k(self) -> int:
        """Number of codes."""
        return self.codes.shape[0]

    @property
    def d(self) -> int:
        """Embedding dimension."""
        return self.codes.shape[1]

    def replace(self, codes: np.ndarray) -> Codebook:
        """Return a new codebook with the given codes, which must keep the ``K x d`` shape."""
        codes = np.asarray(codes, dtype=np.float64)
        if codes.shape != self.codes.shape:
            raise ShapeMismatchError(f"expected codes of shape {self.codes.shape}, got {codes.shape}")
        return Codebook(codes)

    def mutable(self) -> np.ndarray:
        """Return a writable copy of the code matrix."""
        return np.array(self.codes, copy=True)


@dataclass(frozen=True, eq=False)
class Batch:
    """A mini-batch of points together with the dataset indices they were drawn from."""

    points: np.ndarray
    source_indices: tuple[int, ...]

    def __post_init__(self):
        points = _frozen(self.points)
        if points.ndim != 2 or points.shape[0] < 1:
            raise InvalidInput(f"batch must be a non-empty B x d matrix, got shape {points.shape}")
        _check_finite(points, "batch")

        source_indices = tuple(int(i) for i in self.source_indices)
        if len(source_indices) != points.shape[0]:
            raise ShapeMismatchError("number of source indices does not match number of points")

        object.__setattr__(self, "points", points)
        object.__setattr__(self, "source_indices", source_indices)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True, eq=False)
class Assignment:
    """Winner code index and squared distance for every point of a batch."""

    winners: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return len(self.winners)


@dataclass(frozen=True)
class Metrics:
    distortion: float
    utilization: float
    dead_codes: int


def squared_distances(points: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Return the ``N x K`` matrix of squared Euclidean distances between points and codes."""
    diff = points[:, None, :] - codes[None, :, :]
    return np.einsum("bkd,bkd->bk", diff, diff)


def nearest_code(x: np.ndarray, codebook: Codebook) -> tuple[int, float]:
    """Return the index of the code closest to ``x`` and the squared distance to it.

    Exact ties resolve to the lowest index.

    Raises:
        InvalidInput: If ``x`` contains non-finite values.
        ShapeMismatchError: If ``x`` does not have dimension ``codebook.d``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (codebook.d,):
        raise ShapeMismatchError(f"expected a vector of dimension {codebook.d}, got shape {x.shape}")
    _check_finite(x, "input vector")

    diff = codebook.codes - x
    dist = np.einsum("kd,kd->k", diff, diff)
    # argmin returns the first occurrence, which is the lowest index on ties
    idx = int(np.argmin(dist))
    return idx, float(dist[idx])


def assign_batch(batch: Batch, codebook: Codebook) -> Assignment:
    """Assign every point of ``batch`` to its nearest code (the Voronoi partition of ``codebook``).

    Raises:
        ShapeMismatchError: If the batch and codebook dimensions differ.
    """
    if batch.d != codebook.d:
        raise ShapeMismatchError(f"batch dimension {batch.d} does not match codebook dimension {codebook.d}")

    dist = squared_distances(batch.points, codebook.codes)
    winners = np.argmin(dist, axis=1)
    distances = dist[np.arange(len(winners)), winners]
    return Assignment(winners, distances)


def assign_points(points: np.ndarray, codebook: Codebook) -> Assignment:
    """Convenience wrapper around :func:`assign_batch` for a bare point matrix."""
    points = np.asarray(points, dtype=np.float64)
    return assign_batch(Batch(points, range(points.shape[0])), codebook)


def distortion(points: np.ndarray, codebook: Codebook) -> float:
    """Return the empirical distortion: mean over ``points`` of the squared distance to the nearest code.

    Raises:
        InvalidInput: If ``points`` is empty.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise InvalidInput("distortion requires a non-empty N x d point matrix")
    return float(np.mean(assign_points(points, codebook).distances))


def utilization(winners: Iterable[int] | np.ndarray, k: int) -> float:
    """Return the fraction of the ``k`` codes that appear at least once in ``winners``.

    Raises:
        InvalidInput: If the window is empty or ``k`` is not positive.
    """
    winners = np.asarray(list(winners) if not isinstance(winners, np.ndarray) else winners, dtype=np.int64)
    if winners.size == 0:
        raise InvalidInput("utilization window is empty")
    if k < 1:
        raise InvalidInput("k must be at least 1")
    return len(np.unique(winners)) / k


def measure(points: np.ndarray, codebook: Codebook) -> Metrics:
    """Compute distortion, utilization and dead code count of ``codebook`` over one pass of ``points``."""
    assignment = assign_points(points, codebook)
    used = len(np.unique(assignment.winners))
    return Metrics(
        distortion=float(np.mean(assignment.distances)),
        utilization=used / codebook.k,
        dead_codes=codebook.k - used,
    )


def as_codebook(codes: Codebook | Sequence[Sequence[float]] | np.ndarray) -> Codebook:
    return codes if isinstance(codes, Codebook) else Codebook(np.asarray(codes, dtype=np.float64))


def cell_means(points: np.ndarray, winners: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Return the per-cell mean and member count of a partition; empty cells have NaN means."""
    counts = np.bincount(winners, minlength=k)
    sums = np.zeros((k, points.shape[1]), dtype=np.float64)
    np.add.at(sums, winners, points)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / counts[:, None]
    return means, counts
