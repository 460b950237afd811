from __future__ import annotations

import numpy as np
import pytest

from vqdrift.core import Codebook
from vqdrift.streams import DriftKind, DriftProcess, sample_base


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture
def gaussian_points(rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((1500, 2))


@pytest.fixture
def square_codebook() -> Codebook:
    return Codebook([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])


@pytest.fixture
def translation_process() -> DriftProcess:
    return sample_base(200, DriftKind.TRANSLATION, seed=1)


@pytest.fixture
def scaling_process() -> DriftProcess:
    return sample_base(200, DriftKind.SCALING, seed=2)


@pytest.fixture
def split_process() -> DriftProcess:
    return sample_base(200, DriftKind.SPLIT, seed=3)
