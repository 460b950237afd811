from __future__ import annotations

from vqdrift.transvq.exception import InvalidParameterFile, StaleTapeError
from vqdrift.transvq.projector import (
    PARAM_NAMES,
    ProjectorConfig,
    ProjectorParams,
    ProjectorTape,
    backward,
    embedding_loss,
    gradient_check,
    init_params,
    jacobian,
    project,
    tangent_kernel,
    train_step,
)
from vqdrift.transvq.serialise import dump, dumps, load

__all__ = [
    "PARAM_NAMES",
    "InvalidParameterFile",
    "ProjectorConfig",
    "ProjectorParams",
    "ProjectorTape",
    "StaleTapeError",
    "backward",
    "dump",
    "dumps",
    "embedding_loss",
    "gradient_check",
    "init_params",
    "jacobian",
    "load",
    "project",
    "tangent_kernel",
    "train_step",
]
