from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from vqdrift.exception import InvalidInput
from vqdrift.transvq.c_transvq import c_transvq
from vqdrift.transvq.exception import InvalidParameterFile
from vqdrift.transvq.projector import PARAM_NAMES, ProjectorConfig, ProjectorParams

PARAM_FILE_MAGIC = b"VQPJ"
PARAM_FILE_VERSION = 1

NAME_SIZE = 16


def dumps(params: ProjectorParams) -> bytes:
    """Serialise ``params`` to the versioned binary parameter format."""
    config = params.config
    header = c_transvq.param_header(
        magic=PARAM_FILE_MAGIC,
        version=PARAM_FILE_VERSION,
        tensor_count=len(PARAM_NAMES),
        d=config.d,
        d_model=config.d_model,
        ratio=config.ratio,
    )

    buf = io.BytesIO()
    buf.write(header.dumps())
    for name in PARAM_NAMES:
        value = np.atleast_2d(params[name])
        tensor = c_transvq.param_tensor(
            name=name.encode().ljust(NAME_SIZE, b"\x00"),
            rows=value.shape[0],
            cols=value.shape[1],
            count=value.size,
            values=value.ravel().tolist(),
        )
        buf.write(tensor.dumps())
    return buf.getvalue()


def dump(params: ProjectorParams, fh: BinaryIO | Path | str) -> None:
    if isinstance(fh, (str, Path)):
        Path(fh).write_bytes(dumps(params))
    else:
        fh.write(dumps(params))


def load(fh: BinaryIO | Path | str | bytes) -> ProjectorParams:
    """Read projector parameters written by :func:`dump`.

    Raises:
        InvalidParameterFile: If the magic, version, tensor set or any tensor shape is wrong, or the data is
                              truncated.
    """
    if isinstance(fh, bytes):
        fh = io.BytesIO(fh)
    elif isinstance(fh, (str, Path)):
        fh = io.BytesIO(Path(fh).read_bytes())

    try:
        header = c_transvq.param_header(fh)
    except (EOFError, struct.error):
        raise InvalidParameterFile("Truncated parameter file header")

    if header.magic != PARAM_FILE_MAGIC:
        raise InvalidParameterFile(f"Invalid parameter file magic: {header.magic!r}")
    if header.version != PARAM_FILE_VERSION:
        raise InvalidParameterFile(f"Unsupported parameter file version: {header.version}")
    if header.tensor_count != len(PARAM_NAMES):
        raise InvalidParameterFile(f"Expected {len(PARAM_NAMES)} tensors, got {header.tensor_count}")

    try:
        config = ProjectorConfig(d=header.d, d_model=header.d_model, ratio=header.ratio)
    except InvalidInput as e:
        raise InvalidParameterFile(f"Invalid projector shape in header: {e}")
    shapes = config.shapes()

    tensors = {}
    for _ in range(header.tensor_count):
        try:
            record = c_transvq.param_tensor(fh)
        except (EOFError, struct.error):
            raise InvalidParameterFile("Truncated parameter file tensor")

        name = record.name.rstrip(b"\x00").decode(errors="replace")
        if name not in shapes:
            raise InvalidParameterFile(f"Unknown tensor: {name!r}")
        if name in tensors:
            raise InvalidParameterFile(f"Duplicate tensor: {name!r}")

        shape = shapes[name]
        stored = (record.rows, record.cols)
        if stored != (shape if len(shape) == 2 else (1, shape[0])) or record.count != record.rows * record.cols:
            raise InvalidParameterFile(f"Tensor {name} has shape {stored}, expected {shape}")

        tensors[name] = np.array(record.values, dtype=np.float64).reshape(shape)

    return ProjectorParams(config, tensors)
