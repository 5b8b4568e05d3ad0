#!/usr/bin/env python3
"""
Checkpoint Container
====================

Flat binary container for named tensors.

Layout (all integers little-endian):
    b"MATE"                       magic
    u32 version                   currently 1
    u32 tensor count
    per tensor:
        u32 name length, name bytes (UTF-8)
        u8  dtype tag             1=float64 2=float32 3=int64 4=uint8
        u32 rank, u64 extent * rank
        values, little-endian, C order

64-bit values round-trip bit-exactly.
"""

import logging
import math
import os
import struct
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from errors import CheckpointMismatchError, DataError
from nn_core import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"MATE"
FORMAT_VERSION = 1

DTYPE_TAGS = {
    np.dtype("<f8"): 1,
    np.dtype("<f4"): 2,
    np.dtype("<i8"): 3,
    np.dtype("u1"): 4,
}
TAG_DTYPES = {tag: dtype for dtype, tag in DTYPE_TAGS.items()}

PathLike = Union[str, Path]


def _normalize(array: np.ndarray) -> np.ndarray:
    array = np.asarray(array)
    if array.dtype == np.bool_:
        array = array.astype(np.uint8)
    elif np.issubdtype(array.dtype, np.integer) and array.dtype != np.uint8:
        array = array.astype("<i8")
    elif np.issubdtype(array.dtype, np.floating):
        array = array.astype(array.dtype.newbyteorder("<"), copy=False)
    if array.dtype not in DTYPE_TAGS:
        raise DataError(f"Unsupported checkpoint dtype {array.dtype}")
    return np.ascontiguousarray(array)


def encode_tensors(tensors: Dict[str, np.ndarray]) -> bytes:
    chunks: List[bytes] = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(tensors))]
    for name, value in tensors.items():
        array = _normalize(value)
        encoded_name = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded_name)))
        chunks.append(encoded_name)
        chunks.append(struct.pack("<BI", DTYPE_TAGS[array.dtype], array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        chunks.append(array.tobytes(order="C"))
    return b"".join(chunks)


def decode_tensors(payload: bytes, source: str = "<bytes>") -> Dict[str, np.ndarray]:
    if payload[:4] != MAGIC:
        raise DataError(f"{source}: missing MATE magic bytes")
    if len(payload) < 12:
        raise DataError(f"{source}: truncated checkpoint header")
    version, count = struct.unpack_from("<II", payload, 4)
    if version != FORMAT_VERSION:
        raise DataError(f"{source}: unsupported container version {version}")
    offset = 12
    tensors: Dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", payload, offset)
            offset += 4
            name = payload[offset:offset + name_len].decode("utf-8")
            offset += name_len
            tag, rank = struct.unpack_from("<BI", payload, offset)
            offset += 5
            shape = struct.unpack_from(f"<{rank}Q", payload, offset)
            offset += 8 * rank
            if tag not in TAG_DTYPES:
                raise DataError(f"{source}: tensor '{name}' has unknown dtype tag {tag}")
            dtype = TAG_DTYPES[tag]
            size = math.prod(shape)
            nbytes = size * dtype.itemsize
            if offset + nbytes > len(payload):
                raise DataError(f"{source}: truncated checkpoint (tensor '{name}' needs {nbytes} bytes at {offset}, "
                                f"file has {len(payload)})")
            values = np.frombuffer(payload, dtype=dtype, count=size, offset=offset)
            offset += nbytes
            tensors[name] = values.reshape(shape).copy()
    except struct.error as exc:
        raise DataError(f"{source}: truncated checkpoint ({exc})") from exc
    except UnicodeDecodeError as exc:
        raise DataError(f"{source}: corrupt tensor name ({exc})") from exc
    return tensors


def save_checkpoint(path: PathLike, tensors: Dict[str, np.ndarray]) -> Path:
    """Write tensors through a temp file and rename, so readers never see half a checkpoint"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    staging = path.with_suffix(path.suffix + ".tmp")
    with open(staging, "wb") as f:
        f.write(encode_tensors(tensors))
    os.replace(staging, path)
    logger.info(f"💾 Saved checkpoint with {len(tensors)} tensors: {path}")
    return path


def load_checkpoint(path: PathLike) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Checkpoint not found: {path}")
    return decode_tensors(path.read_bytes(), source=str(path))


def load_into(named_params: Sequence[Tuple[str, Tensor]], tensors: Dict[str, np.ndarray]) -> None:
    """Copy checkpoint values into parameters; the first incompatible tensor is named in the error"""
    for name, param in named_params:
        if name not in tensors:
            raise CheckpointMismatchError(f"Checkpoint has no tensor '{name}'")
        value = tensors[name]
        if value.shape != param.data.shape:
            raise CheckpointMismatchError(f"Tensor '{name}' has shape {value.shape}, "
                                          f"model expects {param.data.shape}")
    for name, param in named_params:
        param.data = tensors[name].astype(param.data.dtype, copy=True)
