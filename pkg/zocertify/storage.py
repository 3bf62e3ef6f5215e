import json
import logging
import struct
from collections import OrderedDict
from typing import Dict
from typing import Mapping

import fsspec
import humanfriendly
import numpy as np

from .const import CHECKPOINT_FORMAT_VERSION
from .const import CHECKPOINT_MAGIC
from .errors import FormatError
from .utils import content_hash

logger = logging.getLogger(__name__)

_HEADER = struct.Struct("<II")
_NAME_LENGTH = struct.Struct("<H")
_NDIM = struct.Struct("<B")
_DIM = struct.Struct("<I")


def encode_checkpoint(arrays: Mapping[str, np.ndarray]) -> bytes:
    """
    Serializes named arrays into the versioned checkpoint container.

    Layout: magic, uint32 version, uint32 entry count, then per entry a
    uint16 name length, the UTF-8 name, a uint8 ndim, ndim uint32 dims and
    the float64 little-endian values in row-major order.
    """
    chunks = [
        CHECKPOINT_MAGIC,
        _HEADER.pack(CHECKPOINT_FORMAT_VERSION, len(arrays)),
    ]
    for name, array in arrays.items():
        encoded_name = name.encode("utf-8")
        values = np.ascontiguousarray(array, dtype="<f8")
        chunks.append(_NAME_LENGTH.pack(len(encoded_name)))
        chunks.append(encoded_name)
        chunks.append(_NDIM.pack(values.ndim))
        for dim in values.shape:
            chunks.append(_DIM.pack(dim))
        chunks.append(values.tobytes(order="C"))
    return b"".join(chunks)


def decode_checkpoint(data: bytes) -> Dict[str, np.ndarray]:
    offset = 0

    def take(size, what):
        nonlocal offset
        if offset + size > len(data):
            raise FormatError(
                f"Truncated checkpoint while reading {what} at offset {offset}: "
                f"expected {size} bytes but only {len(data) - offset} remain",
                offset,
            )
        chunk = data[offset : offset + size]
        offset += size
        return chunk

    magic = take(len(CHECKPOINT_MAGIC), "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(
            f"Bad checkpoint magic at offset 0: expected {CHECKPOINT_MAGIC!r} but got {magic!r}",
            0,
        )
    version, count = _HEADER.unpack(take(_HEADER.size, "header"))
    if version != CHECKPOINT_FORMAT_VERSION:
        raise FormatError(
            f"Unsupported checkpoint format version {version}, expected {CHECKPOINT_FORMAT_VERSION}",
            len(CHECKPOINT_MAGIC),
        )
    arrays: Dict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (name_length,) = _NAME_LENGTH.unpack(
            take(_NAME_LENGTH.size, "name length")
        )
        name_offset = offset
        try:
            name = take(name_length, "name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(
                f"Entry name at offset {name_offset} is not UTF-8: {e}", name_offset
            ) from e
        (ndim,) = _NDIM.unpack(take(_NDIM.size, f"ndim of {name}"))
        shape = tuple(
            _DIM.unpack(take(_DIM.size, f"shape of {name}"))[0]
            for _ in range(ndim)
        )
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = take(size * 8, f"values of {name}")
        arrays[name] = (
            np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
        )
    if offset != len(data):
        raise FormatError(
            f"Unexpected {len(data) - offset} trailing bytes at offset {offset}",
            offset,
        )
    return arrays


def save_checkpoint(path: str, arrays: Mapping[str, np.ndarray]) -> str:
    """
    Writes a checkpoint and returns its content hash.
    """
    data = encode_checkpoint(arrays)
    with fsspec.open(path, "wb") as f:
        f.write(data)
    logger.debug(
        f"Saved checkpoint {path} ({humanfriendly.format_size(len(data), binary=True)}, {len(arrays)} entries)"
    )
    return content_hash(data)


def load_checkpoint(path: str) -> Dict[str, np.ndarray]:
    try:
        with fsspec.open(path, "rb") as f:
            data = f.read()
    except FileNotFoundError:
        raise
    except OSError as e:
        raise FormatError(
            f"Error when reading checkpoint {path} at offset 0: error {e}", 0
        ) from e
    try:
        return decode_checkpoint(data)
    except FormatError as e:
        raise FormatError(f"{path}: {e}", e.offset) from e


def write_json(path: str, payload) -> None:
    with fsspec.open(path, "wb") as f:
        f.write(
            (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode(
                "utf-8"
            )
        )


def read_json(path: str):
    with fsspec.open(path, "rb") as f:
        return json.loads(f.read().decode("utf-8"))
