import csv
import hashlib
import io
import logging
import os
from typing import Dict
from typing import Iterable
from typing import List
from typing import Sequence

import fsspec
import mmh3
import numpy as np


def set_log_level(logger, options):
    if "log_level" in options:
        log_level = options["log_level"].upper()
        if log_level == "DEBUG":
            logger.setLevel(logging.DEBUG)
        elif log_level == "INFO":
            logger.setLevel(logging.INFO)
        elif log_level == "WARN" or log_level == "WARNING":
            logger.setLevel(logging.WARN)
        else:
            logger.warning(f"Unsupported log level: {log_level}")


def configure_logging(dir, name="zocertify", log_level=logging.INFO):
    """
    Attaches a file handler writing <dir>/<name>.log to the package logger
    and returns it, so the caller can detach it when the run ends.
    """
    os.makedirs(dir, exist_ok=True)
    log_path = os.path.join(dir, name + ".log")
    handler = logging.FileHandler(log_path)
    handler.setFormatter(
        logging.Formatter(
            "%(asctime)s - %(levelname)s - %(name)s - %(message)s"
        )
    )
    root = logging.getLogger("zocertify")
    root.addHandler(handler)
    root.setLevel(log_level)
    return handler


def derive_seed(root_seed: int, stream: str, *indices: int) -> int:
    """
    Derive an independent seed for a named substream of a root seed.

    The derivation depends only on (root_seed, stream, indices), so the noise
    drawn for an example does not depend on iteration order or on which
    other substreams were consumed before it.
    """
    key = bytearray(stream.encode("utf-8"))
    key += int(root_seed).to_bytes(16, "little", signed=True)
    for index in indices:
        key += int(index).to_bytes(8, "little", signed=True)
    return mmh3.hash128(bytes(key), int(root_seed) & 0xFFFFFFFF, signed=False)


def substream(root_seed: int, stream: str, *indices: int):
    return np.random.default_rng(derive_seed(root_seed, stream, *indices))


def content_hash(data: bytes) -> str:
    """Git blob style SHA-1 of a byte string."""
    hasher = hashlib.sha1()
    hasher.update(f"blob {len(data)}\0".encode("utf-8"))
    hasher.update(data)
    return hasher.hexdigest()


def file_content_hash(path: str) -> str:
    with fsspec.open(path, "rb") as f:
        return content_hash(f.read())


def join_path(base: str, *parts: str) -> str:
    if "://" in base:
        return "/".join([base.rstrip("/")] + [p.strip("/") for p in parts])
    return os.path.join(base, *parts)


def makedirs(path: str):
    fs, _, paths = fsspec.get_fs_token_paths(path)
    fs.makedirs(paths[0], exist_ok=True)


def path_exists(path: str) -> bool:
    fs, _, paths = fsspec.get_fs_token_paths(path)
    return fs.exists(paths[0])


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: str, fields: Sequence[str], rows: Iterable[Sequence]):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(fields)
    for row in rows:
        if len(row) != len(fields):
            raise ValueError(
                f"CSV row has {len(row)} values but header has {len(fields)}: {row}"
            )
        writer.writerow([format_value(v) for v in row])
    with fsspec.open(path, "wb") as f:
        f.write(buffer.getvalue().encode("utf-8"))


def read_csv(path: str) -> List[Dict[str, str]]:
    with fsspec.open(path, "rb") as f:
        text = f.read().decode("utf-8")
    return list(csv.DictReader(io.StringIO(text)))
