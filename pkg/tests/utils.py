import configparser
import io
import os
import struct

import numpy as np

from tests.conftest import TEST_DIR

TINY_CONFIG_PATH = os.path.join(TEST_DIR, "tiny.ini")


def tiny_config_text(**sections):
    """
    The tiny experiment config with keys replaced or added, e.g.
    tiny_config_text(train={"epochs": "2"}).
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.read(TINY_CONFIG_PATH)
    for section, values in sections.items():
        if not parser.has_section(section):
            parser.add_section(section)
        for key, value in values.items():
            parser.set(section, key, str(value))
    buffer = io.StringIO()
    parser.write(buffer)
    return buffer.getvalue()


def write_config(directory, text=None, name="experiment.ini", **sections):
    path = os.path.join(str(directory), name)
    with open(path, "w") as f:
        f.write(text if text is not None else tiny_config_text(**sections))
    return path


def write_idx(path, array, magic):
    array = np.asarray(array, dtype=np.uint8)
    header = struct.pack(">I", magic) + b"".join(
        struct.pack(">I", d) for d in array.shape
    )
    with open(path, "wb") as f:
        f.write(header + array.tobytes())
