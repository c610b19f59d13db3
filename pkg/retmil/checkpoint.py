"""
Model checkpoints.

The binary file holds the parameter table:

    "RMCK"       4 ASCII bytes
    version      uint32
    count        uint32, number of parameters
    then per parameter, in sorted name order:
      name length  uint16, followed by the UTF-8 name
      rank         uint8, followed by rank uint32 dimensions
      values       float32, little endian, row major

Next to it, `<path>.json` holds the model configuration, which is needed to
rebuild the model before the values can be loaded.
"""

import json
import logging
from pathlib import Path
import struct

import numpy as np

from .errors import ConfigError, FormatError
from .model import ModelConfig, RetMILModel
from .util import atomic_write


logger = logging.getLogger(__name__)

MAGIC = b"RMCK"
VERSION = 1
HEADER = struct.Struct("<4sII")
NAME_LENGTH = struct.Struct("<H")
RANK = struct.Struct("<B")
DIM = struct.Struct("<I")
VALUE_DTYPE = np.dtype("<f4")


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_checkpoint(model, path):
    path = Path(path)
    items = model.store.items()
    with atomic_write(path) as f:
        f.write(HEADER.pack(MAGIC, VERSION, len(items)))
        for name, tensor in items:
            encoded = name.encode("utf-8")
            f.write(NAME_LENGTH.pack(len(encoded)))
            f.write(encoded)
            f.write(RANK.pack(tensor.ndim))
            for dim in tensor.shape:
                f.write(DIM.pack(dim))
            f.write(np.ascontiguousarray(tensor.data, dtype=VALUE_DTYPE).tobytes())
    with atomic_write(sidecar_path(path), "w") as f:
        json.dump({"format_version": VERSION, "model": model.config.to_dict()},
                  f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info("Saved checkpoint with %d parameters to %s", len(items), path)


class _Reader:

    "Keeps track of the offset, for error messages."

    def __init__(self, data):
        self.data = data
        self.offset = 0

    def read(self, size, what):
        if self.offset + size > len(self.data):
            raise FormatError(f"Truncated checkpoint while reading {what}", offset=self.offset)
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt, what):
        return fmt.unpack(self.read(fmt.size, what))


def read_parameter_table(path):
    "{name: float32 array} from a binary checkpoint."
    reader = _Reader(Path(path).read_bytes())
    magic, version, count = reader.unpack(HEADER, "header")
    if magic != MAGIC:
        raise FormatError(f"Not a checkpoint, expected magic {MAGIC.decode()!r}, got {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"Unsupported checkpoint version {version}, expected {VERSION}", offset=4)
    table = {}
    for _ in range(count):
        (length,) = reader.unpack(NAME_LENGTH, "name length")
        name = reader.read(length, "name").decode("utf-8")
        (rank,) = reader.unpack(RANK, f"rank of {name}")
        shape = tuple(reader.unpack(DIM, f"shape of {name}")[0] for _ in range(rank))
        size = int(np.prod(shape)) * VALUE_DTYPE.itemsize
        values = np.frombuffer(reader.read(size, f"values of {name}"), dtype=VALUE_DTYPE)
        table[name] = values.reshape(shape)
    if reader.offset != len(reader.data):
        raise FormatError("Trailing data after the parameter table", offset=reader.offset)
    return table


def load_checkpoint(path):
    "Rebuild the model from the sidecar config and load the stored values."
    path = Path(path)
    sidecar = sidecar_path(path)
    try:
        with open(sidecar) as f:
            meta = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"Checkpoint config {sidecar} is missing")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Checkpoint config {sidecar} is not valid JSON: {e}")
    if meta.get("format_version") != VERSION:
        raise ConfigError(f"Unsupported checkpoint config version {meta.get('format_version')}")
    try:
        config = ModelConfig(**meta["model"])
    except (KeyError, TypeError) as e:
        raise ConfigError(f"Bad model config in {sidecar}: {e}")

    model = RetMILModel(config)
    table = read_parameter_table(path)
    expected, found = set(model.store), set(table)
    if expected != found:
        raise FormatError(f"Parameter names don't match the model: missing {sorted(expected - found)}, "
                          f"unexpected {sorted(found - expected)}")
    for name, tensor in model.store.items():
        if table[name].shape != tensor.shape:
            raise FormatError(f"Parameter {name} has shape {table[name].shape}, model expects {tensor.shape}")
        tensor.data[...] = table[name]
    logger.debug("Loaded checkpoint %s", path)
    return model
