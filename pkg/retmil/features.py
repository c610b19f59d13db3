"""
Reading and writing feature files.

The layout is deliberately trivial:

    "RMIL"       4 ASCII bytes
    version      uint32, little endian (currently 1)
    N            uint32
    d            uint32
    values       N * d float32, little endian, row major

so a 1 x 1 file is 20 bytes.
"""

import struct
from typing import BinaryIO, Tuple

import numpy as np

from .errors import FormatError
from .sequencer import FeatureSequence
from .util import atomic_write


MAGIC = b"RMIL"
VERSION = 1
HEADER = struct.Struct("<4sIII")
VALUE_DTYPE = np.dtype("<f4")


def _write_features(seq: FeatureSequence, dest: BinaryIO):
    n, d = seq.features.shape
    dest.write(HEADER.pack(MAGIC, VERSION, n, d))
    dest.write(np.ascontiguousarray(seq.features, dtype=VALUE_DTYPE).tobytes())


def write_features(path, seq):
    if not isinstance(seq, FeatureSequence):
        seq = FeatureSequence(seq)
    with atomic_write(path) as f:
        _write_features(seq, f)


def _read_header(f: BinaryIO) -> Tuple[int, int]:
    header = f.read(HEADER.size)
    if len(header[:4]) < 4 or header[:4] != MAGIC:
        raise FormatError(f"Not a feature file, expected magic {MAGIC.decode()!r}, "
                          f"got {header[:4]!r}", offset=0)
    if len(header) < HEADER.size:
        raise FormatError("Truncated header", offset=len(header))
    _, version, n, d = HEADER.unpack(header)
    if version != VERSION:
        raise FormatError(f"Unsupported feature file version {version}, expected {VERSION}", offset=4)
    if n == 0:
        raise FormatError("Feature file holds no tokens (N = 0)", offset=8)
    if d == 0:
        raise FormatError("Feature dimension is 0", offset=12)
    return n, d


def read_header(path):
    "(N, d) of a feature file, without reading the values."
    with open(path, "rb") as f:
        return _read_header(f)


def read_features(path) -> FeatureSequence:
    with open(path, "rb") as f:
        n, d = _read_header(f)
        expected = n * d * VALUE_DTYPE.itemsize
        payload = f.read(expected)
        if len(payload) < expected:
            raise FormatError(f"Truncated feature file, expected {expected} bytes of values",
                              offset=HEADER.size + len(payload))
        if f.read(1):
            raise FormatError("Trailing data after the feature values",
                              offset=HEADER.size + expected)
    values = np.frombuffer(payload, dtype=VALUE_DTYPE).reshape(n, d)
    return FeatureSequence(values.astype(np.float32))


def file_size(n, d):
    return HEADER.size + n * d * VALUE_DTYPE.itemsize
