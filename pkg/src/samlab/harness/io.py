"""On-disk formats: binary checkpoints, metrics CSV and sweep CSV.

Checkpoint layout (all integers little-endian)::

    b"SAMLAB" + b"01"                     magic + 2-digit format version
    u32  entry count
    per entry (sorted by name):
        u16  name length, UTF-8 name bytes
        u8   rank, u32 x rank dimensions
        f64  x prod(dims) row-major data
    u32  CRC32 of every preceding byte
"""

from __future__ import annotations

import csv
import math
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import ChecksumError, MagicError, TruncatedError, VersionError
from ..tensor import ParamVector

MAGIC = b"SAMLAB"
FORMAT_VERSION = b"01"

SWEEP_FIELDS = (
    "axis",
    "value",
    "seed",
    "sam_enabled",
    "best_eval_accuracy",
    "best_eval_accuracy_step",
    "best_eval_loss",
    "best_eval_loss_step",
    "final_eval_accuracy",
    "final_eval_loss",
    "mean_step_wall_ms",
    "status",
    "error",
)


def encode_checkpoint(params: ParamVector) -> bytes:
    parts = [MAGIC, FORMAT_VERSION, struct.pack("<I", len(params))]
    for name, arr in params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_checkpoint(blob: bytes) -> ParamVector:
    if len(blob) < 8 or blob[:6] != MAGIC:
        raise MagicError("not a samlab checkpoint (bad magic)")
    if blob[6:8] != FORMAT_VERSION:
        raise VersionError(f"unsupported checkpoint version {blob[6:8]!r}")
    if len(blob) < 16:
        raise TruncatedError("checkpoint shorter than its fixed header and checksum")
    body, tail = blob[:-4], blob[-4:]
    pos = 8

    def need(k: int):
        if pos + k > len(body):
            raise TruncatedError(f"checkpoint truncated at byte {pos} (needed {k} more)")

    need(4)
    (count,) = struct.unpack_from("<I", body, pos)
    pos += 4
    entries = {}
    for _ in range(count):
        need(2)
        (nlen,) = struct.unpack_from("<H", body, pos)
        pos += 2
        need(nlen + 1)
        name = body[pos : pos + nlen].decode("utf-8", errors="replace")
        pos += nlen
        rank = body[pos]
        pos += 1
        need(4 * rank)
        dims = struct.unpack_from(f"<{rank}I", body, pos)
        pos += 4 * rank
        size = math.prod(dims)
        need(8 * size)
        data = np.frombuffer(body, dtype="<f8", count=size, offset=pos).astype(np.float64)
        pos += 8 * size
        entries[name] = data.reshape(dims)
    if zlib.crc32(body) != struct.unpack("<I", tail)[0]:
        raise ChecksumError("checkpoint CRC32 mismatch")
    if pos != len(body):
        raise TruncatedError(f"{len(body) - pos} unexpected trailing bytes before the checksum")
    return ParamVector(entries)


def save_checkpoint(params: ParamVector, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(params))
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> ParamVector:
    return decode_checkpoint(Path(path).read_bytes())


def format_float(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_float(v) if not isinstance(v, str) else v for v in row])
    return path


def read_csv(path) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        rows = list(r)
        return list(r.fieldnames or []), rows


class MetricsWriter:
    """Streams MetricsRecord rows to CSV in the fixed field order."""

    def __init__(self, path, fields):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.fields = tuple(fields)
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(self.fields)
        self._last_step = None

    def write(self, record) -> None:
        if self._last_step is not None and record.step <= self._last_step:
            raise ValueError(f"metrics step {record.step} does not increase past {self._last_step}")
        self._last_step = record.step
        self._w.writerow([format_float(getattr(record, f)) for f in self.fields])

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
