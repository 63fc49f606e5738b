"""Bit-exact rank-2 tensor container.

Layout: an 8-byte little-endian unsigned header length N, N bytes of UTF-8
JSON mapping tensor names to {"dtype", "shape", "data_offsets"}, then the raw
payload. Offsets are relative to the payload start, data is row-major
little-endian. This matches the widely deployed JSON-header convention, so
externally produced embedding files load directly (a "__metadata__" entry is
tolerated and ignored).

Only matrices are supported; in-memory data is always float32 regardless of
the declared storage width.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import TensorFormatError

_WIDTHS = {"F32": 4, "F16": 2, "BF16": 2}


@dataclass
class EmbeddingTable:
    """A [vocab_size x hidden_dim] matrix with a declared storage width."""

    data: np.ndarray
    element_width: str = "F32"
    name: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise TensorFormatError(
                f"tensor {self.name!r} must be rank 2, got rank {self.data.ndim}"
            )
        if self.element_width not in _WIDTHS:
            raise TensorFormatError(f"unsupported dtype {self.element_width!r}")

    @property
    def vocab_size(self) -> int:
        return self.data.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.data.shape[1]


def _f32_to_bf16_bits(arr: np.ndarray) -> np.ndarray:
    """Round-to-nearest-even truncation of float32 to bfloat16 bit patterns."""
    bits = np.ascontiguousarray(arr, dtype="<f4").view("<u4")
    nan_mask = np.isnan(arr)
    rounding = np.uint32(0x7FFF) + ((bits >> np.uint32(16)) & np.uint32(1))
    out = ((bits + rounding) >> np.uint32(16)).astype("<u2")
    if nan_mask.any():
        # keep NaNs quiet instead of letting the bias overflow the exponent
        out[nan_mask] = ((bits[nan_mask] >> np.uint32(16)) | np.uint32(0x40)).astype("<u2")
    return out


def _encode_payload(table: EmbeddingTable) -> bytes:
    if table.element_width == "F32":
        return np.ascontiguousarray(table.data, dtype="<f4").tobytes()
    if table.element_width == "F16":
        return table.data.astype("<f2").tobytes()
    return _f32_to_bf16_bits(table.data).tobytes()


def _decode_payload(raw: bytes, dtype: str, shape) -> np.ndarray:
    if dtype == "F32":
        flat = np.frombuffer(raw, dtype="<f4").astype(np.float32)
    elif dtype == "F16":
        flat = np.frombuffer(raw, dtype="<f2").astype(np.float32)
    else:
        bits = np.frombuffer(raw, dtype="<u2").astype(np.uint32) << np.uint32(16)
        flat = bits.view(np.float32)
    return flat.reshape(shape)


def write_tensor(path, tables: Sequence, allow_nan: bool = False) -> None:
    """Serialize tables deterministically (entries sorted by name) and move the
    finished file into place atomically."""
    by_name = {}
    for table in tables:
        if not table.name:
            raise TensorFormatError("every tensor needs a nonempty name")
        if table.name in by_name:
            raise TensorFormatError(f"duplicate tensor name {table.name!r}")
        if not allow_nan and bool(np.isnan(table.data).any()):
            raise TensorFormatError(f"tensor {table.name!r} contains NaN values")
        if table.vocab_size <= 0 or table.hidden_dim <= 0:
            raise TensorFormatError(f"tensor {table.name!r} has an empty dimension")
        by_name[table.name] = table

    header = {}
    chunks = []
    offset = 0
    for name in sorted(by_name):
        payload = _encode_payload(by_name[name])
        header[name] = {
            "dtype": by_name[name].element_width,
            "shape": list(by_name[name].data.shape),
            "data_offsets": [offset, offset + len(payload)],
        }
        chunks.append(payload)
        offset += len(payload)

    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for chunk in chunks:
            fh.write(chunk)
    os.replace(tmp, path)


def _read_header(path):
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise TensorFormatError(f"cannot read tensor file {path}: {exc}") from exc
    if len(blob) < 8:
        raise TensorFormatError(f"{path}: file shorter than the 8-byte length prefix")
    (header_len,) = struct.unpack("<Q", blob[:8])
    if header_len > len(blob) - 8:
        raise TensorFormatError(f"{path}: declared header length {header_len} overruns file")
    try:
        header = json.loads(blob[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise TensorFormatError(f"{path}: malformed JSON header: {exc}") from exc
    if not isinstance(header, dict):
        raise TensorFormatError(f"{path}: header must be a JSON object")
    header.pop("__metadata__", None)
    payload = blob[8 + header_len:]

    entries = {}
    for name, info in header.items():
        try:
            dtype = info["dtype"]
            shape = [int(d) for d in info["shape"]]
            begin, end = (int(x) for x in info["data_offsets"])
        except (KeyError, TypeError, ValueError) as exc:
            raise TensorFormatError(f"{path}: malformed entry {name!r}: {exc}") from exc
        if dtype not in _WIDTHS:
            raise TensorFormatError(f"{path}: entry {name!r} has unsupported dtype {dtype!r}")
        if len(shape) != 2 or shape[0] <= 0 or shape[1] <= 0:
            raise TensorFormatError(f"{path}: entry {name!r} must be a positive-size matrix")
        expected = shape[0] * shape[1] * _WIDTHS[dtype]
        if end - begin != expected:
            raise TensorFormatError(
                f"{path}: entry {name!r} spans {end - begin} bytes, shape implies {expected}"
            )
        entries[name] = (dtype, shape, begin, end)

    cursor = 0
    for name in sorted(entries, key=lambda k: entries[k][2]):
        _, _, begin, end = entries[name]
        if begin != cursor:
            raise TensorFormatError(
                f"{path}: entry {name!r} offsets [{begin},{end}) overlap or leave a gap"
            )
        cursor = end
    if cursor != len(payload):
        raise TensorFormatError(
            f"{path}: payload is {len(payload)} bytes but entries cover {cursor}"
        )
    return entries, payload


def read_tensor_names(path) -> list:
    entries, _ = _read_header(path)
    return sorted(entries)


def read_tensor(path, name: str) -> EmbeddingTable:
    """Load one named matrix; bytes are interpreted, never re-encoded on disk."""
    entries, payload = _read_header(path)
    if name not in entries:
        raise TensorFormatError(f"{path}: no tensor named {name!r} (have {sorted(entries)})")
    dtype, shape, begin, end = entries[name]
    return EmbeddingTable(_decode_payload(payload[begin:end], dtype, shape), dtype, name)


def read_all_tensors(path) -> dict:
    entries, payload = _read_header(path)
    return {
        name: EmbeddingTable(_decode_payload(payload[b:e], dtype, shape), dtype, name)
        for name, (dtype, shape, b, e) in entries.items()
    }
