"""
Binary container shared by datasets, checkpoints and adversarial clip sets.

Byte layout (all integers little-endian):

    magic        4 bytes   b"TTVC"
    version      u32
    manifest_len u64
    manifest     manifest_len bytes, UTF-8 JSON with sorted keys
    record_count u32
    record_count times:
        name_len   u16
        name       name_len bytes, UTF-8
        dtype      u8       1 = float32, 2 = float64, 3 = int64
        ndim       u8
        dims       ndim x u64
        data_len   u64      must equal prod(dims) * itemsize
        data       data_len bytes, row-major
"""
import json
import os
import struct
import tempfile
from collections import OrderedDict
from typing import Any, Dict, Sequence, Tuple

import numpy as np

from tt_video_attack.errors import FormatError


MAGIC = b"TTVC"
VERSION = 1

DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
CODE_FOR_KIND = {(dtype.kind, dtype.itemsize): code for code, dtype in DTYPE_CODES.items()}


def canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


def _dtype_code(array: np.ndarray) -> int:
    key = (array.dtype.kind, array.dtype.itemsize)
    if key not in CODE_FOR_KIND:
        raise TypeError(f"Unsupported record dtype: {array.dtype}")
    return CODE_FOR_KIND[key]


def encode_container(manifest: Dict, records: Sequence[Tuple[str, np.ndarray]]) -> bytes:
    manifest_bytes = canonical_json(manifest).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", len(manifest_bytes)), manifest_bytes]
    chunks.append(struct.pack("<I", len(records)))
    for name, array in records:
        code = _dtype_code(array)
        data = np.ascontiguousarray(array, dtype=DTYPE_CODES[code]).tobytes()
        name_bytes = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<BB", code, array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        chunks.append(struct.pack("<Q", len(data)))
        chunks.append(data)
    return b"".join(chunks)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.data):
            raise FormatError(f"Truncated container while reading {what}", self.offset)
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_container(data: bytes) -> Tuple[Dict, "OrderedDict[str, np.ndarray]"]:
    reader = _Reader(data)
    if reader.take(4, "magic") != MAGIC:
        raise FormatError("Bad magic, not a container file", 0)
    (version,) = reader.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"Unsupported container version {version}", 4)
    (manifest_len,) = reader.unpack("<Q", "manifest length")
    manifest_offset = reader.offset
    try:
        manifest = json.loads(reader.take(manifest_len, "manifest").decode("utf-8"))
    except (UnicodeDecodeError, ValueError):
        raise FormatError("Corrupt manifest header", manifest_offset)
    if not isinstance(manifest, dict):
        raise FormatError("Manifest is not a JSON object", manifest_offset)

    (count,) = reader.unpack("<I", "record count")
    records: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        record_offset = reader.offset
        (name_len,) = reader.unpack("<H", "record name length")
        try:
            name = reader.take(name_len, "record name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("Corrupt record name", record_offset)
        code, ndim = reader.unpack("<BB", "record dtype")
        if code not in DTYPE_CODES:
            raise FormatError(f"Unknown dtype code {code} in record {name}", record_offset)
        dims = reader.unpack(f"<{ndim}Q", "record dims")
        (data_len,) = reader.unpack("<Q", "record length")
        dtype = DTYPE_CODES[code]
        expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        if data_len != expected:
            raise FormatError(
                f"Record {name} declares {data_len} bytes but its shape {tuple(dims)} needs {expected}", record_offset
            )
        payload = reader.take(data_len, f"record {name}")
        if name in records:
            raise FormatError(f"Duplicate record {name}", record_offset)
        records[name] = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
    if reader.offset != len(data):
        raise FormatError("Trailing bytes after the last record", reader.offset)
    return manifest, records


def write_atomic(path: str, payload: bytes) -> None:
    """Write through a temp file in the target directory, then rename over `path`."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp = tempfile.NamedTemporaryFile(dir=directory, prefix=".tmp-", delete=False)
    try:
        tmp.write(payload)
        tmp.close()
        os.replace(tmp.name, path)
    except BaseException:
        tmp.close()
        if os.path.exists(tmp.name):
            os.unlink(tmp.name)
        raise


def write_container(path: str, manifest: Dict, records: Sequence[Tuple[str, np.ndarray]]) -> None:
    write_atomic(path, encode_container(manifest, records))


def read_container(path: str) -> Tuple[Dict, "OrderedDict[str, np.ndarray]"]:
    with open(path, "rb") as handle:
        return decode_container(handle.read())
