"""
Binary container for cached arrays.

Layout (little-endian):

    8 bytes   magic b"AECNRC01"
    4 bytes   uint32 length H of the header
    H bytes   UTF-8 JSON header:
              {"kind": str, "metadata": {...},
               "arrays": [{"name": str, "dtype": str, "shape": [int, ...]}, ...]}
    ...       raw row-major bytes of each array, in header order
"""

import json
import struct
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from errors import InvalidInputError

MAGIC = b"AECNRC01"
_LENGTH = struct.Struct("<I")


def save_arrays(
    path: Union[str, Path],
    kind: str,
    arrays: Dict[str, np.ndarray],
    metadata: Dict[str, Any] = None,
) -> Path:
    """Write named arrays and JSON-serializable metadata to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    prepared = {
        name: np.ascontiguousarray(arr, dtype=np.asarray(arr).dtype.newbyteorder("<"))
        for name, arr in arrays.items()
    }
    header = {
        "kind": kind,
        "metadata": metadata or {},
        "arrays": [
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)}
            for name, arr in prepared.items()
        ],
    }
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_LENGTH.pack(len(encoded)))
        f.write(encoded)
        for arr in prepared.values():
            f.write(arr.tobytes(order="C"))
    return path


def load_arrays(path: Union[str, Path]) -> Tuple[str, Dict[str, Any], Dict[str, np.ndarray]]:
    """Read a container; returns (kind, metadata, arrays)."""
    path = Path(path)
    blob = path.read_bytes()
    if not blob.startswith(MAGIC):
        raise InvalidInputError(f"{path} is not an aecnr container")
    offset = len(MAGIC)
    (length,) = _LENGTH.unpack_from(blob, offset)
    offset += _LENGTH.size
    header = json.loads(blob[offset:offset + length].decode("utf-8"))
    offset += length

    arrays: Dict[str, np.ndarray] = {}
    for spec in header["arrays"]:
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        data = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
        arrays[spec["name"]] = data.reshape(spec["shape"]).copy()
        offset += count * dtype.itemsize
    if offset != len(blob):
        raise InvalidInputError(f"{path}: {len(blob) - offset} trailing bytes")
    return header["kind"], header["metadata"], arrays
