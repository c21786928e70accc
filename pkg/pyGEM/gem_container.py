#  Copyright (c) 2024 The pyGEM developers.
#  Distributed under the terms of the MIT license.
import json
import os
import struct
import tempfile
from typing import Any, Dict, Tuple, Union

import numpy as np
import numpy.typing as npt

from .gem_errors import GEMConsistencyError, GEMParseError

# Container layout:
#   magic (4 bytes) | version (1 byte) | metadata length (u32, little endian) | metadata (utf-8 json) | array blocks
# The metadata holds an "arrays" table of {name: {dtype, shape, offset, nbytes}}; offsets are relative to the first
# array block. Arrays are stored as raw little endian '<f8' or '<i8' data.

CONTAINER_VERSION = 1
_SUPPORTED_DTYPES = {"f": "<f8", "i": "<i8", "u": "<i8", "b": "<i8"}


def atomic_write_bytes(path: str, data: bytes) -> None:
    """
    Writes a file atomically; the file either has its old contents or the complete new contents.

    :param path: the destination path.
    :param data: the bytes to write.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_container(magic: bytes, metadata: Dict[str, Any], arrays: Dict[str, npt.NDArray]) -> bytes:
    """
    Serialises metadata and named arrays into a versioned container.

    :param magic: the 4 byte magic identifying the container kind.
    :param metadata: JSON-serialisable metadata.
    :param arrays: the arrays to store; floats are stored as float64 and integers/bools as int64.
    :return: the encoded container.
    """
    if len(magic) != 4:
        raise ValueError("Container magic must be exactly 4 bytes long!")
    table: Dict[str, Dict[str, Any]] = {}
    blocks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        if arr.dtype.kind not in _SUPPORTED_DTYPES:
            raise TypeError(f"Array '{name}' has unsupported dtype '{arr.dtype}'")
        dtype = _SUPPORTED_DTYPES[arr.dtype.kind]
        raw = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        table[name] = {"dtype": dtype, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        blocks.append(raw)
        offset += len(raw)
    meta = dict(metadata)
    meta["arrays"] = table
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return magic + struct.pack("<BI", CONTAINER_VERSION, len(meta_bytes)) + meta_bytes + b"".join(blocks)


def decode_container(data: bytes, magic: bytes,
                     source: str = "<bytes>") -> Tuple[Dict[str, Any], Dict[str, npt.NDArray]]:
    """
    Decodes a container produced by ``encode_container``.

    :param data: the raw container bytes.
    :param magic: the expected magic.
    :param source: a name for the data source used in error messages.
    :return: (metadata, arrays)
    """
    header_len = 4 + struct.calcsize("<BI")
    if len(data) < header_len:
        raise GEMParseError("File is too short to be a pyGEM container.", line=None, source=source)
    if data[:4] != magic:
        raise GEMConsistencyError(f"'{source}' has magic {data[:4]!r}, expected {magic!r}. Is this the right kind of "
                                  f"file?")
    version, meta_len = struct.unpack("<BI", data[4:header_len])
    if version != CONTAINER_VERSION:
        raise GEMConsistencyError(f"'{source}' has container version {version}, this build reads version "
                                  f"{CONTAINER_VERSION}.")
    try:
        meta = json.loads(data[header_len:header_len + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise GEMParseError(f"Corrupt container metadata: {e}", source=source)
    body = data[header_len + meta_len:]
    arrays: Dict[str, npt.NDArray] = {}
    for name, desc in meta.pop("arrays", {}).items():
        start, nbytes = desc["offset"], desc["nbytes"]
        if start + nbytes > len(body):
            raise GEMParseError(f"Array '{name}' is truncated.", source=source)
        arr = np.frombuffer(body[start:start + nbytes], dtype=np.dtype(desc["dtype"]))
        arrays[name] = arr.reshape(desc["shape"]).astype(arr.dtype.newbyteorder("="))
    return meta, arrays


def write_container(path: str, magic: bytes, metadata: Dict[str, Any], arrays: Dict[str, npt.NDArray]) -> None:
    atomic_write_bytes(path, encode_container(magic, metadata, arrays))


def read_container(path: Union[str, os.PathLike], magic: bytes) -> Tuple[Dict[str, Any], Dict[str, npt.NDArray]]:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Couldn't find the file: '{path}'")
    with open(path, "rb") as f:
        data = f.read()
    return decode_container(data, magic, source=str(path))
