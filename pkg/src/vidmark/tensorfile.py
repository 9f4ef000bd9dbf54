"""Raw tensor container: "DIMT" magic, version, dtype flag, rank,
little-endian u32 dims, then the payload (f32 LE or u8 for binary
masks). Round-trips bitwise.
"""
from __future__ import annotations

import struct

import numpy as np

MAGIC = b"DIMT"
VERSION = 1
_F32 = 0
_U8 = 1


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype == np.uint8:
        flag, payload = _U8, arr.tobytes()
    elif arr.dtype in (np.float32, np.float64):
        flag, payload = _F32, np.ascontiguousarray(arr, dtype="<f4").tobytes()
    else:
        raise ValueError(f"unsupported tensor dtype {arr.dtype}")
    header = MAGIC + bytes([VERSION, flag, arr.ndim])
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + payload


def tensor_from_bytes(blob: bytes) -> np.ndarray:
    if blob[:4] != MAGIC:
        raise ValueError("not a DIMT tensor (bad magic)")
    version, flag, rank = blob[4], blob[5], blob[6]
    if version != VERSION:
        raise ValueError(f"unsupported DIMT version {version}")
    if flag not in (_F32, _U8):
        raise ValueError(f"unknown dtype flag {flag}")
    dims = struct.unpack(f"<{rank}I", blob[7:7 + 4 * rank])
    payload = blob[7 + 4 * rank:]
    count = int(np.prod(dims)) if rank else 1
    size = 1 if flag == _U8 else 4
    if len(payload) != count * size:
        raise ValueError(f"payload length {len(payload)} does not match dims {dims}")
    dtype = np.uint8 if flag == _U8 else np.dtype("<f4")
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return np.ascontiguousarray(arr.astype(np.float32) if flag == _F32 else arr)


def write_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(tensor_to_bytes(arr))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        return tensor_from_bytes(f.read())
