"""Single-file checkpoint container: magic 'LSD1', JSON manifest, raw payloads.

Layout: 4-byte magic, uint64 little-endian header length, UTF-8 JSON header,
then each tensor's bytes (C order, little-endian) in manifest order. The
header carries (name, dtype, shape) per tensor plus a free-form meta dict
(RNG state, step counters, flags such as frozen). Round trips are exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .nn import Module

MAGIC = b"LSD1"
_ALLOWED_DTYPES = {"float32", "float64", "int64", "uint8", "uint32", "uint64", "int32"}


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray],
                    meta: dict | None = None) -> None:
    path = Path(path)
    entries = []
    blobs = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if not arr.flags.c_contiguous:  # ascontiguousarray would promote 0-d to 1-d
            arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.name
        if dtype not in _ALLOWED_DTYPES:
            raise ValueError(f"{name}: unsupported dtype {dtype}")
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps({"version": 1, "tensors": entries, "meta": meta or {}},
                        sort_keys=True).encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        tensors: dict[str, np.ndarray] = {}
        for entry in header["tensors"]:
            dtype = np.dtype(entry["dtype"]).newbyteorder("<")
            shape = tuple(entry["shape"])
            nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
            raw = f.read(nbytes)
            if len(raw) != nbytes:
                raise ValueError(
                    f"{path}: truncated payload for '{entry['name']}' "
                    f"(wanted {nbytes} bytes, got {len(raw)})")
            tensors[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        trailing = f.read(1)
        if trailing:
            raise ValueError(f"{path}: trailing bytes after last payload")
    return tensors, header["meta"]


def pack_module(module: Module, prefix: str = "") -> dict[str, np.ndarray]:
    """Flatten parameters plus Adam moments and step counters for saving."""
    out: dict[str, np.ndarray] = {}
    for name, p in module.named_parameters(prefix):
        out[name] = p.tensor.data
        if p.moment1 is not None:
            out[name + ".m1"] = p.moment1
            out[name + ".m2"] = p.moment2
            out[name + ".steps"] = np.asarray(p.steps, dtype=np.int64)
    return out


def unpack_module(module: Module, tensors: dict[str, np.ndarray],
                  prefix: str = "") -> None:
    """Restore parameters and optimizer state written by pack_module."""
    for name, p in module.named_parameters(prefix):
        if name not in tensors:
            raise KeyError(f"checkpoint missing tensor '{name}'")
        arr = tensors[name]
        if arr.shape != p.tensor.shape:
            raise ValueError(f"{name}: shape {arr.shape} != {p.tensor.shape}")
        p.tensor.data = arr.astype(p.tensor.dtype, copy=True)
        if name + ".m1" in tensors:
            p.moment1 = tensors[name + ".m1"].copy()
            p.moment2 = tensors[name + ".m2"].copy()
            p.steps = int(tensors[name + ".steps"])


def rng_meta(rng: np.random.Generator) -> dict:
    """Serialize the full bit-generator state for bitwise resume."""
    return json.loads(json.dumps(rng.bit_generator.state))


def rng_from_meta(state: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)
