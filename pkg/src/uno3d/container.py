"""Bit-exact tensor files and dataset directories with a JSON manifest.

Tensor file layout (all integers little-endian)::

    b"NOPD" | version u16 | dtype code u8 (1 = f32, 2 = f64) | rank u8
    | extents u64 x rank | values, row-major, little-endian

A dataset is a directory holding ``manifest.json`` and the tensor files it
lists.  The manifest is written once, after every sample file exists.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "ContainerError",
    "write_tensor",
    "read_tensor",
    "read_header",
    "derive_seed",
    "SEED_DERIVATION",
    "DatasetWriter",
    "Dataset",
    "MANIFEST",
]

MAGIC = b"NOPD"
FORMAT_VERSION = 1
MANIFEST = "manifest.json"
_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_NAMES = {"f32": 1, "f64": 2}
_HEAD = struct.Struct("<4sHBB")
SEED_DERIVATION = "SeedSequence(entropy=root_seed, spawn_key=(index,)).generate_state(1, uint64)[0]"


class ContainerError(ValueError):
    pass


def write_tensor(path, array, dtype: str = "f32") -> Path:
    """Write ``array`` as ``dtype`` ('f32' or 'f64'); returns the path."""
    if dtype not in _NAMES:
        raise ContainerError(f"unsupported dtype {dtype!r}; use 'f32' or 'f64'")
    code = _NAMES[dtype]
    a = np.asarray(array)
    if np.iscomplexobj(a):
        raise ContainerError("complex tensors must be stored as a trailing (re, im) axis")
    if a.ndim > 255:
        raise ContainerError("rank exceeds 255")
    # ascontiguousarray would promote a 0-d array to rank 1
    data = np.ascontiguousarray(a, dtype=_CODES[code]).reshape(a.shape)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, FORMAT_VERSION, code, data.ndim))
        fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
        fh.write(data.tobytes(order="C"))
    os.replace(tmp, path)
    return path


def _parse_header(fh, path):
    raw = fh.read(_HEAD.size)
    if len(raw) < _HEAD.size:
        raise ContainerError(f"{path}: truncated header")
    magic, version, code, rank = _HEAD.unpack(raw)
    if magic != MAGIC:
        raise ContainerError(f"{path}: bad magic {magic!r}, not a tensor file")
    if version != FORMAT_VERSION:
        raise ContainerError(f"{path}: format version {version} is not supported (expected {FORMAT_VERSION})")
    if code not in _CODES:
        raise ContainerError(f"{path}: unknown dtype code {code}")
    ext = fh.read(8 * rank)
    if len(ext) < 8 * rank:
        raise ContainerError(f"{path}: truncated extents")
    shape = struct.unpack(f"<{rank}Q", ext)
    return _CODES[code], tuple(int(n) for n in shape)


def read_header(path) -> dict:
    path = Path(path)
    with open(path, "rb") as fh:
        dt, shape = _parse_header(fh, path)
    return {"dtype": "f32" if dt.itemsize == 4 else "f64", "shape": list(shape), "version": FORMAT_VERSION}


def read_tensor(path) -> np.ndarray:
    """Read a tensor file in its stored precision (native byte order)."""
    path = Path(path)
    with open(path, "rb") as fh:
        dt, shape = _parse_header(fh, path)
        n = int(np.prod(shape, dtype=np.int64))
        buf = fh.read()
    if len(buf) != n * dt.itemsize:
        raise ContainerError(f"{path}: expected {n * dt.itemsize} data bytes, found {len(buf)}")
    return np.frombuffer(buf, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))


def derive_seed(root_seed: int, index: int) -> int:
    """Per-sample seed, independent of worker scheduling."""
    ss = np.random.SeedSequence(entropy=int(root_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class DatasetWriter:
    """Collects sample entries and writes the manifest once at the end."""

    root: Path
    kind: str
    root_seed: int | None = None
    configs: dict = field(default_factory=dict)
    units: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    samples: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def __post_init__(self):
        self.root = Path(self.root)
        self.root.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, array, dtype: str = "f32") -> dict:
        path = write_tensor(self.root / name, array, dtype)
        return {"path": path.name, "dtype": dtype, "shape": list(np.shape(array))}

    def add_sample(self, index: int, files: dict, **meta):
        self.samples.append({"index": int(index), "files": files, **meta})

    def add_failure(self, index: int, reason: str, **meta):
        self.failures.append({"index": int(index), "reason": reason, **meta})

    def manifest(self) -> dict:
        samples = sorted(self.samples, key=lambda s: s["index"])
        return {
            "format": MAGIC.decode(),
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "root_seed": self.root_seed,
            "seed_derivation": SEED_DERIVATION,
            "count": len(samples),
            "configs": self.configs,
            "units": self.units,
            "samples": samples,
            "failures": sorted(self.failures, key=lambda s: s["index"]),
            **self.extra,
        }

    def close(self) -> Path:
        path = self.root / MANIFEST
        tmp = path.with_name(MANIFEST + ".tmp")
        tmp.write_text(json.dumps(self.manifest(), indent=1, sort_keys=True))
        os.replace(tmp, path)
        return path


class Dataset:
    """Read side of a dataset directory."""

    def __init__(self, root, verify: bool = True):
        self.root = Path(root)
        path = self.root / MANIFEST
        if not self.root.is_dir():
            raise ContainerError(f"{self.root}: no such dataset directory")
        if not path.exists():
            raise ContainerError(f"{self.root}: missing {MANIFEST}")
        try:
            self.manifest = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ContainerError(f"{path}: invalid JSON ({exc})") from exc
        if self.manifest.get("format") != MAGIC.decode():
            raise ContainerError(f"{path}: not a dataset manifest")
        if self.manifest.get("format_version") != FORMAT_VERSION:
            raise ContainerError(f"{path}: format version {self.manifest.get('format_version')} is not supported")
        if verify:
            self.verify()

    @property
    def kind(self) -> str:
        return self.manifest["kind"]

    @property
    def samples(self) -> list:
        return self.manifest["samples"]

    @property
    def configs(self) -> dict:
        return self.manifest.get("configs", {})

    def __len__(self):
        return len(self.samples)

    def verify(self):
        if self.manifest.get("count") != len(self.samples):
            raise ContainerError(f"{self.root}: manifest count does not match its sample list")
        for s in self.samples:
            for key, entry in s["files"].items():
                p = self.root / entry["path"]
                if not p.exists():
                    raise ContainerError(f"{p}: listed in the manifest but missing")
                head = read_header(p)
                if head["dtype"] != entry["dtype"] or head["shape"] != entry["shape"]:
                    raise ContainerError(f"{p}: header {head} disagrees with the manifest entry {entry}")

    def load(self, i: int, key: str, dtype=np.float64) -> np.ndarray:
        entry = self.samples[i]["files"][key]
        a = read_tensor(self.root / entry["path"])
        return a if dtype is None else a.astype(dtype)

    def stack(self, key: str, dtype=np.float64) -> np.ndarray:
        return np.stack([self.load(i, key, dtype) for i in range(len(self))]) if len(self) else np.zeros((0,))
