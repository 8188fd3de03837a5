"""On-disk format: raw little-endian float64 arrays plus JSON manifests.

Every array lives in its own ``.bin`` file (row-major, no header).  The
manifest that references it records the file name, shape, dtype (always
``<f8``) and SHA-256 of the bytes; readers verify all of them.  Manifests
are written with sorted keys and no timestamps so that identical inputs
produce identical bytes.  Writes go to a temporary name first and are then
renamed, so a killed process never leaves a half-written file behind.
"""

import hashlib
import json
import os
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
DTYPE = "<f8"


class StorageError(RuntimeError):
    """Missing, corrupt or mismatched stored data."""


def _atomic_write(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_json(path, obj):
    _atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_array(directory, name, array):
    """Store ``array`` as ``directory/name.bin``; returns its manifest entry."""
    arr = np.ascontiguousarray(array, dtype=DTYPE)
    data = arr.tobytes()
    fname = f"{name}.bin"
    _atomic_write(Path(directory) / fname, data)
    return {"file": fname, "shape": list(arr.shape), "dtype": DTYPE, "sha256": hashlib.sha256(data).hexdigest()}


def read_array(directory, entry):
    path = Path(directory) / entry["file"]
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise StorageError(f"missing array file {path}") from None
    if entry.get("dtype") != DTYPE:
        raise StorageError(f"{path}: unsupported dtype {entry.get('dtype')!r}")
    if hashlib.sha256(data).hexdigest() != entry["sha256"]:
        raise StorageError(f"{path}: checksum mismatch")
    shape = tuple(entry["shape"])
    if len(data) != 8 * int(np.prod(shape, dtype=np.int64)):
        raise StorageError(f"{path}: size does not match shape {shape}")
    return np.frombuffer(data, dtype=DTYPE).reshape(shape).copy()


class ArrayBundle:
    """A directory of arrays described by one ``manifest.json``."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.manifest_path = self.directory / "manifest.json"

    def exists(self):
        return self.manifest_path.exists()

    def save(self, arrays, meta):
        entries = {name: write_array(self.directory, name, arr) for name, arr in arrays.items()}
        write_json(self.manifest_path, {"format_version": FORMAT_VERSION, "arrays": entries, "meta": meta})

    def manifest(self):
        if not self.exists():
            raise StorageError(f"no manifest in {self.directory}")
        man = read_json(self.manifest_path)
        if man.get("format_version") != FORMAT_VERSION:
            raise StorageError(f"{self.manifest_path}: unsupported format version {man.get('format_version')}")
        return man

    @property
    def meta(self):
        return self.manifest()["meta"]

    def names(self):
        return sorted(self.manifest()["arrays"])

    def load(self, name):
        entries = self.manifest()["arrays"]
        if name not in entries:
            raise StorageError(f"{self.directory}: no array {name!r}")
        return read_array(self.directory, entries[name])

    def verify(self):
        for entry in self.manifest()["arrays"].values():
            read_array(self.directory, entry)


class ItemStore:
    """Per-item results with a commit marker, the unit of resumption.

    Item ``i`` owns the files ``{i:05d}_<name>.bin``; its JSON marker
    ``{i:05d}.json`` is written last, so an item counts as done only once
    all its arrays are on disk.
    """

    def __init__(self, directory):
        self.directory = Path(directory)

    def _marker(self, i):
        return self.directory / f"{int(i):05d}.json"

    def done(self, i):
        return self._marker(i).exists()

    def put(self, i, arrays, meta=None):
        entries = {name: write_array(self.directory, f"{int(i):05d}_{name}", arr) for name, arr in arrays.items()}
        write_json(self._marker(i), {"format_version": FORMAT_VERSION, "arrays": entries, "meta": meta or {}})

    def record(self, i):
        if not self.done(i):
            raise StorageError(f"{self.directory}: item {i} not stored")
        return read_json(self._marker(i))

    def get(self, i, name):
        entry = self.record(i)["arrays"].get(name)
        if entry is None:
            raise StorageError(f"{self.directory}: item {i} has no array {name!r}")
        return read_array(self.directory, entry)

    def items(self):
        if not self.directory.exists():
            return []
        return sorted(int(p.stem) for p in self.directory.glob("[0-9]*.json"))
