"""On-disk cache of dense eigendecompositions.

File layout: the magic bytes ``TLCACHE1``, an unsigned 64-bit little-endian
header length, a UTF-8 JSON header with the content hash and array shapes,
then the eigenvalues, eigenvectors (row-major) and mass diagonal as flat
little-endian 64-bit floats.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .operators import DenseDecomposition, DiscreteOperator, SpectralDecomposition, eigendecompose

MAGIC = b"TLCACHE1"
ENV_VAR = "TRANSMUTE_LAB_CACHE"


def content_hash(op: DiscreteOperator) -> str:
    payload = json.dumps({
        "grid": op.grid.key(),
        "metric": op.metric.key(),
        "potential": op.potential.key(),
        "active": hashlib.sha256(op.active.astype("<i8").tobytes()).hexdigest(),
    }, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def save(directory: str | os.PathLike, op: DiscreteOperator, spec: DenseDecomposition) -> Path:
    key = content_hash(op)
    path = Path(directory) / f"{key}.tlc"
    path.parent.mkdir(parents=True, exist_ok=True)
    lam = np.ascontiguousarray(spec.eigenvalues, dtype="<f8")
    vec = np.ascontiguousarray(spec.modes, dtype="<f8")
    mass = np.ascontiguousarray(op.mass, dtype="<f8")
    header = json.dumps({
        "hash": key,
        "dtype": "float64-le",
        "shapes": {"eigenvalues": list(lam.shape), "vectors": list(vec.shape), "mass": list(mass.shape)},
    }, sort_keys=True).encode()
    tmp = path.with_suffix(".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for arr in (lam, vec, mass):
            fh.write(arr.tobytes())
    os.replace(tmp, path)
    return path


def load(directory: str | os.PathLike, op: DiscreteOperator) -> DenseDecomposition | None:
    key = content_hash(op)
    path = Path(directory) / f"{key}.tlc"
    if not path.exists():
        return None
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            return None
        (length,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(length).decode())
        data = np.frombuffer(fh.read(), dtype="<f8")
    if header.get("hash") != key:
        return None
    shapes = header["shapes"]
    sizes = [int(np.prod(shapes[k])) for k in ("eigenvalues", "vectors", "mass")]
    if data.size != sum(sizes):
        return None
    lam = data[:sizes[0]].reshape(shapes["eigenvalues"])
    vec = data[sizes[0]:sizes[0] + sizes[1]].reshape(shapes["vectors"])
    mass = data[sizes[0] + sizes[1]:]
    if not np.array_equal(mass, op.mass):
        return None
    return DenseDecomposition(op, lam.copy(), vec.copy())


def cached_eigendecompose(op: DiscreteOperator, directory: str | os.PathLike | None = None) -> SpectralDecomposition:
    """eigendecompose with the cache directory taken from TRANSMUTE_LAB_CACHE when set.

    Tensor-product decompositions are cheap and never cached.
    """
    directory = directory or os.environ.get(ENV_VAR)
    spec = None
    if directory:
        spec = load(directory, op)
    if spec is not None:
        return spec
    spec = eigendecompose(op)
    if directory and isinstance(spec, DenseDecomposition):
        save(directory, op, spec)
    return spec
