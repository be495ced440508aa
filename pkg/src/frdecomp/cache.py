"""Versioned on-disk kernel cache: one ``.npz`` array file plus a JSON sidecar per entry."""
from __future__ import annotations

import hashlib
import json
import os
from fractions import Fraction
from pathlib import Path

import numpy as np

from .lattice import LatticeKernel, LatticeSpec

CACHE_VERSION = 2


def jsonable(obj):
    """Convert numpy scalars, arrays and fractions into JSON-native values."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Fraction):
        return str(obj)
    return obj


def cache_key(kind: str, **params) -> str:
    blob = json.dumps({"v": CACHE_VERSION, "kind": kind, **jsonable(params)}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:32]


class KernelCache:
    """Store and retrieve :class:`LatticeKernel` objects by parameter hash."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)

    def _paths(self, key: str):
        return self.dir / f"{key}.npz", self.dir / f"{key}.json"

    def get(self, kind: str, **params) -> LatticeKernel | None:
        arr_path, meta_path = self._paths(cache_key(kind, **params))
        if not (arr_path.exists() and meta_path.exists()):
            return None
        info = json.loads(meta_path.read_text())
        if info.get("version") != CACHE_VERSION or info.get("kind") != kind:
            return None
        with np.load(arr_path) as data:
            values = data["values"]
        spec = LatticeSpec(*info["spec"])
        return LatticeKernel(spec, values, tuple(info["origin"]), info["even"], info["meta"])

    def put(self, kernel: LatticeKernel, kind: str, **params) -> str:
        key = cache_key(kind, **params)
        arr_path, meta_path = self._paths(key)
        tmp = arr_path.with_suffix(".tmp.npz")
        np.savez(tmp, values=np.asarray(kernel.values))
        os.replace(tmp, arr_path)
        s = kernel.spec
        info = dict(version=CACHE_VERSION, kind=kind, params=jsonable(params),
                    spec=[s.d, s.p, s.n], origin=[int(v) for v in kernel.origin],
                    even=bool(kernel.even), meta=jsonable(kernel.meta))
        meta_path.write_text(json.dumps(info, sort_keys=True, indent=1))
        return key

    def fetch(self, kind: str, build, **params) -> tuple[LatticeKernel, bool]:
        """Return ``(kernel, hit)``, building and storing on a miss."""
        k = self.get(kind, **params)
        if k is not None:
            return k, True
        k = build()
        self.put(k, kind, **params)
        return k, False
