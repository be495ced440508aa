"""Structured run reports (JSON) and kernel tables (CSV)."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cache import jsonable
from .lattice import LatticeKernel

SCHEMA = 1
_RELATIONS = {
    "<=": lambda v, t: v <= t,
    ">=": lambda v, t: v >= t,
}


@dataclass
class Report:
    """Results of one command; every check carries its value and tolerance."""

    command: str
    config: dict
    checks: list = field(default_factory=list)
    results: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def check(self, name: str, value, tolerance, relation: str = "<=") -> bool:
        value = float(value)
        ok = bool(math.isfinite(value) and _RELATIONS[relation](value, float(tolerance)))
        self.checks.append(dict(name=name, value=value, tolerance=float(tolerance),
                                relation=relation, passed=ok))
        return ok

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def to_dict(self, timings: bool = True) -> dict:
        out = dict(schema=SCHEMA, command=self.command, config=self.config,
                   passed=self.passed, checks=self.checks, results=self.results,
                   notes=self.notes, provenance=self.provenance)
        if timings:
            out["timings"] = self.timings
        return jsonable(out)

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
        return path

    def summary_lines(self) -> list:
        return [f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: {c['value']:.3e} "
                f"{c['relation']} {c['tolerance']:.3e}" for c in self.checks]


def write_kernel_csv(kernel: LatticeKernel, path, atol: float = 0.0) -> Path:
    """Rows ``x1..xd, value`` with integer offsets on the kernel's own lattice."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    vals = np.asarray(kernel.values)
    idx = np.argwhere(np.abs(vals) > atol) if atol > 0 else np.argwhere(np.ones_like(vals, bool))
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(kernel.d)] + ["value"])
        for row in idx:
            w.writerow([int(v) for v in row - np.asarray(kernel.origin)] + [repr(float(vals[tuple(row)]))])
    return path


def write_field_csv(field_values: np.ndarray, path) -> Path:
    """Rows ``x1..xd, value`` for a torus field with the origin at index 0."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(field_values.ndim)] + ["value"])
        for idx in np.ndindex(field_values.shape):
            w.writerow(list(idx) + [repr(float(field_values[idx]))])
    return path


def read_kernel_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """``(offsets, values)`` from a kernel CSV."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, :-1].astype(int), data[:, -1]
