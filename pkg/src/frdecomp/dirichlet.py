"""Dirichlet problems on lattice cubes and their Poisson kernels.

Interior operators are handled in *site units*: on spacing ``eps`` the
equation ``(a - Lap_eps) h = 0`` multiplied by ``eps**2`` becomes
``((a eps^2) + 2d) h(x) - sum_{y ~ x} h(y) = 0``.  The Poisson kernel of a
cube therefore depends only on ``d``, the number of interior sites per
side and ``a_site = a * eps**2``.
"""
from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
import scipy.fft
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _backend
from .errors import EmptyInterior, SolverFailure, StepCapExceeded
from .lattice import LatticeSpec

logger = logging.getLogger(__name__)

POSITIVITY_TOL = 1e-14
DEFAULT_STEP_CAP = 10 ** 7


@dataclass(frozen=True, eq=False)
class CubeDomain:
    """Open lattice cube ``center + (-R/2, R/2)^d`` and its sup-norm boundary.

    ``interior`` and ``boundary`` hold integer site coordinates (absolute),
    sorted lexicographically.  Interior points lie within ``half_int`` sites
    of the centre; the boundary is the shell at exactly ``half_int + 1``.
    """

    spec: LatticeSpec
    R: Fraction
    center: tuple
    half_int: int
    interior: np.ndarray = field(repr=False)
    boundary: np.ndarray = field(repr=False)

    @property
    def d(self) -> int:
        return self.spec.d

    @property
    def n_side(self) -> int:
        """Interior sites per side."""
        return 2 * self.half_int + 1

    def interior_grid_index(self, x: Sequence[int]) -> tuple:
        rel = np.asarray(x) - np.asarray(self.center) + self.half_int
        if np.any(rel < 0) or np.any(rel >= self.n_side):
            raise ValueError(f"{tuple(x)} is not an interior point of the cube")
        return tuple(int(r) for r in rel)

    def to_grid(self, values) -> np.ndarray:
        """Reshape interior-ordered values to a ``(n_side,)*d`` array."""
        return np.asarray(values, dtype=float).reshape((self.n_side,) * self.d)

    def boundary_face_map(self) -> tuple[np.ndarray, np.ndarray]:
        """For each boundary point its face number (or -1) and in-face flat index.

        Face ``2*mu`` is the low side of axis ``mu`` and ``2*mu + 1`` the high
        side; the in-face index enumerates the remaining axes in order.
        """
        rel = self.boundary - np.asarray(self.center)
        h = self.half_int
        on = np.abs(rel) == h + 1
        face = np.full(len(rel), -1)
        flat = np.zeros(len(rel), dtype=int)
        single = on.sum(axis=1) == 1
        for i in np.flatnonzero(single):
            mu = int(np.flatnonzero(on[i])[0])
            face[i] = 2 * mu + (1 if rel[i, mu] > 0 else 0)
            others = np.delete(rel[i], mu) + h
            idx = 0
            for o in others:
                idx = idx * self.n_side + int(o)
            flat[i] = idx
        return face, flat


def build_cube(spec: LatticeSpec, R, center: Sequence[int] | None = None) -> CubeDomain:
    """Lattice cube of side ``R`` (physical units) centred at a lattice site.

    ``center`` is given in integer site coordinates.
    """
    R = Fraction(R)
    d = spec.d
    center = tuple(int(c) for c in (center if center is not None else (0,) * d))
    if len(center) != d:
        raise ValueError("center has wrong dimension")
    ratio = R / spec.eps
    if ratio < 2:
        raise EmptyInterior(f"R/eps = {ratio} < 2")
    # largest integer k with k < R / (2 eps)
    half_int = -(-ratio.numerator // (2 * ratio.denominator)) - 1
    ax = np.arange(-half_int, half_int + 1)
    grid = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
    interior = grid + np.asarray(center)
    bx = np.arange(-half_int - 1, half_int + 2)
    bgrid = np.stack(np.meshgrid(*([bx] * d), indexing="ij"), axis=-1).reshape(-1, d)
    shell = np.max(np.abs(bgrid), axis=1) == half_int + 1
    boundary = bgrid[shell] + np.asarray(center)
    interior.setflags(write=False)
    boundary.setflags(write=False)
    return CubeDomain(spec, R, center, half_int, interior, boundary)


def _dst_matrix(n: int) -> np.ndarray:
    """Orthonormal DST-I matrix; columns are Dirichlet Laplacian eigenvectors."""
    i = np.arange(1, n + 1)
    return np.sqrt(2.0 / (n + 1)) * np.sin(np.pi * np.outer(i, i) / (n + 1))


class DirichletSolver:
    """Factorised interior operator ``(a_site + 2d) I - adjacency`` of a cube.

    ``method="dst"`` diagonalises the operator exactly with the type-I sine
    transform; ``method="sparse"`` assembles the SPD sparse matrix and uses a
    sparse LU factorisation.  Both are direct methods.
    """

    def __init__(self, d: int, n_side: int, a_site: float, method: str = "dst"):
        if a_site < 0:
            raise ValueError("mass must be >= 0")
        if method not in ("dst", "sparse"):
            raise ValueError(f"unknown method {method!r}")
        self.d, self.n, self.a_site, self.method = d, n_side, float(a_site), method
        n = n_side
        lam1 = 2.0 - 2.0 * np.cos(np.pi * np.arange(1, n + 1) / (n + 1))
        eig = self.a_site
        for axis in range(d):
            shape = [1] * d
            shape[axis] = n
            eig = eig + lam1.reshape(shape)
        self._inv_eig = 1.0 / np.broadcast_to(eig, (n,) * d)
        self._S = _dst_matrix(n)
        self._lu = None
        if method == "sparse":
            try:
                self._lu = spla.splu(self.matrix().tocsc())
            except RuntimeError as exc:  # pragma: no cover - SPD matrix
                raise SolverFailure(str(exc)) from exc

    def matrix(self) -> sp.csr_matrix:
        n, d = self.n, self.d
        adj1 = sp.diags([np.ones(n - 1), np.ones(n - 1)], [-1, 1], format="csr")
        eye1 = sp.identity(n, format="csr")
        adj = sp.csr_matrix((n ** d, n ** d))
        for axis in range(d):
            term = None
            for b in range(d):
                f = adj1 if b == axis else eye1
                term = f if term is None else sp.kron(term, f, format="csr")
            adj = adj + term
        return ((self.a_site + 2 * d) * sp.identity(n ** d, format="csr") - adj).tocsr()

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve on a ``(n,)*d`` grid right-hand side."""
        rhs = np.asarray(rhs, dtype=float)
        if self.method == "sparse":
            out = self._lu.solve(rhs.reshape(-1)).reshape(rhs.shape)
        else:
            c = scipy.fft.dstn(rhs, type=1, norm="ortho")
            out = scipy.fft.dstn(c * self._inv_eig, type=1, norm="ortho")
        if not np.all(np.isfinite(out)):
            raise SolverFailure("non-finite Dirichlet solution")
        return out

    def killing(self) -> np.ndarray:
        """``1 - P(x, 1)`` for every interior ``x``, free of cancellation.

        Since ``(a - Lap) 1 = a`` the defect solves the Dirichlet problem with
        source ``a_site`` and zero boundary data.
        """
        if self.a_site == 0.0:
            return np.zeros((self.n,) * self.d)
        return self.a_site * self.solve(np.ones((self.n,) * self.d))

    def green_faces(self, starts: np.ndarray, chunk_elems: int = 2 ** 22) -> np.ndarray:
        """Poisson weights on the ``2d`` faces for a batch of start points.

        ``starts`` are interior grid indices, shape ``(B, d)``.  Returns shape
        ``(B, 2d) + (n,)*(d-1)``; face ``2*mu`` is the low side of axis ``mu``.
        The weight at boundary point ``y`` equals the inverse operator entry
        between the start and the unique interior neighbour of ``y``.
        """
        starts = np.atleast_2d(np.asarray(starts, dtype=int))
        B, d, n = len(starts), self.d, self.n
        out = np.empty((B, 2 * d) + (n,) * (d - 1))
        if self.method == "sparse":
            for b, x in enumerate(starts):
                e = np.zeros((n,) * d)
                e[tuple(x)] = 1.0
                col = self.solve(e)
                for mu in range(d):
                    out[b, 2 * mu] = col.take(0, axis=mu)
                    out[b, 2 * mu + 1] = col.take(n - 1, axis=mu)
            return out
        S = self._S
        step = max(1, chunk_elems // n ** d)
        for b0 in range(0, B, step):
            st = starts[b0:b0 + step]
            coef = np.broadcast_to(self._inv_eig, (len(st),) + (n,) * d).copy()
            for mu in range(d):
                shape = [len(st)] + [1] * d
                shape[mu + 1] = n
                coef *= S[st[:, mu]].reshape(shape)
            for mu in range(d):
                for side, row in enumerate((S[0], S[n - 1])):
                    t = np.tensordot(coef, row, axes=([mu + 1], [0]))
                    if d > 1:
                        t = scipy.fft.dstn(t, type=1, norm="ortho", axes=tuple(range(1, d)))
                    out[b0:b0 + len(st), 2 * mu + side] = t
        return out


@functools.lru_cache(maxsize=8)
def get_solver(d: int, n_side: int, a_site: float, method: str = "dst") -> DirichletSolver:
    """Cached solver per (cube shape, mass); factorisations are shared."""
    return DirichletSolver(d, n_side, a_site, method)


def clamp_weights(w: np.ndarray, tol: float = POSITIVITY_TOL) -> np.ndarray:
    """Zero out roundoff-level negative weights; reject real negativity."""
    lo = float(np.min(w)) if w.size else 0.0
    if lo < -tol:
        raise SolverFailure(f"Poisson weight {lo:.3e} below -{tol:g}")
    if lo < 0:
        logger.debug("clamped %d negative Poisson weights (min %.2e)", int(np.sum(w < 0)), lo)
        w = np.where(w < 0, 0.0, w)
    return w


def _solver_for(cube: CubeDomain, a: float, method: str) -> DirichletSolver:
    if a < 0:
        raise ValueError("mass a must be >= 0")
    a_site = float(a) * float(cube.spec.eps) ** 2
    return get_solver(cube.d, cube.n_side, a_site, method)


def boundary_rhs(cube: CubeDomain, f) -> np.ndarray:
    """Right-hand side ``sum_{y ~ x, y on boundary} f(y)`` on the interior grid."""
    f = np.asarray(f, dtype=float)
    face, flat = cube.boundary_face_map()
    n, d = cube.n_side, cube.d
    rhs = np.zeros((n,) * d)
    for i in np.flatnonzero(face >= 0):
        mu, high = divmod(int(face[i]), 2)
        others = np.unravel_index(int(flat[i]), (n,) * (d - 1)) if d > 1 else ()
        idx = list(others)
        idx.insert(mu, n - 1 if high else 0)
        rhs[tuple(idx)] += f[i]
    return rhs


def solve_dirichlet(cube: CubeDomain, a: float, f, method: str = "dst") -> np.ndarray:
    """Solve ``(a - Lap) h = 0`` inside, ``h = f`` on the boundary.

    ``f`` is aligned with ``cube.boundary``; the result is aligned with
    ``cube.interior``.
    """
    solver = _solver_for(cube, a, method)
    h = solver.solve(boundary_rhs(cube, f))
    return h.reshape(-1)


@dataclass(frozen=True, eq=False)
class PoissonKernelRow:
    """Boundary measure ``P^a_U(x, .)`` with weights aligned to ``cube.boundary``."""

    cube: CubeDomain
    a: float
    x: tuple
    weights: np.ndarray = field(repr=False)
    defect: float

    @property
    def mass(self) -> float:
        return float(np.sum(self.weights))

    def pair(self, f) -> float:
        return float(np.dot(self.weights, np.asarray(f, dtype=float)))


def poisson_kernel(cube: CubeDomain, a: float, x: Sequence[int] | None = None,
                   method: str = "dst") -> PoissonKernelRow:
    """Poisson kernel row from interior start ``x`` (site coordinates)."""
    x = tuple(int(v) for v in (x if x is not None else cube.center))
    idx = cube.interior_grid_index(x)
    solver = _solver_for(cube, a, method)
    faces = solver.green_faces(np.asarray([idx]))[0]
    face, flat = cube.boundary_face_map()
    w = np.zeros(len(cube.boundary))
    mask = face >= 0
    w[mask] = faces.reshape(2 * cube.d, -1)[face[mask], flat[mask]]
    w = clamp_weights(w)
    defect = float(solver.killing()[idx])
    return PoissonKernelRow(cube, float(a), x, w, defect)


def defect_mass(row: PoissonKernelRow) -> float:
    """``1 - total mass``; evaluated from the killing solve to avoid cancellation."""
    return row.defect


def defect_bound(a: float, R) -> float:
    """Upper bound ``a R^2 / 2`` on the Poisson mass defect."""
    return float(a) * float(R) ** 2 / 2.0


@dataclass(frozen=True, eq=False)
class WalkEstimate:
    """Monte Carlo estimate of a Poisson kernel row."""

    cube: CubeDomain
    a: float
    x: tuple
    n_walks: int
    weights: np.ndarray = field(repr=False)
    stderr: np.ndarray = field(repr=False)
    mean_exit_time: float
    mean_exit_time_stderr: float
    seeds: tuple
    backend: str

    @property
    def mass(self) -> float:
        return float(np.sum(self.weights))


def walk_exit_oracle(cube: CubeDomain, a: float, x: Sequence[int] | None, n_walks: int,
                     rng_seed: int, batch_size: int = 50_000,
                     step_cap: int = DEFAULT_STEP_CAP) -> WalkEstimate:
    """Estimate the Poisson kernel by simulating continuous-time random walks.

    Each walk waits an exponential time of rate ``2d / eps^2`` and then jumps
    to a uniformly chosen neighbour, until it first lands on the boundary.
    A walk exiting at ``y`` at time ``tau`` contributes ``exp(-a tau)`` to
    bin ``y``.
    """
    if n_walks < 1:
        raise ValueError("n_walks must be >= 1")
    if a < 0:
        raise ValueError("mass a must be >= 0")
    x = tuple(int(v) for v in (x if x is not None else cube.center))
    cube.interior_grid_index(x)
    start = np.asarray(x) - np.asarray(cube.center)
    half = cube.half_int + 1
    eps2 = float(cube.spec.eps) ** 2
    children = np.random.SeedSequence(rng_seed).spawn(-(-n_walks // batch_size))
    seeds = tuple(int(c.generate_state(1, np.uint64)[0]) for c in children)
    exits, taus = [], []
    remaining = n_walks
    for seed in seeds:
        m = min(batch_size, remaining)
        pos, tau, steps, capped = _backend.simulate_exits(start, half, m, seed, step_cap)
        if capped:
            raise StepCapExceeded(f"a walk exceeded {step_cap} events (seed {seed})")
        exits.append(pos)
        taus.append(tau * eps2)
        remaining -= m
    pos = np.concatenate(exits) + np.asarray(cube.center)
    tau = np.concatenate(taus)
    contrib = np.exp(-float(a) * tau)
    lookup = {tuple(b): i for i, b in enumerate(cube.boundary.tolist())}
    bins = np.fromiter((lookup[tuple(p)] for p in pos.tolist()), dtype=int, count=len(pos))
    nb = len(cube.boundary)
    s1 = np.bincount(bins, weights=contrib, minlength=nb)
    s2 = np.bincount(bins, weights=contrib ** 2, minlength=nb)
    mean = s1 / n_walks
    var = np.maximum(s2 / n_walks - mean ** 2, 0.0)
    stderr = np.sqrt(var / max(n_walks - 1, 1))
    return WalkEstimate(cube, float(a), x, n_walks, mean, stderr,
                        float(np.mean(tau)), float(np.std(tau, ddof=1) / np.sqrt(n_walks))
                        if n_walks > 1 else float("nan"),
                        seeds, _backend.BACKEND)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


def walk_tv_check(row: PoissonKernelRow, est: WalkEstimate) -> tuple[float, float]:
    """``(TV distance, aggregate standard error)`` between a solve and a walk estimate.

    The aggregate error ``sum_y se_y / 2`` is the standard-error scale of the
    TV statistic itself (each ``|p_hat_y - p_y|`` is of order ``se_y``).
    """
    if len(row.weights) != len(est.weights):
        raise ValueError("rows refer to different cubes")
    return total_variation(row.weights, est.weights), 0.5 * float(np.sum(est.stderr))
