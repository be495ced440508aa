"""Mollified, translation-averaged Poisson operators and their products.

The averaging measure ``A^a_{eps_n, m}(R_m)(0, du)`` sums Poisson kernels of
cubes of side ``R_m = L**-(m-1)`` centred at lattice points ``z`` near the
origin, weighted by a normalised bump ``c g_m(z)``.  In site units it only
depends on the dimension, the cube side ``N = L**(n-m+1)`` in sites and the
site mass ``a * eps_n**2``; all heavy work is keyed on that triple.

Site masses ``mu(u) = eps**d * A(u)`` are what get computed; the stored
``LatticeKernel`` holds the density ``A(u)`` against ``dz``.
"""
from __future__ import annotations

import functools
import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
import scipy.fft
import scipy.integrate
import scipy.signal
import scipy.special

from .dirichlet import clamp_weights, get_solver
from .errors import DegenerateBump
from .lattice import LatticeKernel, LatticeSpec, symmetrize_cubic

logger = logging.getLogger(__name__)

TINY_REL = 1e-15


def _phi(s2):
    """Unnormalised radial profile as a function of ``s**2 = (4r/L)**2``."""
    s2 = np.asarray(s2, dtype=float)
    out = np.zeros_like(s2)
    inside = s2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s2[inside]))
    return out


@dataclass(frozen=True)
class BumpProfile:
    """Radial bump ``g(x) = exp(-1 / (1 - (4|x|/L)^2)) / Z`` supported in ``|x| < L/4``.

    ``Z`` makes the continuum integral over ``R^d`` equal to one.
    """

    L: int
    d: int

    @property
    def radius(self) -> float:
        return self.L / 4.0

    @functools.cached_property
    def continuum_integral(self) -> float:
        """``Z = |S^{d-1}| int_0^{L/4} r^{d-1} phi(4r/L) dr``."""
        d, rad = self.d, self.radius
        sphere = 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)
        val, _ = scipy.integrate.quad(
            lambda r: r ** (d - 1) * float(_phi((r / rad) ** 2)), 0.0, rad,
            epsabs=0.0, epsrel=1e-13, limit=200)
        return sphere * val

    def profile(self, r) -> np.ndarray:
        """Unnormalised profile at Euclidean radius ``r``."""
        return _phi((np.asarray(r, dtype=float) / self.radius) ** 2)

    def __call__(self, x) -> np.ndarray:
        """Normalised ``g`` at points ``x`` of shape ``(..., d)``."""
        r2 = np.sum(np.asarray(x, dtype=float) ** 2, axis=-1)
        return _phi(r2 / self.radius ** 2) / self.continuum_integral

    def scaled(self, m: int, x) -> np.ndarray:
        """``g_m(x) = L**(m d) g(L**m x)``."""
        s = float(self.L) ** m
        return s ** self.d * self(np.asarray(x, dtype=float) * s)

    def digest(self) -> str:
        return f"exp-bump-v1:L={self.L}:d={self.d}"


def lattice_normalizer(eps, profile: BumpProfile) -> float:
    """``c_eps = 1 / (eps^d sum_{x in (eps Z)^d} g(x))``."""
    eps = float(eps)
    d = profile.d
    kmax = int(math.floor(profile.radius / eps))
    ax = np.arange(-kmax, kmax + 1, dtype=float) * eps
    r2_lead = ax ** 2
    total = 0.0
    if d == 1:
        total = float(np.sum(profile(ax[:, None])))
    else:
        rest = np.meshgrid(*([ax] * (d - 1)), indexing="ij")
        rest_r2 = sum(g ** 2 for g in rest)
        for x2 in r2_lead:
            total += float(np.sum(_phi((x2 + rest_r2) / profile.radius ** 2)))
        total /= profile.continuum_integral
    lattice_sum = eps ** d * total
    if not lattice_sum > 0:
        raise DegenerateBump(f"bump has zero lattice sum at eps={eps}")
    return 1.0 / lattice_sum


# ---------------------------------------------------------------- site level
def bump_sites(d: int, n_side: int, fundamental: bool = False):
    """Lattice points of the bump support and their normalised weights.

    Returns ``(points, weights)``; with ``fundamental=True`` only points with
    ``0 <= k_0 <= ... <= k_{d-1}`` are returned and each weight is multiplied
    by the size of its cube-symmetry orbit.
    """
    # 4|k|/N < 1  <=>  16 |k|^2 < N^2
    kmax = (n_side - 1) // 4 if n_side % 4 == 0 else n_side // 4
    ax = np.arange(-kmax, kmax + 1)
    pts = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
    r2 = np.sum(pts ** 2, axis=1)
    keep = 16 * r2 < n_side ** 2
    pts, r2 = pts[keep], r2[keep]
    w = _phi(16.0 * r2 / n_side ** 2)
    total = w.sum()
    if not total > 0:
        raise DegenerateBump(f"no lattice point inside the bump for N={n_side}")
    w = w / total
    if not fundamental:
        return pts, w
    fd = np.all(pts >= 0, axis=1) & np.all(np.diff(pts, axis=1) >= 0, axis=1)
    pts, w = pts[fd], w[fd]
    orbit = np.empty(len(pts))
    for i, k in enumerate(pts):
        nz = int(np.count_nonzero(k))
        _, counts = np.unique(k, return_counts=True)
        perms = math.factorial(d) // math.prod(math.factorial(int(c)) for c in counts)
        orbit[i] = 2 ** nz * perms
    return pts, w * orbit


@dataclass(frozen=True)
class SiteAveraging:
    """Site-unit averaging measure: masses on ``[-radius, radius]^d``."""

    d: int
    n_side: int
    a_site: float
    masses: np.ndarray = field(repr=False)
    defect: float
    kmax: int

    @property
    def radius(self) -> int:
        return self.n_side // 2 + self.kmax


def _site_averaging(d: int, n_side: int, a_site: float, method: str = "dst",
                    reduce: bool = True, batch: int = 64) -> SiteAveraging:
    if n_side % 2:
        raise ValueError("cube side in sites must be even")
    half = n_side // 2
    n_int = n_side - 1
    solver = get_solver(d, n_int, float(a_site), method)
    pts, w = bump_sites(d, n_side, fundamental=reduce)
    kmax = int(np.max(np.abs(pts)))
    rad = half + kmax
    acc = np.zeros((2 * rad + 1,) * d)
    hint = half - 1
    killing = solver.killing()
    defect = 0.0
    for b0 in range(0, len(pts), batch):
        ks, ws = pts[b0:b0 + batch], w[b0:b0 + batch]
        starts = hint - ks
        faces = solver.green_faces(starts)
        faces = clamp_weights(faces)
        for k, wk, fk, st in zip(ks, ws, faces, starts):
            defect += wk * float(killing[tuple(st)])
            for mu in range(d):
                for side in (0, 1):
                    idx = []
                    for nu in range(d):
                        if nu == mu:
                            idx.append(int(k[nu]) + (half if side else -half) + rad)
                        else:
                            lo = int(k[nu]) - hint + rad
                            idx.append(slice(lo, lo + n_int))
                    acc[tuple(idx)] += wk * fk[2 * mu + side]
    if reduce:
        acc = symmetrize_cubic(acc)
    top = float(np.max(acc)) if acc.size else 0.0
    acc[acc < TINY_REL * top] = 0.0
    acc.setflags(write=False)
    return SiteAveraging(d, n_side, float(a_site), acc, float(defect), kmax)


@functools.lru_cache(maxsize=32)
def site_averaging(d: int, n_side: int, a_site: float, method: str = "dst") -> SiteAveraging:
    """Cached site-unit averaging measure."""
    return _site_averaging(d, n_side, a_site, method)


# ------------------------------------------------------------ physical level
@dataclass(frozen=True, eq=False)
class AveragingKernel:
    """Defective probability density ``A(0, du)`` on the ``eps_n`` lattice.

    ``m`` is ``None`` for the composite product of several scales.
    """

    spec: LatticeSpec
    m: int | None
    a: float
    R: Fraction | None
    density: LatticeKernel = field(repr=False)
    defect: float
    factors: tuple = ()

    @property
    def site_masses(self) -> np.ndarray:
        return self.density.values * self.spec.eps_f ** self.spec.d

    @property
    def mass(self) -> float:
        return 1.0 - self.defect

    @property
    def radius_sites(self) -> int:
        return self.density.box_radius

    def support_bound(self) -> float:
        """Provable support radius: half the cube side plus the bump radius, ``3 R_m / 4``."""
        if self.m is None:
            return sum(f.support_bound() for f in self.factors)
        return 0.75 * float(self.R)

    def check_invariants(self, tol: float = 1e-12) -> None:
        vals = self.site_masses
        if np.any(vals < 0):
            raise AssertionError("negative averaging density")
        if not -tol <= self.defect <= 1 + tol:
            raise AssertionError(f"mass {self.mass} outside [0, 1]")
        if abs(vals.sum() - self.mass) > 1e-10:
            raise AssertionError("direct mass and defect disagree")
        if self.density.support_radius() > self.support_bound() + 1e-12:
            raise AssertionError("support exceeds provable radius")


def side_sites(spec: LatticeSpec, m: int) -> int:
    """Cube side ``R_m / eps_n = L**(n-m+1)`` in sites."""
    return spec.L ** (spec.n - m + 1)


def _check_m(spec: LatticeSpec, m: int, a: float) -> None:
    if not 0 <= m <= spec.n:
        raise ValueError(f"need 0 <= m <= n, got m={m}, n={spec.n}")
    if a < 0:
        raise ValueError("mass a must be >= 0")


def build_averaging_kernel(spec: LatticeSpec, m: int, a: float, method: str = "dst",
                           cache: bool = True, reduce: bool = True) -> AveragingKernel:
    """Averaging kernel ``A^a_{eps_n, m}(R_m)`` at level ``spec.n``.

    ``cache=False`` recomputes from scratch; ``reduce=False`` solves for
    every bump point instead of one representative per symmetry orbit.
    """
    _check_m(spec, m, a)
    n_side = side_sites(spec, m)
    a_site = float(a) * spec.eps_f ** 2
    if cache and reduce:
        site = site_averaging(spec.d, n_side, a_site, method)
    else:
        site = _site_averaging(spec.d, n_side, a_site, method, reduce=reduce)
    dens = LatticeKernel.centered(spec, site.masses / spec.eps_f ** spec.d, even=True,
                                  n_side=n_side, a_site=a_site)
    R = Fraction(spec.L) ** (1 - m)
    return AveragingKernel(spec, m, float(a), R, dens, site.defect)


def apply_averaging(kernel: AveragingKernel, f: LatticeKernel) -> LatticeKernel:
    """``(A f)(x) = int A(x, du) f(u)``, with ``A(x, du) = A(0, du - x)``."""
    if f.spec.d != kernel.spec.d or f.spec.eps != kernel.spec.eps:
        raise ValueError("kernel and field live on different lattices")
    dens = kernel.density.reflected()
    out = scipy.signal.convolve(f.values, dens.values, mode="full")
    out *= kernel.spec.eps_f ** kernel.spec.d
    lower = f.lower + dens.lower
    return LatticeKernel(f.spec, out, tuple(-lower), f.even and kernel.density.even)


def _convolve_measures(k1: LatticeKernel, k2: LatticeKernel) -> LatticeKernel:
    eps_d = k1.spec.eps_f ** k1.spec.d
    vals = scipy.signal.fftconvolve(k1.values, k2.values, mode="full") * eps_d
    lower = k1.lower + k2.lower
    return LatticeKernel(k1.spec, vals, tuple(-lower), k1.even and k2.even)


def composite_averaging(spec: LatticeSpec, a: float, method: str = "dst") -> AveragingKernel:
    """``cal A^a_n = prod_{m=1}^n A^a_{eps_n, m}(R_m)``; the identity for ``n = 0``."""
    if a < 0:
        raise ValueError("mass a must be >= 0")
    if spec.n == 0:
        dens = LatticeKernel.delta(spec, 1.0 / spec.eps_f ** spec.d)
        return AveragingKernel(spec, None, float(a), None, dens, 0.0, ())
    factors = tuple(build_averaging_kernel(spec, m, a, method) for m in range(1, spec.n + 1))
    dens = factors[0].density
    for f in factors[1:]:
        dens = _convolve_measures(dens, f.density)
    # symmetrise away fft roundoff; clean sub-roundoff entries
    vals = symmetrize_cubic(np.asarray(dens.values))
    top = float(np.max(vals))
    vals[np.abs(vals) < TINY_REL * top] = 0.0
    vals = np.maximum(vals, 0.0)
    dens = LatticeKernel(spec, vals, dens.origin, True)
    # 1 - prod(1 - q_i), accumulated without cancellation
    defect = 0.0
    for f in factors:
        defect = defect + f.defect - defect * f.defect
    return AveragingKernel(spec, None, float(a), None, dens, defect, factors)


# ------------------------------------------------------------------ Fourier
def _cos_contract(masses: np.ndarray, theta: np.ndarray):
    """``sum_u mu(u) prod_mu cos(theta_mu u_mu)`` and ``sum_u mu(u) (1 - prod cos)``.

    ``masses`` is centred and even in every coordinate; ``theta`` has shape
    ``(P, d)`` (site-unit momenta).  The second quantity is accumulated as
    ``D_mu = s_mu + c_mu D_{mu+1}`` with ``s = 2 sin^2(theta u / 2)`` so it
    stays accurate as ``theta -> 0``.
    """
    d = masses.ndim
    rad = masses.shape[0] // 2
    u = np.arange(-rad, rad + 1)
    P = theta.shape[0]
    # contract the last axis first, carrying (value, one-minus, marginal)
    val = np.broadcast_to(masses, (P,) + masses.shape)
    om = np.zeros_like(val)
    marg = val
    for axis in range(d - 1, -1, -1):
        ang = np.outer(theta[:, axis], u)  # (P, n)
        c = np.cos(ang)
        s = 2.0 * np.sin(0.5 * ang) ** 2
        shape = (P,) + (1,) * axis + (len(u),)
        c, s = c.reshape(shape), s.reshape(shape)
        om = np.sum(s * marg + c * om, axis=-1)
        val = np.sum(c * val, axis=-1)
        marg = np.sum(marg, axis=-1)
    return val, om


def _as_theta(p, eps: float, d: int) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    if p.shape[-1] != d:
        raise ValueError(f"momentum has dimension {p.shape[-1]}, lattice has {d}")
    return p * eps, single


def averaging_fourier(kernel: AveragingKernel, p) -> np.ndarray | float:
    """``A_hat(p) = int A(0, du) exp(-i p.u)``; real by symmetry.

    ``p`` is a single momentum or an array of shape ``(P, d)``.
    """
    theta, single = _as_theta(p, kernel.spec.eps_f, kernel.spec.d)
    val, _ = _cos_contract(np.asarray(kernel.site_masses), theta)
    return float(val[0]) if single else val


def averaging_one_minus(kernel: AveragingKernel, p) -> np.ndarray | float:
    """``1 - A_hat(p)`` without cancellation near ``p = 0``."""
    theta, single = _as_theta(p, kernel.spec.eps_f, kernel.spec.d)
    _, om = _cos_contract(np.asarray(kernel.site_masses), theta)
    out = om + kernel.defect
    return float(out[0]) if single else out


def averaging_fourier_direct(d: int, n_side: int, a_site: float, theta) -> tuple:
    """``(A_hat, 1 - A_hat)`` at site momenta ``theta`` without building the kernel.

    For each momentum one Dirichlet problem is solved with boundary data
    ``1 - exp(-i theta.y)``; the bump sum then runs over all starts at once.
    Cost is a few transforms of the cube per momentum, independent of the
    number of bump points.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    half = n_side // 2
    n_int = n_side - 1
    solver = get_solver(d, n_int, float(a_site), "dst")
    q = solver.killing()
    pts, w = bump_sites(d, n_side)
    hint = half - 1
    sidx = tuple((hint - pts).T)
    q_at = q[sidx]
    y_in = np.arange(-hint, hint + 1)
    vals = np.empty(len(theta))
    oms = np.empty(len(theta))
    for i, th in enumerate(theta):
        rhs_re = np.zeros((n_int,) * d)
        rhs_im = np.zeros((n_int,) * d)
        for mu in range(d):
            for side, y_mu in ((0, -half), (1, half)):
                # b(y) = 1 - exp(-i theta.y) on this face, y_mu fixed
                phase = th[mu] * y_mu
                tot = phase
                for nu in range(d):
                    if nu != mu:
                        shape = [1] * d
                        shape[nu] = n_int
                        tot = tot + (th[nu] * y_in).reshape(shape)
                tot = np.broadcast_to(tot, tuple(1 if nu == mu else n_int for nu in range(d)))
                re = 2.0 * np.sin(0.5 * tot) ** 2
                im = np.sin(tot)
                sl = [slice(None)] * d
                sl[mu] = slice(0, 1) if side == 0 else slice(n_int - 1, n_int)
                rhs_re[tuple(sl)] += re
                rhs_im[tuple(sl)] += im
        H_re = solver.solve(rhs_re)[sidx]
        H_im = solver.solve(rhs_im)[sidx]
        ang = pts @ th
        # 1 - A_hat = sum_k pi_k [(1 - e^{-i th.k}) + e^{-i th.k} (q + H)]
        one_minus_e = 2.0 * np.sin(0.5 * ang) ** 2
        cr, ci = np.cos(ang), -np.sin(ang)
        re = one_minus_e + cr * (q_at + H_re) - ci * H_im
        om = float(np.sum(w * re))
        oms[i] = om
        vals[i] = 1.0 - om
    return vals, oms


def averaging_fourier_grid(kernel: AveragingKernel, size: int) -> np.ndarray:
    """``A_hat`` on the full ``size**d`` torus momentum grid (rfft layout)."""
    if 2 * kernel.radius_sites + 1 > size:
        raise ValueError("torus smaller than kernel support")
    emb = LatticeKernel(kernel.spec, kernel.site_masses, kernel.density.origin).torus_embedding(size)
    return scipy.fft.rfftn(emb).real


def scaling_residual(spec: LatticeSpec, m: int, a: float, offsets: Sequence | None = None,
                     method: str = "dst", rhs_method: str = "sparse") -> float:
    """Relative mismatch between the two sides of the level-scaling relation.

    Compares ``A^a_{eps_{n-1}, m-1}(R_{m-1})(0, u)`` with
    ``L**-d * A^{L^2 a}_{eps_n, m}(R_m)(0, u / L)``; both sides are built
    from scratch, the right side with an independent solver (``rhs_method``)
    so that agreement is not a tautology of shared code paths.  Physical
    ``u = i eps_{n-1}`` and ``u / L = i eps_n`` share the site index ``i``.  ``offsets`` (site indices) default to the whole box.
    """
    if not 1 <= m <= spec.n:
        raise ValueError("need 1 <= m <= n")
    L = spec.L
    lhs = build_averaging_kernel(spec.at_level(spec.n - 1), m - 1, a, method, cache=False)
    rhs = build_averaging_kernel(spec, m, L ** 2 * a, rhs_method, cache=False)
    if offsets is None:
        r = max(lhs.density.box_radius, rhs.density.box_radius)
        ax = np.arange(-r, r + 1)
        offsets = np.stack(np.meshgrid(*([ax] * spec.d), indexing="ij"), -1).reshape(-1, spec.d)
    left = np.array([lhs.density(o) for o in offsets])
    right = np.array([rhs.density(o) for o in offsets]) * float(L) ** (-spec.d)
    scale = float(np.max(np.abs(lhs.density.values)))
    return float(np.max(np.abs(left - right)) / scale)


def second_moment(kernel: AveragingKernel) -> np.ndarray:
    """Matrix ``int A(0, du) u_i u_j`` in physical units."""
    masses = kernel.site_masses
    d = kernel.spec.d
    axes = [np.arange(lo, hi + 1) * kernel.spec.eps_f
            for lo, hi in zip(kernel.density.lower, kernel.density.upper)]
    grids = np.meshgrid(*axes, indexing="ij")
    M = np.empty((d, d))
    for i, j in itertools.product(range(d), repeat=2):
        M[i, j] = float(np.sum(masses * grids[i] * grids[j]))
    return M


def first_moment(kernel: AveragingKernel) -> np.ndarray:
    masses = kernel.site_masses
    axes = [np.arange(lo, hi + 1) * kernel.spec.eps_f
            for lo, hi in zip(kernel.density.lower, kernel.density.upper)]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.array([float(np.sum(masses * g)) for g in grids])
