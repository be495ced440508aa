"""Fluctuation covariances, the multiscale remainder and their diagnostics.

Conventions.  Every kernel is a density against ``dz = eps**d * sum`` and
``f_hat(p) = eps**d sum_x f(x) exp(-i p.x)``.  Work is done in site units:
on spacing ``eps`` with mass ``a`` the site mass is ``a eps**2``, the site
momentum is ``theta = eps p`` and

    G_hat_eps(p) = eps**2 / (a eps**2 + lam(theta)),
    lam(theta)   = 4 sum_mu sin(theta_mu / 2)**2.

At level ``j`` of the multiscale sum the mass is ``L**(2j) a`` on spacing
``L**-j``, so the site mass is ``a`` for every level and the site momentum
is ``L**-j * (L**j p) = p``.  The Fourier image of a term
``L**(-j(d-2)) F_j(x / L**j)`` on ``Z^d`` is ``L**(2j) F_hat_j(L**j p)``:
the ``L**(jd)`` from the change of lattice measure combines with
``L**(-j(d-2))``.
"""
from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .averaging import (averaging_fourier_direct, bump_sites, _cos_contract, site_averaging,
                        side_sites)
from .dirichlet import get_solver
from .errors import PoleAtZero, TorusTooSmall
from .lattice import (LatticeKernel, LatticeSpec, neg_dispersion, torus_neg_dispersion)

logger = logging.getLogger(__name__)

# largest interior cube (sites) for which the averaging kernel is built
# explicitly; larger cubes are evaluated in Fourier space one momentum at a time
KERNEL_ROUTE_MAX_SITES = 2 ** 19
# largest torus (sites) used to hold a kernel out to its textbook radius
MAX_TORUS_SITES = 2 ** 24
MIN_TORUS = 64
RANGE_TOL = 1e-9
SPECTRUM_TOL = 1e-10


def _pole(a: float, theta: np.ndarray) -> np.ndarray:
    return (a == 0.0) & np.all(theta == 0.0, axis=-1)


def green_fourier(p, a: float, eps: float = 1.0):
    """``1 / (a - dispersion(p))`` for one momentum or an array ``(..., d)``."""
    p = np.asarray(p, dtype=float)
    if a < 0:
        raise ValueError("mass a must be >= 0")
    lam = neg_dispersion(p, eps)
    if a == 0 and np.any(lam == 0):
        raise PoleAtZero("the massless resolvent is singular at p = 0")
    out = 1.0 / (a + lam)
    return float(out) if np.ndim(out) == 0 else out


# ------------------------------------------------------------ site Fourier
class SiteFourier:
    """Fourier data of one site-unit averaging measure ``(d, N, a_site)``.

    ``route="kernel"`` contracts the explicit kernel; ``route="direct"``
    solves one Dirichlet problem per momentum.  ``"auto"`` picks the kernel
    when the interior cube has at most ``KERNEL_ROUTE_MAX_SITES`` sites.
    """

    def __init__(self, d: int, n_side: int, a_site: float, route: str = "auto"):
        self.d, self.n_side, self.a_site = d, n_side, float(a_site)
        if route == "auto":
            route = "kernel" if (n_side - 1) ** d <= KERNEL_ROUTE_MAX_SITES else "direct"
        if route not in ("kernel", "direct"):
            raise ValueError(f"unknown route {route!r}")
        self.route = route
        self._site = site_averaging(d, n_side, self.a_site) if route == "kernel" else None

    @functools.cached_property
    def defect(self) -> float:
        if self._site is not None:
            return self._site.defect
        q = get_solver(self.d, self.n_side - 1, self.a_site).killing()
        pts, w = bump_sites(self.d, self.n_side)
        hint = self.n_side // 2 - 1
        return float(np.sum(w * q[tuple((hint - pts).T)]))

    @functools.cached_property
    def second_moment(self) -> float:
        """``sum_u mu(u) |u|^2`` in site units."""
        if self._site is not None:
            m = self._site.masses
            r = m.shape[0] // 2
            ax = np.arange(-r, r + 1) ** 2
            r2 = sum(ax.reshape([-1 if i == k else 1 for i in range(self.d)])
                     for k in range(self.d))
            return float(np.sum(m * r2))
        return self._second_moment_direct()

    def _second_moment_direct(self) -> float:
        # E_k|k + y|^2 = |k|^2 mass_k + 2 k.E_k[y] + E_k|y|^2, with each
        # expectation a Dirichlet solve with polynomial boundary data
        d, N = self.d, self.n_side
        half, n = N // 2, N - 1
        solver = get_solver(d, n, self.a_site)
        y_in = np.arange(-(half - 1), half)
        rhs_sq = np.zeros((n,) * d)
        rhs_lin = [np.zeros((n,) * d) for _ in range(d)]
        for mu in range(d):
            for side, y_mu in ((0, -half), (1, half)):
                sl = [slice(None)] * d
                sl[mu] = slice(0, 1) if side == 0 else slice(n - 1, n)
                tot = float(y_mu) ** 2
                for nu in range(d):
                    if nu != mu:
                        shape = [1] * d
                        shape[nu] = n
                        tot = tot + (y_in.astype(float) ** 2).reshape(shape)
                rhs_sq[tuple(sl)] += tot
                for nu in range(d):
                    if nu == mu:
                        rhs_lin[nu][tuple(sl)] += float(y_mu)
                    else:
                        shape = [1] * d
                        shape[nu] = n
                        rhs_lin[nu][tuple(sl)] += np.broadcast_to(
                            y_in.astype(float).reshape(shape),
                            tuple(1 if i == mu else n for i in range(d)))
        q = solver.killing()
        pts, w = bump_sites(d, N)
        idx = tuple(((half - 1) - pts).T)
        mass_k = 1.0 - q[idx]
        e_sq = solver.solve(rhs_sq)[idx]
        e_lin = np.stack([solver.solve(r)[idx] for r in rhs_lin], axis=1)
        k2 = np.sum(pts ** 2, axis=1)
        return float(np.sum(w * (k2 * mass_k + 2 * np.sum(pts * e_lin, axis=1) + e_sq)))

    def hat(self, theta):
        """``(A_hat, 1 - A_hat)`` at site momenta ``theta`` of shape ``(P, d)``."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        if self._site is not None:
            val, om = _cos_contract(np.asarray(self._site.masses), theta)
            return val, om + self.defect
        return averaging_fourier_direct(self.d, self.n_side, self.a_site, theta)

    def grid(self, size: int, rfft: bool = True) -> np.ndarray:
        """``A_hat`` on the torus momentum grid; needs the explicit kernel."""
        if self._site is None:
            raise TorusTooSmall("grid evaluation needs the explicit kernel route")
        m = self._site.masses
        if m.shape[0] > size:
            raise TorusTooSmall(f"torus of {size} sites cannot hold averaging support")
        r = m.shape[0] // 2
        emb = np.zeros((size,) * self.d)
        emb[(slice(0, m.shape[0]),) * self.d] = m
        emb = np.roll(emb, (-r,) * self.d, axis=tuple(range(self.d)))
        f = scipy.fft.rfftn(emb) if rfft else scipy.fft.fftn(emb)
        return f.real


@functools.lru_cache(maxsize=128)
def site_fourier(d: int, n_side: int, a_site: float, route: str = "auto") -> SiteFourier:
    return SiteFourier(d, n_side, a_site, route)


def _lam(theta):
    return 4.0 * np.sum(np.sin(0.5 * np.asarray(theta)) ** 2, axis=-1)


def _fluct_site(sf: SiteFourier, theta, a_site: float):
    """``(1 - A_hat^2) / (a_site + lam)`` with the removable pole filled in."""
    theta = np.atleast_2d(theta)
    _, om = sf.hat(theta)
    lam = _lam(theta)
    den = a_site + lam
    pole = den == 0.0
    out = np.empty(len(theta))
    ok = ~pole
    out[ok] = om[ok] * (2.0 - om[ok]) / den[ok]
    if np.any(pole):
        out[pole] = sf.second_moment / sf.d
    return out


# --------------------------------------------------------- spectral evaluator
class SpectralEvaluator:
    """Fourier transforms of the level-``n`` objects for mass ``a``.

    Momenta are physical (``p`` in the Brillouin zone of ``eps_n``); arrays
    of shape ``(P, d)`` are evaluated in one call.
    """

    def __init__(self, spec: LatticeSpec, a: float, route: str = "auto"):
        if a < 0:
            raise ValueError("mass a must be >= 0")
        self.spec, self.a = spec, float(a)
        self.eps = spec.eps_f
        self.a_site = self.a * self.eps ** 2
        d = spec.d
        self.base = site_fourier(d, side_sites(spec, 0), self.a_site, route)
        self.factors = tuple(site_fourier(d, side_sites(spec, m), self.a_site, route)
                             for m in range(1, spec.n + 1))

    def _theta(self, p):
        p = np.asarray(p, dtype=float)
        single = p.ndim == 1
        p = np.atleast_2d(p)
        if p.shape[-1] != self.spec.d:
            raise ValueError("momentum dimension mismatch")
        if np.any(np.abs(p) > np.pi / self.eps * (1 + 1e-12)):
            raise ValueError("momentum outside the Brillouin zone")
        return p * self.eps, single

    @staticmethod
    def _out(x, single):
        return float(x[0]) if single else x

    def green(self, p):
        theta, single = self._theta(p)
        if np.any(_pole(self.a_site, theta)):
            raise PoleAtZero("the massless resolvent is singular at p = 0")
        return self._out(self.eps ** 2 / (self.a_site + _lam(theta)), single)

    def averaging(self, p):
        theta, single = self._theta(p)
        return self._out(self.base.hat(theta)[0], single)

    def composite(self, p):
        theta, single = self._theta(p)
        out = np.ones(len(theta))
        for f in self.factors:
            out = out * f.hat(theta)[0]
        return self._out(out, single)

    def fluctuation_eps(self, p):
        """``(1 - A_hat^2) G_hat`` at spacing ``eps_n``; finite at the pole."""
        theta, single = self._theta(p)
        return self._out(self.eps ** 2 * _fluct_site(self.base, theta, self.a_site), single)

    def gamma(self, p):
        """``|cal A_hat_n|^2 (1 - A_hat^2) G_hat``."""
        theta, single = self._theta(p)
        comp = np.ones(len(theta))
        for f in self.factors:
            comp = comp * f.hat(theta)[0]
        g = self.eps ** 2 * _fluct_site(self.base, theta, self.a_site)
        return self._out(comp ** 2 * g, single)

    def remainder(self, p):
        """``|cal A_hat_n|^2 G_hat``."""
        theta, single = self._theta(p)
        if np.any(_pole(self.a_site, theta)):
            raise PoleAtZero("the massless remainder is singular at p = 0")
        comp = np.ones(len(theta))
        for f in self.factors:
            comp = comp * f.hat(theta)[0]
        return self._out(comp ** 2 * self.eps ** 2 / (self.a_site + _lam(theta)), single)

    def sigma2(self) -> float:
        """``lim_{p->0}`` of the massless ``(1 - A_hat^2) G_hat``: ``(1/d) int A |u|^2``."""
        return self.eps ** 2 * self.base.second_moment / self.spec.d


def fluctuation_fourier(spec: LatticeSpec, a: float, p):
    """``Gamma_hat^a_eps(p) = (1 - A_hat(p)^2) G_hat^a_eps(p)`` at level ``spec.n``."""
    return SpectralEvaluator(spec, a).fluctuation_eps(p)


def remainder_fourier(spec: LatticeSpec, a: float, p):
    """``|cal A_hat_n(p)|^2 G_hat^a_{eps_n}(p)``."""
    return SpectralEvaluator(spec, a).remainder(p)


# ------------------------------------------------------------ position space
def tight_radius_eps(d: int, n_side: int) -> int:
    """Largest site radius where the single-scale fluctuation may be nonzero.

    The averaging measure lives within ``N/2 + kmax`` sites and reproduces
    functions that are a-harmonic within ``N/2 - 1 + kmax`` sites, so the
    fluctuation vanishes once ``|x| >= N + 2 kmax``.
    """
    pts, _ = bump_sites(d, n_side)
    kmax = int(np.max(np.abs(pts)))
    return n_side + 2 * kmax - 1


def composite_radius(spec: LatticeSpec) -> int:
    """Support radius (sites) of the composite averaging measure."""
    r = 0
    for m in range(1, spec.n + 1):
        N = side_sites(spec, m)
        pts, _ = bump_sites(spec.d, N)
        r += N // 2 + int(np.max(np.abs(pts)))
    return r


def textbook_radius_sites(spec: LatticeSpec, composite: bool) -> int:
    """Textbook range ``3L`` (single scale) or ``6L`` (rescaled level) in sites."""
    return (6 if composite else 3) * spec.L ** (spec.n + 1)


def _pow2_at_least(x: int) -> int:
    return 1 << max(0, int(x - 1).bit_length())


@dataclass(frozen=True)
class TorusPlan:
    size: int
    method: str  # "direct" or "certified"
    tight_eps: int
    tight_n: int


def plan_torus(spec: LatticeSpec, max_sites: int = MAX_TORUS_SITES) -> TorusPlan:
    """Torus for the position-space construction at level ``spec.n``.

    ``direct`` holds the textbook range of the rescaled level; otherwise the
    torus holds the tight support plus a verified zero shell (``certified``).
    """
    d = spec.d
    t_eps = tight_radius_eps(d, side_sites(spec, 0))
    t_n = t_eps + 2 * composite_radius(spec)
    # room for the zero shell and for k <= 4 differences in Parseval
    need = max(MIN_TORUS, _pow2_at_least(2 * (t_n + 5) + 1))
    direct = _pow2_at_least(2 * textbook_radius_sites(spec, True) + 4)
    direct = max(direct, need)
    if direct ** d <= max_sites:
        return TorusPlan(direct, "direct", t_eps, t_n)
    return TorusPlan(need, "certified", t_eps, t_n)


def _torus_lam(size: int, d: int) -> np.ndarray:
    return torus_neg_dispersion(size, d, 1.0, real_last=True)


@functools.lru_cache(maxsize=2)
def _torus_fluctuations(d: int, p: int, n: int, a_site: float, size: int | None = None):
    """Site-unit fluctuation kernels on a torus, with spectra.

    Returns ``(plan, gamma_eps_site, gamma_n_site)``, full torus arrays with
    the origin at index 0.
    """
    spec = LatticeSpec(d, p, n)
    plan = plan_torus(spec)
    if size is not None:
        if size < 2 * (plan.tight_n + 2) + 1:
            raise TorusTooSmall(f"torus {size} cannot hold radius {plan.tight_n}")
        plan = TorusPlan(size, "certified" if size < plan.size else plan.method,
                         plan.tight_eps, plan.tight_n)
    M = plan.size
    base = site_fourier(d, side_sites(spec, 0), a_site, "kernel")
    lam = _torus_lam(M, d)
    om = 1.0 - base.grid(M)
    om[(0,) * d] = base.defect  # avoids cancellation when the defect is tiny
    den = a_site + lam
    with np.errstate(divide="ignore", invalid="ignore"):
        g_eps = om * (2.0 - om) / den
    if a_site == 0.0:
        g_eps[(0,) * d] = base.second_moment / d
    comp = np.ones_like(g_eps)
    for m in range(1, n + 1):
        comp = comp * site_fourier(d, side_sites(spec, m), a_site, "kernel").grid(M)
    shape = (M,) * d
    k_eps = scipy.fft.irfftn(g_eps, s=shape)
    k_n = scipy.fft.irfftn(comp ** 2 * g_eps, s=shape) if n > 0 else k_eps
    for arr in (k_eps, k_n):
        arr.setflags(write=False)
    return plan, k_eps, k_n


def _extract(torus: np.ndarray, radius: int) -> np.ndarray:
    """Centred ``(2r+1)^d`` block of a torus array with origin at index 0."""
    d = torus.ndim
    rolled = np.roll(torus, (radius,) * d, axis=tuple(range(d)))
    return rolled[(slice(0, 2 * radius + 1),) * d].copy()


def _outside_max(torus: np.ndarray, radius: int) -> float:
    d = torus.ndim
    M = torus.shape[0]
    idx = np.minimum(np.arange(M), M - np.arange(M))
    dist = np.zeros((M,) * d, dtype=int)
    for axis in range(d):
        shape = [1] * d
        shape[axis] = M
        dist = np.maximum(dist, idx.reshape(shape))
    out = np.abs(torus[dist > radius])
    return float(out.max()) if out.size else 0.0


def _finalise(spec, torus, plan_radius, textbook_radius, method, size, label):
    scale = float(np.max(np.abs(torus)))
    outside = _outside_max(torus, plan_radius) / scale
    if outside > RANGE_TOL:
        raise TorusTooSmall(f"{label}: relative mass {outside:.2e} beyond radius {plan_radius}")
    vals = _extract(torus, plan_radius)
    vals *= spec.eps_f ** (2 - spec.d)
    meta = dict(method=method, torus=size, tight_radius_sites=plan_radius,
                textbook_radius_sites=textbook_radius, max_outside_rel=outside)
    if method == "direct":
        meta["max_beyond_textbook_rel"] = _outside_max(torus, textbook_radius - 1) / scale
    else:
        # zero shell beyond the tight radius certifies equality with the
        # whole-lattice kernel, hence also zero beyond the textbook radius
        meta["max_beyond_textbook_rel"] = 0.0 if textbook_radius > plan_radius else outside
    return LatticeKernel.centered(spec, vals, even=True, **meta)


def fluctuation_position(spec: LatticeSpec, a: float) -> LatticeKernel:
    """``Gamma^a_{eps_n}`` as an explicit finite-range kernel.

    ``meta`` records the torus, the method (``direct`` when the torus holds
    the textbook ``3L`` range, ``certified`` when only the tight support plus
    a verified zero shell fits) and the largest relative value found outside.
    """
    if a < 0:
        raise ValueError("mass a must be >= 0")
    plan, k_eps, _ = _torus_fluctuations(spec.d, spec.p, spec.n, float(a) * spec.eps_f ** 2)
    return _finalise(spec, k_eps, plan.tight_eps, textbook_radius_sites(spec, False),
                     plan.method, plan.size, "fluctuation")


@dataclass(frozen=True, eq=False)
class DecompositionLevel:
    """Level ``j`` of the decomposition: ``Gamma^{a_j}_j`` on the ``eps_j`` lattice."""

    j: int
    a_j: float
    spec: LatticeSpec
    gamma: LatticeKernel = field(repr=False)
    diagnostics: dict = field(default_factory=dict)

    @property
    def range_margin(self) -> float:
        return self.diagnostics["range_margin"]


def sobolev_from_spectrum(spec_hat: np.ndarray, size: int, spec: LatticeSpec, ks=range(5)) -> dict:
    """``H_k`` norms of a kernel from its site spectrum on an rfft torus grid.

    ``|f_hat_phys|^2 = eps^4 |spec_hat|^2``; Parseval on the torus then gives
    ``||f||^2_{H_k} = eps^(4-d) M^-d sum |spec_hat|^2 sum_{j<=k} lam_phys^j``.
    """
    d = spec.d
    eps = spec.eps_f
    lam = _torus_lam(size, d) / eps ** 2
    # rfft layout: double every column except the zero and Nyquist ones
    w = np.full(spec_hat.shape[-1], 2.0)
    w[0] = 1.0
    if size % 2 == 0:
        w[-1] = 1.0
    base = np.abs(spec_hat) ** 2 * w
    out = {}
    acc = np.zeros_like(base)
    term = np.ones_like(base)
    for k in range(max(ks) + 1):
        acc += term
        if k in ks:
            out[k] = float(np.sqrt(eps ** (4 - d) * np.sum(base * acc) / size ** d))
        term = term * lam
    return out


def rescaled_fluctuation(spec: LatticeSpec, a: float, ks=range(5)) -> DecompositionLevel:
    """``Gamma^a_n = cal A_n Gamma^a_{eps_n} cal A_n^*`` with diagnostics."""
    if a < 0:
        raise ValueError("mass a must be >= 0")
    plan, _, k_n = _torus_fluctuations(spec.d, spec.p, spec.n, float(a) * spec.eps_f ** 2)
    textbook = textbook_radius_sites(spec, True)
    gamma = _finalise(spec, k_n, plan.tight_n, textbook, plan.method, plan.size, "level")
    # spectrum of the stored kernel itself, not of the formula
    emb = gamma.torus_embedding(plan.size) / spec.eps_f ** (2 - spec.d)
    stored_hat = scipy.fft.rfftn(emb).real
    top = float(np.max(stored_hat))
    support = gamma.support_radius_sites(0.0)
    diag = dict(
        method=plan.method,
        torus=plan.size,
        tight_radius_sites=plan.tight_n,
        support_radius_sites=support,
        textbook_radius_sites=textbook,
        range_margin=(textbook - support) * spec.eps_f,
        max_beyond_textbook_rel=gamma.meta["max_beyond_textbook_rel"],
        min_spectrum=float(np.min(stored_hat)) * spec.eps_f ** 2,
        max_spectrum=top * spec.eps_f ** 2,
        sobolev=sobolev_from_spectrum(stored_hat, plan.size, spec, ks),
    )
    return DecompositionLevel(spec.n, float(a), spec, gamma, diag)


# ----------------------------------------------------------- reconstruction
def reconstruct_green(p, a: float, n: int, d: int, L: int):
    """Compare ``G_hat^a(p)`` on ``Z^d`` with its ``n``-level decomposition.

    ``rhs = sum_{j<n} L^(2j) Gamma_hat_j^{L^(2j) a}(L^j p)
    + L^(2n) cal G_hat_n^{L^(2n) a}(L^n p)``.  Returns
    ``(lhs, rhs, |lhs - rhs| / lhs)``; arrays for a batch of momenta.
    """
    p_ = np.atleast_2d(np.asarray(p, dtype=float))
    if n < 1:
        raise ValueError("need n >= 1")
    pexp = int(round(math.log2(L)))
    if 2 ** pexp != L:
        raise ValueError("L must be a power of two")
    lhs = np.atleast_1d(green_fourier(p_, a, 1.0))
    rhs = np.zeros(len(p_))
    for j in range(n):
        ev = SpectralEvaluator(LatticeSpec(d, pexp, j), L ** (2 * j) * a)
        rhs += L ** (2 * j) * np.atleast_1d(ev.gamma(L ** j * p_))
    ev = SpectralEvaluator(LatticeSpec(d, pexp, n), L ** (2 * n) * a)
    rhs += L ** (2 * n) * np.atleast_1d(ev.remainder(L ** n * p_))
    res = np.abs(lhs - rhs) / lhs
    if np.ndim(p) == 1:
        return float(lhs[0]), float(rhs[0]), float(res[0])
    return lhs, rhs, res


def telescoping_residual(spec: LatticeSpec, a: float, p) -> np.ndarray:
    """``|cal G_hat_n - L^2 cal G_hat_{n+1}^{L^2 a}(L p) - Gamma_hat_n|`` relative."""
    L = spec.L
    ev0 = SpectralEvaluator(spec, a)
    ev1 = SpectralEvaluator(spec.at_level(spec.n + 1), L ** 2 * a)
    p = np.atleast_2d(p)
    lhs = ev0.remainder(p) - L ** 2 * ev1.remainder(L * p)
    g = ev0.gamma(p)
    return np.abs(lhs - g) / np.abs(ev0.remainder(p))


# ----------------------------------------------------------- convergence
@dataclass(frozen=True)
class ConvergenceReport:
    values: np.ndarray
    differences: np.ndarray
    ratios: np.ndarray
    extrapolated: float


def convergence_sequence(p, a: float, n_max: int, d: int, L: int) -> ConvergenceReport:
    """``Gamma_hat^a_n(p)`` for ``n = 0..n_max`` at fixed physical ``(p, a)``."""
    if n_max < 2:
        raise ValueError("n_max must be >= 2")
    pexp = int(round(math.log2(L)))
    p = np.asarray(p, dtype=float)
    vals = np.array([SpectralEvaluator(LatticeSpec(d, pexp, n), a).gamma(p)
                     for n in range(n_max + 1)])
    diffs = np.abs(np.diff(vals))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = diffs[1:] / diffs[:-1]
    r = ratios[-1] if len(ratios) and np.isfinite(ratios[-1]) and ratios[-1] < 1 else 0.0
    # geometric tail estimate
    step = vals[-1] - vals[-2]
    extrap = float(vals[-1] + step * r / (1 - r)) if r else float(vals[-1])
    return ConvergenceReport(vals, diffs, ratios, extrap)


@dataclass(frozen=True)
class DecayReport:
    k: int
    envelope_max: float
    at_zero: float
    finite: bool


def decay_check(level: DecompositionLevel, k: int, n_samples: int = 4096, seed: int = 0) -> DecayReport:
    """Max of ``Gamma_hat_n(p) (1 + p^2)^(2k)`` over sampled Brillouin-zone momenta."""
    if not 0 <= k <= 8:
        raise ValueError("k must be in 0..8")
    spec = level.spec
    ev = SpectralEvaluator(spec, level.a_j)
    bound = np.pi / spec.eps_f
    rng = np.random.default_rng(seed)
    ps = rng.uniform(-bound, bound, size=(n_samples, spec.d))
    ps = np.vstack([np.zeros(spec.d), ps])
    vals = ev.gamma(ps)
    env = vals * (1.0 + np.sum(ps ** 2, axis=1)) ** (2 * k)
    m = float(np.max(env))
    return DecayReport(k, m, float(vals[0]), bool(np.isfinite(m)))


def decay_uniformity(reports: list) -> float:
    """Ratio of largest to smallest envelope across levels."""
    e = np.array([r.envelope_max for r in reports])
    return float(e.max() / e.min())
