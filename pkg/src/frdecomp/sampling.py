"""Gaussian fields with finite-range covariances, sampled spectrally on a torus.

A kernel whose support fits strictly inside the torus periodises without
overlap, so the circulant covariance on the torus equals the kernel on the
fundamental domain and its DFT is the (nonnegative) spectrum.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.fft

from .errors import NegativeSpectrumBeyondTolerance, TorusTooSmall
from .lattice import LatticeKernel

logger = logging.getLogger(__name__)

SPECTRUM_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class GaussianSampler:
    """Spectral sampler for covariance ``E zeta(x) zeta(y) = K(x - y)`` on ``M^d`` sites."""

    kernel: LatticeKernel = field(repr=False)
    M: int
    seed: int
    spectrum: np.ndarray = field(repr=False)
    n_clamped: int
    rng: np.random.Generator = field(repr=False)

    @property
    def d(self) -> int:
        return self.kernel.d

    def torus_covariance(self) -> np.ndarray:
        """Covariance ``K(x)`` for every torus offset ``x`` (origin at index 0)."""
        return scipy.fft.irfftn(self.spectrum, s=(self.M,) * self.d)


@dataclass(frozen=True, eq=False)
class FieldSample:
    field: np.ndarray = field(repr=False)
    level: int | None
    seed: int


def build_sampler(kernel: LatticeKernel, M: int, seed: int) -> GaussianSampler:
    """Prepare a spectral sampler; ``M`` must be a power of two larger than twice the range."""
    if M < 1 or M & (M - 1):
        raise ValueError("torus size must be a power of two")
    r = kernel.support_radius_sites(0.0)
    if M < 2 * r + 1:
        raise TorusTooSmall(f"torus of {M} sites cannot hold kernel of radius {r}")
    spec = scipy.fft.rfftn(kernel.torus_embedding(M)).real
    top = float(np.max(np.abs(spec)))
    neg = spec < 0
    if np.any(spec < -SPECTRUM_TOL * top):
        raise NegativeSpectrumBeyondTolerance(
            f"spectrum minimum {spec.min():.3e} below -{SPECTRUM_TOL:g} x max")
    n_neg = int(np.count_nonzero(neg))
    if n_neg:
        logger.info("clamped %d slightly negative spectrum values", n_neg)
        spec = np.where(neg, 0.0, spec)
    spec.setflags(write=False)
    return GaussianSampler(kernel, M, int(seed), spec, n_neg, np.random.default_rng(seed))


def _draw(sampler: GaussianSampler, count: int, rng: np.random.Generator) -> np.ndarray:
    shape = (count,) + (sampler.M,) * sampler.d
    axes = tuple(range(1, sampler.d + 1))
    white = rng.standard_normal(shape)
    # irfftn(sqrt(lam) * rfftn(w)) has circulant covariance with eigenvalues lam
    coef = scipy.fft.rfftn(white, axes=axes) * np.sqrt(sampler.spectrum)
    return scipy.fft.irfftn(coef, s=shape[1:], axes=axes)


def sample(sampler: GaussianSampler, count: int | None = None):
    """Draw one field (``count=None``) or a stacked batch of ``count`` fields."""
    level = sampler.kernel.meta.get("level")
    if count is None:
        return FieldSample(_draw(sampler, 1, sampler.rng)[0], level, sampler.seed)
    return _draw(sampler, count, sampler.rng)


def empirical_covariance(fields: np.ndarray, offsets: Sequence) -> tuple[np.ndarray, np.ndarray]:
    """Mean of ``zeta(x) zeta(x + r)`` over samples and torus sites, with standard errors.

    Samples are independent; the standard error is taken across samples of
    the site-averaged product.
    """
    d = fields.ndim - 1
    axes = tuple(range(1, d + 1))
    est, se = [], []
    for r in offsets:
        shifted = np.roll(fields, tuple(-int(v) for v in r), axis=axes)
        per = np.mean(fields * shifted, axis=axes)
        est.append(per.mean())
        se.append(per.std(ddof=1) / np.sqrt(len(per)))
    return np.array(est), np.array(se)


def synthesize(levels: Sequence, seed: int, M: int | None = None, count: int | None = None,
               phi_dim: float | None = None) -> np.ndarray:
    """``phi = sum_j L^(-j [phi]) zeta_j`` with independent ``zeta_j ~ Gamma_j``.

    ``zeta_j`` lives on spacing ``L^-j`` and is read at ``x / L^j``, which has
    the same site index as ``x``; all fields share one ``M^d`` torus.
    """
    if not levels:
        raise ValueError("need at least one level")
    spec0 = levels[0].spec
    d, L = spec0.d, spec0.L
    for i, lv in enumerate(levels):
        if lv.spec.d != d or lv.spec.L != L or lv.j != i:
            raise ValueError("levels must share (d, L) and be consecutive from j = 0")
        if not np.isclose(lv.a_j, L ** (2 * i) * levels[0].a_j, rtol=1e-12):
            raise ValueError("level masses must follow a_j = L^(2j) a_0")
    phi_dim = (d - 2) / 2.0 if phi_dim is None else phi_dim
    if M is None:
        r = max(lv.gamma.support_radius_sites() for lv in levels)
        M = 1 << int(2 * r + 1 - 1).bit_length()
    children = np.random.SeedSequence(seed).spawn(len(levels))
    out = None
    for j, (lv, child) in enumerate(zip(levels, children)):
        s = build_sampler(lv.gamma, M, int(child.generate_state(1)[0]))
        z = sample(s, 1 if count is None else count)
        term = float(L) ** (-j * phi_dim) * z
        out = term if out is None else out + term
    return out[0] if count is None else out


def rg_step(z: Callable, level, phi: np.ndarray, n_mc: int, seed: int,
            phi_dim: float | None = None, batch: int = 1000) -> tuple:
    """Monte Carlo ``int d mu_Gamma(zeta) z(zeta + phi_{1/L})`` and its standard error.

    ``level`` is a :class:`GaussianSampler`, a ``DecompositionLevel`` or a
    kernel; the last two are sampled on the torus of ``phi``.
    ``phi_{1/L}(x) = L^(-[phi]) phi(x / L)``; on the shared torus index this
    is ``L^(-[phi]) phi`` at the same site, so no interpolation is needed.
    ``z`` maps one field to a real or complex number.  ``[phi]`` defaults
    to ``(d - 2) / 2``.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    phi = np.asarray(phi, dtype=float)
    if isinstance(level, GaussianSampler):
        sampler = level
    else:
        kernel = getattr(level, "gamma", level)
        sampler = build_sampler(kernel, phi.shape[0], seed)
    if phi.shape != (sampler.M,) * sampler.d:
        raise ValueError("phi must live on the sampler torus")
    L = sampler.kernel.spec.L
    phi_dim = (sampler.d - 2) / 2.0 if phi_dim is None else phi_dim
    shift = float(L) ** (-phi_dim) * phi
    rng = np.random.default_rng(seed)
    vals = []
    done = 0
    while done < n_mc:
        m = min(batch, n_mc - done)
        zeta = _draw(sampler, m, rng)
        vals.append(np.asarray([z(f + shift) for f in zeta]))
        done += m
    vals = np.concatenate(vals)
    est = vals.mean()
    se = vals.std(ddof=1) / np.sqrt(n_mc) if n_mc > 1 else float("nan")
    return est, se


def exact_covariance(levels: Sequence, offsets: Sequence, phi_dim: float | None = None) -> np.ndarray:
    """``sum_j L^(-2j [phi]) Gamma_j(x)`` at site offsets ``x`` (zero outside each box)."""
    d, L = levels[0].spec.d, levels[0].spec.L
    phi_dim = (d - 2) / 2.0 if phi_dim is None else phi_dim
    out = np.zeros(len(offsets))
    for j, lv in enumerate(levels):
        r = lv.gamma.box_radius
        vals = [lv.gamma(o) if max(abs(int(v)) for v in o) <= r else 0.0 for o in offsets]
        out += float(L) ** (-2 * j * phi_dim) * np.asarray(vals)
    return out


@dataclass(frozen=True)
class CovarianceStudy:
    offsets: np.ndarray
    estimate: np.ndarray
    stderr: np.ndarray
    exact: np.ndarray
    n_samples: int
    M: int

    @property
    def z_scores(self) -> np.ndarray:
        return (self.estimate - self.exact) / self.stderr

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z_scores)))


def covariance_study(levels: Sequence, offsets: Sequence, n_samples: int, seed: int,
                     M: int | None = None, batch: int = 1000,
                     phi_dim: float | None = None) -> CovarianceStudy:
    """Empirical covariance of synthesized fields against the exact level sum.

    Fields are drawn in batches with independent child seeds; the
    per-sample site-averaged products are kept, so memory stays bounded.
    """
    offsets = np.atleast_2d(np.asarray(offsets, dtype=int))
    if M is None:
        # torus must hold the supports and keep every offset from wrapping
        r = max(max(lv.gamma.support_radius_sites() for lv in levels),
                int(np.max(np.abs(offsets))))
        M = 1 << (2 * r).bit_length()
    children = np.random.SeedSequence(seed).spawn(-(-n_samples // batch))
    per = []
    left = n_samples
    for child in children:
        m = min(batch, left)
        fields_ = synthesize(levels, int(child.generate_state(1)[0]), M=M, count=m,
                             phi_dim=phi_dim)
        axes = tuple(range(1, fields_.ndim))
        per.append(np.stack([np.mean(fields_ * np.roll(fields_, tuple(-int(v) for v in r), axis=axes),
                                     axis=axes) for r in offsets], axis=1))
        M = fields_.shape[1]
        left -= m
    per = np.concatenate(per)
    est = per.mean(axis=0)
    se = per.std(axis=0, ddof=1) / np.sqrt(n_samples)
    return CovarianceStudy(offsets, est, se, exact_covariance(levels, offsets, phi_dim),
                           n_samples, int(M))
