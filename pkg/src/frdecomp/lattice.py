"""Lattice geometry, finite differences, norms and elementary identities.

Points of the spacing-``eps`` lattice are stored as integer site
coordinates; ``eps`` only ever appears as a scale factor.  A
:class:`LatticeKernel` is a finitely supported function stored on a dense
box together with the array index of the lattice origin.  Values are
densities against the lattice measure ``dz = eps**d * sum``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
import scipy.fft

from .errors import BoundaryNotZero, ConfigError

MAX_DIM = 4


@dataclass(frozen=True)
class LatticeSpec:
    """Lattice ``(eps_n Z)^d`` with ``L = 2**p`` and ``eps_n = L**-n``."""

    d: int
    p: int
    n: int = 0

    def __post_init__(self):
        if not 1 <= self.d <= MAX_DIM:
            raise ConfigError(f"dimension must be in 1..{MAX_DIM}, got {self.d}")
        if self.p < 1:
            raise ConfigError(f"p must be >= 1 (L = 2**p), got {self.p}")
        if self.n < 0:
            raise ConfigError(f"level must be >= 0, got {self.n}")

    @classmethod
    def from_L(cls, d: int, L: int, n: int = 0) -> "LatticeSpec":
        if L < 2 or L & (L - 1):
            raise ConfigError(f"L must be a power of two >= 2, got {L}")
        return cls(d, L.bit_length() - 1, n)

    @property
    def L(self) -> int:
        return 2 ** self.p

    @property
    def eps(self) -> Fraction:
        return Fraction(1, self.L ** self.n)

    @property
    def eps_f(self) -> float:
        return float(self.eps)

    def at_level(self, n: int) -> "LatticeSpec":
        return LatticeSpec(self.d, self.p, n)


@dataclass(frozen=True)
class MomentumPoint:
    """A momentum inside the Brillouin zone ``[-pi/eps, pi/eps]^d``."""

    p: tuple
    eps: float = 1.0

    def __post_init__(self):
        p = tuple(float(v) for v in np.atleast_1d(self.p))
        bound = np.pi / float(self.eps)
        if any(abs(v) > bound * (1 + 1e-12) for v in p):
            raise ValueError(f"momentum {p} outside Brillouin zone of spacing {self.eps}")
        object.__setattr__(self, "p", p)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.p, dtype=dtype)


@dataclass(frozen=True, eq=False)
class LatticeKernel:
    """Finitely supported real function on ``(eps Z)^d``.

    ``values[idx]`` is the value at site ``idx - origin``; everything outside
    the stored box is zero.
    """

    spec: LatticeSpec
    values: np.ndarray
    origin: tuple
    even: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != self.spec.d:
            raise ValueError(f"values have ndim {vals.ndim}, lattice has d={self.spec.d}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "origin", tuple(int(o) for o in self.origin))

    # construction -----------------------------------------------------
    @classmethod
    def centered(cls, spec: LatticeSpec, values, even: bool = False, **meta) -> "LatticeKernel":
        values = np.asarray(values, dtype=float)
        if any(s % 2 == 0 for s in values.shape):
            raise ValueError("centered kernels need odd extents")
        return cls(spec, values, tuple(s // 2 for s in values.shape), even, dict(meta))

    @classmethod
    def delta(cls, spec: LatticeSpec, value: float = 1.0) -> "LatticeKernel":
        return cls.centered(spec, np.full((1,) * spec.d, float(value)), even=True)

    @classmethod
    def from_function(cls, spec: LatticeSpec, func, radius: int, even: bool = False) -> "LatticeKernel":
        """Sample ``func(x)`` (physical coordinates, shape ``(..., d)``) on a box."""
        ax = np.arange(-radius, radius + 1)
        grid = np.stack(np.meshgrid(*([ax] * spec.d), indexing="ij"), axis=-1)
        return cls.centered(spec, func(grid * spec.eps_f), even=even)

    # geometry ---------------------------------------------------------
    @property
    def d(self) -> int:
        return self.spec.d

    @property
    def lower(self) -> np.ndarray:
        """Site coordinates of ``values[0, ..., 0]``."""
        return -np.asarray(self.origin)

    @property
    def upper(self) -> np.ndarray:
        return self.lower + np.asarray(self.values.shape) - 1

    @property
    def box_radius(self) -> int:
        """Sup-norm radius (in sites) of the stored box."""
        return int(max(np.max(np.abs(self.lower)), np.max(np.abs(self.upper))))

    def support_radius_sites(self, atol: float = 0.0) -> int:
        """Largest sup-norm site distance with ``|value| > atol``; -1 if none."""
        nz = np.argwhere(np.abs(self.values) > atol)
        if nz.size == 0:
            return -1
        return int(np.max(np.abs(nz - np.asarray(self.origin))))

    def support_radius(self, atol: float = 0.0) -> float:
        return self.support_radius_sites(atol) * self.spec.eps_f

    def site_axes(self) -> list:
        return [np.arange(lo, hi + 1) for lo, hi in zip(self.lower, self.upper)]

    def __call__(self, offset: Sequence[int]) -> float:
        idx = tuple(int(o) + c for o, c in zip(offset, self.origin))
        if all(0 <= i < s for i, s in zip(idx, self.values.shape)):
            return float(self.values[idx])
        return 0.0

    # reshaping --------------------------------------------------------
    def on_box(self, lower: Sequence[int], shape: Sequence[int]) -> np.ndarray:
        """Values on the box with corner ``lower`` and ``shape`` (zero-padded/cropped)."""
        out = np.zeros(tuple(shape))
        src, dst = [], []
        for lo_self, n_self, lo, n in zip(self.lower, self.values.shape, lower, shape):
            a = max(lo_self, lo)
            b = min(lo_self + n_self, lo + n)
            if b <= a:
                return out
            src.append(slice(a - lo_self, b - lo_self))
            dst.append(slice(a - lo, b - lo))
        out[tuple(dst)] = self.values[tuple(src)]
        return out

    def recentered(self, radius: int) -> "LatticeKernel":
        arr = self.on_box([-radius] * self.d, [2 * radius + 1] * self.d)
        return LatticeKernel(self.spec, arr, (radius,) * self.d, self.even, dict(self.meta))

    def cropped(self, atol: float = 0.0) -> "LatticeKernel":
        return self.recentered(max(self.support_radius_sites(atol), 0))

    def with_values(self, values, even: bool | None = None) -> "LatticeKernel":
        return LatticeKernel(self.spec, values, self.origin,
                             self.even if even is None else even, dict(self.meta))

    def shifted(self, b: Sequence[int]) -> "LatticeKernel":
        """``x -> f(x - b)`` for a site vector ``b``."""
        origin = tuple(o - int(s) for o, s in zip(self.origin, b))
        return LatticeKernel(self.spec, self.values, origin, False, dict(self.meta))

    def reflected(self) -> "LatticeKernel":
        """``x -> f(-x)``."""
        vals = self.values[(slice(None, None, -1),) * self.d]
        origin = tuple(s - 1 - o for s, o in zip(self.values.shape, self.origin))
        return LatticeKernel(self.spec, vals, origin, self.even, dict(self.meta))

    def torus_embedding(self, size: int) -> np.ndarray:
        """Periodise onto ``size**d`` sites with the origin at index 0."""
        out = np.zeros((size,) * self.d)
        idx = np.ix_(*[np.mod(ax, size) for ax in self.site_axes()])
        np.add.at(out, idx, self.values)
        return out

    # arithmetic -------------------------------------------------------
    def _binary(self, other: "LatticeKernel", op) -> "LatticeKernel":
        _check_same_lattice(self, other)
        lo = np.minimum(self.lower, other.lower)
        hi = np.maximum(self.upper, other.upper)
        shape = hi - lo + 1
        vals = op(self.on_box(lo, shape), other.on_box(lo, shape))
        return LatticeKernel(self.spec, vals, tuple(-lo), self.even and other.even)

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, other):
        if isinstance(other, LatticeKernel):
            return self._binary(other, np.multiply)
        return self.with_values(self.values * float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


def _check_same_lattice(f: LatticeKernel, g: LatticeKernel) -> None:
    if f.spec.d != g.spec.d or f.spec.eps != g.spec.eps:
        raise ValueError("kernels live on different lattices")


def measure_integral(f: LatticeKernel) -> float:
    """``eps**d * sum_z f(z)``."""
    return float(f.spec.eps_f ** f.d * np.sum(f.values))


def inner(f: LatticeKernel, g: LatticeKernel) -> float:
    """``<f, g>`` under the lattice measure."""
    return measure_integral(f * g)


def sup_distance(x, y) -> float:
    return float(np.max(np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))))


def _parse_direction(direction: int, d: int) -> tuple[int, int]:
    axis, sign = abs(int(direction)) - 1, int(np.sign(direction))
    if sign == 0 or not 0 <= axis < d:
        raise ValueError(f"direction must be +-1..+-{d}, got {direction}")
    return axis, sign


def signed_directions(d: int) -> list[int]:
    """The ``2d`` signed unit directions ``+1, -1, +2, -2, ...``."""
    return [s * (mu + 1) for mu in range(d) for s in (1, -1)]


def _padded(f: LatticeKernel, pad: int) -> tuple[np.ndarray, np.ndarray]:
    lo = f.lower - pad
    return f.on_box(lo, np.asarray(f.values.shape) + 2 * pad), lo


def lattice_derivative(f: LatticeKernel, direction: int) -> LatticeKernel:
    """Forward (``direction > 0``) or backward (``< 0``) difference.

    ``direction = +-(mu + 1)`` selects axis ``mu``; the result is
    ``(f(x + eps*e) - f(x)) / eps`` with ``e = sign * e_mu``.
    """
    axis, sign = _parse_direction(direction, f.d)
    arr, lo = _padded(f, 1)
    out = (np.roll(arr, -sign, axis=axis) - arr) / f.spec.eps_f
    return LatticeKernel(f.spec, out, tuple(-lo))


def laplacian_apply(f: LatticeKernel) -> LatticeKernel:
    """``eps**-2 * sum_{y ~ x} (f(y) - f(x))``."""
    arr, lo = _padded(f, 1)
    out = -2 * f.d * arr
    for axis in range(f.d):
        out += np.roll(arr, 1, axis=axis) + np.roll(arr, -1, axis=axis)
    return LatticeKernel(f.spec, out / f.spec.eps_f ** 2, tuple(-lo), f.even)


def dispersion(p, eps: float = 1.0) -> np.ndarray | float:
    """Fourier symbol ``2 eps**-2 sum_mu (cos(eps p_mu) - 1)`` of the Laplacian."""
    p = np.asarray(p, dtype=float)
    eps = float(eps)
    val = 2.0 / eps ** 2 * np.sum(np.cos(eps * p) - 1.0, axis=-1)
    return float(val) if np.ndim(val) == 0 else val


def neg_dispersion(p, eps: float = 1.0) -> np.ndarray | float:
    """``-dispersion`` computed without cancellation: ``4 eps**-2 sum sin^2``."""
    p = np.asarray(p, dtype=float)
    eps = float(eps)
    val = 4.0 / eps ** 2 * np.sum(np.sin(0.5 * eps * p) ** 2, axis=-1)
    return float(val) if np.ndim(val) == 0 else val


def _domain_mask(f: LatticeKernel, lo, shape, domain) -> np.ndarray:
    if domain is None:
        return np.ones(tuple(shape), dtype=bool)
    pts = np.atleast_2d(np.asarray(domain, dtype=int)) - lo
    mask = np.zeros(tuple(shape), dtype=bool)
    ok = np.all((pts >= 0) & (pts < np.asarray(shape)), axis=1)
    mask[tuple(pts[ok].T)] = True
    return mask


def sobolev_norm(f: LatticeKernel, k: int, domain=None) -> float:
    """Lattice ``H_k`` norm by explicit enumeration of signed derivatives.

    ``domain`` is an array of integer site coordinates; ``None`` means the
    whole lattice.  Cost grows like ``(2d)**k``; use
    :func:`sobolev_norm_spectral` for large kernels on the whole lattice.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    eps_d = f.spec.eps_f ** f.d
    lo = f.lower - k
    shape = np.asarray(f.values.shape) + 2 * k
    mask = _domain_mask(f, lo, shape, domain)
    total = 0.0
    layer = [f]
    for j in range(k + 1):
        s = sum(float(np.sum(g.on_box(lo, shape)[mask] ** 2)) for g in layer)
        total += 2.0 ** -j * eps_d * s
        if j < k:
            layer = [lattice_derivative(g, e) for g in layer for e in signed_directions(f.d)]
    return float(np.sqrt(total))


def sobolev_norm_spectral(f: LatticeKernel, k: int, size: int | None = None) -> float:
    """Whole-lattice ``H_k`` norm via Parseval.

    The signed-derivative sum collapses to ``sum_j (-dispersion)**j`` times
    ``|f_hat|**2``; Parseval on a torus is exact once the torus holds the
    support of ``f`` and all of its ``k``-th differences.
    """
    need = 2 * (f.box_radius + k) + 1
    size = need if size is None else size
    if size < need:
        raise ValueError(f"torus of {size} sites cannot hold support ({need} needed)")
    eps = f.spec.eps_f
    fh = np.abs(scipy.fft.fftn(f.torus_embedding(size))) ** 2
    lap = torus_neg_dispersion(size, f.d, eps)
    weight = sum(lap ** j for j in range(k + 1))
    return float(np.sqrt(eps ** f.d * np.sum(fh * weight) / size ** f.d))


def torus_momenta(size: int, eps: float = 1.0, real: bool = False) -> np.ndarray:
    """1-D momenta ``2 pi k / (size eps)`` in FFT order (``rfft`` order if ``real``)."""
    freqs = np.fft.rfftfreq(size) if real else np.fft.fftfreq(size)
    return 2 * np.pi * freqs / eps


def torus_neg_dispersion(size: int, d: int, eps: float = 1.0, real_last: bool = False) -> np.ndarray:
    """``-dispersion`` on the full torus momentum grid (broadcast sum)."""
    out = 0.0
    for axis in range(d):
        real = real_last and axis == d - 1
        q = torus_momenta(size, eps, real=real)
        term = 4.0 / eps ** 2 * np.sin(0.5 * eps * q) ** 2
        shape = [1] * d
        shape[axis] = term.size
        out = out + term.reshape(shape)
    return out


def green_identity_residual(h: LatticeKernel, phi: LatticeKernel, a: float,
                            relative: bool = False) -> float:
    """Mismatch of the localised lattice energy identity.

    With ``g = (a - Lap) h`` the identity reads

        a <phi h^2> + 1/2 sum_{+-e} <phi (grad_e h)^2> = <phi h g> + 1/2 <(Lap phi) h^2>

    and holds exactly on the lattice for zero-extended ``h``.
    """
    g = h * a - laplacian_apply(h)
    hh = h * h
    lhs_terms = [a * inner(phi, hh)]
    for e in signed_directions(h.d):
        dh = lattice_derivative(h, e)
        lhs_terms.append(0.5 * inner(phi, dh * dh))
    rhs_terms = [inner(phi, h * g), 0.5 * inner(laplacian_apply(phi), hh)]
    lhs, rhs = sum(lhs_terms), sum(rhs_terms)
    resid = abs(lhs - rhs)
    if not relative:
        return resid
    scale = sum(abs(t) for t in lhs_terms + rhs_terms)
    return resid / scale if scale > 0 else 0.0


def poincare_constant(d: int) -> float:
    return float(d)


def poincare_residual(u: LatticeKernel, atol: float = 0.0) -> tuple[float, float]:
    """``(int |u|^2, C * sum_i int |grad_i u|^2)`` on the unit cube lattice.

    ``u`` must be stored on exactly ``[0, 1]^d`` (origin at array index 0 and
    ``1/eps + 1`` sites per side) and vanish on the cube's boundary.
    """
    spec = u.spec
    K = spec.eps.denominator if spec.eps.numerator == 1 else None
    if K is None or u.values.shape != (K + 1,) * u.d or any(o != 0 for o in u.origin):
        raise ValueError("u must be stored on the unit cube lattice [0, 1]^d")
    arr = u.values
    edge = np.zeros(arr.shape, dtype=bool)
    for axis in range(u.d):
        sl = [slice(None)] * u.d
        sl[axis] = [0, K]
        edge[tuple(sl)] = True
    if np.any(np.abs(arr[edge]) > atol):
        raise BoundaryNotZero("u does not vanish on the boundary of the unit cube")
    eps_d = spec.eps_f ** u.d
    lhs = eps_d * float(np.sum(arr ** 2))
    grad = 0.0
    for mu in range(u.d):
        du = lattice_derivative(u, mu + 1).on_box(u.lower, arr.shape)
        grad += eps_d * float(np.sum(du ** 2))
    return lhs, poincare_constant(u.d) * grad


def hyperoctahedral(d: int) -> Iterable[tuple[tuple[int, ...], tuple[int, ...]]]:
    """All ``(permutation, sign-flip mask)`` pairs of the cube symmetry group."""
    for perm in itertools.permutations(range(d)):
        for flips in itertools.product((0, 1), repeat=d):
            yield perm, flips


def symmetrize_cubic(arr: np.ndarray) -> np.ndarray:
    """Average a centred array over the ``2**d * d!`` cube symmetries."""
    d = arr.ndim
    if len(set(arr.shape)) != 1:
        raise ValueError("cubic symmetrisation needs a cubical array")
    out = np.zeros_like(arr)
    count = 0
    for perm, flips in hyperoctahedral(d):
        t = arr.transpose(perm)
        axes = tuple(i for i, f in enumerate(flips) if f)
        out += np.flip(t, axis=axes) if axes else t
        count += 1
    return out / count
