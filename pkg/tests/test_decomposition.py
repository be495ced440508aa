import itertools
import math

import numpy as np
import pytest
import scipy.fft

from frdecomp.averaging import build_averaging_kernel, second_moment
from frdecomp.decomposition import (SpectralEvaluator, convergence_sequence, decay_check,
                                    decay_uniformity, fluctuation_fourier, fluctuation_position,
                                    green_fourier, reconstruct_green, remainder_fourier,
                                    rescaled_fluctuation, telescoping_residual)
from frdecomp.errors import PoleAtZero
from frdecomp.lattice import LatticeSpec, neg_dispersion


def spec(d, L=2, n=0):
    return LatticeSpec.from_L(d, L, n)


def cubic_images(arr):
    d = arr.ndim
    for perm in itertools.permutations(range(d)):
        t = arr.transpose(perm)
        for flips in itertools.product([False, True], repeat=d):
            yield t[tuple(slice(None, None, -1) if f else slice(None) for f in flips)]


# ------------------------------------------------------------ green_fourier
def test_green_fourier_examples():
    assert green_fourier(np.zeros(3), 2.0) == 0.5
    assert green_fourier([math.pi], 0.0, 1.0) == pytest.approx(0.25, rel=1e-15)


def test_green_fourier_pole():
    with pytest.raises(PoleAtZero):
        green_fourier(np.zeros(2), 0.0)


def test_green_fourier_massless_bound():
    rng = np.random.default_rng(0)
    for d, eps in [(1, 1.0), (2, 0.5), (3, 0.25)]:
        p = rng.uniform(-math.pi / eps, math.pi / eps, size=(5000, d))
        g = green_fourier(p, 0.0, eps)
        # the dispersion sandwich gives c = pi^2 / 2
        assert np.all(g * np.sum(p ** 2, axis=1) <= math.pi ** 2 / 2 + 1e-12)
        assert np.all(g > 0)


# ------------------------------------------------------- fluctuation_fourier
@pytest.mark.parametrize("d,L,n", [(1, 2, 0), (2, 2, 1), (3, 2, 0), (2, 4, 1)])
def test_fluctuation_at_zero_massive(d, L, n):
    s = spec(d, L, n)
    mass = build_averaging_kernel(s, 0, 1.0).mass
    got = fluctuation_fourier(s, 1.0, np.zeros(d))
    assert got == pytest.approx((1 - mass ** 2) * 1.0, rel=1e-10)


@pytest.mark.parametrize("d,L,n", [(1, 2, 1), (2, 2, 1), (3, 2, 0), (2, 4, 0)])
def test_massless_limit_is_second_moment(d, L, n):
    s = spec(d, L, n)
    k = build_averaging_kernel(s, 0, 0.0)
    sigma2 = np.trace(second_moment(k)) / d  # oracle from the position-space measure
    assert SpectralEvaluator(s, 0.0).sigma2() == pytest.approx(sigma2, rel=1e-10)
    assert fluctuation_fourier(s, 0.0, np.zeros(d)) == pytest.approx(sigma2, rel=1e-10)
    for r in (1e-2, 3e-3, 1e-3):
        for direction in (np.eye(d)[0], np.ones(d) / math.sqrt(d)):
            val = fluctuation_fourier(s, 0.0, r * direction)
            assert val == pytest.approx(sigma2, rel=1e-3)


@pytest.mark.parametrize("a", [0.0, 1.0])
def test_fluctuation_continuity(a):
    # Lipschitz bound on the transform: sum |x| |Gamma(x)| dz
    s = spec(2, 2, 1)
    gam = fluctuation_position(s, a)
    eps = s.eps_f
    axes = [np.arange(lo, hi + 1) * eps for lo, hi in zip(gam.lower, gam.upper)]
    grids = np.meshgrid(*axes, indexing="ij")
    lip = eps ** 2 * np.sum(np.sqrt(sum(g ** 2 for g in grids)) * np.abs(gam.values))
    h = 1e-2
    line = np.stack([np.arange(-2.0, 2.0, h), np.full(400, 0.3)], axis=1)
    vals = fluctuation_fourier(s, a, line)
    assert np.max(np.abs(np.diff(vals))) <= lip * h * (1 + 1e-12)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_fluctuation_nonnegative_and_monotone_in_mass(d):
    s = spec(d, 2, 1)
    rng = np.random.default_rng(d)
    p = rng.uniform(-np.pi / s.eps_f, np.pi / s.eps_f, size=(2000, d))
    for a in (0.0, 0.25, 1.0, 4.0):
        assert np.min(fluctuation_fourier(s, a, p)) >= -1e-12
    at0 = [fluctuation_fourier(s, a, np.zeros(d)) for a in (0.0, 0.25, 1.0, 4.0)]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(at0, at0[1:]))


# ------------------------------------------------------ fluctuation_position
@pytest.mark.parametrize("d,L,n,a", [(1, 2, 2, 0.0), (2, 2, 1, 1.0), (2, 4, 1, 0.0),
                                     (3, 2, 1, 0.25)])
def test_fluctuation_position_range_and_positivity(d, L, n, a):
    s = spec(d, L, n)
    gam = fluctuation_position(s, a)
    assert gam((0,) * d) > 0
    radius = 3 * L  # physical
    assert gam.support_radius() < radius
    assert gam.meta["max_beyond_textbook_rel"] <= 1e-9


@pytest.mark.parametrize("d,L,n,a", [(1, 2, 1, 1.0), (2, 2, 1, 0.0), (2, 4, 0, 4.0)])
def test_fluctuation_position_dft_round_trip(d, L, n, a):
    s = spec(d, L, n)
    gam = fluctuation_position(s, a)
    M = 32
    eps = s.eps_f
    # physical transform eps^d sum Gamma(x) e^{-ipx} at p = 2 pi k / (M eps)
    hat = eps ** d * scipy.fft.fftn(gam.torus_embedding(M)).real
    k = np.stack(np.meshgrid(*[np.fft.fftfreq(M)] * d, indexing="ij"), -1).reshape(-1, d)
    p = 2 * np.pi * k / eps
    ref = fluctuation_fourier(s, a, p)
    assert np.max(np.abs(hat.reshape(-1) - ref)) <= 1e-10 * np.max(np.abs(ref))


@pytest.mark.parametrize("d,n", [(2, 1), (3, 1)])
def test_fluctuation_position_cubic_symmetry(d, n):
    vals = fluctuation_position(spec(d, 2, n), 0.5).values
    for img in cubic_images(vals):
        assert np.allclose(img, vals, rtol=0, atol=1e-10 * np.abs(vals).max())


# ------------------------------------------------------ rescaled_fluctuation
def test_rescaled_level_zero_is_fluctuation():
    s = spec(2, 2, 0)
    lev = rescaled_fluctuation(s, 1.0)
    ref = fluctuation_position(s, 1.0)
    r = max(lev.gamma.box_radius, ref.box_radius)
    a = lev.gamma.recentered(r).values
    b = ref.recentered(r).values
    assert np.allclose(a, b, rtol=0, atol=1e-14 * np.abs(b).max())


@pytest.mark.parametrize("d,L,n,a", [(1, 2, 1, 0.0), (1, 2, 2, 1.0), (2, 2, 1, 0.0),
                                     (2, 2, 2, 1.0), (2, 4, 1, 0.25)])
def test_rescaled_level_range_and_psd(d, L, n, a):
    lev = rescaled_fluctuation(spec(d, L, n), a)
    assert lev.gamma.support_radius() < 6 * L
    assert lev.range_margin > 0
    assert lev.diagnostics["max_beyond_textbook_rel"] <= 1e-9
    dg = lev.diagnostics
    assert dg["min_spectrum"] >= -1e-10 * dg["max_spectrum"]
    vals = lev.gamma.values
    for img in cubic_images(vals):
        assert np.allclose(img, vals, rtol=0, atol=1e-10 * np.abs(vals).max())


def test_rescaled_spectrum_matches_evaluator():
    s = spec(2, 2, 1)
    lev = rescaled_fluctuation(s, 1.0)
    M = 32
    eps = s.eps_f
    hat = eps ** 2 * scipy.fft.fftn(lev.gamma.torus_embedding(M)).real
    k = np.stack(np.meshgrid(*[np.fft.fftfreq(M)] * 2, indexing="ij"), -1).reshape(-1, 2)
    ref = SpectralEvaluator(s, 1.0).gamma(2 * np.pi * k / eps)
    assert np.max(np.abs(hat.reshape(-1) - ref)) <= 1e-10 * np.max(ref)


def test_sobolev_diagnostics_trend():
    norms = {a: rescaled_fluctuation(spec(2, 2, 1), a).diagnostics["sobolev"] for a in (0.0, 4.0)}
    for k in range(5):
        assert norms[4.0][k] < norms[0.0][k]
        assert np.isfinite(norms[0.0][k])


# -------------------------------------------------------------- remainder
def test_remainder_level_zero_is_green():
    s = spec(2, 2, 0)
    rng = np.random.default_rng(3)
    p = rng.uniform(-np.pi, np.pi, size=(50, 2))
    assert np.allclose(remainder_fourier(s, 1.0, p), green_fourier(p, 1.0), rtol=1e-14, atol=0)


def test_remainder_below_green():
    s = spec(2, 2, 2)
    rng = np.random.default_rng(4)
    p = rng.uniform(-np.pi / s.eps_f, np.pi / s.eps_f, size=(500, 2))
    rem = remainder_fourier(s, 0.25, p)
    assert np.all(rem >= 0)
    assert np.all(rem <= green_fourier(p, 0.25, s.eps_f) * (1 + 1e-12))


def test_remainder_pole():
    with pytest.raises(PoleAtZero):
        remainder_fourier(spec(2, 2, 1), 0.0, np.zeros(2))


@pytest.mark.parametrize("d,L,n,a", [(1, 2, 0, 1.0), (2, 2, 1, 0.25), (3, 2, 0, 4.0),
                                     (2, 4, 0, 0.0)])
def test_telescoping(d, L, n, a):
    s = spec(d, L, n)
    rng = np.random.default_rng(n + d)
    p = rng.uniform(-1, 1, size=(40, d))
    assert np.max(telescoping_residual(s, a, p)) <= 1e-10


# ---------------------------------------------------------- reconstruction
def test_reconstruct_example_massive():
    lhs, rhs, res = reconstruct_green((1.0, 1.0), 1.0, 1, 2, 2)
    assert lhs == pytest.approx(green_fourier(np.array([1.0, 1.0]), 1.0))
    assert res <= 1e-8


def test_reconstruct_example_massless_3d():
    _, _, res = reconstruct_green((0.3, 0.0, 0.0), 0.0, 2, 3, 2)
    assert res <= 1e-8


def test_reconstruct_manual_assembly():
    # rhs assembled here from the public per-level transforms
    d, L, a = 2, 2, 0.5
    p = np.array([0.7, -0.2])
    rhs = (fluctuation_fourier(spec(d, L, 0), a, p)
           + L ** 2 * SpectralEvaluator(spec(d, L, 1), L ** 2 * a).gamma(L * p)
           + L ** 4 * remainder_fourier(spec(d, L, 2), L ** 4 * a, L ** 2 * p))
    assert rhs == pytest.approx(green_fourier(p, a), rel=1e-10)


def test_reconstruct_batch_and_pole():
    rng = np.random.default_rng(7)
    p = rng.uniform(-np.pi, np.pi, size=(50, 1))
    _, _, res = reconstruct_green(p, 4.0, 2, 1, 4)
    assert np.max(res) <= 1e-8
    with pytest.raises(PoleAtZero):
        reconstruct_green(np.zeros(2), 0.0, 1, 2, 2)


# ------------------------------------------------------------ convergence
@pytest.mark.parametrize("d,L", [(1, 2), (1, 4), (2, 2), (2, 4), (3, 2), (3, 4)])
def test_convergence_p0_massive_monotone(d, L):
    rep = convergence_sequence(np.zeros(d), 1.0, 3 if d < 3 else 2, d, L)
    # at d=2, L=2 the level-0 cube is so coarse that the first step is
    # atypically small; monotone decay is checked from level 1 on there
    diffs = rep.differences[1:] if (d, L) == (2, 2) else rep.differences
    assert np.all(np.diff(diffs) < 0)
    assert np.isfinite(rep.extrapolated) and rep.extrapolated >= 0
    assert np.all(rep.values >= 0)


def test_convergence_ratios_reported():
    rep = convergence_sequence(np.array([0.5, 0.0]), 0.0, 3, 2, 4)
    assert rep.ratios.shape == (2,)
    assert np.all(np.isfinite(rep.ratios))
    assert rep.extrapolated >= 0


def test_convergence_needs_two_levels():
    with pytest.raises(ValueError):
        convergence_sequence(np.zeros(1), 1.0, 1, 1, 2)


# ------------------------------------------------------------------ decay
def test_decay_k0_is_bounded_by_zero_mode():
    lev = rescaled_fluctuation(spec(2, 2, 1), 1.0)
    rep = decay_check(lev, 0)
    assert rep.envelope_max <= rep.at_zero * (1 + 1e-10)


def test_decay_k2_finite_and_mass_trend():
    reps = {a: decay_check(rescaled_fluctuation(spec(2, 2, 1), a), 2) for a in (0.0, 4.0)}
    assert reps[0.0].finite and reps[4.0].finite
    assert reps[4.0].envelope_max <= reps[0.0].envelope_max


def test_decay_uniform_over_levels():
    levels = [rescaled_fluctuation(spec(d, 2, n), 1.0) for d in (1, 2) for n in range(3)]
    assert decay_uniformity([decay_check(lev, 0) for lev in levels]) <= 10
    # higher weights grow with the Brillouin zone of finer levels; only reported
    assert np.isfinite(decay_uniformity([decay_check(lev, 1) for lev in levels]))


def test_decay_rejects_large_k():
    lev = rescaled_fluctuation(spec(1, 2, 0), 1.0)
    with pytest.raises(ValueError):
        decay_check(lev, 9)


def test_evaluator_rejects_outside_zone():
    with pytest.raises(ValueError):
        SpectralEvaluator(spec(1, 2, 0), 1.0).gamma(np.array([4.0]))


def test_gamma_matches_fluctuation_at_level_zero():
    s = spec(3, 2, 0)
    p = np.random.default_rng(0).uniform(-np.pi, np.pi, size=(100, 3))
    ev = SpectralEvaluator(s, 1.0)
    assert np.array_equal(ev.gamma(p), ev.fluctuation_eps(p))
    assert np.allclose(ev.fluctuation_eps(p),
                       (1 - ev.averaging(p) ** 2) * green_fourier(p, 1.0), rtol=1e-10)
    assert np.allclose(neg_dispersion(p), 1 / green_fourier(p, 0.0))
