import numpy as np
import pytest
import scipy.fft
import scipy.stats

from frdecomp.decomposition import rescaled_fluctuation
from frdecomp.errors import NegativeSpectrumBeyondTolerance, TorusTooSmall
from frdecomp.lattice import LatticeKernel, LatticeSpec
from frdecomp.sampling import (FieldSample, build_sampler, covariance_study, empirical_covariance,
                               exact_covariance, rg_step, sample, synthesize)

N = 10_000


def level(d, n, a, L=2):
    return rescaled_fluctuation(LatticeSpec.from_L(d, L, n), a)


@pytest.fixture(scope="module")
def levels2d():
    return [level(2, 0, 1.0), level(2, 1, 4.0)]


@pytest.fixture(scope="module")
def levels1d():
    return [level(1, 0, 1.0), level(1, 1, 4.0)]


# ------------------------------------------------------------ build_sampler
def test_delta_kernel_flat_spectrum():
    spec = LatticeSpec.from_L(2, 2, 1)
    white = LatticeKernel.delta(spec, spec.eps_f ** -2)
    s = build_sampler(white, 8, 0)
    assert np.all(s.spectrum == spec.eps_f ** -2)
    assert s.n_clamped == 0


def test_level_zero_spectrum_nonnegative(levels2d):
    s = build_sampler(levels2d[0].gamma, 16, 0)
    assert np.all(s.spectrum >= 0)


def test_doubling_torus_keeps_covariance(levels2d):
    k = levels2d[1].gamma
    r = k.support_radius_sites()
    M = 1 << (2 * r).bit_length()
    c1 = build_sampler(k, M, 0).torus_covariance()
    c2 = build_sampler(k, 2 * M, 0).torus_covariance()
    idx = np.r_[0:r + 1, -r:0]
    block = np.ix_(idx, idx)
    assert np.allclose(c1[block], c2[block], rtol=0, atol=1e-13 * k.values.max())
    # and both equal the kernel itself
    assert c1[0, 0] == pytest.approx(k((0, 0)), rel=1e-12)
    assert c1[1, -2] == pytest.approx(k((1, -2)), rel=1e-10, abs=1e-14)


def test_sampler_errors(levels2d):
    k = levels2d[0].gamma
    with pytest.raises(ValueError):
        build_sampler(k, 12, 0)
    with pytest.raises(TorusTooSmall):
        build_sampler(k, 2, 0)
    bad = LatticeKernel.centered(LatticeSpec(1, 1, 0), np.ones(3))  # 1 + 2 cos
    with pytest.raises(NegativeSpectrumBeyondTolerance):
        build_sampler(bad, 8, 0)


# ------------------------------------------------------------------ sample
def test_single_sample_is_real_field(levels2d):
    s = build_sampler(levels2d[0].gamma, 16, 3)
    f = sample(s)
    assert isinstance(f, FieldSample) and f.seed == 3
    assert f.field.shape == (16, 16) and f.field.dtype == np.float64


def test_origin_variance_and_range(levels2d):
    k = levels2d[0].gamma
    s = build_sampler(k, 16, 11)
    fields = sample(s, N)
    r = k.support_radius_sites()
    offsets = [(0, 0), (1, 0), (r + 1, 0), (r + 1, r + 1), (0, r + 3)]
    est, se = empirical_covariance(fields, offsets)
    exact = np.array([k(o) for o in offsets])
    assert np.all(exact[2:] == 0)
    assert np.all(np.abs(est - exact) <= 4 * se)


def test_two_seeds_independent(levels2d):
    k = levels2d[0].gamma
    fa = sample(build_sampler(k, 16, 1), N)
    fb = sample(build_sampler(k, 16, 2), N)
    per = np.mean(fa * fb, axis=(1, 2))
    assert abs(per.mean()) <= 4 * per.std(ddof=1) / np.sqrt(N)


def test_marginal_chi_square(levels2d):
    k = levels2d[0].gamma
    vals = sample(build_sampler(k, 16, 5), N)[:, 0, 0] / np.sqrt(k((0, 0)))
    edges = scipy.stats.norm.ppf(np.linspace(0, 1, 21))
    counts, _ = np.histogram(vals, edges)
    assert scipy.stats.chisquare(counts).pvalue > 0.01
    assert scipy.stats.kstest(vals, "norm").pvalue > 0.01


def test_sampler_reproducible(levels2d):
    k = levels2d[0].gamma
    a = sample(build_sampler(k, 16, 9), 5)
    b = sample(build_sampler(k, 16, 9), 5)
    assert np.array_equal(a, b)


# --------------------------------------------------------------- synthesize
def test_synthesize_one_level_is_sample(levels2d):
    child = np.random.SeedSequence(4).spawn(1)[0]
    ref = sample(build_sampler(levels2d[0].gamma, 16, int(child.generate_state(1)[0])), 3)
    got = synthesize(levels2d[:1], 4, M=16, count=3)
    assert np.array_equal(got, ref)


def test_synthesize_validates_schedule(levels2d):
    with pytest.raises(ValueError):
        synthesize([levels2d[1]], 0)
    with pytest.raises(ValueError):
        synthesize([levels2d[0], level(2, 1, 1.0)], 0)


def test_two_level_covariance(levels2d):
    offsets = [(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (3, 0), (2, 2), (4, 1), (5, 0), (6, 6)]
    study = covariance_study(levels2d, offsets, N, 21)
    assert study.max_abs_z <= 4


def test_variance_additivity(levels2d):
    phi_dim = 0.0  # d = 2
    want = sum(2.0 ** (-2 * j * phi_dim) * lv.gamma((0, 0)) for j, lv in enumerate(levels2d))
    assert exact_covariance(levels2d, [(0, 0)])[0] == pytest.approx(want, rel=1e-15)
    f = synthesize(levels2d, 8, count=N)
    per = np.mean(f ** 2, axis=(1, 2))
    assert abs(per.mean() - want) <= 4 * per.std(ddof=1) / np.sqrt(N)


def test_exact_kernels_independent_of_seed(levels2d):
    before = levels2d[0].gamma.values.copy()
    synthesize(levels2d, 123, count=2)
    assert np.array_equal(before, levels2d[0].gamma.values)


# ------------------------------------------------------------------ rg_step
def test_rg_constant_functional(levels1d):
    phi = np.zeros(32)
    est, se = rg_step(lambda f: 1.0, levels1d[0], phi, 100, 0)
    assert est == 1.0 and se == 0.0


def test_rg_characteristic_functional(levels1d):
    lv = levels1d[0]
    M = 32
    s = build_sampler(lv.gamma, M, 0)
    k = np.zeros(M)
    k[[0, 1, 5]] = [0.8, -0.5, 0.6]
    phi = np.random.default_rng(2).standard_normal(M)
    phi_dim = -0.5  # d = 1
    shift = 2.0 ** (-phi_dim) * phi
    quad = np.sum(np.abs(scipy.fft.fft(k)) ** 2 * scipy.fft.fft(s.torus_covariance()).real) / M
    want = np.exp(-quad / 2) * np.exp(1j * k @ shift)
    est, se = rg_step(lambda f: np.exp(1j * k @ f), s, phi, N, 7)
    assert abs(est - want) <= 4 * se


def test_rg_semigroup_quadratic(levels1d):
    lv0, lv1 = levels1d
    M = 32
    s0, s1 = build_sampler(lv0.gamma, M, 0), build_sampler(lv1.gamma, M, 0)
    phi = np.full(M, 0.7)
    scale = 2.0 ** 0.5  # L^-[phi] with [phi] = -1/2
    z = lambda f: f[0] ** 2
    counter = iter(range(1, 10 ** 6))
    z1 = lambda psi: rg_step(z, s0, psi, 50, next(counter))[0]
    two_step, se2 = rg_step(z1, s1, phi, 400, 0)
    # one combined step with covariance Gamma_0 + L^(-2[phi]) Gamma_1
    exact = lv0.gamma((0,)) + scale ** 2 * lv1.gamma((0,)) + (scale ** 2 * 0.7) ** 2
    assert abs(two_step - exact) <= 4 * se2
    f = synthesize(levels1d, 3, M=M, count=N, phi_dim=-0.5)
    one = (f[:, 0] + scale ** 2 * 0.7) ** 2
    assert abs(one.mean() - exact) <= 4 * one.std(ddof=1) / np.sqrt(N)


def test_rg_rejects_bad_input(levels1d):
    with pytest.raises(ValueError):
        rg_step(lambda f: 1.0, levels1d[0], np.zeros(32), 0, 0)
    s = build_sampler(levels1d[0].gamma, 32, 0)
    with pytest.raises(ValueError):
        rg_step(lambda f: 1.0, s, np.zeros(16), 10, 0)


def test_study_torus_holds_far_offsets(levels1d):
    # offsets far beyond the support must not wrap back onto it
    study = covariance_study(levels1d[:1], [(0,), (1,), (6,), (8,)], 4000, 1)
    assert study.M > 2 * 8
    assert study.max_abs_z <= 4
