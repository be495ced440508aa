import math

import numpy as np
import pytest
import scipy.fft
import scipy.integrate

from frdecomp.errors import PoleAtZero, ToleranceUnreachable
from frdecomp.levy import (LevyParams, build_quadrature, levy_constant, levy_fluctuation,
                           levy_fourier_terms, levy_reconstruct, levy_recursion_residual,
                           scalar_identity_oracle)


@pytest.fixture(scope="module")
def quad():
    return build_quadrature(1.0, 1e-8, 2)


# ---------------------------------------------------------------- constant
def test_constant_alpha_one():
    val, _ = scipy.integrate.quad(lambda a: a ** -0.5 / (1 + a), 0, np.inf, epsrel=1e-13)
    assert val == pytest.approx(math.pi, rel=1e-10)
    assert levy_constant(1.0) == pytest.approx(1 / val, rel=1e-10)


@pytest.mark.parametrize("alpha", [0.3, 0.5, 1.0, 1.5, 1.8])
def test_constant_normalises_integral(alpha):
    val = scalar_identity_oracle(alpha, 1.0)
    assert val == pytest.approx(1.0, rel=1e-9)


def test_constant_endpoint_and_domain():
    assert levy_constant(2 - 1e-9) < 1e-8
    for bad in (0.0, 2.0, -1.0):
        with pytest.raises(ValueError):
            levy_constant(bad)


# -------------------------------------------------------------- quadrature
@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
@pytest.mark.parametrize("t", [0.5, 1.0, 3.0])
def test_scalar_identity(alpha, t):
    q = build_quadrature(alpha, 1e-8, 2)
    approx = float(q.scalar(t)[0])
    assert abs(approx / t ** (-alpha / 2) - 1) <= 1e-6
    assert abs(approx - scalar_identity_oracle(alpha, t)) <= 1e-6 * t ** (-alpha / 2)


def test_tolerance_example(quad):
    assert abs(float(quad.scalar(1.0)[0]) - 1.0) <= 1e-8
    assert quad.validation_residual <= 1e-8
    assert quad.truncation_bound + quad.discretization_bound <= 1e-8


def test_quadrature_weights_positive_and_levels_closed(quad):
    assert np.all(quad.weights > 0)
    s = quad.steps_per_level
    # a -> L^2 a shifts the node index by s
    assert np.allclose(quad.nodes[s:], 4.0 * quad.nodes[:-s], rtol=1e-12)


def test_node_count_growth():
    counts = [build_quadrature(1.0, tol, 2).n_nodes for tol in (1e-4, 1e-6, 1e-8, 1e-10)]
    assert counts == sorted(counts)
    for tol, n in zip((1e-4, 1e-6, 1e-8, 1e-10), counts):
        assert n <= 2 * math.log(1 / tol) ** 2


def test_quadrature_errors():
    with pytest.raises(ToleranceUnreachable):
        build_quadrature(1.0, 1e-8, 2, max_nodes=20)
    with pytest.raises(ValueError):
        build_quadrature(1.0, 1e-12, 2)
    with pytest.raises(ValueError):
        build_quadrature(1.99, 1e-6, 2)


def test_params(quad):
    p = LevyParams(1.0, 3, quad)
    assert p.phi_dim == 1.0
    with pytest.raises(ValueError):
        LevyParams(2.5, 3, quad)


# ---------------------------------------------------------- reconstruction
def test_reconstruct_example(quad):
    r = levy_reconstruct((1.0, 0.5, 0.0), 1.0, 1, 3, 2, quad)
    assert float(r["direct_residual"][0]) <= 1e-6
    assert float(r["reconstruction_residual"][0]) <= 1e-6


@pytest.mark.parametrize("alpha", [0.5, 1.5])
def test_reconstruct_batch(alpha):
    q = build_quadrature(alpha, 1e-8, 2)
    p = np.random.default_rng(1).uniform(-np.pi, np.pi, size=(10, 2))
    r = levy_reconstruct(p, alpha, 2, 2, 2, q)
    assert np.max(r["direct_residual"]) <= 1e-6
    assert np.max(r["reconstruction_residual"]) <= 1e-6


def test_reconstruct_pole(quad):
    with pytest.raises(PoleAtZero):
        levy_reconstruct(np.zeros(2), 1.0, 1, 2, 2, quad)


def test_recursion_at_offsets(quad):
    offsets = np.random.default_rng(0).integers(-3, 4, size=(20, 2))
    assert levy_recursion_residual(1, 1.0, 2, 2, quad, offsets, size=8) <= 1e-6


# ------------------------------------------------------------ position space
@pytest.mark.parametrize("d", [1, 2])
def test_levy_levels_range_psd_symmetry(d, quad):
    params = LevyParams(1.0, d, quad)
    at0 = []
    for j in range(3):
        k = levy_fluctuation(j, params, 2)
        assert k.support_radius() < 6 * 2
        assert k.meta["min_spectrum"] >= -1e-10 * k.meta["max_spectrum"]
        vals = k.values
        assert np.allclose(vals, vals[(slice(None, None, -1),) * d], atol=1e-10 * vals.max())
        if d == 2:
            assert np.allclose(vals, vals.T, atol=1e-10 * vals.max())
        at0.append(k((0,) * d))
    assert np.all(np.isfinite(at0)) and at0[0] > at0[1] > at0[2] > 0


def test_position_kernel_matches_fourier_terms(quad):
    # exchange of level sum and mass integral: DFT of the assembled kernel
    # equals the mass integral of the per-mass transforms
    params = LevyParams(1.0, 1, quad)
    k = levy_fluctuation(1, params, 2)
    eps = k.spec.eps_f
    M = 32
    hat = eps * scipy.fft.fft(k.torus_embedding(M)).real
    theta = 2 * np.pi * np.fft.fftfreq(M)
    keep = theta != 0
    p_unit = theta[keep, None] / eps / 2  # physical momentum on Z, scaled by L^-1
    terms, _ = levy_fourier_terms(p_unit, 1.0, 2, 1, 2, quad)
    # terms[1] = L^alpha Gamma_hat_1(L p)
    assert np.allclose(terms[1] / 2.0, hat[keep], rtol=1e-8, atol=1e-12)
