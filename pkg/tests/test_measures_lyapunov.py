import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from skewlab.measures_lyapunov import (
    SamplerConfig,
    batch_means_stderr,
    birkhoff_lyapunov,
    lyapunov_p,
    lyapunov_p_detail,
    lyapunov_vertical,
    sample_fiber_julia,
    sample_mu_p,
    sample_mu_p_orbits,
)
from skewlab.poly_core import Polynomial
from skewlab.skew_dynamics import green_base, green_vertical, product_map

P = Polynomial
LOG2 = math.log(2)


@pytest.mark.parametrize("c", [0, -2, -1, 0.2, -0.75 + 0.1j])
def test_lyapunov_p_connected_is_log_d(c):
    val, und = lyapunov_p_detail(P([c, 0, 1]))
    assert und == 0
    assert abs(val - LOG2) < 1e-8


@pytest.mark.parametrize("c", [1.0, 2j, -3.0])
def test_lyapunov_p_escaping_critical_point(c):
    p = P([c, 0, 1])
    # oracle 1: log 2 + G(0) with G from its own escape time
    z, n = 0j, 0
    while abs(z) < 1e100:
        z, n = z * z + c, n + 1
    oracle = LOG2 + math.log(abs(z)) / 2**n
    assert abs(lyapunov_p(p) - oracle) < 1e-10
    # oracle 2: Birkhoff mean of log|p'| under the equilibrium measure
    assert abs(birkhoff_lyapunov(p, SamplerConfig(n_samples=4000, seed=3)) - oracle) < 0.05


def test_equilibrium_measure_moments():
    circle = sample_mu_p(P([0, 0, 1]), SamplerConfig(n_samples=8000, seed=1))
    assert np.allclose(np.abs(circle), 1, atol=1e-9)
    assert abs(np.mean(circle)) < 0.05 and abs(np.mean(circle**2)) < 0.05
    cheb = sample_mu_p(P([-2, 0, 1]), SamplerConfig(n_samples=8000, seed=1))
    assert np.all(np.abs(cheb.imag) < 1e-6) and np.all(np.abs(cheb.real) <= 2 + 1e-9)
    # arcsine law on [-2, 2]: E z^2 = 2, E z^4 = 6
    assert abs(np.mean(cheb.real**2) - 2) < 0.1
    assert abs(np.mean(cheb.real**4) - 6) < 0.4


def test_mu_p_orbits_are_orbits():
    p = P([-1, 0, 1])
    orb = sample_mu_p_orbits(p, SamplerConfig(n_samples=32, depth=20, seed=2), length=30)
    assert orb.shape == (32, 31)
    assert np.allclose(p(orb[:, :-1]), orb[:, 1:], atol=1e-9)
    assert np.allclose(green_base(p, orb[0, 0]), 0, atol=1e-9)


def test_sampler_is_seeded():
    p = P([-1, 0, 1])
    a = sample_mu_p(p, SamplerConfig(n_samples=64, seed=7))
    b = sample_mu_p(p, SamplerConfig(n_samples=64, seed=7))
    c = sample_mu_p(p, SamplerConfig(n_samples=64, seed=8))
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_sampler_config_guards():
    with pytest.raises(ValueError):
        SamplerConfig(depth=4)
    with pytest.raises(ValueError):
        SamplerConfig(burn_in=-1)


def test_vertical_lyapunov_trivial_product():
    f = product_map(P([-1, 0, 1]), P([0, 0, 1]))
    est = lyapunov_vertical(f, SamplerConfig(n_samples=2048, seed=0))
    assert abs(est.value - LOG2) < 1e-3
    assert est.undecided == 0 and est.stderr >= 0


@pytest.mark.parametrize("c", [1.0, -2.5, 0.5j + 0.6])
def test_vertical_lyapunov_of_product_equals_fiber_lyapunov(c):
    q = P([c, 0, 1])
    f = product_map(P([-1, 0, 1]), q)
    est = lyapunov_vertical(f, SamplerConfig(n_samples=256, seed=0))
    assert abs(est.value - lyapunov_p(q)) < 1e-9


def test_vertical_lyapunov_at_least_log_d():
    from skewlab.presets import unicritical_setup

    f = unicritical_setup(solve=False).f
    est = lyapunov_vertical(f, SamplerConfig(n_samples=512, seed=0))
    assert est.value >= LOG2 - 1e-12
    assert est.value - LOG2 > 10 * est.stderr  # critical points escape somewhere


@given(st.floats(-2, 0.25), st.integers(0, 5))
def test_fiber_julia_points_have_zero_green(c, seed):
    f = product_map(P([-1, 0, 1]), P([c, 0, 1]))
    w = sample_fiber_julia(f, 0.3, SamplerConfig(n_samples=16, depth=30, seed=seed))
    for x in w:
        assert green_vertical(f, 0.3, x) < 1e-6


def test_batch_means_stderr_oracle(rng):
    x = rng.normal(size=16000)
    se = batch_means_stderr(x)
    assert 0.5 / math.sqrt(x.size) < se < 2 / math.sqrt(x.size)
    assert math.isnan(batch_means_stderr(np.array([1.0])))
