import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from meshwalk.noise import (MONOMIALS, NoiseSpec, coefficients, gamma_coefficients,
                            moment_quadrature, sample_block, sample_sequence)

PI = np.pi
N_MC = 10**6


# -- sequences ---------------------------------------------------------------------

def test_schedule_none_is_zero():
    spec = NoiseSpec("gaussian", 0.5, "none", 7)
    assert not np.any(sample_sequence(spec, 13, 3))


def test_stroboscopic_pairs():
    seq = sample_sequence(NoiseSpec("gaussian", 0.3, "stroboscopic", 1), 4, 0)
    assert seq[0] == seq[1] and seq[2] == seq[3]
    assert seq[0] != seq[2]


@given(st.integers(0, 2**64 - 1), st.integers(0, 10**6), st.sampled_from(["per_step", "stroboscopic"]))
def test_sequences_deterministic(seed, tid, schedule):
    spec = NoiseSpec("uniform", 1.0, schedule, seed)
    a = sample_sequence(spec, 9, tid)
    assert np.array_equal(a, sample_sequence(spec, 9, tid))


def test_sequences_prefix_stable():
    spec = NoiseSpec("gaussian", 0.2, "per_step", 11)
    assert np.array_equal(sample_sequence(spec, 10, 4), sample_sequence(spec, 40, 4)[:10])


def test_trajectories_differ_and_block_matches():
    spec = NoiseSpec("gaussian", 0.2, "per_step", 11)
    block = sample_block(spec, 6, [5, 2])
    assert np.array_equal(block[1], sample_sequence(spec, 6, 2))
    assert not np.array_equal(block[0], block[1])


def test_uniform_support():
    seq = sample_sequence(NoiseSpec("uniform", 0.4 * PI, "per_step", 0), 10**4, 0)
    assert seq.min() >= -0.2 * PI and seq.max() <= 0.2 * PI
    assert seq.max() - seq.min() > 0.39 * PI


def test_odd_stroboscopic_length():
    seq = sample_sequence(NoiseSpec("gaussian", 0.3, "stroboscopic", 0), 5, 0)
    assert len(seq) == 5 and seq[3] == seq[2]


@pytest.mark.parametrize("kw", [
    dict(distribution="cauchy"), dict(schedule="weekly"), dict(sigma=-0.1),
    dict(sigma=np.inf), dict(master_seed=-1), dict(master_seed=2**64)])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        NoiseSpec(**kw)


def test_n_steps_validation():
    with pytest.raises(ValueError):
        sample_sequence(NoiseSpec(), 0, 0)


# -- empirical statistics ------------------------------------------------------------

@pytest.mark.parametrize("dist, sigma", [("gaussian", 0.3), ("uniform", 0.4 * PI)])
def test_zero_mean_and_mc_moments(dist, sigma):
    spec = NoiseSpec(dist, sigma, "per_step", 99)
    tau = sample_sequence(spec, N_MC, 0)
    assert abs(tau.mean()) < 5 * tau.std() / np.sqrt(N_MC)
    for a, b in MONOMIALS.values():
        f = np.cos(tau) ** a * np.sin(tau) ** b
        se = f.std() / np.sqrt(N_MC)
        assert abs(f.mean() - moment_quadrature(spec, (a, b))) < 5 * se + 1e-12


def test_per_step_uncorrelated():
    tau = sample_sequence(NoiseSpec("gaussian", 0.5, "per_step", 3), 10**5, 0)
    assert abs(np.corrcoef(tau[:-1], tau[1:])[0, 1]) < 0.01


# -- coefficients -----------------------------------------------------------------

def test_gamma_zero_sigma():
    g = gamma_coefficients(0.0)
    assert g.gamma_plus == g.gamma_pp == g.gamma_mm == 0.0
    assert g.moment(1, 0) == 1.0 and g.moment(4, 0) == 1.0


def test_gamma_large_sigma_limit():
    g = gamma_coefficients(20.0)
    assert g.gamma_mm == pytest.approx(1 / 8, abs=1e-12)
    assert g.gamma_plus == pytest.approx(1 / 2, abs=1e-12)
    assert g.gamma_pp == pytest.approx(3 / 8, abs=1e-12)


@pytest.mark.parametrize("sigma", [1e-3, 1e-2, 0.05])
def test_gamma_plus_small_sigma(sigma):
    assert gamma_coefficients(sigma).gamma_plus == pytest.approx(sigma**2, rel=3 * sigma**2)


@pytest.mark.parametrize("sigma", [1e-2, 3e-2])
def test_gamma_pp_small_sigma_is_third_moment(sigma):
    # sin^4 ~ tau^4 and E[tau^4] = 3 sigma^4 for a Gaussian
    assert gamma_coefficients(sigma).gamma_pp / sigma**4 == pytest.approx(3.0, rel=0.01)


@given(st.floats(0.0, 5.0))
def test_coefficients_in_unit_interval(sigma):
    g = gamma_coefficients(sigma)
    vals = [g.gamma_plus, g.gamma_pp, g.gamma_mm] + [abs(v) for v in g.moments.values()]
    assert all(0.0 <= v <= 1.0 + 1e-15 for v in vals)
    assert g.moment(0, 1) == 0.0 and g.moment(1, 1) == 0.0 and g.moment(2, 1) == 0.0
    assert g.cos2 + g.sin2 == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("sigma", [0.05, 0.1, 0.2, 0.4 * PI, 1.0])
def test_gaussian_closed_forms_match_quadrature(sigma):
    spec = NoiseSpec("gaussian", sigma, "per_step")
    g = gamma_coefficients(sigma)
    for mono in MONOMIALS.values():
        assert abs(moment_quadrature(spec, mono) - g.moment(*mono)) < 1e-8


@pytest.mark.parametrize("sigma", [0.1, 0.4 * PI, 2.0])
def test_uniform_mean_cos(sigma):
    spec = NoiseSpec("uniform", sigma, "per_step")
    assert moment_quadrature(spec, "cos") == pytest.approx(np.sin(sigma / 2) / (sigma / 2), abs=1e-10)


def test_gaussian_sin4_example():
    s = 0.3
    spec = NoiseSpec("gaussian", s, "stroboscopic")
    closed = (3 - 4 * np.exp(-2 * s * s) + np.exp(-8 * s * s)) / 8
    assert abs(moment_quadrature(spec, "sin4") - closed) < 1e-8


@pytest.mark.parametrize("dist", ["gaussian", "uniform"])
def test_sin_moment_vanishes(dist):
    assert abs(moment_quadrature(NoiseSpec(dist, 0.7, "per_step"), "sin")) < 1e-10


def test_uniform_coefficients_map_to_moments():
    c = coefficients(NoiseSpec("uniform", 0.4 * PI, "per_step"))
    assert c.gamma_plus == c.sin2 and c.gamma_pp == c.moment(0, 4) and c.gamma_mm == c.moment(2, 2)
    # small angles: sin^4 << sin^2 cos^2 < sin^2
    assert 0 < c.gamma_pp < c.gamma_mm < c.gamma_plus < 1


def test_schedule_none_coefficients_vanish():
    c = coefficients(NoiseSpec("uniform", 0.4 * PI, "none"))
    assert c.gamma_plus == 0.0


def test_unknown_monomial():
    with pytest.raises(ValueError):
        moment_quadrature(NoiseSpec("gaussian", 0.1, "per_step"), "tan")
    with pytest.raises(ValueError):
        moment_quadrature(NoiseSpec("gaussian", 0.1, "per_step"), (5, 0))
    with pytest.raises(ValueError):
        gamma_coefficients(-1.0)
