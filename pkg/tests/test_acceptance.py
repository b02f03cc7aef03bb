"""Acceptance criteria, one test each, held to their stated tolerances.

Every test records a single PASS/FAIL line; the lines are repeated in the
terminal summary.
"""

import json

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, random_density
from meshwalk.analysis import (analytic_return, ensemble_band_structure, fit_decay,
                               floquet_eigensystem, fwhm_profile, left_edge_state)
from meshwalk.cli import main
from meshwalk.lattice import (ProtocolParams, bloch_basis, dfs_momenta, floquet_operator_k,
                              floquet_operator_real, momentum_grid, quasienergies,
                              step_operators_real)
from meshwalk.master import (decompose_bulk, decompose_step_k, make_stepper,
                             master_step_bulk_random, master_two_step_bulk_random, population,
                             projection, propagate, pure_density)
from meshwalk.noise import MONOMIALS, NoiseSpec, gamma_coefficients, moment_quadrature
from meshwalk.trajectory import StateVector, run_ensemble, site_state

PI = np.pi
SEED = 4242
FLAT = ProtocolParams(0.5 * PI, 0.0, 0.2 * PI, 44)
DISPERSIVE = ProtocolParams(0.45 * PI, 0.0, 0.2 * PI, 44)
SIGMA4 = 0.12 * PI


def record(cid, text, passed, measured, threshold):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {cid}: {text} (measured {measured:.4g}, threshold {threshold:.4g})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


def random_params(rng, n_sites=2, boundary="open"):
    t1, t2 = rng.uniform(0, PI, 2)
    return ProtocolParams(t1, t2, rng.uniform(-PI, PI), n_sites, boundary)


def test_criterion_01_unitarity_and_composition():
    rng = np.random.default_rng(SEED)
    worst_u = worst_c = 0.0
    for _ in range(20):
        p = random_params(rng, int(rng.integers(2, 12)))
        u_f = floquet_operator_real(p)
        u1, u2 = step_operators_real(p)
        for u in (u_f, u1, u2, floquet_operator_k(p, rng.uniform(-PI, PI))):
            worst_u = max(worst_u, np.max(np.abs(u.conj().T @ u - np.eye(len(u)))))
        worst_c = max(worst_c, np.max(np.abs(u2 @ u1 - u_f)))
    record(1, "noiseless operators unitary and steps compose to the block operator",
           max(worst_u, worst_c) <= 1e-12, max(worst_u, worst_c), 1e-12)


def test_criterion_02_spectrum():
    rng = np.random.default_rng(SEED + 1)
    ks = -PI + 2 * PI * np.arange(256) / 256
    worst = 0.0
    for _ in range(10):
        p = random_params(rng)
        for k in ks:
            ev = np.sort(np.angle(np.linalg.eigvals(floquet_operator_k(p, k))))
            bp = quasienergies(p, k)
            worst = max(worst, np.max(np.abs(ev - [bp.e_minus, bp.e_plus])))
    flat = max(np.max(np.abs(np.sort(np.angle(np.linalg.eigvals(floquet_operator_k(FLAT, k))))
                             - [-PI / 2, PI / 2])) for k in ks)
    record(2, "eigenphases follow the closed-form bands, flat band at +-pi/2",
           worst <= 1e-10 and flat <= 1e-10, max(worst, flat), 1e-10)


def test_criterion_03_dfs_exactness():
    rng = np.random.default_rng(SEED + 2)
    worst = norm = 0.0
    for _ in range(4):
        p = random_params(rng)
        for k in (p.phi + PI, p.phi - PI, p.phi + 3 * PI):
            dec = decompose_bulk(p, k)
            norm = max(norm, np.linalg.norm(dec.u_plus), np.linalg.norm(dec.u_minus))
            rho0 = random_density(rng, 2)
            clean = propagate(rho0, make_stepper(p, NoiseSpec(), k=k), 100, {}, keep_states=True)["states"]
            for sigma in (0.1, 0.4 * PI):
                spec = NoiseSpec("gaussian", sigma, "stroboscopic")
                noisy = propagate(rho0, make_stepper(p, spec, k=k), 100, {}, keep_states=True)["states"]
                worst = max(worst, np.max(np.abs(noisy - clean)))
    record(3, "stroboscopic master propagation at DFS momenta equals noiseless, U+- vanish",
           worst <= 1e-12 and norm < 1e-12, max(worst, norm), 1e-12)


def test_criterion_04_no_dfs_for_random_noise():
    # coherence between the two Floquet eigenstates at the DFS momentum
    rng = np.random.default_rng(SEED + 3)
    worst = 0.0
    for p in [ProtocolParams(0.0, 0.25 * PI, 0.0)] + [random_params(rng) for _ in range(5)]:
        (k,) = dfs_momenta(p.phi)
        _, vecs = floquet_eigensystem(floquet_operator_k(p, k))
        rho0 = pure_density(vecs @ np.array([1.0, 1.0]))
        obs = {"c": lambda rho, v=vecs: abs((v.conj().T @ rho @ v)[0, 1])}
        c = propagate(rho0, make_stepper(p, NoiseSpec("gaussian", 0.2, "per_step"), k=k), 20, obs)["c"]
        worst = max(worst, c[-1] / c[0])
    record(4, "per-step noise removes at least half the DFS coherence in 20 periods",
           worst <= 0.5, worst, 0.5)


def test_criterion_05a_coefficients_match_quadrature():
    worst = 0.0
    for sigma in (0.05, 0.1, 0.2, 0.4 * PI, 1.0):
        g = gamma_coefficients(sigma)
        spec = NoiseSpec("gaussian", sigma, "per_step")
        worst = max(worst, abs(g.gamma_plus - moment_quadrature(spec, "sin2")),
                    abs(g.gamma_pp - moment_quadrature(spec, "sin4")),
                    abs(g.gamma_mm - moment_quadrature(spec, "sin2_cos2")))
        for mono in MONOMIALS.values():
            worst = max(worst, abs(g.moment(*mono) - moment_quadrature(spec, mono)))
    record("5a", "Gaussian closed forms equal quadrature for five sigma", worst <= 1e-8, worst, 1e-8)


def test_criterion_05b_gamma_pp_matches_sigma4():
    dev = max(abs(gamma_coefficients(s).gamma_pp / s**4 - 1) for s in (0.005, 0.01, 0.02, 0.05))
    record("5b", "Gamma_++ within 10% of sigma^4 for sigma <= 0.05", dev <= 0.1, dev, 0.1)


def test_criterion_06_iteration_identity():
    rng = np.random.default_rng(SEED + 6)
    worst = 0.0
    for _ in range(50):
        p = random_params(rng)
        k = rng.uniform(-PI, PI)
        c = gamma_coefficients(rng.uniform(0.0, 2.0))
        d1, d2 = decompose_step_k(p, 1, k), decompose_step_k(p, 2, k)
        rho = random_density(rng, 2)
        twice = master_step_bulk_random(master_step_bulk_random(rho, d1, c), d2, c)
        worst = max(worst, np.max(np.abs(twice - master_two_step_bulk_random(rho, d1, d2, c))))
    record(6, "two single-step random maps equal the two-step map", worst <= 1e-12, worst, 1e-12)


@pytest.mark.slow
def test_criterion_07_monte_carlo_matches_master():
    p = ProtocolParams(0.3 * PI, 0.15 * PI, 0.2 * PI, 8)
    init = site_state(8, 4, "beta")
    worst_z, ok = 0.0, True
    for schedule in ("stroboscopic", "per_step"):
        spec = NoiseSpec("gaussian", 0.2, schedule, SEED)
        mc = run_ensemble(init, p, spec, 10**5, 40, density=True)
        me = propagate(pure_density(init.vector), make_stepper(p, spec), 20, {}, keep_states=True)["states"]
        dev = np.abs(mc.averaged_density - me)
        ok &= bool(np.all(dev <= 5 * mc.se_density + 1e-12))
        worst_z = max(worst_z, float(np.max(dev / (mc.se_density + 1e-12))))
    record(7, "10^5-trajectory density within 5 stderr of the master equation, both schedules",
           ok, worst_z, 5.0)


def test_criterion_08_fourier_consistency():
    n = 64
    rng = np.random.default_rng(SEED + 8)
    p = ProtocolParams(0.2 * PI, 0.35 * PI, -0.3 * PI, n, "periodic")
    basis = bloch_basis(n)
    weights = rng.dirichlet(np.ones(n))
    blocks = [random_density(rng, 2) for _ in range(n)]

    def assemble(bl):
        full = np.zeros((2 * n, 2 * n), complex)
        for j in range(n):
            full[2 * j:2 * j + 2, 2 * j:2 * j + 2] = weights[j] * bl[j]
        return basis @ full @ basis.conj().T

    worst = 0.0
    for schedule in ("stroboscopic", "per_step"):
        spec = NoiseSpec("gaussian", 0.3, schedule)
        real = propagate(assemble(blocks), make_stepper(p, spec), 10, {}, keep_states=True)["states"][-1]
        per_k = [propagate(blocks[j], make_stepper(p, spec, k=k), 10, {}, keep_states=True)["states"][-1]
                 for j, k in enumerate(momentum_grid(n))]
        worst = max(worst, np.max(np.abs(real - assemble(per_k))))
    record(8, "periodic N=64 real-space master equals per-k propagation", worst <= 1e-8, worst, 1e-8)


def test_criterion_09_band_broadening():
    p = ProtocolParams(0.0, 0.25 * PI, 0.0, 101, "periodic")
    init = site_state(101, 50)
    prof = {}
    for schedule in ("none", "stroboscopic", "per_step"):
        spec = NoiseSpec("uniform", 0.4 * PI, schedule, SEED)
        band = ensemble_band_structure(init, p, spec, 1 if schedule == "none" else 100, 40, pad=8)
        prof[schedule] = fwhm_profile(band)
    k = prof["none"].k
    base, strobo, rand = prof["none"].fwhm, prof["stroboscopic"].fwhm, prof["per_step"].fwhm
    near_pi = [int(np.argmin(np.abs(k - PI))), int(np.argmin(np.abs(k + PI)))]
    zero = int(np.argmin(np.abs(k)))
    edge_dev = max(abs(strobo[i] / base[i] - 1) for i in near_pi)
    centre = strobo[zero] / base[zero]
    spread = np.nanmax(rand) / np.nanmin(rand)
    lines_ok = [edge_dev <= 0.2, centre >= 3.0, spread <= 1.5]
    ACCEPTANCE_LINES.append(f"    9: strobo |FWHM(+-pi)/noiseless - 1| = {edge_dev:.3f} (<= 0.2), "
                            f"FWHM(0)/noiseless = {centre:.2f} (>= 3), per-step max/min = {spread:.3f} (<= 1.5)")
    record(9, "stroboscopic broadening vanishes near +-pi and is large at 0; per-step is uniform",
           all(lines_ok), spread, 1.5)


def _edge_run(params, spec, n_periods, n_realizations):
    edge = left_edge_state(params)
    obs = {"edge": projection(edge.vector), "nb": population(1)}
    me = propagate(pure_density(edge.vector), make_stepper(params, spec), n_periods, obs)
    out = {"master": me["edge"], "nb": me["nb"]}
    if n_realizations:
        mc = run_ensemble(StateVector.from_vector(edge.vector), params, spec, n_realizations,
                          2 * n_periods, projectors={"edge": edge.vector})
        out["mc"], out["se"] = mc.projections["edge"]
    return out


def test_criterion_10_edge_return():
    floor = 1 / FLAT.dim
    clean = _edge_run(FLAT, NoiseSpec(), 80, 0)["master"].min()
    target = -np.log((1 + np.exp(-2 * SIGMA4**2)) / 2)
    rate_dev, z_max, mc_ok = 0.0, 0.0, True
    for schedule in ("per_step", "stroboscopic"):
        s = _edge_run(FLAT, NoiseSpec("gaussian", SIGMA4, schedule, SEED), 80, 100)
        rate_dev = max(rate_dev, abs(fit_decay(s["master"], floor=floor).exp_rate / target - 1))
        dev = np.abs(s["mc"] - s["master"])
        mc_ok &= bool(np.all(dev <= 5 * s["se"] + 1e-12))
        z_max = max(z_max, float(np.max(dev / (s["se"] + 1e-12))))
    flat = fit_decay(_edge_run(FLAT, NoiseSpec("gaussian", SIGMA4, "stroboscopic"), 80, 0)["master"],
                     floor=floor)
    disp = fit_decay(_edge_run(DISPERSIVE, NoiseSpec("gaussian", 0.2, "stroboscopic"), 80, 0)["master"],
                     floor=floor)
    parts = {
        "noiseless p_L >= 0.999": clean >= 0.999,
        "early rate within 10%": rate_dev <= 0.1,
        "MC within 5 stderr": mc_ok,
        "flat tail slower than exponential": flat.polynomial_tail and flat.curvature > 0,
        "dispersive tail exponential": not disp.polynomial_tail,
    }
    ACCEPTANCE_LINES.append(f"   10: min noiseless {clean:.6f}, rate deviation {rate_dev:.3f}, max z {z_max:.2f}, "
                            f"flat curvature {flat.curvature:.3e}, dispersive exp/power residual "
                            f"{disp.late_residual_exp / disp.late_residual_power:.3f}")
    failed = [k for k, v in parts.items() if not v]
    record(10, "edge return: " + ("all parts hold" if not failed else "failed " + ", ".join(failed)),
           not failed, rate_dev, 0.1)


def test_criterion_11_analytic_approximation():
    s = _edge_run(FLAT, NoiseSpec("gaussian", SIGMA4, "stroboscopic"), 80, 0)
    rep = fit_decay(s["master"], floor=1 / FLAT.dim)
    approx = analytic_return(1.0, gamma_coefficients(SIGMA4).gamma_plus, s["nb"]).p
    upto = int(np.floor(rep.crossover))
    rel = float(np.max(np.abs(approx[: upto + 1] / s["master"][: upto + 1] - 1)))
    record(11, f"approximation within 15% of the master equation up to period {upto}",
           rel <= 0.15, rel, 0.15)


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.slow
def test_criterion_12_determinism(tmp_path):
    trees = []
    for workers in (1, 4, 8):
        root = tmp_path / f"w{workers}"
        main(["verify", "--threads", str(workers), "--out", str(root / "verify")])
        for preset, command in (("fig3c", "bands"), ("fig4", "edge"), ("fig2b", "evolve")):
            rc = main([command, "--preset", preset, "--threads", str(workers), "--out", str(root / preset)])
            assert rc == 0
        trees.append(_tree(root))
    same = trees[0] == trees[1] == trees[2]
    report = json.loads(trees[0]["verify/verify.json"])
    assert len(report["checks"]) > 12
    record(12, "verify and preset outputs byte-identical for 1, 4 and 8 workers",
           same, float(not same), 0.0)
