"""Invariant and oracle checks run by ``meshwalk verify``.

Each check returns a CheckResult with the measured figure of merit and the
threshold it is held to.  All randomness is seeded, so the report is
reproducible byte for byte.
"""

from __future__ import annotations

import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import (analytic_return, ensemble_band_structure, fit_decay, floquet_eigensystem,
                       fwhm_profile, left_edge_state)
from .lattice import (ProtocolParams, bloch_basis, dfs_momenta, floquet_operator_k,
                      floquet_operator_real, momentum_grid, quasienergies,
                      step_operator_real, step_operators_real)
from .master import (decompose_bulk, decompose_step_k, make_stepper,
                     master_step_bulk_random, master_two_step_bulk_random, population,
                     projection, propagate, pure_density)
from .noise import NoiseSpec, gamma_coefficients, moment_quadrature
from .trajectory import StateVector, run_ensemble, site_state

SEED = 20240611
FIG3 = ProtocolParams(0.0, 0.25 * np.pi, 0.0, 101, "periodic")
FIG4_FLAT = ProtocolParams(0.5 * np.pi, 0.0, 0.2 * np.pi, 44)
FIG4_DISPERSIVE = ProtocolParams(0.45 * np.pi, 0.0, 0.2 * np.pi, 44)
FIG4_SIGMA = 0.12 * np.pi


@dataclass
class CheckResult:
    id: str
    name: str
    passed: bool
    measured: float
    threshold: float
    detail: str = ""


def _random_params(rng, n_sites=2, boundary="open") -> ProtocolParams:
    t1, t2 = rng.uniform(0, np.pi, 2)
    return ProtocolParams(t1, t2, rng.uniform(-np.pi, np.pi), n_sites, boundary)


def _random_density(rng, dim: int) -> np.ndarray:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def check_unitarity() -> list[CheckResult]:
    rng = np.random.default_rng(SEED)
    worst_u, worst_c = 0.0, 0.0
    for _ in range(20):
        n = int(rng.integers(2, 9))
        for boundary in ("open", "periodic"):
            p = _random_params(rng, n, boundary)
            u_f = floquet_operator_real(p)
            s1, s2 = step_operators_real(p)
            for u in (u_f, s1, s2, floquet_operator_k(p, rng.uniform(-np.pi, np.pi))):
                worst_u = max(worst_u, np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))
            worst_c = max(worst_c, np.max(np.abs(s2 @ s1 - u_f)),
                          np.max(np.abs(step_operator_real(p, 2) @ step_operator_real(p, 1) - u_f)))
    return [CheckResult("1a", "noiseless operators unitary", worst_u <= 1e-12, worst_u, 1e-12),
            CheckResult("1b", "step composition equals block Floquet operator", worst_c <= 1e-12,
                        worst_c, 1e-12, "20 random parameter sets, open and periodic")]


def check_spectrum() -> list[CheckResult]:
    rng = np.random.default_rng(SEED + 1)
    ks = np.linspace(-np.pi, np.pi, 256, endpoint=False)
    worst = 0.0
    for _ in range(10):
        p = _random_params(rng)
        for k in ks:
            ev = np.sort(np.angle(np.linalg.eigvals(floquet_operator_k(p, k))))
            bp = quasienergies(p, k)
            worst = max(worst, np.max(np.abs(ev - np.array([bp.e_minus, bp.e_plus]))))
    flat = ProtocolParams(0.5 * np.pi, 0.0, 0.2 * np.pi)
    flat_dev = max(np.max(np.abs(np.sort(np.angle(np.linalg.eigvals(floquet_operator_k(flat, k))))
                                 - np.array([-np.pi / 2, np.pi / 2]))) for k in ks)
    return [CheckResult("2a", "eigenphases match closed-form quasienergies", worst <= 1e-10, worst, 1e-10),
            CheckResult("2b", "flat-band preset at E = +-pi/2", flat_dev <= 1e-10, flat_dev, 1e-10)]


def check_dfs() -> list[CheckResult]:
    rng = np.random.default_rng(SEED + 2)
    worst_prop, worst_norm = 0.0, 0.0
    for _ in range(5):
        p = _random_params(rng)
        for k in dfs_momenta(p.phi) + [p.phi + 3 * np.pi, p.phi - np.pi]:
            dec = decompose_bulk(p, k)
            worst_norm = max(worst_norm, np.linalg.norm(dec.u_plus), np.linalg.norm(dec.u_minus))
            rho0 = _random_density(rng, 2)
            clean = propagate(rho0, make_stepper(p, NoiseSpec(), k=k), 100, {}, keep_states=True)["states"]
            for sigma in (0.1, 0.4 * np.pi):
                noisy = propagate(rho0, make_stepper(p, NoiseSpec("gaussian", sigma, "stroboscopic"), k=k),
                                  100, {}, keep_states=True)["states"]
                worst_prop = max(worst_prop, np.max(np.abs(noisy - clean)))
    return [CheckResult("3a", "stroboscopic noise is unitary at DFS momenta", worst_prop <= 1e-12,
                        worst_prop, 1e-12, "100 periods, sigma in {0.1, 0.4pi}"),
            CheckResult("3b", "noise matrices vanish at DFS momenta", worst_norm < 1e-12, worst_norm, 1e-12)]


def check_no_dfs_random() -> list[CheckResult]:
    rng = np.random.default_rng(SEED + 3)
    worst = 0.0
    for p in [FIG3.replace(n_sites=2)] + [_random_params(rng) for _ in range(5)]:
        k = dfs_momenta(p.phi)[0]
        _, vecs = floquet_eigensystem(floquet_operator_k(p, k))
        rho0 = pure_density(vecs @ np.array([1.0, 1.0]) / np.sqrt(2))
        coh = lambda rho, v=vecs: abs((v.conj().T @ rho @ v)[0, 1])
        series = propagate(rho0, make_stepper(p, NoiseSpec("gaussian", 0.2, "per_step"), k=k),
                           20, {"c": coh})["c"]
        worst = max(worst, series[-1] / series[0])
    return [CheckResult("4", "per-step noise decoheres DFS momenta", worst <= 0.5, worst, 0.5,
                        "remaining Floquet-basis coherence after 20 periods, worst of 6 parameter sets")]


def check_coefficients() -> list[CheckResult]:
    worst = 0.0
    for sigma in (0.05, 0.1, 0.2, 0.4 * np.pi, 1.0):
        g = gamma_coefficients(sigma)
        spec = NoiseSpec("gaussian", sigma, "stroboscopic")
        pairs = [(g.gamma_plus, moment_quadrature(spec, "sin2")),
                 (g.gamma_pp, moment_quadrature(spec, "sin4")),
                 (g.gamma_mm, moment_quadrature(spec, "sin2_cos2"))]
        pairs += [(g.moments[m], moment_quadrature(spec, m)) for m in g.moments]
        worst = max(worst, max(abs(a - b) for a, b in pairs))
    ratio_dev = max(abs(gamma_coefficients(s).gamma_pp / s**4 - 1.0) for s in (0.01, 0.02, 0.05))
    return [CheckResult("5a", "closed-form coefficients match quadrature", worst <= 1e-8, worst, 1e-8),
            CheckResult("5b", "gamma_pp matches sigma^4 for sigma <= 0.05", ratio_dev <= 0.1, ratio_dev, 0.1,
                        "relative deviation of gamma_pp from sigma^4")]


def check_iteration() -> list[CheckResult]:
    rng = np.random.default_rng(SEED + 5)
    worst = 0.0
    for _ in range(50):
        p = _random_params(rng)
        k = rng.uniform(-np.pi, np.pi)
        coeffs = gamma_coefficients(rng.uniform(0.01, 1.5))
        d1, d2 = decompose_step_k(p, 1, k), decompose_step_k(p, 2, k)
        rho = _random_density(rng, 2)
        twice = master_step_bulk_random(master_step_bulk_random(rho, d1, coeffs), d2, coeffs)
        worst = max(worst, np.max(np.abs(twice - master_two_step_bulk_random(rho, d1, d2, coeffs))))
    return [CheckResult("6", "two single-step maps equal the two-step map", worst <= 1e-12, worst, 1e-12)]


def check_mc_master(workers: int = 1, n_realizations: int = 100_000) -> list[CheckResult]:
    p = ProtocolParams(0.3 * np.pi, 0.15 * np.pi, 0.2 * np.pi, 8)
    init = site_state(8, 3)
    out = []
    for schedule in ("stroboscopic", "per_step"):
        spec = NoiseSpec("gaussian", 0.2, schedule, SEED)
        stats = run_ensemble(init, p, spec, n_realizations, 40, density=True, workers=workers)
        ref = propagate(pure_density(init.vector), make_stepper(p, spec), 20, {}, keep_states=True)["states"]
        excess = np.abs(stats.averaged_density - ref) - 5 * stats.se_density
        z = np.max(np.abs(stats.averaged_density - ref) / (stats.se_density + 1e-10))
        out.append(CheckResult(f"7-{schedule}", f"Monte Carlo matches master equation ({schedule})",
                               bool(np.max(excess) <= 1e-10), float(z), 5.0,
                               f"largest |deviation| / stderr over all entries, {n_realizations} trajectories"))
    return out


def check_fourier() -> list[CheckResult]:
    rng = np.random.default_rng(SEED + 8)
    n = 64
    p = ProtocolParams(0.3 * np.pi, 0.15 * np.pi, 0.2 * np.pi, n, "periodic")
    basis = bloch_basis(n)
    ks = momentum_grid(n)
    weights = rng.dirichlet(np.ones(n))
    spinors = rng.normal(size=(n, 2)) + 1j * rng.normal(size=(n, 2))
    spinors /= np.linalg.norm(spinors, axis=1, keepdims=True)
    out = []
    for schedule in ("stroboscopic", "per_step"):
        spec = NoiseSpec("gaussian", 0.2, schedule)
        rho_k = np.zeros((n, n, 2, 2), complex)
        for j in range(n):
            rho_k[j, j] = weights[j] * np.outer(spinors[j], spinors[j].conj())
        rho_real = _assemble(basis, rho_k)
        real = propagate(rho_real, make_stepper(p, spec), 10, {}, keep_states=True)["states"][-1]
        for j, k in enumerate(ks):
            blk = propagate(rho_k[j, j] / weights[j], make_stepper(p, spec, k=k), 10, {},
                            keep_states=True)["states"][-1] * weights[j]
            rho_k[j, j] = blk
        expected = _assemble(basis, rho_k)
        worst = float(np.max(np.abs(real - expected)))
        out.append(CheckResult(f"8-{schedule}", f"real-space and momentum propagation agree ({schedule})",
                               worst <= 1e-8, worst, 1e-8, "periodic N=64, 10 periods"))
    return out


def _assemble(basis: np.ndarray, rho_k: np.ndarray) -> np.ndarray:
    """Real-space density from k-diagonal 2x2 blocks; basis columns (k, sublattice)."""
    n = rho_k.shape[0]
    blocks = np.zeros((2 * n, 2 * n), complex)
    for j in range(n):
        blocks[2 * j:2 * j + 2, 2 * j:2 * j + 2] = rho_k[j, j]
    return basis @ blocks @ basis.conj().T


def check_fig3(workers: int = 1) -> list[CheckResult]:
    init = site_state(FIG3.n_sites, FIG3.n_sites // 2)
    profiles = {}
    for schedule in ("none", "stroboscopic", "per_step"):
        spec = NoiseSpec("uniform", 0.4 * np.pi, schedule, SEED)
        band = ensemble_band_structure(init, FIG3, spec, 100 if schedule != "none" else 1, 40,
                                       pad=8, workers=workers)
        profiles[schedule] = fwhm_profile(band)
    k = profiles["none"].k
    edge = [int(np.argmin(np.abs(k - np.pi))), int(np.argmin(np.abs(k + np.pi)))]
    zero = int(np.argmin(np.abs(k)))
    base, strobo, rand = profiles["none"].fwhm, profiles["stroboscopic"].fwhm, profiles["per_step"].fwhm
    near_pi = max(abs(strobo[i] / base[i] - 1) for i in edge)
    at_zero = strobo[zero] / base[zero]
    spread = np.nanmax(rand) / np.nanmin(rand)
    return [
        CheckResult("9a", "stroboscopic FWHM near k=+-pi stays at noiseless width", near_pi <= 0.2, near_pi, 0.2),
        CheckResult("9b", "stroboscopic FWHM at k=0 broadened", at_zero >= 3.0, at_zero, 3.0,
                    "ratio to noiseless FWHM (must be >= threshold)"),
        CheckResult("9c", "per-step FWHM uniform across k", spread <= 1.5, spread, 1.5,
                    f"max/min over k, {int(np.sum(np.isfinite(rand)))} fitted columns"),
    ]


def fig4_series(params: ProtocolParams, spec: NoiseSpec, n_periods: int, n_realizations: int,
                workers: int = 1) -> dict:
    edge = left_edge_state(params)
    rho0 = pure_density(edge.vector)
    obs = {"edge": projection(edge.vector), "neighbor": population(1)}
    master = propagate(rho0, make_stepper(params, spec), n_periods, obs)
    out = {"master": master["edge"], "neighbor": master["neighbor"]}
    if n_realizations:
        mc = run_ensemble(StateVector.from_vector(edge.vector), params, spec, n_realizations,
                          2 * n_periods, projectors={"edge": edge.vector}, workers=workers)
        out["mc"], out["mc_se"] = mc.projections["edge"]
    return out


def check_fig4(workers: int = 1) -> list[CheckResult]:
    out = []
    clean = fig4_series(FIG4_FLAT, NoiseSpec(), 80, 0)["master"]
    out.append(CheckResult("10a", "noiseless edge return probability", clean.min() >= 0.999,
                           float(clean.min()), 0.999, "minimum over 80 periods (must be >= threshold)"))
    target = -np.log((1 + np.exp(-2 * FIG4_SIGMA**2)) / 2)
    floor = 1.0 / FIG4_FLAT.dim
    for schedule in ("per_step", "stroboscopic"):
        spec = NoiseSpec("gaussian", FIG4_SIGMA, schedule, SEED)
        s = fig4_series(FIG4_FLAT, spec, 80, 100, workers)
        rate = fit_decay(s["master"], floor=floor).exp_rate
        rel = abs(rate / target - 1)
        out.append(CheckResult(f"10b-{schedule}", f"early decay rate ({schedule})", rel <= 0.1, rel, 0.1,
                               f"fitted {rate:.5f} vs {target:.5f}"))
        z = float(np.max(np.abs(s["mc"] - s["master"]) / (s["mc_se"] + 1e-12)))
        ok = bool(np.all(np.abs(s["mc"] - s["master"]) <= 5 * s["mc_se"] + 1e-10))
        out.append(CheckResult(f"10c-{schedule}", f"master equation within 5 stderr of 100 trajectories ({schedule})",
                               ok, z, 5.0))
    spec = NoiseSpec("gaussian", 0.2, "stroboscopic", SEED)
    disp = fit_decay(fig4_series(FIG4_DISPERSIVE, spec, 80, 0)["master"], floor=floor)
    for sigma in (FIG4_SIGMA, 0.2):
        flat = fit_decay(fig4_series(FIG4_FLAT, spec.replace(sigma=sigma), 80, 0)["master"], floor=floor)
        out.append(CheckResult(f"10d-sigma={sigma:.4f}", "flat-band tail slower than exponential",
                               flat.polynomial_tail and flat.curvature > 0,
                               flat.late_residual_exp / flat.late_residual_power, 1.0,
                               f"exp/power residual ratio, curvature {flat.curvature:.3e}"))
    out.append(CheckResult("10e", "dispersive tail exponential", not disp.polynomial_tail,
                           disp.late_residual_exp / disp.late_residual_power, 1.0,
                           "exp/power residual ratio (must be below threshold)"))
    return out


def check_analytic() -> list[CheckResult]:
    spec = NoiseSpec("gaussian", FIG4_SIGMA, "stroboscopic")
    s = fig4_series(FIG4_FLAT, spec, 80, 0)
    report = fit_decay(s["master"], floor=1.0 / FIG4_FLAT.dim)
    approx = analytic_return(1.0, gamma_coefficients(FIG4_SIGMA).gamma_plus, s["neighbor"]).p
    upto = int(np.floor(report.crossover))
    rel = float(np.max(np.abs(approx[: upto + 1] / s["master"][: upto + 1] - 1)))
    return [CheckResult("11", "analytic approximation up to crossover", rel <= 0.15, rel, 0.15,
                        f"periods 0..{upto}")]


def check_determinism() -> list[CheckResult]:
    from .config import load_preset
    from .runners import run_bands, run_edge
    digests = []
    with tempfile.TemporaryDirectory() as tmp:
        for workers in (1, 4, 8):
            cfg3 = load_preset("fig3c").with_overrides(n_realizations=300, n_periods=10)
            cfg4 = load_preset("fig4").with_overrides(n_realizations=300, n_periods=20)
            root = Path(tmp) / f"w{workers}"
            run_bands(cfg3, root / "bands", workers)
            run_edge(cfg4, root / "edge", workers)
            digests.append(sorted((f.relative_to(root).as_posix(), f.read_bytes())
                                  for f in root.rglob("*") if f.is_file()))
    same = all(d == digests[0] for d in digests[1:])
    return [CheckResult("12", "outputs identical for 1, 4 and 8 workers", same, float(not same), 0.0,
                        "byte comparison of bands and edge outputs")]


CHECKS = {
    "unitarity": check_unitarity,
    "spectrum": check_spectrum,
    "dfs": check_dfs,
    "no-dfs-random": check_no_dfs_random,
    "coefficients": check_coefficients,
    "iteration": check_iteration,
    "mc-master": check_mc_master,
    "fourier": check_fourier,
    "fig3": check_fig3,
    "fig4": check_fig4,
    "analytic": check_analytic,
    "determinism": check_determinism,
}
_PARALLEL = {"mc-master", "fig3", "fig4"}


def run_checks(workers: int = 1, only=None) -> list[CheckResult]:
    names = list(CHECKS) if not only else list(only)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ValueError(f"unknown checks {unknown}; available: {list(CHECKS)}")
    results = []
    for name in names:
        fn = CHECKS[name]
        results.extend(fn(workers) if name in _PARALLEL else fn())
    return results
