"""Subcommand bodies: each takes a RunConfig and an output directory,
writes its artifacts and a manifest, and returns a summary dict."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .analysis import (analytic_return, ensemble_band_structure, extract_edge_states, fit_decay,
                       fwhm_profile)
from .config import RunConfig
from .export import sha256, write_csv, write_json
from .lattice import (ProtocolParams, dfs_momenta, floquet_operator_real, momentum_grid)
from .master import (coherence, decompose_bulk, make_stepper, population, projection,
                     propagate, pure_density, trace)
from .noise import coefficients
from .trajectory import StateVector, bloch_state, run_ensemble, site_state

MANIFEST_VERSION = 1
BAND_PAD = 8
DFS_GRID = 256


def edge_state_for(params: ProtocolParams, side: str = "left"):
    states = [s for s in extract_edge_states(floquet_operator_real(params), params) if s.side == side]
    if not states:
        raise ValueError(f"no {side} edge state for {params}")
    return max(states, key=lambda s: s.ipr)


def initial_vector(cfg: RunConfig) -> np.ndarray:
    ini, n = cfg.initial, cfg.protocol.n_sites
    if ini.kind == "site":
        return site_state(n, ini.site, ini.ring).vector
    if ini.kind == "bloch":
        return bloch_state(n, ini.k).vector
    return edge_state_for(cfg.protocol, ini.side).vector


def _finish(out: Path, command: str, cfg: RunConfig, files: list, extra: dict | None = None) -> dict:
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "config": cfg.to_dict(),
        "options": dict(extra or {}),
        "versions": {"meshwalk": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
        "files": {Path(f).relative_to(out).as_posix(): sha256(f) for f in files},
    }
    write_json(out / "manifest.json", manifest)
    return manifest


# -- bands ----------------------------------------------------------------------

def run_bands(cfg: RunConfig, out: Path, workers: int = 1) -> dict:
    init = StateVector.from_vector(initial_vector(cfg))
    n_real = cfg.n_realizations if cfg.noise.effective_sigma > 0 else 1
    band = ensemble_band_structure(init, cfg.protocol, cfg.noise, n_real, cfg.n_periods,
                                   pad=BAND_PAD, workers=workers)
    prof = fwhm_profile(band, "upper")
    ee, kk = np.meshgrid(band.energy, band.k, indexing="ij")
    se = band.stderr if band.stderr is not None else np.zeros_like(band.intensity)
    files = [
        write_csv(out / "bands.csv", {"energy": ee.ravel(), "k": kk.ravel(),
                                      "intensity": band.intensity.ravel(), "stderr": se.ravel()}),
        write_csv(out / "fwhm.csv", {"k": prof.k, "center": prof.center, "fwhm": prof.fwhm,
                                     "residual": prof.residual}),
    ]
    summary = {"n_realizations": n_real, "fwhm_min": float(np.nanmin(prof.fwhm)),
               "fwhm_max": float(np.nanmax(prof.fwhm)), "fwhm_mean": float(np.nanmean(prof.fwhm)),
               "fwhm_missing": int(np.sum(~prof.valid))}
    _finish(out, "bands", cfg, files, {"pad": BAND_PAD, "window": "none", "band": "upper",
                                       "n_realizations_used": n_real})
    return summary


# -- evolve ---------------------------------------------------------------------

def _population_projectors(cfg: RunConfig, dim: int) -> dict:
    out = {}
    for obs in cfg.observables:
        if obs.startswith("population:"):
            j = int(obs.split(":")[1])
            if j >= dim:
                raise ValueError(f"{obs} outside basis of dimension {dim}")
            vec = np.zeros(dim, complex)
            vec[j] = 1.0
            out[obs] = vec
        elif obs == "edge":
            out[obs] = edge_state_for(cfg.protocol, "left").vector
    return out


def run_evolve(cfg: RunConfig, out: Path, workers: int = 1) -> dict:
    init = StateVector.from_vector(initial_vector(cfg))
    dim = cfg.protocol.dim
    projectors = _population_projectors(cfg, dim)
    density = "density" in cfg.observables
    stats = run_ensemble(init, cfg.protocol, cfg.noise, cfg.n_realizations, cfg.n_steps,
                         record=cfg.record, density=density, projectors=projectors,
                         workers=workers)
    n_rec, n = stats.mean_alpha.shape
    step = np.repeat(stats.steps, n)
    site = np.tile(np.arange(n), n_rec)
    files = [write_csv(out / "ensemble.csv", {
        "step": step, "site": site,
        "mean_alpha": stats.mean_alpha.ravel(), "mean_beta": stats.mean_beta.ravel(),
        "coherent_alpha": stats.coherent_alpha.ravel(), "coherent_beta": stats.coherent_beta.ravel(),
        "intensity_alpha": stats.intensity_alpha.ravel(), "intensity_beta": stats.intensity_beta.ravel(),
        "se_intensity_alpha": stats.se_intensity_alpha.ravel(),
        "se_intensity_beta": stats.se_intensity_beta.ravel(),
    })]
    if projectors:
        cols = {"step": stats.steps}
        for name, (mean, se) in stats.projections.items():
            cols[name], cols[name + "_se"] = mean, se
        files.append(write_csv(out / "observables.csv", cols))
    if density:
        rho, se = stats.averaged_density, stats.se_density
        idx = np.indices(rho.shape)
        files.append(write_csv(out / "density.csv", {
            "step": stats.steps[idx[0]].ravel(), "i": idx[1].ravel(), "j": idx[2].ravel(),
            "rho": rho.ravel(), "stderr": se.ravel()}))
    _finish(out, "evolve", cfg, files)
    return {"n_realizations": stats.n_realizations, "records": int(n_rec)}


# -- master ---------------------------------------------------------------------

def _master_observables(cfg: RunConfig) -> dict:
    obs = {}
    for name in cfg.observables:
        if name.startswith("population:"):
            j = int(name.split(":")[1])
            if j >= cfg.protocol.dim:
                raise ValueError(f"{name} outside basis of dimension {cfg.protocol.dim}")
            obs[name] = population(j)
        elif name.startswith("coherence:"):
            i, j = (int(x) for x in name.split(":")[1].split(","))
            obs[name] = coherence(i, j)
        elif name == "edge":
            obs[name] = projection(edge_state_for(cfg.protocol, "left").vector)
        elif name == "trace":
            obs[name] = trace
    return obs


def run_master(cfg: RunConfig, out: Path, workers: int = 1) -> dict:
    rho0 = pure_density(initial_vector(cfg))
    obs = _master_observables(cfg)
    obs.setdefault("trace", trace)
    keep = "density" in cfg.observables
    res = propagate(rho0, make_stepper(cfg.protocol, cfg.noise), cfg.n_periods, obs, keep_states=keep)
    periods = np.arange(cfg.n_periods + 1)
    files = [write_csv(out / "series.csv", {"period": periods, **{k: res[k] for k in obs}})]
    if keep:
        rho = res["states"]
        idx = np.indices(rho.shape)
        files.append(write_csv(out / "density.csv", {"period": idx[0].ravel(), "i": idx[1].ravel(),
                                                     "j": idx[2].ravel(), "rho": rho.ravel()}))
    _finish(out, "master", cfg, files)
    return {name: (res[name][-1] if not np.iscomplexobj(res[name]) else abs(res[name][-1])) for name in obs}


# -- edge -----------------------------------------------------------------------

def edge_series(cfg: RunConfig, workers: int = 1) -> tuple[dict, list]:
    """Return-probability series of the selected edge state for the noiseless,
    per-step and stroboscopic variants of the configured noise."""
    p = cfg.protocol
    side = cfg.initial.side if cfg.initial.kind == "edge" else "left"
    states = extract_edge_states(floquet_operator_real(p), p)
    chosen = [s for s in states if s.side == side]
    if not chosen:
        raise ValueError(f"no {side} edge state for {p}")
    edge = max(chosen, key=lambda s: s.ipr)
    psi0 = initial_vector(cfg)
    rho0 = pure_density(psi0)
    neighbor = 1 if side == "left" else p.dim - 2
    obs = {"edge": projection(edge.vector), "neighbor": population(neighbor)}
    cols = {"period": np.arange(cfg.n_periods + 1)}
    clean = propagate(rho0, make_stepper(p, cfg.noise.replace(schedule="none")), cfg.n_periods, obs)
    cols["noiseless"] = clean["edge"]
    init = StateVector.from_vector(psi0)
    for schedule in ("per_step", "stroboscopic"):
        spec = cfg.noise.replace(schedule=schedule)
        coeffs = coefficients(spec)
        res = propagate(rho0, make_stepper(p, spec, coeffs=coeffs), cfg.n_periods, obs)
        cols[f"master_{schedule}"] = res["edge"]
        cols[f"analytic_{schedule}"] = analytic_return(
            float(res["edge"][0]), coeffs.gamma_plus, res["neighbor"]).p
        mc = run_ensemble(init, p, spec, cfg.n_realizations, cfg.n_steps,
                          projectors={"edge": edge.vector}, workers=workers)
        cols[f"mc_{schedule}"], cols[f"mc_{schedule}_se"] = mc.projections["edge"]
    return cols, states


def run_edge(cfg: RunConfig, out: Path, workers: int = 1) -> dict:
    if cfg.protocol.boundary != "open":
        raise ValueError("edge needs protocol.boundary = open")
    cols, states = edge_series(cfg, workers)
    floor = 1.0 / cfg.protocol.dim
    fits = {}
    for key in ("master_per_step", "master_stroboscopic"):
        try:
            rep = fit_decay(cols[key], floor=floor)
            fits[key] = {k: v for k, v in rep.__dict__.items()}
        except ValueError as exc:
            fits[key] = {"error": str(exc)}
    files = [
        write_csv(out / "return_probability.csv", cols),
        write_csv(out / "edge_states.csv", {
            "index": np.arange(len(states)), "side": [s.side for s in states],
            "gap": [s.gap for s in states], "quasienergy": [s.quasienergy for s in states],
            "ipr": [s.ipr for s in states]}),
    ]
    files.append(write_json(out / "fits.json", {"floor": floor, "fits": fits}))
    _finish(out, "edge", cfg, files, {"decay_floor": floor})
    return {"edge_states": len(states), "fits": fits}


# -- dfs ------------------------------------------------------------------------

def run_dfs(cfg: RunConfig, out: Path, workers: int = 1) -> dict:
    p = cfg.protocol
    momenta = dfs_momenta(p.phi)
    grid = np.sort(np.concatenate([momentum_grid(DFS_GRID), momenta]))
    norms = np.array([[np.linalg.norm(m, 2) for m in (d.u_plus, d.u_minus)]
                      for d in (decompose_bulk(p, k) for k in grid)])
    at_dfs = [max(np.linalg.norm(decompose_bulk(p, k).u_plus, 2),
                  np.linalg.norm(decompose_bulk(p, k).u_minus, 2)) for k in momenta]
    files = [write_csv(out / "dfs_norms.csv", {"k": grid, "norm_u_plus": norms[:, 0],
                                               "norm_u_minus": norms[:, 1]})]
    report = {"phi": p.phi, "momenta": [float(k) for k in momenta], "residual": [float(r) for r in at_dfs]}
    files.append(write_json(out / "dfs.json", report))
    _finish(out, "dfs", cfg, files, {"grid": DFS_GRID})
    return report


# -- sweep ----------------------------------------------------------------------

def run_sweep(cfg: RunConfig, out: Path, workers: int = 1) -> dict:
    rows = []
    for i, (point, sub) in enumerate(cfg.expand_sweep()):
        sub_out = out / f"point_{i:03d}"
        row = {"point": i, **{k: point[k] for k in cfg.sweep}}
        if sub.engine == "master" and sub.initial.kind == "edge":
            summary = run_edge(sub, sub_out, workers)
            fit = summary["fits"].get(f"master_{sub.noise.schedule}", {})
            row.update({key: fit.get(key) for key in
                        ("exp_rate", "tail_exponent", "crossover", "polynomial_tail")})
        elif sub.engine == "master":
            summary = run_master(sub, sub_out, workers)
            row.update(summary)
        else:
            summary = run_bands(sub, sub_out, workers)
            row.update({k: summary[k] for k in ("fwhm_min", "fwhm_max", "fwhm_mean")})
        rows.append(row)
    keys = list(dict.fromkeys(k for r in rows for k in r))
    cols = {k: [r.get(k) for r in rows] for k in keys}
    files = [write_csv(out / "summary.csv", cols)]
    files += sorted(out.glob("point_*/manifest.json"))
    _finish(out, "sweep", cfg, files)
    return {"points": len(rows)}
