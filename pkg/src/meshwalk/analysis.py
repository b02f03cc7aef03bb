"""Band extraction, broadening fits, edge states and return probabilities.

Quasienergies follow the convention U_F v = exp(iE) v, so a stroboscopic
series psi_M = exp(iEM) v peaks at E in the time transform used by
:func:`band_structure`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.linalg import schur

from .lattice import ProtocolParams, momentum_grid, quasienergies, wrap_angle
from .noise import NoiseSpec, gamma_coefficients
from .stats import RunningMoments
from .trajectory import (CHUNK_SIZE, SpatioTemporalRecord, StateVector, chunk_ids,
                         map_chunks, simulate_chunk)

log = logging.getLogger(__name__)

FWHM_PER_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))


# -- band structure -------------------------------------------------------------

@dataclass
class BandData:
    k: np.ndarray                   # (n_k,) ascending in (-pi, pi]
    energy: np.ndarray              # (n_e,) ascending in (-pi, pi]
    intensity: np.ndarray           # (n_e, n_k)
    stderr: np.ndarray | None = None
    n_periods: int = 0
    meta: dict = field(default_factory=dict)


def _axis_order(n: int) -> tuple[np.ndarray, np.ndarray]:
    grid = momentum_grid(n)
    order = np.argsort(grid, kind="stable")
    return grid[order], order


def _band_intensity(snaps: np.ndarray, window: str | None, pad: int) -> np.ndarray:
    """|FT alpha|^2 + |FT beta|^2 for snapshots of shape (..., T, 2N), unsorted axes."""
    n_t = snaps.shape[-2]
    if window == "hann":
        taper = np.hanning(n_t + 2)[1:-1]
        snaps = snaps * taper[:, None]
    elif window not in (None, "none"):
        raise ValueError(f"unknown window {window!r}")
    n_e = n_t * pad
    total = 0.0
    for ring in (snaps[..., 0::2], snaps[..., 1::2]):
        # exp(-ikn) in space, exp(-iEM) in time
        amp = np.fft.fft(np.fft.fft(ring, axis=-1), n=n_e, axis=-2)
        total = total + np.abs(amp) ** 2
    return total / (ring.shape[-1] * n_e * n_t)


def band_structure(record, window: str | None = None, pad: int = 1) -> BandData:
    """2D Fourier intensity of a stroboscopic record (or a stack of them).

    ``record`` may be a SpatioTemporalRecord, an array of snapshots (T, 2N)
    or a batch (B, T, 2N); batches are averaged incoherently.  ``pad``
    zero-pads the time axis by an integer factor to interpolate the
    quasienergy axis.
    """
    if isinstance(record, SpatioTemporalRecord):
        if not record.stroboscopic:
            raise ValueError("band_structure needs a stroboscopic record (odd steps only)")
        snaps = record.snapshots
    else:
        snaps = np.asarray(record)
    if snaps.ndim == 2:
        snaps = snaps[None]
    inten = _band_intensity(snaps, window, pad)
    mom = RunningMoments.from_batch(inten)
    n_sites, n_e = snaps.shape[-1] // 2, snaps.shape[-2] * pad
    return _sorted_band(mom, n_sites, n_e, snaps.shape[-2] - 1)


def _sorted_band(mom: RunningMoments, n_sites: int, n_e: int, n_periods: int, meta=None) -> BandData:
    # fft of exp(iEM) peaks at bin l = E n_e / 2 pi, same layout as the k axis
    k, ko = _axis_order(n_sites)
    energy, eo = _axis_order(n_e)
    inten = mom.mean[np.ix_(eo, ko)]
    se = mom.stderr[np.ix_(eo, ko)] if mom.n > 1 else None
    return BandData(k, energy, inten, se, n_periods, dict(meta or {}, n_realizations=mom.n))


def ensemble_band_structure(initial: StateVector, params: ProtocolParams, spec: NoiseSpec,
                            n_realizations: int, n_periods: int, window: str | None = None,
                            pad: int = 1, workers: int = 1,
                            chunk_size: int = CHUNK_SIZE) -> BandData:
    """Band intensity averaged over independent noise realizations."""
    n_steps = 2 * n_periods

    def work(ids):
        rec = simulate_chunk(initial, params, spec, n_steps, ids, "stroboscopic")
        return RunningMoments.from_batch(_band_intensity(rec, window, pad))

    total = RunningMoments()
    for part in map_chunks(work, chunk_ids(n_realizations, chunk_size), workers):
        total.merge(part)
    meta = dict(theta1=params.theta1, theta2=params.theta2, phi=params.phi,
                n_sites=params.n_sites, boundary=params.boundary,
                distribution=spec.distribution, sigma=spec.sigma, schedule=spec.schedule,
                master_seed=spec.master_seed, window=window or "none", pad=pad)
    return _sorted_band(total, params.n_sites, (n_periods + 1) * pad, n_periods, meta)


# -- broadening -------------------------------------------------------------------

@dataclass
class FWHMProfile:
    k: np.ndarray
    center: np.ndarray
    fwhm: np.ndarray
    residual: np.ndarray
    band: str = "upper"

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.fwhm)


def _gauss(x, amp, mu, sig):
    return amp * np.exp(-0.5 * ((x - mu) / sig) ** 2)


def fwhm_profile(band: BandData, which_band: str = "upper", half_width: float = 0.25 * np.pi) -> FWHMProfile:
    """Per-k Gaussian fit of one band around its intensity maximum.

    The search for the maximum is restricted to E > 0 (upper) or E < 0
    (lower); the fit uses the points within ``half_width`` of the maximum,
    with quasienergy differences taken modulo 2 pi.  Columns whose fit fails
    are left as NaN.
    """
    if which_band not in ("upper", "lower"):
        raise ValueError(f"which_band must be 'upper' or 'lower', got {which_band!r}")
    e = band.energy
    half = e > 0 if which_band == "upper" else e < 0
    n_k = band.k.size
    center, width, resid = (np.full(n_k, np.nan) for _ in range(3))
    for j in range(n_k):
        col = band.intensity[:, j]
        if not np.any(col[half] > 0):
            continue
        peak = e[half][np.argmax(col[half])]
        dx = wrap_angle(e - peak)
        sel = np.abs(dx) <= half_width
        x, y = dx[sel], col[sel]
        if sel.sum() < 4:
            continue
        amp0 = y.max()
        sig0 = max(np.sqrt(np.sum(y * x**2) / np.sum(y)), 1e-3)
        try:
            popt, _ = optimize.curve_fit(_gauss, x, y, p0=(amp0, 0.0, sig0), maxfev=5000)
        except (RuntimeError, optimize.OptimizeWarning):
            continue
        amp, mu, sig = popt
        if amp <= 0 or not np.isfinite(sig) or abs(mu) > half_width:
            continue
        center[j] = wrap_angle(peak + mu)
        width[j] = FWHM_PER_SIGMA * abs(sig)
        resid[j] = float(np.sqrt(np.mean((_gauss(x, *popt) - y) ** 2)) / amp)
    missing = int(np.sum(~np.isfinite(width)))
    if missing:
        log.info("fwhm_profile: %d of %d columns without a converged fit", missing, n_k)
    return FWHMProfile(band.k.copy(), center, width, resid, which_band)


# -- edge states ------------------------------------------------------------------

@dataclass
class EdgeState:
    vector: np.ndarray
    quasienergy: float
    gap: str                # "0" or "pi"
    ipr: float
    side: str               # "left" or "right"


def bulk_band_edges(params: ProtocolParams, n_k: int = 2001) -> tuple[float, float]:
    """(min, max) of the positive band E_+(k) over the Brillouin zone."""
    ks = np.linspace(-np.pi, np.pi, n_k)
    arg = (np.cos(params.theta1) * np.cos(params.theta2) * np.cos(ks)
           - np.sin(params.theta1) * np.sin(params.theta2) * np.cos(params.phi))
    e = np.arccos(np.clip(arg, -1, 1))
    # extrema of cos k sit at 0 and pi, both on the grid
    return float(e.min()), float(e.max())


def floquet_eigensystem(u_f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Quasienergies and orthonormal eigenvectors of a unitary via complex Schur form."""
    t, z = schur(u_f, output="complex")
    return np.angle(np.diag(t)), z


def extract_edge_states(u_f: np.ndarray, params: ProtocolParams, gap_tol: float = 1e-6,
                        ipr_threshold: float | None = None) -> list[EdgeState]:
    if params.boundary != "open":
        raise ValueError("edge states need an open lattice")
    n = params.n_sites
    e_min, e_max = bulk_band_edges(params)
    if e_min < gap_tol and e_max > np.pi - gap_tol:
        log.info("extract_edge_states: no spectral gap for %s", params)
        return []
    threshold = 4.0 / n if ipr_threshold is None else ipr_threshold
    energies, vecs = floquet_eigensystem(u_f)
    quarter = max(1, n // 4)
    found = []
    for energy, vec in zip(energies, vecs.T):
        a = abs(energy)
        if a < e_min - gap_tol:
            gap = "0"
        elif a > e_max + gap_tol:
            gap = "pi"
        else:
            continue
        ipr = float(np.sum(np.abs(vec) ** 4))
        if ipr <= threshold:
            continue
        w = np.abs(vec) ** 2
        left, right = w[: 2 * quarter].sum(), w[-2 * quarter:].sum()
        phase = np.exp(-1j * np.angle(vec[np.argmax(np.abs(vec))]))
        found.append(EdgeState(vec * phase, float(energy), gap, ipr,
                               "left" if left >= right else "right"))
    found.sort(key=lambda s: (s.side != "left", s.gap, -s.ipr))
    return found


def left_edge_state(params: ProtocolParams, u_f: np.ndarray | None = None) -> EdgeState:
    from .lattice import floquet_operator_real
    states = extract_edge_states(floquet_operator_real(params) if u_f is None else u_f, params)
    left = [s for s in states if s.side == "left"]
    if not left:
        raise ValueError(f"no left edge state for {params}")
    return max(left, key=lambda s: s.ipr)


# -- return probabilities -----------------------------------------------------------

@dataclass
class ReturnProbSeries:
    p: np.ndarray
    provenance: str                 # "mc" | "master" | "analytic"
    label: str = ""
    stderr: np.ndarray | None = None

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        # the analytic approximation is not a probability and may overshoot 1
        if self.provenance != "analytic" and (np.any(self.p < -1e-9) or np.any(self.p > 1 + 1e-9)):
            raise ValueError("return probabilities must lie in [0, 1]")


def _target_vector(state, dim: int) -> tuple[np.ndarray, str]:
    if isinstance(state, EdgeState):
        vec, label = state.vector, f"edge-{state.side}"
    elif isinstance(state, (int, np.integer)):
        vec = np.zeros(dim, complex)
        vec[int(state)] = 1.0
        label = f"j={int(state) + 1}"
    else:
        vec, label = np.asarray(state, dtype=complex), "vector"
    if vec.size != dim:
        raise ValueError(f"state has dimension {vec.size}, source has {dim}")
    return vec / np.linalg.norm(vec), label


def return_probability(source, state, provenance: str = "master") -> ReturnProbSeries:
    """<e|rho_M|e> for density series (M, d, d), or the realization mean of
    |<e|psi_M>|^2 for Monte-Carlo records (B, M, d)."""
    source = np.asarray(source)
    if source.ndim != 3:
        raise ValueError(f"source must be 3-d, got shape {source.shape}")
    dim = source.shape[-1]
    vec, label = _target_vector(state, dim)
    if provenance == "master":
        if source.shape[1] != dim:
            raise ValueError("density series must have shape (M, d, d)")
        p = np.real(np.einsum("i,mij,j->m", vec.conj(), source, vec))
        return ReturnProbSeries(np.clip(p, 0.0, None), "master", label)
    if provenance == "mc":
        mom = RunningMoments.from_batch(np.abs(source @ vec.conj()) ** 2)
        return ReturnProbSeries(mom.mean, "mc", label, mom.stderr)
    raise ValueError(f"unknown provenance {provenance!r}")


def analytic_return(p0: float, gamma_plus: float, neighbor) -> ReturnProbSeries:
    """p0 exp(-M gamma_plus) + gamma_plus p_neighbor(M)."""
    nb = np.asarray(getattr(neighbor, "p", neighbor), dtype=float)
    m = np.arange(nb.size)
    return ReturnProbSeries(p0 * np.exp(-m * gamma_plus) + gamma_plus * nb, "analytic", "approximation")


def recurrence_return(p_edge: float, p_neighbor: float, sigma: float) -> float:
    g = gamma_coefficients(sigma)
    return g.cos2 * p_edge + g.gamma_plus * p_neighbor


# -- decay-law fits --------------------------------------------------------------------

@dataclass
class DecayReport:
    exp_rate: float
    exp_intercept: float
    early_window: tuple
    early_residual: float
    tail_exponent: float | None
    tail_intercept: float | None
    late_window: tuple | None
    late_residual_power: float | None
    late_residual_exp: float | None
    crossover: float | None
    curvature: float | None
    polynomial_tail: bool
    saturated: bool
    floor: float
    flags: list = field(default_factory=list)


def _linfit(x, y):
    a = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = float(np.sqrt(np.mean((a @ coef - y) ** 2)))
    return float(coef[0]), float(coef[1]), resid


def fit_decay(series, early: tuple = (0, 3), late: tuple | None = None,
              floor: float = 0.0) -> DecayReport:
    """Exponential fit on an early window and power-law fit on a late window.

    Values are measured above ``floor`` (e.g. the 1/(2N) level of a fully
    mixed lattice).  The tail counts as polynomial when the log-log fit of the
    late window has a smaller rms residual than the log-linear fit of the
    same window.  The crossover is the last period at which the early
    exponential drops below the late power law; if the two never cross,
    their point of closest approach is used and flagged.
    """
    p = np.asarray(getattr(series, "p", series), dtype=float)
    n = p.size
    if n < 20:
        raise ValueError(f"fit_decay needs at least 20 periods, got {n}")
    flags = []
    late = (n // 2, n - 1) if late is None else late
    excess = p - floor
    if np.any(np.diff(p) > 1e-9 * max(p.max(), 1e-300)):
        flags.append("non_monotone")

    e0, e1 = early
    m_e = np.arange(e0, e1 + 1)
    if np.any(excess[m_e] <= 0):
        raise ValueError("early window reaches the floor; nothing to fit")
    slope, icpt, res_e = _linfit(m_e.astype(float), np.log(excess[m_e]))

    l0, l1 = late
    m_l = np.arange(max(l0, 1), l1 + 1)
    saturated = bool(np.any(excess[m_l] <= 0) or
                     (floor > 0 and np.min(excess[m_l]) < 0.1 * floor))
    report = DecayReport(-slope, icpt, (e0, e1), res_e, None, None, None, None, None,
                         None, None, False, saturated, floor, flags)
    if saturated:
        flags.append("saturated")
        return report
    y = np.log(excess[m_l])
    alpha, b, res_p = _linfit(np.log(m_l.astype(float)), y)
    _, _, res_x = _linfit(m_l.astype(float), y)
    report.tail_exponent, report.tail_intercept = -alpha, b
    report.late_window = (int(m_l[0]), int(m_l[-1]))
    report.late_residual_power, report.late_residual_exp = res_p, res_x
    report.polynomial_tail = res_p < res_x
    report.curvature = float(np.mean(np.diff(y, 2))) if y.size > 2 else None

    grid = np.linspace(1.0, float(l1), 20 * l1)
    gap = (icpt + slope * grid) - (b + alpha * np.log(grid))
    down = np.nonzero((gap[:-1] >= 0) & (gap[1:] < 0))[0]
    if down.size:
        i = down[-1]
        report.crossover = float(grid[i] + (grid[i + 1] - grid[i]) * gap[i] / (gap[i] - gap[i + 1]))
    else:
        # the two laws only touch; take the point of closest approach
        report.crossover = float(grid[np.argmax(gap)])
        flags.append("tangent_crossover")
    return report


def transform_limited_fwhm(n_periods: int) -> float:
    """FWHM of |sum_{M=0}^{T-1} e^{ixM}|^2 for T = n_periods + 1 samples."""
    n_t = n_periods + 1

    def half(x):
        return (np.sin(n_t * x / 2) / (n_t * np.sin(x / 2))) ** 2 - 0.5 if x else 0.5

    return 2.0 * optimize.brentq(half, 1e-9, 2 * np.pi / n_t)


def band_ridge_error(band: BandData, params: ProtocolParams) -> float:
    """Largest |E_max(k) - E_+(k)| over k, using the upper half of each column."""
    upper = band.energy > 0
    worst = 0.0
    for j, k in enumerate(band.k):
        col = band.intensity[upper, j]
        peak = band.energy[upper][np.argmax(col)]
        worst = max(worst, abs(peak - quasienergies(params, k).e_plus))
    return worst
