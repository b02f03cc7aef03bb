"""Monte-Carlo evolution of pulse amplitudes under sampled angle noise.

States live in the interleaved basis (alpha_1, beta_1, ..., alpha_N, beta_N).
Step m of a trajectory is an odd step (theta1 + tau_m, phase +phi) when m is
odd and an even step (theta2 + tau_m, phase -phi) otherwise.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .lattice import ProtocolParams
from .noise import NoiseSpec, sample_block
from .stats import RunningMoments

MAX_DENSITY_DIM = 64
CHUNK_SIZE = 128


class ResourceRefusal(RuntimeError):
    """Requested output would exceed the configured resource limits."""


@dataclass
class StateVector:
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=complex)
        self.beta = np.asarray(self.beta, dtype=complex)
        if self.alpha.shape != self.beta.shape or self.alpha.ndim != 1:
            raise ValueError("alpha and beta must be 1-d arrays of equal length")

    @property
    def n_sites(self) -> int:
        return self.alpha.size

    @property
    def vector(self) -> np.ndarray:
        out = np.empty(2 * self.n_sites, dtype=complex)
        out[0::2], out[1::2] = self.alpha, self.beta
        return out

    @classmethod
    def from_vector(cls, vec) -> "StateVector":
        vec = np.asarray(vec, dtype=complex)
        if vec.ndim != 1 or vec.size % 2:
            raise ValueError("interleaved state vector must have even length")
        return cls(vec[0::2].copy(), vec[1::2].copy())

    def norm2(self) -> float:
        return float(np.sum(np.abs(self.alpha) ** 2 + np.abs(self.beta) ** 2))


def site_state(n_sites: int, site: int, ring: str = "alpha") -> StateVector:
    """Single pulse at ``site`` (0-based) in one ring."""
    if not 0 <= site < n_sites:
        raise ValueError(f"site {site} outside lattice of {n_sites} sites")
    alpha, beta = np.zeros(n_sites, complex), np.zeros(n_sites, complex)
    (alpha if ring == "alpha" else beta)[site] = 1.0
    return StateVector(alpha, beta)


def bloch_state(n_sites: int, k: float, spinor=(1.0, 0.0)) -> StateVector:
    """Normalized plane wave exp(ikn) with sublattice spinor on every site."""
    spinor = np.asarray(spinor, dtype=complex)
    spinor = spinor / np.linalg.norm(spinor)
    wave = np.exp(1j * k * np.arange(n_sites)) / np.sqrt(n_sites)
    return StateVector(wave * spinor[0], wave * spinor[1])


def _step_batch(psi: np.ndarray, theta, phi_m: float, boundary: str, which: int) -> np.ndarray:
    """Apply one step to a batch of interleaved states, shape (B, 2N)."""
    theta = np.asarray(theta, dtype=float).reshape(-1, 1)
    c, s = np.cos(theta), np.sin(theta)
    ph = np.exp(1j * phi_m)
    a, b = psi[:, 0::2], psi[:, 1::2]
    out = np.empty_like(psi)
    if which == 1:
        out[:, 0::2] = ph * (c * a + 1j * s * b)
        out[:, 1::2] = 1j * s * a + c * b
        return out
    if boundary == "periodic":
        out[:, 0::2] = ph * (c * np.roll(a, 1, axis=1) + 1j * s * b)
        out[:, 1::2] = 1j * s * a + c * np.roll(b, -1, axis=1)
        return out
    new_a = np.empty_like(a)
    new_b = np.empty_like(b)
    new_a[:, 1:] = ph * (c * a[:, :-1] + 1j * s * b[:, 1:])
    new_a[:, 0] = 1j * ph * b[:, 0]
    new_b[:, :-1] = 1j * s * a[:, :-1] + c * b[:, 1:]
    new_b[:, -1] = 1j * a[:, -1]
    out[:, 0::2], out[:, 1::2] = new_a, new_b
    return out


def apply_step(state: StateVector, theta_m: float, phi_m: float, boundary: str = "open",
               which: int = 1, n_sites: int | None = None) -> StateVector:
    """One coupled-ring step.

    ``which=1`` is the cell-local coupler of an odd step; ``which=2`` the
    shifting recombination of an even step (alpha moves right, beta left).
    Open edges use a fixed full-crossing coupler.
    """
    if which not in (1, 2):
        raise ValueError(f"which must be 1 or 2, got {which}")
    if boundary not in ("open", "periodic"):
        raise ValueError(f"unknown boundary {boundary!r}")
    if n_sites is not None and state.n_sites != n_sites:
        raise ValueError(f"state has {state.n_sites} sites, lattice has {n_sites}")
    if abs(state.norm2() - 1.0) > 1e-8:
        warnings.warn(f"state norm^2 is {state.norm2():.6g}, not 1", stacklevel=2)
    out = _step_batch(state.vector[None, :], theta_m, phi_m, boundary, which)[0]
    return StateVector.from_vector(out)


@dataclass
class SpatioTemporalRecord:
    snapshots: np.ndarray           # (n_records, 2N), interleaved
    steps: np.ndarray               # step index of each snapshot, 0 = initial
    stroboscopic: bool

    @property
    def alpha(self) -> np.ndarray:
        return self.snapshots[:, 0::2]

    @property
    def beta(self) -> np.ndarray:
        return self.snapshots[:, 1::2]


def recorded_steps(n_steps: int, record: str) -> np.ndarray:
    if record == "every":
        return np.arange(n_steps + 1)
    if record == "stroboscopic":
        return np.arange(0, n_steps + 1, 2)
    raise ValueError(f"record must be 'every' or 'stroboscopic', got {record!r}")


def _evolve_batch(psi0: np.ndarray, params: ProtocolParams, taus: np.ndarray,
                  n_steps: int, record: str) -> np.ndarray:
    """Records of shape (B, n_records, 2N) for a batch of noise sequences."""
    steps = recorded_steps(n_steps, record)
    keep = np.zeros(n_steps + 1, bool)
    keep[steps] = True
    batch = taus.shape[0]
    psi = np.broadcast_to(psi0, (batch, psi0.size)).astype(complex)
    out = np.empty((batch, steps.size, psi0.size), dtype=complex)
    out[:, 0] = psi
    slot = 1
    for m in range(1, n_steps + 1):
        which = 1 if m % 2 else 2
        theta = params.step_angle(which) + taus[:, m - 1]
        psi = _step_batch(psi, theta, params.step_phase(which), params.boundary, which)
        if keep[m]:
            out[:, slot] = psi
            slot += 1
    return out


def evolve_trajectory(initial: StateVector, params: ProtocolParams, noise_seq,
                      n_steps: int, record: str = "every") -> SpatioTemporalRecord:
    """Evolve one realization; snapshot 0 is the initial state."""
    noise_seq = np.asarray(noise_seq, dtype=float)
    if noise_seq.size < n_steps:
        raise ValueError(f"noise sequence has {noise_seq.size} entries, need {n_steps}")
    if initial.n_sites != params.n_sites:
        raise ValueError(f"state has {initial.n_sites} sites, lattice has {params.n_sites}")
    snaps = _evolve_batch(initial.vector, params, noise_seq[None, :n_steps], n_steps, record)[0]
    return SpatioTemporalRecord(snaps, recorded_steps(n_steps, record), record == "stroboscopic")


@dataclass
class EnsembleStats:
    steps: np.ndarray
    n_realizations: int
    mean_alpha: np.ndarray
    mean_beta: np.ndarray
    se_alpha: np.ndarray
    se_beta: np.ndarray
    intensity_alpha: np.ndarray     # mean |alpha|^2
    intensity_beta: np.ndarray      # mean |beta|^2
    se_intensity_alpha: np.ndarray
    se_intensity_beta: np.ndarray
    averaged_density: np.ndarray | None = None
    se_density: np.ndarray | None = None
    projections: dict = field(default_factory=dict)     # name -> (mean, se)

    @property
    def coherent_alpha(self) -> np.ndarray:
        return np.abs(self.mean_alpha) ** 2

    @property
    def coherent_beta(self) -> np.ndarray:
        return np.abs(self.mean_beta) ** 2


def chunk_ids(n_realizations: int, chunk_size: int = CHUNK_SIZE) -> list[range]:
    return [range(lo, min(lo + chunk_size, n_realizations))
            for lo in range(0, n_realizations, chunk_size)]


def simulate_chunk(initial: StateVector, params: ProtocolParams, spec: NoiseSpec,
                   n_steps: int, ids, record: str = "stroboscopic") -> np.ndarray:
    """Records (B, n_records, 2N) for the trajectories with the given ids."""
    taus = sample_block(spec, n_steps, ids)
    return _evolve_batch(initial.vector, params, taus, n_steps, record)


def map_chunks(fn, chunks, workers: int = 1):
    """Ordered map; results are identical for any worker count."""
    if workers <= 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, chunks))


def _density_moments(rec: np.ndarray) -> RunningMoments:
    # |psi_i psi_j^*|^2 = |psi_i|^2 |psi_j|^2, so the chunk's sum of squares
    # needs no (B, 2N, 2N) temporaries; chunks are small, so the shifted
    # form loses nothing visible next to the standard errors
    out = RunningMoments()
    out.n = rec.shape[0]
    out.mean = np.einsum("bti,btj->tij", rec, rec.conj()) / out.n
    p = np.abs(rec) ** 2
    m2 = np.einsum("bti,btj->tij", p, p) - out.n * np.abs(out.mean) ** 2
    out.m2 = np.maximum(m2, 0.0)
    return out


def run_ensemble(initial: StateVector, params: ProtocolParams, spec: NoiseSpec,
                 n_realizations: int, n_steps: int, record: str = "stroboscopic",
                 density: bool = False, projectors: dict | None = None,
                 workers: int = 1, chunk_size: int = CHUNK_SIZE) -> EnsembleStats:
    """Ensemble statistics over ``n_realizations`` noise realizations.

    ``projectors`` maps names to state vectors e; the mean and standard error
    of |<e|psi>|^2 are recorded for each.
    """
    if n_realizations < 1:
        raise ValueError(f"n_realizations must be >= 1, got {n_realizations}")
    if initial.n_sites != params.n_sites:
        raise ValueError(f"state has {initial.n_sites} sites, lattice has {params.n_sites}")
    dim = 2 * params.n_sites
    if density and dim > MAX_DENSITY_DIM:
        raise ResourceRefusal(f"averaged density needs 2N <= {MAX_DENSITY_DIM}, got {dim}")
    projectors = {name: np.asarray(v, dtype=complex) for name, v in (projectors or {}).items()}

    def work(ids):
        rec = simulate_chunk(initial, params, spec, n_steps, ids, record)
        part = {
            "amp": RunningMoments.from_batch(rec),
            "int": RunningMoments.from_batch(np.abs(rec) ** 2),
        }
        if density:
            part["rho"] = _density_moments(rec)
        for name, vec in projectors.items():
            part["p:" + name] = RunningMoments.from_batch(np.abs(rec @ vec.conj()) ** 2)
        return part

    total: dict[str, RunningMoments] = {}
    for part in map_chunks(work, chunk_ids(n_realizations, chunk_size), workers):
        for key, mom in part.items():
            total.setdefault(key, RunningMoments()).merge(mom)

    amp, inten = total["amp"], total["int"]
    stats = EnsembleStats(
        steps=recorded_steps(n_steps, record),
        n_realizations=amp.n,
        mean_alpha=amp.mean[:, 0::2], mean_beta=amp.mean[:, 1::2],
        se_alpha=amp.stderr[:, 0::2], se_beta=amp.stderr[:, 1::2],
        intensity_alpha=inten.mean[:, 0::2], intensity_beta=inten.mean[:, 1::2],
        se_intensity_alpha=inten.stderr[:, 0::2], se_intensity_beta=inten.stderr[:, 1::2],
    )
    if density:
        stats.averaged_density = total["rho"].mean
        stats.se_density = total["rho"].stderr
    for name in projectors:
        mom = total["p:" + name]
        stats.projections[name] = (mom.mean, mom.stderr)
    return stats
