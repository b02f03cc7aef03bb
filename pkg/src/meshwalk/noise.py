"""Splitting-angle noise: distributions, reproducible sequences, moments.

Every noise sample is a pure function of (master_seed, trajectory_id, step).
Each trajectory owns a Philox stream keyed by a SeedSequence built from
(master_seed, trajectory_id); step m reads the m-th draw of that stream, so
sequences are prefix-stable and independent of execution order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

DISTRIBUTIONS = ("gaussian", "uniform")
SCHEDULES = ("none", "per_step", "stroboscopic")

# trig monomial cos^a(tau) sin^b(tau) is identified by (a, b)
MONOMIALS = {
    "cos": (1, 0),
    "sin": (0, 1),
    "cos2": (2, 0),
    "sin2": (0, 2),
    "sin_cos": (1, 1),
    "cos3": (3, 0),
    "cos_sin2": (1, 2),
    "cos4": (4, 0),
    "sin4": (0, 4),
    "sin2_cos2": (2, 2),
}


@dataclass(frozen=True)
class NoiseSpec:
    """Noise on the splitting angles.

    ``sigma`` is the standard deviation for ``gaussian`` and the full width
    for ``uniform`` (samples in [-sigma/2, sigma/2]).
    """
    distribution: str = "gaussian"
    sigma: float = 0.0
    schedule: str = "none"
    master_seed: int = 0

    def __post_init__(self):
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"distribution must be one of {DISTRIBUTIONS}, got {self.distribution!r}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        sigma = float(self.sigma)
        if not np.isfinite(sigma) or sigma < 0:
            raise ValueError(f"sigma must be finite and >= 0, got {self.sigma}")
        object.__setattr__(self, "sigma", sigma)
        seed = int(self.master_seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"master_seed must be an unsigned 64-bit integer, got {self.master_seed}")
        object.__setattr__(self, "master_seed", seed)

    @property
    def effective_sigma(self) -> float:
        return 0.0 if self.schedule == "none" else self.sigma

    def replace(self, **changes) -> "NoiseSpec":
        data = dict(distribution=self.distribution, sigma=self.sigma,
                    schedule=self.schedule, master_seed=self.master_seed)
        data.update(changes)
        return NoiseSpec(**data)


def _generator(master_seed: int, trajectory_id: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(master_seed), int(trajectory_id)])
    return np.random.Generator(np.random.Philox(ss))


def _draw(spec: NoiseSpec, rng: np.random.Generator, size: int) -> np.ndarray:
    if spec.distribution == "gaussian":
        return rng.normal(0.0, spec.sigma, size)
    return rng.uniform(-0.5 * spec.sigma, 0.5 * spec.sigma, size)


def sample_sequence(spec: NoiseSpec, n_steps: int, trajectory_id: int) -> np.ndarray:
    """Angle offsets tau_1..tau_{n_steps} of one trajectory."""
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    if spec.schedule == "none" or spec.sigma == 0.0:
        return np.zeros(n_steps)
    rng = _generator(spec.master_seed, trajectory_id)
    if spec.schedule == "per_step":
        return _draw(spec, rng, n_steps)
    n_periods = (n_steps + 1) // 2
    return np.repeat(_draw(spec, rng, n_periods), 2)[:n_steps]


def sample_block(spec: NoiseSpec, n_steps: int, trajectory_ids) -> np.ndarray:
    """Stacked sequences, shape (len(trajectory_ids), n_steps)."""
    ids = list(trajectory_ids)
    out = np.zeros((len(ids), n_steps))
    if spec.schedule == "none" or spec.sigma == 0.0:
        return out
    for row, tid in enumerate(ids):
        out[row] = sample_sequence(spec, n_steps, tid)
    return out


# -- expectation values -------------------------------------------------------

@dataclass(frozen=True)
class CoefficientSet:
    gamma_plus: float
    gamma_pp: float
    gamma_mm: float
    moments: dict = field(default_factory=dict)

    def moment(self, cos_power: int, sin_power: int) -> float:
        """E[cos^a sin^b] for the even noise densities supported here."""
        if sin_power % 2:
            return 0.0
        if cos_power == 0 and sin_power == 0:
            return 1.0
        return self.moments[(cos_power, sin_power)]

    @property
    def cos2(self) -> float:
        return self.moments[(2, 0)]

    @property
    def sin2(self) -> float:
        return self.moments[(0, 2)]


def gamma_coefficients(sigma: float) -> CoefficientSet:
    """Closed-form coefficients for Gaussian noise of standard deviation sigma."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    s2 = sigma * sigma
    e_half, e2, e_9half, e8 = (np.exp(-0.5 * s2), np.exp(-2 * s2),
                               np.exp(-4.5 * s2), np.exp(-8 * s2))
    moments = {
        (1, 0): e_half,
        (0, 1): 0.0,
        (2, 0): (1 + e2) / 2,
        (0, 2): (1 - e2) / 2,
        (1, 1): 0.0,
        (3, 0): (3 * e_half + e_9half) / 4,
        (1, 2): (e_half - e_9half) / 4,
        (4, 0): (3 + 4 * e2 + e8) / 8,
        (0, 4): (3 - 4 * e2 + e8) / 8,
        (2, 2): (1 - e8) / 8,
    }
    return CoefficientSet(
        gamma_plus=(1 - e2) / 2,
        gamma_pp=(3 + e8 - 4 * e2) / 8,
        gamma_mm=(1 - e8) / 8,
        moments=moments,
    )


def _monomial(monomial) -> tuple[int, int]:
    if isinstance(monomial, str):
        try:
            return MONOMIALS[monomial]
        except KeyError:
            raise ValueError(f"unknown monomial {monomial!r}; known: {sorted(MONOMIALS)}") from None
    a, b = monomial
    if (a, b) not in MONOMIALS.values():
        raise ValueError(f"unsupported monomial cos^{a} sin^{b}")
    return int(a), int(b)


def moment_quadrature(spec: NoiseSpec, monomial, abs_tol: float = 1e-10) -> float:
    """E[cos^a(tau) sin^b(tau)] by adaptive quadrature over the noise density."""
    a, b = _monomial(monomial)
    sigma = spec.effective_sigma

    def f(t):
        return np.cos(t) ** a * np.sin(t) ** b

    if sigma == 0.0:
        return float(f(0.0))
    if spec.distribution == "gaussian":
        norm = 1.0 / (np.sqrt(2 * np.pi) * sigma)
        lo, hi = -12 * sigma, 12 * sigma

        def integrand(t):
            return f(t) * norm * np.exp(-0.5 * (t / sigma) ** 2)
    else:
        lo, hi = -0.5 * sigma, 0.5 * sigma

        def integrand(t):
            return f(t) / sigma

    val, err = integrate.quad(integrand, lo, hi, epsabs=abs_tol * 1e-3, epsrel=1e-13, limit=400)
    if not err <= abs_tol:
        raise RuntimeError(f"quadrature for cos^{a} sin^{b} did not converge (error estimate {err:.2e})")
    return float(val)


def coefficients(spec: NoiseSpec) -> CoefficientSet:
    """Master-equation coefficients for any supported noise spec.

    Gaussian uses the closed forms; uniform goes through quadrature and maps
    gamma_plus = E[sin^2], gamma_pp = E[sin^4], gamma_mm = E[sin^2 cos^2].
    """
    sigma = spec.effective_sigma
    if spec.distribution == "gaussian" or sigma == 0.0:
        return gamma_coefficients(sigma)
    moments = {mono: moment_quadrature(spec, mono) for mono in MONOMIALS.values()}
    moments[(0, 1)] = 0.0
    moments[(1, 1)] = 0.0
    return CoefficientSet(
        gamma_plus=moments[(0, 2)],
        gamma_pp=moments[(0, 4)],
        gamma_mm=moments[(2, 2)],
        moments=moments,
    )
