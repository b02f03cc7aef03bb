"""Noise-averaged density-matrix propagation.

Every map here has the form rho -> sum_{mu,nu} F_{mu nu} U_mu rho U_nu^dagger
with F_{mu nu} = E[f_mu(tau) f_nu(tau)] for trig monomials f.  The noisy
operators are split into tau-independent matrices by expanding
cos(theta + tau) and sin(theta + tau) entry by entry, so the decompositions
never rely on fitting.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import sparse

from .lattice import (ProtocolParams, Term, floquet_operator_k,
                      floquet_terms, step_operator_k, step_operator_k_derivative,
                      step_operator_real, step_terms)
from .noise import CoefficientSet, NoiseSpec, coefficients

SPARSE_DIM = 512
RECONSTRUCTION_TOL = 1e-10


class InvalidDensity(ValueError):
    pass


def pure_density(vec) -> np.ndarray:
    vec = np.asarray(vec, dtype=complex)
    vec = vec / np.linalg.norm(vec)
    return np.outer(vec, vec.conj())


def check_density(rho: np.ndarray, dim: int | None = None, herm_tol: float = 1e-9,
                  trace_tol: float = 1e-6, pos_tol: float = 1e-8) -> np.ndarray:
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise InvalidDensity(f"density matrix must be square, got shape {rho.shape}")
    if dim is not None and rho.shape[0] != dim:
        raise InvalidDensity(f"density matrix has dimension {rho.shape[0]}, expected {dim}")
    if np.max(np.abs(rho - rho.conj().T)) > herm_tol:
        raise InvalidDensity("density matrix is not Hermitian")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > trace_tol:
        raise InvalidDensity(f"density matrix trace is {tr}, expected 1")
    lo = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]
    if lo < -pos_tol:
        raise InvalidDensity(f"density matrix has negative eigenvalue {lo:.3e}")
    return rho


def _conj(u, rho, v=None):
    """u rho v^dagger (v defaults to u); works for dense or sparse u, v."""
    v = u if v is None else v
    left = u @ rho
    return (v @ left.conj().T).conj().T if sparse.issparse(v) else left @ v.conj().T


# -- decomposition containers -------------------------------------------------

@dataclass(frozen=True)
class BulkDecomposition:
    u_f: np.ndarray
    u_plus: np.ndarray
    u_minus: np.ndarray

    def reconstruct(self, tau: float) -> np.ndarray:
        s, c = np.sin(tau), np.cos(tau)
        return self.u_f - s * s * self.u_plus - s * c * self.u_minus


@dataclass(frozen=True)
class StepDecomposition:
    u0: np.ndarray
    uc: np.ndarray
    us: np.ndarray

    def reconstruct(self, tau: float) -> np.ndarray:
        return self.u0 + np.cos(tau) * self.uc + np.sin(tau) * self.us

    def terms(self) -> dict:
        return {(0, 0): self.u0, (1, 0): self.uc, (0, 1): self.us}


@dataclass(frozen=True)
class RealDecomposition:
    u0: np.ndarray
    uc: np.ndarray
    us: np.ndarray
    ucc: np.ndarray
    usc: np.ndarray
    uss: np.ndarray

    def terms(self) -> dict:
        return {(0, 0): self.u0, (1, 0): self.uc, (0, 1): self.us,
                (2, 0): self.ucc, (1, 1): self.usc, (0, 2): self.uss}

    def reconstruct(self, tau: float) -> np.ndarray:
        c, s = np.cos(tau), np.sin(tau)
        return sum(c**a * s**b * m for (a, b), m in self.terms().items())


# -- symbolic expansion ---------------------------------------------------------

def _linear_form(fn: str, theta: float) -> dict:
    # cos(t + tau) = cos t cos tau - sin t sin tau ; sin(t + tau) = sin t cos tau + cos t sin tau
    if fn == "cos":
        return {(1, 0): np.cos(theta), (0, 1): -np.sin(theta)}
    return {(1, 0): np.sin(theta), (0, 1): np.cos(theta)}


def expand_terms(terms: list[Term], dim: int, angles) -> dict:
    """Matrices multiplying each monomial cos^a(tau) sin^b(tau), keyed by (a, b)."""
    out: dict = {}
    for t in terms:
        poly = {(0, 0): complex(t.const)}
        for idx, fn in t.factors:
            nxt: dict = {}
            for (a, b), coef in poly.items():
                for (da, db), lin in _linear_form(fn, angles[idx]).items():
                    key = (a + da, b + db)
                    nxt[key] = nxt.get(key, 0.0) + coef * lin
            poly = nxt
        for key, coef in poly.items():
            mat = out.setdefault(key, np.zeros((dim, dim), dtype=complex))
            mat[t.row, t.col] += coef
    return out


def _check_reconstruction(dec, direct: Callable[[float], np.ndarray], what: str) -> None:
    rng = np.random.default_rng(20240611)
    for tau in rng.uniform(-np.pi, np.pi, 10):
        dev = float(np.max(np.abs(dec.reconstruct(tau) - direct(tau))))
        if dev > RECONSTRUCTION_TOL:
            raise RuntimeError(f"{what} reconstruction failed at tau={tau:.4f}: deviation {dev:.3e}")


def decompose_bulk(params: ProtocolParams, k: float) -> BulkDecomposition:
    th = params.theta1 + params.theta2
    s_minus = np.exp(-1j * k) + np.exp(-1j * params.phi)
    s_plus = np.exp(1j * k) + np.exp(1j * params.phi)
    u_minus = np.array([[s_minus * np.sin(th), -1j * s_minus * np.cos(th)],
                        [-1j * s_plus * np.cos(th), s_plus * np.sin(th)]])
    u_plus = np.array([[s_minus * np.cos(th), 1j * s_minus * np.sin(th)],
                       [1j * s_plus * np.sin(th), s_plus * np.cos(th)]])
    dec = BulkDecomposition(floquet_operator_k(params, k), u_plus, u_minus)
    _check_reconstruction(dec, lambda tau: floquet_operator_k(params, k, tau), "bulk")
    return dec


def decompose_step_k(params: ProtocolParams, which: int, k: float) -> StepDecomposition:
    theta, phase = params.step_angle(which), params.step_phase(which)
    uc = step_operator_k(theta, phase, k)
    return StepDecomposition(np.zeros((2, 2), complex), uc, step_operator_k_derivative(theta, phase, k))


def decompose_real_strobo(params: ProtocolParams) -> RealDecomposition:
    parts = expand_terms(floquet_terms(params), params.dim, (params.theta1, params.theta2))
    zero = np.zeros((params.dim, params.dim), dtype=complex)
    dec = RealDecomposition(*(parts.get(key, zero) for key in
                              [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]))
    # independent path: product of the separately built noisy single steps
    _check_reconstruction(
        dec,
        lambda tau: step_operator_real(params, 2, tau) @ step_operator_real(params, 1, tau),
        "real-space Floquet",
    )
    return dec


def decompose_step_real(params: ProtocolParams, which: int) -> StepDecomposition:
    parts = expand_terms(step_terms(params, which), params.dim, (params.step_angle(which),))
    zero = np.zeros((params.dim, params.dim), dtype=complex)
    dec = StepDecomposition(parts.get((0, 0), zero), parts.get((1, 0), zero), parts.get((0, 1), zero))
    _check_reconstruction(dec, lambda tau: step_operator_real(params, which, tau), f"step {which}")
    return dec


# -- master steps ---------------------------------------------------------------

def master_step_bulk_strobo(rho, dec: BulkDecomposition, coeffs: CoefficientSet,
                            validate: bool = True) -> np.ndarray:
    if validate:
        check_density(rho, 2)
    u, up, um = dec.u_f, dec.u_plus, dec.u_minus
    return (_conj(u, rho)
            - coeffs.gamma_plus * (_conj(up, rho, u) + _conj(u, rho, up))
            + coeffs.gamma_pp * _conj(up, rho)
            + coeffs.gamma_mm * _conj(um, rho))


def master_step_bulk_random(rho, dec: StepDecomposition, coeffs: CoefficientSet,
                            validate: bool = True) -> np.ndarray:
    if validate:
        check_density(rho, 2)
    return coeffs.cos2 * _conj(dec.uc, rho) + coeffs.sin2 * _conj(dec.us, rho)


def master_two_step_bulk_random(rho, dec1: StepDecomposition, dec2: StepDecomposition,
                                coeffs: CoefficientSet, validate: bool = True) -> np.ndarray:
    if validate:
        check_density(rho, 2)
    a, b = coeffs.cos2, coeffs.sin2
    u1, d1, u2, d2 = dec1.uc, dec1.us, dec2.uc, dec2.us
    return (a * a * _conj(u2 @ u1, rho)
            + b * b * _conj(d2 @ d1, rho)
            + a * b * (_conj(u2 @ d1, rho) + _conj(d2 @ u1, rho)))


def noise_weights(keys, coeffs: CoefficientSet) -> np.ndarray:
    """F_{mu nu} = E[f_mu f_nu] for monomial keys (a, b)."""
    n = len(keys)
    out = np.empty((n, n))
    for i, (a1, b1) in enumerate(keys):
        for j, (a2, b2) in enumerate(keys):
            out[i, j] = coeffs.moment(a1 + a2, b1 + b2)
    return out


class NoiseAveragedMap:
    """rho -> sum F_{mu nu} U_mu rho U_nu^dagger, applied in Kraus form.

    F is a Gram matrix of the monomials, hence positive semidefinite; its
    eigendecomposition turns the double sum into a sum of K rho K^dagger.
    """

    def __init__(self, terms: dict, coeffs: CoefficientSet, dim: int):
        keys = [key for key, mat in terms.items() if np.any(mat)]
        weights = noise_weights(keys, coeffs)
        evals, evecs = np.linalg.eigh(weights)
        scale = max(float(np.max(np.abs(evals))), 1.0) if keys else 1.0
        self.dim = dim
        self.weights = weights
        self.kraus = []
        for lam, vec in zip(evals, evecs.T):
            if lam <= 1e-15 * scale:
                continue
            k_op = np.sqrt(lam) * sum(v * terms[key] for v, key in zip(vec, keys))
            if dim > SPARSE_DIM:
                k_op = sparse.csr_matrix(k_op)
            self.kraus.append(k_op)

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        out = np.zeros((self.dim, self.dim), dtype=complex)
        for k_op in self.kraus:
            out += _conj(k_op, rho)
        return out


def master_step_real_strobo(rho, dec: RealDecomposition, coeffs: CoefficientSet,
                            validate: bool = True) -> np.ndarray:
    if validate:
        check_density(rho, dec.u0.shape[0])
    return NoiseAveragedMap(dec.terms(), coeffs, dec.u0.shape[0])(rho)


def master_step_real_random(rho, dec: StepDecomposition, coeffs: CoefficientSet,
                            validate: bool = True) -> np.ndarray:
    if validate:
        check_density(rho, dec.u0.shape[0])
    e_c = coeffs.moment(1, 0)
    return (_conj(dec.u0, rho)
            + e_c * (_conj(dec.u0, rho, dec.uc) + _conj(dec.uc, rho, dec.u0))
            + coeffs.cos2 * _conj(dec.uc, rho)
            + coeffs.sin2 * _conj(dec.us, rho))


# -- steppers and propagation ---------------------------------------------------

def make_stepper(params: ProtocolParams, spec: NoiseSpec, k: float | None = None,
                 coeffs: CoefficientSet | None = None) -> Callable[[np.ndarray], np.ndarray]:
    """One-period map for the bulk at momentum ``k`` or for the real-space lattice.

    Schedule ``none`` and ``stroboscopic`` average once per period; ``per_step``
    averages after each of the two steps.
    """
    coeffs = coeffs if coeffs is not None else coefficients(spec)
    random = spec.schedule == "per_step" and spec.sigma > 0
    if k is not None:
        if random:
            d1, d2 = decompose_step_k(params, 1, k), decompose_step_k(params, 2, k)
            return lambda rho: master_two_step_bulk_random(rho, d1, d2, coeffs, validate=False)
        dec = decompose_bulk(params, k)
        return lambda rho: master_step_bulk_strobo(rho, dec, coeffs, validate=False)
    if random:
        m1 = NoiseAveragedMap(decompose_step_real(params, 1).terms(), coeffs, params.dim)
        m2 = NoiseAveragedMap(decompose_step_real(params, 2).terms(), coeffs, params.dim)
        return lambda rho: m2(m1(rho))
    return NoiseAveragedMap(decompose_real_strobo(params).terms(), coeffs, params.dim)


def population(j: int):
    return lambda rho: float(rho[j, j].real)


def projection(vec):
    vec = np.asarray(vec, dtype=complex)
    return lambda rho: float(np.real(vec.conj() @ rho @ vec))


def coherence(i: int, j: int):
    return lambda rho: complex(rho[i, j])


def trace(rho) -> float:
    return float(np.trace(rho).real)


def diagonal(rho) -> np.ndarray:
    return np.real(np.diag(rho)).copy()


def propagate(rho0, stepper, n_periods: int, observables: dict,
              keep_states: bool = False) -> dict:
    """Observable series over periods 0..n_periods (index 0 is rho0)."""
    rho = check_density(np.asarray(rho0, dtype=complex))
    probe = stepper(rho)
    if probe.shape != rho.shape:
        raise ValueError(f"stepper maps {rho.shape} to {probe.shape}")
    series = {name: [fn(rho)] for name, fn in observables.items()}
    states = [rho] if keep_states else None
    for m in range(n_periods):
        rho = probe if m == 0 else stepper(rho)
        for name, fn in observables.items():
            series[name].append(fn(rho))
        if keep_states:
            states.append(rho)
    out = {name: np.array(vals) for name, vals in series.items()}
    if keep_states:
        out["states"] = np.array(states)
    return out
