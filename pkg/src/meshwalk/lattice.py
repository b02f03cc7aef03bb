"""Noiseless operators of the two-step mesh-lattice walk.

Momentum-space operators use the symmetric gauge in which a single step
carries e^{-ik/2} on the alpha row and e^{+ik/2} on the beta row.  Real-space
operators act on the interleaved basis (alpha_1, beta_1, alpha_2, beta_2, ...)
where site n is one unit cell of the two-step protocol.  In that basis the
odd step is a cell-local coupler and the even step couples alpha'_{n-1},
beta'_n into alpha_n (and alpha'_n, beta'_{n+1} into beta_n).  At an open
edge the missing partner is replaced by a fully crossing, noise-free
coupler, which reproduces the corner blocks of the composed Floquet matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

TWO_PI = 2.0 * np.pi
UNITARY_TOL = 1e-12


def wrap_angle(x):
    """Fold angles into (-pi, pi]."""
    x = np.asarray(x, dtype=float)
    out = np.pi - np.mod(np.pi - x, TWO_PI)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ProtocolParams:
    theta1: float
    theta2: float
    phi: float
    n_sites: int = 2
    boundary: str = "open"

    def __post_init__(self):
        for name in ("theta1", "theta2", "phi"):
            val = float(getattr(self, name))
            if not np.isfinite(val):
                raise ValueError(f"{name} must be finite, got {val}")
            object.__setattr__(self, name, wrap_angle(val))
        if self.boundary not in ("open", "periodic"):
            raise ValueError(f"boundary must be 'open' or 'periodic', got {self.boundary!r}")
        if int(self.n_sites) != self.n_sites or self.n_sites < 1:
            raise ValueError(f"n_sites must be a positive integer, got {self.n_sites}")
        object.__setattr__(self, "n_sites", int(self.n_sites))

    @property
    def period(self) -> int:
        return 2

    @property
    def dim(self) -> int:
        return 2 * self.n_sites

    def replace(self, **changes) -> "ProtocolParams":
        data = dict(theta1=self.theta1, theta2=self.theta2, phi=self.phi,
                    n_sites=self.n_sites, boundary=self.boundary)
        data.update(changes)
        return ProtocolParams(**data)

    def step_angle(self, which: int) -> float:
        return self.theta1 if which == 1 else self.theta2

    def step_phase(self, which: int) -> float:
        return self.phi if which == 1 else -self.phi


class BandPair(NamedTuple):
    e_minus: float
    e_plus: float
    k: float


def is_unitary(u: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    eye = np.eye(u.shape[0])
    return float(np.max(np.abs(u.conj().T @ u - eye))) < tol


# -- momentum space ---------------------------------------------------------

def step_operator_k(theta: float, phi_m: float, k: float) -> np.ndarray:
    left = np.exp(1j * (phi_m - k / 2))
    right = np.exp(1j * k / 2)
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c * left, 1j * s * left],
                     [1j * s * right, c * right]])


def step_operator_k_derivative(theta: float, phi_m: float, k: float) -> np.ndarray:
    """d/dtheta of :func:`step_operator_k`."""
    return step_operator_k(theta + np.pi / 2, phi_m, k)


def floquet_operator_k(params: ProtocolParams, k: float, tau: float = 0.0) -> np.ndarray:
    """Two-step Bloch operator U_2 U_1, both angles shifted by ``tau``."""
    u1 = step_operator_k(params.theta1 + tau, params.phi, k)
    u2 = step_operator_k(params.theta2 + tau, -params.phi, k)
    return u2 @ u1


def quasienergies(params: ProtocolParams, k: float) -> BandPair:
    arg = (np.cos(params.theta1) * np.cos(params.theta2) * np.cos(k)
           - np.sin(params.theta1) * np.sin(params.theta2) * np.cos(params.phi))
    if abs(arg) > 1.0 + 1e-12:
        raise ValueError(f"arccos argument {arg} outside [-1, 1]")
    e = float(np.arccos(np.clip(arg, -1.0, 1.0)))
    return BandPair(-e, e, float(k))


def eigenphases(u: np.ndarray) -> np.ndarray:
    return np.angle(np.linalg.eigvals(u))


def dfs_momenta(phi: float) -> list[float]:
    """Momenta k = phi + (2p+1)pi, folded into one Brillouin zone."""
    return [wrap_angle(phi + np.pi)]


# -- real space ---------------------------------------------------------------

class Term(NamedTuple):
    """One matrix entry: ``const * prod(f(theta_i))`` over ``factors``.

    ``factors`` holds (angle index, "cos" | "sin") pairs; angle index 0 is
    theta1 and 1 is theta2.
    """
    row: int
    col: int
    const: complex
    factors: tuple


def _block_terms(row_cell, col_cell, table):
    out = []
    for a in range(2):
        for b in range(2):
            entry = table[a][b]
            if entry is None:
                continue
            const, factors = entry
            out.append(Term(2 * row_cell + a, 2 * col_cell + b, const, factors))
    return out


def floquet_terms(params: ProtocolParams) -> list[Term]:
    """Symbolic entries of the composed real-space Floquet operator."""
    n = params.n_sites
    if params.boundary == "open" and n < 2:
        raise ValueError("real-space operators need n_sites >= 2")
    em, ep = np.exp(-1j * params.phi), np.exp(1j * params.phi)
    C1, S1, C2, S2 = (0, "cos"), (0, "sin"), (1, "cos"), (1, "sin")
    u0 = [[(-em, (S1, S2)), (1j * em, (C1, S2))],
          [(1j * ep, (C1, S2)), (-ep, (S1, S2))]]
    u_plus = [[None, None],
              [(1j, (S1, C2)), (1.0, (C1, C2))]]
    u_minus = [[(1.0, (C1, C2)), (1j, (S1, C2))],
               [None, None]]
    u_left = [[(-em, (S1,)), (1j * em, (C1,))],
              [(1j * ep, (C1, S2)), (-ep, (S1, S2))]]
    u_right = [[(-em, (S1, S2)), (1j * em, (C1, S2))],
               [(1j * ep, (C1,)), (-ep, (S1,))]]

    terms = []
    for cell in range(n):
        if params.boundary == "open" and cell == 0:
            diag = u_left
        elif params.boundary == "open" and cell == n - 1:
            diag = u_right
        else:
            diag = u0
        terms += _block_terms(cell, cell, diag)
        if cell + 1 < n or params.boundary == "periodic":
            terms += _block_terms(cell, (cell + 1) % n, u_plus)
        if cell > 0 or params.boundary == "periodic":
            terms += _block_terms(cell, (cell - 1) % n, u_minus)
    return terms


def step_terms(params: ProtocolParams, which: int) -> list[Term]:
    """Symbolic entries of the single-step real-space operator (1 or 2).

    Step 1 maps cell amplitudes onto intermediate amplitudes
    (alpha'_n, beta'_n) with a local coupler.  Step 2 recombines
    alpha'_{n-1} with beta'_n and alpha'_n with beta'_{n+1}.
    """
    if which not in (1, 2):
        raise ValueError(f"which must be 1 or 2, got {which}")
    n = params.n_sites
    open_ = params.boundary == "open"
    if open_ and n < 2:
        raise ValueError("real-space operators need n_sites >= 2")
    ph = np.exp(1j * params.step_phase(which))
    C, S = (0, "cos"), (0, "sin")
    terms: list[Term] = []
    if which == 1:
        for c in range(n):
            a, b = 2 * c, 2 * c + 1
            terms += [Term(a, a, ph, (C,)), Term(a, b, 1j * ph, (S,)),
                      Term(b, a, 1j, (S,)), Term(b, b, 1.0, (C,))]
        return terms
    for c in range(n):
        a, b = 2 * c, 2 * c + 1
        # alpha_c <- e^{i phi_2} (cos alpha'_{c-1} + i sin beta'_c)
        if open_ and c == 0:
            terms.append(Term(a, b, 1j * ph, ()))
        else:
            terms += [Term(a, 2 * ((c - 1) % n), ph, (C,)),
                      Term(a, b, 1j * ph, (S,))]
        # beta_c <- i sin alpha'_c + cos beta'_{c+1}
        if open_ and c == n - 1:
            terms.append(Term(b, a, 1j, ()))
        else:
            terms += [Term(b, a, 1j, (S,)),
                      Term(b, 2 * ((c + 1) % n) + 1, 1.0, (C,))]
    return terms


def evaluate_terms(terms: list[Term], dim: int, angles, tau: float = 0.0) -> np.ndarray:
    """Dense matrix of ``terms`` with every angle shifted by ``tau``."""
    shifted = [a + tau for a in angles]
    out = np.zeros((dim, dim), dtype=complex)
    for t in terms:
        val = complex(t.const)
        for idx, fn in t.factors:
            val *= np.cos(shifted[idx]) if fn == "cos" else np.sin(shifted[idx])
        out[t.row, t.col] += val
    return out


def floquet_operator_real(params: ProtocolParams, tau: float = 0.0) -> np.ndarray:
    return evaluate_terms(floquet_terms(params), params.dim,
                          (params.theta1, params.theta2), tau)


def step_operator_real(params: ProtocolParams, which: int, tau: float = 0.0) -> np.ndarray:
    return evaluate_terms(step_terms(params, which), params.dim,
                          (params.step_angle(which),), tau)


def step_operators_real(params: ProtocolParams) -> tuple[np.ndarray, np.ndarray]:
    u1 = step_operator_real(params, 1)
    u2 = step_operator_real(params, 2)
    dev = float(np.max(np.abs(u2 @ u1 - floquet_operator_real(params))))
    if dev > 1e-10:
        raise RuntimeError(f"step composition deviates from Floquet blocks by {dev:.3e}")
    return u1, u2


def bloch_basis(n_sites: int) -> np.ndarray:
    """Unitary whose column (2j + s) is the plane wave k_j on sublattice s.

    Grid momenta are k_j = 2 pi j / N folded into (-pi, pi].
    """
    n = np.arange(n_sites)
    ks = momentum_grid(n_sites)
    waves = np.exp(1j * np.outer(n, ks)) / np.sqrt(n_sites)
    return np.kron(waves, np.eye(2))


def momentum_grid(n_sites: int) -> np.ndarray:
    return wrap_angle(TWO_PI * np.arange(n_sites) / n_sites)
