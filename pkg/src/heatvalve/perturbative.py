"""Second-order solvers used to cross-check the hierarchy.

* Redfield-plus: the time-nonlocal second-order equation, integrated with one
  auxiliary operator per exponential term of C(t).
* Time-local Redfield: the same memory kernel with rho(t - s) replaced by its
  free evolution, so only the accumulated operator Lambda(t) is needed.
* Pauli master equation with golden-rule rates, and the closed-form
  golden-rule current of a two-level system between two baths.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .bath import bose, spectral_value, zero_frequency_rate
from .heom import RK4_STABILITY, InstabilityError, check_bounded, run_stepper
from .model import SpectrumError

ZERO_FREQUENCY = 1e-9


# -- Redfield-plus ------------------------------------------------------------

class RedfieldPlusState:
    """rho plus one auxiliary operator per term, in the unscaled convention."""

    def __init__(self, m, expansions, rho0=None):
        d = m.dim
        self.model = m
        self.h = m.h_s
        self.t = 0.0
        self.terms = []
        for e in expansions:
            q = m.coupling(e.bath_id)
            comm = self.h @ q - q @ self.h
            for dk, dbk, gk in zip(e.d, e.dbar, e.gamma):
                self.terms.append((e.bath_id, q, comm, dk, dbk, gk))
        self.rho = np.zeros((d, d), complex) if rho0 is None else np.array(rho0, complex)
        if rho0 is None:
            self.rho[0, 0] = 1.0
        self.aux = np.zeros((len(self.terms), d, d), complex)
        self.q_stack = np.array([t[1] for t in self.terms]).reshape(-1, d, d)
        self.d = np.array([t[3] for t in self.terms], complex)[:, None, None]
        self.dbar = np.array([t[4] for t in self.terms], complex)[:, None, None]
        self.gamma = np.array([t[5] for t in self.terms], complex)[:, None, None]

    def derivative(self, rho, aux):
        h, q = self.h, self.q_stack
        drho = -1j * (h @ rho - rho @ h) - 1j * np.sum(q @ aux - aux @ q, axis=0)
        daux = (-1j * (h @ aux - aux @ h) - self.gamma * aux
                - 1j * (self.d * (q @ rho) - self.dbar * (rho @ q)))
        return drho, daux

    def current(self, bath_id):
        total = 0.0 + 0.0j
        for k, (b, _, comm, *_rest) in enumerate(self.terms):
            if b == bath_id:
                total += np.trace(comm @ self.aux[k])
        return float(np.real(-1j * total))

    def max_rate(self):
        e = np.linalg.eigvalsh(self.h)
        g = max((abs(t[5]) for t in self.terms), default=0.0)
        return float(g + e[-1] - e[0])


def _rk4_pair(state, dt):
    r, a = state.rho, state.aux
    k1 = state.derivative(r, a)
    k2 = state.derivative(r + 0.5 * dt * k1[0], a + 0.5 * dt * k1[1])
    k3 = state.derivative(r + 0.5 * dt * k2[0], a + 0.5 * dt * k2[1])
    k4 = state.derivative(r + dt * k3[0], a + dt * k3[1])
    state.rho = r + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    state.aux = a + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    state.t += dt
    if not np.all(np.isfinite(state.aux)):
        raise InstabilityError(f"non-finite entries at t={state.t:.6g} ns")
    check_bounded(state.rho, state.t)


def _rho_observables(state):
    rho = state.rho
    return (np.real(np.diag(rho)).copy(), state.current("L"), state.current("R"), 0,
            float(np.real(np.trace(rho))), float(np.max(np.abs(rho - rho.conj().T))))


def _rp_observables(state):
    pop, il, ir, _, tr, herm = _rho_observables(state)
    return pop, il, ir, 1 + len(state.terms), tr, herm


def redfield_plus_propagate(m, expansions, cfg, rho0=None, observers=()):
    """Integrate the time-nonlocal second-order equation with classical RK4."""
    state = RedfieldPlusState(m, expansions, rho0)
    dt = cfg.step_size(state.max_rate(), RK4_STABILITY)
    return run_stepper(state, _rk4_pair, _rp_observables, cfg, dt, observers)


# -- time-local Redfield --------------------------------------------------------

class RedfieldState:
    """Time-local Redfield equation, integrated in the eigenbasis of H_s.

    Lambda_ij(t) = q_ij sum_k d_k (1 - exp(-(gamma_k + i w_ij) t)) / (gamma_k + i w_ij)
    with w_ij = E_i - E_j, and
    d rho/dt = -i[H, rho] - sum_alpha [q, Lambda rho - rho Lambda^dag].
    """

    def __init__(self, m, expansions, rho0=None):
        self.model = m
        self.t = 0.0
        self.energies, self.vectors = np.linalg.eigh(m.h_s)
        v = self.vectors
        w = self.energies[:, None] - self.energies[None, :]
        self.omega = w
        self.baths = []
        for e in expansions:
            q = v.conj().T @ m.coupling(e.bath_id) @ v
            rates = e.gamma[:, None, None] + 1j * w[None]
            self.baths.append((e.bath_id, q, np.asarray(e.d), rates,
                               self.energies[:, None] * q - q * self.energies[None, :]))
        rho = np.zeros((m.dim, m.dim), complex) if rho0 is None else np.array(rho0, complex)
        if rho0 is None:
            rho[0, 0] = 1.0
        self.rho = v.conj().T @ rho @ v

    def kernel(self, bath, t):
        _, q, d, rates, _ = bath
        return q * np.tensordot(d, -np.expm1(-rates * t) / rates, axes=1)

    def derivative(self, rho, t):
        out = -1j * self.omega * rho
        for bath in self.baths:
            q = bath[1]
            lam = self.kernel(bath, t)
            x = lam @ rho - rho @ lam.conj().T
            out -= q @ x - x @ q
        return out

    def current(self, bath_id):
        for bath in self.baths:
            if bath[0] == bath_id:
                lam = self.kernel(bath, self.t)
                x = lam @ self.rho - self.rho @ lam.conj().T
                return float(-np.real(np.trace(bath[4] @ x)))
        raise KeyError(bath_id)

    def rho_basis(self):
        v = self.vectors
        return v @ self.rho @ v.conj().T

    def max_rate(self):
        span = self.energies[-1] - self.energies[0]
        kick = sum(np.max(np.abs(self.kernel(b, 1e3))) * np.max(np.abs(b[1])) for b in self.baths)
        return float(span + 2 * kick)


def _rk4_redfield(state, dt):
    r, t = state.rho, state.t
    k1 = state.derivative(r, t)
    k2 = state.derivative(r + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = state.derivative(r + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = state.derivative(r + dt * k3, t + dt)
    state.rho = r + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    state.t += dt
    check_bounded(state.rho, state.t)


def _redfield_observables(state):
    rho = state.rho_basis()
    return (np.real(np.diag(rho)).copy(), state.current("L"), state.current("R"), 0,
            float(np.real(np.trace(rho))), float(np.max(np.abs(rho - rho.conj().T))))


def redfield_propagate(m, expansions, cfg, rho0=None, observers=()):
    """Integrate the time-local Redfield equation with classical RK4."""
    state = RedfieldState(m, expansions, rho0)
    dt = cfg.step_size(state.max_rate(), RK4_STABILITY)
    return run_stepper(state, _rk4_redfield, _redfield_observables, cfg, dt, observers)


# -- golden rule / Pauli --------------------------------------------------------

@dataclass(frozen=True)
class RateMatrix:
    """Golden-rule rates of one bath in the eigenbasis of H_s.

    ``gamma[j, k]`` is the rate of the transition k -> j; the diagonal is zero.
    """

    bath_id: str
    gamma: np.ndarray
    energies: np.ndarray
    vectors: np.ndarray
    beta: float

    @property
    def omega(self):
        """omega[j, k] = E_j - E_k."""
        return self.energies[:, None] - self.energies[None, :]


def thermal_weight(density, beta, w):
    """J(w) n_beta(w) for arbitrary real w, with the w -> 0 limit taken analytically."""
    w = np.asarray(w, dtype=float)
    out = np.empty_like(w)
    small = np.abs(w) < ZERO_FREQUENCY
    out[small] = zero_frequency_rate(density, beta)
    ws = w[~small]
    # n(w) = bose(beta w) - 1 = 1/(exp(beta w) - 1)
    out[~small] = spectral_value(density, ws) * (bose(beta * ws) - 1.0)
    return out


def _eigensystem(m):
    try:
        return np.linalg.eigh(m.h_s)
    except np.linalg.LinAlgError as exc:
        raise SpectrumError("eigensolver did not converge") from exc


def fgr_rates(m, baths):
    """Golden-rule rate matrix per bath: Gamma_jk = 2 |q_jk|^2 J(w_jk) n(w_jk)."""
    e, v = _eigensystem(m)
    w = e[:, None] - e[None, :]
    out = {}
    for b in baths:
        q = v.conj().T @ m.coupling(b.bath_id) @ v
        g = 2.0 * np.abs(q) ** 2 * thermal_weight(b.density, b.beta, w)
        np.fill_diagonal(g, 0.0)
        out[b.bath_id] = RateMatrix(b.bath_id, g, e, v, b.beta)
    return out


def pauli_generator(rates):
    """Combined generator G with dP/dt = G P; columns sum to zero."""
    mats = list(rates.values()) if isinstance(rates, dict) else list(rates)
    g = sum(r.gamma for r in mats)
    return g - np.diag(g.sum(axis=0))


class NullSpaceError(ArithmeticError):
    """The Pauli generator does not have a one-dimensional null space."""


def pauli_steady_state(rates, rtol=1e-10):
    """Normalized null vector of the summed Pauli generator."""
    gen = pauli_generator(rates)
    n = gen.shape[0]
    # irreducibility: every state reachable from every other through nonzero rates
    reach = (np.abs(gen) > 0) | np.eye(n, dtype=bool)
    closure = np.linalg.matrix_power(reach.astype(int), max(n - 1, 1)) > 0
    if not closure.all():
        warnings.warn("Pauli generator is reducible; steady state may not be unique",
                      RuntimeWarning, stacklevel=2)
    s, vecs = linalg.svd(gen)[1:]
    scale = max(s[0], 1e-300)
    if n > 1 and s[-2] < rtol * scale:
        raise NullSpaceError("steady state is not unique (degenerate null space)")
    p = np.real(vecs[-1])
    p = p / p.sum()
    if np.min(p) < -1e-12 * max(1.0, np.max(np.abs(p))):
        raise NullSpaceError("steady state has significantly negative populations")
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def fgr_heat_current(populations, rates):
    """I_alpha = sum_jk P_k w_jk Gamma_jk;alpha for each bath, positive into the system."""
    p = np.asarray(populations, float)
    return {bid: float(np.sum(r.omega * r.gamma * p[None, :])) for bid, r in rates.items()}


def eigen_populations_to_density(rates, populations):
    """Diagonal state in the energy eigenbasis, expressed in the model basis."""
    v = next(iter(rates.values())).vectors
    return (v * populations) @ v.conj().T


def spin_boson_fgr_current(omega_q, j_l, j_r, beta_l, beta_r):
    """Golden-rule heat current through a two-level system between two baths.

    ``j_l`` and ``j_r`` are the effective spectral densities evaluated at
    ``omega_q``; ``beta_l``, ``beta_r`` are inverse temperatures in ns.
    Returns zero when both densities vanish.
    """
    if omega_q <= 0:
        raise ValueError("omega_q must be positive")
    n_l = 1.0 / math.expm1(beta_l * omega_q)
    n_r = 1.0 / math.expm1(beta_r * omega_q)
    den = j_l * (1 + 2 * n_l) + j_r * (1 + 2 * n_r)
    if den == 0:
        return 0.0
    return omega_q * j_l * j_r * (n_l - n_r) / den
