"""Brute-force reference: the system coupled to finitely many harmonic modes.

Each bath is cut into modes of equal reorganization weight.  A thermal mode
at frequency w with coupling g is, for the reduced dynamics, equivalent to two
modes in their vacuum: one at +w with coupling g sqrt(n + 1) and one at -w
with coupling g sqrt(n).  The thermal mixture therefore becomes a single pure
state, which is propagated exactly in the space of system states times bath
configurations with at most ``max_excitations`` quanta in total.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np
from scipy import integrate, sparse
from scipy.sparse import linalg as splinalg

from .bath import spectral_value

DIMENSION_CAP = 4096


class DimensionCapError(MemoryError):
    """The truncated system-bath space exceeds the configured cap."""


@dataclass(frozen=True)
class DiscretizedBath:
    """Finite set of modes; ``c`` couples to the mode coordinate x_i.

    In ladder operators the coupling reads g_i (b_i + b_i^dag) with
    g_i = c_i / sqrt(2 w_i).
    """

    bath_id: str
    omega: np.ndarray
    c: np.ndarray
    temperature: float
    fock_cutoff: int = 2

    def __post_init__(self):
        if self.fock_cutoff < 2:
            raise ValueError("fock_cutoff must be at least 2")
        if len(self.omega) != len(self.c) or len(self.omega) == 0:
            raise ValueError("need matching, nonempty mode arrays")

    @property
    def g(self):
        return self.c / np.sqrt(2.0 * self.omega)

    def reorganization(self):
        """sum_i c_i^2 / w_i^2, the discrete counterpart of the counter-term weight."""
        return float(np.sum(self.c**2 / self.omega**2))


GRID_POINTS = 200_001


def discretize(bath, M, w_max):
    """Cut ``bath.density`` on (0, w_max] into M modes of equal weight in J(w)/w.

    Bin edges split the integral of J/w evenly.  Each mode sits at the
    weight midpoint of its bin and carries c_i^2 = (2/pi) w_i int_bin J dw,
    so that (pi/2) sum_i c_i^2/w_i delta(w - w_i) reproduces J bin by bin.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    if not w_max > 0:
        raise ValueError("w_max must be positive")
    grid = np.linspace(0.0, w_max, GRID_POINTS)[1:]
    j = spectral_value(bath.density, grid)
    cum = integrate.cumulative_trapezoid(j / grid, grid, initial=0.0)
    levels = cum[-1] * np.arange(2 * M + 1) / (2 * M)
    marks = np.interp(levels, cum, grid)
    marks[0], marks[-1] = 0.0, w_max
    edges, centres = marks[::2], marks[1::2]
    weight = np.array([integrate.quad(lambda w: spectral_value(bath.density, w), a, b, limit=200)[0]
                       for a, b in zip(edges[:-1], edges[1:])])
    c = np.sqrt(2.0 / np.pi * centres * weight)
    out = DiscretizedBath(bath.bath_id, centres, c, bath.temperature)
    object.__setattr__(out, "edges", edges)
    return out


def thermofield_modes(db):
    """Vacuum-equivalent (frequency, coupling) pairs for a thermal discretized bath."""
    from .units import beta_from_mk

    beta = beta_from_mk(db.temperature)
    n = 1.0 / np.expm1(beta * db.omega)
    w = np.concatenate([db.omega, -db.omega])
    g = np.concatenate([db.g * np.sqrt(n + 1.0), db.g * np.sqrt(n)])
    return w, g


def _bath_space(n_modes, max_excitations):
    configs = []
    for level in range(max_excitations + 1):
        configs.extend(combinations_with_replacement(range(n_modes), level))
    return configs, {c: i for i, c in enumerate(configs)}


def _creation_ops(configs, position, n_modes):
    """Sparse b_j^dag for every mode, restricted to the truncated configuration set."""
    rows = [[] for _ in range(n_modes)]
    for i, conf in enumerate(configs):
        for j in range(n_modes):
            new = tuple(sorted(conf + (j,)))
            k = position.get(new)
            if k is not None:
                rows[j].append((k, i, np.sqrt(conf.count(j) + 1.0)))
    n = len(configs)
    ops = []
    for r in rows:
        if r:
            k, i, v = zip(*r)
            ops.append(sparse.csr_matrix((v, (k, i)), shape=(n, n)))
        else:
            ops.append(sparse.csr_matrix((n, n)))
    return ops


@dataclass
class OracleTrajectory:
    times: np.ndarray
    populations: np.ndarray
    i_l: np.ndarray
    i_r: np.ndarray
    energy: np.ndarray
    norm: np.ndarray
    dimension: int


def exact_propagate(m, baths, t_final, dt, rho0=None, max_excitations=1, dimension_cap=DIMENSION_CAP):
    """Exact evolution of the system plus discretized baths.

    Returns basis populations of the reduced state, the heat current out of
    each bath (-i <[H_s, q_alpha] X_alpha>, the rate at which bath alpha and its
    coupling term lose energy), the total energy and the norm on a uniform
    time grid.
    """
    d = m.dim
    modes, owner = [], []
    for b in baths:
        w, g = thermofield_modes(b)
        modes.append((w, g))
        owner += [b.bath_id] * len(w)
    w_all = np.concatenate([x[0] for x in modes])
    g_all = np.concatenate([x[1] for x in modes])
    owner = np.array(owner)
    n_modes = len(w_all)
    n_conf = sum(_count_multisets(n_modes, k) for k in range(max_excitations + 1))
    if d * n_conf > dimension_cap:
        raise DimensionCapError(f"dimension {d * n_conf} exceeds cap {dimension_cap}")

    configs, position = _bath_space(n_modes, max_excitations)
    create = _creation_ops(configs, position, n_modes)
    h_b = sparse.diags([sum(w_all[j] for j in conf) for conf in configs])
    eye_b = sparse.identity(len(configs), format="csr")
    x_ops = {}
    for b in baths:
        x = sparse.csr_matrix((len(configs), len(configs)), dtype=complex)
        for j in np.flatnonzero(owner == b.bath_id):
            x = x + g_all[j] * (create[j] + create[j].T)
        x_ops[b.bath_id] = x
    h = sparse.kron(sparse.csr_matrix(m.h_s), eye_b) + sparse.kron(sparse.identity(d), h_b)
    for bid, x in x_ops.items():
        h = h + sparse.kron(sparse.csr_matrix(m.coupling(bid)), x)
    h = sparse.csr_matrix(h)

    if rho0 is None:
        rho0 = np.zeros((d, d), complex)
        rho0[0, 0] = 1.0
    p0, vecs = np.linalg.eigh(np.asarray(rho0, complex))
    n_steps = int(round(t_final / dt))
    times = np.linspace(0.0, n_steps * dt, n_steps + 1)
    pops = np.zeros((len(times), d))
    currents = {bid: np.zeros(len(times)) for bid in x_ops}
    energy = np.zeros(len(times))
    norm = np.zeros(len(times))
    comms = {bid: m.h_s @ m.coupling(bid) - m.coupling(bid) @ m.h_s for bid in x_ops}
    for weight, v in zip(p0, vecs.T):
        if weight < 1e-14:
            continue
        psi0 = np.zeros((d, len(configs)), complex)
        psi0[:, 0] = v
        traj = splinalg.expm_multiply(-1j * h, psi0.reshape(-1), start=0.0, stop=times[-1],
                                      num=len(times), endpoint=True)
        for i, psi in enumerate(traj):
            mat = psi.reshape(d, len(configs))
            pops[i] += weight * np.real(np.einsum("ij,ij->i", mat, mat.conj()))
            for bid, x in x_ops.items():
                val = np.vdot(mat, comms[bid] @ (x @ mat.T).T)
                currents[bid][i] += weight * float(np.real(-1j * val))
            energy[i] += weight * float(np.real(np.vdot(psi, h @ psi)))
            norm[i] += weight * float(np.real(np.vdot(psi, psi)))
    return OracleTrajectory(times, pops, currents.get("L", np.zeros_like(times)),
                            currents.get("R", np.zeros_like(times)), energy, norm, d * len(configs))


def _count_multisets(n, k):
    from math import comb

    return comb(n + k - 1, k)
