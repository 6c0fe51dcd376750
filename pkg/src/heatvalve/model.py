"""Truncated-basis Hamiltonians of the resonator-transmon-resonator device.

States are labelled by occupation triples ``(n_L, n_q, n_R)``.  Operators are
first built on a rectangular product space one level larger than the basis
needs and then projected, so that quadratic terms such as the counter term
(a + a^dag)^2 get the matrix elements of the untruncated operator.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

HERMITIAN_ATOL = 1e-12


class TransmonRegimeWarning(UserWarning):
    """E_J(phi) dropped below E_c; the two-level transmon picture is unreliable."""


class SpectrumError(ArithmeticError):
    """The Hermitian eigensolver did not converge."""


@dataclass(frozen=True)
class CircuitParams:
    """Device constants, all frequencies angular in rad/ns.

    ``ejd0`` and ``ec`` are 2*pi times the Josephson and charging energies in
    GHz; resonator frequencies and couplings are taken as already angular.
    """

    ejd0: float = 2 * np.pi * 40.0
    ec: float = 2 * np.pi * 0.15
    d: float = 0.45
    omega_l: float = 33.3
    omega_r: float = 33.3
    g_l: float = 0.55
    g_r: float = 0.55
    g_tilde: float = 0.0
    phi_over_phi0: float = 0.0

    def __post_init__(self):
        if self.ejd0 <= 0 or self.ec <= 0:
            raise ValueError("ejd0 and ec must be positive")
        if not 0.0 <= self.d <= 1.0:
            raise ValueError(f"asymmetry d must lie in [0, 1], got {self.d}")
        if self.omega_l <= 0 or self.omega_r <= 0:
            raise ValueError("resonator frequencies must be positive")
        if not np.isfinite(self.phi_over_phi0):
            raise ValueError("flux must be finite")

    def replace(self, **changes):
        return replace(self, **changes)

    def mirrored(self):
        """Same device with left and right exchanged."""
        return replace(self, omega_l=self.omega_r, omega_r=self.omega_l,
                       g_l=self.g_r, g_r=self.g_l)


def josephson_energy(p):
    """Flux-dependent Josephson energy of the asymmetric SQUID.

    E_J0 |cos x| sqrt(1 + d^2 tan^2 x) is evaluated as E_J0 sqrt(cos^2 x + d^2 sin^2 x),
    which is the same function without the removable singularity at x = pi/2.
    """
    x = np.pi * p.phi_over_phi0
    return p.ejd0 * np.sqrt(np.cos(x) ** 2 + p.d**2 * np.sin(x) ** 2)


def transmon_frequency(p):
    """Qubit frequency sqrt(8 E_J E_c) - E_c in rad/ns.

    Warns with :class:`TransmonRegimeWarning` when E_J < E_c but still returns
    the value.
    """
    ej = josephson_energy(p)
    if ej < p.ec:
        warnings.warn(
            f"E_J={ej:.4g} below E_c={p.ec:.4g} at phi/phi0={p.phi_over_phi0}",
            TransmonRegimeWarning, stacklevel=2,
        )
    return float(np.sqrt(8.0 * ej * p.ec) - p.ec)


# -- basis -------------------------------------------------------------------

DEFAULT_LABELS = ((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 0), (1, 0, 1), (2, 0, 0))


@dataclass(frozen=True)
class HilbertBasis:
    labels: tuple

    def __post_init__(self):
        labels = tuple(tuple(int(n) for n in lab) for lab in self.labels)
        object.__setattr__(self, "labels", labels)
        if len(set(labels)) != len(labels):
            raise ValueError("basis labels must be unique")
        for lab in labels:
            if len(lab) != 3 or min(lab) < 0 or lab[1] > 1:
                raise ValueError(f"invalid occupation triple {lab}")

    @property
    def dimension(self):
        return len(self.labels)

    def index(self, label):
        return self.labels.index(tuple(label))

    @classmethod
    def default(cls):
        return cls(DEFAULT_LABELS)

    @classmethod
    def truncated(cls, nl_max, nr_max, max_excitations=None):
        """All states with n_L <= nl_max, n_R <= nr_max and an optional cap on n_L + n_q + n_R.

        The seven default states come first, in their usual order.
        """
        extra = []
        for nl, nq, nr in product(range(nl_max + 1), range(2), range(nr_max + 1)):
            if max_excitations is not None and nl + nq + nr > max_excitations:
                continue
            if (nl, nq, nr) not in DEFAULT_LABELS:
                extra.append((nl, nq, nr))
        extra.sort(key=lambda s: (sum(s), s[::-1]))
        return cls(DEFAULT_LABELS + tuple(extra))


def _ladder(n):
    return np.diag(np.sqrt(np.arange(1, n)), 1)


class _ProductSpace:
    """Rectangular (n_L, n_q, n_R) space that contains the basis plus one level."""

    def __init__(self, basis):
        self.nl = max(l[0] for l in basis.labels) + 2
        self.nr = max(l[2] for l in basis.labels) + 2
        dims = (self.nl, 2, self.nr)
        eye = [np.eye(n) for n in dims]
        a = [_ladder(n) for n in dims]
        self.a_l = np.kron(np.kron(a[0], eye[1]), eye[2])
        self.sm = np.kron(np.kron(eye[0], a[1]), eye[2])
        self.a_r = np.kron(np.kron(eye[0], eye[1]), a[2])
        flat = [np.ravel_multi_index(lab, dims) for lab in basis.labels]
        self.projector = np.zeros((self.a_l.shape[0], basis.dimension))
        self.projector[flat, np.arange(basis.dimension)] = 1.0

    def project(self, op):
        return self.projector.T @ op @ self.projector


@dataclass(frozen=True)
class SystemModel:
    """System Hamiltonian plus one coupling operator per bath."""

    basis: HilbertBasis
    h_s: np.ndarray
    coupling_ops: tuple
    includes_counter_term: bool = False
    kind: str = "sequential"
    params: CircuitParams | None = field(default=None, compare=False)

    def __post_init__(self):
        check_hermitian(self.h_s, "h_s")
        for bath_id, op in self.coupling_ops:
            if op.shape != self.h_s.shape:
                raise ValueError(f"coupling operator of bath {bath_id} has wrong shape")
            check_hermitian(op, f"coupling operator {bath_id}")

    @property
    def dim(self):
        return self.h_s.shape[0]

    @property
    def bath_ids(self):
        return tuple(b for b, _ in self.coupling_ops)

    def coupling(self, bath_id):
        for b, op in self.coupling_ops:
            if b == bath_id:
                return op
        raise KeyError(bath_id)


def check_hermitian(op, name="operator", atol=HERMITIAN_ATOL):
    defect = np.max(np.abs(op - op.conj().T)) if op.size else 0.0
    if defect > atol:
        raise ValueError(f"{name} is not Hermitian (defect {defect:.3g})")


def _bath_mu(baths):
    mus = {"L": 0.0, "R": 0.0}
    for b in baths or ():
        mus[b.bath_id] = b.mu
    return mus


def _resonator_model(p, basis, baths, counter_term, g_tilde, kind):
    basis = basis or HilbertBasis.default()
    missing = [lab for lab in DEFAULT_LABELS if lab not in basis.labels]
    if missing:
        raise ValueError(f"basis lacks default states {missing}")
    if baths is not None and sorted(b.bath_id for b in baths) != ["L", "R"]:
        raise ValueError("resonator models need exactly one bath per side (L and R)")
    sp = _ProductSpace(basis)
    q_l = sp.a_l + sp.a_l.T
    q_r = sp.a_r + sp.a_r.T
    sx = sp.sm + sp.sm.T
    wq = transmon_frequency(p)
    h = (p.omega_l * sp.a_l.T @ sp.a_l + wq * sp.sm.T @ sp.sm + p.omega_r * sp.a_r.T @ sp.a_r
         + p.g_l * q_l @ sx + p.g_r * q_r @ sx)
    if g_tilde:
        h = h + g_tilde * q_l @ q_r
    if counter_term:
        mus = _bath_mu(baths)
        h = h + 0.5 * mus["L"] * q_l @ q_l + 0.5 * mus["R"] * q_r @ q_r
    h_s = sp.project(h).astype(complex)
    ops = (("L", sp.project(q_l).astype(complex)), ("R", sp.project(q_r).astype(complex)))
    return SystemModel(basis, h_s, ops, bool(counter_term), kind, p)


def build_sequential(p, basis=None, baths=None, counter_term=True):
    """Resonator-transmon-resonator chain without direct resonator coupling.

    Counter terms mu_alpha (a + a^dag)^2 / 2 are added when ``counter_term`` is
    set and ``baths`` supply the weights.
    """
    return _resonator_model(p, basis, baths, counter_term, 0.0, "sequential")


def build_beam_splitter(p, basis=None, baths=None, counter_term=True):
    """Sequential chain plus g_tilde (a_L^dag + a_L)(a_R^dag + a_R)."""
    return _resonator_model(p, basis, baths, counter_term, p.g_tilde, "beam_splitter")


def build_model(kind, p, basis=None, baths=None, counter_term=None):
    if kind == "spin_boson":
        return build_spin_boson(p, counter_term=bool(counter_term))
    if counter_term is None:
        counter_term = True
    if kind == "sequential":
        return build_sequential(p, basis, baths, counter_term)
    if kind == "beam_splitter":
        return build_beam_splitter(p, basis, baths, counter_term)
    raise ValueError(f"unknown model kind {kind!r}")


SPIN_BOSON_LABELS = ((0, 0, 0), (0, 1, 0))


def build_spin_boson(p, baths=None, counter_term=False):
    """Transmon alone, coupled through sigma_x to the two mapped reservoirs.

    The mapped reservoirs carry the effective Lorentzian density with
    ``kappa = 2 g^2 / omega^3`` (see :func:`spin_boson_densities`).
    """
    wq = transmon_frequency(p)
    h = np.diag([0.0, wq]).astype(complex)
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    if counter_term and baths:
        h = h + sum(0.5 * b.mu for b in baths) * sx @ sx
    return SystemModel(HilbertBasis(SPIN_BOSON_LABELS), h, (("L", sx.copy()), ("R", sx.copy())),
                       bool(counter_term), "spin_boson", p)


def spin_boson_kappa(g, omega):
    return 2.0 * g**2 / omega**3


def spin_boson_densities(p, eta_l, eta_r):
    """Effective Lorentzian densities seen by the qubit for damping rates eta_l, eta_r."""
    from .bath import EffectiveLorentz

    return (EffectiveLorentz.from_resonator(p.g_l, eta_l, p.omega_l),
            EffectiveLorentz.from_resonator(p.g_r, eta_r, p.omega_r))


def energy_spectrum(m):
    """Ascending eigenvalues of h_s relative to the ground state."""
    try:
        e = np.linalg.eigvalsh(m.h_s)
    except np.linalg.LinAlgError as exc:
        raise SpectrumError("eigensolver did not converge") from exc
    return e - e[0]


@dataclass(frozen=True)
class DispersiveParameters:
    delta: float
    qubit_shift: float
    resonator_pull: float
    g_eff: float


def dispersive_effective_hamiltonian(p, sigma_z_expectation):
    """Second-order dispersive parameters for a symmetric device.

    Returns the qubit shift 2 g^2 / Delta, the resonator pull g^2 / Delta and
    the effective resonator-resonator coupling g_tilde + (g^2/Delta) <sigma_z>.
    """
    if not (np.isclose(p.g_l, p.g_r) and np.isclose(p.omega_l, p.omega_r)):
        raise ValueError("dispersive parameters need g_L = g_R and omega_L = omega_R")
    delta = transmon_frequency(p) - p.omega_l
    if abs(delta) < 1e-12:
        raise ValueError("dispersive approximation invalid at resonance (Delta = 0)")
    g = p.g_l
    pull = g**2 / delta
    return DispersiveParameters(delta, 2.0 * pull, pull, p.g_tilde + pull * sigma_z_expectation)
