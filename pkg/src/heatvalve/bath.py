"""Spectral densities, bath correlation functions and their exponential expansions.

All supported densities are odd rational functions of the frequency (the
Lorentz-class ``n = 2`` member through a rational surrogate, see
:class:`LorentzClass`).  The correlation function

    C(t) = (1/pi) \\int dw J(w) e^{-iwt} / (1 - e^{-beta w})

is then a sum over the poles of J in the lower half plane plus the poles of
the Bose function.  The latter are either the Matsubara frequencies or the
poles of a [N-1/N] Pade approximant of the Bose function.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import integrate, linalg

from .units import beta_from_mk

MATSUBARA_CAP = 2000
MATSUBARA_RTOL = 1e-8


def bose(x):
    """Bose function 1 / (1 - exp(-x)) for complex or real arguments."""
    return 0.5 + 0.5 / np.tanh(0.5 * np.asarray(x))


# -- spectral densities ------------------------------------------------------


class _RationalDensity:
    """Shared machinery for J(w) = w * P(w^2) / D(w) with four complex poles."""

    def analytic(self, z):
        raise NotImplementedError

    def poles(self):
        """Poles of J in the lower half plane together with their residues."""
        raise NotImplementedError

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        return np.real(self.analytic(w))

    def value(self, w):
        return self(w)


def _lower_residues(numerator, roots):
    """Residues of numerator(z) / prod(z - r) at the roots with Im r < 0."""
    roots = np.asarray(roots, dtype=complex)
    lower = roots[np.imag(roots) < 0]
    res = [numerator(p) / np.prod(p - roots[roots != p]) for p in lower]
    return lower, np.array(res)


def _lorentz_roots(xi, half_width):
    return [xi + 1j * half_width, xi - 1j * half_width,
            -xi + 1j * half_width, -xi - 1j * half_width]


@dataclass(frozen=True)
class Debye(_RationalDensity):
    """Ohmic density with Debye cut-off, J(w) = eta w / (1 + w^2 / omega_d^2)."""

    eta: float
    omega_d: float

    def __post_init__(self):
        if self.eta < 0 or self.omega_d <= 0:
            raise ValueError("Debye density needs eta >= 0 and omega_d > 0")

    def analytic(self, z):
        return self.eta * z / (1.0 + z**2 / self.omega_d**2)

    def poles(self):
        # J = eta wd^2 z / ((z - i wd)(z + i wd))
        p = -1j * self.omega_d
        return np.array([p]), np.array([self.eta * self.omega_d**2 / 2.0 + 0j])

    def mu(self):
        return self.eta * self.omega_d

    def zero_limit_slope(self):
        return self.eta


@dataclass(frozen=True)
class EffectiveLorentz(_RationalDensity):
    """Lorentzian (Brownian) density of a qubit seeing a damped resonator.

    J(w) = kappa * eta * w / ((1 - w^2/w0^2)^2 + eta^2 w^2 / w0^4), with
    ``kappa = 2 g^2 / w0^3`` for a resonator coupled with strength g.
    """

    kappa: float
    eta: float
    omega0: float

    def __post_init__(self):
        if self.kappa < 0 or self.eta <= 0 or self.omega0 <= 0:
            raise ValueError("EffectiveLorentz needs kappa >= 0, eta > 0, omega0 > 0")

    @classmethod
    def from_resonator(cls, g, eta, omega0):
        return cls(kappa=2.0 * g**2 / omega0**3, eta=eta, omega0=omega0)

    @property
    def xi_squared(self):
        return self.omega0**2 - self.eta**2 / 4.0

    def _check_underdamped(self):
        if self.xi_squared <= 0:
            raise ValueError(
                "overdamped effective Lorentzian (omega0^2 - eta^2/4 <= 0) is not supported"
            )

    def analytic(self, z):
        w0 = self.omega0
        return self.kappa * self.eta * z / ((1 - z**2 / w0**2) ** 2 + self.eta**2 * z**2 / w0**4)

    def poles(self):
        self._check_underdamped()
        a = self.kappa * self.eta * self.omega0**4
        roots = _lorentz_roots(np.sqrt(self.xi_squared), self.eta / 2.0)
        return _lower_residues(lambda z: a * z, roots)

    def mu(self):
        # (2/pi) int_0^inf J/w dw for this Lorentzian equals kappa * w0^2
        return self.kappa * self.omega0**2

    def zero_limit_slope(self):
        return self.kappa * self.eta


@dataclass(frozen=True)
class LorentzClass(_RationalDensity):
    """Lorentz-class density peaked at ``omega0`` with quality factor ``q``.

    J_n(w) = w0^(5-n) w^n / (q^3 [(w^2 - w0^2)^2 + w0^2 w^2 / q^2]),  n = 1, 2, 3,

    extended as an odd function to negative frequency.  For n = 1 and 3 this is
    analytic.  For n = 2 the odd extension w|w| is not, so the correlation
    function is built from the rational surrogate obtained by replacing |w| with
    2 w0 w^2 / (w^2 + w0^2).  The surrogate touches J_2 at the resonance with
    relative deviation -(w - w0)^2 / (w^2 + w0^2), decays as w^-3 and adds one
    real pole at -i w0.
    """

    n: int
    omega0: float
    q: float

    def __post_init__(self):
        if self.n not in (1, 2, 3):
            raise ValueError(f"Lorentz-class order must be 1, 2 or 3, got {self.n}")
        if self.omega0 <= 0 or self.q <= 0:
            raise ValueError("LorentzClass needs omega0 > 0 and q > 0")

    @property
    def eta(self):
        return self.omega0 / self.q

    def _denominator(self, z):
        w0 = self.omega0
        return self.q**3 * ((z**2 - w0**2) ** 2 + w0**2 * z**2 / self.q**2)

    def _numerator_over_z(self, z):
        w0 = self.omega0
        if self.n == 1:
            return w0**4 + 0 * z
        if self.n == 3:
            return w0**2 * z**2
        return 2.0 * w0**4 * z**2 / (z**2 + w0**2)

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        w0 = self.omega0
        return np.sign(w) * w0 ** (5 - self.n) * np.abs(w) ** self.n / self._denominator(w)

    def analytic(self, z):
        return z * self._numerator_over_z(z) / self._denominator(z)

    def poles(self):
        w0 = self.omega0
        roots = _lorentz_roots(np.sqrt(w0**2 - self.eta**2 / 4.0), self.eta / 2.0)
        scale = self.q**3
        if self.n == 2:
            roots += [1j * w0, -1j * w0]
            return _lower_residues(lambda z: 2.0 * w0**4 * z**3 / scale, roots)
        return _lower_residues(lambda z: z**2 * self._numerator_over_z(z) / (z * scale), roots)

    def mu(self):
        # split at the narrow resonance so quad resolves it
        w0 = self.omega0
        f = lambda w: self(w) / w
        opts = dict(limit=500, epsabs=0.0, epsrel=1e-11)
        parts = [integrate.quad(f, 0, w0, **opts), integrate.quad(f, w0, 2 * w0, **opts),
                 integrate.quad(f, 2 * w0, np.inf, **opts)]
        val, err = sum(p[0] for p in parts), sum(p[1] for p in parts)
        if err > 1e-8 * abs(val):
            raise ArithmeticError(f"counter-term quadrature did not converge (err={err})")
        return 2.0 / np.pi * val

    def zero_limit_slope(self):
        return 1.0 / self.q**3 if self.n == 1 else 0.0


SpectralDensity = Union[Debye, EffectiveLorentz, LorentzClass]


def spectral_value(density, w):
    """Pointwise J(w), odd in w."""
    return density(w)


def counter_term_mu(density):
    """Counter-term weight (2/pi) int_0^inf J(w)/w dw in rad/ns."""
    return density.mu()


def zero_frequency_rate(density, beta):
    """Limit of J(w) / (1 - exp(-beta w)) as w -> 0."""
    return density.zero_limit_slope() / beta


# -- baths -------------------------------------------------------------------


@dataclass(frozen=True)
class BathSpec:
    """A thermal reservoir attached to one side of the device."""

    bath_id: str
    temperature: float
    density: SpectralDensity

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"bath temperature must be positive, got {self.temperature}")

    @property
    def beta(self):
        return beta_from_mk(self.temperature)

    @property
    def mu(self):
        return counter_term_mu(self.density)

    def with_temperature(self, temperature):
        return BathSpec(self.bath_id, temperature, self.density)

    def relabel(self, bath_id):
        return BathSpec(bath_id, self.temperature, self.density)


@dataclass(frozen=True)
class ExponentialExpansion:
    """C(t) = sum_k d_k exp(-gamma_k t) for t >= 0.

    ``dbar`` holds the amplitudes of the conjugate function,
    C*(t) = sum_k dbar_k exp(-gamma_k t).  For real gamma_k this is conj(d_k);
    for a pair of complex-conjugate rates it is the conjugate amplitude of the
    partner term.
    """

    d: np.ndarray
    gamma: np.ndarray
    dbar: np.ndarray
    scheme: str
    poles: int
    bath_id: str = ""
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if np.any(np.real(self.gamma) <= 0):
            raise ValueError("all decay rates need a positive real part")

    def __len__(self):
        return len(self.d)

    @property
    def c0(self):
        return float(abs(np.sum(self.d)))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(-np.multiply.outer(t, self.gamma)) @ self.d


def _conjugate_partners(d, gamma):
    dbar = np.conj(d).astype(complex)
    for k, g in enumerate(gamma):
        if abs(np.imag(g)) > 0:
            match = np.flatnonzero(np.isclose(gamma, np.conj(g), rtol=1e-12, atol=0))
            if len(match) != 1:
                raise ValueError(f"complex rate {g} lacks a conjugate partner")
            dbar[k] = np.conj(d[match[0]])
    return dbar


def _pole_terms(bath):
    """Terms from the poles of J: amplitudes and rates."""
    poles, residues = bath.density.poles()
    d = -2j * residues * bose(bath.beta * poles)
    gamma = 1j * poles
    return d, gamma


def _tail_terms(bath, nus, weights):
    """Terms from Bose-function poles at -i nu with residue weight w / beta."""
    nus = np.asarray(nus, dtype=float)
    weights = np.asarray(weights, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = -2j * weights / bath.beta * bath.density.analytic(-1j * nus)
    if not np.all(np.isfinite(d)):
        raise ValueError("a Bose-function pole coincides with a pole of the spectral density")
    return d, nus.astype(complex)


def matsubara_frequencies(beta, count):
    return 2.0 * np.pi * np.arange(1, count + 1) / beta


def matsubara_cap(bath, rtol=MATSUBARA_RTOL, cap=MATSUBARA_CAP):
    """Smallest number of Matsubara terms whose last term changes C(0) by < rtol."""
    d_pole, _ = _pole_terms(bath)
    nus = matsubara_frequencies(bath.beta, cap)
    d_tail, _ = _tail_terms(bath, nus, np.ones(cap))
    partial = np.sum(d_pole) + np.cumsum(d_tail)
    rel = np.abs(d_tail) / np.maximum(np.abs(partial), 1e-300)
    hit = np.flatnonzero(rel < rtol)
    return int(hit[0]) + 1 if len(hit) else cap


def correlation_closed_form(bath, t, matsubara_cap_=None):
    """Closed-form C(t) with the Matsubara sum truncated after ``matsubara_cap_`` terms.

    Returns the value (scalar or array) and the magnitude of the last Matsubara
    term at t = 0 as a convergence estimate.
    """
    if matsubara_cap_ is None:
        matsubara_cap_ = matsubara_cap(bath)
    if matsubara_cap_ < 1:
        raise ValueError("matsubara_cap must be at least 1")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("closed form is defined for t >= 0 only")
    d_pole, g_pole = _pole_terms(bath)
    nus = matsubara_frequencies(bath.beta, matsubara_cap_)
    d_tail, g_tail = _tail_terms(bath, nus, np.ones(matsubara_cap_))
    d = np.concatenate([d_pole, d_tail])
    g = np.concatenate([g_pole, g_tail])
    value = np.exp(-np.multiply.outer(t, g)) @ d
    return value, float(abs(d_tail[-1]))


def expand_matsubara(bath, K):
    """Pole terms of J plus the first K Matsubara terms."""
    if K < 0:
        raise ValueError("K must be non-negative")
    d_pole, g_pole = _pole_terms(bath)
    d_tail, g_tail = _tail_terms(bath, matsubara_frequencies(bath.beta, K), np.ones(K))
    d = np.concatenate([d_pole, d_tail])
    g = np.concatenate([g_pole, g_tail])
    return ExponentialExpansion(d, g, _conjugate_partners(d, g), "matsubara", K, bath.bath_id)


def pade_poles(N):
    """Poles (in units of 1/beta) and weights of the [N-1/N] Pade Bose function.

    1/(1 - e^-x) ~ 1/x + 1/2 + sum_j 2 kappa_j x / (x^2 + eps_j^2)
    """
    if N < 1:
        raise ValueError("Pade order must be at least 1")
    off = 1.0 / np.sqrt((2 * np.arange(2 * N - 1) + 3) * (2 * np.arange(2 * N - 1) + 5))
    try:
        lam = linalg.eigvalsh_tridiagonal(np.zeros(2 * N), off)
    except linalg.LinAlgError as exc:
        raise ArithmeticError("Pade pole eigenproblem failed") from exc
    # spectrum is symmetric about zero; the N largest give the poles
    eps = np.sort(2.0 / np.sort(lam)[::-1][:N])
    if N > 1:
        off_c = 1.0 / np.sqrt((2 * np.arange(2 * N - 2) + 5) * (2 * np.arange(2 * N - 2) + 7))
        lam_c = np.sort(linalg.eigvalsh_tridiagonal(np.zeros(2 * N - 1), off_c))[::-1]
        # odd dimension: one eigenvalue is zero, keep the N - 1 positive ones
        chi = np.sort(2.0 / lam_c[: N - 1])
    else:
        chi = np.zeros(0)
    kappa = np.empty(N)
    for j in range(N):
        # N - 1 paired ratios; accumulated in logs to avoid overflow at large N
        ratio = (chi**2 - eps[j] ** 2) / (np.delete(eps, j) ** 2 - eps[j] ** 2)
        sign = np.prod(np.sign(ratio))
        kappa[j] = 0.5 * N * (2 * N + 3) * sign * np.exp(np.sum(np.log(np.abs(ratio))))
    return eps, kappa


def expand_pade(bath, K):
    """Pole terms of J plus K Pade terms replacing the Matsubara series."""
    eps, kappa = pade_poles(K)
    d_pole, g_pole = _pole_terms(bath)
    d_tail, g_tail = _tail_terms(bath, eps / bath.beta, kappa)
    d = np.concatenate([d_pole, d_tail])
    g = np.concatenate([g_pole, g_tail])
    return ExponentialExpansion(d, g, _conjugate_partners(d, g), "pade", K, bath.bath_id)


def expand(bath, scheme, K):
    if scheme == "pade":
        return expand_pade(bath, K)
    if scheme == "matsubara":
        return expand_matsubara(bath, K)
    raise ValueError(f"unknown expansion scheme {scheme!r}")


def correlation_time(bath):
    """Slowest decay time of C(t): 1 / min(Re of pole rates, first Matsubara frequency)."""
    _, g_pole = _pole_terms(bath)
    nu1 = 2.0 * np.pi / bath.beta
    return 1.0 / min(np.min(np.real(g_pole)), nu1)


def validation_grid(bath, n_corr=5.0, points=201):
    return np.linspace(0.0, n_corr * correlation_time(bath), points)


def validate_expansion(expansion, bath, grid, matsubara_cap_=None):
    """Max over the grid of |expansion - closed form| / max |closed form|."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("validation grid is empty")
    exact, _ = correlation_closed_form(bath, grid, matsubara_cap_)
    approx = expansion(grid)
    return float(np.max(np.abs(approx - exact)) / np.max(np.abs(exact)))


def converged_expansion(bath, scheme="pade", rtol=1e-6, grid=None, k_max=200):
    """Smallest K whose expansion reproduces the closed form to ``rtol`` on ``grid``."""
    if grid is None:
        grid = validation_grid(bath)
    cap = matsubara_cap(bath)
    err = np.inf
    for K in range(1 if scheme == "pade" else 0, k_max + 1):
        e = expand(bath, scheme, K)
        err = validate_expansion(e, bath, grid, cap)
        if err <= rtol:
            return e, err
    warnings.warn(f"{scheme} expansion did not reach {rtol} with K <= {k_max} (error {err:.2e})")
    return e, err
