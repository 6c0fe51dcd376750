"""Sweeps, scans and solver comparisons built on the solvers.

Every sweep point is independent: the model is rebuilt for the point, the
chosen solver is run to its steady state and the result is recorded as a
:class:`SweepPoint`.  A failing point is recorded with its error message and
the sweep carries on.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import bath as bath_mod
from .heom import (PropagatorConfig, SteadyStateCriterion, build_hierarchy, propagate,
                   total_current)
from .model import CircuitParams, HilbertBasis, build_model, spin_boson_kappa, transmon_frequency
from .perturbative import (NullSpaceError, eigen_populations_to_density, fgr_heat_current, fgr_rates,
                           pauli_steady_state, redfield_propagate, spin_boson_fgr_current)
from .units import to_femtowatt

log = logging.getLogger(__name__)

SOLVERS = ("heom", "redfield_plus", "redfield", "fgr", "spin_boson_fgr")
MODELS = ("sequential", "beam_splitter", "spin_boson")
BATH_AXES = ("eta", "temperature_l", "temperature_r")
R_FLOOR_FW = 1e-15


@dataclass(frozen=True)
class HierarchySettings:
    L: int = 2
    K: int = 2
    scheme: str = "pade"
    delta: float = 1e-7


@dataclass(frozen=True)
class SolverSettings:
    t_final: float = 3000.0
    integrator: str = "etdrk4"
    dt: float | None = None
    observe_every: int = 20
    window: float = 5.0
    rel_tol: float = 1e-4
    conservation_tol: float = 1e-4
    initial: str = "fgr"

    def propagator(self, integrator=None):
        crit = SteadyStateCriterion(window=self.window, rel_tol=self.rel_tol,
                                    conservation_tol=self.conservation_tol)
        return PropagatorConfig(self.t_final, self.dt, self.observe_every, crit,
                                integrator or self.integrator)


@dataclass(frozen=True)
class SweepConfig:
    """Everything needed to run one sweep.

    ``axis`` names a :class:`CircuitParams` field or one of ``eta``,
    ``temperature_l``, ``temperature_r``.
    """

    params: CircuitParams
    baths: tuple
    solver: str = "heom"
    model: str = "sequential"
    axis: str = "phi_over_phi0"
    grid: tuple = (0.0,)
    hierarchy: HierarchySettings = field(default_factory=HierarchySettings)
    solver_settings: SolverSettings = field(default_factory=SolverSettings)
    counter_term: bool | None = None
    phonon_offset_fW: float = 0.0
    workers: int = 1
    basis: tuple | None = None

    def __post_init__(self):
        grid = tuple(float(x) for x in self.grid)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "baths", tuple(self.baths))
        if not grid:
            raise ValueError("sweep grid must be nonempty")
        diffs = np.diff(grid)
        if len(grid) > 1 and not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ValueError("sweep grid must be strictly monotone")
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}")
        if self.axis not in CircuitParams.__dataclass_fields__ and self.axis not in BATH_AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}")
        if self.phonon_offset_fW < 0:
            raise ValueError("phonon offset must be non-negative")
        if sorted(b.bath_id for b in self.baths) != ["L", "R"]:
            raise ValueError("need one bath per side (L and R)")
        if self.solver == "spin_boson_fgr" and self.model != "spin_boson":
            raise ValueError("spin_boson_fgr needs the spin_boson model")

    def replace(self, **changes):
        return replace(self, **changes)

    def hilbert_basis(self):
        return HilbertBasis(self.basis) if self.basis is not None else None

    def build(self, params, baths):
        return build_model(self.model, params, basis=self.hilbert_basis(), baths=baths,
                           counter_term=self.counter_term)

    def bath(self, bath_id):
        return next(b for b in self.baths if b.bath_id == bath_id)


@dataclass
class SweepPoint:
    axis: float
    power_fW: float
    i_l: float
    i_r: float
    populations: np.ndarray
    converged: bool
    ado_count: int
    wall_time: float
    error: str | None = None

    @property
    def ok(self):
        return self.error is None


@dataclass(frozen=True)
class RectificationResult:
    forward: float
    backward: float

    @property
    def defined(self):
        return abs(self.backward) > R_FLOOR_FW

    @property
    def coefficient(self):
        if not self.defined:
            return math.nan
        return abs(self.forward - self.backward) / abs(self.backward)


def rectification_coefficient(p_forward, p_backward):
    return RectificationResult(p_forward, p_backward).coefficient


# -- building one point ---------------------------------------------------------

def _with_eta(density, eta):
    if isinstance(density, (bath_mod.Debye, bath_mod.EffectiveLorentz)):
        return replace(density, eta=eta)
    raise ValueError(f"{type(density).__name__} has no eta parameter")


def point_setup(cfg, value):
    """Circuit parameters and bath specs at one grid value."""
    params, baths = cfg.params, list(cfg.baths)
    if cfg.axis in BATH_AXES:
        if cfg.axis == "eta":
            baths = [replace(b, density=_with_eta(b.density, value)) for b in baths]
        else:
            side = "L" if cfg.axis.endswith("_l") else "R"
            baths = [b.with_temperature(value) if b.bath_id == side else b for b in baths]
    else:
        params = params.replace(**{cfg.axis: value})
    if cfg.model == "spin_boson":
        fixed = []
        for b in baths:
            if not isinstance(b.density, bath_mod.EffectiveLorentz):
                raise ValueError("spin_boson model needs effective Lorentzian baths")
            g, w = (params.g_l, params.omega_l) if b.bath_id == "L" else (params.g_r, params.omega_r)
            fixed.append(replace(b, density=replace(b.density, kappa=spin_boson_kappa(g, w), omega0=w)))
        baths = fixed
    baths.sort(key=lambda b: b.bath_id)
    return params, tuple(baths)


def _fgr_solution(m, baths):
    rates = fgr_rates(m, baths)
    p = pauli_steady_state(rates)
    cur = fgr_heat_current(p, rates)
    rho = eigen_populations_to_density(rates, p)
    return cur["L"], cur["R"], rho


def _warm_start(m, baths):
    """Golden-rule steady state, or None (basis ground state) when it is not unique."""
    try:
        return _fgr_solution(m, baths)[2]
    except NullSpaceError as exc:
        log.info("no golden-rule warm start (%s); starting from the ground state", exc)
        return None


def _solve(cfg, value):
    params, baths = point_setup(cfg, value)
    m = cfg.build(params, baths)
    st = cfg.solver_settings
    if cfg.solver == "fgr":
        il, ir, rho = _fgr_solution(m, baths)
        return il, ir, np.real(np.diag(rho)), True, 0
    if cfg.solver == "spin_boson_fgr":
        wq = transmon_frequency(params)
        bl, br = baths
        cur = spin_boson_fgr_current(wq, bath_mod.spectral_value(bl.density, wq),
                                     bath_mod.spectral_value(br.density, wq), bl.beta, br.beta)
        rates = fgr_rates(m, baths)
        pops = np.real(np.diag(eigen_populations_to_density(rates, pauli_steady_state(rates))))
        return cur, -cur, pops, True, 0

    hs = cfg.hierarchy
    expansions = [bath_mod.expand(b, hs.scheme, hs.K) for b in baths]
    rho0 = _warm_start(m, baths) if st.initial == "fgr" else None
    if cfg.solver == "redfield":
        tr = redfield_propagate(m, expansions, st.propagator("rk4"), rho0=rho0)
        return tr.i_l[-1], tr.i_r[-1], tr.populations[-1], tr.steady, 0
    # redfield_plus is the hierarchy cut at the first tier; the stand-alone
    # solver in perturbative.py is checked against this path in the tests.
    L = 1 if cfg.solver == "redfield_plus" else hs.L
    h = build_hierarchy(m, expansions, L, hs.delta, rho0)
    tr = propagate(h, st.propagator())
    return tr.i_l[-1], tr.i_r[-1], tr.populations[-1], tr.steady, int(tr.ado_count[-1])


def solve_point(cfg, value):
    """Steady state at one grid value; errors are captured in the returned point."""
    start = time.perf_counter()
    try:
        il, ir, pops, steady, count = _solve(cfg, value)
        power = to_femtowatt(total_current(il, ir)) + cfg.phonon_offset_fW
        return SweepPoint(value, float(power), float(il), float(ir), np.asarray(pops, float),
                          bool(steady), count, time.perf_counter() - start)
    except (ValueError, ArithmeticError, FloatingPointError) as exc:
        log.warning("sweep point %s=%g failed: %s", cfg.axis, value, exc)
        dim = 2 if cfg.model == "spin_boson" else 7
        return SweepPoint(value, math.nan, math.nan, math.nan, np.full(dim, math.nan), False, 0,
                          time.perf_counter() - start, f"{type(exc).__name__}: {exc}")


def _solve_job(args):
    return solve_point(*args)


def _run_points(jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [_solve_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_solve_job, jobs))


# -- studies --------------------------------------------------------------------

def flux_sweep(cfg):
    """Steady state at every grid value, in grid order."""
    return _run_points([(cfg, v) for v in cfg.grid], cfg.workers)


def sweep_arrays(points):
    """(axis, power) arrays of a sweep, for peak finding and comparisons."""
    return (np.array([p.axis for p in points]), np.array([p.power_fW for p in points]))


def local_maxima(x, y):
    """Grid values of strict interior local maxima (plateaus count once)."""
    x, y = np.asarray(x), np.asarray(y)
    out = []
    i = 1
    while i < len(y) - 1:
        j = i
        while j + 1 < len(y) - 1 and y[j + 1] == y[i]:
            j += 1
        if y[i] > y[i - 1] and y[j] > y[j + 1]:
            out.append(float(x[(i + j) // 2]))
        i = j + 1
    return out


def swapped_temperatures(cfg):
    bl, br = cfg.bath("L"), cfg.bath("R")
    return cfg.replace(baths=(bl.with_temperature(br.temperature), br.with_temperature(bl.temperature)))


def rectification_sweep(cfg):
    """Forward run as configured, backward run with T_L and T_R exchanged.

    Powers are the magnitudes of the steady total current in fW, without the
    phonon offset.
    """
    fwd_cfg = cfg.replace(phonon_offset_fW=0.0)
    bwd_cfg = swapped_temperatures(fwd_cfg)
    jobs = [(fwd_cfg, v) for v in cfg.grid] + [(bwd_cfg, v) for v in cfg.grid]
    res = _run_points(jobs, cfg.workers)
    n = len(cfg.grid)
    out = []
    for v, f, b in zip(cfg.grid, res[:n], res[n:]):
        out.append((v, RectificationResult(abs(f.power_fW), abs(b.power_fW)), f, b))
    return out


@dataclass
class DynamicsTrace:
    axis: float
    trajectory: object
    sign_changes: int


def dynamics_trace(cfg, values, t_final=None, observe_every=5):
    """Time series from the basis ground state with classical RK4 at each value."""
    out = []
    st = cfg.solver_settings
    for v in values:
        params, baths = point_setup(cfg, v)
        m = cfg.build(params, baths)
        expansions = [bath_mod.expand(b, cfg.hierarchy.scheme, cfg.hierarchy.K) for b in baths]
        L = 1 if cfg.solver == "redfield_plus" else cfg.hierarchy.L
        h = build_hierarchy(m, expansions, L, cfg.hierarchy.delta)
        pc = st.propagator("rk4")
        pc = replace(pc, t_final=t_final or st.t_final, observe_every=observe_every)
        tr = propagate(h, pc)
        total = tr.i_total
        signs = np.sign(total[np.abs(total) > 1e-12 * max(np.max(np.abs(total)), 1e-300)])
        out.append(DynamicsTrace(v, tr, int(np.count_nonzero(np.diff(signs)))))
    return out


SCAN_PARAMETERS = ("d", "ejd0", "eta", "g_tilde", "g")


def with_parameter(cfg, parameter, value):
    """Copy of ``cfg`` with one parameter changed.

    ``eta`` rescales both baths, ``g`` sets g_L and g_R together and any other
    name must be a :class:`CircuitParams` field.
    """
    if parameter == "eta":
        return cfg.replace(baths=tuple(replace(b, density=_with_eta(b.density, value)) for b in cfg.baths))
    if parameter == "g":
        return cfg.replace(params=cfg.params.replace(g_l=value, g_r=value))
    if parameter not in CircuitParams.__dataclass_fields__:
        raise ValueError(f"unknown scan parameter {parameter!r}")
    return cfg.replace(params=cfg.params.replace(**{parameter: value}))


def parameter_scan(cfg, parameter, values):
    """One flux sweep per parameter value, keyed by value."""
    return {v: flux_sweep(with_parameter(cfg, parameter, v)) for v in values}


@dataclass
class ComparisonRow:
    solver: str
    reference: str
    max_rel_deviation: float
    mean_rel_deviation: float


def solver_comparison(cfg, solvers):
    """Run each solver on the same grid; deviations are relative to the first solver."""
    curves = {s: flux_sweep(cfg.replace(solver=s)) for s in solvers}
    table = []
    if len(solvers) > 1:
        ref_name = solvers[0]
        ref = sweep_arrays(curves[ref_name])[1]
        scale = np.maximum(np.abs(ref), 1e-300)
        for s in solvers[1:]:
            dev = np.abs(sweep_arrays(curves[s])[1] - ref) / scale
            table.append(ComparisonRow(s, ref_name, float(np.nanmax(dev)), float(np.nanmean(dev))))
    return curves, table
