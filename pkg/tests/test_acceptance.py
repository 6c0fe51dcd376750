"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Full-resolution sweeps (flux step 0.01) are computed once per module and
shared between criteria.  The whole module takes the better part of an hour
on one core.
"""

import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from heatvalve import bath as bath_mod
from heatvalve.bath import BathSpec, Debye, LorentzClass, correlation_time, expand
from heatvalve.cli import apply_overrides, frange, load_config
from heatvalve.experiments import (HierarchySettings, SweepConfig, dynamics_trace, flux_sweep,
                                   local_maxima, parameter_scan, point_setup, rectification_sweep,
                                   solve_point, sweep_arrays)
from heatvalve.heom import PropagatorConfig, RK4_STABILITY, SteadyStateCriterion, build_hierarchy, propagate
from heatvalve.model import CircuitParams, build_model, build_sequential
from heatvalve.oracle import discretize, exact_propagate
from heatvalve.perturbative import redfield_plus_propagate

CONFIGS = sorted((Path(__file__).resolve().parents[1] / "configs").glob("fig*.cfg"),
                 key=lambda p: int(p.stem[3:]))
FLUX = frange(0.0, 1.0, 0.01)
DEBYE = Debye(0.03, 60.0)
HOT_COLD = (BathSpec("L", 330.0, DEBYE), BathSpec("R", 100.0, DEBYE))
DEVICE = CircuitParams(g_tilde=-0.55)
RESONANCES = (0.342, 0.658)


def device_config(model="beam_splitter", **kw):
    base = dict(params=DEVICE, baths=HOT_COLD, model=model, grid=FLUX)
    base.update(kw)
    return SweepConfig(**base)


def cfg_from_file(name):
    return load_config(Path(__file__).resolve().parents[1] / "configs" / name).sweep.replace(grid=FLUX)


@pytest.fixture(scope="module")
def beam_splitter_sweep():
    return flux_sweep(device_config())


@pytest.fixture(scope="module")
def sequential_sweep():
    return flux_sweep(device_config("sequential"))


def nearest(peaks, target):
    return min(peaks, key=lambda x: abs(x - target)) if peaks else float("nan")


def test_criterion_01_zero_bias_null(criterion):
    equal = (BathSpec("L", 330.0, DEBYE), BathSpec("R", 330.0, DEBYE))
    exp = [expand(b, "pade", 2) for b in equal]
    crit = SteadyStateCriterion(window=5.0, rel_tol=1e-4, conservation_tol=1e-4)
    ratios, walls, steady = [], [], []
    for phi in (0.0, 0.35, 0.5):
        m = build_model("beam_splitter", DEVICE.replace(phi_over_phi0=phi), baths=equal)
        h = build_hierarchy(m, exp, 2)
        tr = propagate(h, PropagatorConfig(3000.0, None, 20, crit, "etdrk4"))
        peak = max(np.max(np.abs(tr.i_l)), np.max(np.abs(tr.i_r)))
        ratios.append(max(abs(tr.i_l[-1]), abs(tr.i_r[-1])) / peak)
        walls.append(tr.wall_time)
        steady.append(tr.steady)
    ok = all(steady) and max(ratios) <= 1e-3 and max(walls) <= 300
    detail = (f"|I_ss|/|I_peak| = {', '.join(f'{r:.1e}' for r in ratios)} (<= 1e-3); "
              f"slowest point {max(walls):.0f} s (<= 300 s)")
    assert criterion(1, ok, detail), detail


def test_criterion_02_steady_energy_conservation(criterion, beam_splitter_sweep):
    worst = max(abs(p.i_l + p.i_r) / max(abs(p.i_l), abs(p.i_r)) for p in beam_splitter_sweep)
    ok = worst <= 1e-3 and all(p.ok for p in beam_splitter_sweep)
    detail = f"max |I_L + I_R| / max(|I_L|, |I_R|) = {worst:.1e} over {len(FLUX)} points (<= 1e-3)"
    assert criterion(2, ok, detail), detail


def test_criterion_03_hierarchy_convergence(criterion):
    cfg = device_config(grid=(0.35,))
    power = {}
    for L, K in [(2, 2), (3, 2), (2, 3)]:
        power[L, K] = solve_point(cfg.replace(hierarchy=HierarchySettings(L=L, K=K)), 0.35).power_fW
    dl = abs(power[3, 2] - power[2, 2]) / abs(power[2, 2])
    dk = abs(power[2, 3] - power[2, 2]) / abs(power[2, 2])
    ok = dl < 0.01 and dk < 0.01
    detail = f"P(2,2) = {power[2, 2]:.6f} fW; change to L=3 {dl:.1e}, to K=3 {dk:.1e} (< 1e-2)"
    assert criterion(3, ok, detail), detail


def test_criterion_04_first_tier_equals_redfield_plus(criterion):
    m = build_model("beam_splitter", DEVICE.replace(phi_over_phi0=0.35), baths=HOT_COLD)
    exp = [expand(b, "pade", 2) for b in HOT_COLD]
    cfg = PropagatorConfig(1.0, 0.001, 10, None)
    rp = redfield_plus_propagate(m, exp, cfg)
    hh = propagate(build_hierarchy(m, exp, 1, delta=0.0), cfg)
    dev = max(np.max(np.abs(rp.populations - hh.populations)), np.max(np.abs(rp.i_l - hh.i_l)),
              np.max(np.abs(rp.i_r - hh.i_r)), np.max(np.abs(rp.final.rho - hh.final.rho_s)))
    ok = dev <= 1e-8 and np.array_equal(rp.times, hh.times)
    detail = f"max elementwise deviation over 1 ns = {dev:.1e} (<= 1e-8)"
    assert criterion(4, ok, detail), detail


def test_criterion_05_oracle_equivalence(criterion):
    weak = Debye(0.005, 60.0)
    baths = (BathSpec("L", 330.0, weak), BathSpec("R", 100.0, weak))
    m = build_sequential(CircuitParams(phi_over_phi0=0.35), baths=baths)
    rho0 = np.zeros((m.dim, m.dim), complex)
    rho0[2, 2] = 1.0  # qubit excited
    t_final = 3 * max(correlation_time(b) for b in baths)
    samples = 20
    start = time.perf_counter()
    o = exact_propagate(m, [discretize(b, 128, 600.0) for b in baths], t_final, t_final / samples,
                        rho0=rho0)
    h = build_hierarchy(m, [expand(b, "pade", 4) for b in baths], 3, delta=0.0, rho0=rho0)
    per = int(np.ceil(t_final / (0.9 * RK4_STABILITY / h.max_rate()) / samples))
    tr = propagate(h, PropagatorConfig(t_final, t_final / (per * samples), per, None))
    wall = time.perf_counter() - start
    gap = float(np.max(np.abs(o.populations - tr.populations)))
    ok = np.allclose(o.times, tr.times) and gap <= 1e-3 and wall <= 1200
    detail = f"max |dp| up to {t_final:.3f} ns (3 correlation times) = {gap:.1e} (<= 1e-3); {wall:.0f} s"
    assert criterion(5, ok, detail), detail


def test_criterion_06_resonance_peaks(criterion, sequential_sweep, beam_splitter_sweep):
    peaks = local_maxima(*sweep_arrays(sequential_sweep))
    found = [nearest(peaks, r) for r in RESONANCES]
    off = [abs(f - r) for f, r in zip(found, RESONANCES)]
    bs_peaks = local_maxima(*sweep_arrays(beam_splitter_sweep))
    mid = nearest(bs_peaks, 0.5)
    ok = max(off) <= 0.01 and abs(mid - 0.5) <= 0.01
    detail = (f"sequential maxima nearest {RESONANCES} at {found[0]:.3f}, {found[1]:.3f} (+-0.01); "
              f"beam-splitter maximum at {mid:.3f} (0.5 +- 0.01)")
    assert criterion(6, ok, detail), detail


def test_criterion_07_golden_rule_gap(criterion, beam_splitter_sweep):
    heom_peaks = [p for p in local_maxima(*sweep_arrays(beam_splitter_sweep)) if abs(p - 0.5) > 0.02]
    resonant = [nearest(heom_peaks, r) for r in RESONANCES]
    fgr = flux_sweep(cfg_from_file("fig5.cfg"))
    fgr_peaks = local_maxima(*sweep_arrays(fgr))
    near = [f for f in fgr_peaks for r in resonant if abs(f - r) <= 0.02]

    sb = cfg_from_file("fig6.cfg")
    p_heom = np.nanmax(sweep_arrays(flux_sweep(sb))[1])
    p_fgr = np.nanmax(sweep_arrays(flux_sweep(sb.replace(solver="spin_boson_fgr")))[1])
    ok = bool(heom_peaks) and not near and p_fgr < p_heom
    detail = (f"HEOM resonance maxima {resonant}, golden-rule maxima within 0.02: {near or 'none'}; "
              f"spin-boson peak FGR {p_fgr:.4f} < HEOM {p_heom:.4f} fW")
    assert criterion(7, ok, detail), detail


def test_criterion_08_rectification(criterion):
    start = time.perf_counter()
    sym = rectification_sweep(device_config())
    asym = cfg_from_file("fig15.cfg")
    r_max = {}
    for wl in (25.0, 30.0):
        res = rectification_sweep(asym.replace(params=asym.params.replace(omega_l=wl)))
        r_max[wl] = max(r.coefficient for _, r, _, _ in res if r.defined)
    wall = time.perf_counter() - start
    r_sym = max(r.coefficient for _, r, _, _ in sym if r.defined)
    ok = r_sym <= 1e-3 and r_max[25.0] > r_max[30.0] and wall <= 7200
    detail = (f"symmetric max R = {r_sym:.1e} (<= 1e-3); max R at omega_L=25: {r_max[25.0]:.3f} "
              f"> omega_L=30: {r_max[30.0]:.3f}; three curves in {wall / 60:.0f} min (<= 120)")
    assert criterion(8, ok, detail), detail


def test_criterion_09_eta_turnover(criterion):
    etas = [0.01, 0.03, 0.1, 0.3]
    scans = parameter_scan(cfg_from_file("fig12.cfg"), "eta", etas)
    peak = [float(np.nanmax(sweep_arrays(scans[e])[1])) for e in etas]
    top = int(np.argmax(peak))
    ok = 0 < top < len(etas) - 1
    detail = "peak power " + ", ".join(f"eta={e}: {p:.4f}" for e, p in zip(etas, peak)) + " fW"
    assert criterion(9, ok, detail), detail


def shipped_baths():
    seen = {}
    for path in CONFIGS:
        sw = load_config(path).sweep
        try:
            _, baths = point_setup(sw, sw.grid[0])
        except ValueError:
            # spectrum-only spin-boson config ships Debye baths it never uses
            baths = sw.baths
        for b in baths:
            seen.setdefault(repr(b), b)
    return list(seen.values())


def test_criterion_10_bath_expansion_accuracy(criterion):
    failures, worst_tail = [], 0.0
    for b in shipped_baths():
        grid = bath_mod.validation_grid(b)
        # reference keeps ten times more Matsubara terms than any expansion tried
        cap, k_max = bath_mod.MATSUBARA_CAP, 200
        for scheme in ("pade", "matsubara"):
            best = min(bath_mod.validate_expansion(expand(b, scheme, K), b, grid, cap)
                       for K in range(1, k_max + 1, 4))
            tail = bath_mod.validate_expansion(expand(b, scheme, k_max), b, grid[1:], cap)
            worst_tail = max(worst_tail, tail)
            if best > 1e-6:
                failures.append(f"{type(b.density).__name__} {b.temperature:g} mK {scheme} {best:.1e}")
    t = np.linspace(0.0, 5 * correlation_time(HOT_COLD[1]), 201)
    im = np.imag(bath_mod.correlation_closed_form(HOT_COLD[1], t)[0])
    im_ref = -(0.03 * 60.0**2 / 2) * np.exp(-60.0 * t)
    im_err = float(np.max(np.abs(im - im_ref)) / np.max(np.abs(im_ref)))
    ok = not failures and im_err <= 1e-10
    detail = (f"best error on [0, 5 tau_c] above 1e-6 for: {'; '.join(failures) or 'none'} "
              f"(t > 0 only, K=200: worst {worst_tail:.1e}); Debye Im C error {im_err:.1e} (<= 1e-10)")
    assert criterion(10, ok, detail), detail


def test_criterion_11_lorentz_universality(criterion):
    base = cfg_from_file("fig16.cfg")
    curves = {}
    for n in (1, 2, 3):
        baths = tuple(replace(b, density=LorentzClass(n, b.density.omega0, b.density.q)) for b in base.baths)
        curves[n] = sweep_arrays(flux_sweep(base.replace(baths=baths)))[1]
    dev = max(float(np.nanmax(np.abs(curves[n] - curves[1]) / np.abs(curves[1]))) for n in (2, 3))
    ok = dev <= 0.03 and all(np.all(np.isfinite(c)) for c in curves.values())
    detail = f"max pointwise relative deviation of n=2, 3 from n=1 = {dev:.2e} (<= 3e-2)"
    assert criterion(11, ok, detail), detail


def test_criterion_12_conservation_suite(criterion):
    worst = {"hermitian": 0.0, "trace": 0.0, "rho_hermiticity": 0.0, "negativity": 0.0, "norm": 0.0}
    for path in CONFIGS:
        rc = apply_overrides(load_config(path), smoke=True)
        sw = rc.sweep
        for v in sw.grid:
            try:
                params, baths = point_setup(sw, v)
            except ValueError:
                params, baths = sw.params.replace(**{sw.axis: v}), None
            m = sw.build(params, baths)
            for op in (m.h_s, *(o for _, o in m.coupling_ops)):
                worst["hermitian"] = max(worst["hermitian"], float(np.max(np.abs(op - op.conj().T))))
            if rc.command == "spectrum":
                continue
            (tr,) = dynamics_trace(sw, [v], t_final=2.0, observe_every=5)
            t = tr.trajectory
            worst["trace"] = max(worst["trace"], float(np.max(np.abs(t.traces - 1))))
            worst["rho_hermiticity"] = max(worst["rho_hermiticity"], float(np.max(t.hermiticity)))
            pt = solve_point(sw, v)
            worst["negativity"] = max(worst["negativity"], float(-np.min(pt.populations)),
                                      float(-np.min(t.populations)))
            worst["norm"] = max(worst["norm"], abs(float(np.sum(pt.populations)) - 1))
    ok = (worst["hermitian"] <= 1e-12 and worst["trace"] <= 1e-8 and worst["rho_hermiticity"] <= 1e-8
          and worst["negativity"] <= 1e-9 and worst["norm"] <= 1e-6)
    detail = (f"{len(CONFIGS)} configs: H hermiticity {worst['hermitian']:.0e} (<= 1e-12), "
              f"trace drift {worst['trace']:.0e} (<= 1e-8), rho hermiticity {worst['rho_hermiticity']:.0e} "
              f"(<= 1e-8), population negativity {worst['negativity']:.0e} (<= 1e-9), "
              f"steady norm error {worst['norm']:.0e} (<= 1e-6)")
    assert criterion(12, ok, detail), detail
