import math

import numpy as np
import pytest

from heatvalve.bath import BathSpec, Debye, EffectiveLorentz
from heatvalve.experiments import (RectificationResult, SweepConfig, dynamics_trace, flux_sweep,
                                   local_maxima, parameter_scan, point_setup, rectification_coefficient,
                                   rectification_sweep, solve_point, solver_comparison, sweep_arrays,
                                   swapped_temperatures, with_parameter)
from heatvalve.model import CircuitParams, transmon_frequency

DEBYE = Debye(0.03, 60.0)
HOT_COLD = (BathSpec("L", 330.0, DEBYE), BathSpec("R", 100.0, DEBYE))


def config(**kw):
    base = dict(params=CircuitParams(g_tilde=-0.55), baths=HOT_COLD, model="beam_splitter")
    base.update(kw)
    return SweepConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        config(grid=())
    with pytest.raises(ValueError):
        config(grid=(0.1, 0.3, 0.2))
    with pytest.raises(ValueError):
        config(solver="lindblad")
    with pytest.raises(ValueError):
        config(axis="colour")
    with pytest.raises(ValueError):
        config(phonon_offset_fW=-1.0)
    with pytest.raises(ValueError):
        config(baths=HOT_COLD[:1])
    with pytest.raises(ValueError):
        config(solver="spin_boson_fgr")
    assert config(grid=(0.3, 0.2)).grid == (0.3, 0.2)


def test_rectification_arithmetic():
    assert rectification_coefficient(2.0, 1.0) == 1.0
    r = RectificationResult(1.0, 1e-16)
    assert not r.defined and math.isnan(r.coefficient)


def test_local_maxima():
    x = np.arange(7) * 0.1
    assert local_maxima(x, [0, 1, 0, 2, 2, 2, 0]) == pytest.approx([0.1, 0.4])
    assert local_maxima(x, np.arange(7)) == []


def test_point_setup_axes():
    p, baths = point_setup(config(axis="temperature_r"), 50.0)
    assert baths[1].temperature == 50.0 and baths[0].temperature == 330.0
    p, baths = point_setup(config(axis="eta"), 0.1)
    assert all(b.density.eta == 0.1 for b in baths)
    p, _ = point_setup(config(), 0.25)
    assert p.phi_over_phi0 == 0.25


def test_spin_boson_setup_maps_coupling():
    lor = EffectiveLorentz.from_resonator(0.55, 1.5, 33.3)
    cfg = config(model="spin_boson", params=CircuitParams(g_l=0.3, omega_r=31.0),
                 baths=(BathSpec("L", 330.0, lor), BathSpec("R", 100.0, lor)))
    _, (bl, br) = point_setup(cfg, 0.2)
    assert bl.density.kappa == pytest.approx(2 * 0.3**2 / 33.3**3)
    assert br.density.omega0 == 31.0
    with pytest.raises(ValueError):
        point_setup(config(model="spin_boson"), 0.2)


def test_with_parameter():
    cfg = config()
    assert with_parameter(cfg, "g", 0.3).params.g_r == 0.3
    assert with_parameter(cfg, "eta", 0.1).baths[0].density.eta == 0.1
    assert with_parameter(cfg, "d", 0.2).params.d == 0.2
    with pytest.raises(ValueError):
        with_parameter(cfg, "colour", 1.0)


def test_phonon_offset_is_exact():
    grid = (0.0, 0.35)
    a = flux_sweep(config(grid=grid))
    b = flux_sweep(config(grid=grid, phonon_offset_fW=2.5))
    for p, q in zip(a, b):
        assert q.power_fW - p.power_fW == pytest.approx(2.5, abs=1e-14)
        assert q.i_l == p.i_l and np.array_equal(q.populations, p.populations)


def test_sweep_point_invariants():
    for p in flux_sweep(config(grid=(0.0, 0.35, 0.5))):
        assert p.ok and p.converged
        assert np.all(p.populations >= -1e-9)
        assert p.populations.sum() == pytest.approx(1.0, abs=1e-6)
        assert p.power_fW == pytest.approx(0.10545718 * 0.5 * (p.i_l - p.i_r))


def test_failed_point_is_recorded():
    cfg = config(axis="d", grid=(0.45,), solver="fgr", params=CircuitParams(g_l=0, g_r=0))
    pt = solve_point(cfg, 0.45)
    assert not pt.ok and math.isnan(pt.power_fW)
    assert "NullSpaceError" in pt.error


PRODUCT_BASIS = tuple((a, b, c) for a in range(3) for b in range(2) for c in range(3))


def test_decoupled_device_carries_no_power():
    # on a full product basis; the default seven states are not a tensor product, and the
    # truncated coupling operators leak ~1e-4 fW between the baths even without g, g~
    cfg = config(params=CircuitParams(g_l=0.0, g_r=0.0, g_tilde=0.0), grid=(0.0, 0.35, 0.5),
                 basis=PRODUCT_BASIS)
    for p in flux_sweep(cfg):
        assert abs(p.power_fW) <= 1e-6


def test_flux_mirror_symmetry():
    a = flux_sweep(config(solver="fgr", grid=(0.2, 0.3, 0.45)))
    b = flux_sweep(config(solver="fgr", grid=(0.55, 0.7, 0.8)))
    for p, q in zip(a, reversed(b)):
        assert q.power_fW == pytest.approx(p.power_fW, rel=1e-6)


def test_symmetric_device_does_not_rectify():
    res = rectification_sweep(config(grid=(0.2, 0.35, 0.5), basis=(
        (0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 0), (1, 0, 1), (2, 0, 0), (0, 1, 1), (0, 0, 2))))
    for _, r, f, b in res:
        assert r.coefficient <= 1e-3
        # backward run is the forward run with L and R relabelled
        assert f.i_l == pytest.approx(b.i_r, rel=1e-6)


def test_swapped_temperatures():
    cfg = swapped_temperatures(config())
    assert cfg.bath("L").temperature == 100.0 and cfg.bath("R").temperature == 330.0


def test_dynamics_trace():
    (tr,) = dynamics_trace(config(), [0.35], t_final=2.0, observe_every=5)
    traj = tr.trajectory
    assert traj.i_l[0] == 0 and traj.i_r[0] == 0
    assert np.allclose(traj.populations.sum(axis=1), 1.0, atol=1e-8)
    assert tr.sign_changes >= 0


def test_parameter_scan_keys():
    out = parameter_scan(config(solver="fgr", grid=(0.3, 0.5)), "g_tilde", [0.0, -0.55])
    assert list(out) == [0.0, -0.55]
    assert all(len(v) == 2 for v in out.values())


def test_solver_comparison_table():
    curves, table = solver_comparison(config(grid=(0.35,)), ["heom"])
    assert table == [] and len(curves["heom"]) == 1
    curves, table = solver_comparison(config(grid=(0.2, 0.35)), ["heom", "redfield_plus"])
    assert table[0].solver == "redfield_plus" and table[0].reference == "heom"
    x, y = sweep_arrays(curves["heom"])
    assert np.array_equal(x, [0.2, 0.35])
    assert table[0].max_rel_deviation < 0.1


def test_resonance_condition_roots():
    # the two flux values with omega_q = omega_L for the default device
    p = CircuitParams()
    for phi in (0.342, 0.658):
        assert transmon_frequency(p.replace(phi_over_phi0=phi)) == pytest.approx(33.3, abs=0.05)
