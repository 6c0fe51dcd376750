import csv
import math
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from heatvalve import bath as bath_mod
from heatvalve.cli import (EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL, ConfigError, frange, load_config,
                           main, parse_grid, run_command)
from heatvalve.model import CircuitParams, transmon_frequency

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = sorted((ROOT / "configs").glob("fig*.cfg"), key=lambda p: int(p.stem[3:]))
GOLDEN = ROOT / "configs" / "golden"

BASE = """
[circuit]
ejd0_ghz = 40.0
ec_ghz = 0.15
d = 0.45
g_l = {g}
g_r = {g}
g_tilde = {gt}

[bath.L]
density = "debye"
temperature = 330.0
eta = 0.03
omega_d = 60.0

[bath.R]
density = "debye"
temperature = 100.0
eta = 0.03
omega_d = 60.0

[solver]
name = "{solver}"
model = "beam_splitter"
{extra}

[sweep]
values = [{values}]

[output]
prefix = "t"
"""


def write_cfg(tmp_path, g=0.55, gt=-0.55, solver="fgr", values="0.35", extra=""):
    p = tmp_path / "run.cfg"
    p.write_text(BASE.format(g=g, gt=gt, solver=solver, values=values, extra=extra))
    return p


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_grid_helpers():
    assert frange(0.0, 1.0, 0.25) == (0.0, 0.25, 0.5, 0.75, 1.0)
    assert len(frange(0.0, 1.0, 0.01)) == 101
    assert parse_grid("0.3:0.3:0.01") == (0.3,)
    with pytest.raises(ConfigError):
        parse_grid("0.3:0.5")


def test_every_shipped_config_parses():
    assert len(CONFIGS) == 15
    for path in CONFIGS:
        rc = load_config(path)
        assert rc.command is not None and rc.prefix == path.stem


def test_unknown_key_exits_with_config_error(tmp_path):
    cfg = write_cfg(tmp_path, extra="tolerance = 1e-3")
    assert run_command("sweep", cfg, tmp_path) == EXIT_CONFIG
    res = CliRunner().invoke(main, ["sweep", "--config", str(cfg), "--out", str(tmp_path)])
    assert res.exit_code == 2 and "tolerance" in res.output


def test_bad_values_exit_with_config_error(tmp_path):
    assert run_command("sweep", write_cfg(tmp_path, extra="L = -1"), tmp_path) == EXIT_CONFIG
    assert run_command("sweep", write_cfg(tmp_path, extra='scheme = "taylor"'), tmp_path) == EXIT_CONFIG
    assert run_command("sweep", tmp_path / "missing.cfg", tmp_path) == EXIT_CONFIG
    (tmp_path / "broken.cfg").write_text("[circuit\n")
    assert run_command("sweep", tmp_path / "broken.cfg", tmp_path) == EXIT_CONFIG
    # no command on the line and none in [output]
    assert run_command(None, write_cfg(tmp_path), tmp_path) == EXIT_CONFIG


def test_one_point_grid_gives_one_row(tmp_path):
    cfg = write_cfg(tmp_path, values="0.1, 0.2")
    assert run_command("sweep", cfg, tmp_path, grid="0.35:0.35:0.01") == EXIT_OK
    rows = read_csv(tmp_path / "t_sweep.csv")
    assert len(rows) == 2 and rows[1][0] == "0.35"
    assert rows[0][:4] == ["axis", "power_fW", "I_L", "I_R"]


def test_rerun_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, solver="heom", values="0.2, 0.35", extra="t_final = 50.0")
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_command("sweep", cfg, a) == EXIT_OK
    assert run_command("sweep", cfg, b) == EXIT_OK
    assert (a / "t_sweep.csv").read_bytes() == (b / "t_sweep.csv").read_bytes()


def test_failed_point_exits_partial(tmp_path):
    # without couplings the golden-rule generator has no unique steady state
    cfg = write_cfg(tmp_path, g=0.0, gt=0.0, values="0.2, 0.35")
    assert run_command("sweep", cfg, tmp_path) == EXIT_PARTIAL
    rows = read_csv(tmp_path / "t_sweep.csv")
    assert len(rows) == 3 and rows[1][1] == "nan"


def test_uncoupled_spectrum_is_bare_sums(tmp_path):
    cfg = write_cfg(tmp_path, g=0.0, gt=0.0)
    assert run_command("spectrum", cfg, tmp_path) == EXIT_OK
    (row,) = read_csv(tmp_path / "t_spectrum.csv")[1:]
    wq = transmon_frequency(CircuitParams(phi_over_phi0=0.35))
    wl = 33.3
    bare = sorted([wl, wq, wl, wl + wq, 2 * wl, 2 * wl])
    assert np.allclose([float(x) for x in row[1:]], bare, atol=1e-9)


def test_spectrum_has_avoided_crossing(tmp_path):
    values = np.round(np.arange(0.30, 0.39, 0.005), 3)
    cfg = write_cfg(tmp_path, values=", ".join(map(str, values)))
    assert run_command("spectrum", cfg, tmp_path) == EXIT_OK
    rows = np.array(read_csv(tmp_path / "t_spectrum.csv")[1:], float)
    wq = [transmon_frequency(CircuitParams(phi_over_phi0=v)) for v in values]
    assert min(wq) < 33.3 < max(wq)
    # the qubit anticrosses the mode it couples to; the antisymmetric resonator mode
    # is dark for g_L = g_R and crosses freely, so only E3 - E2 stays open
    assert np.min(rows[:, 2] - rows[:, 1]) > 1.0


def test_bath_check_reports_expansion_error(tmp_path):
    cfg = write_cfg(tmp_path, extra="bath_check_K = [2, 6, 40]")
    assert run_command("bath-check", cfg, tmp_path) == EXIT_OK
    rows = read_csv(tmp_path / "t_bath_check.csv")
    assert rows[0] == ["bath", "scheme", "K", "terms", "max_rel_error", "t_max_ns"]
    assert len(rows) == 1 + 2 * 2 * 3
    rc = load_config(cfg)
    for bath_id, scheme, K, terms, err, _ in rows[1:]:
        b = rc.sweep.bath(bath_id)
        e = bath_mod.expand(b, scheme, int(K))
        ref = bath_mod.validate_expansion(e, b, bath_mod.validation_grid(b), bath_mod.matsubara_cap(b))
        assert int(terms) == len(e)
        assert float(err) == pytest.approx(ref, rel=1e-9)
    pade = {(r[0], int(r[2])): float(r[4]) for r in rows[1:] if r[1] == "pade"}
    assert pade[("R", 40)] < pade[("R", 6)] < pade[("R", 2)]


def _numeric(cell):
    try:
        return float(cell)
    except ValueError:
        return None


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_smoke_run_matches_golden(path, tmp_path):
    code = run_command(None, path, tmp_path, smoke=True)
    assert code == EXIT_OK
    (out,) = tmp_path.glob("*.csv")
    got, want = read_csv(out), read_csv(GOLDEN / out.name)
    assert got[0] == want[0] and len(got) == len(want)
    for g_row, w_row in zip(got[1:], want[1:]):
        for g, w in zip(g_row, w_row):
            gv, wv = _numeric(g), _numeric(w)
            if gv is None or wv is None or math.isnan(wv):
                assert g == w
            else:
                assert gv == pytest.approx(wv, rel=1e-6, abs=1e-12)
