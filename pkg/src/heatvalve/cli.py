"""Command-line front end: ``heatvalve <command> --config run.cfg``.

Run configs are TOML documents with the sections ``[circuit]``,
``[bath.L]``, ``[bath.R]``, ``[solver]``, ``[sweep]`` and ``[output]``.
Frequencies are angular (rad/ns), temperatures in mK.  Every command writes
one CSV and one JSON file to the output directory.

Exit codes: 0 success, 2 configuration error, 3 some sweep points failed,
4 numerical instability.
"""

from __future__ import annotations

import csv
import json
import math
import subprocess
import sys
import time
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import click
import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import bath as bath_mod
from . import experiments as ex
from .heom import INTEGRATORS, InstabilityError
from .model import CircuitParams, build_model, energy_spectrum

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL, EXIT_UNSTABLE = 0, 2, 3, 4
N_POPULATIONS = 7
SIG_DIGITS = 12
SMOKE_POINTS = 3
SMOKE_T_FINAL = 2.0


class ConfigError(ValueError):
    pass


# -- config ------------------------------------------------------------------------

CIRCUIT_KEYS = {"ejd0", "ejd0_ghz", "ec", "ec_ghz", "d", "omega_l", "omega_r", "g_l", "g_r",
                "g_tilde", "phi_over_phi0"}
DENSITY_KEYS = {
    "debye": {"eta", "omega_d"},
    "effective_lorentz": {"kappa", "eta", "omega0"},
    "lorentz_class": {"n", "omega0", "q"},
}
SOLVER_KEYS = {"name", "model", "L", "K", "scheme", "delta", "integrator", "t_final", "dt",
               "observe_every", "window", "rel_tol", "conservation_tol", "initial", "counter_term",
               "compare", "bath_check_K"}
SWEEP_KEYS = {"axis", "start", "stop", "step", "values", "phonon_offset_fW", "workers",
              "scan_parameter", "scan_values", "trace_every"}
OUTPUT_KEYS = {"prefix", "command"}


@dataclass
class RunConfig:
    """Parsed run configuration."""

    sweep: ex.SweepConfig
    compare: tuple = ()
    bath_check_K: tuple = (2, 4, 6)
    scan_parameter: str | None = None
    scan_values: tuple = ()
    trace_every: int = 5
    prefix: str = "run"
    command: str | None = None
    source: dict = field(default_factory=dict)


def _reject_unknown(section, table, allowed):
    extra = sorted(set(table) - allowed)
    if extra:
        raise ConfigError(f"[{section}] unknown key(s): {', '.join(extra)}")


def _number(section, table, key, default=None, kind=float):
    if key not in table:
        if default is None:
            raise ConfigError(f"[{section}] missing required key '{key}'")
        return default
    val = table[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"[{section}] key '{key}' must be a number, got {val!r}")
    if kind is int:
        if float(val) != int(val):
            raise ConfigError(f"[{section}] key '{key}' must be an integer")
        return int(val)
    return float(val)


def _circuit(table):
    _reject_unknown("circuit", table, CIRCUIT_KEYS)
    kw = {}
    for name in ("ejd0", "ec"):
        if name in table and f"{name}_ghz" in table:
            raise ConfigError(f"[circuit] give either '{name}' or '{name}_ghz', not both")
        if f"{name}_ghz" in table:
            kw[name] = 2 * math.pi * _number("circuit", table, f"{name}_ghz")
        elif name in table:
            kw[name] = _number("circuit", table, name)
    for key in CIRCUIT_KEYS - {"ejd0", "ejd0_ghz", "ec", "ec_ghz"}:
        if key in table:
            kw[key] = _number("circuit", table, key)
    try:
        return CircuitParams(**kw)
    except ValueError as exc:
        raise ConfigError(f"[circuit] {exc}") from exc


def _bath(side, table):
    section = f"bath.{side}"
    kind = table.get("density")
    if kind not in DENSITY_KEYS:
        raise ConfigError(f"[{section}] 'density' must be one of {sorted(DENSITY_KEYS)}, got {kind!r}")
    _reject_unknown(section, table, DENSITY_KEYS[kind] | {"density", "temperature"})
    temperature = _number(section, table, "temperature")
    try:
        if kind == "debye":
            density = bath_mod.Debye(_number(section, table, "eta"), _number(section, table, "omega_d"))
        elif kind == "effective_lorentz":
            # kappa is fixed from the circuit for the spin-boson model; 0 is a placeholder
            density = bath_mod.EffectiveLorentz(_number(section, table, "kappa", 0.0),
                                                _number(section, table, "eta"),
                                                _number(section, table, "omega0"))
        else:
            density = bath_mod.LorentzClass(_number(section, table, "n", kind=int),
                                            _number(section, table, "omega0"),
                                            _number(section, table, "q"))
        return bath_mod.BathSpec(side, temperature, density)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def frange(start, stop, step):
    """Inclusive grid start, start + step, ... up to stop, rounded to 12 digits."""
    if step <= 0 or stop < start:
        raise ConfigError("grid needs step > 0 and stop >= start")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return tuple(float(f"{start + i * step:.12g}") for i in range(n))


def parse_grid(text):
    """Parse ``start:stop:step``."""
    try:
        start, stop, step = (float(x) for x in text.split(":"))
    except ValueError as exc:
        raise ConfigError(f"--grid expects start:stop:step, got {text!r}") from exc
    return frange(start, stop, step)


def _grid(table):
    if "values" in table:
        if any(k in table for k in ("start", "stop", "step")):
            raise ConfigError("[sweep] give either 'values' or start/stop/step")
        vals = table["values"]
        if not isinstance(vals, list) or not vals:
            raise ConfigError("[sweep] 'values' must be a nonempty list")
        return tuple(float(v) for v in vals)
    return frange(_number("sweep", table, "start"), _number("sweep", table, "stop"),
                  _number("sweep", table, "step"))


def build_config(doc, name="run"):
    """Validate a parsed TOML document and build a :class:`RunConfig`."""
    _reject_unknown("top level", doc, {"circuit", "bath", "solver", "sweep", "output"})
    for sec in ("circuit", "bath", "solver", "sweep"):
        if sec not in doc:
            raise ConfigError(f"missing section [{sec}]")
    bath_tab = doc["bath"]
    _reject_unknown("bath", bath_tab, {"L", "R"})
    if set(bath_tab) != {"L", "R"}:
        raise ConfigError("need both [bath.L] and [bath.R]")
    params = _circuit(doc["circuit"])
    baths = (_bath("L", bath_tab["L"]), _bath("R", bath_tab["R"]))

    s = doc["solver"]
    _reject_unknown("solver", s, SOLVER_KEYS)
    defaults = ex.SolverSettings()
    hier = ex.HierarchySettings(
        L=_number("solver", s, "L", 2, int), K=_number("solver", s, "K", 2, int),
        scheme=s.get("scheme", "pade"), delta=_number("solver", s, "delta", 1e-7))
    if hier.scheme not in ("pade", "matsubara"):
        raise ConfigError(f"[solver] scheme must be 'pade' or 'matsubara', got {hier.scheme!r}")
    if hier.L < 0 or hier.K < 0:
        raise ConfigError("[solver] L and K must be non-negative")
    integrator = s.get("integrator", defaults.integrator)
    if integrator not in INTEGRATORS:
        raise ConfigError(f"[solver] integrator must be one of {INTEGRATORS}")
    dt = s.get("dt")
    settings = ex.SolverSettings(
        t_final=_number("solver", s, "t_final", defaults.t_final), integrator=integrator,
        dt=None if dt is None else _number("solver", s, "dt"),
        observe_every=_number("solver", s, "observe_every", defaults.observe_every, int),
        window=_number("solver", s, "window", defaults.window),
        rel_tol=_number("solver", s, "rel_tol", defaults.rel_tol),
        conservation_tol=_number("solver", s, "conservation_tol", defaults.conservation_tol),
        initial=s.get("initial", defaults.initial))
    if settings.initial not in ("fgr", "ground"):
        raise ConfigError("[solver] initial must be 'fgr' or 'ground'")
    counter = s.get("counter_term")
    if counter is not None and not isinstance(counter, bool):
        raise ConfigError("[solver] counter_term must be true or false")
    compare = tuple(s.get("compare", ()))
    for c in compare:
        if c not in ex.SOLVERS:
            raise ConfigError(f"[solver] unknown solver {c!r} in 'compare'")
    bath_k = tuple(int(k) for k in s.get("bath_check_K", (2, 4, 6)))

    w = doc["sweep"]
    _reject_unknown("sweep", w, SWEEP_KEYS)
    scan_parameter = w.get("scan_parameter")
    scan_values = tuple(float(v) for v in w.get("scan_values", ()))
    if (scan_parameter is None) != (not scan_values):
        raise ConfigError("[sweep] scan_parameter and scan_values go together")
    out = doc.get("output", {})
    _reject_unknown("output", out, OUTPUT_KEYS)
    if out.get("command") is not None and out["command"] not in COMMANDS:
        raise ConfigError(f"[output] command must be one of {sorted(COMMANDS)}")
    try:
        sweep = ex.SweepConfig(
            params, baths, solver=s.get("name", "heom"), model=s.get("model", "sequential"),
            axis=w.get("axis", "phi_over_phi0"), grid=_grid(w), hierarchy=hier,
            solver_settings=settings, counter_term=counter,
            phonon_offset_fW=_number("sweep", w, "phonon_offset_fW", 0.0),
            workers=_number("sweep", w, "workers", 1, int))
        if scan_parameter is not None:
            ex.with_parameter(sweep, scan_parameter, scan_values[0])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(sweep, compare, bath_k, scan_parameter, scan_values,
                     _number("sweep", w, "trace_every", 5, int), out.get("prefix", name),
                     out.get("command"), doc)


def load_config(path):
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return build_config(doc, path.stem)


def apply_overrides(rc, threads=None, solver=None, grid=None, smoke=False):
    """Command-line overrides; ``smoke`` trims the run to a few points and short times."""
    sw = rc.sweep
    changes = {}
    if threads is not None:
        changes["workers"] = threads
    if solver is not None:
        changes["solver"] = solver
    if grid is not None:
        changes["grid"] = parse_grid(grid)
    try:
        sw = sw.replace(**changes) if changes else sw
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if smoke:
        g = sw.grid
        idx = sorted({0, len(g) // 2, len(g) - 1})[:SMOKE_POINTS]
        sw = sw.replace(grid=tuple(g[i] for i in idx))
        rc.scan_values = rc.scan_values[:2]
    rc.sweep = sw
    return rc


# -- output ------------------------------------------------------------------------

def fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return f"{float(x):.{SIG_DIGITS}g}"


SWEEP_HEADER = (["axis", "power_fW", "I_L", "I_R"] + [f"p{i}" for i in range(1, N_POPULATIONS + 1)]
                + ["converged", "ado_count"])


def _population_cells(pops):
    pops = list(np.asarray(pops, float)[:N_POPULATIONS])
    return [fmt(p) for p in pops] + [""] * (N_POPULATIONS - len(pops))


def sweep_row(p):
    return [fmt(p.axis), fmt(p.power_fW), fmt(p.i_l), fmt(p.i_r), *_population_cells(p.populations),
            fmt(p.converged), fmt(p.ado_count)]


def version_string():
    try:
        ver = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        ver = "0.0.0"
    try:
        desc = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                              text=True, timeout=5, cwd=Path(__file__).parent)
        if desc.returncode == 0 and desc.stdout.strip():
            return f"v{ver}-g{desc.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{ver}"


def write_outputs(out_dir, stem, header, rows, meta):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    with open(out_dir / f"{stem}.json", "w") as fh:
        json.dump({"columns": list(header), "rows": rows, "metadata": meta}, fh, indent=2,
                  default=_json_default)
    return csv_path


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


def run_metadata(rc, command, wall):
    sw = rc.sweep
    return {"command": command, "solver": sw.solver, "model": sw.model, "L": sw.hierarchy.L,
            "K": sw.hierarchy.K, "scheme": sw.hierarchy.scheme, "delta": sw.hierarchy.delta,
            "dt": sw.solver_settings.dt, "integrator": sw.solver_settings.integrator,
            "version": version_string(), "wall_time_s": wall, "config": rc.source}


def _status(points):
    failed = [p for p in points if p.error]
    if any(p.error.startswith(InstabilityError.__name__) for p in failed):
        return EXIT_UNSTABLE
    return EXIT_PARTIAL if failed else EXIT_OK


# -- commands ----------------------------------------------------------------------

def cmd_spectrum(rc, out_dir):
    """E_2 - E_1 ... E_n - E_1 of the bare system Hamiltonian over the grid."""
    sw = rc.sweep
    rows = []
    for v in sw.grid:
        params = sw.params if sw.axis in ex.BATH_AXES else sw.params.replace(**{sw.axis: v})
        m = build_model(sw.model, params, counter_term=False)
        e = energy_spectrum(m)
        rows.append([fmt(v)] + [fmt(x) for x in e[1:]])
    n = len(rows[0]) - 1
    header = ["axis"] + [f"E{i}" for i in range(2, n + 2)]
    return rows, header, {}, EXIT_OK


def cmd_sweep(rc, out_dir):
    sw = rc.sweep
    if rc.scan_parameter is None:
        points = ex.flux_sweep(sw)
        return [sweep_row(p) for p in points], SWEEP_HEADER, {}, _status(points)
    rows, status = [], EXIT_OK
    for v, points in ex.parameter_scan(sw, rc.scan_parameter, rc.scan_values).items():
        rows += [[fmt(v)] + sweep_row(p) for p in points]
        status = max(status, _status(points))
    return rows, ["scan_value"] + SWEEP_HEADER, {"scan_parameter": rc.scan_parameter}, status


RECTIFY_HEADER = ["axis", "P_forward_fW", "P_backward_fW", "R", "defined", "I_L_forward", "I_R_forward",
                  "I_L_backward", "I_R_backward", "converged"]


def _rectify_rows(cfg):
    rows, pts = [], []
    for v, res, f, b in ex.rectification_sweep(cfg):
        pts += [f, b]
        rows.append([fmt(v), fmt(res.forward), fmt(res.backward),
                     fmt(res.coefficient if res.defined else math.nan), fmt(res.defined),
                     fmt(f.i_l), fmt(f.i_r), fmt(b.i_l), fmt(b.i_r), fmt(f.converged and b.converged)])
    return rows, pts


def cmd_rectify(rc, out_dir):
    if rc.scan_parameter is None:
        rows, pts = _rectify_rows(rc.sweep)
        return rows, RECTIFY_HEADER, {}, _status(pts)
    rows, pts = [], []
    for v in rc.scan_values:
        r, p = _rectify_rows(ex.with_parameter(rc.sweep, rc.scan_parameter, v))
        rows += [[fmt(v)] + x for x in r]
        pts += p
    return rows, ["scan_value"] + RECTIFY_HEADER, {"scan_parameter": rc.scan_parameter}, _status(pts)


def cmd_dynamics(rc, out_dir, t_final=None):
    sw = rc.sweep
    traces = ex.dynamics_trace(sw, sw.grid, t_final=t_final, observe_every=rc.trace_every)
    rows, meta = [], {"sign_changes": {}, "steady": {}}
    for tr in traces:
        t = tr.trajectory
        meta["sign_changes"][fmt(tr.axis)] = tr.sign_changes
        meta["steady"][fmt(tr.axis)] = bool(t.steady)
        for k in range(len(t.times)):
            rows.append([fmt(tr.axis), fmt(t.times[k]), fmt(t.i_l[k]), fmt(t.i_r[k]),
                         *_population_cells(t.populations[k])])
    header = ["axis", "t_ns", "I_L", "I_R"] + [f"p{i}" for i in range(1, N_POPULATIONS + 1)]
    return rows, header, meta, EXIT_OK


def cmd_compare(rc, out_dir):
    sw = rc.sweep
    solvers = rc.compare or (sw.solver,)
    curves, table = ex.solver_comparison(sw, list(solvers))
    header = ["axis"] + [f"power_fW_{s}" for s in solvers]
    rows = []
    for i, v in enumerate(sw.grid):
        rows.append([fmt(v)] + [fmt(curves[s][i].power_fW) for s in solvers])
    meta = {"deviation": [{"solver": r.solver, "reference": r.reference,
                           "max_rel_deviation": r.max_rel_deviation,
                           "mean_rel_deviation": r.mean_rel_deviation} for r in table],
            "local_maxima": {s: ex.local_maxima(*ex.sweep_arrays(curves[s])) for s in solvers}}
    status = max(_status(curves[s]) for s in solvers)
    return rows, header, meta, status


def cmd_bath_check(rc, out_dir):
    """Expansion error against the closed form for both schemes, several K, both baths."""
    rows = []
    for b in rc.sweep.baths:
        grid = bath_mod.validation_grid(b)
        cap = bath_mod.matsubara_cap(b)
        for scheme in ("pade", "matsubara"):
            for K in rc.bath_check_K:
                e = bath_mod.expand(b, scheme, K)
                err = bath_mod.validate_expansion(e, b, grid, cap)
                rows.append([b.bath_id, scheme, fmt(K), fmt(len(e)), fmt(err), fmt(grid[-1])])
    header = ["bath", "scheme", "K", "terms", "max_rel_error", "t_max_ns"]
    return rows, header, {}, EXIT_OK


COMMANDS = {"spectrum": cmd_spectrum, "sweep": cmd_sweep, "rectify": cmd_rectify,
            "dynamics": cmd_dynamics, "compare": cmd_compare, "bath-check": cmd_bath_check}


def run_command(command, config, out=".", threads=None, solver=None, grid=None, smoke=False):
    """Run one command; returns the exit code.  Used by the click wrapper and the tests.

    ``command=None`` takes the command named in the config's ``[output]`` section.
    """
    try:
        rc = apply_overrides(load_config(config), threads, solver, grid, smoke)
        command = command or rc.command
        if command is None:
            raise ConfigError("no command given and [output] has no 'command'")
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_CONFIG
    start = time.perf_counter()
    kwargs = {"t_final": SMOKE_T_FINAL} if (smoke and command == "dynamics") else {}
    try:
        rows, header, extra, status = COMMANDS[command](rc, out, **kwargs)
    except InstabilityError as exc:
        click.echo(f"numerical instability: {exc}", err=True)
        return EXIT_UNSTABLE
    except ValueError as exc:
        click.echo(f"invalid configuration: {exc}", err=True)
        return EXIT_CONFIG
    meta = run_metadata(rc, command, time.perf_counter() - start)
    meta.update(extra)
    meta["exit_code"] = status
    path = write_outputs(out, f"{rc.prefix}_{command.replace('-', '_')}", header, rows, meta)
    click.echo(f"wrote {path} ({len(rows)} rows)")
    return status


def _command(name, doc):
    @click.option("--config", "config", required=True, type=click.Path(dir_okay=False),
                  help="Run configuration (TOML).")
    @click.option("--out", "out", default=".", type=click.Path(file_okay=False),
                  help="Output directory.")
    @click.option("--threads", type=click.IntRange(min=1), default=None, help="Worker processes.")
    @click.option("--solver", type=click.Choice(ex.SOLVERS), default=None, help="Override the solver.")
    @click.option("--grid", default=None, help="Override the sweep grid as start:stop:step.")
    @click.option("--smoke", is_flag=True, help="A few grid points and short times only.")
    def cmd(config, out, threads, solver, grid, smoke):
        sys.exit(run_command(None if name == "run" else name, config, out, threads, solver, grid, smoke))

    cmd.__doc__ = doc
    return click.command(name)(cmd)


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Heat transport through a flux-tunable transmon between two resonators."""


for _name, _doc in [("spectrum", "Bare eigenenergies over the sweep grid."),
                    ("sweep", "Steady-state heat power over the sweep grid."),
                    ("rectify", "Forward and temperature-swapped power and the rectification coefficient."),
                    ("dynamics", "Population and current time series at each grid value."),
                    ("compare", "Several solvers on the same grid with deviation metrics."),
                    ("bath-check", "Accuracy of the bath correlation expansions."),
                    ("run", "Whatever command the config names in [output].")]:
    main.add_command(_command(_name, _doc))


if __name__ == "__main__":
    main()
