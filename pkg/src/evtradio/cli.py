"""Command-line driver: build maps, simulate policies, audit availability, export."""

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import config as _config
from .channel import build_scenario
from .errors import ConfigError, EvtRadioError, MetadataMismatchError
from .evt import QosTarget
from .handover import HoPolicy
from .powermap import (VARIANTS, generate_maps, load_maps, map_filename, read_grid_csv,
                       save_maps)
from .sim import (REFERENCE_PATHS, availability_audit, make_trajectory, path_availability,
                  reference_trajectory, run_baseline, run_proposed, stratified_cells)

MANIFEST = "manifest.json"
EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: usage error: {message}\n")


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _manifest(command, cfg, inputs, outputs, seeds, started):
    return {
        "command": command,
        "config": cfg,
        "inputs": [str(p) for p in inputs],
        "outputs": sorted(str(p) for p in outputs),
        "seeds": seeds,
        "version": __version__,
        "wall_clock_s": round(time.time() - started, 3),
    }


def _scenario_cfg(args):
    overrides = _config.read_config_file(args.scenario) if args.scenario else {}
    if args.scenario_seed is not None:
        overrides = {**overrides, "seed": args.scenario_seed}
    return _config.scenario_config(args.profile, overrides)


# -- build-maps -------------------------------------------------------------------------

def cmd_build_maps(args):
    started = time.time()
    stage = "config"
    try:
        cfg = _scenario_cfg(args)
        scenario = build_scenario(cfg, profile=args.profile)
        overrides = {k: v for k, v in {
            "rho": args.rho, "tau": args.tau, "zeta": args.zeta, "gamma0_db": args.gamma0,
            "theta": args.theta, "seed": args.seed, "n_samples": args.samples,
            "n_locations": args.locations}.items() if v is not None}
        params = _config.maps_config(args.profile, overrides)
        stage = "maps"
        mapset = generate_maps(scenario, params)
        stage = "write"
        out = Path(args.out)
        written = save_maps(mapset, out, manifest=MANIFEST)
    except EvtRadioError as exc:
        exc.stage = stage
        raise
    _write_json(out / MANIFEST, _manifest(
        "build-maps", {"scenario": cfg, "maps": params, "profile": args.profile},
        [args.scenario] if args.scenario else [], written,
        {"scenario": scenario.seed, "maps": params["seed"]}, started))
    print(f"wrote {len(scenario.serving)} x {len(VARIANTS)} maps to {out}")
    return 0


# -- simulate ---------------------------------------------------------------------------

def _load_map_dir(path, args):
    path = Path(path)
    try:
        scen_cfg = json.loads((path / "scenario.json").read_text())
    except FileNotFoundError:
        raise MetadataMismatchError(f"{path} has no scenario.json", key="maps") from None
    if args.scenario or args.scenario_seed is not None:
        wanted = _scenario_cfg(args)
        diff = _diff(scen_cfg, wanted)
        if diff:
            raise MetadataMismatchError("maps were built for a different scenario:\n  "
                                        + "\n  ".join(diff), key="maps")
    scenario = build_scenario(scen_cfg, profile=args.profile)
    maps = load_maps(path)
    for pm in maps:
        if pm.shape != (scenario.ny, scenario.nx):
            raise MetadataMismatchError(f"map BS {pm.bs + 1} is {pm.shape}, scenario grid is "
                                        f"({scenario.ny}, {scenario.nx})", key="maps")
    return scenario, maps


def _diff(a, b, prefix=""):
    out = []
    for key in sorted(set(a) | set(b)):
        name = f"{prefix}.{key}" if prefix else str(key)
        va, vb = a.get(key), b.get(key)
        if isinstance(va, dict) and isinstance(vb, dict):
            out += _diff(va, vb, name)
        elif va != vb:
            out.append(f"{name}: maps={va!r} requested={vb!r}")
    return out


def _parse_path(spec, speed, scenario, interval):
    if spec is None or not spec.strip():
        raise UsageError("empty path specification")
    spec = spec.strip()
    if spec in REFERENCE_PATHS:
        return reference_trajectory(spec, interval, scenario)
    try:
        pts = [tuple(float(v) for v in p.split(",")) for p in spec.split(";") if p.strip()]
    except ValueError:
        raise UsageError(f"cannot parse path {spec!r}; use a name or 'x,y;x,y;...'") from None
    if len(pts) < 2 or any(len(p) != 2 for p in pts):
        raise UsageError("a waypoint path needs at least two 'x,y' points")
    if speed is None:
        raise UsageError("--speed is required for a waypoint path")
    return make_trajectory(pts, speed, interval, scenario)


def cmd_simulate(args):
    started = time.time()
    dts = args.dt or [_config.DEFAULT_POLICY["hold_s"]]
    dps = args.dp or [_config.DEFAULT_POLICY["hysteresis_db"]]
    scenario, maps = _load_map_dir(args.maps, args)
    trajectory = _parse_path(args.path, args.speed, scenario, args.interval)
    meta = maps[0].meta
    zeta = args.zeta if args.zeta is not None else meta["zeta"]
    gamma0_db = args.gamma0 if args.gamma0 is not None else meta["gamma0_db"]
    target = QosTarget.from_db(gamma0_db, zeta)
    pmax = args.pmax if args.pmax is not None else scenario.p_max_dbm
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    sweep = []

    def emit(name, report):
        if args.audit_samples:
            path_availability(report, scenario, target, args.audit_samples, args.audit_seed)
        report.meta["manifest"] = MANIFEST
        (out / f"{name}_trace.csv").write_text(report.table())
        (out / f"{name}_events.csv").write_text(report.event_table())
        written.extend([out / f"{name}_trace.csv", out / f"{name}_events.csv"])
        return report.summary()

    for dt in dts:
        for dp in dps:
            report = run_proposed(scenario, maps, HoPolicy(dt, dp, pmax), trajectory)
            summary = emit(f"proposed_dt{dt:g}_dp{dp:g}", report)
            sweep.append(summary)
    baselines = {}
    base_cfg = {"gamma0_db": gamma0_db, "zeta": zeta, "p_max_dbm": pmax, "seed": args.seed}
    if args.classical_power is not None:
        base_cfg["classical_power_dbm"] = args.classical_power
    if args.genie_samples is not None:
        base_cfg["genie_samples"] = args.genie_samples
    for kind in args.baseline or []:
        report = run_baseline(kind, scenario, trajectory, base_cfg, maps=maps)
        baselines[kind] = emit(f"baseline_{kind}", report)

    _write_sweep_csv(out / "sweep.csv", sweep)
    _write_json(out / "summary.json", {"path": args.path, "proposed": sweep,
                                       "baselines": baselines, "manifest": MANIFEST})
    written += [out / "sweep.csv", out / "summary.json"]
    _write_json(out / MANIFEST, _manifest(
        "simulate", {"maps": str(args.maps), "dt": dts, "dp": dps, "pmax": pmax,
                     "path": args.path, "speed": args.speed, "interval": args.interval,
                     "zeta": zeta, "gamma0_db": gamma0_db, "baselines": args.baseline or [],
                     "baseline_config": base_cfg, "audit_samples": args.audit_samples},
        [args.maps], written, {"baselines": args.seed, "audit": args.audit_seed}, started))
    for s in sweep:
        print(f"dt={s['hold_s']:g}s dp={s['hysteresis_db']:g}dB energy={s['energy_j']:.4f}J "
              f"hos={s['ho_count']}")
    for kind, s in baselines.items():
        print(f"{kind}: energy={s['energy_j']:.4f}J hos={s['ho_count']}")
    return 0


SWEEP_COLUMNS = ("hold_s", "hysteresis_db", "energy_j", "mean_power_dbm", "ho_count",
                 "mean_ho_interval_s", "mean_ho_distance_m", "availability")


def _write_sweep_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow(["" if r.get(c) is None else repr(r[c]) if isinstance(r[c], float)
                        else r[c] for c in SWEEP_COLUMNS])


# -- audit ------------------------------------------------------------------------------

def cmd_audit(args):
    started = time.time()
    if args.cells is not None and args.cells < 1:
        raise UsageError("--cells must be >= 1")
    scenario, maps = _load_map_dir(args.maps, args)
    meta = maps[0].meta
    zeta = args.zeta if args.zeta is not None else meta["zeta"]
    gamma0_db = args.gamma0 if args.gamma0 is not None else meta["gamma0_db"]
    target = QosTarget.from_db(gamma0_db, zeta)
    count = args.cells or 200
    cells = (np.arange(scenario.n_cells) if args.full_grid
             else stratified_cells(scenario, count, args.seed))
    report = availability_audit(scenario, target, cells, args.samples, args.seed, maps=maps,
                                p_max_dbm=args.pmax)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "audit_cells.csv").write_text(report.table(scenario))
    _write_json(out / "audit_summary.json", {**report.summary(), "gamma0_db": gamma0_db,
                                             "manifest": MANIFEST})
    _write_json(out / MANIFEST, _manifest(
        "audit", {"maps": str(args.maps), "zeta": zeta, "gamma0_db": gamma0_db,
                  "samples": args.samples, "cells": int(len(cells))},
        [args.maps], [out / "audit_cells.csv", out / "audit_summary.json"],
        {"audit": args.seed}, started))
    print(f"availability {report.availability:.4f} over {len(cells)} cells "
          f"({args.samples} samples each)")
    return 0


# -- export -----------------------------------------------------------------------------

def map_to_long(grid, scenario_cfg_or_spacing):
    """Rows (x_m, y_m, dBm) of a map grid, row-major from the lowest y."""
    ny, nx = grid.shape
    half_x, half_y = scenario_cfg_or_spacing
    dx, dy = 2 * half_x / nx, 2 * half_y / ny
    xs = -half_x + dx * (np.arange(nx) + 0.5)
    ys = -half_y + dy * (np.arange(ny) + 0.5)
    return [(xs[ix], ys[iy], grid[iy, ix]) for iy in range(ny) for ix in range(nx)]


def write_long_csv(path, rows, ny, nx):
    lines = [f"# ny={ny} nx={nx}", "x_m,y_m,dbm"]
    lines += [f"{float(x)!r},{float(y)!r},{float(v)!r}" for x, y, v in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def read_long_csv(path):
    """Grid back from a long-form map export."""
    text = Path(path).read_text().splitlines()
    dims = dict(tok.split("=") for tok in text[0][1:].split())
    ny, nx = int(dims["ny"]), int(dims["nx"])
    values = [float(line.split(",")[2]) for line in text[2:] if line]
    if len(values) != ny * nx:
        raise ConfigError(f"{path}: expected {ny * nx} rows, found {len(values)}", key="input")
    return np.array(values).reshape(ny, nx)


def cmd_export(args):
    src = Path(args.input)
    out = Path(args.out)
    if not src.exists():
        raise ConfigError(f"{src} does not exist", key="input")
    if src.is_file() and src.suffix == ".csv" and src.name.startswith("map_bs"):
        grid = read_grid_csv(src)
        scen = json.loads((src.parent / "scenario.json").read_text())
        half = (scen["area"]["half_x_m"], scen["area"]["half_y_m"])
        if args.format == "csv":
            write_long_csv(out, map_to_long(grid, half), *grid.shape)
        else:
            _write_json(out, {"source": str(src), "ny": grid.shape[0], "nx": grid.shape[1],
                              "min_dbm": float(grid.min()), "max_dbm": float(grid.max()),
                              "mean_dbm": float(grid.mean()),
                              "median_dbm": float(np.median(grid))})
    elif src.is_dir() and (src / "summary.json").exists():
        summary = json.loads((src / "summary.json").read_text())
        if args.format == "csv":
            rows = sorted(summary["proposed"], key=lambda r: (r["hysteresis_db"], r["hold_s"]))
            _write_sweep_csv(out, rows)
        else:
            _write_json(out, summary)
    elif src.is_dir() and (src / map_filename(0, "raw")).exists():
        maps = load_maps(src)
        if args.format == "csv":
            raise UsageError("export a single map file to csv, or use --format summary")
        _write_json(out, {f"bs{pm.bs + 1}_{v}": {"min_dbm": float(pm.variant(v).min()),
                                                 "max_dbm": float(pm.variant(v).max()),
                                                 "mean_dbm": float(pm.variant(v).mean())}
                          for pm in maps for v in VARIANTS})
    else:
        raise ConfigError(f"do not know how to export {src}", key="input")
    print(f"wrote {out}")
    return 0


# -- parser -----------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="evtradio", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--scenario", help="YAML/JSON scenario overrides")
        sp.add_argument("--profile", default="desk", choices=sorted(_config.PROFILES))
        sp.add_argument("--scenario-seed", type=int, dest="scenario_seed",
                        help="override the scenario (channel) seed")

    b = sub.add_parser("build-maps", help="generate per-BS raw/filtered/fused power maps")
    common(b)
    b.add_argument("--rho", type=float)
    b.add_argument("--tau", type=float)
    b.add_argument("--zeta", type=float)
    b.add_argument("--gamma0", type=float, help="SINR target in dB")
    b.add_argument("--theta", type=float, help="filter width in cells (0 disables)")
    b.add_argument("--seed", type=int, help="sampling seed")
    b.add_argument("--samples", type=int, help="SINR samples per location")
    b.add_argument("--locations", type=int, help="observed locations per BS")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build_maps)

    s = sub.add_parser("simulate", help="run the handover policy (and baselines) along a path")
    common(s)
    s.add_argument("--maps", required=True)
    s.add_argument("--path", required=True, help="path1, path2 or 'x,y;x,y;...'")
    s.add_argument("--speed", type=float, help="km/h, for waypoint paths")
    s.add_argument("--interval", type=float, default=0.009, help="snapshot interval (s)")
    s.add_argument("--dt", type=float, nargs="+", help="hold timer(s) in s")
    s.add_argument("--dp", type=float, nargs="+", help="hysteresis margin(s) in dB")
    s.add_argument("--pmax", type=float)
    s.add_argument("--zeta", type=float)
    s.add_argument("--gamma0", type=float)
    s.add_argument("--baseline", nargs="+", choices=("nearest", "classical", "genie"))
    s.add_argument("--classical-power", type=float, dest="classical_power")
    s.add_argument("--genie-samples", type=int, dest="genie_samples")
    s.add_argument("--audit-samples", type=int, default=0, dest="audit_samples",
                   help="Monte-Carlo samples per cell for path availability (0 skips)")
    s.add_argument("--audit-seed", type=int, default=7, dest="audit_seed",
                   help="seed of the availability samples (keep distinct from --seed)")
    s.add_argument("--seed", type=int, default=11, help="seed of the baseline draws")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("audit", help="Monte-Carlo availability audit of a map set")
    common(a)
    a.add_argument("--maps", required=True)
    a.add_argument("--zeta", type=float)
    a.add_argument("--gamma0", type=float)
    a.add_argument("--pmax", type=float)
    a.add_argument("--samples", type=int, default=1_000_000)
    a.add_argument("--cells", type=int)
    a.add_argument("--full-grid", action="store_true", dest="full_grid")
    a.add_argument("--seed", type=int, default=7)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_audit)

    e = sub.add_parser("export", help="plot-ready CSV or JSON summary of an artifact")
    e.add_argument("--input", required=True)
    e.add_argument("--format", required=True, choices=("csv", "summary"))
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_export)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"evtradio {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EvtRadioError as exc:
        stage = getattr(exc, "stage", None)
        tag = f"{args.command}:{stage}" if stage else args.command
        print(f"evtradio [{tag}] error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"evtradio [{args.command}] numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
