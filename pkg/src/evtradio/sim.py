"""Trajectories, policy simulation, and the energy / handover / availability metrics."""

import hashlib
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from . import config as _config
from .channel import db_to_lin, ground_truth_sinr
from .errors import ConfigError, DomainError
from .evt import QosTarget
from .handover import (ClassicalState, HoEvent, HoPolicy, classical_ho_step, genie_power,
                       ho_step, initial_step, map_stack, nearest_bs)

SNAPSHOT_INTERVAL_S = 0.009
THREADS_ENV = "EVTRADIO_THREADS"

# Reference paths: (start, [(heading, length m), ...], speed km/h).
# Path 1 is lowered by 5 m so that its first leg lies inside the 130 m deep hall.
_HEADINGS = {"E": (1.0, 0.0), "W": (-1.0, 0.0), "N": (0.0, 1.0), "S": (0.0, -1.0)}
REFERENCE_PATHS = {
    "path1": ((-85.0, 65.0),
              [("E", 170), ("S", 40), ("W", 170), ("S", 40), ("E", 170), ("S", 40), ("W", 170)],
              20.0),
    "path2": ((90.0, 50.0), [("W", 85), ("S", 80), ("W", 85)], 10.0),
}


def _legs_to_waypoints(start, legs):
    pts = [tuple(map(float, start))]
    for heading, length in legs:
        dx, dy = _HEADINGS[heading]
        x, y = pts[-1]
        pts.append((x + dx * length, y + dy * length))
    return pts


@dataclass
class Trajectory:
    waypoints: np.ndarray
    speed_kmh: float
    interval_s: float
    times: np.ndarray
    positions: np.ndarray
    arc_m: np.ndarray

    @property
    def speed_mps(self):
        return self.speed_kmh / 3.6

    @property
    def duration_s(self):
        return float(self.times[-1])

    def __len__(self):
        return len(self.times)


def make_trajectory(waypoints, speed_kmh, interval_s=SNAPSHOT_INTERVAL_S, scenario=None):
    """Constant-speed snapshots along a piecewise-linear path.

    Snapshots sit every ``speed * interval`` metres of arc length starting at
    the first waypoint; the last one is the final waypoint when the path
    length is a whole number of steps, otherwise the last full step before it.
    """
    wp = np.atleast_2d(np.asarray(waypoints, dtype=float))
    if wp.shape[0] < 2 or wp.shape[1] != 2:
        raise ConfigError("a trajectory needs at least two (x, y) waypoints", key="path")
    if not speed_kmh > 0:
        raise ConfigError(f"speed must be > 0, got {speed_kmh}", key="speed")
    if not interval_s > 0:
        raise ConfigError(f"interval must be > 0, got {interval_s}", key="interval")
    if scenario is not None:
        bad = ~scenario.contains(wp)
        if np.any(bad):
            raise ConfigError(f"waypoint {wp[np.flatnonzero(bad)[0]].tolist()} lies outside "
                              "the area", key="path")
    seg = np.linalg.norm(np.diff(wp, axis=0), axis=1)
    keep = np.concatenate([[True], seg > 0])
    wp = wp[keep]
    if len(wp) < 2:
        raise ConfigError("trajectory has zero length", key="path")
    seg = np.linalg.norm(np.diff(wp, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]

    step = speed_kmh / 3.6 * interval_s
    n_steps = math.floor(total / step + 1e-9)
    idx = np.arange(n_steps + 1)
    arc = np.minimum(idx * step, total)
    k = np.clip(np.searchsorted(cum, arc, side="right") - 1, 0, len(seg) - 1)
    frac = ((arc - cum[k]) / seg[k])[:, None]
    pos = wp[k] + frac * (wp[k + 1] - wp[k])
    return Trajectory(wp, float(speed_kmh), float(interval_s), idx * interval_s, pos, arc)


def reference_trajectory(name, interval_s=SNAPSHOT_INTERVAL_S, scenario=None):
    try:
        start, legs, speed = REFERENCE_PATHS[name]
    except KeyError:
        raise ConfigError(f"unknown path {name!r}; choose from {sorted(REFERENCE_PATHS)}",
                          key="path") from None
    return make_trajectory(_legs_to_waypoints(start, legs), speed, interval_s, scenario)


@dataclass
class SimReport:
    """Per-snapshot trace of one policy run along one trajectory."""

    label: str
    interval_s: float
    times: np.ndarray
    positions: np.ndarray
    arc_m: np.ndarray
    cells: np.ndarray
    serving: np.ndarray
    power_dbm: np.ndarray
    outage_risk: np.ndarray
    events: list
    meets_target: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def energy_j(self):
        return energy(self)

    @property
    def ho_count(self):
        return sum(1 for e in self.events if e.trigger != "initial")

    @property
    def availability(self):
        if self.meets_target is None:
            return None
        return float(np.mean(self.meets_target))

    def table(self):
        """Per-snapshot CSV text; BS numbers are 1-based."""
        buf = io.StringIO()
        cols = "time_s,x_m,y_m,cell,serving_bs,power_dbm,outage_risk"
        has_av = self.meets_target is not None
        buf.write(cols + (",meets_target" if has_av else "") + "\n")
        for i in range(len(self.times)):
            row = [repr(float(self.times[i])), repr(float(self.positions[i, 0])),
                   repr(float(self.positions[i, 1])), str(int(self.cells[i])),
                   str(int(self.serving[i]) + 1), repr(float(self.power_dbm[i])),
                   str(int(self.outage_risk[i]))]
            if has_av:
                row.append(str(int(self.meets_target[i])))
            buf.write(",".join(row) + "\n")
        return buf.getvalue()

    def event_table(self):
        lines = ["time_s,x_m,y_m,previous_bs,new_bs,trigger"]
        for e in self.events:
            prev = "" if e.previous is None else str(e.previous + 1)
            x, y = (e.location + (math.nan, math.nan))[:2]
            lines.append(f"{e.time_s!r},{float(x)!r},{float(y)!r},{prev},{e.new + 1},{e.trigger}")
        return "\n".join(lines) + "\n"

    def summary(self):
        count, gap_s, gap_m = ho_stats(self)
        return {
            "label": self.label,
            "snapshots": int(len(self.times)),
            "duration_s": float(self.times[-1]),
            "energy_j": self.energy_j,
            "mean_power_dbm": float(np.mean(self.power_dbm)),
            "ho_count": count,
            "mean_ho_interval_s": None if math.isnan(gap_s) else gap_s,
            "mean_ho_distance_m": None if math.isnan(gap_m) else gap_m,
            "outage_risk_snapshots": int(np.count_nonzero(self.outage_risk)),
            "availability": self.availability,
            **self.meta,
        }

    def digest(self):
        h = hashlib.sha256(self.table().encode())
        h.update(self.event_table().encode())
        return h.hexdigest()


def _report(label, scenario, trajectory, serving, power, risk, events, meta=None):
    ix, iy = scenario.cell_of(trajectory.positions)
    return SimReport(label, trajectory.interval_s, trajectory.times, trajectory.positions,
                     trajectory.arc_m, iy * scenario.nx + ix, np.asarray(serving, dtype=int),
                     np.asarray(power, dtype=float), np.asarray(risk, dtype=bool), events,
                     meta=meta or {})


def run_proposed(scenario, maps, policy, trajectory):
    """Drive the hold-timer / hysteresis policy over every snapshot of ``trajectory``."""
    stack = map_stack(maps)
    if stack.shape[1:] != (scenario.ny, scenario.nx):
        raise ConfigError(f"maps are {stack.shape[1:]} but the scenario grid is "
                          f"({scenario.ny}, {scenario.nx})", key="maps")
    ix, iy = scenario.cell_of(trajectory.positions)
    n = len(trajectory)
    serving = np.empty(n, dtype=int)
    power = np.empty(n)
    risk = np.zeros(n, dtype=bool)
    events = []
    step = None
    for i in range(n):
        cell = (ix[i], iy[i])
        loc = tuple(trajectory.positions[i].tolist())
        t = float(trajectory.times[i])
        if step is None:
            step = initial_step(stack, policy, cell, t, loc)
        else:
            step = ho_step(step.state, policy, stack, cell, t, loc)
        if step.event is not None:
            events.append(step.event)
        serving[i] = step.state.serving
        power[i] = step.power_dbm
        risk[i] = step.outage_risk
    meta = {"policy": "proposed", "hold_s": policy.hold_s, "hysteresis_db": policy.hysteresis_db,
            "p_max_dbm": policy.p_max_dbm}
    return _report("proposed", scenario, trajectory, serving, power, risk, events, meta)


def _baseline_config(config):
    return _config.merge({**_config.DEFAULT_BASELINES, "gamma0_db": 10.0, "zeta": 1e-3,
                          "p_max_dbm": 50.0, "seed": 11}, config or {})


def _switch_events(serving, trajectory, trigger):
    events = [HoEvent(float(trajectory.times[0]), tuple(trajectory.positions[0].tolist()),
                      None, int(serving[0]), "initial")]
    for i in np.flatnonzero(np.diff(serving)) + 1:
        events.append(HoEvent(float(trajectory.times[i]), tuple(trajectory.positions[i].tolist()),
                              int(serving[i - 1]), int(serving[i]), trigger))
    return events


def _clamped(power, p_max):
    power = np.asarray(power, dtype=float)
    return np.minimum(power, p_max), power > p_max


def run_baseline(kind, scenario, trajectory, config=None, maps=None):
    """Simulate one reference policy along ``trajectory``.

    ``nearest`` serves from the closest BS at that BS's map power; ``classical``
    transmits at a fixed power and hands over after the serving SINR stays
    below gamma0 for longer than the time-to-trigger; ``genie`` serves every
    cell with the lowest power meeting the outage target on ground-truth samples.
    """
    cfg = _baseline_config(config)
    ix, iy = scenario.cell_of(trajectory.positions)
    flat = iy * scenario.nx + ix
    p_max = cfg["p_max_dbm"]
    target = QosTarget.from_db(cfg["gamma0_db"], cfg["zeta"])

    if kind == "nearest":
        if maps is None:
            raise ConfigError("the nearest-BS baseline needs power maps", key="maps")
        stack = map_stack(maps)
        serving = np.array([nearest_bs(scenario, p) for p in trajectory.positions])
        power, risk = _clamped(stack[serving, iy, ix], p_max)
        events = _switch_events(serving, trajectory, "nearest")
        meta = {"policy": "nearest"}
    elif kind == "genie":
        cells, inverse = np.unique(flat, return_inverse=True)
        table = genie_table(scenario, cells, target, cfg["genie_samples"], cfg["seed"])
        best = np.argmin(table, axis=1)
        serving = best[inverse]
        power, risk = _clamped(table[np.arange(len(cells)), best][inverse], p_max)
        events = _switch_events(serving, trajectory, "genie")
        meta = {"policy": "genie", "genie_samples": cfg["genie_samples"]}
    elif kind == "classical":
        p_fixed = cfg["classical_power_dbm"]
        centers = scenario.flat_to_xy(flat)
        draws = ground_truth_sinr(scenario, centers, 1, cfg["seed"],
                                  keys=np.arange(len(flat))).samples[:, :, 0]
        sinr = draws * db_to_lin(p_fixed - scenario.p0_dbm)
        serving = np.empty(len(flat), dtype=int)
        state = ClassicalState(int(np.argmax(sinr[:, 0])))
        events = [HoEvent(float(trajectory.times[0]), tuple(trajectory.positions[0].tolist()),
                          None, state.serving, "initial")]
        serving[0] = state.serving
        for i in range(1, len(flat)):
            state, ev = classical_ho_step(state, target.gamma0, cfg["ttt_s"], sinr[:, i],
                                          float(trajectory.times[i]), trajectory.interval_s,
                                          tuple(trajectory.positions[i].tolist()))
            if ev is not None:
                events.append(ev)
            serving[i] = state.serving
        power, risk = _clamped(np.full(len(flat), p_fixed), p_max)
        meta = {"policy": "classical", "power_dbm": p_fixed, "ttt_s": cfg["ttt_s"]}
    else:
        raise ConfigError(f"unknown baseline {kind!r}; choose nearest, classical or genie",
                          key="baseline")
    return _report(kind, scenario, trajectory, serving, power, risk, events, meta)


def genie_table(scenario, cells, target, n_samples, seed):
    """Genie power (dBm) for every (cell, BS) pair, shape (len(cells), B)."""
    cells = np.asarray(cells, dtype=np.int64)
    out = np.empty((len(cells), scenario.n_bs))
    for j, c in enumerate(cells):
        s = ground_truth_sinr(scenario, scenario.flat_to_xy([c]), n_samples, seed,
                              keys=[c]).samples
        for b in range(scenario.n_bs):
            out[j, b] = genie_power(s[b, 0], target, scenario.p0_dbm)
    return out


def energy(report):
    """Transmit energy in joules: sum of linear power times the snapshot interval."""
    return float(np.sum(db_to_lin(np.asarray(report.power_dbm) - 30.0)) * report.interval_s)


def ho_stats(report):
    """(handover count, mean time between handovers s, mean distance between handovers m).

    The initial selection is not a handover. Means need at least two
    handovers and are NaN otherwise.
    """
    hos = [e for e in report.events if e.trigger != "initial"]
    if len(hos) < 2:
        return len(hos), math.nan, math.nan
    times = np.array([e.time_s for e in hos])
    idx = np.searchsorted(report.times, times - 1e-12)
    arcs = report.arc_m[idx]
    return len(hos), float(np.mean(np.diff(times))), float(np.mean(np.diff(arcs)))


def _threads():
    return max(1, int(os.environ.get(THREADS_ENV, "1")))


def _map_jobs(fn, jobs):
    threads = _threads()
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def _outage_counts(scenario, cell, b, powers_dbm, gamma0, n, seed):
    s = ground_truth_sinr(scenario, scenario.flat_to_xy([cell]), n, seed, bs=[b],
                          keys=[cell]).samples[0, 0]
    s.sort()
    need = gamma0 / db_to_lin(np.asarray(powers_dbm) - scenario.p0_dbm)
    return np.searchsorted(s, need, side="left")


def _check_mc(mc_samples, zeta):
    if not isinstance(mc_samples, (int, np.integer)) or mc_samples < 10.0 / zeta - 1e-9:
        raise ConfigError(f"{mc_samples} samples cannot resolve outage {zeta:g} "
                          f"(need >= {math.ceil(10 / zeta)})", key="samples")


def path_availability(report, scenario, target, mc_samples=100_000, seed=0):
    """Mark snapshots whose cell-level Monte-Carlo outage at the sent power meets zeta.

    Clamped (outage-risk) snapshots never count as available. Fills
    ``report.meets_target`` and returns the availability fraction.
    """
    _check_mc(mc_samples, target.zeta)
    keys = np.stack([report.cells, report.serving], axis=1)
    pairs, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    jobs = []
    for j, (c, b) in enumerate(pairs):
        members = np.flatnonzero(inverse == j)
        powers, pinv = np.unique(report.power_dbm[members], return_inverse=True)
        jobs.append((int(c), int(b), members, powers, pinv.ravel()))

    def run(job):
        c, b, members, powers, pinv = job
        counts = _outage_counts(scenario, c, b, powers, target.gamma0, mc_samples, seed)
        return members, counts[pinv] / mc_samples <= target.zeta

    ok = np.zeros(len(report.times), dtype=bool)
    for members, good in _map_jobs(run, jobs):
        ok[members] = good
    report.meets_target = ok & ~report.outage_risk
    report.meta.update({"audit_samples": int(mc_samples), "audit_seed": int(seed),
                        "zeta": target.zeta})
    return report.availability


def stratified_cells(scenario, count, seed):
    """``count`` distinct flat cell indices, one per block of a near-square partition."""
    if not isinstance(count, (int, np.integer)) or count < 1:
        raise ConfigError("cell count must be a positive integer", key="cells")
    if count > scenario.n_cells:
        raise ConfigError(f"{count} cells requested but the grid has {scenario.n_cells}",
                          key="cells")
    rng = np.random.default_rng([scenario.seed, int(seed), 0xA0D])
    nbx = max(1, min(scenario.nx, round(math.sqrt(count * scenario.nx / scenario.ny))))
    nby = min(scenario.ny, math.ceil(count / nbx))
    while nbx * nby < count:
        nbx = min(scenario.nx, nbx + 1)
        nby = min(scenario.ny, math.ceil(count / nbx))
    xs = np.array_split(np.arange(scenario.nx), nbx)
    ys = np.array_split(np.arange(scenario.ny), nby)
    picks = np.array([int(rng.choice(by)) * scenario.nx + int(rng.choice(bx))
                      for by in ys for bx in xs])
    chosen = rng.choice(len(picks), size=count, replace=False)
    return np.sort(picks[chosen])


@dataclass
class AuditReport:
    cells: np.ndarray
    bs: np.ndarray
    power_dbm: np.ndarray
    outage_risk: np.ndarray
    outages: np.ndarray
    n_samples: int
    zeta: float
    ci_low: np.ndarray
    ci_high: np.ndarray
    seed: int

    @property
    def outage(self):
        return self.outages / self.n_samples

    @property
    def meets(self):
        return (self.outage <= self.zeta) & ~self.outage_risk

    @property
    def availability(self):
        return float(np.mean(self.meets))

    def table(self, scenario=None):
        head = "cell,x_m,y_m,bs,power_dbm,outage,ci_low,ci_high,meets_target"
        xy = (scenario.flat_to_xy(self.cells) if scenario is not None
              else np.full((len(self.cells), 2), math.nan))
        lines = [head]
        for i in range(len(self.cells)):
            lines.append(",".join([
                str(int(self.cells[i])), repr(float(xy[i, 0])), repr(float(xy[i, 1])),
                str(int(self.bs[i]) + 1), repr(float(self.power_dbm[i])),
                repr(float(self.outage[i])), repr(float(self.ci_low[i])),
                repr(float(self.ci_high[i])), str(int(self.meets[i]))]))
        return "\n".join(lines) + "\n"

    def summary(self):
        return {"cells": int(len(self.cells)), "samples_per_cell": int(self.n_samples),
                "zeta": self.zeta, "seed": self.seed, "availability": self.availability,
                "cells_meeting_target": int(np.count_nonzero(self.meets)),
                "outage_risk_cells": int(np.count_nonzero(self.outage_risk))}


def availability_audit(scenario, target, cells, mc_samples, seed, maps=None, bs=None,
                       power_dbm=None, p_max_dbm=None):
    """Monte-Carlo check of the outage target at audited cells.

    Power allocation comes from ``maps`` (minimum fused power and its BS at
    each cell) or explicitly from ``bs`` and ``power_dbm``. Fresh ground-truth
    samples at the allocated power give per-cell outage estimates with Wilson
    95% intervals; availability is the share of cells at or below zeta.
    """
    _check_mc(mc_samples, target.zeta)
    cells = np.asarray(cells, dtype=np.int64).ravel()
    if cells.size == 0:
        raise ConfigError("no cells to audit", key="cells")
    if np.any((cells < 0) | (cells >= scenario.n_cells)):
        raise DomainError("audited cell index outside the grid")
    if maps is not None:
        stack = map_stack(maps)
        iy, ix = np.divmod(cells, scenario.nx)
        column = stack[:, iy, ix]
        bs = np.argmin(column, axis=0)
        power_dbm = column[bs, np.arange(len(cells))]
    elif bs is None or power_dbm is None:
        raise ConfigError("give either maps or explicit bs and power_dbm", key="maps")
    bs = np.asarray(bs, dtype=int).ravel()
    power_dbm = np.asarray(power_dbm, dtype=float).ravel()
    p_max = scenario.p_max_dbm if p_max_dbm is None else p_max_dbm
    risk = power_dbm > p_max
    sent = np.minimum(power_dbm, p_max)

    def run(i):
        return int(_outage_counts(scenario, int(cells[i]), int(bs[i]), [sent[i]],
                                  target.gamma0, mc_samples, seed)[0])

    outages = np.array(_map_jobs(run, list(range(len(cells)))), dtype=np.int64)
    lo = np.empty(len(cells))
    hi = np.empty(len(cells))
    for i, k in enumerate(outages):
        ci = binomtest(int(k), int(mc_samples)).proportion_ci(0.95, method="wilson")
        lo[i], hi[i] = ci.low, ci.high
    return AuditReport(cells, bs, sent, risk, outages, int(mc_samples), target.zeta, lo, hi,
                       int(seed))
