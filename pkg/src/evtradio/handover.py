"""BS selection and handover decision rules driven by power maps."""

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .channel import db_to_lin
from .errors import ConfigError, DomainError

TRIGGERS = ("initial", "power-saving", "p_max-violation")
# triggers emitted by the baseline deciders
BASELINE_TRIGGERS = ("nearest", "ttt", "genie")
# slack on timer comparisons so that snapshot times built as i * dt behave exactly
TIME_TOL = 1e-9


@dataclass(frozen=True)
class HoPolicy:
    hold_s: float = 1.0
    hysteresis_db: float = 3.0
    p_max_dbm: float = 50.0

    def __post_init__(self):
        if not self.hold_s >= 0:
            raise ConfigError(f"hold timer must be >= 0 s, got {self.hold_s}", key="dt")
        if not self.hysteresis_db >= 0:
            raise ConfigError(f"hysteresis must be >= 0 dB, got {self.hysteresis_db}", key="dp")
        if not math.isfinite(self.p_max_dbm):
            raise ConfigError("p_max must be finite", key="pmax")


@dataclass(frozen=True)
class HoState:
    serving: int
    last_ho_s: float
    n_bs: int

    def __post_init__(self):
        if not 0 <= self.serving < self.n_bs:
            raise DomainError(f"serving BS {self.serving} outside 0..{self.n_bs - 1}")

    @property
    def activation(self):
        a = np.zeros(self.n_bs, dtype=int)
        a[self.serving] = 1
        return a


@dataclass(frozen=True)
class HoEvent:
    time_s: float
    location: tuple
    previous: int | None
    new: int
    trigger: str

    def __post_init__(self):
        if self.trigger not in TRIGGERS + BASELINE_TRIGGERS:
            raise ConfigError(f"unknown trigger {self.trigger!r}", key="trigger")
        if self.trigger == "initial":
            if self.previous is not None:
                raise DomainError("initial event has no previous BS")
        elif self.previous == self.new:
            raise DomainError("handover must change the serving BS")


class Step(NamedTuple):
    state: HoState
    power_dbm: float
    event: HoEvent | None
    outage_risk: bool


def map_stack(maps, variant="fused"):
    """(B, ny, nx) array from a list of PowerMap objects or grids."""
    if isinstance(maps, np.ndarray) and maps.ndim == 3:
        return maps
    grids = [m.variant(variant) if hasattr(m, "variant") else np.asarray(m, dtype=float)
             for m in maps]
    if not grids:
        raise ConfigError("no maps given", key="maps")
    shapes = {g.shape for g in grids}
    if len(shapes) != 1:
        raise ConfigError(f"maps disagree in shape: {sorted(shapes)}", key="maps")
    return np.stack(grids)


def _check_cell(stack, cell):
    ix, iy = int(cell[0]), int(cell[1])
    _, ny, nx = stack.shape
    if not (0 <= ix < nx and 0 <= iy < ny):
        raise DomainError(f"cell ({ix}, {iy}) outside the {nx}x{ny} grid")
    return ix, iy


def select_bs(maps, cell):
    """(minimum power dBm, BS index) at ``cell=(ix, iy)``; ties go to the lowest index."""
    stack = map_stack(maps)
    ix, iy = _check_cell(stack, cell)
    column = stack[:, iy, ix]
    b = int(np.argmin(column))
    return float(column[b]), b


def _clamp(power, p_max):
    if power > p_max:
        return p_max, True
    return power, False


def initial_step(maps, policy, cell, t, location=()):
    stack = map_stack(maps)
    _, b = select_bs(stack, cell)
    state = HoState(b, float(t), stack.shape[0])
    power, risk = _clamp(float(stack[b, cell[1], cell[0]]), policy.p_max_dbm)
    return Step(state, power, HoEvent(float(t), tuple(location), None, b, "initial"), risk)


def ho_step(state, policy, maps, cell, t, location=()):
    """One pass of the hold-timer / hysteresis decision at time ``t``.

    A re-selection is triggered when the serving BS needs more than p_max, or
    when the hold timer has expired and another BS saves at least the
    hysteresis margin. The timer restarts only when the serving BS changes.
    """
    if t < state.last_ho_s - TIME_TOL:
        raise DomainError(f"time {t} precedes the last handover at {state.last_ho_s}")
    stack = map_stack(maps)
    ix, iy = _check_cell(stack, cell)
    serving_power = float(stack[state.serving, iy, ix])
    p_min, best = select_bs(stack, (ix, iy))

    trigger = None
    if serving_power > policy.p_max_dbm:
        trigger = "p_max-violation"
    elif (t - state.last_ho_s >= policy.hold_s - TIME_TOL
          and serving_power - p_min >= policy.hysteresis_db):
        trigger = "power-saving"

    event = None
    if trigger is not None and best != state.serving:
        event = HoEvent(float(t), tuple(location), state.serving, best, trigger)
        state = replace(state, serving=best, last_ho_s=float(t))
    power, risk = _clamp(float(stack[state.serving, iy, ix]), policy.p_max_dbm)
    return Step(state, power, event, risk)


def nearest_bs(scenario, location):
    """Index of the BS at the smallest 3-D distance; ties go to the lowest index."""
    x, y = float(location[0]), float(location[1])
    pos = scenario.serving
    d2 = (pos[:, 0] - x) ** 2 + (pos[:, 1] - y) ** 2 + (pos[:, 2] - scenario.ue_height) ** 2
    return int(np.argmin(d2))


@dataclass(frozen=True)
class ClassicalState:
    serving: int
    below_count: int = 0


def classical_ho_step(state, gamma0, ttt_s, sinr_now, t, interval_s, location=()):
    """SINR-threshold handover with a time-to-trigger.

    Each snapshot below ``gamma0`` adds ``interval_s`` to the serving link's
    degradation timer; once it strictly exceeds ``ttt_s`` the UE moves to the
    BS with the highest current SINR and the timer resets.
    """
    if not ttt_s > 0:
        raise ConfigError(f"time-to-trigger must be > 0, got {ttt_s}", key="ttt")
    sinr_now = np.asarray(sinr_now, dtype=float)
    if sinr_now[state.serving] >= gamma0:
        return ClassicalState(state.serving, 0), None
    count = state.below_count + 1
    if count * interval_s <= ttt_s + TIME_TOL:
        return ClassicalState(state.serving, count), None
    best = int(np.argmax(sinr_now))
    if best == state.serving:
        return ClassicalState(state.serving, 0), None
    return ClassicalState(best, 0), HoEvent(float(t), tuple(location), state.serving, best, "ttt")


def outage_count(samples, power_dbm, p0_dbm, gamma0):
    """Number of reference-power samples that fall below ``gamma0`` at ``power_dbm``."""
    scale = db_to_lin(power_dbm - p0_dbm)
    return int(np.count_nonzero(np.asarray(samples) * scale < gamma0))


def genie_power(samples, target, p0_dbm=0.0):
    """Smallest power (dBm) whose scaled empirical outage frequency is <= zeta.

    With k = floor(zeta * n) outages allowed, the (k+1)-th smallest sample
    must reach gamma0 after scaling.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < 10.0 / target.zeta - 1e-9:
        raise ConfigError(f"{n} samples cannot resolve outage {target.zeta:g} "
                          f"(need >= {math.ceil(10 / target.zeta)})", key="genie_samples")
    k = math.floor(target.zeta * n + 1e-9)
    if k >= n:
        return -math.inf
    p = p0_dbm + 10.0 * math.log10(target.gamma0 / x[k])
    # guard against round-off in the dB round trip
    # (x is sorted, so more than k outages means x[k] itself still falls short)
    while x[k] * db_to_lin(p - p0_dbm) < target.gamma0:
        p = math.nextafter(p, math.inf)
    return p
