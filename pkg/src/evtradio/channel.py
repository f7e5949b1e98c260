"""Scenario geometry and the synthetic ground-truth SINR generator.

Large-scale effects (log-distance path loss, correlated log-normal shadowing,
Rician K-factor) are frozen per scenario seed. Only the small-scale fading is
redrawn for every sample, so the samples at one location are i.i.d.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.ndimage import gaussian_filter
from scipy.linalg import cholesky
from scipy.spatial.distance import cdist
from scipy.special import ndtr

from . import config as _config
from .errors import ConfigError

SPEED_OF_LIGHT = 299_792_458.0
THERMAL_NOISE_DBM_HZ = -173.8
# largest lattice for the exact Cholesky synthesis of the spatial fields
MAX_LATTICE_NODES = 4096


def db_to_lin(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


def lin_to_db(x):
    return 10.0 * np.log10(x)


@dataclass(frozen=True)
class LinkModel:
    exponent: float
    extra_loss_db: float
    shadow_std_db: float
    decorrelation_m: float


@dataclass(frozen=True)
class KFactorModel:
    min_db: float
    max_db: float
    decorrelation_m: float


@dataclass(eq=False)
class Scenario:
    half_x: float
    half_y: float
    nx: int
    ny: int
    serving: np.ndarray  # (B, 3) x, y, height
    interferers: np.ndarray  # (B', 3)
    carrier_hz: float
    bandwidth_hz: float
    noise_figure_db: float
    p0_dbm: float
    p_max_dbm: float
    interferer_power_dbm: float
    ue_height: float
    serving_link: LinkModel
    interferer_link: LinkModel
    k_factor: KFactorModel
    seed: int
    config: dict = field(default_factory=dict, repr=False)

    @property
    def n_bs(self):
        return len(self.serving)

    @property
    def n_interferers(self):
        return len(self.interferers)

    @property
    def noise_dbm(self):
        return THERMAL_NOISE_DBM_HZ + 10.0 * np.log10(self.bandwidth_hz) + self.noise_figure_db

    @property
    def cell_size(self):
        """(dx, dy) cell spacing in metres."""
        return 2.0 * self.half_x / self.nx, 2.0 * self.half_y / self.ny

    @property
    def n_cells(self):
        return self.nx * self.ny

    @property
    def x_centers(self):
        dx, _ = self.cell_size
        return -self.half_x + (np.arange(self.nx) + 0.5) * dx

    @property
    def y_centers(self):
        _, dy = self.cell_size
        return -self.half_y + (np.arange(self.ny) + 0.5) * dy

    def cell_centers(self):
        """All cell centres, shape (ny*nx, 2), row-major with row 0 at minimum y."""
        xx, yy = np.meshgrid(self.x_centers, self.y_centers)
        return np.column_stack([xx.ravel(), yy.ravel()])

    def flat_to_xy(self, flat):
        flat = np.asarray(flat)
        iy, ix = np.divmod(flat, self.nx)
        return np.column_stack([self.x_centers[ix], self.y_centers[iy]])

    def cell_of(self, points):
        """Nearest cell (ix, iy) for each point; points on the border map inward."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        dx, dy = self.cell_size
        ix = np.floor((pts[:, 0] + self.half_x) / dx).astype(int)
        iy = np.floor((pts[:, 1] + self.half_y) / dy).astype(int)
        return np.clip(ix, 0, self.nx - 1), np.clip(iy, 0, self.ny - 1)

    def flat_index(self, points):
        ix, iy = self.cell_of(points)
        return iy * self.nx + ix

    def contains(self, points, tol=1e-9):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return (np.abs(pts[:, 0]) <= self.half_x + tol) & (np.abs(pts[:, 1]) <= self.half_y + tol)

    def path_loss_db(self, link, tx, points):
        """Log-distance path loss between transmitters (K, 3) and points (M, 2) -> (K, M)."""
        pts = np.atleast_2d(points)
        d = np.sqrt(
            (tx[:, None, 0] - pts[None, :, 0]) ** 2
            + (tx[:, None, 1] - pts[None, :, 1]) ** 2
            + (tx[:, None, 2] - self.ue_height) ** 2
        )
        d = np.maximum(d, 1.0)
        fspl_1m = 20.0 * np.log10(4.0 * np.pi * self.carrier_hz / SPEED_OF_LIGHT)
        return fspl_1m + link.extra_loss_db + 10.0 * link.exponent * np.log10(d)

    # -- frozen large-scale fields -------------------------------------------------

    @cached_property
    def _lattice(self):
        xs, ys = self.x_centers, self.y_centers
        if self.nx * self.ny > MAX_LATTICE_NODES:
            f = np.sqrt(self.nx * self.ny / MAX_LATTICE_NODES)
            xs = np.linspace(xs[0], xs[-1], max(2, int(self.nx / f)))
            ys = np.linspace(ys[0], ys[-1], max(2, int(self.ny / f)))
        return xs, ys

    def _unit_fields(self, decorrelation_m, count, stream):
        """``count`` unit-variance Gaussian fields with exponential correlation on the lattice."""
        xs, ys = self._lattice
        shape = (count, len(ys), len(xs))
        if count == 0 or decorrelation_m <= 0:
            return np.zeros(shape)
        xx, yy = np.meshgrid(xs, ys)
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        d = cdist(pts, pts)
        corr = np.exp(-d / decorrelation_m)
        corr[np.diag_indices_from(corr)] += 1e-10
        lower = cholesky(corr, lower=True, check_finite=False)
        rng = np.random.default_rng([self.seed, stream])
        z = rng.standard_normal((len(pts), count))
        return (lower @ z).T.reshape(shape)

    def _smooth_fields(self, length_m, count, stream):
        """Unit-variance fields with squared-exponential correlation exp(-d^2 / (2 L^2)).

        White noise on a padded lattice filtered by a Gaussian of standard
        deviation L / sqrt(2), rescaled to unit variance.
        """
        xs, ys = self._lattice
        shape = (count, len(ys), len(xs))
        if count == 0 or length_m <= 0:
            return np.zeros(shape)
        step = (xs[1] - xs[0], ys[1] - ys[0])
        sig = (length_m / np.sqrt(2.0) / step[1], length_m / np.sqrt(2.0) / step[0])
        pad = [int(np.ceil(4 * s)) for s in sig]
        impulse = np.zeros((2 * pad[0] + 1, 2 * pad[1] + 1))
        impulse[pad[0], pad[1]] = 1.0
        norm = np.sqrt((gaussian_filter(impulse, sig, mode="constant") ** 2).sum())
        rng = np.random.default_rng([self.seed, stream])
        out = np.empty(shape)
        for k in range(count):
            noise = rng.standard_normal((len(ys) + 2 * pad[0], len(xs) + 2 * pad[1]))
            sm = gaussian_filter(noise, sig, mode="constant")
            out[k] = sm[pad[0]:pad[0] + len(ys), pad[1]:pad[1] + len(xs)] / norm
        return out

    @cached_property
    def _fields(self):
        sl, il, km = self.serving_link, self.interferer_link, self.k_factor
        shadow_s = sl.shadow_std_db * self._unit_fields(sl.decorrelation_m, self.n_bs, 1)
        shadow_i = il.shadow_std_db * self._unit_fields(il.decorrelation_m, self.n_interferers, 2)
        if km.max_db > km.min_db:
            u = ndtr(self._smooth_fields(km.decorrelation_m, self.n_bs, 3))
            k_db = km.min_db + (km.max_db - km.min_db) * u
        else:
            xs, ys = self._lattice
            k_db = np.full((self.n_bs, len(ys), len(xs)), km.min_db)
        return {"shadow_serving": shadow_s, "shadow_interferer": shadow_i, "k_db": k_db}

    def _sample_field(self, name, points):
        stack = self._fields[name]
        xs, ys = self._lattice
        pts = np.atleast_2d(points)
        q = np.column_stack([
            np.clip(pts[:, 1], ys[0], ys[-1]),
            np.clip(pts[:, 0], xs[0], xs[-1]),
        ])
        out = np.empty((len(stack), len(pts)))
        for k, grid in enumerate(stack):
            out[k] = RegularGridInterpolator((ys, xs), grid, method="linear")(q)
        return out

    def large_scale(self, points):
        """Frozen large-scale quantities at ``points``.

        Returns a dict with linear channel gains ``serving_gain`` (B, M) and
        ``interferer_gain`` (B', M) and linear Rician factors ``k`` (B, M).
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        g_s = -self.path_loss_db(self.serving_link, self.serving, pts)
        g_s = g_s + self._sample_field("shadow_serving", pts)
        if self.n_interferers:
            g_i = -self.path_loss_db(self.interferer_link, self.interferers, pts)
            g_i = g_i + self._sample_field("shadow_interferer", pts)
        else:
            g_i = np.zeros((0, len(pts)))
        k = db_to_lin(self._sample_field("k_db", pts))
        return {"serving_gain": db_to_lin(g_s), "interferer_gain": db_to_lin(g_i), "k": k}


@dataclass
class SinrSampleSet:
    """Linear SINR samples at the reference power, shape (len(bs), M, N)."""

    samples: np.ndarray
    locations: np.ndarray
    bs: tuple

    @property
    def n(self):
        return self.samples.shape[-1]

    def of(self, b, m):
        return self.samples[self.bs.index(b), m]


def _as_float(cfg, key, path, positive=False, nonneg=False):
    try:
        value = float(cfg[key])
    except KeyError:
        raise ConfigError("missing", key=f"{path}.{key}") from None
    except (TypeError, ValueError):
        raise ConfigError(f"expected a number, got {cfg[key]!r}", key=f"{path}.{key}") from None
    if not np.isfinite(value):
        raise ConfigError("must be finite", key=f"{path}.{key}")
    if positive and value <= 0:
        raise ConfigError("must be > 0", key=f"{path}.{key}")
    if nonneg and value < 0:
        raise ConfigError("must be >= 0", key=f"{path}.{key}")
    return value


def _positions(raw, key):
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError("expected a list of [x, y, height] triples", key=key) from None
    if arr.size == 0:
        return np.zeros((0, 3))
    if arr.ndim != 2 or arr.shape[1] != 3 or not np.all(np.isfinite(arr)):
        raise ConfigError("expected a list of [x, y, height] triples", key=key)
    return arr


def build_scenario(cfg=None, profile="desk"):
    """Build a validated :class:`Scenario` from a (partial) config mapping.

    Missing keys are filled from the named profile; unknown keys raise
    :class:`ConfigError` naming the offending key.
    """
    cfg = _config.scenario_config(profile, cfg or {})
    area, grid, radio, ch = cfg["area"], cfg["grid"], cfg["radio"], cfg["channel"]
    half_x = _as_float(area, "half_x_m", "area", positive=True)
    half_y = _as_float(area, "half_y_m", "area", positive=True)
    nx, ny = grid["nx"], grid["ny"]
    for name, v in (("nx", nx), ("ny", ny)):
        if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 2:
            raise ConfigError("grid dimension must be an integer >= 2", key=f"grid.{name}")

    serving = _positions(cfg["serving_bs"], "serving_bs")
    interferers = _positions(cfg["interferers"], "interferers")
    if len(serving) < 1:
        raise ConfigError("at least one serving BS is required", key="serving_bs")
    for key, arr in (("serving_bs", serving), ("interferers", interferers)):
        outside = (np.abs(arr[:, 0]) > 10 * half_x) | (np.abs(arr[:, 1]) > 10 * half_y)
        if np.any(outside):
            i = int(np.flatnonzero(outside)[0])
            raise ConfigError(f"entry {i} at {arr[i, :2].tolist()} is outside the sanity box "
                              f"(10x the area)", key=key)

    def link(name):
        c = ch[name]
        return LinkModel(
            exponent=_as_float(c, "exponent", f"channel.{name}", positive=True),
            extra_loss_db=_as_float(c, "extra_loss_db", f"channel.{name}"),
            shadow_std_db=_as_float(c, "shadow_std_db", f"channel.{name}", nonneg=True),
            decorrelation_m=_as_float(c, "decorrelation_m", f"channel.{name}", nonneg=True),
        )

    kc = ch["k_factor"]
    kmodel = KFactorModel(
        min_db=_as_float(kc, "min_db", "channel.k_factor"),
        max_db=_as_float(kc, "max_db", "channel.k_factor"),
        decorrelation_m=_as_float(kc, "decorrelation_m", "channel.k_factor", nonneg=True),
    )
    if kmodel.max_db < kmodel.min_db:
        raise ConfigError("max_db < min_db", key="channel.k_factor")
    seed = cfg["seed"]
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ConfigError("must be a non-negative integer", key="seed")

    return Scenario(
        half_x=half_x, half_y=half_y, nx=int(nx), ny=int(ny),
        serving=serving, interferers=interferers,
        carrier_hz=_as_float(radio, "carrier_hz", "radio", positive=True),
        bandwidth_hz=_as_float(radio, "bandwidth_hz", "radio", positive=True),
        noise_figure_db=_as_float(radio, "noise_figure_db", "radio"),
        p0_dbm=_as_float(radio, "p0_dbm", "radio"),
        p_max_dbm=_as_float(radio, "p_max_dbm", "radio"),
        interferer_power_dbm=_as_float(radio, "interferer_power_dbm", "radio"),
        ue_height=_as_float(radio, "ue_height_m", "radio", nonneg=True),
        serving_link=link("serving"), interferer_link=link("interferer"),
        k_factor=kmodel, seed=int(seed), config=cfg,
    )


def load_scenario(path, profile="desk"):
    return build_scenario(_config.read_config_file(path), profile=profile)


def ground_truth_sinr(scenario, locations, n, seed, bs=None, keys=None):
    """Draw ``n`` i.i.d. SINR samples per (BS, location) at the reference power p0.

    Every (BS, key) pair owns an independent random stream derived from
    ``(scenario.seed, seed, b, key)``; ``keys`` defaults to the location
    indices. Passing flat cell indices as keys makes draws for a cell
    independent of which other cells are requested alongside it.
    """
    locs = np.atleast_2d(np.asarray(locations, dtype=float))
    if n < 1:
        raise ConfigError("sample count must be >= 1", key="n")
    if locs.shape[1] != 2:
        raise ConfigError("locations must be (M, 2)", key="locations")
    bad = ~scenario.contains(locs)
    if np.any(bad):
        raise ConfigError(f"location {locs[np.flatnonzero(bad)[0]].tolist()} is outside the area",
                          key="locations")
    bs = tuple(range(scenario.n_bs)) if bs is None else tuple(int(b) for b in np.atleast_1d(bs))
    keys = np.arange(len(locs)) if keys is None else np.asarray(keys, dtype=np.int64)

    ls = scenario.large_scale(locs)
    p0 = db_to_lin(scenario.p0_dbm)
    p_int = db_to_lin(scenario.interferer_power_dbm)
    noise = db_to_lin(scenario.noise_dbm)
    out = np.empty((len(bs), len(locs), int(n)))
    for i, b in enumerate(bs):
        for m in range(len(locs)):
            rng = np.random.default_rng([scenario.seed, int(seed), b, int(keys[m])])
            k = ls["k"][b, m]
            los = np.sqrt(k / (k + 1.0))
            s = np.sqrt(0.5 / (k + 1.0))
            w = rng.standard_normal((2, int(n)))
            fading = (los + s * w[0]) ** 2 + (s * w[1]) ** 2
            interf = rng.standard_exponential((scenario.n_interferers, int(n)))
            denom = p_int * (ls["interferer_gain"][:, m, None] * interf).sum(axis=0) + noise
            out[i, m] = p0 * ls["serving_gain"][b, m] * fading / denom
    return SinrSampleSet(samples=out, locations=locs, bs=bs)


def sample_grid_locations(scenario, m, seed):
    """``m`` distinct cell centres drawn uniformly without replacement."""
    if not isinstance(m, (int, np.integer)) or m < 1:
        raise ConfigError("location count must be a positive integer", key="n_locations")
    if m > scenario.n_cells:
        raise ConfigError(f"{m} locations requested but the grid has {scenario.n_cells} cells",
                          key="n_locations")
    rng = np.random.default_rng([scenario.seed, int(seed), 0x10C])
    flat = np.sort(rng.choice(scenario.n_cells, size=int(m), replace=False))
    return scenario.flat_to_xy(flat)
