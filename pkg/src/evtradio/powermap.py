"""Minimum-transmit-power maps: power scaling, smoothing, fusion and I/O."""

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as _config
from .channel import ground_truth_sinr, sample_grid_locations
from .errors import ConfigError, DomainError, MetadataMismatchError
from .evt import QosTarget, expm1_ratio, fit_tail
from .krige import (ParamObservations, fit_hyperparams, predict, threshold_noise_variance,
                    threshold_quantile)

VARIANTS = ("raw", "filtered", "fused")
THREADS_ENV = "EVTRADIO_THREADS"


@dataclass(frozen=True)
class FilterSpec:
    theta: float

    def __post_init__(self):
        if not self.theta > 0:
            raise ConfigError(f"filter width must be > 0, got {self.theta}", key="theta")

    @property
    def radius(self):
        return math.ceil(2.0 * self.theta)


@dataclass
class PowerMap:
    """Per-BS grids of minimum transmit power in dBm, indexed [iy, ix]."""

    bs: int
    spacing: tuple
    raw: np.ndarray
    filtered: np.ndarray
    fused: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.raw.shape

    def variant(self, name):
        if name not in VARIANTS:
            raise ConfigError(f"unknown map variant {name!r}", key="variant")
        return getattr(self, name)


def log_kappa(threshold, scale, shape, rho, target):
    """ln of the power scaling factor that puts the modelled outage at ``zeta``."""
    target.check_against(rho)
    scale = np.asarray(scale, dtype=float)
    if np.any(~(scale > 0)):
        raise DomainError("GPD scale must be > 0")
    shape = np.asarray(shape, dtype=float)
    neg_log_q = -math.log(target.zeta / (1.0 - rho))
    # sigma/xi * ((zeta/(1-rho))^-xi - 1) = sigma * ln((1-rho)/zeta) * expm1(u)/u;
    # expm1_ratio switches to its series near u = 0, so xi -> 0 gives the exponential limit
    bracket = scale * neg_log_q * expm1_ratio(shape * neg_log_q)
    return math.log(target.gamma0) + bracket + np.asarray(threshold, dtype=float)


def power_scaling(tail, target):
    """Linear scaling kappa such that the shifted tail meets the outage target."""
    return float(np.exp(log_kappa(tail.threshold, tail.scale, tail.shape, tail.rho, target)))


def build_power_map(fields, target, rho, tau, p0_dbm, grid_shape, direction="upper"):
    """Raw minimum-power grid (dBm) from the predictive parameter fields of one BS.

    ``fields`` maps threshold/scale/shape to :class:`PredictiveField` over the
    flattened grid (row-major, row 0 at minimum y).
    """
    ny, nx = grid_shape
    mu_tau = threshold_quantile(fields["threshold"].mean, fields["threshold"].variance, tau,
                                direction)
    scale = fields["scale"].mean
    shape = fields["shape"].mean
    for arr in (mu_tau, scale, shape):
        if arr.size != nx * ny:
            raise ConfigError(f"field has {arr.size} cells, grid has {nx * ny}", key="fields")
    bad = np.flatnonzero(~(scale > 0))
    if bad.size:
        iy, ix = divmod(int(bad[0]), nx)
        raise DomainError(f"predicted GPD scale {scale[bad[0]]:.4g} <= 0 at cell (ix={ix}, iy={iy})")
    lk = log_kappa(mu_tau, scale, shape, rho, target)
    return (p0_dbm + 10.0 * lk / math.log(10.0)).reshape(ny, nx)


def gaussian_kernel(spec):
    """Unnormalised isotropic Gaussian weights over offsets [-C, C]^2."""
    c = spec.radius
    m = np.arange(-c, c + 1, dtype=float)
    mm, nn = np.meshgrid(m, m, indexing="ij")
    return np.exp(-(mm**2 + nn**2) / (2.0 * spec.theta**2)) / (2.0 * math.pi * spec.theta**2)


def filter_map(grid, spec, domain="db"):
    """Gaussian smoothing normalised by the in-bounds kernel weight.

    ``domain="linear"`` filters milliwatts instead of dBm.
    """
    base = np.asarray(grid, dtype=float)
    c = spec.radius
    if base.ndim != 2 or min(base.shape) < 2 * c + 1:
        raise ConfigError(f"grid {base.shape} smaller than the {2 * c + 1}-cell kernel",
                          key="theta")
    if domain == "linear":
        p = 10.0 ** (base / 10.0)
    elif domain == "db":
        p = base
    else:
        raise ConfigError(f"filter domain must be 'db' or 'linear', got {domain!r}",
                          key="filter_domain")
    g = gaussian_kernel(spec)
    g = g / g[c, c]
    ny, nx = p.shape
    padded = np.pad(p, c)
    mask = np.pad(np.ones_like(p), c)
    # accumulate deviations from the centre cell, so constant regions come back
    # bit for bit and a vanishing-width kernel is an exact identity
    acc = np.zeros_like(p)
    wsum = np.zeros_like(p)
    # symmetric kernel, so correlation == convolution
    for i in range(2 * c + 1):
        for j in range(2 * c + 1):
            w = g[i, j]
            if w == 0.0:
                continue
            m = mask[i:i + ny, j:j + nx]
            acc += w * m * (padded[i:i + ny, j:j + nx] - p)
            wsum += w * m
    if domain == "linear":
        return base + 10.0 / np.log(10.0) * np.log1p(acc / (wsum * p))
    return p + acc / wsum


def fuse(raw, filtered):
    raw = np.asarray(raw)
    filtered = np.asarray(filtered)
    if raw.shape != filtered.shape:
        raise ConfigError(f"shape mismatch {raw.shape} vs {filtered.shape}", key="maps")
    return np.maximum(raw, filtered)


# -- map generation -------------------------------------------------------------------

@dataclass
class MapSet:
    maps: list
    observations: list
    hypers: list
    predictions: list
    params: dict
    scenario_config: dict


def _fit_bs(scenario, b, locs, params):
    rho = params["rho"]
    n = params["n_samples"]
    keys = scenario.flat_index(locs)
    thr = np.empty(len(locs))
    scl = np.empty(len(locs))
    shp = np.empty(len(locs))
    chunk = max(1, 4_000_000 // n)
    for start in range(0, len(locs), chunk):
        sl = slice(start, start + chunk)
        s = ground_truth_sinr(scenario, locs[sl], n, params["seed"], bs=[b], keys=keys[sl])
        for i, samples in enumerate(s.samples[0]):
            t = fit_tail(samples, rho)
            thr[start + i], scl[start + i], shp[start + i] = t.threshold, t.scale, t.shape
    return ParamObservations(locs, thr, scl, shp)


def _build_bs(scenario, b, locs, params, target):
    obs = _fit_bs(scenario, b, locs, params)
    # the empirical threshold carries known sampling noise; never interpolate below it
    floor = float(np.mean(threshold_noise_variance(obs.scale, params["n_samples"], params["rho"])))
    hypers = fit_hyperparams(obs, noise_floors={"threshold": floor})
    fields = predict(obs, hypers, scenario.cell_centers())
    raw = build_power_map(fields, target, params["rho"], params["tau"], scenario.p0_dbm,
                          (scenario.ny, scenario.nx), params["threshold_quantile"])
    if params["theta"] > 0:
        filtered = filter_map(raw, FilterSpec(params["theta"]), params["filter_domain"])
    else:
        filtered = raw.copy()
    pm = PowerMap(b, scenario.cell_size, raw, filtered, fuse(raw, filtered))
    return pm, obs, hypers, fields


def generate_maps(scenario, params=None):
    """Run the full map-generation pipeline for every BS of ``scenario``.

    ``params`` overrides :data:`config.DEFAULT_MAPS` (rho, tau, zeta, gamma0_db,
    theta, n_samples, n_locations, seed, ...). ``theta=0`` disables filtering.
    """
    params = _config.merge(_config.DEFAULT_MAPS, params or {})
    target = QosTarget.from_db(params["gamma0_db"], params["zeta"])
    target.check_against(params["rho"])
    m = params["n_locations"]
    if params["shared_locations"]:
        shared = sample_grid_locations(scenario, m, params["seed"])
        locations = [shared] * scenario.n_bs
    else:
        locations = [sample_grid_locations(scenario, m, params["seed"] * 1000 + b + 1)
                     for b in range(scenario.n_bs)]
    _ = scenario.large_scale(locations[0][:1])  # realise the cached fields before threading

    threads = max(1, int(os.environ.get(THREADS_ENV, "1")))
    jobs = [(scenario, b, locations[b], params, target) for b in range(scenario.n_bs)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(lambda a: _build_bs(*a), jobs))
    else:
        results = [_build_bs(*a) for a in jobs]

    meta = {
        "theta": params["theta"], "zeta": params["zeta"], "gamma0_db": params["gamma0_db"],
        "rho": params["rho"], "tau": params["tau"], "seed": params["seed"],
        "scenario_seed": scenario.seed, "filter_domain": params["filter_domain"],
        "threshold_quantile": params["threshold_quantile"],
    }
    maps = []
    for pm, *_ in results:
        pm.meta = dict(meta)
        maps.append(pm)
    return MapSet(
        maps=maps,
        observations=[r[1] for r in results],
        hypers=[r[2] for r in results],
        predictions=[r[3] for r in results],
        params=params,
        scenario_config=scenario.config,
    )


# -- persistence ---------------------------------------------------------------------

def map_filename(bs, variant):
    return f"map_bs{bs + 1}_{variant}.csv"


def write_grid_csv(path, grid):
    """Row-major CSV of a grid with a one-line ``# ny=.. nx=..`` header; floats round-trip."""
    ny, nx = grid.shape
    lines = [f"# ny={ny} nx={nx}"]
    lines += [",".join(repr(v) for v in row) for row in grid.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_grid_csv(path):
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("#"):
        raise MetadataMismatchError(f"{path}: missing grid header line", key="map")
    try:
        dims = dict(tok.split("=") for tok in text[0][1:].split())
        ny, nx = int(dims["ny"]), int(dims["nx"])
    except (ValueError, KeyError):
        raise MetadataMismatchError(f"{path}: malformed header {text[0]!r}", key="map") from None
    rows = [[float(v) for v in line.split(",")] for line in text[1:] if line]
    grid = np.array(rows, dtype=float)
    if grid.shape != (ny, nx):
        raise MetadataMismatchError(f"{path}: header says {ny}x{nx}, data is {grid.shape}",
                                    key="map")
    return grid


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save_maps(mapset, outdir, manifest="manifest.json"):
    """Write every map variant plus sidecars and fitted-parameter tables; returns paths."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for pm in mapset.maps:
        ny, nx = pm.shape
        for variant in VARIANTS:
            path = out / map_filename(pm.bs, variant)
            write_grid_csv(path, pm.variant(variant))
            side = {**pm.meta, "bs": pm.bs + 1, "variant": variant, "nx": nx, "ny": ny,
                    "dx_m": pm.spacing[0], "dy_m": pm.spacing[1], "manifest": manifest}
            _dump_json(path.with_suffix(".json"), side)
            written += [path, path.with_suffix(".json")]
    for b, (obs, hyp, pred) in enumerate(zip(mapset.observations, mapset.hypers,
                                              mapset.predictions)):
        rows = ["x_m,y_m,threshold,scale,shape"]
        for (x, y), u, s, e in zip(obs.locations, obs.threshold, obs.scale, obs.shape):
            rows.append(",".join(repr(float(v)) for v in (x, y, u, s, e)))
        p = out / f"params_bs{b + 1}.csv"
        p.write_text("\n".join(rows) + "\n")
        h = out / f"hyper_bs{b + 1}.json"
        _dump_json(h, {k: v.as_dict() for k, v in hyp.items()})
        written += [p, h]
    _dump_json(out / "scenario.json", mapset.scenario_config)
    written.append(out / "scenario.json")
    return written


def load_map(csv_path):
    """Read one map variant and validate it against its sidecar."""
    csv_path = Path(csv_path)
    side_path = csv_path.with_suffix(".json")
    try:
        meta = json.loads(side_path.read_text())
    except FileNotFoundError:
        raise MetadataMismatchError(f"missing metadata sidecar {side_path}", key="map") from None
    grid = read_grid_csv(csv_path)
    if grid.shape != (meta["ny"], meta["nx"]):
        raise MetadataMismatchError(
            f"{csv_path}: grid {grid.shape} disagrees with metadata ({meta['ny']}, {meta['nx']})",
            key="map")
    return grid, meta


def load_maps(outdir):
    """Load every BS's three variants from a map directory."""
    out = Path(outdir)
    maps = []
    b = 0
    while (out / map_filename(b, "raw")).exists():
        grids = {}
        meta = None
        for variant in VARIANTS:
            grids[variant], meta_v = load_map(out / map_filename(b, variant))
            meta_v = {k: v for k, v in meta_v.items() if k != "variant"}
            if meta is not None and meta_v != meta:
                raise MetadataMismatchError(f"BS {b + 1}: variant metadata disagree", key="map")
            meta = meta_v
        maps.append(PowerMap(b, (meta["dx_m"], meta["dy_m"]), grids["raw"], grids["filtered"],
                             grids["fused"], meta))
        b += 1
    if not maps:
        raise ConfigError(f"no maps found in {out}", key="maps")
    return maps
