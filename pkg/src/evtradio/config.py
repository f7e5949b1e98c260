"""Default parameter sets and named profiles.

The defaults reproduce the indoor-factory setup: a 200 m x 130 m hall with
four serving BSs in the corners and two interferers 400 m away.
"""

import copy
from pathlib import Path

import yaml

from .errors import ConfigError

DEFAULT_SCENARIO = {
    "area": {"half_x_m": 100.0, "half_y_m": 65.0},
    "grid": {"nx": 150, "ny": 150},
    # [x, y, height] in metres
    "serving_bs": [
        [-95.0, 60.0, 6.0],
        [-95.0, -60.0, 6.0],
        [95.0, 60.0, 6.0],
        [95.0, -60.0, 6.0],
    ],
    "interferers": [
        [0.0, 400.0, 10.0],
        [0.0, -400.0, 10.0],
    ],
    "radio": {
        "carrier_hz": 2.5e9,
        "bandwidth_hz": 1.0e6,
        "noise_figure_db": 7.0,
        "p0_dbm": 0.0,
        "p_max_dbm": 50.0,
        "interferer_power_dbm": 0.0,
        "ue_height_m": 1.5,
    },
    "channel": {
        # intercept = free-space loss at 1 m for the carrier + extra_loss_db
        "serving": {
            "exponent": 2.1,
            "extra_loss_db": 12.5,
            "shadow_std_db": 4.0,
            "decorrelation_m": 20.0,
        },
        "interferer": {
            "exponent": 3.5,
            "extra_loss_db": 0.0,
            "shadow_std_db": 7.8,
            "decorrelation_m": 20.0,
        },
        "k_factor": {"min_db": 0.0, "max_db": 10.0, "decorrelation_m": 30.0},
    },
    "seed": 2025,
}

DEFAULT_MAPS = {
    "n_samples": 100_000,
    "n_locations": 1000,
    "rho": 0.99,
    "tau": 0.01,
    "zeta": 1e-3,
    "gamma0_db": 10.0,
    "theta": 1.0,
    "threshold_quantile": "upper",
    "filter_domain": "db",
    "shared_locations": True,
    "seed": 1,
}

DEFAULT_POLICY = {
    "hold_s": 1.0,
    "hysteresis_db": 3.0,
    "p_max_dbm": 50.0,
}

DEFAULT_BASELINES = {
    "classical_power_dbm": 30.0,
    "ttt_s": 0.036,
    "genie_samples": 100_000,
    "audit_samples": 100_000,
}

PROFILES = {
    "full": {"scenario": {}, "maps": {}},
    "desk": {
        "scenario": {"grid": {"nx": 60, "ny": 40}},
        "maps": {"n_samples": 20_000, "n_locations": 200},
    },
}


def merge(base, override, _path=""):
    """Recursive dict merge; unknown keys in ``override`` are rejected."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{_path}.{key}" if _path else str(key)
        if key not in base:
            raise ConfigError("unknown key", key=path)
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError("expected a mapping", key=path)
            out[key] = merge(base[key], value, path)
        else:
            out[key] = copy.deepcopy(value)
    return out


def profile(name):
    try:
        return copy.deepcopy(PROFILES[name])
    except KeyError:
        raise ConfigError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}",
                          key="profile") from None


def scenario_config(profile_name="desk", overrides=None):
    cfg = merge(DEFAULT_SCENARIO, profile(profile_name)["scenario"])
    if overrides:
        cfg = merge(cfg, overrides)
    return cfg


def maps_config(profile_name="desk", overrides=None):
    cfg = merge(DEFAULT_MAPS, profile(profile_name)["maps"])
    if overrides:
        cfg = merge(cfg, overrides)
    return cfg


def read_config_file(path):
    """Read a YAML (or JSON) key/value file into a dict."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}", key="scenario") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"parse error in {path}: {exc}", key="scenario") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping at top level", key="scenario")
    return data
