"""Peaks-over-threshold tail modelling of transformed SINR samples."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import ConfigError, DomainError, GpdFitError

# |xi| below this uses the exponential-limit formulas
XI_SWITCH = 1e-6
MIN_EXCESSES = 30
N_STARTS = 5


@dataclass(frozen=True)
class TailModel:
    threshold: float
    scale: float
    shape: float
    rho: float

    def __post_init__(self):
        if not self.scale > 0:
            raise DomainError(f"GPD scale must be > 0, got {self.scale}")
        if not 0.9 <= self.rho < 1.0:
            raise DomainError(f"rho must lie in [0.9, 1), got {self.rho}")

    @property
    def tail_mass(self):
        return 1.0 - self.rho

    def shifted(self, delta):
        """Tail of f(kappa * X) with delta = ln(kappa): only the threshold moves."""
        return TailModel(self.threshold - delta, self.scale, self.shape, self.rho)


@dataclass(frozen=True)
class QosTarget:
    gamma0: float
    zeta: float

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise ConfigError(f"SINR target must be > 0, got {self.gamma0}", key="gamma0")
        if not 0 < self.zeta < 1:
            raise ConfigError(f"outage target must lie in (0, 1), got {self.zeta}", key="zeta")

    @classmethod
    def from_db(cls, gamma0_db, zeta):
        return cls(10.0 ** (gamma0_db / 10.0), zeta)

    @property
    def phi(self):
        return -math.log(self.gamma0)

    def check_against(self, rho):
        if self.zeta >= 1.0 - rho:
            raise ConfigError(
                f"outage target {self.zeta} must be below the modelled tail mass 1-rho={1 - rho:g}",
                key="zeta")


def transform(samples):
    """Map SINR samples to -ln(sample); low SINR lands in the right tail."""
    x = np.asarray(samples, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError("transform requires strictly positive samples")
    return -np.log(x)


def _rank(n, rho):
    # nearest-rank index (1-based); the epsilon absorbs rho*n round-off
    return max(1, math.ceil(rho * n - 1e-9))


def select_threshold(transformed, rho):
    """Nearest-rank empirical rho-quantile (the ceil(rho*N)-th order statistic)."""
    if not 0.9 <= rho < 1.0:
        raise ConfigError(f"rho must lie in [0.9, 1), got {rho}", key="rho")
    x = np.asarray(transformed, dtype=float).ravel()
    n = x.size
    if n < 100 or n - _rank(n, rho) < 10:
        raise ConfigError(f"{n} samples leave fewer than 10 excesses at rho={rho}", key="n_samples")
    k = _rank(n, rho)
    return float(np.partition(x, k - 1)[k - 1])


def excesses(transformed, threshold):
    x = np.asarray(transformed, dtype=float).ravel()
    z = x[x > threshold] - threshold
    if z.size == 0:
        raise DomainError("no samples exceed the threshold")
    return z


def log1p_ratio(t):
    """log1p(t) / t, continuous through t = 0."""
    t = np.asarray(t, dtype=float)
    small = np.abs(t) < 1e-5
    safe = np.where(small, 1.0, t)
    return np.where(small, 1.0 - t / 2.0 + t * t / 3.0, np.log1p(safe) / safe)


def expm1_ratio(u):
    """expm1(u) / u, continuous through u = 0."""
    u = np.asarray(u, dtype=float)
    small = np.abs(u) < 1e-5
    safe = np.where(small, 1.0, u)
    return np.where(small, 1.0 + u / 2.0 + u * u / 6.0, np.expm1(safe) / safe)


def _cumulative_hazard(excess, scale, shape):
    """(1/xi) * ln(1 + xi*excess/scale); the exponential limit excess/scale as xi -> 0."""
    x = np.asarray(excess, dtype=float) / scale
    if abs(shape) < XI_SWITCH:
        return x * log1p_ratio(shape * x)
    return np.log1p(shape * x) / shape


def gpd_nll(scale, shape, z):
    """Negative GPD log-likelihood; +inf outside the parameter support."""
    if scale <= 0 or shape <= -1.0:
        return math.inf
    return _nll(scale, shape, z, z.max())


def _nll(scale, shape, z, zmax):
    if shape < 0 and shape * zmax / scale <= -1.0:
        return math.inf
    n = z.size
    if abs(shape) < XI_SWITCH:
        return float(n * math.log(scale) + np.log1p(shape * z / scale).sum()
                     + _cumulative_hazard(z, scale, shape).sum())
    # both terms share the same log1p sum away from the exponential limit
    return float(n * math.log(scale) + (1.0 + 1.0 / shape) * np.log1p(shape * z / scale).sum())


def pwm_estimate(z):
    """Probability-weighted-moment estimates (scale, shape) of a GPD sample."""
    zs = np.sort(z)
    n = zs.size
    p = (np.arange(1, n + 1) - 0.35) / n
    a0 = zs.mean()
    a1 = np.mean(zs * (1.0 - p))
    denom = a0 - 2.0 * a1
    if denom <= 0:
        return a0, 0.0
    return 2.0 * a0 * a1 / denom, 2.0 - a0 / denom


def _starts(z):
    scale0, shape0 = pwm_estimate(z)
    shape0 = float(np.clip(shape0, -0.8, 0.8))
    mean, zmax = z.mean(), z.max()
    out = []
    for offset in (0.0, -0.1, 0.1, -0.25, 0.25):
        xi = float(np.clip(shape0 + offset, -0.9, 0.9))
        sc = scale0 if offset == 0.0 else mean * (1.0 - xi)
        if xi < 0:
            sc = max(sc, -xi * zmax * 1.05)
        out.append((math.log(max(sc, 1e-12)), xi))
    return out


@dataclass(frozen=True)
class GpdFit:
    scale: float
    shape: float
    nll: float
    converged: bool
    n_excesses: int


def fit_gpd(z):
    """Maximum-likelihood GPD fit of positive excesses.

    Nelder-Mead over (log scale, shape) from five deterministic starts placed
    around the PWM estimate; the best converged optimum wins.
    """
    z = np.asarray(z, dtype=float).ravel()
    if z.size < MIN_EXCESSES:
        raise ConfigError(f"need at least {MIN_EXCESSES} excesses, got {z.size}", key="excesses")
    if np.any(~(z > 0)) or not np.all(np.isfinite(z)):
        raise DomainError("excesses must be positive and finite")

    zmax = z.max()

    def objective(theta):
        if theta[1] <= -1.0:
            return math.inf
        return _nll(math.exp(theta[0]), theta[1], z, zmax)

    best = None
    tried = []
    for start in _starts(z):
        res = minimize(objective, np.array(start), method="Nelder-Mead",
                       options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 4000,
                                "initial_simplex": _simplex(start)})
        tried.append((res.x.copy(), float(res.fun), bool(res.success)))
        if res.success and np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        x, f, _ = min(tried, key=lambda t: t[1])
        raise GpdFitError("GPD likelihood maximisation did not converge from any start",
                          best=(math.exp(x[0]), x[1]), diagnostics={"nll": f, "starts": tried})
    return GpdFit(math.exp(best.x[0]), float(best.x[1]), float(best.fun), True, z.size)


def _simplex(start):
    s = np.array(start, dtype=float)
    return np.array([s, s + [0.1, 0.0], s + [0.0, 0.05]])


def fit_tail(samples, rho):
    """Transform, threshold, extract excesses and fit: one location's TailModel."""
    x = transform(samples)
    mu = select_threshold(x, rho)
    fit = fit_gpd(excesses(x, mu))
    return TailModel(mu, fit.scale, fit.shape, rho)


def outage(tail, phi):
    """Modelled probability that the transformed variable exceeds ``phi``.

    Valid for ``phi >= threshold``; below the threshold the model has no
    information beyond the tail mass, which is returned.
    """
    excess = max(phi - tail.threshold, 0.0)
    xi, sigma = tail.shape, tail.scale
    if xi < 0 and 1.0 + xi * excess / sigma <= 0.0:
        return 0.0
    return tail.tail_mass * math.exp(-float(_cumulative_hazard(excess, sigma, xi)))
