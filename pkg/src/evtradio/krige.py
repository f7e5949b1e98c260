"""Gaussian-process regression of GPD parameter fields over the grid.

Each field (threshold, scale, shape) of each BS is standardised and modelled
as a zero-mean GP with a Gudmundson (exponential) or half-integer Matern
covariance plus white observation noise.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist
from scipy.special import ndtri

from .errors import ConfigError, DomainError, FactorizationError, NumericalError

MATERN_NUS = (0.5, 1.5, 2.5)
PARAMS = ("threshold", "scale", "shape")
DEFAULT_FAMILIES = {"threshold": "gudmundson", "scale": "matern", "shape": "matern"}
JITTER = 1e-8
JITTER_DOUBLINGS = 6
# bounds on the noise-to-signal ratio lambda^2 / omega^2 during fitting
RATIO_BOUNDS = (1e-6, 1e3)
_CHUNK = 4096


@dataclass(frozen=True)
class KernelHyper:
    family: str
    variance: float
    range_m: float
    noise: float = 0.0
    nu: float | None = None

    def __post_init__(self):
        if self.family not in ("gudmundson", "matern"):
            raise ConfigError(f"unknown kernel family {self.family!r}", key="family")
        if not (self.variance > 0 and self.range_m > 0 and self.noise >= 0):
            raise DomainError(f"invalid hyperparameters {self}")
        if self.family == "matern" and self.nu not in MATERN_NUS:
            raise ConfigError(f"Matern smoothness must be one of {MATERN_NUS}, got {self.nu}",
                              key="nu")

    def covariance(self, d):
        if self.family == "gudmundson":
            return kernel_gudmundson(d, self.variance, self.range_m)
        return kernel_matern(d, self.variance, self.range_m, self.nu)

    def as_dict(self):
        return {"family": self.family, "variance": self.variance, "range_m": self.range_m,
                "noise": self.noise, "nu": self.nu}


@dataclass
class ParamObservations:
    """Fitted GPD parameters at the observed locations of one BS."""

    locations: np.ndarray
    threshold: np.ndarray
    scale: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        self.locations = np.atleast_2d(np.asarray(self.locations, dtype=float))
        m = len(self.locations)
        for name in PARAMS:
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (m,):
                raise ConfigError(f"{name} has {v.size} values for {m} locations", key=name)
            setattr(self, name, v)

    def field(self, name):
        return getattr(self, name)


@dataclass
class PredictiveField:
    mean: np.ndarray
    variance: np.ndarray


def normalize(raw):
    """Standardise with the sample mean and (n-1) sample standard deviation."""
    x = np.asarray(raw, dtype=float)
    if x.size < 2:
        raise ConfigError("need at least two values to normalise", key="field")
    sm = float(x.mean())
    ssd = float(x.std(ddof=1))
    if not ssd > 0:
        raise DomainError("degenerate (constant) field cannot be normalised")
    return (x - sm) / ssd, sm, ssd


def denormalize(x, sm, ssd):
    return np.asarray(x) * ssd + sm


def kernel_gudmundson(d, variance, range_m):
    """Exponentially decaying correlation variance * exp(-d / range)."""
    return variance * np.exp(-np.asarray(d, dtype=float) / range_m)


def kernel_matern(d, variance, range_m, nu):
    """Matern covariance with argument sqrt(nu) * d / range, half-integer closed forms."""
    x = math.sqrt(nu) * np.asarray(d, dtype=float) / range_m
    if nu == 0.5:
        poly = 1.0
    elif nu == 1.5:
        poly = 1.0 + x
    elif nu == 2.5:
        poly = 1.0 + x + x * x / 3.0
    else:
        raise ConfigError(f"Matern smoothness must be one of {MATERN_NUS}, got {nu}", key="nu")
    return variance * poly * np.exp(-x)


def _unit_hyper(family, range_m, nu):
    return KernelHyper(family, 1.0, range_m, 0.0, nu)


def _factor(matrix, variance):
    """Cholesky factor; on failure retry with diagonal jitter, doubled each time."""
    try:
        return cho_factor(matrix, lower=True, check_finite=False)
    except LinAlgError:
        pass
    jitter = JITTER * variance
    eye = np.eye(len(matrix))
    for _ in range(JITTER_DOUBLINGS + 1):
        try:
            return cho_factor(matrix + jitter * eye, lower=True, check_finite=False)
        except LinAlgError:
            jitter *= 2.0
    raise FactorizationError(f"covariance not positive definite after jitter {jitter / 2:g}")


def profile_log_likelihood(y, dist, family, range_m, ratio, nu=None):
    """Log marginal likelihood with the process variance profiled out.

    The covariance is omega^2 * (C + ratio * I); returns (loglik, omega^2).
    """
    corr = _unit_hyper(family, range_m, nu).covariance(dist)
    corr[np.diag_indices_from(corr)] += ratio
    try:
        lower = np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        return -math.inf, math.nan
    n = len(y)
    v = solve_triangular(lower, y, lower=True, check_finite=False)
    omega2 = float(v @ v) / n
    logdet = 2.0 * np.log(np.diag(lower)).sum()
    return -0.5 * n * (math.log(omega2) + 1.0 + math.log(2 * math.pi)) - 0.5 * logdet, omega2


def log_marginal_likelihood(y, dist, hyper):
    cov = hyper.covariance(dist) + hyper.noise * np.eye(len(y))
    c = _factor(cov, hyper.variance)
    alpha = cho_solve(c, y, check_finite=False)
    return float(-0.5 * y @ alpha - np.log(np.diag(c[0])).sum() - 0.5 * len(y) * math.log(2 * math.pi))


@dataclass(frozen=True)
class FitDiagnostics:
    loglik: float
    converged: bool
    starts: int


def _range_bounds(locations, dist):
    masked = dist + np.diag(np.full(len(dist), np.inf))
    nn = np.median(masked.min(axis=1))
    diameter = dist.max()
    lo = max(nn, 1e-6)
    return lo, max(10.0 * diameter, 2 * lo)


def fit_field(locations, values, family, nus=MATERN_NUS, noise_floor=0.0):
    """Maximum-marginal-likelihood hyperparameters for one normalised field.

    Nelder-Mead in (log range, log noise ratio) from 8 deterministic starts
    (4 ranges x 2 noise ratios) per candidate smoothness. Ties go to the
    higher likelihood, then the smaller range.

    ``noise_floor`` is a known lower bound on the observation-noise variance
    (normalised units). If the unconstrained optimum falls below it, the
    likelihood is re-maximised over (range, variance) with the noise pinned
    at the floor.
    """
    y = np.asarray(values, dtype=float)
    locs = np.atleast_2d(np.asarray(locations, dtype=float))
    if len(y) < 20:
        raise ConfigError(f"need at least 20 observed locations, got {len(y)}", key="n_locations")
    dist = cdist(locs, locs)
    r_lo, r_hi = _range_bounds(locs, dist)
    bounds = [(math.log(r_lo), math.log(r_hi)), tuple(math.log(b) for b in RATIO_BOUNDS)]
    diameter = max(dist.max(), r_lo)
    r_starts = np.geomspace(max(r_lo, diameter / 50), diameter, 4)
    eta_starts = (1e-2, 0.3)
    candidates = [None] if family == "gudmundson" else list(nus)

    results = []
    for nu in candidates:
        def objective(theta, nu=nu):
            ll, _ = profile_log_likelihood(y, dist, family, math.exp(theta[0]),
                                           math.exp(theta[1]), nu)
            return -ll if np.isfinite(ll) else 1e300

        for r0 in r_starts:
            for eta0 in eta_starts:
                x0 = np.array([math.log(r0), math.log(eta0)])
                res = minimize(objective, x0, method="Nelder-Mead", bounds=bounds,
                               options={"xatol": 1e-4, "fatol": 1e-7, "maxiter": 600})
                if np.isfinite(res.fun) and res.fun < 1e299:
                    results.append((float(res.fun), float(res.x[0]), float(res.x[1]), nu,
                                    bool(res.success)))
    if not results:
        raise NumericalError(f"hyperparameter search failed from every start ({family})")
    # highest likelihood (rounded to absorb optimizer noise), then smallest range
    best = min(results, key=lambda t: (round(t[0], 6), t[1]))
    nll, log_r, log_eta, nu, ok = best
    r, eta = math.exp(log_r), math.exp(log_eta)
    _, omega2 = profile_log_likelihood(y, dist, family, r, eta, nu)
    hyper = KernelHyper(family, omega2, r, omega2 * eta, nu)
    if hyper.noise < noise_floor:
        hyper, nll = _refit_with_noise(y, dist, hyper, noise_floor, bounds[0])
    return hyper, FitDiagnostics(-nll, any(t[4] for t in results), len(results))


def _refit_with_noise(y, dist, start, noise, log_r_bounds):
    """Maximise the likelihood over (log range, log variance) at fixed noise."""
    def objective(theta):
        h = KernelHyper(start.family, math.exp(theta[1]), math.exp(theta[0]), noise, start.nu)
        try:
            return -log_marginal_likelihood(y, dist, h)
        except FactorizationError:
            return 1e300

    x0 = np.array([math.log(start.range_m), math.log(start.variance)])
    res = minimize(objective, x0, method="Nelder-Mead",
                   bounds=[log_r_bounds, (math.log(1e-6), math.log(1e3))],
                   options={"xatol": 1e-4, "fatol": 1e-7, "maxiter": 600})
    hyper = KernelHyper(start.family, math.exp(res.x[1]), math.exp(res.x[0]), noise, start.nu)
    return hyper, float(res.fun)


def fit_hyperparams(obs, families=None, noise_floors=None):
    """Fit one :class:`KernelHyper` per GPD parameter field of a BS.

    ``noise_floors`` maps a field name to a lower bound on its observation
    noise variance in raw (denormalised) units.
    """
    families = {**DEFAULT_FAMILIES, **(families or {})}
    floors = noise_floors or {}
    out = {}
    for name in PARAMS:
        norm, _, ssd = normalize(obs.field(name))
        floor = floors.get(name, 0.0) / ssd**2
        out[name], _ = fit_field(obs.locations, norm, families[name], noise_floor=floor)
    return out


def threshold_noise_variance(scale, n_samples, rho):
    """Sampling variance of the empirical rho-quantile of a GPD-tailed variable.

    Asymptotically rho(1-rho) / (n f^2), with density f = (1-rho)/scale at the
    threshold.
    """
    scale = np.asarray(scale, dtype=float)
    return rho * scale**2 / (n_samples * (1.0 - rho))


def predict_field(locations, raw, hyper, targets):
    """Denormalised GP predictive mean and marginal variance at ``targets``."""
    locs = np.atleast_2d(np.asarray(locations, dtype=float))
    tg = np.atleast_2d(np.asarray(targets, dtype=float))
    y, sm, ssd = normalize(raw)
    cov = hyper.covariance(cdist(locs, locs)) + hyper.noise * np.eye(len(locs))
    c = _factor(cov, hyper.variance)
    alpha = cho_solve(c, y, check_finite=False)
    mean = np.empty(len(tg))
    var = np.empty(len(tg))
    for start in range(0, len(tg), _CHUNK):
        sl = slice(start, start + _CHUNK)
        k = hyper.covariance(cdist(tg[sl], locs))
        mean[sl] = k @ alpha
        v = solve_triangular(c[0], k.T, lower=True, check_finite=False)
        var[sl] = hyper.variance - (v * v).sum(axis=0)
    return PredictiveField(denormalize(mean, sm, ssd), np.maximum(var, 0.0) * ssd**2)


def predict(obs, hypers, targets):
    """Predictive fields for every GPD parameter of one BS."""
    return {name: predict_field(obs.locations, obs.field(name), hypers[name], targets)
            for name in PARAMS}


def threshold_quantile(mean, variance, tau, direction="upper"):
    """Level exceeded with probability ``tau`` under N(mean, variance).

    ``direction="lower"`` returns the level undershot with probability tau.
    """
    if not 0 < tau <= 0.5:
        raise ConfigError(f"tau must lie in (0, 0.5], got {tau}", key="tau")
    variance = np.asarray(variance, dtype=float)
    if np.any(variance < 0):
        raise DomainError("predictive variance must be >= 0")
    z = ndtri(1.0 - tau)
    if direction == "lower":
        z = -z
    elif direction != "upper":
        raise ConfigError(f"direction must be 'upper' or 'lower', got {direction!r}",
                          key="threshold_quantile")
    return np.asarray(mean, dtype=float) + np.sqrt(variance) * z


def with_noise(hyper, noise):
    return replace(hyper, noise=noise)
