"""Weighted maximum-likelihood marginal fitting with AIC model selection.

Families with positive support (gamma, generalized gamma, exponential) are
fit through a recorded affine pre-transformation (optional reflection, then
a shift just past the minimum) whenever the data contains non-positive
values; the transformation has unit Jacobian so log-likelihoods stay
comparable across families.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, special, stats

from .errors import AllFitsFailed
from .wstats import effective_sample_size, normalize_to_effective, weighted_var_mle

log = logging.getLogger(__name__)

SHIFT_MARGIN = 1e-6  # gap kept between the support edge and the data minimum

CONTINUOUS_FAMILIES = ("normal", "skewnormal", "expnormal", "gamma")
HURDLE_FAMILIES = ("gamma", "gengamma", "exponential")

_CLIP_LO = 1e-10
_CLIP_HI = 1.0 - 1e-10


@dataclass(frozen=True)
class AffinePre:
    """Optional reflection followed by a shift, y = (+-x) - shift."""

    shift: float = 0.0
    reflect: bool = False

    @property
    def is_identity(self) -> bool:
        return self.shift == 0.0 and not self.reflect

    def forward(self, x):
        y = np.negative(x) if self.reflect else np.asarray(x, dtype=float)
        return y - self.shift

    def inverse(self, y):
        x = np.asarray(y, dtype=float) + self.shift
        return np.negative(x) if self.reflect else x


# family -> (scipy distribution, ordered parameter names, positive support)
_FAMILIES = {
    "normal": (stats.norm, ("loc", "scale"), False),
    "skewnormal": (stats.skewnorm, ("a", "loc", "scale"), False),
    "expnormal": (stats.exponnorm, ("k", "loc", "scale"), False),
    "gamma": (stats.gamma, ("shape", "scale"), True),
    "gengamma": (stats.gengamma, ("a", "c", "scale"), True),
    "exponential": (stats.expon, ("scale",), True),
}


def _frozen(family: str, params: Mapping[str, float]):
    dist, names, _ = _FAMILIES[family]
    if family == "normal":
        return dist(loc=params["loc"], scale=params["scale"])
    if family == "skewnormal":
        return dist(params["a"], loc=params["loc"], scale=params["scale"])
    if family == "expnormal":
        return dist(params["k"], loc=params["loc"], scale=params["scale"])
    if family == "gamma":
        return dist(params["shape"], loc=0.0, scale=params["scale"])
    if family == "gengamma":
        return dist(params["a"], params["c"], loc=0.0, scale=params["scale"])
    if family == "exponential":
        return dist(loc=0.0, scale=params["scale"])
    raise ValueError(f"unknown family {family!r}")


@dataclass(frozen=True)
class FittedDist:
    """A fitted marginal: family, parameters, and the pre-transformation.

    aic = 2 k - 2 loglik with k the family's parameter count; the loglik is
    computed with weights normalized to the effective sample size.
    """

    family: str
    params: Dict[str, float]
    affine: AffinePre = field(default_factory=AffinePre)
    aic: float = float("nan")
    loglik: float = float("nan")

    @property
    def k(self) -> int:
        return len(_FAMILIES[self.family][1])

    def _dist(self):
        return _frozen(self.family, self.params)

    def logpdf(self, x) -> np.ndarray:
        return self._dist().logpdf(self.affine.forward(x))

    def cdf(self, x) -> np.ndarray:
        y = self.affine.forward(x)
        if self.affine.reflect:
            # y = -x - shift is decreasing in x
            return 1.0 - self._dist().cdf(y)
        return self._dist().cdf(y)

    def ppf(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.affine.reflect:
            return self.affine.inverse(self._dist().ppf(1.0 - u))
        return self.affine.inverse(self._dist().ppf(u))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.ppf(rng.random(n))

    def to_json(self) -> dict:
        return {
            "family": self.family,
            "params": {k: float(v) for k, v in self.params.items()},
            "affine": {"shift": self.affine.shift, "reflect": self.affine.reflect},
            "aic": self.aic,
            "loglik": self.loglik,
        }

    @staticmethod
    def from_json(doc: dict) -> "FittedDist":
        affine = AffinePre(
            shift=float(doc["affine"]["shift"]), reflect=bool(doc["affine"]["reflect"])
        )
        return FittedDist(
            family=doc["family"],
            params={k: float(v) for k, v in doc["params"].items()},
            affine=affine,
            aic=float(doc.get("aic", float("nan"))),
            loglik=float(doc.get("loglik", float("nan"))),
        )


# --- weighted MLE per family -------------------------------------------------
#
# Inner-loop likelihoods use explicit log-pdf formulas (scipy.special) to
# avoid frozen-distribution construction overhead inside the optimizer.

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def _moments(y: np.ndarray, w: np.ndarray) -> Tuple[float, float]:
    mean = float(np.dot(w, y) / w.sum())
    var = float(np.dot(w, np.square(y - mean)) / w.sum())
    return mean, max(var, 1e-12)


def _norm_logpdf(z):
    return -0.5 * np.square(z) - _LOG_SQRT_2PI


def _nll(logpdf, y, w):
    def fun(theta):
        lp = logpdf(theta, y)
        if lp is None or not np.isfinite(lp).all():
            return 1e12
        return -float(np.dot(w, lp))

    return fun


def _minimize(fun, starts):
    best = None
    for x0 in starts:
        res = optimize.minimize(
            fun,
            x0,
            method="Nelder-Mead",
            options={"maxiter": 400, "xatol": 1e-6, "fatol": 1e-9},
        )
        if not np.isfinite(res.fun):
            continue
        if best is None or res.fun < best.fun:
            best = res
    return best


def _fit_normal(y, w):
    mean, var = _moments(y, w)
    if var <= 1e-18:
        return None
    return {"loc": mean, "scale": float(np.sqrt(var))}


def _fit_exponential(y, w):
    mean = float(np.dot(w, y) / w.sum())
    if mean <= 0:
        return None
    return {"scale": mean}


def _fit_gamma(y, w):
    if (y <= 0).any():
        return None
    mean, var = _moments(y, w)
    shape0 = max(mean * mean / var, 1e-3)
    scale0 = max(var / mean, 1e-9)
    log_y = np.log(y)

    def logpdf(theta, y):
        shape, scale = np.exp(theta)
        if not (np.isfinite(shape) and np.isfinite(scale)) or shape > 1e6:
            return None
        return (
            (shape - 1.0) * log_y
            - y / scale
            - special.gammaln(shape)
            - shape * np.log(scale)
        )

    res = _minimize(_nll(logpdf, y, w), [np.log([shape0, scale0]), np.log([1.0, mean])])
    if res is None:
        return None
    shape, scale = np.exp(res.x)
    return {"shape": float(shape), "scale": float(scale)}


def _fit_gengamma(y, w):
    if (y <= 0).any():
        return None
    mean, var = _moments(y, w)
    shape0 = max(mean * mean / var, 1e-3)
    scale0 = max(var / mean, 1e-9)
    log_y = np.log(y)

    def logpdf(theta, y):
        a, c, scale = np.exp(theta)
        if not np.isfinite([a, c, scale]).all() or a > 1e6 or c > 50:
            return None
        log_t = log_y - np.log(scale)
        return (
            np.log(c)
            + (c * a - 1.0) * log_t
            - np.exp(np.clip(c * log_t, -700, 700))
            - special.gammaln(a)
            - np.log(scale)
        )

    starts = [
        np.log([shape0, 1.0, scale0]),
        np.log([shape0, 0.6, scale0]),
        np.log([shape0, 1.8, scale0]),
    ]
    res = _minimize(_nll(logpdf, y, w), starts)
    if res is None:
        return None
    a, c, scale = np.exp(res.x)
    return {"a": float(a), "c": float(c), "scale": float(scale)}


def _fit_skewnormal(y, w):
    mean, var = _moments(y, w)
    sd = float(np.sqrt(var))
    if sd <= 1e-9:
        return None

    def logpdf(theta, y):
        a, loc, log_scale = theta
        scale = np.exp(log_scale)
        if not np.isfinite([a, loc, scale]).all() or abs(a) > 100:
            return None
        z = (y - loc) / scale
        return np.log(2.0) + _norm_logpdf(z) + special.log_ndtr(a * z) - log_scale

    starts = [
        np.array([0.0, mean, np.log(sd)]),
        np.array([2.0, mean - sd, np.log(sd)]),
        np.array([-2.0, mean + sd, np.log(sd)]),
    ]
    res = _minimize(_nll(logpdf, y, w), starts)
    if res is None:
        return None
    a, loc, log_scale = res.x
    return {"a": float(a), "loc": float(loc), "scale": float(np.exp(log_scale))}


def _fit_expnormal(y, w):
    mean, var = _moments(y, w)
    sd = float(np.sqrt(var))
    if sd <= 1e-9:
        return None

    def logpdf(theta, y):
        log_k, loc, log_scale = theta
        k = np.exp(log_k)
        scale = np.exp(log_scale)
        if not np.isfinite([k, loc, scale]).all() or k > 1e4:
            return None
        z = (y - loc) / scale
        inv_k = 1.0 / k
        return (
            -log_k
            + 0.5 * inv_k * inv_k
            - z * inv_k
            + special.log_ndtr(z - inv_k)
            - log_scale
        )

    starts = [
        np.array([np.log(0.05), mean, np.log(sd)]),
        np.array([np.log(1.0), mean - 0.7 * sd, np.log(0.7 * sd)]),
        np.array([np.log(3.0), mean - sd, np.log(0.4 * sd)]),
    ]
    res = _minimize(_nll(logpdf, y, w), starts)
    if res is None:
        return None
    log_k, loc, log_scale = res.x
    return {"k": float(np.exp(log_k)), "loc": float(loc), "scale": float(np.exp(log_scale))}


_FITTERS = {
    "normal": _fit_normal,
    "skewnormal": _fit_skewnormal,
    "expnormal": _fit_expnormal,
    "gamma": _fit_gamma,
    "gengamma": _fit_gengamma,
    "exponential": _fit_exponential,
}


def _affine_for(values: np.ndarray, weights: np.ndarray) -> AffinePre:
    """Pre-transformation for positive-support families on signed data."""
    reflect = bool(np.dot(weights, values) / weights.sum() < 0)
    y = -values if reflect else values
    shift = 0.0
    if y.min() <= 0:
        shift = float(y.min() - SHIFT_MARGIN)
    return AffinePre(shift=shift, reflect=reflect)


def fit_family(family: str, values, weights) -> Optional[FittedDist]:
    """Weighted MLE for one family; None when the family cannot fit."""
    x = np.asarray(values, dtype=float)
    w = normalize_to_effective(weights)
    _, _, positive = _FAMILIES[family]
    affine = AffinePre()
    if positive and x.min() <= 0:
        affine = _affine_for(x, w)
    y = affine.forward(x)
    params = _FITTERS[family](y, w)
    if params is None:
        return None
    fitted = FittedDist(family=family, params=params, affine=affine)
    lp = fitted.logpdf(x)
    if not np.isfinite(lp).all():
        return None
    loglik = float(np.dot(w, lp))
    return FittedDist(
        family=family,
        params=params,
        affine=affine,
        aic=2 * fitted.k - 2 * loglik,
        loglik=loglik,
    )


def fit_univariate(
    values,
    weights=None,
    families: Sequence[str] = CONTINUOUS_FAMILIES,
) -> FittedDist:
    """Fit every candidate family and keep the lowest-AIC one."""
    x = np.asarray(values, dtype=float)
    if weights is None:
        weights = np.ones_like(x)
    w = np.asarray(weights, dtype=float)
    if effective_sample_size(w) < 5:
        raise AllFitsFailed("need at least 5 effective samples")
    if not np.isfinite(x).all():
        raise AllFitsFailed("values must be finite")
    if weighted_var_mle(x, w) <= 0.0:
        raise AllFitsFailed("zero variance: data is constant")

    fits = []
    for family in families:
        try:
            fitted = fit_family(family, x, w)
        except Exception:  # optimizer blow-ups count as a failed family
            log.debug("family %s failed", family, exc_info=True)
            fitted = None
        if fitted is not None and np.isfinite(fitted.aic):
            fits.append(fitted)
    if not fits:
        raise AllFitsFailed(f"no family among {families} produced a finite fit")
    return min(fits, key=lambda f: f.aic)


def quantile_normalize(values, dist: FittedDist) -> np.ndarray:
    """Map data through the fitted CDF onto the standard normal scale."""
    u = np.clip(dist.cdf(values), _CLIP_LO, _CLIP_HI)
    return stats.norm.ppf(u)


def quantile_denormalize(z, dist: FittedDist) -> np.ndarray:
    """Inverse of :func:`quantile_normalize`."""
    u = np.clip(stats.norm.cdf(z), _CLIP_LO, _CLIP_HI)
    return dist.ppf(u)
