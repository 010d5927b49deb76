"""Prior distributions with constrained log-densities and support transforms.

Hyperparameter conventions:

* ``normal(mu, sigma)`` uses the standard deviation.
* ``halfnormal_pos(mu, sigma)`` / ``halfnormal_neg(mu, sigma)`` are
  ``Normal(mu, sigma)`` restricted to ``[0, inf)`` / ``(-inf, 0]`` and
  renormalised.
* ``inv_gamma(p, q)`` is shape/scale, density proportional to
  ``x**(-p-1) * exp(-q/x)``.
* ``gamma(tau, rate)`` is shape/rate, mean ``tau / rate``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

NORMAL, HALFNORMAL_POS, HALFNORMAL_NEG, BETA, INV_GAMMA, GAMMA = range(6)

CODES = {
    "normal": NORMAL,
    "halfnormal_pos": HALFNORMAL_POS,
    "halfnormal_neg": HALFNORMAL_NEG,
    "beta": BETA,
    "inv_gamma": INV_GAMMA,
    "gamma": GAMMA,
}
NAMES = {v: k for k, v in CODES.items()}

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class PriorError(ValueError):
    pass


@dataclass(frozen=True)
class Prior:
    """One prior entry: distribution name plus two hyperparameters."""

    dist: str
    a: float
    b: float

    def __post_init__(self):
        if self.dist not in CODES:
            raise PriorError(f"unknown distribution {self.dist!r}; choose from {sorted(CODES)}")
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise PriorError("hyperparameters must be finite")
        if self.b <= 0 or (self.dist in ("beta", "inv_gamma", "gamma") and self.a <= 0):
            raise PriorError(f"{self.dist}{(self.a, self.b)}: scale/shape hyperparameters must be > 0")

    @property
    def code(self) -> int:
        return CODES[self.dist]

    @property
    def support(self) -> tuple[float, float]:
        return {
            NORMAL: (-math.inf, math.inf),
            HALFNORMAL_POS: (0.0, math.inf),
            HALFNORMAL_NEG: (-math.inf, 0.0),
            BETA: (0.0, 1.0),
            INV_GAMMA: (0.0, math.inf),
            GAMMA: (0.0, math.inf),
        }[self.code]

    def in_support(self, v: float) -> bool:
        lo, hi = self.support
        if self.code == BETA:
            return lo < v < hi
        if self.code in (INV_GAMMA, GAMMA):
            return v > 0
        return lo <= v <= hi

    def log_density(self, v: float) -> float:
        if not self.in_support(v):
            raise PriorError(f"value {v} outside the support of {self}")
        return float(log_density_and_slope(self.code, self.a, self.b, v)[0])

    def sample(self, rng: np.random.Generator, size=None):
        a, b = self.a, self.b
        c = self.code
        if c == NORMAL:
            return rng.normal(a, b, size)
        if c in (HALFNORMAL_POS, HALFNORMAL_NEG):
            sign = 1.0 if c == HALFNORMAL_POS else -1.0
            # truncnorm bounds are in standard units
            lo, hi = ((0 - a) / b, np.inf) if sign > 0 else (-np.inf, (0 - a) / b)
            return stats.truncnorm.rvs(lo, hi, loc=a, scale=b, size=size, random_state=rng)
        if c == BETA:
            return rng.beta(a, b, size)
        if c == INV_GAMMA:
            return b / rng.gamma(a, 1.0, size)
        return rng.gamma(a, 1.0 / b, size)

    def mean(self) -> float:
        a, b, c = self.a, self.b, self.code
        if c == NORMAL:
            return a
        if c in (HALFNORMAL_POS, HALFNORMAL_NEG):
            dist = stats.truncnorm(*(((0 - a) / b, np.inf) if c == HALFNORMAL_POS else (-np.inf, (0 - a) / b)), loc=a, scale=b)
            return float(dist.mean())
        if c == BETA:
            return a / (a + b)
        if c == INV_GAMMA:
            return b / (a - 1) if a > 1 else math.inf
        return a / b

    def to_json(self) -> dict:
        return {"dist": self.dist, "params": [self.a, self.b]}

    @classmethod
    def from_json(cls, obj) -> "Prior":
        try:
            a, b = obj["params"]
            return cls(obj["dist"], float(a), float(b))
        except (KeyError, TypeError, ValueError) as exc:
            raise PriorError(f"bad prior entry {obj!r}: {exc}") from None


def normal(mu, sigma):
    return Prior("normal", mu, sigma)


def halfnormal(mu, sigma, sign=+1):
    return Prior("halfnormal_pos" if sign > 0 else "halfnormal_neg", mu, sigma)


def beta(a, b):
    return Prior("beta", a, b)


def inv_gamma(p, q):
    return Prior("inv_gamma", p, q)


def gamma(tau, rate):
    return Prior("gamma", tau, rate)


def _log_ndtr(x: float) -> float:
    return float(special.log_ndtr(x))


def log_density_and_slope(code: int, a: float, b: float, v: float) -> tuple[float, float]:
    """Log-density at ``v`` and its derivative in ``v`` (constrained scale).

    Mirrors the jitted kernel in :mod:`gtfm.kernels`; kept in plain Python
    so it can serve as the reference in tests.
    """
    if code in (NORMAL, HALFNORMAL_POS, HALFNORMAL_NEG):
        z = (v - a) / b
        lp = -0.5 * z * z - math.log(b) - LOG_SQRT_2PI
        if code == HALFNORMAL_POS:
            lp -= _log_ndtr(a / b)
        elif code == HALFNORMAL_NEG:
            lp -= _log_ndtr(-a / b)
        return lp, -z / b
    if code == BETA:
        lp = (a - 1) * math.log(v) + (b - 1) * math.log1p(-v) - special.betaln(a, b)
        return lp, (a - 1) / v - (b - 1) / (1 - v)
    if code == INV_GAMMA:
        lp = a * math.log(b) - math.lgamma(a) - (a + 1) * math.log(v) - b / v
        return lp, -(a + 1) / v + b / (v * v)
    if code == GAMMA:
        lp = a * math.log(b) - math.lgamma(a) + (a - 1) * math.log(v) - b * v
        return lp, (a - 1) / v - b
    raise PriorError(f"unknown prior code {code}")


# Support transforms: unconstrained u -> constrained v, with log|dv/du|.
IDENTITY, POSITIVE, NEGATIVE, UNIT, NEG_UNIT = range(5)


def transform_for(prior: Prior, *, wave: bool = False) -> int:
    c = prior.code
    if c == NORMAL:
        return IDENTITY
    if c == HALFNORMAL_NEG:
        return NEGATIVE
    if c == BETA:
        return NEG_UNIT if wave else UNIT
    return POSITIVE


def constrain(kind: int, u):
    u = np.asarray(u, dtype=float)
    if kind == IDENTITY:
        return u
    if kind == POSITIVE:
        return np.exp(u)
    if kind == NEGATIVE:
        return -np.exp(u)
    q = special.expit(u)
    return q if kind == UNIT else -q


def unconstrain(kind: int, v):
    v = np.asarray(v, dtype=float)
    if kind == IDENTITY:
        return v
    if kind == POSITIVE:
        return np.log(v)
    if kind == NEGATIVE:
        return np.log(-v)
    q = v if kind == UNIT else -v
    return special.logit(q)


def log_jacobian(kind: int, u):
    u = np.asarray(u, dtype=float)
    if kind == IDENTITY:
        return np.zeros_like(u)
    if kind in (POSITIVE, NEGATIVE):
        return u
    # log(q (1 - q)) for q = expit(u)
    return -np.logaddexp(0.0, u) - np.logaddexp(0.0, -u)
