"""Empirical impact measures between a target series and a macro driver.

The response function is the lagged cross-covariance of the centred series,
the diffusion function replaces the centred target by its square.  Both use
the divisor ``T`` at every lag.  They are qualitative aids for choosing a
transfer function, not inputs to the fitted model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels

RESPONSE, DIFFUSION = "response", "diffusion"
LAGGED, ZERO_ANCHOR = "lagged", "zero_anchor"
DEFAULT_LAGS = 10


class ImpactError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ImpactCurve:
    """Impact measure evaluated at lags ``0..L``."""

    values: np.ndarray
    kind: str = RESPONSE
    y_name: str = "y"
    x_name: str = "x"
    y_sd: float = field(default=1.0, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).copy()
        if v.ndim != 1 or v.size == 0:
            raise ImpactError("curve values must be a non-empty 1-d array")
        if not np.all(np.isfinite(v)):
            raise ImpactError("curve values must be finite")
        if self.kind not in (RESPONSE, DIFFUSION):
            raise ImpactError(f"unknown curve kind {self.kind!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def L(self) -> int:
        return self.values.size - 1

    @property
    def lags(self) -> np.ndarray:
        return np.arange(self.L + 1)

    def __eq__(self, other):
        if not isinstance(other, ImpactCurve):
            return NotImplemented
        return (self.kind, self.y_name, self.x_name) == (other.kind, other.y_name, other.x_name) and np.array_equal(
            self.values, other.values)

    __hash__ = None


def _prepare(y, x, L):
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if y.ndim != 1 or x.ndim != 1 or y.shape != x.shape:
        raise ImpactError(f"y and x must be 1-d with equal length, got {y.shape} and {x.shape}")
    T = y.size
    if T < 2:
        raise ImpactError("T >= 2 required")
    if not 0 <= L < T:
        raise ImpactError(f"max lag must satisfy 0 <= L < T (L={L}, T={T})")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
        raise ImpactError("series must be finite")
    return y, x


def _curve(y, x, L, power, kind, y_name, x_name):
    y, x = _prepare(y, x, L)
    vals = kernels.cross_moments(y[None, :], x[None, :], int(L), power)[0]
    return ImpactCurve(vals, kind, y_name, x_name, float(np.std(y)))


def response(y, x, L: int = DEFAULT_LAGS, *, y_name="y", x_name="x") -> ImpactCurve:
    """Sample response function ``R(j) = sum_t (y_{t+j}-ybar)(x_t-xbar) / T``."""
    return _curve(y, x, L, 1, RESPONSE, y_name, x_name)


def diffusion(y, x, L: int = DEFAULT_LAGS, *, y_name="y", x_name="x") -> ImpactCurve:
    """Sample diffusion function ``D(j) = sum_t (y_{t+j}-ybar)^2 (x_t-xbar) / T``."""
    return _curve(y, x, L, 2, DIFFUSION, y_name, x_name)


def response_batch(y, x, L: int = DEFAULT_LAGS) -> np.ndarray:
    """Response curves for ``R`` replicate pairs stacked as ``(R, T)`` arrays."""
    y = np.ascontiguousarray(y, dtype=float)
    x = np.ascontiguousarray(x, dtype=float)
    if y.shape != x.shape or y.ndim != 2:
        raise ImpactError("y and x must be (R, T) arrays of equal shape")
    if not 0 <= L < y.shape[1]:
        raise ImpactError("max lag must satisfy 0 <= L < T")
    return kernels.cross_moments(y, x, int(L), 1)


def _decay_from_values(v: np.ndarray, convention: str) -> np.ndarray:
    L = v.shape[-1] - 1
    if L < 2:
        raise ImpactError("mean decay needs L >= 2")
    if convention == LAGGED:
        # increments summed from j = 1, telescoping to R(L-1) - R(0)
        return (v[..., L - 1] - v[..., 0]) / (L - 1)
    if convention == ZERO_ANCHOR:
        # R(-1) taken as 0, telescoping to R(L-1)
        return v[..., L - 1] / (L - 1)
    raise ImpactError(f"unknown decay convention {convention!r}")


def mean_decay(curve: ImpactCurve | np.ndarray, convention: str = LAGGED) -> float:
    """Average increment of the curve over lags ``0..L-1``.

    Parameters
    ----------
    curve : ImpactCurve or array
        Curve values at lags ``0..L``, ``L >= 2``.
    convention : {"lagged", "zero_anchor"}
        ``lagged`` averages the ``L-1`` increments ``R(j)-R(j-1)`` for
        ``j = 1..L-1``.  ``zero_anchor`` also counts ``j = 0`` with
        ``R(-1) = 0``, which adds ``R(0)`` to the sum.
    """
    v = curve.values if isinstance(curve, ImpactCurve) else np.asarray(curve, dtype=float)
    return float(_decay_from_values(v, convention))


def hit_indicator(curve: ImpactCurve | np.ndarray, beta_sign: int, convention: str = LAGGED) -> int:
    """1 when the mean decay runs against the sign of the impact, else 0."""
    if beta_sign not in (1, -1):
        raise ImpactError("beta_sign must be +1 or -1")
    if isinstance(curve, ImpactCurve) and curve.kind != RESPONSE:
        raise ImpactError("hit indicator is defined on response curves")
    return int(mean_decay(curve, convention) * beta_sign < 0)


def hit_indicators(values: np.ndarray, beta_sign: int, convention: str = LAGGED) -> np.ndarray:
    """Vectorised :func:`hit_indicator` over rows of an ``(R, L+1)`` array."""
    return (_decay_from_values(np.asarray(values, dtype=float), convention) * beta_sign < 0).astype(np.int64)


MONOTONE, WAVE, PERSISTENT, FLAT = "monotone", "wave", "persistent", "flat"


def classify_decay(
    curve: ImpactCurve,
    *,
    tol_flat: float | None = None,
    flat_factor: float = 1e-3,
    persistence_ratio: float = 0.5,
    persistence_lag: int = 3,
    monotone_tol: float | None = None,
) -> str:
    """Qualitative shape of an impact curve.

    Rules are checked in order: ``flat`` (all magnitudes below
    ``tol_flat``, default ``flat_factor`` times the SD of y), ``wave`` (a
    sign change), ``persistent`` (``|v[3]| > 0.5 |v[0]|``), ``monotone``
    (magnitudes nonincreasing up to ``monotone_tol``, default ``tol_flat``).
    Hump-shaped curves that pass none of the last three tests are reported as ``persistent``: a delayed peak points
    to superposed lags rather than geometric decay.
    """
    v = curve.values
    if curve.L < persistence_lag:
        raise ImpactError(f"classification needs L >= {persistence_lag}")
    tol = flat_factor * curve.y_sd if tol_flat is None else tol_flat
    a = np.abs(v)
    if a.max() < tol:
        return FLAT
    s = np.sign(v[a >= tol]) if tol > 0 else np.sign(v[v != 0])
    if np.any(s[1:] != s[:-1]):
        return WAVE
    if a[persistence_lag] > persistence_ratio * a[0]:
        return PERSISTENT
    if np.all(np.diff(a) <= (tol if monotone_tol is None else monotone_tol)):
        return MONOTONE
    return PERSISTENT
