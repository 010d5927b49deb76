"""Hamiltonian Monte Carlo with step-size and mass-matrix adaptation.

Trajectories have a fixed nominal length whose step count is jittered
uniformly in ``[1, n_leapfrog]`` at every iteration.  During warmup the step
size is tuned by dual averaging toward ``target_accept`` and the inverse
metric is estimated over doubling windows (diagonal or dense).  Chains are
independent; chain ``c`` draws from ``default_rng(seed + c)``.

Any object exposing ``dim``, ``names``, ``logp_grad(z)`` and
``constrain(z)`` can be sampled; :class:`gtfm.model.BoundModel` also
provides ``pointwise(z)`` and ``initial_point(rng)``, which are used when
present.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg, stats

DIVERGENCE_NATS = 1000.0
QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    """Sampler settings.

    The defaults keep 5000 draws per chain after 5000 warmup iterations.
    ``metric`` is ``"dense"`` (the default, suited to the strongly
    correlated coefficient and latent blocks) or ``"diag"``;
    ``n_leapfrog`` is the maximum number of leapfrog steps per trajectory.
    """

    n_chains: int = 4
    n_warmup: int = 5000
    n_keep: int = 5000
    step_size: float = 0.1
    n_leapfrog: int = 32
    target_accept: float = 0.8
    seed: int = 0
    metric: str = "dense"
    init_radius: float = 2.0
    threads: int = 1

    def __post_init__(self):
        if self.n_chains < 1:
            raise SamplerError("n_chains must be >= 1")
        if self.n_warmup < 1 or self.n_keep < 1:
            raise SamplerError("n_warmup and n_keep must be >= 1")
        if not 0 < self.target_accept < 1:
            raise SamplerError("target_accept must lie in (0, 1)")
        if not self.step_size > 0:
            raise SamplerError("step_size must be > 0")
        if self.n_leapfrog < 1:
            raise SamplerError("n_leapfrog must be >= 1")
        if self.metric not in ("diag", "dense"):
            raise SamplerError("metric must be 'diag' or 'dense'")
        if self.threads < 1:
            raise SamplerError("threads must be >= 1")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "SamplerConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(obj) - known
        if extra:
            raise SamplerError(f"unknown sampler settings {sorted(extra)}")
        return cls(**obj)


@dataclass(eq=False)
class PosteriorDraws:
    """Pooled post-warmup draws, ordered by chain then iteration.

    ``draws`` holds constrained values (``M x dim``), ``z`` the matching
    unconstrained vectors, ``pointwise`` the per-observation log-likelihood
    (``M x T``) when the target provides it.
    """

    draws: np.ndarray
    names: list
    z: np.ndarray
    chain_ids: np.ndarray
    accept_stats: np.ndarray
    divergent: np.ndarray
    pointwise: np.ndarray | None = None
    step_sizes: np.ndarray = field(default_factory=lambda: np.zeros(0))
    warmup_divergences: int = 0
    seconds: float = 0.0

    @property
    def M(self) -> int:
        return self.draws.shape[0]

    @property
    def n_chains(self) -> int:
        return int(self.chain_ids.max()) + 1 if self.M else 0

    def column(self, name: str) -> np.ndarray:
        try:
            return self.draws[:, self.names.index(name)]
        except ValueError:
            raise KeyError(name) from None

    def by_chain(self, name_or_index) -> np.ndarray:
        """``(n_chains, n_keep)`` array of one quantity."""
        col = self.column(name_or_index) if isinstance(name_or_index, str) else self.draws[:, name_or_index]
        return col.reshape(self.n_chains, -1)

    def to_csv(self, path) -> None:
        header = ",".join(["chain", *self.names])
        rows = np.column_stack([self.chain_ids, self.draws])
        fmt = ["%d"] + ["%.17g"] * len(self.names)
        np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt=fmt)


# ---------------------------------------------------------------- integrator


def leapfrog(z, p, eps, grad, inv_metric=None):
    """One half-kick / drift / half-kick step.

    Parameters
    ----------
    z, p : ndarray
        Position and momentum.
    eps : float
        Step size, ``>= 0``.
    grad : callable
        Gradient of the log density (the negative potential gradient).
    inv_metric : ndarray, optional
        Inverse mass matrix, diagonal (1-d) or dense (2-d).  Identity if
        omitted.

    Returns
    -------
    z_new, p_new : ndarray
        Non-finite values signal a divergence to the caller.
    """
    if eps < 0:
        raise SamplerError("step size must be >= 0")
    z = np.asarray(z, dtype=float)
    p = np.asarray(p, dtype=float)
    p_half = p + 0.5 * eps * grad(z)
    z_new = z + eps * _velocity(p_half, inv_metric)
    p_new = p_half + 0.5 * eps * grad(z_new)
    return z_new, p_new


def _velocity(p, inv_metric):
    if inv_metric is None:
        return p
    return inv_metric * p if inv_metric.ndim == 1 else inv_metric @ p


def _kinetic(p, inv_metric):
    return 0.5 * float(p @ _velocity(p, inv_metric))


# ---------------------------------------------------------------- adaptation


class DualAveraging:
    """Step-size adaptation toward a target acceptance statistic."""

    def __init__(self, eps0: float, target: float, gamma=0.05, t0=10.0, kappa=0.75):
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.restart(eps0)

    def restart(self, eps0: float):
        self.mu = math.log(10.0 * eps0)
        self.h_bar = 0.0
        self.log_eps_bar = 0.0
        self.n = 0
        self.eps = eps0

    def update(self, accept: float) -> float:
        self.n += 1
        w = 1.0 / (self.n + self.t0)
        self.h_bar = (1 - w) * self.h_bar + w * (self.target - accept)
        log_eps = self.mu - math.sqrt(self.n) / self.gamma * self.h_bar
        eta = self.n ** -self.kappa
        self.log_eps_bar = eta * log_eps + (1 - eta) * self.log_eps_bar
        self.eps = math.exp(log_eps)
        return self.eps

    @property
    def final(self) -> float:
        return math.exp(self.log_eps_bar)


def warmup_windows(n_warmup: int) -> list[int]:
    """Iterations (exclusive ends) at which the metric is re-estimated."""
    init, term, base = 75, 50, 25
    if n_warmup < 20:
        return []
    if n_warmup < init + term + base:
        init, term = int(0.15 * n_warmup), int(0.1 * n_warmup)
        base = n_warmup - init - term
    ends = []
    start, size = init, base
    last = n_warmup - term
    while start < last:
        end = start + size
        # stretch the final window when the next one would not fit
        if end + 2 * size > last:
            end = last
        ends.append(end)
        start, size = end, 2 * size
    return ends


def _regularised_metric(samples: np.ndarray, dense: bool) -> np.ndarray:
    n = samples.shape[0]
    shrink = 1e-3 * 5.0 / (n + 5.0)
    if dense:
        S = np.atleast_2d(np.cov(samples, rowvar=False))
        return (n / (n + 5.0)) * S + shrink * np.eye(S.shape[0])
    return (n / (n + 5.0)) * samples.var(axis=0, ddof=1) + shrink


# ---------------------------------------------------------------- sampler


def _find_reasonable_eps(z, lp, g, eps, logp_grad, inv_metric, chol, rng):
    p = _draw_momentum(rng, z.size, inv_metric, chol)
    h0 = lp - _kinetic(p, inv_metric)
    grad = lambda q: logp_grad(q)[1]

    def log_ratio(e):
        z1, p1 = leapfrog(z, p, e, grad, inv_metric)
        lp1 = logp_grad(z1)[0]
        h1 = lp1 - _kinetic(p1, inv_metric)
        return h1 - h0 if np.isfinite(h1) else -np.inf

    direction = 1 if log_ratio(eps) > math.log(0.5) else -1
    for _ in range(50):
        new = eps * 2.0 ** direction
        r = log_ratio(new)
        if (direction == 1 and not r > math.log(0.5)) or (direction == -1 and r > math.log(0.5)):
            break
        eps = new
    return eps if direction == 1 else eps * 0.5


def _draw_momentum(rng, dim, inv_metric, chol):
    n = rng.standard_normal(dim)
    if inv_metric.ndim == 1:
        return n / np.sqrt(inv_metric)
    # inv_metric = L L', momentum covariance is its inverse
    return linalg.solve_triangular(chol, n, lower=True, trans="T")


def _safe_logp_grad(logp_grad):
    def f(z):
        try:
            lp, g = logp_grad(z)
        except (FloatingPointError, OverflowError, ValueError, ZeroDivisionError):
            return -np.inf, np.full(z.shape, np.nan)
        if not np.isfinite(lp):
            return -np.inf, g
        return lp, g
    return f


def _initial_point(target, rng, radius):
    for _ in range(100):
        if hasattr(target, "initial_point"):
            z = np.asarray(target.initial_point(rng, radius), dtype=float)
        else:
            z = rng.uniform(-radius, radius, target.dim)
        lp, g = target.logp_grad(z)
        if np.isfinite(lp) and np.all(np.isfinite(g)):
            return z, lp, g
    raise SamplerError("could not find an initial point with finite log density and gradient")


def run_chain(target, config: SamplerConfig, chain_id: int) -> dict:
    """Warm up and sample one chain; returns raw arrays for merging."""
    # wild early trajectories overflow harmlessly; they are rejected as divergent
    with np.errstate(over="ignore", invalid="ignore"):
        return _run_chain(target, config, chain_id)


def _run_chain(target, config: SamplerConfig, chain_id: int) -> dict:
    rng = np.random.default_rng(config.seed + chain_id)
    logp_grad = _safe_logp_grad(target.logp_grad)
    dim = target.dim
    dense = config.metric == "dense"
    z, lp, g = _initial_point(target, rng, config.init_radius)
    inv_metric = np.eye(dim) if dense else np.ones(dim)
    chol = np.eye(dim) if dense else None

    eps = _find_reasonable_eps(z, lp, g, config.step_size, logp_grad, inv_metric, chol, rng)
    da = DualAveraging(eps, config.target_accept)
    windows = warmup_windows(config.n_warmup)
    window_start = int(0.15 * config.n_warmup) if config.n_warmup < 150 else 75
    window_draws = []

    n_total = config.n_warmup + config.n_keep
    keep_z = np.empty((config.n_keep, dim))
    accept = np.empty(config.n_keep)
    divergent = np.zeros(config.n_keep, dtype=bool)
    warm_div = 0

    for it in range(n_total):
        warm = it < config.n_warmup
        p = _draw_momentum(rng, dim, inv_metric, chol)
        h0 = lp - _kinetic(p, inv_metric)
        n_steps = int(rng.integers(1, config.n_leapfrog + 1))
        z1, p1, lp1, g1 = z, p, lp, g
        bad = False
        for _ in range(n_steps):
            p1 = p1 + 0.5 * eps * g1
            z1 = z1 + eps * _velocity(p1, inv_metric)
            lp1, g1 = logp_grad(z1)
            if not (np.isfinite(lp1) and np.all(np.isfinite(g1))):
                bad = True
                break
            p1 = p1 + 0.5 * eps * g1
        if bad:
            log_ratio = -np.inf
            diverged = True
        else:
            log_ratio = (lp1 - _kinetic(p1, inv_metric)) - h0
            diverged = bool(-log_ratio > DIVERGENCE_NATS) or not np.isfinite(log_ratio)
        a = 1.0 if log_ratio >= 0 else (math.exp(log_ratio) if np.isfinite(log_ratio) else 0.0)
        if rng.uniform() < a:
            z, lp, g = z1, lp1, g1

        if warm:
            warm_div += diverged
            eps = da.update(a)
            if window_start <= it < (windows[-1] if windows else 0):
                window_draws.append(z.copy())
            if windows and it + 1 == windows[0]:
                windows.pop(0)
                if len(window_draws) >= 3:
                    inv_metric = _regularised_metric(np.asarray(window_draws), dense)
                    if dense:
                        chol = linalg.cholesky(inv_metric, lower=True)
                window_draws = []
                eps = _find_reasonable_eps(z, lp, g, eps, logp_grad, inv_metric, chol, rng)
                da.restart(eps)
            if it + 1 == config.n_warmup:
                if warm_div == config.n_warmup:
                    raise SamplerError(
                        f"chain {chain_id}: every warmup iteration diverged; the posterior "
                        "geometry is too hard for this step size / parameterisation")
                eps = da.final
        else:
            k = it - config.n_warmup
            keep_z[k] = z
            accept[k] = a
            divergent[k] = diverged
    return {"z": keep_z, "accept": accept, "divergent": divergent, "eps": eps, "warm_div": warm_div}


def sample(target, frame=None, config: SamplerConfig | None = None) -> PosteriorDraws:
    """Draw from the posterior of ``target``.

    ``target`` is a :class:`gtfm.model.ModelSpec` (then ``frame`` supplies
    the data) or any object with the target interface described in the
    module docstring.
    """
    from .model import BoundModel, ModelSpec

    config = config or SamplerConfig()
    if isinstance(target, ModelSpec):
        if frame is None:
            raise SamplerError("a data frame is required to sample a model spec")
        target = BoundModel(target, frame)
    t0 = time.perf_counter()
    chains = range(config.n_chains)
    if config.threads > 1 and config.n_chains > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(lambda c: run_chain(target, config, c), chains))
    else:
        results = [run_chain(target, config, c) for c in chains]

    z = np.concatenate([r["z"] for r in results])
    draws = np.asarray(target.constrain(z))
    pointwise = None
    if hasattr(target, "pointwise"):
        pointwise = np.array([target.pointwise(row) for row in z])
    return PosteriorDraws(
        draws=draws,
        names=list(target.names),
        z=z,
        chain_ids=np.repeat(np.arange(config.n_chains), config.n_keep),
        accept_stats=np.concatenate([r["accept"] for r in results]),
        divergent=np.concatenate([r["divergent"] for r in results]),
        pointwise=pointwise,
        step_sizes=np.array([r["eps"] for r in results]),
        warmup_divergences=int(sum(r["warm_div"] for r in results)),
        seconds=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------- diagnostics


def _z_scale(ary):
    r = stats.rankdata(ary, method="average").reshape(ary.shape)
    return stats.norm.ppf((r - 3 / 8) / (ary.size - 2 * 3 / 8 + 1))


def _split(ary):
    half = ary.shape[1] // 2
    return np.vstack((ary[:, :half], ary[:, -half:]))


def _rhat_raw(ary):
    n = ary.shape[1]
    b = n * np.var(ary.mean(axis=1), ddof=1)
    w = np.mean(np.var(ary, axis=1, ddof=1))
    return math.sqrt((b / w + n - 1) / n)


def _constant(ary) -> bool:
    return float(np.ptp(ary)) < np.finfo(float).resolution


def rhat(ary) -> float:
    """Rank-normalised split R-hat of a ``(chains, draws)`` array.

    The larger of the bulk and the folded (tail) statistic.  Returns NaN
    with fewer than 2 chains or 4 draws per chain, and exactly 1.0 when
    every chain is the same constant.
    """
    ary = np.asarray(ary, dtype=float)
    if ary.ndim != 2 or ary.shape[0] < 2 or ary.shape[1] < 4:
        return math.nan
    if _constant(ary):
        return 1.0
    s = _split(ary)
    bulk = _rhat_raw(_z_scale(s))
    tail = _rhat_raw(_z_scale(np.abs(s - np.median(s))))
    return max(bulk, tail)


def _autocov(ary):
    """Biased autocovariance along the last axis via FFT."""
    n = ary.shape[-1]
    x = ary - ary.mean(axis=-1, keepdims=True)
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, n=m, axis=-1)
    return np.fft.irfft(f * np.conj(f), n=m, axis=-1)[..., :n] / n


def _ess_raw(ary) -> float:
    n_chain, n = ary.shape
    if _constant(ary):
        return float(ary.size)
    acov = _autocov(ary)
    mean_var = np.mean(acov[:, 0]) * n / (n - 1.0)
    var_plus = mean_var * (n - 1.0) / n
    if n_chain > 1:
        var_plus += np.var(ary.mean(axis=1), ddof=1)
    rho = np.zeros(n)
    rho[0] = rho_even = 1.0
    rho[1] = rho_odd = 1.0 - (mean_var - np.mean(acov[:, 1])) / var_plus
    # initial positive sequence
    t = 1
    while t < n - 3 and rho_even + rho_odd > 0.0:
        rho_even = 1.0 - (mean_var - np.mean(acov[:, t + 1])) / var_plus
        rho_odd = 1.0 - (mean_var - np.mean(acov[:, t + 2])) / var_plus
        if rho_even + rho_odd >= 0:
            rho[t + 1], rho[t + 2] = rho_even, rho_odd
        t += 2
    max_t = t - 2
    if rho_even > 0:
        rho[max_t + 1] = rho_even
    # initial monotone sequence
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = rho[t + 2] = (rho[t - 1] + rho[t]) / 2.0
        t += 2
    total = n_chain * n
    tau = -1.0 + 2.0 * np.sum(rho[: max_t + 1]) + np.sum(rho[max_t + 1: max_t + 2])
    tau = max(tau, 1.0 / math.log10(total))
    return float(total / tau)


def ess(ary) -> float:
    """Rank-normalised bulk effective sample size of ``(chains, draws)``."""
    ary = np.atleast_2d(np.asarray(ary, dtype=float))
    if ary.shape[1] < 4:
        return math.nan
    if _constant(ary):
        return float(ary.size)
    return _ess_raw(_z_scale(_split(ary)))


@dataclass
class Diagnostics:
    names: list
    rhat: np.ndarray
    ess: np.ndarray
    divergences: int
    mean_accept: float

    def max_rhat(self) -> float:
        return float(np.nanmax(self.rhat)) if len(self.rhat) else math.nan

    def min_ess(self) -> float:
        return float(np.nanmin(self.ess)) if len(self.ess) else math.nan

    def to_json(self) -> dict:
        nan = lambda v: None if not np.isfinite(v) else float(v)
        return {
            "rhat": {n: nan(r) for n, r in zip(self.names, self.rhat)},
            "ess": {n: nan(e) for n, e in zip(self.names, self.ess)},
            "divergences": int(self.divergences),
            "mean_accept": float(self.mean_accept),
            "max_rhat": nan(self.max_rhat()),
            "min_ess": nan(self.min_ess()),
        }


def diagnostics(post: PosteriorDraws, names=None) -> Diagnostics:
    """Split R-hat, bulk ESS per parameter and the divergence count."""
    names = list(post.names if names is None else names)
    rh, es = [], []
    for n in names:
        a = post.by_chain(n)
        rh.append(rhat(a) if post.n_chains >= 2 else math.nan)
        es.append(ess(a))
    return Diagnostics(names, np.array(rh), np.array(es), int(post.divergent.sum()),
                       float(post.accept_stats.mean()) if post.M else math.nan)


@dataclass
class SummaryRow:
    name: str
    mean: float
    sd: float
    quantiles: tuple

    def as_list(self) -> list:
        return [self.name, self.mean, self.sd, *self.quantiles]


SUMMARY_HEADER = ["parameter", "mean", "sd", "q2.5", "q25", "q50", "q75", "q97.5"]


def summarize(post_or_array, names=None) -> list[SummaryRow]:
    """Mean, SD (ddof=1) and 2.5/25/50/75/97.5% quantiles per parameter.

    Quantiles interpolate linearly between order statistics.  Accepts
    :class:`PosteriorDraws` or a plain ``(M, k)`` array plus ``names``.
    """
    if isinstance(post_or_array, PosteriorDraws):
        names = post_or_array.names if names is None else list(names)
        cols = [post_or_array.column(n) for n in names]
    else:
        arr = np.atleast_2d(np.asarray(post_or_array, dtype=float))
        names = [f"x{i}" for i in range(arr.shape[1])] if names is None else list(names)
        cols = [arr[:, i] for i in range(len(names))]
    rows = []
    for n, c in zip(names, cols):
        sd = float(np.std(c, ddof=1)) if c.size > 1 else 0.0
        q = tuple(float(v) for v in np.quantile(c, QUANTILES, method="linear"))
        rows.append(SummaryRow(n, float(np.mean(c)), sd, q))
    return rows


def write_summary(rows: list[SummaryRow], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(SUMMARY_HEADER) + "\n")
        for r in rows:
            fh.write(",".join([r.name] + [repr(float(v)) for v in r.as_list()[1:]]) + "\n")


# ---------------------------------------------------------------- toy targets


class GaussianTarget:
    """Multivariate normal target, handy for checking the sampler."""

    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(cov, dtype=float))
        self.prec = np.linalg.inv(self.cov)
        self.dim = self.mean.size
        self.names = [f"x{i}" for i in range(self.dim)]

    def logp_grad(self, z):
        d = np.asarray(z) - self.mean
        g = -self.prec @ d
        return 0.5 * float(d @ g), g

    def constrain(self, z):
        return np.asarray(z, dtype=float)
