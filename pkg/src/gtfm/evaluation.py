"""Model assessment: information criteria, fit measures, residual tests, OLS.

Information criteria work on the deviance scale (smaller is better).  The
pointwise log-likelihood matrices are ``(M, T)``: one row per posterior
draw, one column per observation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats
from scipy.special import logsumexp

KHAT_WARN = 0.7


class EvaluationError(ValueError):
    pass


# ---------------------------------------------------------------- criteria


def dic(loglik_draws, loglik_at_mean: float) -> tuple[float, float]:
    """Deviance information criterion.

    Parameters
    ----------
    loglik_draws : array_like, shape (M,)
        Total data log-likelihood at each posterior draw.
    loglik_at_mean : float
        Log-likelihood at the posterior mean (constrained scale).

    Returns
    -------
    dic, p_dic : float
    """
    ll = np.asarray(loglik_draws, dtype=float).ravel()
    if ll.size < 1:
        raise EvaluationError("at least one draw is required")
    if not math.isfinite(loglik_at_mean):
        raise EvaluationError("log-likelihood at the posterior mean is not finite")
    p_dic = 2.0 * (loglik_at_mean - ll.mean())
    return -2.0 * loglik_at_mean + 2.0 * p_dic, p_dic


@dataclass(frozen=True)
class WaicResult:
    waic: float
    se: float
    p_waic: float
    elpd: float
    se_elpd: float
    pointwise: np.ndarray = field(repr=False)


def waic(pointwise_loglik) -> WaicResult:
    """Widely applicable information criterion.

    ``se`` is on the deviance scale, ``2 sqrt(T var_i(elpd_i))``; ``se_elpd``
    is the same quantity for ``elpd`` (half of ``se``).
    """
    ll = np.asarray(pointwise_loglik, dtype=float)
    if ll.ndim != 2:
        raise EvaluationError("pointwise log-likelihood must be an (M, T) array")
    M, T = ll.shape
    if M < 2:
        raise EvaluationError("WAIC needs at least 2 draws")
    if T == 0:
        return WaicResult(0.0, 0.0, 0.0, 0.0, 0.0, np.zeros(0))
    lpd_i = logsumexp(ll, axis=0) - math.log(M)
    p_i = np.var(ll, axis=0, ddof=1)
    elpd_i = lpd_i - p_i
    se_elpd = math.sqrt(T * np.var(elpd_i)) if T > 1 else 0.0
    elpd = float(elpd_i.sum())
    return WaicResult(-2.0 * elpd, 2.0 * se_elpd, float(p_i.sum()), elpd, se_elpd, elpd_i)


def _gpdfit(x: np.ndarray) -> tuple[float, float]:
    """Empirical-Bayes fit of a generalized Pareto to sorted exceedances.

    Returns ``(k, sigma)``; ``k`` is shrunk toward 0.5 by a weak prior.
    """
    prior_bs, prior_k = 3, 10
    n = x.size
    m_est = 30 + int(n ** 0.5)
    b = 1.0 - np.sqrt(m_est / (np.arange(1, m_est + 1, dtype=float) - 0.5))
    b /= prior_bs * x[int(n / 4 + 0.5) - 1]
    b += 1.0 / x[-1]
    k = np.log1p(-b[:, None] * x).mean(axis=1)
    len_scale = n * (np.log(-(b / k)) - k - 1.0)
    w = 1.0 / np.exp(len_scale - len_scale[:, None]).sum(axis=1)
    keep = w >= 10 * np.finfo(float).eps
    w, b = w[keep], b[keep]
    w /= w.sum()
    b_post = float(np.sum(b * w))
    k_hat = float(np.log1p(-b_post * x).mean())
    sigma = -k_hat / b_post
    k_hat = (n * k_hat + prior_k * 0.5) / (n + prior_k)
    return k_hat, sigma


def _gpinv(p: np.ndarray, k: float, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return np.full_like(p, np.nan)
    if k == 0:
        return -sigma * np.log1p(-p)
    return sigma * np.expm1(-k * np.log1p(-p)) / k


def psis(log_ratios) -> tuple[np.ndarray, float]:
    """Pareto-smoothed importance weights.

    Parameters
    ----------
    log_ratios : array_like, shape (M,)
        Raw log importance ratios.

    Returns
    -------
    log_weights : ndarray
        Smoothed, normalised log weights (``logsumexp == 0``).
    khat : float
        Estimated Pareto shape of the upper tail; ``inf`` if the tail has
        fewer than 5 points.
    """
    lw = np.asarray(log_ratios, dtype=float).copy()
    M = lw.size
    lw -= lw.max()
    tail = int(math.ceil(min(0.2 * M, 3.0 * math.sqrt(M))))
    order = np.argsort(lw, kind="stable")
    cutoff = max(lw[order[-tail - 1]] if tail < M else -np.inf, math.log(np.finfo(float).tiny))
    idx = np.flatnonzero(lw > cutoff)
    khat = math.inf
    if idx.size > 4:
        x = lw[idx]
        srt = np.argsort(x, kind="stable")
        exp_cut = math.exp(cutoff)
        khat, sigma = _gpdfit(np.exp(x[srt]) - exp_cut)
        if math.isfinite(khat):
            probs = np.arange(0.5, idx.size) / idx.size
            smooth = np.log(_gpinv(probs, khat, sigma) + exp_cut)
            # never exceed the largest raw weight
            smooth = np.minimum(smooth, 0.0)
            lw[idx[srt]] = smooth
    lw -= logsumexp(lw)
    return lw, khat


@dataclass(frozen=True)
class LooResult:
    looic: float
    se: float
    elpd: float
    p_loo: float
    khat: np.ndarray
    pointwise: np.ndarray = field(repr=False)

    @property
    def n_bad_khat(self) -> int:
        return int(np.sum(self.khat > KHAT_WARN))


def looic(pointwise_loglik) -> LooResult:
    """Leave-one-out information criterion by PSIS.

    ``khat`` above 0.7 marks observations whose importance weights are too
    heavy-tailed for a reliable estimate.
    """
    ll = np.asarray(pointwise_loglik, dtype=float)
    if ll.ndim != 2:
        raise EvaluationError("pointwise log-likelihood must be an (M, T) array")
    M, T = ll.shape
    if M < 25:
        raise EvaluationError("PSIS-LOO needs at least 25 draws")
    elpd_i = np.empty(T)
    khat = np.empty(T)
    for i in range(T):
        lw, khat[i] = psis(-ll[:, i])
        elpd_i[i] = logsumexp(lw + ll[:, i])
    lpd = float(np.sum(logsumexp(ll, axis=0) - math.log(M)))
    elpd = float(elpd_i.sum())
    se = 2.0 * math.sqrt(T * np.var(elpd_i)) if T > 1 else 0.0
    return LooResult(-2.0 * elpd, se, elpd, lpd - elpd, khat, elpd_i)


# ---------------------------------------------------------------- fit measures


@dataclass(frozen=True)
class Gof:
    mase: float
    mse: float
    r2: float | None


def gof(y, fitted) -> Gof:
    """MASE, MSE and R-squared of fitted values.

    NaN entries in ``fitted`` mark time points without a fitted value
    (e.g. the first observation of a one-step model) and are skipped; the
    MASE scale is the mean absolute first difference of the full ``y``.
    R-squared is ``None`` for a constant ``y``.
    """
    y = np.asarray(y, dtype=float)
    f = np.asarray(fitted, dtype=float)
    if y.shape != f.shape or y.ndim != 1:
        raise EvaluationError("y and fitted must be 1-d with equal length")
    if y.size < 2:
        raise EvaluationError("T >= 2 required")
    ok = ~np.isnan(f)
    if not ok.any():
        raise EvaluationError("no fitted values")
    e = y[ok] - f[ok]
    scale = np.mean(np.abs(np.diff(y)))
    mase = float(np.mean(np.abs(e)) / scale) if scale > 0 else math.nan
    mse = float(np.mean(e * e))
    ss_tot = float(np.sum((y[ok] - y[ok].mean()) ** 2))
    r2 = None if ss_tot == 0 else 1.0 - float(e @ e) / ss_tot
    return Gof(mase, mse, r2)


# ---------------------------------------------------------------- residual tests


def _acf(e: np.ndarray, max_lag: int) -> np.ndarray:
    d = e - e.mean()
    den = d @ d
    if den == 0:
        raise EvaluationError("residuals have zero variance")
    return np.array([d[k:] @ d[: d.size - k] / den for k in range(1, max_lag + 1)])


@dataclass(frozen=True)
class LjungBoxRow:
    lag: int
    statistic: float
    p_value: float


def ljung_box(residuals, max_lag: int = 10) -> list[LjungBoxRow]:
    """Ljung-Box portmanteau statistics for lags ``1..max_lag``."""
    e = np.asarray(residuals, dtype=float)
    T = e.size
    if not 1 <= max_lag < T:
        raise EvaluationError(f"need 1 <= max_lag < T (max_lag={max_lag}, T={T})")
    rho = _acf(e, max_lag)
    k = np.arange(1, max_lag + 1)
    q = T * (T + 2) * np.cumsum(rho ** 2 / (T - k))
    return [LjungBoxRow(int(h), float(v), float(stats.chi2.sf(v, h))) for h, v in zip(k, q)]


def durbin_watson(residuals) -> float:
    e = np.asarray(residuals, dtype=float)
    if e.size < 2:
        raise EvaluationError("T >= 2 required")
    energy = float(e @ e)
    if energy == 0:
        raise EvaluationError("residuals are all zero")
    d = np.diff(e)
    return float(d @ d) / energy


# MacKinnon (2010) response-surface coefficients, constant and no trend:
# critical value = b0 + b1 / n + b2 / n**2
ADF_CRIT = {
    "1%": (-3.43035, -6.5393, -16.786),
    "5%": (-2.86154, -2.8903, -4.234),
    "10%": (-2.56677, -1.5384, -2.809),
}


@dataclass(frozen=True)
class AdfResult:
    statistic: float
    critical: dict
    reject_5: bool
    reject_1: bool
    lags: int
    nobs: int


def adf(series, max_lag: int = 1) -> AdfResult:
    """Augmented Dickey-Fuller test with a constant and ``max_lag`` lagged
    differences.  Decisions use finite-sample critical values; no p-value.

    Rejecting means evidence against a unit root (stationarity).
    """
    y = np.asarray(series, dtype=float)
    if max_lag < 0:
        raise EvaluationError("max_lag must be >= 0")
    if y.size < max_lag + 10:
        raise EvaluationError(f"ADF needs T >= max_lag + 10 (T={y.size})")
    dy = np.diff(y)
    n = dy.size - max_lag
    cols = [np.ones(n), y[max_lag:-1]]
    for j in range(1, max_lag + 1):
        cols.append(dy[max_lag - j: dy.size - j])
    X = np.column_stack(cols)
    target = dy[max_lag:]
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise EvaluationError("singular ADF design (constant or degenerate series)")
    coef, *_ = np.linalg.lstsq(X, target, rcond=None)
    resid = target - X @ coef
    dof = n - X.shape[1]
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(X.T @ X)
    tstat = float(coef[1] / math.sqrt(cov[1, 1]))
    crit = {k: b0 + b1 / n + b2 / n ** 2 for k, (b0, b1, b2) in ADF_CRIT.items()}
    return AdfResult(tstat, crit, tstat < crit["5%"], tstat < crit["1%"], max_lag, n)


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    note: str = "normal parameters estimated from the sample; p-value is conservative (Lilliefors)"


def ks_normality(residuals) -> KsResult:
    """Kolmogorov-Smirnov test against a normal with the sample mean and SD."""
    e = np.asarray(residuals, dtype=float)
    if e.size < 5:
        raise EvaluationError("KS test needs T >= 5")
    sd = float(np.std(e, ddof=1))
    if sd == 0:
        raise EvaluationError("residuals have zero variance")
    res = stats.kstest(e, "norm", args=(float(e.mean()), sd))
    return KsResult(float(res.statistic), float(res.pvalue))


@dataclass(frozen=True)
class ResidualTests:
    ljung_box: list
    dw: float
    adf: AdfResult | None
    ks: KsResult | None

    def to_json(self) -> dict:
        return {
            "ljung_box": [asdict(r) for r in self.ljung_box],
            "durbin_watson": self.dw,
            "adf": None if self.adf is None else asdict(self.adf),
            "ks": None if self.ks is None else asdict(self.ks),
        }


def residual_tests(residuals, lb_lags: int = 10, adf_lags: int = 1) -> ResidualTests:
    """Run all residual diagnostics, skipping those the sample is too short for."""
    e = np.asarray(residuals, dtype=float)
    e = e[~np.isnan(e)]
    lb = ljung_box(e, min(lb_lags, e.size - 1))
    try:
        a = adf(e, adf_lags)
    except EvaluationError:
        a = None
    try:
        k = ks_normality(e)
    except EvaluationError:
        k = None
    return ResidualTests(lb, durbin_watson(e), a, k)


# ---------------------------------------------------------------- reports


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


@dataclass
class FitReport:
    model: str
    mase: float
    mse: float
    r2: float | None
    dic: float | None = None
    p_dic: float | None = None
    waic: float | None = None
    se_waic: float | None = None
    looic: float | None = None
    se_looic: float | None = None
    max_khat: float | None = None
    residuals: ResidualTests | None = None

    def to_json(self) -> dict:
        out = {k: _clean(v) for k, v in asdict(self).items() if k != "residuals"}
        out["residuals"] = None if self.residuals is None else self.residuals.to_json()
        return out

    COMPARE_HEADER = ["model", "MASE", "MSE", "R2", "DIC", "WAIC", "SE_WAIC", "LOOIC", "SE_LOOIC"]

    def compare_row(self) -> list:
        return [self.model, self.mase, self.mse, self.r2, self.dic, self.waic, self.se_waic, self.looic, self.se_looic]


# ---------------------------------------------------------------- OLS baseline


@dataclass
class OlsResult:
    names: list
    coef: np.ndarray
    se: np.ndarray
    t: np.ndarray
    p: np.ndarray
    sigma: float
    fitted: np.ndarray
    resid: np.ndarray
    report: FitReport

    def table(self) -> list[list]:
        """Rows of (term, Estimate, Std. Error, t value, Pr(>|t|))."""
        return [[n, float(c), float(s), float(tv), float(pv)]
                for n, c, s, tv, pv in zip(self.names, self.coef, self.se, self.t, self.p)]

    def project(self, X_future) -> np.ndarray:
        """Static projection ``X beta`` for future regressors."""
        return np.asarray(X_future, dtype=float) @ self.coef


def ols(y, X, names=None, model_name: str = "OLS", lb_lags: int = 10) -> OlsResult:
    """Ordinary least squares with classical standard errors."""
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise EvaluationError("X must be (T, k) with T = len(y)")
    T, k = X.shape
    if T <= k:
        raise EvaluationError(f"OLS needs T > k (T={T}, k={k})")
    if np.linalg.matrix_rank(X) < k:
        raise EvaluationError("rank-deficient design")
    names = [f"x{i}" for i in range(k)] if names is None else list(names)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    fitted = X @ coef
    resid = y - fitted
    dof = T - k
    s2 = float(resid @ resid) / dof
    se = np.sqrt(np.diag(s2 * np.linalg.inv(X.T @ X)))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, coef / se, np.where(coef == 0, 0.0, np.inf * np.sign(coef)))
    p = 2.0 * stats.t.sf(np.abs(t), dof)
    g = gof(y, fitted)
    tests = residual_tests(resid, lb_lags) if np.any(resid != 0) else None
    report = FitReport(model_name, g.mase, g.mse, g.r2, residuals=tests)
    return OlsResult(names, coef, se, t, p, math.sqrt(s2), fitted, resid, report)


def ols_baseline(frame, model_name: str = "OLS", lb_lags: int = 10) -> OlsResult:
    """OLS of the target on an intercept and every other column of ``frame``."""
    from .series import INTERCEPT

    cols = [n for n in frame.names if n != frame.target]
    X = [frame.column(c) for c in cols]
    if INTERCEPT not in cols:
        cols = [INTERCEPT, *cols]
        X = [np.ones(frame.T), *X]
    return ols(frame.y, np.column_stack(X), cols, model_name, lb_lags)


# ---------------------------------------------------------------- Bayesian fits


def posterior_mean_point(model, post) -> np.ndarray:
    """Sampler-scale vector at the constrained posterior mean."""
    return model.unconstrain(post.draws.mean(axis=0))


def fitted_values(model, post) -> np.ndarray:
    """In-sample fitted values of a sampled model.

    With observation noise the fit is the posterior mean of ``E_t``.
    Without it the fit is the one-step mean ``phi_t y_{t-1} + x_t' beta`` at
    the posterior means; the first observation has no fit (NaN).
    """
    v = post.draws.mean(axis=0)
    lay = model.layout
    if "E" in lay:
        return v[lay.slot("E").slice].copy()
    p = len(model.spec.coef_names)
    beta = v[:p]
    phi = v[lay.slot("phi_path").slice] if "phi_path" in lay else np.full(model.T, v[lay.slot("phi").start])
    out = np.full(model.T, np.nan)
    out[1:] = phi[1:] * model.y[:-1] + model.X[1:] @ beta
    return out


def fit_report(model, post, lb_lags: int = 10) -> FitReport:
    """Fit measures, information criteria and residual tests for one model."""
    pw = post.pointwise
    fitted = fitted_values(model, post)
    g = gof(model.y, fitted)
    ll_mean = float(model.pointwise(posterior_mean_point(model, post)).sum())
    d, pd = dic(pw.sum(axis=1), ll_mean)
    w = waic(pw)
    lo = looic(pw)
    tests = residual_tests(model.y - fitted, lb_lags)
    return FitReport(model.spec.name, g.mase, g.mse, g.r2, d, pd, w.waic, w.se, lo.looic, lo.se,
                     float(np.max(lo.khat)), tests)
