import math

import numpy as np
import pytest

from gtfm.hmc import (SUMMARY_HEADER, GaussianTarget, PosteriorDraws, SamplerConfig, SamplerError, diagnostics, ess,
                      leapfrog, rhat, sample, summarize, warmup_windows, write_summary)
from gtfm.model import BoundModel, catalog_model


def diag_cases():
    """Chains whose diagnostics were computed once with arviz 0.23.4."""
    rng = np.random.default_rng(2024)
    out = {"iid": rng.standard_normal((4, 500))}
    e = rng.standard_normal((4, 500))
    ar = np.zeros_like(e)
    for t in range(1, 500):
        ar[:, t] = 0.9 * ar[:, t - 1] + e[:, t]
    out["ar09"] = ar
    sh = rng.standard_normal((4, 200))
    sh[3] += 1.0
    out["shifted"] = sh
    out["cubed"] = rng.standard_normal((3, 300)) ** 3
    sc = rng.standard_normal((4, 300))
    sc[0] *= 3.0
    out["scaled"] = sc
    return out


# arviz.rhat (rank, max of bulk and folded) and arviz.ess(method="bulk")
ARVIZ = {
    "iid": (0.9993245811007263, 2037.2060061121847),
    "ar09": (1.048268834488014, 72.51469601411385),
    "shifted": (1.09089487192698, 31.260537757502565),
    "cubed": (1.0093136291632765, 1031.9366264683727),
    "scaled": (1.1613714786487446, 1294.4878630973808),
}


@pytest.mark.parametrize("case", list(ARVIZ))
def test_rhat_and_ess_match_arviz(case):
    a = diag_cases()[case]
    r, e = ARVIZ[case]
    assert rhat(a) == pytest.approx(r, rel=1e-10)
    assert ess(a) == pytest.approx(e, rel=1e-10)


# ---------------------------------------------------------------- integrator


def test_leapfrog_hand_example():
    z, p = leapfrog(np.array([0.0]), np.array([1.0]), 0.1, lambda q: -q)
    assert z[0] == pytest.approx(0.1, abs=1e-15)
    assert p[0] == pytest.approx(0.995, abs=1e-15)


def test_leapfrog_zero_step_is_identity():
    z0, p0 = np.array([0.3, -1.2]), np.array([0.7, 0.1])
    z, p = leapfrog(z0, p0, 0.0, lambda q: -q ** 3)
    np.testing.assert_array_equal(z, z0)
    np.testing.assert_array_equal(p, p0)


def test_leapfrog_reversible():
    grad = lambda q: -np.array([q[0] ** 3, 2 * q[1]])
    z0, p0 = np.array([0.5, -0.3]), np.array([0.2, 0.9])
    inv = np.array([[1.0, 0.3], [0.3, 2.0]])
    z, p = z0, p0
    for _ in range(20):
        z, p = leapfrog(z, p, 0.05, grad, inv)
    p = -p
    for _ in range(20):
        z, p = leapfrog(z, p, 0.05, grad, inv)
    np.testing.assert_allclose(z, z0, atol=1e-12)
    np.testing.assert_allclose(-p, p0, atol=1e-12)


def test_energy_error_is_second_order():
    tgt = GaussianTarget([0.0, 0.0], [[1.0, 0.5], [0.5, 2.0]])
    grad = lambda q: tgt.logp_grad(q)[1]

    def energy_error(eps):
        z, p = np.array([1.0, -0.5]), np.array([0.3, 0.8])
        h0 = tgt.logp_grad(z)[0] - 0.5 * p @ p
        for _ in range(int(round(1.0 / eps))):
            z, p = leapfrog(z, p, eps, grad)
        return abs(tgt.logp_grad(z)[0] - 0.5 * p @ p - h0)

    ratio = energy_error(0.02) / energy_error(0.01)
    assert 3.0 < ratio < 5.0


def test_negative_step_rejected():
    with pytest.raises(SamplerError):
        leapfrog(np.zeros(1), np.zeros(1), -0.1, lambda q: q)


def test_warmup_windows():
    w = warmup_windows(1000)
    assert w[0] == 100 and w[-1] == 950
    assert all(b > a for a, b in zip(w, w[1:]))
    w = warmup_windows(100)
    assert w[-1] == 90
    assert warmup_windows(10) == []


# ---------------------------------------------------------------- sampler


FAST = SamplerConfig(n_chains=2, n_warmup=300, n_keep=500, seed=3)


def test_standard_normal_mean():
    post = sample(GaussianTarget([0.0], [[1.0]]), config=FAST)
    x = post.by_chain(0)
    assert abs(x.mean()) < 4 * x.std() / math.sqrt(ess(x))


def test_gaussian_covariance():
    cov = np.array([[1.0, 0.8], [0.8, 2.0]])
    post = sample(GaussianTarget([1.0, -1.0], cov), config=SamplerConfig(n_chains=2, n_warmup=500, n_keep=4000))
    emp = np.cov(post.draws, rowvar=False)
    n_eff = min(ess(post.by_chain(i)) for i in range(2))
    # variance of a sample covariance entry is about (s_ii s_jj + s_ij^2) / n
    se = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov ** 2) / n_eff)
    assert np.all(np.abs(emp - cov) < 4 * se)


class ConjugateAR1:
    """AR(1) slope with known noise sd and a N(0, 10^2) prior."""

    def __init__(self, y, sigma=1.0, tau=10.0):
        self.y, self.sigma, self.tau = y, sigma, tau
        self.dim, self.names = 1, ["phi"]

    def logp_grad(self, z):
        r = self.y[1:] - z[0] * self.y[:-1]
        lp = -0.5 * r @ r / self.sigma ** 2 - 0.5 * z[0] ** 2 / self.tau ** 2
        g = (r @ self.y[:-1]) / self.sigma ** 2 - z[0] / self.tau ** 2
        return lp, np.array([g])

    def constrain(self, z):
        return np.asarray(z, dtype=float)

    def closed_form(self):
        prec = self.y[:-1] @ self.y[:-1] / self.sigma ** 2 + 1 / self.tau ** 2
        return (self.y[1:] @ self.y[:-1] / self.sigma ** 2) / prec, 1 / prec


def test_ar1_conjugate_posterior():
    rng = np.random.default_rng(0)
    y = np.zeros(60)
    for t in range(1, 60):
        y[t] = 0.6 * y[t - 1] + rng.standard_normal()
    tgt = ConjugateAR1(y)
    mean, var = tgt.closed_form()
    post = sample(tgt, config=SamplerConfig(n_chains=2, n_warmup=500, n_keep=2000, seed=1))
    x = post.by_chain(0)
    n_eff = ess(x)
    assert abs(x.mean() - mean) < 4 * math.sqrt(var / n_eff)
    assert abs(x.var(ddof=1) - var) < 4 * var * math.sqrt(2 / n_eff)


def test_same_seed_same_draws():
    tgt = GaussianTarget([0.0, 1.0], [[1.0, 0.2], [0.2, 0.5]])
    a = sample(tgt, config=FAST)
    b = sample(tgt, config=FAST)
    np.testing.assert_array_equal(a.draws, b.draws)
    c = sample(tgt, config=SamplerConfig(**{**FAST.to_json(), "threads": 2}))
    np.testing.assert_array_equal(a.draws, c.draws)
    d = sample(tgt, config=SamplerConfig(**{**FAST.to_json(), "seed": 4}))
    assert not np.array_equal(a.draws, d.draws)


def test_chain_seeding_is_per_chain():
    tgt = GaussianTarget([0.0], [[1.0]])
    two = sample(tgt, config=SamplerConfig(n_chains=2, n_warmup=100, n_keep=100, seed=5))
    shifted = sample(tgt, config=SamplerConfig(n_chains=1, n_warmup=100, n_keep=100, seed=6))
    np.testing.assert_array_equal(two.by_chain(0)[1], shifted.by_chain(0)[0])


def test_draw_layout_and_pointwise(demo_frame):
    model = BoundModel(catalog_model("II"), demo_frame)
    cfg = SamplerConfig(n_chains=2, n_warmup=100, n_keep=50, metric="diag")
    post = sample(model, config=cfg)
    assert post.draws.shape == (100, model.dim) and post.M == 100
    assert post.pointwise.shape == (100, model.T)
    assert list(post.chain_ids[:50]) == [0] * 50 and list(post.chain_ids[50:]) == [1] * 50
    for m in (0, 57):
        np.testing.assert_allclose(post.pointwise[m], model.pointwise(post.z[m]), rtol=1e-12)
    np.testing.assert_allclose(model.constrain(post.z[3]), post.draws[3])
    assert np.all(post.column("sigma_E") > 0) and np.all(post.column("beta[GDP]") < 0)


class _Explodes:
    """Finite only at the first evaluation; every trajectory diverges."""

    dim, names = 1, ["x"]

    def __init__(self):
        self.calls = 0

    def logp_grad(self, z):
        self.calls += 1
        if self.calls == 1:
            return 0.0, np.zeros(1)
        return -np.inf, np.full(1, np.nan)

    def constrain(self, z):
        return z


def test_all_divergent_warmup_aborts():
    with pytest.raises(SamplerError, match="diverged"):
        sample(_Explodes(), config=SamplerConfig(n_chains=1, n_warmup=20, n_keep=5))


def test_non_finite_start_is_an_error():
    class Dead(_Explodes):
        def logp_grad(self, z):
            return -np.inf, np.zeros(1)

    with pytest.raises(SamplerError, match="initial point"):
        sample(Dead(), config=SamplerConfig(n_chains=1, n_warmup=5, n_keep=5))


@pytest.mark.parametrize("bad", [dict(n_warmup=0), dict(n_keep=0), dict(target_accept=1.0), dict(step_size=0.0),
                                 dict(n_leapfrog=0), dict(metric="full"), dict(n_chains=0), dict(threads=0)])
def test_config_validation(bad):
    with pytest.raises(SamplerError):
        SamplerConfig(**bad)
    with pytest.raises(SamplerError):
        SamplerConfig.from_json({"bogus": 1})


# ---------------------------------------------------------------- diagnostics and summaries


def _post(values, divergent=None):
    values = np.asarray(values, dtype=float)
    n_chains, n = values.shape
    flat = values.reshape(-1, 1)
    return PosteriorDraws(flat, ["x"], flat, np.repeat(np.arange(n_chains), n), np.ones(flat.shape[0]),
                          np.zeros(flat.shape[0], bool) if divergent is None else np.asarray(divergent))


def test_rhat_edge_cases(rng):
    assert rhat(np.full((4, 100), 2.5)) == 1.0
    x = rng.standard_normal(200)
    assert abs(rhat(np.vstack([x, x, x])) - 1.0) < 0.01
    assert math.isnan(rhat(x[None, :]))
    assert math.isnan(rhat(np.zeros((2, 3))))
    d = diagnostics(_post(x[None, :]))
    assert math.isnan(d.rhat[0])


def test_ess_white_noise(rng):
    a = rng.standard_normal((4, 1000))
    assert abs(ess(a) - a.size) < 0.2 * a.size


def test_divergence_count():
    flags = np.zeros(20, bool)
    flags[7] = True
    d = diagnostics(_post(np.arange(20.0).reshape(2, 10), flags))
    assert d.divergences == 1
    js = d.to_json()
    assert js["divergences"] == 1 and set(js["rhat"]) == {"x"}


def test_summary_rules(tmp_path):
    rows = summarize(np.full((50, 1), 3.0), ["c"])
    assert rows[0].sd == 0.0 and rows[0].quantiles == (3.0,) * 5
    rows = summarize(np.arange(1.0, 101.0)[:, None], ["k"])
    assert rows[0].quantiles[2] == 50.5 and rows[0].mean == 50.5
    assert summarize(np.zeros((10, 0)), []) == []
    p = tmp_path / "s.csv"
    write_summary(rows, p)
    lines = p.read_text().splitlines()
    assert lines[0] == ",".join(SUMMARY_HEADER) and lines[1].startswith("k,50.5,")


def test_draws_csv(tmp_path):
    post = _post(np.arange(6.0).reshape(2, 3))
    p = tmp_path / "d.csv"
    post.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "chain,x" and lines[1] == "0,0" and lines[-1] == "1,5"
