import json
import math

import numpy as np
import pytest
from _reference import central_difference, centred_log_joint, prior_logpdf, random_centred_point
from hypothesis import given, settings
from hypothesis import strategies as st

from gtfm import kernels
from gtfm import priors as P
from gtfm.model import (CATALOG_VARIANTS, CENTERED, BoundModel, ModelError,
                        ModelSpec, MultiplierSpec, ParamPoint, StateSpaceForm, catalog_model, grad_log_joint,
                        kalman_loglik, log_joint, make_spec, multiplier, multiplier_curve, resolve_model, tail_bound,
                        to_dlm, transfer_gain)
from gtfm.series import Period, TimeSeriesFrame

CATALOG = list(CATALOG_VARIANTS)


# ---------------------------------------------------------------- multipliers


def test_geometric_multiplier():
    m = MultiplierSpec("geometric", 10.0)
    assert [multiplier(m, 0.5, j) for j in range(3)] == [10.0, 5.0, 2.5]


def test_superposition_multiplier():
    m = MultiplierSpec("superposition", (1.0, 2.0))
    assert [multiplier(m, 0.5, j) for j in range(3)] == pytest.approx([1.0, 2.5, 1.25])
    assert m.s == 1


def test_stochastic_constant_path_is_geometric():
    path = np.full(12, 0.5)
    st_ = MultiplierSpec("stochastic", 2.0)
    geo = MultiplierSpec("geometric", 2.0)
    np.testing.assert_array_equal(multiplier_curve(st_, path, 10), multiplier_curve(geo, 0.5, 10))


def test_stochastic_uses_trailing_product():
    path = np.array([0.9, 0.5, 0.2, 0.8])
    m = MultiplierSpec("stochastic", 3.0)
    assert multiplier(m, path, 0) == 3.0
    assert multiplier(m, path, 2) == pytest.approx(3.0 * 0.8 * 0.2)
    assert multiplier(m, path, 2, t=1) == pytest.approx(3.0 * 0.5 * 0.9)
    with pytest.raises(ModelError):
        multiplier(m, path, 3, t=1)


def test_transfer_gain_examples():
    g = MultiplierSpec("geometric", 10.0)
    assert transfer_gain(g, 0.5) == pytest.approx(20.0)
    assert transfer_gain(g, 0.0, 0) == 10.0 and transfer_gain(g, 0.0, 7) == 10.0
    assert transfer_gain(MultiplierSpec("superposition", (1.0, 2.0)), 0.5) == pytest.approx(6.0)


def test_unstable_phi_rejected():
    g = MultiplierSpec("geometric", 1.0)
    for phi in (1.0, -1.0, 1.5):
        with pytest.raises(ModelError):
            multiplier(g, phi, 1)
        with pytest.raises(ModelError):
            transfer_gain(g, phi)


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(-0.99, 0.99), st.integers(0, 40))
def test_partial_sum_matches_loop_and_tail_bound(beta, phi, J):
    m = MultiplierSpec("geometric", beta)
    loop = sum(beta * phi ** j for j in range(J + 1))
    assert transfer_gain(m, phi, J) == pytest.approx(loop, rel=1e-9, abs=1e-9)
    assert abs(transfer_gain(m, phi) - transfer_gain(m, phi, J)) <= tail_bound(beta, phi, J) * (1 + 1e-9) + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 5), st.floats(0.01, 0.99))
def test_sign_patterns(beta, phi):
    pos = multiplier_curve(MultiplierSpec("geometric", beta), phi, 15)
    assert np.all(pos > 0) and np.all(np.diff(pos) <= 0)
    neg = multiplier_curve(MultiplierSpec("geometric", beta), -phi, 15)
    assert np.all(np.sign(neg[1:]) == -np.sign(neg[:-1]))


# ---------------------------------------------------------------- specs


def test_catalog_specs():
    for name, (res, noise) in CATALOG_VARIANTS.items():
        s = catalog_model(name)
        assert (s.resilience, s.noise) == (res, noise)
        assert len(s.coef_names) == 7
        assert s.priors["alpha"] == P.normal(1.5, 0.5)
        assert s.priors["beta[GDP]"].dist == "halfnormal_neg"
        assert s.priors["beta[Unemp_L3]"].dist == "halfnormal_pos"
        assert s.priors["sigma_E"] == P.inv_gamma(2, 0.1)
        assert s.priors[s.phi_name] == P.beta(2, 2)
    assert catalog_model("IV").scale_names == ["sigma_E", "eta", "sigma_phi"]
    assert catalog_model("II").priors["eta"] == P.gamma(10, 1)
    with pytest.raises(ModelError):
        catalog_model("V")


def test_spec_json_round_trip(tmp_path):
    for name in CATALOG:
        s = catalog_model(name)
        assert ModelSpec.from_json(json.loads(json.dumps(s.to_json()))) == s
        p = tmp_path / f"{name}.json"
        s.dump(p)
        assert resolve_model(str(p)) == s
    with pytest.raises(ModelError, match="unknown model"):
        resolve_model("nope")


def test_spec_validation():
    good = catalog_model("I").priors
    with pytest.raises(ModelError, match="missing priors"):
        ModelSpec("x", (("GDP", 0),), priors={"alpha": P.normal(0, 1)})
    bad = dict(good)
    bad["extra"] = P.normal(0, 1)
    with pytest.raises(ModelError, match="unknown parameters"):
        ModelSpec("x", catalog_model("I").terms, priors=bad)
    bad = dict(good)
    bad["phi"] = P.normal(0, 1)
    with pytest.raises(ModelError):
        ModelSpec("x", catalog_model("I").terms, priors=bad)
    with pytest.raises(ModelError):
        ModelSpec("x", catalog_model("I").terms, resilience="sometimes", priors=good)


def test_layout_dimensions(demo_frame):
    dims = {}
    for name in CATALOG:
        m = BoundModel(catalog_model(name), demo_frame)
        assert m.T == 25
        dims[name] = m.dim
        assert len(m.names) == m.dim and len(set(m.names)) == m.dim
    assert dims == {"I": 9, "II": 10 + 25, "III": 10 + 25, "IV": 11 + 50}
    names = BoundModel(catalog_model("IV"), demo_frame).names
    assert names[:3] == ["alpha", "beta[GDP]", "beta[IDR]"]
    assert "phi[1]" in names and "E[25]" in names and "sigma_phi" in names


def test_missing_series_is_reported(demo_frame):
    spec = make_spec("x", [("Oil", 0)], {"Oil": 1})
    with pytest.raises(ModelError, match="Oil"):
        BoundModel(spec, demo_frame)


def test_param_point_round_trip_and_signs(demo_frame, rng):
    m = BoundModel(catalog_model("IV"), demo_frame, CENTERED)
    z = rng.normal(0, 2, m.dim)
    pt = ParamPoint(z, m.layout)
    c = pt.constrained()
    assert c["beta[GDP]"] < 0 and c["beta[IDR]"] > 0 and 0 < c["phi0"] < 1
    assert c["sigma_E"] > 0 and c["eta"] > 0 and c["sigma_phi"] > 0
    np.testing.assert_allclose(ParamPoint.from_constrained(m.layout, c).z, z, rtol=1e-10, atol=1e-10)
    with pytest.raises(ModelError, match="layout mismatch"):
        ParamPoint(z[:-1], m.layout)


# ---------------------------------------------------------------- log joint


def _tiny_frame(y, x):
    return TimeSeriesFrame(Period(2000, 1), ("y", "x"), np.column_stack([y, x]).astype(float), "y")


def test_log_joint_two_point_example():
    spec = make_spec("toy", [("x", 0)], {"x": 0}, alpha_prior=P.normal(0, 1), sigma_E_prior=P.inv_gamma(2, 1))
    frame = _tiny_frame([0.0, 0.0], [0.0, 0.0])
    m = BoundModel(spec, frame, CENTERED)
    values = {"alpha": 0.0, "beta[x]": 0.0, "phi": 0.3, "sigma_E": 1.0}
    pt = ParamPoint.from_constrained(m.layout, values)
    state = -0.5 * math.log(2 * math.pi)  # log N(0; 0, 1) at t = 2
    initial = -0.5 * math.log(2 * math.pi)  # E_1 = Y_1 anchored with sigma_E = 1
    coef_priors = 2 * -0.5 * math.log(2 * math.pi)  # N(0, 1) at alpha = beta = 0
    prior = (coef_priors + prior_logpdf(P.beta(2, 2), 0.3) + math.log(0.3 * 0.7)
             + prior_logpdf(P.inv_gamma(2, 1), 1.0))
    assert log_joint(spec, frame, pt) == pytest.approx(state + initial + prior, abs=1e-12)


def test_doubling_sigma_rescales_gaussian_terms(demo_frame, rng):
    m = BoundModel(catalog_model("I"), demo_frame, CENTERED)
    z = random_centred_point(m, rng)
    i = m.layout.slot("sigma_E").start
    z2 = z.copy()
    z2[i] += math.log(2.0)
    pw, pw2 = m.pointwise(z), m.pointwise(z2)
    quad = pw + math.log(math.exp(z[i])) + 0.5 * math.log(2 * math.pi)  # -0.5 r^2 / s^2
    np.testing.assert_allclose(pw2, pw - math.log(2.0) - 0.75 * quad, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("name", CATALOG)
@pytest.mark.parametrize("wave", [False, True])
def test_log_joint_matches_reference(demo_frame, name, wave):
    spec = catalog_model(name)
    if wave:
        spec = ModelSpec(spec.name, spec.terms, spec.resilience, spec.noise, spec.priors, wave=True)
    m = BoundModel(spec, demo_frame, CENTERED)
    rng = np.random.default_rng(5)
    for _ in range(5):
        z = random_centred_point(m, rng)
        if wave and spec.tv:
            z[m.layout.slot("phi_path").slice] *= -1
        assert m.log_joint(z) == pytest.approx(centred_log_joint(m, z), rel=1e-11, abs=1e-9)


@pytest.mark.parametrize("name", CATALOG)
def test_pointwise_sums_to_likelihood(demo_frame, name):
    m = BoundModel(catalog_model(name), demo_frame, CENTERED)
    rng = np.random.default_rng(2)
    z = random_centred_point(m, rng)
    spec = m.spec
    lik = m.log_joint(z) - m.prior_terms(z)
    if spec.eta_free:
        # pointwise is p(y_t | E_t); the state terms belong to the latent prior
        v = m.layout.constrain(z)
        s_e = v[m.layout.slot("sigma_E").start]
        s_v = v[m.layout.slot("eta").start] * s_e
        E = v[m.layout.slot("E").slice]
        expected = np.sum(-0.5 * ((m.y - E) / s_v) ** 2 - math.log(s_v) - 0.5 * math.log(2 * math.pi))
        assert m.pointwise(z).sum() == pytest.approx(expected, rel=1e-12)
    elif not spec.tv:
        assert m.pointwise(z).sum() == pytest.approx(lik, rel=1e-12)
    else:
        walk = lik - m.pointwise(z).sum()
        path = z[m.layout.slot("phi_path").slice]
        v = m.layout.constrain(z)
        sp = v[m.layout.slot("sigma_phi").start]
        d = np.diff(path, prepend=v[m.layout.slot("phi0").start])
        assert walk == pytest.approx(np.sum(-0.5 * (d / sp) ** 2 - math.log(sp) - 0.5 * math.log(2 * math.pi)))


@pytest.mark.parametrize("name", CATALOG)
def test_gradient_finite_difference(demo_frame, name):
    m = BoundModel(catalog_model(name), demo_frame, CENTERED)
    rng = np.random.default_rng(11)
    for _ in range(5):
        z = random_centred_point(m, rng)
        g = grad_log_joint(m.spec, demo_frame, m.point(z))
        fd = central_difference(m.log_joint, z)
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-5 * max(1.0, np.abs(fd).max()))


@pytest.mark.parametrize("name", CATALOG)
def test_noncentred_gradient_finite_difference(demo_frame, name):
    m = BoundModel(catalog_model(name), demo_frame)
    rng = np.random.default_rng(13)
    for _ in range(5):
        z = m.from_centered(random_centred_point(m, rng))
        g = m.logp_grad(z)[1]
        fd = central_difference(m.log_joint, z)
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-5 * max(1.0, np.abs(fd).max()))


@pytest.mark.parametrize("name", CATALOG)
def test_noncentred_density_change_of_variables(demo_frame, name):
    nc = BoundModel(catalog_model(name), demo_frame)
    c = BoundModel(catalog_model(name), demo_frame, CENTERED)
    rng = np.random.default_rng(17)
    for _ in range(3):
        zc = random_centred_point(c, rng)
        z = nc.from_centered(zc)
        np.testing.assert_allclose(nc.to_centered(z), zc, rtol=1e-10, atol=1e-10)
        v = c.layout.constrain(zc)
        logdet = 0.0
        if c.spec.eta_free:
            logdet += c.T * math.log(v[c.layout.slot("sigma_E").start])
        if c.spec.tv:
            logdet += c.T * math.log(v[c.layout.slot("sigma_phi").start])
        assert nc.log_joint(z) == pytest.approx(c.log_joint(zc) + logdet, rel=1e-10, abs=1e-8)
        np.testing.assert_allclose(nc.pointwise(z), c.pointwise(zc), rtol=1e-10)


def test_prior_score_without_informative_data(rng):
    # a single-term spec on constant data: the likelihood gradient is
    # available in closed form, so the rest must be the prior score
    spec = make_spec("toy", [("x", 0)], {"x": 1})
    frame = _tiny_frame([1.0, 1.0, 1.0], [0.0, 0.0, 0.0])
    m = BoundModel(spec, frame, CENTERED)
    z = rng.normal(0, 0.5, m.dim)
    g = m.logp_grad(z)[1]
    prior_only = central_difference(m.prior_terms, z)
    lik = central_difference(lambda u: m.pointwise(u).sum(), z)
    np.testing.assert_allclose(g, prior_only + lik, rtol=1e-6, atol=1e-7)


def test_layout_mismatch_errors(demo_frame):
    m = BoundModel(catalog_model("II"), demo_frame, CENTERED)
    other = BoundModel(catalog_model("I"), demo_frame, CENTERED)
    with pytest.raises(ModelError):
        log_joint(m.spec, demo_frame, other.point(np.zeros(other.dim)))
    with pytest.raises(ModelError):
        m.log_joint(np.zeros(m.dim + 1))


@pytest.mark.parametrize("name", CATALOG)
def test_kernels_numba_numpy_agree(demo_frame, name):
    for param in (CENTERED, "noncentered"):
        m = BoundModel(catalog_model(name), demo_frame, param)
        rng = np.random.default_rng(23)
        zc = random_centred_point(BoundModel(m.spec, demo_frame, CENTERED), rng)
        z = m.from_centered(zc)
        if m.noncentered:
            fns = (kernels._logp_grad_nc_nb, kernels._logp_grad_nc_np)
        else:
            fns = (kernels._logp_grad_nb, kernels._logp_grad_np)
        (l1, g1), (l2, g2) = (m.logp_grad(z, impl=f) for f in fns)
        assert l1 == pytest.approx(l2, rel=1e-12)
        np.testing.assert_allclose(g1, g2, rtol=1e-10, atol=1e-9)
        np.testing.assert_allclose(m.pointwise(z, impl=kernels._pointwise_nb),
                                   m.pointwise(z, impl=kernels._pointwise_np), rtol=1e-12)


def test_ar_filter_numba_numpy_agree(rng):
    U = rng.standard_normal((4, 50))
    for phi in (0.0, 0.4, -0.7):
        np.testing.assert_allclose(kernels._ar_filter_nb(U, phi), kernels._ar_filter_np(U, phi), rtol=1e-12)
    y = kernels._ar_filter_np(U[:1], 0.5)[0]
    assert y[0] == U[0, 0] and y[1] == pytest.approx(0.5 * U[0, 0] + U[0, 1])


# ---------------------------------------------------------------- DLM and Kalman


def test_to_dlm_block_form():
    spec = catalog_model("II")
    params = {c: 0.1 * (i + 1) for i, c in enumerate(spec.coef_names)}
    params.update(phi=0.6, sigma_E=0.5, eta=2.0)
    form = to_dlm(spec, params)
    x = np.arange(1.0, 8.0)
    G = form.G(x)
    assert G[0, 0] == 0.6
    np.testing.assert_array_equal(G[0, 1:], x)
    np.testing.assert_array_equal(G[1:, 1:], np.eye(7))
    np.testing.assert_array_equal(G[1:, 0], 0.0)
    np.testing.assert_array_equal(form.F, np.eye(8)[0])
    assert form.sigma_v == pytest.approx(1.0)
    for bad in ("I", "III", "IV"):
        with pytest.raises(ModelError):
            to_dlm(catalog_model(bad), params)


def test_kalman_white_noise_closed_form(rng):
    y = rng.standard_normal(15)
    form = StateSpaceForm(0.0, np.zeros(0), 0.8, 0.6)
    ll = kalman_loglik(form, y, np.zeros((15, 0)), m0=0.0, P0=0.8 ** 2)
    s = math.sqrt(0.8 ** 2 + 0.6 ** 2)
    ref = np.sum(-0.5 * (y / s) ** 2 - math.log(s) - 0.5 * math.log(2 * math.pi))
    assert ll == pytest.approx(ref, abs=1e-10)


def test_kalman_single_observation():
    form = StateSpaceForm(0.5, np.array([1.0]), 0.3, 0.4)
    ll = kalman_loglik(form, [2.0], [[1.0]], m0=1.5, P0=0.09)
    assert ll == pytest.approx(-0.5 * math.log(2 * math.pi * 0.25) - 0.5 * 0.25 / 0.25)


def test_kalman_small_noise_limit_matches_adl(demo_frame, rng):
    m1 = BoundModel(catalog_model("I"), demo_frame, CENTERED)
    z = random_centred_point(m1, rng)
    v = m1.point(z).constrained()
    v["eta"] = 1e-6 / v["sigma_E"]
    form = to_dlm(catalog_model("II"), v)
    assert kalman_loglik(form, m1.y, m1.X) == pytest.approx(m1.pointwise(z).sum(), rel=1e-6)


def test_kalman_rejects_bad_variance():
    with pytest.raises(ModelError):
        kalman_loglik(StateSpaceForm(0.5, np.zeros(0), 0.0, 1.0), [1.0, 2.0], np.zeros((2, 0)))
