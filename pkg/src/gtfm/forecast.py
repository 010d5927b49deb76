"""Posterior-predictive projection of the target along macro scenarios.

For each retained draw the state recursion is rolled forward from the last
in-sample state::

    phi_{T+h} ~ N(phi_{T+h-1}, sigma_phi^2)              (time-varying only)
    E_{T+h}   ~ N(phi_{T+h-1} E_{T+h-1} + x_{T+h}' beta, sigma_E^2)
    Y_{T+h}   ~ N(E_{T+h}, sigma_v^2)                      (Y = E without noise)

so the first step uses the in-sample ``phi_T`` and later steps the most
recently drawn resilience.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .series import ScenarioSet, lag_name


class ForecastError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ScenarioProjection:
    name: str
    periods: list
    draws: np.ndarray  # (H, M)
    mean: np.ndarray = field(init=False)
    lower: np.ndarray = field(init=False)
    upper: np.ndarray = field(init=False)

    def __post_init__(self):
        d = np.asarray(self.draws, dtype=float)
        if not np.all(np.isfinite(d)):
            raise ForecastError(f"scenario {self.name}: non-finite predictive draws")
        object.__setattr__(self, "draws", d)
        object.__setattr__(self, "mean", d.mean(axis=1))
        lo, hi = np.quantile(d, [0.025, 0.975], axis=1)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def H(self) -> int:
        return self.draws.shape[0]

    def rows(self) -> list[list]:
        return [[str(p), float(m), float(l), float(u)]
                for p, m, l, u in zip(self.periods, self.mean, self.lower, self.upper)]


@dataclass(frozen=True, eq=False)
class ProjectionResult:
    scenarios: dict  # name -> ScenarioProjection

    @property
    def names(self) -> list[str]:
        return list(self.scenarios)

    def __getitem__(self, name) -> ScenarioProjection:
        return self.scenarios[name]


def future_design(model, scenario_path: np.ndarray, macro_names: list[str]) -> np.ndarray:
    """Design rows ``x_{T+1..T+H}`` for one scenario path ``(H, m)``.

    Lagged columns reach back into the observed history for the first
    steps of the horizon.
    """
    spec = model.spec
    H = scenario_path.shape[0]
    idx = {n: i for i, n in enumerate(macro_names)}
    rows = np.empty((H, len(spec.design_columns)))
    col = 0
    rows[:, col] = 1.0
    col += 1
    for term in spec.terms:
        if term.name not in idx:
            raise ForecastError(f"scenario set lacks macro {term.name!r}")
        fut = scenario_path[:, idx[term.name]]
        if term.lags == 0:
            rows[:, col] = fut
            col += 1
            continue
        hist = _history(model, term.name, term.lags)
        full = np.concatenate([hist, fut])
        for j in range(term.lags + 1):
            rows[:, col] = full[term.lags - j: term.lags - j + H]
            col += 1
    return rows


def _history(model, name: str, lags: int) -> np.ndarray:
    """Last ``lags`` observed values of a macro series."""
    if model.history is not None:
        return model.history.column(name)[-lags:]
    # expanded design only: recover values from the lag columns of the last row
    d = model.design
    try:
        return np.array([d.column(lag_name(name, j))[-1] for j in range(lags - 1, -1, -1)])
    except KeyError:
        raise ForecastError(f"no observed history for lagged macro {name!r}") from None


@dataclass(frozen=True)
class StartState:
    """Per-draw quantities the recursion needs, each of shape ``(M,)``
    except ``beta`` ``(M, p)``."""

    E: np.ndarray
    phi: np.ndarray
    beta: np.ndarray
    sigma_E: np.ndarray
    sigma_v: np.ndarray
    sigma_phi: np.ndarray | None


def start_state(model, post) -> StartState:
    spec = model.spec
    D = post.draws
    col = {n: i for i, n in enumerate(post.names)}
    T = model.T
    beta = D[:, [col[c] for c in spec.coef_names]]
    E = D[:, col[f"E[{T}]"]] if spec.eta_free else np.full(post.M, model.y[-1])
    phi = D[:, col[f"phi[{T}]"]] if spec.tv else D[:, col["phi"]]
    s_e = D[:, col["sigma_E"]]
    s_v = D[:, col["eta"]] * s_e if spec.eta_free else np.zeros(post.M)
    s_phi = D[:, col["sigma_phi"]] if spec.tv else None
    return StartState(E, phi, beta, s_e, s_v, s_phi)


def recursion(state: StartState, Xf: np.ndarray, z_phi, z_e, z_y) -> np.ndarray:
    """Roll the predictive recursion with given standard-normal shocks.

    ``Xf`` is ``(H, p)``; shocks are ``(H, M)``.  Returns ``Y`` as ``(H, M)``.
    """
    H = Xf.shape[0]
    E = state.E.copy()
    phi = state.phi.copy()
    drive = Xf @ state.beta.T  # (H, M)
    out = np.empty((H, E.size))
    for h in range(H):
        mean = phi * E + drive[h]
        if state.sigma_phi is not None:
            phi = phi + state.sigma_phi * z_phi[h]
        E = mean + state.sigma_E * z_e[h]
        out[h] = E + state.sigma_v * z_y[h]
    return out


def project(model, post, scenarios: ScenarioSet, H: int | None = None, seed: int = 0) -> ProjectionResult:
    """Predictive draws of the target for every scenario.

    Every scenario reuses the same shocks from ``default_rng(seed)``
    (common random numbers): differences between scenarios reflect the
    macro paths only, and identical scenarios give identical draws.
    """
    spec = model.spec
    missing = [m for m in spec.macro_names if m not in scenarios.macro_names]
    if missing:
        raise ForecastError(f"scenarios lack macro variables {missing} required by model {spec.name!r}")
    H = scenarios.horizon if H is None else int(H)
    if not 1 <= H <= scenarios.horizon:
        raise ForecastError(f"horizon {H} outside 1..{scenarios.horizon}")
    state = start_state(model, post)
    z = np.random.default_rng(seed).standard_normal((3, H, post.M))
    out = {}
    for name in scenarios.names:
        Xf = future_design(model, scenarios.scenarios[name][:H], list(scenarios.macro_names))
        draws = recursion(state, Xf, z[0], z[1], z[2])
        out[name] = ScenarioProjection(name, scenarios.periods[:H], draws)
    return ProjectionResult(out)


@dataclass(frozen=True)
class PairCoherence:
    less: str
    more: str
    consistency: float
    band_overlap: float

    @property
    def overlap(self) -> float:
        return 1.0 - self.consistency

    @property
    def flagged(self) -> bool:
        return self.consistency < 1.0


@dataclass(frozen=True)
class CoherenceReport:
    pairs: list
    consistency: float

    @property
    def coherent(self) -> bool:
        return all(not p.flagged for p in self.pairs)

    def to_json(self) -> dict:
        return {
            "consistency": self.consistency,
            "coherent": self.coherent,
            "pairs": [
                {"less_severe": p.less, "more_severe": p.more, "consistency": p.consistency,
                 "overlap": p.overlap, "band_overlap": p.band_overlap, "flagged": p.flagged}
                for p in self.pairs
            ],
        }


def coherence_check(result: ProjectionResult, severity_order, direction: int = 1) -> CoherenceReport:
    """Check that mean paths are ordered by scenario severity.

    Parameters
    ----------
    severity_order : list of str
        Scenario names from least to most severe.
    direction : {1, -1}
        1 when more severe scenarios should push the target up (losses),
        -1 when they should push it down.

    For each adjacent pair the consistency is the share of horizon steps
    where the more severe mean lies strictly beyond the less severe one;
    ``band_overlap`` is the share of steps where the 95% bands intersect.
    """
    if direction not in (1, -1):
        raise ForecastError("direction must be +1 or -1")
    order = list(severity_order)
    unknown = [n for n in order if n not in result.scenarios]
    if unknown:
        raise ForecastError(f"unknown scenarios {unknown}")
    if len(order) < 2:
        raise ForecastError("need at least two scenarios to compare")
    pairs = []
    for a, b in zip(order[:-1], order[1:]):
        pa, pb = result[a], result[b]
        ok = direction * (pb.mean - pa.mean) > 0
        inter = (pa.lower <= pb.upper) & (pb.lower <= pa.upper)
        pairs.append(PairCoherence(a, b, float(ok.mean()), float(inter.mean())))
    return CoherenceReport(pairs, float(np.mean([p.consistency for p in pairs])))

