"""General transfer function models: specification, joint density, DLM form.

A :class:`ModelSpec` declares which macro variables enter the state
equation (with how many superposed lags), whether resilience is fixed or
follows a random walk, and whether the observation noise is switched off
(``eta_zero``, the autoregressive distributed lag collapse) or free.

:class:`BoundModel` binds a spec to data and exposes the log joint density
and its gradient on the unconstrained scale used by the sampler.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import special

from . import kernels
from . import priors as P
from .priors import Prior
from .series import INTERCEPT, LagExpansion, TimeSeriesFrame, expand_lags, lag_name

FIXED, TIME_VARYING = "fixed", "time_varying"
ETA_ZERO, ETA_FREE = "eta_zero", "eta_free"


class ModelError(ValueError):
    pass


# ---------------------------------------------------------------- multipliers


@dataclass(frozen=True)
class MultiplierSpec:
    """Dynamic multiplier family.

    ``geometric`` takes a scalar ``beta``; ``superposition`` takes
    ``beta = (beta_0, ..., beta_s)``; ``stochastic`` takes a scalar ``beta``
    and a resilience path at evaluation time.
    """

    kind: str
    beta: float | tuple

    def __post_init__(self):
        if self.kind not in ("geometric", "superposition", "stochastic"):
            raise ModelError(f"unknown multiplier kind {self.kind!r}")
        if self.kind == "superposition":
            b = tuple(float(v) for v in np.atleast_1d(self.beta))
            if not b:
                raise ModelError("superposition needs at least one beta")
            object.__setattr__(self, "beta", b)
        elif np.ndim(self.beta) != 0:
            raise ModelError(f"{self.kind} multiplier takes a scalar beta")

    @property
    def s(self) -> int:
        return len(self.beta) - 1 if self.kind == "superposition" else 0

    @property
    def betas(self) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.beta, dtype=float))


def _check_stable(phi):
    if not abs(phi) < 1:
        raise ModelError(f"|phi| < 1 required for a stable multiplier, got {phi}")


def multiplier(spec: MultiplierSpec, phi, j: int, t: int | None = None) -> float:
    """Impact of a unit shock in ``X`` at time ``t - j`` on ``E_t``.

    For the stochastic kind ``phi`` is the path ``phi_1..phi_T`` (0-based
    array) and ``t`` the 0-based evaluation time, by default the last.
    """
    if j < 0:
        raise ModelError("lag j must be >= 0")
    if spec.kind == "stochastic":
        path = np.asarray(phi, dtype=float)
        t = len(path) - 1 if t is None else t
        if j > t + 1:
            raise ModelError(f"resilience path too short for lag {j} at time {t}")
        return float(spec.beta * np.prod(path[t - j + 1:t + 1])) if j else float(spec.beta)
    _check_stable(phi)
    if spec.kind == "geometric":
        return float(spec.beta * phi ** j)
    b = spec.betas
    k = np.arange(min(j, spec.s) + 1)
    return float(np.sum(b[k] * phi ** (j - k)))


def multiplier_curve(spec: MultiplierSpec, phi, n_lags: int, t: int | None = None) -> np.ndarray:
    return np.array([multiplier(spec, phi, j, t) for j in range(n_lags + 1)])


def transfer_gain(spec: MultiplierSpec, phi: float, J: int | None = None) -> float:
    """Cumulative impact ``sum_{j<=J} beta(j)``; ``J=None`` gives the limit."""
    if spec.kind == "stochastic":
        raise ModelError("transfer_gain needs a fixed resilience")
    _check_stable(phi)
    total = float(spec.betas.sum())
    if J is None:
        return total / (1.0 - phi)
    if phi == 0:
        return float(spec.betas[: J + 1].sum())
    # sum_k beta_k * (1 - phi^(J-k+1)) / (1 - phi) over k <= J
    b = spec.betas
    k = np.arange(min(J, spec.s) + 1)
    return float(np.sum(b[k] * (1.0 - phi ** (J - k + 1)) / (1.0 - phi)))


def tail_bound(beta, phi: float, J: int) -> float:
    """Bound on ``|sum_{j>J} beta phi^j|`` for a geometric multiplier."""
    return abs(beta) * abs(phi) ** (J + 1) / (1.0 - abs(phi))


# ---------------------------------------------------------------- specification


@dataclass(frozen=True)
class MacroTerm:
    name: str
    lags: int = 0

    def columns(self) -> list[str]:
        if self.lags == 0:
            return [self.name]
        return [lag_name(self.name, j) for j in range(self.lags + 1)]


def coef_name(column: str) -> str:
    return "alpha" if column == INTERCEPT else f"beta[{column}]"


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Declarative GTFM variant.

    Every coefficient, the resilience and every scale parameter carries its
    own prior in ``priors``.  Coefficient signs follow from the prior
    support: ``normal`` leaves a coefficient free, ``halfnormal_pos`` /
    ``halfnormal_neg`` pin it to a half-line.
    """

    name: str
    terms: tuple
    resilience: str = FIXED
    noise: str = ETA_ZERO
    priors: Mapping[str, Prior] = field(default_factory=dict)
    wave: bool = False

    def __post_init__(self):
        terms = tuple(t if isinstance(t, MacroTerm) else MacroTerm(*t) for t in self.terms)
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "priors", dict(self.priors))
        if self.resilience not in (FIXED, TIME_VARYING):
            raise ModelError(f"resilience must be {FIXED!r} or {TIME_VARYING!r}")
        if self.noise not in (ETA_ZERO, ETA_FREE):
            raise ModelError(f"noise must be {ETA_ZERO!r} or {ETA_FREE!r}")
        names = [t.name for t in terms]
        if len(set(names)) != len(names):
            raise ModelError("duplicate macro terms")
        for t in terms:
            if t.lags < 0:
                raise ModelError(f"term {t.name}: lags must be >= 0")
        need = set(self.parameter_names)
        have = set(self.priors)
        if need - have:
            raise ModelError(f"missing priors for {sorted(need - have)}")
        if have - need:
            raise ModelError(f"priors given for unknown parameters {sorted(have - need)}")
        for c in self.coef_names:
            if self.priors[c].dist not in ("normal", "halfnormal_pos", "halfnormal_neg"):
                raise ModelError(f"{c}: coefficient priors must be normal or half-normal")
        if self.priors[self.phi_name].dist != "beta":
            raise ModelError(f"{self.phi_name}: resilience prior must be beta")
        for s in self.scale_names:
            if self.priors[s].dist not in ("inv_gamma", "gamma", "halfnormal_pos"):
                raise ModelError(f"{s}: scale priors need positive support")

    @property
    def tv(self) -> bool:
        return self.resilience == TIME_VARYING

    @property
    def eta_free(self) -> bool:
        return self.noise == ETA_FREE

    @property
    def macro_names(self) -> list[str]:
        return [t.name for t in self.terms]

    @property
    def expansions(self) -> list[LagExpansion]:
        return [LagExpansion(t.name, t.lags) for t in self.terms if t.lags > 0]

    @property
    def max_lag(self) -> int:
        return max((t.lags for t in self.terms), default=0)

    @property
    def design_columns(self) -> list[str]:
        cols = [INTERCEPT]
        for t in self.terms:
            cols.extend(t.columns())
        return cols

    @property
    def coef_names(self) -> list[str]:
        return [coef_name(c) for c in self.design_columns]

    @property
    def phi_name(self) -> str:
        return "phi0" if self.tv else "phi"

    @property
    def scale_names(self) -> list[str]:
        names = ["sigma_E"]
        if self.eta_free:
            names.append("eta")
        if self.tv:
            names.append("sigma_phi")
        return names

    @property
    def parameter_names(self) -> list[str]:
        return [*self.coef_names, self.phi_name, *self.scale_names]

    def coef_sign(self, name: str) -> int:
        return {"halfnormal_pos": 1, "halfnormal_neg": -1}.get(self.priors[name].dist, 0)

    # JSON ---------------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "terms": [{"name": t.name, "lags": t.lags} for t in self.terms],
            "resilience": self.resilience,
            "noise": self.noise,
            "wave": self.wave,
            "priors": {k: self.priors[k].to_json() for k in self.parameter_names},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelSpec":
        try:
            return cls(
                name=str(obj["name"]),
                terms=tuple(MacroTerm(str(t["name"]), int(t.get("lags", 0))) for t in obj["terms"]),
                resilience=obj.get("resilience", FIXED),
                noise=obj.get("noise", ETA_ZERO),
                priors={k: Prior.from_json(v) for k, v in obj["priors"].items()},
                wave=bool(obj.get("wave", False)),
            )
        except (KeyError, TypeError) as exc:
            raise ModelError(f"malformed model spec: missing or bad field {exc}") from None

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ModelSpec":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    def __eq__(self, other):
        if not isinstance(other, ModelSpec):
            return NotImplemented
        return self.to_json() == other.to_json()

    __hash__ = None


def make_spec(
    name: str,
    terms: Sequence[tuple[str, int]],
    signs: Mapping[str, int],
    *,
    resilience: str = FIXED,
    noise: str = ETA_ZERO,
    alpha_prior: Prior = P.normal(1.5, 0.5),
    beta_scale: float = 1.0,
    phi_prior: Prior = P.beta(2, 2),
    sigma_E_prior: Prior = P.inv_gamma(2, 0.1),
    eta_prior: Prior = P.gamma(10, 1),
    sigma_phi_prior: Prior = P.inv_gamma(2, 0.1),
    wave: bool = False,
) -> ModelSpec:
    """Build a spec with half-normal coefficient priors signed per macro.

    ``signs[name]`` is +1 / -1 for a half-line restriction (taken from the
    sign of the response function) or 0 for an unrestricted normal prior.
    """
    terms = [MacroTerm(n, l) for n, l in terms]
    priors = {"alpha": alpha_prior}
    for t in terms:
        s = signs.get(t.name, 0)
        for col in t.columns():
            priors[coef_name(col)] = P.halfnormal(0.0, beta_scale, s) if s else P.normal(0.0, beta_scale)
    priors["phi0" if resilience == TIME_VARYING else "phi"] = phi_prior
    priors["sigma_E"] = sigma_E_prior
    if noise == ETA_FREE:
        priors["eta"] = eta_prior
    if resilience == TIME_VARYING:
        priors["sigma_phi"] = sigma_phi_prior
    return ModelSpec(name, tuple(terms), resilience, noise, priors, wave)


CATALOG_MACROS = ("GDP", "IDR", "Unemp")
CATALOG_SIGNS = {"GDP": -1, "IDR": 1, "Unemp": 1}
CATALOG_VARIANTS = {
    "I": (FIXED, ETA_ZERO),
    "II": (FIXED, ETA_FREE),
    "III": (TIME_VARYING, ETA_ZERO),
    "IV": (TIME_VARYING, ETA_FREE),
}


def catalog_model(name: str, macros: Sequence[str] = CATALOG_MACROS, persistent: str = "Unemp", lags: int = 3) -> ModelSpec:
    """One of the four case-study models with their standard priors.

    The persistent macro gets ``lags`` superposed lags; the others enter
    with geometric propagation.  Coefficient signs: GDP negative, the rest
    positive.
    """
    if name not in CATALOG_VARIANTS:
        raise ModelError(f"unknown catalog model {name!r}; choose from {sorted(CATALOG_VARIANTS)}")
    resilience, noise = CATALOG_VARIANTS[name]
    terms = [(m, lags if m == persistent else 0) for m in macros]
    signs = {m: CATALOG_SIGNS.get(m, 1) for m in macros}
    return make_spec(name, terms, signs, resilience=resilience, noise=noise)


def resolve_model(name_or_path: str) -> ModelSpec:
    """Catalog name (``I``..``IV``) or path to a spec JSON document."""
    if name_or_path in CATALOG_VARIANTS:
        return catalog_model(name_or_path)
    path = Path(name_or_path)
    if path.suffix == ".json" and path.exists():
        return ModelSpec.load(path)
    raise ModelError(f"unknown model {name_or_path!r}: not a catalog name (I, II, III, IV) or spec JSON")


# ---------------------------------------------------------------- parameter layout


@dataclass(frozen=True)
class Slot:
    name: str
    start: int
    size: int
    transform: int

    @property
    def slice(self) -> slice:
        return slice(self.start, self.start + self.size)


@dataclass(frozen=True)
class Layout:
    """Map between the unconstrained vector and named model quantities."""

    slots: tuple
    T: int

    @property
    def dim(self) -> int:
        return sum(s.size for s in self.slots)

    def slot(self, name: str) -> Slot:
        for s in self.slots:
            if s.name == name:
                return s
        raise KeyError(name)

    def __contains__(self, name) -> bool:
        return any(s.name == name for s in self.slots)

    @property
    def names(self) -> list[str]:
        """Flat constrained names, latent paths indexed from 1."""
        out = []
        for s in self.slots:
            if s.size == 1 and s.name not in ("phi_path", "E"):
                out.append(s.name)
            else:
                base = "phi" if s.name == "phi_path" else s.name
                out.extend(f"{base}[{t + 1}]" for t in range(s.size))
        return out

    def constrain(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        v = np.empty_like(z)
        for s in self.slots:
            v[..., s.slice] = P.constrain(s.transform, z[..., s.slice])
        return v

    def unconstrain(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        z = np.empty_like(v)
        for s in self.slots:
            z[..., s.slice] = P.unconstrain(s.transform, v[..., s.slice])
        return z

    def log_jacobian(self, z: np.ndarray) -> float:
        return float(sum(np.sum(P.log_jacobian(s.transform, z[s.slice])) for s in self.slots))


def build_layout(spec: ModelSpec, T: int) -> Layout:
    slots = []
    pos = 0

    def add(name, size, transform):
        nonlocal pos
        slots.append(Slot(name, pos, size, transform))
        pos += size

    for c in spec.coef_names:
        add(c, 1, P.transform_for(spec.priors[c]))
    add(spec.phi_name, 1, P.NEG_UNIT if spec.wave else P.UNIT)
    add("sigma_E", 1, P.POSITIVE)
    if spec.eta_free:
        add("eta", 1, P.POSITIVE)
    if spec.tv:
        add("sigma_phi", 1, P.POSITIVE)
        add("phi_path", T, P.IDENTITY)
    if spec.eta_free:
        add("E", T, P.IDENTITY)
    return Layout(tuple(slots), T)


@dataclass(frozen=True, eq=False)
class ParamPoint:
    """One point of the unconstrained space plus its layout."""

    z: np.ndarray
    layout: Layout

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.shape != (self.layout.dim,):
            raise ModelError(f"layout mismatch: vector has {z.size} entries, layout needs {self.layout.dim}")
        object.__setattr__(self, "z", z)

    def constrained(self) -> dict:
        v = self.layout.constrain(self.z)
        out = {}
        for s in self.layout.slots:
            out[s.name] = v[s.slice].copy() if s.name in ("phi_path", "E") else float(v[s.start])
        return out

    @classmethod
    def from_constrained(cls, layout: Layout, values: Mapping[str, object]) -> "ParamPoint":
        v = np.empty(layout.dim)
        for s in layout.slots:
            v[s.slice] = values[s.name]
        return cls(layout.unconstrain(v), layout)


# ---------------------------------------------------------------- bound model


CENTERED, NONCENTERED = "centered", "noncentered"


class BoundModel:
    """A spec bound to observed data.

    ``frame`` may be raw (the spec's lag expansion is applied here) or
    already expanded, recognised by the presence of an intercept column.

    With ``parameterization="noncentered"`` (the default) the latent blocks
    of the sampler's vector hold standardised innovations of the state and
    resilience recursions rather than the paths themselves; the paths are
    rebuilt in :meth:`constrain`.  This removes the funnel between small
    state scales and the latent paths.  ``"centered"`` samples the paths
    directly and matches :func:`log_joint`.
    """

    def __init__(self, spec: ModelSpec, frame: TimeSeriesFrame, parameterization: str = NONCENTERED):
        if parameterization not in (CENTERED, NONCENTERED):
            raise ModelError(f"parameterization must be {CENTERED!r} or {NONCENTERED!r}")
        self.spec = spec
        self.parameterization = parameterization
        missing = [m for m in spec.macro_names if m not in frame.names and not any(
            n.startswith(f"{m}_L") for n in frame.names)]
        if missing:
            raise ModelError(f"model {spec.name!r} needs series {missing} absent from the data")
        if INTERCEPT in frame.names:
            self.history = None
            design = frame
        else:
            self.history = frame
            design = expand_lags(frame, spec.expansions)
        cols = spec.design_columns
        absent = [c for c in cols if c not in design.names]
        if absent:
            raise ModelError(f"design is missing columns {absent}")
        self.design = design
        self.y = np.ascontiguousarray(design.y, dtype=float)
        self.X = np.ascontiguousarray(np.column_stack([design.column(c) for c in cols]), dtype=float)
        self.T = len(self.y)
        self.layout = build_layout(spec, self.T)
        pri = spec.priors
        self._coef_code = np.array([pri[c].code for c in spec.coef_names], dtype=np.int64)
        self._coef_a = np.array([pri[c].a for c in spec.coef_names])
        self._coef_b = np.array([pri[c].b for c in spec.coef_names])
        scal = [spec.phi_name, "sigma_E", "eta", "sigma_phi"]
        dummy = P.gamma(1.0, 1.0)
        self._sc_code = np.array([pri.get(n, dummy).code for n in scal], dtype=np.int64)
        self._sc_a = np.array([pri.get(n, dummy).a for n in scal])
        self._sc_b = np.array([pri.get(n, dummy).b for n in scal])
        self._phi_sign = -1.0 if spec.wave else 1.0

    @property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def names(self) -> list[str]:
        return self.layout.names

    def _args(self):
        return (self.y, self.X, self._coef_code, self._coef_a, self._coef_b,
                self._sc_code, self._sc_a, self._sc_b, self._phi_sign, self.spec.tv, self.spec.eta_free)

    def _check(self, z) -> np.ndarray:
        z = np.ascontiguousarray(z, dtype=float)
        if z.shape != (self.dim,):
            raise ModelError(f"layout mismatch: vector has {z.size} entries, layout needs {self.dim}")
        return z

    @property
    def noncentered(self) -> bool:
        return self.parameterization == NONCENTERED and (self.spec.tv or self.spec.eta_free)

    def logp_grad(self, z, impl=None) -> tuple[float, np.ndarray]:
        """Log density and gradient in the sampler's parameterization."""
        if impl is None:
            impl = kernels.logp_grad_nc if self.noncentered else kernels.logp_grad
        lp, g = impl(self._check(z), *self._args())
        return float(lp), g

    def log_joint(self, z) -> float:
        return self.logp_grad(z)[0]

    def to_centered(self, z) -> np.ndarray:
        """Replace innovation blocks by the latent paths they generate."""
        z = self._check(z)
        if not self.noncentered:
            return z.copy()
        path, E = kernels.nc_paths(z, self.y, self.X, self._coef_code, self._phi_sign, self.spec.tv, self.spec.eta_free)
        out = z.copy()
        lay = self.layout
        if "phi_path" in lay:
            out[lay.slot("phi_path").slice] = path
        if "E" in lay:
            out[lay.slot("E").slice] = E
        return out

    def from_centered(self, zc) -> np.ndarray:
        """Inverse of :meth:`to_centered`."""
        zc = self._check(zc)
        if not self.noncentered:
            return zc.copy()
        lay = self.layout
        v = lay.constrain(zc)
        out = zc.copy()
        phi_c = v[lay.slot(self.spec.phi_name).start]
        path = np.full(self.T, phi_c)
        if "phi_path" in lay:
            path = v[lay.slot("phi_path").slice]
            steps = np.diff(path, prepend=phi_c)
            out[lay.slot("phi_path").slice] = steps / v[lay.slot("sigma_phi").start]
        if "E" in lay:
            E = v[lay.slot("E").slice]
            beta = v[: len(self.spec.coef_names)]
            resid = np.empty(self.T)
            resid[0] = E[0] - self.y[0]
            resid[1:] = E[1:] - path[1:] * E[:-1] - self.X[1:] @ beta
            out[lay.slot("E").slice] = resid / v[lay.slot("sigma_E").start]
        return out

    def pointwise(self, z, impl=None) -> np.ndarray:
        """Per-observation log-likelihood, ``(T,)``."""
        fn = kernels.pointwise_loglik if impl is None else impl
        zc = self.to_centered(z)
        return fn(zc, self.y, self.X, self._coef_code, self._phi_sign, self.spec.tv, self.spec.eta_free)

    def constrain(self, z) -> np.ndarray:
        """Constrained values; accepts one vector or an ``(M, dim)`` stack."""
        z = np.asarray(z, dtype=float)
        if z.ndim == 2:
            return np.array([self.constrain(row) for row in z])
        return self.layout.constrain(self.to_centered(z))

    def unconstrain(self, v) -> np.ndarray:
        return self.from_centered(self.layout.unconstrain(v))

    def point(self, z) -> ParamPoint:
        return ParamPoint(z, self.layout)

    def initial_point(self, rng: np.random.Generator, radius: float = 2.0) -> np.ndarray:
        """Random start: parameters uniform on ``(-radius, radius)``.

        Scale parameters start at a draw from their prior, since a large
        random scale lets the resilience walk wander into explosive
        regions the sampler cannot leave.  Latent blocks start near a quiet
        path: near-zero innovations when non-centred, the data (E) or the
        initial resilience (phi) otherwise.
        """
        z = rng.uniform(-radius, radius, self.dim)
        lay = self.layout
        for name in self.spec.scale_names:
            s = lay.slot(name)
            z[s.start] = P.unconstrain(s.transform, self.spec.priors[name].sample(rng))
        if self.noncentered:
            for name in ("phi_path", "E"):
                if name in lay:
                    z[lay.slot(name).slice] = rng.uniform(-1e-3, 1e-3, self.T)
            return z
        if "E" in lay:
            sd = float(np.std(self.y)) or 1.0
            z[lay.slot("E").slice] = self.y + 0.1 * sd * rng.standard_normal(self.T)
        if "phi_path" in lay:
            phi0 = P.constrain(lay.slot("phi0").transform, z[lay.slot("phi0").start])
            z[lay.slot("phi_path").slice] = phi0 + 0.01 * rng.standard_normal(self.T)
        return z

    def prior_terms(self, z) -> float:
        """Prior log-densities plus Jacobians of a centred vector."""
        z = self._check(z)
        v = self.layout.constrain(z)
        lay = self.layout
        total = lay.log_jacobian(z)
        for name in self.spec.parameter_names:
            s = lay.slot(name)
            val = v[s.start]
            if name == self.spec.phi_name:
                val = abs(val)
            total += P.log_density_and_slope(self.spec.priors[name].code, self.spec.priors[name].a,
                                             self.spec.priors[name].b, val)[0]
        return float(total)


def _as_model(spec, frame) -> BoundModel:
    if isinstance(frame, BoundModel):
        if frame.noncentered:
            return BoundModel(frame.spec, frame.design, CENTERED)
        return frame
    return BoundModel(spec, frame, CENTERED)


def log_joint(spec: ModelSpec, frame, point: ParamPoint) -> float:
    """Log joint density of data, latent paths and parameters.

    ``point`` is on the unconstrained scale with latent paths stored
    directly; the value includes the log-Jacobians of the transforms.
    """
    m = _as_model(spec, frame)
    if point.layout != m.layout:
        raise ModelError("layout mismatch between point and model")
    return m.log_joint(point.z)


def grad_log_joint(spec: ModelSpec, frame, point: ParamPoint) -> np.ndarray:
    m = _as_model(spec, frame)
    if point.layout != m.layout:
        raise ModelError("layout mismatch between point and model")
    return m.logp_grad(point.z)[1]


# ---------------------------------------------------------------- DLM form


@dataclass(frozen=True)
class StateSpaceForm:
    """Augmented linear-Gaussian form with state ``(E_t, psi)``.

    ``psi`` carries the regression coefficients with zero evolution noise,
    so ``E_t = phi E_{t-1} + x_t' psi`` plus state noise.
    """

    phi: float
    beta: np.ndarray
    sigma_E: float
    sigma_v: float

    @property
    def n_state(self) -> int:
        return 1 + len(self.beta)

    @property
    def F(self) -> np.ndarray:
        f = np.zeros(self.n_state)
        f[0] = 1.0
        return f

    def G(self, x) -> np.ndarray:
        p = len(self.beta)
        g = np.eye(self.n_state)
        g[0, 0] = self.phi
        g[0, 1:] = np.asarray(x, dtype=float).reshape(p)
        return g

    @property
    def W(self) -> np.ndarray:
        w = np.zeros((self.n_state, self.n_state))
        w[0, 0] = self.sigma_E ** 2
        return w


def to_dlm(spec: ModelSpec, params: Mapping[str, object]) -> StateSpaceForm:
    """Linear-Gaussian form of a fixed-resilience, ``eta_free`` model.

    ``params`` maps constrained names (``alpha``, ``beta[..]``, ``phi``,
    ``sigma_E``, ``eta``) to values, e.g. ``ParamPoint.constrained()``.
    """
    if spec.tv:
        raise ModelError("time-varying resilience has no linear state-space form")
    if not spec.eta_free:
        raise ModelError("DLM form needs observation noise (eta_free)")
    beta = np.array([params[c] for c in spec.coef_names], dtype=float)
    s_e = float(params["sigma_E"])
    return StateSpaceForm(float(params["phi"]), beta, s_e, float(params["eta"]) * s_e)


def kalman_loglik(form: StateSpaceForm, y, X, m0: float | None = None, P0: float | None = None) -> float:
    """Marginal log-likelihood by forward filtering.

    The initial state defaults to ``E_1 ~ N(y_1, sigma_E^2)``; pass ``m0`` /
    ``P0`` to override.
    """
    if form.sigma_E <= 0 or form.sigma_v <= 0:
        raise ModelError("variances must be positive")
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float).reshape(len(y), len(form.beta))
    n = form.n_state
    a = np.zeros(n)
    a[0] = y[0] if m0 is None else m0
    a[1:] = form.beta
    Pm = np.zeros((n, n))
    Pm[0, 0] = form.sigma_E ** 2 if P0 is None else P0
    W = form.W
    r = form.sigma_v ** 2
    ll = 0.0
    for t in range(len(y)):
        if t > 0:
            G = form.G(X[t])
            a = G @ a
            Pm = G @ Pm @ G.T + W
        v = y[t] - a[0]
        S = Pm[0, 0] + r
        ll += -0.5 * (math.log(2 * math.pi * S) + v * v / S)
        K = Pm[:, 0] / S
        a = a + K * v
        Pm = Pm - np.outer(K, Pm[0, :])
    return ll


def expit(u):
    return special.expit(u)
