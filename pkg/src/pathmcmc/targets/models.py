"""Concrete diffusion models expressed as path functionals.

Every model works with a unit-diffusion latent path ``X`` written as a fixed
offset plus a Brownian motion or Brownian bridge ``x``.  The Girsanov factor
of a drift ``nu`` contributes ``-int nu(X) dX + 0.5 int nu(X)^2 ds`` (an Ito
term and a Riemann term) unless a model states otherwise.  Constants that do
not depend on the path are dropped.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..pathspace import TimeGrid, brownian_bridge, brownian_motion
from .base import FunctionalTarget, TargetModel
from .functional import FunctionalSpec, ItoTerm, PointTerm, RiemannTerm
from .wiener import WienerNoiseTarget


class ModelKind(str, enum.Enum):
    OU_BRIDGE = "ou_bridge"
    OBSERVED_BRIDGE = "observed_bridge"
    OBS_ERROR = "obs_error"
    STOCH_VOL = "stoch_vol"
    SURVIVAL = "survival"
    WIENER_NOISE = "wiener_noise"


# ---------------------------------------------------------------- parameters


@dataclass(frozen=True)
class OuBridgeParams:
    kappa: float


@dataclass(frozen=True)
class DriftParams:
    """Drift ``nu`` of the unit-diffusion path with its derivatives.

    ``d2nu`` is optional; bridge models use it to avoid stochastic integrals.
    """

    nu: Callable
    dnu: Callable
    d2nu: Optional[Callable] = None


@dataclass(frozen=True)
class ObsErrorParams:
    drift: DriftParams
    log_density: Callable  # log f(y | X) elementwise
    dlog_density: Callable  # derivative in X
    x0: float = 0.0


@dataclass(frozen=True)
class StochVolParams:
    kappa: float = 0.03
    mu: float = 0.07
    sigma: float = 0.03**0.5
    v0: float = 0.0


@dataclass(frozen=True)
class SurvivalParams:
    hazard: Callable = None
    dhazard: Callable = None
    drift: DriftParams = None
    x0: float = 2.0

    @classmethod
    def default(cls, x0=2.0):
        """Hazard ``x^2`` and drift ``-(1.4 sin x + 1)``."""
        return cls(
            hazard=lambda x: x * x,
            dhazard=lambda x: 2.0 * x,
            drift=DriftParams(
                nu=lambda x: -(1.4 * np.sin(x) + 1.0),
                dnu=lambda x: -1.4 * np.cos(x),
                d2nu=lambda x: 1.4 * np.sin(x),
            ),
            x0=x0,
        )


@dataclass(frozen=True)
class WienerNoiseParams:
    mu: Callable
    dmu: Callable
    sigma: Callable
    dsigma: Callable
    v0: float = 0.0
    obs_sd: float = 1.0
    integrand: Optional[Callable] = None  # optional Riemann term z(v)
    dintegrand: Optional[Callable] = None


# ---------------------------------------------------------------------- data


@dataclass(frozen=True)
class ObservationData:
    """Observations ``values[m]`` at ``times[m]``; ``initial`` is the value at time 0."""

    times: np.ndarray
    values: np.ndarray
    initial: Optional[float] = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        y = np.asarray(self.values, dtype=float)
        if t.shape != y.shape or t.ndim != 1:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("observation times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", y)


@dataclass(frozen=True)
class EventData:
    times: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))


# ------------------------------------------------------------------ helpers


def _lift(f):
    """Turn a state function ``f(x)`` into an integrand ``z(s, x)``."""
    return lambda s, x: f(x)


def drift_terms(drift: DriftParams, buckets=None, n_buckets=1):
    """Ito term ``-int nu dX`` and Riemann term ``0.5 int nu^2 ds``."""
    nu, dnu = drift.nu, drift.dnu
    return (
        ItoTerm(
            r=lambda s, x: -nu(x),
            dr=lambda s, x: -dnu(x),
            buckets=buckets,
            n_buckets=n_buckets,
        ),
        RiemannTerm(
            z=lambda s, x: 0.5 * nu(x) ** 2,
            dz=lambda s, x: nu(x) * dnu(x),
            buckets=buckets,
            n_buckets=n_buckets,
        ),
    )


def _require(*callbacks, what):
    if any(c is None for c in callbacks):
        raise ValueError(f"missing derivative callback for {what}")


def _indices(grid: TimeGrid, times, strict, allow_origin=False):
    return grid.index_of(times, strict=strict, allow_origin=allow_origin)


# ------------------------------------------------------------------- builders


def ou_bridge(theta: OuBridgeParams, grid: TimeGrid) -> FunctionalTarget:
    k2 = float(theta.kappa) ** 2
    law = brownian_bridge(grid)
    term = RiemannTerm(z=lambda s, x: 0.5 * k2 * x * x, dz=lambda s, x: k2 * x)
    return FunctionalTarget(law, FunctionalSpec((term,)), theta=theta, kind=ModelKind.OU_BRIDGE.value)


def observed_bridge(theta: DriftParams, data: ObservationData, grid: TimeGrid, strict=False):
    """Unit-diffusion path observed exactly at ``data.times`` (last time = horizon).

    The path is the piecewise-linear interpolant of the data plus a product of
    independent bridges pinned at the observation nodes; all segments are
    updated jointly.
    """
    _require(theta.nu, theta.dnu, what="drift")
    if data.initial is None:
        raise ValueError("observed bridge needs the value at time 0")
    idx = _indices(grid, data.times, strict)
    if idx[-1] != grid.n:
        raise ValueError("the last observation must sit at the horizon")
    if len(np.unique(idx)) != len(idx):
        raise ValueError("two observations snap to the same node")
    law = brownian_bridge(grid, pins=idx[:-1])
    knots = np.concatenate([[0], idx])
    vals = np.concatenate([[data.initial], data.values])
    offset = np.interp(np.arange(grid.n + 1), knots, vals)
    nu, dnu, d2nu = theta.nu, theta.dnu, theta.d2nu
    if d2nu is not None:
        terms = (
            RiemannTerm(
                z=lambda s, x: 0.5 * (dnu(x) + nu(x) ** 2),
                dz=lambda s, x: 0.5 * d2nu(x) + nu(x) * dnu(x),
            ),
        )
    else:
        terms = drift_terms(theta)
    return FunctionalTarget(
        law, FunctionalSpec(terms), offset=offset, theta=theta, data=data,
        kind=ModelKind.OBSERVED_BRIDGE.value,
    )


def obs_error(theta: ObsErrorParams, data: ObservationData, grid: TimeGrid, strict=False):
    """Path observed with independent errors; Brownian-motion reference."""
    _require(theta.drift.nu, theta.drift.dnu, what="drift")
    _require(theta.log_density, theta.dlog_density, what="error density")
    idx = _indices(grid, data.times, strict)
    y = data.values
    logf, dlogf = theta.log_density, theta.dlog_density
    alpha = PointTerm(
        indices=idx,
        fn=lambda xs: -float(np.sum(logf(y, xs))),
        dfn=lambda xs: -np.asarray(dlogf(y, xs), dtype=float),
    )
    terms = (alpha, *drift_terms(theta.drift))
    offset = np.full(grid.n + 1, float(theta.x0))
    return FunctionalTarget(
        brownian_motion(grid), FunctionalSpec(terms), offset=offset, theta=theta, data=data,
        kind=ModelKind.OBS_ERROR.value,
    )


def gaussian_error(sd):
    """Log-density (up to a constant) of ``y ~ N(X, sd^2)`` and its X-derivative."""
    var = float(sd) ** 2
    return (lambda y, x: -0.5 * (y - x) ** 2 / var, lambda y, x: (y - x) / var)


def stoch_vol_drift(theta: StochVolParams) -> DriftParams:
    """Drift of ``X = (V - v0) / sigma`` for ``dV = kappa (mu - V) dt + sigma dW``."""
    a = theta.kappa * (theta.mu - theta.v0) / theta.sigma
    k = theta.kappa
    return DriftParams(
        nu=lambda x: a - k * x,
        dnu=lambda x: -k * np.ones_like(x),
        d2nu=lambda x: np.zeros_like(x),
    )


def stoch_vol(theta: StochVolParams, data: ObservationData, grid: TimeGrid, strict=False):
    """Log-price increments ``y_m - y_{m-1} ~ N(0, int exp(V) ds)`` over each interval.

    ``data.initial`` is the log-price at time 0 (default 0).  Grid nodes past
    the last observation only enter through the drift terms.
    """
    if not theta.sigma > 0:
        raise ValueError("volatility-of-volatility must be positive")
    idx = _indices(grid, data.times, strict)
    if len(np.unique(idx)) != len(idx):
        raise ValueError("two observations snap to the same node")
    y0 = 0.0 if data.initial is None else float(data.initial)
    d = np.diff(np.concatenate([[y0], data.values]))
    n = grid.n
    buckets = np.full(n, -1, dtype=int)
    start = 0
    for m, stop in enumerate(idx):
        buckets[start:stop] = m
        start = stop
    sig, v0 = float(theta.sigma), float(theta.v0)
    d2 = d * d

    def outer(i_vals):
        return float(np.sum(0.5 * np.log(i_vals) + d2 / (2.0 * i_vals)))

    def outer_grad(i_vals):
        return 0.5 / i_vals - d2 / (2.0 * i_vals**2)

    vol = RiemannTerm(
        z=lambda s, x: np.exp(sig * x + v0),
        dz=lambda s, x: sig * np.exp(sig * x + v0),
        buckets=buckets,
        n_buckets=len(idx),
        outer=outer,
        outer_grad=outer_grad,
    )
    terms = (vol, *drift_terms(stoch_vol_drift(theta)))
    return FunctionalTarget(
        brownian_motion(grid), FunctionalSpec(terms), theta=theta, data=data,
        kind=ModelKind.STOCH_VOL.value,
    )


def survival(theta: SurvivalParams, data: EventData, grid: TimeGrid, strict=False):
    """Event times with hazard ``h(X)``; ``X`` starts at ``x0``.

    Each event contributes ``-log h(X(y_i))`` and the left-point sum of
    ``h(X)`` over the nodes before its event node.
    """
    _require(theta.hazard, theta.dhazard, what="hazard")
    _require(theta.drift.nu, theta.drift.dnu, what="drift")
    # an event snapped to node 0 sees the fixed start value only
    idx = _indices(grid, data.times, strict, allow_origin=True)
    h, dh = theta.hazard, theta.dhazard
    alpha = PointTerm(
        indices=idx,
        fn=lambda xs: -float(np.sum(np.log(h(xs)))),
        dfn=lambda xs: -dh(xs) / h(xs),
    )
    # n_k = number of events strictly after node k
    counts = np.bincount(idx, minlength=grid.n + 1)
    at_risk = (len(idx) - np.cumsum(counts))[:-1].astype(float)
    cumulative = RiemannTerm(z=lambda s, x: h(x), dz=lambda s, x: dh(x), weights=at_risk)
    terms = (alpha, cumulative, *drift_terms(theta.drift))
    offset = np.full(grid.n + 1, float(theta.x0))
    return FunctionalTarget(
        brownian_motion(grid), FunctionalSpec(terms), offset=offset, theta=theta, data=data,
        kind=ModelKind.SURVIVAL.value,
    )


def wiener_noise(theta: WienerNoiseParams, data: ObservationData, grid: TimeGrid, strict=False):
    """Process ``dv = mu(v) dt + sigma(v) dx`` seen with Gaussian errors at ``data.times``."""
    _require(theta.mu, theta.dmu, theta.sigma, theta.dsigma, what="SDE coefficients")
    terms = []
    if data is not None and len(data.times):
        idx = _indices(grid, data.times, strict)
        logf, dlogf = gaussian_error(theta.obs_sd)
        y = data.values
        terms.append(
            PointTerm(
                indices=idx,
                fn=lambda vs: -float(np.sum(logf(y, vs))),
                dfn=lambda vs: -dlogf(y, vs),
            )
        )
    if theta.integrand is not None:
        _require(theta.dintegrand, what="integrand")
        terms.append(RiemannTerm(z=_lift(theta.integrand), dz=_lift(theta.dintegrand)))
    return WienerNoiseTarget(
        brownian_motion(grid), theta.v0, theta.mu, theta.dmu, theta.sigma, theta.dsigma,
        FunctionalSpec(tuple(terms)), theta=theta, data=data,
    )


_BUILDERS = {
    ModelKind.OBSERVED_BRIDGE: observed_bridge,
    ModelKind.OBS_ERROR: obs_error,
    ModelKind.STOCH_VOL: stoch_vol,
    ModelKind.SURVIVAL: survival,
    ModelKind.WIENER_NOISE: wiener_noise,
}


def build_model(kind, theta, data, grid: TimeGrid, strict=False) -> TargetModel:
    """Assemble the target of a given model kind on ``grid``."""
    kind = ModelKind(kind)
    if kind is ModelKind.OU_BRIDGE:
        if not isinstance(theta, OuBridgeParams):
            theta = OuBridgeParams(**theta) if isinstance(theta, dict) else OuBridgeParams(theta)
        return ou_bridge(theta, grid)
    if kind is ModelKind.STOCH_VOL and isinstance(theta, dict):
        theta = StochVolParams(**theta)
    if kind is ModelKind.SURVIVAL and theta is None:
        theta = SurvivalParams.default()
    return _BUILDERS[kind](theta, data, grid, strict=strict)
