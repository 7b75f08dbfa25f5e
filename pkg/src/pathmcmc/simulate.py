"""Synthetic latent paths and observation records."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pathspace import TimeGrid, make_grid
from .targets.functional import EvaluationError
from .targets.models import (
    EventData,
    ModelKind,
    ObservationData,
    StochVolParams,
    SurvivalParams,
    stoch_vol_drift,
)


def simulate_sde(drift, diffusion, x0, grid: TimeGrid, rng, noise=None) -> np.ndarray:
    """Euler-Maruyama path ``x_i = x_{i-1} + mu(x_{i-1}) d + sigma(x_{i-1}) dW_i``.

    ``noise`` may supply the Brownian increments (length ``grid.n``); this is
    how paths on nested grids are coupled.  Raises ``EvaluationError`` naming
    the first node whose state is not finite.
    """
    d = grid.step
    if noise is None:
        noise = rng.standard_normal(grid.n) * np.sqrt(d)
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (grid.n,):
        raise ValueError(f"need {grid.n} increments, got {noise.shape}")
    x = np.empty(grid.n + 1)
    x[0] = x0
    with np.errstate(all="ignore"):
        for i in range(1, grid.n + 1):
            prev = x[i - 1]
            x[i] = prev + drift(prev) * d + diffusion(prev) * noise[i - 1]
            if not np.isfinite(x[i]):
                raise EvaluationError("Euler-Maruyama state diverged", i)
    return x


@dataclass
class SimulatedData:
    """An observation record with the latent path that generated it."""

    kind: str
    data: object
    latent: np.ndarray
    resampled: int = 0  # survival draws that fell past the horizon
    info: dict = field(default_factory=dict)


def _daily_times(grid: TimeGrid, spacing):
    n_obs = int(round(grid.horizon / spacing))
    return spacing * np.arange(1, n_obs + 1)


def _stoch_vol(path, theta: StochVolParams, grid, rng, spacing=1.0):
    times = _daily_times(grid, spacing)
    idx = grid.index_of(times)
    vol = np.exp(theta.sigma * path[:-1] + theta.v0) * grid.step
    cum = np.concatenate([[0.0], np.cumsum(vol)])
    var = np.diff(cum[np.concatenate([[0], idx])])
    y = np.cumsum(rng.standard_normal(len(times)) * np.sqrt(var))
    return ObservationData(times, y, initial=0.0), 0


def survival_events(path, hazard, grid: TimeGrid, n_events, rng, max_resample=10000):
    """Inverse-CDF event draws from the hazard along ``path``.

    The cumulative hazard uses left-point sums on the grid and is inverted by
    linear interpolation.  Draws beyond the horizon are redrawn; the number of
    redraws is returned with the event times.
    """
    h = np.asarray(hazard(path[:-1]), dtype=float)
    if np.any(h < 0) or not np.isfinite(h).all():
        raise ValueError("hazard must be finite and non-negative along the path")
    cum = np.concatenate([[0.0], np.cumsum(h) * grid.step])
    if np.any(np.diff(cum) <= 0):
        raise ValueError("cumulative hazard must be strictly increasing")
    events = np.empty(n_events)
    redraws = 0
    for i in range(n_events):
        e = rng.exponential()
        while e >= cum[-1]:
            redraws += 1
            if redraws > max_resample:
                raise ValueError("cumulative hazard too small to place events inside the horizon")
            e = rng.exponential()
        events[i] = np.interp(e, cum, grid.times)
    return np.sort(events), redraws


def simulate_observations(kind, path, theta, grid: TimeGrid, rng, **options) -> SimulatedData:
    """Draw a data record for a model family given its latent path on ``grid``.

    * ``stoch_vol``: ``path`` is the unit-diffusion state ``X`` and log-price
      increments over intervals of length ``spacing`` (default 1) are
      ``N(0, step * sum exp(sigma X + v0))``.
    * ``survival``: ``n_events`` (default 200) inverse-CDF event times from the
      hazard ``theta.hazard`` along ``path``.
    * ``obs_error`` / ``observed_bridge`` / ``wiener_noise``: readout of
      ``path`` at ``times`` plus Gaussian noise of standard deviation ``sd``
      (default 0).
    """
    kind = ModelKind(kind)
    path = np.asarray(path, dtype=float)
    if path.shape != (grid.n + 1,):
        raise ValueError(f"latent path needs {grid.n + 1} nodal values")
    if kind is ModelKind.STOCH_VOL:
        theta = theta if isinstance(theta, StochVolParams) else StochVolParams(**(theta or {}))
        data, flags = _stoch_vol(path, theta, grid, rng, options.get("spacing", 1.0))
        return SimulatedData(kind.value, data, path, flags)
    if kind is ModelKind.SURVIVAL:
        theta = theta or SurvivalParams.default()
        events, redraws = survival_events(path, theta.hazard, grid, options.get("n_events", 200), rng)
        return SimulatedData(kind.value, EventData(events), path, redraws)
    if kind is ModelKind.OU_BRIDGE:
        raise ValueError("the OU bridge target carries no data")
    times = np.asarray(options["times"], dtype=float)
    idx = grid.index_of(times)
    values = path[idx] + options.get("sd", 0.0) * rng.standard_normal(len(times))
    return SimulatedData(kind.value, ObservationData(times, values, initial=float(path[0])), path)


# -------------------------------------------------------- default datasets

SURVIVAL_HORIZON = 5.0
SURVIVAL_STEP = 0.02
SURVIVAL_EVENTS = 200
SV_HORIZON = 250.0
SV_STEP = 0.25


def survival_dataset(rng, horizon=SURVIVAL_HORIZON, step=SURVIVAL_STEP, n_events=SURVIVAL_EVENTS):
    """Latent path from the survival prior SDE and event times drawn from it."""
    theta = SurvivalParams.default()
    grid = make_grid(horizon, step)
    nu = theta.drift.nu
    path = simulate_sde(lambda x: nu(x), lambda x: 1.0, theta.x0, grid, rng)
    sim = simulate_observations(ModelKind.SURVIVAL, path, theta, grid, rng, n_events=n_events)
    return grid, theta, sim


def stoch_vol_dataset(rng, theta: StochVolParams = None, horizon=SV_HORIZON, step=SV_STEP):
    """Daily log-prices driven by a simulated volatility path."""
    theta = theta or StochVolParams()
    grid = make_grid(horizon, step)
    nu = stoch_vol_drift(theta).nu
    path = simulate_sde(lambda x: nu(x), lambda x: 1.0, 0.0, grid, rng)
    sim = simulate_observations(ModelKind.STOCH_VOL, path, theta, grid, rng)
    return grid, theta, sim
