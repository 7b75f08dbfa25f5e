"""Discretised pathspace: grids, Brownian reference laws and their covariance.

Paths live on an equidistant grid ``s_i = i * step`` of ``[0, horizon]``.
A path is stored only on its *free* nodes: ``1..N`` for a Brownian motion
(``x(0) = 0``) and ``1..N-1`` for a Brownian bridge (``x(0) = x(horizon) = 0``).

The covariance operator acts as an integral operator on path values,
``(C f)(s_u) = step * sum_k c(s_u, s_k) f_k``, so that ``C f`` approximates
``int c(u, v) f(v) dv``.  It is applied with two prefix-sum passes and never
builds the N x N kernel.  With ``<f, g> = step * sum f g`` the precision form
``<x, C^{-1} x>`` is the sum of squared increments divided by the step.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
import numpy as np


class LawKind(str, enum.Enum):
    BROWNIAN_MOTION = "bm"
    BROWNIAN_BRIDGE = "bb"


class Boundary(str, enum.Enum):
    FREE_END = "free_end"
    BRIDGE = "bridge"


_BOUNDARY_OF = {
    LawKind.BROWNIAN_MOTION: Boundary.FREE_END,
    LawKind.BROWNIAN_BRIDGE: Boundary.BRIDGE,
}


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    step: float
    n: int
    data_indices: tuple = ()
    snap_distances: tuple = ()

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.step

    def index_of(self, times, strict=False, tol=1e-9, allow_origin=False) -> np.ndarray:
        """Nearest node index of each time; ``strict`` demands exact hits.

        Times that round to node 0 are rejected unless ``allow_origin`` is set
        (useful when the value at the fixed initial node is still informative).
        """
        t = np.atleast_1d(np.asarray(times, dtype=float))
        if np.any(t <= 0) or np.any(t > self.horizon * (1 + 1e-12)):
            raise ValueError("data times must lie in (0, horizon]")
        idx = np.rint(t / self.step).astype(int)
        dist = np.abs(idx * self.step - t)
        if strict and np.any(dist > tol * max(self.horizon, 1.0)):
            bad = t[np.argmax(dist)]
            raise ValueError(f"data time {bad} is not a grid node (strict grid)")
        if not allow_origin and np.any(idx < 1):
            raise ValueError("data time snaps onto the fixed initial node")
        return idx


def make_grid(horizon, step, data_times=(), strict=False, tol=1e-9) -> TimeGrid:
    """Equidistant grid on ``[0, horizon]`` with data times snapped to nodes.

    Raises ``ValueError`` if ``horizon / step`` is not an integer (to ``tol``)
    or, with ``strict=True``, if a data time does not fall on a node.
    """
    if not horizon > 0 or not 0 < step <= horizon:
        raise ValueError("need horizon > 0 and 0 < step <= horizon")
    n = int(round(horizon / step))
    if abs(n * step - horizon) > tol * horizon:
        raise ValueError(f"horizon {horizon} is not a multiple of step {step}")
    grid = TimeGrid(float(horizon), float(step), n)
    if len(data_times) == 0:
        return grid
    t = np.sort(np.asarray(data_times, dtype=float))
    idx = grid.index_of(t, strict=strict, tol=tol)
    dist = np.abs(idx * grid.step - t)
    return TimeGrid(
        grid.horizon,
        grid.step,
        n,
        tuple(int(i) for i in np.unique(idx)),
        tuple(float(d) for d in dist),
    )


@dataclass(frozen=True)
class GaussianLaw:
    """Brownian motion or (possibly multiply pinned) Brownian bridge on a grid.

    ``pins`` are interior node indices where a bridge law is additionally held
    at zero; the law is then a product of independent bridges, one per segment
    between consecutive pins.  Pinned nodes stay in the free-node vector but
    always carry the value zero.
    """

    kind: LawKind
    grid: TimeGrid
    pins: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", LawKind(self.kind))
        pins = tuple(sorted(int(p) for p in self.pins))
        if pins and self.kind is not LawKind.BROWNIAN_BRIDGE:
            raise ValueError("interior pins only make sense for bridge laws")
        if any(p <= 0 or p >= self.grid.n for p in pins):
            raise ValueError("pins must be interior nodes")
        object.__setattr__(self, "pins", pins)

    @property
    def boundary(self) -> Boundary:
        return _BOUNDARY_OF[self.kind]

    @property
    def horizon(self) -> float:
        return self.grid.horizon

    @property
    def step(self) -> float:
        return self.grid.step

    @property
    def n_free(self) -> int:
        return self.grid.n if self.kind is LawKind.BROWNIAN_MOTION else self.grid.n - 1

    @property
    def free_slice(self) -> slice:
        return slice(1, 1 + self.n_free)

    @property
    def free_times(self) -> np.ndarray:
        return self.grid.times[self.free_slice]

    @property
    def knots(self) -> np.ndarray:
        """Node indices where a bridge law is pinned, endpoints included."""
        return np.array([0, *self.pins, self.grid.n])

    @property
    def dim(self) -> int:
        """Number of genuinely random coordinates."""
        return self.n_free - len(self.pins)

    def embed(self, x) -> np.ndarray:
        """Full nodal values ``0..N`` (boundary zeros added)."""
        x = self.values(x)
        full = np.zeros(x.shape[:-1] + (self.grid.n + 1,))
        full[..., self.free_slice] = x
        return full

    def restrict(self, full) -> np.ndarray:
        """Free-node part of a full nodal array, with pinned nodes zeroed."""
        out = np.array(full[..., self.free_slice], dtype=float)
        if self.pins:
            out[..., np.asarray(self.pins) - 1] = 0.0
        return out

    def values(self, x) -> np.ndarray:
        if isinstance(x, PathVector):
            if x.boundary is not self.boundary or x.grid != self.grid:
                raise ValueError(
                    f"{x.boundary.value} path does not match {self.kind.value} law"
                )
            x = x.values
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_free:
            raise ValueError(
                f"path has {x.shape[-1]} free values, law expects {self.n_free}"
            )
        return x

    def path(self, values) -> "PathVector":
        return PathVector(self.grid, self.boundary, self.values(values))

    def _segment_maps(self):
        return self._plan[0], self._plan[1]

    @cached_property
    def _plan(self):
        """Per-node segment bounds and interpolation weights (computed once)."""
        knots = self.knots
        nodes = np.arange(self.grid.n + 1)
        seg = np.clip(np.searchsorted(knots, nodes, side="right") - 1, 0, len(knots) - 2)
        a, b = knots[seg], knots[seg + 1]
        frac = (nodes - a) / (b - a)
        return a, b, frac, np.maximum(nodes - 1, 0), np.maximum(b - 1, 0)


def brownian_motion(grid) -> GaussianLaw:
    return GaussianLaw(LawKind.BROWNIAN_MOTION, grid)


def brownian_bridge(grid, pins=()) -> GaussianLaw:
    return GaussianLaw(LawKind.BROWNIAN_BRIDGE, grid, tuple(pins))


@dataclass(frozen=True)
class PathVector:
    grid: TimeGrid
    boundary: Boundary
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        vals = np.asarray(self.values, dtype=float)
        expected = self.grid.n if self.boundary is Boundary.FREE_END else self.grid.n - 1
        if vals.shape != (expected,):
            raise ValueError(f"{self.boundary.value} path needs {expected} values")
        object.__setattr__(self, "values", vals)

    def full(self) -> np.ndarray:
        out = np.zeros(self.grid.n + 1)
        out[1 : 1 + len(self.values)] = self.values
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "value"])
            for t, v in zip(self.grid.times, self.full()):
                w.writerow([repr(float(t)), repr(float(v))])

    @classmethod
    def from_csv(cls, path, boundary) -> "PathVector":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        times, vals = data[:, 0], data[:, 1]
        n = len(times) - 1
        grid = make_grid(times[-1], times[-1] / n)
        boundary = Boundary(boundary)
        stop = n + 1 if boundary is Boundary.FREE_END else n
        return cls(grid, boundary, vals[1:stop])


def sample_gaussian_path(law: GaussianLaw, rng, size=None) -> np.ndarray:
    """Exact draw(s) from the discretised law, built from Gaussian increments."""
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    n = law.grid.n
    inc = rng.standard_normal(shape + (n,)) * math.sqrt(law.step)
    w = np.zeros(shape + (n + 1,))
    np.cumsum(inc, axis=-1, out=w[..., 1:])
    if law.kind is LawKind.BROWNIAN_BRIDGE:
        a, b, frac = law._plan[:3]
        w = w - (1 - frac) * w[..., a] - frac * w[..., b]
    return law.restrict(w)


def apply_covariance(law: GaussianLaw, f) -> np.ndarray:
    """Covariance operator applied to free-node values ``f`` (batched on leading axes)."""
    f = law.values(f)
    full = law.embed(f)
    if law.pins:
        full[..., list(law.pins)] = 0.0
    delta = law.step
    if law.kind is LawKind.BROWNIAN_MOTION:
        a1 = np.cumsum(full, axis=-1)  # a1[u] = sum_{k<=u} f_k
        b1 = np.zeros_like(a1)
        # b1[u] = step * sum_{k=1}^{u-1} a1[k]
        b1[..., 2:] = np.cumsum(a1[..., 1:-1], axis=-1) * delta
        s = law.grid.times
        out = delta * (s * a1[..., -1:] - b1)
        return law.restrict(out)
    a, b, frac, prev, last = law._plan
    cs = np.cumsum(full, axis=-1)
    cs2 = np.cumsum(cs - cs[..., a], axis=-1)
    base = cs2[..., a]
    out = delta * delta * (frac * (cs2[..., last] - base) - (cs2[..., prev] - base))
    return law.restrict(out)


def precision_quadratic_form(law: GaussianLaw, x) -> np.ndarray | float:
    """``<x, C^{-1} x>``: squared increments (boundary zeros included) over the step."""
    full = law.embed(x)
    return np.sum(np.diff(full, axis=-1) ** 2, axis=-1) / law.step


def inner_product(law: GaussianLaw, f, g) -> np.ndarray | float:
    return law.step * np.sum(law.values(f) * law.values(g), axis=-1)


@dataclass(frozen=True)
class EigenPair:
    index: int
    eigenvalue: float
    values: np.ndarray = field(repr=False)


def bridge_eigenvalue(horizon, p):
    return horizon**2 / (math.pi**2 * np.asarray(p, dtype=float) ** 2)


def kl_eigenpairs(grid: TimeGrid, count: int) -> list[EigenPair]:
    """First ``count`` Brownian-bridge eigenpairs, eigenfunctions on interior nodes."""
    if count < 1:
        raise ValueError("count must be >= 1")
    ell = grid.horizon
    s = grid.times[1:-1]
    return [
        EigenPair(
            p,
            float(bridge_eigenvalue(ell, p)),
            math.sqrt(2.0 / ell) * np.sin(math.pi * p * s / ell),
        )
        for p in range(1, count + 1)
    ]


def kl_coordinates(law: GaussianLaw, x, count: int) -> np.ndarray:
    """Coordinates ``<x, phi_p>`` of bridge path(s) on the first ``count`` sinusoids."""
    if law.kind is not LawKind.BROWNIAN_BRIDGE:
        raise ValueError("sinusoidal coordinates are defined for bridge laws only")
    basis = np.stack([e.values for e in kl_eigenpairs(law.grid, count)])
    return law.step * law.values(x) @ basis.T


def covariance_kernel(law: GaussianLaw, u, v):
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    k = np.minimum(u, v)
    if law.kind is LawKind.BROWNIAN_BRIDGE:
        if law.pins:
            raise NotImplementedError("kernel of a pinned bridge product")
        k = k - u * v / law.horizon
    return k


def dense_covariance_matrix(law: GaussianLaw) -> np.ndarray:
    """Kernel at the free nodes; for oracles on small grids only."""
    s = law.free_times
    return covariance_kernel(law, s[:, None], s[None, :])

