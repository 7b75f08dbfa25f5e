"""Autocorrelation, inefficiency factors and effective sample sizes."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np


class DiagnosticsError(ValueError):
    pass


def autocorrelation(series, K) -> np.ndarray:
    """Sample autocorrelations at lags ``1..K`` with the biased (1/n) normalisation."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if K < 1 or n <= K:
        raise DiagnosticsError(f"need 1 <= K < len(series); got K={K}, n={n}")
    scale = float(np.max(np.abs(x))) if n else 0.0
    x = x - x.mean()
    var = float(x @ x) / n
    if not var > (1e-12 * scale) ** 2:
        raise DiagnosticsError("series has zero variance; autocorrelation undefined")
    size = 1 << int(math.ceil(math.log2(2 * n)))
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[: K + 1] / n
    return acov[1:] / acov[0]


@dataclass(frozen=True)
class EssResult:
    inf: float
    ess: float  # percent of the draws
    K: int
    clamped: bool = False


def ess(series, K) -> EssResult:
    """``INF(K) = 1 + 2 sum_{k<=K} gamma(k)`` (clamped at 1) and ``ESS% = 100 / INF``."""
    gamma = autocorrelation(series, K)
    raw = 1.0 + 2.0 * float(np.sum(gamma))
    clamped = raw < 1.0
    inf = max(raw, 1.0)
    return EssResult(inf, 100.0 / inf, int(K), clamped)


def stabilize_k(series, k0=32, tol=0.02, noise_sigmas=2.0):
    """Double ``K`` from ``k0`` until the ESS estimate stops moving.

    The estimate counts as stable when ESS changes by less than ``tol``
    (relative) between ``K`` and ``2K``, or when the change in INF is within
    ``noise_sigmas`` standard errors of the added autocorrelation block
    (``2 sqrt(K/n) INF(K)``), so sampling noise cannot drive ``K`` upward on
    its own.  Stops at ``len(series) // 4`` with a warning otherwise.
    """
    n = len(series)
    cap = max(1, n // 4)
    K = min(k0, cap)
    cur = ess(series, K)
    while 2 * K <= cap:
        nxt = ess(series, 2 * K)
        if abs(nxt.ess - cur.ess) / cur.ess < tol:
            return K
        if noise_sigmas and abs(nxt.inf - cur.inf) < noise_sigmas * 2.0 * math.sqrt(K / n) * cur.inf:
            return K
        K, cur = 2 * K, nxt
    warnings.warn(f"ESS did not stabilise before K reached {K} (n={n})", RuntimeWarning, stacklevel=2)
    return K


@dataclass
class DiagnosticsReport:
    sampler: str
    acceptance_rate: float
    ess: list
    inf: list
    K: list
    min_ess: float
    wall_time: float
    min_ess_per_second: float
    n_draws: int
    n_grad: int = 0
    n_phi: int = 0
    failures: int = 0
    clamped: list = field(default_factory=list)
    seed: object = None
    spec: dict = field(default_factory=dict)

    @property
    def cost(self) -> int:
        """Deterministic cost: gradient plus potential evaluations."""
        return self.n_grad + self.n_phi

    def to_json(self, path=None):
        text = json.dumps(asdict(self), indent=2, sort_keys=True, default=str)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def summarize(trace, wall_time=None, k0=32, tol=0.02) -> DiagnosticsReport:
    """ESS per monitored node, the minimum over nodes, and run metadata."""
    if trace.n_kept < 2:
        raise DiagnosticsError("empty trace: nothing to summarise")
    wall = trace.wall_time if wall_time is None else wall_time
    ess_vals, infs, ks, clamped = [], [], [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for j in range(trace.samples.shape[1]):
            col = trace.samples[:, j]
            K = stabilize_k(col, k0=k0, tol=tol)
            r = ess(col, K)
            ess_vals.append(r.ess)
            infs.append(r.inf)
            ks.append(r.K)
            clamped.append(r.clamped)
    min_ess = float(min(ess_vals))
    spec = trace.spec
    return DiagnosticsReport(
        sampler=spec.algorithm.value,
        acceptance_rate=trace.acceptance_rate,
        ess=ess_vals,
        inf=infs,
        K=ks,
        min_ess=min_ess,
        wall_time=float(wall),
        min_ess_per_second=min_ess / wall if wall > 0 else float("inf"),
        n_draws=int(trace.n_kept),
        n_grad=int(trace.n_grad),
        n_phi=int(trace.n_phi),
        failures=trace.failure_count,
        clamped=clamped,
        seed=spec.seed,
        spec={k: (v.value if hasattr(v, "value") else v) for k, v in asdict(spec).items()},
    )


def monitor_nodes(grid, times, bridge=True) -> np.ndarray:
    """Nodes closest to fixed physical times, so monitors match across meshes."""
    idx = np.rint(np.asarray(times, dtype=float) / grid.step).astype(int)
    hi = grid.n - 1 if bridge else grid.n
    return np.clip(idx, 1, hi)
