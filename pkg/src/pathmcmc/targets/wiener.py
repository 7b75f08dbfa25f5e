"""Targets parametrised by the driving Wiener noise of a scalar SDE.

The latent process ``v`` solves ``dv = mu(v) dt + sigma(v) dx`` with ``x`` a
Brownian motion; the sampler works on ``x``.  On the grid ``v`` is rebuilt by
the Euler scheme ``v_i = v_{i-1} + mu(v_{i-1}) step + sigma(v_{i-1}) dx_i`` and
``Phi`` is any point/Riemann functional of the ``v`` path.

Sensitivities ``Y[i, j] = dv_i / dx_j`` obey ``Y[j, j] = sigma(v_{j-1})``,
``Y[j+1, j] = sigma(v_{j-1}) g_{j+1} - sigma(v_j)`` and ``Y[i, j] = Y[i-1, j] g_i``
beyond, with ``g_k = 1 + mu'(v_{k-1}) step + sigma'(v_{k-1}) dx_k``.  Because every
column shares the same product of ``g`` factors, the gradient
``sum_i dPhi/dv_i Y[i, j]`` is accumulated by one backward sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..pathspace import GaussianLaw, LawKind
from .base import TargetModel
from .functional import EvaluationError, FunctionalSpec, ItoTerm


@dataclass(frozen=True)
class Lamperti:
    """State map ``x = eta(v)`` turning an SDE into one with unit diffusion."""

    eta: Callable
    eta_inv: Callable
    sigma: Callable = None

    @classmethod
    def unit(cls, v0=0.0):
        return cls(lambda v: v - v0, lambda x: x + v0, lambda v: np.ones_like(v))

    @classmethod
    def scaled(cls, sigma, v0=0.0):
        """Constant diffusion ``sigma``: ``eta(v) = (v - v0) / sigma``."""
        if not sigma > 0:
            raise ValueError("diffusion coefficient must be positive")
        return cls(
            lambda v: (np.asarray(v) - v0) / sigma,
            lambda x: sigma * np.asarray(x) + v0,
            lambda v: np.full_like(np.asarray(v, dtype=float), sigma),
        )

    def check(self, probe) -> float:
        """Verify positivity of the diffusion and return the round-trip error."""
        probe = np.asarray(probe, dtype=float)
        if self.sigma is not None and np.any(np.asarray(self.sigma(probe)) <= 0):
            raise ValueError("diffusion coefficient is not positive on the probe range")
        return float(np.max(np.abs(self.eta_inv(self.eta(probe)) - probe)))


class WienerNoiseTarget(TargetModel):
    """``Phi(x) = F(v(x))`` for an SDE driven by the Brownian path ``x``."""

    kind = "wiener_noise"

    def __init__(self, law: GaussianLaw, v0, mu, dmu, sigma, dsigma, spec: FunctionalSpec, theta=None, data=None):
        if law.kind is not LawKind.BROWNIAN_MOTION:
            raise ValueError("Wiener-noise targets need a Brownian-motion reference law")
        if any(isinstance(t, ItoTerm) for t in spec.terms):
            raise ValueError("stochastic-integral terms are not supported on the noise scale")
        if None in (mu, dmu, sigma, dsigma):
            raise ValueError("drift, diffusion and both derivatives are required")
        super().__init__(law, theta, data)
        self.v0 = float(v0)
        self.mu, self.dmu, self.sigma, self.dsigma = mu, dmu, sigma, dsigma
        self.spec = spec
        self._s = law.grid.times

    def reconstruct(self, x) -> np.ndarray:
        """Euler path ``v_0..v_N`` driven by the free values ``x_1..x_N``."""
        dx = np.diff(self.law.embed(self.law.values(x)))
        step = self.law.step
        v = np.empty(dx.size + 1)
        v[0] = cur = self.v0
        mu, sigma = self.mu, self.sigma
        for i, d in enumerate(dx, start=1):
            cur = cur + float(mu(cur)) * step + float(sigma(cur)) * d
            if not math.isfinite(cur):
                raise EvaluationError("non-finite reconstructed state", i)
            v[i] = cur
        return v

    def _factors(self, v, dx):
        sig = np.asarray(self.sigma(v), dtype=float) * np.ones_like(v)
        zero = np.flatnonzero(sig == 0)
        if zero.size:
            raise EvaluationError("vanishing diffusion coefficient", int(zero[0]))
        g = np.ones_like(v)
        # g[k] for k = 1..N uses v_{k-1} and dx_k
        g[1:] = (
            1.0
            + np.asarray(self.dmu(v[:-1]), dtype=float) * self.law.step
            + np.asarray(self.dsigma(v[:-1]), dtype=float) * dx
        )
        return sig, g

    def _value(self, x):
        return self.spec.value(self._s, self.reconstruct(x))

    def _value_and_grad(self, x):
        v = self.reconstruct(x)
        dx = np.diff(self.law.embed(x))
        val, w = self.spec.value_and_grad(self._s, v)
        sig, g = self._factors(v, dx)
        n = self.law.grid.n
        # adj[i] = sum_{k >= i} w_k prod_{m=i+1}^{k} g_m
        adj = np.zeros(n + 2)
        for i in range(n, 0, -1):
            nxt = g[i + 1] * adj[i + 1] if i < n else 0.0
            adj[i] = w[i] + nxt
        grad = w[1:] * sig[:-1]
        dq = np.zeros(n + 1)
        dq[1:n] = sig[: n - 1] * g[2:] - sig[1:n]
        grad += dq[1:] * adj[2:]
        return val, grad

    def malliavin_column(self, x, j) -> np.ndarray:
        """Column ``dv_i/dx_j`` for all ``i`` by the forward recursion (for checks)."""
        v = self.reconstruct(x)
        dx = np.diff(self.law.embed(x))
        sig, g = self._factors(v, dx)
        col = np.zeros_like(v)
        col[j] = sig[j - 1]
        if j + 1 < v.size:
            col[j + 1] = sig[j - 1] * g[j + 1] - sig[j]
        for i in range(j + 2, v.size):
            col[i] = col[i - 1] * g[i]
        return col


def wiener_noise_grad(model: WienerNoiseTarget, x) -> np.ndarray:
    """Preconditioned gradient of a Wiener-noise target."""
    return model.precond_grad(x)
