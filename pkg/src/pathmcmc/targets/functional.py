"""Generic path functionals built from point, Riemann and Ito terms.

A functional is a sum of terms evaluated on a full nodal path ``X_0..X_N``:

* :class:`PointTerm`: ``alpha(X[i_1], ..., X[i_M])`` at data nodes;
* :class:`RiemannTerm`: ``beta(I_1, ..., I_L)`` with left-point sums
  ``I_l = step * sum_{k in bucket l} w_k z(s_k, X_k)``;
* :class:`ItoTerm`: ``gamma(S_1, ..., S_J)`` with Ito sums
  ``S_j = sum_{k in bucket j} r(s_k, X_k) (X_{k+1} - X_k)``.

Buckets assign each left node ``k = 0..N-1`` to one of the sums (``-1`` drops
the node).  Evaluation returns the value together with its exact gradient
with respect to every nodal value, so the discrete preconditioned gradient is
one covariance application away.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class EvaluationError(ValueError):
    """Non-finite value met while evaluating a functional or its gradient."""

    def __init__(self, message, node=None):
        if node is not None:
            message = f"{message} (node {node})"
        super().__init__(message)
        self.node = node


def _check_finite(values, what, nodes=None):
    values = np.asarray(values)
    if np.isfinite(values).all():
        return
    pos = int(np.flatnonzero(~np.isfinite(values.ravel()))[0])
    node = int(nodes[pos]) if nodes is not None else pos
    raise EvaluationError(f"non-finite {what}", node)


def _sum(values):
    return float(np.sum(values))


def _ones(values):
    return np.ones_like(values)


@dataclass(frozen=True)
class PointTerm:
    """``fn(X[indices])`` with gradient ``dfn``; indices may repeat."""

    indices: np.ndarray
    fn: Callable[[np.ndarray], float]
    dfn: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=int))

    def value(self, s, X):
        vals = X[self.indices]
        out = float(self.fn(vals))
        if not np.isfinite(out):
            # locate the culprit node when the term is a sum of point values
            for pos, v in enumerate(vals):
                if not np.isfinite(self.fn(np.array([v]))):
                    raise EvaluationError("non-finite point term", int(self.indices[pos]))
            raise EvaluationError("non-finite point term")
        return out

    def value_and_grad(self, s, X, grad):
        out = self.value(s, X)
        d = np.asarray(self.dfn(X[self.indices]), dtype=float)
        _check_finite(d, "point-term derivative", self.indices)
        np.add.at(grad, self.indices, d)
        return out


@dataclass(frozen=True)
class _BucketedSum:
    weights: Optional[np.ndarray] = None
    buckets: Optional[np.ndarray] = None
    n_buckets: int = 1
    outer: Callable[[np.ndarray], float] = _sum
    outer_grad: Callable[[np.ndarray], np.ndarray] = _ones

    @property
    def _plain(self):
        """Single unweighted sum with identity outer function."""
        return self.weights is None and self.buckets is None and self.outer is _sum

    def _layout(self, n):
        w = np.ones(n) if self.weights is None else np.asarray(self.weights, float)
        b = np.zeros(n, dtype=int) if self.buckets is None else np.asarray(self.buckets, int)
        if w.shape != (n,) or b.shape != (n,):
            raise ValueError(f"weights and buckets must have length {n}")
        return w, b

    def _reduce(self, contrib, b):
        keep = b >= 0
        return np.bincount(b[keep], weights=contrib[keep], minlength=self.n_buckets)

    def _outer(self, sums):
        val = float(self.outer(sums))
        if not np.isfinite(val):
            raise EvaluationError("non-finite outer function")
        return val

    def _coefficients(self, sums, b):
        c = np.asarray(self.outer_grad(sums), dtype=float)
        _check_finite(c, "outer derivative")
        return np.where(b >= 0, c[np.maximum(b, 0)], 0.0)


@dataclass(frozen=True)
class RiemannTerm(_BucketedSum):
    """``outer(I)`` with ``I_l = step * sum_{b_k = l} w_k z(s_k, X_k)``."""

    z: Callable = None
    dz: Callable = None

    def _parts(self, s, X):
        zk = np.asarray(self.z(s[:-1], X[:-1]), dtype=float)
        _check_finite(zk, "Riemann integrand")
        step = s[1] - s[0]
        if self._plain:
            return None, None, step, np.sum(zk) * step
        w, b = self._layout(len(X) - 1)
        return w, b, step, self._reduce(w * zk * step, b)

    def value(self, s, X):
        return self._outer(self._parts(s, X)[3])

    def value_and_grad(self, s, X, grad):
        w, b, step, sums = self._parts(s, X)
        out = self._outer(sums)
        dz = np.asarray(self.dz(s[:-1], X[:-1]), dtype=float)
        _check_finite(dz, "Riemann integrand derivative")
        if self._plain:
            grad[:-1] += dz * step
        else:
            grad[:-1] += self._coefficients(sums, b) * w * dz * step
        return out


@dataclass(frozen=True)
class ItoTerm(_BucketedSum):
    """``outer(S)`` with ``S_j = sum_{b_k = j} w_k r(s_k, X_k) (X_{k+1} - X_k)``."""

    r: Callable = None
    dr: Callable = None

    def _parts(self, s, X):
        rk = np.asarray(self.r(s[:-1], X[:-1]), dtype=float)
        _check_finite(rk, "Ito integrand")
        dX = np.diff(X)
        if self._plain:
            return None, None, rk, dX, float(rk @ dX)
        w, b = self._layout(len(X) - 1)
        return w, b, rk, dX, self._reduce(w * rk * dX, b)

    def value(self, s, X):
        return self._outer(self._parts(s, X)[4])

    def value_and_grad(self, s, X, grad):
        w, b, rk, dX, sums = self._parts(s, X)
        out = self._outer(sums)
        drk = np.asarray(self.dr(s[:-1], X[:-1]), dtype=float)
        _check_finite(drk, "Ito integrand derivative")
        c = 1.0 if self._plain else self._coefficients(sums, b) * w
        grad[:-1] += c * (drk * dX - rk)
        grad[1:] += c * rk
        return out


@dataclass(frozen=True)
class FunctionalSpec:
    """A sum of point, Riemann and Ito terms on a fixed time grid."""

    terms: Sequence = field(default_factory=tuple)

    def __post_init__(self):
        for t in self.terms:
            if isinstance(t, RiemannTerm) and (t.z is None or t.dz is None):
                raise ValueError("Riemann term needs z and dz callbacks")
            if isinstance(t, ItoTerm) and (t.r is None or t.dr is None):
                raise ValueError("Ito term needs r and dr callbacks")
            if isinstance(t, PointTerm) and (t.fn is None or t.dfn is None):
                raise ValueError("point term needs fn and dfn callbacks")
        object.__setattr__(self, "terms", tuple(self.terms))

    # floating-point warnings are replaced by explicit finiteness checks that
    # name the offending node
    def value(self, s, X) -> float:
        with np.errstate(all="ignore"):
            return float(sum(t.value(s, X) for t in self.terms))

    def value_and_grad(self, s, X):
        """Value and gradient with respect to all nodal values ``X_0..X_N``."""
        grad = np.zeros_like(X, dtype=float)
        total = 0.0
        with np.errstate(all="ignore"):
            for t in self.terms:
                total += t.value_and_grad(s, X, grad)
        if not np.isfinite(total):
            raise EvaluationError("non-finite functional value")
        return total, grad

    def self_check(self, s, X, rng=None, n_probe=5, rtol=1e-6):
        """Compare every derivative callback with a central difference.

        Probes are taken at random nodes of ``X``.  Returns the largest
        relative discrepancy and raises ``ValueError`` when it exceeds ``rtol``.
        """
        rng = np.random.default_rng(rng)
        worst = 0.0
        k = rng.integers(0, len(X) - 1, size=n_probe)
        sk, xk = s[k], X[k]
        for t in self.terms:
            if isinstance(t, RiemannTerm):
                pairs = [(lambda y: t.z(sk, y), lambda y: t.dz(sk, y), xk)]
                sums = np.abs(rng.standard_normal(t.n_buckets)) + 0.5
            elif isinstance(t, ItoTerm):
                pairs = [(lambda y: t.r(sk, y), lambda y: t.dr(sk, y), xk)]
                sums = rng.standard_normal(t.n_buckets)
            else:
                vals = X[t.indices]
                worst = max(worst, _fd_vector(t.fn, t.dfn, vals))
                continue
            for fn, dfn, at in pairs:
                worst = max(worst, _fd_pointwise(fn, dfn, at))
            if t.outer is not _sum:
                worst = max(worst, _fd_vector(t.outer, t.outer_grad, sums))
        if worst > rtol:
            raise ValueError(f"derivative callback disagrees with finite differences: {worst:.3g}")
        return worst


def _rel(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


def _fd_pointwise(fn, dfn, at, eps=1e-5):
    h = eps * np.maximum(1.0, np.abs(at))
    fd = (np.asarray(fn(at + h)) - np.asarray(fn(at - h))) / (2 * h)
    return _rel(dfn(at), fd)


def _fd_vector(fn, dfn, at, eps=1e-5):
    at = np.asarray(at, dtype=float)
    fd = np.empty_like(at)
    for i in range(at.size):
        h = eps * max(1.0, abs(at[i]))
        e = np.zeros_like(at)
        e[i] = h
        fd[i] = (fn(at + e) - fn(at - e)) / (2 * h)
    return _rel(dfn(at), fd)
