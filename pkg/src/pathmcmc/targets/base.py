"""Target measures ``dPi/dPi0 = exp(-Phi)`` on a discretised pathspace."""

from __future__ import annotations

import numpy as np

from ..pathspace import GaussianLaw, apply_covariance
from .functional import EvaluationError, FunctionalSpec


class TargetModel:
    """Base class: subclasses provide ``_value`` and ``_value_and_grad``.

    ``grad`` is the Euclidean gradient of the discretised ``Phi`` with respect
    to the free nodal values; ``precond_grad`` is ``C_N grad`` where ``C_N`` is
    the covariance matrix of the reference law at the free nodes.  Evaluation
    counts are kept so experiments can report a deterministic cost measure.
    """

    kind = "generic"

    def __init__(self, law: GaussianLaw, theta=None, data=None):
        self.law = law
        self.theta = theta
        self.data = data
        self.n_phi = 0
        self.n_grad = 0

    def phi(self, x) -> float:
        self.n_phi += 1
        return self._value(self.law.values(x))

    def phi_and_grad(self, x):
        self.n_grad += 1
        val, g = self._value_and_grad(self.law.values(x))
        return val, g

    def grad(self, x) -> np.ndarray:
        return self.phi_and_grad(x)[1]

    def precond_grad(self, x) -> np.ndarray:
        return self.phi_and_precond_grad(x)[1]

    def phi_and_precond_grad(self, x):
        val, g = self.phi_and_grad(x)
        return val, apply_covariance(self.law, g / self.law.step)

    def reset_counters(self):
        self.n_phi = 0
        self.n_grad = 0

    def _value(self, x):  # pragma: no cover - abstract
        raise NotImplementedError

    def _value_and_grad(self, x):  # pragma: no cover - abstract
        raise NotImplementedError


class FunctionalTarget(TargetModel):
    """``Phi(x) = F(offset + x)`` for a :class:`FunctionalSpec` ``F``.

    ``offset`` is a fixed full nodal path (initial value, data interpolant).
    """

    def __init__(self, law, spec: FunctionalSpec, offset=None, theta=None, data=None, kind="functional"):
        super().__init__(law, theta, data)
        self.spec = spec
        n = law.grid.n + 1
        self.offset = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
        if self.offset.shape != (n,):
            raise ValueError("offset must cover all grid nodes")
        self.kind = kind
        self._s = law.grid.times

    def physical_path(self, x) -> np.ndarray:
        return self.offset + self.law.embed(x)

    def _value(self, x):
        return self.spec.value(self._s, self.physical_path(x))

    def _value_and_grad(self, x):
        val, g = self.spec.value_and_grad(self._s, self.physical_path(x))
        return val, self.law.restrict(g)

    def self_check(self, x, rng=None, rtol=1e-6):
        return self.spec.self_check(self._s, self.physical_path(x), rng=rng, rtol=rtol)


class QuadraticTarget(TargetModel):
    """``Phi(x) = 0.5 * weight * <x, x>``; a closed-form test target."""

    kind = "quadratic"

    def __init__(self, law, weight=1.0):
        super().__init__(law, {"weight": weight})
        self.weight = float(weight)

    def _value(self, x):
        return 0.5 * self.weight * self.law.step * float(x @ x)

    def _value_and_grad(self, x):
        return self._value(x), self.weight * self.law.step * x


def zero_target(law) -> FunctionalTarget:
    """``Phi == 0``: the target equals the reference Gaussian law."""
    return FunctionalTarget(law, FunctionalSpec(()), kind="zero")


def fd_grad_oracle(model: TargetModel, x, eps=1e-5, preconditioned=True) -> np.ndarray:
    """Central-difference gradient of ``Phi`` node by node (O(N^2), oracle only).

    With ``preconditioned`` the result is mapped through one covariance
    application, giving the counterpart of :meth:`TargetModel.precond_grad`.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(model.law.values(x), dtype=float)
    g = np.zeros_like(x)
    pins = set(np.asarray(model.law.pins) - 1)
    for i in range(x.size):
        if i in pins:
            continue
        h = eps * max(1.0, abs(x[i]))
        old = x[i]
        x[i] = old + h
        up = model._value(x)
        x[i] = old - h
        down = model._value(x)
        x[i] = old
        g[i] = (up - down) / (2 * h)
    if not preconditioned:
        return g
    return apply_covariance(model.law, g / model.law.step)


__all__ = [
    "EvaluationError",
    "FunctionalTarget",
    "QuadraticTarget",
    "TargetModel",
    "fd_grad_oracle",
    "zero_target",
]
