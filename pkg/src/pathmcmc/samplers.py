"""MCMC kernels on pathspace and chain execution.

All kernels target ``Pi(dx) ∝ exp(-Phi(x)) Pi0(dx)`` with ``Pi0 = N(0, C)``.
Velocities are drawn from ``N(0, C)``; energies use the precision form
``Q(x) = <x, C^{-1} x>`` so that ``H(x, v) = Phi(x) + Q(x)/2 + Q(v)/2``.

The advanced kernels (``*Adv``) are well defined as the grid is refined: the
independence sampler draws from ``Pi0``, advanced RWM is the pCN proposal
``rho x + sqrt(1 - rho^2) v``, advanced HMC alternates gradient kicks with an
exact rotation of ``(x, v)``, and advanced MALA is one step of it.  The
standard kernels use an explicit leapfrog with mass ``C^{-1}`` and degenerate
as the mesh shrinks.
"""

from __future__ import annotations

import enum
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .pathspace import precision_quadratic_form, sample_gaussian_path
from .rng import make_rng
from .targets.functional import EvaluationError


class Algorithm(str, enum.Enum):
    IS = "is"
    RWM_STD = "rwm_std"
    RWM_ADV = "rwm_adv"
    MALA_STD = "mala_std"
    MALA_ADV = "mala_adv"
    HMC_STD = "hmc_std"
    HMC_ADV = "hmc_adv"

    @property
    def family(self) -> str:
        return self.value.split("_")[0]


# acceptance-rate windows used by the pilot tuner
TARGET_ACCEPTANCE = {"rwm": (0.15, 0.30), "mala": (0.50, 0.70), "hmc": (0.65, 0.85), "is": (0.0, 1.0)}


@dataclass(frozen=True)
class SamplerSpec:
    """Kernel and run-length settings.

    ``h`` is the step for every kernel; RWM and MALA use ``dt = h**2`` and
    ``rho = (1 - dt/4) / (1 + dt/4)``.  ``n_leapfrog`` only matters for HMC.
    ``iterations`` counts all iterations including ``burn_in``.
    """

    algorithm: Algorithm
    h: float = 0.5
    n_leapfrog: int = 1
    iterations: int = 1000
    burn_in: int = 0
    thin: int = 1
    seed: Optional[int] = 0
    hstar: Optional[float] = None
    max_failures: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        if self.algorithm is not Algorithm.IS and not self.h > 0:
            raise ValueError("step h must be positive")
        if self.n_leapfrog < 1:
            raise ValueError("need at least one leapfrog step")
        if not 0 <= self.burn_in <= self.iterations:
            raise ValueError("need 0 <= burn_in <= iterations")
        if self.thin < 1:
            raise ValueError("thinning factor must be >= 1")

    @classmethod
    def from_dt(cls, algorithm, dt, **kw):
        return cls(algorithm, h=math.sqrt(dt), **kw)

    @property
    def dt(self) -> float:
        return self.h**2

    @property
    def rho(self) -> float:
        return (1 - self.dt / 4) / (1 + self.dt / 4)

    @property
    def rotation_angle(self) -> float:
        return hstar(self.h) if self.hstar is None else self.hstar

    @property
    def gradient_evaluations(self) -> int:
        """Gradient evaluations per iteration."""
        fam = self.algorithm.family
        return {"hmc": self.n_leapfrog, "mala": 1}.get(fam, 0)

    def with_step(self, h) -> "SamplerSpec":
        return replace(self, h=float(h))


def hstar(h) -> float:
    """Rotation angle with ``cos(h*) = (1 - h^2/4) / (1 + h^2/4)``.

    Evaluated as ``2 atan(h/2)``, which is the same angle without the loss of
    precision of ``arccos`` near zero.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    if h >= 2:
        warnings.warn(f"h={h} >= 2: rotation angle h* >= pi/2", RuntimeWarning, stacklevel=2)
    return 2.0 * math.atan(0.5 * h)


# --------------------------------------------------------------- integrators


@dataclass
class Trajectory:
    """End point of an integrator with ``Phi`` and ``C grad Phi`` there."""

    x: np.ndarray
    v: np.ndarray
    phi: float
    pgrad: np.ndarray


def flow_nonlinear(model, x, v, t, pgrad=None):
    """Kick ``(x, v) -> (x, v - t C grad Phi(x))``."""
    if pgrad is None:
        pgrad = model.precond_grad(x)
    return x, v - t * pgrad


def flow_rotation(x, v, t):
    """Exact flow of the Gaussian part: rotation by angle ``t``."""
    c, s = math.cos(t), math.sin(t)
    return c * x + s * v, -s * x + c * v


def _start(model, x, phi, pgrad):
    if pgrad is None or phi is None:
        phi, pgrad = model.phi_and_precond_grad(x)
    return phi, pgrad


def integrator_advanced(model, x, v, h, n_steps=1, angle=None, phi=None, pgrad=None) -> Trajectory:
    """``n_steps`` of kick(h/2) - rotate(h*) - kick(h/2)."""
    angle = hstar(h) if angle is None else angle
    phi, pgrad = _start(model, x, phi, pgrad)
    c, s = math.cos(angle), math.sin(angle)
    half = 0.5 * h
    for _ in range(n_steps):
        v = v - half * pgrad
        x, v = c * x + s * v, -s * x + c * v
        phi, pgrad = model.phi_and_precond_grad(x)
        v = v - half * pgrad
    return Trajectory(x, v, phi, pgrad)


def integrator_semi_implicit(model, x, v, h, n_steps=1, phi=None, pgrad=None) -> Trajectory:
    """Same map as :func:`integrator_advanced` written as a semi-implicit leapfrog.

    The Gaussian force is averaged over both ends of the step; solving the
    linear equation for the new position gives an explicit update.
    """
    phi, pgrad = _start(model, x, phi, pgrad)
    q = h * h / 4
    for _ in range(n_steps):
        x_new = ((1 - q) * x + h * v - 0.5 * h * h * pgrad) / (1 + q)
        v_half = (x_new - x) / h
        phi, pgrad = model.phi_and_precond_grad(x_new)
        v = v_half - 0.25 * h * (x + x_new) - 0.5 * h * pgrad
        x = x_new
    return Trajectory(x, v, phi, pgrad)


def integrator_standard(model, x, v, h, n_steps=1, phi=None, pgrad=None) -> Trajectory:
    """Explicit leapfrog for ``x' = v, v' = -x - C grad Phi(x)``."""
    phi, pgrad = _start(model, x, phi, pgrad)
    half = 0.5 * h
    for _ in range(n_steps):
        v = v - half * (x + pgrad)
        x = x + h * v
        phi, pgrad = model.phi_and_precond_grad(x)
        v = v - half * (x + pgrad)
    return Trajectory(x, v, phi, pgrad)


def hamiltonian(model, x, v, phi=None) -> float:
    law = model.law
    if phi is None:
        phi = model.phi(x)
    return float(phi + 0.5 * precision_quadratic_form(law, x) + 0.5 * precision_quadratic_form(law, v))


# ---------------------------------------------------------------- one step


@dataclass
class ChainState:
    x: np.ndarray
    phi: float
    pgrad: Optional[np.ndarray] = None


@dataclass
class StepOutcome:
    """Result of one transition.

    ``log_ratio`` is the log acceptance ratio (``-Delta H`` for HMC);
    the acceptance probability is ``min(1, exp(log_ratio))``.
    """

    state: ChainState
    accepted: bool
    log_ratio: float
    failed: bool = False
    proposal_norm: float = float("nan")

    @property
    def x(self):
        return self.state.x

    @property
    def delta_h(self) -> float:
        return -self.log_ratio

    @property
    def acceptance_probability(self) -> float:
        if not np.isfinite(self.log_ratio):
            return 0.0
        return float(min(1.0, math.exp(min(self.log_ratio, 0.0))))


def _mh_mala_adv(model, spec, cur: ChainState, prop: Trajectory):
    law = model.law
    rho = spec.rho
    a = 0.5 * spec.h * math.sin(spec.rotation_angle)
    Q = lambda y: precision_quadratic_form(law, y)  # noqa: E731
    fwd = Q(prop.x - rho * cur.x + a * cur.pgrad)
    bwd = Q(cur.x - rho * prop.x + a * prop.pgrad)
    return (
        cur.phi - prop.phi
        + 0.5 * (Q(cur.x) - Q(prop.x))
        + (fwd - bwd) / (2.0 * (1.0 - rho * rho))
    )


def _mh_mala_std(model, spec, cur: ChainState, prop: Trajectory):
    law = model.law
    dt = spec.dt
    Q = lambda y: precision_quadratic_form(law, y)  # noqa: E731
    mean = lambda y, g: (1 - 0.5 * dt) * y - 0.5 * dt * g  # noqa: E731
    fwd = Q(prop.x - mean(cur.x, cur.pgrad))
    bwd = Q(cur.x - mean(prop.x, prop.pgrad))
    return cur.phi - prop.phi + 0.5 * (Q(cur.x) - Q(prop.x)) + (fwd - bwd) / (2.0 * dt)


def _propose(model, spec: SamplerSpec, cur: ChainState, rng):
    """Return ``(candidate_state, log_ratio)``; may raise EvaluationError."""
    law = model.law
    alg = spec.algorithm
    if alg is Algorithm.IS:
        x = sample_gaussian_path(law, rng)
        phi = model.phi(x)
        return ChainState(x, phi), cur.phi - phi
    v = sample_gaussian_path(law, rng)
    if alg is Algorithm.RWM_ADV:
        rho = spec.rho
        x = rho * cur.x + math.sqrt(1 - rho * rho) * v
        phi = model.phi(x)
        return ChainState(x, phi), cur.phi - phi
    if alg is Algorithm.RWM_STD:
        x = cur.x + spec.h * v
        phi = model.phi(x)
        Q = precision_quadratic_form
        return ChainState(x, phi), cur.phi - phi + 0.5 * (Q(law, cur.x) - Q(law, x))
    if cur.pgrad is None:
        cur.phi, cur.pgrad = model.phi_and_precond_grad(cur.x)
    if alg in (Algorithm.HMC_ADV, Algorithm.MALA_ADV):
        steps = spec.n_leapfrog if alg is Algorithm.HMC_ADV else 1
        traj = integrator_advanced(
            model, cur.x, v, spec.h, steps, angle=spec.rotation_angle, phi=cur.phi, pgrad=cur.pgrad
        )
    else:
        steps = spec.n_leapfrog if alg is Algorithm.HMC_STD else 1
        traj = integrator_standard(model, cur.x, v, spec.h, steps, phi=cur.phi, pgrad=cur.pgrad)
    new = ChainState(traj.x, traj.phi, traj.pgrad)
    if alg is Algorithm.MALA_ADV:
        return new, _mh_mala_adv(model, spec, cur, traj)
    if alg is Algorithm.MALA_STD:
        return new, _mh_mala_std(model, spec, cur, traj)
    h0 = hamiltonian(model, cur.x, v, cur.phi)
    h1 = hamiltonian(model, traj.x, traj.v, traj.phi)
    return new, h0 - h1


def mcmc_step(model, state: ChainState, spec: SamplerSpec, rng) -> StepOutcome:
    """One Metropolis-Hastings transition from ``state``.

    The proposal noise is drawn first and the uniform for the accept test
    second, so kernels that coincide algebraically consume identical streams.
    Any evaluation failure rejects the proposal and sets ``failed``.
    """
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            cand, log_ratio = _propose(model, spec, state, rng)
        if not np.isfinite(log_ratio):
            raise EvaluationError("non-finite acceptance ratio")
    except (EvaluationError, FloatingPointError):
        rng.random()
        return StepOutcome(state, False, float("-inf"), failed=True)
    u = rng.random()
    accepted = bool(math.log(u) < log_ratio) if u > 0 else True
    norm = float(np.sqrt(model.law.step * np.sum((cand.x - state.x) ** 2)))
    return StepOutcome(cand if accepted else state, accepted, float(log_ratio), proposal_norm=norm)


# ------------------------------------------------------------------- chains


class ChainAborted(RuntimeError):
    pass


@dataclass
class ChainTrace:
    """Post-burn-in monitor values plus per-iteration acceptance records."""

    spec: SamplerSpec
    monitors: np.ndarray
    monitor_times: np.ndarray
    samples: np.ndarray
    accepted: np.ndarray
    log_ratio: np.ndarray
    failed: np.ndarray
    wall_time: float
    n_phi: int = 0
    n_grad: int = 0
    paths: Optional[np.ndarray] = None
    final_state: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_kept(self) -> int:
        return self.samples.shape[0]

    @property
    def post_burn(self) -> slice:
        return slice(self.spec.burn_in, None)

    @property
    def acceptance_rate(self) -> float:
        acc = self.accepted[self.post_burn]
        return float(np.mean(acc)) if acc.size else float("nan")

    @property
    def mean_acceptance_probability(self) -> float:
        lr = self.log_ratio[self.post_burn]
        if not lr.size:
            return float("nan")
        with np.errstate(over="ignore"):
            return float(np.mean(np.minimum(1.0, np.exp(np.minimum(lr, 0.0)))))

    @property
    def delta_h(self) -> np.ndarray:
        return -self.log_ratio

    @property
    def failure_count(self) -> int:
        return int(np.sum(self.failed))

    def to_csv(self, path, header_lines=()):
        """Iteration index, monitor values, accept flag and Delta H per kept draw."""
        kept_iter = np.arange(self.spec.burn_in, self.spec.iterations)[:: self.spec.thin][: self.n_kept]
        with open(path, "w") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            cols = ["iteration"] + [f"x_{int(m)}" for m in self.monitors] + ["accepted", "delta_h"]
            fh.write(",".join(cols) + "\n")
            for row, it in enumerate(kept_iter):
                vals = [str(int(it))] + [repr(float(v)) for v in self.samples[row]]
                vals += [str(int(self.accepted[it])), repr(float(-self.log_ratio[it]))]
                fh.write(",".join(vals) + "\n")


def initial_state(model, rng, x0=None, tries=100) -> ChainState:
    """Exact draw from the reference law (redrawn if ``Phi`` cannot be evaluated)."""
    if x0 is not None:
        x = np.array(model.law.values(x0), dtype=float)
        return ChainState(x, model.phi(x))
    for _ in range(tries):
        x = sample_gaussian_path(model.law, rng)
        try:
            return ChainState(x, model.phi(x))
        except EvaluationError:
            continue
    raise ChainAborted("could not find an initial path with finite Phi")


def run_chain(model, spec: SamplerSpec, monitors=None, rng=None, x0=None, keep_paths=False) -> ChainTrace:
    """Run ``spec.iterations`` transitions starting from a reference-law draw.

    ``monitors`` are grid-node indices of the free part of the path; their
    values are stored after burn-in every ``spec.thin`` iterations.  With
    ``keep_paths`` the thinned full free-node paths are kept as well.
    """
    law = model.law
    if monitors is None:
        monitors = np.arange(1, law.n_free + 1)
    monitors = np.asarray(monitors, dtype=int)
    if np.any(monitors < 1) or np.any(monitors > law.n_free):
        raise ValueError("monitor indices must address free grid nodes")
    rng = make_rng(spec.seed if rng is None else rng)
    model.reset_counters()
    n = spec.iterations
    accepted = np.zeros(n, dtype=bool)
    log_ratio = np.zeros(n)
    failed = np.zeros(n, dtype=bool)
    kept = range(spec.burn_in, n, spec.thin)
    samples = np.empty((len(kept), monitors.size))
    paths = np.empty((len(kept), law.n_free)) if keep_paths else None
    cols = monitors - 1
    t0 = time.perf_counter()
    state = initial_state(model, rng, x0)
    row = 0
    streak = 0
    for it in range(n):
        out = mcmc_step(model, state, spec, rng)
        state = out.state
        accepted[it], log_ratio[it], failed[it] = out.accepted, out.log_ratio, out.failed
        streak = streak + 1 if out.failed else 0
        if streak > spec.max_failures:
            raise ChainAborted(
                f"{streak} consecutive evaluation failures at iteration {it}; "
                f"acceptance so far {accepted[: it + 1].mean():.3f}"
            )
        if it >= spec.burn_in and (it - spec.burn_in) % spec.thin == 0:
            samples[row] = state.x[cols]
            if keep_paths:
                paths[row] = state.x
            row += 1
    wall = time.perf_counter() - t0
    return ChainTrace(
        spec=spec,
        monitors=monitors,
        monitor_times=law.grid.times[monitors],
        samples=samples,
        accepted=accepted,
        log_ratio=log_ratio,
        failed=failed,
        wall_time=wall,
        n_phi=model.n_phi,
        n_grad=model.n_grad,
        paths=paths,
        final_state=state.x.copy(),
    )


def tune_step(model, spec: SamplerSpec, pilot_iterations=400, rounds=10, target=None, bounds=(1e-3, 1.9)):
    """Bisect ``log h`` on short pilot runs until acceptance hits the target.

    The target defaults to the midpoint of the family's acceptance window.
    Returns the tuned spec and the pilot acceptance rate at that step.
    """
    fam = spec.algorithm.family
    if fam == "is":
        return spec, float("nan")
    if target is None:
        lo_t, hi_t = TARGET_ACCEPTANCE[fam]
        target = 0.5 * (lo_t + hi_t)
    lo, hi = math.log(bounds[0]), math.log(bounds[1])
    best = (spec.h, float("nan"))
    for r in range(rounds):
        mid = 0.5 * (lo + hi)
        trial = replace(spec, h=math.exp(mid), iterations=pilot_iterations, burn_in=0, thin=1,
                        seed=None if spec.seed is None else spec.seed + 7919 * (r + 1))
        rate = run_chain(model, trial, monitors=[1]).acceptance_rate
        best = (math.exp(mid), rate)
        if rate > target:
            lo = mid
        else:
            hi = mid
    return replace(spec, h=best[0]), best[1]
