"""Closed-form analysis of the samplers on the Ornstein-Uhlenbeck bridge.

For ``Phi(x) = kappa^2/2 |x|^2`` with a Brownian-bridge reference on
``[0, ell]`` every kernel acts independently on the sine coordinates
``x_p = <x, phi_p>``.  Mode ``p`` has reference variance
``lam_p = ell^2 / (pi p)^2`` and target variance
``lam_ou_p = 1 / ((pi p / ell)^2 + kappa^2)``.  One advanced leapfrog step is
the 2x2 matrix ``[[c_p, s], [-(1 - c_p^2)/s, c_p]]`` with ``s = sqrt(1 - rho^2)``
and ``c_p = cos(theta_p) = rho - (1 - rho) kappa^2 lam_p``; the energy change of
a trajectory is a quadratic form ``A x^2 + B v^2 + G x v`` per mode.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import zeta

from .samplers import Algorithm


def stability_check(c, kappa) -> bool:
    """True inside the stability region ``c * kappa < 2 pi``."""
    if not (c > 0 and kappa > 0):
        raise ValueError("c and kappa must be positive")
    return bool(c * kappa < 2 * math.pi)


def rho_of_step(h) -> float:
    q = h * h / 4
    return (1 - q) / (1 + q)


@dataclass(frozen=True)
class SpectralMode:
    index: int
    lam: float
    lam_ou: float
    cos_theta: float
    theta: float
    a: float
    A: float
    B: float
    G: float
    P: float
    stable: bool


@dataclass
class SpectralModes:
    """Per-mode quantities for ``n_steps`` advanced leapfrog steps of size ``h``."""

    kappa: float
    ell: float
    h: float
    n_steps: int
    p: np.ndarray
    lam: np.ndarray
    lam_ou: np.ndarray
    cos_theta: np.ndarray
    theta: np.ndarray
    a: np.ndarray
    P: np.ndarray
    A: np.ndarray
    B: np.ndarray
    G: np.ndarray
    stable: np.ndarray
    rho: float = field(default=0.0)

    def __len__(self):
        return self.p.size

    @property
    def all_stable(self) -> bool:
        return bool(np.all(self.stable))

    def to_list(self):
        return [
            SpectralMode(int(self.p[i]), *(float(getattr(self, k)[i]) for k in
                         ("lam", "lam_ou", "cos_theta", "theta", "a", "A", "B", "G", "P")),
                         bool(self.stable[i]))
            for i in range(len(self))
        ]

    def step_matrix(self) -> np.ndarray:
        """Single-step matrices, shape ``(P, 2, 2)``."""
        s = math.sqrt(1 - self.rho**2)
        c = self.cos_theta
        m = np.empty((len(self), 2, 2))
        m[:, 0, 0] = c
        m[:, 0, 1] = s
        m[:, 1, 0] = -(1 - c * c) / s
        m[:, 1, 1] = c
        return m

    def power_matrix(self) -> np.ndarray:
        """``n_steps``-step matrices in closed form (matrix powers for unstable modes)."""
        m = np.empty((len(self), 2, 2))
        ct, st = np.cos(self.n_steps * self.theta), np.sin(self.n_steps * self.theta)
        with np.errstate(invalid="ignore", divide="ignore"):
            m[:, 0, 0] = ct
            m[:, 0, 1] = self.a * st
            m[:, 1, 0] = -st / self.a
            m[:, 1, 1] = ct
        bad = ~self.stable
        if np.any(bad):
            m[bad] = np.linalg.matrix_power(self.step_matrix()[bad], self.n_steps)
        return m

    def energy_weights(self):
        """Diagonal weights ``(wx, wv)`` with ``H_p = wx x_p^2 + wv v_p^2``."""
        return 0.5 * (self.kappa**2 + 1 / self.lam), 0.5 / self.lam


def spectral_modes(kappa, ell, h, n_steps, n_modes, first=1) -> SpectralModes:
    """Modes ``first .. first + n_modes - 1`` of the OU-bridge leapfrog map."""
    if n_steps < 1 or n_modes < 1:
        raise ValueError("need n_steps >= 1 and n_modes >= 1")
    p = np.arange(first, first + n_modes, dtype=float)
    lam = ell**2 / (math.pi**2 * p**2)
    lam_ou = 1.0 / (math.pi**2 * p**2 / ell**2 + kappa**2)
    rho = rho_of_step(h)
    ct = rho - (1 - rho) * kappa**2 * lam
    stable = np.abs(ct) < 1
    with np.errstate(invalid="ignore", divide="ignore"):
        st = np.sqrt(1 - ct**2)
        theta = np.arccos(np.clip(ct, -1, 1))
        a = math.sqrt(1 - rho**2) / st
        P = kappa**2 + (1 - 1 / a**2) / lam
    S = np.sin(n_steps * theta)
    A = -0.5 * S**2 * P
    B = 0.5 * S**2 * a**2 * P
    G = 0.5 * np.sin(2 * n_steps * theta) * a * P
    modes = SpectralModes(kappa, ell, h, n_steps, p, lam, lam_ou, ct, theta, a, P, A, B, G, stable, rho)
    if not modes.all_stable:
        # replace the quadratic-form coefficients by exact matrix-power ones
        A2, B2, G2 = direct_coefficients(modes)
        modes.A = np.where(stable, A, A2)
        modes.B = np.where(stable, B, B2)
        modes.G = np.where(stable, G, G2)
    return modes


def direct_delta_h(modes: SpectralModes, x, v) -> np.ndarray:
    """``H(Psi^I(x, v)) - H(x, v)`` mode by mode from the propagation matrices."""
    m = modes.power_matrix()
    x, v = np.asarray(x, float), np.asarray(v, float)
    xi = m[:, 0, 0] * x + m[:, 0, 1] * v
    vi = m[:, 1, 0] * x + m[:, 1, 1] * v
    wx, wv = modes.energy_weights()
    return wx * (xi**2 - x**2) + wv * (vi**2 - v**2)


def direct_coefficients(modes: SpectralModes):
    """Quadratic-form coefficients obtained from :func:`direct_delta_h`."""
    one, zero = np.ones(len(modes)), np.zeros(len(modes))
    A = direct_delta_h(modes, one, zero)
    B = direct_delta_h(modes, zero, one)
    G = direct_delta_h(modes, one, one) - A - B
    return A, B, G


def delta_h_quadratic(modes: SpectralModes, xs, vs) -> np.ndarray:
    """``sum_p A_p x_p^2 + B_p v_p^2 + G_p x_p v_p`` over the trailing axis."""
    xs, vs = np.asarray(xs, float), np.asarray(vs, float)
    if xs.shape[-1] != len(modes) or vs.shape[-1] != len(modes):
        raise ValueError("coordinate length does not match the number of modes")
    return np.sum(modes.A * xs**2 + modes.B * vs**2 + modes.G * xs * vs, axis=-1)


def rwm_coefficients(kappa, ell, dt, n_modes, first=1):
    """Quadratic coefficients of ``Phi(x*) - Phi(x)`` for the pCN proposal."""
    p = np.arange(first, first + n_modes, dtype=float)
    rho = (1 - dt / 4) / (1 + dt / 4)
    s = math.sqrt(1 - rho * rho)
    k2 = kappa**2
    ones = np.ones_like(p)
    return 0.5 * k2 * (rho * rho - 1) * ones, 0.5 * k2 * s * s * ones, k2 * rho * s * ones, p


def p_bound_constant(modes: SpectralModes) -> float:
    """Smallest ``M`` with ``P_p <= M lam_p / (lam_ou_p ell^2)`` over the modes."""
    return float(np.max(modes.P * modes.lam_ou * modes.ell**2 / modes.lam))


# ----------------------------------------------------------------- moments


def kl_moment(n, kappa, ell) -> float:
    """``E <x, C^n x>`` under the OU bridge, summed in closed form.

    Uses the partial fractions of ``1 / (q^n (q + k^2))`` in ``q = (pi p / ell)^2``
    together with ``sum q^-j = (ell/pi)^(2j) zeta(2j)`` and
    ``sum 1 / (q + k^2) = ell / (2 k tanh(k ell)) - 1 / (2 k^2)``.
    """
    k2 = kappa**2
    total = 0.0
    for j in range(1, n + 1):
        total += (-1) ** (n - j) * k2 ** (-(n - j + 1)) * (ell / math.pi) ** (2 * j) * zeta(2 * j)
    resolvent = ell / (2 * kappa * math.tanh(kappa * ell)) - 1 / (2 * k2)
    return float(total + (-1) ** n * k2 ** (-n) * resolvent)


@dataclass(frozen=True)
class MomentRecord:
    x_sq: float  # E|x|^2
    x_Cx: float  # E<x, Cx>
    Cx_sq: float  # E|Cx|^2
    x_C3x: float  # E<x, C^3 x>
    v_sq: float  # E|v|^2
    v_Cv: float  # E<v, Cv>
    xv_sq: float  # E<x, v>^2
    Cxv_sq: float  # E<Cx, v>^2
    C2xv_sq: float  # E<C^2 x, v>^2


def analytic_moments(kappa, ell) -> MomentRecord:
    """Second moments of OU-bridge ``x`` and independent Brownian-bridge ``v``."""
    if not (kappa > 0 and ell > 0):
        raise ValueError("kappa and ell must be positive")
    k = [kl_moment(n, kappa, ell) for n in range(6)]
    return MomentRecord(
        x_sq=k[0],
        x_Cx=k[1],
        Cx_sq=k[2],
        x_C3x=k[3],
        v_sq=ell**2 / 6,
        v_Cv=ell**4 / 90,
        xv_sq=k[1],
        Cxv_sq=k[3],
        C2xv_sq=k[5],
    )


def kl_draws(kappa, ell, n_modes, size, rng, which="ou"):
    """Sine coordinates of OU-bridge (``which='ou'``) or bridge draws."""
    p = np.arange(1, n_modes + 1)
    lam = ell**2 / (math.pi**2 * p**2) if which == "bb" else 1 / (math.pi**2 * p**2 / ell**2 + kappa**2)
    return rng.standard_normal((size, n_modes)) * np.sqrt(lam)


# ----------------------------------------------------------------- scaling


@dataclass(frozen=True)
class ScalingRow:
    ell: float
    mean_acceptance: float
    se: float
    replicates: int
    step: float
    n_steps: int
    unstable_modes: int


@dataclass
class ScalingTable:
    algorithm: Algorithm
    exponent: float
    c: float
    kappa: float
    rows: list

    @property
    def means(self) -> np.ndarray:
        return np.array([r.mean_acceptance for r in self.rows])

    @property
    def unstable(self) -> bool:
        return any(r.unstable_modes for r in self.rows)

    def bounded_below(self, fraction=0.5) -> bool:
        m = self.means
        return bool(m.min() >= fraction * m[0])

    def decays(self, fraction=0.25) -> bool:
        m = self.means
        return bool(np.all(np.diff(m) < 0) and m[-1] < fraction * m[0])

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["ell", "mean_acceptance", "se", "replicates", "step", "n_steps", "unstable_modes"])
            for r in self.rows:
                w.writerow([r.ell, repr(r.mean_acceptance), repr(r.se), r.replicates, repr(r.step),
                            r.n_steps, r.unstable_modes])


def _coefficients(algorithm, kappa, ell, step, n_steps, n_modes, first=1):
    if algorithm is Algorithm.RWM_ADV:
        A, B, G, _ = rwm_coefficients(kappa, ell, step**2, n_modes, first)
        return A, B, G, 0
    steps = 1 if algorithm is Algorithm.MALA_ADV else n_steps
    m = spectral_modes(kappa, ell, step, steps, n_modes, first)
    return m.A, m.B, m.G, int(np.sum(~m.stable))


def scaling_experiment(
    algorithm,
    exponent,
    c,
    ells,
    replicates,
    rng,
    kappa=2.0,
    T=1.0,
    n_modes=2048,
    tail_modes=200_000,
    chunk=2000,
):
    """Mean one-step acceptance in stationarity for a list of bridge lengths.

    RWM and MALA use ``dt = c / ell**exponent`` (step ``h = sqrt(dt)``); HMC uses
    ``h = c / ell`` and ``I = max(1, floor(T / h))`` steps.  ``x`` is drawn from
    the OU-bridge law and ``v`` from the bridge law in sine coordinates.  The
    first ``n_modes`` modes are sampled; the remaining ``tail_modes`` enter
    through their expected contribution (their fluctuation is negligible).
    """
    algorithm = Algorithm(algorithm)
    if algorithm not in (Algorithm.RWM_ADV, Algorithm.MALA_ADV, Algorithm.HMC_ADV):
        raise ValueError("scaling is defined for the advanced RWM, MALA and HMC kernels")
    rows = []
    for ell in ells:
        if algorithm is Algorithm.HMC_ADV:
            h = c / ell
            n_steps = max(1, int(math.floor(T / h)))
        else:
            h = math.sqrt(c / ell**exponent)
            n_steps = 1
        A, B, G, unstable = _coefficients(algorithm, kappa, ell, h, n_steps, n_modes)
        sd_x = np.sqrt(1 / (math.pi**2 * np.arange(1, n_modes + 1) ** 2 / ell**2 + kappa**2))
        sd_v = ell / (math.pi * np.arange(1, n_modes + 1))
        tail = 0.0
        if tail_modes:
            At, Bt, _, unstable_t = _coefficients(algorithm, kappa, ell, h, n_steps, tail_modes, n_modes + 1)
            pt = np.arange(n_modes + 1, n_modes + tail_modes + 1)
            tail = float(np.sum(At / (math.pi**2 * pt**2 / ell**2 + kappa**2) + Bt * ell**2 / (math.pi**2 * pt**2)))
            unstable += unstable_t
        acc = np.empty(replicates)
        for start in range(0, replicates, chunk):
            m = min(chunk, replicates - start)
            xs = rng.standard_normal((m, n_modes)) * sd_x
            vs = rng.standard_normal((m, n_modes)) * sd_v
            dh = np.sum(A * xs**2 + B * vs**2 + G * xs * vs, axis=1) + tail
            acc[start : start + m] = np.exp(np.minimum(0.0, -dh))
        rows.append(
            ScalingRow(float(ell), float(acc.mean()), float(acc.std(ddof=1) / math.sqrt(replicates)),
                       int(replicates), float(h), n_steps, unstable)
        )
    return ScalingTable(algorithm, float(exponent), float(c), float(kappa), rows)
