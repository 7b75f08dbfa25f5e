"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS/FAIL`` line (collected again in
the terminal summary) and then asserts it.  Long-running studies use the
shipped configs in ``configs/`` so that the numbers here are the ones the
scripts produce.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from pathmcmc.config import ExperimentConfig, ScalingConfig, load_config
from pathmcmc.experiments import GRADCHECK_KINDS, gradient_check, run_experiment
from pathmcmc.linear_oracle import analytic_moments, delta_h_quadratic, direct_delta_h, spectral_modes
from pathmcmc.pathspace import brownian_bridge, make_grid, sample_gaussian_path
from pathmcmc.samplers import ChainState, SamplerSpec, mcmc_step, run_chain
from pathmcmc.targets import build_model, zero_target

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def batch_se(series, n_batches=50):
    """Batch-means standard error of the mean of a correlated series."""
    series = np.asarray(series, float)
    m = len(series) // n_batches
    means = series[: m * n_batches].reshape(n_batches, m, *series.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / math.sqrt(n_batches)


# ---------------------------------------------------------------------- 1


def test_criterion_01_gradients(verdict):
    t0 = time.perf_counter()
    rows = gradient_check(GRADCHECK_KINDS, sizes=(25, 50, 100), paths=20, seed=1)
    wall = time.perf_counter() - t0
    worst = max(r[2] for r in rows)
    kinds = sorted({r[0] for r in rows})
    ok = worst <= 1e-5 and wall < 120 and len(rows) == 3 * len(GRADCHECK_KINDS)
    verdict(1, ok, f"max relative error {worst:.2e} over {len(kinds)} models x N in (25, 50, 100) x 20 paths, "
                   f"{wall:.0f}s")


# ---------------------------------------------------------------------- 2


def test_criterion_02_exact_rotation(verdict):
    worst, rates = 0.0, []
    for n in (10, 100, 1000, 10_000):
        model = zero_target(brownian_bridge(make_grid(1.0, 1.0 / n)))
        trace = run_chain(model, SamplerSpec("hmc_adv", h=0.43, n_leapfrog=5, iterations=1000, seed=n),
                          monitors=[1])
        worst = max(worst, float(np.max(np.abs(trace.delta_h))))
        rates.append(trace.acceptance_rate)
    ok = worst <= 1e-10 and all(r == 1.0 for r in rates)
    verdict(2, ok, f"max |dH| {worst:.1e}, acceptance {rates} for N in (10, 100, 1000, 10000)")


# ---------------------------------------------------------------------- 3


def test_criterion_03_spectral_energy(verdict):
    rng = np.random.default_rng(3)
    worst = 0.0
    for kappa, h in ((12.0, 0.43), (12.0, 0.17), (2.0, 1.0)):
        modes = spectral_modes(kappa, 1.0, h, 100, 50)
        for _ in range(100):
            xs = rng.standard_normal(50) * np.sqrt(modes.lam_ou)
            vs = rng.standard_normal(50) * np.sqrt(modes.lam)
            worst = max(worst, abs(delta_h_quadratic(modes, xs, vs) - float(np.sum(direct_delta_h(modes, xs, vs)))))
    verdict(3, worst <= 1e-9, f"max |quadratic form - direct| {worst:.1e} (P=50, I=100, 100 points x 3 settings)")


# ---------------------------------------------------------------------- 4


def _kl_moments(kappa, ell, P, n, rng, chunk=1000):
    p = np.arange(1, P + 1)
    lam = ell**2 / (math.pi * p) ** 2
    lam_ou = 1 / ((math.pi * p / ell) ** 2 + kappa**2)
    out = np.empty((n, 3))
    for s in range(0, n, chunk):
        x = rng.standard_normal((chunk, P)) * np.sqrt(lam_ou)
        v = rng.standard_normal((chunk, P)) * np.sqrt(lam)
        out[s : s + chunk, 0] = np.sum(x * x, axis=1)
        out[s : s + chunk, 1] = np.sum(lam * x * x, axis=1)
        out[s : s + chunk, 2] = np.sum(v * v, axis=1)
    return out


def test_criterion_04_moments(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst = 0.0
    for kappa in (1.0, 12.0):
        for ell in (1.0, 4.0):
            draws = _kl_moments(kappa, ell, 5000, 20_000, rng)
            mom = analytic_moments(kappa, ell)
            exact = np.array([mom.x_sq, mom.x_Cx, mom.v_sq])
            z = np.abs(draws.mean(axis=0) - exact) / (draws.std(axis=0) / math.sqrt(len(draws)))
            worst = max(worst, float(z.max()))
    wall = time.perf_counter() - t0
    verdict(4, worst < 4 and wall < 60,
            f"max |MC - closed form| = {worst:.2f} SE over E|x|^2, E<x,Cx>, E|v|^2, kappa in (1, 12), ell in (1, 4), "
            f"{wall:.0f}s")


# ------------------------------------------------------------------ 5, 6


@pytest.fixture(scope="module")
def scaling_tables(tmp_path_factory):
    cfg = load_config(CONFIGS / "scaling.yaml")
    t0 = time.perf_counter()
    res = run_experiment(cfg, out_dir=tmp_path_factory.mktemp("scaling"))
    return res.extra, time.perf_counter() - t0, cfg.scaling


def _fmt(table):
    return "[" + ", ".join(f"{m:.3f}" for m in table.means) + "]"


def test_criterion_05_local_scaling(verdict, scaling_tables):
    tables, wall, sc = scaling_tables
    parts, ok = [], sc.replicates >= 10_000 and wall < 300
    for alg in ("rwm_adv", "mala_adv"):
        fine, coarse = tables[(alg, 2)], tables[(alg, 1)]
        ok &= fine.bounded_below(0.5) and coarse.decays(0.25)
        parts.append(f"{alg} dt=c/l^2 {_fmt(fine)}, dt=c/l {_fmt(coarse)}")
    verdict(5, ok, "; ".join(parts) + f" over l={sc.ells}, {wall:.0f}s")


def test_criterion_06_hmc_scaling(verdict, scaling_tables):
    tables, _, sc = scaling_tables
    stable = tables[("hmc_adv", 1)]
    c_kappa = sc.c["hmc_adv"] * sc.kappa
    from pathmcmc.linear_oracle import scaling_experiment

    bad = scaling_experiment("hmc_adv", 1, 3.5, sc.ells, 1000, np.random.default_rng(6), kappa=sc.kappa)
    ok = abs(c_kappa - 5.0) < 1e-12 and stable.bounded_below(0.5) and not stable.unstable and bad.unstable
    verdict(6, ok, f"c*kappa=5: {_fmt(stable)} (stable modes only); c*kappa=7 > 2pi flags instability: {bad.unstable}")


# ---------------------------------------------------------------------- 7


def test_criterion_07_mesh(verdict, tmp_path):
    cfg = load_config(CONFIGS / "mesh_study.yaml")
    t0 = time.perf_counter()
    res = run_experiment(cfg, out_dir=tmp_path)
    wall = time.perf_counter() - t0
    cases = [f"step={s:g}" for s in cfg.steps]
    adv = [res.summary(c, "hmc_adv") for c in cases]
    std = [res.summary(c, "hmc_std") for c in cases]
    ess = np.array([s.min_ess for s in adv])
    spread = (ess.max() - ess.min()) / ess.max()
    acc_adv = np.array([s.acceptance for s in adv])
    acc_std = [s.acceptance for s in std]
    decreasing = all(a > b for a, b in zip(acc_std, acc_std[1:]))
    ok = spread < 0.2 and decreasing and wall < 600
    verdict(7, ok, f"HmcAdv min-ESS {np.round(ess, 2).tolist()} (spread {spread:.1%}), acceptance "
                   f"{np.round(acc_adv, 3).tolist()}; HmcStd acceptance {np.round(acc_std, 3).tolist()}; {wall:.0f}s")


# ---------------------------------------------------------------------- 8


def test_criterion_08_sampler_ordering(verdict, tmp_path):
    cfg = load_config(CONFIGS / "ou_study.yaml")
    t0 = time.perf_counter()
    res = run_experiment(cfg, out_dir=tmp_path)
    wall = time.perf_counter() - t0
    cases = [f"kappa={d['kappa']:g}" for d in cfg.sweep]
    ok = wall < 900
    parts = []
    for c in cases:
        e = {s: res.summary(c, s).min_ess for s in ("hmc_adv", "mala_adv", "rwm_adv")}
        good = e["hmc_adv"] > e["mala_adv"] >= e["rwm_adv"]
        ok &= good
        parts.append(f"{c}: HMC {e['hmc_adv']:.2f} MALA {e['mala_adv']:.2f} RWM {e['rwm_adv']:.2f}"
                     + ("" if good else " (order broken)"))
    ratio = res.summary(cases[0], "hmc_adv").min_ess / res.summary(cases[0], "mala_adv").min_ess
    is_acc = [res.summary(c, "is").acceptance for c in cases]
    ok &= ratio >= 5 and abs(is_acc[0] - 0.16) <= 0.05 and all(a > b for a, b in zip(is_acc, is_acc[1:]))
    verdict(8, ok, "; ".join(parts) + f"; HMC/MALA at kappa=12 {ratio:.1f}; IS acceptance "
                   f"{[round(a, 4) for a in is_acc]}; {wall:.0f}s")


# ---------------------------------------------------------------------- 9


def test_criterion_09_stationarity(verdict):
    # nonlinear target: OU bridge on a fine mesh, where discretisation bias in E|x|^2 is < 0.1%
    kappa, step = 12.0, 0.005
    model = build_model("ou_bridge", kappa, None, make_grid(1.0, step))
    trace = run_chain(model, SamplerSpec("hmc_adv", h=0.43, n_leapfrog=5, iterations=21_000, burn_in=1000, seed=9))
    x = trace.samples
    probes = np.rint(np.arange(1, 10) * 0.1 / step).astype(int) - 1
    z_mean = np.abs(x[:, probes].mean(axis=0)) / batch_se(x[:, probes])
    sq = step * np.sum(x * x, axis=1)
    exact = analytic_moments(kappa, 1.0).x_sq
    z_sq = abs(sq.mean() - exact) / batch_se(sq)

    # zero potential: many short chains from exact reference draws
    zero = zero_target(brownian_bridge(make_grid(1.0, 0.02)))
    rng = np.random.default_rng(99)
    s = zero.law.free_times[[9, 24, 39]]
    var = s * (1 - s)
    z_zero = 0.0
    for alg in ("is", "rwm_adv", "mala_adv", "hmc_adv"):
        spec = SamplerSpec(alg, h=0.7, n_leapfrog=4)
        xs = sample_gaussian_path(zero.law, rng, 4000)
        for i in range(len(xs)):
            state = ChainState(xs[i], 0.0)
            for _ in range(5):
                state = mcmc_step(zero, state, spec, rng).state
            xs[i] = state.x
        emp = xs[:, [9, 24, 39]].var(axis=0)
        z_zero = max(z_zero, float(np.max(np.abs(emp - var) / (var * math.sqrt(2 / len(xs))))))
    ok = z_mean.max() < 3 and z_sq < 4 and z_zero < 4
    verdict(9, ok, f"OU mean max {z_mean.max():.2f} SE over 9 monitors; E|x|^2 {sq.mean():.5f} vs "
                   f"{exact:.5f} ({z_sq:.2f} SE); zero-potential marginals max {z_zero:.2f} SE")


# --------------------------------------------------------------------- 10


def _small_configs(root):
    ou = dict(theta={}, sweep=[{"kappa": 12.0}, {"kappa": 20.0}], iterations=800, burn_in=100,
              monitor_times=[0.25, 0.5, 0.75], tune_iterations=100,
              samplers=[{"algorithm": "is"}, {"algorithm": "rwm_adv", "tune": True},
                        {"algorithm": "mala_adv", "h": [0.45, 0.26]},
                        {"algorithm": "hmc_adv", "h": [0.43, 0.26], "n_leapfrog": 5}])
    yield "ou", ExperimentConfig(kind="OuBridgeStudy", seed=10, out_dir=str(root), **ou)
    yield "mesh", ExperimentConfig(kind="MeshStudy", theta={"kappa": 12.0}, steps=[0.02, 0.01], iterations=500,
                                   burn_in=50, monitor_times=[0.5], seed=10, out_dir=str(root),
                                   samplers=[{"algorithm": "hmc_adv", "h": 0.43, "n_leapfrog": 5},
                                             {"algorithm": "hmc_std", "h": 0.43, "n_leapfrog": 5}])
    sv = load_config(CONFIGS / "sv_study.yaml")
    yield "sv", sv.with_overrides(horizon=40.0, iterations=400, burn_in=50, tune_iterations=100,
                                  samplers=[{"algorithm": "is"}, {"algorithm": "rwm_adv", "tune": True},
                                            {"algorithm": "hmc_adv", "h": 0.075, "n_leapfrog": 5}])
    surv = load_config(CONFIGS / "survival_study.yaml")
    yield "survival", surv.with_overrides(iterations=300, burn_in=50, tune_iterations=100,
                                          data={"n_events": 50, "quantile_sampler": "hmc_adv"})
    yield "scaling", ExperimentConfig(kind="ScalingStudy", seed=10, out_dir=str(root),
                                      scaling=ScalingConfig(ells=[4.0, 8.0], replicates=500, n_modes=256))
    yield "gradcheck", ExperimentConfig(kind="GradCheck", seed=10, out_dir=str(root),
                                        data={"sizes": [25], "paths": 2})


def test_criterion_10_determinism(verdict, tmp_path):
    compared, mismatched = 0, []
    for name, cfg in _small_configs(tmp_path):
        a, b = tmp_path / f"{name}_a", tmp_path / f"{name}_b"
        run_experiment(cfg, out_dir=a)
        run_experiment(cfg, out_dir=b, threads=2)
        files_a = sorted(p.name for p in a.glob("*.csv"))
        files_b = sorted(p.name for p in b.glob("*.csv"))
        if files_a != files_b or not files_a:
            mismatched.append(f"{name}: file sets differ")
            continue
        for f in files_a:
            compared += 1
            if (a / f).read_bytes() != (b / f).read_bytes():
                mismatched.append(f"{name}/{f}")
    verdict(10, not mismatched, f"{compared} CSV files byte-identical across reruns of 6 study kinds"
                                + (f"; differing: {mismatched}" if mismatched else ""))
