import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathmcmc.pathspace import apply_covariance, brownian_bridge, make_grid, precision_quadratic_form, sample_gaussian_path
from pathmcmc.samplers import (
    Algorithm,
    ChainAborted,
    ChainState,
    SamplerSpec,
    _propose,
    flow_nonlinear,
    flow_rotation,
    hamiltonian,
    hstar,
    integrator_advanced,
    integrator_semi_implicit,
    integrator_standard,
    mcmc_step,
    run_chain,
    tune_step,
)
from pathmcmc.targets import EvaluationError, QuadraticTarget, TargetModel, build_model, zero_target


def ou(kappa=12.0, step=0.02, ell=1.0):
    return build_model("ou_bridge", kappa, None, make_grid(ell, step))


def zero(step=0.02, ell=1.0):
    return zero_target(brownian_bridge(make_grid(ell, step)))


def draw(model, seed, size=None):
    return sample_gaussian_path(model.law, np.random.default_rng(seed), size)


def energy_delta(model, x, v, traj):
    return hamiltonian(model, traj.x, traj.v, traj.phi) - hamiltonian(model, x, v)


# --------------------------------------------------------------- h star


def test_hstar_small_step():
    for h in (1e-3, 1e-5, 1e-7):
        assert hstar(h) / h == pytest.approx(1.0, abs=h)


def test_hstar_values():
    assert hstar(2.0 - 1e-12) == pytest.approx(math.pi / 2, abs=1e-11)
    with pytest.warns(RuntimeWarning):
        assert hstar(2.0) == pytest.approx(math.pi / 2, abs=1e-15)
    # arccos((1 - h^2/4) / (1 + h^2/4)) evaluated directly
    assert hstar(0.43) == pytest.approx(0.4235523, abs=5e-8)
    assert math.cos(hstar(0.43)) == pytest.approx(0.953775 / 1.046225, abs=1e-12)
    with pytest.raises(ValueError):
        hstar(0.0)
    with pytest.raises(ValueError):
        hstar(-0.1)


def test_spec_validation():
    with pytest.raises(ValueError):
        SamplerSpec("hmc_adv", h=0.0)
    with pytest.raises(ValueError):
        SamplerSpec("hmc_adv", n_leapfrog=0)
    with pytest.raises(ValueError):
        SamplerSpec("rwm_adv", iterations=10, burn_in=11)
    s = SamplerSpec.from_dt("mala_adv", 0.04)
    assert s.h == pytest.approx(0.2)
    assert s.rho == pytest.approx(math.cos(hstar(0.2)), abs=1e-15)
    assert s.gradient_evaluations == 1
    assert SamplerSpec("hmc_adv", n_leapfrog=7).gradient_evaluations == 7


# ------------------------------------------------------------------ flows


def test_nonlinear_flow():
    m = ou()
    x, v = draw(m, 0), draw(m, 1)
    x1, v1 = flow_nonlinear(zero(), x, v, 0.7)
    np.testing.assert_array_equal(v1, v)
    np.testing.assert_array_equal(flow_nonlinear(m, x, v, 0.0)[1], v)
    xa, va = flow_nonlinear(m, *flow_nonlinear(m, x, v, 0.3), 0.45)
    xb, vb = flow_nonlinear(m, x, v, 0.75)
    np.testing.assert_array_equal(xa, x)
    np.testing.assert_allclose(va, vb, rtol=0, atol=1e-12)


def test_rotation_flow():
    m = zero()
    x, v = draw(m, 2), draw(m, 3)
    np.testing.assert_allclose(flow_rotation(x, v, 2 * math.pi)[0], x, atol=1e-12)
    np.testing.assert_allclose(flow_rotation(x, v, 2 * math.pi)[1], v, atol=1e-12)
    np.testing.assert_array_equal(flow_rotation(x, v, 0.0)[0], x)
    q = lambda a, b: precision_quadratic_form(m.law, a) + precision_quadratic_form(m.law, b)  # noqa: E731
    for t in (0.1, 1.3, -2.2, 17.0):
        assert q(*flow_rotation(x, v, t)) == pytest.approx(q(x, v), rel=1e-10)


# ------------------------------------------------------------ integrators


def test_zero_potential_is_pure_rotation():
    m = zero()
    x, v = draw(m, 4), draw(m, 5)
    traj = integrator_advanced(m, x, v, 0.43, 7)
    xr, vr = flow_rotation(x, v, 7 * hstar(0.43))
    np.testing.assert_allclose(traj.x, xr, atol=1e-12)
    np.testing.assert_allclose(traj.v, vr, atol=1e-12)
    assert abs(energy_delta(m, x, v, traj)) <= 1e-10


@pytest.mark.parametrize("h, n", [(0.43, 5), (0.1, 10), (1.2, 3)])
def test_semi_implicit_form_agrees(h, n):
    m = ou()
    x, v = draw(m, 6), draw(m, 7)
    a = integrator_advanced(m, x, v, h, n)
    b = integrator_semi_implicit(m, x, v, h, n)
    np.testing.assert_allclose(a.x, b.x, rtol=0, atol=1e-10)
    np.testing.assert_allclose(a.v, b.v, rtol=0, atol=1e-10)


@pytest.mark.parametrize("integrator", [integrator_advanced, integrator_standard])
@pytest.mark.parametrize("kind", ["ou_bridge", "stoch_vol"])
def test_symmetricity(integrator, kind):
    if kind == "ou_bridge":
        m = ou()
    else:
        from pathmcmc.experiments import random_model

        m = random_model("stoch_vol", 50, np.random.default_rng(0))
    x, v = 0.3 * draw(m, 8), 0.3 * draw(m, 9)
    f = integrator(m, x, v, 0.2, 5)
    b = integrator(m, f.x, -f.v, 0.2, 5)
    np.testing.assert_allclose(b.x, x, rtol=0, atol=1e-8)
    np.testing.assert_allclose(b.v, -v, rtol=0, atol=1e-8)


def test_ou_modes_follow_two_by_two_maps():
    # sine vectors are exact eigenvectors of the discrete bridge covariance
    kappa, h, n_steps = 12.0, 0.26, 4
    m = ou(kappa)
    s = m.law.free_times
    x, v = draw(m, 10), draw(m, 11)
    traj = integrator_advanced(m, x, v, h, n_steps)
    rho = math.cos(hstar(h))
    sn = math.sin(hstar(h))
    for p in (1, 2, 5, 17, 40):
        e = math.sqrt(2) * np.sin(math.pi * p * s)
        lam = apply_covariance(m.law, e)[0] / e[0]
        c = rho - (1 - rho) * kappa**2 * lam
        step = np.array([[c, sn], [-(1 - c * c) / sn, c]])
        proj = lambda y: m.law.step * float(y @ e)  # noqa: E731
        want = np.linalg.matrix_power(step, n_steps) @ [proj(x), proj(v)]
        assert proj(traj.x) == pytest.approx(want[0], abs=1e-8)
        assert proj(traj.v) == pytest.approx(want[1], abs=1e-8)


def test_standard_leapfrog_single_step():
    m = zero()
    x, v = draw(m, 12), draw(m, 13)
    h = 0.3
    traj = integrator_standard(m, x, v, h, 1)
    np.testing.assert_allclose(traj.x, (1 - h * h / 2) * x + h * v, atol=1e-13)
    np.testing.assert_allclose(traj.v, (1 - h * h / 2) * v - h * (1 - h * h / 4) * x, atol=1e-13)
    # the rotation differs at third order
    xr, _ = flow_rotation(x, v, h)
    gap = np.max(np.abs(traj.x - xr))
    xr2, _ = flow_rotation(x, v, h / 2)
    gap2 = np.max(np.abs(integrator_standard(m, x, v, h / 2, 1).x - xr2))
    assert gap / gap2 == pytest.approx(8.0, rel=0.1)


def _mean_acceptance(model, spec, chains=400, seed=0):
    """Stationary one-step acceptance averaged over exact reference draws."""
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(chains):
        x = sample_gaussian_path(model.law, rng)
        out = mcmc_step(model, ChainState(x, model.phi(x)), spec, rng)
        total += out.acceptance_probability
    return total / chains


def test_standard_hmc_degenerates_with_mesh():
    spec = SamplerSpec("hmc_std", h=0.43, n_leapfrog=5)
    rates = [_mean_acceptance(zero(1.0 / n), spec) for n in (50, 400, 3200)]
    assert rates[0] > rates[1] > rates[2]
    assert rates[2] < 0.5 * rates[0]
    adv = [_mean_acceptance(zero(1.0 / n), SamplerSpec("hmc_adv", h=0.43, n_leapfrog=5)) for n in (50, 3200)]
    assert adv == pytest.approx([1.0, 1.0], abs=1e-10)


def test_energy_error_is_second_order():
    m = ou()
    rng = np.random.default_rng(14)
    xs, vs = sample_gaussian_path(m.law, rng, 20), sample_gaussian_path(m.law, rng, 20)
    err = []
    for h in (0.2, 0.1, 0.05):
        n = round(1.0 / h)
        err.append(np.mean([abs(energy_delta(m, x, v, integrator_advanced(m, x, v, h, n))) for x, v in zip(xs, vs)]))
    assert err[0] / err[1] == pytest.approx(4.0, rel=0.15)
    assert err[1] / err[2] == pytest.approx(4.0, rel=0.1)


def test_hamiltonian_origin():
    m = zero()
    z = np.zeros(m.law.n_free)
    assert hamiltonian(m, z, z) == 0.0


# ---------------------------------------------------------------- kernels


def test_mala_is_one_step_hmc():
    m = ou()
    x = draw(m, 15)
    for h in (0.1, 0.45):
        cur = ChainState(x, *m.phi_and_precond_grad(x))
        cand_m, lr_m = _propose(m, SamplerSpec("mala_adv", h=h), cur, np.random.default_rng(3))
        cand_h, lr_h = _propose(m, SamplerSpec("hmc_adv", h=h, n_leapfrog=1), cur, np.random.default_rng(3))
        np.testing.assert_array_equal(cand_m.x, cand_h.x)
        assert lr_m == pytest.approx(lr_h, abs=1e-8)
    a = run_chain(m, SamplerSpec("mala_adv", h=0.3, iterations=300, seed=4))
    b = run_chain(m, SamplerSpec("hmc_adv", h=0.3, n_leapfrog=1, iterations=300, seed=4))
    np.testing.assert_array_equal(a.accepted, b.accepted)
    np.testing.assert_allclose(a.log_ratio, b.log_ratio, atol=1e-8)


def test_zero_potential_always_accepts():
    for step in (0.02, 1e-3):
        m = zero(step)
        trace = run_chain(m, SamplerSpec("hmc_adv", h=0.43, n_leapfrog=5, iterations=200, seed=1))
        assert trace.acceptance_rate == 1.0
        assert np.max(np.abs(trace.delta_h)) <= 1e-10
    for alg in ("is", "rwm_adv", "mala_adv"):
        assert run_chain(zero(), SamplerSpec(alg, h=0.7, iterations=100, seed=2)).acceptance_rate == 1.0


def test_independence_sampler_rate():
    trace = run_chain(ou(), SamplerSpec("is", iterations=20_000, seed=5), monitors=[25])
    assert 0.13 < trace.acceptance_rate < 0.19


def test_accepted_state_is_proposal():
    m = ou()
    x = draw(m, 16)
    state = ChainState(x, m.phi(x))
    rng = np.random.default_rng(0)
    for _ in range(50):
        out = mcmc_step(m, state, SamplerSpec("rwm_adv", h=0.5), rng)
        if not out.accepted:
            assert out.state is state
        state = out.state


@pytest.mark.parametrize("h, n", [(0.43, 5), (0.17, 5), (0.05, 20)])
def test_reversibility_of_energy_change(h, n):
    m = ou()
    x, v = draw(m, 17), draw(m, 18)
    f = integrator_advanced(m, x, v, h, n)
    back = integrator_advanced(m, f.x, -f.v, h, n)
    d1 = energy_delta(m, x, v, f)
    d2 = energy_delta(m, f.x, -f.v, back)
    assert d1 == pytest.approx(-d2, abs=1e-8)


def test_ou_posterior_mean_is_zero():
    m = ou()
    trace = run_chain(m, SamplerSpec("hmc_adv", h=0.43, n_leapfrog=5, iterations=3000, burn_in=200, seed=6),
                      monitors=[10, 25, 40])
    # batch-means standard error absorbs the autocorrelation
    batches = trace.samples[: 2800].reshape(40, 70, 3).mean(axis=1)
    se = batches.std(axis=0, ddof=1) / math.sqrt(40)
    assert np.all(np.abs(trace.samples.mean(axis=0)) < 3 * se)


class _Fragile(TargetModel):
    """Zero potential that cannot be evaluated when the midpoint goes above 0.5."""

    def _value(self, x):
        if x[len(x) // 2] > 0.5:
            raise EvaluationError("midpoint outside the domain")
        return 0.0

    def _value_and_grad(self, x):
        return self._value(x), np.zeros_like(x)


def test_evaluation_failure_rejects():
    m = _Fragile(brownian_bridge(make_grid(1.0, 0.02)))
    trace = run_chain(m, SamplerSpec("is", iterations=2000, seed=1), x0=np.zeros(49))
    assert trace.failure_count > 0
    assert not np.any(trace.accepted & trace.failed)
    assert np.all(trace.samples[:, 24] <= 0.5)


def test_repeated_failures_abort():
    class Never(_Fragile):
        def _value(self, x):
            if x.any():
                raise EvaluationError("nowhere defined")
            return 0.0

    m = Never(brownian_bridge(make_grid(1.0, 0.1)))
    with pytest.raises(ChainAborted):
        run_chain(m, SamplerSpec("is", iterations=100, seed=0, max_failures=20), x0=np.zeros(9))


# ----------------------------------------------------------------- chains


def test_empty_trace():
    trace = run_chain(ou(), SamplerSpec("rwm_adv", iterations=50, burn_in=50, seed=0))
    assert trace.n_kept == 0
    assert math.isnan(trace.acceptance_rate)


def test_thinning_and_csv(tmp_path):
    spec = SamplerSpec("rwm_adv", h=0.5, iterations=100, burn_in=10, thin=3, seed=0)
    trace = run_chain(ou(), spec, monitors=[5, 10])
    assert trace.n_kept == len(range(10, 100, 3))
    trace.to_csv(tmp_path / "t.csv", ["seed=0"])
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "# seed=0"
    assert lines[1] == "iteration,x_5,x_10,accepted,delta_h"
    assert len(lines) == 2 + trace.n_kept
    with pytest.raises(ValueError):
        run_chain(ou(), spec, monitors=[0])


def test_runs_are_reproducible():
    spec = SamplerSpec("mala_adv", h=0.3, iterations=200, seed=123)
    a, b = run_chain(ou(), spec), run_chain(ou(), spec)
    np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(a.log_ratio, b.log_ratio)


def test_cost_counters():
    trace = run_chain(ou(), SamplerSpec("hmc_adv", h=0.3, n_leapfrog=4, iterations=30, seed=0))
    assert trace.n_grad == 1 + 4 * 30
    assert trace.n_phi == 1


def test_tuner_hits_window():
    m = ou()
    spec, rate = tune_step(m, SamplerSpec("rwm_adv", seed=9), pilot_iterations=400)
    assert 0.12 < rate < 0.33
    spec, rate = tune_step(m, SamplerSpec("hmc_adv", n_leapfrog=5, seed=9), pilot_iterations=300)
    assert 0.6 < rate < 0.9


# ------------------------------------------------------------- properties


@settings(max_examples=15, deadline=None)
@given(
    st.sampled_from(["rwm_adv", "mala_adv", "hmc_adv", "is"]),
    st.integers(1, 6),
    st.integers(0, 2**31),
)
def test_reference_law_is_stationary(alg, n_steps, seed):
    # many short chains from exact draws keep the reference marginal variance
    m = zero(0.05)
    spec = SamplerSpec(alg, h=0.6, n_leapfrog=3)
    rng = np.random.default_rng(seed)
    n = 1500
    xs = sample_gaussian_path(m.law, rng, n)
    for i in range(n):
        state = ChainState(xs[i], 0.0)
        for _ in range(n_steps):
            state = mcmc_step(m, state, spec, rng).state
        xs[i] = state.x
    s = m.law.free_times[[4, 9, 14]]
    var = s * (1 - s)
    emp = xs[:, [4, 9, 14]].var(axis=0)
    assert np.all(np.abs(emp - var) < 4 * var * math.sqrt(2 / n))


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 1.5), st.integers(1, 8), st.integers(0, 2**31))
def test_quadratic_target_energy_reversal(h, n, seed):
    m = QuadraticTarget(brownian_bridge(make_grid(1.0, 0.05)), weight=20.0)
    rng = np.random.default_rng(seed)
    x, v = sample_gaussian_path(m.law, rng, 2)
    f = integrator_advanced(m, x, v, h, n)
    b = integrator_advanced(m, f.x, -f.v, h, n)
    scale = 1 + abs(hamiltonian(m, x, v))
    assert abs(energy_delta(m, x, v, f) + energy_delta(m, f.x, -f.v, b)) <= 1e-8 * scale
    np.testing.assert_allclose(b.x, x, atol=1e-8 * scale)
