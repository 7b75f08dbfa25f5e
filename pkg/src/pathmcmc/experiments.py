"""Study orchestration: sampler comparisons, mesh refinement, scaling, gradient checks.

Each run writes its trace CSV and a JSON report; a summary CSV per study is
rewritten after every finished run so partial results survive failures.
CSV files contain only quantities that are reproducible from the seed; wall
clock times go to the JSON reports.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ExperimentConfig, ExperimentKind, SamplerConfig, ScalingConfig
from .diagnostics import DiagnosticsError, monitor_nodes, summarize
from .linear_oracle import scaling_experiment
from .pathspace import make_grid, sample_gaussian_path
from .rng import child_seed, make_rng
from .samplers import Algorithm, SamplerSpec, run_chain, tune_step
from .simulate import simulate_sde, simulate_observations
from .targets import build_model, fd_grad_oracle
from .targets.models import (
    DriftParams,
    EventData,
    ModelKind,
    ObservationData,
    ObsErrorParams,
    StochVolParams,
    SurvivalParams,
    WienerNoiseParams,
    gaussian_error,
    stoch_vol_drift,
)

IS_FEASIBILITY = 1e-4
MAX_MONITORS = 100


@dataclass
class RunResult:
    case: str
    sampler: str
    algorithm: str
    h: float
    n_leapfrog: int
    replicate: int
    seed: int
    status: str = "ok"
    acceptance: float = float("nan")
    ess: Optional[list] = None
    cost_per_iteration: float = float("nan")
    wall_time: float = 0.0
    trace: object = None


@dataclass
class CaseSummary:
    case: str
    sampler: str
    h: float
    n_leapfrog: int
    acceptance: float
    min_ess: float
    cost_per_iteration: float
    status: str
    relative: float = float("nan")
    ess: list = field(default_factory=list)

    @property
    def ess_per_cost(self) -> float:
        return self.min_ess / self.cost_per_iteration


@dataclass
class StudyResult:
    config: ExperimentConfig
    out_dir: Path
    summaries: list = field(default_factory=list)
    runs: list = field(default_factory=list)
    files: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def summary(self, case, sampler) -> CaseSummary:
        for s in self.summaries:
            if s.case == case and s.sampler == sampler:
                return s
        raise KeyError((case, sampler))


# ------------------------------------------------------------------ helpers


def _header(config: ExperimentConfig):
    return [f"config_hash={config.config_hash()}, seed={config.seed}"]


def _fmt(x):
    if isinstance(x, float):
        return "nan" if math.isnan(x) else f"{x:.10g}"
    return str(x)


def _write_csv(path, header_lines, columns, rows):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _study_data(config: ExperimentConfig, grid):
    """Observation record for data-driven studies: loaded from file or simulated."""
    kind = ModelKind(config.model)
    spec = dict(config.data)
    if "file" in spec:
        return load_data(kind, spec["file"]), None
    rng = make_rng(child_seed(config.seed, "data"))
    if kind is ModelKind.SURVIVAL:
        theta = SurvivalParams.default(**config.theta)
        path = simulate_sde(theta.drift.nu, lambda x: 1.0, theta.x0, grid, rng)
        sim = simulate_observations(kind, path, theta, grid, rng, n_events=spec.get("n_events", 200))
        return sim.data, sim
    if kind is ModelKind.STOCH_VOL:
        theta = StochVolParams(**config.theta)
        nu = stoch_vol_drift(theta).nu
        path = simulate_sde(nu, lambda x: 1.0, 0.0, grid, rng)
        sim = simulate_observations(kind, path, theta, grid, rng, spacing=spec.get("spacing", 1.0))
        return sim.data, sim
    return None, None


def load_data(kind, path):
    """Read ``time[,value]`` rows (``#`` lines are comments)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"data file {path} does not exist")
    lines = [ln for ln in path.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if lines and not lines[0].split(",")[0].strip().lstrip("+-").replace(".", "", 1).isdigit():
        lines = lines[1:]  # column names
    arr = np.loadtxt(lines, delimiter=",", ndmin=2)
    if ModelKind(kind) is ModelKind.SURVIVAL:
        return EventData(arr[:, 0])
    return ObservationData(arr[:, 0], arr[:, 1])


def save_data(data, path, header_lines=()):
    """Write data at full precision so that a reload reproduces it exactly."""
    if isinstance(data, EventData):
        rows, cols = [(repr(float(t)),) for t in data.times], ["time"]
    else:
        rows = [(repr(float(t)), repr(float(v))) for t, v in zip(data.times, data.values)]
        cols = ["time", "value"]
    _write_csv(path, header_lines, cols, rows)


def _theta(config: ExperimentConfig, case_theta):
    kind = ModelKind(config.model)
    merged = {**config.theta, **(case_theta or {})}
    if kind is ModelKind.SURVIVAL:
        return SurvivalParams.default(**merged)
    return merged


def _monitor_times(config: ExperimentConfig, bridge: bool):
    if config.monitor_times is not None:
        return np.asarray(config.monitor_times, dtype=float)
    coarse = max([config.step, *config.steps])
    n = int(round(config.horizon / coarse))
    nodes = np.arange(1, n if bridge else n + 1)
    if len(nodes) > MAX_MONITORS:
        nodes = np.unique(np.linspace(nodes[0], nodes[-1], MAX_MONITORS).round().astype(int))
    return nodes * coarse


@dataclass
class _Task:
    case_index: int
    case: str
    sampler_index: int
    sampler: SamplerConfig
    spec: SamplerSpec
    replicate: int
    step: float
    theta: object
    keep_paths: bool = False


def _run_task(config: ExperimentConfig, task: _Task, data, out_dir: Path) -> RunResult:
    grid = make_grid(config.horizon, task.step)
    model = build_model(config.model, task.theta, data, grid, strict=config.strict_grid)
    bridge = model.law.boundary.value == "bridge"
    monitors = monitor_nodes(grid, _monitor_times(config, bridge), bridge=bridge)
    spec = task.spec
    res = RunResult(
        task.case, task.sampler.name, spec.algorithm.value, float(spec.h), spec.n_leapfrog,
        task.replicate, int(spec.seed),
    )
    stem = f"{task.case}_{task.sampler.name}_r{task.replicate}"
    t0 = time.perf_counter()
    try:
        x0 = _warm_state(config, model, task.case_index, task.replicate)
        trace = run_chain(model, spec, monitors, x0=x0, keep_paths=task.keep_paths)
    except Exception as exc:  # isolate the run, keep the study going
        res.status = f"failed: {type(exc).__name__}: {exc}"
        res.wall_time = time.perf_counter() - t0
        return res
    res.wall_time = time.perf_counter() - t0
    res.acceptance = trace.acceptance_rate
    res.cost_per_iteration = (trace.n_phi + trace.n_grad) / spec.iterations
    if spec.algorithm is Algorithm.IS and res.acceptance < IS_FEASIBILITY:
        res.status = f"infeasible: acceptance below {IS_FEASIBILITY:g}"
    else:
        try:
            report = summarize(trace, wall_time=res.wall_time)
            res.ess = report.ess
            report.to_json(out_dir / f"{stem}.json")
        except DiagnosticsError as exc:
            res.status = f"failed: {exc}"
    trace.to_csv(out_dir / f"{stem}_trace.csv", _header(config) + [f"run_seed={spec.seed}"])
    res.trace = trace if task.keep_paths else None
    return res


def _warm_state(config: ExperimentConfig, model, case_index, replicate):
    """Final path of a pCN pre-run, shared by all samplers of a case and replicate."""
    if config.warm_start <= 0:
        return None
    spec = SamplerSpec("rwm_adv", h=config.warm_start_h, iterations=config.warm_start,
                       burn_in=config.warm_start - 1, seed=child_seed(config.seed, case_index, replicate, "warm"))
    return run_chain(model, spec, monitors=[1], keep_paths=True).paths[-1]


def _sampler_spec(config, sc: SamplerConfig, case_index, sampler_index, replicate, h):
    seed = child_seed(config.seed, case_index, sampler_index, replicate)
    return SamplerSpec(
        sc.algorithm, h=h if h is not None else 1.0, n_leapfrog=sc.n_leapfrog, iterations=sc.iterations or config.iterations,
        burn_in=config.burn_in, thin=config.thin, seed=seed,
    )


def _tuned_step(config, sc, case_index, sampler_index, step, theta, data):
    grid = make_grid(config.horizon, step)
    model = build_model(config.model, theta, data, grid, strict=config.strict_grid)
    start = SamplerSpec(sc.algorithm, h=sc.step_for(case_index) or 0.5, n_leapfrog=sc.n_leapfrog,
                        seed=child_seed(config.seed, case_index, sampler_index, "tune"))
    tuned, _ = tune_step(model, start, pilot_iterations=config.tune_iterations, target=sc.target)
    return tuned.h


def _aggregate(runs):
    """Per (case, sampler): min over monitors of the replicate-mean ESS."""
    groups = {}
    for r in runs:
        groups.setdefault((r.case, r.sampler), []).append(r)
    out = []
    for (case, sampler), rs in groups.items():
        ok = [r for r in rs if r.status == "ok"]
        status = "ok" if len(ok) == len(rs) else rs[[r.status != "ok" for r in rs].index(True)].status
        acc = float(np.mean([r.acceptance for r in rs]))
        cost = float(np.mean([r.cost_per_iteration for r in rs]))
        if ok:
            mean_ess = np.mean([r.ess for r in ok], axis=0)
            min_ess = float(mean_ess.min())
            ess = [float(e) for e in mean_ess]
        else:
            min_ess, ess = float("nan"), []
        out.append(CaseSummary(case, sampler, rs[0].h, rs[0].n_leapfrog, acc, min_ess, cost, status, ess=ess))
    for case in dict.fromkeys(s.case for s in out):
        rows = [s for s in out if s.case == case and not math.isnan(s.min_ess)]
        if rows:
            base = min(s.ess_per_cost for s in rows)
            for s in rows:
                s.relative = s.ess_per_cost / base
    return out


def _write_summary(result: StudyResult, name="summary.csv"):
    cols = ["case", "sampler", "h", "n_leapfrog", "acceptance", "min_ess", "cost_per_iteration",
            "min_ess_per_cost", "relative", "status"]
    rows = [
        (s.case, s.sampler, s.h, s.n_leapfrog, s.acceptance, s.min_ess, s.cost_per_iteration,
         s.ess_per_cost if not math.isnan(s.min_ess) else float("nan"), s.relative, s.status)
        for s in result.summaries
    ]
    path = result.out_dir / name
    _write_csv(path, _header(result.config), cols, rows)
    if path not in result.files:
        result.files.append(path)


def _write_timings(result: StudyResult):
    payload = {
        "config_hash": result.config.config_hash(),
        "seed": result.config.seed,
        "runs": [
            {"case": r.case, "sampler": r.sampler, "replicate": r.replicate, "h": r.h,
             "wall_time": r.wall_time, "status": r.status}
            for r in result.runs
        ],
    }
    (result.out_dir / "timings.json").write_text(json.dumps(payload, indent=2) + "\n")


def _cases(config: ExperimentConfig):
    """(name, grid step, theta overrides) for each case of a sampling study."""
    if config.kind is ExperimentKind.MESH_STUDY:
        steps = config.steps or [0.02, 0.01, 0.005]
        return [(f"step={s:g}", float(s), {}) for s in steps]
    if config.sweep:
        return [
            ("_".join(f"{k}={v:g}" if isinstance(v, (int, float)) else f"{k}={v}" for k, v in c.items()),
             config.step, c)
            for c in config.sweep
        ]
    return [("base", config.step, {})]


def _sampling_study(config: ExperimentConfig, out_dir: Path, threads=1) -> StudyResult:
    result = StudyResult(config, out_dir)
    grid0 = make_grid(config.horizon, config.step)
    data, sim = _study_data(config, grid0)
    if sim is not None:
        save_data(sim.data, out_dir / "data.csv", _header(config))
        _write_csv(out_dir / "latent.csv", _header(config), ["time", "value"],
                   list(zip(grid0.times, sim.latent)))
        result.extra["simulated"] = sim
    quantile_sampler = config.data.get("quantile_sampler") if config.kind is ExperimentKind.SURVIVAL_STUDY else None

    tasks = []
    for ci, (case, step, overrides) in enumerate(_cases(config)):
        theta = _theta(config, overrides)
        for si, sc in enumerate(config.samplers):
            h = sc.step_for(ci if isinstance(sc.h, (list, tuple)) else 0)
            if sc.tune:
                h = _tuned_step(config, sc, ci, si, step, theta, data)
            for rep in range(config.replicates):
                spec = _sampler_spec(config, sc, ci, si, rep, h)
                keep = quantile_sampler == sc.name and rep == 0
                tasks.append(_Task(ci, case, si, sc, spec, rep, step, theta, keep))

    def finish(res):
        result.runs.append(res)
        result.summaries = _aggregate(result.runs)
        _write_summary(result)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for res in pool.map(lambda t: _run_task(config, t, data, out_dir), tasks):
                finish(res)
    else:
        for t in tasks:
            finish(_run_task(config, t, data, out_dir))
    _write_timings(result)

    if quantile_sampler is not None:
        _write_quantiles(result, sim, grid0)
    return result


def _write_quantiles(result: StudyResult, sim, grid):
    """Pointwise 2.5/50/97.5% posterior quantiles of the latent path."""
    runs = [r for r in result.runs if r.trace is not None and r.trace.paths is not None]
    if not runs:
        return
    trace = runs[0].trace
    theta = _theta(result.config, {})
    x0 = getattr(theta, "x0", 0.0)
    paths = np.asarray(trace.paths) + x0
    q = np.quantile(paths, [0.025, 0.5, 0.975], axis=0)
    truth = sim.latent[1:] if sim is not None else np.full(paths.shape[1], np.nan)
    rows = [(t, tr, a, b, c) for t, tr, a, b, c in zip(grid.times[1:], truth, *q)]
    path = result.out_dir / "quantiles.csv"
    _write_csv(path, _header(result.config), ["time", "truth", "q025", "q500", "q975"], rows)
    result.files.append(path)


def _scaling_study(config: ExperimentConfig, out_dir: Path) -> StudyResult:
    sc = config.scaling or ScalingConfig()
    result = StudyResult(config, out_dir)
    rows = []
    for ai, alg in enumerate(sc.algorithms):
        exponents = [1] if Algorithm(alg) is Algorithm.HMC_ADV else sc.exponents
        for e in exponents:
            rng = make_rng(child_seed(config.seed, "scaling", ai, e))
            table = scaling_experiment(alg, e, sc.c[alg], sc.ells, sc.replicates, rng,
                                       kappa=sc.kappa, n_modes=sc.n_modes)
            result.extra[(alg, e)] = table
            for row in table.rows:
                rows.append((alg, e, sc.c[alg], row.ell, row.step, row.n_steps, row.mean_acceptance,
                             row.se, row.unstable_modes))
    path = out_dir / "scaling.csv"
    _write_csv(path, _header(config),
               ["algorithm", "exponent", "c", "ell", "h", "n_steps", "mean_acceptance", "se", "unstable_modes"], rows)
    result.files.append(path)
    return result


# ---------------------------------------------------------- gradient check


def random_model(kind, n, rng):
    """A model of the given kind with randomised parameters and data on ``n`` intervals."""
    kind = ModelKind(kind)
    ell = float(rng.uniform(0.5, 2.0))
    grid = make_grid(ell, ell / n)
    a, b = rng.uniform(0.5, 1.5, size=2)
    drift = DriftParams(
        nu=lambda x: -a * np.sin(x) - b * x,
        dnu=lambda x: -a * np.cos(x) - b,
        d2nu=lambda x: a * np.sin(x),
    )
    m = max(2, n // 5)
    obs_idx = np.sort(rng.choice(np.arange(1, n + 1), size=m, replace=False))
    times = obs_idx * grid.step
    if kind is ModelKind.OU_BRIDGE:
        return build_model(kind, float(rng.uniform(0.5, 15)), None, grid)
    if kind is ModelKind.OBSERVED_BRIDGE:
        obs_idx = obs_idx[obs_idx < n]
        data = ObservationData(obs_idx * grid.step, rng.standard_normal(len(obs_idx)), initial=0.3)
        data = ObservationData(np.append(data.times, ell), np.append(data.values, -0.2), initial=0.3)
        theta = drift if rng.random() < 0.5 else replace(drift, d2nu=None)
        return build_model(kind, theta, data, grid)
    if kind is ModelKind.OBS_ERROR:
        logf, dlogf = gaussian_error(float(rng.uniform(0.3, 1.0)))
        theta = ObsErrorParams(drift, lambda y, x: logf(y, x), lambda y, x: dlogf(y, x), x0=0.1)
        return build_model(kind, theta, ObservationData(times, rng.standard_normal(m)), grid)
    if kind is ModelKind.STOCH_VOL:
        theta = StochVolParams(kappa=float(rng.uniform(0.02, 0.5)), mu=float(rng.uniform(-0.5, 0.5)),
                               sigma=float(rng.uniform(0.1, 0.6)), v0=float(rng.uniform(-0.5, 0.5)))
        return build_model(kind, theta, ObservationData(times, np.cumsum(rng.standard_normal(m))), grid)
    if kind is ModelKind.SURVIVAL:
        theta = SurvivalParams.default(x0=float(rng.uniform(1.0, 2.5)))
        return build_model(kind, theta, EventData(np.sort(rng.uniform(0.01, ell, size=m))), grid)
    if kind is ModelKind.WIENER_NOISE:
        c = float(rng.uniform(0.2, 0.5))
        theta = WienerNoiseParams(
            mu=lambda v: -a * v, dmu=lambda v: -a * np.ones_like(v),
            sigma=lambda v: 1.0 + c * np.sin(v), dsigma=lambda v: c * np.cos(v),
            v0=0.2, obs_sd=0.5,
        )
        return build_model(kind, theta, ObservationData(times, rng.standard_normal(m)), grid)
    raise ValueError(f"unknown model kind {kind}")


GRADCHECK_KINDS = ("ou_bridge", "observed_bridge", "obs_error", "stoch_vol", "survival", "wiener_noise")


def gradient_check(kinds=GRADCHECK_KINDS, sizes=(25, 50, 100), paths=20, seed=0):
    """Relative error of the preconditioned gradient against finite differences.

    Returns rows ``(kind, n, max_relative_error)``; each row covers ``paths``
    random paths drawn from the reference law around a random model.
    """
    rows = []
    for ki, kind in enumerate(kinds):
        for n in sizes:
            rng = make_rng(child_seed(seed, "gradcheck", ki, n))
            worst = 0.0
            for _ in range(paths):
                model = random_model(kind, n, rng)
                x = 0.5 * sample_gaussian_path(model.law, rng)
                g = model.precond_grad(x)
                fd = fd_grad_oracle(model, x)
                worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(fd)))
            rows.append((kind, n, worst))
    return rows


def _grad_study(config: ExperimentConfig, out_dir: Path) -> StudyResult:
    result = StudyResult(config, out_dir)
    sizes = config.data.get("sizes", [25, 50, 100])
    kinds = config.data.get("kinds", list(GRADCHECK_KINDS))
    rows = gradient_check(kinds, sizes, config.data.get("paths", 20), config.seed)
    path = out_dir / "gradcheck.csv"
    _write_csv(path, _header(config), ["model", "n", "max_relative_error"], rows)
    result.files.append(path)
    result.extra["rows"] = rows
    return result


# ------------------------------------------------------------------ driver


def run_experiment(config: ExperimentConfig, out_dir=None, threads=1) -> StudyResult:
    """Run a study and write its outputs under ``out_dir`` (default ``config.out_dir``)."""
    out = Path(out_dir or config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps({"config_hash": config.config_hash(), **config.to_dict()}, indent=2, default=str) + "\n"
    )
    if config.kind is ExperimentKind.SCALING_STUDY:
        return _scaling_study(config, out)
    if config.kind is ExperimentKind.GRAD_CHECK:
        return _grad_study(config, out)
    return _sampling_study(config, out, threads=threads)
