"""Command-line entry point: ``pathmcmc <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ExperimentConfig, ExperimentKind, ScalingConfig, load_config
from .diagnostics import monitor_nodes, summarize
from .experiments import _write_csv, gradient_check, run_experiment, save_data
from .pathspace import make_grid
from .rng import child_seed, make_rng
from .samplers import SamplerSpec, run_chain
from .simulate import stoch_vol_dataset, survival_dataset
from .targets import build_model


def _common(p):
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    p.add_argument("--out-dir", default=None, help="output folder (overrides the config)")
    p.add_argument("--threads", type=int, default=1, help="parallel runs within a study")
    p.add_argument("--strict-grid", action="store_true", help="reject data times that are not grid nodes")


def _apply(config: ExperimentConfig, args) -> ExperimentConfig:
    config = config.with_overrides(seed=args.seed, out_dir=args.out_dir)
    if args.strict_grid:
        config.strict_grid = True
    return config


def cmd_sample(args):
    grid = make_grid(args.horizon, args.step)
    theta = {"kappa": args.kappa} if args.model == "ou_bridge" else None
    data = None
    seed = 0 if args.seed is None else args.seed
    if args.model in ("survival", "stoch_vol"):
        maker = survival_dataset if args.model == "survival" else stoch_vol_dataset
        grid, theta, sim = maker(make_rng(child_seed(seed, "data")), horizon=args.horizon, step=args.step)
        data = sim.data
    elif args.model != "ou_bridge":
        raise SystemExit("sample supports ou_bridge, survival and stoch_vol; use a config for others")
    model = build_model(args.model, theta, data, grid, strict=args.strict_grid)
    spec = SamplerSpec(args.algorithm, h=args.h, n_leapfrog=args.n_leapfrog, iterations=args.iterations,
                       burn_in=args.burn_in, thin=args.thin, seed=seed)
    bridge = model.law.boundary.value == "bridge"
    times = grid.times[1:-1] if bridge else grid.times[1:]
    monitors = monitor_nodes(grid, times[:: max(1, len(times) // 50)], bridge=bridge)
    trace = run_chain(model, spec, monitors)
    report = summarize(trace)
    out = Path(args.out_dir or "results")
    out.mkdir(parents=True, exist_ok=True)
    trace.to_csv(out / f"{args.model}_{args.algorithm}_trace.csv", [f"seed={seed}"])
    report.to_json(out / f"{args.model}_{args.algorithm}.json")
    print(f"{args.algorithm}: acceptance {report.acceptance_rate:.3f}, min ESS {report.min_ess:.3f}%, "
          f"wall {report.wall_time:.1f}s")


def cmd_experiment(args):
    config = _apply(load_config(args.config), args)
    result = run_experiment(config, threads=args.threads)
    _print_summary(result)


def cmd_mesh(args):
    config = load_config(args.config) if args.config else ExperimentConfig(
        kind=ExperimentKind.MESH_STUDY, theta={"kappa": 12.0}, steps=[0.02, 0.01, 0.005],
        samplers=[{"algorithm": "hmc_adv", "h": 0.43, "n_leapfrog": 5},
                  {"algorithm": "hmc_std", "h": 0.43, "n_leapfrog": 5}],
        iterations=args.iterations, burn_in=min(1000, args.iterations // 10),
    )
    result = run_experiment(_apply(config, args), threads=args.threads)
    _print_summary(result)


def cmd_scaling(args):
    config = load_config(args.config) if args.config else ExperimentConfig(
        kind=ExperimentKind.SCALING_STUDY, scaling=ScalingConfig(replicates=args.replicates))
    result = run_experiment(_apply(config, args))
    for (alg, e), table in result.extra.items():
        means = " ".join(f"{m:.3f}" for m in table.means)
        print(f"{alg} exponent={e}: {means}  unstable={table.unstable}")


def cmd_gradcheck(args):
    seed = 0 if args.seed is None else args.seed
    rows = gradient_check(sizes=args.sizes, paths=args.paths, seed=seed)
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        _write_csv(Path(args.out_dir) / "gradcheck.csv", [f"seed={seed}"], ["model", "n", "max_relative_error"], rows)
    for kind, n, err in rows:
        print(f"{kind:16s} N={n:4d}  max rel err {err:.2e}")
    worst = max(r[2] for r in rows)
    print(f"worst {worst:.2e}")
    return 0 if worst <= 1e-5 else 1


def cmd_simulate(args):
    seed = 0 if args.seed is None else args.seed
    rng = make_rng(child_seed(seed, "data"))
    if args.model == "survival":
        grid, _, sim = survival_dataset(rng, horizon=args.horizon, step=args.step, n_events=args.n_events)
    else:
        grid, _, sim = stoch_vol_dataset(rng, horizon=args.horizon, step=args.step)
    out = Path(args.out_dir or "data")
    out.mkdir(parents=True, exist_ok=True)
    save_data(sim.data, out / f"{args.model}_data.csv", [f"seed={seed}"])
    _write_csv(out / f"{args.model}_latent.csv", [f"seed={seed}"], ["time", "value"], list(zip(grid.times, sim.latent)))
    print(json.dumps({"records": len(sim.data.times), "redrawn": sim.resampled, "out": str(out)}))


def _print_summary(result):
    for s in result.summaries:
        print(f"{s.case:14s} {s.sampler:10s} h={s.h:.4g} I={s.n_leapfrog} acc={s.acceptance:.3f} "
              f"minESS={s.min_ess:.3f}% rel={s.relative:.3f} {s.status}")
    print(f"outputs in {result.out_dir}")


def build_parser():
    ap = argparse.ArgumentParser(prog="pathmcmc", description="Pathspace MCMC for diffusion models")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="one model/sampler run")
    p.add_argument("--model", default="ou_bridge", choices=["ou_bridge", "survival", "stoch_vol"])
    p.add_argument("--algorithm", default="hmc_adv")
    p.add_argument("--kappa", type=float, default=12.0)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--step", type=float, default=0.02)
    p.add_argument("--h", type=float, default=0.43)
    p.add_argument("--n-leapfrog", type=int, default=5)
    p.add_argument("--iterations", type=int, default=10000)
    p.add_argument("--burn-in", type=int, default=1000)
    p.add_argument("--thin", type=int, default=1)
    _common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("experiment", help="run a study from a YAML config")
    p.add_argument("config")
    _common(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("scaling", help="acceptance versus bridge length in spectral coordinates")
    p.add_argument("--config", default=None)
    p.add_argument("--replicates", type=int, default=10000)
    _common(p)
    p.set_defaults(func=cmd_scaling)

    p = sub.add_parser("mesh-study", help="HMC mixing across grid refinements")
    p.add_argument("--config", default=None)
    p.add_argument("--iterations", type=int, default=20000)
    _common(p)
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("gradcheck", help="gradients against finite differences for every model")
    p.add_argument("--sizes", type=int, nargs="+", default=[25, 50, 100])
    p.add_argument("--paths", type=int, default=20)
    _common(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("simulate", help="generate a survival or stochastic volatility dataset")
    p.add_argument("--model", default="survival", choices=["survival", "stoch_vol"])
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--step", type=float, default=None)
    p.add_argument("--n-events", type=int, default=200)
    _common(p)
    p.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "command", None) == "simulate":
        defaults = {"survival": (5.0, 0.02), "stoch_vol": (250.0, 0.25)}[args.model]
        args.horizon = args.horizon or defaults[0]
        args.step = args.step or defaults[1]
    rc = args.func(args)
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())
