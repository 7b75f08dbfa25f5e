"""Mean acceptance against path length for RWM, MALA and HMC, from the spectral oracle."""

import argparse
from pathlib import Path

from pathmcmc.config import load_config
from pathmcmc.experiments import run_experiment

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "scaling.yaml"


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default=str(CONFIG))
    p.add_argument("--out-dir", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    args = p.parse_args()
    config = load_config(args.config).with_overrides(seed=args.seed, out_dir=args.out_dir)
    result = run_experiment(config, threads=args.threads)
    print(f"wrote {result.out_dir}")


if __name__ == "__main__":
    main()
