"""Compare Gibbs sampler estimates of the mean and lag covariances with exact values."""

import argparse
import math
from dataclasses import dataclass

import numpy as np

from cchain.model import ModelParams
from cchain.sampler import Proposal, SamplerConfig, run
from cchain.transfer import build_kernel, exact_moments


@dataclass
class SamplerExperiment:
    beta: float = 2.0
    gamma: float = 1.0
    n: int = 32
    samples: int = 200_000
    chains: int = 500
    seed: int = 1
    max_lag: int = 4


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--beta", type=float, default=2.0)
    ap.add_argument("--gamma", type=float, default=1.0)
    ap.add_argument("--n", type=int, default=32)
    ap.add_argument("--samples", type=int, default=200_000)
    ap.add_argument("--proposal", choices=[p.value for p in Proposal], default=Proposal.HEAT_BATH_GRID.value)
    args = ap.parse_args()
    cfg = SamplerExperiment(args.beta, args.gamma, args.n, args.samples)
    params = ModelParams(cfg.beta, cfg.gamma)
    exact = exact_moments(build_kernel(params), cfg.n)
    samples, diag = run(SamplerConfig(params, cfg.n, cfg.seed, proposal=Proposal(args.proposal),
                                      chains=cfg.chains), cfg.samples)
    print(diag)
    centred = samples - exact.mean
    for lag in range(cfg.max_lag + 1):
        per_row = samples.mean(axis=1) if lag == 0 else np.mean(centred * np.roll(centred, -lag, axis=1), axis=1)
        chain_means = per_row.reshape(-1, cfg.chains).mean(axis=0)
        est, se = chain_means.mean(), chain_means.std(ddof=1) / math.sqrt(cfg.chains)
        target = exact.mean if lag == 0 else exact.cov(lag)
        label = "mean" if lag == 0 else f"cov({lag})"
        print(f"{label:>7}: MCMC {est:.6e} +- {se:.1e}   exact {target:.6e}   z={(est - target) / se:+.2f}")


if __name__ == "__main__":
    main()
