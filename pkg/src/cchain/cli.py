"""Command-line entry point.

Exit codes::

    0  success
    1  replay found differing digests
    2  invalid flags or parameters
    3  sampler error
    4  degenerate spectral gap
    5  decay fit failed (independent regime)
    6  sigma_N^2 not positive
"""

from __future__ import annotations

import argparse
import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .clt import build_partition, lemma_diagnostics, petrov_cutoff, petrov_integrand_profile, rate_sweep
from .decay import DecayFitError, decay_sweep, fit_decay
from .io import RunManifest, file_digest, to_jsonable, worker_count, write_csv, write_json, write_samples_csv
from .model import IndexCluster, ModelParams
from .sampler import RNG_ALGORITHM, Proposal, SamplerConfig, SamplerError, run, write_samples
from .transfer import (ResolutionError, SpectralGapError, build_kernel, exact_moments,
                       log_partition_function, marginal_density, sigma_n_squared, spectral_decay_rate)

EXIT_OK = 0
EXIT_REPLAY_MISMATCH = 1
EXIT_INVALID = 2
EXIT_SAMPLER = 3
EXIT_GAP = 4
EXIT_FIT = 5
EXIT_SIGMA = 6
MAX_MOMENT_LAG = 64


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return val


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated integer list, got {text!r}") from None


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--beta", type=float, required=True, help="nearest-neighbour strength, > 0")
    p.add_argument("--gamma", type=float, required=True, help="next-to-nearest strength, >= 0")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cchain", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"cchain {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="draw chain states by MCMC")
    _add_model_flags(s)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--samples", type=_positive_int, required=True)
    s.add_argument("--burn-in", type=int, default=100)
    s.add_argument("--thin", type=_positive_int, default=None, help="default: pilot-run choice")
    s.add_argument("--chains", type=_positive_int, default=1)
    s.add_argument("--proposal", choices=[p.value for p in Proposal], default=Proposal.HEAT_BATH_GRID.value)
    s.add_argument("--resolution", type=int, default=4096, help="heat-bath cells")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--format", choices=("bin", "csv"), default="bin")

    e = sub.add_parser("exact", help="transfer-operator quantities")
    e.add_argument("action", choices=("zn", "moments", "marginal", "sigma2"))
    _add_model_flags(e)
    e.add_argument("--n", type=int, required=True)
    e.add_argument("--grid", type=int, default=64)
    e.add_argument("--out", type=Path, required=True)

    d = sub.add_parser("decay", help="cluster correlation decay sweep")
    _add_model_flags(d)
    d.add_argument("--n", type=int, required=True)
    d.add_argument("--i-len", type=int, choices=(1, 2), default=1)
    d.add_argument("--j-len", type=int, choices=(1, 2), default=1)
    d.add_argument("--r-min", type=int, default=2)
    d.add_argument("--r-max", type=int, default=10)
    d.add_argument("--grid", type=int, default=64)
    d.add_argument("--out", type=Path, required=True, help="output directory")

    c = sub.add_parser("clt", help="Kolmogorov-distance rate sweep")
    _add_model_flags(c)
    c.add_argument("--n-values", type=_int_list, required=True)
    c.add_argument("--replicas", type=_positive_int, required=True)
    c.add_argument("--epsilon", type=float, default=0.1)
    c.add_argument("--seed", type=int, required=True)
    c.add_argument("--burn-in", type=int, default=100)
    c.add_argument("--grid", type=int, default=64)
    c.add_argument("--bootstrap", type=_positive_int, default=200)
    c.add_argument("--out-dir", type=Path, required=True)

    r = sub.add_parser("replay", help="re-run a manifest and compare output digests")
    r.add_argument("manifest", type=Path)
    return parser


# output flag per command and whether it names a directory
OUTPUT_FLAGS = {"sample": ("--out", False), "exact": ("--out", False),
                "decay": ("--out", True), "clt": ("--out-dir", True)}


def _params(args) -> ModelParams:
    try:
        return ModelParams(args.beta, args.gamma)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _manifest_path(out: Path, is_dir: bool) -> Path:
    return out / "manifest.json" if is_dir else out.with_name(out.name + ".manifest.json")


def _finish(manifest: RunManifest, outputs, args, start: float) -> None:
    for path in outputs:
        manifest.add_output(path)
        print(path)
    flag, is_dir = OUTPUT_FLAGS[args.command]
    out = getattr(args, flag.lstrip("-").replace("-", "_"))
    manifest.duration_seconds = time.perf_counter() - start
    print(write_json(_manifest_path(out, is_dir), manifest.to_json()))


def cmd_sample(args, argv) -> int:
    params = _params(args)
    if args.n < 3:
        raise UsageError("n must satisfy n >= 3")
    if args.burn_in < 0:
        raise UsageError("burn-in must be >= 0")
    try:
        cfg = SamplerConfig(params, args.n, args.seed, burn_in_sweeps=args.burn_in, thin_sweeps=args.thin,
                            proposal=args.proposal, heat_bath_resolution=args.resolution, chains=args.chains)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    start = time.perf_counter()
    try:
        samples, diag = run(cfg, args.samples, workers=worker_count())
    except SamplerError as exc:
        print(f"sampler error: {exc}", file=sys.stderr)
        return EXIT_SAMPLER
    args.out.parent.mkdir(parents=True, exist_ok=True)
    if args.format == "bin":
        write_samples(args.out, samples, params, args.seed)
    else:
        write_samples_csv(args.out, samples)
    print(f"acceptance={diag.acceptance_rate:.4f} tau_int={diag.integrated_autocorrelation_time:.3f} "
          f"ess={diag.effective_sample_count:.1f} thin={diag.thin_sweeps}", file=sys.stderr)
    m = RunManifest("sample", to_jsonable(params), seed=args.seed, n=args.n, replicas=args.samples,
                    tool_version=__version__, rng_algorithm=RNG_ALGORITHM, argv=argv)
    _finish(m, [args.out], args, start)
    return EXIT_OK


def cmd_exact(args, argv) -> int:
    params = _params(args)
    if args.n < 3:
        raise UsageError("n must satisfy n >= 3")
    if args.grid < 8:
        raise UsageError("grid must be >= 8")
    start = time.perf_counter()
    kernel = build_kernel(params, args.grid)
    try:
        rate = spectral_decay_rate(kernel)
    except SpectralGapError as exc:
        print(f"spectral gap error: {exc}", file=sys.stderr)
        return EXIT_GAP
    out = {"action": args.action, "params": params, "n": args.n, "grid_size": args.grid,
           "spectral_decay_rate": rate}
    if args.action == "zn":
        log_z = log_partition_function(kernel, args.n)
        out.update(log_zn=log_z, zn=math.exp(log_z) if log_z < 709 else math.inf)
    elif args.action == "moments":
        mom = exact_moments(kernel, args.n)
        lags = range(min(args.n - 1, MAX_MOMENT_LAG) + 1)
        out.update(mean=mom.mean, variance=mom.variance, cov={str(r): mom.cov(r) for r in lags})
    elif args.action == "marginal":
        dens = marginal_density(kernel, args.n, IndexCluster(1, 1, args.n))
        out.update(nodes=kernel.grid.nodes, weights=kernel.grid.weights, density=dens.values,
                   integral=dens.integral())
    else:
        try:
            out.update(sigma_n_sq=sigma_n_squared(kernel, args.n))
        except ResolutionError as exc:
            print(f"sigma_N^2 error: {exc}", file=sys.stderr)
            return EXIT_SIGMA
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_json(args.out, out)
    m = RunManifest("exact " + args.action, to_jsonable(params), n=args.n, grid_size=args.grid,
                    tool_version=__version__, argv=argv)
    _finish(m, [args.out], args, start)
    return EXIT_OK


def cmd_decay(args, argv) -> int:
    params = _params(args)
    if not 2 <= args.r_min <= args.r_max:
        raise UsageError("need 2 <= r-min <= r-max")
    if args.i_len + args.j_len + args.r_max >= args.n:
        raise UsageError("need i-len + j-len + r-max < n")
    start = time.perf_counter()
    kernel = build_kernel(params, args.grid)
    ms = decay_sweep(kernel, args.n, args.i_len, args.j_len, range(args.r_min, args.r_max + 1))
    args.out.mkdir(parents=True, exist_ok=True)
    csv_path = write_csv(args.out / "decay.csv", ["beta", "gamma", "n", "i_len", "j_len", "r", "sup_ratio"],
                         ([params.beta, params.gamma, m.n, m.i_len, m.j_len, m.r, m.sup_ratio] for m in ms))
    outputs = [csv_path]
    code = EXIT_OK
    try:
        fit = fit_decay(ms)
    except (DecayFitError, ValueError) as exc:
        print(f"decay fit failed: {exc}", file=sys.stderr)
        code = EXIT_FIT
    else:
        outputs.append(write_json(args.out / "fit.json", {
            "alpha_hat": fit.alpha_hat, "c_hat": fit.c_hat, "r_squared": fit.r_squared,
            "r_range": fit.r_range, "spectral_decay_rate": spectral_decay_rate(kernel)}))
        print(f"alpha_hat={fit.alpha_hat:.6g} r_squared={fit.r_squared:.6g}", file=sys.stderr)
    m = RunManifest("decay", to_jsonable(params), n=args.n, grid_size=args.grid,
                    tool_version=__version__, argv=argv)
    _finish(m, outputs, args, start)
    return code


def cmd_clt(args, argv) -> int:
    params = _params(args)
    if not 0 < args.epsilon < 0.25:
        raise UsageError(f"epsilon must lie in (0, 1/4), got {args.epsilon}")
    ns = args.n_values
    if len(ns) < 2 or any(b <= a for a, b in zip(ns, ns[1:])) or ns[0] < 3:
        raise UsageError("n-values must be strictly increasing, >= 3, with at least 2 entries")
    try:
        build_partition(ns[-1], args.epsilon)
    except ValueError as exc:
        raise UsageError(f"largest n cannot be partitioned: {exc}") from None
    if args.replicas < 1000:
        raise UsageError("replicas must be >= 1000")
    start = time.perf_counter()
    kernel = build_kernel(params, args.grid)
    try:
        sweep = rate_sweep(params, ns, args.replicas, args.seed, epsilon=args.epsilon, kernel=kernel,
                           burn_in_sweeps=args.burn_in, bootstrap_rounds=args.bootstrap,
                           workers=worker_count(), keep_samples=(ns[-1],), min_n_values=2,
                           min_replicas=1000)
    except ResolutionError as exc:
        print(f"sigma_N^2 error: {exc}", file=sys.stderr)
        return EXIT_SIGMA
    except SamplerError as exc:
        print(f"sampler error: {exc}", file=sys.stderr)
        return EXIT_SAMPLER
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    outputs = [write_json(out / f"clt_report_n{r.n}.json", r.to_json()) for r in sweep.reports]
    outputs.append(write_json(out / "rate.json", sweep.to_json()))
    big = ns[-1]
    diag = lemma_diagnostics(params, big, args.epsilon, sweep.samples[big], kernel)
    profile = []
    if args.replicas >= 10_000:
        cutoff = max(petrov_cutoff(big, args.epsilon), 1.0)
        t_grid = np.linspace(cutoff / 16, cutoff, 16)
        profile = petrov_integrand_profile(sweep.zeta[big], t_grid)
    outputs.append(write_json(out / "lemma_diagnostics.json",
                              {**diag.to_json(), "n": big, "epsilon": args.epsilon,
                               "petrov_profile": [list(tg) for tg in profile]}))
    print(f"fitted_rate={sweep.fitted_rate:.6g} ci=({sweep.rate_ci[0]:.4g}, {sweep.rate_ci[1]:.4g})",
          file=sys.stderr)
    m = RunManifest("clt", to_jsonable(params), seed=args.seed, n_values=ns, grid_size=args.grid,
                    replicas=args.replicas, tool_version=__version__, rng_algorithm=RNG_ALGORITHM, argv=argv)
    _finish(m, outputs, args, start)
    return EXIT_OK


def cmd_replay(args, argv) -> int:
    import json

    manifest = json.loads(args.manifest.read_text())
    old_argv = list(manifest["argv"])
    command = old_argv[0]
    flag, is_dir = OUTPUT_FLAGS[command]
    at = old_argv.index(flag)
    with tempfile.TemporaryDirectory() as tmp:
        old_out = Path(old_argv[at + 1])
        new_out = Path(tmp) / (old_out.name if not is_dir else "out")
        new_argv = old_argv[:at + 1] + [str(new_out)] + old_argv[at + 2:]
        code = main(new_argv)
        if code != EXIT_OK:
            print(f"replay run exited with {code}", file=sys.stderr)
            return code
        base = new_out if is_dir else new_out.parent
        mismatched = [name for name, digest in manifest["outputs"].items()
                      if file_digest(base / name) != digest]
    for name in mismatched:
        print(f"digest mismatch: {name}", file=sys.stderr)
    print("replay: identical" if not mismatched else "replay: differs")
    return EXIT_REPLAY_MISMATCH if mismatched else EXIT_OK


COMMANDS = {"sample": cmd_sample, "exact": cmd_exact, "decay": cmd_decay, "clt": cmd_clt, "replay": cmd_replay}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return COMMANDS[args.command](args, argv)
    except UsageError as exc:
        print(f"cchain {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        print(f"cchain {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
