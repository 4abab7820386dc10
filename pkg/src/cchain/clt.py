"""Central-limit harness: block partitions, normalized sums, Kolmogorov distances.

``zeta = sum_i (Y_i - E Y_1) / sqrt(n sigma_n^2)`` is built from independent
chain endpoints, compared to the standard normal in Kolmogorov distance, and
the decay of that distance with n is fitted on a log-log scale.  Block-level
quantities (large blocks V_l of size p, small blocks W_l of size q) are exposed
as diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtr
from scipy.stats import kurtosis, skew

from .model import INDEX_BASE, ChainState, IndexCluster, ModelParams
from .sampler import SamplerConfig, make_rng, run
from .transfer import ResolutionError, TransferKernel, build_kernel, exact_moments, sigma_n_squared

SCHEMA_VERSION = 1
MIN_KS_SAMPLES = 1000
MIN_CF_SAMPLES = 10_000
CF_T_VALUES = (0.25, 0.5, 1.0, 2.0, 4.0)
# guards floor(n ** d) against results like 31.999999999999996
_FLOOR_GUARD = 1e-9


@dataclass(frozen=True)
class BlockPartition:
    n: int
    delta1: float
    delta2: float
    p: int
    q: int
    k: int
    v_blocks: tuple[IndexCluster, ...]
    w_blocks: tuple[IndexCluster, ...]
    remainder: IndexCluster | None

    def v_offsets(self) -> np.ndarray:
        """Array positions of V blocks, shape (k, p)."""
        return np.stack([b.offsets() for b in self.v_blocks])

    def w_offsets(self) -> np.ndarray:
        return np.stack([b.offsets() for b in self.w_blocks])

    def covered(self) -> list[int]:
        """All indices in blocks and remainder, in layout order."""
        out: list[int] = []
        for v, w in zip(self.v_blocks, self.w_blocks):
            out += v.indices() + w.indices()
        if self.remainder is not None:
            out += self.remainder.indices()
        return out


def _check_epsilon(epsilon: float):
    if not 0 < epsilon < 0.25:
        raise ValueError(f"epsilon must lie in (0, 1/4), got {epsilon!r}")


def build_partition(n: int, epsilon: float) -> BlockPartition:
    """Alternating blocks with p = floor(n^(1-2 eps)), q = floor(n^eps)."""
    _check_epsilon(epsilon)
    d1, d2 = 1 - 2 * epsilon, epsilon
    p = math.floor(n ** d1 + _FLOOR_GUARD)
    q = math.floor(n ** d2 + _FLOOR_GUARD)
    if q < 1 or p <= q:
        raise ValueError(f"need p > q >= 1, got p={p}, q={q} for n={n}, epsilon={epsilon}")
    k = n // (p + q)
    if k < 2:
        raise ValueError(f"n={n} too small for two blocks at epsilon={epsilon}")
    first = INDEX_BASE
    vs, ws = [], []
    for l in range(k):
        start = first + l * (p + q)
        vs.append(IndexCluster(start, p, n))
        ws.append(IndexCluster(start + p, q, n))
    rest = n - k * (p + q)
    remainder = IndexCluster(first + k * (p + q), rest, n) if rest else None
    return BlockPartition(n, d1, d2, p, q, k, tuple(vs), tuple(ws), remainder)


def zeta_from_sample(state, mean: float, sigma_n_sq: float):
    """``sum_i (y_i - mean) / sqrt(n sigma_n^2)``; rows of a 2-d array are separate states."""
    if not sigma_n_sq > 0:
        raise ValueError("sigma_n_sq must be positive")
    y = state.spacings if isinstance(state, ChainState) else np.asarray(state, dtype=float)
    n = y.shape[-1]
    out = (y - mean).sum(axis=-1) / math.sqrt(n * sigma_n_sq)
    return float(out) if np.ndim(out) == 0 else out


def ks_distance(zeta_samples) -> float:
    """Kolmogorov distance to the standard normal from the order statistics.

    ``Phi`` is ``scipy.special.ndtr`` (Cephes, double precision).
    """
    z = np.sort(np.asarray(zeta_samples, dtype=float))
    m = z.size
    if m < MIN_KS_SAMPLES:
        raise ValueError(f"ks_distance needs at least {MIN_KS_SAMPLES} samples, got {m}")
    phi = ndtr(z)
    i = np.arange(1, m + 1)
    return float(max(np.max(i / m - phi), np.max(phi - (i - 1) / m)))


def petrov_integrand_profile(zeta_samples, t_grid) -> list[tuple[float, float]]:
    """``|E exp(i t zeta) - exp(-t^2/2)| / |t|`` at each t."""
    z = np.asarray(zeta_samples, dtype=float)
    if z.size < MIN_CF_SAMPLES:
        raise ValueError(f"need at least {MIN_CF_SAMPLES} samples, got {z.size}")
    out = []
    for t in t_grid:
        t = float(t)
        if t == 0:
            raise ValueError("t_grid must exclude 0")
        cf = complex(np.mean(np.cos(t * z)), np.mean(np.sin(t * z)))
        out.append((t, abs(cf - math.exp(-t * t / 2)) / abs(t)))
    return out


def petrov_cutoff(n: int, epsilon: float) -> float:
    """Largest |t| worth profiling: ``n^(1/4 - epsilon)``."""
    _check_epsilon(epsilon)
    return n ** (0.25 - epsilon)


# -- reports --------------------------------------------------------------------

@dataclass(frozen=True)
class ZetaDigest:
    mean: float
    variance: float
    skewness: float
    excess_kurtosis: float

    @classmethod
    def of(cls, z: np.ndarray) -> "ZetaDigest":
        return cls(float(np.mean(z)), float(np.var(z, ddof=1)),
                   float(skew(z)), float(kurtosis(z, fisher=True)))


@dataclass(frozen=True)
class CltReport:
    params: ModelParams
    n: int
    sigma_n_sq: float
    num_replicas: int
    ks_distance: float
    zeta_samples_digest: ZetaDigest
    epsilon: float
    mean: float = math.nan
    seed: int = 0
    burn_in_sweeps: int = 0
    grid_size: int = 0
    partition: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return d


@dataclass(frozen=True)
class RateSweep:
    reports: list[CltReport]
    fitted_rate: float
    rate_ci: tuple[float, float]
    samples: dict = field(default_factory=dict, repr=False)
    zeta: dict = field(default_factory=dict, repr=False)

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "n_values": [r.n for r in self.reports],
            "ks_distance": [r.ks_distance for r in self.reports],
            "fitted_rate": self.fitted_rate,
            "rate_ci": list(self.rate_ci),
            "ci_level": 0.95,
        }


def fit_rate(n_values, ks_values) -> float:
    """Least-squares slope of log(ks) against log(n)."""
    return float(np.polyfit(np.log(n_values), np.log(ks_values), 1)[0])


def bootstrap_rate(n_values, zetas, rounds: int, rng: np.random.Generator) -> tuple[float, float]:
    """Percentile 95% interval of the fitted slope, resampling replicas within each n."""
    slopes = np.empty(rounds)
    for b in range(rounds):
        ks = [ks_distance(z[rng.integers(0, z.size, z.size)]) for z in zetas]
        slopes[b] = fit_rate(n_values, ks)
    lo, hi = np.percentile(slopes, [2.5, 97.5])
    return float(lo), float(hi)


def derived_seed(seed: int, n: int) -> int:
    return int(np.random.SeedSequence([seed, n]).generate_state(1, np.uint64)[0])


def rate_sweep(params: ModelParams, n_values, replicas_per_n: int, seed: int, *,
               epsilon: float = 0.1, grid_size: int = 64, burn_in_sweeps: int = 100,
               bootstrap_rounds: int = 200, workers: int = 1, keep_samples=(),
               kernel: TransferKernel | None = None, min_replicas: int = 10_000,
               min_n_values: int = 4) -> RateSweep:
    """Kolmogorov distance of zeta_n for each n and the fitted log-log slope.

    Each replica is the endpoint of its own chain, started from the
    neighbour-free product law and run for ``burn_in_sweeps`` heat-bath sweeps.
    Sample arrays for the n listed in ``keep_samples`` are returned.
    """
    n_values = [int(n) for n in n_values]
    if len(n_values) < min_n_values or any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise ValueError(f"n_values must be strictly increasing with at least {min_n_values} entries")
    if replicas_per_n < min_replicas:
        raise ValueError(f"replicas_per_n must be >= {min_replicas}")
    _check_epsilon(epsilon)
    kernel = kernel or build_kernel(params, grid_size)
    reports, zetas, kept = [], [], {}
    for n in n_values:
        mom = exact_moments(kernel, n)
        s2 = sigma_n_squared(kernel, n)
        n_seed = derived_seed(seed, n)
        cfg = SamplerConfig(params, n, n_seed, burn_in_sweeps=burn_in_sweeps,
                            thin_sweeps=1, chains=replicas_per_n)
        samples, _ = run(cfg, replicas_per_n, workers=workers)
        z = zeta_from_sample(samples, mom.mean, s2)
        try:
            part = build_partition(n, epsilon)
            meta = {"p": part.p, "q": part.q, "k": part.k,
                    "remainder": part.remainder.len if part.remainder else 0}
        except ValueError:
            meta = {}
        reports.append(CltReport(params, n, s2, replicas_per_n, ks_distance(z), ZetaDigest.of(z),
                                 epsilon, mom.mean, n_seed, burn_in_sweeps, kernel.m, meta))
        zetas.append(z)
        if n in keep_samples:
            kept[n] = samples
    rate = fit_rate(n_values, [r.ks_distance for r in reports])
    ci = bootstrap_rate(n_values, zetas, bootstrap_rounds, make_rng(seed, 0xB007))
    return RateSweep(reports, rate, ci, kept, dict(zip(n_values, zetas)))


# -- lemma-level diagnostics ------------------------------------------------------

@dataclass(frozen=True)
class LemmaDiagnostics:
    c3_ratio: float
    block_dependence_gap: float
    normalization_drift: float
    third_moment_ratio: float
    variance_lower_ratio: float

    def to_json(self) -> dict:
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return d


def lemma_diagnostics(params: ModelParams, n: int, epsilon: float, samples,
                      kernel: TransferKernel) -> LemmaDiagnostics:
    """Empirical block-level quantities from independent chain states.

    Block-sum statistics are pooled over all k large blocks, which share one
    law by circular stationarity.  The characteristic-function gap uses block
    sums scaled by ``1 / sqrt(n sigma_n^2)`` so t is on the zeta scale.
    """
    if kernel.params != params:
        raise ValueError("kernel parameters do not match")
    part = build_partition(n, epsilon)
    if isinstance(samples, (list, tuple)):
        samples = [s.spacings if isinstance(s, ChainState) else s for s in samples]
    y = np.asarray(samples, dtype=float)
    if y.ndim != 2 or y.shape[1] != n:
        raise ValueError("samples must be states of length n")
    mom = exact_moments(kernel, n)
    s2 = sigma_n_squared(kernel, n)
    x = y - mom.mean
    v_sums = x[:, part.v_offsets()].sum(axis=2)  # (replicas, k)
    w_total = x[:, part.w_offsets().ravel()].sum(axis=1)

    c3 = float(np.mean(np.abs(w_total)) / math.sqrt(part.k * part.q))

    scale = 1.0 / math.sqrt(n * s2)
    sv = v_sums * scale
    gaps = []
    for t in CF_T_VALUES:
        joint = np.mean(np.exp(1j * t * sv.sum(axis=1)))
        prod = np.prod(np.mean(np.exp(1j * t * sv), axis=0))
        gaps.append(abs(joint - prod))

    second = float(np.mean(v_sums ** 2))
    drift = abs(1.0 - second / (part.p * s2))
    eps6 = (1.0 - epsilon) / 2.0
    third = float(np.mean(np.abs(v_sums) ** 3)) / part.p ** (1.0 + eps6 / 2.0)
    return LemmaDiagnostics(c3, float(max(gaps)), drift, third, second / part.p)


def exact_block_variance(kernel: TransferKernel, n: int, p: int) -> float:
    """``Var(Y_1 + ... + Y_p)`` on a circle of n sites, from exact covariances."""
    cov = exact_moments(kernel, n).covariances
    lags = np.arange(1, p)
    return float(p * cov[0] + 2.0 * np.sum((p - lags) * cov[lags]))


def exact_normalization_drift(kernel: TransferKernel, n: int, epsilon: float) -> float:
    """The value ``normalization_drift`` estimates, without Monte Carlo noise."""
    part = build_partition(n, epsilon)
    s2 = sigma_n_squared(kernel, n)
    return abs(1.0 - exact_block_variance(kernel, n, part.p) / (part.p * s2))


__all__ = [
    "SCHEMA_VERSION", "BlockPartition", "CltReport", "LemmaDiagnostics", "RateSweep", "ZetaDigest",
    "build_partition", "zeta_from_sample", "ks_distance", "petrov_integrand_profile", "petrov_cutoff",
    "fit_rate", "bootstrap_rate", "rate_sweep", "lemma_diagnostics", "exact_block_variance",
    "exact_normalization_drift", "ResolutionError",
]
