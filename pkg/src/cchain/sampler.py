"""Single-site MCMC for the circular chain.

Many independent chains are advanced together as rows of one array.  Sites are
updated colour class by colour class (even sites, odd sites, and for odd n the
last site on its own); sites inside one class never neighbour each other, so a
class update is the same as updating its sites one after another.

Two update rules are provided:

* ``heat_bath_grid``: exact draw from the single-site conditional discretized
  into ``heat_bath_resolution`` equal cells (piecewise-constant density taking
  the midpoint value in each cell).  Drawn by proposing from the neighbour-free
  factor ``exp(-beta/y)`` through its tabulated inverse CDF and accepting with
  the ratio of the neighbour factor to its maximum.
* ``metropolis_uniform``: uniform proposal on (0, 1], Metropolis acceptance.
"""

from __future__ import annotations

import enum
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numba
import numpy as np

from .model import ChainState, DomainError, ModelParams, sample_free_site

RNG_ALGORITHM = "numpy.Philox4x64-10/SeedSequence"
BATCH_CHAINS = 512
PILOT_SWEEPS = 400
PILOT_CHAINS = 64
MAX_AUTO_THIN = 64
THIN_TARGET_ACF = 0.1
PILOT_SPAWN_KEY = 0xFFFFFFFF


class Proposal(str, enum.Enum):
    HEAT_BATH_GRID = "heat_bath_grid"
    METROPOLIS_UNIFORM = "metropolis_uniform"


class SamplerError(RuntimeError):
    """The sampler produced a state with non-finite energy."""


@dataclass(frozen=True)
class SamplerConfig:
    """Sampler settings.

    ``thin_sweeps=None`` picks the thinning from a pilot run so that the lag-1
    autocorrelation of the retained ``sum(Y)`` series is below 0.1.  ``chains``
    independent chains run side by side; retained rows interleave them.
    """

    params: ModelParams
    n: int
    seed: int
    burn_in_sweeps: int = 100
    thin_sweeps: int | None = None
    proposal: Proposal = Proposal.HEAT_BATH_GRID
    heat_bath_resolution: int = 4096
    chains: int = 1

    def __post_init__(self):
        object.__setattr__(self, "proposal", Proposal(self.proposal))
        if self.n < 3:
            raise ValueError("n must be >= 3")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.burn_in_sweeps < 0:
            raise ValueError("burn_in_sweeps must be >= 0")
        if self.thin_sweeps is not None and self.thin_sweeps < 1:
            raise ValueError("thin_sweeps must be >= 1")
        if self.proposal is Proposal.HEAT_BATH_GRID and self.heat_bath_resolution < 256:
            raise ValueError("heat_bath_resolution must be >= 256")
        if self.chains < 1:
            raise ValueError("chains must be >= 1")


@dataclass(frozen=True)
class SamplerDiagnostics:
    acceptance_rate: float
    integrated_autocorrelation_time: float
    effective_sample_count: float
    thin_sweeps: int


# -- single-site conditional --------------------------------------------------

def full_conditional_log_density(params: ModelParams, y_prev, y_next, y):
    """Unnormalized ``log f(y | neighbours) = -beta/y - gamma/(y_prev+y) - gamma/(y+y_next)``."""
    arrs = [np.asarray(v, dtype=float) for v in (y_prev, y_next, y)]
    for v in arrs:
        if np.any(~(v > 0)) or np.any(v > 1):
            raise DomainError("spacings must lie in (0, 1]")
    a, b, y = arrs
    out = -params.beta / y - params.gamma / (a + y) - params.gamma / (y + b)
    return float(out) if out.ndim == 0 else out


def _cell_midpoints(resolution: int) -> np.ndarray:
    return (np.arange(resolution) + 0.5) / resolution


def conditional_cdf(params: ModelParams, y_prev: float, y_next: float, resolution: int = 4096):
    """Cell edges and CDF of the discretized single-site conditional.

    The density is constant on each of ``resolution`` equal cells of (0, 1],
    taking its midpoint value, so the CDF is piecewise linear between edges.
    """
    mid = _cell_midpoints(resolution)
    logf = full_conditional_log_density(params, y_prev, y_next, mid)
    mass = np.exp(logf - logf.max())
    cdf = np.concatenate([[0.0], np.cumsum(mass)])
    cdf /= cdf[-1]
    return np.linspace(0.0, 1.0, resolution + 1), cdf


def heat_bath_inverse_cdf(params: ModelParams, y_prev: float, y_next: float, u,
                          resolution: int = 4096) -> np.ndarray:
    """Direct inverse-CDF draw from the discretized conditional (reference route)."""
    edges, cdf = conditional_cdf(params, y_prev, y_next, resolution)
    u = np.asarray(u, dtype=float)
    j = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, resolution - 1)
    frac = (u - cdf[j]) / (cdf[j + 1] - cdf[j])
    return np.clip(edges[j] + frac / resolution, np.nextafter(0.0, 1.0), 1.0)


@lru_cache(maxsize=16)
def _free_table(beta: float, resolution: int):
    """CDF over cells for the neighbour-free factor ``exp(-beta / y)``, plus a guide table.

    ``guide[k]`` is the cell holding CDF level k / resolution, so the cell of a
    uniform u is found by a short forward scan from ``guide[int(u * resolution)]``.
    """
    mid = _cell_midpoints(resolution)
    mass = np.exp(-beta / mid + beta)  # scaled so the largest cell is ~1
    cdf = np.concatenate([[0.0], np.cumsum(mass)])
    cdf /= cdf[-1]
    levels = np.arange(resolution) / resolution
    guide = np.clip(np.searchsorted(cdf, levels, side="right") - 1, 0, resolution - 1)
    for arr in (cdf, guide):
        arr.flags.writeable = False
    return cdf, guide


@numba.njit(cache=True)
def _heat_bath_kernel(a, b, out, start, cdf, guide, gamma, resolution, u):
    """Fill ``out[start:]`` by rejection, two uniforms per attempt; returns sites done."""
    tiny = np.nextafter(0.0, 1.0)
    pos = 0
    i = start
    while i < out.size:
        if pos + 2 > u.size:
            return i
        u1 = u[pos]
        u2 = u[pos + 1]
        pos += 2
        lo = guide[int(u1 * resolution)]
        while lo < resolution - 1 and cdf[lo + 1] <= u1:
            lo += 1
        frac = (u1 - cdf[lo]) / (cdf[lo + 1] - cdf[lo])
        if gamma > 0.0:
            mid = (lo + 0.5) / resolution
            log_acc = -gamma * (1.0 / (a[i] + mid) + 1.0 / (mid + b[i])
                                - 1.0 / (a[i] + 1.0) - 1.0 / (1.0 + b[i]))
            if not u2 < np.exp(log_acc):
                continue
        out[i] = max((lo + frac) / resolution, tiny)
        i += 1
    return i


def heat_bath_draw(params: ModelParams, y_prev: np.ndarray, y_next: np.ndarray,
                   rng: np.random.Generator, resolution: int = 4096) -> np.ndarray:
    """Vectorized exact draws from the discretized conditionals, by rejection.

    Proposals come from the tabulated inverse CDF of ``exp(-beta/y)``; the
    neighbour factor ``exp(-gamma/(y_prev+y) - gamma/(y+y_next))`` at the cell
    midpoint, divided by its value at y = 1 (its maximum), is the acceptance
    probability.  Uniforms are drawn from ``rng`` in blocks and consumed in a
    fixed order, so results depend only on the generator state.
    """
    cdf, guide = _free_table(params.beta, resolution)
    a = np.ascontiguousarray(y_prev, dtype=float).reshape(-1)
    b = np.ascontiguousarray(y_next, dtype=float).reshape(-1)
    out = np.empty(a.size)
    done = 0
    while done < a.size:
        u = rng.random(2 * (a.size - done) + (a.size - done) // 2 + 64)
        done = _heat_bath_kernel(a, b, out, done, cdf, guide, float(params.gamma), resolution, u)
    return out.reshape(np.shape(y_prev))


def metropolis_acceptance(params: ModelParams, y_prev, y_next, y, y_new):
    """``min(1, f(y_new) / f(y))`` for the single-site conditional."""
    delta = (full_conditional_log_density(params, y_prev, y_next, y_new)
             - full_conditional_log_density(params, y_prev, y_next, y))
    return np.minimum(1.0, np.exp(np.minimum(delta, 0.0)))


def metropolis_step(params: ModelParams, y_prev, y_next, y, rng: np.random.Generator):
    """One uniform-proposal Metropolis update; returns (new values, accepted mask)."""
    y_new = 1.0 - rng.random(y.shape)  # uniform on (0, 1]
    accept = rng.random(y.shape) < metropolis_acceptance(params, y_prev, y_next, y, y_new)
    return np.where(accept, y_new, y), accept


# -- sweeps ---------------------------------------------------------------------

@lru_cache(maxsize=64)
def colour_classes(n: int) -> tuple[np.ndarray, ...]:
    """Site classes with no two neighbouring sites in the same class."""
    if n % 2 == 0:
        return (np.arange(0, n, 2), np.arange(1, n, 2))
    return (np.arange(0, n - 1, 2), np.arange(1, n - 1, 2), np.array([n - 1]))


def sweep_array(y: np.ndarray, config: SamplerConfig, rng: np.random.Generator) -> int:
    """In-place sweep of every row of ``y`` (shape chains x n); returns accept count."""
    n = y.shape[1]
    accepted = 0
    for cls in colour_classes(n):
        a = y[:, (cls - 1) % n]
        b = y[:, (cls + 1) % n]
        if config.proposal is Proposal.HEAT_BATH_GRID:
            y[:, cls] = heat_bath_draw(config.params, a, b, rng, config.heat_bath_resolution)
        else:
            new, acc = metropolis_step(config.params, a, b, y[:, cls], rng)
            y[:, cls] = new
            accepted += int(acc.sum())
    return accepted


def sweep(state: ChainState, config: SamplerConfig, rng: np.random.Generator) -> ChainState:
    """One systematic-scan update of every site."""
    if state.n != config.n:
        raise ValueError("state length does not match config.n")
    y = state.spacings.copy()[None, :]
    sweep_array(y, config, rng)
    return ChainState(y[0])


def make_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(stream,))))


# -- diagnostics ---------------------------------------------------------------

def autocorrelation(series: np.ndarray, max_lag: int | None = None) -> np.ndarray:
    """Normalized autocorrelation along the last axis, averaged over leading axes."""
    x = np.asarray(series, dtype=float)
    x = x.reshape(-1, x.shape[-1])
    length = x.shape[1]
    x = x - x.mean(axis=1, keepdims=True)
    size = 1 << (2 * length - 1).bit_length()
    f = np.fft.rfft(x, size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), size, axis=1)[:, :length].mean(axis=0)
    if acov[0] <= 0:
        return np.zeros(length if max_lag is None else max_lag + 1)
    rho = acov / acov[0]
    return rho if max_lag is None else rho[: max_lag + 1]


def integrated_autocorrelation_time(series: np.ndarray, window_factor: float = 5.0) -> float:
    """``1/2 + sum_t rho(t)`` with the automatic window ``M >= c * tau(M)``."""
    rho = autocorrelation(series)
    tau = 0.5
    for lag in range(1, rho.size):
        tau += rho[lag]
        if lag >= window_factor * tau:
            break
    return max(float(tau), 0.5)


def _pilot_thin(config: SamplerConfig) -> int:
    rng = make_rng(config.seed, PILOT_SPAWN_KEY)
    y = sample_free_site(config.params.beta, (min(config.chains, PILOT_CHAINS), config.n), rng)
    for _ in range(config.burn_in_sweeps):
        sweep_array(y, config, rng)
    sums = np.empty((y.shape[0], PILOT_SWEEPS))
    for t in range(PILOT_SWEEPS):
        sweep_array(y, config, rng)
        sums[:, t] = y.sum(axis=1)
    rho = autocorrelation(sums, MAX_AUTO_THIN)
    below = np.nonzero(rho[1:] < THIN_TARGET_ACF)[0]
    return int(below[0] + 1) if below.size else MAX_AUTO_THIN


def _run_batch(config: SamplerConfig, batch: int, chains: int, per_chain: int, thin: int):
    rng = make_rng(config.seed, batch)
    y = sample_free_site(config.params.beta, (chains, config.n), rng)
    accepted = 0
    for _ in range(config.burn_in_sweeps):
        accepted += sweep_array(y, config, rng)
    out = np.empty((per_chain, chains, config.n))
    for t in range(per_chain):
        for _ in range(thin):
            accepted += sweep_array(y, config, rng)
        out[t] = y
    sweeps = config.burn_in_sweeps + per_chain * thin
    return out, accepted, sweeps * chains * config.n


def run(config: SamplerConfig, num_samples: int, workers: int = 1):
    """Draw ``num_samples`` retained states.

    Returns ``(samples, diagnostics)`` with samples as a (num_samples, n) array
    whose rows cycle through the chains at each retained time.  Chains are
    processed in batches with independent Philox streams keyed by
    ``(seed, batch)``; the output does not depend on ``workers``.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    thin = config.thin_sweeps if config.thin_sweeps is not None else _pilot_thin(config)
    per_chain = -(-num_samples // config.chains)
    sizes = [min(BATCH_CHAINS, config.chains - s) for s in range(0, config.chains, BATCH_CHAINS)]
    jobs = [(config, b, c, per_chain, thin) for b, c in enumerate(sizes)]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda j: _run_batch(*j), jobs))
    else:
        results = [_run_batch(*j) for j in jobs]
    stacked = np.concatenate([r[0] for r in results], axis=1)  # (per_chain, chains, n)
    samples = stacked.reshape(-1, config.n)[:num_samples]
    if not np.all(np.isfinite(1.0 / samples)) or np.any(samples > 1):
        raise SamplerError("non-finite energy in sampled states")
    accepted = sum(r[1] for r in results)
    proposals = sum(r[2] for r in results)
    acc_rate = accepted / proposals if config.proposal is Proposal.METROPOLIS_UNIFORM else 1.0
    if per_chain >= 2:
        tau = integrated_autocorrelation_time(stacked.sum(axis=2).T)
    else:
        tau = 0.5  # one retained state per chain: independent replicas
    ess = min(samples.shape[0], samples.shape[0] / (2 * tau))
    return samples, SamplerDiagnostics(acc_rate, tau, ess, thin)


def as_states(samples: np.ndarray) -> list[ChainState]:
    return [ChainState(row) for row in samples]


def with_chains(config: SamplerConfig, chains: int) -> SamplerConfig:
    return replace(config, chains=chains)


# -- enumerable toy chain --------------------------------------------------------

def toy_levels(count: int = 16) -> np.ndarray:
    return (np.arange(count) + 0.5) / count


def toy_target(params: ModelParams, n: int, levels: np.ndarray) -> np.ndarray:
    """Normalized Gibbs weights on the level lattice, flattened in C order."""
    grids = np.meshgrid(*([levels] * n), indexing="ij")
    y = np.stack([g.reshape(-1) for g in grids], axis=1)
    y_next = np.roll(y, -1, axis=1)
    logw = -np.sum(params.beta / y + params.gamma / (y + y_next), axis=1)
    w = np.exp(logw - logw.max())
    return w / w.sum()


def toy_site_kernel(params: ModelParams, n: int, levels: np.ndarray, site: int,
                    proposal: Proposal = Proposal.METROPOLIS_UNIFORM) -> np.ndarray:
    """Transition matrix of one single-site update on the level lattice.

    Metropolis proposes a level uniformly and accepts with
    :func:`metropolis_acceptance`; heat bath redraws the site from its
    conditional restricted to the levels.
    """
    count = levels.size
    states = np.array(np.unravel_index(np.arange(count ** n), (count,) * n)).T
    prev = levels[states[:, (site - 1) % n]]
    nxt = levels[states[:, (site + 1) % n]]
    cur = levels[states[:, site]]
    size = count ** n
    p = np.zeros((size, size))
    stride = count ** (n - 1 - site)
    base = np.arange(size) - states[:, site] * stride
    if proposal is Proposal.METROPOLIS_UNIFORM:
        for k, lev in enumerate(levels):
            acc = metropolis_acceptance(params, prev, nxt, cur, np.full(size, lev)) / count
            p[np.arange(size), base + k * stride] += acc
        p[np.arange(size), np.arange(size)] += 1.0 - p.sum(axis=1)
    else:
        logf = full_conditional_log_density(params, prev[:, None], nxt[:, None], levels[None, :])
        cond = np.exp(logf - logf.max(axis=1, keepdims=True))
        cond /= cond.sum(axis=1, keepdims=True)
        for k in range(count):
            p[np.arange(size), base + k * stride] += cond[:, k]
    return p


def stationary_distribution(p: np.ndarray) -> np.ndarray:
    """Left Perron vector of a stochastic matrix, normalized to sum 1."""
    import scipy.linalg

    a = p.T - np.eye(p.shape[0])
    a[-1, :] = 1.0
    rhs = np.zeros(p.shape[0])
    rhs[-1] = 1.0
    return scipy.linalg.solve(a, rhs)


# -- binary sample files --------------------------------------------------------

MAGIC = b"CCHN"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHIQQdd")


@dataclass(frozen=True)
class SampleHeader:
    n: int
    count: int
    seed: int
    beta: float
    gamma: float
    version: int = FORMAT_VERSION


def write_samples(path, samples: np.ndarray, params: ModelParams, seed: int) -> None:
    samples = np.ascontiguousarray(samples, dtype="<f8")
    count, n = samples.shape
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, FORMAT_VERSION, n, count, seed, params.beta, params.gamma))
        fh.write(samples.tobytes())


def read_samples(path) -> tuple[SampleHeader, np.ndarray]:
    raw = Path(path).read_bytes()
    magic, version, n, count, seed, beta, gamma = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a chain sample file")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported sample format version {version}")
    body = np.frombuffer(raw, dtype="<f8", offset=HEADER.size)
    if body.size != n * count:
        raise ValueError(f"{path}: truncated sample file")
    return SampleHeader(n, count, seed, beta, gamma, version), body.reshape(count, n).astype(float)

