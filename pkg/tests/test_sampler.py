import math
import struct

import numpy as np
import pytest
from scipy import stats

from cchain.model import DomainError, IndexCluster, ModelParams
from cchain.sampler import (HEADER, MAGIC, Proposal, SamplerConfig, _free_table, as_states, autocorrelation,
                            colour_classes, conditional_cdf, full_conditional_log_density, heat_bath_draw,
                            heat_bath_inverse_cdf, integrated_autocorrelation_time, make_rng,
                            metropolis_acceptance, read_samples, run, stationary_distribution, sweep,
                            toy_levels, toy_site_kernel, toy_target, write_samples)
from cchain.transfer import conditional_density, exact_moments, marginal_cdf, sigma_n_squared
from oracles import free_site_cdf, free_site_moment

P21 = ModelParams(2.0, 1.0)
P20 = ModelParams(2.0, 0.0)


# -- configuration ------------------------------------------------------------------

@pytest.mark.parametrize("kwargs", [
    dict(burn_in_sweeps=-1), dict(thin_sweeps=0), dict(heat_bath_resolution=128), dict(chains=0),
    dict(seed=-1), dict(seed=2 ** 64), dict(n=2), dict(proposal="gibbs"),
])
def test_config_validation(kwargs):
    base = dict(params=P21, n=8, seed=1)
    base.update(kwargs)
    with pytest.raises(ValueError):
        SamplerConfig(**base)


def test_small_resolution_allowed_for_metropolis():
    SamplerConfig(P21, 8, 1, proposal="metropolis_uniform", heat_bath_resolution=16)


# -- single-site conditional ---------------------------------------------------------------

def test_conditional_ignores_neighbours_when_free():
    y = np.linspace(0.05, 1, 20)
    a = full_conditional_log_density(P20, 0.1, 0.9, y)
    b = full_conditional_log_density(P20, 0.7, 0.3, y)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(a, -2 / y, rtol=1e-15)


def test_conditional_example():
    assert full_conditional_log_density(P21, 0.5, 0.5, 0.5) == pytest.approx(-6.0, rel=1e-15)


def test_conditional_domain():
    with pytest.raises(DomainError):
        full_conditional_log_density(P21, 0.0, 0.5, 0.5)
    with pytest.raises(DomainError):
        full_conditional_log_density(P21, 0.5, 0.5, -1.0)


def test_conditional_matches_transfer_operator(kernel):
    # on a 3-site circle the two neighbours of site 1 form one cluster J = {2, 3}
    n = 3
    x = kernel.grid.nodes
    i, j = IndexCluster(1, 1, n), IndexCluster(2, 2, n)
    res = 4096
    mid = (np.arange(res) + 0.5) / res
    for j2, j3 in [(40, 50), (20, 60), (63, 30)]:
        y2, y3 = x[j2], x[j3]
        dens = np.exp(full_conditional_log_density(P21, y3, y2, x))
        dens /= np.sum(np.exp(full_conditional_log_density(P21, y3, y2, mid))) / res
        ref = conditional_density(kernel, n, i, j, (j2, j3)).values
        np.testing.assert_allclose(dens, ref, rtol=1e-4, atol=1e-300)


def test_conditional_cdf_shape():
    edges, cdf = conditional_cdf(P21, 0.4, 0.9, 4096)
    assert edges[0] == 0.0 and edges[-1] == 1.0
    assert cdf[0] == 0.0 and cdf[-1] == 1.0
    assert np.all(np.diff(cdf) >= 0)


def test_heat_bath_kernel_matches_inverse_cdf_route():
    rng = make_rng(3, 0)
    a = np.full(100_000, 0.3)
    b = np.full(100_000, 0.8)
    fast = heat_bath_draw(P21, a, b, rng)
    slow = heat_bath_inverse_cdf(P21, 0.3, 0.8, np.random.default_rng(4).random(100_000))
    assert stats.ks_2samp(fast, slow).pvalue > 1e-3
    assert np.all((fast > 0) & (fast <= 1))


def test_heat_bath_cell_frequencies():
    res = 256
    rng = make_rng(9, 0)
    y = heat_bath_draw(P21, np.full(400_000, 0.5), np.full(400_000, 0.6), rng, res)
    edges, cdf = conditional_cdf(P21, 0.5, 0.6, res)
    counts = np.bincount(np.minimum((y * res).astype(int), res - 1), minlength=res)
    expected = np.diff(cdf) * y.size
    keep = expected > 20
    chi2 = np.sum((counts[keep] - expected[keep]) ** 2 / expected[keep])
    assert stats.chi2.sf(chi2, keep.sum() - 1) > 1e-4


def test_heat_bath_discretization_bias_budget():
    # exact mean of the cell-discretized free law against the continuum mean
    cdf, _ = _free_table(2.0, 4096)
    cell_mean = (np.arange(4096) + 0.5) / 4096
    disc_mean = np.sum(np.diff(cdf) * cell_mean)
    assert abs(disc_mean - free_site_moment(2.0, 1)) < 1e-4


def test_free_case_heat_bath_mean():
    cfg = SamplerConfig(P20, 10, 42, burn_in_sweeps=1, thin_sweeps=1, chains=1000)
    samples, _ = run(cfg, 100_000)
    y = samples.ravel()
    mean = free_site_moment(2.0, 1)
    se = math.sqrt(free_site_moment(2.0, 2) - mean ** 2) / math.sqrt(y.size)
    assert abs(y.mean() - mean) < 4 * se


def test_metropolis_same_proposal_always_accepted():
    y = np.linspace(0.05, 1, 30)
    np.testing.assert_array_equal(metropolis_acceptance(P21, 0.3, 0.6, y, y), np.ones(30))


# -- enumerable toy chain ------------------------------------------------------------------

@pytest.mark.parametrize("proposal", list(Proposal))
def test_toy_detailed_balance(proposal):
    lev = toy_levels(16)
    pi = toy_target(P21, 3, lev)
    kernels = [toy_site_kernel(P21, 3, lev, s, proposal) for s in range(3)]
    for k in kernels:
        np.testing.assert_allclose(k.sum(axis=1), 1.0, atol=1e-13)
        flow = pi[:, None] * k
        assert np.max(np.abs(flow - flow.T)) < 1e-10
    scan = kernels[0] @ kernels[1] @ kernels[2]
    assert np.max(np.abs(stationary_distribution(scan) - pi)) < 1e-10


# -- sweeps and runs ----------------------------------------------------------------------------

def test_colour_classes_cover_without_neighbours():
    for n in (3, 4, 7, 10):
        classes = colour_classes(n)
        assert sorted(np.concatenate(classes).tolist()) == list(range(n))
        for c in classes:
            s = set(c.tolist())
            assert all((i + 1) % n not in s for i in s)


def test_sweep_single_state():
    cfg = SamplerConfig(P21, 6, 1)
    from cchain.model import ChainState
    s = ChainState(np.full(6, 0.7))
    out = sweep(s, cfg, make_rng(1, 0))
    assert out.n == 6 and not np.array_equal(out.spacings, s.spacings)
    with pytest.raises(ValueError):
        sweep(ChainState(np.full(5, 0.7)), cfg, make_rng(1, 0))


def test_run_is_deterministic_and_seeded():
    cfg = SamplerConfig(P21, 12, 7, burn_in_sweeps=10, chains=3)
    a, _ = run(cfg, 30)
    b, _ = run(cfg, 30)
    assert a.tobytes() == b.tobytes()
    c, _ = run(SamplerConfig(P21, 12, 8, burn_in_sweeps=10, chains=3), 30)
    assert np.any(a[0] != c[0])


def test_run_independent_of_worker_count(monkeypatch):
    import cchain.sampler as smp
    monkeypatch.setattr(smp, "BATCH_CHAINS", 4)
    cfg = SamplerConfig(P21, 8, 5, burn_in_sweeps=5, thin_sweeps=2, chains=10)
    a, _ = run(cfg, 50, workers=1)
    b, _ = run(cfg, 50, workers=3)
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("proposal", list(Proposal))
def test_run_outputs_and_diagnostics(proposal):
    cfg = SamplerConfig(P21, 16, 3, burn_in_sweeps=20, chains=8, proposal=proposal)
    samples, diag = run(cfg, 2000)
    assert samples.shape == (2000, 16)
    assert np.all((samples > 0) & (samples <= 1))
    assert diag.integrated_autocorrelation_time >= 0.5
    assert 0 < diag.effective_sample_count <= 2000
    assert 0 <= diag.acceptance_rate <= 1
    assert len(as_states(samples[:3])) == 3


def test_integrated_autocorrelation_time_ar1():
    rng = np.random.default_rng(0)
    rho, length = 0.5, 400_000
    x = np.empty(length)
    x[0] = 0
    noise = rng.standard_normal(length)
    for t in range(1, length):
        x[t] = rho * x[t - 1] + noise[t]
    assert autocorrelation(x, 3)[1] == pytest.approx(rho, abs=0.01)
    assert integrated_autocorrelation_time(x) == pytest.approx(0.5 + rho / (1 - rho), rel=0.05)


def test_single_site_marginal_ks(kernel):
    cfg = SamplerConfig(P21, 32, 2024, chains=2000)
    samples, _ = run(cfg, 200_000)
    cdf = marginal_cdf(kernel, 32)
    assert stats.kstest(samples[:, 0], cdf).statistic < 0.005


def test_free_case_marginal_ks():
    cfg = SamplerConfig(P20, 32, 99, burn_in_sweeps=1, thin_sweeps=1, chains=2000)
    samples, _ = run(cfg, 200_000)
    assert stats.kstest(samples[:, 5], lambda t: free_site_cdf(2.0, t)).statistic < 0.005


def _chain_means(samples, chains, stat):
    per = stat(samples).reshape(-1, chains)  # rows cycle through chains
    means = per.mean(axis=0)
    return means.mean(), means.std(ddof=1) / math.sqrt(chains)


def test_total_mean_matches_exact(kernel):
    chains = 500
    cfg = SamplerConfig(P21, 32, 17, chains=chains)
    samples, _ = run(cfg, 100_000)
    est, se = _chain_means(samples, chains, lambda s: s.mean(axis=1))
    assert abs(est - exact_moments(kernel, 32).mean) < 4 * se


def test_mean_and_lag_one_covariance_n64(kernel):
    chains = 1000
    mom = exact_moments(kernel, 64)
    samples, _ = run(SamplerConfig(P21, 64, 64, chains=chains), 200_000)
    est, se = _chain_means(samples, chains, lambda s: s.mean(axis=1))
    assert abs(est - mom.mean) < 4 * se
    lag = lambda s: np.mean((s - mom.mean) * (np.roll(s, -1, axis=1) - mom.mean), axis=1)  # noqa: E731
    est, se = _chain_means(samples, chains, lag)
    assert abs(est - mom.cov(1)) < 4 * se


@pytest.mark.slow
def test_sigma_squared_against_sampler_variance(kernel):
    chains, n = 2000, 64
    mom = exact_moments(kernel, n)
    samples, diag = run(SamplerConfig(P21, n, 640, chains=chains), 1_000_000)
    assert diag.effective_sample_count >= 0.9e6
    # per-chain estimates of n * Var(sum Y / n) with the exact mean
    est, se = _chain_means(samples, chains, lambda s: n * (s.mean(axis=1) - mom.mean) ** 2)
    assert abs(est - sigma_n_squared(kernel, n)) < 4 * se


# -- sample files ---------------------------------------------------------------------------------

def test_sample_file_round_trip(tmp_path):
    data = np.random.default_rng(0).random((5, 7))
    path = tmp_path / "s.bin"
    write_samples(path, data, P21, 123)
    header, back = read_samples(path)
    assert np.array_equal(back, data)
    assert (header.n, header.count, header.seed, header.beta, header.gamma) == (7, 5, 123, 2.0, 1.0)
    raw = path.read_bytes()
    assert raw[:4] == MAGIC
    assert struct.unpack_from("<H", raw, 4)[0] == 1
    assert len(raw) == HEADER.size + 5 * 7 * 8
    assert HEADER.size == 4 + 2 + 4 + 8 + 8 + 8 + 8


def test_sample_file_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"XXXX" + bytes(HEADER.size))
    with pytest.raises(ValueError):
        read_samples(path)
