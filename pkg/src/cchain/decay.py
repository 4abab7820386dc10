"""Correlation decay between index clusters.

For clusters I and J the conditional-to-marginal ratio ``f(y_I | y_J) / f(y_I)``
depends only on the four endpoint spacings: first and last of I, first and last
of J.  With ``A_s`` the scaled chained kernel (see ``TransferKernel.scaled``),

    ratio = Z * A_r(u2, u3) * A_r'(u4, u1) / (A_{n-|I|}(u2, u1) * A_{n-|J|}(u4, u3))

where r and r' are the two gaps.  Both products share the same Perron term, so
the deviation ``ratio - 1`` is assembled from subleading pieces only and keeps
its relative accuracy far below machine epsilon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import IndexCluster, ModelParams, cluster_gaps, sample_free_site
from .transfer import TransferKernel, build_grid, conditional_density, marginal_density


class DecayFitError(ValueError):
    """A decay fit was asked to take the log of a nonpositive ratio."""


@dataclass(frozen=True)
class DecayMeasurement:
    params: ModelParams
    n: int
    i_len: int
    j_len: int
    r: int
    sup_ratio: float


@dataclass(frozen=True)
class DecayFit:
    alpha_hat: float
    c_hat: float
    r_range: tuple[int, int]
    r_squared: float

    def envelope(self, r) -> np.ndarray:
        return self.c_hat * np.exp(-self.alpha_hat * np.asarray(r, dtype=float))


def place_clusters(n: int, i_len: int, j_len: int, r: int, shift: int = 0):
    """I starting at site 1 (plus ``shift``) and J after a gap of r sites."""
    if i_len + j_len + r > n:
        raise ValueError(f"clusters of sizes {i_len}, {j_len} with gap {r} do not fit on {n} sites")
    i_cluster = IndexCluster(1, i_len, n).shifted(shift)
    j_cluster = IndexCluster(1 + i_len + r, j_len, n).shifted(shift)
    return i_cluster, j_cluster


def ratio_deviation(kernel: TransferKernel, n: int, i_len: int, j_len: int,
                    gap: int, gap_back: int, u1: int) -> np.ndarray:
    """``ratio - 1`` for a fixed first-of-I node ``u1``.

    Returns an array over the remaining free endpoint nodes, in the order
    (u2, u3, u4) with singleton clusters collapsing u2 onto u1 and u4 onto u3.
    """
    lead = np.outer(kernel.phi[:, 0], kernel.phi[:, 0])
    tails = {s: kernel.scaled_tail(s) for s in {gap, gap_back, n - i_len, n - j_len}}
    z_tail = math.fsum((kernel.mu[1:] ** n).tolist())

    da, db = tails[gap], tails[gap_back]
    dc, dd = tails[n - i_len], tails[n - j_len]
    m = kernel.m

    # index helpers: arrays shaped over (u2, u3, u4), singletons keep size 1
    u2 = np.arange(m)[:, None, None] if i_len > 1 else np.array(u1).reshape(1, 1, 1)
    u3 = np.arange(m)[None, :, None]
    u4 = np.arange(m)[None, None, :] if j_len > 1 else u3

    a_d, b_d = da[u2, u3], db[u4, u1]
    c_d, d_d = dc[u2, u1], dd[u4, u3]
    a_p, b_p = lead[u2, u3], lead[u4, u1]
    c_p, d_p = lead[u2, u1], lead[u4, u3]
    num = (z_tail * (a_p + a_d) * (b_p + b_d)
           + a_p * b_d + a_d * b_p + a_d * b_d
           - c_p * d_d - c_d * d_p - c_d * d_d)
    den = (c_p + c_d) * (d_p + d_d)
    return num / den


def measure_ratio(kernel: TransferKernel, n: int, i_len: int, j_len: int, r: int,
                  shift: int = 0) -> DecayMeasurement:
    """Grid supremum of ``|f(y_I | y_J) / f(y_I) - 1|`` for clusters r sites apart."""
    if i_len not in (1, 2) or j_len not in (1, 2):
        raise ValueError("cluster sizes are limited to 1 or 2")
    if not i_len + j_len + r < n:
        raise ValueError("need i_len + j_len + r < n")
    i_cluster, j_cluster = place_clusters(n, i_len, j_len, r, shift)
    gap, gap_back = cluster_gaps(i_cluster, j_cluster)
    sup = 0.0
    for u1 in range(kernel.m):
        dev = ratio_deviation(kernel, n, i_len, j_len, gap, gap_back, u1)
        sup = max(sup, float(np.max(np.abs(dev))))
    return DecayMeasurement(kernel.params, n, i_len, j_len, gap, sup)


def sup_ratio_from_densities(kernel: TransferKernel, n: int, i_cluster: IndexCluster,
                             j_cluster: IndexCluster) -> float:
    """Same supremum computed from the full conditional and marginal densities.

    Slow; it walks every grid value of y_J.  Meant as a cross-check.
    """
    marg = marginal_density(kernel, n, i_cluster).values
    ok = marg > 1e-280
    sup = 0.0
    for y_j in np.ndindex(*(kernel.m,) * j_cluster.len):
        cond = conditional_density(kernel, n, i_cluster, j_cluster, y_j).values
        sup = max(sup, float(np.max(np.abs(cond[ok] / marg[ok] - 1.0))))
    return sup


def fit_decay(measurements: list[DecayMeasurement]) -> DecayFit:
    """Least-squares line through ``log(sup_ratio)`` against r."""
    if len(measurements) < 4:
        raise ValueError("a decay fit needs at least 4 measurements")
    keys = {(m.params, m.n, m.i_len, m.j_len) for m in measurements}
    if len(keys) != 1:
        raise ValueError("measurements mix parameters, chain lengths or cluster sizes")
    if measurements[0].params.gamma == 0:
        raise DecayFitError("gamma = 0 makes clusters independent (sup_ratio is rounding noise); "
                            "use the independence check instead of a decay fit")
    r = np.array([m.r for m in measurements], dtype=float)
    y = np.array([m.sup_ratio for m in measurements], dtype=float)
    if np.any(~(y > 0)):
        raise DecayFitError("sup_ratio <= 0 cannot enter the log fit; "
                            "this is the gamma = 0 regime, use the independence check")
    logy = np.log(y)
    slope, intercept = np.polyfit(r, logy, 1)
    resid = logy - (slope * r + intercept)
    ss_tot = float(np.sum((logy - logy.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(float(-slope), float(math.exp(intercept)),
                    (int(r.min()), int(r.max())), min(max(r2, 0.0), 1.0))


def decay_sweep(kernel: TransferKernel, n: int, i_len: int, j_len: int, r_values) -> list[DecayMeasurement]:
    return [measure_ratio(kernel, n, i_len, j_len, int(r)) for r in r_values]


# -- Delta^r contraction -------------------------------------------------------

MAX_DELTA_R = 6


@dataclass(frozen=True)
class DeltaCheck:
    r: int
    lhs: float
    rhs_shape: float
    ratio: float
    ratio_sequence_decreasing: bool


def delta(t: np.ndarray, z) -> np.ndarray:
    """``Delta(z)`` for a chained-kernel matrix ``t`` and 8 index arrays ``z``."""
    z1, z2, z3, z4, z5, z6, z7, z8 = z
    return (t[z1, z2] * t[z3, z4] * t[z5, z6] * t[z7, z8]
            - t[z1, z4] * t[z3, z2] * t[z5, z8] * t[z7, z6])


def _delta_lhs_scaled(kernel: TransferKernel, r: int, m8: int) -> float:
    """Reduced-grid value of ``int prod exp(-beta/z_i) |Deltahat^r(z)| dz / lam_1^(4(r+1))``.

    The endpoint factors of the four T^r values combine with the
    ``exp(-beta/(2 z_i))`` weights into ``exp(-beta/z_i)`` per coordinate.
    """
    small = build_grid(m8)
    z = small.nodes
    t = (kernel.phi_at(z) * kernel.mu ** (r - 1)) @ kernel.phi_at(z).T
    w = small.weights * np.exp(-kernel.params.beta / z)
    # the 8-d integrand splits into two identical 4-index halves:
    # Delta = A(z1..z4) A(z5..z8) - A'(z1..z4) A'(z5..z8)
    idx = np.indices((m8,) * 4).reshape(4, -1)
    a = t[idx[0], idx[1]] * t[idx[2], idx[3]]
    a_swap = t[idx[0], idx[3]] * t[idx[2], idx[1]]
    wa = w[idx[0]] * w[idx[1]] * w[idx[2]] * w[idx[3]]
    total = 0.0
    chunk = 512
    for s in range(0, a.size, chunk):
        block = np.abs(a[s:s + chunk, None] * a[None, :] - a_swap[s:s + chunk, None] * a_swap[None, :])
        total += float(wa[s:s + chunk] @ block @ wa)
    return total


def _rhs_base_scaled(kernel: TransferKernel, r: int) -> float:
    """``int exp(-beta/2u) That^{floor(r/2)}(u,v) exp(-beta/2v) du dv / lam_1^(floor(r/2)+1)``."""
    w = kernel.tilted_weights
    return float(w @ kernel.scaled(r // 2) @ w)


def _delta_ratio_log(kernel: TransferKernel, r: int, m8: int) -> tuple[float, float, float]:
    log_l1 = math.log(kernel.lambda1)
    lhs_s = _delta_lhs_scaled(kernel, r, m8)
    base = _rhs_base_scaled(kernel, r)
    log_lhs = (math.log(lhs_s) if lhs_s > 0 else -math.inf) + 4 * (r + 1) * log_l1
    log_rhs = 8 * (math.log(base) + (r // 2 + 1) * log_l1)
    return log_lhs, log_rhs, log_lhs - log_rhs


def delta_contraction_check(kernel: TransferKernel, r: int, m8: int = 12) -> DeltaCheck:
    """Compare ``int e^{-sum beta/2z} |Delta^r|`` against ``(int e T^{floor(r/2)} e)^8``.

    ``ratio_sequence_decreasing`` is evaluated along r, r-2, r-4, ... >= 1: the
    right-hand shape moves in steps of two because of the floor, so only
    same-parity separations are comparable.
    """
    if not 1 <= r <= MAX_DELTA_R:
        raise ValueError(f"r must be in 1..{MAX_DELTA_R} (8-d integral cost guard)")
    log_lhs, log_rhs, log_ratio = _delta_ratio_log(kernel, r, m8)
    seq = [log_ratio]
    for s in range(r - 2, 0, -2):
        seq.append(_delta_ratio_log(kernel, s, m8)[2])
    decreasing = all(a < b for a, b in zip(seq[:-1], seq[1:]))
    return DeltaCheck(r, math.exp(log_lhs), math.exp(log_rhs), math.exp(log_ratio), decreasing)


def delta_integral_mc(kernel: TransferKernel, r: int, samples: int, rng: np.random.Generator,
                      chunk: int = 100_000) -> tuple[float, float]:
    """Importance-sampled estimate (and standard error) of the Delta^r integral.

    Coordinates are drawn from the density proportional to exp(-beta/z), which
    absorbs the weight; the chained kernel is evaluated off-grid by Nystrom
    extension.  Returns values in the same units as ``DeltaCheck.lhs``.
    """
    beta = kernel.params.beta
    from scipy.integrate import quad

    norm = quad(lambda u: math.exp(-beta / u), 0.0, 1.0, epsabs=0, epsrel=1e-13)[0]
    mu = kernel.mu ** (r - 1)
    vals = []
    done = 0
    while done < samples:
        size = min(chunk, samples - done)
        z = sample_free_site(beta, (8, size), rng)
        ph = [kernel.phi_at(z[i]) for i in range(8)]

        def t(i, j):
            return np.sum(ph[i] * ph[j] * mu, axis=1)

        d = t(0, 1) * t(2, 3) * t(4, 5) * t(6, 7) - t(0, 3) * t(2, 1) * t(4, 7) * t(6, 5)
        vals.append(np.abs(d))
        done += size
    v = np.concatenate(vals)
    scale = norm ** 8 * kernel.lambda1 ** (4 * (r + 1))
    return float(v.mean() * scale), float(v.std(ddof=1) / math.sqrt(v.size) * scale)
