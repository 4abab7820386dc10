"""Exact finite-N statistics through a Nystrom discretization of the kernel Q.

The r-fold chained integral ``T^r(x, y) = int Q(x,u_1) ... Q(u_r, y) du`` is
approximated on a Gauss-Legendre grid by ``K (W K)^r`` with ``K_ab = Q(x_a, x_b)``.

Q underflows at the smallest nodes (``exp(-beta / 2x)`` with x ~ 1e-4), so all
work is done with the stripped kernel ``Khat_ab = exp(-gamma / (x_a + x_b))`` and
the tilted weights ``w'_a = w_a exp(-beta / x_a)``; the endpoint factors
``exp(-beta / 2x)`` are reattached only where a caller asks for raw values.
Powers of the leading eigenvalue are factored out everywhere (``mu = lam /
lam_1``) so Z_N and long chains never underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .model import IndexCluster, ModelParams, cluster_gaps

MIN_GRID = 8
MAX_CLUSTER = 4
# |lam_2| / lam_1 below this means the kernel is numerically rank one (gamma = 0).
RANK_ONE_TOL = 1e-10
MIN_GAP = 1e-13


class SpectralGapError(ArithmeticError):
    """The discretized kernel has no usable spectral gap."""


class ResolutionError(ArithmeticError):
    """A quantity that must be positive came out nonpositive on this grid."""


@dataclass(frozen=True)
class QuadratureGrid:
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def m(self) -> int:
        return self.nodes.size

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


def build_grid(m: int) -> QuadratureGrid:
    """Gauss-Legendre rule mapped from [-1, 1] to [0, 1]."""
    if m < MIN_GRID:
        raise ValueError(f"grid needs at least {MIN_GRID} nodes, got {m}")
    t, w = np.polynomial.legendre.leggauss(m)
    nodes = 0.5 * (t + 1.0)
    weights = 0.5 * w
    for a in (nodes, weights):
        a.flags.writeable = False
    return QuadratureGrid(nodes, weights)


class TransferKernel:
    """Discretized transfer operator with its eigendecomposition.

    Eigenpairs are ordered by decreasing |lambda|.  The kernel is not positive
    definite, and for gamma > 0 the subleading eigenvalue is negative, so
    ordering by signed value would misplace it.
    """

    def __init__(self, params: ModelParams, grid: QuadratureGrid):
        self.params = params
        self.grid = grid
        x, w = grid.nodes, grid.weights
        self.log_endpoint = -params.beta / (2 * x)  # log exp(-beta / 2x)
        self.stripped = np.exp(-params.gamma / (x[:, None] + x[None, :]))
        self.tilted_weights = w * np.exp(-params.beta / x)
        sw = np.sqrt(self.tilted_weights)
        self.sym = sw[:, None] * self.stripped * sw[None, :]
        lam, vec = np.linalg.eigh(self.sym)
        order = np.argsort(-np.abs(lam), kind="stable")
        lam, vec = lam[order], vec[:, order]
        if vec[np.argmax(np.abs(vec[:, 0])), 0] < 0:
            vec[:, 0] = -vec[:, 0]
        self.eigenvalues = lam
        self.eigenvectors = vec
        self.lambda1 = float(lam[0])
        self.mu = lam / lam[0]
        # phi[:, c] = Khat sqrt(W') v_c / lam_1, so that
        # That^s = lam_1^(s+1) * phi diag(mu^(s-1)) phi^T for s >= 1.
        self.phi = (self.stripped * sw[None, :]) @ vec / self.lambda1
        for a in (self.stripped, self.tilted_weights, self.sym, self.eigenvalues,
                  self.eigenvectors, self.mu, self.phi, self.log_endpoint):
            a.flags.writeable = False

    @property
    def m(self) -> int:
        return self.grid.m

    @cached_property
    def log_matrix(self) -> np.ndarray:
        """``log Q(x_a, x_b)``; finite everywhere even where Q underflows."""
        le = self.log_endpoint
        x = self.grid.nodes
        return le[:, None] + le[None, :] - self.params.gamma / (x[:, None] + x[None, :])

    @property
    def matrix(self) -> np.ndarray:
        return np.exp(self.log_matrix)

    # -- scaled chained kernels -------------------------------------------
    def scaled(self, s: int) -> np.ndarray:
        """``That^s / lam_1^(s+1)`` on the node grid, for s >= 0."""
        if s < 0:
            raise ValueError("scaled kernel power needs s >= 0")
        if s == 0:
            return self.stripped / self.lambda1
        return (self.phi * self.mu ** (s - 1)) @ self.phi.T

    def scaled_tail(self, s: int) -> np.ndarray:
        """Subleading part of :meth:`scaled`: everything but the Perron term."""
        lead = np.outer(self.phi[:, 0], self.phi[:, 0])
        if s == 0:
            return self.stripped / self.lambda1 - lead
        tail = self.phi[:, 1:]
        return (tail * self.mu[1:] ** (s - 1)) @ tail.T

    def phi_at(self, y) -> np.ndarray:
        """Nystrom extension of ``phi`` to arbitrary points in (0, 1]."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        k = np.exp(-self.params.gamma / (y[:, None] + self.grid.nodes[None, :]))
        return (k * np.sqrt(self.tilted_weights)[None, :]) @ self.eigenvectors / self.lambda1

    def scaled_at(self, s: int, x, y) -> np.ndarray:
        """``That^s(x, y) / lam_1^(s+1)`` for off-grid points (s >= 1), elementwise."""
        if s < 1:
            raise ValueError("off-grid evaluation needs s >= 1")
        px, py = self.phi_at(x), self.phi_at(y)
        return np.sum(px * py * self.mu ** (s - 1), axis=1)

    def log_scaled_trace(self, n: int) -> float:
        """``log sum_c mu_c^n``, summed from the largest magnitude down."""
        return math.log(math.fsum((self.mu ** n).tolist()))

    def scaled_trace(self, n: int) -> float:
        return math.fsum((self.mu ** n).tolist())


def build_kernel(params: ModelParams, m: int = 64) -> TransferKernel:
    return TransferKernel(params, build_grid(m))


def t_power(kernel: TransferKernel, r: int, x_index: int, y_index: int) -> float:
    """Quadrature value of ``T^r(x_a, x_b)``.

    ``r = -1`` is the unit of the chaining operation: on the grid that is the
    discrete delta ``[a == b] / w_a``.
    """
    if r < -1:
        raise ValueError("t_power needs r >= -1")
    if r == -1:
        return 1.0 / kernel.grid.weights[x_index] if x_index == y_index else 0.0
    if r == 0:
        return math.exp(kernel.log_matrix[x_index, y_index])
    le = kernel.log_endpoint
    val = kernel.scaled(r)[x_index, y_index]
    if val <= 0:
        return 0.0
    return math.exp(le[x_index] + le[y_index] + (r + 1) * math.log(kernel.lambda1) + math.log(val))


def t_power_matrix(kernel: TransferKernel, r: int) -> np.ndarray:
    if r < -1:
        raise ValueError("t_power needs r >= -1")
    if r == -1:
        return np.diag(1.0 / kernel.grid.weights)
    if r == 0:
        return kernel.matrix
    le = kernel.log_endpoint
    with np.errstate(divide="ignore"):
        logs = le[:, None] + le[None, :] + (r + 1) * math.log(kernel.lambda1) + np.log(kernel.scaled(r))
    return np.exp(logs)


def t_power_by_multiplication(kernel: TransferKernel, r: int) -> np.ndarray:
    """``K (W K)^r`` by repeated products, no eigendecomposition."""
    k = kernel.matrix
    wk = kernel.grid.weights[:, None] * k
    out = k.copy()
    for _ in range(r):
        out = out @ wk
    return out


def log_partition_function(kernel: TransferKernel, n: int) -> float:
    if n < 3:
        raise ValueError("partition function needs n >= 3")
    return n * math.log(kernel.lambda1) + kernel.log_scaled_trace(n)


def partition_function(kernel: TransferKernel, n: int) -> float:
    """Quadrature value of Z_N = trace(S^n); may underflow for long chains."""
    return math.exp(log_partition_function(kernel, n))


# -- cluster densities -------------------------------------------------------

@dataclass(frozen=True)
class ClusterDensity:
    cluster: IndexCluster
    grid: QuadratureGrid
    values: np.ndarray = field(repr=False)

    def integral(self) -> float:
        v = self.values
        for _ in range(v.ndim):
            v = np.tensordot(v, self.grid.weights, axes=([0], [0]))
        return float(v)


def _chain_factor(kernel: TransferKernel, p: int) -> np.ndarray:
    """``prod_i exp(-beta/y_i) * prod_i Khat(y_i, y_{i+1}) / lam_1`` on the p-fold grid."""
    site = np.exp(2 * kernel.log_endpoint)
    out = site
    edge = kernel.stripped / kernel.lambda1
    for _ in range(p - 1):
        out = out[..., None] * edge[(None,) * (out.ndim - 1)] * site
    return out


def _check_cluster(cluster: IndexCluster, n: int):
    if cluster.n != n:
        raise ValueError("cluster built for a different chain length")
    if cluster.len > MAX_CLUSTER:
        raise ValueError(f"joint densities are limited to {MAX_CLUSTER} sites")


def marginal_density(kernel: TransferKernel, n: int, cluster: IndexCluster) -> ClusterDensity:
    """Joint density of a cluster of consecutive spacings on the grid tensor product.

    Stationarity on the circle makes the result independent of ``cluster.start``.
    """
    _check_cluster(cluster, n)
    p = cluster.len
    if n < p + 2:
        raise ValueError("marginal density needs n >= |cluster| + 2")
    closing = kernel.scaled(n - p)  # ties y_p back to y_1 through n - p spacings
    chain = _chain_factor(kernel, p)
    if p == 1:
        values = chain * np.diag(closing)
    else:
        shape = (kernel.m,) + (1,) * (p - 2) + (kernel.m,)
        values = chain * closing.T.reshape(shape)
    return ClusterDensity(cluster, kernel.grid, values / kernel.scaled_trace(n))


def conditional_density(kernel: TransferKernel, n: int, i_cluster: IndexCluster,
                        j_cluster: IndexCluster, y_j) -> ClusterDensity:
    """Density of Y_I given Y_J fixed at grid indices ``y_j`` (one per J site)."""
    _check_cluster(i_cluster, n)
    _check_cluster(j_cluster, n)
    y_j = tuple(int(a) for a in y_j)
    if len(y_j) != j_cluster.len:
        raise ValueError("y_j needs one grid index per J site")
    r, r_back = cluster_gaps(i_cluster, j_cluster)
    p = i_cluster.len
    jf, jl = y_j[0], y_j[-1]
    to_j = kernel.scaled(r)[:, jf]  # function of y_I,last
    from_j = kernel.scaled(r_back)[jl, :]  # function of y_I,first
    norm = kernel.scaled(r + p + r_back)[jl, jf]
    chain = _chain_factor(kernel, p)
    if p == 1:
        values = chain * to_j * from_j
    else:
        shape_first = (kernel.m,) + (1,) * (p - 1)
        shape_last = (1,) * (p - 1) + (kernel.m,)
        values = chain * from_j.reshape(shape_first) * to_j.reshape(shape_last)
    return ClusterDensity(i_cluster, kernel.grid, values / norm)


def marginal_pdf(kernel: TransferKernel, n: int, y) -> np.ndarray:
    """Single-site marginal density at arbitrary points (Nystrom extension)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return np.exp(-kernel.params.beta / y) * kernel.scaled_at(n - 1, y, y) / kernel.scaled_trace(n)


def marginal_cdf(kernel: TransferKernel, n: int, resolution: int = 8192):
    """Single-site marginal CDF as a callable, from a fine Simpson table."""
    from scipy.integrate import cumulative_simpson

    t = np.linspace(0.0, 1.0, resolution + 1)
    pdf = np.zeros_like(t)
    pdf[1:] = marginal_pdf(kernel, n, t[1:])
    # Simpson can dip by ~1e-278 where the density is steep and tiny
    cdf = np.maximum.accumulate(cumulative_simpson(pdf, x=t, initial=0.0))
    cdf /= cdf[-1]
    return lambda z: np.interp(z, t, cdf)


# -- moments -----------------------------------------------------------------

@dataclass(frozen=True)
class Moments:
    n: int
    mean: float
    covariances: np.ndarray = field(repr=False)  # index r = 0..n

    @property
    def variance(self) -> float:
        return float(self.covariances[0])

    def cov(self, r: int) -> float:
        return float(self.covariances[r % self.n])


def exact_moments(kernel: TransferKernel, n: int) -> Moments:
    """Mean and lag covariances of the spacings for a circle of n sites.

    ``E(Y_1 Y_{1+r}) = sum_ab mu_a^r mu_b^(n-r) M_ab^2 / sum_c mu_c^n`` with
    ``M = V^T diag(x) V``.  The Perron-Perron term is subtracted analytically,
    so covariances far below the square of the mean keep full relative accuracy.
    """
    if n < 3:
        raise ValueError("moments need n >= 3")
    mu = kernel.mu
    v = kernel.eigenvectors
    big = v.T @ (kernel.grid.nodes[:, None] * v)
    m11 = big[0, 0]
    mu_n = mu ** n
    t = math.fsum(mu_n[1:].tolist())
    s = math.fsum((mu_n[1:] * np.diag(big)[1:]).tolist())
    z = 1.0 + t
    mean = (m11 + s) / z
    sq = big ** 2
    r = np.arange(n + 1)
    left = mu[None, :] ** r[:, None]
    right = mu[None, :] ** (n - r)[:, None]
    # every (a, b) pair except (0, 0)
    rest = np.einsum("ra,ab,rb->r", left[:, 1:], sq[1:, 1:], right[:, 1:])
    rest += sq[0, 1:] @ right[:, 1:].T  # a = 0: mu_0^r = 1
    rest += sq[1:, 0] @ left[:, 1:].T  # b = 0
    lead = (m11 ** 2 * t - 2 * m11 * s - s ** 2) / z ** 2
    cov = lead + rest / z
    # the trace formula is symmetric under r -> n - r; mirror so it holds bit for bit
    half = n // 2
    cov[n - half:] = cov[half::-1]
    cov.flags.writeable = False
    return Moments(n, float(mean), cov)


def sigma_n_squared(kernel: TransferKernel, n: int) -> float:
    """``Var(sum Y_i) / n``, i.e. the sum of all lag covariances on the circle."""
    mom = exact_moments(kernel, n)
    val = math.fsum(mom.covariances[:n].tolist())
    if not val > 0:
        raise ResolutionError(f"sigma_N^2 = {val!r} is not positive; refine the grid")
    return val


def spectral_decay_rate(kernel: TransferKernel) -> float:
    """``log(lam_1 / |lam_2|)``; ``inf`` when the kernel is numerically rank one."""
    ratio = abs(kernel.mu[1])
    if ratio < RANK_ONE_TOL:
        return math.inf
    rate = -math.log(ratio)
    if rate < MIN_GAP:
        raise SpectralGapError(f"spectral gap {rate!r} is degenerate")
    return rate
