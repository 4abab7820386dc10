"""Circular Coulomb chain: exact transfer-operator statistics, MCMC, decay and CLT checks."""

__version__ = "0.1.0"

from .model import ChainState, DomainError, IndexCluster, ModelParams, circular_energy, cluster_distance, q_eval
from .transfer import (QuadratureGrid, TransferKernel, build_grid, build_kernel, exact_moments,
                       partition_function, sigma_n_squared, spectral_decay_rate)

__all__ = [
    "ChainState", "DomainError", "IndexCluster", "ModelParams", "circular_energy", "cluster_distance",
    "q_eval", "QuadratureGrid", "TransferKernel", "build_grid", "build_kernel", "exact_moments",
    "partition_function", "sigma_n_squared", "spectral_decay_rate",
]
