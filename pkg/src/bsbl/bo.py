"""BSBL-BO: bound-optimization gamma rule with the EM rules for B and lambda."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .em import EmConfig, iterate_sbl
from .errors import ZeroSensingBlock
from .model import (
    BlockPartition,
    Hyperparams,
    PosteriorState,
    Problem,
    RecoveryResult,
    compute_posterior,
    sensing_traces,
)


@dataclass(frozen=True)
class BoConfig(EmConfig):
    max_iters: int = 200


def update_gamma_bo(problem: Problem, hp: Hyperparams, partition: BlockPartition,
                    posterior: PosteriorState | None = None) -> np.ndarray:
    """Minimizer over gamma of the majorizing surrogate at the current point.

    ``gamma_i = sqrt(mu_i^T B_i^{-1} mu_i / Tr(phi_i^T Sy^{-1} phi_i B_i))``
    where ``mu`` and ``Sy`` are evaluated at the current hyperparameters.
    Pass ``posterior`` to reuse its factorization of ``Sy``.
    """
    if posterior is None:
        posterior = compute_posterior(problem, partition, hp)
    denom = sensing_traces(problem, partition, hp, posterior.factor)
    gamma = np.zeros(partition.g)
    for d, idx in partition.size_groups.items():
        idx = idx[hp.gamma[idx] > 0]
        if idx.size == 0:
            continue
        if np.any(denom[idx] <= 0):
            raise ZeroSensingBlock("a block of phi has a non-positive trace term")
        mu = posterior.mu[partition.columns(idx, d)]  # (k, d)
        B = np.stack([hp.B[i] for i in idx])
        quad = np.einsum("kd,kd->k", mu, np.linalg.solve(B, mu[..., None])[..., 0])
        gamma[idx] = np.sqrt(np.maximum(quad, 0.0) / denom[idx])
    return gamma


def _bo_step(problem, partition, hp, post):
    return update_gamma_bo(problem, hp, partition, post)


def solve_bo(problem: Problem, partition: BlockPartition | Sequence[int],
             config: EmConfig | None = None) -> RecoveryResult:
    """Recover a block-sparse ``x`` with the bound-optimization gamma rule."""
    return iterate_sbl(problem, partition, config or BoConfig(), _bo_step)
