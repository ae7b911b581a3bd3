"""BSBL-EM: expectation-maximization learning of gamma, B and lambda."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .correlation import estimate_r, estimate_r_pooled, toeplitz_ar1
from .model import (
    BlockPartition,
    Hyperparams,
    PosteriorState,
    Problem,
    RecoveryResult,
    as_partition,
    check_dimensions,
    compute_posterior,
    cost_function,
)

log = logging.getLogger(__name__)

LAMBDA_FLOOR = 1e-12
NOISELESS_LAMBDA = 1e-10


class LambdaRule(str, Enum):
    OFF = "off"
    ROBUST = "robust"
    NAIVE = "naive"


@dataclass(frozen=True)
class EmConfig:
    """Solver settings.

    ``lambda_init=None`` means ``1e-10`` when the noise is not learned and
    ``1e-2 * ||y||^2 / M`` otherwise.  ``prune_ratio`` is relative to the
    largest gamma of the current iteration.
    """

    max_iters: int = 500
    tol: float = 1e-8
    prune_ratio: float = 1e-3
    learn_lambda: LambdaRule = LambdaRule.ROBUST
    lambda_init: float | None = None
    learn_correlation: bool = True
    gamma_init: float = 1.0
    record_gammas: bool = False
    record_descent: bool = False

    def __post_init__(self):
        object.__setattr__(self, "learn_lambda", LambdaRule(self.learn_lambda))
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.prune_ratio < 0:
            raise ValueError("prune_ratio must be nonnegative")
        if self.gamma_init <= 0:
            raise ValueError("gamma_init must be positive")

    @classmethod
    def noiseless(cls, **kw):
        kw.setdefault("learn_lambda", LambdaRule.OFF)
        kw.setdefault("lambda_init", NOISELESS_LAMBDA)
        return cls(**kw)

    def initial_lambda(self, y: np.ndarray) -> float:
        if self.lambda_init is not None:
            return float(self.lambda_init)
        if self.learn_lambda is LambdaRule.OFF:
            return NOISELESS_LAMBDA
        return max(1e-2 * float(y @ y) / y.shape[0], LAMBDA_FLOOR)


def _second_moments(posterior: PosteriorState, partition: BlockPartition, idx: np.ndarray) -> list[np.ndarray]:
    out = []
    for i in idx:
        m = posterior.mu[partition.block(i)]
        out.append(posterior.sigma_blocks[i] + np.outer(m, m))
    return out


def update_gamma_em(posterior: PosteriorState, hp: Hyperparams, partition: BlockPartition) -> np.ndarray:
    """``gamma_i = Tr(B_i^{-1} (Sigma_x^i + mu_i mu_i^T)) / d_i``; pruned blocks stay at zero."""
    gamma = np.zeros(partition.g)
    for d, idx in partition.size_groups.items():
        idx = idx[hp.gamma[idx] > 0]
        if idx.size == 0:
            continue
        C = np.stack(_second_moments(posterior, partition, idx))
        B = np.stack([hp.B[i] for i in idx])
        gamma[idx] = np.trace(np.linalg.solve(B, C), axis1=1, axis2=2) / d
    return np.maximum(gamma, 0.0)


def _residual_energy(problem: Problem, posterior: PosteriorState) -> float:
    r = problem.y - problem.phi @ posterior.mu
    return float(r @ r)


def update_lambda_robust(problem: Problem, posterior: PosteriorState, partition: BlockPartition) -> float:
    """Noise update keeping only the block-diagonal parts of ``Sigma_x`` and ``phi^T phi``."""
    total = _residual_energy(problem, posterior)
    for i, s in enumerate(partition.slices()):
        sig = posterior.sigma_blocks[i]
        if not sig.any():
            continue
        phi_i = problem.phi[:, s]
        total += float(np.sum((phi_i @ sig) * phi_i))
    return total / problem.M


def update_lambda_naive(problem: Problem, posterior: PosteriorState, hp: Hyperparams) -> float:
    """Full EM noise update ``(||y - phi mu||^2 + Tr(Sigma_x phi^T phi)) / M``.

    With ``K = phi Sigma0 phi^T = Sy - lam I`` the trace term equals
    ``Tr(K) - ||L^{-1} K||_F^2`` where ``Sy = L L^T``.
    """
    if posterior.factor is None:
        raise ValueError("posterior carries no factorization; use compute_posterior")
    L = np.tril(posterior.factor[0])
    K = L @ L.T - hp.lam * np.eye(problem.M)
    V = linalg.solve_triangular(L, K, lower=True)
    trace = float(np.trace(K) - np.sum(V * V))
    return (_residual_energy(problem, posterior) + trace) / problem.M


def update_B(posterior: PosteriorState, gamma: np.ndarray, partition: BlockPartition,
             equal_sizes: bool | None = None, previous: Sequence[np.ndarray] | None = None,
             learn_correlation: bool = True) -> tuple[tuple[np.ndarray, ...], float]:
    """Toeplitz-constrained correlation update.

    Returns the new ``B`` matrices (one shared matrix per block size) and
    the AR(1) coefficient they were built from.  With equal block sizes the
    per-block second moments ``(Sigma_x^i + mu_i mu_i^T) / gamma_i`` are
    averaged over the active blocks before the coefficient is read off;
    otherwise the diagonal and sub-diagonal means are pooled across blocks.
    Without active blocks ``previous`` is returned unchanged.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    if not learn_correlation:
        eyes = {d: np.eye(d) for d in set(partition.sizes)}
        return tuple(eyes[d] for d in partition.sizes), 0.0
    if equal_sizes is None:
        equal_sizes = partition.is_equal
    idx = np.flatnonzero(gamma > 0)
    if idx.size == 0:
        if previous is None:
            previous = [np.eye(d) for d in partition.sizes]
        prev_r = float(previous[0][1, 0]) if previous[0].shape[0] > 1 else 0.0
        return tuple(previous), prev_r
    mats = [c / gamma[i] for c, i in zip(_second_moments(posterior, partition, idx), idx)]
    if equal_sizes:
        r = estimate_r(np.mean(mats, axis=0)).r
    else:
        r = estimate_r_pooled(mats).r
    shared = {d: toeplitz_ar1(r, d) for d in set(partition.sizes)}
    return tuple(shared[d] for d in partition.sizes), r


GammaStep = Callable[[Problem, BlockPartition, Hyperparams, PosteriorState], np.ndarray]


def prune(gamma: np.ndarray, ratio: float) -> np.ndarray:
    gamma = gamma.copy()
    top = gamma.max(initial=0.0)
    gamma[gamma < ratio * top] = 0.0
    return gamma


def iterate_sbl(problem: Problem, partition: BlockPartition, config: EmConfig,
                gamma_step: GammaStep) -> RecoveryResult:
    """Shared outer loop: posterior, gamma, B, lambda, in that order."""
    partition = as_partition(partition)
    check_dimensions(problem, partition)
    lam = config.initial_lambda(problem.y)
    hp = Hyperparams.initial(partition, gamma=config.gamma_init, lam=lam)
    r = 0.0
    cost_trace: list[float] = []
    gammas = [hp.gamma.copy()] if config.record_gammas else None
    descent = [] if config.record_descent else None
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        post = compute_posterior(problem, partition, hp)
        cost_trace.append(post.cost)

        raw = gamma_step(problem, partition, hp, post)
        gamma = prune(raw, config.prune_ratio)
        after = None
        if np.any((gamma == 0) & (raw > 0)):
            # pruning a block with a small but positive optimum can raise the cost;
            # keep the unpruned step then, it never does
            after = cost_function(problem, partition, hp.replace(gamma=gamma))
            if after > post.cost:
                gamma, after = raw, None
        if descent is not None:
            if after is None:
                after = cost_function(problem, partition, hp.replace(gamma=gamma))
            descent.append((post.cost, after))
        B = hp.B
        if config.learn_correlation and it >= 2:
            B, r = update_B(post, gamma, partition, previous=hp.B)
        if config.learn_lambda is LambdaRule.ROBUST:
            lam = max(update_lambda_robust(problem, post, partition), LAMBDA_FLOOR)
        elif config.learn_lambda is LambdaRule.NAIVE:
            lam = max(update_lambda_naive(problem, post, hp), LAMBDA_FLOOR)

        top = gamma.max(initial=0.0)
        delta = np.max(np.abs(gamma - hp.gamma)) / top if top > 0 else 0.0
        hp = Hyperparams(gamma, B, lam)
        if gammas is not None:
            gammas.append(gamma.copy())
        if top == 0:
            log.debug("all blocks pruned at iteration %d", it)
            converged = True
            break
        if delta < config.tol:
            converged = True
            break

    final = compute_posterior(problem, partition, hp)
    cost_trace.append(final.cost)
    return RecoveryResult(
        x_hat=final.mu.copy(),
        iterations=it,
        converged=converged,
        cost_trace=cost_trace,
        learned_r=float(r),
        gamma=hp.gamma.copy(),
        lam=hp.lam,
        gamma_trace=gammas,
        descent_pairs=descent,
    )


def _em_step(problem, partition, hp, post):
    return update_gamma_em(post, hp, partition)


def solve_em(problem: Problem, partition: BlockPartition | Sequence[int],
             config: EmConfig | None = None) -> RecoveryResult:
    """Recover a block-sparse ``x`` with the EM learning rules."""
    return iterate_sbl(problem, partition, config or EmConfig(), _em_step)
