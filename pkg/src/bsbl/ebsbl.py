"""Expanded model for block-sparse recovery when the partition is unknown.

Every window of ``h`` consecutive entries of ``x`` is a candidate block, so
``x = sum_i E_i z_i`` with ``p = N - h + 1`` non-overlapping coefficient
blocks ``z_i``.  The sensing matrix of the expanded model, ``A``, is the
concatenation of the sliding column windows ``phi[:, i:i+h]``; any of the
known-partition solvers then runs on ``(y, A)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .bo import BoConfig, solve_bo
from .em import EmConfig, solve_em
from .errors import DimensionMismatch, InvalidBlockSize
from .l1 import L1Config, solve_l1
from .model import BlockPartition, Problem, RecoveryResult

DEFAULT_H = 4


class Algorithm(str, Enum):
    EM = "em"
    BO = "bo"
    L1 = "l1"


@dataclass(frozen=True)
class ExpandedModel:
    phi: np.ndarray
    h: int

    @property
    def N(self) -> int:
        return self.phi.shape[1]

    @property
    def p(self) -> int:
        return self.N - self.h + 1

    @property
    def partition(self) -> BlockPartition:
        return BlockPartition.equal(self.p, self.h)

    def windows(self) -> np.ndarray:
        """Read-only view ``(M, p, h)`` whose slice ``[:, i, :]`` is ``A_i``."""
        return sliding_window_view(self.phi, self.h, axis=1)

    def dense(self) -> np.ndarray:
        """Materialized ``A`` of shape ``(M, p * h)``."""
        return self.windows().reshape(self.phi.shape[0], self.p * self.h)

    def matvec(self, z: np.ndarray) -> np.ndarray:
        """``A @ z`` computed as ``phi @ reconstruct(z)``."""
        return self.phi @ reconstruct(z, self.h, self.N)

    def rmatvec(self, v: np.ndarray) -> np.ndarray:
        """``A.T @ v``: every window of ``phi.T @ v``."""
        return sliding_window_view(self.phi.T @ v, self.h).ravel()


def expand(problem: Problem, h: int) -> ExpandedModel:
    if not 1 <= h <= problem.N:
        raise InvalidBlockSize(f"window size h={h} must lie in [1, {problem.N}]")
    return ExpandedModel(problem.phi, int(h))


def reconstruct(z: np.ndarray, h: int, N: int) -> np.ndarray:
    """Overlap-add ``x = sum_i E_i z_i``."""
    z = np.asarray(z, dtype=np.float64)
    p = N - h + 1
    if h < 1 or p < 1 or z.shape != (p * h,):
        raise DimensionMismatch(f"z of shape {z.shape} does not fit h={h}, N={N}")
    Z = z.reshape(p, h)
    x = np.zeros(N)
    for j in range(h):
        x[j:j + p] += Z[:, j]
    return x


def solve_ebsbl(problem: Problem, h: int = DEFAULT_H, algorithm: Algorithm | str = Algorithm.BO,
                config: EmConfig | L1Config | None = None) -> RecoveryResult:
    """Run a known-partition solver on the expanded model and map back to ``x``."""
    algorithm = Algorithm(algorithm)
    model = expand(problem, h)
    expanded = Problem(problem.y, model.dense())
    if algorithm is Algorithm.EM:
        result = solve_em(expanded, model.partition, config or EmConfig())
    elif algorithm is Algorithm.BO:
        result = solve_bo(expanded, model.partition, config or BoConfig())
    else:
        result = solve_l1(expanded, model.partition, config or L1Config())
    result.z_hat = result.x_hat
    result.x_hat = reconstruct(result.z_hat, model.h, model.N)
    return result
