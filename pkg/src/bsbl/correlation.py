"""AR(1) intra-block correlation: Toeplitz construction and coefficient estimates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from .errors import InvalidCoefficient

R_CLIP = 0.99
_ENERGY_FLOOR = 1e-12


@dataclass(frozen=True)
class ArCoefficient:
    """An AR(1) coefficient; ``degenerate`` is set when no estimate was possible."""

    r: float
    degenerate: bool = False

    def __float__(self) -> float:
        return self.r


def clip_r(ratio: float, limit: float = R_CLIP) -> float:
    """``sign(ratio) * min(|ratio|, limit)``, keeping the Toeplitz matrix positive definite."""
    return float(np.sign(ratio) * min(abs(ratio), limit))


def toeplitz_ar1(r: float, d: int) -> np.ndarray:
    """``d x d`` matrix with entries ``r**|j - k|``."""
    r = float(r)
    if not abs(r) < 1:
        raise InvalidCoefficient(f"AR(1) coefficient must satisfy |r| < 1, got {r}")
    if d < 1:
        raise ValueError(f"block size must be positive, got {d}")
    return linalg.toeplitz(r ** np.arange(d))


def _diag_means(B: np.ndarray) -> tuple[float, float]:
    B = np.asarray(B, dtype=np.float64)
    return float(np.mean(np.diagonal(B))), float(np.mean(np.diagonal(B, offset=-1)))


def _ratio(m0: float, m1: float) -> ArCoefficient:
    if m0 == 0 or not np.isfinite(m0):
        return ArCoefficient(0.0, degenerate=True)
    return ArCoefficient(clip_r(m1 / m0))


def estimate_r(B: np.ndarray) -> ArCoefficient:
    """Clipped ratio of the mean sub-diagonal to the mean diagonal of ``B``."""
    B = np.asarray(B, dtype=np.float64)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise ValueError(f"B must be square, got {B.shape}")
    if B.shape[0] < 2:
        return ArCoefficient(0.0)
    return _ratio(*_diag_means(B))


def estimate_r_pooled(B_list: Sequence[np.ndarray]) -> ArCoefficient:
    """One coefficient from the summed diagonal and sub-diagonal means of several blocks.

    Blocks of size 1 carry no sub-diagonal and are left out of both sums.
    """
    if len(B_list) == 0:
        raise ValueError("estimate_r_pooled needs at least one matrix")
    m0 = m1 = 0.0
    used = 0
    for B in B_list:
        if np.shape(B)[0] < 2:
            continue
        a, b = _diag_means(B)
        m0 += a
        m1 += b
        used += 1
    if used == 0:
        return ArCoefficient(0.0)
    return _ratio(m0, m1)


def lag1_coefficient(x: np.ndarray) -> float:
    """``sum_t x_t x_{t+1} / sum_t x_t**2`` (not normalized for length)."""
    x = np.asarray(x, dtype=np.float64)
    return float(x[:-1] @ x[1:] / (x @ x))


def estimate_r_from_blocks(x_blocks: Sequence[np.ndarray]) -> ArCoefficient:
    """Average lag-1 coefficient over the nonzero blocks of a solution, clipped."""
    rs = [lag1_coefficient(b) for b in x_blocks
          if len(b) >= 2 and float(np.dot(b, b)) >= _ENERGY_FLOOR]
    if not rs:
        return ArCoefficient(0.0, degenerate=True)
    return ArCoefficient(clip_r(float(np.mean(rs))))
