"""Synthetic problem generation, metrics and the support oracle."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..model import BlockPartition, Problem, as_partition

SUCCESS_NMSE = 1e-5


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def trial_seed(master_seed: int, experiment: int, cell: int, trial: int) -> int:
    """64-bit seed of one trial, a pure function of its coordinates."""
    ss = np.random.SeedSequence([int(master_seed), int(experiment), int(cell), int(trial)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def gen_sensing_matrix(M: int, N: int, seed=None) -> np.ndarray:
    """Gaussian ``M x N`` matrix with unit-norm columns."""
    if M < 1 or N < 1:
        raise ValueError("M and N must be positive")
    phi = _rng(seed).standard_normal((M, N))
    return phi / np.linalg.norm(phi, axis=0)


def ar1_block(d: int, r: float, rng: np.random.Generator) -> np.ndarray:
    """One draw of ``N(0, Toeplitz([1, r, ..., r^(d-1)]))`` by the AR(1) recursion."""
    e = rng.standard_normal(d)
    out = np.empty(d)
    out[0] = e[0]
    c = np.sqrt(max(1.0 - r * r, 0.0))
    for t in range(1, d):
        out[t] = r * out[t - 1] + c * e[t]
    return out


@dataclass(frozen=True)
class GenSpec:
    """Generation settings of one trial.

    ``intra_corr`` is either a fixed coefficient or a ``(lo, hi)`` range from
    which every active block draws its own coefficient uniformly.
    """

    M: int
    N: int
    partition: BlockPartition
    k_active: int
    intra_corr: float | tuple[float, float] = 0.0
    normalize_blocks: bool = False
    snr_db: float | None = None
    seed: int = 0

    def __post_init__(self):
        part = as_partition(self.partition)
        object.__setattr__(self, "partition", part)
        if part.n != self.N:
            raise ValueError(f"partition covers {part.n} entries, N={self.N}")
        if not 0 <= self.k_active <= part.g:
            raise ValueError(f"k_active={self.k_active} outside [0, {part.g}]")
        lo, hi = self.corr_range
        if not (-1 <= lo <= hi <= 1):
            raise ValueError(f"invalid correlation range {self.intra_corr}")
        if isinstance(self.intra_corr, (int, float)) and not -1 < self.intra_corr < 1:
            raise ValueError("a fixed correlation must lie in (-1, 1)")

    @property
    def corr_range(self) -> tuple[float, float]:
        if isinstance(self.intra_corr, (tuple, list)):
            return float(self.intra_corr[0]), float(self.intra_corr[1])
        return float(self.intra_corr), float(self.intra_corr)


def _draw_r(spec_corr, rng) -> float:
    if isinstance(spec_corr, (tuple, list)):
        return float(rng.uniform(spec_corr[0], spec_corr[1]))
    return float(spec_corr)


def gen_signal(spec: GenSpec, rng=None) -> np.ndarray:
    """Block-sparse signal with ``k_active`` AR(1) blocks at random positions."""
    rng = _rng(spec.seed if rng is None else rng)
    part = spec.partition
    x = np.zeros(part.n)
    for i in np.sort(rng.choice(part.g, size=spec.k_active, replace=False)):
        block = ar1_block(part.sizes[i], _draw_r(spec.intra_corr, rng), rng)
        if spec.normalize_blocks:
            block /= np.linalg.norm(block)
        x[part.block(int(i))] = block
    return x


def gen_unknown_partition_signal(N: int, n_nonzero: int, n_blocks: int,
                                 intra_corr=(0.8, 1.0), rng=None) -> np.ndarray:
    """``n_nonzero`` entries split into ``n_blocks`` random-size blocks at random places.

    Block sizes are a uniform random composition of ``n_nonzero``; blocks do not
    overlap and appear in random order separated by random gaps.
    """
    rng = _rng(rng)
    if not 1 <= n_blocks <= n_nonzero <= N:
        raise ValueError("need 1 <= n_blocks <= n_nonzero <= N")
    cuts = np.sort(rng.choice(np.arange(1, n_nonzero), size=n_blocks - 1, replace=False))
    sizes = np.diff(np.concatenate(([0], cuts, [n_nonzero])))
    sizes = rng.permutation(sizes)
    # n_blocks + 1 gaps summing to N - n_nonzero (stars and bars)
    free = N - n_nonzero
    bars = np.sort(rng.choice(free + n_blocks, size=n_blocks, replace=False))
    gaps = np.diff(np.concatenate(([-1], bars))) - 1
    x = np.zeros(N)
    pos = 0
    for gap, d in zip(gaps, sizes):
        pos += int(gap)
        x[pos:pos + d] = ar1_block(int(d), _draw_r(intra_corr, rng), rng)
        pos += int(d)
    return x


def add_noise(clean: np.ndarray, snr_db: float | None, rng=None) -> tuple[np.ndarray, float]:
    """Add white Gaussian noise scaled so that ``20 log10(||clean|| / ||v||)`` is exactly ``snr_db``.

    Returns the noisy vector and the realized noise variance ``||v||^2 / M``.
    """
    clean = np.asarray(clean, dtype=np.float64)
    if snr_db is None or np.isinf(snr_db):
        return clean.copy(), 0.0
    v = _rng(rng).standard_normal(clean.shape)
    v *= np.linalg.norm(clean) / (np.linalg.norm(v) * 10.0 ** (snr_db / 20.0))
    return clean + v, float(v @ v) / clean.shape[0]


def nmse(x_hat: np.ndarray, x_gen: np.ndarray) -> float:
    x_gen = np.asarray(x_gen, dtype=np.float64)
    return float(np.sum((np.asarray(x_hat) - x_gen) ** 2) / np.sum(x_gen ** 2))


def oracle_ls(problem: Problem, true_support: Sequence[int]) -> np.ndarray:
    """Least squares restricted to the columns in ``true_support``."""
    support = np.asarray(true_support, dtype=np.intp)
    x = np.zeros(problem.N)
    if support.size:
        x[support] = np.linalg.lstsq(problem.phi[:, support], problem.y, rcond=None)[0]
    return x


@dataclass
class Instance:
    problem: Problem
    x: np.ndarray
    partition: BlockPartition
    noise_var: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def noisy(self) -> bool:
        return self.noise_var > 0

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.x)


def make_instance(spec: GenSpec, rng=None) -> Instance:
    """Sensing matrix, signal and (optionally noisy) measurements from one generator."""
    rng = _rng(spec.seed if rng is None else rng)
    phi = gen_sensing_matrix(spec.M, spec.N, rng)
    x = gen_signal(spec, rng)
    y, noise_var = add_noise(phi @ x, spec.snr_db, rng)
    return Instance(Problem(y, phi), x, spec.partition, noise_var)
