"""Block-sparse linear model, Gaussian posterior and marginal-likelihood cost.

The measurement model is ``y = phi @ x + v`` with ``x`` split into ``g``
contiguous blocks.  Block ``i`` has prior ``N(0, gamma_i * B_i)`` and the
noise is ``N(0, lam * I)``.  Every routine here works with the ``M x M``
measurement covariance ``lam * I + phi @ Sigma0 @ phi.T`` so that blocks with
``gamma_i = 0`` can simply be left out of the linear algebra.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, NamedTuple, Sequence

import numpy as np
from scipy import linalg

from .errors import DimensionMismatch, NonPSD, SingularSystem, ZeroSensingBlock


def _frozen_array(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if ndim == 1 and arr.ndim == 2 and 1 in arr.shape:
        arr = arr.ravel()
    if arr.ndim != ndim:
        raise DimensionMismatch(f"{name} must be {ndim}-D, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class BlockPartition:
    """Ordered sizes of the contiguous blocks of ``x``."""

    sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(d) for d in self.sizes)
        if not sizes:
            raise ValueError("a partition needs at least one block")
        if any(d < 1 for d in sizes):
            raise ValueError(f"block sizes must be positive, got {sizes}")
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def equal(cls, n_blocks: int, size: int) -> "BlockPartition":
        return cls((size,) * n_blocks)

    @property
    def g(self) -> int:
        return len(self.sizes)

    @property
    def n(self) -> int:
        return sum(self.sizes)

    @property
    def is_equal(self) -> bool:
        return len(set(self.sizes)) == 1

    @cached_property
    def starts(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.sizes)[:-1])).astype(np.intp)

    @cached_property
    def size_groups(self) -> dict[int, np.ndarray]:
        """Block indices grouped by block size, in increasing block order."""
        sizes = np.asarray(self.sizes)
        return {int(d): np.flatnonzero(sizes == d) for d in np.unique(sizes)}

    def block(self, i: int) -> slice:
        s = int(self.starts[i])
        return slice(s, s + self.sizes[i])

    def slices(self) -> list[slice]:
        return [self.block(i) for i in range(self.g)]

    def split(self, x: np.ndarray) -> list[np.ndarray]:
        x = np.asarray(x)
        if x.shape[0] != self.n:
            raise DimensionMismatch(f"vector of length {x.shape[0]} does not match N={self.n}")
        return [x[s] for s in self.slices()]

    def columns(self, idx: np.ndarray, d: int) -> np.ndarray:
        """Column indices ``(len(idx), d)`` of the blocks ``idx``, all of size ``d``."""
        return self.starts[idx][:, None] + np.arange(d)


@dataclass(frozen=True)
class Problem:
    """Measurement vector ``y`` (length M) and sensing matrix ``phi`` (M x N)."""

    y: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        y = _frozen_array(self.y, 1, "y")
        phi = _frozen_array(self.phi, 2, "phi")
        if phi.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"y has length {y.shape[0]} but phi has {phi.shape[0]} rows")
        if phi.shape[0] < 1 or phi.shape[1] < 1:
            raise DimensionMismatch("phi must be non-empty")
        if np.any(~np.any(phi != 0, axis=0)):
            raise ZeroSensingBlock("phi has an all-zero column")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "phi", phi)

    @property
    def M(self) -> int:
        return self.phi.shape[0]

    @property
    def N(self) -> int:
        return self.phi.shape[1]


def _check_pd(B: np.ndarray, i: int) -> None:
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise DimensionMismatch(f"B[{i}] must be square, got {B.shape}")
    if not np.allclose(B, B.T, rtol=1e-10, atol=1e-12):
        raise NonPSD(f"B[{i}] is not symmetric")
    try:
        np.linalg.cholesky(B)
    except np.linalg.LinAlgError as exc:
        raise NonPSD(f"B[{i}] is not positive definite") from exc


@dataclass(frozen=True)
class Hyperparams:
    """Block variances ``gamma``, block correlation matrices ``B`` and noise ``lam``."""

    gamma: np.ndarray
    B: tuple[np.ndarray, ...]
    lam: float

    def __post_init__(self):
        gamma = _frozen_array(self.gamma, 1, "gamma")
        if np.any(gamma < 0) or not np.all(np.isfinite(gamma)):
            raise ValueError("gamma must be finite and nonnegative")
        lam = float(self.lam)
        if not lam >= 0 or not np.isfinite(lam):
            raise ValueError(f"lambda must be finite and nonnegative, got {lam}")
        mats = []
        checked: dict[int, np.ndarray] = {}
        for i, b in enumerate(self.B):
            # solvers share one Toeplitz matrix across blocks, validate each object once
            key = id(b)
            if key not in checked:
                arr = _frozen_array(b, 2, f"B[{i}]")
                _check_pd(arr, i)
                checked[key] = arr
            mats.append(checked[key])
        if len(mats) != gamma.shape[0]:
            raise DimensionMismatch(f"{len(mats)} B matrices for {gamma.shape[0]} gammas")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "B", tuple(mats))
        object.__setattr__(self, "lam", lam)

    @classmethod
    def initial(cls, partition: BlockPartition, gamma: float = 1.0, lam: float = 1e-2) -> "Hyperparams":
        eyes = {d: np.eye(d) for d in set(partition.sizes)}
        return cls(np.full(partition.g, float(gamma)), tuple(eyes[d] for d in partition.sizes), lam)

    def replace(self, **changes) -> "Hyperparams":
        kw = {"gamma": self.gamma, "B": self.B, "lam": self.lam}
        kw.update(changes)
        return Hyperparams(**kw)


@dataclass(frozen=True)
class PosteriorState:
    """Posterior mean, diagonal covariance blocks and cost at fixed hyperparameters.

    Only the ``g`` principal diagonal blocks of the posterior covariance are
    kept; none of the learning rules needs the cross-block terms.
    ``factor`` is the lower Cholesky factor of the measurement covariance and
    is reused by the update rules.
    """

    mu: np.ndarray
    sigma_blocks: list[np.ndarray]
    cost: float
    factor: tuple | None = field(default=None, repr=False, compare=False)


@dataclass
class RecoveryResult:
    x_hat: np.ndarray
    iterations: int
    converged: bool
    cost_trace: list[float]
    learned_r: float = 0.0
    gamma: np.ndarray | None = None
    lam: float | None = None
    gamma_trace: list[np.ndarray] | None = None
    descent_pairs: list[tuple[float, float]] | None = None
    z_hat: np.ndarray | None = None


class ActiveGroup(NamedTuple):
    """Active blocks sharing one size, with the gathered sensing columns."""

    d: int
    idx: np.ndarray  # block indices, shape (k,)
    cols: np.ndarray  # column indices, shape (k, d)
    phi: np.ndarray  # sensing sub-blocks, shape (k, M, d)
    B: np.ndarray  # correlation matrices, shape (k, d, d)


def active_groups(problem: Problem, partition: BlockPartition, hp: Hyperparams,
                  only_active: bool = True) -> Iterator[ActiveGroup]:
    for d, idx in partition.size_groups.items():
        if only_active:
            idx = idx[hp.gamma[idx] > 0]
        if idx.size == 0:
            continue
        cols = partition.columns(idx, d)
        phi_b = problem.phi[:, cols].transpose(1, 0, 2)
        B = np.stack([hp.B[i] for i in idx])
        yield ActiveGroup(d, idx, cols, phi_b, B)


def check_dimensions(problem: Problem, partition: BlockPartition, hp: Hyperparams | None = None) -> None:
    if partition.n != problem.N:
        raise DimensionMismatch(f"partition covers {partition.n} entries but phi has {problem.N} columns")
    if hp is None:
        return
    if hp.gamma.shape[0] != partition.g:
        raise DimensionMismatch(f"{hp.gamma.shape[0]} gammas for {partition.g} blocks")
    for i, (b, d) in enumerate(zip(hp.B, partition.sizes)):
        if b.shape != (d, d):
            raise DimensionMismatch(f"B[{i}] has shape {b.shape}, block size is {d}")


def measurement_covariance(problem: Problem, partition: BlockPartition, hp: Hyperparams) -> np.ndarray:
    """``lam * I + phi @ Sigma0 @ phi.T`` built from the active blocks only."""
    sy = hp.lam * np.eye(problem.M)
    for grp in active_groups(problem, partition, hp):
        ps = grp.phi @ (hp.gamma[grp.idx, None, None] * grp.B)
        sy += np.einsum("kmd,knd->mn", ps, grp.phi)
    return 0.5 * (sy + sy.T)


def factorize(sy: np.ndarray, lam: float) -> tuple:
    try:
        return linalg.cho_factor(sy, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        if lam == 0:
            raise SingularSystem("lam = 0 and phi Sigma0 phi^T is singular") from exc
        raise NonPSD("measurement covariance is not positive definite") from exc


def _logdet(factor: tuple) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(factor[0]))))


def cost_function(problem: Problem, partition: BlockPartition, hp: Hyperparams) -> float:
    """Negative log marginal likelihood ``log|Sy| + y^T Sy^{-1} y`` (up to constants)."""
    check_dimensions(problem, partition, hp)
    if hp.lam <= 0:
        raise ValueError("cost_function requires lam > 0")
    factor = factorize(measurement_covariance(problem, partition, hp), hp.lam)
    return _logdet(factor) + float(problem.y @ linalg.cho_solve(factor, problem.y))


def compute_posterior(problem: Problem, partition: BlockPartition, hp: Hyperparams) -> PosteriorState:
    """Posterior of ``x`` given the hyperparameters.

    Uses ``mu = Sigma0 phi^T Sy^{-1} y`` and, per block,
    ``Sigma_x^i = Sigma0^i - Sigma0^i phi_i^T Sy^{-1} phi_i Sigma0^i`` so the
    only factorization is of the ``M x M`` matrix ``Sy``.  Blocks with
    ``gamma_i = 0`` get a zero mean and a zero covariance block.
    """
    check_dimensions(problem, partition, hp)
    groups = list(active_groups(problem, partition, hp))
    M = problem.M
    sy = hp.lam * np.eye(M)
    scaled = []
    for grp in groups:
        ps = grp.phi @ (hp.gamma[grp.idx, None, None] * grp.B)  # phi_i Sigma0^i
        sy += np.einsum("kmd,knd->mn", ps, grp.phi)
        scaled.append(ps)
    sy = 0.5 * (sy + sy.T)
    factor = factorize(sy, hp.lam)
    alpha = linalg.cho_solve(factor, problem.y)

    mu = np.zeros(problem.N)
    sigma_blocks = [None] * partition.g
    for grp, ps in zip(groups, scaled):
        k, d = grp.idx.size, grp.d
        mu[grp.cols] = np.einsum("kmd,m->kd", ps, alpha)
        w = linalg.cho_solve(factor, ps.transpose(1, 0, 2).reshape(M, k * d))
        w = w.reshape(M, k, d).transpose(1, 0, 2)
        s0 = hp.gamma[grp.idx, None, None] * grp.B
        sig = s0 - np.swapaxes(ps, 1, 2) @ w
        sig = 0.5 * (sig + np.swapaxes(sig, 1, 2))
        for j, i in enumerate(grp.idx):
            sigma_blocks[i] = sig[j]
    for i, d in enumerate(partition.sizes):
        if sigma_blocks[i] is None:
            sigma_blocks[i] = np.zeros((d, d))

    cost = _logdet(factor) + float(problem.y @ alpha)
    return PosteriorState(mu=mu, sigma_blocks=sigma_blocks, cost=cost, factor=factor)


def sensing_traces(problem: Problem, partition: BlockPartition, hp: Hyperparams,
                   factor: tuple, only_active: bool = True) -> np.ndarray:
    """``Tr(B_i phi_i^T Sy^{-1} phi_i)`` per block (zero for skipped blocks)."""
    L = np.tril(factor[0])
    out = np.zeros(partition.g)
    for grp in active_groups(problem, partition, hp, only_active=only_active):
        k, d = grp.idx.size, grp.d
        v = linalg.solve_triangular(L, grp.phi.transpose(1, 0, 2).reshape(problem.M, k * d), lower=True)
        v = v.reshape(problem.M, k, d).transpose(1, 0, 2)  # L^{-1} phi_i
        out[grp.idx] = np.einsum("kmd,kme,ked->k", v, v, grp.B)
    return out


def map_estimate(posterior: PosteriorState) -> np.ndarray:
    """The MAP estimate of ``x`` is the posterior mean."""
    return posterior.mu


def block_diag_prior(partition: BlockPartition, hp: Hyperparams) -> np.ndarray:
    """Dense ``Sigma0 = diag(gamma_1 B_1, ..., gamma_g B_g)``; for small problems and checks."""
    return linalg.block_diag(*[g * b for g, b in zip(hp.gamma, hp.B)])


def as_partition(partition: BlockPartition | Sequence[int]) -> BlockPartition:
    return partition if isinstance(partition, BlockPartition) else BlockPartition(tuple(partition))
