"""Shared fixtures and naive dense reference implementations."""

import numpy as np
import pytest
from scipy import linalg

from bsbl import BlockPartition, Hyperparams, Problem


def random_spd(rng, d, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    vals = np.linspace(1.0, cond, d)
    B = (Q * vals) @ Q.T
    return 0.5 * (B + B.T)


def random_instance(rng, M=8, N=16, sizes=None, lam=0.1, gamma_range=(0.2, 2.0), spd=True):
    sizes = sizes or [4] * (N // 4)
    part = BlockPartition(tuple(sizes))
    phi = rng.standard_normal((M, part.n))
    y = rng.standard_normal(M)
    gamma = rng.uniform(*gamma_range, size=part.g)
    B = tuple(random_spd(rng, d) if spd else np.eye(d) for d in sizes)
    return Problem(y, phi), part, Hyperparams(gamma, B, lam)


# --- dense oracles, written straight from the closed forms ---------------------

def dense_prior(part, hp):
    return linalg.block_diag(*[g * b for g, b in zip(hp.gamma, hp.B)])


def dense_posterior_nxn(problem, part, hp):
    """Posterior via the N x N information form; needs every gamma > 0."""
    S0 = dense_prior(part, hp)
    Sx = np.linalg.inv(np.linalg.inv(S0) + problem.phi.T @ problem.phi / hp.lam)
    mu = Sx @ problem.phi.T @ problem.y / hp.lam
    return mu, Sx


def dense_posterior_mxm(problem, part, hp):
    S0 = dense_prior(part, hp)
    Sy = hp.lam * np.eye(problem.M) + problem.phi @ S0 @ problem.phi.T
    Syi = np.linalg.inv(Sy)
    mu = S0 @ problem.phi.T @ Syi @ problem.y
    Sx = S0 - S0 @ problem.phi.T @ Syi @ problem.phi @ S0
    return mu, Sx


def dense_cost(problem, part, hp):
    S0 = dense_prior(part, hp)
    Sy = hp.lam * np.eye(problem.M) + problem.phi @ S0 @ problem.phi.T
    sign, logdet = np.linalg.slogdet(Sy)
    assert sign > 0
    return logdet + problem.y @ np.linalg.inv(Sy) @ problem.y


def dense_sy_inv(problem, part, hp):
    S0 = dense_prior(part, hp)
    return np.linalg.inv(hp.lam * np.eye(problem.M) + problem.phi @ S0 @ problem.phi.T)


def blocks_of(mat, part):
    return [mat[s, s] for s in part.slices()]


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
