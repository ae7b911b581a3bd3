"""Monte Carlo protocols: phase transition, correlation, noise and unknown-partition sweeps.

Every trial draws one problem instance from its own seed and runs all
requested algorithms on it, so algorithms are always compared on matched
instances.  Seeds depend only on ``(master_seed, experiment, cell, trial)``.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from ..bo import BoConfig, solve_bo
from ..ebsbl import solve_ebsbl
from ..em import EmConfig, solve_em
from ..group_lasso import GroupLassoProblem, solve_group_lasso, zero_threshold
from ..l1 import L1Config, solve_l1
from ..model import BlockPartition, Problem
from .data import (
    SUCCESS_NMSE,
    GenSpec,
    Instance,
    add_noise,
    gen_sensing_matrix,
    gen_signal,
    gen_unknown_partition_signal,
    nmse,
    oracle_ls,
    trial_seed,
)

EXPERIMENTS = {"phase": 1, "correlation": 2, "noise": 3, "unknown-partition": 4}
WORKERS_ENV = "BSBL_WORKERS"


@dataclass
class TrialRecord:
    experiment: str
    cell: int
    params: dict
    algorithm: str
    trial: int
    seed: int
    nmse: float
    success: bool
    iterations: int
    converged: bool
    learned_r: float
    wall_time_ms: float = field(default=0.0, compare=False)

    def as_row(self) -> dict:
        row = asdict(self)
        params = row.pop("params")
        return {"experiment": row.pop("experiment"), "cell": row.pop("cell"), **params, **row}


# --- algorithms -----------------------------------------------------------

@dataclass(frozen=True)
class AlgoSpec:
    """Parsed algorithm id such as ``bsbl-em``, ``bsbl-em:nocorr`` or ``ebsbl-bo:h=8``.

    Options after the colon are comma separated: ``nocorr`` disables
    correlation learning, ``h=<int>`` sets the EBSBL window and ``d=<int>``
    replaces the true partition with equal blocks of that size.
    """

    name: str
    learn_correlation: bool = True
    h: int | None = None
    d: int | None = None

    NAMES = ("bsbl-em", "bsbl-bo", "bsbl-l1", "ebsbl-em", "ebsbl-bo", "ebsbl-l1", "group-lasso", "oracle")

    @classmethod
    def parse(cls, algo_id: str) -> "AlgoSpec":
        name, _, opts = algo_id.partition(":")
        if name not in cls.NAMES:
            raise ValueError(f"unknown algorithm {name!r}; choose from {', '.join(cls.NAMES)}")
        kw = {}
        for opt in filter(None, opts.split(",")):
            key, _, val = opt.partition("=")
            if key == "nocorr" and not val:
                kw["learn_correlation"] = False
            elif key in ("h", "d") and val.isdigit() and int(val) > 0:
                kw[key] = int(val)
            else:
                raise ValueError(f"bad option {opt!r} in algorithm id {algo_id!r}")
        if "h" in kw and not name.startswith("ebsbl"):
            raise ValueError("h= applies to ebsbl algorithms only")
        return cls(name, **kw)


@dataclass
class AlgoOutcome:
    x_hat: np.ndarray
    iterations: int
    converged: bool
    learned_r: float = 0.0


@dataclass(frozen=True)
class NoiseSetting:
    """How solvers treat the noise: ``noiseless``, ``learn`` or a fixed variance."""

    mode: str = "learn"
    value: float | None = None

    @classmethod
    def parse(cls, text: str) -> "NoiseSetting":
        if text in ("noiseless", "learn"):
            return cls(text)
        if text.startswith("fixed:"):
            val = float(text[6:])
            if not val > 0:
                raise ValueError("a fixed noise variance must be positive")
            return cls("fixed", val)
        raise ValueError(f"noise setting must be noiseless, learn or fixed:<value>, got {text!r}")

    def em_config(self, cls=EmConfig, **kw):
        if self.mode == "noiseless":
            return cls.noiseless(**kw)
        if self.mode == "fixed":
            return cls(learn_lambda="off", lambda_init=self.value, **kw)
        return cls(**kw)

    def l1_config(self, **kw) -> L1Config:
        if self.mode == "noiseless":
            return L1Config.noiseless(**kw)
        if self.mode == "fixed":
            return L1Config(lam=self.value, **kw)
        return L1Config(**kw)

    @property
    def reg_fraction(self) -> float:
        return 1e-6 if self.mode == "noiseless" else 0.01


def _equal_partition(N: int, d: int) -> BlockPartition:
    if N % d:
        raise ValueError(f"block size {d} does not divide N={N}")
    return BlockPartition.equal(N // d, d)


def run_algorithm(algo: str | AlgoSpec, problem: Problem, partition: BlockPartition,
                  noise: NoiseSetting, support: Sequence[int] | None = None,
                  max_iters: int | None = None) -> AlgoOutcome:
    """Run one algorithm id on ``problem``.  ``support`` is needed by the oracle."""
    spec = AlgoSpec.parse(algo) if isinstance(algo, str) else algo
    if spec.d is not None:
        partition = _equal_partition(problem.N, spec.d)
    extra = {} if max_iters is None else {"max_iters": max_iters}
    corr = spec.learn_correlation
    if spec.name == "oracle":
        if support is None:
            raise ValueError("the oracle needs the true support")
        return AlgoOutcome(oracle_ls(problem, support), 0, True)
    if spec.name == "group-lasso":
        p = GroupLassoProblem(problem.y, problem.phi, partition,
                              noise.reg_fraction * zero_threshold(problem.phi, problem.y, partition))
        res = solve_group_lasso(p, **extra)
        return AlgoOutcome(res.u, res.iterations, res.converged)
    kind = spec.name.split("-")[1]
    if kind == "l1":
        cfg = noise.l1_config(learn_correlation=corr)
    else:
        cfg = noise.em_config(BoConfig if kind == "bo" else EmConfig, learn_correlation=corr, **extra)
    if spec.name.startswith("ebsbl"):
        res = solve_ebsbl(problem, spec.h or 4, kind, cfg)
    else:
        res = {"em": solve_em, "bo": solve_bo, "l1": solve_l1}[kind](problem, partition, cfg)
    return AlgoOutcome(res.x_hat, res.iterations, res.converged, res.learned_r)


# --- instance builders ----------------------------------------------------

def _build_block_instance(cell: dict, rng: np.random.Generator) -> Instance:
    spec = GenSpec(
        M=cell["M"], N=cell["N"], partition=BlockPartition.equal(cell["N"] // cell["d"], cell["d"]),
        k_active=cell["k_active"], intra_corr=cell["r"] if "r" in cell else (cell["r_lo"], cell["r_hi"]),
        normalize_blocks=bool(cell.get("normalize", False)), snr_db=cell.get("snr_db"),
    )
    phi = gen_sensing_matrix(spec.M, spec.N, rng)
    x = gen_signal(spec, rng)
    y, noise_var = add_noise(phi @ x, spec.snr_db, rng)
    return Instance(Problem(y, phi), x, spec.partition, noise_var)


def _parse_count(value, rng) -> int:
    if isinstance(value, str) and "-" in value:
        lo, hi = (int(v) for v in value.split("-"))
        return int(rng.integers(lo, hi + 1))
    return int(value)


def _build_unknown_instance(cell: dict, rng: np.random.Generator) -> Instance:
    phi = gen_sensing_matrix(cell["M"], cell["N"], rng)
    n_blocks = _parse_count(cell["n_blocks"], rng)
    x = gen_unknown_partition_signal(cell["N"], cell["K"], n_blocks, (cell["r_lo"], cell["r_hi"]), rng)
    y, noise_var = add_noise(phi @ x, cell.get("snr_db"), rng)
    # the true partition is unknown to the solvers; unit blocks are a placeholder
    return Instance(Problem(y, phi), x, BlockPartition.equal(cell["N"], 1), noise_var, {"n_blocks": n_blocks})


BUILDERS: dict[str, Callable[[dict, np.random.Generator], Instance]] = {
    "phase": _build_block_instance,
    "correlation": _build_block_instance,
    "noise": _build_block_instance,
    "unknown-partition": _build_unknown_instance,
}


# --- trial execution ------------------------------------------------------

@dataclass(frozen=True)
class TrialJob:
    experiment: str
    cell: int
    params: dict
    trial: int
    seed: int
    algorithms: tuple[str, ...]
    max_iters: int | None = None


def run_trial(job: TrialJob) -> list[TrialRecord]:
    rng = np.random.default_rng(job.seed)
    inst = BUILDERS[job.experiment](job.params, rng)
    noise = NoiseSetting("noiseless") if inst.noise_var == 0 else NoiseSetting("learn")
    out = []
    for algo in job.algorithms:
        t0 = time.perf_counter()
        res = run_algorithm(algo, inst.problem, inst.partition, noise, inst.support, job.max_iters)
        wall = 1e3 * (time.perf_counter() - t0)
        err = nmse(res.x_hat, inst.x)
        out.append(TrialRecord(job.experiment, job.cell, dict(job.params), algo, job.trial, job.seed,
                               err, err <= SUCCESS_NMSE, res.iterations, res.converged,
                               float(res.learned_r), wall))
    return out


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_jobs(jobs: Sequence[TrialJob], workers: int | None = None) -> list[TrialRecord]:
    """Run trials, possibly in parallel; records come back in (cell, trial, algorithm) order."""
    workers = default_workers() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(run_trial, jobs))
    else:
        chunks = [run_trial(job) for job in jobs]
    order = sorted(range(len(jobs)), key=lambda k: (jobs[k].cell, jobs[k].trial))
    return [rec for k in order for rec in chunks[k]]


def make_jobs(experiment: str, cells: Iterable[dict], trials: int, algorithms: Sequence[str],
              master_seed: int = 0, max_iters: int | None = None) -> list[TrialJob]:
    for a in algorithms:
        AlgoSpec.parse(a)
    e = EXPERIMENTS[experiment]
    return [
        TrialJob(experiment, c, dict(params), t, trial_seed(master_seed, e, c, t), tuple(algorithms), max_iters)
        for c, params in enumerate(cells)
        for t in range(trials)
    ]


# --- protocols --------------------------------------------------------------

def phase_cells(N: int = 200, d: int = 10, deltas: Sequence[float] = (0.1, 0.25, 0.4),
                rhos: Sequence[float] = (0.2, 0.4, 0.6, 0.8, 1.0), r: float = 0.95) -> list[dict]:
    """Grid cells in the (delta, rho) plane; infeasible cells are left out.

    ``M = round(delta * N)`` and ``k_active = round(rho * M / d)``; the
    recorded ``delta`` and ``rho`` are the exact values ``M / N`` and ``K / M``.
    """
    if N % d:
        raise ValueError(f"block size {d} does not divide N={N}")
    cells, seen = [], set()
    for delta in deltas:
        M = int(round(delta * N))
        for rho in rhos:
            k = int(round(rho * M / d)) if M else 0
            K = k * d
            if M < 1 or M > N or k < 1 or k > N // d or K > M or (M, k) in seen:
                continue
            seen.add((M, k))
            cells.append({"N": N, "M": M, "d": d, "k_active": k, "r": r,
                          "delta": M / N, "rho": K / M})
    return cells


def run_phase_transition(N: int = 200, d: int = 10, deltas=(0.1, 0.25, 0.4),
                         rhos=(0.2, 0.4, 0.6, 0.8, 1.0), r: float = 0.95, trials: int = 25,
                         algorithms=("bsbl-em",), master_seed: int = 0,
                         workers: int | None = None) -> list[TrialRecord]:
    cells = phase_cells(N, d, deltas, rhos, r)
    return run_jobs(make_jobs("phase", cells, trials, algorithms, master_seed), workers)


def run_correlation_sweep(rs=(-0.99, -0.9, -0.5, 0.0, 0.5, 0.9, 0.99), M: int = 100, N: int = 300,
                          d: int = 4, k_active: int = 20, trials: int = 25,
                          algorithms=("bsbl-em", "bsbl-em:nocorr"), master_seed: int = 0,
                          workers: int | None = None) -> list[TrialRecord]:
    cells = [{"N": N, "M": M, "d": d, "k_active": k_active, "r": float(r), "normalize": True} for r in rs]
    return run_jobs(make_jobs("correlation", cells, trials, algorithms, master_seed), workers)


def run_noise_sweep(snrs=(5, 10, 15, 20, 25), M: int = 128, N: int = 512, d: int = 8,
                    k_active: int = 7, r_range=(0.8, 1.0), trials: int = 25,
                    algorithms=("bsbl-em", "bsbl-bo", "bsbl-l1", "group-lasso", "oracle"),
                    master_seed: int = 0, workers: int | None = None) -> list[TrialRecord]:
    cells = [{"N": N, "M": M, "d": d, "k_active": k_active, "r_lo": r_range[0], "r_hi": r_range[1],
              "snr_db": float(s)} for s in snrs]
    return run_jobs(make_jobs("noise", cells, trials, algorithms, master_seed), workers)


def run_unknown_partition(block_counts=(2, 4, 6, 8, 10), M: int = 192, N: int = 512, K: int = 48,
                          r_range=(0.8, 1.0), snr_db: float = 15.0, trials: int = 25,
                          algorithms=("ebsbl-bo:h=4", "ebsbl-bo:h=8", "group-lasso:d=8"),
                          master_seed: int = 0, workers: int | None = None) -> list[TrialRecord]:
    """Sweep over the number of nonzero blocks.

    A count written as ``"lo-hi"`` draws the number of blocks uniformly per trial.
    """
    cells = [{"N": N, "M": M, "K": K, "n_blocks": n, "r_lo": r_range[0], "r_hi": r_range[1],
              "snr_db": float(snr_db)} for n in block_counts]
    return run_jobs(make_jobs("unknown-partition", cells, trials, algorithms, master_seed), workers)


PROTOCOLS = {
    "phase": run_phase_transition,
    "correlation": run_correlation_sweep,
    "noise": run_noise_sweep,
    "unknown-partition": run_unknown_partition,
}


# --- aggregation ------------------------------------------------------------

def summarize(records: Sequence[TrialRecord]) -> list[dict]:
    """Per (cell, algorithm): trial count, success rate, mean and median NMSE, median iterations."""
    groups: dict[tuple[int, str], list[TrialRecord]] = {}
    for rec in records:
        groups.setdefault((rec.cell, rec.algorithm), []).append(rec)
    out = []
    for (cell, algo), recs in sorted(groups.items()):
        errs = np.array([r.nmse for r in recs])
        out.append({
            "experiment": recs[0].experiment, "cell": cell, **recs[0].params, "algorithm": algo,
            "trials": len(recs),
            "success_rate": float(np.mean([r.success for r in recs])),
            "mean_nmse": float(errs.mean()),
            "median_nmse": float(np.median(errs)),
            "median_iterations": float(np.median([r.iterations for r in recs])),
        })
    return out


def transition_curve(summary: Sequence[dict], threshold: float = 0.9,
                     algorithm: str | None = None) -> dict[str, dict[float, float | None]]:
    """Highest rho per delta whose success rate reaches ``threshold``, per algorithm.

    ``None`` marks a delta where no cell reaches the threshold.
    """
    curve: dict[str, dict[float, float | None]] = {}
    for row in summary:
        if algorithm is not None and row["algorithm"] != algorithm:
            continue
        per = curve.setdefault(row["algorithm"], {})
        best = per.get(row["delta"])
        if row["success_rate"] >= threshold and (best is None or row["rho"] > best):
            per[row["delta"]] = row["rho"]
        else:
            per.setdefault(row["delta"], best)
    return curve
