"""Acceptance suite.  Each criterion prints one ``PASS``/``FAIL`` line.

Run with ``pytest tests/test_acceptance.py -v``; the Monte Carlo criteria
take several minutes on one core.  Set ``BSBL_WORKERS`` to spread trials
over processes.
"""

import time

import numpy as np
import pytest
from scipy import linalg

from bsbl import (
    BlockPartition,
    BoConfig,
    DualWeights,
    EmConfig,
    GroupLassoProblem,
    Hyperparams,
    L1Config,
    Problem,
    build_inner_problem,
    compute_posterior,
    compute_weights,
    solve_bo,
    solve_ebsbl,
    solve_em,
    solve_group_lasso,
    solve_l1,
    update_B,
    update_gamma_bo,
    update_gamma_em,
    update_lambda_naive,
    update_lambda_robust,
)
from bsbl.cli import main as cli_main
from bsbl.experiments import (
    GenSpec,
    make_instance,
    run_correlation_sweep,
    run_noise_sweep,
    run_phase_transition,
    run_unknown_partition,
)
from bsbl.group_lasso import zero_threshold

from conftest import random_spd


@pytest.fixture
def report(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance] criterion {criterion}: {'PASS' if ok else 'FAIL'} | {detail}")
    return emit


def _timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


def _by_algo(records, field="nmse"):
    out = {}
    for r in records:
        out.setdefault(r.algorithm, []).append(getattr(r, field))
    return {k: np.array(v, dtype=float) for k, v in out.items()}


def _ratio(a, b):
    return max(a, b) / min(a, b)


# --- 1. dense-oracle equivalence -----------------------------------------------

def _dense_rules(problem, part, hp, w):
    """Every learning rule evaluated from explicit N x N and M x M matrices."""
    phi, y, lam = problem.phi, problem.y, hp.lam
    S0 = linalg.block_diag(*[g * b for g, b in zip(hp.gamma, hp.B)])
    Sy = lam * np.eye(problem.M) + phi @ S0 @ phi.T
    Syi = np.linalg.inv(Sy)
    mu = S0 @ phi.T @ Syi @ y
    Sx = S0 - S0 @ phi.T @ Syi @ phi @ S0
    sl = part.slices()
    active = [i for i in range(part.g) if hp.gamma[i] > 0]
    moments = [Sx[s, s] + np.outer(mu[s], mu[s]) for s in sl]

    gamma_em = np.array([np.trace(np.linalg.inv(hp.B[i]) @ moments[i]) / part.sizes[i] if i in active else 0.0
                         for i in range(part.g)])
    res = y - phi @ mu
    lam_naive = (res @ res + np.trace(Sx @ phi.T @ phi)) / problem.M
    lam_robust = (res @ res + sum(np.trace(Sx[s, s] @ phi[:, s].T @ phi[:, s]) for s in sl)) / problem.M
    mats = [moments[i] / hp.gamma[i] for i in active]
    if part.is_equal:
        avg = sum(mats) / len(mats)
        ratio = np.mean(np.diag(avg, -1)) / np.mean(np.diag(avg))
    else:
        mats = [m for m in mats if m.shape[0] > 1]
        ratio = sum(np.mean(np.diag(m, -1)) for m in mats) / sum(np.mean(np.diag(m)) for m in mats)
    r = np.sign(ratio) * min(abs(ratio), 0.99)
    B_new = [linalg.toeplitz(r ** np.arange(d)) for d in part.sizes]
    gamma_bo = np.array([
        np.sqrt(mu[s] @ np.linalg.inv(hp.B[i]) @ mu[s] / np.trace(phi[:, s].T @ Syi @ phi[:, s] @ hp.B[i]))
        if i in active else 0.0 for i, s in enumerate(sl)])
    z = np.array([np.trace(hp.B[i] @ phi[:, s].T @ Syi @ phi[:, s]) for i, s in enumerate(sl)])
    roots = [linalg.sqrtm(b).real for b in hp.B]
    H = phi @ linalg.block_diag(*[rt / wi for rt, wi in zip(roots, w)])
    return dict(gamma_em=gamma_em, lam_naive=lam_naive, lam_robust=lam_robust, B=B_new,
                gamma_bo=gamma_bo, z=z, H=H)


def _rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(float(np.max(np.abs(b))), 1e-300)
    return float(np.max(np.abs(a - b))) / scale


def test_criterion_1_dense_oracle_equivalence(report):
    rng = np.random.default_rng(101)
    worst = {}
    t0 = time.perf_counter()
    for k in range(50):
        N = int(rng.integers(6, 21))
        M = int(rng.integers(3, 11))
        if k % 2 == 0:
            d = int(rng.choice([dd for dd in (2, 3, 4, 5) if N % dd == 0] or [1]))
            part = BlockPartition.equal(N // d, d)
        else:
            cuts = np.sort(rng.choice(np.arange(1, N), size=int(rng.integers(1, min(5, N - 1) + 1)), replace=False))
            part = BlockPartition(tuple(np.diff(np.concatenate(([0], cuts, [N])))))
        phi = rng.standard_normal((M, N))
        prob = Problem(rng.standard_normal(M), phi)
        gamma = rng.uniform(0.1, 2.0, part.g)
        if k % 5 == 4 and part.g > 1:
            gamma[int(rng.integers(part.g))] = 0.0
        hp = Hyperparams(gamma, tuple(random_spd(rng, d, cond=5.0) for d in part.sizes), float(rng.uniform(0.05, 1)))
        w = rng.uniform(0.5, 3.0, part.g)
        ref = _dense_rules(prob, part, hp, w)

        post = compute_posterior(prob, part, hp)
        B_new, _ = update_B(post, hp.gamma, part)
        inner = build_inner_problem(prob, DualWeights.from_w(w), hp.B, part, reg=1.0)
        errs = {
            "eq4 gamma-em": _rel(update_gamma_em(post, hp, part), ref["gamma_em"]),
            "eq5 lambda-naive": _rel(update_lambda_naive(prob, post, hp), ref["lam_naive"]),
            "eq6 lambda-robust": _rel(update_lambda_robust(prob, post, part), ref["lam_robust"]),
            ("eq7" if part.is_equal else "eq9") + " B": max(_rel(a, b) for a, b in zip(B_new, ref["B"])),
            "eq12 gamma-bo": _rel(update_gamma_bo(prob, hp, part, post), ref["gamma_bo"]),
            "eq19 weights": _rel(compute_weights(prob, hp, part).z, ref["z"]),
            "eq21 transform": _rel(inner.H, ref["H"]),
        }
        for key, v in errs.items():
            worst[key] = max(worst.get(key, 0.0), v)
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-10 and elapsed < 10 and {"eq7 B", "eq9 B"} <= set(worst)
    detail = ", ".join(f"{k}={v:.1e}" for k, v in sorted(worst.items()))
    report(1, ok, f"max rel err {detail}; {elapsed:.1f}s")
    assert ok


# --- 2. descent ------------------------------------------------------------------

def test_criterion_2_descent(report):
    t0 = time.perf_counter()
    worst_frozen = worst_pairs = worst_gl = -np.inf
    for k in range(20):
        spec = GenSpec(M=40, N=100, partition=BlockPartition.equal(20, 5), k_active=3,
                       intra_corr=(0.5, 0.95), snr_db=20.0, seed=2000 + k)
        inst = make_instance(spec)
        for solver, cfg in ((solve_em, EmConfig), (solve_bo, BoConfig)):
            frozen = solver(inst.problem, inst.partition,
                            cfg(learn_lambda="off", lambda_init=inst.noise_var, learn_correlation=False))
            worst_frozen = max(worst_frozen, float(np.max(np.diff(frozen.cost_trace))))
            full = solver(inst.problem, inst.partition, cfg(record_descent=True))
            worst_pairs = max(worst_pairs, max(a - b for b, a in full.descent_pairs))
        p = GroupLassoProblem(inst.problem.y, inst.problem.phi, inst.partition,
                              0.05 * zero_threshold(inst.problem.phi, inst.problem.y, inst.partition))
        worst_gl = max(worst_gl, float(np.max(np.diff(solve_group_lasso(p).objective_trace))))
    elapsed = time.perf_counter() - t0
    ok = worst_frozen <= 1e-9 and worst_pairs <= 1e-9 and worst_gl <= 0 and elapsed < 30
    report(2, ok, f"max step increase: frozen-noise trace {worst_frozen:.1e}, gamma steps under full learning "
                  f"{worst_pairs:.1e}, group lasso {worst_gl:.1e}; {elapsed:.1f}s")
    assert ok


# --- 3. correlation benefit -------------------------------------------------------

def test_criterion_3_correlation_benefit(report):
    recs, elapsed = _timed(run_correlation_sweep, rs=(0.95,), trials=50, master_seed=3)
    err = _by_algo(recs)
    success = float(np.mean(err["bsbl-em"] <= 1e-5))
    med_on, med_off = np.median(err["bsbl-em"]), np.median(err["bsbl-em:nocorr"])
    ok = success >= 0.9 and med_off >= 10 * med_on and elapsed < 600
    report(3, ok, f"success {success:.2f} (corr on), median NMSE on {med_on:.2e} vs off {med_off:.2e}; {elapsed:.0f}s")
    assert ok


# --- 4 and 5. noisy regime --------------------------------------------------------

@pytest.fixture(scope="module")
def noisy_runs():
    return _timed(run_noise_sweep, snrs=(15.0,), trials=25, master_seed=4,
                  algorithms=("bsbl-em", "bsbl-bo", "group-lasso", "oracle"))


def test_criterion_4_noisy_regime(report, noisy_runs):
    recs, elapsed = noisy_runs
    med = {k: float(np.median(v)) for k, v in _by_algo(recs).items()}
    ok = (med["bsbl-em"] <= 2 * med["oracle"] and _ratio(med["bsbl-bo"], med["bsbl-em"]) <= 1.5
          and med["group-lasso"] > max(med["bsbl-em"], med["bsbl-bo"]) and elapsed < 900)
    report(4, ok, "median NMSE " + ", ".join(f"{k} {v:.4f}" for k, v in med.items()) + f"; {elapsed:.0f}s")
    assert ok


def test_criterion_5_speed_ordering(report, noisy_runs):
    its = {k: float(np.median(v)) for k, v in _by_algo(noisy_runs[0], "iterations").items()}
    ok = its["bsbl-bo"] < its["bsbl-em"]
    report(5, ok, f"median iterations bsbl-bo {its['bsbl-bo']:.0f} vs bsbl-em {its['bsbl-em']:.0f}")
    assert ok


# --- 6. EBSBL insensitivity -------------------------------------------------------

def test_criterion_6_ebsbl_insensitivity(report):
    recs, elapsed = _timed(run_unknown_partition, block_counts=("2-10",), trials=25, master_seed=6)
    med = {k: float(np.median(v)) for k, v in _by_algo(recs).items()}
    h4, h8, gl = med["ebsbl-bo:h=4"], med["ebsbl-bo:h=8"], med["group-lasso:d=8"]
    ok = _ratio(h4, h8) <= 1.5 and max(h4, h8) <= gl
    report(6, ok, f"median NMSE h=4 {h4:.4f}, h=8 {h8:.4f} (ratio {_ratio(h4, h8):.2f}), "
                  f"group lasso d=8 {gl:.4f}; {elapsed:.0f}s")
    assert ok


# --- 7. reductions ----------------------------------------------------------------

def test_criterion_7_reductions(report):
    identical = True
    for seed in range(5):
        spec = GenSpec(M=20, N=40, partition=BlockPartition.equal(40, 1), k_active=4, snr_db=25.0, seed=700 + seed)
        inst = make_instance(spec)
        cfg = EmConfig(record_gammas=True)
        a = solve_ebsbl(inst.problem, 1, "em", cfg)
        b = solve_em(inst.problem, BlockPartition.equal(40, 1), cfg)
        identical &= len(a.gamma_trace) == len(b.gamma_trace) and all(
            np.array_equal(ga, gb) for ga, gb in zip(a.gamma_trace, b.gamma_trace))
    worst = 0.0
    for seed in range(5):
        spec = GenSpec(M=30, N=60, partition=BlockPartition.equal(10, 6), k_active=2, intra_corr=0.8,
                       snr_db=20.0, seed=750 + seed)
        inst = make_instance(spec)
        reg = 0.05 * zero_threshold(inst.problem.phi, inst.problem.y, inst.partition)
        cfg = L1Config(outer_iters=1, learn_correlation=False, unit_first_weights=True, reg_value=reg, inner_tol=1e-15)
        x = solve_l1(inst.problem, inst.partition, cfg).x_hat
        u = solve_group_lasso(GroupLassoProblem(inst.problem.y, inst.problem.phi, inst.partition, reg),
                              tol=1e-15).u
        worst = max(worst, float(np.max(np.abs(x - u))))
    ok = identical and worst <= 1e-8
    report(7, ok, f"h=1 gamma traces identical: {identical}; l1 vs group lasso max diff {worst:.1e}")
    assert ok


# --- 8. determinism ---------------------------------------------------------------

def test_criterion_8_bench_determinism(report, tmp_path):
    args = ["bench", "--experiment", "noise", "--trials", "2", "--seed", "8",
            "--param", "snrs=[10, 20]", "--param", "M=40", "--param", "N=96", "--param", "k_active=3"]
    codes = [cli_main(args + ["--out", str(tmp_path / name)]) for name in ("a", "b")]
    a, b = ((tmp_path / n / "results.csv").read_bytes() for n in ("a", "b"))
    ok = codes == [0, 0] and a == b and len(a.splitlines()) == 2 + 2 * 2 * 5
    report(8, ok, f"results.csv byte-identical across runs: {a == b} ({len(a)} bytes)")
    assert ok


# --- 9. phase transition ----------------------------------------------------------

def test_criterion_9_phase_transition(report):
    t0 = time.perf_counter()
    corr = run_phase_transition(N=200, d=10, deltas=(0.25,), rhos=(0.6, 0.8), r=0.95, trials=25, master_seed=9)
    flat = run_phase_transition(N=200, d=10, deltas=(0.25,), rhos=(0.8,), r=0.0, trials=25, master_seed=9)
    elapsed = time.perf_counter() - t0
    rate = {}
    for rec in corr + flat:
        rate.setdefault((rec.params["rho"], rec.params["r"]), []).append(rec.success)
    rate = {k: float(np.mean(v)) for k, v in rate.items()}
    ok = rate[(0.6, 0.95)] >= 0.9 and rate[(0.8, 0.95)] - rate[(0.8, 0.0)] >= 0.2 and elapsed < 900
    report(9, ok, f"success rho=0.6 r=0.95: {rate[(0.6, 0.95)]:.2f}; rho=0.8: r=0.95 {rate[(0.8, 0.95)]:.2f} "
                  f"vs r=0 {rate[(0.8, 0.0)]:.2f}; {elapsed:.0f}s")
    assert ok
