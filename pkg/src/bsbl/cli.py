"""Command-line interface: ``bsbl synth``, ``bsbl recover`` and ``bsbl bench``.

Every option can also be given in a JSON or YAML file passed with
``--config``; keys are the long option names with dashes or underscores.
Command-line flags override the file, which overrides the built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import BSBLError
from .experiments import (
    PROTOCOLS,
    AlgoSpec,
    GenSpec,
    NoiseSetting,
    make_instance,
    nmse,
    summarize,
    transition_curve,
)
from .experiments.protocols import run_algorithm
from .model import BlockPartition, Problem

log = logging.getLogger("bsbl")

EXIT_OK, EXIT_INPUT, EXIT_MAXITER = 0, 1, 2
BUNDLE_FORMAT = "bsbl-problem/1"
FLOAT_FMT = "%.17g"


class InputError(Exception):
    pass


# --- matrix files -----------------------------------------------------------

def write_matrix(path: Path, a: np.ndarray) -> None:
    """Row-major CSV with a ``# rows,cols`` header and 17 significant digits."""
    a = np.asarray(a, dtype=np.float64)
    a2 = a.reshape(-1, 1) if a.ndim == 1 else a
    buf = io.StringIO()
    np.savetxt(buf, a2, fmt=FLOAT_FMT, delimiter=",", header=f"{a2.shape[0]},{a2.shape[1]}", comments="# ")
    Path(path).write_text(buf.getvalue())


def read_matrix(path: Path, vector: bool = False) -> np.ndarray:
    path = Path(path)
    try:
        with path.open() as fh:
            header = fh.readline()
            rows, cols = (int(v) for v in header.lstrip("#").strip().split(","))
            data = np.loadtxt(fh, delimiter=",", dtype=np.float64, ndmin=2)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read matrix {path}: {exc}") from exc
    if data.size == 0:
        data = data.reshape(rows, cols)
    if data.shape != (rows, cols):
        raise InputError(f"{path}: header says {rows}x{cols}, found {data.shape[0]}x{data.shape[1]}")
    if vector:
        if cols != 1:
            raise InputError(f"{path}: expected a column vector, got {rows}x{cols}")
        return data[:, 0]
    return data


def write_bundle(out: Path, phi, y, partition: BlockPartition, x_gen=None, generation: dict | None = None,
                 noise_var: float | None = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    files = {"phi": "phi.csv", "y": "y.csv"}
    write_matrix(out / "phi.csv", phi)
    write_matrix(out / "y.csv", y)
    if x_gen is not None:
        files["x_gen"] = "x_gen.csv"
        write_matrix(out / "x_gen.csv", x_gen)
    desc = {"format": BUNDLE_FORMAT, "files": files, "partition": list(partition.sizes),
            "generation": generation or {}, "noise_var": noise_var}
    (out / "problem.json").write_text(json.dumps(desc, indent=2, sort_keys=True) + "\n")


def read_bundle(path: Path) -> tuple[Problem, BlockPartition, np.ndarray | None, dict]:
    path = Path(path)
    desc_path = path / "problem.json" if path.is_dir() else path
    try:
        desc = json.loads(desc_path.read_text())
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read problem descriptor {desc_path}: {exc}") from exc
    if desc.get("format") != BUNDLE_FORMAT:
        raise InputError(f"{desc_path}: unsupported format {desc.get('format')!r}")
    root = desc_path.parent
    files = desc.get("files", {})
    try:
        phi = read_matrix(root / files["phi"])
        y = read_matrix(root / files["y"], vector=True)
    except KeyError as exc:
        raise InputError(f"{desc_path}: missing file entry {exc}") from exc
    x_gen = read_matrix(root / files["x_gen"], vector=True) if "x_gen" in files else None
    try:
        problem = Problem(y, phi)
        partition = BlockPartition(tuple(desc["partition"]))
    except (KeyError, ValueError) as exc:
        raise InputError(f"{desc_path}: {exc}") from exc
    if partition.n != problem.N:
        raise InputError(f"{desc_path}: partition covers {partition.n} columns, phi has {problem.N}")
    return problem, partition, x_gen, desc


# --- configuration ----------------------------------------------------------

def load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    except (ValueError, yaml.YAMLError) as exc:
        raise InputError(f"cannot parse config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise InputError(f"config {path} must hold a mapping")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def _apply_config(parser: argparse.ArgumentParser, config: dict) -> None:
    known = {a.dest for a in parser._actions}
    unknown = sorted(set(config) - known)
    if unknown:
        raise InputError(f"unknown config keys: {', '.join(unknown)}")
    parser.set_defaults(**config)


def _parse_corr(text) -> float | tuple[float, float]:
    if isinstance(text, (int, float)):
        return float(text)
    if isinstance(text, (list, tuple)):
        return float(text[0]), float(text[1])
    parts = str(text).split(",")
    return float(parts[0]) if len(parts) == 1 else (float(parts[0]), float(parts[1]))


def _parse_params(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, val = str(item).partition("=")
        if not sep:
            raise InputError(f"--param expects KEY=VALUE, got {item!r}")
        out[key.replace("-", "_")] = yaml.safe_load(val)
    return out


# --- commands ---------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.partition:
        sizes = [int(v) for v in str(args.partition).split(",")] if isinstance(args.partition, str) \
            else [int(v) for v in args.partition]
        partition = BlockPartition(tuple(sizes))
    else:
        if args.N % args.block_size:
            raise InputError(f"--block-size {args.block_size} does not divide N={args.N}")
        partition = BlockPartition.equal(args.N // args.block_size, args.block_size)
    spec = GenSpec(M=args.M, N=args.N, partition=partition, k_active=args.k_active,
                   intra_corr=_parse_corr(args.corr), normalize_blocks=args.normalize,
                   snr_db=args.snr_db, seed=args.seed)
    inst = make_instance(spec)
    generation = {"M": spec.M, "N": spec.N, "k_active": spec.k_active, "intra_corr": args.corr,
                  "normalize_blocks": spec.normalize_blocks, "snr_db": spec.snr_db, "seed": spec.seed}
    out = Path(args.out)
    write_bundle(out, inst.problem.phi, inst.problem.y, partition, inst.x, generation, inst.noise_var)
    print(f"wrote problem bundle to {out}")
    return EXIT_OK


def cmd_recover(args) -> int:
    problem, partition, x_gen, desc = read_bundle(Path(args.bundle))
    spec = AlgoSpec.parse(args.algo)
    if args.h is not None:
        if not spec.name.startswith("ebsbl"):
            raise InputError("--h applies to ebsbl algorithms only")
        spec = AlgoSpec(spec.name, spec.learn_correlation, args.h, spec.d)
    if args.learn_corr == "off":
        spec = AlgoSpec(spec.name, False, spec.h, spec.d)
    noise = NoiseSetting.parse(args.noise)
    support = None
    if spec.name == "oracle":
        if x_gen is None:
            raise InputError("the oracle needs x_gen in the bundle")
        support = np.flatnonzero(x_gen)
    res = run_algorithm(spec, problem, partition, noise, support, args.max_iters)
    out = Path(args.out) if args.out else Path(args.bundle) / f"recovery-{spec.name}"
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(out / "x_hat.csv", res.x_hat)
    summary = {
        "algorithm": args.algo, "h": spec.h, "learn_correlation": spec.learn_correlation,
        "noise": args.noise, "iterations": res.iterations, "converged": bool(res.converged),
        "learned_r": float(res.learned_r), "nmse": None if x_gen is None else nmse(res.x_hat, x_gen),
    }
    (out / "result.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return EXIT_OK if res.converged else EXIT_MAXITER


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % v
    return str(v)


def write_results_csv(path: Path, records, manifest_name: str = "manifest.json") -> None:
    rows = [r.as_row() for r in records]
    for row in rows:
        row.pop("wall_time_ms")
    cols = list(rows[0]) if rows else []
    buf = io.StringIO()
    buf.write(f"# manifest: {manifest_name}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in rows:
        w.writerow([_fmt(row.get(c, "")) for c in cols])
    Path(path).write_text(buf.getvalue())


def write_timings_csv(path: Path, records) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cell", "trial", "algorithm", "wall_time_ms"])
    for r in records:
        w.writerow([r.cell, r.trial, r.algorithm, "%.3f" % r.wall_time_ms])
    Path(path).write_text(buf.getvalue())


def cmd_bench(args, argv) -> int:
    started = datetime.now(timezone.utc).isoformat()
    params = dict(args.params or {})
    params.update(_parse_params(args.param))
    if args.trials is not None:
        params["trials"] = args.trials
    if args.algorithms:
        algos = args.algorithms if isinstance(args.algorithms, list) else str(args.algorithms).split(",")
        params["algorithms"] = tuple(a.strip() for a in algos)
    protocol = PROTOCOLS[args.experiment]
    try:
        records = protocol(master_seed=args.seed, workers=args.workers, **params)
    except TypeError as exc:
        raise InputError(f"bad parameters for {args.experiment}: {exc}") from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_results_csv(out / "results.csv", records)
    write_timings_csv(out / "timings.csv", records)
    summary = {"experiment": args.experiment, "seed": args.seed, "cells": summarize(records)}
    if args.experiment == "phase":
        curve = transition_curve(summary["cells"], args.threshold)
        summary["threshold"] = args.threshold
        summary["transition"] = {a: [{"delta": d, "rho": r} for d, r in sorted(c.items())]
                                 for a, c in curve.items()}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    manifest = {
        "command": ["bsbl", *argv], "master_seed": args.seed, "experiment": args.experiment,
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in params.items()},
        "version": __version__, "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "outputs": ["results.csv", "timings.csv", "summary.json"],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    print(f"wrote {len(records)} trial records to {out / 'results.csv'}")
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bsbl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic problem bundle")
    s.add_argument("--config")
    s.add_argument("--M", type=int, default=100)
    s.add_argument("--N", type=int, default=300)
    s.add_argument("--block-size", type=int, default=4)
    s.add_argument("--partition", help="comma-separated block sizes, overrides --block-size")
    s.add_argument("--k-active", type=int, default=20)
    s.add_argument("--corr", default="0.95", help="AR(1) coefficient, or lo,hi for a uniform draw per block")
    s.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=False)
    s.add_argument("--snr-db", type=float, default=None, help="omit for noiseless measurements")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="problem")

    r = sub.add_parser("recover", help="recover x from a problem bundle")
    r.add_argument("bundle", nargs="?")
    r.add_argument("--config")
    r.add_argument("--algo", default="bsbl-bo", help=f"one of {', '.join(AlgoSpec.NAMES)}, with optional :options")
    r.add_argument("--h", type=int, default=None)
    r.add_argument("--learn-corr", choices=("on", "off"), default="on")
    r.add_argument("--noise", default="learn", help="noiseless, learn or fixed:<variance>")
    r.add_argument("--max-iters", type=int, default=None)
    r.add_argument("--out", default=None)

    b = sub.add_parser("bench", help="run a Monte Carlo experiment")
    b.add_argument("--config")
    b.add_argument("--experiment", choices=sorted(PROTOCOLS), default="phase")
    b.add_argument("--trials", type=int, default=None)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--algorithms", default=None, help="comma-separated algorithm ids")
    b.add_argument("--param", action="append", default=None, metavar="KEY=VALUE",
                   help="protocol parameter, value parsed as YAML (repeatable)")
    b.add_argument("--params", type=json.loads, default=None, help=argparse.SUPPRESS)
    b.add_argument("--threshold", type=float, default=0.9)
    b.add_argument("--workers", type=int, default=None)
    b.add_argument("--out", default="bench-out")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            subparser = parser._subparsers._group_actions[0].choices[args.command]
            _apply_config(subparser, load_config(args.config))
            args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "recover":
            if not args.bundle:
                raise InputError("recover needs a problem bundle")
            return cmd_recover(args)
        return cmd_bench(args, argv)
    except (InputError, BSBLError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
