"""Command-line interface.

Subcommands: ``gen`` writes a random instance, ``solve`` runs one method
on an instance and prints a JSON record, ``compare`` runs several methods
over a seed range and writes CSV, ``verify`` re-checks stored records.

Exit codes: 0 ok, 1 internal error, 2 bad input, 3 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import baselines, lp, oracle
from .energy import InstanceSeedSpec, dumps, generate, load
from .errors import HEMParseError, InvalidInputError, OracleCapError
from .persistency import (STRICT, WEAK, instance_hash, map_from_record, pseudo_boolean_L1,
                          result_record, solve_relaxation, two_phase, verify_strict_improving,
                          verify_weak_improving)
from .relaxation import build_spec, export_triplets

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT, EXIT_VERIFY = 0, 1, 2, 3
METHODS = ("l1", "l1-pb", "dee1", "dee2", "pruning", "roofdual")
CSV_COLUMNS = ["seed", "method", "relaxation", "mode", "completeness", "n_elim", "verified",
               "lp_time_ms", "total_time_ms"]
GAP_RETRIES = 200


class VerificationFailed(Exception):
    pass


# ---------------------------------------------------------------------
# shared helpers

def run_method(f, method, relaxation="flp", map_class="p2y", mode=WEAK, eps="auto", y=None):
    if method == "l1":
        return two_phase(f, relaxation, map_class, mode, eps, y=y)
    if method == "l1-pb":
        return pseudo_boolean_L1(f, relaxation, y=y)
    if method == "dee1":
        return baselines.dee1(f, mode)
    if method == "dee2":
        return baselines.dee2(f, mode)
    if method == "pruning":
        return baselines.iterative_pruning(f, relaxation)
    if method == "roofdual":
        return baselines.roof_dual_persistency(f, mode)
    raise InvalidInputError(f"unknown method {method!r}")


def check_result(f, method, mode, p, relaxation="flp", cap=oracle.DEFAULT_CAP, lp_check=True):
    """The two checks: relaxed-improving map, and persistency by brute force."""
    out = {}
    if lp_check and method != "dee2":
        rel = build_spec(f, relaxation or "flp")
        if mode == STRICT:
            v = verify_strict_improving(f, p, rel)
            out["lp"] = bool(v.is_strict_improving)
        else:
            v = verify_weak_improving(f, p, rel)
            out["lp"] = bool(v.is_weak_improving)
        out["lp_objective"] = v.objective
    else:
        out["lp"] = "skipped"
    try:
        out["oracle"] = bool(oracle.check_persistency(f, p, mode, cap).valid)
    except OracleCapError:
        out["oracle"] = "skipped"
    out["ok"] = out["lp"] is not False and out["oracle"] is not False
    return out


def _parse_seeds(text):
    if ".." in text:
        a, b = text.split("..", 1)
        a, b = int(a), int(b)
        if b < a:
            raise InvalidInputError("empty seed range")
        return list(range(a, b + 1))
    return [int(v) for v in text.split(",") if v]


def _spec_from_args(args, seed):
    return InstanceSeedSpec(kind=args.type, rows=args.rows, cols=args.cols, nodes=args.nodes,
                            labels=args.labels, degree=args.degree, terms=args.terms, seed=seed)


def make_instance(args, seed):
    """Generate; with ``--require-gap`` retry derived seeds until the FLP
    value is below the exact minimum. Returns ``(model, rejected)``."""
    f = generate(_spec_from_args(args, seed))
    if not getattr(args, "require_gap", False):
        return f, 0
    for attempt in range(GAP_RETRIES):
        s = seed if attempt == 0 else int(
            np.random.SeedSequence([seed, attempt]).generate_state(1)[0])
        f = generate(_spec_from_args(args, s))
        best, _ = oracle.all_optima(f, args.oracle_cap)
        if solve_relaxation(f, "flp").objective < best - 1e-6 * f.scale():
            return f, attempt
    raise InvalidInputError(f"no instance with an integrality gap after {GAP_RETRIES} tries")


def _read_y(spec, f):
    if spec in (None, "auto"):
        return None
    if spec == "zeros":
        return tuple([0] * f.n_nodes)
    with open(spec, encoding="utf-8") as fh:
        y = [int(v) for v in fh.read().split()]
    if len(y) != f.n_nodes or any(not 0 <= v < k for v, k in zip(y, f.label_counts)):
        raise InvalidInputError("test labeling file does not match the instance")
    return tuple(y)


def _write(text, path):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


# ---------------------------------------------------------------------
# subcommands

def cmd_gen(args):
    seed = args.seed
    f, rejected = make_instance(args, seed)
    comment = f"generator {args.type}"
    if args.require_gap:
        comment += f"\nbase-seed {seed} rejected {rejected}"
    _write(dumps(f, comment), args.out)
    return EXIT_OK


def cmd_solve(args):
    lp.set_default_backend(args.backend)
    f = load(args.instance)
    y = _read_y(args.y, f)
    eps = args.eps if args.eps == "auto" else float(args.eps)
    t0 = time.perf_counter()
    res = run_method(f, args.method, args.relaxation, args.cls, args.mode, eps, y)
    rec = result_record(f, res, dict(instance=os.path.abspath(args.instance)))
    if args.dump_lp:
        rel = build_spec(f, args.relaxation)
        with open(args.dump_lp, "w", encoding="utf-8") as fh:
            fh.write(rel.problem(rel.costs(rel.align(f))).dumps())
    if args.export_matrix:
        export_triplets(build_spec(f, args.relaxation).constraints, args.export_matrix)
    status = EXIT_OK
    if not args.no_verify:
        chk = check_result(f, res.method, res.mode, res.map, res.relaxation, args.oracle_cap)
        rec["checks"] = chk
        if not chk["ok"]:
            status = EXIT_VERIFY
    rec["wall_time_ms"] = 1000.0 * (time.perf_counter() - t0)
    _write(json.dumps(rec, indent=2, default=float) + "\n", args.out)
    return status


def _compare_one(payload):
    args, seed = payload
    lp.set_default_backend(args.backend)
    f, _ = make_instance(args, seed)
    rows = []
    for method in args.methods:
        t0 = time.perf_counter()
        row = dict(seed=seed, method=method, relaxation=args.relaxation, mode=args.mode)
        try:
            with lp.lp_clock() as clk:
                res = run_method(f, method, args.relaxation, args.cls, args.mode, args.eps_value)
            verified = "skipped"
            if not args.no_verify:
                chk = check_result(f, method, res.mode, res.map, res.relaxation, args.oracle_cap)
                verified = str(chk["ok"]).lower()
            row.update(mode=res.mode, completeness=f"{res.completeness:.4f}", n_elim=res.n_elim,
                       verified=verified, lp_time_ms=f"{1000 * clk.elapsed:.3f}")
        except Exception as exc:  # recorded per row, the run continues
            row.update(completeness="", n_elim="", verified=f"error: {exc}", lp_time_ms="")
        row["total_time_ms"] = f"{1000 * (time.perf_counter() - t0):.3f}"
        rows.append(row)
    return rows


def cmd_compare(args):
    seeds = _parse_seeds(args.seeds)
    args.methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in args.methods:
        if m not in METHODS:
            raise InvalidInputError(f"unknown method {m!r}")
    args.eps_value = args.eps if args.eps == "auto" else float(args.eps)
    payloads = [(args, s) for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(_compare_one, payloads))
    else:
        results = [_compare_one(p) for p in payloads]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    per = {m: [] for m in args.methods}
    failed = False
    for rows in results:
        for row in rows:
            w.writerow(row)
            if row["completeness"] != "":
                per[row["method"]].append(float(row["completeness"]))
            failed |= row["verified"] not in ("true", "skipped")
    for m, vals in per.items():
        mean = sum(vals) / len(vals) if vals else float("nan")
        buf.write(f"# mean completeness {m} {mean:.4f}\n")
    _write(buf.getvalue(), args.csv)
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_verify(args):
    failures = []
    lines = []
    for path in args.records:
        with open(path, encoding="utf-8") as fh:
            try:
                rec = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InvalidInputError(f"{path}: not a JSON record ({exc})") from None
        inst = args.instance or rec.get("instance")
        if not inst:
            raise InvalidInputError(f"{path}: no instance given")
        f = load(inst)
        if instance_hash(f) != rec.get("instance_hash"):
            failures.append(f"{path}: instance hash mismatch")
            continue
        p = map_from_record(rec)
        chk = check_result(f, rec["method"], rec["mode"], p, rec.get("relaxation"),
                           args.oracle_cap)
        lines.append(f"{path}: relaxed-improving={chk['lp']} persistency={chk['oracle']}")
        if chk["lp"] is False:
            failures.append(f"{path}: map is not relaxed-improving "
                            f"(objective {chk['lp_objective']:.6g})")
        if chk["oracle"] is False:
            failures.append(f"{path}: persistency violated by an exact optimum")
    out = "\n".join(lines + [f"FAIL {m}" for m in failures])
    sys.stdout.write(out + ("\n" if out else ""))
    return EXIT_VERIFY if failures else EXIT_OK


# ---------------------------------------------------------------------
# argument parsing

def _add_generator_flags(p):
    p.add_argument("--type", default="potts", choices=["potts", "full", "poly", "posiform-grid"])
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--nodes", type=int)
    p.add_argument("--labels", type=int, default=3)
    p.add_argument("--degree", type=int, default=3)
    p.add_argument("--terms", type=int, default=20)
    p.add_argument("--require-gap", action="store_true",
                   help="retry until the FLP relaxation is not tight")


def _add_method_flags(p):
    p.add_argument("--relaxation", default="flp", choices=["blp", "flp"])
    p.add_argument("--class", dest="cls", default="p2y", choices=["p1y", "p2y"])
    p.add_argument("--mode", default="weak", choices=["weak", "strict"])
    p.add_argument("--eps", default="auto", help="perturbation size or 'auto'")
    p.add_argument("--no-verify", action="store_true")
    p.add_argument("--oracle-cap", type=int, default=oracle.DEFAULT_CAP)
    p.add_argument("--backend", default="highs", choices=sorted(lp.BACKENDS))


def build_parser():
    parser = argparse.ArgumentParser(prog="partialopt",
                                     description="Persistency for discrete energy minimization")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a random instance")
    _add_generator_flags(g)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="-")
    g.add_argument("--oracle-cap", type=int, default=oracle.DEFAULT_CAP)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="run one method on an instance")
    s.add_argument("instance")
    s.add_argument("--method", default="l1", choices=METHODS)
    _add_method_flags(s)
    s.add_argument("--y", default="auto", help="auto, zeros, or a file of labels")
    s.add_argument("--out", default="-")
    s.add_argument("--dump-lp", metavar="PATH", help="write the relaxation LP as text")
    s.add_argument("--export-matrix", metavar="PATH",
                   help="write the constraint matrix as triplets")
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("compare", help="run several methods over a seed range")
    _add_generator_flags(c)
    _add_method_flags(c)
    c.add_argument("--methods", default="dee1,pruning,l1")
    c.add_argument("--seeds", default="0..9", help="a..b inclusive, or a comma list")
    c.add_argument("--csv", default="-")
    c.add_argument("--jobs", type=int, default=1)
    c.set_defaults(func=cmd_compare)

    v = sub.add_parser("verify", help="re-check stored result records")
    v.add_argument("records", nargs="+")
    v.add_argument("--instance", help="instance file (default: path stored in the record)")
    v.add_argument("--oracle-cap", type=int, default=oracle.DEFAULT_CAP)
    v.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (InvalidInputError, HEMParseError, FileNotFoundError, IsADirectoryError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT
    except Exception as exc:
        sys.stderr.write(f"internal error: {type(exc).__name__}: {exc}\n")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
