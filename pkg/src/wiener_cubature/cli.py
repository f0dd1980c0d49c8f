"""Command line entry point: ``cubature <command> ...``.

Commands: ``sig``, ``cubecheck``, ``walkdiag``, ``cubprice`` and ``cubrate``.
Exit status is 0 on success, 2 when an asserted check fails and 1 on a usage
or configuration error.  Every output starts with ``#`` header lines holding
the library version and the fully resolved configuration; the worker count
is left out of the header because it never changes the numbers.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .cubature import builtin_formula, check_moments
from .diagnostics import clt_condition_report, donsker_marginal_check, holder_statistic, moment_scaling_check
from .estimator import convergence_study, estimate_mc, estimate_tree, mesh_family, payoff_from_config
from .meshes import WalkSample, block_increments, parse_mesh, walk_from_increments
from .paths import PiecewiseLinearPath, signature
from .sde import black_scholes_expectation, model_from_config, wong_zakai_reference
from .tensor_algebra import ContractError

EXIT_OK, EXIT_USAGE, EXIT_CHECK = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def strip_header(text: str) -> str:
    """Drop the leading ``#`` header lines of a command's output."""
    lines = text.splitlines(keepends=True)
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        i += 1
    return "".join(lines[i:])


def _header(command: str, config: dict) -> str:
    return f"# wiener_cubature {__version__} {command}\n# config: {json.dumps(config, sort_keys=True)}\n"


def _csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _emit(text: str, out: str | None):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _resolve_seed(flag, config_value=None) -> int:
    if flag is not None:
        return int(flag)
    if config_value is not None:
        return int(config_value)
    env = os.environ.get("CUBATURE_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"CUBATURE_SEED must be an integer, got {env!r}") from None
    return 0


def _read_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None


def _check_keys(cfg: dict, required: set, optional: set, what: str):
    if not isinstance(cfg, dict):
        raise UsageError(f"{what} must be a JSON object")
    missing = required - set(cfg)
    unknown = set(cfg) - required - optional
    if missing:
        raise UsageError(f"{what}: missing keys {sorted(missing)}")
    if unknown:
        raise UsageError(f"{what}: unknown keys {sorted(unknown)}")


# commands ------------------------------------------------------------------------


def cmd_sig(args) -> int:
    path = PiecewiseLinearPath.from_dict(_read_json(args.path))
    sig = signature(path, args.m)
    config = {"path": args.path, "m": args.m}
    _emit(_header("sig", config) + sig.to_json() + "\n", args.out)
    return EXIT_OK


def cmd_cubecheck(args) -> int:
    formula = builtin_formula(args.formula, args.d)
    mode = args.mode or ("exact" if formula.kind == "discrete" else "mc")
    seed = _resolve_seed(args.seed)
    report = check_moments(formula, args.m, mode, args.samples, seed, args.tol)
    config = {"formula": args.formula, "d": args.d, "m": args.m, "mode": mode, "samples": args.samples if mode == "mc" else None, "seed": seed if mode == "mc" else None, "tol": args.tol}
    _emit(_header("cubecheck", config) + _csv(report.to_csv_rows()), args.out)
    for r in report.failures():
        w = "".join(map(str, r.word))
        print(f"FAIL word {w}: cubature {r.cubature!r} target {r.target!r}", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_walkdiag(args) -> int:
    formula = builtin_formula(args.formula, args.d)
    mesh = parse_mesh(args.mesh)
    seed = _resolve_seed(args.seed)
    seqs = np.random.SeedSequence(seed).spawn(4)
    child = [int(s.generate_state(1)[0]) for s in seqs]
    rows = [["check", "key", "value", "stderr", "pass"]]
    ok = True

    scaling = moment_scaling_check(formula, [mesh], p=1, samples=args.samples, seed=child[0])
    for r in scaling.rows:
        rows.append(["scaling", f"ratio:k={r.k}", repr(r.ratio), repr(r.stderr), ""])
    rows.append(["scaling", "slope", repr(scaling.slope), "", int(scaling.bounded)])
    ok &= scaling.bounded

    marg = donsker_marginal_check(formula, mesh, samples=args.samples, seed=child[1])
    for r in marg.ks:
        rows.append(["ks", f"coordinate:{r.coordinate}:statistic", repr(r.statistic), "", ""])
        rows.append(["ks", f"coordinate:{r.coordinate}:pvalue", repr(r.pvalue), "", int(r.passed)])
    ok &= marg.ks_passed
    if marg.area_applicable:
        rows.append(["area", "mean", repr(marg.area_mean), repr(marg.area_mean_stderr), int(marg.area_mean_passed)])
        rows.append(["area", "variance", repr(marg.area_var), repr(marg.area_var_stderr), int(marg.area_var_passed)])
        ok &= marg.area_mean_passed and marg.area_var_passed

    clt = clt_condition_report(formula, [mesh], samples=min(args.samples, 100_000), seed=child[2])
    row = clt.rows[0]
    rows.append(["clt", "second_moment_sum", repr(row.second_moment_sum), "", ""])
    for i, v in enumerate(clt.level1_mean):
        rows.append(["clt", f"level1_mean:{i + 1}", repr(float(v)), "", ""])
    for (i, j), v in np.ndenumerate(row.covariance):
        rows.append(["clt", f"covariance:{i + 1}{j + 1}", repr(float(v)), "", ""])
    for (i, j), v in np.ndenumerate(row.area_drift):
        if i < j:
            rows.append(["clt", f"area_drift:{i + 1}{j + 1}", repr(float(v)), "", ""])
    for eps, v in row.truncated.items():
        rows.append(["clt", f"truncated:eps={eps:g}", repr(v), "", ""])

    n_holder = min(args.samples, 2_000)
    xi = block_increments(formula, mesh, np.random.default_rng(seqs[3]), n_holder, m=2)
    stat = np.atleast_1d(holder_statistic(WalkSample(mesh, walk_from_increments(xi)), args.alpha))
    for q in (0.5, 0.9, 0.99):
        rows.append(["holder", f"alpha={args.alpha:g}:quantile={q:g}", repr(float(np.quantile(stat, q))), "", ""])

    config = {"formula": args.formula, "d": args.d, "mesh": args.mesh, "alpha": args.alpha, "samples": args.samples, "seed": seed}
    _emit(_header("walkdiag", config) + _csv(rows), args.out)
    return EXIT_OK if ok else EXIT_CHECK


_RUN_REQUIRED = {"formula", "mesh", "model", "payoff"}
_RUN_OPTIONAL = {"d", "x0", "samples", "seed", "reference", "tolerance", "method", "substeps", "workers", "out"}
_STUDY_REQUIRED = {"formula", "mesh_family", "model", "payoff"}
_STUDY_OPTIONAL = {"d", "x0", "samples", "seed", "reference", "method", "substeps", "expect_order", "workers", "out"}


def _problem(cfg: dict):
    vf, model_x0 = model_from_config(cfg["model"])
    x0 = cfg.get("x0", None if model_x0 is None else model_x0.tolist())
    if x0 is None:
        raise UsageError("x0 must be given in the config or the model")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    d = int(cfg.get("d", vf.d))
    formula = builtin_formula(cfg["formula"], d)
    payoff = payoff_from_config(cfg["payoff"])
    return vf, x0, formula, payoff


def _reference(ref, vf, x0, payoff, seed: int):
    """Resolve a reference entry to ``(value, stderr)``."""
    if ref is None:
        return None
    if isinstance(ref, (int, float)):
        return float(ref), 0.0
    if not isinstance(ref, dict):
        raise UsageError("reference must be a number or an object")
    if "value" in ref:
        _check_keys(ref, {"value"}, {"stderr"}, "reference")
        return float(ref["value"]), float(ref.get("stderr", 0.0))
    oracle = ref.get("oracle")
    if oracle == "black_scholes":
        _check_keys(ref, {"oracle"}, set(), "reference")
        if vf.name != "black_scholes" or vf.dim != 1 or payoff.kind != "terminal":
            raise UsageError("the black_scholes oracle needs a one-asset Black-Scholes model and a terminal payoff")
        sigma = vf.config["sigma"][0]
        return black_scholes_expectation(payoff.func, float(x0[0]), sigma, 1.0, vf.config["rate"]), 0.0
    if oracle == "wong_zakai":
        _check_keys(ref, {"oracle", "fine_n", "samples"}, {"substeps", "sample_every"}, "reference")
        fine_n = int(ref["fine_n"])
        every = int(ref.get("sample_every", fine_n))
        if fine_n % every:
            raise UsageError("sample_every must divide fine_n")
        times = np.arange(0, fine_n + 1, fine_n // every) / fine_n
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        vals = []
        left = int(ref["samples"])
        while left > 0:
            size = min(left, 20_000)
            sol = wong_zakai_reference(vf, x0, fine_n, rng, (size,), times, ref.get("substeps"))
            vals.append(np.asarray(payoff(sol)).reshape(-1))
            left -= size
        v = np.concatenate(vals)
        return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))
    raise UsageError(f"unknown reference {ref!r}")


def cmd_cubprice(args) -> int:
    cfg = _read_json(args.config)
    _check_keys(cfg, _RUN_REQUIRED, _RUN_OPTIONAL, "run config")
    vf, x0, formula, payoff = _problem(cfg)
    seed = _resolve_seed(args.seed, cfg.get("seed"))
    workers = args.workers or int(cfg.get("workers", 1))
    method = cfg.get("method", "mc")
    mesh = parse_mesh(cfg["mesh"])
    samples = int(cfg.get("samples", 100_000))
    resolved = {
        "formula": cfg["formula"], "d": formula.d, "mesh": cfg["mesh"], "model": vf.config, "payoff": payoff.config,
        "x0": x0.tolist(), "samples": samples if method == "mc" else None, "seed": seed, "method": method,
        "reference": cfg.get("reference"), "tolerance": cfg.get("tolerance"), "substeps": cfg.get("substeps"),
    }
    if method == "tree":
        value, se, used, bad = estimate_tree(formula, mesh, vf, payoff, x0, workers, substeps=cfg.get("substeps")), 0.0, None, 0
        unreliable = False
    elif method == "mc":
        r = estimate_mc(formula, mesh, vf, payoff, x0, samples, seed, workers, substeps=cfg.get("substeps"))
        value, se, used, bad, unreliable = r.value, r.stderr, r.samples, r.diverged, r.unreliable
    else:
        raise UsageError("method must be 'mc' or 'tree'")
    ref = _reference(cfg.get("reference"), vf, x0, payoff, seed)
    rows = [["estimate", "stderr", "samples", "diverged", "unreliable", "reference", "reference_stderr", "abs_error", "pass"]]
    ok = not unreliable
    if ref is None:
        rows.append([repr(value), repr(se), used, bad, int(unreliable), "", "", "", int(ok)])
    else:
        err = abs(value - ref[0])
        if cfg.get("tolerance") is not None:
            ok &= err <= 4.0 * math.hypot(se, ref[1]) + float(cfg["tolerance"])
        rows.append([repr(value), repr(se), used, bad, int(unreliable), repr(ref[0]), repr(ref[1]), repr(err), int(ok)])
    _emit(_header("cubprice", resolved) + _csv(rows), args.out or cfg.get("out"))
    return EXIT_OK if ok else EXIT_CHECK


def cmd_cubrate(args) -> int:
    cfg = _read_json(args.config)
    _check_keys(cfg, _STUDY_REQUIRED, _STUDY_OPTIONAL, "study config")
    vf, x0, formula, payoff = _problem(cfg)
    fam = cfg["mesh_family"]
    _check_keys(fam, {"kind", "n"}, {"gamma"}, "mesh_family")
    meshes = mesh_family(fam["kind"], [int(n) for n in fam["n"]], fam.get("gamma"))
    seed = _resolve_seed(args.seed, cfg.get("seed"))
    workers = args.workers or int(cfg.get("workers", 1))
    method = cfg.get("method", "mc")
    samples = int(cfg.get("samples", 100_000))
    if "reference" not in cfg:
        raise UsageError("study config needs a reference")
    ref = _reference(cfg["reference"], vf, x0, payoff, seed)
    report = convergence_study(formula, meshes, vf, payoff, x0, samples, seed, ref, method, workers, cfg.get("substeps"))
    resolved = {
        "formula": cfg["formula"], "d": formula.d, "mesh_family": fam, "model": vf.config, "payoff": payoff.config,
        "x0": x0.tolist(), "samples": samples if method == "mc" else None, "seed": seed, "method": method,
        "reference": cfg["reference"], "substeps": cfg.get("substeps"), "expect_order": cfg.get("expect_order"),
    }
    _emit(_header("cubrate", resolved) + _csv(report.to_csv_rows()), args.out or cfg.get("out"))
    expect = cfg.get("expect_order")
    if expect is not None:
        lo, hi = expect
        if report.fitted_order is None or not lo <= report.fitted_order <= hi:
            print(f"fitted order {report.fitted_order} outside [{lo}, {hi}]", file=sys.stderr)
            return EXIT_CHECK
    return EXIT_OK


# parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cubature", description="Cubature on Wiener space: signatures, moment checks, walks and weak estimates.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--out", help="output file (default: stdout)")
        sp.add_argument("--workers", type=int, default=None, help="worker threads (results do not depend on it)")
        if seed:
            sp.add_argument("--seed", type=int, default=None, help="RNG seed (fallback: $CUBATURE_SEED, then 0)")

    s = sub.add_parser("sig", help="signature of a piecewise-linear path")
    s.add_argument("--path", required=True)
    s.add_argument("--m", type=int, required=True)
    common(s, seed=False)
    s.set_defaults(func=cmd_sig)

    s = sub.add_parser("cubecheck", help="moment matching against the expected Brownian signature")
    s.add_argument("--formula", required=True)
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--m", type=int, required=True)
    s.add_argument("--mode", choices=("exact", "mc"))
    s.add_argument("--samples", type=int, default=1_000_000)
    s.add_argument("--tol", type=float, default=1e-13)
    common(s)
    s.set_defaults(func=cmd_cubecheck)

    s = sub.add_parser("walkdiag", help="diagnostics of the cubature random walk")
    s.add_argument("--formula", required=True)
    s.add_argument("--d", type=int, default=2)
    s.add_argument("--mesh", required=True)
    s.add_argument("--alpha", type=float, default=0.4)
    s.add_argument("--samples", type=int, default=100_000)
    common(s)
    s.set_defaults(func=cmd_walkdiag)

    s = sub.add_parser("cubprice", help="estimate E[f(X)] for one mesh")
    s.add_argument("--config", required=True)
    common(s)
    s.set_defaults(func=cmd_cubprice)

    s = sub.add_parser("cubrate", help="weak convergence study over a mesh family")
    s.add_argument("--config", required=True)
    common(s)
    s.set_defaults(func=cmd_cubrate)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: sig, cubecheck, walkdiag, cubprice or cubrate")
        if getattr(args, "workers", None) is not None and args.workers < 1:
            raise UsageError("--workers must be >= 1")
        return args.func(args)
    except (UsageError, ContractError, KeyError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
