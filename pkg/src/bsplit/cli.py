"""Command-line front end.

Subcommands:

``run``
    Run one algorithm on a problem file (or a seeded random transport
    instance) and write ``trace.csv``, ``summary.json`` and, for transport
    problems, ``plan.csv``.
``bench_stability``
    Sweep transport algorithms over regularization values and record
    non-finite events, iterations to tolerance and LP gaps.
``verify``
    Run a named equivalence or rate check and report pass/fail.

Exit codes: 0 success, 1 failed check, 2 invalid input, 3 numerical failure.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import BsplitError, NumericalError, SchemaError, ValidationError
from .legendre import KERNEL_NAMES, Quadratic, kernel_from_name
from .multiplier import METHODS, MultiplierState, problem_from_dict, run_multiplier
from .operators import quadratic_oracle
from .ot import (
    exact_ot_oracle,
    instance_from_dict,
    marginal_residuals,
    random_instance,
    run_ademm_ot,
    run_bdrs_ot,
    run_sinkhorn,
    write_matrix_csv,
)
from .splitting import (
    DRIVERS,
    CompositeProblem,
    SolverTrace,
    StepSchedule,
    StoppingRule,
    TraceRecord,
    run_solver,
)
from .verify import CHECKS

SUMMARY_SCHEMA = "bsplit.summary/1"
BENCH_SCHEMA = "bsplit.bench/1"

DEFAULTS = {
    "alg": None,
    "kernel": None,
    "gamma": None,
    "eta": None,
    "schedule": "constant",
    "tol": 1e-10,
    "max_iter": 1000,
    "input": None,
    "out": None,
    "log_domain": None,
    "seed": 0,
    "n": 4,
    "timing": False,
}

OT_ALGS = ("sinkhorn", "ademm", "bdrs")
COMPOSITE_ALGS = tuple(DRIVERS)
MULTIPLIER_ALGS = tuple(METHODS)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def resolve_config(args, keys):
    """Merge defaults, an optional ``--config`` JSON file and explicit flags.

    Returns the resolved values and the source of each (``flag``,
    ``config`` or ``default``).
    """
    values = {k: DEFAULTS.get(k) for k in keys}
    sources = {k: "default" for k in keys}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{args.config}: invalid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise SchemaError(f"{args.config}: config must be a JSON object")
        for k, v in doc.items():
            k = k.replace("-", "_")
            if k not in values:
                raise SchemaError(f"{args.config}: unknown config key {k!r}")
            values[k], sources[k] = v, "config"
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            values[k], sources[k] = v, "flag"
    return values, sources


# ---------------------------------------------------------------------------
# problem loading
# ---------------------------------------------------------------------------


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON: {exc}") from None


def _composite_block(spec, label):
    if not isinstance(spec, dict) or spec.get("type") not in ("quadratic", "zero"):
        raise SchemaError(f"{label} must be {{'type': 'quadratic', 'P': ..., 'q': ...}} or {{'type': 'zero'}}")
    return spec


def composite_from_dict(doc):
    """Composite problem ``min f(x) + g(x)`` with quadratic (or zero) terms.

    Layout: ``{"f": {"type": "quadratic", "P": [[...]], "q": [...]},
    "g": {...}, "x0": [...], "optimal_value": x}``; ``x0`` and
    ``optimal_value`` are optional.
    """
    f, g = _composite_block(doc.get("f"), "f"), _composite_block(doc.get("g"), "g")
    dims = [len(np.atleast_1d(s["q"])) for s in (f, g) if s["type"] == "quadratic" and "q" in s]
    if "x0" in doc:
        dims.append(len(np.atleast_1d(doc["x0"])))
    if not dims or len(set(dims)) != 1:
        raise SchemaError("cannot infer a consistent dimension from f, g and x0")
    n = dims[0]

    def parts(spec):
        if spec["type"] == "zero":
            P, q = np.zeros((n, n)), np.zeros(n)
        else:
            try:
                q = np.atleast_1d(np.asarray(spec.get("q", np.zeros(n)), dtype=float))
                P = np.asarray(spec.get("P", np.eye(n)), dtype=float)
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"non-numeric block data: {exc}") from None
            P = P * np.eye(n) if P.ndim == 0 else np.atleast_2d(P)
            if P.shape != (n, n) or q.shape != (n,):
                raise SchemaError(f"block shapes {P.shape} and {q.shape} do not match dimension {n}")
        return P, q

    (Pf, qf), (Pg, qg) = parts(f), parts(g)
    return CompositeProblem(
        f_prox=quadratic_oracle(Pf, qf),
        g_prox=quadratic_oracle(Pg, qg),
        f_value=lambda x: float(0.5 * x @ Pf @ x + qf @ x),
        g_value=lambda x: float(0.5 * x @ Pg @ x + qg @ x),
        f_grad=lambda x: Pf @ x + qf,
        g_grad=lambda x: Pg @ x + qg,
        f_subgrad=lambda x: Pf @ x + qf,
        g_subgrad=lambda x: Pg @ x + qg,
        optimal_value=doc.get("optimal_value"),
        dim=n,
    )


def load_problem(cfg):
    """Return ``(kind, problem, doc)`` with kind ``ot``, ``two_block`` or ``composite``."""
    path = cfg["input"]
    if path is None:
        if cfg["alg"] not in OT_ALGS:
            raise SchemaError("--input is required except for seeded transport runs")
        eta = 1.0 if cfg["eta"] is None else float(cfg["eta"])
        return "ot", random_instance(int(cfg["n"]), int(cfg["seed"]), eta), None
    if not Path(path).is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    if str(path).lower().endswith(".csv"):
        from .ot import load_instance

        return "ot", load_instance(path, cfg["eta"]), None
    doc = _load_json(path)
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: top level must be a JSON object")
    if "C" in doc:
        return "ot", instance_from_dict(doc, cfg["eta"]), doc
    if "M" in doc:
        return "two_block", problem_from_dict(doc), doc
    if "f" in doc and "g" in doc:
        return "composite", composite_from_dict(doc), doc
    raise SchemaError(f"{path}: not a transport instance (C), two-block problem (M) or composite problem (f, g)")


# ---------------------------------------------------------------------------
# runners
# ---------------------------------------------------------------------------


def _vec(a):
    return [float(x) for x in np.ravel(a)]


def _run_ot(cfg, inst):
    alg = cfg["alg"]
    if cfg["gamma"] is not None and not np.isclose(float(cfg["gamma"]), inst.gamma, rtol=1e-12):
        raise SchemaError(f"transport runs use gamma = 1/eta = {inst.gamma!r}; pass --eta instead of --gamma")
    if cfg["schedule"] != "constant":
        raise SchemaError("step-size schedules are not available for transport runs")
    log_domain = cfg["log_domain"]
    kwargs = dict(max_iter=int(cfg["max_iter"]), tol=float(cfg["tol"]))
    if alg == "sinkhorn":
        run = run_sinkhorn(inst, log_domain=True if log_domain is None else log_domain, **kwargs)
    elif alg == "ademm":
        run = run_ademm_ot(inst, log_domain=bool(log_domain), **kwargs)
    else:
        run = run_bdrs_ot(inst, **kwargs)
    trace = SolverTrace(driver=alg, x0=np.zeros(0))
    best = np.inf
    for k, cost, re, ce in run.history:
        best = min(best, cost)
        trace.append(TraceRecord(k, inst.gamma, cost, max(re, ce), best, k * inst.gamma,
                                 k * inst.gamma ** 2, 0), {})
    row, col = marginal_residuals(run.plan, inst.r, inst.c)
    summary = {
        "iterations": run.iterations,
        "converged": run.converged,
        "residual": max(row, col),
        "objective": inst.cost(run.plan),
        "final": {"plan": [_vec(r) for r in run.plan]},
        "certificates": {"row_marginal_error": row, "col_marginal_error": col,
                         "log_domain": bool(run.log_mode), "switched_to_log_at": run.switched_at},
    }
    if max(inst.shape) <= 4:
        _, value = exact_ot_oracle(inst)
        summary["certificates"]["lp_value"] = value
        summary["certificates"]["lp_gap"] = abs(inst.cost(run.plan) - value)
    return trace, summary, run.plan


def _run_composite(cfg, problem, doc):
    kernel = kernel_from_name(cfg["kernel"] or "energy", L=(doc or {}).get("L"))
    gamma = 1.0 if cfg["gamma"] is None else float(cfg["gamma"])
    schedule = (StepSchedule.inverse_sqrt(gamma) if cfg["schedule"] == "inverse_sqrt"
                else StepSchedule.constant(gamma))
    x0 = (doc or {}).get("x0")
    trace = run_solver(cfg["alg"], problem, kernel, schedule, StoppingRule(float(cfg["tol"])),
                       int(cfg["max_iter"]), x0=x0, timing=bool(cfg["timing"]))
    final = {k: _vec(v) for k, v in trace.final.items() if isinstance(v, np.ndarray)}
    last = trace.records[-1] if trace.records else None
    summary = {
        "iterations": len(trace),
        "converged": trace.converged,
        "residual": last.residual if last else None,
        "objective": last.objective if last else None,
        "final": final,
        "certificates": {},
    }
    if problem.optimal_value is not None and last:
        summary["certificates"]["objective_gap"] = last.min_objective - float(problem.optimal_value)
    return trace, summary, None


def _run_two_block(cfg, problem, doc):
    alg = cfg["alg"]
    default_kernel = "boltzmann" if alg in ("emm", "ademm", "sym_ademm") else "energy"
    kernel = kernel_from_name(cfg["kernel"] or default_kernel, L=doc.get("L"))
    if alg == "vm_admm" and not isinstance(kernel, Quadratic):
        raise SchemaError("vm_admm needs --kernel quadratic and an 'L' matrix in the input")
    if alg in ("emm", "ademm", "sym_ademm") and problem.coupling != "inequality":
        raise SchemaError(f"{alg} requires inequality coupling")
    if cfg["schedule"] != "constant":
        raise SchemaError("multiplier methods use a constant step size")
    gamma = 1.0 if cfg["gamma"] is None else float(cfg["gamma"])
    state = MultiplierState.start(problem, w=doc.get("w0"))
    records, final = run_multiplier(alg, kernel, problem, gamma, state, int(cfg["max_iter"]),
                                    float(cfg["tol"]))
    trace = SolverTrace(driver=alg, x0=state.w)
    best = np.inf
    for k, rec in enumerate(records, start=1):
        obj = problem.objective(rec["u"], rec["v"])
        best = min(best, obj)
        if rec["log_w"] is not None:
            res = float(np.max(np.abs(rec["log_w"] - np.log(rec["w_prev"]))))
        else:
            res = float(np.max(np.abs(kernel.grad(rec["w"]) - kernel.grad(rec["w_prev"]))))
        trace.append(TraceRecord(k, gamma, obj, res, best, k * gamma, k * gamma ** 2, 0), {})
    viol = problem.residual(final.u, final.v)
    if problem.coupling == "inequality":
        viol = np.maximum(viol, 0.0)
    last = trace.records[-1] if trace.records else None
    summary = {
        "iterations": len(records),
        "converged": bool(last and last.residual <= float(cfg["tol"])),
        "residual": last.residual if last else None,
        "objective": problem.objective(final.u, final.v),
        "final": {"u": _vec(final.u), "v": _vec(final.v), "w": _vec(final.w)},
        "certificates": {"constraint_violation": float(np.max(np.abs(viol)))},
    }
    return trace, summary, None


def _finite_json(obj):
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _finite_json(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite_json(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return _finite_json(obj.item())
    return obj


def _emit(summary, out_dir, name="summary.json"):
    text = json.dumps(_finite_json(summary), indent=2, sort_keys=True)
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / name).write_text(text + "\n", encoding="utf-8")
    print(text)


def cmd_run(args):
    cfg, sources = resolve_config(args, list(DEFAULTS))
    if cfg["alg"] is None:
        raise SchemaError("--alg is required")
    kind, problem, doc = load_problem(cfg)
    allowed = {"ot": OT_ALGS, "composite": COMPOSITE_ALGS, "two_block": MULTIPLIER_ALGS}[kind]
    if cfg["alg"] not in allowed:
        raise SchemaError(f"algorithm {cfg['alg']!r} does not apply to a {kind} problem; choose from {', '.join(allowed)}")
    runner = {"ot": _run_ot, "composite": _run_composite, "two_block": _run_two_block}[kind]
    trace, body, plan = runner(cfg, problem) if kind == "ot" else runner(cfg, problem, doc)
    out = cfg["out"]
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        trace.to_csv(Path(out) / "trace.csv", timing=bool(cfg["timing"]))
        if plan is not None:
            write_matrix_csv(plan, Path(out) / "plan.csv")
    summary = {
        "schema": SUMMARY_SCHEMA,
        "command": "run",
        "status": "ok",
        "problem": kind,
        "algorithm": cfg["alg"],
        "kernel": cfg["kernel"],
        "config": cfg,
        "config_sources": sources,
    }
    summary.update(body)
    _emit(summary, out)
    return 0


# ---------------------------------------------------------------------------
# stability sweep
# ---------------------------------------------------------------------------


def _bench_cell(alg, inst, label, max_iter, tol, log_default):
    name, _, mode = alg.partition("-")
    log_domain = {"log": True, "primal": False}.get(mode, log_default)
    runner = {"sinkhorn": run_sinkhorn, "ademm": run_ademm_ot, "bdrs": run_bdrs_ot}.get(name)
    if runner is None:
        raise SchemaError(f"unknown benchmark algorithm {alg!r}")
    row = {"algorithm": name, "mode": "log" if log_domain or name == "bdrs" else "primal",
           "eta": inst.eta, "instance": label}
    try:
        kw = dict(max_iter=max_iter, tol=tol, catch=True)
        if name != "bdrs":
            kw["log_domain"] = log_domain
        run = runner(inst, **kw)
        row.update(
            iterations=run.iterations,
            iterations_to_tol=run.iterations if run.converged else None,
            first_nonfinite=run.event["iteration"] if run.event else None,
            event=run.event,
            switched_to_log_at=run.switched_at,
        )
        if run.plan is not None and max(inst.shape) <= 4:
            row["lp_gap"] = abs(inst.cost(run.plan) - exact_ot_oracle(inst)[1])
        else:
            row["lp_gap"] = None
    except BsplitError as exc:
        row.update(iterations=None, iterations_to_tol=None, first_nonfinite=None,
                   event={"kind": type(exc).__name__, "message": str(exc),
                          "iteration": getattr(exc, "iteration", None)},
                   switched_to_log_at=None, lp_gap=None)
    return row


def bench_stability(etas, instances, algorithms, max_iter=10_000, tol=1e-9, log_default=False):
    """Run every (algorithm, eta, instance) cell; failures are recorded, not raised."""
    rows = []
    for label, inst in instances:
        for eta in etas:
            cell_inst = type(inst)(inst.C, inst.r, inst.c, eta)
            for alg in algorithms:
                rows.append(_bench_cell(alg, cell_inst, label, max_iter, tol, log_default))
    return {"schema": BENCH_SCHEMA, "rows": rows}


def _bench_table(report):
    head = f"{'algorithm':<10}{'mode':<8}{'eta':>8}  {'instance':<14}{'iters':>7}{'to tol':>8}{'NaN/ovf':>9}  {'lp gap':>10}"
    lines = [head, "-" * len(head)]
    for r in report["rows"]:
        event = r["first_nonfinite"] if r["first_nonfinite"] is not None else ("-" if not r["event"] else "err")
        gap = f"{r['lp_gap']:.3e}" if r.get("lp_gap") is not None else "-"
        lines.append(
            f"{r['algorithm']:<10}{r['mode']:<8}{r['eta']:>8.3g}  {r['instance']:<14}"
            f"{str(r['iterations']):>7}{str(r['iterations_to_tol'] or '-'):>8}{str(event):>9}  {gap:>10}"
        )
    return "\n".join(lines)


def cmd_bench(args):
    instances = []
    for path in args.input or []:
        cfg = dict(DEFAULTS, input=path, alg="sinkhorn")
        kind, inst, _ = load_problem(cfg)
        if kind != "ot":
            raise SchemaError(f"{path}: benchmark instances must be transport instances")
        instances.append((Path(path).stem, inst))
    if not instances:
        instances.append((f"random-n{args.n}-s{args.seed}", random_instance(args.n, args.seed)))
    report = bench_stability(args.eta, instances, args.alg, args.max_iter, args.tol,
                             bool(args.log_domain))
    report["config"] = {"eta": args.eta, "alg": args.alg, "max_iter": args.max_iter,
                        "tol": args.tol, "seed": args.seed, "n": args.n,
                        "log_domain": bool(args.log_domain)}
    text = json.dumps(_finite_json(report), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    if args.json:
        print(text)
    else:
        print(_bench_table(report))
    return 0


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def cmd_verify(args):
    names = list(CHECKS) if args.check == "all" else [args.check]
    results, failed = [], False
    for name in names:
        fn = CHECKS[name]
        kw = {}
        if name in ("thm3.1", "thm4.1") and args.kernel:
            kw["kernel"] = args.kernel
        if name in ("appendixA", "appendixB"):
            kw["N"] = args.N
        if name in ("thm3.1", "thm3.2", "thm4.1", "sec3.3") and args.max_iter:
            kw["iters"] = args.max_iter
        if name == "smooth" and args.max_iter:
            kw["iters"] = args.max_iter
        res = fn(**kw)
        print(res.line())
        failed |= not res.passed
        results.append({"check": res.name, "passed": res.passed,
                        "max_deviation": res.max_deviation, "detail": res.detail})
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(_finite_json({"schema": "bsplit.verify/1",
                                                           "results": results}), indent=2) + "\n")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="bsplit", description="Bregman operator splitting toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one algorithm on a problem")
    r.add_argument("--alg", help=f"algorithm: {', '.join(sorted(set(OT_ALGS + COMPOSITE_ALGS + MULTIPLIER_ALGS)))}")
    r.add_argument("--kernel", help=f"Legendre kernel: {', '.join(KERNEL_NAMES)}")
    r.add_argument("--gamma", type=float, help="step size (transport runs: must equal 1/eta)")
    r.add_argument("--eta", type=float, help="transport regularization (overrides the file)")
    r.add_argument("--schedule", choices=("constant", "inverse_sqrt"))
    r.add_argument("--tol", type=float, help="stopping tolerance (default 1e-10)")
    r.add_argument("--max-iter", dest="max_iter", type=int, help="iteration cap (default 1000)")
    r.add_argument("--input", help="problem file (.json or .csv)")
    r.add_argument("--out", help="output directory for trace.csv, summary.json, plan.csv")
    r.add_argument("--log-domain", dest="log_domain", nargs="?", const=True, type=_bool,
                   help="log-domain arithmetic for transport scalings")
    r.add_argument("--seed", type=int, help="seed for the random transport instance used without --input")
    r.add_argument("--n", type=int, help="size of the random transport instance (default 4)")
    r.add_argument("--timing", action="store_true", default=None,
                   help="record wall-clock time in the trace (breaks byte-identical reruns)")
    r.add_argument("--config", help="JSON file with default values for the flags above")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench_stability", help="stability sweep over eta")
    b.add_argument("--eta", type=float, nargs="+", default=[0.01, 0.1, 1.0])
    b.add_argument("--alg", nargs="+", default=["sinkhorn", "ademm"],
                   help="algorithms, optionally suffixed -log or -primal")
    b.add_argument("--input", nargs="*", help="transport instance files")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--n", type=int, default=4)
    b.add_argument("--max-iter", dest="max_iter", type=int, default=10_000)
    b.add_argument("--tol", type=float, default=1e-9)
    b.add_argument("--log-domain", dest="log_domain", nargs="?", const=True, type=_bool, default=False)
    b.add_argument("--out", help="write the JSON report here")
    b.add_argument("--json", action="store_true", help="print JSON instead of the table")
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("verify", help="run an equivalence or rate check")
    v.add_argument("check", choices=sorted(CHECKS) + ["all"])
    v.add_argument("--kernel", help="kernel for thm3.1 / thm4.1 (default boltzmann)")
    v.add_argument("--N", type=int, default=10_000, help="iterations for appendixA / appendixB")
    v.add_argument("--max-iter", dest="max_iter", type=int, help="iterations for the equivalence checks")
    v.add_argument("--out", help="write a JSON report here")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError, IsADirectoryError) as exc:
        code = 3 if getattr(exc, "iteration", None) is not None else 2
        print(f"error: {exc}", file=sys.stderr)
        return code
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except BsplitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
