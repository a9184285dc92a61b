"""``vilab`` command line: generate, solve, experiment, verify.

Exit codes: 0 when every verdict passes, 1 when any verdict fails, 2 on
usage or I/O errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

from . import fh, solvers
from .mdp import Mdp, MdpFormatError, Policy, ValueFunction, loads, mdp_to_json, validate
from .numeric import Backend, ScalarFormatError, parse_exact

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
PRECISION_ENV = "VILAB_PRECISION_OVERRIDE"
CSV_HEADER = [
    "k", "m", "M_k", "beta", "backend", "predicted_switch",
    "measured_switch", "pi_iterations", "verdict", "wall_seconds",
]


class UsageError(Exception):
    pass


def _precision_override() -> int | None:
    raw = os.environ.get(PRECISION_ENV)
    if not raw:
        return None
    try:
        bits = int(raw)
    except ValueError:
        raise UsageError(f"{PRECISION_ENV} must be an integer, got {raw!r}") from None
    if bits < 2:
        raise UsageError(f"{PRECISION_ENV} must be >= 2")
    return bits


def _beta(text: str) -> Fraction:
    try:
        return parse_exact(text)
    except ScalarFormatError as exc:
        raise UsageError(f"--beta: {exc}") from None


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _params_from_args(args) -> fh.FhParams:
    if getattr(args, "params", None):
        try:
            doc = json.loads(Path(args.params).read_text())
            params = fh.FhParams.from_json(doc)
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"cannot read params {args.params}: {exc}") from None
    else:
        if args.k is None or args.M is None:
            raise UsageError("need --k and --M (or --params)")
        try:
            params = fh.FhParams(
                k=args.k,
                M=_int_list(args.M),
                beta=_beta(args.beta),
                variant=fh.Variant(args.variant),
                precision_bits=args.precision_bits,
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    override = _precision_override()
    if override is not None and params.variant is fh.Variant.EXP:
        params = fh.FhParams(params.k, params.M, params.beta, params.variant, override)
    return params


def _backend_for(params: fh.FhParams, name: str | None) -> Backend:
    if not name:
        return params.default_backend()
    try:
        bits = params.working_precision() if params.variant is fh.Variant.EXP else None
        return Backend.from_name(name, bits)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_instance(path: str) -> Mdp:
    try:
        text = sys.stdin.read() if path == "-" else Path(path).read_text()
        mdp = loads(text)
    except (OSError, MdpFormatError) as exc:
        raise UsageError(f"cannot load instance {path}: {exc}") from None
    problems = validate(mdp)
    if problems:
        raise UsageError(f"invalid instance {path}: " + "; ".join(map(str, problems)))
    return mdp


def _emit(doc, out: str | None):
    text = json.dumps(doc, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args) -> int:
    if args.family_exp:
        if args.kmax is None or args.kmax < 1:
            raise UsageError("--family-exp needs --kmax >= 1")
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        status = EXIT_OK
        for params in fh.exponential_family(args.kmax, _beta(args.beta), _precision_override()):
            mdp = fh.build_fh(params, _backend_for(params, args.backend))
            path = out_dir / f"fh_k{params.k}.json"
            path.write_text(json.dumps(mdp_to_json(mdp), indent=2) + "\n")
            (out_dir / f"fh_k{params.k}.params.json").write_text(json.dumps(params.to_json(), indent=2) + "\n")
            problems = validate(mdp)
            for problem in problems:
                print(f"{path}: {problem}", file=sys.stderr)
            status = max(status, EXIT_FAIL if problems else EXIT_OK)
            print(path)
        return status

    if args.mdp:
        try:
            mdp = loads(Path(args.mdp).read_text())
        except (OSError, MdpFormatError) as exc:
            raise UsageError(f"cannot load {args.mdp}: {exc}") from None
    else:
        params = _params_from_args(args)
        try:
            mdp = fh.build_fh(params, _backend_for(params, args.backend))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    problems = validate(mdp)
    for problem in problems:
        print(problem, file=sys.stderr)
    _emit(mdp_to_json(mdp), args.out)
    return EXIT_FAIL if problems else EXIT_OK


# ---------------------------------------------------------------------------
# solve


def _policy_arg(mdp: Mdp, spec: str) -> Policy:
    if spec == "optimal":
        return solvers.optimal_policy(mdp)
    if spec == "worst":
        return solvers.worst_policy(mdp)
    if spec == "first":
        return Policy([mdp.actions[x][0] for x in mdp.states])
    if spec == "last":
        return Policy([mdp.actions[x][-1] for x in mdp.states])
    choice = _int_list(spec)
    policy = Policy(choice)
    if len(choice) != mdp.n or any(policy[x] not in mdp.actions[x] for x in mdp.states):
        raise UsageError(f"policy {spec!r} is not valid for this instance")
    return policy


def cmd_solve(args) -> int:
    mdp = _load_instance(args.instance)
    if args.method == "pi":
        result = solvers.policy_iteration(mdp, _policy_arg(mdp, args.init))
        _emit({
            "method": "pi",
            "iterations": result.iterations,
            "final_policy": result.policy.as_dict(),
            "stop_reason": "PolicyStable",
        }, None)
        return EXIT_OK

    rules = []
    target = None
    if args.target_policy:
        target = _policy_arg(mdp, args.target_policy)
        rules.append(solvers.TargetPolicy(target, args.patience))
    if args.span_eps:
        try:
            rules.append(solvers.SpanEpsilon(mdp.backend.parse(args.span_eps)))
        except (ScalarFormatError, ValueError) as exc:
            raise UsageError(f"--span-eps: {exc}") from None
    if args.max_iter:
        rules.append(solvers.MaxIter(args.max_iter))
    if not rules:
        raise UsageError("value iteration needs a stop rule (--target-policy, --span-eps or --max-iter)")
    trace = solvers.value_iteration(mdp, rules, trace_values=bool(args.trace))
    summary = {
        "method": "vi",
        "iterations": trace.count,
        "final_policy": trace.last.greedy.as_dict(),
        "stop_reason": trace.stop_reason.value,
    }
    if target is not None:
        hits = [rec.j for rec in trace.iterations if rec.greedy == target]
        summary["switch_iteration"] = hits[0] if hits else None
    if args.trace:
        with open(args.trace, "w") as fp:
            solvers.write_trace(trace, mdp, fp)
    _emit(summary, None)
    return EXIT_OK


# ---------------------------------------------------------------------------
# experiment


def run_row(params: fh.FhParams, backend_name: str, max_iter: int) -> dict:
    """Measure one experiment row; ``backend_name`` is rational, double or bigfloat."""
    start = time.monotonic()
    if backend_name == "rational":
        params = fh.FhParams(params.k, params.M, params.beta, fh.Variant.DYADIC)
        backend = Backend.rational()
    elif backend_name == "double":
        backend = Backend.double()
    else:
        backend = Backend.bigfloat(params.working_precision())
    mdp = fh.build_fh(params, backend)
    predicted = fh.predicted_switch_iteration(params)
    measured = solvers.measure_switch_iteration(mdp, 1, 0, max_iter)
    worst_start = Policy((params.k, 0, 0))
    pi = solvers.policy_iteration(mdp, worst_start)
    threshold = fh.switch_threshold(params)
    passed = (
        isinstance(measured, int)
        and measured == predicted
        and measured > threshold
        and pi.policy[1] == 0
    )
    return {
        "k": params.k,
        "m": params.m,
        "M_k": params.M_k,
        "beta": f"{params.beta.numerator}/{params.beta.denominator}",
        "backend": str(backend),
        "predicted_switch": predicted,
        "measured_switch": measured if isinstance(measured, int) else "not_reached",
        "pi_iterations": pi.iterations,
        "verdict": "PASS" if passed else "FAIL",
        "wall_seconds": f"{time.monotonic() - start:.6f}",
        "_threshold": float(threshold),
    }


def _run_row_packed(job):
    return run_row(*job)


def cmd_experiment(args) -> int:
    if args.kmax < 1:
        raise UsageError("--kmax must be >= 1")
    backends = [b.strip() for b in args.backends.split(",") if b.strip()]
    for name in backends:
        if name not in ("bigfloat", "double", "rational"):
            raise UsageError(f"unknown backend {name!r} (choose bigfloat, double, rational)")
    family = fh.exponential_family(args.kmax, _beta(args.beta), _precision_override())
    jobs = [(params, name, args.max_iter) for params in family for name in backends]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_run_row_packed, jobs))
    else:
        rows = [_run_row_packed(job) for job in jobs]

    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=CSV_HEADER, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if args.out:
            out.close()
    log = sys.stderr if not args.out else sys.stdout
    for row in rows:
        print(
            f"k={row['k']} m={row['m']} backend={row['backend']} threshold={row['_threshold']:.2f} "
            f"predicted={row['predicted_switch']} measured={row['measured_switch']} "
            f"pi={row['pi_iterations']} {row['verdict']}",
            file=log,
        )
    return EXIT_FAIL if any(row["verdict"] == "FAIL" for row in rows) else EXIT_OK


# ---------------------------------------------------------------------------
# verify


def _exact(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    return Fraction(*(int(c) for c in value.as_integer_ratio()))


def verify_report(params: fh.FhParams, backend: Backend, jmax: int) -> dict:
    """Compare value-iteration iterates with the closed form up to ``jmax``."""
    mdp = fh.build_fh(params, backend)
    if jmax > 0:
        trace = solvers.value_iteration(mdp, [solvers.MaxIter(jmax)])
        iterates = trace.values()
    else:
        iterates = [ValueFunction.zeros(mdp)]
    max_abs = Fraction(0)
    max_rel = Fraction(0)
    for j, v in enumerate(iterates):
        expected = fh.closed_form_values(params, j, backend)
        for got, want in zip(v, expected):
            got, want = _exact(got), _exact(want)
            diff = abs(got - want)
            max_abs = max(max_abs, diff)
            max_rel = max(max_rel, diff / abs(want) if want else diff)
    predicted = fh.predicted_switch_iteration(params)
    measured = solvers.measure_switch_iteration(mdp, 1, 0, 2 * predicted + 10)
    if backend.exact:
        tolerance = Fraction(0)
        values_ok = max_abs == 0
    else:
        tolerance = Fraction(2) ** (4 - backend.bits)
        values_ok = max_rel <= tolerance
    switch_ok = measured == predicted
    return {
        "jmax": jmax,
        "variant": params.variant.value,
        "backend": str(backend),
        "max_abs_discrepancy": float(max_abs),
        "max_rel_discrepancy": float(max_rel),
        "tolerance": float(tolerance),
        "values": "PASS" if values_ok else "FAIL",
        "predicted_switch": predicted,
        "measured_switch": measured if isinstance(measured, int) else "not_reached",
        "switch_agreement": "PASS" if switch_ok else "FAIL",
        "verdict": "PASS" if values_ok and switch_ok else "FAIL",
    }


def cmd_verify(args) -> int:
    if args.jmax < 0:
        raise UsageError("--jmax must be >= 0")
    if args.instance:
        mdp = _load_instance(args.instance)
        try:
            params = fh.recover_params(mdp)
        except fh.NotFhInstanceError as exc:
            raise UsageError(f"{args.instance}: {exc}") from None
        backend = mdp.backend
    else:
        params = _params_from_args(args)
        backend = _backend_for(params, args.backend)
    report = verify_report(params, backend, args.jmax)
    _emit(report, None)
    return EXIT_OK if report["verdict"] == "PASS" else EXIT_FAIL


# ---------------------------------------------------------------------------


def _add_param_flags(p: argparse.ArgumentParser):
    p.add_argument("--params", help="FhParams JSON file")
    p.add_argument("--k", type=int)
    p.add_argument("--M", help="comma-separated increasing integers M_1,...,M_k")
    p.add_argument("--beta", default="9/10", help="discount as a scalar string (default 9/10)")
    p.add_argument("--variant", choices=["exp", "dyadic"], default="exp")
    p.add_argument("--precision-bits", type=int)
    p.add_argument("--backend", help="rational, double, bigfloat or bigfloatN")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vilab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="emit an instance as MDP JSON")
    _add_param_flags(gen)
    gen.add_argument("--mdp", help="validate and re-emit a generic MDP JSON file")
    gen.add_argument("--family-exp", action="store_true", help="write the exponential family k=1..kmax")
    gen.add_argument("--kmax", type=int)
    gen.add_argument("--out-dir", default=".")
    gen.add_argument("--out", help="write to a file instead of standard output")
    gen.set_defaults(func=cmd_generate)

    solve = sub.add_parser("solve", help="run value or policy iteration on an instance")
    solve.add_argument("instance", help="MDP JSON file, or - for standard input")
    solve.add_argument("--method", choices=["vi", "pi"], required=True)
    solve.add_argument("--target-policy", help="optimal, worst, first, last or a,b,c")
    solve.add_argument("--patience", type=int, default=1)
    solve.add_argument("--span-eps", help="span tolerance as a scalar string")
    solve.add_argument("--max-iter", type=int)
    solve.add_argument("--init", default="first", help="PI start: worst, first, last, optimal or a,b,c")
    solve.add_argument("--trace", help="write a JSON-lines trace here")
    solve.set_defaults(func=cmd_solve)

    exp = sub.add_parser("experiment", help="switch-iteration scaling experiment")
    exp.add_argument("--kmax", type=int, required=True)
    exp.add_argument("--beta", default="9/10")
    exp.add_argument("--backends", default="bigfloat", help="comma list of bigfloat, double, rational")
    exp.add_argument("--max-iter", type=int, default=10**5)
    exp.add_argument("--jobs", type=int, default=1)
    exp.add_argument("--out", help="CSV path (default standard output)")
    exp.set_defaults(func=cmd_experiment)

    ver = sub.add_parser("verify", help="check value iteration against the closed form")
    ver.add_argument("instance", nargs="?", help="FH instance JSON (parameters are recovered)")
    _add_param_flags(ver)
    ver.add_argument("--jmax", type=int, default=100)
    ver.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"vilab {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
