"""Command-line interface.

Every subcommand ends its output with one ``result: key=value ...`` line.
Exit codes: 0 success / member / satisfied, 1 non-member / violated,
2 undecided, 64 usage error, 65 malformed input.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
from typing import Optional, Sequence

import numpy as np

from macrolocal import bell, certificates, conic, correlators, macroscale, scenario, wiring
from macrolocal.errors import ContractError, DomainError, FormatError, MacrolocalError

EXIT_OK = 0
EXIT_NO = 1
EXIT_UNDECIDED = 2
EXIT_USAGE = 64
EXIT_DATA = 65

_SOLVER_KEYS = {f.name: f.type for f in dataclasses.fields(conic.SolverConfig) if f.name != "diagnostics"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _result(out, **fields) -> None:
    out.write("result: " + " ".join(f"{k}={_fmt(v)}" for k, v in fields.items()) + "\n")


def _read(path: str) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from None


def load_config(path: Optional[str]) -> dict:
    """``key = value`` lines overriding solver settings (and ``gap``)."""
    if path is None:
        return {}
    values = {}
    for lineno, raw in enumerate(_read(path).decode("utf-8").split("\n"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"expected 'key = value', got {line!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "gap":
            kind = float
        elif key in _SOLVER_KEYS:
            kind = {"int": int, "float": float, "str": str}[_SOLVER_KEYS[key]]
        else:
            raise UsageError(f"unknown config key {key!r}")
        try:
            values[key] = kind(value)
        except ValueError:
            raise FormatError(f"bad value for {key}: {value!r}", lineno) from None
    return values


def _solver(args, overrides: dict, diagnostics=None) -> conic.SolverConfig:
    fields = {k: v for k, v in overrides.items() if k in _SOLVER_KEYS}
    if getattr(args, "tol", None) is not None:
        fields["feas_tol"] = args.tol
    try:
        return conic.SolverConfig(diagnostics=diagnostics, **fields)
    except ContractError as exc:
        raise UsageError(str(exc)) from None


def _functional(name: str) -> bell.BellFunctional:
    key = name.strip().lower()
    if key == "chsh" or key.startswith("cglmp:"):
        try:
            return bell.named_functional(key)
        except DomainError as exc:
            raise UsageError(str(exc)) from None
    return bell.parse_functional(_read(name), name=name)


def _pair(text: str) -> tuple:
    try:
        x, y = (int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--settings expects X,Y, got {text!r}") from None
    return x - 1, y - 1


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate(args, out, cfg):
    behavior = scenario.parse_behavior(_read(args.file))
    report = scenario.validate_behavior(behavior, tolerance=args.tol or scenario.DEFAULT_TOLERANCE)
    out.write(
        f"normalized: {report.normalized}\nnonnegative: {report.nonnegative}\n"
        f"no_signaling: {report.no_signaling}\nworst_violation: {report.worst_violation!r}\n"
    )
    _result(out, valid=report.valid, worst_violation=report.worst_violation)
    return EXIT_OK if report.valid else EXIT_NO


def _with_diagnostics(args, cfg, run):
    if args.diagnostics:
        with open(args.diagnostics, "w") as fh:
            return run(_solver(args, cfg, fh))
    return run(_solver(args, cfg))


def cmd_membership(args, out, cfg):
    behavior = scenario.parse_behavior(_read(args.file))
    scenario.require_valid(behavior)
    kind = certificates.CertificateKind.parse(args.kind)
    result = _with_diagnostics(args, cfg, lambda c: conic.membership_q1(behavior, kind, c))
    out.write(f"status: {result.status.value}\n")
    if result.feasible:
        out.write(f"psd_margin: {result.psd_margin!r}\n")
        if args.emit_certificate:
            cert = certificates.build_partial(behavior, kind).with_entries(result.completion)
            with open(args.emit_certificate, "w") as fh:
                fh.write(certificates.dump_certificate(cert))
    else:
        out.write(f"separation_lower_bound: {result.separation_lower_bound!r}\n")
    _result(
        out,
        status=result.status.value,
        psd_margin=result.psd_margin,
        separation=result.separation_lower_bound,
        certified=result.certified,
        iterations=result.iterations,
        method=result.method,
    )
    return {"feasible": EXIT_OK, "infeasible": EXIT_NO}.get(result.status.value, EXIT_UNDECIDED)


def cmd_bound(args, out, cfg):
    functional = _functional(args.functional)
    gap = args.gap if args.gap is not None else cfg.get("gap", 1e-4)
    result = _with_diagnostics(args, cfg, lambda c: bell.q1_bound(functional, gap=gap, config=c))
    out.write(f"lower: {result.lower!r}\nupper: {result.upper!r}\niterations: {result.iterations}\n")
    _result(out, lower=result.lower, upper=result.upper, iterations=result.iterations, converged=result.converged)
    return EXIT_OK if result.converged else EXIT_UNDECIDED


def _vertex_text(vertex: scenario.Behavior) -> str:
    table = vertex.table
    f = [int(np.argmax(table[x, 0].sum(axis=1))) for x in range(table.shape[0])]
    g = [int(np.argmax(table[0, y].sum(axis=0))) for y in range(table.shape[1])]
    return "f=" + ",".join(map(str, f)) + " g=" + ",".join(map(str, g))


def cmd_local_bound(args, out, cfg):
    functional = _functional(args.functional)
    lb = bell.local_bound(functional)
    value = round(lb.value, 12) + 0.0
    out.write(f"{value!r}\nargmax: {_vertex_text(lb.argmax_vertex)}\n")
    _result(out, value=value, argmax=_vertex_text(lb.argmax_vertex).replace(" ", ";"))
    return EXIT_OK


def cmd_correlators(args, out, cfg):
    behavior = scenario.parse_behavior(_read(args.file))
    scenario.require_valid(behavior)
    obs = correlators.parse_observables(_read(args.obs)) if args.obs else None
    corr = correlators.correlators(behavior, obs)
    out.write(corr.to_csv())
    _result(out, settings_a=corr.settings_a, settings_b=corr.two_point.shape[1])
    return EXIT_OK


def cmd_tlm(args, out, cfg):
    corr = correlators.parse_correlators(_read(args.file).decode("utf-8"))
    verdict = correlators.biased_tlm_check(corr) if args.biased else correlators.tlm_check(corr.two_point)
    out.write(f"satisfied: {verdict.satisfied}\nworst_slack: {verdict.worst_slack!r}\n")
    _result(out, satisfied=verdict.satisfied, worst_slack=verdict.worst_slack, biased=args.biased)
    return EXIT_OK if verdict.satisfied else EXIT_NO


def cmd_wire(args, out, cfg):
    boxes = [scenario.parse_behavior(_read(p)) for p in args.boxes]
    for b in boxes:
        scenario.require_valid(b)
    sa = wiring.parse_strategy(_read(args.strategy_a))
    sb = wiring.parse_strategy(_read(args.strategy_b))
    try:
        wired = wiring.apply_wiring(boxes, sa, sb)
    except ContractError as exc:
        raise FormatError(str(exc)) from None
    text = scenario.serialize_behavior(wired).decode("utf-8")
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        out.write(text)
    sc = wired.scenario
    _result(out, settings_a=sc.settings_a, settings_b=sc.settings_b, outcomes=sc.outcomes)
    return EXIT_OK


def cmd_simulate(args, out, cfg):
    behavior = scenario.parse_behavior(_read(args.file))
    x, y = _pair(args.settings)
    try:
        config = macroscale.SimulationConfig(args.pairs, args.trials, args.seed, (x, y))
    except ContractError as exc:
        raise UsageError(str(exc)) from None
    sample = macroscale.simulate_intensities(behavior, config)
    if not args.covariance:
        out.write(sample.to_csv())
        _result(out, trials=args.trials, pairs=args.pairs, seed=args.seed)
        return EXIT_OK
    analytic = macroscale.analytic_covariance(behavior, x, y)
    emp = macroscale.empirical_covariance(sample)
    report = macroscale.convergence_report(sample, analytic)
    labels = [macroscale._label_text(lbl) for lbl in sample.labels]
    out.write("row,column,empirical,analytic,standard_error\n")
    for i, j in np.ndindex(emp.matrix.shape):
        out.write(
            f"{labels[i]},{labels[j]},{emp.matrix[i, j]!r},{analytic.matrix[i, j]!r},{emp.standard_errors[i, j]!r}\n"
        )
    ks_pass = sum(p > 0.01 for p in report.ks_pvalues)
    _result(
        out,
        max_z=report.max_z_score,
        within_4se=report.within_4se,
        ks_pass=f"{ks_pass}/{len(report.ks_pvalues)}",
    )
    return EXIT_OK if report.within_4se else EXIT_NO


def cmd_convert(args, out, cfg):
    dump = certificates.parse_certificate(_read(args.certificate).decode("utf-8"))
    target = certificates.CertificateKind.parse(args.to)
    try:
        converted = certificates.convert_dump(dump, target)
    except (ContractError, certificates.ShapeError) as exc:
        raise FormatError(str(exc)) from None
    out.write(certificates.format_dump(converted))
    _result(out, kind=target.value, size=converted.entries.shape[0])
    return EXIT_OK


def cmd_cglmp_scan(args, out, cfg):
    if args.dmax < 2:
        raise UsageError("--dmax must be at least 2")
    gap = args.gap if args.gap is not None else cfg.get("gap", 1e-4)
    out.write("d,local_bound,q1_lower,q1_upper\n")
    converged = True
    for d in range(2, args.dmax + 1):
        functional = bell.cglmp(d)
        local = round(bell.local_bound(functional).value, 12) + 0.0
        result = bell.q1_bound(functional, gap=gap, config=_solver(args, cfg))
        converged &= result.converged
        out.write(f"{d},{local!r},{result.lower!r},{result.upper!r}\n")
    _result(out, dmax=args.dmax, converged=converged)
    return EXIT_OK if converged else EXIT_UNDECIDED


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="macrolocal", description="Macroscopic locality toolkit")
    parser.add_argument("--config", help="key = value file with solver overrides")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--config", dest="sub_config", help=argparse.SUPPRESS)
        return p

    p = add("validate", cmd_validate, "check normalization, positivity and no-signaling")
    p.add_argument("file")
    p.add_argument("--tol", type=float)

    p = add("membership", cmd_membership, "Q1 membership of a behavior")
    p.add_argument("file")
    p.add_argument("--tol", type=float)
    p.add_argument("--kind", default="npa1", choices=["npa1", "gamma", "covariance", "moment"])
    p.add_argument("--emit-certificate")
    p.add_argument("--diagnostics", help="write solver iteration CSV here")

    p = add("bound", cmd_bound, "bracket the maximum of a functional over Q1")
    p.add_argument("--functional", required=True)
    p.add_argument("--gap", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--diagnostics")

    p = add("local-bound", cmd_local_bound, "maximum over deterministic local points")
    p.add_argument("--functional", required=True)

    p = add("correlators", cmd_correlators, "correlators of a behavior as CSV")
    p.add_argument("file")
    p.add_argument("--obs")

    p = add("tlm", cmd_tlm, "arcsin conditions on a correlator file")
    p.add_argument("file")
    p.add_argument("--biased", action="store_true")

    p = add("wire", cmd_wire, "effective behavior of wired boxes")
    p.add_argument("boxes", nargs="+")
    p.add_argument("--strategy-a", required=True)
    p.add_argument("--strategy-b", required=True)
    p.add_argument("--output")

    p = add("simulate", cmd_simulate, "macroscopic intensity simulation")
    p.add_argument("file")
    p.add_argument("--pairs", type=int, required=True)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--settings", default="1,1")
    p.add_argument("--covariance", action="store_true")

    p = add("convert", cmd_convert, "convert a certificate dump between forms")
    p.add_argument("--certificate", required=True)
    p.add_argument("--to", required=True, choices=["gamma", "npa1", "covariance", "moment"])

    p = add("cglmp-scan", cmd_cglmp_scan, "local and Q1 bounds of CGLMP for d = 2..D")
    p.add_argument("--dmax", type=int, required=True)
    p.add_argument("--gap", type=float)
    p.add_argument("--tol", type=float)
    return parser


def run(argv: Sequence[str], out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
        if args.command is None:
            raise UsageError("a subcommand is required")
        cfg = load_config(args.sub_config or args.config)
        return args.func(args, out, cfg)
    except UsageError as exc:
        err.write(f"usage error: {exc}\n")
        _result(out, error="usage")
        return EXIT_USAGE
    except (MacrolocalError, UnicodeDecodeError) as exc:
        err.write(f"input error: {exc}\n")
        _result(out, error="input")
        return EXIT_DATA


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
