"""Command-line interface: ``pslice analyze|slice|interpret|verify|dot FILE``.

Exit codes: 0 success, 2 input error, 3 configuration error, 4 truncated
iteration, 5 verification failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Optional

from . import depend, lang, slicer
from .expr import ParseError
from .pcfg import PCFG, PCFGError, analyze, show_label, to_dot, to_json, validate
from .semantics import (Distribution, FixpointConfig, IterationLimitExceeded, agrees,
                        independent, point_mass, run)

EXIT_INPUT, EXIT_CONFIG, EXIT_TRUNCATED, EXIT_VERIFY = 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


@dataclass(frozen=True)
class RunConfig:
    epsilon: Fraction = Fraction(1, 10**9)
    k_max: int = 500
    sum_preserving: tuple[str, ...] = ()
    ess: tuple[str, ...] = ()
    output_format: str = "json"
    seed: int = 0  # accepted for reproducibility of randomized runs; nothing here is random

    def fixpoint(self) -> FixpointConfig:
        return FixpointConfig(epsilon=self.epsilon, k_max=self.k_max)


# --- input --------------------------------------------------------------------------

def load_graph(path: str) -> PCFG:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise CliError(EXIT_INPUT, f"{path}: {err.strerror}")
    try:
        if path.endswith(".json") or text.lstrip().startswith("{"):
            return validate(json.loads(text))
        return lang.compile_source(text)
    except ParseError as err:
        raise CliError(EXIT_INPUT, f"{path}:{err}")
    except json.JSONDecodeError as err:
        raise CliError(EXIT_INPUT, f"{path}:{err.lineno}:{err.colno}: {err.msg}")
    except PCFGError as err:
        lines = [f"{path}: invalid program"] + [f"  {v}" for v in err.violations]
        raise CliError(EXIT_INPUT, "\n".join(lines))
    except (KeyError, TypeError, ValueError) as err:
        raise CliError(EXIT_INPUT, f"{path}: malformed graph: {err}")


def _parse_nodes(text: Optional[str]) -> list[str]:
    if not text:
        return []
    return [part.strip() for part in text.split(",") if part.strip()]


def _resolve_node(g: PCFG, token: str, flag: str) -> int:
    if token.startswith("loop@"):
        try:
            line = int(token[5:])
        except ValueError:
            raise CliError(EXIT_CONFIG, f"{flag}: bad anchor {token!r}")
        hits = [v for v, ln in g.loop_lines.items() if ln == line]
        if not hits:
            raise CliError(EXIT_CONFIG, f"{flag}: no while loop on line {line}")
        return hits[0]
    try:
        v = int(token)
    except ValueError:
        raise CliError(EXIT_CONFIG, f"{flag}: {token!r} is not a node id or loop@<line>")
    if v not in g.labels:
        raise CliError(EXIT_CONFIG, f"{flag}: no node {v}")
    return v


def _resolve_all(g: PCFG, tokens, flag: str) -> frozenset[int]:
    return frozenset(_resolve_node(g, tok, flag) for tok in tokens)


def _config(args) -> RunConfig:
    try:
        eps = Fraction(args.epsilon)
    except (ValueError, ZeroDivisionError):
        raise CliError(EXIT_CONFIG, f"--epsilon: {args.epsilon!r} is not a rational")
    if eps <= 0:
        raise CliError(EXIT_CONFIG, "--epsilon must be positive")
    if args.k_max < 1:
        raise CliError(EXIT_CONFIG, "--k-max must be at least 1")
    return RunConfig(eps, args.k_max, tuple(_parse_nodes(args.sum_preserving)),
                     tuple(_parse_nodes(args.ess)), args.format or "json", args.seed)


def _initial(g: PCFG, args) -> Distribution:
    if not getattr(args, "init", None):
        return point_mass(g)
    try:
        with open(args.init, encoding="utf-8") as fh:
            return Distribution.from_json(json.load(fh), g.variables)
    except (OSError, ValueError, KeyError, TypeError) as err:
        raise CliError(EXIT_INPUT, f"{args.init}: cannot read initial distribution: {err}")


# --- the pipeline pieces -------------------------------------------------------------

def _slice(g: PCFG, cfg: RunConfig, t=None):
    t = t if t is not None else analyze(g)
    declared = _resolve_all(g, cfg.sum_preserving, "--sum-preserving")
    extra = _resolve_all(g, cfg.ess, "--ess")
    try:
        ess = slicer.build_ess(g, t, declared, extra)
    except slicer.NotCycleInducing as err:
        raise CliError(EXIT_CONFIG, f"--sum-preserving: {err}")
    pair = slicer.bsp(g, depend.dd_star(g), ess.nodes)
    return t, ess, pair


def _marginal_json(d: Distribution, names) -> list[dict[str, Any]]:
    names = sorted(names)
    return [{"store": dict(zip(names, s)), "p": str(p)}
            for s, p in sorted(d.project(names).items())]


def cmd_analyze(g: PCFG, cfg: RunConfig, args) -> dict[str, Any]:
    t = analyze(g)
    dd = depend.data_dep(g)
    dds = depend.dd_star(g, dd)
    return {
        "nodes": [{"id": v, "label": show_label(g.labels[v]),
                   "def": sorted(g.defs(v)), "use": sorted(g.uses(v))} for v in g.nodes],
        "postdominators": {str(v): sorted(t.pd[v]) for v in g.nodes},
        "fppd": {str(v): w for v, w in sorted(t.fppd.items())},
        "lap": [[v, w, n] for (v, w), n in sorted(t.lap.items())],
        "cycle_inducing": sorted(t.cycle_inducing),
        "data_dependence": [list(e) for e in sorted(dd)],
        "dd_star": [list(e) for e in dds.pairs() if e[0] != e[1]],
        "relevant_vars": {str(v): sorted(depend.relevant_vars(g, g.nodes, v)) for v in g.nodes},
    }


def cmd_slice(g: PCFG, cfg: RunConfig, args) -> dict[str, Any]:
    _, ess, pair = _slice(g, cfg)
    res = slicer.residual(g, pair.q)
    out = {**pair.to_json(), "ess_provenance": {str(v): tag for v, tag in ess.provenance.items()},
           "residual": to_json(res), "minimal_wrt_ess": True}
    if isinstance(g.origin, lang.Program):
        out["source"] = lang.pretty(g, pair.q)
    return out


def _run(g, x, d0, cfg: RunConfig, allow_truncated: bool, t=None):
    try:
        return run(g, x, d0, cfg.fixpoint(), t, allow_truncated=allow_truncated)
    except IterationLimitExceeded as err:
        raise CliError(EXIT_TRUNCATED,
                       f"no convergence after {err.result.iterations} iterations "
                       "(use --allow-truncated to print the partial result)")


def cmd_interpret(g: PCFG, cfg: RunConfig, args) -> dict[str, Any]:
    x = None
    if args.slice:
        x = _resolve_all(g, _parse_nodes(args.slice), "--slice")
    res = _run(g, x, _initial(g, args), cfg, args.allow_truncated)
    out = res.to_json()
    out["marginal"] = _marginal_json(res.output, g.uses(g.end))
    if res.evaluation_errors:
        out["evaluation_errors"] = res.evaluation_errors
    return out


def cmd_verify(g: PCFG, cfg: RunConfig, args) -> dict[str, Any]:
    t, ess, pair = _slice(g, cfg)
    d0 = _initial(g, args)
    orig = _run(g, None, d0, cfg, args.allow_truncated, t)
    sliced = _run(g, pair.q, d0, cfg, args.allow_truncated, t)
    exact = orig.exact and sliced.exact
    tol = Fraction(0) if exact else cfg.epsilon
    m_orig, m_slice = orig.output_mass, sliced.output_mass
    if m_slice:
        c = m_orig / m_slice
    else:
        c = Fraction(1) if m_orig <= tol else None
    rv_end = depend.relevant_vars(g, pair.q, g.end)
    ok = c is not None and agrees(orig.output, sliced.output.scale(c), rv_end, tol)
    residuals = []
    if c is not None:
        names = sorted(rv_end)
        a, b = orig.output.project(names), sliced.output.scale(c).project(names)
        residuals = [{"store": dict(zip(names, s)), "diff": str(a.get(s, 0) - b.get(s, 0))}
                     for s in sorted(a.keys() | b.keys())]
    rv_q = depend.relevant_vars(g, pair.q, g.start)
    rv_q0 = depend.relevant_vars(g, pair.q0, g.start)
    return {
        **pair.to_json(),
        "ok": ok,
        "c": None if c is None else str(c),
        "exact": exact,
        "tolerance": str(tol),
        "mass_original": str(m_orig),
        "mass_sliced": str(m_slice),
        "relevant_at_end": sorted(rv_end),
        "residuals": residuals,
        "start_stays_outside_q0": depend.stays_outside(g, pair.q0, g.start, g.end, t.pd),
        "initial_independent": independent(d0, rv_q, rv_q0),
        "iterations": {"original": orig.iterations, "sliced": sliced.iterations},
    }


def cmd_dot(g: PCFG, cfg: RunConfig, args) -> str:
    if not args.highlight:
        return to_dot(g)
    _, _, pair = _slice(g, cfg)
    return to_dot(g, pair.q, pair.q0, highlight=True)


# --- output ------------------------------------------------------------------------

def _color(text: str, code: str) -> str:
    if os.environ.get("PSLICE_NO_COLOR") or not sys.stdout.isatty():
        return text
    return f"\033[{code}m{text}\033[0m"


def _text(report: dict[str, Any]) -> str:
    lines = []
    for key, value in report.items():
        if key == "ok":
            value = _color("ok", "32") if value else _color("FAILED", "31")
        elif isinstance(value, (dict, list)):
            value = json.dumps(value, sort_keys=True)
        lines.append(f"{_color(key, '1')}: {value}")
    return "\n".join(lines) + "\n"


COMMANDS = {
    "analyze": cmd_analyze,
    "slice": cmd_slice,
    "interpret": cmd_interpret,
    "verify": cmd_verify,
    "dot": cmd_dot,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pslice", description="Slice probabilistic programs and interpret them exactly.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("file", help=".pwhile source or .json graph")
        p.add_argument("--sum-preserving", metavar="NODES",
                       help="comma-separated node ids or loop@LINE anchors known to be sum-preserving")
        p.add_argument("--ess", metavar="NODES", help="extra essential node ids")
        p.add_argument("--epsilon", default="1/1000000000", help="convergence tolerance p/q")
        p.add_argument("--k-max", type=int, default=500, help="iteration cap")
        p.add_argument("--init", metavar="FILE", help="initial distribution (JSON dump)")
        p.add_argument("--format", choices=["json", "text", "dot"])
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--allow-truncated", action="store_true",
                       help="print the last iterate instead of failing when k-max is hit")
        if name == "interpret":
            p.add_argument("--slice", metavar="NODES", help="interpret with X = these nodes")
        if name == "dot":
            p.add_argument("--highlight", action="store_true",
                           help="mark Q solid, Q0 dashed, the rest gray")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        g = load_graph(args.file)
        result = COMMANDS[args.command](g, cfg, args)
    except CliError as err:
        print(f"pslice: {err}", file=sys.stderr)
        return err.code
    if isinstance(result, str):
        sys.stdout.write(result)
    elif cfg.output_format == "text":
        sys.stdout.write(_text(result))
    elif cfg.output_format == "dot":
        sys.stdout.write(to_dot(g, result.get("Q", ()), result.get("Q0", ()),
                                highlight="Q" in result))
    else:
        sys.stdout.write(json.dumps(result, indent=2, sort_keys=True) + "\n")
    if args.command == "verify" and not result["ok"]:
        return EXIT_VERIFY
    return 0


if __name__ == "__main__":
    sys.exit(main())
