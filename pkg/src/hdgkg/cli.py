"""Command-line entry point: ``hdgkg {convergence,energy,single} ...``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
import warnings

from .harness import (
    CONVERGENCE_COLUMNS,
    ENERGY_COLUMNS,
    SCHEME_CHOICES,
    THREADS_ENV,
    ConvergenceRow,
    format_table,
    resolve_threads,
    run_convergence,
    run_energy,
    run_single,
    write_table,
)
from .basis import MAX_DEGREE
from .timestepping import StepFailure

MAX_K = MAX_DEGREE - 1

__all__ = ["main", "build_parser", "parse_range", "read_config"]


class UsageError(Exception):
    pass


def parse_range(text: str) -> list[int]:
    """``"3"`` or inclusive ``"a..b"``."""
    text = str(text).strip()
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
            if hi < lo:
                raise UsageError(f"empty range {text!r}")
            return list(range(lo, hi + 1))
        return [int(text)]
    except ValueError:
        raise UsageError(f"invalid range {text!r}; expected an integer or a..b") from None


def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment; keys use flag names."""
    out = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    with fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_").lower()] = value
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return v


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1: {text!r}")
    return v


_DEFAULTS = {
    "convergence": dict(example=1, k="1", m="1..4", scheme="conservative"),
    "energy": dict(example=4, k="1", m="1..4", scheme="conservative", dt=0.1),
    "single": dict(example=1, k="1", m="3", scheme="conservative"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="hdgkg",
        description="HDG solver for the nonlinear Klein-Gordon equation u_tt - lap u + u^3 - u = g on the unit square.",
    )
    sub = parser.add_subparsers(dest="command", metavar="{convergence,energy,single}")
    sub.required = True
    helps = {
        "convergence": "errors and EOCs over a range of mesh levels (one table row per k, m)",
        "energy": "discrete energy drift per time level (one row per m, n)",
        "single": "one run; prints the final-time errors",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        d = _DEFAULTS[name]
        p.add_argument("--example", type=int, choices=(1, 2, 3, 4), help=f"built-in case (default {d['example']})")
        p.add_argument("--k", help=f"polynomial degree, integer or a..b (default {d['k']})")
        p.add_argument("--m", help=f"mesh level(s), 2^m x 2^m cells, integer or a..b (default {d['m']})")
        p.add_argument("--scheme", choices=SCHEME_CHOICES, help=f"time scheme / space (default {d['scheme']})")
        p.add_argument("--tau", type=_positive_float, help="stabilisation parameter (default 1)")
        p.add_argument(
            "--dt",
            type=_positive_float,
            help="time step; default h^((k+1)/2), or h^((k+2)/2) for the variant" + (", 0.1 here" if name == "energy" else ""),
        )
        p.add_argument("--T", type=_positive_float, help="final time (default 1)")
        p.add_argument("--newton-tol", type=_positive_float, help="Newton tolerance on the scaled RMS residual (default 1e-12)")
        p.add_argument("--out", help="output table; .md gives aligned markdown, anything else CSV")
        p.add_argument("--threads", type=_positive_int, help=f"worker processes (default ${THREADS_ENV} or 1)")
        p.add_argument("--config", help="flat key = value file with any of these flags; command-line flags win")
        if name == "single":
            p.add_argument("--records", help="CSV of per-step records (n, t, Newton iterations, residual, energy)")
        p.add_argument("-v", "--verbose", action="store_true", help="log Newton progress")
    return parser


_FLOAT_KEYS = {"tau", "dt", "t", "newton_tol"}


def _merge(args: argparse.Namespace) -> dict:
    """Combine command-line flags, config file values and per-command defaults."""
    values = dict(tau=1.0, dt=None, T=1.0, newton_tol=1e-12, out=None, threads=None, records=None)
    values.update(_DEFAULTS[args.command])
    if args.config:
        known = {a for a in vars(args) if a not in ("command", "config", "verbose")}
        for key, raw in read_config(args.config).items():
            key = "T" if key == "t" else key
            if key not in known:
                raise UsageError(f"unknown config key {key!r}")
            try:
                if key in ("example", "threads"):
                    values[key] = int(raw)
                elif key.lower() in _FLOAT_KEYS:
                    values[key] = float(raw)
                else:
                    values[key] = raw
            except ValueError:
                raise UsageError(f"config value for {key!r} is not a number: {raw!r}") from None
    for key, v in vars(args).items():
        if key in ("command", "config", "verbose") or v is None:
            continue
        values[key] = v
    if values["example"] not in (1, 2, 3, 4):
        raise UsageError(f"unknown example {values['example']}")
    if values["scheme"] not in SCHEME_CHOICES:
        raise UsageError(f"unknown scheme {values['scheme']!r}")
    for key in ("tau", "T", "newton_tol") + (("dt",) if values["dt"] is not None else ()):
        if not values[key] > 0:
            raise UsageError(f"{key} must be positive")
    values["ks"] = parse_range(values["k"])
    values["ms"] = parse_range(values["m"])
    if min(values["ms"]) < 0:
        raise UsageError("mesh levels must be non-negative")
    if values["scheme"] != "variant" and min(values["ks"]) < 1:
        raise UsageError(f"--scheme {values['scheme']} needs k >= 1; k = 0 is available with --scheme variant")
    if min(values["ks"]) < 0 or max(values["ks"]) > MAX_K:
        raise UsageError(f"k must lie in 0..{MAX_K}")
    if values["dt"] is not None and values["dt"] > values["T"]:
        raise UsageError("dt exceeds T")
    try:
        values["threads"] = resolve_threads(values["threads"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return values


def _emit(rows, columns, out):
    print(format_table(rows, columns, markdown=True), end="")
    if out:
        write_table(rows, columns, out)


def _dispatch(command: str, v: dict) -> None:
    if command == "convergence":
        if v["example"] == 4:
            raise UsageError("example 4 has no exact solution; use the energy command")
        rows = run_convergence(
            v["example"], v["ks"], v["ms"], v["scheme"], v["tau"], v["dt"], v["T"], v["newton_tol"], v["threads"]
        )
        _emit(rows, CONVERGENCE_COLUMNS, v["out"])
    elif command == "energy":
        if v["scheme"] == "nonconservative":
            raise UsageError("the energy study needs --scheme conservative or variant")
        if len(v["ks"]) != 1:
            raise UsageError("energy takes a single k")
        study = run_energy(
            v["example"], v["ks"][0], v["ms"], v["dt"], v["T"], v["tau"], v["newton_tol"], v["scheme"]
        )
        _emit(study.rows, ENERGY_COLUMNS, v["out"])
    else:
        if len(v["ks"]) != 1 or len(v["ms"]) != 1:
            raise UsageError("single takes one k and one m")
        r = run_single(
            v["example"], v["ks"][0], v["ms"][0], v["scheme"], v["tau"], v["dt"], v["T"], v["newton_tol"],
            record_path=v["records"],
        )
        print(r.summary())
        if v["out"]:
            row = ConvergenceRow(r.k, r.m, r.err_u, None, r.err_q, None, r.err_ustar, None)
            write_table([row], CONVERGENCE_COLUMNS, v["out"])


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
        values = _merge(args)
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            _dispatch(args.command, values)
    except UsageError as exc:
        print(f"hdgkg: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"hdgkg: error: {exc}", file=sys.stderr)
        return 2
    except StepFailure as exc:
        print(f"hdgkg: solver failed at step {exc.step}: {exc.__cause__ or exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"hdgkg: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
