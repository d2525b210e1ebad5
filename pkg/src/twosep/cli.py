"""Command-line entry point.

Exit codes: 0 on success, 2 on invalid input, 3 on a runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .experiments import KINDS, ParseError, ValidationError, parse_config, preset, run_experiment

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


def _common(p):
    p.add_argument("--config", type=Path, help="JSON experiment document")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--threads", type=int, help="worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twosep", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("coefficients", help="lattice constants and the psi table")
    p.add_argument("--dim", type=int, default=2, choices=(2, 3))
    p.add_argument("--radius", type=int, default=10)
    _common(p)
    p = sub.add_parser("kmc", help="stochastic simulations described by --config")
    _common(p)
    p = sub.add_parser("pde", help="continuum solutions described by --config")
    _common(p)
    p = sub.add_parser("experiment", help="run a named preset, optionally overridden by --config")
    p.add_argument("preset", choices=KINDS)
    _common(p)
    return parser


def _load(path: Path | None) -> dict:
    if path is None:
        return {}
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from None
    if not isinstance(doc, dict):
        raise ParseError("top-level value must be an object")
    return doc


def _resolve(args) -> tuple:
    doc = _load(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.threads is not None:
        doc["threads"] = args.threads
    if args.command == "coefficients":
        doc.update(kind="coefficients_report", d=args.dim, psi_radius=args.radius)
    elif args.command == "experiment":
        doc.pop("kind", None)
        doc["preset"] = args.preset
    elif "kind" not in doc and "preset" not in doc:
        raise ValidationError([f"the {args.command} command needs --config with a 'kind' or 'preset'"])
    cfg = parse_config(json.dumps(doc))
    parts = {"kmc": ("kmc",), "pde": ("pde",)}.get(args.command, ("kmc", "pde"))
    if args.command == "pde" and cfg.kind.startswith("selfdiff"):
        raise ValidationError([f"{cfg.kind} has no continuum part"])
    out = args.out or Path("results") / cfg.kind
    return cfg, parts, out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, parts, out = _resolve(args)
    except (ParseError, ValidationError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"cannot read configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        bundle = run_experiment(cfg, out_dir=out, parts=parts)
    except Exception as exc:
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{cfg.kind}: wrote {len(bundle.tables)} tables to {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
