"""Command-line front end: ``ksq validate|sequence|certify|gromov|export``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence

import torch

from kahlerseq import __version__, report
from kahlerseq.config import DTYPE
from kahlerseq.errors import KahlerSeqError, NotFoundError
from kahlerseq.fields import ManifoldSpec, TorsionFieldSpec, read_manifold_spec, validate_fields
from kahlerseq.gromov import CertifyConfig, certify_kahler, frame_residuals, gromov_J
from kahlerseq.sequence import SequenceConfig, run_sequence
from kahlerseq.utils import worker_count
from kahlerseq.zoo import builtin, catalog, export

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_IO = 3
EXIT_ALL_FAILED = 4
EXIT_PREMISE_FAILED = 5
EXIT_TOLERANCE_FAILED = 6

ZOO_PREFIX = "zoo:"


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def load_spec(source: str) -> ManifoldSpec:
    """A spec file path, or ``zoo:NAME`` for a built-in entry."""
    try:
        if source.startswith(ZOO_PREFIX):
            return builtin(source[len(ZOO_PREFIX) :]).spec()
        return read_manifold_spec(source)
    except OSError as e:
        raise CliError(f"cannot read {source}: {e.strerror or e}", EXIT_IO) from e
    except KahlerSeqError as e:
        raise CliError(f"{source}: {e}", EXIT_INVALID) from e


def _write(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text, encoding="utf-8")
    except OSError as e:
        raise CliError(f"cannot write {out}: {e.strerror or e}", EXIT_IO) from e


def _load_seed_torsion(path: str, spec: ManifoldSpec) -> TorsionFieldSpec:
    try:
        sources = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise CliError(f"cannot read {path}: {e.strerror or e}", EXIT_IO) from e
    except UnicodeDecodeError as e:
        raise CliError(f"{path}: not UTF-8 text: invalid byte at offset {e.start}", EXIT_INVALID) from e
    except json.JSONDecodeError as e:
        raise CliError(f"{path}: invalid JSON: {e.msg}", EXIT_INVALID) from e
    if not isinstance(sources, dict) or not all(isinstance(v, str) for v in sources.values()):
        raise CliError(f'{path}: expected an object of "k,i,j": expression entries', EXIT_INVALID)
    try:
        return TorsionFieldSpec.from_strings(spec.dim, sources, spec.coords)
    except KahlerSeqError as e:
        raise CliError(f"{path}: {e}", EXIT_INVALID) from e


def _sequence_config(args: argparse.Namespace, spec: ManifoldSpec, allow_seed: bool) -> SequenceConfig:
    seed = None
    if allow_seed:
        seed = spec.seed_torsion
        if args.seed_torsion is not None:
            seed = _load_seed_torsion(args.seed_torsion, spec)
    try:
        return SequenceConfig(max_steps=args.max_steps, period_tol=args.tol, seed_torsion=seed)
    except KahlerSeqError as e:
        raise CliError(str(e), EXIT_INVALID) from e


def cmd_validate(args: argparse.Namespace) -> int:
    spec = load_spec(args.spec)
    problems = validate_fields(spec)
    for problem in problems:
        print(f"error: {problem}", file=sys.stderr)
    _write(report.dumps(report.validate_report(spec, problems)), args.out)
    return EXIT_INVALID if problems else EXIT_OK


def cmd_sequence(args: argparse.Namespace) -> int:
    spec = load_spec(args.spec)
    cfg = _sequence_config(args, spec, allow_seed=True)
    start = time.perf_counter()
    result = run_sequence(spec.metric, spec.omega, spec.domain, cfg, worker_count())
    elapsed = time.perf_counter() - start if args.timing else None
    _write(report.dumps(report.sequence_report(spec, result, elapsed)), args.out)
    if args.csv is not None:
        _write(report.sequence_csv(result), args.csv)
    return EXIT_ALL_FAILED if result.all_failed else EXIT_OK


def cmd_certify(args: argparse.Namespace) -> int:
    spec = load_spec(args.spec)
    try:
        cfg = CertifyConfig(sequence=_sequence_config(args, spec, allow_seed=False), fd_step=args.fd_step)
    except KahlerSeqError as e:
        raise CliError(str(e), EXIT_INVALID) from e
    start = time.perf_counter()
    result = certify_kahler(spec.metric, spec.omega, spec.domain, cfg, worker_count())
    elapsed = time.perf_counter() - start if args.timing else None
    _write(report.dumps(report.certify_report(spec, result, elapsed)), args.out)
    if args.csv is not None:
        _write(report.certify_csv(result), args.csv)
    if result.all_failed:
        return EXIT_ALL_FAILED
    if result.any_premise_failed:
        return EXIT_PREMISE_FAILED
    if not result.all_certified:
        return EXIT_TOLERANCE_FAILED
    return EXIT_OK


def _parse_point(text: str, spec: ManifoldSpec) -> List[float]:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError as e:
        raise CliError(f"--at expects comma-separated numbers, got {text!r}", EXIT_INVALID) from e
    if len(values) != spec.dim:
        raise CliError(f"--at needs {spec.dim} coordinates, got {len(values)}", EXIT_INVALID)
    if not spec.domain.contains(values):
        raise CliError(f"point ({text}) lies outside the chart box", EXIT_INVALID)
    return values


def cmd_gromov(args: argparse.Namespace) -> int:
    spec = load_spec(args.spec)
    values = _parse_point(args.at, spec)
    x = torch.tensor(values, dtype=DTYPE)
    try:
        g0 = spec.metric.assemble(x)
        w = spec.omega.assemble(x)
        frame = gromov_J(g0, w)
    except KahlerSeqError as e:
        raise CliError(f"at ({args.at}): {e}", EXIT_INVALID) from e
    check = frame_residuals(frame, g0, w)
    _write(report.dumps(report.gromov_report(spec, values, frame, check)), args.out)
    return EXIT_OK


def cmd_export(args: argparse.Namespace) -> int:
    try:
        document = export(args.name)
    except NotFoundError as e:
        raise CliError(str(e), EXIT_INVALID) from e
    _write(json.dumps(document, indent=2) + "\n", args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ksq",
        description="Connection sequences, compatible complex structures and Kähler checks on a chart.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug logs")
    sub = parser.add_subparsers(dest="command", required=True)

    spec_help = "manifold spec JSON file, or zoo:NAME"

    p = sub.add_parser("validate", help="check a manifold spec at its sample points")
    p.add_argument("spec", help=spec_help)
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_validate)

    def sequence_options(p: argparse.ArgumentParser) -> None:
        p.add_argument("spec", help=spec_help)
        p.add_argument("--max-steps", type=int, default=SequenceConfig.max_steps)
        p.add_argument("--tol", type=float, default=SequenceConfig.period_tol, help="relative period tolerance")
        p.add_argument("--out", help="write the JSON report here instead of stdout")
        p.add_argument("--csv", help="also write a per-point CSV table here")
        p.add_argument("--timing", action="store_true", help="include wall time in the report")

    p = sub.add_parser("sequence", help="run the connection sequence at every sample point")
    sequence_options(p)
    p.add_argument("--seed-torsion", help='JSON file of "k,i,j": expression torsion components for G0')
    p.set_defaults(func=cmd_sequence)

    p = sub.add_parser("certify", help="certify the Kähler conclusion at every sample point")
    sequence_options(p)
    p.add_argument("--fd-step", type=float, default=None, help="finite-difference step (default 1e-4 x box diameter)")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("gromov", help="compatible complex structure at one point")
    p.add_argument("spec", help=spec_help)
    p.add_argument("--at", required=True, help="point as x1,...,xn")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_gromov)

    p = sub.add_parser("export", help="write a built-in entry as a manifold spec")
    p.add_argument("name", help=f"one of: {', '.join(catalog())}")
    p.add_argument("--out", help="write here instead of stdout")
    p.set_defaults(func=cmd_export)

    return parser


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except KahlerSeqError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
