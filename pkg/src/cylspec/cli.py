"""Command line front end: one subcommand per study kind.

Exit codes: 0 success, 2 config error (bad file, unknown key, invalid
parameter), 3 solver failure (partial artifacts are still written, with a
FAILED marker in the output directory).
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import replace

from .study import (
    STUDY_KINDS,
    ConfigError,
    StudyConfig,
    load_config,
    run_study,
    summary_lines,
    write_artifacts,
)

_KIND_HELP = {
    "cross-section": "solve the cross-section problem (mu1, gap indicator)",
    "reduced": "strip values Z_L along one direction over an L schedule",
    "sweep": "direction sweep of strip limits over the unit sphere",
    "full": "eigenvalues of the full cylinder at one length",
    "convergence": "cylinder eigenvalues over a length or mesh schedule",
    "decay": "mass profile of the first eigenfunction over shrunken bases",
    "upper-bound": "certified Rayleigh upper bounds from boundary test functions",
    "dirichlet-bracket": "all-Dirichlet eigenvalues vs length against mu1",
}


def _jobs_default() -> int | None:
    raw = os.environ.get("CYLSPEC_JOBS")
    if raw is None:
        return None
    try:
        jobs = int(raw)
    except ValueError:
        raise ConfigError(f"CYLSPEC_JOBS must be an integer, got {raw!r}") from None
    if jobs < 1:
        raise ConfigError(f"CYLSPEC_JOBS must be >= 1, got {jobs}")
    return jobs


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cylspec",
        description="Eigenvalue studies on expanding cylinders with mixed "
        "Dirichlet-Neumann boundary conditions.",
    )
    sub = parser.add_subparsers(dest="kind", required=True, metavar="study")
    for kind in STUDY_KINDS:
        sp = sub.add_parser(kind, help=_KIND_HELP[kind])
        sp.add_argument("config", help="path to a TOML study config")
        sp.add_argument("--out", help="output directory (default <config>_results)")
        sp.add_argument("--seed", type=int, help="override the solver seed")
        sp.add_argument(
            "--target-h", type=float, dest="target_h", help="override study target_h"
        )
        sp.add_argument("--quiet", action="store_true", help="suppress the summary")
        sp.add_argument(
            "--jobs", type=int, help="worker processes (default $CYLSPEC_JOBS or 1)"
        )
        sp.add_argument(
            "--keep-going",
            action="store_true",
            help="record failed cells as NaN rows instead of aborting",
        )
    return parser


def _apply_overrides(cfg: StudyConfig, args) -> StudyConfig:
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError(f"--seed must be >= 0, got {args.seed}")
        cfg.solver = replace(cfg.solver, seed=args.seed)
    if args.target_h is not None:
        if not args.target_h > 0.0:
            raise ConfigError(f"--target-h must be positive, got {args.target_h}")
        cfg.params["target_h"] = args.target_h
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        jobs = args.jobs if args.jobs is not None else (_jobs_default() or 1)
        if jobs < 1:
            raise ConfigError(f"--jobs must be >= 1, got {jobs}")
        cfg = load_config(args.config, kind=args.kind)
        cfg = _apply_overrides(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    out_dir = args.out
    if out_dir is None:
        stem = os.path.splitext(os.path.basename(args.config))[0]
        out_dir = os.path.join(os.path.dirname(args.config) or ".", stem + "_results")

    t0 = time.perf_counter()
    record = run_study(cfg, jobs=jobs, keep_going=args.keep_going)
    elapsed = time.perf_counter() - t0
    paths = write_artifacts(record, out_dir)

    if not args.quiet:
        for line in summary_lines(record):
            print(line)
        print("wrote: " + "  ".join(sorted(paths.values())))
        print("wall time: %.2f s" % elapsed)
    if record.failure is not None:
        print(f"solver failure: {record.failure}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
