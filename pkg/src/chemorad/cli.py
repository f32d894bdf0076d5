"""Command line entry point: ``chemorad run|sweep|threshold|report|selftest``.

Exit codes: 0 success, 2 configuration error, 3 scheme error,
4 monitor violation beyond tolerance (``selftest``).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ChemoradError, ConfigError, SchemeError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SCHEME = 3
EXIT_VIOLATION = 4


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def cmd_run(args) -> int:
    from .harness import parse_config, record_path, run_single
    from .stepper import OutcomeLabel

    config = parse_config(_read(args.config))
    rec = run_single(config)
    print(f"{rec.outcome} t_final={rec.t_final:.6g} wall_ms={rec.wall_ms:.0f}")
    print(f"record: {record_path(config.out_dir, rec.digest)}")
    for name, excess in sorted(rec.violations.items()):
        if excess > 0.0:
            print(f"warning: monitor {name} exceeds tolerance by {excess:.3g}")
    if rec.outcome == OutcomeLabel.SCHEME_ERROR.value:
        print(f"scheme error: {rec.error}", file=sys.stderr)
        return EXIT_SCHEME
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .harness import parse_sweep_config, run_sweep

    sweep = parse_sweep_config(_read(args.config))
    if not sweep.m_values or not sweep.M_values:
        raise ConfigError("sweep needs m_values and M_values", "m_values", "nonempty grids")
    diagram = run_sweep(sweep)
    for cell in sorted(diagram.cells, key=lambda c: (c.m, c.M)):
        print(f"m={cell.m:g} M={cell.M:g} {cell.record.outcome}")
    for m, est in sorted(diagram.thresholds.items()):
        print(f"m={m:g} M_hat={est.M_hat:.6g} bracket=[{est.bracket[0]:.6g}, {est.bracket[1]:.6g}]"
              + (f" anomaly: {est.anomaly}" if est.anomaly else ""))
    print(f"phase diagram: {Path(sweep.template.out_dir) / 'phase_diagram.csv'}")
    return EXIT_OK


def cmd_threshold(args) -> int:
    from .harness import estimate_blowup_threshold, parse_sweep_config, parse_config, SweepConfig

    text = _read(args.config)
    try:
        sweep = parse_sweep_config(text)
    except ConfigError as exc:
        if exc.key != "sweep":
            raise
        sweep = SweepConfig(parse_config(text))
    n = sweep.template.params.n
    if not 0.0 < args.m < 2.0 / n:
        raise ConfigError(f"--m must lie in (0, 2/n) = (0, {2.0 / n:.4g})", "m", "0 < m < 2/n")
    M_lo = sweep.M_lo if sweep.M_lo is not None else args.M_lo
    M_hi = sweep.M_hi if sweep.M_hi is not None else args.M_hi
    est = estimate_blowup_threshold(
        args.m, sweep.template, M_lo, M_hi, sweep.tol_rel, validate=args.validate
    )
    print(f"m={args.m:g} M_hat={est.M_hat:.6g} bracket=[{est.bracket[0]:.6g}, {est.bracket[1]:.6g}] "
          f"bisections={est.bisections} N={est.settings['N']} dt_min={est.settings['dt_min']:g} "
          f"u_blowup_factor={est.settings['u_blowup_factor']:g}")
    for note in est.widened:
        print(f"bracket widened: {note}")
    if est.anomaly:
        print(f"anomaly: {est.anomaly}", file=sys.stderr)
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import report_directory

    for path in report_directory(args.dir):
        print(path)
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    results = run_selftest()
    return EXIT_OK if all(r.passed for r in results) else EXIT_VIOLATION


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chemorad", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one configuration")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run an (m, M) sweep")
    p.add_argument("config")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("threshold", help="bisect the blow-up threshold in M for one m")
    p.add_argument("config")
    p.add_argument("--m", type=float, required=True)
    p.add_argument("--M-lo", dest="M_lo", type=float, default=1.0)
    p.add_argument("--M-hi", dest="M_hi", type=float, default=1000.0)
    p.add_argument("--validate", action="store_true", help="probe 2*M_hat and M_hat/2 afterwards")
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("report", help="summarise the run records in a directory")
    p.add_argument("dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("selftest", help="run the analytic oracle checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SchemeError as exc:
        print(f"scheme error: {exc}", file=sys.stderr)
        return EXIT_SCHEME
    except ChemoradError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
