"""Command line interface: ``fosindy {simulate,analyze,run,cases}``.

Exit codes: 0 success, 2 configuration error, 3 ingestion error,
4 pipeline-stage error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError, IngestionError, StageError
from .pipeline import analyze_external, run_pipeline, run_simulation
from .scenarios import builtin_document, builtin_names, load_config

EXIT_OK, EXIT_CONFIG, EXIT_INGEST, EXIT_STAGE = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fosindy", description="Forced-oscillation source localization with ensemble SINDy.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def common(sp, forcing=True):
        sp.add_argument("--config", default="case1", help="scenario JSON path or built-in name (default: case1)")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="override the scenario seed")
        if forcing:
            sp.add_argument("--no-forcing", action="store_true", help="drop every forcing source")

    sim = sub.add_parser("simulate", help="simulate a scenario and write trajectory.csv")
    common(sim)
    run = sub.add_parser("run", help="simulate and localize forcing sources")
    common(run)
    run.add_argument("--solver", choices=("lasso", "stlsq"), help="override the sparse solver")
    ana = sub.add_parser("analyze", help="localize sources in a trajectory CSV")
    ana.add_argument("csv", help="trajectory CSV with header t,delta_1..,omega_1..")
    common(ana, forcing=False)
    ana.add_argument("--solver", choices=("lasso", "stlsq"), help="override the sparse solver")
    sub.add_parser("cases", help="list built-in scenarios")
    return p


def _print_report(art) -> None:
    rep = art.localization
    freqs = art.candidate_set.freqs if art.candidate_set is not None else ()
    print(f"candidates (Hz): {', '.join(f'{f:.2f}' for f in freqs) or 'none'}")
    if not rep.detected:
        print("no forcing source flagged")
    for d in rep.detected:
        print(f"source: {d.turbine_label} at {d.frequency:.2f} Hz  amplitude {d.amplitude:.4g}  robust z {d.robust_z:.3g}")
    print(f"report: {art.report}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.verb == "cases":
            for name in builtin_names():
                print(f"{name}: {builtin_document(name).get('description', '')}")
            return EXIT_OK
        cfg = load_config(args.config).with_overrides(
            seed=args.seed, solver=getattr(args, "solver", None), no_forcing=getattr(args, "no_forcing", False)
        )
        if args.verb == "simulate":
            art = run_simulation(cfg, args.out)
            print(f"trajectory: {art.trajectory}")
        elif args.verb == "run":
            _print_report(run_pipeline(cfg, args.out))
        else:
            _print_report(analyze_external(args.csv, cfg, args.out))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IngestionError as exc:
        print(f"ingestion error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except StageError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
