"""Command-line entry point: ``diffadapt {run,sweep,theory,track} CONFIG``.

Exit status is 0 on success, 1 for usage or configuration errors and 2 when
every trial of every strategy diverged.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

from . import __version__
from .harness import (
    SWEEP_PARAMS,
    AllTrialsDiverged,
    ConfigError,
    ExperimentConfig,
    run_experiment,
    sweep,
    theory_reports,
    to_db,
    tracking_experiment,
    write_theory,
)

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--trials", type=int, help="override run.n_trials")
    common.add_argument("--out-dir", help="override output.dir")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="diffadapt", description="Diffusion adaptation experiments and theory.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("run", parents=[common], help="Monte Carlo learning curves")
    sw = sub.add_parser("sweep", parents=[common], help="steady-state MSD across parameter values")
    sw.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    sw.add_argument("--values", required=True, type=float, nargs="+")
    sub.add_parser("theory", parents=[common], help="stability and steady-state predictions")
    sub.add_parser("track", parents=[common], help="moving-target run with node-0 overlay")
    return p


def _cell(x, fmt: str = "{:.2f}") -> str:
    if x is None:
        return "-"
    if isinstance(x, bool):
        return "yes" if x else "no"
    return fmt.format(x)


def format_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows)
    return "\n".join(lines)


def _cmd_run(cfg: ExperimentConfig) -> list:
    res = run_experiment(cfg, write=True)
    rows = [
        [r["strategy"], _cell(r["msd_db"]), _cell(r["theory_msd_db"]), _cell(r["stable"]), str(r["diverged"])]
        for r in res.summary_rows()
    ]
    print(format_table(["strategy", "msd_db", "theory_db", "stable", "diverged"], rows))
    return res.files


def _cmd_sweep(cfg: ExperimentConfig, param: str, values) -> list:
    res = sweep(cfg, param, values, write=True)
    rows = [
        [r.param, _cell(r.value, "{:g}"), r.strategy, _cell(r.msd_db), _cell(r.theory_msd_db), r.error]
        for r in res.rows
    ]
    print(format_table(["param", "value", "strategy", "msd_db", "theory_db", "error"], rows))
    return res.files


def _cmd_theory(cfg: ExperimentConfig) -> list:
    reports = theory_reports(cfg)
    rows = []
    for lab, ov in reports.items():
        if ov is None:
            rows.append([lab, "-", "-", "-", "n/a", ""])
            continue
        rep = ov.report
        rho = None if rep is None else rep.b_spectral_radius
        bound = None if rep is None else rep.w_inf_bound
        rows.append(
            [
                lab,
                _cell(ov.network_msd_db),
                _cell(rho, "{:.6f}"),
                _cell(None if bound is None else to_db(bound)),
                _cell(ov.stable),
                ov.caveat or ov.error,
            ]
        )
    print(format_table(["strategy", "theory_db", "rho_B", "bound_db", "stable", "note"], rows))
    return write_theory(cfg, reports)


def _cmd_track(cfg: ExperimentConfig) -> list:
    res = tracking_experiment(cfg, write=True)
    rows = [
        [r["strategy"], _cell(r["msd_db"]), str(r["diverged"])]
        for r in res.experiment.summary_rows()
    ]
    print(format_table(["strategy", "msd_db", "diverged"], rows))
    return res.experiment.files


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config).with_overrides(args.seed, args.trials, args.out_dir)
        if args.command == "run":
            files = _cmd_run(cfg)
        elif args.command == "sweep":
            files = _cmd_sweep(cfg, args.param, args.values)
        elif args.command == "theory":
            files = _cmd_theory(cfg)
        else:
            files = _cmd_track(cfg)
    except ConfigError as exc:
        print(f"diffadapt: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AllTrialsDiverged as exc:
        print(f"diffadapt: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    for f in files:
        logging.getLogger(__name__).info("wrote %s", f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
