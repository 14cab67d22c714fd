"""Command-line entry point: ``mcdc {correct,simulate,infer-edges,evaluate}``."""

from __future__ import annotations

import argparse
import logging
import sys

from .em import EmConfig
from .model import MCDCError

logger = logging.getLogger("mcdc")

EXIT_VALIDATION = 2


def _config(args) -> EmConfig:
    return EmConfig(restarts=args.restarts, seed=args.seed)


def _cmd_correct(args):
    from .pipeline import run_correct

    summary = run_correct(args.matrix, args.pairs, args.out_dir, args.baseline,
                          g_max=args.gmax, config=_config(args), n_jobs=args.threads,
                          patience=args.patience)
    logger.info("corrected %d pairs (%d failed), %d points flipped", summary["n_pairs"],
                summary["n_failed_pairs"], summary["n_flipped"])
    if "baseline" in summary:
        b = summary["baseline"]
        logger.info("baseline MSE: unaltered %.4f, mcdc %.4f",
                    b["unaltered"]["mse"], b["mcdc"]["mse"])


def _cmd_simulate(args):
    from .simulation import SimSpec, run_study, write_results

    overrides = {"seed": args.seed}
    if args.replicates is not None:
        overrides["replicates"] = args.replicates
    if args.n is not None:
        overrides["n"] = args.n
    spec = SimSpec.default(args.study, g_max=args.gmax, **overrides)
    result = run_study(spec, _config(args), n_jobs=args.threads)
    write_results(result, args.out_dir)
    for c in result.cells:
        logger.info("%s: unaltered MAE %.3f, MCDC MAE %.3f, correct g %.2f",
                    c.params, c.mae_unaltered, c.mae_mcdc, c.frac_correct_g)


def _cmd_infer(args):
    from .netinfer import run_infer

    scores = run_infer(args.knockdowns, args.controls, args.out, args.prior, args.corrected_dir)
    logger.info("scored %d candidate edges", len(scores))


def _cmd_evaluate(args):
    from .netinfer import run_evaluate

    cutoffs = tuple(args.cutoff) if args.cutoff else (0.5, 0.95)
    result = run_evaluate(args.edges, args.truth, args.out, cutoffs)
    for t in result["tables"]:
        logger.info("cutoff %.2f: %d/%d true, p=%.3g", t["cutoff"], t["tp"], t["tp"] + t["fp"],
                    t["p_value"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcdc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def fit_options(p, seed_default=0):
        p.add_argument("--gmax", type=int, default=9)
        p.add_argument("--restarts", type=int, default=10)
        p.add_argument("--seed", type=int, default=seed_default)
        p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("correct", help="correct swapped values in paired-gene data")
    p.add_argument("--matrix", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--baseline")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--patience", type=int,
                   help="stop the g sweep after this many g without a BIC improvement")
    fit_options(p)
    p.set_defaults(func=_cmd_correct)

    p = sub.add_parser("simulate", help="run a simulation study")
    p.add_argument("--study", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--replicates", type=int)
    p.add_argument("--n", type=int)
    fit_options(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("infer-edges", help="score regulator-target edges from knockdowns")
    p.add_argument("--knockdowns", required=True)
    p.add_argument("--controls", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--prior", type=float, default=0.5)
    p.add_argument("--corrected-dir")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("evaluate", help="compare a ranked edge list with known edges")
    p.add_argument("--edges", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--cutoff", type=float, action="append")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (MCDCError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_VALIDATION
    return 0


if __name__ == "__main__":
    sys.exit(main())
