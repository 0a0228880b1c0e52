"""Command line front end: run config files, self-test, spot inspection.

Exit codes: 0 success, 2 contract violations over the configured tolerance
(or a failed self-test), 1 structural failure (bad config, degenerate run).
"""

import argparse
import json
import sys

import numpy as np

from . import harness
from .errors import (
    ClusterDegenerate,
    ClusterUnderfull,
    InvalidInput,
    MidpointNotFound,
    RatioUnavailable,
    TauNotFound,
)
from .noise import NoisyOracle, draw_mask, draw_noisy, mean_distance
from .spaces import geodesic_distance, sample_points

MODULE_ERRORS = (InvalidInput, ClusterDegenerate, ClusterUnderfull,
                 MidpointNotFound, RatioUnavailable, TauNotFound)


def _print_json(obj):
    print(json.dumps(harness._plain(obj), indent=2))


def _cmd_run(args):
    config = harness.load_config(args.config)
    report = harness.run_experiment(config)
    print(f"paper-scale N = {report.required_n:.3g}, configured N = "
          f"{report.n_points}" + (" (under-sampled)" if report.under_sampled else ""),
          file=sys.stderr)
    _print_json(report.as_dict())
    return 2 if report.over_tolerance else 0


def _cmd_selftest(args):
    result = harness.concentration_selftest(trials=args.trials)
    _print_json(result)
    return 0 if result["passed"] else 2


def _algo1_oracle(config):
    sample = sample_points(config.space, config.n_points, config.net_size,
                           seed=config.master_seed)
    return sample, NoisyOracle(space=config.space, sample=sample,
                               noise=config.noise, missing=config.missing,
                               noise_seed=config.master_seed)


def _cmd_dump_pair(args):
    config = harness.load_config(args.config)
    sample, oracle = _algo1_oracle(config)
    n = len(sample)
    if not (0 <= args.i < n and 0 <= args.j < n):
        raise InvalidInput(f"pair indices must lie in [0, {n})")
    truth = geodesic_distance(config.space, sample.coords[args.i],
                              sample.coords[args.j])
    _print_json({
        "i": args.i, "j": args.j,
        "truth": float(truth),
        "mean": float(mean_distance(oracle, args.i, args.j)),
        "draw": float(draw_noisy(oracle, args.i, args.j)),
        "mask": int(draw_mask(oracle, args.i, args.j)),
        "presence_probability": float(
            config.missing.presence_probability(np.asarray(truth))),
    })
    return 0


def _cmd_evaluate(args):
    config = harness.load_config(args.config)
    matrix = harness.read_matrix_csv(args.matrix)
    sample, _ = _algo1_oracle(config)
    report = harness.evaluate(matrix, config.space, sample,
                              np.arange(config.net_size))
    _print_json(report.as_dict())
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="noisygeo",
        description="metric recovery experiments from noisy pairwise distances")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one configured experiment")
    p.add_argument("config", help="INI experiment file")

    p = sub.add_parser("selftest",
                       help="Monte Carlo check of the concentration bound")
    p.add_argument("--trials", type=int, default=5000)

    p = sub.add_parser("dump-pair", help="print one oracle pair's internals")
    p.add_argument("config")
    p.add_argument("i", type=int)
    p.add_argument("j", type=int)

    p = sub.add_parser("evaluate",
                       help="score a recovered CSV against exact distances")
    p.add_argument("matrix", help="CSV written by a run (i,j,distance)")
    p.add_argument("config", help="the run's config, for the sampling layout")

    args = parser.parse_args(argv)
    handlers = {"run": _cmd_run, "selftest": _cmd_selftest,
                "dump-pair": _cmd_dump_pair, "evaluate": _cmd_evaluate}
    try:
        return handlers[args.command](args)
    except MODULE_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
