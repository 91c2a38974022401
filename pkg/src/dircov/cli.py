"""``dircov`` command line: fit, query, bench, adversarial, scalar, acceptance.

Exit codes: 0 success / all thresholds pass, 1 acceptance failure, 2 usage or
input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import bench, experiments
from .assembler import EstimatorConfig, FittedEstimator, fit
from .errors import DircovError
from .samples import load_samples

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _parse_direction(text: str) -> np.ndarray:
    try:
        vals = [float(t) for t in text.replace(";", ",").split(",") if t.strip()]
    except ValueError:
        raise DircovError(f"direction {text!r} is not a comma-separated row of numbers") from None
    if not vals:
        raise DircovError("empty direction")
    return np.array(vals)


def cmd_fit(args) -> int:
    opts = {}
    if args.config:
        with open(args.config) as fh:
            opts = json.load(fh)
        if not isinstance(opts, dict):
            raise DircovError("estimator config must be a JSON object")
        opts.pop("schema_version", None)
    opts["delta"] = args.delta
    if args.seed is not None:
        opts["seed"] = args.seed
    if args.kappa_E is not None:
        opts["kappa_E"] = args.kappa_E
    cfg = EstimatorConfig.from_dict(opts)
    model = fit(load_samples(args.data), cfg)
    model.save(args.out)
    print(json.dumps({"model": args.out, "dim": model.dim, "n": model.n_total, "r": model.split.r,
                      "certificate": model.split.certificate}))
    return EXIT_OK


def cmd_query(args) -> int:
    model = FittedEstimator.load(args.model)
    est = model.query(_parse_direction(args.direction))
    print(json.dumps(est.to_json()))
    return EXIT_OK


def _bench_cmd(runner, experiment):
    def run(args) -> int:
        cfg = bench.load_config(args.config, experiment)
        code, summary = runner(cfg, out_dir=args.out_dir, workers=args.workers)
        print(json.dumps({"experiment_id": summary["experiment_id"], "status": summary["status"],
                          "thresholds": summary["thresholds"]}))
        return code
    return run


def cmd_acceptance(args) -> int:
    ok = True
    wanted = {s.upper() for s in args.only} if args.only else None
    for i, fn in enumerate(experiments.ALL, start=1):
        if wanted and f"AC{i}" not in wanted:
            continue
        res = fn()
        print(res.line(), flush=True)
        ok &= res.passed and res.within_budget
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dircov", description="Direction-dependent robust covariance estimation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit an estimator to a CSV or binary sample file")
    f.add_argument("--data", required=True)
    f.add_argument("--delta", type=float, required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--seed", type=int)
    f.add_argument("--kappa-E", dest="kappa_E", type=float)
    f.add_argument("--config", help="JSON object of estimator options")
    f.set_defaults(func=cmd_fit)

    q = sub.add_parser("query", help="evaluate a fitted model at a direction")
    q.add_argument("--model", required=True)
    q.add_argument("--direction", required=True, help="comma-separated coordinates")
    q.set_defaults(func=cmd_query)

    for name, runner, experiment in (
        ("bench", bench.run_directional_bench, "directional"),
        ("adversarial", bench.run_adversarial, "adversarial"),
        ("scalar", bench.run_unit_scalar, "scalar"),
    ):
        b = sub.add_parser(name, help=f"run the {experiment} bench from a JSON config")
        b.add_argument("config")
        b.add_argument("--out-dir", dest="out_dir")
        b.add_argument("--workers", type=int)
        b.set_defaults(func=_bench_cmd(runner, experiment))

    a = sub.add_parser("acceptance", help="run the acceptance experiments")
    a.add_argument("--only", nargs="*", help="criterion tags such as AC3")
    a.set_defaults(func=cmd_acceptance)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (DircovError, OSError, json.JSONDecodeError) as exc:
        print(f"dircov: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
