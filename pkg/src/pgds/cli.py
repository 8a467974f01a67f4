"""Command-line interface: ``pgds {simulate,fit,predict,eval,report,validate,masks}``.

Every command exits 0 on success; any failure prints ``error: <cause>`` on one
line to stderr and exits 1 (2 for usage errors).
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from pgds import evaluation, gibbs, io, model, validation
from pgds.distributions import rng_stream

# RNG substreams per command, so that e.g. simulate and fit with the same seed
# draw independent numbers.
STREAM_SIMULATE = 0
STREAM_FIT = 1  # + chain index
STREAM_PREDICT = 1000
STREAM_MASKS = 2000


def _json_lines(path):
    if path is None:
        return None
    fh = sys.stderr if path == "-" else open(path, "w")

    def emit(record):
        fh.write(json.dumps(record) + "\n")
        fh.flush()

    return emit


def _add_model_flags(p):
    g = p.add_argument_group("model / schedule (override the config file)")
    g.add_argument("--config", help="key = value config file")
    for name, typ in (("tau0", float), ("gamma0", float), ("eta0", float), ("eps0", float), ("K", int),
                      ("iterations", int), ("burn-in", int), ("thin", int), ("seed", int)):
        g.add_argument(f"--{name}", type=typ, dest=name.replace("-", "_"))
    g.add_argument("--stationary", dest="stationary", action="store_true", default=None)
    g.add_argument("--non-stationary", dest="stationary", action="store_false")
    g.add_argument("--steady-state", dest="steady_state", action="store_true", default=None)


def _config(args, **extra) -> io.RunConfig:
    keys = ("tau0", "gamma0", "eta0", "eps0", "K", "stationary", "steady_state", "iterations", "burn_in",
            "thin", "seed")
    return io.build_config(args.config, **{k: getattr(args, k) for k in keys}, **extra)


# --------------------------------------------------------------------------
# Commands


def cmd_simulate(args):
    cfg = _config(args)
    state, Y = model.generate(cfg.hyper(), args.V, args.T, rng_stream(cfg.seed, STREAM_SIMULATE))
    io.save_counts(Y, args.out)
    if args.truth:
        io.save_chain(gibbs.SampleChain([state], cfg.hyper(), gibbs.Schedule(1, 0, 1), cfg.seed), args.truth)
    print(f"wrote {args.out}: V={Y.V} T={Y.T} total={int(Y.counts.sum())}")


def cmd_fit(args):
    cfg = _config(args, data=args.data, mask=args.mask, output=args.out)
    if cfg.data is None or cfg.output is None:
        raise model.ConfigError("fit needs --data and --out (or data/output in the config file)")
    bundle = io.load_counts(cfg.data)
    Y = bundle.Y
    mask = io.load_mask(cfg.mask, Y.T) if cfg.mask else None
    progress = _json_lines(args.progress)
    outs = [cfg.output] if args.chains == 1 else [_chain_path(cfg.output, c) for c in range(args.chains)]
    for c, out in enumerate(outs):
        rng = rng_stream(cfg.seed, STREAM_FIT + c)
        kw = dict(seed=cfg.seed, progress=progress, progress_every=args.progress_every)
        if mask is None:
            chain = gibbs.fit(Y, cfg.hyper(), cfg.schedule(), rng, **kw)
        else:
            chain = evaluation.fit_masked(Y, mask, cfg.hyper(), cfg.schedule(), rng, **kw)
        io.save_chain(chain, out)
        print(f"wrote {out}: {len(chain)} samples")


def _chain_path(path, c):
    stem, dot, ext = path.rpartition(".")
    return f"{stem}.{c + 1}.{ext}" if dot else f"{path}.{c + 1}"


def cmd_predict(args):
    chain = io.load_chain(args.chain)
    Y = io.load_counts(args.data).Y
    mask = io.load_mask(args.mask, Y.T)
    if chain.states[0].T != mask.n_train:
        raise model.ConfigError(
            f"chain covers {chain.states[0].T} time steps but the mask leaves {mask.n_train} for training"
        )
    rows = evaluation.predict_mask(chain, Y, mask, rng_stream(args.seed, STREAM_PREDICT), args.rollouts)
    io.save_predictions(rows, args.out)
    print(f"wrote {args.out}: {len(rows)} predictions")


def cmd_eval(args):
    reports = {}
    for spec in args.predictions:
        name, _, path = spec.rpartition("=")
        reports[name or "PGDS"] = evaluation.score(io.load_predictions(path))
    b_agg = None
    if args.data:
        Y = io.load_counts(args.data).Y
        try:
            _, b_agg = evaluation.burstiness(Y)
        except ValueError as err:
            print(f"note: burstiness omitted ({err})", file=sys.stderr)
        if args.mask:
            mask = io.load_mask(args.mask, Y.T)
            for name, rows in evaluation.baseline_rows(Y, mask).items():
                reports[name] = evaluation.score(rows)
    if not reports:
        raise model.ConfigError("nothing to evaluate; pass --predictions and/or --data with --mask")
    table = io.format_eval_table(reports, b_agg)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(table)
    sys.stdout.write(table)


def cmd_report(args):
    chain = io.load_chain(args.chain)
    bundle = io.load_counts(args.data) if args.data else None
    for path in io.write_report(chain, bundle, args.outdir, args.top_components, args.top_features):
        print(f"wrote {path}")


def cmd_validate(args):
    report = validation.run_suite(quick=args.quick, log=print)
    if args.json:
        with open(args.json, "w") as fh:
            fh.write(report.to_json())
    if not report.passed:
        failed = [c.name for c in report.checks if not c.passed]
        raise validation.ValidationFailure(f"{len(failed)} check(s) failed: {', '.join(failed)}")


def cmd_masks(args):
    T = io.load_counts(args.data).Y.T if args.data else args.T
    if T is None:
        raise model.ConfigError("masks needs --T or --data")
    masks = evaluation.make_masks(T, args.protocol, args.count, rng_stream(args.seed, STREAM_MASKS))
    for i, m in enumerate(masks, 1):
        path = f"{args.prefix}.{i}.mask"
        io.save_mask(m, path)
        print(f"wrote {path}: smooth={list(m.smoothing)} forecast={list(m.forecast)}")


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pgds", description="Poisson-gamma dynamical systems")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic count matrix from the model")
    _add_model_flags(p)
    p.add_argument("--V", type=int, required=True)
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--out", required=True, help="counts file to write")
    p.add_argument("--truth", help="also save the generating parameters as a one-sample chain")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run the Gibbs sampler and save the chain")
    _add_model_flags(p)
    p.add_argument("--data")
    p.add_argument("--mask", help="mask file: smoothing steps are imputed, forecast steps dropped")
    p.add_argument("--out", help="chain file (.npz)")
    p.add_argument("--chains", type=int, default=1, help="independent chains, each on its own RNG substream")
    p.add_argument("--progress", help="JSON-lines progress destination ('-' for stderr)")
    p.add_argument("--progress-every", type=int, default=100)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict the masked cells from a fitted chain")
    p.add_argument("--chain", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rollouts", type=int, default=evaluation.FORECAST_ROLLOUTS)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score prediction tables (task x metric x model)")
    p.add_argument("--predictions", action="append", default=[], metavar="[NAME=]PATH")
    p.add_argument("--data", help="counts file; adds burstiness and, with --mask, the baselines")
    p.add_argument("--mask")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="per-component tables for plotting")
    p.add_argument("--chain", required=True)
    p.add_argument("--data", help="counts file whose .features / .times label files are used")
    p.add_argument("--outdir", required=True)
    p.add_argument("--top-components", type=int, default=10)
    p.add_argument("--top-features", type=int, default=16)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("validate", help="run the sampler validation suite")
    p.add_argument("--quick", action="store_true", help="short smoke version of the stochastic checks")
    p.add_argument("--json", help="write a machine-readable summary here")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("masks", help="draw held-out masks for a protocol")
    p.add_argument("--T", type=int)
    p.add_argument("--data")
    p.add_argument("--protocol", choices=sorted(evaluation.PROTOCOLS), default="events")
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prefix", required=True)
    p.set_defaults(func=cmd_masks)
    return parser


ERRORS = (ValueError, OSError, gibbs.SamplerError, validation.ValidationFailure, np.linalg.LinAlgError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ERRORS as err:
        msg = " ".join(str(err).split()) or type(err).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
