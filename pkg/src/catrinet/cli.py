"""Command-line entry point: train, eval, ablate, stats-heads, gen-data."""

import argparse
import json
import logging
import sys

from . import harness
from .errors import CATriNetError

BATCH_AVG = {"paper": harness.PAPER_LITERAL, "batch": harness.BATCH_MEAN}


def _run_config(args):
    overrides = {"seed": args.seed}
    if getattr(args, "disable_ca", False):
        overrides["disable_ca"] = True
    if getattr(args, "disable_tl", False):
        overrides["disable_tl"] = True
    if getattr(args, "batch_avg", None):
        overrides["batch_avg_mode"] = BATCH_AVG[args.batch_avg]
    if getattr(args, "beam", None):
        overrides["beam_width"] = args.beam
    return harness.load_config(args.config, **overrides)


def cmd_train(args):
    cfg = _run_config(args)
    res = harness.train(cfg, args.out)
    return {
        "checkpoint": str(res.checkpoint),
        "epochs_run": res.epochs_run,
        "final_epoch_loss": res.epoch_losses[-1] if res.epoch_losses else None,
        "best_loss": res.best_loss,
        "parameters": res.parameters,
    }


def cmd_eval(args):
    return harness.evaluate(args.checkpoint, args.split, args.beam, args.out)


def cmd_ablate(args):
    rows, params = harness.ablate(_run_config(args), args.out)
    return {"rows": rows, "parameters": params}


def cmd_stats_heads(args):
    stats = harness.stats_heads(args.log, args.out, args.column, args.level, args.sample_sd)
    return [vars(s) for s in stats]


def cmd_gen_data(args):
    cfg = harness.load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(corpus={**cfg.corpus, "seed": args.seed})
    return {"dataset": str(harness.gen_data(cfg, args.out))}


def build_parser():
    p = argparse.ArgumentParser(prog="catrinet", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", default=out_default)

    t = sub.add_parser("train", help="train a model")
    common(t, "runs/train")
    t.add_argument("--disable-ca", action="store_true")
    t.add_argument("--disable-tl", action="store_true")
    t.add_argument("--batch-avg", choices=sorted(BATCH_AVG))
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="generate and score one split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", choices=harness.SPLITS)
    e.add_argument("--beam", type=int)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and score the four CA/TL variants")
    common(a, "runs/ablate")
    a.add_argument("--beam", type=int)
    a.add_argument("--batch-avg", choices=sorted(BATCH_AVG))
    a.set_defaults(func=cmd_ablate)

    s = sub.add_parser("stats-heads", help="per-head mean/SD/CI table and weight profile")
    s.add_argument("--log", required=True, help="head_weights.csv from a training run")
    s.add_argument("--out", default="runs/heads")
    s.add_argument("--column", default="w_cos")
    s.add_argument("--level", type=float, default=0.95)
    s.add_argument("--sample-sd", action="store_true")
    s.set_defaults(func=cmd_stats_heads)

    g = sub.add_parser("gen-data", help="write the synthetic corpus as dataset JSONL")
    common(g, "runs/data")
    g.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except (CATriNetError, OSError, json.JSONDecodeError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        for attr in ("ids", "problems"):
            if getattr(exc, attr, None):
                err[attr] = list(getattr(exc, attr))
        print(json.dumps(err), file=sys.stderr)
        return 1
    print(json.dumps(result, indent=1, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
