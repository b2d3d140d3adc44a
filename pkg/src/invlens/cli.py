"""Command-line entry point.

invariant-lens <train|attack|eval|slice|reproduce> --config <path>
               [--seed N] [--out DIR] [--full] [--figure ID]

Exit codes: 0 success, 2 config error, 3 runtime error.
"""

import argparse
import sys

from . import runner
from .config import ConfigError, default_config, load_config


def build_parser():
    p = argparse.ArgumentParser(
        prog="invariant-lens",
        description="Train, attack and inspect fully invertible classifiers.")
    p.add_argument("command",
                   choices=["train", "attack", "eval", "slice", "reproduce"])
    p.add_argument("--config", help="path to a key=value config file")
    p.add_argument("--seed", type=int, default=None,
                   help="override experiment.seed")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--full", action="store_true",
                   help="full-scale paper settings (reproduce only; slow)")
    p.add_argument("--figure", default=None,
                   help=f"reproduce target: {runner.REPRODUCIBLE}")
    return p


def _progress(epoch, report):
    print(f"epoch {epoch}: sCE={report.sCE:.4f} "
          f"acc={report.semantic_train_acc:.4f} "
          f"mi={report.mi_lower_bound:.4f}", flush=True)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "reproduce":
            figure = args.figure
            if figure is None and args.config:
                figure = load_config(args.config)["experiment"]["figure"]
            if not figure:
                raise ConfigError("reproduce needs --figure or a config with "
                                  "experiment.figure set")
            out = args.out or f"out-{figure}"
            path = runner.cmd_reproduce(figure, out, seed=args.seed or 0,
                                        full=args.full)
            with open(path) as f:
                print(f.read(), end="")
            return 0

        cfg = load_config(args.config) if args.config else default_config()
        if args.seed is not None:
            cfg["experiment"]["seed"] = args.seed
        out = args.out or cfg["experiment"]["out"] or "out"

        if args.command == "train":
            runner.cmd_train(cfg, out, progress=_progress)
        elif args.command == "eval":
            rows = runner.cmd_eval(cfg, out)
            for k, v in rows.items():
                print(f"{k} = {v}")
        elif args.command == "attack":
            runner.cmd_attack(cfg, out)
        elif args.command == "slice":
            stats = runner.cmd_slice(cfg, out)
            for k, v in stats.items():
                print(f"{k} = {v}")
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
