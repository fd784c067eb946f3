"""Command line entry point: ``dynpinn run|sweep|export``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .runner import (EXIT_CONFIG, EXIT_NONFINITE, EXIT_OK, OUT_ENV, ConfigError, build_configs,
                     expand_globs, export_plot_data, load_configs, parse_override,
                     run_experiment, sweep)

_FLAG_KEYS = {"problem": "problem", "loss_form": "loss_form", "n_points": "n_points",
              "seed": "seed", "lbfgs_iters": "lbfgs_iters", "adam_iters": "adam_iters",
              "out": "out"}


def _add_overrides(p: argparse.ArgumentParser):
    g = p.add_argument_group("overrides (take precedence over the config file)")
    g.add_argument("--problem", help="wave, sine-gordon or elastodynamics")
    g.add_argument("--loss-form", help="e.g. WaveF1, F2, SgG2, ElastoH1")
    g.add_argument("--n-points", type=int, help="training points per class")
    g.add_argument("--seed", type=int)
    g.add_argument("--lbfgs-iters", type=int)
    g.add_argument("--adam-iters", type=int)
    g.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./runs)")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key; VALUE is parsed as YAML")


def _overrides(args) -> dict:
    out = {}
    for text in args.set:
        k, v = parse_override(text)
        out[k] = v
    for attr, key in _FLAG_KEYS.items():
        v = getattr(args, attr, None)
        if v is not None:
            out[key] = v
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynpinn",
                                     description="Train and evaluate PINNs for wave-type PDEs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="train a single configuration")
    p.add_argument("config", nargs="?", help="YAML config file (optional with --problem)")
    _add_overrides(p)

    p = sub.add_parser("sweep", help="run every configuration in one or more config files")
    p.add_argument("configs", nargs="+", help="config files or glob patterns")
    _add_overrides(p)

    p = sub.add_parser("export", help="write plot-ready series for a finished run")
    p.add_argument("run_dir")
    return parser


def _configs_from(paths, overrides):
    configs = []
    for path in paths:
        configs += load_configs(path, overrides)
    return configs


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "export":
            try:
                paths = export_plot_data(args.run_dir)
            except ValueError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_CONFIG
            for p in paths.values():
                print(p)
            return EXIT_OK
        overrides = _overrides(args)
        if args.verb == "run":
            if args.config:
                configs = load_configs(args.config, overrides)
            else:
                configs = build_configs({}, overrides)
            if len(configs) != 1:
                raise ConfigError(f"'run' expects one configuration, the file expands to "
                                  f"{len(configs)}; use 'sweep'")
            res = run_experiment(configs[0])
            print(f"{res.status} ({res.reason}) -> {res.directory}")
            for k, e in res.errors.items():
                if e["l2"] is not None:
                    print(f"  l2_{k} = {e['l2']:.4e}")
            return res.exit_code
        configs = _configs_from(expand_globs(args.configs), overrides)
        out_root = overrides.get("out")
        rows = sweep(configs, out_root)
        for r in rows:
            print(f"{r['name']}: {r['status']} loss={r.get('final_loss')}")
        bad = [r for r in rows if r["status"] != "completed"]
        return EXIT_NONFINITE if bad else EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
