"""Command-line entry point: ``cogload <subcommand> --config <path> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
error. Progress goes to stderr; results go to files under the output
directory (the text report is also echoed to stdout).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import evaluation, pipeline
from .dataset import SynthConfig, load_epoch_file, synth_generate, write_epoch_file
from .errors import CogloadError, ConfigError
from .presets import ENSEMBLE_PRESETS

logger = logging.getLogger("cogload")

STAGE_COMMANDS = {
    "featurize": "featurize",
    "train-ubm": "train_ubm",
    "accumulate-stats": "accumulate_stats",
    "train-tv": "train_tv",
    "extract": "extract",
    "postprocess": "postprocess",
    "train-clf": "train_clf",
    "predict": "predict",
    "evaluate": "evaluate",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="cogload", description="EEG cognitive-load i-vector pipeline")
    sub = parser.add_subparsers(dest="command", required=True, metavar="<subcommand>")

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for ensemble systems")
        p.add_argument("--out", help="override the output location")
        p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
        p.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
        return p

    for name in STAGE_COMMANDS:
        common(sub.add_parser(name, help=f"run the {name} stage on persisted inputs"))
    common(sub.add_parser("run", help="run every stage of one system"))
    common(sub.add_parser("ensemble", help="run or reuse the ensemble systems and vote"))
    common(sub.add_parser("synth", help="write a synthetic EPO1 corpus"), config_required=False)
    return parser


def _setup_logging(args):
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose > 1 else logging.INFO)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level)


def _echo(report):
    sys.stdout.write(evaluation.render_report(report, "text").decode())
    sys.stdout.flush()


def cmd_synth(args):
    d = {}
    if args.config:
        try:
            d = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {args.config} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config} is not valid JSON: {exc}") from None
    d = dict(d)
    output = args.out or d.pop("output", None)
    d.pop("output", None)
    d.pop("schema_version", None)
    if output is None:
        raise ConfigError("synth needs an output file (--out or 'output' in the config)")
    if args.seed is not None:
        d["seed"] = args.seed
    ds = synth_generate(SynthConfig.from_dict(d))
    write_epoch_file(ds, output)
    logger.info("wrote %d epochs to %s", len(ds.records), output)
    return 0


def cmd_stage(args, config):
    stage = STAGE_COMMANDS[args.command]
    if pipeline.is_multi_subject(config):
        dataset = load_epoch_file(config.dataset)
        if stage == "evaluate":
            _echo(pipeline.run_subject_dependent(config, dataset, stages=("evaluate",)))
            return 0
        for sub in pipeline.subject_configs(config, dataset):
            getattr(pipeline.Pipeline(sub, dataset), stage)()
        return 0
    result = getattr(pipeline.Pipeline(config), stage)()
    if stage == "evaluate":
        _echo(result)
    return 0


def cmd_run(args, config):
    _echo(pipeline.run_experiment(config))
    return 0


def cmd_ensemble(args, config, raw):
    spec = raw.get("ensemble", {})
    presets = tuple(spec.get("presets", ENSEMBLE_PRESETS))
    configs = pipeline.ensemble_configs(config, presets)
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    report = pipeline.run_ensemble(configs, out_dir=config.out_dir, jobs=args.jobs)
    _echo(report)
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args)
    try:
        if args.command == "synth":
            return cmd_synth(args)
        config, raw = pipeline.load_config(args.config, seed=args.seed, out_dir=args.out)
        if args.command == "run":
            return cmd_run(args, config)
        if args.command == "ensemble":
            return cmd_ensemble(args, config, raw)
        return cmd_stage(args, config)
    except CogloadError as exc:
        logger.error("%s", exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
