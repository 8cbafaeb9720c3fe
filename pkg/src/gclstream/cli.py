"""Command-line harness.

Subcommands: ``run`` a configured experiment over its seed list; ``ablate``
one axis with everything else fixed; ``gen-features`` to export the synthetic
backbone as a feature file; ``metrics`` to recompute a run's metrics from its
logged predictions and check them against the stored CSV.

Configuration comes from an optional JSON file plus repeated ``--set
key=value`` overrides (dotted keys reach into the stream block; CLI wins).
Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericalError
from .harness import (ABLATION_AXES, RunConfig, ablate, apply_overrides,
                      config_from_dict, config_to_dict, desk_config, run)
from .metrics import a_auc, a_avg, a_last, accuracy, bwt, f_last, routing_accuracy
from .stream import StreamConfig, SyntheticBackbone, write_feature_file


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are config errors (exit 1)
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _add_config_args(sub):
    sub.add_argument("--config", type=str, default=None,
                     help="JSON config file (keys mirror RunConfig)")
    sub.add_argument("--set", action="append", default=[], metavar="KEY=VAL",
                     dest="overrides",
                     help="override a config key (dotted keys reach the "
                          "stream block); repeatable, wins over the file")
    sub.add_argument("--preset", choices=("desk", "paper"), default="desk",
                     help="base defaults: desk-scale synthetic (M=1024) or "
                          "full-scale (M=10000)")
    sub.add_argument("--outdir", type=str, default=None)
    sub.add_argument("--seeds", type=str, default=None,
                     help="comma-separated seed list, e.g. 1,2,3")


def _build_config(args) -> RunConfig:
    if args.preset == "desk":
        base = config_to_dict(desk_config())
    else:
        base = config_to_dict(RunConfig())
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        file_data = json.loads(path.read_text())
        stream = {**base.get("stream", {}), **file_data.pop("stream", {})}
        base.update(file_data)
        base["stream"] = stream
    apply_overrides(base, args.overrides)
    if args.outdir:
        base["outdir"] = args.outdir
    if args.seeds:
        base["seeds"] = [int(s) for s in args.seeds.split(",") if s]
    return config_from_dict(base)


def _cmd_run(args) -> int:
    config = _build_config(args)
    result = run(config)
    print(result.summary())
    print(f"outputs: {result.run_dir}")
    return 0


def _cmd_ablate(args) -> int:
    config = _build_config(args)
    results = ablate(config, args.axis)
    for name, result in results:
        print(f"{name}: {result.summary()}")
    print(f"outputs: {Path(config.outdir) / f'ablate_{args.axis}'}")
    return 0


def _cmd_gen_features(args) -> int:
    base = config_to_dict(desk_config())
    apply_overrides(base, args.overrides)
    stream = StreamConfig(**base["stream"])
    source = SyntheticBackbone(stream)
    write_feature_file(args.out, source)
    print(f"wrote {args.out}: d={source.d} classes={source.num_classes} "
          f"rows={len(source.labels)}")
    return 0


def _cmd_metrics(args) -> int:
    run_dir = Path(args.run_dir)
    pred_path = run_dir / "predictions.jsonl"
    if not pred_path.exists():
        raise ConfigError(f"no predictions.jsonl under {run_dir}")
    by_seed: dict[int, dict] = {}
    with open(pred_path) as fh:
        for line in fh:
            record = json.loads(line)
            seed = record.get("seed")
            if record["phase"] == "meta":
                by_seed[record["seed"]] = {"meta": record, "records": []}
            else:
                by_seed[seed]["records"].append(record)

    stored: dict[tuple, float] = {}
    metrics_path = run_dir / "metrics.csv"
    if metrics_path.exists():
        for line in metrics_path.read_text().splitlines()[1:]:
            seed, metric, value = line.split(",")
            stored[(seed, metric)] = float(value)

    worst = 0.0
    for seed, data in sorted(by_seed.items()):
        meta = data["meta"]
        T = meta["sessions"]
        history = [set(h) for h in meta["history"]]
        session_classes = [set(s) for s in meta["session_classes"]]
        R = np.full((T, T), np.nan)
        anytime = []
        recomputed: dict[str, float] = {}
        for record in data["records"]:
            labels = np.array(record["labels"])
            predictions = np.array(record["predictions"])
            if record["phase"] == "anytime":
                anytime.append(accuracy(predictions, labels))
            elif record["phase"] == "session":
                i = record["step"]
                for j in range(i + 1):
                    member = np.isin(labels, sorted(session_classes[j]))
                    R[i, j] = accuracy(predictions[member], labels[member])
            elif record["phase"] == "final":
                recomputed["final_accuracy"] = accuracy(predictions, labels)
                recomputed["routing_accuracy"] = routing_accuracy(
                    record["selections"], labels, history)
        if anytime:
            recomputed["a_auc"] = a_auc(anytime)
        if not np.isnan(R[-1]).any():
            recomputed["a_last"] = a_last(R)
            recomputed["a_avg"] = a_avg(R)
            recomputed["f_last"] = f_last(R)
            if T >= 2:
                recomputed["bwt"] = bwt(R)
        for metric, value in recomputed.items():
            key = (str(seed), metric)
            if key in stored:
                diff = abs(stored[key] - value)
                worst = max(worst, diff)
                status = "ok" if diff <= 1e-12 else "MISMATCH"
                print(f"seed {seed} {metric}: recomputed {value:.6f} "
                      f"stored {stored[key]:.6f} [{status}]")
            else:
                print(f"seed {seed} {metric}: recomputed {value:.6f}")
    if worst > 1e-12:
        raise NumericalError(
            f"stored metrics diverge from logged predictions by {worst:g}")
    return 0


def main(argv=None) -> int:
    parser = _Parser(prog="gclstream",
                     description="continual-learning stream engine")
    parser.add_argument("-v", "--verbose", action="store_true")
    commands = parser.add_subparsers(dest="command", required=True)

    sub = commands.add_parser("run", parents=[], help="run an experiment")
    _add_config_args(sub)
    sub.set_defaults(fn=_cmd_run)

    sub = commands.add_parser("ablate", help="sweep one ablation axis")
    sub.add_argument("--axis", required=True, choices=ABLATION_AXES)
    _add_config_args(sub)
    sub.set_defaults(fn=_cmd_ablate)

    sub = commands.add_parser("gen-features",
                              help="export synthetic features to a file")
    sub.add_argument("--out", required=True)
    sub.add_argument("--set", action="append", default=[], metavar="KEY=VAL",
                     dest="overrides")
    sub.set_defaults(fn=_cmd_gen_features)

    sub = commands.add_parser("metrics",
                              help="recompute metrics from logged predictions")
    sub.add_argument("--run-dir", required=True)
    sub.set_defaults(fn=_cmd_metrics)

    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s")
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
