"""``sdrmem`` command line.

Exit codes: 0 success, 1 config error, 2 data error, 3 a run missed its
asserted target (``--expect`` or the fixed-time op-count check).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import experiments as ex
from .formats import DataError
from .hierarchy import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ACCEPT = 0, 1, 2, 3

# verb -> (bundled default config, accepted kinds, runner)
VERBS = {
    "mnist": ("mnist", ("mnist",), ex.run_mnist),
    "sanity": ("sanity", ("sanity",), ex.run_sanity),
    "video": ("synthetic", ("video", "synthetic-seq"), ex.run_video),
    "export-vectors": ("synthetic", ("video", "synthetic-seq"), ex.run_export_vectors),
    "fixed-time": ("fixed_time", ("fixed-time",), ex.run_fixed_time),
    "gen-synth": ("synthetic", ("synthetic-seq",), None),
}

# report field compared against --expect
EXPECT_METRIC = {"mnist": "accuracy", "sanity": "recognition_match", "video": "accuracy"}


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdrmem", description="Sparse distributed coding experiments.")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        s = sub.add_parser(verb)
        s.add_argument("--config", help="experiment config JSON (path or bundled name)")
        s.add_argument("--seed", type=_seed)
        s.add_argument("--out", help="output directory")
        s.add_argument("--train-per-class", type=int)
        s.add_argument("--test-per-class", type=int)
        s.add_argument("--threads", type=int, default=1)
        if verb in ("mnist", "sanity"):
            s.add_argument("--images", help="IDX image file (optionally .gz)")
            s.add_argument("--labels", help="IDX label file (optionally .gz)")
        if verb in ("video", "export-vectors"):
            s.add_argument("--data", help="directory of snippet folders; omit to synthesize")
        if verb in EXPECT_METRIC:
            s.add_argument("--expect", type=float, help=f"exit 3 unless {EXPECT_METRIC[verb]} >= this")
        if verb == "gen-synth":
            s.add_argument("--classes", type=int)
            s.add_argument("--actors", type=int)
            s.add_argument("--frames", type=int)
    return p


def resolve_config(args) -> ex.ExperimentConfig:
    default, kinds, _ = VERBS[args.verb]
    name = args.config or default
    if Path(name).exists():
        cfg = ex.ExperimentConfig.load(name)
    else:
        cfg = ex.bundled_config(name)
    if cfg.kind not in kinds:
        raise ConfigError(f"'{args.verb}' cannot run a {cfg.kind!r} config")
    over = {}
    for flag in ("seed", "out", "train_per_class", "test_per_class"):
        if getattr(args, flag, None) is not None:
            over[flag] = getattr(args, flag)
    data = dict(cfg.data)
    for flag in ("images", "labels"):
        if getattr(args, flag, None):
            data[flag] = str(Path(getattr(args, flag)).resolve())
    if getattr(args, "data", None):
        data["dir"] = str(Path(args.data).resolve())
        if cfg.kind == "synthetic-seq":
            over["kind"] = "video"
    if args.verb == "gen-synth":
        synth = dict(cfg.params.get("synthetic", {}))
        for flag in ("classes", "actors", "frames"):
            if getattr(args, flag) is not None:
                synth[flag] = getattr(args, flag)
        over["params"] = {**cfg.params, "synthetic": synth}
    if args.out is not None:
        over["out"] = str(Path(args.out).resolve())
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    return replace(cfg, data=data, **over)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.verb == "gen-synth":
            report = ex.gen_synthetic(cfg)
        else:
            runner = VERBS[args.verb][2]
            report = runner(cfg, threads=args.threads)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ex.AcceptanceError as e:
        print(f"acceptance failure: {e}", file=sys.stderr)
        return EXIT_ACCEPT
    summary = {k: v for k, v in report.items() if not isinstance(v, (dict, list)) or k == "wall_ratio_last_first"}
    print(json.dumps(summary, indent=2, sort_keys=True))
    metric = EXPECT_METRIC.get(args.verb)
    expect = getattr(args, "expect", None)
    if metric and expect is not None and report[metric] < expect:
        print(f"acceptance failure: {metric} {report[metric]:.4f} < {expect}", file=sys.stderr)
        return EXIT_ACCEPT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
