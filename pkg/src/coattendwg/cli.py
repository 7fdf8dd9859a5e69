"""Command-line interface.

Exit codes:
    0  success
    1  a check failed (gradcheck tolerance exceeded)
    2  usage error (unknown flag or subcommand)
    3  missing or unreadable file
    4  invalid configuration
    5  malformed dataset or parameter file
    6  training diverged
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .ablation import SINGLE_MODALITY_VARIANTS, ABLATION_VARIANTS
from .config import RunConfig, bind_dataset_dims, load_config
from .data import DatasetFormatError, SyntheticSpec, load_features, save_features, split, synth_generate
from .experiments import DESK_MODEL, DESK_TRAIN, format_table, run_variants, synthetic_splits, write_table_csv
from .gradcheck import gradcheck
from .model import ConfigError, ModelConfig, forward_full, init_params, load_params, parameter_dict, save_params
from .trace import collect_traces, export_trace
from .training import TrainingDivergedError, cross_entropy, evaluate, train

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_CONFIG = 4
EXIT_DATA = 5
EXIT_DIVERGED = 6

TINY_CONFIG = ModelConfig(
    D=8, D_text=6, D_img=10, L=1, fusion_heads=2, refine_heads=2, experts=2,
    mf_depth=2, mf_kernel=3, num_classes=3, dropout=0.0,
)


def _run_config(path) -> RunConfig:
    return load_config(path) if path else RunConfig()


def cmd_synth(args) -> int:
    spec = SyntheticSpec(args.n, args.d_text, args.d_img, args.task, args.noise, args.seed, args.modality)
    save_features(synth_generate(spec), args.out)
    print(f"wrote {spec.n_samples} records to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    run = _run_config(args.config)
    data = load_features(args.data)
    cfg = bind_dataset_dims(run, data.D_text, data.D_img, data.num_classes)
    test = None
    if args.split:
        data, test = split(data, args.split, run.train.seed)
    log_fh = open(args.log, "w", encoding="utf-8") if args.log else sys.stdout

    def emit(record):
        log_fh.write(record.to_json() + "\n")
        log_fh.flush()

    try:
        result = train(cfg, run.train, data, on_epoch=emit)
    finally:
        if log_fh is not sys.stdout:
            log_fh.close()
    save_params(result.params, args.out)
    print(f"saved parameters to {args.out} (best epoch {result.best_epoch})")
    if test is not None and len(test):
        print(json.dumps({"test": evaluate(result.params, cfg, test).as_dict()}, indent=2))
    return EXIT_OK


def cmd_eval(args) -> int:
    run = _run_config(args.config)
    data = load_features(args.data)
    cfg = bind_dataset_dims(run, data.D_text, data.D_img, data.num_classes)
    params = load_params(cfg, args.params)
    report = json.dumps(evaluate(params, cfg, data).as_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(report + "\n", encoding="utf-8")
    print(report)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = replace(_run_config(args.config).model, dropout=0.0) if args.config else TINY_CONFIG
    cfg = replace(cfg, seed=args.seed)
    params = init_params(cfg)
    rng = np.random.default_rng(args.seed)
    B = args.batch
    text = rng.standard_normal((B, cfg.D_text))
    img = rng.standard_normal((B, cfg.D_img))
    labels = rng.integers(0, cfg.num_classes, size=B)

    def loss():
        return cross_entropy(forward_full(params, cfg, text, img).logits, labels)

    report = gradcheck(loss, parameter_dict(params), h=args.h, tol=args.tol)
    print(report.format())
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_trace(args) -> int:
    run = _run_config(args.config)
    data = load_features(args.data)
    cfg = bind_dataset_dims(run, data.D_text, data.D_img, data.num_classes)
    params = load_params(cfg, args.params)
    rows = collect_traces(params, cfg, data)
    export_trace(rows, args.out, args.format)
    print(f"wrote {len(rows)} trace rows to {args.out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    variants = dict(ABLATION_VARIANTS)
    if args.variants:
        names = [v.strip() for v in args.variants.split(";") if v.strip()]
        unknown = [n for n in names if n not in ABLATION_VARIANTS and n not in SINGLE_MODALITY_VARIANTS]
        if unknown:
            raise ConfigError(f"unknown variants {unknown}")
        pool = {**ABLATION_VARIANTS, **SINGLE_MODALITY_VARIANTS}
        variants = {n: pool[n] for n in names}
    if args.single_modality:
        variants.update(SINGLE_MODALITY_VARIANTS)
    if args.config:
        run = load_config(args.config)
        model_cfg, train_cfg = run.model, run.train
    else:
        model_cfg, train_cfg = DESK_MODEL, DESK_TRAIN

    if args.data:
        data = load_features(args.data)

        def data_for_seed(seed):
            return split(data, 0.8, seed)
    else:
        def data_for_seed(seed):
            return synthetic_splits(seed, args.n_train, args.n_test, args.noise, dims=model_cfg.D_text)

    results = run_variants(variants, range(args.seeds), data_for_seed, model_cfg, train_cfg)
    print(format_table(results))
    if args.out:
        write_table_csv(results, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coattendwg", description="Co-attentive gated expert fusion toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset file")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--d-text", type=int, default=16)
    s.add_argument("--d-img", type=int, default=16)
    s.add_argument("--task", default="xor-interaction")
    s.add_argument("--modality", default="text")
    s.add_argument("--noise", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train on a dataset file")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="parameter file (.npz)")
    s.add_argument("--log", help="epoch log (jsonl); stdout when omitted")
    s.add_argument("--split", type=float, help="hold out a test split with this train ratio")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate saved parameters")
    s.add_argument("--config")
    s.add_argument("--params", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference gradient check")
    s.add_argument("--config")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--batch", type=int, default=2)
    s.add_argument("--h", type=float, default=1e-5)
    s.add_argument("--tol", type=float, default=1e-4)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("trace", help="export attention, gate and expert traces")
    s.add_argument("--config")
    s.add_argument("--params", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    s.set_defaults(func=cmd_trace)

    s = sub.add_parser("ablate", help="train the ablation variant matrix and compare")
    s.add_argument("--config")
    s.add_argument("--data", help="dataset file; synthetic xor task when omitted")
    s.add_argument("--variants", help="';'-separated variant names (default: every ablation row)")
    s.add_argument("--single-modality", action="store_true", help="add text-only and image-only rows")
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--n-train", type=int, default=2000)
    s.add_argument("--n-test", type=int, default=500)
    s.add_argument("--noise", type=float, default=0.1)
    s.add_argument("--out", help="CSV table path")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetFormatError, ValueError, KeyError) as exc:
        print(f"error: bad input: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
