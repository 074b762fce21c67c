"""Command-line experiment runner.

Verbs: run, sweep, eval (checkpoint against a protocol), gen
(materialize a benchmark to manifests), validate (schema check only).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from typing import Optional, Sequence

from . import experiments
from .datagen import generate_benchmark, write_manifest, write_sealed
from .errors import ConfigError
from .evaluation import run_protocol
from .experiments import (config_from_dict, default_config_dict, run, sweep,
                          sweep_config_from_dict, validate_config)
from .models import load_checkpoint


def _load_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _load_config(path: Optional[str], seed: Optional[int]):
    doc = _load_json(path) if path else default_config_dict()
    cfg = config_from_dict(doc)
    if seed is not None:
        cfg = replace(cfg, seeds=(seed,))
    return cfg


def _cmd_run(args) -> int:
    cfg = _load_config(args.config, args.seed)
    report = run(cfg, out_dir=args.out, fast=args.fast)
    s = report["summary"]
    print(f"method={cfg.method} mean_rank1={s['mean_rank1']:.4f} "
          f"mean_mAP={s['mean_mAP']:.4f} ({s['n_runs']} runs)")
    if args.out:
        print(f"report: {os.path.join(args.out, 'report.json')}")
    return 0


def _cmd_sweep(args) -> int:
    doc = _load_json(args.config)
    sc = sweep_config_from_dict(doc)
    if args.seed is not None:
        sc = replace(sc, base=replace(sc.base, seeds=(args.seed,)))
    report = sweep(sc, out_dir=args.out, fast=args.fast)
    for row in report["rows"]:
        print(f"{sc.axis}={row['value']} mean_rank1={row['mean_rank1']:.4f} "
              f"mean_mAP={row['mean_mAP']:.4f}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_config(args.config, args.seed)
    model = load_checkpoint(args.checkpoint)
    benchmark = generate_benchmark(cfg.benchmark)
    protocols = experiments.build_protocol(list(cfg.benchmark.domains),
                                           cfg.protocol_mode, cfg.held_out)
    doc = {"checkpoint": args.checkpoint,
           "config_hash": experiments.config_hash(cfg), "results": []}
    for protocol in protocols:
        results = run_protocol(protocol, model, benchmark)
        for domain_id, res in results.items():
            doc["results"].append({"protocol": protocol.name,
                                   "test_domain": domain_id,
                                   "metrics": res.to_dict()})
            print(f"{protocol.name} {domain_id}: rank1={res.rank_k[1]:.4f} "
                  f"mAP={res.mean_ap:.4f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        experiments._atomic_write_json(doc, os.path.join(args.out, "eval_report.json"))
    return 0


def _cmd_gen(args) -> int:
    cfg = _load_config(args.config, None)
    benchmark = generate_benchmark(cfg.benchmark)
    os.makedirs(args.out, exist_ok=True)
    for domain_id, records in benchmark.domains.items():
        write_manifest(records, os.path.join(args.out, f"{domain_id}.jsonl"))
    if benchmark.pool is not None:
        write_manifest(benchmark.pool, os.path.join(args.out, "pool.jsonl"))
        write_sealed(benchmark.sealed, os.path.join(args.out, "pool.sealed.json"))
    print(f"wrote {len(benchmark.domains)} domain manifests to {args.out}")
    return 0


def _cmd_validate(args) -> int:
    if args.config:
        problems = validate_config(args.config)
    else:
        problems = experiments.validate_config_dict(default_config_dict())
    if problems:
        for p in problems:
            print(f"invalid: {p}", file=sys.stderr)
        return 2
    print("ok")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semidistill")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", required=config_required,
                       help="path to a JSON config (default: built-in config)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config's seed list with one seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--fast", action="store_true",
                       help=f"cap training at {experiments.FAST_EPOCHS} epochs")

    p_run = sub.add_parser("run", help="train and evaluate one configuration")
    common(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a config once per axis value")
    common(p_sweep, config_required=True)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a protocol")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.set_defaults(func=_cmd_eval)

    p_gen = sub.add_parser("gen", help="materialize a benchmark to manifests")
    p_gen.add_argument("--config", default=None)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=_cmd_gen)

    p_val = sub.add_parser("validate", help="check a config without running")
    p_val.add_argument("--config", default=None)
    p_val.set_defaults(func=_cmd_validate)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
