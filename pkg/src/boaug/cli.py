"""Command-line interface: ``search``, ``apply``, ``eval`` and ``bench``.

Exit codes: 0 success, 2 configuration error, 3 evaluator or protocol
error, 4 numerical failure. ``BOAUG_LOG`` sets the log level (default
WARNING).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from pydantic import ValidationError

from .config import AppConfig, BuiltinSpec, ExternalSpec, SyntheticSpec, dumps_config, load_config
from .dataset_io import read_png, write_png
from .errors import BoAugError, ConfigError
from .evaluators import SYNTHETIC, evaluate_builtin
from .image_ops import augment_batch, substream
from .policy_space import load_policies, pooled_sub_policies, save_policies
from .search_engine import benchmark, run_search

log = logging.getLogger("boaug")


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _evaluator_override(spec: str, current):
    if spec.startswith("synthetic:"):
        return SyntheticSpec(name=spec.split(":", 1)[1])
    if spec == "builtin":
        return current if isinstance(current, BuiltinSpec) else BuiltinSpec()
    if spec.startswith("extern:"):
        cmd = spec.split(":", 1)[1]
        if not cmd.strip():
            raise ConfigError("--evaluator extern: needs a command")
        timeout = current.timeout if isinstance(current, ExternalSpec) else 3600.0
        return ExternalSpec(command=cmd, timeout=timeout)
    raise ConfigError(f"--evaluator: expected synthetic:<name>, builtin or extern:<cmd>, got {spec!r}")


def cmd_search(args) -> int:
    cfg = load_config(args.config) if args.config else AppConfig()
    search = cfg.search
    overrides = {k: v for k, v in (("runs", args.runs), ("init_num", args.init), ("iter_num", args.iters))
                 if v is not None}
    if args.no_timing:
        overrides["record_timing"] = False
    if overrides:
        search = replace(search, **overrides)
    evaluator_spec = cfg.evaluator
    if args.evaluator:
        try:
            evaluator_spec = _evaluator_override(args.evaluator, cfg.evaluator)
        except ValidationError as err:
            raise ConfigError(f"--evaluator: {err.errors()[0]['msg']}") from None
    cfg = cfg.model_copy(update={
        "search": search, "evaluator": evaluator_spec,
        "seed": cfg.seed if args.seed is None else args.seed,
        "output_dir": args.out or cfg.output_dir})
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(dumps_config(cfg), encoding="utf-8")

    evaluator = cfg.build_evaluator()
    start = time.perf_counter()
    try:
        result = run_search(evaluator, cfg.search, cfg.seed, out_dir=out, parallel=args.parallel,
                            resume=args.resume)
    finally:
        evaluator.close()
    wall = time.perf_counter() - start

    save_policies(out / "policies.json", result.policies)
    timing = cfg.search.record_timing
    summary = {
        "complete": result.complete,
        "master_seed": cfg.seed,
        "evaluations": result.evaluations,
        "budget": {"runs": cfg.search.runs, "init_num": cfg.search.init_num, "iter_num": cfg.search.iter_num,
                   "per_run": cfg.search.budget, "total": cfg.search.runs * cfg.search.budget},
        "policies": len(result.policies),
        "sub_policies": sum(len(p.sub_policies) for p in result.policies),
        "runs": [{
            "run": h.run, "seed": h.seed, "complete": h.complete, "evaluations": len(h.records),
            "incumbent_error": h.incumbent.error if h.records else None,
            "incumbent_iter": h.incumbent.iter if h.records else None,
            "evaluation_time_s": sum(r.elapsed_s for r in h.records),
        } for h in result.histories],
        "wall_time_s": wall if timing else 0.0,
    }
    if result.failure is not None:
        summary["failure"] = str(result.failure)
    _write_json(out / "summary.json", summary)
    if result.failure is not None:
        raise result.failure
    print(f"{result.evaluations} evaluations, {len(result.policies)} policies -> {out}")
    return 0


def cmd_apply(args) -> int:
    policies = load_policies(args.policies)
    pool = pooled_sub_policies(policies)
    src = Path(args.input)
    if not src.is_dir():
        raise ConfigError(f"--in: not a directory: {src}")
    files = sorted(src.glob("*.png"))
    if not files:
        raise ConfigError(f"--in: no PNG files in {src}")
    if args.count < 1:
        raise ConfigError(f"--count must be >= 1, got {args.count}")
    images = [read_png(f) for f in files]
    dst = Path(args.out)
    dst.mkdir(parents=True, exist_ok=True)
    for k in range(args.count):
        augmented = augment_batch(images, pool, substream(args.seed, k))
        for f, img in zip(files, augmented):
            write_png(dst / f"{f.stem}_aug{k}.png", img)
    print(f"wrote {len(files) * args.count} images to {dst}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    if not isinstance(cfg.evaluator, BuiltinSpec):
        raise ConfigError(f"{args.config}: field 'evaluator.kind' must be 'builtin' for eval")
    spec = cfg.evaluator
    seed = spec.seed if args.seed is None else args.seed
    pool = pooled_sub_policies(load_policies(args.policies))
    train, val = spec.dataset.split()
    augmented = evaluate_builtin(pool, train, val, spec.classifier, seed).error
    baseline = evaluate_builtin(None, train, val, spec.classifier, seed).error
    print(f"augmented_error {augmented!r}")
    print(f"baseline_error {baseline!r}")
    print(f"delta {augmented - baseline:+.17g}")
    return 0


def cmd_bench(args) -> int:
    if args.suite not in SYNTHETIC:
        raise ConfigError(f"--suite: unknown suite {args.suite!r}; choose from {sorted(SYNTHETIC)}")
    if args.seeds < 1:
        raise ConfigError(f"--seeds must be >= 1, got {args.seeds}")
    search = load_config(args.config).search if args.config else None
    if search is not None:
        search = replace(search, record_timing=False)
    rows = benchmark(args.suite, range(args.seed, args.seed + args.seeds), args.budget, search)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "seed", "iter", "best_so_far"])
        for method, seed, t, value in rows:
            writer.writerow([method, seed, t, repr(value)])
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="boaug", description="Bayesian-optimisation search for "
                                     "image-augmentation policies.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="run the policy search")
    p.add_argument("--config", help="JSON config file (defaults apply when omitted)")
    p.add_argument("--runs", type=int)
    p.add_argument("--init", type=int, help="random initial evaluations per run")
    p.add_argument("--iters", type=int, help="BO iterations per run")
    p.add_argument("--seed", type=int, help="master seed; run k uses seed + k")
    p.add_argument("--parallel", type=int, default=1, help="runs executed concurrently")
    p.add_argument("--evaluator", help="synthetic:<name> | builtin | extern:<cmd>")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--resume", action="store_true", help="continue from existing run checkpoints")
    p.add_argument("--no-timing", action="store_true",
                   help="record zero timings so identical seeds give byte-identical outputs")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("apply", help="augment a directory of PNG images")
    p.add_argument("--policies", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=1, help="augmented variants per image")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("eval", help="compare pooled policies against no augmentation")
    p.add_argument("--policies", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="BO vs random search on a synthetic benchmark")
    p.add_argument("--suite", required=True)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--config", help="take search settings from this config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)
    return parser


def _setup_logging():
    level = os.environ.get("BOAUG_LOG", "WARNING").upper()
    numeric = logging.getLevelName(level)
    if not isinstance(numeric, int):
        numeric = logging.WARNING
    logging.basicConfig(level=numeric, format="%(asctime)s %(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BoAugError as err:
        print(f"boaug {args.command}: error: {err}", file=sys.stderr)
        return err.exit_code
