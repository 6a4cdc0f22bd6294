"""Command-line entry point: ``degrpo <subcommand>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path
from typing import Optional, Sequence

from .algorithm import ConfigError
from .harness import RunConfig, SyntheticDatasetSpec, generate_dataset, run_training, write_dataset
from .harness.gradsuite import run_suite
from .harness.training import emit_plot_data, write_outputs

log = logging.getLogger("degrpo")


def _load_config(path: Optional[str]) -> RunConfig:
    return RunConfig.load(path) if path else RunConfig()


def cmd_gen_data(args) -> int:
    cfg = _load_config(args.config)
    spec = cfg.dataset
    overrides = {k: v for k, v in {"n_samples": args.n_samples, "informative_fraction": args.informative_fraction,
                                   "seed": args.seed}.items() if v is not None}
    if args.full_vocab:
        overrides["vocab_per_channel"] = None
    if overrides:
        spec = SyntheticDatasetSpec(**{**spec.to_dict(), **overrides})
    paths = write_dataset(generate_dataset(spec), args.out)
    for name, p in paths.items():
        print(f"{name}: {p}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.max_visits is not None:
        cfg.training.max_visits = args.max_visits
    out = Path(args.out or cfg.output_dir or f"runs/{args.mode}-seed{cfg.seed}")
    cfg.output_dir = None
    report = run_training(cfg, args.mode)
    out.mkdir(parents=True, exist_ok=True)
    cfg.output_dir = str(out)
    cfg.dump(out / "config.yaml")
    paths = write_outputs(report, out)
    s = report.summary()
    print(f"mode={s['mode']} iterations={s['iterations']} visits={s['total_visits']} "
          f"visits_to_target={s['visits_to_target']} final_eval={s['final_eval_reward']}")
    for name, p in paths.items():
        print(f"{name}: {p}")
    return 0


def cmd_gradcheck(args) -> int:
    worst, failed = defaultdict(float), []
    for r in run_suite(args.seeds, args.composed_seeds, args.tol):
        worst[r.name] = max(worst[r.name], r.report.worst)
        if not r.passed:
            failed.append(r)
            log.debug("%s seed %d\n%s", r.name, r.seed, r.report)
    for name, err in worst.items():
        print(f"{name:16s} max rel err {err:.3e}")
    print(f"{'FAIL' if failed else 'PASS'}: {len(failed)} failing checks (tol {args.tol:g})")
    return 1 if failed else 0


def cmd_plot_data(args) -> int:
    summary = json.loads(Path(args.run, "summary.json").read_text()) if Path(args.run).is_dir() \
        else json.loads(Path(args.run).read_text())
    out = Path(args.out) if args.out else (Path(args.run) if Path(args.run).is_dir() else Path(args.run).parent)
    path = emit_plot_data(summary, out / "plot_data.csv" if out.suffix != ".csv" else out)
    print(path)
    return 0


def cmd_validate_config(args) -> int:
    if args.write_default:
        Path(args.path).parent.mkdir(parents=True, exist_ok=True)
        RunConfig().dump(args.path)
        print(f"wrote default config to {args.path}")
        return 0
    try:
        RunConfig.load(args.path)
    except ConfigError as e:
        print(f"invalid: {e}", file=sys.stderr)
        return 2
    print("ok")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="degrpo", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset directory")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--n-samples", type=int)
    g.add_argument("--informative-fraction", type=float)
    g.add_argument("--full-vocab", action="store_true", help="use all 103 tokens")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="pretrain the encoder stages then run the RL loop")
    t.add_argument("--config")
    t.add_argument("--mode", choices=("de-grpo", "vanilla"), default="de-grpo")
    t.add_argument("--seed", type=int)
    t.add_argument("--max-visits", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("gradcheck", help="finite-difference suite over primitives and the composed loss")
    c.add_argument("--seeds", type=int, default=20)
    c.add_argument("--composed-seeds", type=int, default=10)
    c.add_argument("--tol", type=float, default=1e-4)
    c.set_defaults(func=cmd_gradcheck)

    d = sub.add_parser("plot-data", help="per-iteration reward table from a finished run")
    d.add_argument("run", help="run directory or summary.json")
    d.add_argument("--out")
    d.set_defaults(func=cmd_plot_data)

    v = sub.add_parser("validate-config", help="check a YAML run config")
    v.add_argument("path")
    v.add_argument("--write-default", action="store_true")
    v.set_defaults(func=cmd_validate_config)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
