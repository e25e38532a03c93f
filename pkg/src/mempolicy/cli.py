"""Command-line entry point: ``mempolicy <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from .env import generate_demos, read_episodes, write_episodes
from .errors import MemPolicyError


def _gen_demos(args) -> None:
    paths = write_episodes(generate_demos(args.task, args.n, args.seed), args.out)
    print(f"wrote {len(paths)} episodes to {args.out}")


def _train(args) -> None:
    from .harness import load_config, save_config, train

    cfg = load_config(args.config)
    demos = read_episodes(args.demos)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.yaml")
    log = None if args.quiet else print
    result = train(cfg, demos, out_dir=out, resume=args.resume, log=log)
    print(f"metrics: {result.metrics_path}")
    print(f"checkpoints: {out / 'best.npz'}, {out / 'last.npz'}")


def _eval(args) -> None:
    from .harness import evaluate, load_checkpoint

    ckpt = load_checkpoint(args.checkpoint)
    report = evaluate(
        ckpt,
        args.task,
        args.trials,
        ensemble=args.ensemble,
        alpha=args.alpha,
        exec_horizon=args.exec_horizon,
        seed=args.seed,
    )
    summary = asdict(report)
    if args.json:
        Path(args.json).write_text(json.dumps(summary, indent=2))
    print(f"{report.task}: mean score {report.mean_score:.3f}, success rate {report.success_rate:.3f} "
          f"over {report.trials} trials ({report.wall_clock:.1f}s)")


def _ablate(args) -> None:
    from .harness import load_config
    from .harness.ablation import directions, run_ablation

    cfg = load_config(args.config)
    demos = read_episodes(args.demos) if args.demos else None
    rows = run_ablation(cfg, args.axes, demos=demos, trials=args.trials, out_dir=args.out, log=print)
    for r in rows:
        print(f"{r.axis:>14} {r.variant:>6}: mean {r.mean_score:.3f} success {r.success_rate:.3f}")
    for d in directions(rows):
        mark = "holds" if d["holds"] else "FAILS"
        print(f"{d['axis']}: {d['better']} >= {d['other']} {mark}")


def _plot(args) -> None:
    from .harness.plots import plot_metrics

    for p in plot_metrics(args.csv, args.out):
        print(f"wrote {p}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mempolicy", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-demos", help="roll out the scripted expert and write episode files")
    p.add_argument("--task", required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_gen_demos)

    p = sub.add_parser("train", help="train a policy from a YAML config and demo directory")
    p.add_argument("--config", required=True)
    p.add_argument("--demos", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_train)

    p = sub.add_parser("eval", help="roll out a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--ensemble", choices=["off", "adaptive"], default="off")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--exec-horizon", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--json", help="also write the report as JSON")
    p.set_defaults(func=_eval)

    p = sub.add_parser("ablate", help="train and evaluate memory-design variants")
    p.add_argument("--config", required=True)
    p.add_argument("--axes", default="", help="comma list from type,length,retrieval,fusion,consolidation")
    p.add_argument("--out", required=True)
    p.add_argument("--demos")
    p.add_argument("--trials", type=int, default=50)
    p.set_defaults(func=_ablate)

    p = sub.add_parser("plot-metrics", help="render loss and validation charts")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except MemPolicyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
