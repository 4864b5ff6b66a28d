"""Command-line entry point: generate / train / solve / eval / check.

Config precedence is defaults < --config JSON file < command-line
flags; every run writes a manifest echoing the fully resolved
configuration so it can be reproduced bit-for-bit.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from . import checks, maze as maze_mod, sudoku as sudoku_mod
from .evaluation import evaluate, write_table
from .inference import InferConfig, solve_parallel
from .instances import (
    MAZE,
    SUDOKU,
    generate_maze_instances,
    generate_sudoku_instances,
    read_bundle,
    write_bundle,
)
from .losses import LossConfig
from .model import DeductionTransformer, ModelConfig, load_checkpoint, save_checkpoint
from .training import TrainConfig, train


def _write_manifest(out_path: str, subcommand: str, args: argparse.Namespace) -> None:
    config = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "seed": getattr(args, "seed", None),
        "output": str(out_path),
        "version": __version__,
    }
    Path(str(out_path) + ".manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        overrides = json.loads(Path(known.config).read_text())
        # subcommands parse into their own namespaces, so the defaults
        # must be pushed into every subparser as well
        for target in [parser] + getattr(parser, "_subcommand_parsers", []):
            valid = {a.dest for a in target._actions}
            target.set_defaults(**{k: v for k, v in overrides.items() if k in valid})
    return argv


def cmd_generate(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.domain == SUDOKU:
        spec = sudoku_mod.SudokuSpec(args.box_rows, args.box_cols)
        instances = generate_sudoku_instances(
            spec, args.count, rng, require_search=args.require_search
        )
    else:
        spec = maze_mod.MazeSpec(args.rows, args.cols, args.min_path_len)
        instances = generate_maze_instances(spec, args.count, rng, k=args.K)
    write_bundle(args.out, instances)
    _write_manifest(args.out, "generate", args)
    print(f"wrote {len(instances)} {args.domain} instances to {args.out}")
    return 0


def _model_config_from_args(args, shape) -> ModelConfig:
    return ModelConfig(
        shape=shape,
        embed_dim=args.embed_dim,
        layers=args.layers,
        heads=args.heads,
        internal_iterations=args.iterations,
        ffn_multiplier=args.ffn_multiplier,
        dropout_rate=args.dropout,
        use_rope2d=args.rope2d,
        seed=args.seed,
    )


def _loss_config_from_args(args) -> LossConfig:
    return LossConfig(
        w_pos=args.w_pos,
        w_neg=args.w_neg,
        lambda_cls=args.lambda_cls,
        lambda_ce=args.lambda_ce,
        theta_elim=args.theta_elim,
        tau_decide=args.tau_decide,
    )


def cmd_train(args) -> int:
    instances = read_bundle(args.data)
    if not instances:
        print("empty training bundle", file=sys.stderr)
        return 1
    shape = instances[0].initial.shape
    model_cfg = _model_config_from_args(args, shape)
    train_cfg = TrainConfig(
        batch_size=args.batch_size,
        total_steps=args.steps,
        pool_multiplier=args.pool_multiplier,
        max_pool_age=args.pool_age,
        lr=args.lr,
        weight_decay=args.weight_decay,
        grad_clip=args.grad_clip,
        warmup_fraction=args.warmup_fraction,
        dataset_augment=not args.no_augment,
        k_solutions=args.K,
        seed=args.seed,
        checkpoint_every=args.checkpoint_every,
    )
    model = DeductionTransformer(model_cfg)
    print(f"training {model.parameter_count():,} parameters for {args.steps} steps")

    def save_intermediate(step: int) -> None:
        save_checkpoint(model, f"{args.out}.step{step + 1}")

    metrics = train(
        model,
        instances,
        train_cfg,
        _loss_config_from_args(args),
        metrics_path=args.metrics,
        checkpoint_fn=save_intermediate if args.checkpoint_every else None,
    )
    save_checkpoint(model, args.out)
    _write_manifest(args.out, "train", args)
    print(f"final loss {metrics[-1]['loss']:.4f}; checkpoint at {args.out}")
    return 0


def _infer_config_from_args(args) -> InferConfig:
    return InferConfig(
        slots=args.slots,
        chains=args.chains,
        round_budget=args.budget,
        theta_elim=args.theta_elim,
        theta_cls_eval=args.theta_cls_eval,
        tau_decide=args.tau_decide,
        eval_dropout=args.eval_dropout,
        per_step_augment=not args.no_step_augment,
        verify_solutions=not args.no_verify,
        seed=args.seed,
    )


def _solution_text(instance, solution) -> str:
    if solution is None:
        return ""
    if instance.domain == SUDOKU:
        return sudoku_mod.serialize_values(solution.values, instance.payload["spec"])
    grid = instance.payload["grid"]
    return maze_mod.serialize(grid, maze_mod.solution_to_marks(solution, grid.shape[1]))


def cmd_solve(args) -> int:
    model = load_checkpoint(args.checkpoint)
    puzzles = read_bundle(args.puzzles)
    verdicts = solve_parallel(model, puzzles, _infer_config_from_args(args))
    with open(args.out, "w") as f:
        for inst, v in zip(puzzles, verdicts):
            f.write(
                json.dumps(
                    {
                        "id": inst.instance_id,
                        "outcome": v.outcome,
                        "solution": _solution_text(inst, v.solution),
                        "batched_forwards": v.batched_forwards,
                        "sequential_cost": v.sequential_cost,
                        "wall_time": v.wall_time,
                    }
                )
                + "\n"
            )
    _write_manifest(args.out, "solve", args)
    solved = sum(v.outcome == "solved" for v in verdicts)
    print(f"solved {solved}/{len(verdicts)}; verdicts at {args.out}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    test_set = read_bundle(args.test)
    report = evaluate(model, test_set, _infer_config_from_args(args))
    rows = [
        {
            "id": inst.instance_id,
            "outcome": v.outcome,
            "batched_forwards": v.batched_forwards,
            "sequential_cost": v.sequential_cost if v.sequential_cost is not None else "",
            "wall_time": f"{v.wall_time:.4f}",
        }
        for inst, v in zip(test_set, report.verdicts)
    ]
    write_table(args.out, rows)
    _write_manifest(args.out, "eval", args)
    print(
        f"accuracy {100 * report.accuracy:.1f}% "
        f"soundness {100 * report.soundness:.1f}% "
        f"(correct {report.correct}, wrong {report.wrong}, "
        f"abstained {report.abstained}, total {report.total}); "
        f"{report.wall_clock_per_example:.3f} s/ex"
    )
    return 0


def cmd_check(args) -> int:
    names = list(checks.SUITES) if args.suite == "all" else [args.suite]
    all_ok = True
    for name in names:
        suite = checks.SUITES[name]
        if name == "galois":
            result = suite(cases=args.cases, seed=args.seed)
        elif name == "dag":
            result = suite(seed=args.seed)
        elif name == "oracle":
            result = suite(seed=args.seed)
        else:
            result = suite()
        all_ok &= result["ok"]
        summary = {k: v for k, v in result.items() if k not in ("failures", "problems", "mismatches")}
        print(("PASS " if result["ok"] else "FAIL ") + json.dumps(summary))
    return 0 if all_ok else 1


def _default_threads() -> int:
    """Thread count from the environment; 0 leaves torch's default."""
    try:
        return int(os.environ.get("LATDEDUCE_THREADS", "0"))
    except ValueError:
        return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latdeduce")
    parser.add_argument("--config", help="JSON file of flag defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="emit an instance bundle")
    g.add_argument("--domain", choices=[SUDOKU, MAZE], required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--K", type=int, default=1, help="solutions sampled per instance")
    g.add_argument("--box-rows", type=int, default=3)
    g.add_argument("--box-cols", type=int, default=3)
    g.add_argument("--require-search", action="store_true")
    g.add_argument("--rows", type=int, default=9)
    g.add_argument("--cols", type=int, default=9)
    g.add_argument("--min-path-len", type=int, default=10)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a deduction model")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--metrics")
    t.add_argument("--embed-dim", type=int, default=128)
    t.add_argument("--layers", type=int, default=4)
    t.add_argument("--heads", type=int, default=4)
    t.add_argument("--iterations", type=int, default=16)
    t.add_argument("--ffn-multiplier", type=float, default=4.0)
    t.add_argument("--dropout", type=float, default=0.1)
    t.add_argument("--rope2d", action="store_true")
    t.add_argument("--batch-size", type=int, default=512)
    t.add_argument("--steps", type=int, default=4000)
    t.add_argument("--pool-multiplier", type=float, default=1.0)
    t.add_argument("--pool-age", type=int, default=100)
    t.add_argument("--lr", type=float, default=3e-3)
    t.add_argument("--weight-decay", type=float, default=0.1)
    t.add_argument("--grad-clip", type=float, default=1.0)
    t.add_argument("--warmup-fraction", type=float, default=0.1)
    t.add_argument("--no-augment", action="store_true")
    t.add_argument("--K", type=int, default=1)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--checkpoint-every", type=int, default=0)
    t.add_argument("--w-pos", type=float, default=4.0)
    t.add_argument("--w-neg", type=float, default=0.5)
    t.add_argument("--lambda-cls", type=float, default=0.1)
    t.add_argument("--lambda-ce", type=float, default=0.2)
    t.add_argument("--theta-elim", type=float, default=0.1)
    t.add_argument("--tau-decide", type=float, default=1.5)
    t.add_argument("--threads", type=int, default=_default_threads())
    t.set_defaults(func=cmd_train)

    def add_infer_flags(p):
        p.add_argument("--slots", type=int, default=8)
        p.add_argument("--chains", type=int, default=64)
        p.add_argument("--budget", type=int, default=1000)
        p.add_argument("--theta-elim", type=float, default=0.1)
        p.add_argument("--theta-cls-eval", type=float, default=0.6)
        p.add_argument("--tau-decide", type=float, default=1.5)
        p.add_argument("--eval-dropout", type=float, default=0.05)
        p.add_argument("--no-step-augment", action="store_true")
        p.add_argument("--no-verify", action="store_true",
                       help="trust self-accepted solutions (wrong answers become possible)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=_default_threads())

    s = sub.add_parser("solve", help="solve a puzzle bundle")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--puzzles", required=True)
    s.add_argument("--out", required=True)
    add_infer_flags(s)
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("eval", help="measure accuracy and soundness")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--test", required=True)
    e.add_argument("--out", required=True)
    add_infer_flags(e)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("check", help="run a verification suite")
    c.add_argument("--suite", choices=list(checks.SUITES) + ["all"], required=True)
    c.add_argument("--cases", type=int, default=1000)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_check)
    parser._subcommand_parsers = [g, t, s, e, c]
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    _apply_config_file(parser, argv)
    args = parser.parse_args(argv)
    if getattr(args, "threads", 0):
        torch.set_num_threads(args.threads)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
