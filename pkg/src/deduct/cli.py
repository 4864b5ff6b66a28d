"""Command-line entry point.

Subcommands: generate, train, solve, eval, check.  Option precedence is
defaults < --config JSON file < explicit command-line flags, and every run
writes a manifest echoing the fully resolved configuration so it can be
reproduced bit-for-bit from (flags, seed).
"""

from __future__ import annotations

import json
import sys
from dataclasses import asdict

import click
import numpy as np

from . import __version__
from . import checks
from . import maze as mz
from . import model as mdl
from . import sudoku as sd
from .evaluation import evaluate, write_table
from .inference import InferConfig, solve_parallel
from .instances import (MAZE, SUDOKU, generate_dataset, read_bundle, write_bundle)
from .lattice import LatticeShape
from .training import LossConfig, TrainConfig, train


def _resolve(ctx: click.Context, config_path: str | None, **flags) -> dict:
    """defaults < config file < explicitly passed flags."""
    resolved = dict(flags)
    if config_path:
        with open(config_path) as f:
            file_cfg = json.load(f)
        for k, v in file_cfg.items():
            key = k.replace("-", "_")
            if key not in resolved:
                raise click.BadParameter(f"unknown config key {k!r}")
            if ctx.get_parameter_source(key) != click.core.ParameterSource.COMMANDLINE:
                resolved[key] = v
    return resolved


def _write_manifest(out_path: str, subcommand: str, cfg: dict,
                    inputs: list[str], outputs: list[str]) -> None:
    manifest = {"subcommand": subcommand, "config": cfg,
                "inputs": inputs, "outputs": outputs,
                "tool_version": __version__}
    with open(str(out_path) + ".manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, default=str)


@click.group()
@click.version_option(__version__)
def main():
    """Sound-deduction search solver with a learned deduction operator."""


@main.command()
@click.option("--domain", type=click.Choice([SUDOKU, MAZE]), required=True)
@click.option("--count", type=int, default=10, show_default=True)
@click.option("--k", "k_solutions", type=int, default=1, show_default=True,
              help="sampled ground-truth solutions per instance (0 = none)")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--box-rows", type=int, default=3, show_default=True)
@click.option("--box-cols", type=int, default=3, show_default=True)
@click.option("--require-search/--no-require-search", default=False,
              help="keep only puzzles that defeat singles propagation")
@click.option("--rows", type=int, default=9, show_default=True)
@click.option("--cols", type=int, default=9, show_default=True)
@click.option("--min-path-len", type=int, default=10, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.pass_context
def generate(ctx, domain, count, k_solutions, seed, box_rows, box_cols,
             require_search, rows, cols, min_path_len, out, config_path):
    """Emit an instance bundle (line-delimited JSON records)."""
    cfg = _resolve(ctx, config_path, domain=domain, count=count,
                   k_solutions=k_solutions, seed=seed, box_rows=box_rows,
                   box_cols=box_cols, require_search=require_search, rows=rows,
                   cols=cols, min_path_len=min_path_len)
    rng = np.random.default_rng(cfg["seed"])
    if cfg["domain"] == SUDOKU:
        spec = sd.SudokuSpec(cfg["box_rows"], cfg["box_cols"])
    else:
        spec = mz.MazeSpec(cfg["rows"], cfg["cols"], cfg["min_path_len"])
    instances = generate_dataset(cfg["domain"], spec, cfg["count"],
                                 cfg["k_solutions"], rng,
                                 require_search=cfg["require_search"])
    write_bundle(out, instances)
    _write_manifest(out, "generate", cfg, [], [str(out)])
    click.echo(f"wrote {len(instances)} instances to {out}")


def _model_config(cfg: dict, shape: LatticeShape) -> mdl.ModelConfig:
    return mdl.ModelConfig(
        shape=shape, embed_dim=cfg["embed_dim"], num_layers=cfg["num_layers"],
        num_heads=cfg["num_heads"], iterations=cfg["iterations"],
        dropout=cfg["dropout"], use_rope2d=cfg["rope2d"], seed=cfg["seed"])


@main.command(name="train")
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--embed-dim", type=int, default=128, show_default=True)
@click.option("--num-layers", type=int, default=4, show_default=True)
@click.option("--num-heads", type=int, default=4, show_default=True)
@click.option("--iterations", type=int, default=16, show_default=True)
@click.option("--dropout", type=float, default=0.1, show_default=True)
@click.option("--rope2d/--no-rope2d", default=False)
@click.option("--batch-size", type=int, default=512, show_default=True)
@click.option("--steps", type=int, default=4000, show_default=True)
@click.option("--pool-multiplier", type=int, default=1, show_default=True)
@click.option("--pool-age", type=int, default=100, show_default=True)
@click.option("--lr", type=float, default=3e-3, show_default=True)
@click.option("--weight-decay", type=float, default=0.1, show_default=True)
@click.option("--grad-clip", type=float, default=1.0, show_default=True)
@click.option("--warmup-fraction", type=float, default=0.1, show_default=True)
@click.option("--augment/--no-augment", default=True)
@click.option("--k", "k_solutions", type=int, default=1, show_default=True)
@click.option("--theta-elim", type=float, default=0.1, show_default=True)
@click.option("--tau-decide", type=float, default=1.5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--quiet", is_flag=True)
@click.pass_context
def train_cmd(ctx, data, out, config_path, **flags):
    """Train a deduction model on an instance bundle."""
    cfg = _resolve(ctx, config_path, **flags)
    dataset = read_bundle(data)
    shape = dataset[0].initial.shape
    mcfg = _model_config(cfg, shape)
    tcfg = TrainConfig(batch_size=cfg["batch_size"], total_steps=cfg["steps"],
                       pool_multiplier=cfg["pool_multiplier"],
                       max_pool_age=cfg["pool_age"], lr=cfg["lr"],
                       weight_decay=cfg["weight_decay"],
                       grad_clip=cfg["grad_clip"],
                       warmup_fraction=cfg["warmup_fraction"],
                       dataset_augment=cfg["augment"],
                       k_solutions=cfg["k_solutions"], seed=cfg["seed"])
    lc = LossConfig(theta_elim=cfg["theta_elim"], tau_decide=cfg["tau_decide"])
    params, _ = train(mcfg, tcfg, lc, dataset,
                      metrics_path=str(out) + ".metrics.jsonl",
                      progress=not cfg["quiet"])
    mdl.save_checkpoint(out, mcfg, {k: v.astype(np.float32)
                                    for k, v in params.items()})
    _write_manifest(out, "train", cfg, [str(data)],
                    [str(out), str(out) + ".metrics.jsonl"])
    click.echo(f"saved checkpoint to {out}")


def _infer_config(cfg: dict, domain: str) -> InferConfig:
    return InferConfig(
        slots=cfg["slots"], chains=cfg["chains"], round_budget=cfg["budget"],
        theta_elim=cfg["theta_elim"], theta_cls_eval=cfg["theta_cls_eval"],
        tau_decide=cfg["tau_decide"], eval_dropout=cfg["eval_dropout"],
        per_step_augment=cfg["per_step_augment"],
        permute_digits=domain == SUDOKU,
        verify_solutions=not cfg["paper_protocol"], seed=cfg["seed"])


_infer_options = [
    click.option("--slots", type=int, default=8, show_default=True),
    click.option("--chains", type=int, default=64, show_default=True),
    click.option("--budget", type=int, default=1000, show_default=True),
    click.option("--theta-elim", type=float, default=0.1, show_default=True),
    click.option("--theta-cls-eval", type=float, default=0.6, show_default=True),
    click.option("--tau-decide", type=float, default=1.5, show_default=True),
    click.option("--eval-dropout", type=float, default=0.05, show_default=True),
    click.option("--per-step-augment/--no-per-step-augment", default=True),
    click.option("--paper-protocol", is_flag=True,
                 help="trust self-accepted solutions without oracle checks"),
    click.option("--seed", type=int, default=0, show_default=True),
]


def _with_infer_options(f):
    for opt in reversed(_infer_options):
        f = opt(f)
    return f


@main.command()
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--puzzles", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@_with_infer_options
@click.pass_context
def solve(ctx, checkpoint, puzzles, out, config_path, **flags):
    """Solve puzzles; verdicts go out as line-delimited JSON records."""
    cfg = _resolve(ctx, config_path, **flags)
    mcfg, params = mdl.load_checkpoint(checkpoint)
    instances = read_bundle(puzzles)
    icfg = _infer_config(cfg, instances[0].domain)
    verdicts = solve_parallel(params, mcfg, instances, icfg)
    with open(out, "w") as f:
        for v in verdicts:
            f.write(json.dumps({
                "id": v.puzzle_id, "outcome": v.outcome,
                "solution": v.solution_text, "rounds": v.rounds,
                "sequential_cost": v.sequential_cost,
                "wall_time": v.wall_time}) + "\n")
    _write_manifest(out, "solve", cfg, [str(checkpoint), str(puzzles)], [str(out)])
    solved = sum(v.outcome == "solved" for v in verdicts)
    click.echo(f"solved {solved}/{len(verdicts)}")


@main.command(name="eval")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--test", "test_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@_with_infer_options
@click.pass_context
def eval_cmd(ctx, checkpoint, test_path, out, config_path, **flags):
    """Evaluate a checkpoint: accuracy, soundness, and cost percentiles."""
    cfg = _resolve(ctx, config_path, **flags)
    mcfg, params = mdl.load_checkpoint(checkpoint)
    instances = read_bundle(test_path)
    icfg = _infer_config(cfg, instances[0].domain)
    report, verdicts = evaluate(params, mcfg, instances, icfg)
    with open(out, "w") as f:
        json.dump(report.as_dict(), f, indent=2)
    costs_path = str(out) + ".costs.csv"
    write_table(costs_path, [
        {"id": v.puzzle_id, "outcome": v.outcome, "rounds": v.rounds,
         "sequential_cost": v.sequential_cost} for v in verdicts])
    _write_manifest(out, "eval", cfg, [str(checkpoint), str(test_path)],
                    [str(out), costs_path])
    click.echo(f"accuracy {report.accuracy:.3f}  soundness {report.soundness:.3f}  "
               f"wrong {report.wrong}  abstained {report.abstained}")


@main.command()
@click.argument("suite", type=click.Choice(sorted(checks.SUITES)))
@click.option("--seed", type=int, default=None)
def check(suite, seed):
    """Run a property/oracle suite standalone; exit 0 iff it passes."""
    fn = checks.SUITES[suite]
    ok, summary = fn() if seed is None else fn(seed=seed)
    click.echo(f"{suite}: {'PASS' if ok else 'FAIL'} {summary}")
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
