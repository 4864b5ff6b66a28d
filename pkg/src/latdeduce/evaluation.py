"""Measurement protocol: accuracy/soundness reports and sweeps.

Accuracy counts oracle-verified solved puzzles; soundness additionally
credits abstentions, so a system that never returns a wrong answer is
100% sound regardless of solve rate.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .inference import InferConfig, SolveVerdict, solve_parallel
from .instances import ProblemInstance, generate_maze_instances, verify
from .losses import LossConfig
from .maze import MazeSpec
from .model import DeductionTransformer, ModelConfig
from .training import TrainConfig, train


@dataclass
class EvalReport:
    total: int
    correct: int
    wrong: int
    abstained: int
    sequential_costs: list[int]
    wall_clock_per_example: float
    wrong_answers: list[tuple[str, str]] = field(default_factory=list)
    verdicts: list[SolveVerdict] = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return self.correct / self.total

    @property
    def soundness(self) -> float:
        return (self.correct + self.abstained) / self.total

    @property
    def timeouts(self) -> int:
        """Abstentions are always budget exhaustions in this protocol."""
        return self.abstained

    @property
    def mean_batched_forwards(self) -> float:
        return float(np.mean([v.batched_forwards for v in self.verdicts])) if self.verdicts else 0.0


def evaluate(
    model: DeductionTransformer,
    test_set: list[ProblemInstance],
    cfg: InferConfig,
    keep_traces: bool = False,
) -> EvalReport:
    start = time.time()
    verdicts = solve_parallel(model, test_set, cfg, keep_traces=keep_traces)
    correct = wrong = abstained = 0
    costs: list[int] = []
    wrong_answers: list[tuple[str, str]] = []
    for inst, v in zip(test_set, verdicts):
        if v.outcome == "abstained":
            abstained += 1
            continue
        if verify(inst, v.solution):
            correct += 1
            costs.append(v.sequential_cost)
        else:
            wrong += 1
            wrong_answers.append((inst.instance_id, repr(v.solution.values.tolist())))
    return EvalReport(
        total=len(test_set),
        correct=correct,
        wrong=wrong,
        abstained=abstained,
        sequential_costs=costs,
        wall_clock_per_example=(time.time() - start) / max(len(test_set), 1),
        wrong_answers=wrong_answers,
        verdicts=verdicts,
    )


def _cost_percentiles(report: EvalReport, cfg: InferConfig) -> dict[str, float]:
    """Sequential-cost percentiles; unfinished puzzles are charged the
    worst case so weak models cannot look cheap by abstaining."""
    ceiling = cfg.chains * cfg.round_budget
    costs = list(report.sequential_costs) + [ceiling] * (report.total - report.correct)
    out = {}
    for p in (50, 75, 90, 95):
        out[f"p{p}"] = float(np.percentile(costs, p))
    return out


def compute_tradeoff_sweep(
    train_instances: list[ProblemInstance],
    test_instances: list[ProblemInstance],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    loss_cfg: LossConfig,
    infer_cfg: InferConfig,
    budgets: list[int],
    seeds: list[int],
    keep_traces: bool = False,
) -> tuple[list[dict], list[EvalReport]]:
    """Train from scratch at each step budget and record how search cost
    at inference shrinks with training compute."""
    rows, reports = [], []
    for budget in budgets:
        for seed in seeds:
            mcfg = replace(model_cfg, seed=seed)
            tcfg = replace(train_cfg, total_steps=budget, seed=seed)
            model = DeductionTransformer(mcfg)
            train(model, train_instances, tcfg, loss_cfg)
            report = evaluate(
                model, test_instances, replace(infer_cfg, seed=seed), keep_traces
            )
            row = {"budget": budget, "seed": seed, "solve_rate": report.accuracy,
                   "wrong": report.wrong}
            row.update(_cost_percentiles(report, infer_cfg))
            rows.append(row)
            reports.append(report)
    return rows, reports


def k_sweep(
    k_values: list[int],
    maze_spec: MazeSpec,
    seeds: list[int],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    loss_cfg: LossConfig,
    infer_cfg: InferConfig,
    train_count: int,
    test_instances: list[ProblemInstance],
    keep_traces: bool = False,
) -> tuple[list[dict], list[EvalReport]]:
    """Multi-solution supervision sweep: per K, train and evaluate.

    The seed controls both the generated training data and the
    optimizer, so runs at different K share nothing but the protocol.
    """
    rows, reports = [], []
    for k in k_values:
        for seed in seeds:
            rng = np.random.default_rng(seed)
            train_set = generate_maze_instances(maze_spec, train_count, rng, k=k)
            model = DeductionTransformer(replace(model_cfg, seed=seed))
            train(model, train_set, replace(train_cfg, seed=seed, k_solutions=k), loss_cfg)
            report = evaluate(model, test_instances, replace(infer_cfg, seed=seed), keep_traces)
            rows.append(
                {
                    "k": k,
                    "seed": seed,
                    "solve_rate": report.accuracy,
                    "wrong": report.wrong,
                    "mean_batched_forwards": report.mean_batched_forwards,
                }
            )
            reports.append(report)
    return rows, reports


def write_table(path, rows: list[dict]) -> None:
    """Comma-separated table with a header row."""
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
