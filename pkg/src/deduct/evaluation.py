"""Metrics and experiment runners.

``evaluate`` runs the parallel solver over a test set and scores every
verdict against the exact domain oracle; the headline numbers are accuracy
(correct solves / total) and soundness ((correct + abstained) / total).
The sweep runners train fresh models per configuration to chart how the
training budget trades against inference search cost, and how the number
of sampled supervision solutions affects the solve rate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as mdl
from .inference import InferConfig, SolveVerdict, solve_parallel, verify_point
from .instances import ProblemInstance
from .training import LossConfig, TrainConfig, train


@dataclass
class EvalReport:
    total: int
    correct: int
    wrong: int
    abstained: int
    sequential_costs: list[int]
    batched_rounds: list[int]
    wall_times: list[float]
    wrong_answers: list[tuple[str, str]] = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return self.correct / self.total

    @property
    def soundness(self) -> float:
        return (self.correct + self.abstained) / self.total

    def as_dict(self) -> dict:
        return {"total": self.total, "correct": self.correct,
                "wrong": self.wrong, "abstained": self.abstained,
                "accuracy": self.accuracy, "soundness": self.soundness,
                "mean_wall_time": float(np.mean(self.wall_times)) if self.wall_times else 0.0,
                "mean_sequential_cost": float(np.mean(self.sequential_costs))
                if self.sequential_costs else None}


def score_verdicts(puzzles: list[ProblemInstance], verdicts: list[SolveVerdict]
                   ) -> EvalReport:
    correct = wrong = abstained = 0
    costs, rounds, walls, wrong_answers = [], [], [], []
    for inst, v in zip(puzzles, verdicts, strict=True):
        walls.append(v.wall_time)
        rounds.append(v.rounds)
        if v.outcome == "abstained":
            abstained += 1
            continue
        if verify_point(inst, v.solution):
            correct += 1
            costs.append(v.sequential_cost)
        else:
            wrong += 1
            wrong_answers.append((inst.instance_id, v.solution_text))
    return EvalReport(total=len(puzzles), correct=correct, wrong=wrong,
                      abstained=abstained, sequential_costs=costs,
                      batched_rounds=rounds, wall_times=walls,
                      wrong_answers=wrong_answers)


def evaluate(params, mcfg: mdl.ModelConfig, puzzles: list[ProblemInstance],
             icfg: InferConfig, record_traces: bool = False,
             progress: bool = False) -> tuple[EvalReport, list[SolveVerdict]]:
    verdicts = solve_parallel(params, mcfg, puzzles, icfg,
                              record_traces=record_traces, progress=progress)
    return score_verdicts(puzzles, verdicts), verdicts


def cost_percentiles(costs, qs=(50, 75, 90, 95)) -> dict[str, float]:
    if not costs:
        return {f"p{q}": float("nan") for q in qs}
    return {f"p{q}": float(np.percentile(costs, q)) for q in qs}


def compute_tradeoff_sweep(mcfg: mdl.ModelConfig, tcfg: TrainConfig,
                           lc: LossConfig, icfg: InferConfig,
                           train_set: list[ProblemInstance],
                           test_set: list[ProblemInstance],
                           budgets: list[int], seeds: list[int],
                           progress: bool = False) -> list[dict]:
    """Train fresh models per (budget, seed) and record the inference
    sequential-cost percentiles on the shared test set."""
    rows = []
    for budget in budgets:
        for seed in seeds:
            t = replace(tcfg, total_steps=budget, seed=seed)
            m = replace(mcfg, seed=seed)
            if progress:
                print(f"[sweep] budget={budget} seed={seed}", flush=True)
            params, _ = train(m, t, lc, train_set, progress=progress)
            report, _ = evaluate(params, m, test_set,
                                 replace(icfg, seed=seed))
            # abstentions charge the full budget so a weak model cannot
            # look cheap by timing out
            costs = list(report.sequential_costs)
            costs += [icfg.round_budget * icfg.chains] * report.abstained
            rows.append({"budget": budget, "seed": seed,
                         "solve_rate": report.accuracy,
                         "wrong": report.wrong,
                         **cost_percentiles(costs)})
    return rows


def k_sweep(mcfg: mdl.ModelConfig, tcfg: TrainConfig, lc: LossConfig,
            icfg: InferConfig, make_train_set, test_set: list[ProblemInstance],
            k_values: list[int], seeds: list[int],
            progress: bool = False) -> list[dict]:
    """Per supervision sample budget K, train and evaluate across seeds.

    ``make_train_set(k, seed)`` builds the training set; the data is
    regenerated per seed so the seed controls both data and optimizer.
    """
    rows = []
    for k in k_values:
        for seed in seeds:
            t = replace(tcfg, k_solutions=k, seed=seed)
            m = replace(mcfg, seed=seed)
            if progress:
                print(f"[k-sweep] K={k} seed={seed}", flush=True)
            params, _ = train(m, t, lc, make_train_set(k, seed), progress=progress)
            report, _ = evaluate(params, m, test_set, replace(icfg, seed=seed))
            rows.append({"k": k, "seed": seed,
                         "solve_rate": report.accuracy,
                         "wrong": report.wrong,
                         "mean_batched_rounds": float(np.mean(report.batched_rounds))})
    return rows


def write_table(path, rows: list[dict]) -> None:
    """Comma-separated table with a header row."""
    if not rows:
        open(path, "w").close()
        return
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)
