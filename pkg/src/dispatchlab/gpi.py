"""Day-loop orchestration: evaluate a value table, dispatch greedily, repeat.

Implements the five experiment policies. All of them dispatch with the exact
bipartite matcher; they differ only in where their Q-values come from.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .dispatch import advantage_transform, build_problem, greedy_scores, km_match
from .scenario import Scenario
from .simulator import Policy, run_day
from .transfer import ConcordanceSpec, OptimizerSettings, transfer_evaluate
from .valuation import TupleArrays, ValueTable, dp_evaluate
from .world import DemandModel, GridWorld

PHASE_SOURCE = 0
PHASE_TARGET = 1


class PolicyKind(enum.Enum):
    GREEDY = "greedy"
    SOURCE_ONLY = "source_only"
    TARGET_ONLY = "target_only"
    NAIVELY_COMBINE = "naively_combine"
    PATTERN_TRANSFER = "pattern_transfer"


@dataclass
class Buffer:
    """Per-day transition collections, split by originating environment."""

    source_days: List[TupleArrays] = field(default_factory=list)
    target_days: List[TupleArrays] = field(default_factory=list)

    def add_source_day(self, arr: TupleArrays) -> None:
        self.source_days.append(arr)

    def add_target_day(self, arr: TupleArrays) -> None:
        self.target_days.append(arr)

    def source_arrays(self) -> TupleArrays:
        return TupleArrays.concat(self.source_days)

    def target_arrays(self) -> TupleArrays:
        return TupleArrays.concat(self.target_days)

    def all_arrays(self) -> TupleArrays:
        return TupleArrays.concat(self.source_days + self.target_days)


def evaluate_policy_value(
    kind: PolicyKind,
    buffer: Buffer,
    v_src: Optional[ValueTable],
    spec: Optional[ConcordanceSpec],
    world: GridWorld,
    gamma: float,
    opt: Optional[OptimizerSettings] = None,
    prev: Optional[ValueTable] = None,
) -> ValueTable:
    """Learn the day's value table per policy variant.

    Target-fitting variants warm-start from the previous day's table; the
    source-only table depends on source data alone and is therefore frozen
    across days.
    """
    T, n = world.horizon, world.n_cells
    if kind is PolicyKind.GREEDY:
        return ValueTable.zeros(T, n, gamma)
    if kind is PolicyKind.SOURCE_ONLY:
        if not buffer.source_days:
            raise ValueError("source_only needs source data")
        return dp_evaluate(buffer.source_arrays(), world, gamma)
    if kind is PolicyKind.TARGET_ONLY:
        return dp_evaluate(buffer.target_arrays(), world, gamma, init=prev)
    if kind is PolicyKind.NAIVELY_COMBINE:
        if not buffer.source_days:
            raise ValueError("naively_combine needs source data")
        return dp_evaluate(buffer.all_arrays(), world, gamma)
    if kind is PolicyKind.PATTERN_TRANSFER:
        if v_src is None or spec is None:
            raise ValueError("pattern_transfer needs a source table and a concordance spec")
        return transfer_evaluate(
            buffer.target_arrays(), v_src, spec, world, gamma, opt=opt, init=prev
        )
    raise ValueError(f"unknown policy kind: {kind}")


def value_dispatch_policy(
    value: ValueTable, gamma: float, world: GridWorld, radius: Optional[int]
) -> Policy:
    """Collectively greedy dispatch w.r.t. a value table (advantage + exact matching)."""

    def policy(drivers, orders, t):
        problem = advantage_transform(
            build_problem(drivers, orders, value, gamma, world, radius)
        )
        result = km_match(problem)
        return [
            (drivers[l], orders[k] if k is not None else None)
            for l, k in enumerate(result.assignment)
        ]

    return policy


def myopic_policy(gamma: float, world: GridWorld, horizon: int, radius: Optional[int]) -> Policy:
    def policy(drivers, orders, t):
        result = km_match(greedy_scores(drivers, orders, gamma, world, horizon, radius))
        return [
            (drivers[l], orders[k] if k is not None else None)
            for l, k in enumerate(result.assignment)
        ]

    return policy


@dataclass
class SourceData:
    """Logged source-environment days plus the value table estimated from them."""

    days: List[TupleArrays]
    v_src: ValueTable
    pairs: List[Tuple[int, int]]


def prepare_source(scenario: Scenario, gamma: float, seed: int) -> SourceData:
    """Run the myopic policy in the source environment and fit its value table.

    The source value comes from a plain DP fit on the logged days, which keeps
    source preparation deterministic and shared across policies.
    """
    world = scenario.build_world()
    model = scenario.build_source_model()
    policy = myopic_policy(gamma, world, world.horizon, scenario.pickup_radius)
    days = []
    for day in range(scenario.source_days):
        tuples, _ = run_day(
            world, model, policy, gamma, scenario.seed + seed, phase=PHASE_SOURCE, day=day
        )
        days.append(TupleArrays.from_tuples(tuples))
    v_src = dp_evaluate(TupleArrays.concat(days), world, gamma)
    spec = scenario.concordance_spec(v_src)
    return SourceData(days=days, v_src=v_src, pairs=spec.pairs)


@dataclass
class DayRow:
    day: int
    reward: float
    answer_rate: float
    completion_rate: float
    orders_created: int
    orders_answered: int
    orders_completed: int


def run_experiment(
    scenario: Scenario,
    kind: PolicyKind,
    days: int,
    gamma: float,
    seed: int,
    lam: Optional[float] = None,
    opt: Optional[OptimizerSettings] = None,
    source: Optional[SourceData] = None,
) -> List[DayRow]:
    """GPI over `days` target days: evaluate, dispatch all day, absorb the data.

    Demand realizations depend only on (scenario seed, seed, day, window), so
    different policies run against identical order streams.
    """
    world = scenario.build_world()
    target_model = scenario.build_target_model()
    if source is None:
        source = prepare_source(scenario, gamma, seed)
    spec = ConcordanceSpec(
        pairs=source.pairs,
        lam=scenario.lam if lam is None else lam,
        margin=scenario.margin,
    )
    opt = opt or scenario.optimizer_settings()
    buffer = Buffer(source_days=list(source.days))
    radius = scenario.pickup_radius
    rows: List[DayRow] = []
    prev: Optional[ValueTable] = None
    for day in range(days):
        if kind is PolicyKind.SOURCE_ONLY and prev is not None:
            value = prev
        else:
            value = evaluate_policy_value(
                kind, buffer, source.v_src, spec, world, gamma, opt=opt, prev=prev
            )
        if kind is PolicyKind.GREEDY:
            policy = myopic_policy(gamma, world, world.horizon, radius)
        else:
            policy = value_dispatch_policy(value, gamma, world, radius)
        tuples, metrics = run_day(
            world, target_model, policy, gamma, scenario.seed + seed, phase=PHASE_TARGET, day=day
        )
        buffer.add_target_day(TupleArrays.from_tuples(tuples))
        rows.append(
            DayRow(
                day=day,
                reward=metrics.reward,
                answer_rate=metrics.answer_rate,
                completion_rate=metrics.completion_rate,
                orders_created=metrics.orders_created,
                orders_answered=metrics.orders_answered,
                orders_completed=metrics.orders_completed,
            )
        )
        prev = value
    return rows


@dataclass
class RepeatRow:
    iteration: int
    reward: float
    value_delta: float


def repeat_single_day(
    scenario: Scenario,
    kind: PolicyKind,
    repetitions: int,
    gamma: float,
    seed: int,
    lam: Optional[float] = None,
    opt: Optional[OptimizerSettings] = None,
    source: Optional[SourceData] = None,
) -> List[RepeatRow]:
    """Re-run one day's demand repeatedly, updating the value table between passes.

    value_delta is the sup-norm change of the table against the previous
    iteration's table.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    world = scenario.build_world()
    target_model = scenario.build_target_model()
    if source is None:
        source = prepare_source(scenario, gamma, seed)
    spec = ConcordanceSpec(
        pairs=source.pairs,
        lam=scenario.lam if lam is None else lam,
        margin=scenario.margin,
    )
    opt = opt or scenario.optimizer_settings()
    buffer = Buffer(source_days=list(source.days))
    radius = scenario.pickup_radius
    rows: List[RepeatRow] = []
    prev: Optional[ValueTable] = None
    for it in range(repetitions):
        if kind is PolicyKind.SOURCE_ONLY and prev is not None:
            value = prev
        else:
            value = evaluate_policy_value(
                kind, buffer, source.v_src, spec, world, gamma, opt=opt, prev=prev
            )
        if kind is PolicyKind.GREEDY:
            policy = myopic_policy(gamma, world, world.horizon, radius)
        else:
            policy = value_dispatch_policy(value, gamma, world, radius)
        tuples, metrics = run_day(
            world, target_model, policy, gamma, scenario.seed + seed, phase=PHASE_TARGET, day=0
        )
        buffer.add_target_day(TupleArrays.from_tuples(tuples))
        delta = (
            float(np.max(np.abs(value.values - prev.values))) if prev is not None else float("inf")
        )
        rows.append(RepeatRow(iteration=it, reward=metrics.reward, value_delta=delta))
        prev = value
    return rows
