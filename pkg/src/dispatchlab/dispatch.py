"""Per-window collective matching of idle drivers to open orders.

Scores are long-term Q-values read from a value table (or instant rewards for
the myopic baseline); the assignment itself is solved exactly as a maximum
weight bipartite matching with a per-driver null option.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .valuation import ValueTable, truncated_discounted_reward
from .world import DriverSlot, GridWorld, OrderRequest

NEG_INF = -np.inf


@dataclass
class MatchProblem:
    """One window's driver x order score matrix.

    scores has shape (m, n + 1); column 0 is the null (stay idle) option.
    feasible mirrors that shape; column 0 is always feasible. row_offsets
    records per-row constants removed by advantage_transform so the original
    objective stays recoverable.
    """

    drivers: List[DriverSlot]
    orders: List[OrderRequest]
    scores: np.ndarray
    feasible: np.ndarray
    row_offsets: np.ndarray = field(default=None)

    def __post_init__(self):
        m, w = self.scores.shape
        if w != len(self.orders) + 1:
            raise ValueError("scores must have one column per order plus the null column")
        if m != len(self.drivers):
            raise ValueError("scores must have one row per driver")
        if self.feasible.shape != self.scores.shape:
            raise ValueError("feasibility mask shape must match scores")
        if not np.all(self.feasible[:, 0]):
            raise ValueError("the null option must always be feasible")
        if self.row_offsets is None:
            self.row_offsets = np.zeros(m)

    def to_json(self) -> str:
        return json.dumps(
            {
                "drivers": [
                    {"driver_id": d.driver_id, "t": d.state.t, "cell": d.state.cell}
                    for d in self.drivers
                ],
                "orders": [
                    {
                        "origin": o.origin,
                        "destination": o.destination,
                        "revenue": o.revenue,
                        "duration": o.duration,
                        "created_at": o.created_at,
                    }
                    for o in self.orders
                ],
                "scores": self.scores.tolist(),
                "feasible": self.feasible.tolist(),
                "row_offsets": self.row_offsets.tolist(),
            },
            indent=2,
        )


@dataclass
class MatchResult:
    """Chosen order index per driver (None = stay idle) and the total score."""

    assignment: List[Optional[int]]
    objective: float

    def to_json(self) -> str:
        return json.dumps({"assignment": self.assignment, "objective": self.objective})


def build_problem(
    drivers: Sequence[DriverSlot],
    orders: Sequence[OrderRequest],
    value: ValueTable,
    gamma: float,
    world: GridWorld,
    radius: Optional[int] = None,
) -> MatchProblem:
    """Score every driver-order pair with its Q-value; mask infeasible pairs.

    A pair is infeasible when the pickup travel exceeds the radius limit or
    when service could not start before the end of the day.
    """
    m, n = len(drivers), len(orders)
    T = value.horizon
    scores = np.zeros((m, n + 1))
    feasible = np.ones((m, n + 1), dtype=bool)
    if m == 0:
        return MatchProblem(list(drivers), list(orders), scores, feasible)
    driver_cells = np.array([d.state.cell for d in drivers], dtype=np.int64)
    driver_ts = np.array([d.state.t for d in drivers], dtype=np.int64)
    scores[:, 0] = value.values[driver_ts, driver_cells]
    if n == 0:
        return MatchProblem(list(drivers), list(orders), scores, feasible)

    origins = np.array([o.origin for o in orders], dtype=np.int64)
    dests = np.array([o.destination for o in orders], dtype=np.int64)
    durations = np.array([o.duration for o in orders], dtype=np.int64)
    revenues = np.array([o.revenue for o in orders])

    pickup = world.pickup_matrix[driver_cells[:, None], origins[None, :]]
    total = pickup + durations[None, :]
    finish_t = np.minimum(driver_ts[:, None] + total, T)

    # truncated installment sum, delayed by the pickup travel
    allowed = np.clip(T - (driver_ts[:, None] + pickup), 0, None)
    paid = np.minimum(durations[None, :], allowed)
    per_step = revenues / durations
    if gamma == 1.0:
        r = per_step[None, :] * paid
    else:
        r = (
            gamma**pickup.astype(float)
            * per_step[None, :]
            * (1.0 - gamma**paid.astype(float))
            / (1.0 - gamma)
        )
    scores[:, 1:] = gamma**total.astype(float) * value.values[finish_t, dests[None, :]] + r

    feasible[:, 1:] = driver_ts[:, None] + pickup < T
    if radius is not None:
        feasible[:, 1:] &= pickup <= radius
    return MatchProblem(list(drivers), list(orders), scores, feasible)


def greedy_scores(
    drivers: Sequence[DriverSlot],
    orders: Sequence[OrderRequest],
    gamma: float,
    world: GridWorld,
    horizon: int,
    radius: Optional[int] = None,
) -> MatchProblem:
    """Myopic problem: instant discounted order rewards only, null option worth 0."""
    zero = ValueTable.zeros(horizon, world.n_cells, gamma)
    return build_problem(drivers, orders, zero, gamma, world, radius)


def advantage_transform(p: MatchProblem) -> MatchProblem:
    """Subtract each row's null value from the whole row.

    The optimal assignment is unchanged; the subtracted constants are stored
    so the original objective can be recovered.
    """
    offsets = p.scores[:, 0].copy()
    return MatchProblem(
        p.drivers,
        p.orders,
        p.scores - offsets[:, None],
        p.feasible.copy(),
        row_offsets=p.row_offsets + offsets,
    )


def km_match(p: MatchProblem) -> MatchResult:
    """Exact maximum-score assignment with per-driver null options.

    The null column is expanded into per-driver diagonal entries so the
    rectangular problem is solved in one shot; masked pairs can never be
    selected.
    """
    m, n = len(p.drivers), len(p.orders)
    assignment: List[Optional[int]] = [None] * m
    if m == 0:
        return MatchResult(assignment, 0.0)
    cost = np.full((m, n + m), NEG_INF)
    order_scores = np.where(p.feasible[:, 1:], p.scores[:, 1:], NEG_INF)
    cost[:, :n] = order_scores
    cost[np.arange(m), n + np.arange(m)] = p.scores[:, 0]
    rows, cols = linear_sum_assignment(cost, maximize=True)
    for r, c in zip(rows, cols):
        assignment[r] = int(c) if c < n else None
    objective = 0.0
    for l in range(m):
        k = assignment[l]
        objective += p.scores[l, 0] if k is None else p.scores[l, k + 1]
    return MatchResult(assignment, objective)
