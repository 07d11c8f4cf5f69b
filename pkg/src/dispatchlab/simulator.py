"""Episode simulator: order generation, matching execution, full-day runs.

Demand for a given (seed, phase, day, window) is drawn from its own RNG
stream, so runs with different dispatch policies see identical order
realizations under a shared seed (common random numbers).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .valuation import truncated_discounted_reward
from .world import (
    ConstraintViolation,
    DemandModel,
    DriverSlot,
    GridWorld,
    OrderRequest,
    State,
    TransitionTuple,
)

# A policy maps (drivers, orders, t) to per-driver assignments.
Assignment = Tuple[DriverSlot, Optional[OrderRequest]]
Policy = Callable[[List[DriverSlot], List[OrderRequest], int], List[Assignment]]


@dataclass
class DayMetrics:
    reward: float = 0.0
    orders_created: int = 0
    orders_answered: int = 0
    orders_completed: int = 0

    @property
    def answer_rate(self) -> float:
        if self.orders_created == 0:
            return 1.0
        return self.orders_answered / self.orders_created

    @property
    def completion_rate(self) -> float:
        if self.orders_answered == 0:
            return 1.0
        return self.orders_completed / self.orders_answered


class DriverPool:
    """Mutable fleet state: current cell and busy-until time per driver."""

    def __init__(self, driver_counts: np.ndarray):
        cells = np.repeat(np.arange(len(driver_counts)), driver_counts)
        self.cell = cells.astype(np.int64)
        self.busy_until = np.zeros(len(cells), dtype=np.int64)

    def idle_at(self, t: int) -> List[DriverSlot]:
        ids = np.nonzero(self.busy_until <= t)[0]
        return [DriverSlot(int(i), State(t, int(self.cell[i]))) for i in ids]

    def occupy(self, driver_id: int, until: int, cell: int) -> None:
        self.busy_until[driver_id] = until
        self.cell[driver_id] = cell


def window_rng(seed: int, phase: int, day: int, t: int, stream: int = 0) -> np.random.Generator:
    """Dedicated RNG stream per dispatch window (and sub-stream)."""
    return np.random.default_rng(np.random.SeedSequence((seed, phase, day, t, stream)))


def generate_window(
    model: DemandModel,
    world: GridWorld,
    t: int,
    rng: np.random.Generator,
    pool: Optional[DriverPool] = None,
) -> Tuple[List[OrderRequest], List[DriverSlot]]:
    """Draw this window's orders and list the idle drivers.

    Order counts are Poisson per cell; destinations follow the model's
    destination rows; revenue is distance-proportional with multiplicative
    noise; duration is the origin-destination travel time.
    """
    if not 0 <= t < world.horizon:
        raise ValueError(f"window index {t} outside [0, {world.horizon})")
    drivers = pool.idle_at(t) if pool is not None else []
    if model.scripted_orders is not None:
        return list(model.scripted_orders.get(t, [])), drivers
    counts = rng.poisson(model.rates[t])
    total = int(counts.sum())
    if total == 0:
        return [], drivers
    origins = np.repeat(np.arange(model.n_cells), counts)
    u = rng.random(total)
    dests = np.empty(total, dtype=np.int64)
    idx = 0
    for cell in np.nonzero(counts)[0]:
        c = int(counts[cell])
        dests[idx : idx + c] = np.searchsorted(
            model._dest_cdf[cell], u[idx : idx + c], side="right"
        )
        idx += c
    dests = np.minimum(dests, model.n_cells - 1)
    durations = world.travel_time[origins, dests]
    noise = rng.uniform(1.0 - model.revenue_noise, 1.0 + model.revenue_noise, total)
    revenues = (model.base_fare[origins] + model.price_per_step[origins] * durations) * noise
    return [
        OrderRequest(int(o), int(d), float(r), int(dt), t)
        for o, d, r, dt in zip(origins, dests, revenues, durations)
    ], drivers


def apply_matching(
    assignments: Sequence[Assignment],
    t: int,
    gamma: float,
    world: GridWorld,
) -> List[TransitionTuple]:
    """Turn one window's assignments into transition tuples.

    Serve tuples cover pickup plus trip with the truncated, pickup-delayed
    installment reward; idle tuples advance one window in place. Duplicate
    drivers or duplicate orders are rejected.
    """
    T = world.horizon
    seen_drivers = set()
    seen_orders = set()
    out = []
    for driver, order in assignments:
        if driver.driver_id in seen_drivers:
            raise ConstraintViolation(f"driver {driver.driver_id} assigned twice")
        seen_drivers.add(driver.driver_id)
        start = driver.state
        if order is None:
            out.append(TransitionTuple(start, None, 0.0, State(t + 1, start.cell), 1))
            continue
        if id(order) in seen_orders:
            raise ConstraintViolation("order assigned to two drivers")
        seen_orders.add(id(order))
        pickup = world.pickup_time(start.cell, order.origin)
        duration = pickup + order.duration
        finish_t = min(t + duration, T)
        reward = gamma**pickup * truncated_discounted_reward(
            order.revenue, order.duration, gamma, T - (t + pickup)
        )
        out.append(
            TransitionTuple(start, order, reward, State(finish_t, order.destination), duration)
        )
    return out


def run_day(
    world: GridWorld,
    model: DemandModel,
    policy: Policy,
    gamma: float,
    seed: int,
    phase: int = 0,
    day: int = 0,
) -> Tuple[List[TransitionTuple], DayMetrics]:
    """Simulate one full day of dispatch windows.

    Accepted orders may be cancelled before completion with probability
    cancellation * pickup_wait (clamped to [0, 1]); a cancelled order leaves
    its driver idling for the window and earns nothing, but still counts as
    answered.
    """
    pool = DriverPool(model.driver_counts)
    metrics = DayMetrics()
    tuples: List[TransitionTuple] = []
    for t in range(world.horizon):
        rng = window_rng(seed, phase, day, t)
        orders, drivers = generate_window(model, world, t, rng, pool)
        metrics.orders_created += len(orders)
        if not drivers:
            continue
        assignments = policy(drivers, orders, t)
        cancel_u = window_rng(seed, phase, day, t, stream=1).random(max(1, len(orders)))
        order_ids = {id(o): k for k, o in enumerate(orders)}
        executed: List[Assignment] = []
        for driver, order in assignments:
            if order is None:
                executed.append((driver, None))
                continue
            metrics.orders_answered += 1
            pickup = world.pickup_time(driver.state.cell, order.origin)
            p_complete = min(1.0, max(0.0, 1.0 - model.cancellation * pickup))
            if cancel_u[order_ids[id(order)]] < p_complete:
                metrics.orders_completed += 1
                executed.append((driver, order))
            else:
                executed.append((driver, None))
        new_tuples = apply_matching(executed, t, gamma, world)
        for (driver, _), tr in zip(executed, new_tuples):
            if not tr.is_idle:
                metrics.reward += tr.reward_discounted
            pool.occupy(driver.driver_id, tr.finish.t, tr.finish.cell)
        tuples.extend(new_tuples)
    return tuples, metrics
