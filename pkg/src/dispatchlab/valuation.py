"""Tabular state values: discounted rewards, DP backup, and TD least squares."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .world import DriverSlot, GridWorld, OrderRequest, TransitionTuple


def discounted_reward(revenue: float, duration: int, gamma: float) -> float:
    """Discounted sum of equal per-window revenue installments.

    The revenue is split into `duration` installments paid at offsets
    0 .. duration-1, so gamma = 1 recovers the full revenue.
    """
    if duration < 1:
        raise ValueError(f"duration must be >= 1, got {duration}")
    per_step = revenue / duration
    if gamma == 1.0:
        return per_step * duration
    return per_step * (1.0 - gamma**duration) / (1.0 - gamma)


def truncated_discounted_reward(
    revenue: float, duration: int, gamma: float, steps_allowed: int
) -> float:
    """As discounted_reward, but only installments inside the horizon count."""
    if duration < 1:
        raise ValueError(f"duration must be >= 1, got {duration}")
    paid = min(duration, max(0, steps_allowed))
    if paid == 0:
        return 0.0
    per_step = revenue / duration
    if gamma == 1.0:
        return per_step * paid
    return per_step * (1.0 - gamma**paid) / (1.0 - gamma)


@dataclass
class ValueTable:
    """Dense (T+1) x N table of state values for one policy/environment."""

    values: np.ndarray
    gamma: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("values must have shape (T+1, N)")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if np.any(self.values[-1] != 0.0):
            raise ValueError("terminal row values[T] must be identically zero")

    @property
    def horizon(self) -> int:
        return self.values.shape[0] - 1

    @property
    def n_cells(self) -> int:
        return self.values.shape[1]

    def get(self, t: int, cell: int) -> float:
        return float(self.values[t, cell])

    @classmethod
    def zeros(cls, horizon: int, n_cells: int, gamma: float) -> "ValueTable":
        return cls(np.zeros((horizon + 1, n_cells)), gamma)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="\n", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["t", "cell", "value"])
            for t in range(self.values.shape[0]):
                for i in range(self.values.shape[1]):
                    w.writerow([t, i, repr(float(self.values[t, i]))])

    @classmethod
    def load_csv(cls, path, gamma: float) -> "ValueTable":
        rows = []
        with open(path, newline="", encoding="utf-8") as f:
            r = csv.reader(f)
            header = next(r)
            if header != ["t", "cell", "value"]:
                raise ValueError(f"unexpected value-table header: {header}")
            rows = [(int(t), int(c), float(v)) for t, c, v in r]
        horizon = max(t for t, _, _ in rows)
        n = max(c for _, c, _ in rows) + 1
        values = np.zeros((horizon + 1, n))
        for t, c, v in rows:
            values[t, c] = v
        return cls(values, gamma)

    def save_binary(self, path) -> None:
        np.savez(path, values=self.values, gamma=np.float64(self.gamma))

    @classmethod
    def load_binary(cls, path) -> "ValueTable":
        with np.load(path) as data:
            return cls(data["values"], float(data["gamma"]))


class TupleIndex:
    """Buffer index: tuple ids by start state and by start time."""

    def __init__(self, tuples: Sequence[TransitionTuple]):
        self.by_state: dict = {}
        self.by_time: dict = {}
        for j, tr in enumerate(tuples):
            key = (tr.start.t, tr.start.cell)
            self.by_state.setdefault(key, []).append(j)
            self.by_time.setdefault(tr.start.t, []).append(j)


class TupleArrays:
    """Columnar view of a transition buffer, presorted by start time."""

    __slots__ = ("start_t", "start_cell", "finish_t", "finish_cell", "reward", "duration", "_bounds")

    def __init__(self, start_t, start_cell, finish_t, finish_cell, reward, duration):
        order = np.argsort(start_t, kind="stable")
        self.start_t = np.asarray(start_t, dtype=np.int64)[order]
        self.start_cell = np.asarray(start_cell, dtype=np.int64)[order]
        self.finish_t = np.asarray(finish_t, dtype=np.int64)[order]
        self.finish_cell = np.asarray(finish_cell, dtype=np.int64)[order]
        self.reward = np.asarray(reward, dtype=float)[order]
        self.duration = np.asarray(duration, dtype=np.int64)[order]
        self._bounds = None

    def __len__(self) -> int:
        return len(self.start_t)

    @classmethod
    def from_tuples(cls, tuples: Sequence[TransitionTuple]) -> "TupleArrays":
        n = len(tuples)
        start_t = np.empty(n, dtype=np.int64)
        start_cell = np.empty(n, dtype=np.int64)
        finish_t = np.empty(n, dtype=np.int64)
        finish_cell = np.empty(n, dtype=np.int64)
        reward = np.empty(n, dtype=float)
        duration = np.empty(n, dtype=np.int64)
        for j, tr in enumerate(tuples):
            start_t[j] = tr.start.t
            start_cell[j] = tr.start.cell
            finish_t[j] = tr.finish.t
            finish_cell[j] = tr.finish.cell
            reward[j] = tr.reward_discounted
            duration[j] = tr.duration
        return cls(start_t, start_cell, finish_t, finish_cell, reward, duration)

    @classmethod
    def concat(cls, parts: Iterable["TupleArrays"]) -> "TupleArrays":
        parts = list(parts)
        if not parts:
            return cls(*[np.empty(0)] * 6)
        return cls(
            np.concatenate([p.start_t for p in parts]),
            np.concatenate([p.start_cell for p in parts]),
            np.concatenate([p.finish_t for p in parts]),
            np.concatenate([p.finish_cell for p in parts]),
            np.concatenate([p.reward for p in parts]),
            np.concatenate([p.duration for p in parts]),
        )

    def slice_at(self, t: int) -> slice:
        """Index range of tuples whose start time is t."""
        if len(self) == 0:
            return slice(0, 0)
        if self._bounds is None:
            tmax = int(self.start_t[-1])
            self._bounds = np.searchsorted(self.start_t, np.arange(tmax + 2), side="left")
        b = self._bounds
        if t + 1 >= len(b):
            return slice(0, 0)
        return slice(int(b[t]), int(b[t + 1]))


BufferLike = Union[TupleArrays, Sequence[TransitionTuple]]


def as_arrays(buffer: BufferLike) -> TupleArrays:
    if isinstance(buffer, TupleArrays):
        return buffer
    return TupleArrays.from_tuples(buffer)


def dp_evaluate(
    buffer: BufferLike,
    world: GridWorld,
    gamma: float,
    init: Optional[ValueTable] = None,
) -> ValueTable:
    """Backward-induction value estimate: per-(t, cell) mean of backup targets.

    Cells with no tuples at a time step keep their initialization (zero, or
    the warm-start table when given).
    """
    arr = as_arrays(buffer)
    T, n = world.horizon, world.n_cells
    if init is not None:
        if init.values.shape != (T + 1, n):
            raise ValueError("init table shape does not match world")
        values = init.values.copy()
        values[T, :] = 0.0
    else:
        values = np.zeros((T + 1, n))
    if len(arr) and (np.any(arr.finish_t <= arr.start_t)):
        raise ValueError("all tuples must satisfy finish.t > start.t")
    for t in range(T - 1, -1, -1):
        sl = arr.slice_at(t)
        if sl.start == sl.stop:
            continue
        cells = arr.start_cell[sl]
        targets = (
            gamma ** arr.duration[sl].astype(float)
            * values[arr.finish_t[sl], arr.finish_cell[sl]]
            + arr.reward[sl]
        )
        counts = np.bincount(cells, minlength=n)
        sums = np.bincount(cells, weights=targets, minlength=n)
        covered = counts > 0
        values[t, covered] = sums[covered] / counts[covered]
    return ValueTable(values, gamma)


def td_evaluate(
    buffer: BufferLike,
    world: GridWorld,
    gamma: float,
    init: Optional[ValueTable] = None,
) -> ValueTable:
    """Least-squares TD estimate, solved per time step via a linear system.

    At each t the squared TD error over the slice is minimized with all
    later-time values already fixed; the design matrix is the one-hot cell
    encoding, solved with numpy's least-squares routine rather than the
    closed-form mean so this path stays independent of dp_evaluate.
    """
    arr = as_arrays(buffer)
    T, n = world.horizon, world.n_cells
    if init is not None:
        values = init.values.copy()
        values[T, :] = 0.0
    else:
        values = np.zeros((T + 1, n))
    for t in range(T - 1, -1, -1):
        sl = arr.slice_at(t)
        if sl.start == sl.stop:
            continue
        cells = arr.start_cell[sl]
        targets = (
            gamma ** arr.duration[sl].astype(float)
            * values[arr.finish_t[sl], arr.finish_cell[sl]]
            + arr.reward[sl]
        )
        design = np.zeros((len(cells), n))
        design[np.arange(len(cells)), cells] = 1.0
        sol, _, _, _ = np.linalg.lstsq(design, targets, rcond=None)
        covered = np.bincount(cells, minlength=n) > 0
        values[t, covered] = sol[covered]
    return ValueTable(values, gamma)


def q_value(
    value: ValueTable,
    driver: DriverSlot,
    order: Optional[OrderRequest],
    gamma: float,
    world: GridWorld,
) -> float:
    """Score of offering `order` to `driver` (or of leaving it idle).

    The null option is the driver's own state value. For an order, the
    discount exponent spans pickup plus trip, the continuation value is read
    at the (truncated) finish state, and the revenue installments are paid
    over the on-trip windows only, delayed by the pickup travel.
    """
    t = driver.state.t
    if order is None:
        return value.get(t, driver.state.cell)
    T = world.horizon
    pickup = world.pickup_time(driver.state.cell, order.origin)
    total = pickup + order.duration
    finish_t = min(t + total, T)
    r_k = gamma**pickup * truncated_discounted_reward(
        order.revenue, order.duration, gamma, T - (t + pickup)
    )
    return gamma**total * value.get(finish_t, order.destination) + r_k
