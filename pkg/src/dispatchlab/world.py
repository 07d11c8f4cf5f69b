"""Grid world, orders, drivers, and transition records for the dispatch SMDP.

Cells are opaque indices; geometry only enters through the travel-time table.
A day is a finite horizon of T dispatch windows, so driver states live on the
(time, cell) lattice with time running from 0 to T inclusive.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class ConstraintViolation(ValueError):
    """An assignment or configuration breaks a hard exclusivity/validity rule."""


@dataclass(frozen=True, order=True)
class State:
    """Temporal-spatial driver state: window index and cell index."""

    t: int
    cell: int


class GridWorld:
    """Cell set plus travel times and the day horizon.

    travel_time[i, j] is the number of windows a trip from cell i to cell j
    occupies; it must be a positive integer for every pair (including i == j,
    where it is the in-cell trip time). Pickup of a driver already in the
    order's origin cell takes 0 windows.
    """

    def __init__(
        self,
        n_cells: int,
        horizon: int,
        travel_time: np.ndarray,
        cell_tags: Optional[Sequence[str]] = None,
    ):
        if n_cells < 2:
            raise ValueError(f"n_cells must be >= 2, got {n_cells}")
        if horizon < 2:
            raise ValueError(f"horizon must be >= 2, got {horizon}")
        tt = np.asarray(travel_time)
        if tt.shape != (n_cells, n_cells):
            raise ValueError(f"travel_time shape {tt.shape} != ({n_cells}, {n_cells})")
        if not np.all(np.isfinite(tt)):
            raise ValueError("travel_time must be finite for all pairs")
        if np.any(tt < 1):
            raise ValueError("travel_time must be >= 1 for all pairs")
        self.n_cells = n_cells
        self.horizon = horizon
        self.travel_time = tt.astype(np.int64)
        self.cell_tags = list(cell_tags) if cell_tags is not None else None

    def pickup_time(self, from_cell: int, to_cell: int) -> int:
        """Windows needed to reach an order's origin; zero within the same cell."""
        if from_cell == to_cell:
            return 0
        return int(self.travel_time[from_cell, to_cell])

    @property
    def pickup_matrix(self) -> np.ndarray:
        """travel_time with a zero diagonal, for vectorized pickup lookups."""
        m = self.travel_time.copy()
        np.fill_diagonal(m, 0)
        return m

    @classmethod
    def lattice(cls, rows: int, cols: int, horizon: int, steps_per_cell: int = 1):
        """Build an L1-distance lattice world; in-cell trips take one window."""
        n = rows * cols
        r = np.arange(n) // cols
        c = np.arange(n) % cols
        dist = np.abs(r[:, None] - r[None, :]) + np.abs(c[:, None] - c[None, :])
        tt = np.maximum(1, dist * steps_per_cell)
        return cls(n, horizon, tt)


@dataclass(frozen=True)
class OrderRequest:
    origin: int
    destination: int
    revenue: float
    duration: int
    created_at: int

    def __post_init__(self):
        if self.duration < 1:
            raise ValueError(f"order duration must be >= 1, got {self.duration}")
        if self.revenue < 0:
            raise ValueError(f"order revenue must be >= 0, got {self.revenue}")


@dataclass(frozen=True)
class DriverSlot:
    """One idle driver offered to the matcher at a dispatch window."""

    driver_id: int
    state: State


@dataclass(frozen=True)
class TransitionTuple:
    """One driver decision: serve an order or idle for a window.

    Idle: finish = (start.t + 1, start.cell), reward 0, duration 1.
    Serve: duration covers pickup plus trip; finish time is truncated at the
    horizon and the reward is the truncated discounted installment sum.
    """

    start: State
    order: Optional[OrderRequest]
    reward_discounted: float
    finish: State
    duration: int

    @property
    def is_idle(self) -> bool:
        return self.order is None


@dataclass
class DemandModel:
    """Synthetic per-window demand and supply for one environment.

    rates has shape (T, N): Poisson order intensity per (window, cell).
    destination is a row-stochastic (N, N) matrix of trip destinations.
    Revenue is base_fare[origin] + price_per_step[origin] * trip duration,
    jittered by a uniform multiplicative factor in
    [1 - revenue_noise, 1 + revenue_noise].
    driver_counts seeds the initial idle fleet per cell.
    cancellation is the per-pickup-window probability increment that an
    accepted order is cancelled before completion.
    scripted_orders, when set, overrides sampling for listed windows (used by
    deterministic micro-scenarios in tests).
    """

    rates: np.ndarray
    destination: np.ndarray
    price_per_step: np.ndarray
    base_fare: np.ndarray
    revenue_noise: float
    driver_counts: np.ndarray
    cancellation: float = 0.0
    scripted_orders: Optional[dict] = None
    _dest_cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=float)
        self.destination = np.asarray(self.destination, dtype=float)
        self.price_per_step = np.asarray(self.price_per_step, dtype=float)
        self.base_fare = np.asarray(self.base_fare, dtype=float)
        self.driver_counts = np.asarray(self.driver_counts, dtype=np.int64)
        if self.rates.ndim != 2:
            raise ValueError("rates must have shape (T, N)")
        n = self.rates.shape[1]
        if self.destination.shape != (n, n):
            raise ValueError(f"destination shape {self.destination.shape} != ({n}, {n})")
        if np.any(self.rates < 0):
            raise ValueError("all demand rates must be >= 0")
        row_sums = self.destination.sum(axis=1)
        if np.any(np.abs(row_sums - 1.0) > 1e-9):
            raise ValueError("destination rows must sum to 1 within 1e-9")
        if self.price_per_step.shape != (n,):
            raise ValueError("price_per_step must have shape (N,)")
        if self.base_fare.shape != (n,):
            raise ValueError("base_fare must have shape (N,)")
        if np.any(self.base_fare < 0) or np.any(self.price_per_step < 0):
            raise ValueError("revenue parameters must be >= 0")
        if self.driver_counts.shape != (n,):
            raise ValueError("driver_counts must have shape (N,)")
        if not 0.0 <= self.cancellation:
            raise ValueError("cancellation must be >= 0")
        self._dest_cdf = np.cumsum(self.destination, axis=1)

    @property
    def n_cells(self) -> int:
        return self.rates.shape[1]

    @property
    def horizon(self) -> int:
        return self.rates.shape[0]
