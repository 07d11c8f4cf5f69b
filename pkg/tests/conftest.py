import numpy as np
import pytest

from dispatchlab import GridWorld, OrderRequest, State, TransitionTuple

# Pass/fail lines recorded by the acceptance tests, echoed after the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def small_world():
    # 2 cells, adjacent, short day
    return GridWorld(2, 6, np.array([[1, 1], [1, 1]]))


def make_world(n_cells=4, horizon=8, travel=None):
    if travel is None:
        travel = np.ones((n_cells, n_cells), dtype=int)
    return GridWorld(n_cells, horizon, travel)


def random_buffer(rng, world, n_tuples, reward_scale=1.0):
    """Random but consistent transition tuples (finish.t > start.t, <= T)."""
    T, n = world.horizon, world.n_cells
    tuples = []
    for _ in range(n_tuples):
        t = int(rng.integers(0, T))
        cell = int(rng.integers(0, n))
        duration = int(rng.integers(1, 4))
        finish_t = min(t + duration, T)
        if rng.random() < 0.3:
            tuples.append(
                TransitionTuple(State(t, cell), None, 0.0, State(min(t + 1, T), cell), 1)
            )
        else:
            dest = int(rng.integers(0, n))
            order = OrderRequest(cell, dest, float(rng.random() * 10), duration, t)
            reward = float(rng.random() * reward_scale)
            tuples.append(
                TransitionTuple(State(t, cell), order, reward, State(finish_t, dest), duration)
            )
    return tuples


def grid_search_oracle(cells, targets, v_src, spec, lo, hi, res=1e-3):
    """Exhaustive 2-cell minimization of the penalized objective on a lattice."""
    axis = np.arange(lo, hi + res, res)
    pi, pj = spec.pair_arrays
    sign_src = np.sign(v_src[pj] - v_src[pi])
    t0 = targets[cells == 0]
    t1 = targets[cells == 1]
    best = np.inf
    for v0 in axis:
        q = np.sum((v0 - t0) ** 2) + np.sum((axis[:, None] - t1[None, :]) ** 2, axis=1)
        d = np.where(pj[0] == 1, axis - v0, v0 - axis)
        h = np.maximum(0.0, spec.margin - sign_src[0] * d) * (sign_src[0] != 0)
        obj = q + spec.lam * h
        m = obj.min()
        if m < best:
            best = m
    return best


def brute_force_match(problem):
    """Exhaustive search over feasible assignments; returns (objective, assignment)."""
    m, n = len(problem.drivers), len(problem.orders)
    best = [-np.inf, None]

    def recurse(l, used, chosen, total):
        if l == m:
            if total > best[0]:
                best[0] = total
                best[1] = list(chosen)
            return
        # null option
        chosen.append(None)
        recurse(l + 1, used, chosen, total + problem.scores[l, 0])
        chosen.pop()
        for k in range(n):
            if k in used or not problem.feasible[l, k + 1]:
                continue
            used.add(k)
            chosen.append(k)
            recurse(l + 1, used, chosen, total + problem.scores[l, k + 1])
            chosen.pop()
            used.remove(k)

    recurse(0, set(), [], 0.0)
    return best[0], best[1]
