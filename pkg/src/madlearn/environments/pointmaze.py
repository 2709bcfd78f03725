"""A light point-mass maze: force-driven ball on an ASCII grid of 1 x 1 cells.

State is ``(x, y, vx, vy)``; cell ``(row, col)`` covers ``[col, col+1) x [row, row+1)``.
Per step with force ``a`` in ``[-1, 1]^2``::

    v <- clip(v + a * dt, -5, 5)
    p <- p + v * dt        (axis by axis; a move into a wall is cancelled
                            and that velocity component set to 0)
"""
from __future__ import annotations

from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from madlearn.environments.graphs import GroundTruthMAD, floyd_warshall

DT = 0.1
MAX_SPEED = 5.0
MAX_FORCE = 1.0
LAYOUTS = ("umaze", "medium")


def load_layout(layout):
    """Read a layout by name (shipped with the package) or from a file path."""
    if layout in LAYOUTS:
        text = resources.files("madlearn.environments").joinpath(f"layouts/{layout}.txt").read_text()
    else:
        text = Path(layout).read_text()
    rows = [line.rstrip("\n") for line in text.splitlines() if line.strip()]
    width = max(len(r) for r in rows)
    grid = np.array([list(r.ljust(width, "#")) for r in rows])
    bad = set(np.unique(grid)) - set("#.SG")
    if bad:
        raise ValueError(f"unexpected layout characters {sorted(bad)}")
    return grid


class PointMazeLite:
    continuous = True
    obs_dim = 4
    noisy = False

    def __init__(self, layout="umaze", resolution=1):
        self.layout = layout
        self.name = f"pointmaze_{layout}" if layout in LAYOUTS else "pointmaze"
        self.grid = load_layout(layout)
        self.free = self.grid != "#"
        self.resolution = int(resolution)
        self.height, self.width = self.free.shape
        r = self.resolution
        fine = np.repeat(np.repeat(self.free, r, axis=0), r, axis=1)
        self._sub_ids = -np.ones(fine.shape, dtype=np.int64)
        cells = np.argwhere(fine)
        self._sub_ids[cells[:, 0], cells[:, 1]] = np.arange(len(cells))
        self.subcells = cells  # (row, col) at the fine resolution
        self.start_cells = np.argwhere(self.grid == "S")
        self.goal_cells = np.argwhere(self.grid == "G")
        self.free_cells = np.argwhere(self.free)
        # discretised planning action set {-1, 0, 1}^2
        self.action_set = np.array([(ax, ay) for ax in (-1.0, 0.0, 1.0) for ay in (-1.0, 0.0, 1.0)])

    def __repr__(self):
        return f"<PointMazeLite {self.layout} {self.height}x{self.width}>"

    @property
    def n_states(self):
        return len(self.subcells)

    def is_free(self, x, y):
        x = np.asarray(x)
        y = np.asarray(y)
        col = np.floor(x).astype(np.int64)
        row = np.floor(y).astype(np.int64)
        inside = (row >= 0) & (row < self.height) & (col >= 0) & (col < self.width)
        out = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        out[inside] = self.free[row[inside], col[inside]]
        return out

    def _point_in(self, cells, rng, margin=0.0):
        cells = np.atleast_2d(cells)
        pick = cells[rng.integers(len(cells))]
        x, y = pick[1] + rng.uniform(margin, 1 - margin), pick[0] + rng.uniform(margin, 1 - margin)
        return np.array([x, y, 0.0, 0.0])

    def initial_state(self, rng):
        return self._point_in(self.free_cells, rng)

    def sample_start(self, rng):
        return self._point_in(self.start_cells, rng, margin=0.25)

    def sample_goal(self, rng):
        return self._point_in(self.goal_cells, rng, margin=0.25)

    def sample_action(self, rng):
        return rng.uniform(-MAX_FORCE, MAX_FORCE, size=2)

    def step_batch(self, states, actions, rng=None):
        s = np.array(states, dtype=np.float64, copy=True)
        single = s.ndim == 1
        s = np.atleast_2d(s)
        a = np.clip(np.atleast_2d(np.asarray(actions, dtype=np.float64)), -MAX_FORCE, MAX_FORCE)
        v = np.clip(s[:, 2:] + a * DT, -MAX_SPEED, MAX_SPEED)
        x, y = s[:, 0], s[:, 1]
        nx = x + v[:, 0] * DT
        ok = self.is_free(nx, y)
        x = np.where(ok, nx, x)
        v[:, 0] = np.where(ok, v[:, 0], 0.0)
        ny = y + v[:, 1] * DT
        ok = self.is_free(x, ny)
        y = np.where(ok, ny, y)
        v[:, 1] = np.where(ok, v[:, 1], 0.0)
        out = np.column_stack([x, y, v])
        return out[0] if single else out

    def step(self, state, action, rng=None):
        return self.step_batch(state, action, rng)

    def observe(self, states, rng=None):
        return np.array(states, dtype=np.float64, copy=True)

    def latent_id(self, states):
        """Index of the discretisation cell holding each position."""
        s = np.atleast_2d(np.asarray(states, dtype=np.float64))
        r = self.resolution
        col = np.clip(np.floor(s[:, 0] * r).astype(np.int64), 0, self.width * r - 1)
        row = np.clip(np.floor(s[:, 1] * r).astype(np.int64), 0, self.height * r - 1)
        ids = self._sub_ids[row, col]
        return ids[0] if np.asarray(states).ndim == 1 else ids

    def cell_sample(self, ids, rng):
        """Uniform positions (at rest) inside the given discretisation cells."""
        ids = np.asarray(ids)
        rc = self.subcells[ids]
        u = rng.uniform(size=(len(ids), 2))
        r = self.resolution
        x = (rc[:, 1] + u[:, 0]) / r
        y = (rc[:, 0] + u[:, 1]) / r
        return np.column_stack([x, y, np.zeros(len(ids)), np.zeros(len(ids))])

    def reached(self, state, goal, tolerance=0.5):
        return float(np.hypot(state[0] - goal[0], state[1] - goal[1])) <= tolerance

    def relation(self):
        """4-neighbour connectivity of free discretisation cells."""
        n = self.n_states
        adj = np.zeros((n, n), dtype=bool)
        ids = self._sub_ids
        for i, (row, col) in enumerate(self.subcells):
            adj[i, i] = True
            for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                rr, cc = row + dr, col + dc
                if 0 <= rr < ids.shape[0] and 0 <= cc < ids.shape[1] and ids[rr, cc] >= 0:
                    adj[i, ids[rr, cc]] = True
        return adj

    @cached_property
    def ground_truth(self):
        return floyd_warshall(self.relation())


def pointmaze_lite(layout="umaze", resolution=1):
    return PointMazeLite(layout, resolution)
