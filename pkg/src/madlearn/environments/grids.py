"""Grid worlds with enumerable latent states and exact ground truth."""
from __future__ import annotations

from functools import cached_property

import numpy as np

from madlearn.environments.graphs import GroundTruthMAD, floyd_warshall

UP, DOWN, LEFT, RIGHT = range(4)
ACTION_NAMES = ("UP", "DOWN", "LEFT", "RIGHT")
MOVES = {UP: (0, -1), DOWN: (0, 1), LEFT: (-1, 0), RIGHT: (1, 0)}


class DiscreteEnvironment:
    """Finite MDP given by an outcome table ``table[state, action] -> state``.

    With ``slip > 0`` the chosen action is replaced by a uniformly random one
    with that probability, so the one-step support of every state is the set
    of all its table outcomes either way.

    ``coords`` holds one latent coordinate row per state; observations are
    built from it by ``obs_fn(coords, rng)``.
    """

    continuous = False

    def __init__(self, name, table, coords, start_states, obs_fn=None, slip=0.0, closed_form=None):
        self.name = name
        self.table = np.asarray(table, dtype=np.int64)
        self.coords = np.asarray(coords)
        self.start_states = np.atleast_1d(np.asarray(start_states, dtype=np.int64))
        self.slip = float(slip)
        self._obs_fn = obs_fn
        self._closed_form = closed_form
        self.index = {tuple(int(v) for v in c): i for i, c in enumerate(self.coords)}

    def __repr__(self):
        return f"<{type(self).__name__} {self.name}: {self.n_states} states>"

    @property
    def n_states(self):
        return self.table.shape[0]

    @property
    def n_actions(self):
        return self.table.shape[1]

    @property
    def action_set(self):
        return np.arange(self.n_actions)

    @property
    def obs_dim(self):
        return self.observe(np.zeros(1, dtype=np.int64), np.random.default_rng(0)).shape[1]

    @property
    def noisy(self):
        return self._obs_fn is not None and getattr(self._obs_fn, "noisy", False)

    def state_id(self, *coord):
        return self.index[tuple(coord)]

    def initial_state(self, rng):
        return int(self.start_states[rng.integers(len(self.start_states))])

    def sample_action(self, rng):
        return int(rng.integers(self.n_actions))

    def step(self, state, action, rng):
        if self.slip and rng.random() < self.slip:
            action = int(rng.integers(self.n_actions))
        return int(self.table[state, action])

    def step_batch(self, states, actions, rng):
        states = np.asarray(states, dtype=np.int64)
        actions = np.asarray(actions, dtype=np.int64).copy()
        if self.slip:
            slipped = rng.random(states.shape) < self.slip
            actions[slipped] = rng.integers(self.n_actions, size=int(slipped.sum()))
        return self.table[states, actions]

    def observe(self, states, rng=None):
        states = np.asarray(states, dtype=np.int64)
        single = states.ndim == 0
        c = self.coords[np.atleast_1d(states)].astype(np.float64)
        obs = c if self._obs_fn is None else self._obs_fn(c, rng)
        return obs[0] if single else obs

    def latent_id(self, states):
        return np.asarray(states, dtype=np.int64)

    def reached(self, state, goal):
        return int(state) == int(goal)

    def successors(self, state):
        return sorted(set(int(t) for t in self.table[state]))

    def relation(self):
        """Determinised one-step relation as a boolean adjacency matrix."""
        adj = np.zeros((self.n_states, self.n_states), dtype=bool)
        rows = np.repeat(np.arange(self.n_states), self.n_actions)
        adj[rows, self.table.ravel()] = True
        return adj

    @cached_property
    def ground_truth(self):
        if self._closed_form is not None:
            return GroundTruthMAD(self._closed_form(self.coords))
        return floyd_warshall(self.relation())


def _reachable(table, starts):
    seen = set(int(s) for s in starts)
    frontier = list(seen)
    while frontier:
        s = frontier.pop()
        for t in table[s]:
            t = int(t)
            if t not in seen:
                seen.add(t)
                frontier.append(t)
    return sorted(seen)


def _restrict(table, coords, keep, starts):
    remap = -np.ones(len(coords), dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    return remap[table[keep]], coords[keep], remap[np.asarray(starts)]


def cliffwalking():
    """4 x 12 CliffWalking; stepping into the cliff returns the agent to the start.

    Coordinates are ``(x, y)`` with ``y = 3`` the bottom row. Start ``(0, 3)``,
    goal ``(11, 3)``, cliff ``(1..10, 3)``. Cliff cells are not states and
    the goal does not end anything: it is an ordinary cell.
    """
    width, height = 12, 4
    start = (0, height - 1)
    cliff = {(x, height - 1) for x in range(1, width - 1)}
    cells = [(x, y) for y in range(height) for x in range(width) if (x, y) not in cliff]
    index = {c: i for i, c in enumerate(cells)}
    table = np.zeros((len(cells), 4), dtype=np.int64)
    for (x, y), i in index.items():
        for a, (dx, dy) in MOVES.items():
            nx = min(max(x + dx, 0), width - 1)
            ny = min(max(y + dy, 0), height - 1)
            table[i, a] = index[start] if (nx, ny) in cliff else index[(nx, ny)]
    env = DiscreteEnvironment("cliffwalking", table, np.array(cells), [index[start]])
    env.start = index[start]
    env.goal = index[(width - 1, height - 1)]
    return env


KEYDOOR_SIZE = 13
KEYDOOR_WALL_X = 6
KEYDOOR_DOOR = (6, 6)
KEYDOOR_KEY = (3, 3)
KEYDOOR_START = (1, 1)


def keydoor_gridworld():
    """13 x 13 grid split by a wall at x = 6 with one door at (6, 6).

    State ``(x, y, k)``. The key at (3, 3) is picked up on entry and never
    dropped; the door cell can be entered only with the key. The state set is
    everything reachable from the start (1, 1, 0).
    """
    n = KEYDOOR_SIZE
    walls = {(KEYDOOR_WALL_X, y) for y in range(n)} - {KEYDOOR_DOOR}
    all_coords = [(x, y, k) for k in (0, 1) for y in range(n) for x in range(n)]
    index = {c: i for i, c in enumerate(all_coords)}
    table = np.zeros((len(all_coords), 4), dtype=np.int64)
    for (x, y, k), i in index.items():
        for a, (dx, dy) in MOVES.items():
            nx = min(max(x + dx, 0), n - 1)
            ny = min(max(y + dy, 0), n - 1)
            if (nx, ny) in walls or ((nx, ny) == KEYDOOR_DOOR and k == 0):
                nx, ny = x, y
            nk = 1 if (nx, ny) == KEYDOOR_KEY else k
            table[i, a] = index[(nx, ny, nk)]
    start = index[(*KEYDOOR_START, 0)]
    keep = np.array(_reachable(table, [start]))
    table, coords, starts = _restrict(table, np.array(all_coords), keep, [start])
    env = DiscreteEnvironment("keydoor", table, coords, starts)
    env.start = int(starts[0])
    return env


class GaussianNoise:
    """Appends two N(0, sigma^2) noise channels to the latent coordinates."""

    noisy = True

    def __init__(self, sigma, n_channels=2):
        self.sigma = float(sigma)
        self.n_channels = n_channels

    def __call__(self, coords, rng):
        if rng is None:
            raise ValueError("noisy observations need an rng")
        noise = rng.normal(0.0, self.sigma, size=(coords.shape[0], self.n_channels))
        return np.concatenate([coords, noise], axis=1)


def _manhattan(coords):
    c = coords.astype(np.int64)
    return np.abs(c[:, None, :] - c[None, :, :]).sum(axis=-1)


def noisy_gridworld(sigma=0.1, size=13):
    """13 x 13 grid; the chosen move is kept with probability 0.5, otherwise a
    uniformly random move is made. Observations are ``(x, y, n1, n2)``."""
    cells = [(x, y) for y in range(size) for x in range(size)]
    index = {c: i for i, c in enumerate(cells)}
    table = np.zeros((len(cells), 4), dtype=np.int64)
    for (x, y), i in index.items():
        for a, (dx, dy) in MOVES.items():
            table[i, a] = index[(min(max(x + dx, 0), size - 1), min(max(y + dy, 0), size - 1))]
    env = DiscreteEnvironment(
        "noisy_gridworld",
        table,
        np.array(cells),
        np.arange(len(cells)),
        obs_fn=GaussianNoise(sigma),
        slip=0.5,
        closed_form=_manhattan,
    )
    env.sigma = float(sigma)
    return env
