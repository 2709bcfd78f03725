"""Random-policy trajectory collection, storage, and the three pair samplers."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_HEADER = "MADDATA 1"


class DatasetFormatError(ValueError):
    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.lineno = lineno


@dataclass
class Trajectory:
    observations: np.ndarray  # [n, obs_dim]
    latent: np.ndarray  # [n] latent state ids, evaluation only

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float64)
        self.latent = np.asarray(self.latent, dtype=np.int64)
        if self.observations.ndim != 2 or len(self.observations) < 2:
            raise ValueError("a trajectory needs at least two observations")
        if len(self.latent) != len(self.observations):
            raise ValueError("latent ids and observations differ in length")

    def __len__(self):
        return len(self.observations)


@dataclass
class PairBatch:
    """Index pairs into ``TrajectoryDataset.observations``.

    ``gap`` is ``j - i`` for on-trajectory pairs and ``None`` for random pairs.
    ``successor`` (TD batches only) indexes the state right after the anchor.
    """

    anchor: np.ndarray
    partner: np.ndarray
    gap: np.ndarray | None = None
    successor: np.ndarray | None = None

    def __len__(self):
        return len(self.anchor)


@dataclass
class TrajectoryDataset:
    env_name: str
    obs_dim: int
    seed: int
    trajectories: list = field(default_factory=list)

    def __post_init__(self):
        for t in self.trajectories:
            if t.observations.shape[1] != self.obs_dim:
                raise ValueError("observation dimension differs between trajectories")
        lengths = np.array([len(t) for t in self.trajectories], dtype=np.int64)
        self.lengths = lengths
        self.offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        if self.trajectories:
            self.observations = np.concatenate([t.observations for t in self.trajectories])
            self.latent = np.concatenate([t.latent for t in self.trajectories])
        else:
            self.observations = np.zeros((0, self.obs_dim))
            self.latent = np.zeros(0, dtype=np.int64)
        # S_D: distinct observations; pool_index holds one flat index per distinct state
        if len(self.observations):
            _, first, inverse = np.unique(
                self.observations, axis=0, return_index=True, return_inverse=True
            )
            self.pool_index = np.sort(first)
            order = np.argsort(first)
            rank = np.empty_like(order)
            rank[order] = np.arange(len(order))
            self.unique_id = rank[np.asarray(inverse).ravel()]
        else:
            self.pool_index = np.zeros(0, dtype=np.int64)
            self.unique_id = np.zeros(0, dtype=np.int64)
        self._constraint_cache = {}

    def __len__(self):
        return len(self.trajectories)

    @property
    def n_states(self):
        return len(self.observations)

    @property
    def pool(self):
        return self.observations[self.pool_index]

    def __eq__(self, other):
        if not isinstance(other, TrajectoryDataset):
            return NotImplemented
        return (
            self.env_name == other.env_name
            and self.obs_dim == other.obs_dim
            and self.seed == other.seed
            and len(self) == len(other)
            and np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.observations, other.observations)
            and np.array_equal(self.latent, other.latent)
        )

    # -- samplers --------------------------------------------------------

    def _check_nonempty(self):
        if not self.trajectories:
            raise ValueError("cannot sample from an empty dataset")

    def sample_objective_pairs(self, batch, rng, with_successor=False):
        """Uniform trajectory, then a uniform index pair ``i < j`` on it."""
        self._check_nonempty()
        t = rng.integers(len(self.trajectories), size=batch)
        n = self.lengths[t]
        a = (rng.random(batch) * n).astype(np.int64)
        b = (rng.random(batch) * (n - 1)).astype(np.int64)
        b += b >= a
        i, j = np.minimum(a, b), np.maximum(a, b)
        base = self.offsets[t]
        out = PairBatch(base + i, base + j, j - i)
        if with_successor:
            out.successor = base + i + 1
        return out

    def constraint_pairs(self, horizon):
        """All on-trajectory pairs with ``1 <= j - i <= horizon`` as (anchor, gap)."""
        if horizon not in self._constraint_cache:
            anchors, gaps = [], []
            for start, n in zip(self.offsets[:-1], self.lengths):
                for g in range(1, min(horizon, n - 1) + 1):
                    anchors.append(np.arange(start, start + n - g))
                    gaps.append(np.full(n - g, g))
            if anchors:
                pair = (np.concatenate(anchors), np.concatenate(gaps))
            else:
                pair = (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
            self._constraint_cache[horizon] = pair
        return self._constraint_cache[horizon]

    def sample_constraint_pairs(self, horizon, batch, rng):
        """Uniform over the dataset's pairs with index gap between 1 and ``horizon``."""
        if horizon < 1:
            raise ValueError("horizon must be at least 1")
        self._check_nonempty()
        anchors, gaps = self.constraint_pairs(horizon)
        k = rng.integers(len(anchors), size=batch)
        return PairBatch(anchors[k], anchors[k] + gaps[k], gaps[k])

    def sample_random_state_pairs(self, batch, rng):
        """Both ends independent and uniform over the distinct-state pool."""
        self._check_nonempty()
        k = rng.integers(len(self.pool_index), size=(2, batch))
        return PairBatch(self.pool_index[k[0]], self.pool_index[k[1]])

    def sample_td_random_pairs(self, batch, rng):
        """``(s_i, s_{i+1}, s_r)``: a non-final anchor, its successor, a pool state."""
        self._check_nonempty()
        t = rng.integers(len(self.trajectories), size=batch)
        i = (rng.random(batch) * (self.lengths[t] - 1)).astype(np.int64)
        anchor = self.offsets[t] + i
        r = self.pool_index[rng.integers(len(self.pool_index), size=batch)]
        return PairBatch(anchor, r, None, anchor + 1)

    # -- storage ---------------------------------------------------------

    def save(self, path):
        save(self, path)


def collect(env, n_trajectories, max_len, seed):
    """Roll out a uniform random policy; trajectory ``k`` uses rng stream ``(seed, k)``."""
    if max_len < 2:
        raise ValueError("max_len must be at least 2")
    trajectories = []
    for k in range(n_trajectories):
        rng = np.random.default_rng([seed, k])
        state = env.initial_state(rng)
        states = [state]
        for _ in range(max_len - 1):
            state = env.step(state, env.sample_action(rng), rng)
            states.append(state)
        states = np.array(states)
        obs = env.observe(states, rng)
        trajectories.append(Trajectory(obs, env.latent_id(states)))
    return TrajectoryDataset(env.name, int(env.obs_dim), int(seed), trajectories)


def save(dataset, path):
    """Line-oriented text; floats written with ``repr`` so they round-trip exactly."""
    lines = [
        FORMAT_HEADER,
        f"env {dataset.env_name}",
        f"obs_dim {dataset.obs_dim}",
        f"seed {dataset.seed}",
        f"trajectories {len(dataset)}",
    ]
    for k, t in enumerate(dataset.trajectories):
        lines.append(f"trajectory {k} {len(t)}")
        for lat, row in zip(t.latent, t.observations):
            lines.append(" ".join([str(int(lat))] + [repr(float(v)) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n")


def load(path):
    path = Path(path)
    lines = path.read_text().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    pos = 0

    def next_line():
        nonlocal pos
        if pos >= len(lines):
            raise DatasetFormatError(path, pos + 1, "unexpected end of file")
        pos += 1
        return lines[pos - 1]

    def keyed(key, cast):
        line = next_line()
        parts = line.split(" ", 1)
        if len(parts) != 2 or parts[0] != key:
            raise DatasetFormatError(path, pos, f"expected '{key} <value>', got {line!r}")
        try:
            return cast(parts[1])
        except ValueError as exc:
            raise DatasetFormatError(path, pos, f"bad {key} value {parts[1]!r}") from exc

    if next_line() != FORMAT_HEADER:
        raise DatasetFormatError(path, 1, f"missing '{FORMAT_HEADER}' header")
    env_name = keyed("env", str)
    obs_dim = keyed("obs_dim", int)
    seed = keyed("seed", int)
    count = keyed("trajectories", int)
    trajectories = []
    for k in range(count):
        line = next_line()
        parts = line.split()
        if len(parts) != 3 or parts[0] != "trajectory" or parts[1] != str(k):
            raise DatasetFormatError(path, pos, f"expected 'trajectory {k} <length>', got {line!r}")
        try:
            n = int(parts[2])
        except ValueError as exc:
            raise DatasetFormatError(path, pos, f"bad trajectory length {parts[2]!r}") from exc
        latent = np.empty(n, dtype=np.int64)
        obs = np.empty((n, obs_dim))
        for i in range(n):
            fields = next_line().split(" ")
            if len(fields) != obs_dim + 1:
                raise DatasetFormatError(
                    path, pos, f"expected {obs_dim + 1} fields, found {len(fields)}"
                )
            try:
                latent[i] = int(fields[0])
                obs[i] = [float(v) for v in fields[1:]]
            except ValueError as exc:
                raise DatasetFormatError(path, pos, f"unparsable record: {exc}") from exc
        try:
            trajectories.append(Trajectory(obs, latent))
        except ValueError as exc:
            raise DatasetFormatError(path, pos, str(exc)) from exc
    if pos != len(lines):
        raise DatasetFormatError(path, pos + 1, "trailing content after last trajectory")
    return TrajectoryDataset(env_name, obs_dim, seed, trajectories)
