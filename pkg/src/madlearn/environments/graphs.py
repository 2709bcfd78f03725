"""Exact minimum-action distances on finite transition graphs."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

#: sentinel for "unreachable"; metric code must filter it
INF = np.iinfo(np.int64).max


def as_adjacency(relation, n=None):
    """Normalise a one-step relation to a dense boolean matrix.

    ``relation`` may be an ``n x n`` boolean array, a list of successor
    lists, or an iterable of ``(s, s')`` pairs (then ``n`` is required).
    """
    if isinstance(relation, np.ndarray) and relation.ndim == 2:
        return relation.astype(bool)
    relation = list(relation)
    if n is None:
        n = len(relation)
        adj = np.zeros((n, n), dtype=bool)
        for s, succ in enumerate(relation):
            adj[s, list(succ)] = True
        return adj
    adj = np.zeros((n, n), dtype=bool)
    for s, t in relation:
        adj[s, t] = True
    return adj


@dataclass
class GroundTruthMAD:
    """All-pairs table of minimum action distances, ``INF`` where unreachable."""

    matrix: np.ndarray

    @property
    def n_states(self):
        return self.matrix.shape[0]

    def __call__(self, a, b):
        return self.matrix[np.asarray(a), np.asarray(b)]

    def finite_mask(self):
        return self.matrix != INF

    def as_float(self):
        out = self.matrix.astype(np.float64)
        out[self.matrix == INF] = np.inf
        return out

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["state_id_from", "state_id_to", "distance"])
            for i in range(self.n_states):
                for j in range(self.n_states):
                    v = self.matrix[i, j]
                    writer.writerow([i, j, "INF" if v == INF else int(v)])

    @classmethod
    def from_csv(cls, path):
        rows = list(csv.reader(Path(path).open()))
        body = rows[1:]
        n = int(round(len(body) ** 0.5))
        m = np.full((n, n), INF, dtype=np.int64)
        for i, j, v in body:
            m[int(i), int(j)] = INF if v == "INF" else int(v)
        return cls(m)


def floyd_warshall(relation, n=None):
    """Unit-cost all-pairs shortest paths over the one-step relation."""
    adj = as_adjacency(relation, n)
    n = adj.shape[0]
    d = np.where(adj, 1.0, np.inf)
    np.fill_diagonal(d, 0.0)
    for k in range(n):
        np.minimum(d, d[:, k, None] + d[None, k, :], out=d)
    out = np.full((n, n), INF, dtype=np.int64)
    finite = np.isfinite(d)
    out[finite] = d[finite].astype(np.int64)
    return GroundTruthMAD(out)


@dataclass
class OptimalityReport:
    identity_ok: bool
    one_step_ok: bool
    triangle_ok: bool
    n_violations: int
    candidate_sum: float
    mad_sum: float

    @property
    def feasible(self):
        return self.identity_ok and self.one_step_ok and self.triangle_ok

    @property
    def dominated(self):
        """Feasible candidates never exceed the MAD in total."""
        return self.candidate_sum <= self.mad_sum

    @property
    def equals_mad(self):
        return self.feasible and self.candidate_sum == self.mad_sum


def check_mad_optimality(d_candidate, relation, n=None, atol=0.0):
    """Check the three constraint families of the MAD program for a candidate table.

    Constraints: ``d(s, s) = 0``, ``d(s, s') <= 1`` on one-step pairs, and the
    triangle inequality. The candidate may be a :class:`GroundTruthMAD`, an
    integer table using ``INF``, or a float table using ``np.inf``.
    """
    adj = as_adjacency(relation, n)
    if isinstance(d_candidate, GroundTruthMAD):
        d = d_candidate.as_float()
    else:
        d = np.asarray(d_candidate)
        if d.dtype.kind in "iu":
            d = GroundTruthMAD(d.astype(np.int64)).as_float()
        else:
            d = d.astype(np.float64)
    if d.shape != adj.shape:
        raise ValueError(f"table shape {d.shape} does not match relation {adj.shape}")

    diag = np.diagonal(d)
    bad_identity = int(np.count_nonzero(diag != 0))
    off = adj & ~np.eye(adj.shape[0], dtype=bool)
    bad_step = int(np.count_nonzero(d[off] > 1 + atol))
    bad_triangle = 0
    for k in range(d.shape[0]):
        via = d[:, k, None] + d[None, k, :]
        bad_triangle += int(np.count_nonzero(d > via + atol))

    mad = floyd_warshall(adj).as_float()
    return OptimalityReport(
        identity_ok=bad_identity == 0,
        one_step_ok=bad_step == 0,
        triangle_ok=bad_triangle == 0,
        n_violations=bad_identity + bad_step + bad_triangle,
        candidate_sum=float(d.sum()),
        mad_sum=float(mad.sum()),
    )
