"""Compare learned distances with ground truth: Spearman, Pearson, ratio CV."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from madlearn import diffnet
from madlearn.environments.graphs import INF
from madlearn.quasimetric import distance


class UndefinedMetricError(ValueError):
    pass


def pearson(true_d, pred_d):
    x = np.asarray(true_d, dtype=np.float64)
    y = np.asarray(pred_d, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("need two equal-length 1-d samples of size >= 2")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedMetricError("correlation undefined for a constant sample")
    r = float(xc @ yc) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def average_ranks(values):
    """1-based ranks; tied values share the mean of their positions."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    sorted_v = v[order]
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.concatenate([[True], sorted_v[1:] != sorted_v[:-1]]))
    ends = np.concatenate([starts[1:], [len(v)]])
    run_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(len(v))
    ranks[order] = np.repeat(run_rank, ends - starts)
    return ranks


def spearman(true_d, pred_d):
    return pearson(average_ranks(true_d), average_ranks(pred_d))


def ratio_cv(true_d, pred_d):
    """Population std over mean of ``pred / true``."""
    t = np.asarray(true_d, dtype=np.float64)
    p = np.asarray(pred_d, dtype=np.float64)
    if t.shape != p.shape or len(t) < 1:
        raise ValueError("need equal-length samples")
    if np.any(t <= 0):
        raise ValueError("ratio CV needs strictly positive true distances")
    r = p / t
    mu = r.mean()
    if mu == 0.0:
        raise UndefinedMetricError("ratio CV undefined when the mean ratio is 0")
    return float(r.std() / mu)


@dataclass
class MetricsReport:
    spearman: float
    pearson: float
    ratio_cv: float
    n_pairs: int
    n_infinite: int = 0
    n_zero: int = 0

    FIELDS = ("spearman", "pearson", "ratio_cv", "n_pairs", "n_infinite", "n_zero")

    def as_row(self):
        return {k: getattr(self, k) for k in self.FIELDS}

    def to_csv(self, path):
        write_rows(path, [self.as_row()], self.FIELDS)


def write_rows(path, rows, columns):
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k, "")) for k in columns})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


# -- distance functions over environment states --------------------------------------


class LearnedMetric:
    """``d(a, b) = q(phi(obs(a)), phi(obs(b)))`` over environment states.

    For noise-free discrete environments the embeddings of all states are
    computed once and cached.
    """

    def __init__(self, params, quasimetric, env, rng=None):
        self.params = params
        self.quasimetric = quasimetric
        self.env = env
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._table = None
        if not env.continuous and not env.noisy:
            self._table = diffnet.encode(params, env.observe(np.arange(env.n_states)))

    def embed(self, states):
        if self._table is not None:
            return self._table[np.asarray(states, dtype=np.int64)]
        return diffnet.encode(self.params, self.env.observe(states, self.rng))

    def __call__(self, a, b):
        return distance(self.embed(a), self.embed(b), self.quasimetric)


class OracleMetric:
    """Ground-truth MAD as a metric; continuous states map to their cell first."""

    def __init__(self, env):
        self.env = env
        self.table = env.ground_truth.as_float()

    def __call__(self, a, b):
        return self.table[self.env.latent_id(a), self.env.latent_id(b)]


def evaluate(metric, env, pair_sample_size=100_000, rng=None, states=None, max_enumerate=100_000):
    """Score ``metric`` against the environment's ground truth.

    All ordered pairs of ``states`` (default: every latent state) are used when
    there are at most ``max_enumerate`` of them, otherwise ``pair_sample_size``
    pairs are drawn uniformly. Continuous environments place each endpoint
    uniformly inside its discretisation cell, at rest. Pairs with unreachable
    ground truth are dropped; identical-state pairs are kept for the
    correlations and dropped for the ratio CV.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    gt = env.ground_truth
    ids = np.arange(gt.n_states) if states is None else np.unique(np.asarray(states))
    m = len(ids)
    if m * m <= max_enumerate:
        a = np.repeat(ids, m)
        b = np.tile(ids, m)
    else:
        a = ids[rng.integers(m, size=pair_sample_size)]
        b = ids[rng.integers(m, size=pair_sample_size)]
    true = gt(a, b)
    finite = true != INF
    n_inf = int(np.count_nonzero(~finite))
    a, b, true = a[finite], b[finite], true[finite].astype(np.float64)
    if len(true) < 2:
        raise UndefinedMetricError("fewer than two pairs with finite ground truth")
    if env.continuous:
        pred = metric(env.cell_sample(a, rng), env.cell_sample(b, rng))
    else:
        pred = metric(a, b)
    pred = np.asarray(pred, dtype=np.float64)
    pos = true > 0
    cv = ratio_cv(true[pos], pred[pos]) if pos.any() else float("nan")
    return MetricsReport(
        spearman=spearman(true, pred),
        pearson=pearson(true, pred),
        ratio_cv=cv,
        n_pairs=int(len(true)),
        n_infinite=n_inf,
        n_zero=int(np.count_nonzero(~pos)),
    )


def pair_dump(metric, env, path, rng=None):
    """Write every finite (true, pred) pair to CSV for plotting."""
    rng = rng if rng is not None else np.random.default_rng(0)
    gt = env.ground_truth
    n = gt.n_states
    a = np.repeat(np.arange(n), n)
    b = np.tile(np.arange(n), n)
    true = gt(a, b)
    keep = true != INF
    a, b, true = a[keep], b[keep], true[keep]
    if env.continuous:
        pred = metric(env.cell_sample(a, rng), env.cell_sample(b, rng))
    else:
        pred = metric(a, b)
    rows = [
        {"from": int(i), "to": int(j), "true": int(t), "pred": float(p)}
        for i, j, t, p in zip(a, b, true, pred)
    ]
    write_rows(path, rows, ("from", "to", "true", "pred"))
