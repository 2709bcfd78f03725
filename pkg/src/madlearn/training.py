"""MadDist and TDMadDist: losses and the training loop.

Both learn an encoder ``phi`` such that ``d(s, s') = q(phi(s), phi(s'))``
approximates the minimum action distance, where ``q`` is a quasimetric.

MadDist minimises ``L_o + w_r L_r + w_c L_c``::

    L_o = mean (d(s_i, s_j) / (j - i) - 1)^2            on-trajectory pairs
    L_r = mean relu(1 - d(s, s') / d_max)^2             random pool pairs
    L_c = mean relu(d(s_i, s_j) - (j - i))^2            pairs with j - i <= H_c

TDMadDist replaces the first two terms with bootstrapped targets from a
Polyak-averaged copy ``phi'`` of the encoder::

    L_o' = mean (d(s_i, s_j) / min(j - i, 1 + d'(s_{i+1}, s_j)) - 1)^2
    L_r' = mean (d(s_i, s_r) / (1 + d'(s_{i+1}, s_r)) - 1)^2
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from madlearn import diffnet
from madlearn.quasimetric import QuasimetricSpec, distance, distance_tensor

log = logging.getLogger(__name__)


class NonFiniteLossError(ArithmeticError):
    """Training hit a NaN/Inf loss. ``dump`` holds the offending batch."""

    def __init__(self, step, dump):
        super().__init__(f"non-finite loss at step {step}: {dump.get('components')}")
        self.step = step
        self.dump = dump


@dataclass
class MadDistConfig:
    w_r: float = 1.0
    w_c: float = 0.1
    d_max: float = 100.0
    horizon: int = 6  # H_c
    batch_obj: int = 256
    batch_constraint: int = 1024
    steps: int = 50_000
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    quasimetric: QuasimetricSpec = field(default_factory=QuasimetricSpec.simple)
    latent_dim: int = 256
    hidden: tuple = (512, 512)
    eval_interval: int = 1000
    grad_clip: float | None = None

    algorithm = "maddist"

    def __post_init__(self):
        if isinstance(self.quasimetric, str):
            self.quasimetric = QuasimetricSpec.parse(self.quasimetric)
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.w_r <= 0 or self.w_c <= 0:
            raise ValueError("w_r and w_c must be positive")
        if self.horizon < 1:
            raise ValueError("horizon H_c must be at least 1")
        if getattr(self, "d_max", 1.0) <= 0:
            raise ValueError("d_max must be positive")
        if self.steps < 0 or self.eval_interval < 1:
            raise ValueError("steps must be >= 0 and eval_interval >= 1")

    def to_dict(self):
        out = asdict(self)
        out["quasimetric"] = str(self.quasimetric)
        out["hidden"] = ",".join(str(h) for h in self.hidden)
        return out

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class TDMadDistConfig(MadDistConfig):
    polyak_beta: float = 0.005

    algorithm = "tdmaddist"

    def __post_init__(self):
        super().__post_init__()
        if not 0.0 < self.polyak_beta < 1.0:
            raise ValueError("polyak_beta must lie in (0, 1)")

    def to_dict(self):
        out = super().to_dict()
        out.pop("d_max", None)
        return out

    @classmethod
    def field_names(cls):
        return [n for n in super().field_names() if n != "d_max"]


@dataclass
class TrainState:
    params: diffnet.NetworkParams
    optimizer: diffnet.AdamWState
    target: diffnet.NetworkParams | None = None
    step: int = 0
    history: list = field(default_factory=list)


@dataclass
class LossResult:
    total: diffnet.Tensor
    components: dict
    forward: diffnet.Forward


# -- loss terms ----------------------------------------------------------------


def _t(x):
    return x if isinstance(x, diffnet.Tensor) else diffnet.Tensor(x)


def objective_term(d, denominator):
    """mean (d / denominator - 1)^2"""
    return diffnet.mean(diffnet.square(diffnet.sub(diffnet.div(_t(d), denominator), 1.0)))


def contrastive_term(d, d_max):
    """mean relu(1 - d / d_max)^2"""
    return diffnet.mean(diffnet.square(diffnet.relu(diffnet.sub(1.0, diffnet.div(_t(d), d_max)))))


def constraint_term(d, gap):
    """mean relu(d - gap)^2"""
    return diffnet.mean(diffnet.square(diffnet.relu(diffnet.sub(_t(d), gap))))


def combine(l_o, l_r, l_c, cfg):
    total = l_o + diffnet.mul(l_r, cfg.w_r) + diffnet.mul(l_c, cfg.w_c)
    comps = {"L_o": float(l_o.data), "L_r": float(l_r.data), "L_c": float(l_c.data)}
    return total, comps


# -- graph construction ----------------------------------------------------------


def pair_distances(params, dataset, anchors, partners, spec):
    """Graph-recorded ``d(anchor_k, partner_k)`` over dataset indices.

    Each distinct state is encoded once and gathered for every pair it is in.
    """
    uid = dataset.unique_id[np.concatenate([anchors, partners])]
    needed, inverse = np.unique(uid, return_inverse=True)
    fwd = diffnet.forward(params, dataset.observations[dataset.pool_index[needed]])
    n = len(anchors)
    za = diffnet.take_rows(fwd.output, inverse[:n])
    zb = diffnet.take_rows(fwd.output, inverse[n:])
    return fwd, distance_tensor(za, zb, spec)


def _split(d, *sizes):
    out, start = [], 0
    for n in sizes:
        out.append(diffnet.slice_rows(d, start, start + n))
        start += n
    return out


def _target_distances(target, dataset, spec, a, b):
    uid = dataset.unique_id[np.concatenate([a, b])]
    needed, inverse = np.unique(uid, return_inverse=True)
    z = diffnet.encode(target, dataset.observations[dataset.pool_index[needed]])
    return distance(z[inverse[: len(a)]], z[inverse[len(a) :]], spec)


def _check_gaps(batch, name):
    if batch.gap is None or np.any(np.asarray(batch.gap) < 1):
        raise ValueError(f"{name} batch needs index gaps >= 1")


def loss_maddist(params, dataset, obj, rand, constr, cfg):
    _check_gaps(obj, "objective")
    _check_gaps(constr, "constraint")
    spec = cfg.quasimetric
    fwd, d = pair_distances(
        params,
        dataset,
        np.concatenate([obj.anchor, rand.anchor, constr.anchor]),
        np.concatenate([obj.partner, rand.partner, constr.partner]),
        spec,
    )
    d_obj, d_rand, d_con = _split(d, len(obj), len(rand), len(constr))
    l_o = objective_term(d_obj, obj.gap.astype(np.float64))
    l_r = contrastive_term(d_rand, cfg.d_max)
    l_c = constraint_term(d_con, constr.gap.astype(np.float64))
    total, comps = combine(l_o, l_r, l_c, cfg)
    return LossResult(total, comps, fwd)


def loss_tdmaddist(params, target, dataset, obj, td_rand, constr, cfg):
    _check_gaps(obj, "objective")
    _check_gaps(constr, "constraint")
    if obj.successor is None or td_rand.successor is None:
        raise ValueError("TD batches need the successor of each anchor")
    spec = cfg.quasimetric
    # target-side distances: plain numpy, no gradient
    boot_obj = 1.0 + _target_distances(target, dataset, spec, obj.successor, obj.partner)
    denom = np.minimum(obj.gap.astype(np.float64), boot_obj)
    rand_target = 1.0 + _target_distances(target, dataset, spec, td_rand.successor, td_rand.partner)
    fwd, d = pair_distances(
        params,
        dataset,
        np.concatenate([obj.anchor, td_rand.anchor, constr.anchor]),
        np.concatenate([obj.partner, td_rand.partner, constr.partner]),
        spec,
    )
    d_obj, d_rand, d_con = _split(d, len(obj), len(td_rand), len(constr))
    l_o = objective_term(d_obj, denom)
    l_r = objective_term(d_rand, rand_target)
    l_c = constraint_term(d_con, constr.gap.astype(np.float64))
    total, comps = combine(l_o, l_r, l_c, cfg)
    return LossResult(total, comps, fwd)


# -- loop ------------------------------------------------------------------------------


def init_state(dataset, cfg, seed):
    params = diffnet.init_params(dataset.obs_dim, cfg.latent_dim, cfg.hidden, seed=[seed, 0])
    opt = diffnet.AdamWState.for_params(
        params, learning_rate=cfg.learning_rate, weight_decay=cfg.weight_decay
    )
    target = params.copy() if isinstance(cfg, TDMadDistConfig) else None
    return TrainState(params, opt, target)


def _sample(dataset, cfg, rng):
    td = isinstance(cfg, TDMadDistConfig)
    obj = dataset.sample_objective_pairs(cfg.batch_obj, rng, with_successor=td)
    if td:
        rand = dataset.sample_td_random_pairs(cfg.batch_obj, rng)
    else:
        rand = dataset.sample_random_state_pairs(cfg.batch_obj, rng)
    constr = dataset.sample_constraint_pairs(cfg.horizon, cfg.batch_constraint, rng)
    return obj, rand, constr


def compute_loss(state, dataset, batches, cfg):
    obj, rand, constr = batches
    if isinstance(cfg, TDMadDistConfig):
        return loss_tdmaddist(state.params, state.target, dataset, obj, rand, constr, cfg)
    return loss_maddist(state.params, dataset, obj, rand, constr, cfg)


def _dump(step, batches, result):
    obj, rand, constr = batches
    return {
        "step": step,
        "components": None if result is None else result.components,
        "objective_pairs": (obj.anchor.tolist(), obj.partner.tolist(), obj.gap.tolist()),
        "random_pairs": (rand.anchor.tolist(), rand.partner.tolist()),
        "constraint_pairs": (constr.anchor.tolist(), constr.partner.tolist(), constr.gap.tolist()),
    }


def train_step(state, dataset, cfg, rng):
    batches = _sample(dataset, cfg, rng)
    try:
        result = compute_loss(state, dataset, batches, cfg)
    except diffnet.NumericError as exc:
        raise NonFiniteLossError(state.step, _dump(state.step, batches, None)) from exc
    if not np.isfinite(result.total.data):
        raise NonFiniteLossError(state.step, _dump(state.step, batches, result))
    grads = diffnet.backward(result.total, result.forward)
    if cfg.grad_clip:
        grads = diffnet.clip_by_global_norm(grads, cfg.grad_clip)
    diffnet.adamw_step(state.params, grads, state.optimizer)
    if state.target is not None:
        diffnet.polyak_update(state.target, state.params, cfg.polyak_beta)
    state.step += 1
    return result.components


def train(dataset, cfg, seed, evaluator=None, eval_hook=None, state=None):
    """Run ``cfg.steps`` optimiser steps and return the final :class:`TrainState`.

    Every ``cfg.eval_interval`` steps (and at step 0 and the last step) a
    history row is appended with the loss components averaged over the
    interval and, if ``evaluator`` is given, its MetricsReport for the current
    encoder. ``eval_hook(step, row, state)`` is called with each row.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    state = state or init_state(dataset, cfg, seed)
    rng = np.random.default_rng([seed, 1])

    def record(comps):
        row = {"step": state.step, **comps}
        if evaluator is not None:
            report = evaluator(state.params)
            row.update(report.as_row())
        state.history.append(row)
        if eval_hook is not None:
            eval_hook(state.step, row, state)
        log.info("step %d %s", state.step, row)

    if state.step == 0:
        probe = compute_loss(state, dataset, _sample(dataset, cfg, np.random.default_rng([seed, 2])), cfg)
        record(probe.components)

    acc = {"L_o": 0.0, "L_r": 0.0, "L_c": 0.0}
    n_acc = 0
    end = state.step + cfg.steps
    while state.step < end:
        comps = train_step(state, dataset, cfg, rng)
        for k in acc:
            acc[k] += comps[k]
        n_acc += 1
        if state.step % cfg.eval_interval == 0 or state.step == end:
            record({k: v / n_acc for k, v in acc.items()})
            acc = dict.fromkeys(acc, 0.0)
            n_acc = 0
    return state


def with_overrides(cfg, **changes):
    return replace(cfg, **changes)
