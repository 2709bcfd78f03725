"""Random-shooting model-predictive control driven by a distance-to-goal model.

A *model* here is any callable ``model(states, goals) -> distances`` taking
batches of environment states (integer ids for grid worlds, ``(x, y, vx, vy)``
rows for the point maze). ``evaluation.LearnedMetric`` and
``evaluation.OracleMetric`` both fit.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class PlanConfig:
    n_candidates: int = 100
    horizon: int = 10
    max_episode_steps: int = 500
    goal_tolerance: float = 0.5  # continuous envs only; discrete goals need an exact match

    def __post_init__(self):
        if self.n_candidates < 1 or self.horizon < 1:
            raise ValueError("n_candidates and horizon must be at least 1")
        if self.max_episode_steps < 0:
            raise ValueError("max_episode_steps must be non-negative")
        if self.goal_tolerance < 0:
            raise ValueError("goal_tolerance must be non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass
class EpisodeResult:
    success: bool
    steps: int
    trace: list = field(default_factory=list)

    def write_trace(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "state", "action", "score"])
            for row in self.trace:
                w.writerow([row["step"], _fmt_state(row["state"]), _fmt_state(row["action"]), repr(row["score"])])


def _fmt_state(x):
    a = np.asarray(x)
    if a.ndim == 0:
        return str(a.item())
    return " ".join(repr(float(v)) for v in a)


def _goal_batch(goal, n):
    g = np.asarray(goal)
    return np.repeat(g[None], n, axis=0) if g.ndim else np.full(n, g)


def score_rollout(states, goal, model):
    """Smallest model distance to ``goal`` along one rollout ``s_{t+1..t+H}``."""
    states = np.asarray(states)
    if len(states) == 0:
        raise ValueError("empty rollout")
    return float(np.min(model(states, _goal_batch(goal, len(states)))))


def rollout_scores(env, state, goal, model, sequences, rng):
    """Simulate every candidate from ``state``; returns the per-candidate scores.

    ``sequences`` is ``[K, H]`` indices into ``env.action_set``. The rollouts act
    on copies so the caller's state is never touched.
    """
    k, h = sequences.shape
    actions = np.asarray(env.action_set)
    s = np.asarray(state)
    states = np.repeat(s[None], k, axis=0) if s.ndim else np.full(k, s)
    goals = _goal_batch(goal, k)
    best = np.full(k, np.inf)
    for t in range(h):
        states = env.step_batch(states, actions[sequences[:, t]], rng)
        best = np.minimum(best, np.asarray(model(states, goals), dtype=np.float64))
    return best


def plan_step(env, state, goal, model, cfg, rng):
    """First action of the best of ``K`` uniformly sampled action sequences.

    Returns ``(action, score)``; ties go to the lowest candidate index.
    """
    n_actions = len(env.action_set)
    sequences = rng.integers(n_actions, size=(cfg.n_candidates, cfg.horizon))
    scores = rollout_scores(env, state, goal, model, sequences, rng)
    best = int(np.argmin(scores))
    return env.action_set[sequences[best, 0]], float(scores[best])


def _stream(seed, *ids):
    return np.random.default_rng([*np.atleast_1d(seed).tolist(), *ids])


def _reached(env, state, goal, cfg):
    if env.continuous:
        return env.reached(state, goal, cfg.goal_tolerance)
    return env.reached(state, goal)


def run_episode(env, start, goal, model, cfg, seed):
    """Receding-horizon control from ``start`` until ``goal`` or the step budget.

    Planning and the real environment draw from separate rng streams so the
    candidate rollouts cannot perturb the executed trajectory's noise.
    """
    plan_rng = _stream(seed, 0)
    env_rng = _stream(seed, 1)
    state = np.array(start, copy=True) if env.continuous else int(start)
    trace = []
    if _reached(env, state, goal, cfg):
        return EpisodeResult(True, 0, trace)
    for t in range(cfg.max_episode_steps):
        action, score = plan_step(env, state, goal, model, cfg, plan_rng)
        state = env.step(state, action, env_rng)
        trace.append({"step": t + 1, "state": state, "action": action, "score": score})
        if _reached(env, state, goal, cfg):
            return EpisodeResult(True, t + 1, trace)
    return EpisodeResult(False, cfg.max_episode_steps, trace)


def episode_task(env, seed):
    """Start and goal for one evaluation episode.

    Point mazes draw from the layout's S and G regions; grid worlds use their
    declared start and goal when present, otherwise a start state and a random
    goal reachable from it.
    """
    rng = _stream(seed, 2)
    if env.continuous:
        return env.sample_start(rng), env.sample_goal(rng)
    start = getattr(env, "start", None)
    if start is None:
        start = env.initial_state(rng)
    goal = getattr(env, "goal", None)
    if goal is None:
        row = env.ground_truth.finite_mask()[start]
        goal = int(rng.choice(np.flatnonzero(row)))
    return int(start), int(goal)


def run_suite(env, model, cfg, episodes, seed, tasks=None):
    """Run ``episodes`` episodes; episode ``k`` is seeded with ``(seed, k)``."""
    results = []
    for k in range(episodes):
        ep_seed = [seed, k]
        start, goal = tasks[k] if tasks is not None else episode_task(env, ep_seed)
        results.append(run_episode(env, start, goal, model, cfg, ep_seed))
    return results


def success_summary(results):
    n = len(results)
    wins = [r for r in results if r.success]
    return {
        "episodes": n,
        "successes": len(wins),
        "success_rate": len(wins) / n if n else float("nan"),
        "mean_steps_success": float(np.mean([r.steps for r in wins])) if wins else float("nan"),
    }


class ConstantModel:
    """``d == c`` everywhere; planning degenerates to following candidate 0."""

    def __init__(self, value=0.0):
        self.value = float(value)

    def __call__(self, a, b):
        return np.full(len(np.asarray(a)), self.value)
