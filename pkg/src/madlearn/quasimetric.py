"""ReLU-reduction quasimetrics on latent vectors.

Every distance here is built from ``relu(x - y)`` aggregated by max, sum or
mean, or a convex mix of those. ``d_simple`` is the alpha-weighted mix of max
and mean. Numpy versions work on broadcastable batches ``[..., d]``;
:func:`distance_tensor` builds the same value inside an autodiff graph.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from madlearn import diffnet

KINDS = ("simple", "max", "sum", "mean", "convex")


@dataclass(frozen=True)
class QuasimetricSpec:
    kind: str = "simple"
    alpha: float = 0.5
    weights: tuple = ()
    members: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown quasimetric kind {self.kind!r}")
        if self.kind == "simple" and not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.kind == "convex":
            if len(self.weights) != len(self.members) or not self.members:
                raise ValueError("convex combination needs one weight per member")
            if any(w < 0 for w in self.weights):
                raise ValueError("convex weights must be nonnegative")
            if abs(sum(self.weights) - 1.0) > 1e-12:
                raise ValueError(f"convex weights sum to {sum(self.weights)!r}, not 1")

    @classmethod
    def simple(cls, alpha=0.5):
        return cls("simple", alpha=float(alpha))

    @classmethod
    def convex(cls, weights, members):
        return cls("convex", weights=tuple(float(w) for w in weights), members=tuple(members))

    def __str__(self):
        if self.kind == "simple":
            return f"simple({self.alpha!r})"
        if self.kind == "convex":
            inner = ",".join(f"{w!r}:{m}" for w, m in zip(self.weights, self.members))
            return f"convex({inner})"
        return self.kind

    @classmethod
    def parse(cls, text):
        """Inverse of ``str``: ``simple(0.5)``, ``max``, ``convex(0.5:max,0.5:mean)``."""
        text = text.strip()
        if text in ("max", "sum", "mean"):
            return cls(text)
        if text == "simple":
            return cls.simple()
        m = re.fullmatch(r"simple\(\s*([^)]+?)\s*\)", text)
        if m:
            return cls.simple(float(m.group(1)))
        if text.startswith("convex(") and text.endswith(")"):
            weights, members = [], []
            for part in _split_top_level(text[len("convex(") : -1]):
                w, sep, member = part.partition(":")
                if not sep:
                    raise ValueError(f"convex member {part!r} lacks a weight")
                weights.append(float(w))
                members.append(cls.parse(member))
            return cls.convex(weights, members)
        raise ValueError(f"cannot parse quasimetric {text!r}")


def _split_top_level(text):
    parts, depth, start = [], 0, 0
    for i, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "," and depth == 0:
            parts.append(text[start:i])
            start = i + 1
    parts.append(text[start:])
    return [p.strip() for p in parts if p.strip()]


def _check(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[-1:] != y.shape[-1:]:
        raise ValueError(f"latent dimensions differ: {x.shape} vs {y.shape}")
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ValueError("latent vectors need at least one component")
    return x, y


def relu_reduction(x, y):
    x, y = _check(x, y)
    return np.maximum(x - y, 0.0)


def d_aggregate(x, y, kind):
    r = relu_reduction(x, y)
    if kind == "max":
        return r.max(axis=-1)
    if kind == "sum":
        return r.sum(axis=-1)
    if kind == "mean":
        return r.mean(axis=-1)
    raise ValueError(f"unknown aggregation {kind!r}")


def d_simple(x, y, alpha=0.5):
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    r = relu_reduction(x, y)
    return alpha * r.max(axis=-1) + (1.0 - alpha) * r.mean(axis=-1)


def d_convex(x, y, spec):
    if spec.kind != "convex":
        raise ValueError("d_convex needs a convex spec")
    return sum(w * distance(x, y, m) for w, m in zip(spec.weights, spec.members))


def distance(x, y, spec):
    """Evaluate any quasimetric spec on (batches of) latent vectors."""
    if spec.kind == "simple":
        return d_simple(x, y, spec.alpha)
    if spec.kind == "convex":
        return d_convex(x, y, spec)
    return d_aggregate(x, y, spec.kind)


def d_gradients(x, y, spec):
    """Closed-form subgradients ``(dd/dx, dd/dy)`` for a single pair.

    Convention: 0 where x_i == y_i, and the max picks the lowest index among ties.
    """
    x, y = _check(x, y)
    if x.ndim != 1 or y.ndim != 1:
        raise ValueError("d_gradients works on single vectors")
    diff = x - y
    active = (diff > 0).astype(np.float64)
    d = x.size

    def grad_of(s):
        if s.kind == "sum":
            return active
        if s.kind == "mean":
            return active / d
        if s.kind == "max":
            g = np.zeros(d)
            r = np.maximum(diff, 0.0)
            k = int(np.argmax(r))
            g[k] = active[k]
            return g
        if s.kind == "simple":
            return s.alpha * grad_of(QuasimetricSpec("max")) + (1 - s.alpha) * grad_of(
                QuasimetricSpec("mean")
            )
        return sum(w * grad_of(m) for w, m in zip(s.weights, s.members))

    gx = grad_of(spec)
    return gx, -gx


def distance_tensor(xa, xb, spec):
    """The same quasimetric as :func:`distance`, recorded in a diffnet graph."""
    r = diffnet.relu(diffnet.sub(xa, xb))
    return _reduce_tensor(r, spec)


def _reduce_tensor(r, spec):
    if spec.kind == "max":
        return diffnet.max_last(r)
    if spec.kind == "sum":
        return diffnet.sum_last(r)
    if spec.kind == "mean":
        return diffnet.mean_last(r)
    if spec.kind == "simple":
        a = spec.alpha
        if a == 1.0:
            return diffnet.max_last(r)
        if a == 0.0:
            return diffnet.mean_last(r)
        return diffnet.mul(diffnet.max_last(r), a) + diffnet.mul(diffnet.mean_last(r), 1.0 - a)
    out = None
    for w, m in zip(spec.weights, spec.members):
        term = diffnet.mul(_reduce_tensor(r, m), w)
        out = term if out is None else out + term
    return out
