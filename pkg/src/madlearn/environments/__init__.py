from madlearn.environments.graphs import (
    INF,
    GroundTruthMAD,
    OptimalityReport,
    check_mad_optimality,
    floyd_warshall,
)
from madlearn.environments.grids import (
    DiscreteEnvironment,
    cliffwalking,
    keydoor_gridworld,
    noisy_gridworld,
)
from madlearn.environments.pointmaze import PointMazeLite, load_layout, pointmaze_lite

ENVIRONMENTS = ("cliffwalking", "keydoor", "noisy_gridworld", "pointmaze_umaze", "pointmaze_medium")


def make_env(name, **params):
    """Build an environment by its registry name."""
    if name == "cliffwalking":
        return cliffwalking()
    if name == "keydoor":
        return keydoor_gridworld()
    if name == "noisy_gridworld":
        return noisy_gridworld(sigma=float(params.get("sigma", 0.1)))
    if name.startswith("pointmaze"):
        layout = params.get("layout") or (name.split("_", 1)[1] if "_" in name else "umaze")
        return pointmaze_lite(layout, resolution=int(params.get("resolution", 1)))
    raise ValueError(f"unknown environment {name!r}; choose from {', '.join(ENVIRONMENTS)}")


__all__ = [
    "ENVIRONMENTS",
    "INF",
    "DiscreteEnvironment",
    "GroundTruthMAD",
    "OptimalityReport",
    "PointMazeLite",
    "check_mad_optimality",
    "cliffwalking",
    "floyd_warshall",
    "keydoor_gridworld",
    "load_layout",
    "make_env",
    "noisy_gridworld",
    "pointmaze_lite",
]
