"""
Random-shooting planning in the point maze
==========================================

Any callable d(states, goals) can drive the planner. Here: the exact cell
distance, and a constant that carries no goal information at all.
"""

from madlearn.environments import pointmaze_lite
from madlearn.evaluation import OracleMetric
from madlearn.planner import ConstantModel, PlanConfig, run_suite, success_summary

env = pointmaze_lite("umaze")
cfg = PlanConfig(n_candidates=100, horizon=10)

oracle = OracleMetric(pointmaze_lite("umaze", resolution=4))
print("oracle  ", success_summary(run_suite(env, oracle, cfg, 20, seed=0)))
print("constant", success_summary(run_suite(env, ConstantModel(), cfg, 20, seed=0)))

# one trajectory up close
res = run_suite(env, oracle, cfg, 1, seed=1)[0]
for row in res.trace[:: max(len(res.trace) // 8, 1)]:
    x, y = row["state"][:2]
    print(f"t={row['step']:3d}  x={x:.2f} y={y:.2f}  score={row['score']:.2f}")
