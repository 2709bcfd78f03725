"""
Learning a MAD embedding on CliffWalking
========================================

Collect random-walk trajectories, fit MadDist, compare with the exact table.
Short run by default; pass a step count to train longer, e.g.

    python demos/02_learn_cliffwalking.py 50000
"""

import sys
import numpy as np
from madlearn.dataset import collect
from madlearn.environments import cliffwalking
from madlearn.evaluation import LearnedMetric, evaluate
from madlearn.training import MadDistConfig, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 3000
env = cliffwalking()
data = collect(env, 100, 200, seed=0)
print(len(data), "trajectories,", data.n_states, "observations")

# smaller net than the library default so the demo runs in about a minute
cfg = MadDistConfig(steps=steps, hidden=(128, 128), latent_dim=32, d_max=500.0, eval_interval=max(steps // 5, 1))
evaluator = lambda p: evaluate(LearnedMetric(p, cfg.quasimetric, env), env)
state = train(data, cfg, seed=0, evaluator=evaluator,
              eval_hook=lambda s, row, _: print(f"step {s:6d}  spearman {row['spearman']:.3f}  "
                                                f"pearson {row['pearson']:.3f}  ratio_cv {row['ratio_cv']:.3f}"))

# learned distances to the goal along the bottom-left column, vs the truth
metric = LearnedMetric(state.params, cfg.quasimetric, env)
ids = np.array([env.state_id(0, y) for y in range(4)])
print("true  ", env.ground_truth.matrix[ids, env.goal])
print("learnt", np.round(metric(ids, np.full(4, env.goal)), 1))

above = env.state_id(10, 2)
print("asymmetry: d(above, start) = %.2f, d(start, above) = %.2f"
      % (metric([above], [env.start])[0], metric([env.start], [above])[0]))
