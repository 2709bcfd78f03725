"""
Ground-truth minimum action distances
=====================================

Exact MAD tables for the grid worlds, and where they are asymmetric.
"""

import numpy as np
from madlearn.environments import INF, cliffwalking, keydoor_gridworld

# CliffWalking: falling off the cliff teleports to start, so going *back* to
# start from anywhere on the bottom row is cheap while leaving it is not
env = cliffwalking()
gt = env.ground_truth
above = env.state_id(10, 2)
print("states", env.n_states)
print("d(start, goal)  =", gt(env.start, env.goal))
print("d(above, start) =", gt(above, env.start), " d(start, above) =", gt(env.start, above))

# KeyDoor: once the key is picked up it can't be dropped, so every
# key -> no-key pair is unreachable
kd = keydoor_gridworld()
m = kd.ground_truth.matrix
finite = m != INF
print("keydoor states", kd.n_states, " finite pairs", finite.sum(), "of", m.size)
print("one-way pairs (finite one way, INF the other):", np.sum(finite & ~finite.T))
