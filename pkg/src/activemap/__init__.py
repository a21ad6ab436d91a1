"""Multi-robot active mapping on 2D grid worlds.

A simulator (scenes, robot kinematics, raycast sensing), occupancy mapping
with frontier extraction, fast-marching geodesic fields, classical global
planners, and a learned goal-assignment planner built from a graph
attention network and a differentiable assignment layer, trainable with
PPO.
"""

__version__ = "0.1.0"
