"""Stabilizing reward on hand-built joint poses.

Walks through the per-joint distance, the thresholded similarity count and
the final combination with the task reward.
"""
import numpy as np

from stabshape import quat
from stabshape.reward import RewardParams, combine_rewards, joint_distance, pose_similarity, stabilizing_reward
from stabshape.skeleton import JointPose

p = RewardParams()
print(f"r_j={p.r_j} t_j={p.t_j} t_s={p.t_s} lambda={p.lam} q={p.q} l_e={p.l_e}")

a = JointPose(np.zeros(3), quat.IDENTITY)
b = JointPose(np.array([0.3, 0.0, 0.0]), quat.IDENTITY)
c = JointPose(np.zeros(3), quat.from_axis_angle([0, 0, 1], np.pi / 2))
print("shifted 0.3 m  ->", joint_distance(a, b))
print("turned 90 deg  ->", joint_distance(a, c))

# 20 joints, 5 of them pushed 1 m away: 15 similar joints sit exactly on t_s
params = RewardParams(participating_joints=tuple(range(20)))
ref = [JointPose(np.array([0.1 * i, 0, 0]), quat.IDENTITY) for i in range(20)]
moved = [JointPose(j.position + (1.0 if i < 5 else 0.0), j.orientation) for i, j in enumerate(ref)]
f_s = pose_similarity(ref, moved, params)
print("F_S =", f_s, " R_S =", stabilizing_reward(f_s, p))

for lam in (0.5, 1.0):
    for q in (350.0, 750.0):
        pp = RewardParams(lam=lam, q=q)
        print(f"lambda={lam} q={q:.0f}: combine(2.0, 1.5) = {combine_rewards(2.0, 1.5, pp):.4f}")
