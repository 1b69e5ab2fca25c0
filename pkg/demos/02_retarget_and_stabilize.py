"""Map a robot trajectory onto the human skeleton and stabilize it.

Runs the planar biped with random torques, retargets the frames, and shows
how far the reconstruction moves each frame and what reward that earns.
"""
import numpy as np

from stabshape.envs import Env
from stabshape.retarget import bundled_mapping, map_segment
from stabshape.reward import RewardParams, segment_stabilizing_rewards
from stabshape.stabilizer import BalanceProjectionReconstructor, StabilizerConfig, com_balance_gaps, roughness
from stabshape.trainer import collect_segment, padded_segment

env = Env("PlanarStand")
env.reset(0)
rng = np.random.default_rng(0)
seg = collect_segment(lambda obs: rng.uniform(-0.4, 0.4, env.act_dim), env, 145)
print(f"collected {len(seg)} frames (episode over: {env.done})")

table = bundled_mapping("planar_biped")
padded = padded_segment(seg, 8)
human = map_segment(table, padded)
cfg = StabilizerConfig()
rec = BalanceProjectionReconstructor(cfg)
stable, diag = rec.reconstruct_with_diagnostics(human)

before = com_balance_gaps(table.human, human.arrays(), cfg)
after = com_balance_gaps(table.human, stable.arrays(), cfg)
print(f"unbalanced frames: {np.sum(before > 1e-6)} before, {np.sum(after > 1e-6)} after")
print(f"roughness: {roughness(table.human, human.arrays()):.4f} -> {roughness(table.human, stable.arrays()):.4f}")
print(f"largest root correction: {diag.correction_magnitude.max():.3f} m")

r_s = segment_stabilizing_rewards(padded, table, rec, RewardParams())[: len(seg)]
print("R_S per frame (first 20):", np.round(r_s[:20], 2))
print(f"mean R_S {r_s.mean():.3f}, zero on {np.mean(r_s == 0):.0%} of frames")
