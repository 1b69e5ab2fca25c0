"""Joint similarity, the stabilizing reward and reward combination."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import quat
from .errors import InputError, StructuralError
from .retarget import MappingTable, map_segment
from .skeleton import JointPose, TrajectorySegment, forward_kinematics_arrays
from .stabilizer import MotionReconstructor


@dataclass(frozen=True)
class RewardParams:
    r_j: float = 0.1
    t_j: float = 0.1
    n_bar: int = 15
    t_s: float = 1.5
    lam: float = 1.0
    q: float = 750.0
    l_e: float = 1000.0
    # None means every joint of the human skeleton takes part
    participating_joints: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.participating_joints is not None:
            object.__setattr__(self, "participating_joints", tuple(int(i) for i in self.participating_joints))
        if not self.r_j > 0:
            raise ValueError("r_j must be > 0")
        if not self.t_j > 0:
            raise ValueError("t_j must be > 0")
        if int(self.n_bar) != self.n_bar or self.n_bar <= 0:
            raise ValueError("n_bar must be a positive integer")
        if abs(self.t_s - self.n_bar * self.r_j) > 1e-12:
            raise ValueError(f"t_s must equal n_bar * r_j (got {self.t_s} vs {self.n_bar * self.r_j})")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not self.q > 0:
            raise ValueError("q must be > 0")
        if not self.l_e > 0:
            raise ValueError("l_e must be > 0")
        if self.participating_joints is not None:
            if len(set(self.participating_joints)) != len(self.participating_joints):
                raise ValueError("participating_joints has duplicates")
            if self.n_bar > len(self.participating_joints):
                raise ValueError("n_bar exceeds the number of participating joints")

    @property
    def shaping_scale(self) -> float:
        return self.lam * self.q / self.l_e

    def joints_for(self, n_joints: int) -> np.ndarray:
        """Participating joint indices resolved against a skeleton of n_joints."""
        idx = np.arange(n_joints) if self.participating_joints is None else np.array(self.participating_joints, dtype=int)
        if len(idx) and (idx.min() < 0 or idx.max() >= n_joints):
            raise StructuralError("participating joint index out of range")
        if self.n_bar > len(idx):
            raise ValueError("n_bar exceeds the number of participating joints")
        return idx


def joint_distances(pos_a, ori_a, pos_b, ori_b) -> np.ndarray:
    """Vectorized squared 6-vector distance over leading axes."""
    pos_a, ori_a, pos_b, ori_b = (np.asarray(x, dtype=float) for x in (pos_a, ori_a, pos_b, ori_b))
    for x in (pos_a, ori_a, pos_b, ori_b):
        if not np.all(np.isfinite(x)):
            raise InputError("non-finite joint pose")
    dp = pos_a - pos_b
    # b^-1 a written so that swapping a and b negates the vector part
    # exactly; the distance is then bit-for-bit symmetric
    wa, va = ori_a[..., :1], ori_a[..., 1:]
    wb, vb = ori_b[..., :1], ori_b[..., 1:]
    w = np.sum(ori_a * ori_b, axis=-1)
    v = (wb * va - wa * vb) + np.cross(va, vb)
    angle = 2.0 * np.arctan2(np.linalg.norm(v, axis=-1), np.abs(w))
    return np.sum(dp * dp, axis=-1) + angle * angle


def joint_distance(a: JointPose, b: JointPose) -> float:
    """Squared norm of [position difference; log(b^-1 a)].

    The rotation-vector part's squared norm is the squared geodesic angle.
    """
    return float(joint_distances(a.position, a.orientation, b.position, b.orientation))


def joint_similarity(a: JointPose, b: JointPose, params: RewardParams) -> float:
    return params.r_j if joint_distance(a, b) <= params.t_j else 0.0


def _stack(poses: Sequence[JointPose]):
    return np.array([p.position for p in poses], dtype=float), np.array([p.orientation for p in poses], dtype=float)


def pose_similarity(s_h: Sequence[JointPose], s_hat: Sequence[JointPose], params: RewardParams) -> float:
    """Sum of per-joint similarities over the participating joints."""
    if len(s_h) != len(s_hat):
        raise StructuralError(f"pose lists differ in length ({len(s_h)} vs {len(s_hat)})")
    idx = params.joints_for(len(s_h))
    pa, oa = _stack(s_h)
    pb, ob = _stack(s_hat)
    return float(pose_similarity_arrays(pa, oa, pb, ob, params, idx))


def pose_similarity_arrays(pos_a, ori_a, pos_b, ori_b, params: RewardParams, idx=None) -> np.ndarray:
    """F_S over (..., J) joint arrays; returns shape (...)."""
    if idx is None:
        idx = params.joints_for(np.shape(pos_a)[-2])
    d = joint_distances(pos_a[..., idx, :], ori_a[..., idx, :], pos_b[..., idx, :], ori_b[..., idx, :])
    # counting first and scaling once keeps the sum exact for any r_j
    return np.count_nonzero(d <= params.t_j, axis=-1) * params.r_j


def stabilizing_reward(f_s, params: RewardParams):
    f_s = np.asarray(f_s, dtype=float)
    out = np.where(f_s >= params.t_s, f_s, 0.0)
    return float(out) if out.ndim == 0 else out


def combine_rewards(r_task, r_stab, params: RewardParams):
    return r_task + params.shaping_scale * r_stab


def segment_stabilizing_rewards(
    robot_segment: TrajectorySegment,
    mapping: MappingTable,
    reconstructor: MotionReconstructor,
    params: RewardParams,
) -> np.ndarray:
    """Per-frame stabilizing reward: map, reconstruct, FK both, compare."""
    aligned = map_segment(mapping, robot_segment)
    stable = reconstructor.reconstruct(aligned)
    if stable.length != aligned.length:
        raise StructuralError("reconstructor changed the segment length")
    human = mapping.human
    idx = params.joints_for(human.n_joints)
    pa, oa = forward_kinematics_arrays(human, aligned.arrays())
    pb, ob = forward_kinematics_arrays(human, stable.arrays())
    return stabilizing_reward(pose_similarity_arrays(pa, oa, pb, ob, params, idx), params)
