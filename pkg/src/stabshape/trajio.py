"""Line-delimited JSON trajectory files, one frame per line."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import InputError
from .skeleton import Pose, PoseArrays, SkeletonSpec, check_pose


@dataclass
class Frame:
    time_step: int
    pose: Pose
    observation: np.ndarray | None = None
    action: np.ndarray | None = None
    task_reward: float | None = None


def pose_to_record(skeleton: SkeletonSpec, pose: Pose) -> dict:
    joints = {}
    for j, rot in zip(skeleton.movable, pose.joint_rotations):
        name = skeleton.joints[j].name
        joints[name] = [float(x) for x in rot] if np.ndim(rot) else float(rot)
    return {
        "root_translation": [float(x) for x in pose.root_translation],
        "root_orientation": [float(x) for x in pose.root_orientation],
        "joints": joints,
    }


def pose_from_record(skeleton: SkeletonSpec, rec: dict) -> Pose:
    joints = rec["joints"]
    unknown = set(joints) - {skeleton.joints[j].name for j in skeleton.movable}
    if unknown:
        raise InputError(f"unknown joints {sorted(unknown)}")
    rots = []
    for j in skeleton.movable:
        spec = skeleton.joints[j]
        if spec.name not in joints:
            raise InputError(f"missing joint {spec.name!r}")
        v = joints[spec.name]
        if spec.kind == "revolute":
            if not isinstance(v, (int, float)):
                raise InputError(f"joint {spec.name!r} needs a scalar angle")
            rots.append(float(v))
        else:
            q = np.asarray(v, dtype=float)
            if q.shape != (4,):
                raise InputError(f"joint {spec.name!r} needs a [w, x, y, z] quaternion")
            rots.append(q)
    pose = Pose(
        np.asarray(rec["root_translation"], dtype=float),
        np.asarray(rec["root_orientation"], dtype=float),
        tuple(rots),
    )
    check_pose(skeleton, pose)
    return pose


def frame_to_record(skeleton: SkeletonSpec, frame: Frame) -> dict:
    def vec(x):
        return None if x is None else [float(v) for v in np.asarray(x).ravel()]

    return {
        "time_step": int(frame.time_step),
        "observation": vec(frame.observation),
        "pose": pose_to_record(skeleton, frame.pose),
        "action": vec(frame.action),
        "task_reward": None if frame.task_reward is None else float(frame.task_reward),
        "skeleton": skeleton.name,
    }


def write_trajectory(path, skeleton: SkeletonSpec, frames: Iterable[Frame]) -> None:
    with open(path, "w") as fh:
        for f in frames:
            fh.write(json.dumps(frame_to_record(skeleton, f), separators=(",", ":")) + "\n")


def read_trajectory(path, resolve_skeleton) -> tuple[SkeletonSpec, list[Frame]]:
    """Parse a trajectory file.

    ``resolve_skeleton`` maps the skeleton name stored in the file to a
    SkeletonSpec. Errors name the offending line.
    """
    path = Path(path)
    frames: list[Frame] = []
    skeleton = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                name = rec["skeleton"]
                if skeleton is None:
                    skeleton = resolve_skeleton(name)
                elif name != skeleton.name:
                    raise InputError(f"skeleton changes from {skeleton.name!r} to {name!r}")
                obs = rec.get("observation")
                act = rec.get("action")
                rew = rec.get("task_reward")
                frames.append(
                    Frame(
                        int(rec["time_step"]),
                        pose_from_record(skeleton, rec["pose"]),
                        None if obs is None else np.asarray(obs, dtype=float),
                        None if act is None else np.asarray(act, dtype=float),
                        None if rew is None else float(rew),
                    )
                )
            except (ValueError, KeyError, TypeError) as e:
                raise InputError(f"{path}:{lineno}: malformed frame ({e})") from None
    if skeleton is None:
        raise InputError(f"{path}: no frames")
    return skeleton, frames


def frames_to_arrays(skeleton: SkeletonSpec, frames: list[Frame]) -> PoseArrays:
    return PoseArrays.from_poses(skeleton, [f.pose for f in frames])
