"""Kinematic trees, poses and forward kinematics.

Joints are stored in topological order, so world transforms come out of a
single forward pass. A joint's world transform is

    parent_world * translate(offset) * rotate(local_rotation)

and the root joint hangs off the pose's root transform instead of a parent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import quat
from .errors import InputError, StructuralError

ROOT = -1
KINDS = ("revolute", "spherical", "fixed")


@dataclass(frozen=True)
class JointSpec:
    name: str
    parent: int
    kind: str
    offset: tuple[float, float, float]
    mass: float = 1.0
    axis: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise StructuralError(f"joint {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "revolute":
            if self.axis is None:
                raise StructuralError(f"revolute joint {self.name!r} needs an axis")
            if abs(np.linalg.norm(self.axis) - 1.0) >= 1e-9:
                raise StructuralError(f"joint {self.name!r}: axis is not unit length")
        if len(self.offset) != 3:
            raise StructuralError(f"joint {self.name!r}: offset must be a 3-vector")


@dataclass(frozen=True)
class SkeletonSpec:
    name: str
    joints: tuple[JointSpec, ...]
    foot_joints: tuple[int, ...]

    def __post_init__(self):
        if not self.joints:
            raise StructuralError("skeleton has no joints")
        roots = [i for i, j in enumerate(self.joints) if j.parent == ROOT]
        if roots != [0]:
            raise StructuralError("exactly one ROOT-parented joint is required, at index 0")
        names = [j.name for j in self.joints]
        if len(set(names)) != len(names):
            raise StructuralError("joint names must be unique")
        for i, j in enumerate(self.joints):
            if j.parent != ROOT and not 0 <= j.parent < i:
                raise StructuralError(f"joint {j.name!r}: parent must precede it")
            if not j.mass > 0:
                raise StructuralError(f"joint {j.name!r}: mass must be positive")
        if not self.foot_joints:
            raise StructuralError("foot_joints must be non-empty")
        for f in self.foot_joints:
            if not 0 <= f < len(self.joints):
                raise StructuralError(f"foot joint index {f} out of range")
        # derived lookup tables; frozen dataclass, hence object.__setattr__
        kinds = [j.kind for j in self.joints]
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})
        object.__setattr__(self, "movable", tuple(i for i, k in enumerate(kinds) if k != "fixed"))
        object.__setattr__(self, "revolute", tuple(i for i, k in enumerate(kinds) if k == "revolute"))
        object.__setattr__(self, "spherical", tuple(i for i, k in enumerate(kinds) if k == "spherical"))
        object.__setattr__(self, "parents", np.array([j.parent for j in self.joints]))
        object.__setattr__(self, "offsets", np.array([j.offset for j in self.joints], dtype=float))
        object.__setattr__(self, "masses", np.array([j.mass for j in self.joints], dtype=float))
        axes = np.zeros((len(self.joints), 3))
        for i in self.revolute:
            axes[i] = self.joints[i].axis
        object.__setattr__(self, "axes", axes)

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def joint_names(self) -> list[str]:
        return [j.name for j in self.joints]

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise StructuralError(f"skeleton {self.name!r} has no joint {name!r}") from None


@dataclass(frozen=True, eq=False)
class Pose:
    """Root transform plus one rotation per non-fixed joint.

    ``joint_rotations[k]`` belongs to ``skeleton.movable[k]``: a float angle
    for revolute joints, a unit quaternion for spherical ones.
    """

    root_translation: np.ndarray
    root_orientation: np.ndarray
    joint_rotations: tuple

    def __eq__(self, other):
        if not isinstance(other, Pose) or len(self.joint_rotations) != len(other.joint_rotations):
            return False
        return (
            np.array_equal(self.root_translation, other.root_translation)
            and np.array_equal(self.root_orientation, other.root_orientation)
            and all(np.array_equal(a, b) for a, b in zip(self.joint_rotations, other.joint_rotations))
        )


@dataclass(frozen=True)
class JointPose:
    position: np.ndarray
    orientation: np.ndarray


@dataclass(frozen=True, eq=False)
class PoseArrays:
    """Column-stacked poses: T frames of one skeleton."""

    root_translation: np.ndarray  # (T, 3)
    root_orientation: np.ndarray  # (T, 4)
    angles: np.ndarray  # (T, n_revolute)
    spherical: np.ndarray  # (T, n_spherical, 4)

    def __len__(self):
        return len(self.root_translation)

    def copy(self) -> PoseArrays:
        return PoseArrays(
            self.root_translation.copy(),
            self.root_orientation.copy(),
            self.angles.copy(),
            self.spherical.copy(),
        )

    def local_quaternions(self, skeleton: SkeletonSpec) -> np.ndarray:
        """(T, J, 4) local joint rotations, identity for fixed joints."""
        T = len(self)
        local = np.zeros((T, skeleton.n_joints, 4))
        local[..., 0] = 1.0
        if skeleton.revolute:
            rev = list(skeleton.revolute)
            local[:, rev] = quat.from_axis_angle(skeleton.axes[rev], self.angles)
        if skeleton.spherical:
            local[:, list(skeleton.spherical)] = self.spherical
        return local

    def frame(self, skeleton: SkeletonSpec, t: int) -> Pose:
        rev_pos = {j: k for k, j in enumerate(skeleton.revolute)}
        sph_pos = {j: k for k, j in enumerate(skeleton.spherical)}
        rots = []
        for j in skeleton.movable:
            if j in rev_pos:
                rots.append(float(self.angles[t, rev_pos[j]]))
            else:
                rots.append(self.spherical[t, sph_pos[j]].copy())
        return Pose(self.root_translation[t].copy(), self.root_orientation[t].copy(), tuple(rots))

    def to_poses(self, skeleton: SkeletonSpec) -> list[Pose]:
        return [self.frame(skeleton, t) for t in range(len(self))]

    @classmethod
    def from_poses(cls, skeleton: SkeletonSpec, poses: Sequence[Pose]) -> PoseArrays:
        for p in poses:
            check_pose(skeleton, p)
        slot = {j: k for k, j in enumerate(skeleton.movable)}
        T = len(poses)
        angles = np.zeros((T, len(skeleton.revolute)))
        sph = np.zeros((T, len(skeleton.spherical), 4))
        for t, p in enumerate(poses):
            for k, j in enumerate(skeleton.revolute):
                angles[t, k] = p.joint_rotations[slot[j]]
            for k, j in enumerate(skeleton.spherical):
                sph[t, k] = p.joint_rotations[slot[j]]
        root_t = np.array([p.root_translation for p in poses], dtype=float).reshape(T, 3)
        root_q = np.array([p.root_orientation for p in poses], dtype=float).reshape(T, 4)
        return cls(root_t, root_q, angles, sph)


@dataclass(frozen=True, eq=False)
class TrajectorySegment:
    skeleton: SkeletonSpec
    poses: tuple[Pose, ...]
    _arrays: PoseArrays | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if len(self.poses) < 1:
            raise StructuralError("a trajectory segment needs at least one pose")
        object.__setattr__(self, "poses", tuple(self.poses))

    @property
    def length(self) -> int:
        return len(self.poses)

    def __len__(self):
        return len(self.poses)

    def arrays(self) -> PoseArrays:
        if self._arrays is None:
            object.__setattr__(self, "_arrays", PoseArrays.from_poses(self.skeleton, self.poses))
        return self._arrays

    @classmethod
    def from_arrays(cls, skeleton: SkeletonSpec, arrays: PoseArrays) -> TrajectorySegment:
        return cls(skeleton, tuple(arrays.to_poses(skeleton)), arrays)


def check_pose(skeleton: SkeletonSpec, pose: Pose) -> None:
    if len(pose.joint_rotations) != len(skeleton.movable):
        raise StructuralError(
            f"pose has {len(pose.joint_rotations)} joint rotations, skeleton "
            f"{skeleton.name!r} has {len(skeleton.movable)} non-fixed joints"
        )
    if np.shape(pose.root_translation) != (3,) or np.shape(pose.root_orientation) != (4,):
        raise StructuralError("root translation must be a 3-vector and orientation a quaternion")
    if abs(np.linalg.norm(pose.root_orientation) - 1.0) > 1e-9:
        raise StructuralError("root orientation is not a unit quaternion")
    for j, r in zip(skeleton.movable, pose.joint_rotations):
        kind = skeleton.joints[j].kind
        if kind == "revolute" and np.ndim(r) != 0:
            raise StructuralError(f"joint {skeleton.joints[j].name!r} expects a scalar angle")
        if kind == "spherical" and np.shape(r) != (4,):
            raise StructuralError(f"joint {skeleton.joints[j].name!r} expects a quaternion")
        if kind == "spherical" and abs(np.linalg.norm(r) - 1.0) > 1e-9:
            raise StructuralError(f"joint {skeleton.joints[j].name!r}: quaternion is not unit length")


def zero_pose(skeleton: SkeletonSpec) -> Pose:
    rots = tuple(0.0 if skeleton.joints[j].kind == "revolute" else quat.IDENTITY.copy() for j in skeleton.movable)
    return Pose(np.zeros(3), quat.IDENTITY.copy(), rots)


def forward_kinematics_arrays(skeleton: SkeletonSpec, arrays: PoseArrays) -> tuple[np.ndarray, np.ndarray]:
    """World positions (T, J, 3) and canonical orientations (T, J, 4)."""
    local = arrays.local_quaternions(skeleton)
    T, J = local.shape[:2]
    pos = np.empty((T, J, 3))
    ori = np.empty((T, J, 4))
    for i in range(J):
        p = skeleton.parents[i]
        if p == ROOT:
            base_p, base_q = arrays.root_translation, arrays.root_orientation
        else:
            base_p, base_q = pos[:, p], ori[:, p]
        pos[:, i] = base_p + quat.rotate(base_q, skeleton.offsets[i])
        ori[:, i] = quat.normalize(quat.mul(base_q, local[:, i]))
    return pos, quat.canonical(ori)


def forward_kinematics(skeleton: SkeletonSpec, pose: Pose) -> list[JointPose]:
    arrays = PoseArrays.from_poses(skeleton, [pose])
    if not (np.all(np.isfinite(arrays.angles)) and np.all(np.isfinite(arrays.spherical))):
        raise InputError("pose contains non-finite rotations")
    pos, ori = forward_kinematics_arrays(skeleton, arrays)
    return [JointPose(pos[0, i], ori[0, i]) for i in range(skeleton.n_joints)]


def center_of_mass(skeleton: SkeletonSpec, joint_poses) -> np.ndarray:
    """Mass-weighted mean joint position.

    Accepts a list of JointPose or a position array whose second-to-last
    axis indexes joints.
    """
    if isinstance(joint_poses, (list, tuple)):
        if not joint_poses:
            raise StructuralError("center of mass of an empty skeleton")
        positions = np.array([jp.position for jp in joint_poses])
    else:
        positions = np.asarray(joint_poses, dtype=float)
    if positions.shape[-2] != skeleton.n_joints:
        raise StructuralError("joint count does not match skeleton")
    m = skeleton.masses
    return np.einsum("j,...jk->...k", m, positions) / m.sum()


# ---------------------------------------------------------------- file io


def skeleton_from_dict(doc: dict) -> SkeletonSpec:
    joints = []
    index: dict[str, int] = {}
    for k, entry in enumerate(doc["joints"]):
        parent_name = entry.get("parent")
        if parent_name is None:
            parent = ROOT
        elif parent_name in index:
            parent = index[parent_name]
        else:
            raise StructuralError(f"joint {entry['name']!r}: parent {parent_name!r} not defined before it")
        axis = entry.get("axis")
        joints.append(
            JointSpec(
                name=entry["name"],
                parent=parent,
                kind=entry.get("kind", "fixed"),
                offset=tuple(float(x) for x in entry.get("offset", (0.0, 0.0, 0.0))),
                mass=float(entry.get("mass", 1.0)),
                axis=None if axis is None else tuple(float(x) for x in axis),
            )
        )
        index[entry["name"]] = k
    try:
        feet = tuple(index[n] for n in doc.get("foot_joints", ()))
    except KeyError as e:
        raise StructuralError(f"unknown foot joint {e.args[0]!r}") from None
    return SkeletonSpec(doc.get("name", "skeleton"), tuple(joints), feet)


def skeleton_to_dict(skeleton: SkeletonSpec) -> dict:
    out = []
    for j in skeleton.joints:
        entry = {
            "name": j.name,
            "parent": None if j.parent == ROOT else skeleton.joints[j.parent].name,
            "kind": j.kind,
            "offset": list(j.offset),
            "mass": j.mass,
        }
        if j.axis is not None:
            entry["axis"] = list(j.axis)
        out.append(entry)
    return {
        "name": skeleton.name,
        "foot_joints": [skeleton.joints[f].name for f in skeleton.foot_joints],
        "joints": out,
    }


def load_skeleton(path) -> SkeletonSpec:
    with open(path) as fh:
        return skeleton_from_dict(yaml.safe_load(fh))


def bundled_path(name: str) -> Path:
    """Path of a data file shipped with the package (e.g. ``human.yaml``)."""
    return Path(str(resources.files("stabshape") / "data" / name))


def bundled_skeleton(name: str) -> SkeletonSpec:
    """One of ``human``, ``planar_biped``, ``pendulum3``, ``mini_humanoid``."""
    return load_skeleton(bundled_path(f"{name}.yaml"))
