"""Robot-to-human pose mapping over aligned zero poses.

Both skeletons share a zero pose. A mapped human joint takes the rotation of
its robot counterpart(s); human joints without a counterpart stay at rest.
Three serial revolute robot joints can drive one spherical human joint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import yaml

from . import quat
from .errors import StructuralError
from .skeleton import (
    Pose,
    PoseArrays,
    SkeletonSpec,
    TrajectorySegment,
    bundled_path,
    bundled_skeleton,
)

ENTRY_KINDS = ("one_to_one", "triple_to_spherical", "human_redundant", "robot_ignored")


@dataclass(frozen=True)
class MappingEntry:
    kind: str
    robot_joints: tuple[str, ...] = ()
    human_joint: str | None = None
    # triple entries: indices into robot_joints giving the angles that play
    # theta_1, theta_2, theta_3 in R(a3, t3) R(a2, t2) R(a1, t1)
    order: tuple[int, ...] = (0, 1, 2)


@dataclass(frozen=True, eq=False)
class MappingTable:
    robot: SkeletonSpec
    human: SkeletonSpec
    entries: tuple[MappingEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "_plan", None)

    def plan(self) -> "_MappingPlan":
        if self._plan is None:
            problems = validate_mapping(self)
            if problems:
                raise StructuralError("invalid mapping table: " + "; ".join(problems))
            object.__setattr__(self, "_plan", _MappingPlan.build(self))
        return self._plan


def validate_mapping(table: MappingTable) -> list[str]:
    """Every problem found in ``table``; an empty list means it is usable."""
    robot, human = table.robot, table.human
    report: list[str] = []
    robot_seen: dict[str, int] = {}
    human_seen: dict[str, int] = {}

    def known(skel, name, side):
        if name not in skel.joint_names:
            report.append(f"unknown {side} joint {name!r}")
            return False
        return True

    for k, e in enumerate(table.entries):
        if e.kind not in ENTRY_KINDS:
            report.append(f"entry {k}: unknown kind {e.kind!r}")
            continue
        for name in e.robot_joints:
            robot_seen[name] = robot_seen.get(name, 0) + 1
        if e.human_joint is not None:
            human_seen[e.human_joint] = human_seen.get(e.human_joint, 0) + 1

        if e.kind == "one_to_one":
            if len(e.robot_joints) != 1 or e.human_joint is None:
                report.append(f"entry {k}: one_to_one needs one robot and one human joint")
                continue
            if not (known(robot, e.robot_joints[0], "robot") & known(human, e.human_joint, "human")):
                continue
            rj = robot.joints[robot.index(e.robot_joints[0])]
            hj = human.joints[human.index(e.human_joint)]
            if rj.kind == "fixed" or hj.kind == "fixed":
                report.append(f"entry {k}: fixed joints cannot be mapped ({rj.name} -> {hj.name})")
            elif rj.kind == "spherical" and hj.kind == "revolute":
                report.append(f"entry {k}: spherical {rj.name} cannot drive revolute {hj.name}")
            elif rj.kind == "revolute" and hj.kind == "revolute":
                if abs(abs(np.dot(rj.axis, hj.axis)) - 1.0) > 1e-9:
                    report.append(f"entry {k}: axis mismatch between {rj.name} and {hj.name}")
        elif e.kind == "triple_to_spherical":
            if len(e.robot_joints) != 3 or e.human_joint is None:
                report.append(f"entry {k}: triple_to_spherical needs three robot joints and a human joint")
                continue
            if sorted(e.order) != [0, 1, 2]:
                report.append(f"entry {k}: order must be a permutation of 0, 1, 2")
            if len(set(e.robot_joints)) != 3:
                report.append(f"entry {k}: triple robot joints must be distinct")
            ok = all([known(robot, n, "robot") for n in e.robot_joints])
            ok = known(human, e.human_joint, "human") and ok
            if not ok:
                continue
            joints = [robot.joints[robot.index(n)] for n in e.robot_joints]
            if any(j.kind != "revolute" for j in joints):
                report.append(f"entry {k}: triple joints must all be revolute")
                continue
            if human.joints[human.index(e.human_joint)].kind != "spherical":
                report.append(f"entry {k}: {e.human_joint} is not spherical")
            if abs(np.linalg.det(np.array([j.axis for j in joints]))) < 1e-6:
                report.append(f"entry {k}: degenerate axes (triple {', '.join(e.robot_joints)} is rank deficient)")
        elif e.kind == "human_redundant":
            if e.robot_joints or e.human_joint is None:
                report.append(f"entry {k}: human_redundant takes exactly one human joint")
            else:
                known(human, e.human_joint, "human")
        else:  # robot_ignored
            if len(e.robot_joints) != 1 or e.human_joint is not None:
                report.append(f"entry {k}: robot_ignored takes exactly one robot joint")
            else:
                known(robot, e.robot_joints[0], "robot")

    for name, n in human_seen.items():
        if n > 1:
            report.append(f"human joint {name!r} covered by {n} entries")
    for name, n in robot_seen.items():
        if n > 1:
            report.append(f"robot joint {name!r} covered by {n} entries")
    for name in human.joint_names:
        if name not in human_seen:
            report.append(f"human joint {name!r} is not covered")
    for j in robot.movable:
        name = robot.joints[j].name
        if name not in robot_seen:
            report.append(f"robot joint {name!r} is not covered")
    return report


def _check_axes(axes: np.ndarray) -> None:
    if abs(np.linalg.det(axes)) < 1e-6:
        raise StructuralError("degenerate axes: revolute triple is rank deficient")


def compose_revolute_triple(angles, axes, order=(0, 1, 2)) -> np.ndarray:
    """R(a3, t3) * R(a2, t2) * R(a1, t1), where (a_k, t_k) = (axes[order[k-1]], angles[order[k-1]])."""
    angles = np.asarray(angles, dtype=float)
    axes = np.asarray(axes, dtype=float)
    _check_axes(axes)
    o = list(order)
    r1 = quat.from_axis_angle(axes[o[0]], angles[..., o[0]])
    r2 = quat.from_axis_angle(axes[o[1]], angles[..., o[1]])
    r3 = quat.from_axis_angle(axes[o[2]], angles[..., o[2]])
    return quat.normalize(quat.mul(r3, quat.mul(r2, r1)))


def _signed_angle(axis, src, dst):
    """Angle about ``axis`` turning the projection of src onto that of dst."""
    src = src - axis * np.dot(axis, src)
    dst = dst - axis * np.dot(axis, dst)
    ns, nd = np.linalg.norm(src), np.linalg.norm(dst)
    if ns < 1e-9 or nd < 1e-9:
        raise StructuralError("gimbal-locked triple: decomposition is not unique")
    return np.arctan2(np.dot(axis, np.cross(src, dst)), np.dot(src, dst))


def decompose_revolute_triple(q, axes, order=(0, 1, 2)) -> np.ndarray:
    """Angles (in ``axes`` listing order) whose composition reproduces ``q``.

    Inverse of :func:`compose_revolute_triple` away from gimbal lock.
    """
    axes = np.asarray(axes, dtype=float)
    _check_axes(axes)
    o = list(order)
    a1, a2, a3 = axes[o[0]], axes[o[1]], axes[o[2]]
    R = quat.to_matrix(q)
    # a3' R a1 depends on the middle angle only
    c23, c21 = np.dot(a3, a2), np.dot(a2, a1)
    A = np.dot(a3, a1) - c23 * c21
    B = np.dot(a3, np.cross(a2, a1))
    C = a3 @ R @ a1 - c23 * c21
    r = np.hypot(A, B)
    if r < 1e-12:
        raise StructuralError("gimbal-locked triple: decomposition is not unique")
    phi = np.arctan2(B, A)
    spread = np.arccos(np.clip(C / r, -1.0, 1.0))
    cands = []
    for t2 in (phi + spread, phi - spread):
        R2 = quat.to_matrix(quat.from_axis_angle(a2, t2))
        t3 = _signed_angle(a3, R2 @ a1, R @ a1)
        t1 = _signed_angle(a1, R.T @ a3, R2.T @ a3)
        cand = np.empty(3)
        cand[o[0]], cand[o[1]], cand[o[2]] = t1, t2, t3
        cand = (cand + np.pi) % (2.0 * np.pi) - np.pi
        cands.append((float(quat.angle_between(compose_revolute_triple(cand, axes, order), q)), cand))
    # both branches usually reproduce q; take the one whose middle angle is nearest zero
    best_err = min(e for e, _ in cands)
    ok = [c for e, c in cands if e <= best_err + 1e-12]
    return min(ok, key=lambda c: abs(c[o[1]]))


@dataclass
class _MappingPlan:
    one_rev_rev: list  # (robot revolute slot, human revolute slot, sign)
    one_rev_sph: list  # (robot revolute slot, human spherical slot, axis)
    one_sph_sph: list  # (robot spherical slot, human spherical slot)
    triples: list  # (robot revolute slots, axes, order, human spherical slot)

    @classmethod
    def build(cls, table: MappingTable) -> _MappingPlan:
        robot, human = table.robot, table.human
        r_rev = {j: k for k, j in enumerate(robot.revolute)}
        r_sph = {j: k for k, j in enumerate(robot.spherical)}
        h_rev = {j: k for k, j in enumerate(human.revolute)}
        h_sph = {j: k for k, j in enumerate(human.spherical)}
        plan = cls([], [], [], [])
        for e in table.entries:
            if e.kind == "one_to_one":
                rj = robot.index(e.robot_joints[0])
                hj = human.index(e.human_joint)
                if rj in r_rev and hj in h_rev:
                    sign = float(np.sign(np.dot(robot.axes[rj], human.axes[hj])))
                    plan.one_rev_rev.append((r_rev[rj], h_rev[hj], sign))
                elif rj in r_rev:
                    plan.one_rev_sph.append((r_rev[rj], h_sph[hj], robot.axes[rj].copy()))
                else:
                    plan.one_sph_sph.append((r_sph[rj], h_sph[hj]))
            elif e.kind == "triple_to_spherical":
                idx = [robot.index(n) for n in e.robot_joints]
                plan.triples.append(
                    ([r_rev[j] for j in idx], robot.axes[idx].copy(), tuple(e.order), h_sph[human.index(e.human_joint)])
                )
        return plan


def map_arrays(table: MappingTable, robot: PoseArrays) -> PoseArrays:
    """Batched :func:`map_robot_to_human` over stacked frames."""
    plan = table.plan()
    T = len(robot)
    if robot.angles.shape != (T, len(table.robot.revolute)) or robot.spherical.shape != (
        T,
        len(table.robot.spherical),
        4,
    ):
        raise StructuralError("robot pose arrays do not match the robot skeleton")
    angles = np.zeros((T, len(table.human.revolute)))
    sph = np.zeros((T, len(table.human.spherical), 4))
    sph[..., 0] = 1.0
    for r, h, sign in plan.one_rev_rev:
        angles[:, h] = sign * robot.angles[:, r]
    for r, h, axis in plan.one_rev_sph:
        sph[:, h] = quat.from_axis_angle(axis, robot.angles[:, r])
    for r, h in plan.one_sph_sph:
        sph[:, h] = robot.spherical[:, r]
    for slots, axes, order, h in plan.triples:
        sph[:, h] = compose_revolute_triple(robot.angles[:, slots], axes, order)
    return PoseArrays(robot.root_translation.copy(), robot.root_orientation.copy(), angles, sph)


def map_robot_to_human(table: MappingTable, robot_pose: Pose) -> Pose:
    arrays = PoseArrays.from_poses(table.robot, [robot_pose])
    return map_arrays(table, arrays).frame(table.human, 0)


def map_segment(table: MappingTable, robot_segment: TrajectorySegment) -> TrajectorySegment:
    if robot_segment.skeleton != table.robot:
        raise StructuralError("segment skeleton is not the table's robot skeleton")
    return TrajectorySegment.from_arrays(table.human, map_arrays(table, robot_segment.arrays()))


# ---------------------------------------------------------------- file io


def _names(value) -> list[str]:
    if value is None:
        return []
    return [value] if isinstance(value, str) else list(value)


def mapping_from_dict(doc: dict, robot: SkeletonSpec, human: SkeletonSpec) -> MappingTable:
    entries = []
    for raw in doc.get("entries", []):
        kind = raw.get("kind")
        if kind == "human_redundant":
            entries += [MappingEntry(kind, human_joint=n) for n in _names(raw.get("human"))]
        elif kind == "robot_ignored":
            entries += [MappingEntry(kind, robot_joints=(n,)) for n in _names(raw.get("robot"))]
        else:
            entries.append(
                MappingEntry(
                    kind,
                    robot_joints=tuple(_names(raw.get("robot"))),
                    human_joint=raw.get("human"),
                    order=tuple(raw.get("order", (0, 1, 2))),
                )
            )
    return MappingTable(robot, human, tuple(entries))


def load_mapping(path, robot: SkeletonSpec | None = None, human: SkeletonSpec | None = None) -> MappingTable:
    """Read a mapping file; skeletons default to the bundled ones it names."""
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    robot = robot or bundled_skeleton(doc["robot"])
    human = human or bundled_skeleton(doc.get("human", "human"))
    return mapping_from_dict(doc, robot, human)


def bundled_mapping(robot_name: str) -> MappingTable:
    return load_mapping(bundled_path(f"{robot_name}_to_human.yaml"))


def mapping_to_dict(table: MappingTable) -> dict:
    entries: list[dict] = []
    for e in table.entries:
        d: dict = {"kind": e.kind}
        if e.robot_joints:
            d["robot"] = e.robot_joints[0] if len(e.robot_joints) == 1 else list(e.robot_joints)
        if e.human_joint is not None:
            d["human"] = e.human_joint
        if e.kind == "triple_to_spherical":
            d["order"] = list(e.order)
        entries.append(d)
    return {"robot": table.robot.name, "human": table.human.name, "entries": entries}

