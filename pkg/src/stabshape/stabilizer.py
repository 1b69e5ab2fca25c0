"""Motion reconstruction: noisy human segment in, stable human segment out.

:class:`BalanceProjectionReconstructor` is a deterministic stand-in for a
learned reconstruction model. It runs three passes over a segment:

1. clamp joint rotations to the joint-limit table,
2. low-pass the joint rotations (jointly with the limits),
3. lean each unbalanced frame over its feet.

Every pass is a projection onto a constraint set, so reconstructing an
already reconstructed segment changes nothing.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass, field

import numpy as np
import yaml
from scipy.fft import dct, idct
from scipy.optimize import minimize_scalar

from . import quat
from .errors import ContractError, InputError
from .skeleton import (
    Pose,
    PoseArrays,
    SkeletonSpec,
    TrajectorySegment,
    bundled_path,
    center_of_mass,
    forward_kinematics,
    forward_kinematics_arrays,
)


def load_joint_limits(path) -> dict[str, tuple[float, float]]:
    """YAML mapping of joint name -> [min, max] radians."""
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    return {str(k): (float(v[0]), float(v[1])) for k, v in doc.items()}


def _default_limits() -> dict[str, tuple[float, float]]:
    return load_joint_limits(bundled_path("human_limits.yaml"))


@dataclass
class StabilizerConfig:
    smoothing_window: int = 9
    com_margin: float = 0.02
    max_root_correction: float = 1.0
    foot_extent: float = 0.05
    min_length: int = 8
    max_length: int = 145
    joint_limit_table: dict[str, tuple[float, float]] = field(default_factory=_default_limits)

    def __post_init__(self):
        if self.smoothing_window < 1 or self.smoothing_window % 2 == 0:
            raise ValueError("smoothing_window must be an odd integer >= 1")
        if self.com_margin < 0:
            raise ValueError("com_margin must be >= 0")
        if not self.max_root_correction > 0:
            raise ValueError("max_root_correction must be > 0")
        if self.foot_extent < 0:
            raise ValueError("foot_extent must be >= 0")
        if not 1 <= self.min_length <= self.max_length:
            raise ValueError("need 1 <= min_length <= max_length")
        for name, (lo, hi) in self.joint_limit_table.items():
            if not lo <= hi:
                raise ValueError(f"joint limit for {name!r} has min > max")


# ---------------------------------------------------------------- polygons


def convex_hull(points) -> np.ndarray:
    """Counterclockwise hull of 2D points (monotone chain); may be 1 or 2 points."""
    # plain floats: this runs inside the lean search, where numpy scalars are slow
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float).reshape(-1, 2).tolist())))
    if len(pts) <= 2:
        return np.array(pts, dtype=float).reshape(-1, 2)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 1e-15:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 1e-15:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def _closest_on_segment(p, a, b):
    ab = b - a
    denom = ab @ ab
    t = 0.0 if denom == 0.0 else min(1.0, max(0.0, (p - a) @ ab / denom))
    return a + t * ab


@dataclass(frozen=True, eq=False)
class SupportPolygon:
    """Convex counterclockwise region of the ground plane.

    One or two vertices describe a point or a segment.
    """

    vertices: np.ndarray

    def _edges(self):
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        d = w - v
        n = np.stack([d[:, 1], -d[:, 0]], axis=1)  # outward for CCW order
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        return v, w, n

    def closest_point(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        v = self.vertices
        if len(v) == 0:
            raise ContractError("empty polygon")
        if len(v) >= 3 and self._depth(p) <= 0.0:
            return p.copy()
        return self._boundary_point(p)

    def _depth(self, p) -> float:
        a, _, n = self._edges()
        return float(np.max(np.sum((p - a) * n, axis=1)))

    def _boundary_point(self, p) -> np.ndarray:
        v = self.vertices
        if len(v) == 1:
            return v[0].copy()
        best, best_d = None, np.inf
        for a, b in zip(v, np.roll(v, -1, axis=0)):
            c = _closest_on_segment(p, a, b)
            d = np.sum((p - c) ** 2)
            if d < best_d:
                best, best_d = c, d
        return best

    def signed_distance(self, p) -> float:
        """Distance outside the polygon; negative depth when inside."""
        p = np.asarray(p, dtype=float)
        v = self.vertices
        if len(v) >= 3:
            depth = self._depth(p)
            if depth <= 0.0:
                return depth
        return float(np.linalg.norm(p - self._boundary_point(p)))

    def contains(self, p, margin: float = 0.0, tol: float = 1e-9) -> bool:
        return self.signed_distance(p) <= -margin + tol

    def shrink(self, margin: float) -> SupportPolygon:
        """Inward offset by ``margin`` (possibly empty)."""
        v = self.vertices
        if margin == 0.0:
            return self
        if len(v) < 3:
            return SupportPolygon(np.zeros((0, 2)))
        a, _, n = self._edges()
        lo, hi = v.min(axis=0) - 1.0, v.max(axis=0) + 1.0
        poly = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
        for ai, ni in zip(a, n):
            poly = _clip(poly, ni, ni @ ai - margin)
            if len(poly) == 0:
                break
        return SupportPolygon(convex_hull(poly) if len(poly) else poly)

    def inflate(self, radius: float, n_arc: int = 16) -> SupportPolygon:
        """Minkowski sum with a regular n_arc-gon circumscribing a disc of ``radius``.

        The n-gon's edges face the angles 2*pi*k/n_arc, so the grown polygon
        contains the exact disc-grown region and touches it along +-x, +-y.
        """
        if radius == 0.0:
            return self
        ang = (2.0 * np.arange(n_arc) + 1.0) * np.pi / n_arc
        rho = radius / math.cos(np.pi / n_arc)
        disc = rho * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        return SupportPolygon(convex_hull((self.vertices[:, None, :] + disc[None]).reshape(-1, 2)))


def _clip(poly, normal, offset):
    """Sutherland-Hodgman clip of a convex polygon to normal . x <= offset."""
    out = []
    k = len(poly)
    for i in range(k):
        p, q = poly[i], poly[(i + 1) % k]
        fp, fq = normal @ p - offset, normal @ q - offset
        if fp <= 0:
            out.append(p)
        if fp * fq < 0:
            out.append(p + (q - p) * (fp / (fp - fq)))
    return np.array(out).reshape(-1, 2)


def _deepest_point(polygon: SupportPolygon) -> np.ndarray:
    return polygon.vertices.mean(axis=0)


def _margin_target(polygon: SupportPolygon, margin: float, p) -> np.ndarray:
    """Closest point to ``p`` inside the polygon shrunk by ``margin``."""
    shrunk = polygon.shrink(margin)
    if len(shrunk.vertices) == 0:
        return _deepest_point(polygon)
    return shrunk.closest_point(p)


def _hull_distance(hull: np.ndarray, p: np.ndarray) -> tuple[float, np.ndarray]:
    """Signed distance from p to a (possibly degenerate) hull, and the closest point."""
    px, py = float(p[0]), float(p[1])
    verts = hull.tolist()
    k = len(verts)
    if k == 1:
        return math.hypot(px - verts[0][0], py - verts[0][1]), hull[0]
    best, best_c = math.inf, None
    depth = -math.inf
    for i in range(k):
        ax, ay = verts[i]
        bx, by = verts[(i + 1) % k]
        dx, dy = bx - ax, by - ay
        L2 = dx * dx + dy * dy
        t = min(1.0, max(0.0, ((px - ax) * dx + (py - ay) * dy) / L2))
        cx, cy = ax + t * dx, ay + t * dy
        d = math.hypot(px - cx, py - cy)
        if d < best:
            best, best_c = d, (cx, cy)
        depth = max(depth, ((px - ax) * dy - (py - ay) * dx) / math.sqrt(L2))
    if k >= 3 and depth <= 0.0:
        return depth, p
    return best, np.array(best_c)


def _disc_gap(foot_xy: np.ndarray, com_xy: np.ndarray, extent: float, margin: float):
    """CoM distance outside the foot hull grown by (extent - margin), and the target point."""
    hull = convex_hull(foot_xy)
    sd, closest = _hull_distance(hull, com_xy)
    reach = extent - margin
    gap = sd - reach
    if gap <= 0.0:
        return gap, com_xy
    if reach >= 0.0:
        u = com_xy - closest
        return gap, closest + u * (reach / np.linalg.norm(u))
    # margin beyond the foot extent: aim for the hull interior
    return gap, hull.mean(axis=0)


def support_polygon(skeleton: SkeletonSpec, joint_poses, foot_extent: float = 0.05) -> SupportPolygon:
    """Ground-plane hull of the foot joints, grown by ``foot_extent``."""
    if isinstance(joint_poses, (list, tuple)):
        positions = np.array([jp.position for jp in joint_poses])
    else:
        positions = np.asarray(joint_poses, dtype=float)
    feet = positions[list(skeleton.foot_joints), :2]
    return SupportPolygon(convex_hull(feet)).inflate(foot_extent)


def project_com_to_support(
    pose: Pose, skeleton: SkeletonSpec, polygon: SupportPolygon, config: StabilizerConfig
) -> Pose:
    """Slide the root horizontally until the CoM is over ``polygon`` (held fixed).

    The shift is the closest-point vector onto the margin-shrunk polygon,
    capped at ``config.max_root_correction``.
    """
    com = center_of_mass(skeleton, forward_kinematics(skeleton, pose))[:2]
    if polygon.contains(com, config.com_margin):
        return pose
    shift = _margin_target(polygon, config.com_margin, com) - com
    n = np.linalg.norm(shift)
    if n > config.max_root_correction:
        shift *= config.max_root_correction / n
    root = pose.root_translation.copy()
    root[:2] += shift
    return Pose(root, pose.root_orientation.copy(), pose.joint_rotations)


def _rotate_about(points, pivot, rot):
    return pivot + (points - pivot) @ rot.T


def lean_over_support(
    skeleton: SkeletonSpec,
    positions: np.ndarray,
    root_translation: np.ndarray,
    root_orientation: np.ndarray,
    config: StabilizerConfig,
    cap: float | None = None,
):
    """Tilt one frame rigidly about a ground pivot until its CoM is balanced.

    Translating the whole body cannot move the CoM relative to its own feet,
    so the correction is a rotation about a horizontal axis through the
    balance target (an ankle-strategy lean). The smallest such angle is
    bracketed from a linearized guess (or the bottom of the gap curve) and
    refined with the Illinois method. Balance is
    judged against the foot hull grown by a true disc, which lies inside the
    polygon returned by :func:`support_polygon`. Frames whose lean
    would displace the root by more than ``cap`` (default
    ``max_root_correction``) are returned unchanged.

    Returns (root_translation, root_orientation, gap_before, root_shift).
    """
    feet = list(skeleton.foot_joints)
    m = skeleton.masses / skeleton.masses.sum()
    extent, margin = config.foot_extent, config.com_margin

    def gap(pos):
        return _disc_gap(pos[feet, :2], m @ pos[:, :2], extent, margin)

    g0, target = gap(positions)
    if g0 <= 1e-12:
        return root_translation, root_orientation, g0, 0.0
    com = m @ positions[:, :2]
    u = (target - com) / np.linalg.norm(target - com)
    axis = np.array([-u[1], u[0], 0.0])  # z x u: a positive angle leans toward u
    pivot = np.array([target[0], target[1], positions[feet, 2].min()])

    r = root_translation - pivot
    r_perp = np.linalg.norm(r - axis * (axis @ r))
    cap = config.max_root_correction if cap is None else cap
    if cap <= 0.0:
        return root_translation, root_orientation, g0, 0.0
    max_angle = 0.5 * np.pi
    if 2.0 * r_perp > cap:
        max_angle = min(2.0 * math.asin(cap / (2.0 * r_perp)), max_angle)

    kx = np.array([[0.0, -axis[2], axis[1]], [axis[2], 0.0, -axis[0]], [-axis[1], axis[0], 0.0]])
    kx2 = kx @ kx

    def tilt(angle):
        return np.eye(3) + math.sin(angle) * kx + (1.0 - math.cos(angle)) * kx2

    def gap_at(angle):
        return gap(_rotate_about(positions, pivot, tilt(angle)))[0]

    lo, g_lo, hi, g_hi = 0.0, g0, None, None
    # linearized first guess: the CoM moves about (height above pivot) per radian
    lever = float(m @ (positions[:, 2] - pivot[2]))
    if lever > 1e-9:
        a = min(1.05 * g0 / lever, max_angle)
        ga = gap_at(a)
        if ga <= 0.0:
            hi, g_hi = a, ga
    if hi is None:
        # the gap is a convex-like bowl in the lean angle; look for its bottom
        res = minimize_scalar(gap_at, bounds=(0.0, max_angle), method="bounded", options={"xatol": 1e-9})
        if res.fun <= 0.0:
            hi, g_hi = float(res.x), float(res.fun)
    if hi is None:
        # a partial lean would be undone-and-redone on every pass; leave the
        # frame as is so reconstruction stays idempotent
        return root_translation, root_orientation, g0, 0.0
    else:
        side = 0
        for _ in range(100):
            if hi - lo < 1e-13 or g_hi > -1e-10:
                break
            mid = (lo * g_hi - hi * g_lo) / (g_hi - g_lo)
            if not lo < mid < hi:
                mid = 0.5 * (lo + hi)
            gm = gap_at(mid)
            if gm <= 0.0:
                hi, g_hi = mid, gm
                if side == -1:
                    g_lo *= 0.5
                side = -1
            else:
                lo, g_lo = mid, gm
                if side == 1:
                    g_hi *= 0.5
                side = 1
        angle = hi
    rot = tilt(angle)
    new_root = pivot + rot @ r
    q = quat.canonical(quat.normalize(quat.mul(quat.from_axis_angle(axis, angle), root_orientation)))
    return new_root, q, g0, float(np.linalg.norm(new_root - root_translation))


# ---------------------------------------------------------------- smoothing


def _lowpass_modes(length: int, window: int) -> int:
    # a width-w moving average first zeroes at 1/w cycles per frame; keep the
    # cosine modes below that frequency
    return max(1, min(length, math.ceil(2.0 * length / window)))


def _lowpass(x: np.ndarray, keep: int) -> np.ndarray:
    if keep >= x.shape[0]:
        return x
    c = dct(x, type=2, norm="ortho", axis=0)
    c[keep:] = 0.0
    return idct(c, type=2, norm="ortho", axis=0)


def _smooth_with_limits(x: np.ndarray, keep: int, lo, hi, tol=1e-12, max_iter=2000) -> np.ndarray:
    """Alternate low-pass and clamp until the signal satisfies both."""
    y = np.clip(_lowpass(x, keep), lo, hi)
    if keep >= x.shape[0]:
        return y
    for _ in range(max_iter):
        z = np.clip(_lowpass(y, keep), lo, hi)
        if np.max(np.abs(z - y)) < tol:
            return z
        y = z
    return y


def roughness(skeleton: SkeletonSpec, arrays: PoseArrays) -> float:
    """Mean squared frame-to-frame geodesic change of the joint rotations."""
    local = arrays.local_quaternions(skeleton)[:, list(skeleton.movable)]
    if len(arrays) < 2 or local.shape[1] == 0:
        return 0.0
    d = quat.angle_between(local[1:], local[:-1])
    return float(np.mean(d**2))


# ---------------------------------------------------------------- reconstructors


class MotionReconstructor(abc.ABC):
    """Maps a human trajectory segment to a stable one of the same length.

    Implementations hold no mutable state between calls.
    """

    min_length: int = 1
    max_length: int = 145

    def reconstruct(self, segment: TrajectorySegment) -> TrajectorySegment:
        self.check(segment)
        return self._reconstruct(segment)

    def check(self, segment: TrajectorySegment) -> None:
        if not self.min_length <= segment.length <= self.max_length:
            raise ContractError(
                f"segment length {segment.length} outside [{self.min_length}, {self.max_length}]"
            )
        a = segment.arrays()
        for arr in (a.root_translation, a.root_orientation, a.angles, a.spherical):
            if not np.all(np.isfinite(arr)):
                raise InputError("segment contains non-finite pose values")

    @abc.abstractmethod
    def _reconstruct(self, segment: TrajectorySegment) -> TrajectorySegment: ...


class IdentityReconstructor(MotionReconstructor):
    def __init__(self, min_length: int = 1, max_length: int = 145):
        self.min_length = min_length
        self.max_length = max_length

    def _reconstruct(self, segment):
        return segment


@dataclass
class Diagnostics:
    com_violation_distance: np.ndarray  # per frame, metres outside the shrunk polygon
    correction_magnitude: np.ndarray  # per frame, total root displacement


class BalanceProjectionReconstructor(MotionReconstructor):
    def __init__(self, config: StabilizerConfig | None = None):
        self.config = config or StabilizerConfig()
        self.min_length = self.config.min_length
        self.max_length = self.config.max_length

    def _reconstruct(self, segment):
        out, _ = self.reconstruct_arrays(segment.skeleton, segment.arrays())
        return TrajectorySegment.from_arrays(segment.skeleton, out)

    def reconstruct_with_diagnostics(self, segment: TrajectorySegment):
        self.check(segment)
        out, diag = self.reconstruct_arrays(segment.skeleton, segment.arrays())
        return TrajectorySegment.from_arrays(segment.skeleton, out), diag

    def _limits(self, skeleton: SkeletonSpec, joints) -> tuple[np.ndarray, np.ndarray]:
        table = self.config.joint_limit_table
        lo = np.array([table.get(skeleton.joints[j].name, (-np.inf, np.inf))[0] for j in joints])
        hi = np.array([table.get(skeleton.joints[j].name, (-np.inf, np.inf))[1] for j in joints])
        return lo, hi

    def clamp(self, skeleton: SkeletonSpec, arrays: PoseArrays) -> PoseArrays:
        out = arrays.copy()
        lo, hi = self._limits(skeleton, skeleton.revolute)
        out.angles[:] = np.clip(out.angles, lo, hi)
        lo, hi = self._limits(skeleton, skeleton.spherical)
        if len(skeleton.spherical):
            rv = np.clip(quat.log(out.spherical), lo[None, :, None], hi[None, :, None])
            out.spherical[:] = quat.canonical(quat.exp(rv))
        return out

    def smooth(self, skeleton: SkeletonSpec, arrays: PoseArrays) -> PoseArrays:
        out = arrays.copy()
        keep = _lowpass_modes(len(arrays), self.config.smoothing_window)
        if keep >= len(arrays):
            return out
        lo, hi = self._limits(skeleton, skeleton.revolute)
        if len(skeleton.revolute):
            out.angles[:] = _smooth_with_limits(out.angles, keep, lo, hi)
        lo, hi = self._limits(skeleton, skeleton.spherical)
        if len(skeleton.spherical):
            rv = quat.log(out.spherical)
            T, S, _ = rv.shape
            flat = rv.reshape(T, S * 3)
            flat = _smooth_with_limits(flat, keep, np.repeat(lo, 3), np.repeat(hi, 3))
            out.spherical[:] = quat.canonical(quat.exp(flat.reshape(T, S, 3)))
        return out

    def balance(self, skeleton: SkeletonSpec, arrays: PoseArrays, budget=None):
        """Lean every unbalanced frame over its feet; returns (arrays, gaps, shifts).

        ``budget`` optionally gives a per-frame displacement allowance.
        """
        out = arrays.copy()
        pos, _ = forward_kinematics_arrays(skeleton, out)
        gaps = np.zeros(len(out))
        shifts = np.zeros(len(out))
        for t in range(len(out)):
            rt, rq, g, s = lean_over_support(
                skeleton, pos[t], out.root_translation[t], out.root_orientation[t], self.config,
                None if budget is None else float(budget[t]),
            )
            out.root_translation[t] = rt
            out.root_orientation[t] = rq
            gaps[t], shifts[t] = max(g, 0.0), s
        return out, gaps, shifts

    def reconstruct_arrays(self, skeleton: SkeletonSpec, arrays: PoseArrays):
        start = arrays.root_translation.copy()
        a = self.clamp(skeleton, arrays)
        # smoothing leaves the root alone, so one balance pass at the end suffices
        a = self.smooth(skeleton, a)
        a, gaps, _ = self.balance(skeleton, a)
        moved = np.linalg.norm(a.root_translation - start, axis=1)
        return a, Diagnostics(gaps, moved)


def reconstruct(reconstructor: MotionReconstructor, segment: TrajectorySegment) -> TrajectorySegment:
    return reconstructor.reconstruct(segment)


def com_balance_gaps(skeleton: SkeletonSpec, arrays: PoseArrays, config: StabilizerConfig) -> np.ndarray:
    """Per-frame CoM distance outside the frame's own margin-shrunk support polygon."""
    pos, _ = forward_kinematics_arrays(skeleton, arrays)
    com = center_of_mass(skeleton, pos)
    out = np.empty(len(arrays))
    for t in range(len(arrays)):
        poly = support_polygon(skeleton, pos[t], config.foot_extent)
        # for a convex polygon, shrinking is erosion by a disc, so depth inside
        # the shrunk polygon is depth inside the polygon minus the margin
        g = poly.signed_distance(com[t, :2]) + config.com_margin
        if g > 0.0:
            shrunk = poly.shrink(config.com_margin)
            g = shrunk.signed_distance(com[t, :2]) if len(shrunk.vertices) else np.inf
        out[t] = g
    return out
