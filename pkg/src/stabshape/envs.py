"""Planar articulated simulator and the dense-reward tasks built on it.

Bodies are the point masses of a SkeletonSpec whose movable joints are all
revolute about y, so the robot lives in the x-z plane and the skeleton's own
forward kinematics reproduces the simulated point positions exactly.
Generalized coordinates are [x, z, pitch] of the root (floating base only)
followed by the revolute joint angles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import quat
from .errors import ContractError, StructuralError
from .skeleton import ROOT, Pose, SkeletonSpec, bundled_skeleton

MAX_EPISODE_STEPS = 1000


@dataclass(frozen=True)
class SimParams:
    dt: float = 0.01
    substeps: int = 5
    gravity: float = 9.81
    joint_damping: float = 0.5
    armature: float = 0.02
    contact_stiffness: float = 2.0e4
    contact_damping: float = 400.0
    friction: float = 1.0
    slip_damping: float = 2.0e3
    limit_stiffness: float = 300.0
    limit_damping: float = 5.0


def _perp(v):
    # J v with J = [[0, 1], [-1, 0]]: d/dphi of R2(phi) v
    return np.stack([v[..., 1], -v[..., 0]], axis=-1)


class PlanarSim:
    """Point-mass multibody in the x-z plane with penalty ground contact."""

    def __init__(
        self,
        skeleton: SkeletonSpec,
        floating: bool,
        gear,
        params: SimParams | None = None,
        limits: dict | None = None,
        contact_joints=None,
    ):
        sk = skeleton
        self.skeleton = sk
        self.params = params or SimParams()
        self.floating = bool(floating)
        if list(sk.spherical):
            raise StructuralError("planar simulation needs revolute joints only")
        roots = [i for i in range(sk.n_joints) if sk.parents[i] == ROOT]
        if roots != [0] or np.any(sk.offsets[0] != 0.0):
            raise StructuralError("planar simulation needs a single root joint at index 0 with zero offset")
        signs = []
        for j in sk.revolute:
            ax = sk.axes[j]
            if abs(abs(ax[1]) - 1.0) > 1e-12:
                raise StructuralError(f"joint {sk.joints[j].name!r} does not rotate about y")
            signs.append(float(np.sign(ax[1])))
        if np.any(sk.offsets[:, 1] != 0.0):
            raise StructuralError("planar simulation needs offsets in the x-z plane")

        J = sk.n_joints
        self.n_joints = J
        self.rev = list(sk.revolute)
        self.n_rev = len(self.rev)
        self.n_base = 3 if self.floating else 0
        self.nq = self.n_base + self.n_rev
        self.gear = np.broadcast_to(np.asarray(gear, dtype=float), (self.n_rev,)).copy()
        self.mass = sk.masses.copy()
        self.offsets = sk.offsets[:, [0, 2]].copy()
        self.parents = np.array(sk.parents)

        # angular coordinates: the root pitch (floating only) then each joint
        pivots = ([0] if self.floating else []) + self.rev
        ang_signs = ([1.0] if self.floating else []) + signs
        self.pivots = np.array(pivots, dtype=int)
        subtree = np.zeros((J, J), dtype=bool)  # subtree[d, k]: d descends from k (inclusive)
        for d in range(J):
            k = d
            while k != ROOT:
                subtree[d, k] = True
                k = sk.parents[k]
        self.ang_mask = subtree[:, self.pivots] * np.array(ang_signs)  # (J, n_ang)
        self.path = subtree.copy()  # path[d, e]: e on the root->d path
        self.path[:, 0] = False

        lim = limits or {}
        names = sk.joint_names
        self.lim_lo = np.array([lim.get(names[j], (-np.inf, np.inf))[0] for j in self.rev], dtype=float)
        self.lim_hi = np.array([lim.get(names[j], (-np.inf, np.inf))[1] for j in self.rev], dtype=float)
        feet = sk.foot_joints if contact_joints is None else contact_joints
        self.contacts = np.array(list(feet) if self.floating else [], dtype=int)
        self.base_position = np.zeros(2)
        self.q = np.zeros(self.nq)
        self.qd = np.zeros(self.nq)

    # ------------------------------------------------------------ kinematics

    def _angles(self, q):
        ang = q[2:] if self.floating else q
        return self.ang_mask @ ang  # absolute frame angle of every joint

    def kinematics(self, q=None):
        """World (x, z) of every joint and every joint frame's pitch."""
        q = self.q if q is None else q
        phi = self._angles(q)
        pp = phi[np.maximum(self.parents, 0)]
        c, s = np.cos(pp), np.sin(pp)
        o = self.offsets
        edge = np.stack([c * o[:, 0] + s * o[:, 1], -s * o[:, 0] + c * o[:, 1]], axis=1)
        edge[0] = 0.0
        base = q[:2] if self.floating else self.base_position
        return base + self.path @ edge, phi, edge

    def jacobians(self, pos):
        """(J, 2, nq) point Jacobians."""
        Jn = self.n_joints
        jac = np.zeros((Jn, 2, self.nq))
        if self.floating:
            jac[:, 0, 0] = 1.0
            jac[:, 1, 1] = 1.0
        rel = pos[:, None, :] - pos[self.pivots][None, :, :]  # (J, n_ang, 2)
        jac[:, :, self.n_base - (1 if self.floating else 0) :] = np.transpose(
            _perp(rel) * self.ang_mask[..., None], (0, 2, 1)
        )
        return jac

    # ------------------------------------------------------------ dynamics

    def accelerations(self, q, qd, tau):
        p = self.params
        pos, phi, edge = self.kinematics(q)
        jac = self.jacobians(pos)
        ang_qd = qd[2:] if self.floating else qd
        phid = self.ang_mask @ ang_qd
        pd = phid[np.maximum(self.parents, 0)]
        bias = -(self.path @ (edge * (pd * pd)[:, None]))
        m = self.mass
        force = -m[:, None] * bias
        force[:, 1] -= m * p.gravity
        if len(self.contacts):
            vel = np.einsum("dik,k->di", jac[self.contacts], qd)
            depth = -pos[self.contacts, 1]
            touching = depth > 0.0
            fn = np.where(touching, p.contact_stiffness * depth - p.contact_damping * vel[:, 1], 0.0)
            fn = np.maximum(fn, 0.0)
            ft = np.clip(-p.slip_damping * vel[:, 0], -p.friction * fn, p.friction * fn)
            force[self.contacts, 0] += ft
            force[self.contacts, 1] += fn
        gen = np.einsum("dik,di->k", jac, force)
        M = np.einsum("dik,dil,d->kl", jac, jac, m)
        idx = np.arange(self.nq - self.n_rev, self.nq)
        if self.floating:
            idx = np.concatenate([[2], idx])
        M[idx, idx] += p.armature
        ang = q[self.n_base :]
        angd = qd[self.n_base :]
        over = np.maximum(ang - self.lim_hi, 0.0)
        under = np.minimum(ang - self.lim_lo, 0.0)
        limit = -p.limit_stiffness * (over + under) - p.limit_damping * angd * ((over > 0) | (under < 0))
        gen[self.n_base :] += tau - p.joint_damping * angd + limit
        return np.linalg.solve(M, gen)

    def step(self, action) -> None:
        """Advance one control step with torques gear * action (semi-implicit Euler)."""
        p = self.params
        tau = self.gear * np.asarray(action, dtype=float)
        h = p.dt / p.substeps
        for _ in range(p.substeps):
            qdd = self.accelerations(self.q, self.qd, tau)
            self.qd = self.qd + h * qdd
            self.q = self.q + h * self.qd

    def energy(self) -> float:
        """Kinetic plus gravitational potential energy (no contact springs)."""
        pos, _, _ = self.kinematics()
        jac = self.jacobians(pos)
        v = np.einsum("dik,k->di", jac, self.qd)
        ke = 0.5 * np.sum(self.mass * np.sum(v * v, axis=1)) + 0.5 * self.params.armature * np.sum(
            self.qd[self.n_base - (1 if self.floating else 0) :] ** 2
        )
        return float(ke + self.params.gravity * np.sum(self.mass * pos[:, 1]))

    # ------------------------------------------------------------ pose io

    def pose(self) -> Pose:
        """Robot Pose on the skeleton, read from the current coordinates."""
        if self.floating:
            x, z, pitch = self.q[:3]
            rt = np.array([x, 0.0, z])
            rq = quat.from_axis_angle(np.array([0.0, 1.0, 0.0]), pitch)
        else:
            rt = np.array([self.base_position[0], 0.0, self.base_position[1]])
            rq = quat.IDENTITY.copy()
        slot = {j: k for k, j in enumerate(self.rev)}
        angles = self.q[self.n_base :]
        return Pose(rt, rq, tuple(float(angles[slot[j]]) for j in self.skeleton.movable))


# ---------------------------------------------------------------- tasks


@dataclass
class EnvState:
    observation: np.ndarray
    robot_pose: Pose
    time_step: int


@dataclass(frozen=True)
class TaskSpec:
    name: str
    skeleton: str
    floating: bool
    gear: tuple
    reward: Callable  # (sim) -> float in reward_range
    terminated: Callable  # (sim) -> bool
    reset_pose: Callable  # (sim, rng) -> None, sets sim.q / sim.qd
    reward_range: tuple = (0.0, 1.0)
    lam: float = 1.0
    q: float = 750.0
    limits: dict = field(default_factory=dict)
    max_steps: int = MAX_EPISODE_STEPS

    @property
    def max_return(self) -> float:
        return self.reward_range[1] * self.max_steps


BIPED_LIMITS = {"l_hip": (-2.0, 1.0), "r_hip": (-2.0, 1.0), "l_knee": (0.0, 2.6), "r_knee": (0.0, 2.6)}
STAND_HEIGHT = 0.8
FALL_HEIGHT = 0.45


def _biped_reset(sim: PlanarSim, rng: np.random.Generator) -> None:
    q = np.zeros(sim.nq)
    q[2] = rng.normal(0.0, 0.02)
    q[3:] = rng.normal(0.0, 0.05, sim.n_rev)
    q[3:] = np.clip(q[3:], sim.lim_lo, sim.lim_hi)
    q[1] = 0.0
    pos, _, _ = sim.kinematics(q)
    q[1] = -pos[sim.contacts, 1].min()  # lowest foot point on the ground
    sim.q = q
    sim.qd = np.zeros(sim.nq)


def _standing(sim: PlanarSim) -> float:
    z, pitch = sim.q[1], sim.q[2]
    height = np.clip((z - FALL_HEIGHT) / (0.95 * STAND_HEIGHT - FALL_HEIGHT), 0.0, 1.0)
    return float(height * 0.5 * (1.0 + np.cos(pitch)))


def _fallen(sim: PlanarSim) -> bool:
    return bool(sim.q[1] < FALL_HEIGHT)


def _walking(sim: PlanarSim) -> float:
    speed = np.clip(sim.qd[0] / 1.0, 0.0, 1.0)
    return _standing(sim) * (1.0 + 4.0 * speed) / 5.0


def _pendulum_reset(sim: PlanarSim, rng: np.random.Generator) -> None:
    sim.q = rng.normal(0.0, 0.05, sim.nq)
    sim.qd = np.zeros(sim.nq)


def _tip_height(sim: PlanarSim) -> float:
    pos, _, _ = sim.kinematics()
    reach = np.sum(np.linalg.norm(sim.offsets, axis=1))
    return float(np.clip(0.5 * (1.0 + pos[-1, 1] / reach), 0.0, 1.0))


TASKS: dict[str, TaskSpec] = {
    "PlanarStand": TaskSpec(
        "PlanarStand", "planar_biped", True, (80.0, 80.0, 80.0, 80.0), _standing, _fallen, _biped_reset,
        limits=BIPED_LIMITS,
    ),
    "PlanarWalk": TaskSpec(
        "PlanarWalk", "planar_biped", True, (80.0, 80.0, 80.0, 80.0), _walking, _fallen, _biped_reset,
        limits=BIPED_LIMITS,
    ),
    "PendulumBalance": TaskSpec(
        "PendulumBalance", "pendulum3", False, (20.0, 20.0, 20.0), _tip_height, lambda sim: False, _pendulum_reset,
        lam=0.5,
    ),
}


def get_task(name: str) -> TaskSpec:
    try:
        return TASKS[name]
    except KeyError:
        raise KeyError(f"unknown task {name!r}; known: {sorted(TASKS)}") from None


class Env:
    """One task instance: reset, step, pose extraction."""

    def __init__(self, task: str | TaskSpec, sim_params: SimParams | None = None, max_steps: int | None = None):
        self.task = get_task(task) if isinstance(task, str) else task
        self.skeleton = bundled_skeleton(self.task.skeleton)
        self.sim = PlanarSim(self.skeleton, self.task.floating, self.task.gear, sim_params, self.task.limits)
        self.max_steps = self.task.max_steps if max_steps is None else int(max_steps)
        if not 1 <= self.max_steps <= MAX_EPISODE_STEPS:
            raise ValueError(f"max_steps must be in [1, {MAX_EPISODE_STEPS}]")
        self.action_low = -np.ones(self.sim.n_rev)
        self.action_high = np.ones(self.sim.n_rev)
        self.time_step = 0
        self.done = True

    @property
    def obs_dim(self) -> int:
        return 2 * self.sim.nq - (1 if self.task.floating else 0)

    @property
    def act_dim(self) -> int:
        return self.sim.n_rev

    def observation(self) -> np.ndarray:
        q, qd = self.sim.q, self.sim.qd
        # horizontal position is dropped: the tasks are invariant to it
        pos_part = q[1:] if self.task.floating else q
        return np.concatenate([pos_part, qd])

    def state(self) -> EnvState:
        return EnvState(self.observation(), self.sim.pose(), self.time_step)

    def reset(self, seed: int) -> EnvState:
        rng = np.random.default_rng(seed)
        self.task.reset_pose(self.sim, rng)
        self.time_step = 0
        self.done = False
        return self.state()

    def step(self, action):
        if self.done:
            raise ContractError("step() on a finished episode; call reset()")
        a = np.clip(np.asarray(action, dtype=float), self.action_low, self.action_high)
        self.sim.step(a)
        self.time_step += 1
        r = self.task.reward(self.sim)
        self.done = bool(self.task.terminated(self.sim) or self.time_step >= self.max_steps)
        return self.state(), r, self.done

    def link_positions(self) -> np.ndarray:
        """Simulator joint positions lifted to 3D (y = 0)."""
        pos, _, _ = self.sim.kinematics()
        return np.stack([pos[:, 0], np.zeros(len(pos)), pos[:, 1]], axis=1)


def reset(env: Env, seed: int) -> EnvState:
    return env.reset(seed)


def step(env: Env, action):
    return env.step(action)


def extract_robot_pose(state: EnvState) -> Pose:
    return state.robot_pose
