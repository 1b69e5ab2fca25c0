import numpy as np
import pytest

from stabshape.envs import TASKS, Env, PlanarSim, SimParams, extract_robot_pose, reset, step
from stabshape.errors import ContractError, StructuralError
from stabshape.skeleton import PoseArrays, bundled_skeleton, forward_kinematics_arrays, skeleton_from_dict

PASSIVE = SimParams(joint_damping=0.0)

PEND1 = {
    "name": "pend1",
    "foot_joints": ["pivot"],
    "joints": [
        {"name": "pivot", "parent": None, "kind": "fixed", "offset": [0, 0, 0], "mass": 1.0},
        {"name": "hinge", "parent": "pivot", "kind": "revolute", "offset": [0, 0, 0], "mass": 1.0, "axis": [0, 1, 0]},
        {"name": "bob", "parent": "hinge", "kind": "fixed", "offset": [0, 0, -1.0], "mass": 2.0},
    ],
}


def test_single_pendulum_energy_closed_form_and_drift():
    skel = skeleton_from_dict(PEND1)
    sim = PlanarSim(skel, floating=False, gear=0.0, params=PASSIVE)
    theta0 = 1.0
    sim.q[:] = theta0
    m, L, g = 2.0, 1.0, PASSIVE.gravity
    # closed form: E = 1/2 (m L^2 + armature) thetadot^2 - m g L cos(theta), pivot masses at rest at z = 0
    e0 = -m * g * L * np.cos(theta0)
    assert sim.energy() == pytest.approx(e0, rel=1e-12)
    energies = []
    for _ in range(1000):
        sim.step([0.0])
        th, thd = sim.q[0], sim.qd[0]
        closed = 0.5 * (m * L * L + PASSIVE.armature) * thd**2 - m * g * L * np.cos(th)
        assert sim.energy() == pytest.approx(closed, rel=1e-9, abs=1e-9)
        energies.append(closed)
    assert np.max(np.abs(np.array(energies) - e0)) / abs(e0) < 0.01


def test_three_link_passive_energy_drift():
    sim = PlanarSim(bundled_skeleton("pendulum3"), floating=False, gear=0.0, params=PASSIVE)
    sim.q[:] = [2.5, 0.3, -0.2]  # hanging-ish start
    e0 = sim.energy()
    scale = sim.params.gravity * np.sum(sim.mass) * 1.2
    worst = 0.0
    for _ in range(1000):
        sim.step(np.zeros(3))
        worst = max(worst, abs(sim.energy() - e0))
    assert worst / scale < 0.01


def test_equilibrium_unchanged():
    env = Env("PendulumBalance", sim_params=PASSIVE)
    env.reset(0)
    env.sim.q[:] = 0.0
    env.sim.qd[:] = 0.0
    for _ in range(200):
        env.step(np.zeros(3))
    assert np.max(np.abs(env.sim.q)) < 1e-12 and np.max(np.abs(env.sim.qd)) < 1e-12


@pytest.mark.parametrize("task", sorted(TASKS))
def test_reset_deterministic(task):
    a, b = Env(task), Env(task)
    s1, s2 = reset(a, 5), reset(b, 5)
    assert np.array_equal(s1.observation, s2.observation) and s1.time_step == 0
    rng = np.random.default_rng(0)
    for _ in range(30):
        act = rng.uniform(-1, 1, a.act_dim)
        r1 = step(a, act)
        r2 = step(b, act)
        assert np.array_equal(r1[0].observation, r2[0].observation) and r1[1] == r2[1]
        if r1[2]:
            break
    assert a.reset(5).time_step == 0
    assert not np.array_equal(Env(task).reset(6).observation, s1.observation)


def test_stand_reset_is_upright_and_near_zero():
    env = Env("PlanarStand")
    s = env.reset(0)
    pose = extract_robot_pose(s)
    assert abs(env.sim.q[2]) < 0.1
    assert np.max(np.abs(env.sim.q[3:])) < 0.2
    assert all(abs(r) < 0.2 for r in pose.joint_rotations)
    # feet on the ground, nobody buried
    pos = env.link_positions()
    assert pos[list(env.skeleton.foot_joints), 2].min() == pytest.approx(0.0, abs=1e-12)
    assert env.task.reward(env.sim) > 0.95


@pytest.mark.parametrize("task", sorted(TASKS))
def test_episode_length_and_reward_bounds(task):
    env = Env(task)
    env.reset(1)
    rng = np.random.default_rng(1)
    n = 0
    done = False
    lo, hi = env.task.reward_range
    while not done:
        s, r, done = env.step(rng.uniform(-1.5, 1.5, env.act_dim))
        n += 1
        assert lo <= r <= hi
        assert np.all(np.isfinite(s.observation))
        assert s.time_step == n
    assert n <= 1000
    with pytest.raises(ContractError):
        env.step(np.zeros(env.act_dim))


def test_pendulum_runs_full_episode():
    env = Env("PendulumBalance")
    env.reset(0)
    n = 0
    while not env.done:
        env.step(np.zeros(3))
        n += 1
    assert n == 1000


@pytest.mark.parametrize("task", sorted(TASKS))
def test_pose_matches_observation_and_fk(task):
    env = Env(task)
    env.reset(2)
    rng = np.random.default_rng(2)
    for _ in range(20):
        s, _, done = env.step(rng.uniform(-1, 1, env.act_dim))
        pose = extract_robot_pose(s)
        sim = env.sim
        n_base = sim.n_base
        obs_angles = s.observation[n_base - 1 : n_base - 1 + sim.n_rev] if sim.floating else s.observation[: sim.n_rev]
        assert np.array_equal(np.array(pose.joint_rotations), obs_angles)
        pos, _ = forward_kinematics_arrays(env.skeleton, PoseArrays.from_poses(env.skeleton, [pose]))
        np.testing.assert_allclose(pos[0], env.link_positions(), atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(pose.root_orientation), 1.0, atol=1e-12)
        if done:
            break


def test_planar_sim_rejects_bad_skeletons():
    with pytest.raises(StructuralError):
        PlanarSim(bundled_skeleton("human"), floating=True, gear=1.0)
    with pytest.raises(StructuralError):
        PlanarSim(bundled_skeleton("mini_humanoid"), floating=True, gear=1.0)


def test_action_clamped():
    a, b = Env("PlanarStand"), Env("PlanarStand")
    a.reset(3)
    b.reset(3)
    a.step(np.full(4, 5.0))
    b.step(np.ones(4))
    assert np.array_equal(a.sim.q, b.sim.q)


def test_gravity_pulls_unpowered_biped_down():
    env = Env("PlanarStand")
    env.reset(0)
    steps = 0
    while not env.done:
        env.step(np.zeros(4))
        steps += 1
    assert steps < 1000  # without torque the biped collapses and the episode terminates
    assert env.sim.q[1] < 0.45
