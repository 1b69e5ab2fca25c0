"""One test per acceptance criterion, each at its stated tolerance and time limit.

Every test records a one-line PASS/FAIL verdict (see the summary section at the
end of the pytest output)."""

import csv
import math
from fractions import Fraction

import numpy as np
import pytest

from stabshape import cli, quat
from stabshape import config as cfgmod
from stabshape.envs import Env
from stabshape.retarget import (
    bundled_mapping,
    compose_revolute_triple,
    decompose_revolute_triple,
    map_robot_to_human,
)
from stabshape.reward import (
    RewardParams,
    combine_rewards,
    joint_distance,
    joint_similarity,
    pose_similarity,
    stabilizing_reward,
)
from stabshape.skeleton import JointPose, TrajectorySegment, zero_pose
from stabshape.stabilizer import BalanceProjectionReconstructor, StabilizerConfig, com_balance_gaps, roughness
from stabshape.trainer import ReplayBuffer, collect_segment, finalize_segment, run, train_iteration

from conftest import criterion, noisy_human_arrays
from oracles import head_gradient_errors, loss_gradient_errors, lq_trial, small_model

TOL = 1e-12


def jp(pos=(0.0, 0.0, 0.0), ori=quat.IDENTITY):
    return JointPose(np.asarray(pos, dtype=float), np.asarray(ori, dtype=float))


# ---------------------------------------------------------------- 1


def test_criterion_1_reward_exactness():
    with criterion(1, "reward exactness", 1.0):
        P = RewardParams()
        # per-joint distance and similarity
        assert abs(joint_distance(jp((0.3, 0, 0)), jp()) - 0.09) <= TOL
        rz = quat.from_axis_angle([0, 0, 1], np.pi / 2)
        assert abs(joint_distance(jp(ori=rz), jp()) - (np.pi / 2) ** 2) <= TOL
        edge = math.sqrt(0.1)
        assert joint_distance(jp((edge, 0, 0)), jp()) == 0.1
        assert joint_similarity(jp((edge, 0, 0)), jp(), P) == 0.1  # inclusive
        assert joint_similarity(jp((np.nextafter(edge, 1.0), 0, 0)), jp(), P) == 0.0
        # pose similarity over 20 joints
        p20 = RewardParams(participating_joints=tuple(range(20)))
        same = [jp((0.1 * i, 0, 0)) for i in range(20)]
        moved = [jp((0.1 * i + (1.0 if i < 5 else 0.0), 0, 0)) for i in range(20)]
        assert abs(pose_similarity(same, same, p20) - 2.0) <= TOL
        assert abs(pose_similarity(same, moved, p20) - 1.5) <= TOL
        # thresholded stabilizing reward, inclusive at t_s
        assert stabilizing_reward(1.5, P) == 1.5
        assert stabilizing_reward(1.4, P) == 0.0
        assert stabilizing_reward(2.0, P) == 2.0
        assert stabilizing_reward(pose_similarity(same, moved, p20), P) == 1.5
        # combination over the table grid
        for lam in (0.5, 1.0):
            for q in (350.0, 750.0):
                params = RewardParams(lam=lam, q=q, l_e=1000.0)
                exact = Fraction(2) + Fraction(lam) * Fraction(int(q), 1000) * Fraction(3, 2)
                assert abs(combine_rewards(2.0, 1.5, params) - float(exact)) <= TOL
        assert abs(combine_rewards(2.0, 1.5, P) - 3.125) <= TOL


# ---------------------------------------------------------------- 2


def test_criterion_2_retargeting():
    with criterion(2, "retargeting correctness", 5.0) as c:
        for robot in ("planar_biped", "pendulum3", "mini_humanoid"):
            table = bundled_mapping(robot)
            assert map_robot_to_human(table, zero_pose(table.robot)) == zero_pose(table.human)
        rng = np.random.default_rng(2024)
        worst = worst_angle = 0.0
        n = 0
        while n < 1000:
            axes = quat.to_matrix(quat.exp(rng.normal(size=3)))  # random orthonormal frame
            order = tuple(rng.permutation(3))
            t = rng.uniform(-np.pi, np.pi, 3)
            # non-degenerate: keep the middle rotation away from gimbal lock
            t[order[1]] = rng.uniform(-np.pi / 2 + 0.1, np.pi / 2 - 0.1)
            q = compose_revolute_triple(t, axes, order)
            back = decompose_revolute_triple(q, axes, order)
            worst = max(worst, float(quat.angle_between(compose_revolute_triple(back, axes, order), q)))
            worst_angle = max(worst_angle, float(np.max(np.abs((back - t + np.pi) % (2 * np.pi) - np.pi))))
            n += 1
        c.notes.append(f"worst geodesic {worst:.1e} rad, worst angle {worst_angle:.1e} rad over {n} triples")
        assert worst <= 1e-6 and worst_angle <= 1e-6


# ---------------------------------------------------------------- 3


def test_criterion_3_stabilizer_contract(human):
    with criterion(3, "stabilizer contract", 60.0) as c:
        cfg = StabilizerConfig()
        rec = BalanceProjectionReconstructor(cfg)
        rng = np.random.default_rng(3)
        balanced = frames = 0
        worst_idem = 0.0
        for _ in range(100):
            arrays = noisy_human_arrays(human, rng, T=145)
            out = rec.reconstruct(TrajectorySegment.from_arrays(human, arrays))
            assert len(out) == 145
            a = out.arrays()
            gaps = com_balance_gaps(human, a, cfg)
            balanced += int(np.sum(gaps <= 1e-6))
            frames += len(gaps)
            b = rec.reconstruct(out).arrays()
            for x, y in ((a.root_translation, b.root_translation), (a.root_orientation, b.root_orientation),
                         (a.angles, b.angles), (a.spherical, b.spherical)):
                worst_idem = max(worst_idem, float(np.max(np.abs(x - y))))
            assert roughness(human, a) <= roughness(human, arrays)
        frac = balanced / frames
        c.notes.append(f"balanced {frac:.2%} of {frames} frames, idempotence {worst_idem:.1e}")
        assert frac >= 0.99
        assert worst_idem <= 1e-6


# ---------------------------------------------------------------- 4


def test_criterion_4_gradient_fidelity():
    with criterion(4, "gradient fidelity", 30.0) as c:
        worst = 0.0
        for seed in range(20):
            heads = head_gradient_errors(small_model(np.random.default_rng(seed)), np.random.default_rng(1000 + seed))
            losses = loss_gradient_errors(small_model(np.random.default_rng(seed)), np.random.default_rng(2000 + seed))
            assert set(losses) == {"consistency", "reward", "value", "prior"}
            worst = max(worst, *heads.values(), *losses.values())
        c.notes.append(f"worst relative error {worst:.1e}")
        assert worst < 1e-3


# ---------------------------------------------------------------- 5


def test_criterion_5_planner_sanity():
    with criterion(5, "planner sanity", 60.0) as c:
        wins = sum(cem >= rs for cem, rs in (lq_trial(seed) for seed in range(100)))
        c.notes.append(f"CEM >= random shooting in {wins}/100 trials")
        assert wins >= 95


# ---------------------------------------------------------------- 6


def test_criterion_6_segment_accounting():
    with criterion(6, "segment accounting", 10.0) as c:
        env = Env("PendulumBalance", max_steps=1000)
        table = bundled_mapping(env.skeleton.name)
        rec = BalanceProjectionReconstructor()
        buf = ReplayBuffer(10_000, env.obs_dim, env.act_dim)
        model = small_model(np.random.default_rng(6), obs_dim=env.obs_dim, act_dim=env.act_dim)
        log = []
        buf.on_event = lambda kind, n: log.append((kind, n, len(buf)))
        rng = np.random.default_rng(6)
        env.reset(6)
        lengths = []
        while not env.done:
            seg = collect_segment(lambda o: rng.uniform(-0.05, 0.05, env.act_dim), env, 145)
            log.append(("collected", len(seg), len(buf)))
            final = finalize_segment(seg, table, rec, RewardParams())
            log.append(("finalized", len(final), len(buf)))
            assert len(final) == len(seg)
            buf.add(final)
            train_iteration(model, buf, 145, 32, rng)
            lengths.append(len(seg))
        assert lengths == [145] * 6 + [130]
        assert len(buf) == 1000
        # ordering: a segment is invisible until finalized, and samples never outrun the finalized count
        finalized = 0
        pending = None
        for kind, n, size in log:
            if kind == "collected":
                pending = n
                assert size == finalized
            elif kind == "finalized":
                assert n == pending and size == finalized
            elif kind == "add":
                finalized += n
                assert size == finalized
                pending = None
            else:
                assert pending is None and size == finalized >= n
        c.notes.append(f"segments {lengths}, {sum(1 for e in log if e[0] == 'sample')} ordered samples")


# ---------------------------------------------------------------- 7


STAND_CFG = """
[task]
name = PlanarStand
[trainer]
total_steps = 200000
seed_steps = 1000
batch_size = 64
eval_interval = 100000000
eval_episodes = 0
target_return_fraction = 0.8
[planner]
population = 64
elites = 8
iterations = 2
hidden = 32, 32
latent_dim = 16
learning_rate = 1e-3
"""

# 10 runs share the 30 minute budget; a run that hits its wall cap counts as never reaching
PER_RUN_S = 170.0


@pytest.mark.slow
def test_criterion_7_shaping_efficacy(tmp_path):
    with criterion(7, "shaping efficacy", 30 * 60.0) as c:
        first = {1.0: [], 0.0: []}
        best = {1.0: [], 0.0: []}
        for seed in range(5):
            for lam in (1.0, 0.0):
                cfg = cfgmod.parse_config(STAND_CFG, overrides=[
                    f"reward.lambda={lam}", f"run.seed={seed}", f"trainer.time_limit_s={PER_RUN_S}",
                    f"run.output_root={tmp_path}", f"run.name=l{lam}_s{seed}"])
                res = run(cfg)
                first[lam].append(math.inf if res.first_reach_step is None else res.first_reach_step)
                best[lam].append(max(res.episode_returns, default=0.0))
        med = {lam: float(np.median(v)) for lam, v in first.items()}
        for lam in (1.0, 0.0):
            c.notes.append(f"lambda={lam:g}: median first reach {med[lam]:g} steps, best returns "
                           + ",".join(f"{b:.0f}" for b in best[lam]))
        assert med[1.0] < med[0.0]


# ---------------------------------------------------------------- 8


SWEEP_CFG = """
[task]
name = PendulumBalance
[trainer]
total_steps = 3000
seed_steps = 500
batch_size = 64
eval_interval = 1000
eval_episodes = 1
[planner]
population = 32
elites = 4
iterations = 2
hidden = 32, 32
latent_dim = 16
"""


@pytest.mark.slow
def test_criterion_8_ablation_harness(tmp_path):
    with criterion(8, "ablation harness", 20 * 60.0) as c:
        p = tmp_path / "pendulum.cfg"
        p.write_text(SWEEP_CFG)
        root = tmp_path / "out"
        sets = ["--set", f"run.output_root={root}"]
        code = cli.main(["sweep-lambda", "--config", str(p), "--lambdas", "0,0.5,1.0,2.0", "--seeds", "0,1,2", "--name", "sweep", *sets])
        assert code == 0
        with open(root / "sweep" / "sweep.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 4 * 3 * 3
        assert {(r["lambda"], r["seed"]) for r in rows} == {(l, s) for l in ("0", "0.5", "1", "2") for s in ("0", "1", "2")}
        for seed in (0, 1, 2):
            assert cli.main(["train", "--config", str(p), "--set", "reward.lambda=0", "--set", f"run.seed={seed}",
                             "--set", f"run.name=alone{seed}", *sets]) == 0
            with open(root / f"alone{seed}" / "metrics.csv") as fh:
                alone = [(r["step"], r["eval_return"]) for r in csv.DictReader(fh)]
            swept = [(r["step"], r["eval_return"]) for r in rows if r["lambda"] == "0" and r["seed"] == str(seed)]
            assert swept == alone, seed
        c.notes.append(f"{len(rows)} combined rows; lambda=0 rows match 3 standalone runs")


# ---------------------------------------------------------------- 9


EQUIV_CFG = """
[task]
name = PlanarStand
[trainer]
total_steps = 5000
seed_steps = 1000
batch_size = 64
eval_interval = 100000000
eval_episodes = 0
[planner]
population = 32
elites = 4
iterations = 2
hidden = 32, 32
latent_dim = 16
"""


@pytest.mark.slow
def test_criterion_9_lambda_zero_equivalence(tmp_path):
    with criterion(9, "lambda=0 equivalence", math.inf) as c:
        cfg = cfgmod.parse_config(EQUIV_CFG, overrides=["reward.lambda=0"])
        full = run(cfg, record_rewards=True, run_dir=tmp_path / "full")
        bypass = run(cfgmod.with_overrides(cfg, reconstructor="bypass"), record_rewards=True, run_dir=tmp_path / "bypass")
        a = [r[2] for r in full.training_rewards]
        b = [r[2] for r in bypass.training_rewards]
        assert full.steps == bypass.steps == 5000 and len(a) == 5000
        assert a == b
        assert any(r[1] > 0 for r in full.training_rewards)  # the stabilizer really ran
        same_model = (tmp_path / "full/checkpoints/final.ckpt").read_bytes() == (tmp_path / "bypass/checkpoints/final.ckpt").read_bytes()
        assert same_model
        c.notes.append(f"{len(a)} training rewards bit-identical, final checkpoints identical")
