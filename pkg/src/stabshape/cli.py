"""stabshape command line: train, eval, stabilize, retarget, sweep-lambda, inspect-config.

Exit codes: 0 success, 1 runtime fault, 2 usage/config/input error,
3 artifact integrity error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import IntegrityError, InputError, StructuralError
from .retarget import bundled_mapping, load_mapping, map_arrays
from .skeleton import PoseArrays, bundled_skeleton, center_of_mass, forward_kinematics_arrays
from .stabilizer import BalanceProjectionReconstructor, IdentityReconstructor
from .trajio import Frame, read_trajectory, write_trajectory

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_INTEGRITY = 0, 1, 2, 3

log = logging.getLogger("stabshape")


class UsageError(Exception):
    pass


def _load_cfg(args) -> cfgmod.RunConfig:
    if args.config is None:
        return cfgmod.parse_config("", "<defaults>", args.set or ())
    return cfgmod.load_config(args.config, args.set or ())


# ---------------------------------------------------------------- train / eval


def cmd_train(args) -> int:
    from .trainer import run

    cfg = _load_cfg(args)
    res = run(cfg)
    print(f"run directory: {res.run_dir}")
    print(f"steps {res.steps}  episodes {res.episodes}  updates {res.updates}  faults {res.faults}")
    if res.metrics:
        print(f"last eval return: {res.metrics[-1]['eval_return']:.3f}")
    return EXIT_OK


def _config_for_checkpoint(ckpt: Path, explicit) -> Path:
    if explicit:
        return Path(explicit)
    guess = ckpt.resolve().parent.parent / "config.cfg"
    if not guess.exists():
        raise UsageError(f"no --config given and {guess} does not exist")
    return guess


def cmd_eval(args) -> int:
    from .envs import Env
    from .policy import WorldModel
    from .trainer import evaluate

    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise UsageError(f"checkpoint not found: {ckpt}")
    cfg = cfgmod.load_config(_config_for_checkpoint(ckpt, args.config), args.set or ())
    env = Env(cfg.task, max_steps=cfg.trainer.episode_steps)
    try:
        model = WorldModel.load(ckpt, cfg.model_config(env.obs_dim, env.act_dim))
    except StructuralError as e:
        raise UsageError(f"refusing to evaluate: {e} (config hash mismatch between checkpoint and config)") from None
    returns = evaluate(model, cfg, args.episodes, args.seed)
    out = Path(args.output) if args.output else ckpt.resolve().parent.parent / f"eval_seed{args.seed}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "return"])
        for i, r in enumerate(returns):
            w.writerow([i, repr(float(r))])
            print(f"episode {i}: return {r:.6f}")
        mean = float(np.mean(returns)) if returns else float("nan")
        w.writerow(["mean", repr(mean)])
    print(f"mean return: {mean:.6f}")
    return EXIT_OK


# ---------------------------------------------------------------- offline tools


def _resolve_skeleton(name: str):
    try:
        return bundled_skeleton(name)
    except FileNotFoundError:
        raise InputError(f"unknown skeleton {name!r}") from None


def cmd_retarget(args) -> int:
    robot, frames = read_trajectory(args.input, _resolve_skeleton)
    if args.mapping:
        table = load_mapping(args.mapping, robot=robot)
    else:
        table = bundled_mapping(robot.name)
    human_arrays = map_arrays(table, PoseArrays.from_poses(robot, [f.pose for f in frames]))
    human = table.human
    poses = human_arrays.to_poses(human)
    out = [Frame(f.time_step, p, f.observation, f.action, f.task_reward) for f, p in zip(frames, poses)]
    write_trajectory(args.output, human, out)
    pos, _ = forward_kinematics_arrays(human, human_arrays)
    com = center_of_mass(human, pos)
    _write_csv(
        _diag_path(args),
        ["frame", "time_step", "com_x", "com_y", "com_z"],
        [[i, f.time_step, *map(repr, map(float, c))] for i, (f, c) in enumerate(zip(frames, com))],
    )
    print(f"retargeted {len(frames)} frames {robot.name} -> {human.name}")
    return EXIT_OK


def stabilize_frames(skeleton, arrays: PoseArrays, reconstructor, segment_length: int):
    """Reconstruct in trainer-sized chunks; short tails are padded then trimmed.

    Returns (arrays, com_violation_distance, correction_magnitude).
    """
    T = len(arrays)
    parts, viol, corr = [], np.zeros(T), np.zeros(T)
    for start in range(0, T, segment_length):
        stop = min(T, start + segment_length)
        n = stop - start
        chunk = PoseArrays(
            arrays.root_translation[start:stop],
            arrays.root_orientation[start:stop],
            arrays.angles[start:stop],
            arrays.spherical[start:stop],
        )
        if n < reconstructor.min_length:
            pad = reconstructor.min_length - n
            chunk = PoseArrays(*(np.concatenate([x, np.repeat(x[-1:], pad, axis=0)]) for x in (
                chunk.root_translation, chunk.root_orientation, chunk.angles, chunk.spherical)))
        if isinstance(reconstructor, BalanceProjectionReconstructor):
            from .skeleton import TrajectorySegment

            seg = TrajectorySegment.from_arrays(skeleton, chunk)
            reconstructor.check(seg)
            out, diag = reconstructor.reconstruct_arrays(skeleton, chunk)
            viol[start:stop] = diag.com_violation_distance[:n]
            corr[start:stop] = diag.correction_magnitude[:n]
        else:
            from .skeleton import TrajectorySegment

            out = reconstructor.reconstruct(TrajectorySegment.from_arrays(skeleton, chunk)).arrays()
        parts.append(out)
    cat = [np.concatenate([getattr(p, k)[: min(len(p), segment_length)] for p in parts]) for k in (
        "root_translation", "root_orientation", "angles", "spherical")]
    merged = PoseArrays(*(c[:T] for c in cat))
    return merged, viol, corr


def cmd_stabilize(args) -> int:
    human, frames = read_trajectory(args.input, _resolve_skeleton)
    cfg = _load_cfg(args)
    if args.reconstructor == "identity":
        recon = IdentityReconstructor(cfg.stabilizer.min_length, cfg.stabilizer.max_length)
    else:
        recon = BalanceProjectionReconstructor(cfg.stabilizer)
    arrays = PoseArrays.from_poses(human, [f.pose for f in frames])
    out, viol, corr = stabilize_frames(human, arrays, recon, cfg.trainer.segment_length)
    poses = out.to_poses(human)
    write_trajectory(args.output, human, [Frame(f.time_step, p, f.observation, f.action, f.task_reward) for f, p in zip(frames, poses)])
    _write_csv(
        _diag_path(args),
        ["frame", "time_step", "com_violation_distance", "correction_magnitude"],
        [[i, f.time_step, repr(float(v)), repr(float(c))] for i, (f, v, c) in enumerate(zip(frames, viol, corr))],
    )
    print(f"stabilized {len(frames)} frames; {int(np.sum(viol > 0))} needed a correction")
    return EXIT_OK


def _diag_path(args) -> Path:
    if args.diagnostics:
        return Path(args.diagnostics)
    out = Path(args.output)
    return out.with_name(out.stem + "_diagnostics.csv")


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------- sweep


def _sweep_one(job):
    from .trainer import run

    cfg, run_dir = job
    try:
        res = run(cfg, run_dir=run_dir)
        return cfg.reward.lam, cfg.seed, [(m["step"], m["eval_return"]) for m in res.metrics], None
    except Exception as e:  # recorded, the sweep carries on
        return cfg.reward.lam, cfg.seed, [], f"{type(e).__name__}: {e}"


def _float_list(s: str):
    try:
        vals = [float(x) for x in s.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"not a list of numbers: {s!r}") from None
    return vals


def cmd_sweep_lambda(args) -> int:
    cfg = _load_cfg(args)
    lambdas = _float_list(args.lambdas)
    seeds = [int(x) for x in _float_list(args.seeds)]
    if not lambdas:
        raise UsageError("empty lambda list")
    if not seeds:
        raise UsageError("empty seed list")
    root = cfg.resolved_output_root() / (args.name or f"sweep_{cfg.task}")
    jobs = []
    for lam in lambdas:
        for seed in seeds:
            try:
                reward = replace(cfg.reward, lam=lam)
            except ValueError as e:
                raise cfgmod.ConfigError(f"lambda {lam}: {e}") from None
            c = replace(cfg, reward=reward, seed=seed, name="")
            jobs.append((c, root / c.run_name()))
    root.mkdir(parents=True, exist_ok=True)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    rows, failures = [], []
    for lam, seed, pts, err in results:
        if err:
            failures.append(f"lambda={lam:g} seed={seed}: {err}")
        for step, ret in pts:
            rows.append([f"{lam:g}", seed, step, repr(float(ret))])
    _write_csv(root / "sweep.csv", ["lambda", "seed", "step", "eval_return"], rows)
    if failures:
        (root / "failures.log").write_text("\n".join(failures) + "\n")
        for f in failures:
            print(f"FAILED {f}", file=sys.stderr)
    print(f"{len(jobs)} runs, {len(failures)} failed; combined CSV: {root / 'sweep.csv'}")
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_inspect_config(args) -> int:
    cfg = _load_cfg(args)
    sys.stdout.write(cfgmod.dump_config(cfg))
    return EXIT_OK


# ---------------------------------------------------------------- entry


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stabshape", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp, required=False):
        sp.add_argument("--config", required=required, help="INI run config")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")

    sp = sub.add_parser("train", help="train one run")
    with_config(sp, required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint (unshaped task return)")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--episodes", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output", help="eval CSV (default: <run dir>/eval_seed<seed>.csv)")
    with_config(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("stabilize", help="reconstruct a human trajectory file")
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--diagnostics")
    sp.add_argument("--reconstructor", choices=["reference", "identity"], default="reference")
    with_config(sp)
    sp.set_defaults(func=cmd_stabilize)

    sp = sub.add_parser("retarget", help="map a robot trajectory file onto the human skeleton")
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--diagnostics")
    sp.add_argument("--mapping", help="mapping YAML (default: bundled table for the robot)")
    sp.set_defaults(func=cmd_retarget)

    sp = sub.add_parser("sweep-lambda", help="train every (lambda, seed) pair")
    with_config(sp, required=True)
    sp.add_argument("--lambdas", required=True, help="e.g. 0,0.5,1,2")
    sp.add_argument("--seeds", default="0", help="e.g. 0,1,2")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--name", help="sweep directory name under the output root")
    sp.set_defaults(func=cmd_sweep_lambda)

    sp = sub.add_parser("inspect-config", help="print the fully resolved config")
    with_config(sp)
    sp.set_defaults(func=cmd_inspect_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except cfgmod.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, InputError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except IntegrityError as e:
        print(f"integrity error: {e}", file=sys.stderr)
        return EXIT_INTEGRITY
    except Exception as e:
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
