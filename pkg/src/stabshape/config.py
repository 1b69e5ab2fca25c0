"""Run configuration: an INI file with sections task, reward, planner,
stabilizer, trainer and run. Unknown keys are rejected; missing keys take
defaults; ``--set section.key=value`` overrides apply after parsing."""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .envs import get_task
from .policy import ModelConfig, PlannerConfig
from .reward import RewardParams
from .stabilizer import StabilizerConfig, load_joint_limits

OUTPUT_ROOT_ENV = "STABSHAPE_OUTPUT_ROOT"
RECONSTRUCTORS = ("reference", "identity", "bypass")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainerConfig:
    total_steps: int = 200_000
    segment_length: int = 145
    episode_steps: int = 1000
    buffer_capacity: int = 1_000_000
    batch_size: int = 256
    seed_steps: int = 1000
    eval_interval: int = 10_000
    eval_episodes: int = 1
    checkpoint_interval: int = 0
    target_return_fraction: float = 0.0
    time_limit_s: float = 0.0

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.segment_length < 1:
            raise ValueError("segment_length must be >= 1")
        if self.segment_length > self.buffer_capacity:
            raise ValueError("segment_length must not exceed buffer_capacity")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 1 <= self.episode_steps <= 1000:
            raise ValueError("episode_steps must be in [1, 1000]")
        if self.eval_interval < 1:
            raise ValueError("eval_interval must be >= 1")
        if self.eval_episodes < 0 or self.seed_steps < 0 or self.checkpoint_interval < 0:
            raise ValueError("counts must be >= 0")
        if not 0.0 <= self.target_return_fraction <= 1.0:
            raise ValueError("target_return_fraction must be in [0, 1]")
        if self.time_limit_s < 0:
            raise ValueError("time_limit_s must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    task: str = "PlanarStand"
    reward: RewardParams = field(default_factory=RewardParams)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    model: dict = field(default_factory=dict)  # ModelConfig fields minus the env dims
    stabilizer: StabilizerConfig = field(default_factory=StabilizerConfig)
    reconstructor: str = "reference"
    joint_limits: str = "bundled"
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    seed: int = 0
    name: str = ""
    output_root: str = ""

    def model_config(self, obs_dim: int, act_dim: int) -> ModelConfig:
        return ModelConfig(obs_dim=obs_dim, act_dim=act_dim, gamma=self.planner.gamma, **self.model)

    def run_name(self) -> str:
        lam = f"{self.reward.lam:g}"
        return self.name or f"{self.task}_lam{lam}_seed{self.seed}"

    def resolved_output_root(self) -> Path:
        return Path(self.output_root or os.environ.get(OUTPUT_ROOT_ENV) or "runs")


# (section, key) -> (target, attribute, parser)
def _floats(s):
    return tuple(float(x) for x in s.replace(",", " ").split())


def _ints(s):
    return tuple(int(x) for x in s.replace(",", " ").split())


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _joints(s):
    return None if s.strip().lower() == "all" else _ints(s)


KEYS = {
    "task": {"name": ("task", str)},
    "reward": {
        "r_j": ("r_j", float),
        "t_j": ("t_j", float),
        "n_bar": ("n_bar", int),
        "t_s": ("t_s", float),
        "lambda": ("lam", float),
        "q": ("q", float),
        "l_e": ("l_e", float),
        "participating_joints": ("participating_joints", _joints),
    },
    "planner": {
        "horizon": ("horizon", int),
        "population": ("population", int),
        "elites": ("elites", int),
        "iterations": ("iterations", int),
        "discount": ("gamma", float),
        "min_std": ("min_std", float),
        "init_std": ("init_std", float),
        "prior_fraction": ("prior_fraction", float),
        "explore_noise": ("explore_noise", _bool),
        # world model
        "latent_dim": ("model.latent_dim", int),
        "hidden": ("model.hidden", _ints),
        "log_std_min": ("model.log_std_min", float),
        "log_std_max": ("model.log_std_max", float),
        "tau": ("model.tau", float),
        "learning_rate": ("model.lr", float),
        "consistency_coef": ("model.consistency_coef", float),
        "reward_coef": ("model.reward_coef", float),
        "value_coef": ("model.value_coef", float),
        "entropy_coef": ("model.entropy_coef", float),
        "grad_clip": ("model.grad_clip", float),
    },
    "stabilizer": {
        "reconstructor": ("reconstructor", str),
        "smoothing_window": ("smoothing_window", int),
        "com_margin": ("com_margin", float),
        "max_root_correction": ("max_root_correction", float),
        "foot_extent": ("foot_extent", float),
        "min_length": ("min_length", int),
        "joint_limits": ("joint_limits", str),
    },
    "trainer": {f.name: (f.name, type(f.default)) for f in fields(TrainerConfig)},
    "run": {"seed": ("seed", int), "name": ("name", str), "output_root": ("output_root", str)},
}

DOCS = {
    "task.name": "registered task name",
    "reward.r_j": "per-joint similarity reward",
    "reward.t_j": "squared joint-distance threshold",
    "reward.n_bar": "expected similar joint count",
    "reward.t_s": "similarity threshold, must equal n_bar * r_j",
    "reward.lambda": "shaping scale (task default when omitted)",
    "reward.q": "expected return (task default when omitted)",
    "reward.l_e": "maximum episode length",
    "reward.participating_joints": "'all' or human joint indices",
    "planner.horizon": "planning horizon H",
    "planner.population": "samples per iteration K",
    "planner.elites": "elite count K_e",
    "planner.iterations": "CEM iterations J",
    "planner.discount": "discount gamma (planning and TD targets)",
    "planner.min_std": "sampling std floor",
    "planner.init_std": "initial sampling std",
    "planner.prior_fraction": "fraction of samples drawn from policy-prior rollouts",
    "planner.explore_noise": "add sampling noise to executed actions while training",
    "planner.latent_dim": "latent size d_z",
    "planner.hidden": "hidden layer widths",
    "planner.log_std_min": "policy-prior log-std lower bound",
    "planner.log_std_max": "policy-prior log-std upper bound",
    "planner.tau": "Polyak rate for target networks",
    "planner.learning_rate": "Adam step size",
    "planner.consistency_coef": "latent consistency loss weight",
    "planner.reward_coef": "reward loss weight",
    "planner.value_coef": "value loss weight",
    "planner.entropy_coef": "policy-prior entropy bonus",
    "planner.grad_clip": "global gradient-norm clip",
    "stabilizer.reconstructor": "reference | identity | bypass (no stabilizing reward computed)",
    "stabilizer.smoothing_window": "odd smoothing window (frames)",
    "stabilizer.com_margin": "support polygon shrink margin (m)",
    "stabilizer.max_root_correction": "per-frame root displacement cap (m)",
    "stabilizer.foot_extent": "foot disc radius (m)",
    "stabilizer.min_length": "shortest segment the reconstructor accepts",
    "stabilizer.joint_limits": "'bundled' or a YAML path of per-joint [min, max]",
    "trainer.total_steps": "environment step budget",
    "trainer.segment_length": "segment length l_s",
    "trainer.episode_steps": "episode step limit",
    "trainer.buffer_capacity": "replay capacity",
    "trainer.batch_size": "TD update batch size",
    "trainer.seed_steps": "uniform-random warm-up steps",
    "trainer.eval_interval": "steps between metrics rows",
    "trainer.eval_episodes": "evaluation episodes per metrics row",
    "trainer.checkpoint_interval": "steps between checkpoints (0: final only)",
    "trainer.target_return_fraction": "stop once a training episode reaches this fraction of max return (0: off)",
    "trainer.time_limit_s": "wall-clock cap (0: none)",
    "run.seed": "master seed",
    "run.name": "run directory name (derived when empty)",
    "run.output_root": "output root (falls back to $" + OUTPUT_ROOT_ENV + ", then ./runs)",
}


def _parse_value(section, key, raw, where=""):
    try:
        attr, parse = KEYS[section][key]
    except KeyError:
        raise ConfigError(f"{where}unknown key {section}.{key}") from None
    try:
        return attr, parse(raw.strip())
    except ValueError as e:
        raise ConfigError(f"{where}bad value for {section}.{key}: {e}") from None


def _line_of(text: str, section: str, key: str) -> int | None:
    cur = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            cur = s[1:-1].strip()
        elif cur == section and "=" in s and s.split("=", 1)[0].strip().lower() == key:
            return n
    return None


def parse_config(text: str, source: str = "<config>", overrides=()) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from None
    values: dict[str, dict] = {s: {} for s in KEYS}
    for section in cp.sections():
        if section not in KEYS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in cp.items(section):
            line = _line_of(text, section, key)
            where = f"{source}:{line}: " if line else f"{source}: "
            attr, val = _parse_value(section, key, raw, where)
            values[section][attr] = val
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} is not section.key=value")
        lhs, raw = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        if section not in KEYS:
            raise ConfigError(f"override {item!r}: unknown section {section!r}")
        attr, val = _parse_value(section, key.strip().lower(), raw, f"override {item!r}: ")
        values[section][attr] = val
    return build_config(values)


def build_config(values: dict) -> RunConfig:
    try:
        task_name = values["task"].get("task", "PlanarStand")
        task = get_task(task_name)
    except KeyError as e:
        raise ConfigError(str(e).strip('"')) from None
    try:
        rv = dict(values["reward"])
        rv.setdefault("lam", task.lam)
        rv.setdefault("q", task.q)
        reward = RewardParams(**rv)
        pv = {k: v for k, v in values["planner"].items() if not k.startswith("model.")}
        planner = PlannerConfig(**pv)
        model = {k[6:]: v for k, v in values["planner"].items() if k.startswith("model.")}
        full = ModelConfig(obs_dim=1, act_dim=1, gamma=planner.gamma, **model)  # validate early
        model = {k: getattr(full, k) for k in full.__dict__ if k not in ("obs_dim", "act_dim", "gamma")}
        sv = dict(values["stabilizer"])
        recon = sv.pop("reconstructor", "reference")
        if recon not in RECONSTRUCTORS:
            raise ValueError(f"reconstructor must be one of {RECONSTRUCTORS}")
        limits = sv.pop("joint_limits", "bundled")
        if limits != "bundled":
            sv["joint_limit_table"] = load_joint_limits(limits)
        stab = StabilizerConfig(**sv)
        trainer = TrainerConfig(**values["trainer"])
        return RunConfig(
            task=task_name,
            reward=reward,
            planner=planner,
            model=model,
            stabilizer=stab,
            reconstructor=recon,
            joint_limits=limits,
            trainer=trainer,
            **values["run"],
        )
    except (ValueError, TypeError, OSError) as e:
        raise ConfigError(str(e)) from None


def load_config(path, overrides=()) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    return parse_config(text, str(path), overrides)


def _fmt(v) -> str:
    if v is None:
        return "all"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def config_sections(cfg: RunConfig) -> dict:
    """Fully resolved values keyed like the config file."""
    m = ModelConfig(obs_dim=1, act_dim=1, gamma=cfg.planner.gamma, **cfg.model)
    sources = {
        "task": {"task": cfg.task},
        "reward": cfg.reward.__dict__,
        "planner": {**cfg.planner.__dict__, **{f"model.{k}": v for k, v in m.__dict__.items()}},
        "stabilizer": {
            **{k: getattr(cfg.stabilizer, k) for k in ("smoothing_window", "com_margin", "max_root_correction", "foot_extent", "min_length")},
            "reconstructor": cfg.reconstructor,
            "joint_limits": cfg.joint_limits,
        },
        "trainer": cfg.trainer.__dict__,
        "run": {"seed": cfg.seed, "name": cfg.name, "output_root": cfg.output_root},
    }
    out = {}
    for section, keys in KEYS.items():
        out[section] = {key: sources[section][attr] for key, (attr, _) in keys.items()}
    return out


def dump_config(cfg: RunConfig, comments: bool = True) -> str:
    buf = io.StringIO()
    for section, keys in config_sections(cfg).items():
        buf.write(f"[{section}]\n")
        for key, val in keys.items():
            if comments and f"{section}.{key}" in DOCS:
                buf.write(f"# {DOCS[section + '.' + key]}\n")
            buf.write(f"{key} = {_fmt(val)}\n")
        buf.write("\n")
    return buf.getvalue()


def with_overrides(cfg: RunConfig, **changes) -> RunConfig:
    return replace(cfg, **changes)
