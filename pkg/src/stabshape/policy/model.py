"""Latent world model: encoder, dynamics, reward, twin values and a policy prior."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import StructuralError, TrainingFault
from . import checkpoint
from .nets import MLP

ONLINE = ("encoder", "dynamics", "reward", "q1", "q2", "prior")
TARGETS = {"target_encoder": "encoder", "target_q1": "q1", "target_q2": "q2"}


@dataclass(frozen=True)
class ModelConfig:
    obs_dim: int
    act_dim: int
    latent_dim: int = 32
    hidden: tuple = (64, 64)
    log_std_min: float = -5.0
    log_std_max: float = 1.0
    gamma: float = 0.99
    tau: float = 0.005
    lr: float = 3e-4
    consistency_coef: float = 20.0
    reward_coef: float = 0.1
    value_coef: float = 0.1
    entropy_coef: float = 1e-4
    grad_clip: float = 20.0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.obs_dim < 1 or self.act_dim < 1 or self.latent_dim < 1:
            raise ValueError("dimensions must be >= 1")
        if not self.log_std_min < self.log_std_max:
            raise ValueError("log_std_min must be < log_std_max")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must be in (0, 1]")


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray

    def __len__(self):
        return len(self.r)


@dataclass
class Targets:
    """Stop-gradient quantities of one update."""

    z_next: np.ndarray  # target encoder at s'
    y: np.ndarray  # TD target for both value heads


@dataclass
class _Adam:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


class WorldModel:
    def __init__(self, config: ModelConfig, seed: int = 0):
        c = config
        self.config = c
        dz, da = c.latent_dim, c.act_dim
        self.nets = {
            "encoder": MLP(c.obs_dim, c.hidden, dz),
            "dynamics": MLP(dz + da, c.hidden, dz),
            "reward": MLP(dz + da, c.hidden, 1),
            "q1": MLP(dz + da, c.hidden, 1),
            "q2": MLP(dz + da, c.hidden, 1),
            "prior": MLP(dz, c.hidden, 2 * da),
        }
        rng = np.random.default_rng(seed)
        self.params = {}
        for name in ONLINE:
            # value and reward heads start near zero so early targets stay small
            scale = 0.1 if name in ("reward", "q1", "q2") else 1.0
            self.params[name] = self.nets[name].init(rng, out_scale=scale)
        for t, src in TARGETS.items():
            self.params[t] = self.params[src].copy()
        self.adam = _Adam()
        self.n_updates = 0

    # ------------------------------------------------------------ heads

    def net_for(self, name: str) -> MLP:
        return self.nets[TARGETS.get(name, name)]

    def _apply(self, name, x):
        return self.net_for(name)(self.params[name], x)

    def encode(self, s, target: bool = False) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if s.shape[-1] != self.config.obs_dim:
            raise StructuralError(f"state dim {s.shape[-1]} != {self.config.obs_dim}")
        flat = s.reshape(-1, s.shape[-1])
        z = self._apply("target_encoder" if target else "encoder", flat)
        return z.reshape(*s.shape[:-1], -1)

    def dynamics(self, z, a) -> np.ndarray:
        return self._apply("dynamics", np.concatenate([z, a], axis=-1))

    def reward(self, z, a) -> np.ndarray:
        return self._apply("reward", np.concatenate([z, a], axis=-1))[..., 0]

    def value(self, z, a, target: bool = False) -> np.ndarray:
        za = np.concatenate([z, a], axis=-1)
        n1, n2 = ("target_q1", "target_q2") if target else ("q1", "q2")
        return np.minimum(self._apply(n1, za), self._apply(n2, za))[..., 0]

    def _prior_stats(self, out):
        c = self.config
        da = c.act_dim
        mu, raw = out[..., :da], out[..., da:]
        t = np.tanh(raw)
        log_std = c.log_std_min + 0.5 * (c.log_std_max - c.log_std_min) * (t + 1.0)
        return mu, raw, t, log_std

    def prior_mean(self, z) -> np.ndarray:
        mu, *_ = self._prior_stats(self._apply("prior", z))
        return np.tanh(mu)

    def prior_sample(self, z, rng: np.random.Generator) -> np.ndarray:
        mu, _, _, log_std = self._prior_stats(self._apply("prior", z))
        return np.tanh(mu + np.exp(log_std) * rng.standard_normal(mu.shape))

    # ------------------------------------------------------------ losses

    def td_targets(self, batch: Batch) -> Targets:
        c = self.config
        z_next = self.encode(batch.s2, target=True)
        z2 = self.encode(batch.s2)
        a2 = self.prior_mean(z2)
        boot = self.value(z2, a2, target=True)
        y = batch.r + c.gamma * (1.0 - batch.done) * boot
        return Targets(z_next, y)

    def loss_terms(self, batch: Batch, targets: Targets, eps: np.ndarray, params=None, grads: bool = True):
        """Loss terms and their analytic gradients.

        ``eps`` is the standard-normal noise of the prior's reparameterized
        sample, shape (N, act_dim). ``params`` overrides the online
        parameters (used by finite-difference checks). Returns
        (terms, grads) where grads maps term -> {param name -> flat grad}.
        """
        c = self.config
        P = self.params if params is None else params
        n = len(batch)
        dz = c.latent_dim
        nets = self.nets
        r = batch.r[:, None]
        y = targets.y[:, None]

        z, cE = nets["encoder"].forward(P["encoder"], batch.s)
        za = np.concatenate([z, batch.a], axis=1)
        zp, cD = nets["dynamics"].forward(P["dynamics"], za)
        rh, cR = nets["reward"].forward(P["reward"], za)
        q1, cQ1 = nets["q1"].forward(P["q1"], za)
        q2, cQ2 = nets["q2"].forward(P["q2"], za)

        ez = zp - targets.z_next
        er = rh - r
        e1, e2 = q1 - y, q2 - y
        terms = {
            "consistency": float(np.sum(ez * ez) / n),
            "reward": float(np.sum(er * er) / n),
            "value": float(np.sum(e1 * e1 + e2 * e2) / n),
        }

        # prior: reparameterized squashed sample on the detached latent
        out, cP = nets["prior"].forward(P["prior"], z)
        mu, raw, t, log_std = self._prior_stats(out)
        std = np.exp(log_std)
        a_pi = np.tanh(mu + std * eps)
        zpi = np.concatenate([z, a_pi], axis=1)
        v1, cV1 = nets["q1"].forward(P["q1"], zpi)
        v2, cV2 = nets["q2"].forward(P["q2"], zpi)
        pick1 = v1 <= v2
        vmin = np.where(pick1, v1, v2)
        terms["prior"] = float(-np.sum(vmin) / n - c.entropy_coef * np.sum(log_std) / n)
        if not grads:
            return terms, None

        g = {k: {} for k in terms}

        def through_latent(term, gza):
            g[term]["encoder"] = nets["encoder"].backward(P["encoder"], cE, gza[:, :dz], need_input=False)[0]

        gd, gx = nets["dynamics"].backward(P["dynamics"], cD, 2.0 * ez / n)
        g["consistency"]["dynamics"] = gd
        through_latent("consistency", gx)

        gr, gx = nets["reward"].backward(P["reward"], cR, 2.0 * er / n)
        g["reward"]["reward"] = gr
        through_latent("reward", gx)

        g1, gx1 = nets["q1"].backward(P["q1"], cQ1, 2.0 * e1 / n)
        g2, gx2 = nets["q2"].backward(P["q2"], cQ2, 2.0 * e2 / n)
        g["value"]["q1"], g["value"]["q2"] = g1, g2
        through_latent("value", gx1 + gx2)

        # only the prior parameters receive the prior term's gradient
        gv = -np.ones((n, 1)) / n
        _, ga1 = nets["q1"].backward(P["q1"], cV1, np.where(pick1, gv, 0.0))
        _, ga2 = nets["q2"].backward(P["q2"], cV2, np.where(pick1, 0.0, gv))
        g_a = (ga1 + ga2)[:, dz:]
        g_u = g_a * (1.0 - a_pi * a_pi)
        g_logstd = g_u * eps * std - c.entropy_coef / n
        g_raw = g_logstd * 0.5 * (c.log_std_max - c.log_std_min) * (1.0 - t * t)
        g["prior"]["prior"] = nets["prior"].backward(P["prior"], cP, np.concatenate([g_u, g_raw], axis=1), need_input=False)[0]
        return terms, g

    # ------------------------------------------------------------ update

    def combined_grads(self, g: dict) -> dict:
        c = self.config
        coef = {"consistency": c.consistency_coef, "reward": c.reward_coef, "value": c.value_coef, "prior": 1.0}
        total = {name: np.zeros_like(self.params[name]) for name in ONLINE}
        for term, per in g.items():
            for name, grad in per.items():
                total[name] += coef[term] * grad
        return total

    def td_update(self, batch: Batch, rng: np.random.Generator) -> dict:
        """One Adam step on the joint objective, then Polyak target update."""
        if len(batch) == 0:
            raise ValueError("empty batch")
        c = self.config
        targets = self.td_targets(batch)
        eps = rng.standard_normal((len(batch), c.act_dim))
        terms, g = self.loss_terms(batch, targets, eps)
        total = self.combined_grads(g)
        finite = all(np.isfinite(v) for v in terms.values()) and all(np.all(np.isfinite(v)) for v in total.values())
        if not finite:
            raise TrainingFault(f"non-finite loss {terms}")
        gnorm = float(np.sqrt(sum(np.sum(v * v) for v in total.values())))
        scale = min(1.0, c.grad_clip / gnorm) if gnorm > 0 else 1.0
        self._adam_step(total, scale)
        self.polyak(c.tau)
        self.n_updates += 1
        terms["grad_norm"] = gnorm
        return terms

    def _adam_step(self, grads: dict, scale: float = 1.0, b1=0.9, b2=0.999, eps=1e-8):
        st = self.adam
        st.t += 1
        lr = self.config.lr * np.sqrt(1.0 - b2**st.t) / (1.0 - b1**st.t)
        for name, grad in grads.items():
            grad = grad * scale
            m = st.m.setdefault(name, np.zeros_like(grad))
            v = st.v.setdefault(name, np.zeros_like(grad))
            m *= b1
            m += (1.0 - b1) * grad
            v *= b2
            v += (1.0 - b2) * grad * grad
            self.params[name] -= lr * m / (np.sqrt(v) + eps)

    def polyak(self, tau: float) -> None:
        for t, src in TARGETS.items():
            if tau == 1.0:
                self.params[t][:] = self.params[src]
            else:
                self.params[t] += tau * (self.params[src] - self.params[t])

    # ------------------------------------------------------------ persistence

    def state_arrays(self) -> dict:
        out = {f"param/{k}": v for k, v in self.params.items()}
        for k, v in self.adam.m.items():
            out[f"adam_m/{k}"] = v
        for k, v in self.adam.v.items():
            out[f"adam_v/{k}"] = v
        out["adam_t"] = np.array(float(self.adam.t))
        out["n_updates"] = np.array(float(self.n_updates))
        return out

    def config_digest(self) -> str:
        return checkpoint.config_hash(asdict(self.config))

    def save(self, path) -> None:
        checkpoint.save(path, self.state_arrays(), self.config_digest())

    @classmethod
    def load(cls, path, config: ModelConfig) -> WorldModel:
        arrays, digest = checkpoint.load(path)
        model = cls(config)
        if digest != model.config_digest():
            raise StructuralError("checkpoint was written for a different model config")
        for k in list(model.params):
            a = arrays.get(f"param/{k}")
            if a is None or a.shape != model.params[k].shape:
                raise StructuralError(f"checkpoint parameter {k!r} missing or misshapen")
            model.params[k] = a.copy()
        for k, v in arrays.items():
            if k.startswith("adam_m/"):
                model.adam.m[k[7:]] = v.copy()
            elif k.startswith("adam_v/"):
                model.adam.v[k[7:]] = v.copy()
        model.adam.t = int(arrays.get("adam_t", 0))
        model.n_updates = int(arrays.get("n_updates", 0))
        return model


def encode(model: WorldModel, state) -> np.ndarray:
    return model.encode(state)


def td_update(model: WorldModel, batch: Batch, rng: np.random.Generator) -> dict:
    return model.td_update(batch, rng)
