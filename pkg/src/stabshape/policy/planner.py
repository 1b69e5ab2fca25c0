"""Cross-entropy-method planning in latent space.

Any model exposing ``encode``, ``dynamics``, ``reward``, ``value`` (min of
the two heads) and ``prior_mean`` / ``prior_sample`` can be planned with.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 3
    population: int = 256
    elites: int = 32
    iterations: int = 4
    gamma: float = 0.99
    min_std: float = 0.05
    init_std: float = 2.0
    prior_fraction: float = 0.05
    explore_noise: bool = True

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 1 <= self.elites <= self.population:
            raise ValueError("need 1 <= elites <= population")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.min_std < 0 or self.init_std < 0:
            raise ValueError("std settings must be >= 0")
        if not 0.0 <= self.prior_fraction <= 1.0:
            raise ValueError("prior_fraction must be in [0, 1]")


def rollout_score(model, z0, actions, gamma: float, horizon: int | None = None) -> np.ndarray:
    """Discounted model reward over the sequence plus a bootstrapped value.

    ``actions`` is (..., H, act_dim) and ``z0`` is (..., d_z) or (d_z,).
    """
    actions = np.asarray(actions, dtype=float)
    H = actions.shape[-2]
    if horizon is not None and horizon != H:
        raise ValueError(f"sequence length {H} != horizon {horizon}")
    z = np.broadcast_to(z0, (*actions.shape[:-2], np.shape(z0)[-1]))
    total = np.zeros(actions.shape[:-2])
    disc = 1.0
    for t in range(H):
        a = actions[..., t, :]
        total = total + disc * model.reward(z, a)
        z = model.dynamics(z, a)
        disc *= gamma
    if disc != 0.0:
        total = total + disc * model.value(z, model.prior_mean(z))
    return total


def _prior_rollouts(model, z0, n, horizon, rng, low, high):
    z = np.repeat(z0[None], n, axis=0)
    seq = np.empty((n, horizon, len(low)))
    for t in range(horizon):
        a = np.clip(model.prior_sample(z, rng), low, high)
        seq[:, t] = a
        if t + 1 < horizon:
            z = model.dynamics(z, a)
    return seq


def plan(
    model,
    state,
    config: PlannerConfig,
    previous_solution: np.ndarray | None,
    rng: np.random.Generator,
    action_low,
    action_high,
    explore: bool = False,
):
    """Returns (action, mean_sequence, std_sequence).

    Feed ``mean_sequence`` back as ``previous_solution`` on the next step;
    it is shifted by one internally.
    """
    c = config
    low = np.asarray(action_low, dtype=float)
    high = np.asarray(action_high, dtype=float)
    da = len(low)
    H, K = c.horizon, c.population
    z0 = np.asarray(model.encode(np.asarray(state, dtype=float)[None]))[0]

    mean = np.zeros((H, da))
    if previous_solution is not None:
        mean[:-1] = previous_solution[1:]
        mean[-1] = previous_solution[-1]
    std = np.full((H, da), c.init_std)

    n_pi = int(round(c.prior_fraction * K))
    pi_seq = _prior_rollouts(model, z0, n_pi, H, rng, low, high) if n_pi else np.zeros((0, H, da))
    n_s = K - n_pi
    for _ in range(c.iterations):
        noise = rng.standard_normal((n_s, H, da)) if n_s else np.zeros((0, H, da))
        samples = np.clip(mean + std * noise, low, high)
        seqs = np.concatenate([pi_seq, samples], axis=0)
        scores = rollout_score(model, z0, seqs, c.gamma)
        scores = np.where(np.isfinite(scores), scores, -np.inf)
        elite = np.argsort(-scores, kind="stable")[: c.elites]
        mean = seqs[elite].mean(axis=0)
        std = np.maximum(seqs[elite].std(axis=0), c.min_std)

    action = mean[0]
    if explore and c.explore_noise:
        action = action + std[0] * rng.standard_normal(da)
    return np.clip(action, low, high), mean, std


class Planner:
    """Stateful wrapper that carries the warm start between steps."""

    def __init__(self, model, config: PlannerConfig, action_low, action_high, seed: int = 0):
        self.model = model
        self.config = config
        self.low = np.asarray(action_low, dtype=float)
        self.high = np.asarray(action_high, dtype=float)
        self.rng = np.random.default_rng(seed)
        self._prev = None

    def reset(self) -> None:
        self._prev = None

    def act(self, state, explore: bool = False) -> np.ndarray:
        a, self._prev, _ = plan(self.model, state, self.config, self._prev, self.rng, self.low, self.high, explore)
        return a
