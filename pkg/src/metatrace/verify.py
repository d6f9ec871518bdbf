"""Independent oracles for the test-suite.

The learning code never imports this module; only tests and the ``check``
command do.  It provides the forward-view lambda-return (checked against its
TD-error expansion), central finite differences, and a forced-action replay
that measures ``dw/dbeta`` directly so it can be compared with a scalar
tuner's ``h`` trace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .ac import AcLearner, accumulate_trace, apply_update, td_error
from .env import MountainCar
from .features import TileEncoder
from .meta import FixedStepSize, ScalarMetatrace, Tuner
from .model import GradientBundle, LinearActorCritic, sample_action

IDENTITY_TOL = 1e-10


@dataclass
class TrajStep:
    features: object
    action: int
    reward: float
    value: float
    bundle: GradientBundle | None = None


@dataclass
class Trajectory:
    """Recorded steps under one frozen weight vector.

    ``final_value`` is the value of the state after the last step; it is
    ignored (taken as 0) when ``terminal`` is set.
    """

    steps: list[TrajStep]
    terminal: bool = True
    final_value: float = 0.0

    def __post_init__(self) -> None:
        if not self.steps:
            raise ValueError("a trajectory needs at least one step")
        if not all(math.isfinite(s.reward) for s in self.steps):
            raise ValueError("rewards must be finite")

    @property
    def rewards(self) -> np.ndarray:
        return np.array([s.reward for s in self.steps])

    @property
    def values(self) -> np.ndarray:
        """V(S_0) ... V(S_T), the last entry being the bootstrap (0 if terminal)."""
        tail = 0.0 if self.terminal else self.final_value
        return np.array([s.value for s in self.steps] + [tail])


def td_errors(traj: Trajectory, gamma: float) -> np.ndarray:
    v = traj.values
    return traj.rewards + gamma * v[1:] - v[:-1]


def lambda_return_delta_sum(traj: Trajectory, gamma: float, lam: float) -> np.ndarray:
    """G_t = V(S_t) + sum_{k>=t} (gamma*lam)^(k-t) delta_k, summed term by term."""
    delta = td_errors(traj, gamma)
    v = traj.values
    T = delta.size
    out = np.empty(T)
    for t in range(T):
        acc = 0.0
        for k in range(t, T):
            acc += (gamma * lam) ** (k - t) * delta[k]
        out[t] = v[t] + acc
    return out


def forward_lambda_return(traj: Trajectory, gamma: float, lam: float) -> np.ndarray:
    """Lambda-returns of every step by backward recursion from the end.

    The TD-error expansion is computed as well and the two must agree to
    within 1e-10 (scaled by the magnitude of the returns for large values).
    """
    r = traj.rewards
    v = traj.values
    T = r.size
    g = np.empty(T)
    nxt = v[T]
    for t in range(T - 1, -1, -1):
        nxt = r[t] + gamma * ((1.0 - lam) * v[t + 1] + lam * nxt)
        g[t] = nxt
    check = lambda_return_delta_sum(traj, gamma, lam)
    scale = max(1.0, float(np.max(np.abs(g))))
    err = float(np.max(np.abs(g - check)))
    if err > IDENTITY_TOL * scale:
        raise AssertionError(f"recursion and delta-sum disagree by {err:.3e}")
    return g


def record_trajectory(model, params: np.ndarray, rng: np.random.Generator,
                      max_steps: int | None = None, encoder=None) -> Trajectory:
    """Roll out the policy of frozen ``params`` on mountain car, keeping bundles.

    Stopping at ``max_steps`` before the episode ends leaves a truncated
    trajectory whose last state is bootstrapped.
    """
    env = MountainCar()
    encoder = encoder or TileEncoder()
    encoder.reset()
    obs = encoder.encode(env.reset(rng))
    steps = []
    while True:
        value, dist = model.evaluate(params, obs)
        action = sample_action(dist, rng)
        out = env.step(action)
        encoder.step()
        truncated = max_steps is not None and len(steps) + 1 >= max_steps and not out.terminal
        obs_next = None if out.terminal else encoder.encode(out.next_state)
        bundle = model.gradients(params, obs, obs_next, action, out.terminal)
        steps.append(TrajStep(obs, action, out.reward, value, bundle))
        if out.terminal:
            return Trajectory(steps, terminal=True)
        if truncated:
            return Trajectory(steps, terminal=False, final_value=bundle.value_s_next)
        obs = obs_next


def finite_diff(fn: Callable[[np.ndarray], float], at: np.ndarray, index: int,
                eps: float = 1e-6) -> float:
    """Central difference of ``fn`` along coordinate ``index``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    w = np.array(at, dtype=float)
    base = w[index]
    w[index] = base + eps
    hi = fn(w)
    w[index] = base - eps
    lo = fn(w)
    return (hi - lo) / (2.0 * eps)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 1.0 if na == nb else 0.0
    return float(a @ b / (na * nb))


@dataclass
class ReplayConfig:
    """Setting for ``replay_h_oracle`` (linear model, plain mountain car)."""

    alpha0: float = 2.0**-9
    gamma: float = 0.99
    lam: float = 0.8
    psi: float = 0.0
    reward_scale: float = 1.0
    init_scale: float = 0.0


def _replay(learner: AcLearner, tuner: Tuner, rng: np.random.Generator, horizon: int,
            reward_scale: float, actions: list[int] | None = None) -> list[int]:
    env = MountainCar()
    encoder = TileEncoder()
    model = learner.model
    learner.reset_trace()
    tuner.episode_reset()
    obs = encoder.encode(env.reset(rng))
    taken = []
    for t in range(horizon):
        _, dist = model.evaluate(learner.params, obs)
        action = actions[t] if actions is not None else sample_action(dist, rng)
        taken.append(action)
        out = env.step(action)
        reward = out.reward * reward_scale
        obs_next = None if out.terminal else encoder.encode(out.next_state)
        bundle = model.gradients(learner.params, obs, obs_next, action, out.terminal)
        delta = td_error(bundle, reward, learner.gamma)
        accumulate_trace(learner, bundle)
        alpha = tuner.step(delta, learner.z, bundle, learner.gamma, learner.lam, learner.psi)
        apply_update(learner, alpha, delta, bundle)
        if out.terminal:
            break
        obs = obs_next
    return taken


def replay_h_oracle(config: ReplayConfig, eps: float, horizon: int,
                    seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Empirical ``dw/dbeta`` over ``horizon`` steps next to a scalar tuner's ``h``.

    Learner A runs scalar Metatrace with zero meta step-size and no
    normalization, so its step-size stays ``exp(beta)`` while ``h`` is traced.
    Learner B runs a fixed step-size ``exp(beta + eps)`` from the same start
    state and initial weights, replaying A's actions.  Returns
    ``((w_B - w_A) / eps, h_A)``.
    """
    model = LinearActorCritic(TileEncoder.dim)
    init = np.random.default_rng([seed, 1]).uniform(-1, 1, model.n_params) * config.init_scale
    beta = math.log(config.alpha0)

    learner_a = AcLearner(model, config.gamma, config.lam, config.psi, init.copy())
    tuner_a = ScalarMetatrace(model.n_params, config.alpha0, mu=0.0, normalized=False)
    actions = _replay(learner_a, tuner_a, np.random.default_rng(seed), horizon,
                      config.reward_scale)

    learner_b = AcLearner(model, config.gamma, config.lam, config.psi, init.copy())
    tuner_b = FixedStepSize(math.exp(beta + eps))
    _replay(learner_b, tuner_b, np.random.default_rng(seed), horizon, config.reward_scale,
            actions)
    return (learner_b.params - learner_a.params) / eps, tuner_a.state.h.copy()
