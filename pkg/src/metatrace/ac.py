"""Online actor-critic with accumulating eligibility traces, AC(lambda).

Per step: ``z <- gamma*lambda*z + dU/dw`` with ``U = V + 0.5*log pi``, then
``w <- w + alpha * (z*delta + psi*dH/dw)``, where ``alpha`` comes from a tuner
that sees this step's TD error, trace and gradients first.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .errors import DivergenceError
from .model import GradientBundle, sample_action


@dataclass
class AcLearner:
    model: object
    gamma: float = 0.99
    lam: float = 0.8
    psi: float = 0.0
    params: np.ndarray = None
    z: np.ndarray = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise ValueError("gamma and lambda must lie in [0, 1]")
        if self.psi < 0:
            raise ValueError("psi must be non-negative")
        if self.params is None:
            self.params = self.model.init_params(None)
        if self.z is None:
            self.z = np.zeros_like(self.params)

    def reset_trace(self) -> None:
        self.z[:] = 0.0


@dataclass
class EpisodeRecord:
    ret: float
    steps: int


@nb.njit(cache=True)
def _accumulate(z, gl, gv, glp, active):
    for k in range(active.size):
        j = active[k]
        z[j] = gl * z[j] + (gv[j] + 0.5 * glp[j])


@nb.njit(cache=True)
def _apply_scalar(w, alpha, z, delta, psi, gh, active):
    for k in range(active.size):
        j = active[k]
        w[j] += alpha * (z[j] * delta + psi * gh[j])


@nb.njit(cache=True)
def _apply_vector(w, alpha, z, delta, psi, gh, active):
    for k in range(active.size):
        j = active[k]
        w[j] += alpha[j] * (z[j] * delta + psi * gh[j])


def td_error(bundle: GradientBundle, reward: float, gamma: float) -> float:
    # value_s_next is already 0 when the next state is terminal
    return reward + gamma * bundle.value_s_next - bundle.value_s


def accumulate_trace(learner: AcLearner, bundle: GradientBundle) -> AcLearner:
    _accumulate(learner.z, learner.gamma * learner.lam, bundle.grad_v_s, bundle.grad_logpi,
                np.arange(learner.z.size))
    return learner


def apply_update(learner: AcLearner, alpha, delta: float, bundle: GradientBundle) -> AcLearner:
    """``w <- w + alpha * (z*delta + psi*dH/dw)``; ``alpha`` may be scalar or per-weight."""
    active = np.arange(learner.params.size)
    if np.ndim(alpha) == 0:
        _apply_scalar(learner.params, float(alpha), learner.z, float(delta), learner.psi,
                      bundle.grad_entropy, active)
    else:
        alpha = np.asarray(alpha, dtype=np.float64)
        if alpha.shape != learner.params.shape:
            raise ValueError(f"alpha has shape {alpha.shape}, expected {learner.params.shape}")
        _apply_vector(learner.params, alpha, learner.z, float(delta), learner.psi,
                      bundle.grad_entropy, active)
    if not np.isfinite(learner.params).all():
        raise DivergenceError("weights are not finite", delta=delta)
    return learner


def run_episode(learner: AcLearner, env, encoder, tuner, rng: np.random.Generator,
                bootstrap_timeout: bool = False) -> EpisodeRecord:
    """Run one episode, learning online at every step.

    ``rng`` drives the start state and action selection; any representation
    randomness belongs to ``encoder``.  With ``bootstrap_timeout`` the value of
    the state reached at the step limit is bootstrapped instead of taken as 0.
    """
    model = learner.model
    learner.reset_trace()
    tuner.episode_reset()
    encoder.reset()
    obs = encoder.encode(env.reset(rng))
    total = 0.0
    while True:
        _, dist = model.evaluate(learner.params, obs)
        action = sample_action(dist, rng)
        out = env.step(action)
        encoder.step()
        total += out.reward
        terminal_next = out.terminal and not (out.timeout and bootstrap_timeout)
        obs_next = None if terminal_next else encoder.encode(out.next_state)
        bundle = model.gradients(learner.params, obs, obs_next, action, terminal_next)
        delta = td_error(bundle, out.reward, learner.gamma)
        accumulate_trace(learner, bundle)
        try:
            alpha = tuner.step(delta, learner.z, bundle, learner.gamma, learner.lam, learner.psi)
            apply_update(learner, alpha, delta, bundle)
        except DivergenceError as err:
            err.context.setdefault("step", out.steps_elapsed)
            raise
        if out.terminal:
            return EpisodeRecord(total, out.steps_elapsed)
        obs = obs_next
