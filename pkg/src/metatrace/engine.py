"""Compiled episode loop for linear actor-critic on (drifting) mountain car.

Same arithmetic, same kernels and same random-number consumption as
``ac.run_episode`` with a ``LinearActorCritic``; it only skips work on weights
whose trace and gradients are provably zero.  ``tests/test_engine.py`` checks
the two routes agree bit for bit.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

from .ac import AcLearner, EpisodeRecord, _accumulate, _apply_scalar, _apply_vector
from .env import GOAL_POSITION, MAX_STEPS, _dynamics
from .errors import DivergenceError
from .features import N_TILINGS, DriftingEncoder, TileEncoder, _draw_noise, _flip_signs, _tile_indices
from .meta import (
    FixedStepSize,
    MixedMetatrace,
    ScalarMetatrace,
    Tuner,
    VectorMetatrace,
    _mixed_kernel,
    _scalar_kernel,
    _vector_kernel,
)
from .model import LinearActorCritic, _linear_forward, _linear_gradients, _sample

FIXED, SCALAR, VECTOR, MIXED = 0, 1, 2, 3

OK, DIVERGED = 0, 1


@nb.njit(cache=True)
def _encode(position, velocity, idx, val, drifting, signs, n_noise, drift_rng, noise):
    _tile_indices(position, velocity, idx)
    for i in range(N_TILINGS):
        val[i] = signs[idx[i]] if drifting else 1.0
    if drifting:
        _draw_noise(drift_rng, noise)
        base = signs.size
        for i in range(n_noise):
            idx[N_TILINGS + i] = base + i
            val[N_TILINGS + i] = noise[i]


@nb.njit(cache=True)
def _all_finite(x, active):
    for k in range(active.size):
        if not math.isfinite(x[active[k]]):
            return False
    return True


@nb.njit(cache=True)
def _episode(kind, w, z, d, n_actions, sc, b_vec, zb_vec, v_vec, h_a, h_b, d_beta,
             alpha0, gamma, lam, psi, mu, normalized, agent_rng,
             drifting, signs, drift_rate, n_noise, drift_rng, bootstrap_timeout):
    n = w.size
    gl = gamma * lam
    gv = np.zeros(n)
    gvn = np.zeros(n)
    glp = np.zeros(n)
    gh = np.zeros(n)
    mark = np.zeros(n, dtype=np.bool_)
    in_active = np.zeros(n, dtype=np.bool_)
    active = np.empty(n, dtype=np.int64)
    n_active = 0
    alpha_vec = np.empty(n)

    k = N_TILINGS + (n_noise if drifting else 0)
    idx_t = np.empty(k, dtype=np.int64)
    val_t = np.empty(k)
    idx_n = np.empty(k, dtype=np.int64)
    val_n = np.empty(k)
    noise = np.empty(n_noise)
    supp = np.empty(k * (2 + n_actions), dtype=np.int64)
    m = 0
    probs = np.empty(n_actions)
    logp = np.empty(n_actions)

    position = agent_rng.uniform(-0.6, -0.4)
    velocity = 0.0
    _encode(position, velocity, idx_t, val_t, drifting, signs, n_noise, drift_rng, noise)
    total = 0.0
    steps = 0
    while True:
        _linear_forward(w, idx_t, val_t, d, probs, logp)
        action = _sample(probs, agent_rng.random())
        position, velocity = _dynamics(position, velocity, action)
        steps += 1
        goal = position >= GOAL_POSITION
        timeout = (not goal) and steps >= MAX_STEPS
        terminal = goal or timeout
        if drifting:
            _flip_signs(signs, drift_rate, drift_rng)
        reward = -1.0
        total += reward
        has_next = not (terminal and not (timeout and bootstrap_timeout))
        kn = 0
        if has_next:
            _encode(position, velocity, idx_n, val_n, drifting, signs, n_noise, drift_rng, noise)
            kn = k

        for q in range(m):
            j = supp[q]
            gv[j] = 0.0
            gvn[j] = 0.0
            glp[j] = 0.0
            gh[j] = 0.0
        value, value_next, _, _, m = _linear_gradients(
            w, idx_t, val_t, idx_n[:kn], val_n[:kn], has_next, d, action,
            probs, logp, gv, gvn, glp, gh, mark, supp)
        for q in range(m):
            j = supp[q]
            if not in_active[j]:
                in_active[j] = True
                active[n_active] = j
                n_active += 1
        act = active[:n_active]
        sp = supp[:m]

        delta = reward + gamma * value_next - value
        _accumulate(z, gl, gv, glp, act)
        if kind == FIXED:
            _apply_scalar(w, alpha0, z, delta, psi, gh, act)
        elif kind == SCALAR:
            beta, zb, v, u, alpha, _, _, _ = _scalar_kernel(
                sc[0], sc[1], sc[2], sc[3], h_a, delta, z, gv, gvn, glp, gh, sp, act,
                gamma, lam, psi, mu, normalized)
            sc[0] = beta
            sc[1] = zb
            sc[2] = v
            sc[3] = u
            if not (math.isfinite(alpha) and math.isfinite(zb) and _all_finite(h_a, act)):
                return total, steps, DIVERGED
            _apply_scalar(w, alpha, z, delta, psi, gh, act)
        elif kind == VECTOR:
            u, _, _, _ = _vector_kernel(
                b_vec, zb_vec, v_vec, h_a, d_beta, sc[3], delta, z, gv, gvn, glp, gh, sp, act,
                alpha_vec, gamma, lam, psi, mu, normalized)
            sc[3] = u
            if not (_all_finite(alpha_vec, act) and _all_finite(h_a, act)):
                return total, steps, DIVERGED
            _apply_vector(w, alpha_vec, z, delta, psi, gh, act)
        else:
            bh, zbh, vh, u, _, _, _ = _mixed_kernel(
                sc[0], sc[1], sc[2], h_a, b_vec, zb_vec, v_vec, h_b, d_beta, sc[3], delta, z,
                gv, gvn, glp, gh, sp, act, alpha_vec, gamma, lam, psi, mu, normalized)
            sc[0] = bh
            sc[1] = zbh
            sc[2] = vh
            sc[3] = u
            if not (_all_finite(alpha_vec, act) and _all_finite(h_a, act)
                    and _all_finite(h_b, act)):
                return total, steps, DIVERGED
            _apply_vector(w, alpha_vec, z, delta, psi, gh, act)
        if not _all_finite(w, act):
            return total, steps, DIVERGED
        if terminal:
            return total, steps, OK
        idx_t, idx_n = idx_n, idx_t
        val_t, val_n = val_n, val_t


_DUMMY = np.zeros(1)


def run_episode_fast(learner: AcLearner, encoder, tuner: Tuner, rng: np.random.Generator,
                     bootstrap_timeout: bool = False) -> EpisodeRecord:
    """Drop-in for ``run_episode`` when the model is linear and the env is mountain car.

    Raises ``DivergenceError`` exactly when the reference loop would.  Per-step
    tuner diagnostics (``state.last``) are not updated on this route.
    """
    model = learner.model
    if not isinstance(model, LinearActorCritic):
        raise TypeError("the compiled loop only supports LinearActorCritic")
    if isinstance(encoder, DriftingEncoder):
        drift = encoder.drift
        drifting, signs, rate, n_noise, drift_rng = True, drift.signs, float(drift.drift_rate), drift.n_noisy, drift.rng
    elif isinstance(encoder, TileEncoder):
        drifting, signs, rate, n_noise, drift_rng = False, _DUMMY, 0.0, 0, rng
    else:
        raise TypeError(f"unsupported encoder {type(encoder).__name__}")
    if model.n_features != encoder.dim:
        raise ValueError("encoder and model feature dimensions differ")

    learner.reset_trace()
    tuner.episode_reset()
    sc = np.zeros(4)
    b_vec = zb_vec = v_vec = h_a = h_b = d_beta = _DUMMY
    alpha0 = 0.0
    if isinstance(tuner, FixedStepSize):
        kind, alpha0 = FIXED, float(tuner.alpha0)
    elif isinstance(tuner, ScalarMetatrace):
        s = tuner.state
        kind, h_a = SCALAR, s.h
        sc[:] = (s.beta, s.z_beta, s.v, s.u)
    elif isinstance(tuner, VectorMetatrace):
        s = tuner.state
        kind, b_vec, zb_vec, v_vec, h_a, d_beta = VECTOR, s.beta, s.z_beta, s.v, s.h, s._d_beta
        sc[3] = s.u
    elif isinstance(tuner, MixedMetatrace):
        s = tuner.state
        kind = MIXED
        b_vec, zb_vec, v_vec, h_a, h_b, d_beta = (s.beta_vec, s.z_beta_vec, s.v_vec, s.h_hat,
                                                  s.h_vec, s._d_beta)
        sc[:] = (s.beta_hat, s.z_beta_hat, s.v_hat, s.u)
    else:
        raise TypeError(f"unsupported tuner {type(tuner).__name__}")
    mu = getattr(tuner.state, "mu", 0.0)
    normalized = getattr(tuner.state, "normalized", True)

    total, steps, status = _episode(
        kind, learner.params, learner.z, model.n_features, model.n_actions, sc,
        b_vec, zb_vec, v_vec, h_a, h_b, d_beta, alpha0, learner.gamma, learner.lam,
        learner.psi, mu, normalized, rng, drifting, signs, rate, n_noise, drift_rng,
        bootstrap_timeout)

    if kind == SCALAR:
        s.beta, s.z_beta, s.v, s.u = (float(x) for x in sc)
    elif kind == VECTOR:
        s.u = float(sc[3])
    elif kind == MIXED:
        s.beta_hat, s.z_beta_hat, s.v_hat, s.u = (float(x) for x in sc)
    if status == DIVERGED:
        raise DivergenceError("run diverged", step=int(steps))
    return EpisodeRecord(float(total), int(steps))
