"""Oracle suite behind ``metatrace check``; each check returns a measured number."""

from __future__ import annotations

import numpy as np

from .env import MAX_POSITION, MAX_SPEED, MIN_POSITION, McState
from .features import N_TILE_FEATURES, RawStateEncoder, TileEncoder
from .model import LinearActorCritic, MLPActorCritic
from .verify import (
    ReplayConfig,
    cosine,
    finite_diff,
    forward_lambda_return,
    lambda_return_delta_sum,
    record_trajectory,
    replay_h_oracle,
)

FD_EPS = 1e-6
REL_FLOOR = 1e-5


def rel_error(fd: float, an: float, floor: float = REL_FLOOR) -> float:
    return abs(fd - an) / max(abs(fd), abs(an), floor)


def lambda_identity(n_traj: int = 1000, seed: int = 0, max_len: int = 20) -> float:
    """Largest |recursion - delta-sum| over random frozen-weight mountain-car trajectories."""
    rng = np.random.default_rng(seed)
    model = LinearActorCritic(N_TILE_FEATURES)
    worst = 0.0
    for _ in range(n_traj):
        params = rng.normal(0.0, rng.uniform(0.01, 1.0), model.n_params)
        traj = record_trajectory(model, params, rng, max_steps=int(rng.integers(1, max_len + 1)))
        gamma, lam = rng.uniform(0, 1), rng.uniform(0, 1)
        g = forward_lambda_return(traj, gamma, lam)
        worst = max(worst, float(np.max(np.abs(g - lambda_return_delta_sum(traj, gamma, lam)))))
    return worst


def random_state(rng: np.random.Generator) -> McState:
    return McState(rng.uniform(MIN_POSITION, MAX_POSITION), rng.uniform(-MAX_SPEED, MAX_SPEED))


def _entropy(model, params, obs) -> float:
    logp = model.log_probs(params, obs)
    return float(-(np.exp(logp) * logp).sum())


def gradient_errors(model, params, obs, obs_next, action, coords) -> dict[str, float]:
    """Max relative error of each analytic gradient against central differences."""
    b = model.gradients(params, obs, obs_next, action, obs_next is None)
    fns = {
        "grad_v_s": (b.grad_v_s, lambda w: model.evaluate(w, obs)[0]),
        "grad_logpi": (b.grad_logpi, lambda w: float(model.log_probs(w, obs)[action])),
        "grad_entropy": (b.grad_entropy, lambda w: _entropy(model, w, obs)),
    }
    if obs_next is not None:
        fns["grad_v_s_next"] = (b.grad_v_s_next, lambda w: model.evaluate(w, obs_next)[0])
    out = {}
    for name, (grad, fn) in fns.items():
        out[name] = max(rel_error(finite_diff(fn, params, int(i), FD_EPS), grad[i]) for i in coords)
    return out


def linear_gradient_check(n_points: int = 200, seed: int = 0, n_off: int = 8) -> dict[str, float]:
    """Linear model at random weights; checks every coordinate a gradient touches plus
    ``n_off`` random untouched ones (whose derivative must be exactly zero)."""
    rng = np.random.default_rng(seed)
    model = LinearActorCritic(N_TILE_FEATURES)
    enc = TileEncoder()
    worst: dict[str, float] = {}
    for _ in range(n_points):
        params = rng.normal(0.0, 0.3, model.n_params)
        obs, obs_next = enc.encode(random_state(rng)), enc.encode(random_state(rng))
        action = int(rng.integers(model.n_actions))
        b = model.gradients(params, obs, obs_next, action, False)
        coords = np.concatenate([b.support, rng.integers(0, model.n_params, n_off)])
        for k, v in gradient_errors(model, params, obs, obs_next, action, coords).items():
            worst[k] = max(worst.get(k, 0.0), v)
    return worst


def mlp_gradient_check(n_points: int = 200, seed: int = 0, activation: str = "silu",
                       hidden: int = 32) -> dict[str, float]:
    """MLP at random weights and inputs; checks every coordinate."""
    rng = np.random.default_rng(seed)
    model = MLPActorCritic(hidden=hidden, activation=activation)
    enc = RawStateEncoder()
    coords = np.arange(model.n_params)
    worst: dict[str, float] = {}
    for _ in range(n_points):
        params = rng.normal(0.0, 0.5, model.n_params)
        obs, obs_next = enc.encode(random_state(rng)), enc.encode(random_state(rng))
        action = int(rng.integers(model.n_actions))
        for k, v in gradient_errors(model, params, obs, obs_next, action, coords).items():
            worst[k] = max(worst.get(k, 0.0), v)
    return worst


def h_oracle_cosines(seeds=range(20), horizon: int = 30, eps: float = 1e-4,
                     config: ReplayConfig | None = None) -> list[float]:
    config = config or ReplayConfig()
    return [cosine(*replay_h_oracle(config, eps, horizon, s)) for s in seeds]


def run_all(quick: bool = False) -> list[tuple[str, bool, str]]:
    n = 50 if quick else 200
    results = []
    worst = lambda_identity(200 if quick else 1000)
    results.append(("lambda-return identity", worst <= 1e-9, f"max abs diff {worst:.2e}"))
    for label, errs in (("linear gradients", linear_gradient_check(n)),
                        ("mlp gradients", mlp_gradient_check(n))):
        top = max(errs.values())
        detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
        results.append((label, top <= 1e-4, detail))
    cos = h_oracle_cosines(range(5 if quick else 20))
    results.append(("h-trace replay", min(cos) >= 0.99, f"min cosine {min(cos):.5f}"))
    return results

