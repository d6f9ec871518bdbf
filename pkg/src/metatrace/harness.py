"""Seeded experiment runner: learning curves, smoothing, sweeps and presets."""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .ac import AcLearner, run_episode
from .engine import run_episode_fast
from .env import MountainCar
from .errors import DivergenceError
from .features import N_NOISY, N_TILE_FEATURES, DriftingEncoder, DriftState, RawStateEncoder, TileEncoder
from .meta import MixedMetatrace, ScalarMetatrace, VectorMetatrace, make_tuner
from .model import LinearActorCritic, MLPActorCritic

log = logging.getLogger(__name__)

ENVS = ("mountain_car", "drifting_mountain_car")
MODELS = ("linear", "mlp")
TUNERS = ("fixed", "scalar", "vector", "mixed")
BETA_GROUPS = ("critic_info", "critic_noise", "actor_info", "actor_noise")
BASE_HEADER = ["seed", "episode", "return", "steps"]


@dataclass(frozen=True)
class ExperimentConfig:
    env: str = "mountain_car"
    model: str = "linear"
    tuner: str = "fixed"
    normalized: bool = True
    alpha0: float = 2.0**-7
    mu: float = 0.0
    gamma: float = 0.99
    lam: float = 0.8
    psi: float = 0.0
    episodes: int = 1000
    seeds: tuple[int, ...] = tuple(range(10))
    drift_rate: float = 0.0
    n_noisy: int = N_NOISY
    smoothing_window: int = 20
    bootstrap_timeout: bool = False
    hidden: int = 32
    activation: str = "silu"

    def __post_init__(self) -> None:
        if self.env not in ENVS:
            raise ValueError(f"env must be one of {ENVS}, got {self.env!r}")
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.tuner not in TUNERS:
            raise ValueError(f"tuner must be one of {TUNERS}, got {self.tuner!r}")
        if self.model == "mlp" and self.env != "mountain_car":
            raise ValueError("the MLP reads the raw state and only runs on plain mountain car")
        if not self.alpha0 > 0:
            raise ValueError("alpha0 must be positive")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        if not (0 <= self.gamma <= 1 and 0 <= self.lam <= 1):
            raise ValueError("gamma and lambda must lie in [0, 1]")
        if self.psi < 0 or self.episodes < 0 or self.smoothing_window < 1:
            raise ValueError("psi and episodes must be >= 0, window >= 1")
        if not (0 <= self.drift_rate <= 1):
            raise ValueError("drift_rate must be a probability")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class EpisodeRow:
    seed: int
    episode: int
    ret: float
    steps: int
    betas: tuple[float, ...] | None = None


@dataclass
class SeedResult:
    seed: int
    rows: list[EpisodeRow]
    diverged_at: int | None = None


@dataclass
class LearningCurve:
    config: ExperimentConfig
    rows: list[EpisodeRow] = field(default_factory=list)
    diverged: dict[int, int] = field(default_factory=dict)

    @property
    def has_betas(self) -> bool:
        return self.config.tuner != "fixed"

    def returns(self) -> dict[int, np.ndarray]:
        """Per-seed arrays of episode returns, in episode order."""
        out: dict[int, list[float]] = {}
        for r in self.rows:
            out.setdefault(r.seed, []).append(r.ret)
        return {s: np.asarray(v) for s, v in out.items()}

    def betas(self) -> dict[int, np.ndarray]:
        """Per-seed (episodes x 4) arrays of end-of-episode group-mean beta (NaN if absent)."""
        out: dict[int, list] = {}
        for r in self.rows:
            if r.betas is not None:
                out.setdefault(r.seed, []).append(r.betas)
        return {s: np.asarray(v, dtype=float) for s, v in out.items()}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = list(BASE_HEADER)
        if self.has_betas:
            header += [f"beta_{g}" for g in BETA_GROUPS]
        writer.writerow(header)
        for r in sorted(self.rows, key=lambda r: (r.seed, r.episode)):
            line = [r.seed, r.episode, repr(float(r.ret)), r.steps]
            if self.has_betas:
                line += ["" if b is None or math.isnan(b) else repr(float(b)) for b in (r.betas or (None,) * 4)]
            writer.writerow(line)
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_csv().encode("utf-8"))


def beta_groups(model: LinearActorCritic, n_tile: int = N_TILE_FEATURES) -> dict[str, np.ndarray]:
    """Partition parameter indices into {critic, actor} x {informative, noisy}.

    Features past ``n_tile`` are the noisy block; plain tile coding yields only
    the two informative groups.
    """
    d = model.n_features
    n_noise = d - n_tile
    if n_noise < 0:
        raise ValueError("model has fewer features than the tile block")
    groups = {"critic_info": np.arange(0, n_tile)}
    if n_noise:
        groups["critic_noise"] = np.arange(n_tile, d)
    actor_offsets = [(1 + a) * d for a in range(model.n_actions)]
    groups["actor_info"] = np.concatenate([o + np.arange(0, n_tile) for o in actor_offsets])
    if n_noise:
        groups["actor_noise"] = np.concatenate([o + np.arange(n_tile, d) for o in actor_offsets])
    return groups


def _beta_summary(tuner, groups: dict[str, np.ndarray] | None) -> tuple[float, ...] | None:
    state = tuner.state
    if isinstance(tuner, ScalarMetatrace):
        return tuple(state.beta if groups is None or g in groups else math.nan for g in BETA_GROUPS)
    if groups is None:
        return None
    if isinstance(tuner, VectorMetatrace):
        beta = state.beta
        return tuple(float(beta[groups[g]].mean()) if g in groups else math.nan for g in BETA_GROUPS)
    if isinstance(tuner, MixedMetatrace):
        bv = state.beta_vec
        return tuple(float(state.beta_hat + bv[groups[g]].mean()) if g in groups else math.nan
                     for g in BETA_GROUPS)
    return None


def _rngs(seed: int):
    agent, drift, init = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(agent), np.random.default_rng(drift), np.random.default_rng(init)


def run_seed(cfg: ExperimentConfig, seed: int) -> SeedResult:
    """One independent run: fresh env, learner, tuner and random sources."""
    agent_rng, drift_rng, init_rng = _rngs(seed)
    if cfg.model == "mlp":
        encoder = RawStateEncoder()
        model = MLPActorCritic(hidden=cfg.hidden, activation=cfg.activation)
        params = model.init_params(init_rng)
    else:
        if cfg.env == "drifting_mountain_car":
            encoder = DriftingEncoder(DriftState(cfg.drift_rate, drift_rng, cfg.n_noisy))
        else:
            encoder = TileEncoder()
        model = LinearActorCritic(encoder.dim)
        params = model.init_params(init_rng)
    learner = AcLearner(model, cfg.gamma, cfg.lam, cfg.psi, params)
    tuner = make_tuner(cfg.tuner, model.n_params, cfg.alpha0, cfg.mu, cfg.normalized)
    groups = beta_groups(model) if isinstance(model, LinearActorCritic) else None
    env = MountainCar()
    rows = []
    for ep in range(cfg.episodes):
        try:
            if isinstance(model, LinearActorCritic):
                rec = run_episode_fast(learner, encoder, tuner, agent_rng, cfg.bootstrap_timeout)
            else:
                rec = run_episode(learner, env, encoder, tuner, agent_rng, cfg.bootstrap_timeout)
        except DivergenceError as err:
            log.warning("seed %d diverged in episode %d: %s", seed, ep, err)
            return SeedResult(seed, rows, diverged_at=ep)
        betas = _beta_summary(tuner, groups) if cfg.tuner != "fixed" else None
        rows.append(EpisodeRow(seed, ep, rec.ret, rec.steps, betas))
    return SeedResult(seed, rows)


def _collect(cfg: ExperimentConfig, results) -> LearningCurve:
    curve = LearningCurve(cfg)
    for res in sorted(results, key=lambda r: r.seed):
        curve.rows.extend(res.rows)
        if res.diverged_at is not None:
            curve.diverged[res.seed] = res.diverged_at
    return curve


def _map(fn, args: list[tuple], jobs: int):
    if jobs <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*args)))


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> LearningCurve:
    """Run every seed of ``cfg``; rows come back raw and sorted by (seed, episode).

    A diverging seed yields a truncated curve and an entry in ``curve.diverged``
    (seed -> episode index); it does not abort the other seeds.
    """
    results = _map(run_seed, [(cfg, s) for s in cfg.seeds], jobs)
    return _collect(cfg, results)


def smooth(returns: np.ndarray, window: int) -> np.ndarray:
    """Trailing mean over the last ``window`` episodes (shorter at the start)."""
    returns = np.asarray(returns, dtype=float)
    if window < 1:
        raise ValueError("window must be >= 1")
    c = np.concatenate([[0.0], np.cumsum(returns)])
    idx = np.arange(1, returns.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def aggregate(curves, window: int) -> np.ndarray:
    """Mean over seeds of each seed's trailing-window average.

    ``curves`` is a ``LearningCurve``, a mapping seed -> returns, or a list of
    return arrays.  Truncated (diverged) seeds count only for the episodes they
    completed.
    """
    if isinstance(curves, LearningCurve):
        curves = curves.returns()
    if isinstance(curves, dict):
        curves = [curves[k] for k in sorted(curves)]
    curves = [np.asarray(c, dtype=float) for c in curves]
    if not curves:
        return np.zeros(0)
    length = max(c.size for c in curves)
    total = np.zeros(length)
    count = np.zeros(length)
    for c in curves:
        total[:c.size] += smooth(c, window)
        count[:c.size] += 1
    with np.errstate(invalid="ignore"):
        return total / count


def final_return(curve: LearningCurve, last: int = 100, window: int | None = None) -> float:
    """Mean of the smoothed seed-mean curve over its final ``last`` episodes."""
    agg = aggregate(curve, window or curve.config.smoothing_window)
    if agg.size == 0:
        return math.nan
    return float(agg[-last:].mean())


def _fmt(x: float) -> str:
    if x > 0:
        k = math.log2(x)
        if k == int(k):
            return f"2^{int(k)}"
    return repr(float(x))


def cell_name(cfg: ExperimentConfig) -> str:
    parts = [cfg.env, cfg.model, cfg.tuner, "norm" if cfg.normalized else "unnorm",
             f"alpha0={_fmt(cfg.alpha0)}"]
    if cfg.tuner != "fixed":
        parts.append(f"mu={_fmt(cfg.mu)}")
    if cfg.env == "drifting_mountain_car":
        parts.append(f"drift={cfg.drift_rate!r}")
    return "_".join(parts)


def grid_configs(base: ExperimentConfig, grid: dict[str, list]) -> list[ExperimentConfig]:
    """Cartesian product of ``grid`` applied over ``base``; mu collapses for the fixed tuner."""
    keys = [k for k in ("alpha0", "mu", "tuner", "drift_rate") if k in grid]
    seen, out = set(), []
    for values in itertools.product(*(grid[k] for k in keys)):
        cfg = replace(base, **dict(zip(keys, values)))
        if cfg.tuner == "fixed":
            cfg = replace(cfg, mu=0.0)
        name = cell_name(cfg)
        if name not in seen:
            seen.add(name)
            out.append(cfg)
    return out


def sweep(base: ExperimentConfig, grid: dict[str, list], out_dir: str | Path,
          jobs: int = 1) -> dict:
    """Run every grid cell, write one CSV per cell plus ``manifest.json``.

    Returns the manifest.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = grid_configs(base, grid)
    tasks = [(cfg, s) for cfg in cells for s in cfg.seeds]
    results = _map(run_seed, tasks, jobs)
    manifest = {"base_config_hash": base.config_hash(), "grid": grid, "cells": []}
    for cfg in cells:
        mine = [r for (c, _), r in zip(tasks, results) if c is cfg]
        curve = _collect(cfg, mine)
        name = cell_name(cfg)
        curve.write_csv(out_dir / f"{name}.csv")
        manifest["cells"].append({
            "name": name,
            "file": f"{name}.csv",
            "config": cfg.to_dict(),
            "config_hash": cfg.config_hash(),
            "diverged": {str(k): v for k, v in curve.diverged.items()},
            "final_return": final_return(curve),
        })
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def best_mu_cells(manifest: dict) -> dict[tuple, dict]:
    """Pick, per (env, tuner, alpha0, drift), the cell with the best final return."""
    best: dict[tuple, dict] = {}
    for cell in manifest["cells"]:
        c = cell["config"]
        key = (c["env"], c["tuner"], c["normalized"], c["alpha0"], c["drift_rate"])
        score = cell["final_return"]
        if score is None or (isinstance(score, float) and math.isnan(score)):
            continue
        if key not in best or score > best[key]["final_return"]:
            best[key] = cell
    return best


def _pow2(lo: int, hi: int) -> list[float]:
    return [2.0**k for k in range(lo, hi + 1)]


DRIFT_EPISODES = 2000

PRESETS: dict[str, tuple[dict, dict]] = {
    "fig1": (
        dict(env="mountain_car", tuner="fixed", episodes=1000, seeds=tuple(range(10)),
             smoothing_window=20),
        {"alpha0": _pow2(-12, -5)},
    ),
    "fig2": (
        dict(env="mountain_car", tuner="scalar", normalized=True, episodes=1000,
             seeds=tuple(range(10)), smoothing_window=20),
        {"alpha0": _pow2(-12, -5), "mu": _pow2(-11, -6)},
    ),
    "fig3": (
        dict(env="mountain_car", tuner="scalar", normalized=False, episodes=1000,
             seeds=tuple(range(10)), smoothing_window=20),
        {"alpha0": _pow2(-12, -5), "mu": _pow2(-19, -14)},
    ),
    "fig6": (
        dict(env="drifting_mountain_car", alpha0=2.0**-10, episodes=DRIFT_EPISODES,
             seeds=tuple(range(20)), smoothing_window=40),
        {"tuner": list(TUNERS), "mu": _pow2(-12, -8), "drift_rate": [4e-6, 6e-6, 8e-6, 1e-5]},
    ),
    "fig7": (
        dict(env="drifting_mountain_car", alpha0=2.0**-10, mu=2.0**-10, drift_rate=6e-6,
             episodes=DRIFT_EPISODES, seeds=tuple(range(20)), smoothing_window=40),
        {"tuner": ["scalar", "vector", "mixed"]},
    ),
}


def preset(name: str) -> tuple[ExperimentConfig, dict]:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    overrides, grid = PRESETS[name]
    return ExperimentConfig(**overrides), {k: list(v) for k, v in grid.items()}


CONFIG_KEYS = {f.name for f in fields(ExperimentConfig)}
