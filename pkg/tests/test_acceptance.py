"""Acceptance run: each test checks one criterion and records a PASS/FAIL line.

The learning-curve criteria share runs through session fixtures; the whole
module takes roughly twenty minutes on one core.
"""

import subprocess
import sys
import time

import numpy as np
import pytest

from metatrace import checks
from metatrace.ac import AcLearner
from metatrace.engine import run_episode_fast
from metatrace.features import TileEncoder
from metatrace.harness import ExperimentConfig, aggregate, run_experiment
from metatrace.meta import (
    FixedStepSize,
    init_mixed,
    init_scalar,
    init_vector,
    make_tuner,
    mixed_step,
    scalar_step,
    vector_step,
)
from metatrace.model import GradientBundle, LinearActorCritic

FIG1_ALPHAS = [2.0**k for k in range(-12, -4)]
FIG2_ALPHAS = [2.0**k for k in range(-10, -5)]
FIG2_MUS = [2.0**-8, 2.0**-9]
DRIFT_TUNERS = ("fixed", "scalar", "vector", "mixed")
DRIFT = 6e-6
DRIFT_EPISODES = 2000


def _final(curve, window, last=100):
    return float(aggregate(curve, window)[-last:].mean())


def _pow(x):
    return f"2^{int(np.log2(x))}"


@pytest.fixture(scope="session")
def fig1():
    return {a: run_experiment(ExperimentConfig(tuner="fixed", alpha0=a, episodes=1000,
                                               seeds=tuple(range(10))))
            for a in FIG1_ALPHAS}


@pytest.fixture(scope="session")
def fig2():
    return {(mu, a): run_experiment(ExperimentConfig(tuner="scalar", normalized=True, alpha0=a,
                                                     mu=mu, episodes=1000,
                                                     seeds=tuple(range(10))))
            for mu in FIG2_MUS for a in FIG2_ALPHAS}


@pytest.fixture(scope="session")
def drifting():
    return {t: run_experiment(ExperimentConfig(
        env="drifting_mountain_car", tuner=t, alpha0=2.0**-10, mu=2.0**-10, drift_rate=DRIFT,
        episodes=DRIFT_EPISODES, seeds=tuple(range(20)), smoothing_window=40))
        for t in DRIFT_TUNERS}


def test_criterion_1_lambda_return_identity(record):
    t0 = time.perf_counter()
    worst = checks.lambda_identity(n_traj=1000, seed=1, max_len=20)
    dt = time.perf_counter() - t0
    ok = worst <= 1e-9 and dt < 5.0
    record("criterion 1", ok, f"max |recursion - delta sum| {worst:.2e} over 1000 "
                              f"trajectories in {dt:.1f}s")
    assert ok


def test_criterion_2_gradient_checks(record):
    t0 = time.perf_counter()
    lin = checks.linear_gradient_check(200, seed=2)
    mlp = checks.mlp_gradient_check(200, seed=3)
    dt = time.perf_counter() - t0
    worst = max(max(lin.values()), max(mlp.values()))
    ok = worst <= 1e-4 and dt < 30.0
    record("criterion 2", ok, f"max relative error linear {max(lin.values()):.1e}, "
                              f"mlp {max(mlp.values()):.1e} over 200 points each in {dt:.1f}s")
    assert ok


def test_criterion_3_h_trace_oracle(record):
    t0 = time.perf_counter()
    cos = checks.h_oracle_cosines(seeds=range(100, 120), horizon=30, eps=1e-4)
    dt = time.perf_counter() - t0
    ok = min(cos) >= 0.99 and dt < 60.0
    record("criterion 3", ok, f"cosine(h, dw/dbeta) min {min(cos):.5f} mean {np.mean(cos):.5f} "
                              f"over 20 seeds in {dt:.1f}s")
    assert ok


def _random_bundle(rng, n, scale):
    g = [rng.normal(0, scale, n) * (rng.random(n) < 0.7) for _ in range(4)]
    return GradientBundle(g[0], g[1], g[2], g[3], 0.0, 0.0, 0.0, 0.0)


def test_criterion_4_normalization_invariants(record):
    rng = np.random.default_rng(4)
    steps = 0
    worst_ratio = 0.0
    worst_clip = 0.0
    clips = 0
    kinds = ((init_scalar, scalar_step), (init_vector, vector_step), (init_mixed, mixed_step))
    while steps < 100_000:
        init, step = kinds[(steps // 200) % 3]
        n = int(rng.integers(1, 12))
        mu = float(2.0 ** rng.uniform(-12, 0))
        psi = float(rng.choice([0.0, 0.01, 0.3]))
        scale = float(10 ** rng.uniform(-2, 0.7))
        s = init(n, float(2.0 ** rng.uniform(-10, 0)), mu)
        for _ in range(200):
            z = rng.normal(0, scale, n)
            step(s, float(rng.normal(0, 3)), z, _random_bundle(rng, n, scale), 0.99, 0.8, psi)
            worst_ratio = max(worst_ratio, s.last.beta_increment / mu)
            if s.last.clipped:
                clips += 1
                worst_clip = max(worst_clip, s.last.effective_step)
            steps += 1

    # zero meta step-size, clipping disabled: every tuner reproduces the fixed baseline
    alpha0 = 2.0**-9
    identical = True
    for kind in ("scalar", "vector", "mixed"):
        runs = []
        for tuner in (FixedStepSize(alpha0), make_tuner(kind, 6400, alpha0, 0.0, False)):
            learner = AcLearner(LinearActorCritic(1600))
            rng2 = np.random.default_rng(9)
            rets = [run_episode_fast(learner, TileEncoder(), tuner, rng2).ret for _ in range(20)]
            runs.append((learner.params.tobytes(), rets))
        identical &= runs[0] == runs[1]
    ok = worst_ratio <= 1 + 1e-12 and worst_clip <= 1 + 1e-12 and clips > 0 and identical
    record("criterion 4", ok, f"{steps} tuner steps: max |dbeta|/mu {worst_ratio:.6f}, "
                              f"max clipped effective step {worst_clip:.6f} ({clips} clips), "
                              f"mu=0 bit-identical to fixed: {identical}")
    assert ok


def test_criterion_5_fixed_alpha_sweep(record, fig1):
    finals = {a: _final(c, 20) for a, c in fig1.items()}
    mid = [finals[a] for a in (2.0**-8, 2.0**-7, 2.0**-6)]
    largest = finals[2.0**-5]
    diverged = sum(len(c.diverged) for c in fig1.values())
    ok_mid = all(f > -170 for f in mid)
    ok_big = largest >= -200 and largest <= -195
    table = ", ".join(f"{_pow(a)} {f:.1f}" for a, f in finals.items())
    record("criterion 5", ok_mid and ok_big,
           f"final-100 smoothed return per alpha0: {table}; mid-range > -170: {ok_mid}; "
           f"2^-5 within 5 of -200: {ok_big}; diverged seeds {diverged}")
    assert ok_mid, "mid-range step-sizes should learn"
    assert ok_big, f"2^-5 was expected to fail to improve, reached {largest:.1f}"


def test_criterion_6_scalar_metatrace_robustness(record, fig1, fig2):
    base = [_final(fig1[a], 20) for a in FIG2_ALPHAS]
    base_spread = max(base) - min(base)
    parts, ok = [], True
    for mu in FIG2_MUS:
        tuned = [_final(fig2[(mu, a)], 20) for a in FIG2_ALPHAS]
        spread = max(tuned) - min(tuned)
        shrink = 1 - spread / base_spread
        ok &= shrink >= 0.30
        parts.append(f"mu {_pow(mu)} spread {spread:.1f} ({shrink:.0%} smaller)")
    record("criterion 6", ok, f"no-tuning spread {base_spread:.1f}; " + "; ".join(parts))
    assert ok


def test_criterion_7_drifting_ordering(record, drifting):
    finals = {t: _final(c, 40) for t, c in drifting.items()}
    ok_mixed = finals["mixed"] >= finals["fixed"]
    ok_vector = finals["vector"] >= finals["scalar"] - 5
    table = ", ".join(f"{t} {f:.1f}" for t, f in finals.items())
    record("criterion 7", ok_mixed and ok_vector,
           f"final-100 return (20 seeds, {DRIFT_EPISODES} episodes): {table}; "
           f"mixed >= fixed: {ok_mixed}; vector >= scalar - 5: {ok_vector}")
    assert ok_mixed
    assert ok_vector, (f"vector {finals['vector']:.1f} trails scalar {finals['scalar']:.1f} "
                       f"by more than 5")


def test_criterion_8_beta_separation(record, drifting):
    parts, ok = [], True
    for t in ("vector", "mixed"):
        last = np.array([b[-1] for b in drifting[t].betas().values()])
        info, noise = last[:, 0].mean(), last[:, 1].mean()
        ok &= noise < info
        parts.append(f"{t}: critic noisy {noise:.2f} vs informative {info:.2f}")
    record("criterion 8", ok, "final mean beta " + "; ".join(parts))
    assert ok


def test_criterion_9_determinism(record, tmp_path):
    argv = [sys.executable, "-m", "metatrace.cli", "run", "--env", "drifting_mountain_car",
            "--tuner", "mixed", "--mu", "2^-10", "--alpha0", "2^-10", "--drift-rate", "1e-4",
            "--episodes", "20", "--seeds", "3,8"]
    blobs = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        subprocess.run(argv + ["--out", str(out)], check=True, capture_output=True)
        (csv_file,) = out.glob("*.csv")
        blobs.append(csv_file.read_bytes())
    in_process = run_experiment(ExperimentConfig(
        env="drifting_mountain_car", tuner="mixed", mu=2.0**-10, alpha0=2.0**-10,
        drift_rate=1e-4, episodes=20, seeds=(3, 8))).to_csv().encode()
    ok = blobs[0] == blobs[1] == in_process
    record("criterion 9", ok, f"two fresh processes and one in-process run gave "
                              f"{'identical' if ok else 'different'} CSV bytes "
                              f"({len(blobs[0])} bytes)")
    assert ok


def test_criterion_mlp_smoke(record):
    curve = run_experiment(ExperimentConfig(model="mlp", tuner="mixed", mu=0.001, psi=0.01,
                                            episodes=50, seeds=(0, 1, 2)))
    n = len(curve.rows)
    ok = not curve.diverged and n == 150
    record("criterion mlp-smoke", ok, f"mlp + mixed Metatrace, 3 seeds x 50 episodes, "
                                      f"{n} episodes completed, diverged seeds {sorted(curve.diverged)}")
    assert ok
