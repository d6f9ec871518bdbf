import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metatrace.ac import AcLearner, accumulate_trace, apply_update, run_episode, td_error
from metatrace.env import MountainCar
from metatrace.errors import DivergenceError
from metatrace.features import TileEncoder
from metatrace.meta import FixedStepSize, make_tuner
from metatrace.model import GradientBundle, LinearActorCritic
from metatrace.verify import forward_lambda_return, record_trajectory, td_errors

N = 8


def bundle(n=N, gv=None, glp=None, gh=None, v=0.0, vn=0.0):
    z = np.zeros(n)
    return GradientBundle(
        z.copy() if gv is None else np.asarray(gv, float), z.copy(),
        z.copy() if glp is None else np.asarray(glp, float),
        z.copy() if gh is None else np.asarray(gh, float), v, vn, 0.0, 0.0)


class Dummy:
    def init_params(self, rng=None):
        return np.zeros(N)


def learner(**kw):
    return AcLearner(Dummy(), **kw)


def test_td_error_examples():
    assert td_error(bundle(), -1.0, 0.99) == -1.0
    assert td_error(bundle(v=2.0, vn=3.0), -1.0, 0.99) == pytest.approx(-0.03, abs=1e-12)
    assert td_error(bundle(v=5.0, vn=0.0), 0.0, 0.99) == -5.0


def test_first_trace_is_grad_u():
    L = learner()
    g = np.arange(N, dtype=float)
    lp = np.ones(N)
    accumulate_trace(L, bundle(gv=g, glp=lp))
    assert np.array_equal(L.z, g + 0.5 * lp)


def test_trace_decays_geometrically():
    L = learner()
    L.z[:] = np.linspace(1, 2, N)
    start = L.z.copy()
    for k in range(1, 6):
        accumulate_trace(L, bundle())
        assert np.allclose(L.z, start * 0.792**k, rtol=1e-14)


def test_update_examples():
    L = learner()
    L.z[3] = 1.0
    apply_update(L, 2.0**-8, 0.0, bundle())
    assert not L.params.any()
    apply_update(L, 2.0**-8, -1.0, bundle())
    assert L.params[3] == -(2.0**-8) and np.count_nonzero(L.params) == 1
    alpha = np.full(N, 0.5)
    alpha[3] = 0.0
    before = L.params[3]
    apply_update(L, alpha, 7.0, bundle())
    assert L.params[3] == before


def test_update_with_entropy_term():
    L = learner(psi=0.1)
    L.z[:] = 1.0
    gh = np.linspace(-1, 1, N)
    apply_update(L, 0.5, 2.0, bundle(gh=gh))
    assert np.allclose(L.params, 0.5 * (2.0 + 0.1 * gh))


def test_update_shape_and_divergence():
    L = learner()
    with pytest.raises(ValueError):
        apply_update(L, np.ones(N + 1), 1.0, bundle())
    L.z[:] = 1.0
    with pytest.raises(DivergenceError):
        apply_update(L, 1.0, np.inf, bundle())


@pytest.mark.parametrize("kw", [dict(gamma=1.5), dict(lam=-0.1), dict(psi=-1.0)])
def test_learner_validation(kw):
    with pytest.raises(ValueError):
        learner(**kw)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), gamma=st.floats(0, 1), lam=st.floats(0, 1),
       max_len=st.integers(1, 40))
def test_forward_backward_equivalence(seed, gamma, lam, max_len):
    rng = np.random.default_rng(seed)
    model = LinearActorCritic(1600)
    params = rng.normal(0, 0.2, model.n_params)
    traj = record_trajectory(model, params, rng, max_steps=max_len)
    g = forward_lambda_return(traj, gamma, lam)
    delta = td_errors(traj, gamma)
    z = np.zeros(model.n_params)
    backward = np.zeros(model.n_params)
    forward = np.zeros(model.n_params)
    for t, step in enumerate(traj.steps):
        gu = step.bundle.grad_v_s + 0.5 * step.bundle.grad_logpi
        z = gamma * lam * z + gu
        backward += delta[t] * z
        forward += gu * (g[t] - step.value)
    assert np.max(np.abs(backward - forward)) <= 1e-9


def test_full_lambda_gives_monte_carlo_return():
    rng = np.random.default_rng(0)
    model = LinearActorCritic(1600)
    traj = record_trajectory(model, rng.normal(0, 0.5, model.n_params), rng)
    g = forward_lambda_return(traj, 1.0, 1.0)
    r = traj.rewards
    assert np.allclose(g, np.cumsum(r[::-1])[::-1], atol=1e-9)


def test_untrained_learner_times_out():
    model = LinearActorCritic(1600)
    rng = np.random.default_rng(0)
    lengths = [len(record_trajectory(model, model.init_params(), rng).steps) for _ in range(20)]
    assert lengths == [200] * 20


def _episodes(tuner, seed=0, n=3, **kw):
    model = LinearActorCritic(1600)
    L = AcLearner(model, psi=kw.pop("psi", 0.0))
    rng = np.random.default_rng(seed)
    env, enc = MountainCar(), TileEncoder()
    recs = [run_episode(L, env, enc, tuner, rng, **kw) for _ in range(n)]
    return L, recs


def test_zero_meta_step_matches_fixed():
    alpha0 = 2.0**-9  # exp(log(alpha0)) == alpha0 exactly for this value
    base, r0 = _episodes(FixedStepSize(alpha0))
    for kind in ("scalar", "vector", "mixed"):
        tuned, r1 = _episodes(make_tuner(kind, 6400, alpha0, mu=0.0, normalized=False))
        assert np.array_equal(base.params, tuned.params), kind
        assert [r.ret for r in r0] == [r.ret for r in r1]


def test_run_episode_reproducible_and_bounded():
    a, ra = _episodes(FixedStepSize(2.0**-7), seed=3)
    b, rb = _episodes(FixedStepSize(2.0**-7), seed=3)
    assert np.array_equal(a.params, b.params)
    assert [(r.ret, r.steps) for r in ra] == [(r.ret, r.steps) for r in rb]
    for r in ra:
        assert -200 <= r.ret < 0 and r.ret == -r.steps


def test_bootstrap_timeout_changes_learning():
    a, _ = _episodes(FixedStepSize(2.0**-7), n=1)
    b, _ = _episodes(FixedStepSize(2.0**-7), n=1, bootstrap_timeout=True)
    assert not np.array_equal(a.params, b.params)


def test_trace_reset_each_episode():
    L, _ = _episodes(FixedStepSize(2.0**-7), n=1)
    assert L.z.any()
    L.reset_trace()
    assert not L.z.any()


def test_divergence_propagates_with_step():
    with pytest.raises(DivergenceError) as info:
        _episodes(FixedStepSize(2.0**3), n=5)
    assert "step" in info.value.context
