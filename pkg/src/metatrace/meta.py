"""Step-size tuners for AC(lambda): fixed, and scalar / vector / mixed Metatrace.

All Metatrace variants learn ``beta = log(alpha)`` by meta-gradient descent,
carry an ``h`` trace estimating ``dw/dbeta``, include the entropy terms, and
(optionally) normalize the beta update by a running maximum ``v`` and clip the
effective step-size through ``u``.

The kernels take two index arrays:

* ``supp``: every index where a gradient vector in the bundle can be nonzero
  (inner products are summed over it, in order);
* ``active``: every index where the eligibility trace or a gradient can be
  nonzero (elementwise updates are applied over it).

Passing ``np.arange(n)`` for both is always correct. The compiled run loop
passes tighter sets; entries outside them are provably left unchanged, so
both routes produce identical numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .errors import DivergenceError
from .model import GradientBundle


@dataclass
class StepInfo:
    """Diagnostics from the most recent tuner step."""

    beta_increment: float  # largest |change| applied at the (normalized) beta update line
    clipped: bool  # M > 1 on this step
    effective_step: float  # post-clip alpha * |dU/dw|^2 (inner product for vector / mixed)


@nb.njit(cache=True)
def _scalar_kernel(beta, z_beta, v, u, h, delta, z, gv, gvn, glp, gh, supp, active,
                   gamma, lam, psi, mu, normalized):
    gl = gamma * lam
    dot_uh = 0.0
    dot_hh = 0.0
    sq = 0.0
    dd = 0.0
    for k in range(supp.size):
        j = supp[k]
        gu = gv[j] + 0.5 * glp[j]
        dot_uh += gu * h[j]
        dot_hh += gh[j] * h[j]
        sq += gu * gu
        dd += (gamma * gvn[j] - gv[j]) * h[j]
    z_beta = gl * z_beta + dot_uh
    d_beta = z_beta * delta + psi * dot_hh
    clipped = False
    if normalized:
        a = abs(d_beta)
        t = v + mu * (a - v)
        v = a if a > t else t
        inc = mu * d_beta / (v if v > 0.0 else 1.0)
        beta = beta + inc
        e = math.exp(beta) * sq
        t = u + (1.0 - gl) * (e - u)
        u = e if e > t else t
        big_m = u if u > 1.0 else 1.0
        clipped = big_m > 1.0
        beta = beta - math.log(big_m)
    else:
        inc = mu * d_beta
        beta = beta + inc
    alpha = math.exp(beta)
    c = delta + dd
    for k in range(active.size):
        j = active[k]
        h[j] += alpha * (z[j] * c + psi * gh[j])
    return beta, z_beta, v, u, alpha, abs(inc), clipped, alpha * sq


@nb.njit(cache=True)
def _vector_kernel(beta, z_beta, v, h, d_beta, u, delta, z, gv, gvn, glp, gh, supp, active,
                   alpha_out, gamma, lam, psi, mu, normalized):
    gl = gamma * lam
    for k in range(active.size):
        j = active[k]
        gu = gv[j] + 0.5 * glp[j]
        z_beta[j] = gl * z_beta[j] + gu * h[j]
        d_beta[j] = z_beta[j] * delta + psi * (gh[j] * h[j])
    max_inc = 0.0
    clipped = False
    e = 0.0
    if normalized:
        for j in range(v.size):
            a = abs(d_beta[j])
            t = v[j] + mu * (a - v[j])
            v[j] = a if a > t else t
        for k in range(active.size):
            j = active[k]
            inc = mu * d_beta[j] / (v[j] if v[j] > 0.0 else 1.0)
            beta[j] += inc
            if abs(inc) > max_inc:
                max_inc = abs(inc)
        for k in range(supp.size):
            j = supp[k]
            gu = gv[j] + 0.5 * glp[j]
            e += math.exp(beta[j]) * (gu * gu)
        t = u + (1.0 - gl) * (e - u)
        u = e if e > t else t
        big_m = u if u > 1.0 else 1.0
        if big_m > 1.0:
            clipped = True
            log_m = math.log(big_m)
            for j in range(beta.size):
                beta[j] -= log_m
    else:
        for k in range(active.size):
            j = active[k]
            inc = mu * d_beta[j]
            beta[j] += inc
            if abs(inc) > max_inc:
                max_inc = abs(inc)
    for k in range(active.size):
        j = active[k]
        a = math.exp(beta[j])
        alpha_out[j] = a
        c = delta + (gamma * gvn[j] - gv[j]) * h[j]
        h[j] += a * (z[j] * c + psi * gh[j])
    if clipped or not normalized:
        e = 0.0
        for k in range(supp.size):
            j = supp[k]
            gu = gv[j] + 0.5 * glp[j]
            e += alpha_out[j] * (gu * gu)
    return u, max_inc, clipped, e


@nb.njit(cache=True)
def _mixed_kernel(beta_hat, z_beta_hat, v_hat, h_hat, beta_vec, z_beta_vec, v_vec, h_vec,
                  d_beta_vec, u, delta, z, gv, gvn, glp, gh, supp, active, alpha_out,
                  gamma, lam, psi, mu, normalized):
    gl = gamma * lam
    dot_uh = 0.0
    dot_hh = 0.0
    dd = 0.0
    for k in range(supp.size):
        j = supp[k]
        gu = gv[j] + 0.5 * glp[j]
        dot_uh += gu * h_hat[j]
        dot_hh += gh[j] * h_hat[j]
        dd += (gamma * gvn[j] - gv[j]) * h_hat[j]
    for k in range(active.size):
        j = active[k]
        gu = gv[j] + 0.5 * glp[j]
        z_beta_vec[j] = gl * z_beta_vec[j] + gu * h_vec[j]
        d_beta_vec[j] = z_beta_vec[j] * delta + psi * (gh[j] * h_vec[j])
    z_beta_hat = gl * z_beta_hat + dot_uh
    d_beta_hat = z_beta_hat * delta + psi * dot_hh
    max_inc = 0.0
    clipped = False
    e = 0.0
    if normalized:
        for j in range(v_vec.size):
            a = abs(d_beta_vec[j])
            t = v_vec[j] + mu * (a - v_vec[j])
            v_vec[j] = a if a > t else t
        a = abs(d_beta_hat)
        t = v_hat + mu * (a - v_hat)
        v_hat = a if a > t else t
        for k in range(active.size):
            j = active[k]
            inc = mu * d_beta_vec[j] / (v_vec[j] if v_vec[j] > 0.0 else 1.0)
            beta_vec[j] += inc
            if abs(inc) > max_inc:
                max_inc = abs(inc)
        inc = mu * d_beta_hat / (v_hat if v_hat > 0.0 else 1.0)
        beta_hat = beta_hat + inc
        if abs(inc) > max_inc:
            max_inc = abs(inc)
        for k in range(supp.size):
            j = supp[k]
            gu = gv[j] + 0.5 * glp[j]
            e += math.exp(beta_hat + beta_vec[j]) * (gu * gu)
        t = u + (1.0 - gl) * (e - u)
        u = e if e > t else t
        big_m = u if u > 1.0 else 1.0
        clipped = big_m > 1.0
        beta_hat = beta_hat - math.log(big_m)
    else:
        for k in range(active.size):
            j = active[k]
            inc = mu * d_beta_vec[j]
            beta_vec[j] += inc
            if abs(inc) > max_inc:
                max_inc = abs(inc)
        inc = mu * d_beta_hat
        beta_hat = beta_hat + inc
        if abs(inc) > max_inc:
            max_inc = abs(inc)
    c_hat = delta + dd
    for k in range(active.size):
        j = active[k]
        a = math.exp(beta_hat + beta_vec[j])
        alpha_out[j] = a
        c_vec = delta + (gamma * gvn[j] - gv[j]) * h_vec[j]
        h_vec[j] += a * (z[j] * c_vec + psi * gh[j])
        h_hat[j] += a * (z[j] * c_hat + psi * gh[j])
    if clipped or not normalized:
        e = 0.0
        for k in range(supp.size):
            j = supp[k]
            gu = gv[j] + 0.5 * glp[j]
            e += alpha_out[j] * (gu * gu)
    return beta_hat, z_beta_hat, v_hat, u, max_inc, clipped, e


@dataclass
class ScalarTunerState:
    beta: float
    h: np.ndarray
    mu: float
    normalized: bool = True
    z_beta: float = 0.0
    v: float = 0.0
    u: float = 0.0
    last: StepInfo | None = None

    @property
    def alpha(self) -> float:
        return math.exp(self.beta)


@dataclass
class VectorTunerState:
    beta: np.ndarray
    h: np.ndarray
    z_beta: np.ndarray
    v: np.ndarray
    mu: float
    normalized: bool = True
    u: float = 0.0
    last: StepInfo | None = None
    # scratch for the per-weight beta update; kept zero wherever the trace is zero
    _d_beta: np.ndarray = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self._d_beta is None:
            self._d_beta = np.zeros_like(self.beta)

    @property
    def alpha(self) -> np.ndarray:
        return np.exp(self.beta)


@dataclass
class MixedTunerState:
    beta_hat: float
    beta_vec: np.ndarray
    h_hat: np.ndarray
    h_vec: np.ndarray
    z_beta_vec: np.ndarray
    v_vec: np.ndarray
    mu: float
    normalized: bool = True
    z_beta_hat: float = 0.0
    v_hat: float = 0.0
    u: float = 0.0
    last: StepInfo | None = None
    _d_beta: np.ndarray = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self._d_beta is None:
            self._d_beta = np.zeros_like(self.beta_vec)

    @property
    def alpha(self) -> np.ndarray:
        return np.exp(self.beta_hat + self.beta_vec)


def init_scalar(n: int, alpha0: float, mu: float, normalized: bool = True) -> ScalarTunerState:
    return ScalarTunerState(beta=math.log(alpha0), h=np.zeros(n), mu=mu, normalized=normalized)


def init_vector(n: int, alpha0: float, mu: float, normalized: bool = True) -> VectorTunerState:
    return VectorTunerState(beta=np.full(n, math.log(alpha0)), h=np.zeros(n),
                            z_beta=np.zeros(n), v=np.zeros(n), mu=mu, normalized=normalized)


def init_mixed(n: int, alpha0: float, mu: float, normalized: bool = True) -> MixedTunerState:
    return MixedTunerState(beta_hat=math.log(alpha0), beta_vec=np.zeros(n), h_hat=np.zeros(n),
                           h_vec=np.zeros(n), z_beta_vec=np.zeros(n), v_vec=np.zeros(n),
                           mu=mu, normalized=normalized)


def _index_sets(bundle: GradientBundle, n: int) -> tuple[np.ndarray, np.ndarray]:
    full = np.arange(n)
    return (full if bundle.support is None else bundle.support), full


def _check_dims(z: np.ndarray, bundle: GradientBundle, n: int) -> None:
    if z.shape != (n,) or bundle.grad_v_s.shape != (n,):
        raise ValueError(f"trace/gradient length does not match tuner dimension {n}")


def scalar_step(state: ScalarTunerState, delta: float, z: np.ndarray, bundle: GradientBundle,
                gamma: float, lam: float, psi: float = 0.0) -> tuple[ScalarTunerState, float]:
    """One step of normalized (or plain) scalar Metatrace; updates ``state`` in place.

    Returns the state and the step-size to use for this step's weight update.
    """
    n = state.h.size
    _check_dims(z, bundle, n)
    supp, active = _index_sets(bundle, n)
    beta, zb, v, u, alpha, inc, clipped, eff = _scalar_kernel(
        state.beta, state.z_beta, state.v, state.u, state.h, float(delta), z,
        bundle.grad_v_s, bundle.grad_v_s_next, bundle.grad_logpi, bundle.grad_entropy,
        supp, active, gamma, lam, psi, state.mu, state.normalized)
    state.beta, state.z_beta, state.v, state.u = beta, zb, v, u
    state.last = StepInfo(inc, bool(clipped), eff)
    if not (math.isfinite(alpha) and math.isfinite(zb) and np.isfinite(state.h).all()):
        raise DivergenceError("scalar Metatrace state is not finite", beta=beta)
    return state, alpha


def vector_step(state: VectorTunerState, delta: float, z: np.ndarray, bundle: GradientBundle,
                gamma: float, lam: float, psi: float = 0.0) -> tuple[VectorTunerState, np.ndarray]:
    """One step of normalized (or plain) vector Metatrace; updates ``state`` in place."""
    n = state.h.size
    _check_dims(z, bundle, n)
    supp, active = _index_sets(bundle, n)
    alpha = np.empty(n)
    u, inc, clipped, eff = _vector_kernel(
        state.beta, state.z_beta, state.v, state.h, state._d_beta, state.u, float(delta), z,
        bundle.grad_v_s, bundle.grad_v_s_next, bundle.grad_logpi, bundle.grad_entropy,
        supp, active, alpha, gamma, lam, psi, state.mu, state.normalized)
    state.u = u
    state.last = StepInfo(inc, bool(clipped), eff)
    if not (np.isfinite(alpha).all() and np.isfinite(state.h).all()):
        raise DivergenceError("vector Metatrace state is not finite")
    return state, alpha


def mixed_step(state: MixedTunerState, delta: float, z: np.ndarray, bundle: GradientBundle,
               gamma: float, lam: float, psi: float = 0.0) -> tuple[MixedTunerState, np.ndarray]:
    """One step of normalized (or plain) mixed Metatrace; updates ``state`` in place.

    Only the shared ``beta_hat`` absorbs the clipping decrement; both ``h``
    traces are advanced with the combined step-size ``exp(beta_hat + beta_vec)``.
    """
    n = state.h_vec.size
    _check_dims(z, bundle, n)
    supp, active = _index_sets(bundle, n)
    alpha = np.empty(n)
    bh, zbh, vh, u, inc, clipped, eff = _mixed_kernel(
        state.beta_hat, state.z_beta_hat, state.v_hat, state.h_hat, state.beta_vec,
        state.z_beta_vec, state.v_vec, state.h_vec, state._d_beta, state.u, float(delta), z,
        bundle.grad_v_s, bundle.grad_v_s_next, bundle.grad_logpi, bundle.grad_entropy,
        supp, active, alpha, gamma, lam, psi, state.mu, state.normalized)
    state.beta_hat, state.z_beta_hat, state.v_hat, state.u = bh, zbh, vh, u
    state.last = StepInfo(inc, bool(clipped), eff)
    if not (np.isfinite(alpha).all() and np.isfinite(state.h_vec).all()
            and np.isfinite(state.h_hat).all()):
        raise DivergenceError("mixed Metatrace state is not finite")
    return state, alpha


def episode_reset(state):
    """Zero the meta-trace(s) and ``u``; beta, h and v carry across episodes."""
    if isinstance(state, ScalarTunerState):
        state.z_beta = 0.0
    elif isinstance(state, VectorTunerState):
        state.z_beta[:] = 0.0
        state._d_beta[:] = 0.0
    elif isinstance(state, MixedTunerState):
        state.z_beta_hat = 0.0
        state.z_beta_vec[:] = 0.0
        state._d_beta[:] = 0.0
    else:
        raise TypeError(f"not a tuner state: {type(state).__name__}")
    state.u = 0.0
    return state


def fixed_step(alpha0: float, n: int | None = None) -> float | np.ndarray:
    """Constant step-size; broadcast to a length-``n`` vector when ``n`` is given."""
    if n is None:
        return alpha0
    return np.full(n, alpha0)


class Tuner:
    """Common interface used by the learner loop."""

    kind = "base"
    state = None

    def episode_reset(self) -> None:
        if self.state is not None:
            episode_reset(self.state)

    def step(self, delta, z, bundle, gamma, lam, psi):
        raise NotImplementedError


class FixedStepSize(Tuner):
    kind = "fixed"

    def __init__(self, alpha0: float) -> None:
        if not alpha0 > 0:
            raise ValueError("alpha0 must be positive")
        self.alpha0 = alpha0

    def step(self, delta, z, bundle, gamma, lam, psi):
        return fixed_step(self.alpha0)


class ScalarMetatrace(Tuner):
    kind = "scalar"

    def __init__(self, n: int, alpha0: float, mu: float, normalized: bool = True) -> None:
        self.state = init_scalar(n, alpha0, mu, normalized)

    def step(self, delta, z, bundle, gamma, lam, psi):
        return scalar_step(self.state, delta, z, bundle, gamma, lam, psi)[1]


class VectorMetatrace(Tuner):
    kind = "vector"

    def __init__(self, n: int, alpha0: float, mu: float, normalized: bool = True) -> None:
        self.state = init_vector(n, alpha0, mu, normalized)

    def step(self, delta, z, bundle, gamma, lam, psi):
        return vector_step(self.state, delta, z, bundle, gamma, lam, psi)[1]


class MixedMetatrace(Tuner):
    kind = "mixed"

    def __init__(self, n: int, alpha0: float, mu: float, normalized: bool = True) -> None:
        self.state = init_mixed(n, alpha0, mu, normalized)

    def step(self, delta, z, bundle, gamma, lam, psi):
        return mixed_step(self.state, delta, z, bundle, gamma, lam, psi)[1]


def make_tuner(kind: str, n: int, alpha0: float, mu: float = 0.0, normalized: bool = True) -> Tuner:
    if kind == "fixed":
        return FixedStepSize(alpha0)
    if kind == "scalar":
        return ScalarMetatrace(n, alpha0, mu, normalized)
    if kind == "vector":
        return VectorMetatrace(n, alpha0, mu, normalized)
    if kind == "mixed":
        return MixedMetatrace(n, alpha0, mu, normalized)
    raise ValueError(f"unknown tuner {kind!r}")
