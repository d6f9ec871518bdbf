"""Actor-critic function approximators with a shared gradient interface.

Both models expose ``evaluate`` and ``gradients`` over a flat parameter
vector, so the learner and the step-size tuners never look inside them.

Linear layout is ``[critic | actor action 0 | actor action 1 | actor action 2]``,
each block ``n_features`` long, all reading the same feature vector.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numba as nb
import numpy as np
from scipy.special import expit

from .features import SparseFeatures


@dataclass
class GradientBundle:
    """Per-step gradients over the flat parameter vector.

    ``support`` lists (without duplicates) every index at which any of the four
    gradient vectors can be nonzero; ``None`` means dense.
    """

    grad_v_s: np.ndarray
    grad_v_s_next: np.ndarray
    grad_logpi: np.ndarray
    grad_entropy: np.ndarray
    value_s: float
    value_s_next: float
    logpi: float
    entropy: float
    support: np.ndarray | None = None


@nb.njit(cache=True)
def _linear_forward(w, idx, val, d, probs, logp):
    value = 0.0
    for k in range(idx.size):
        value += w[idx[k]] * val[k]
    n_actions = probs.size
    top = -np.inf
    for a in range(n_actions):
        off = (1 + a) * d
        s = 0.0
        for k in range(idx.size):
            s += w[off + idx[k]] * val[k]
        logp[a] = s
        if s > top:
            top = s
    total = 0.0
    for a in range(n_actions):
        probs[a] = math.exp(logp[a] - top)
        total += probs[a]
    lse = math.log(total)
    for a in range(n_actions):
        probs[a] = probs[a] / total
        logp[a] = logp[a] - top - lse
    return value


@nb.njit(cache=True)
def _linear_gradients(w, idx, val, idx_n, val_n, has_next, d, action,
                      probs, logp, gv, gvn, glp, gh, mark, supp):
    """Fill the (pre-zeroed) dense gradient buffers; return scalars and support size.

    ``mark`` is a boolean scratch vector that is all False on entry and exit.
    """
    value = _linear_forward(w, idx, val, d, probs, logp)
    value_next = 0.0
    if has_next:
        for k in range(idx_n.size):
            value_next += w[idx_n[k]] * val_n[k]
    entropy = 0.0
    for a in range(probs.size):
        entropy -= probs[a] * logp[a]

    m = 0
    for k in range(idx.size):
        j = idx[k]
        gv[j] += val[k]
        if not mark[j]:
            mark[j] = True
            supp[m] = j
            m += 1
    if has_next:
        for k in range(idx_n.size):
            j = idx_n[k]
            gvn[j] += val_n[k]
            if not mark[j]:
                mark[j] = True
                supp[m] = j
                m += 1
    for a in range(probs.size):
        off = (1 + a) * d
        coef_lp = (1.0 if a == action else 0.0) - probs[a]
        coef_h = -probs[a] * (logp[a] + entropy)
        for k in range(idx.size):
            j = off + idx[k]
            glp[j] += val[k] * coef_lp
            gh[j] += val[k] * coef_h
            if not mark[j]:
                mark[j] = True
                supp[m] = j
                m += 1
    for k in range(m):
        mark[supp[k]] = False
    return value, value_next, logp[action], entropy, m


@nb.njit(cache=True)
def _sample(probs, u):
    c = 0.0
    last = 0
    for a in range(probs.size):
        if probs[a] > 0.0:
            last = a
        c += probs[a]
        if u < c:
            return a
    return last


def sample_action(dist: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from ``dist`` using one uniform from ``rng``."""
    return int(_sample(np.asarray(dist, dtype=np.float64), rng.random()))


class LinearActorCritic:
    """Linear value function and softmax policy over sparse features."""

    def __init__(self, n_features: int, n_actions: int = 3) -> None:
        self.n_features = n_features
        self.n_actions = n_actions
        self.n_params = (1 + n_actions) * n_features

    def init_params(self, rng: np.random.Generator | None = None) -> np.ndarray:
        return np.zeros(self.n_params)

    def block(self, name: str | int) -> slice:
        """Slice of the parameter vector: ``"critic"`` or an action index."""
        d = self.n_features
        if name == "critic":
            return slice(0, d)
        a = int(name)
        return slice((1 + a) * d, (2 + a) * d)

    def _check(self, params: np.ndarray, obs: SparseFeatures) -> None:
        if params.shape != (self.n_params,):
            raise ValueError(f"params has shape {params.shape}, expected ({self.n_params},)")
        if obs.dim != self.n_features:
            raise ValueError(f"features have dim {obs.dim}, expected {self.n_features}")

    def evaluate(self, params: np.ndarray, obs: SparseFeatures) -> tuple[float, np.ndarray]:
        self._check(params, obs)
        probs = np.empty(self.n_actions)
        logp = np.empty(self.n_actions)
        value = _linear_forward(params, obs.indices, obs.values, self.n_features, probs, logp)
        return float(value), probs

    def log_probs(self, params: np.ndarray, obs: SparseFeatures) -> np.ndarray:
        self._check(params, obs)
        probs = np.empty(self.n_actions)
        logp = np.empty(self.n_actions)
        _linear_forward(params, obs.indices, obs.values, self.n_features, probs, logp)
        return logp

    def gradients(
        self,
        params: np.ndarray,
        obs_t: SparseFeatures,
        obs_next: SparseFeatures | None,
        action: int,
        terminal_next: bool,
    ) -> GradientBundle:
        self._check(params, obs_t)
        has_next = not terminal_next
        if has_next:
            if obs_next is None:
                raise ValueError("obs_next is required unless terminal_next")
            self._check(params, obs_next)
            idx_n, val_n = obs_next.indices, obs_next.values
        else:
            idx_n, val_n = obs_t.indices[:0], obs_t.values[:0]
        n = self.n_params
        gv, gvn, glp, gh = (np.zeros(n) for _ in range(4))
        mark = np.zeros(n, dtype=np.bool_)
        supp = np.empty(obs_t.indices.size * (1 + self.n_actions) + idx_n.size, dtype=np.int64)
        probs = np.empty(self.n_actions)
        logp = np.empty(self.n_actions)
        value, value_next, logpi, entropy, m = _linear_gradients(
            params, obs_t.indices, obs_t.values, idx_n, val_n, has_next,
            self.n_features, int(action), probs, logp, gv, gvn, glp, gh, mark, supp,
        )
        return GradientBundle(gv, gvn, glp, gh, float(value), float(value_next),
                              float(logpi), float(entropy), supp[:m].copy())


def silu(x: np.ndarray) -> np.ndarray:
    return x * expit(x)


def dsilu(x: np.ndarray) -> np.ndarray:
    """Derivative of SiLU, also used as an activation in its own right."""
    s = expit(x)
    return s * (1.0 + x * (1.0 - s))


def _dsilu_prime(x: np.ndarray) -> np.ndarray:
    s = expit(x)
    return s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))


class MLPActorCritic:
    """One hidden layer shared by a linear value head and a softmax policy head.

    Parameter layout: ``[W1 (hidden x n_inputs), b1, w_value, b_value, W_policy
    (n_actions x hidden), b_policy]``.
    """

    def __init__(self, n_inputs: int = 2, hidden: int = 32, n_actions: int = 3,
                 activation: str = "silu") -> None:
        if activation not in ("silu", "dsilu"):
            raise ValueError(f"unknown activation {activation!r}")
        self.n_inputs = n_inputs
        self.hidden = hidden
        self.n_actions = n_actions
        self.activation = activation
        sizes = [hidden * n_inputs, hidden, hidden, 1, n_actions * hidden, n_actions]
        self._offsets = np.cumsum([0, *sizes])
        self.n_params = int(self._offsets[-1])

    def init_params(self, rng: np.random.Generator, scale: float = 0.05) -> np.ndarray:
        params = np.zeros(self.n_params)
        stop = self._offsets[2]
        params[:stop] = rng.uniform(-scale, scale, size=stop)
        return params

    def _unpack(self, params: np.ndarray):
        o = self._offsets
        h, k, a = self.hidden, self.n_inputs, self.n_actions
        return (params[o[0]:o[1]].reshape(h, k), params[o[1]:o[2]], params[o[2]:o[3]],
                params[o[3]], params[o[4]:o[5]].reshape(a, h), params[o[5]:o[6]])

    def _act(self, x):
        if self.activation == "silu":
            return silu(x), dsilu(x)
        return dsilu(x), _dsilu_prime(x)

    def _check(self, params: np.ndarray, obs: np.ndarray) -> None:
        if params.shape != (self.n_params,):
            raise ValueError(f"params has shape {params.shape}, expected ({self.n_params},)")
        if np.shape(obs) != (self.n_inputs,):
            raise ValueError(f"observation has shape {np.shape(obs)}, expected ({self.n_inputs},)")

    def _forward(self, params, x):
        w1, b1, wv, bv, wp, bp = self._unpack(params)
        pre = w1 @ x + b1
        hid, dhid = self._act(pre)
        value = float(wv @ hid + bv)
        prefs = wp @ hid + bp
        shifted = prefs - prefs.max()
        logp = shifted - math.log(np.exp(shifted).sum())
        return value, np.exp(logp), logp, (x, hid, dhid)

    def evaluate(self, params: np.ndarray, obs: np.ndarray) -> tuple[float, np.ndarray]:
        self._check(params, obs)
        value, probs, _, _ = self._forward(params, np.asarray(obs, dtype=np.float64))
        return value, probs

    def log_probs(self, params: np.ndarray, obs: np.ndarray) -> np.ndarray:
        self._check(params, obs)
        return self._forward(params, np.asarray(obs, dtype=np.float64))[2]

    def _backprop(self, params, cache, g_value: float, g_prefs: np.ndarray) -> np.ndarray:
        x, hid, dhid = cache
        _, _, wv, _, wp, _ = self._unpack(params)
        grad = np.zeros(self.n_params)
        o = self._offsets
        g_hid = g_value * wv + wp.T @ g_prefs
        g_pre = g_hid * dhid
        grad[o[0]:o[1]] = np.outer(g_pre, x).ravel()
        grad[o[1]:o[2]] = g_pre
        grad[o[2]:o[3]] = g_value * hid
        grad[o[3]] = g_value
        grad[o[4]:o[5]] = np.outer(g_prefs, hid).ravel()
        grad[o[5]:o[6]] = g_prefs
        return grad

    def gradients(
        self,
        params: np.ndarray,
        obs_t: np.ndarray,
        obs_next: np.ndarray | None,
        action: int,
        terminal_next: bool,
    ) -> GradientBundle:
        self._check(params, obs_t)
        x = np.asarray(obs_t, dtype=np.float64)
        value, probs, logp, cache = self._forward(params, x)
        zero_prefs = np.zeros(self.n_actions)
        grad_v = self._backprop(params, cache, 1.0, zero_prefs)
        if terminal_next:
            value_next, grad_vn = 0.0, np.zeros(self.n_params)
        else:
            if obs_next is None:
                raise ValueError("obs_next is required unless terminal_next")
            self._check(params, obs_next)
            value_next, _, _, cache_n = self._forward(params, np.asarray(obs_next, dtype=np.float64))
            grad_vn = self._backprop(params, cache_n, 1.0, zero_prefs)
        onehot = np.zeros(self.n_actions)
        onehot[action] = 1.0
        grad_lp = self._backprop(params, cache, 0.0, onehot - probs)
        entropy = float(-(probs * logp).sum())
        grad_h = self._backprop(params, cache, 0.0, -probs * (logp + entropy))
        return GradientBundle(grad_v, grad_vn, grad_lp, grad_h, value, value_next,
                              float(logp[action]), entropy, None)


_HEADER = struct.Struct("<4sIQ")
_MAGIC = b"MTRC"
_VERSION = 1


def save_params(path: str | Path, params: np.ndarray) -> None:
    """Write a checkpoint: 16-byte header (magic, version, n) then n little-endian f64."""
    params = np.ascontiguousarray(params, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, params.size))
        fh.write(params.tobytes())


def load_params(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError("checkpoint too short")
    magic, version, n = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"bad checkpoint magic {magic!r}")
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    body = raw[_HEADER.size:]
    if len(body) != 8 * n:
        raise ValueError(f"checkpoint declares {n} values but holds {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").astype(np.float64)
