"""State representations for mountain car.

``tile_encode`` produces 16 tilings of a 10x10 grid over (position, velocity),
tiling ``i`` displaced by ``i/16`` of a cell in both dimensions.  Index layout
is ``100*tiling + 10*row + column``.

The drifting variant flips the sign of each tile feature with a small
probability every step and appends independent Bernoulli(0.5) noise features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .env import MAX_POSITION, MAX_SPEED, MIN_POSITION, McState

N_TILINGS = 16
GRID = 10
N_TILE_FEATURES = N_TILINGS * GRID * GRID
N_NOISY = 32

_P_WIDTH = (MAX_POSITION - MIN_POSITION) / GRID
_V_WIDTH = (2.0 * MAX_SPEED) / GRID


@dataclass(frozen=True)
class SparseFeatures:
    """Sparse feature vector: ``values[k]`` sits at ``indices[k]`` of a ``dim`` vector."""

    dim: int
    indices: np.ndarray
    values: np.ndarray

    def dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out


@nb.njit(cache=True)
def _tile_indices(position, velocity, out):
    fp = (position - MIN_POSITION) / _P_WIDTH
    fv = (velocity + MAX_SPEED) / _V_WIDTH
    for i in range(N_TILINGS):
        offset = i / N_TILINGS
        col = int(math.floor(fp + offset))
        row = int(math.floor(fv + offset))
        col = min(max(col, 0), GRID - 1)
        row = min(max(row, 0), GRID - 1)
        out[i] = GRID * GRID * i + GRID * row + col


def tile_encode(position: float, velocity: float) -> SparseFeatures:
    if not (MIN_POSITION <= position <= MAX_POSITION):
        raise ValueError(f"position {position!r} outside [{MIN_POSITION}, {MAX_POSITION}]")
    if not (-MAX_SPEED <= velocity <= MAX_SPEED):
        raise ValueError(f"velocity {velocity!r} outside [{-MAX_SPEED}, {MAX_SPEED}]")
    idx = np.empty(N_TILINGS, dtype=np.int64)
    _tile_indices(float(position), float(velocity), idx)
    return SparseFeatures(N_TILE_FEATURES, idx, np.ones(N_TILINGS))


@dataclass
class DriftState:
    """Per-run sign pattern of the tile features plus the random source driving it."""

    drift_rate: float
    rng: np.random.Generator
    n_noisy: int = N_NOISY
    signs: np.ndarray = field(default_factory=lambda: np.ones(N_TILE_FEATURES))

    @property
    def dim(self) -> int:
        return self.signs.size + self.n_noisy


@nb.njit(cache=True)
def _flip_signs(signs, rate, rng):
    for i in range(signs.size):
        if rng.random() < rate:
            signs[i] = -signs[i]


@nb.njit(cache=True)
def _draw_noise(rng, out):
    for i in range(out.size):
        out[i] = 1.0 if rng.random() < 0.5 else 0.0


def drift_step(d: DriftState) -> DriftState:
    """Flip every sign independently with probability ``d.drift_rate`` (in place)."""
    _flip_signs(d.signs, float(d.drift_rate), d.rng)
    return d


def drift_encode(d: DriftState, base: SparseFeatures) -> SparseFeatures:
    """Apply the current signs to ``base`` and append freshly drawn noise features."""
    if base.dim != d.signs.size:
        raise ValueError(f"base encoding has dim {base.dim}, expected {d.signs.size}")
    noise = np.empty(d.n_noisy)
    _draw_noise(d.rng, noise)
    n_tile = base.indices.size
    idx = np.empty(n_tile + d.n_noisy, dtype=np.int64)
    idx[:n_tile] = base.indices
    idx[n_tile:] = d.signs.size + np.arange(d.n_noisy)
    vals = np.concatenate([base.values * d.signs[base.indices], noise])
    return SparseFeatures(d.dim, idx, vals)


class TileEncoder:
    """Plain tile coding; ``step`` is a no-op."""

    dim = N_TILE_FEATURES

    def reset(self) -> None:
        pass

    def step(self) -> None:
        pass

    def encode(self, state: McState) -> SparseFeatures:
        return tile_encode(state.position, state.velocity)


class DriftingEncoder:
    """Tile coding seen through a drifting sign pattern with noisy tail features."""

    def __init__(self, drift: DriftState) -> None:
        self.drift = drift

    @property
    def dim(self) -> int:
        return self.drift.dim

    def reset(self) -> None:
        pass

    def step(self) -> None:
        drift_step(self.drift)

    def encode(self, state: McState) -> SparseFeatures:
        return drift_encode(self.drift, tile_encode(state.position, state.velocity))


class RawStateEncoder:
    """Raw (position, velocity) rescaled to [-1, 1] per coordinate, for the MLP."""

    dim = 2

    def reset(self) -> None:
        pass

    def step(self) -> None:
        pass

    def encode(self, state: McState) -> np.ndarray:
        mid = 0.5 * (MAX_POSITION + MIN_POSITION)
        half = 0.5 * (MAX_POSITION - MIN_POSITION)
        return np.array([(state.position - mid) / half, state.velocity / MAX_SPEED])
