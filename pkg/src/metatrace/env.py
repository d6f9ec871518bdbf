"""Mountain car dynamics (gym MountainCar-v0 constants).

The car starts at rest somewhere in [-0.6, -0.4] and must reach position 0.5.
Every step costs -1 and episodes are cut off after 200 steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

MIN_POSITION = -1.2
MAX_POSITION = 0.6
MAX_SPEED = 0.07
GOAL_POSITION = 0.5
FORCE = 0.001
GRAVITY = 0.0025
MAX_STEPS = 200
N_ACTIONS = 3


@dataclass(frozen=True)
class McState:
    position: float
    velocity: float


@dataclass(frozen=True)
class StepOutcome:
    next_state: McState
    reward: float
    terminal: bool
    steps_elapsed: int
    # True when the episode ended on the step limit rather than at the goal.
    timeout: bool = False


@nb.njit(cache=True)
def _dynamics(position, velocity, action):
    velocity = velocity + (action - 1) * FORCE - GRAVITY * math.cos(3.0 * position)
    if velocity > MAX_SPEED:
        velocity = MAX_SPEED
    elif velocity < -MAX_SPEED:
        velocity = -MAX_SPEED
    position = position + velocity
    if position > MAX_POSITION:
        position = MAX_POSITION
    elif position < MIN_POSITION:
        position = MIN_POSITION
    if position == MIN_POSITION and velocity < 0.0:
        velocity = 0.0
    return position, velocity


def mc_reset(rng: np.random.Generator) -> McState:
    """Draw a start state: position ~ U[-0.6, -0.4], velocity 0."""
    return McState(float(rng.uniform(-0.6, -0.4)), 0.0)


def mc_step(state: McState, action: int, steps_elapsed: int = 0) -> StepOutcome:
    """Advance one step.

    ``steps_elapsed`` is the number of steps already taken in the episode;
    the outcome reports the count including this step.
    """
    if action not in (0, 1, 2):
        raise ValueError(f"action must be 0, 1 or 2, got {action!r}")
    position, velocity = _dynamics(state.position, state.velocity, int(action))
    steps = steps_elapsed + 1
    goal = position >= GOAL_POSITION
    timeout = not goal and steps >= MAX_STEPS
    return StepOutcome(
        next_state=McState(position, velocity),
        reward=-1.0,
        terminal=goal or timeout,
        steps_elapsed=steps,
        timeout=timeout,
    )


class MountainCar:
    """Stateful wrapper that tracks the current state and step count."""

    def __init__(self) -> None:
        self.state: McState | None = None
        self.steps = 0

    def reset(self, rng: np.random.Generator) -> McState:
        self.state = mc_reset(rng)
        self.steps = 0
        return self.state

    def step(self, action: int) -> StepOutcome:
        if self.state is None:
            raise RuntimeError("reset() must be called before step()")
        out = mc_step(self.state, action, self.steps)
        self.state = out.next_state
        self.steps = out.steps_elapsed
        return out
