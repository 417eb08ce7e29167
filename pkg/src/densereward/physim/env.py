"""Stateful environment wrapper: state + wrench history + seeded generator."""

from __future__ import annotations

from collections import deque

import numpy as np

from .sensing import WINDOW, Observation, sense
from .world import DT, EnvState, initial_state, step_env, success


class Env:
    """One independent simulator instance. Not shared between threads."""

    def __init__(self, kind: str, seed: int = 0, dt: float = DT):
        self.kind = kind
        self.dt = dt
        self.rng = np.random.default_rng(seed)
        self.state = initial_state(kind, self.rng)
        self.history: deque[np.ndarray] = deque(maxlen=WINDOW)

    def reset(self, seed: int | None = None) -> Observation:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.state = initial_state(self.kind, self.rng)
        self.history.clear()
        return self.observe()

    def restore(self, state: EnvState, window: np.ndarray | None = None) -> Observation:
        """Set the state directly and rebuild the wrench history from a (32, 6) window."""
        self.state = state
        self.history.clear()
        if window is not None:
            for row in np.asarray(window)[:, :3]:
                self.history.append(np.array(row))
        return self.observe()

    def observe(self) -> Observation:
        return sense(self.state, self.history)

    def step(self, action) -> Observation:
        self.state, wrench = step_env(self.state, action, self.dt)
        self.history.append(wrench)
        return self.observe()

    def step_state(self, action) -> np.ndarray:
        """Advance without rendering; returns the wrench. Call ``observe`` when needed."""
        self.state, wrench = step_env(self.state, action, self.dt)
        self.history.append(wrench)
        return wrench

    def success(self) -> bool:
        return success(self.state)
