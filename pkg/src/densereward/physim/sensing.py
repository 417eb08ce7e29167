"""Multimodal observation assembly."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ValidationError
from .raster import GRID, render
from .world import EnvState

WINDOW = 32
FT_CHANNELS = 6  # fx, fy, torque, then three reserved zero channels
OBS_DIM = 2 * GRID * GRID + 3 + 3 + WINDOW * FT_CHANNELS


@dataclass(frozen=True, eq=False)
class Observation:
    intensity: np.ndarray  # (32, 32) in [0, 1]
    depth: np.ndarray  # (32, 32) in [0, 1], 1 = nearest
    pose: np.ndarray  # (3,)
    velocity: np.ndarray  # (3,)
    ft_window: np.ndarray  # (32, 6), newest row last

    def flatten(self) -> np.ndarray:
        return np.concatenate([
            self.intensity.ravel(), self.depth.ravel(), self.pose, self.velocity,
            self.ft_window.ravel(),
        ])

    @classmethod
    def from_flat(cls, vec: np.ndarray) -> Observation:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (OBS_DIM,):
            raise ValidationError(f"flat observation must have length {OBS_DIM}")
        n = GRID * GRID
        return cls(
            vec[:n].reshape(GRID, GRID),
            vec[n : 2 * n].reshape(GRID, GRID),
            vec[2 * n : 2 * n + 3],
            vec[2 * n + 3 : 2 * n + 6],
            vec[2 * n + 6 :].reshape(WINDOW, FT_CHANNELS),
        )

    def grids(self) -> np.ndarray:
        """(2, 32, 32) stack of intensity and depth."""
        return np.stack([self.intensity, self.depth])

    def latest_wrench(self) -> np.ndarray:
        return self.ft_window[-1, :3]

    def equals(self, other: Observation) -> bool:
        return self.flatten().tobytes() == other.flatten().tobytes()


def ft_window(wrench_history: Sequence[np.ndarray]) -> np.ndarray:
    """Last 32 wrenches as a (32, 6) window, zero-padded on the old side."""
    window = np.zeros((WINDOW, FT_CHANNELS))
    recent = list(wrench_history)[-WINDOW:]
    if recent:
        rows = np.asarray(recent, dtype=np.float64).reshape(len(recent), -1)
        window[WINDOW - len(recent) :, : rows.shape[1]] = rows[:, :3]
    return window


def sense(state: EnvState, wrench_history: Sequence[np.ndarray]) -> Observation:
    intensity, depth = render(state)
    return Observation(
        intensity,
        depth,
        np.array(state.gripper_pose),
        np.array(state.gripper_vel),
        ft_window(wrench_history),
    )
