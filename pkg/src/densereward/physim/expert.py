"""Scripted waypoint-following expert standing in for a human demonstrator."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from .world import BLOCK, DOOR, EnvState, door_tip


@dataclass
class ExpertPlan:
    waypoints: list[tuple[float, float, float]]
    gain: float = 20.0
    tolerance: float = 0.01
    angle_tolerance: float = 0.05
    max_action: float = 1.0


def _wrap(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


def expert_action(state: EnvState, plan: ExpertPlan, index: int = 0) -> tuple[np.ndarray, int]:
    """Proportional command toward waypoint ``index``; returns (action, next index).

    The index advances once the gripper is within tolerance of a waypoint that
    is not the last one. The linear part is scaled uniformly so the gripper
    moves in a straight line; every component ends up in [-max_action, max_action].
    """
    if not plan.waypoints:
        raise ConfigError("expert plan has no waypoints")
    pose = state.gripper_pose
    last = len(plan.waypoints) - 1
    index = min(index, last)
    while True:
        wx, wy, wa = plan.waypoints[index]
        ex, ey, ea = wx - pose[0], wy - pose[1], _wrap(wa - pose[2])
        near = math.hypot(ex, ey) < plan.tolerance and abs(ea) < plan.angle_tolerance
        if index < last and near:
            index += 1
            continue
        break
    lim = min(1.0, plan.max_action)
    vx, vy = plan.gain * ex, plan.gain * ey
    peak = max(abs(vx), abs(vy))
    if peak > lim:
        vx, vy = vx * lim / peak, vy * lim / peak
    w = float(np.clip(plan.gain * ea, -lim, lim))
    return np.array([vx, vy, w]), index


class ScriptedExpert:
    """Stateful wrapper remembering the active waypoint."""

    def __init__(self, plan: ExpertPlan):
        if not plan.waypoints:
            raise ConfigError("expert plan has no waypoints")
        self.plan = plan
        self.index = 0

    def __call__(self, state: EnvState) -> np.ndarray:
        action, self.index = expert_action(state, self.plan, self.index)
        return action


def scripted_expert(state: EnvState, plan: ExpertPlan) -> np.ndarray:
    """Stateless single-step query against the plan's first reachable waypoint."""
    return expert_action(state, plan, 0)[0]


HANDLE_TWIST = 1.25  # commanded gripper angle above the door angle while pulling


def default_plan(kind: str, max_action: float | None = None) -> ExpertPlan:
    if kind == BLOCK:
        # straight to just above the slot mouth, then push down to the floor. A single
        # diagonal approach keeps the motion direction (and so the learned latent step)
        # roughly constant until the descent; an L-shaped path bends the latent chain
        # away from the goal embedding before the final descent.
        return ExpertPlan(
            waypoints=[(0.0, 0.06, 0.0), (0.0, -0.07, 0.0)],
            tolerance=0.02,
            max_action=0.35 if max_action is None else max_action,
        )
    if kind == DOOR:
        tx, ty = door_tip(0.0)
        waypoints = [(tx, ty, HANDLE_TWIST)]
        for phi in (0.15, 0.3, 0.45, 0.6, 0.75):
            x, y = door_tip(phi)
            waypoints.append((x, y, phi + HANDLE_TWIST))
        return ExpertPlan(waypoints=waypoints, tolerance=0.02, angle_tolerance=0.1,
                          max_action=0.5 if max_action is None else max_action)
    raise ConfigError(f"no default plan for env kind {kind!r}")


def move_away_plan(kind: str) -> ExpertPlan:
    """Retreat back along the expert's approach, away from the goal.

    Meant to start from a partly completed state (see ``record_demo(lead=...)``)
    so the whole trajectory stays in the region the expert visits.
    """
    if kind == BLOCK:
        return ExpertPlan(waypoints=[(0.15, 0.20, 0.0)], tolerance=0.02, max_action=0.35)
    if kind == DOOR:
        waypoints = []
        for phi in (0.3, 0.15, 0.0):
            x, y = door_tip(phi)
            waypoints.append((x, y, phi + HANDLE_TWIST))
        return ExpertPlan(waypoints=waypoints, tolerance=0.02, angle_tolerance=0.1, max_action=0.5)
    raise ConfigError(f"no move-away plan for env kind {kind!r}")

