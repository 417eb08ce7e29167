"""Planar contact-rich manipulation simulator with multimodal sensing."""

from .demo import Demonstration, load_demo, record_demo, record_move_away, replay_matches, save_demo
from .env import Env
from .expert import ExpertPlan, ScriptedExpert, default_plan, expert_action, move_away_plan, scripted_expert
from .raster import GRID, render, render_polygons
from .sensing import OBS_DIM, WINDOW, Observation, ft_window, sense
from .world import (
    BLOCK,
    DOOR,
    KINDS,
    EnvState,
    clamp_action,
    goal_state,
    initial_state,
    step_env,
    success,
)

__all__ = [
    "BLOCK", "DOOR", "GRID", "KINDS", "OBS_DIM", "WINDOW", "Demonstration", "Env", "EnvState",
    "ExpertPlan", "Observation", "ScriptedExpert", "clamp_action", "default_plan", "expert_action",
    "ft_window", "goal_state", "initial_state", "load_demo", "move_away_plan", "record_demo", "record_move_away",
    "render", "render_polygons", "replay_matches", "save_demo", "scripted_expert", "sense",
    "step_env", "success",
]
