"""Demonstration recording and the PRLD file format.

PRLD layout (little-endian)::

    header (16 bytes)  magic b"PRLD" | u16 version | u8 env kind (0 block-insertion,
                       1 latch-door) | u8 success | u32 T | u32 recording seed
    T + 1 records      u32 t | u8 has_action | 3 pad bytes | f64 * state_dim state
                       | f64 * 3 action (zeros when has_action = 0) | f64 * 2246 observation

``state_dim`` is 9 for block-insertion and 21 for latch-door (see
``EnvState.to_vector``); the observation is ``Observation.flatten()``.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from .env import Env
from .expert import ExpertPlan, ScriptedExpert, default_plan, move_away_plan
from .sensing import OBS_DIM, Observation
from .world import KINDS, EnvState, state_dim, step_env

log = logging.getLogger(__name__)

MAGIC = b"PRLD"
VERSION = 1
DEFAULT_HORIZON = 600


@dataclass(eq=False)
class Demonstration:
    kind: str
    seed: int
    states: list[EnvState]
    actions: list[np.ndarray | None]  # actions[t] moves states[t] -> states[t+1]; last is None
    observations: list[Observation]
    success: bool
    status: str = "ok"

    @property
    def T(self) -> int:
        return len(self.states) - 1

    def __len__(self) -> int:
        return len(self.states)


def record_demo(
    kind: str,
    seed: int,
    plan: ExpertPlan | None = None,
    horizon: int = DEFAULT_HORIZON,
    stop_on_success: bool = True,
    lead: int = 0,
) -> Demonstration:
    """Roll the scripted expert out from the seeded initial state.

    Stops at the first successful state (unless ``stop_on_success`` is False) or
    after ``horizon`` steps. A run that ends unsuccessful is kept, flagged with
    ``success=False`` and status ``"horizon-reached"``. With ``lead > 0`` the
    default expert first runs that many unrecorded steps, and recording with
    ``plan`` starts from where it left off.
    """
    if kind not in KINDS:
        raise ValidationError(f"unknown env kind {kind!r}")
    if horizon < 0 or lead < 0:
        raise ValidationError("horizon and lead must be >= 0")
    env = Env(kind, seed)
    if lead:
        warm = ScriptedExpert(default_plan(kind))
        for _ in range(lead):
            env.step_state(warm(env.state))
    expert = ScriptedExpert(plan or default_plan(kind))
    states, actions, observations = [env.state], [], [env.observe()]
    while len(actions) < horizon and not (stop_on_success and env.success()):
        action = expert(env.state)
        env.step_state(action)
        actions.append(np.clip(action, -1.0, 1.0))
        states.append(env.state)
        observations.append(env.observe())
    actions.append(None)
    ok = env.success()
    status = "ok"
    if not ok:
        status = "horizon-reached"
        if plan is None:
            log.warning("demo %s seed %d ended without success after %d steps", kind, seed, horizon)
    return Demonstration(kind, seed, states, actions, observations, ok, status)


# expert steps before the retreat starts: block most of the way to the slot, door partly open
MOVE_AWAY_LEAD = {"block-insertion": 150, "latch-door": 500}


def record_move_away(kind: str, seed: int, horizon: int = 300, lead: int | None = None) -> Demonstration:
    """A failing trajectory: the expert gets partway, then retreats from the goal."""
    lead = MOVE_AWAY_LEAD.get(kind, 0) if lead is None else lead
    return record_demo(kind, seed, plan=move_away_plan(kind), horizon=horizon,
                       stop_on_success=False, lead=lead)


def replay_matches(demo: Demonstration) -> bool:
    """Re-simulate the stored actions and compare every state bit-for-bit."""
    state = demo.states[0]
    for t in range(demo.T):
        state, _ = step_env(state, demo.actions[t])
        if not state.same_as(demo.states[t + 1]):
            return False
    return True


def _record_dtype(kind: str) -> np.dtype:
    return np.dtype([
        ("t", "<u4"), ("has_action", "u1"), ("pad", "u1", (3,)),
        ("state", "<f8", (state_dim(kind),)), ("action", "<f8", (3,)), ("obs", "<f8", (OBS_DIM,)),
    ])


def dumps(demo: Demonstration) -> bytes:
    if not 0 <= demo.seed < 2**32:
        raise ValidationError("demo seed must fit in u32 for the PRLD header")
    header = struct.pack("<4sHBBII", MAGIC, VERSION, KINDS.index(demo.kind), int(demo.success),
                         demo.T, demo.seed)
    rec = np.zeros(len(demo), dtype=_record_dtype(demo.kind))
    for t, (s, a, o) in enumerate(zip(demo.states, demo.actions, demo.observations)):
        rec[t]["t"] = t
        rec[t]["has_action"] = a is not None
        rec[t]["state"] = s.to_vector()
        if a is not None:
            rec[t]["action"] = a
        rec[t]["obs"] = o.flatten()
    return header + rec.tobytes()


def loads(blob: bytes) -> Demonstration:
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise ValidationError("not a PRLD demonstration file")
    _, version, kind_code, ok, T, seed = struct.unpack_from("<4sHBBII", blob, 0)
    if version != VERSION or kind_code >= len(KINDS):
        raise ValidationError(f"unsupported PRLD version {version} / kind {kind_code}")
    kind = KINDS[kind_code]
    dtype = _record_dtype(kind)
    if len(blob) - 16 != (T + 1) * dtype.itemsize:
        raise ValidationError("PRLD record count does not match header")
    rec = np.frombuffer(blob, dtype=dtype, offset=16)
    states = [EnvState.from_vector(kind, r["state"]) for r in rec]
    actions = [np.array(r["action"]) if r["has_action"] else None for r in rec]
    observations = [Observation.from_flat(np.array(r["obs"])) for r in rec]
    status = "ok" if ok else "horizon-reached"
    return Demonstration(kind, seed, states, actions, observations, bool(ok), status)


def save_demo(path: str | Path, demo: Demonstration) -> bytes:
    blob = dumps(demo)
    Path(path).write_bytes(blob)
    return blob


def load_demo(path: str | Path) -> Demonstration:
    return loads(Path(path).read_bytes())
