"""Task-progress reward from a trained representation.

    p(s) = 1 - d(h(s), h_g) / d(h_0, h_g)

with h the static embedding, h_0 and h_g the embeddings of the demonstration's
first and last observations, and d the Euclidean distance. p is 0 at the start,
1 at the goal and is deliberately left unclamped: moving away from the goal
drives it below zero.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gradnet as gn
from .errors import ConfigError, NumericError, ValidationError
from .physim import Demonstration, Observation
from .physim.raster import render
from .replearn import Batch, ReprConfig, ReprModel, config_dict

EPS = 1e-6
MAGIC = b"PRRB"
VERSION = 1


def distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distance along the last axis."""
    return np.sqrt(np.sum((np.asarray(a) - np.asarray(b)) ** 2, axis=-1))


def progress_from_embeddings(h, h0, hg) -> np.ndarray:
    denom = float(distance(h0, hg))
    if not denom > EPS:
        raise NumericError(f"reference distance {denom} is degenerate")
    return 1.0 - distance(h, hg) / denom


def make_refs(model: ReprModel, demo: Demonstration, average_last: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Reference embeddings from the demo's first and last observations.

    ``average_last > 1`` averages the goal embedding over the final frames.
    """
    if not demo.success:
        raise ValidationError("reference demonstration did not reach the goal")
    if average_last < 1:
        raise ConfigError("average_last must be >= 1")
    first = model.encode_grids(demo.observations[0].grids()[None])[0]
    tail = model.encode_grids(np.stack([o.grids() for o in demo.observations[-average_last:]]))
    goal = tail[-1] if average_last == 1 else tail.mean(axis=0)
    if not (np.all(np.isfinite(first)) and np.all(np.isfinite(goal))):
        raise NumericError("non-finite reference embedding")
    if not distance(first, goal) > EPS:
        raise NumericError("initial and goal embeddings coincide")
    return first, goal


class RewardModel:
    """Frozen representation plus references. Safe to share between readers."""

    def __init__(self, model: ReprModel, h0: np.ndarray, hg: np.ndarray, difference: bool = False,
                 provenance: str = ""):
        self.model = model.copy()  # private copy; callers cannot mutate it afterwards
        self.h0 = np.array(h0, dtype=np.float64)
        self.hg = np.array(hg, dtype=np.float64)
        self.h0.setflags(write=False)
        self.hg.setflags(write=False)
        self.denominator = float(distance(self.h0, self.hg))
        if not self.denominator > EPS:
            raise NumericError(f"reference distance {self.denominator} is degenerate")
        self.difference = difference
        self.distance_kind = "euclidean"
        self.provenance = provenance

    @classmethod
    def from_demo(cls, model: ReprModel, demo: Demonstration, **kw) -> RewardModel:
        h0, hg = make_refs(model, demo)
        return cls(model, h0, hg, **kw)

    def embed(self, observations: list[Observation]) -> np.ndarray:
        return self.model.encode_grids(np.stack([o.grids() for o in observations]))

    def progress_batch(self, observations: list[Observation]) -> np.ndarray:
        h = self.embed(observations)
        return 1.0 - distance(h, self.hg) / self.denominator

    def progress_grids(self, grids: np.ndarray) -> np.ndarray:
        h = self.model.encode_grids(grids)
        return 1.0 - distance(h, self.hg) / self.denominator

    def progress_state(self, state) -> float:
        """p for a simulator state, rendering only the static grids."""
        return float(self.progress_grids(np.stack(render(state))[None])[0])

    def progress_flat(self, flat: np.ndarray) -> np.ndarray:
        h = self.model.encode_grids(Batch.from_flat(flat).grids)
        return 1.0 - distance(h, self.hg) / self.denominator


def progress(rm: RewardModel, obs: Observation) -> float:
    return float(rm.progress_batch([obs])[0])


def dense_reward(rm: RewardModel, obs_next: Observation, obs_prev: Observation | None = None) -> float:
    """p(s_{t+1}), or p(s_{t+1}) - p(s_t) when the model is in difference mode."""
    if not rm.difference:
        return progress(rm, obs_next)
    if obs_prev is None:
        raise ValidationError("difference mode needs the previous observation")
    p = rm.progress_batch([obs_prev, obs_next])
    return float(p[1] - p[0])


def trajectory_rewards(rm: RewardModel, observations: list[Observation]) -> np.ndarray:
    """p_t for every observation of a trajectory (differences in difference mode; r_0 = 0)."""
    p = rm.progress_batch(observations)
    if rm.difference:
        return np.concatenate([[0.0], np.diff(p)])
    return p


# ------------------------------------------------------------------ bundle file
#
# magic b"PRRB" | u32 version | u32 header JSON length | header JSON
# | u32 checkpoint length | PRCK checkpoint bytes
#
# The header carries the model configuration, the two reference embeddings (as
# float.hex strings so they round-trip exactly), the distance kind, the
# difference flag and the provenance hash of the inputs.


def dumps(rm: RewardModel) -> bytes:
    ckpt = gn.checkpoint.dumps(rm.model.parameters())
    header = {
        "config": config_dict(rm.model.config),
        "h0": [float(v).hex() for v in rm.h0],
        "hg": [float(v).hex() for v in rm.hg],
        "distance": rm.distance_kind,
        "difference": rm.difference,
        "provenance": rm.provenance,
        "checkpoint_sha256": hashlib.sha256(ckpt).hexdigest(),
    }
    meta = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(struct.pack("<4sII", MAGIC, VERSION, len(meta)))
    buf.write(meta)
    buf.write(struct.pack("<I", len(ckpt)))
    buf.write(ckpt)
    return buf.getvalue()


def loads(blob: bytes) -> RewardModel:
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise ValidationError("not a reward bundle")
    _, version, mlen = struct.unpack_from("<4sII", blob, 0)
    if version != VERSION:
        raise ValidationError(f"unsupported bundle version {version}")
    header = json.loads(blob[12 : 12 + mlen])
    (clen,) = struct.unpack_from("<I", blob, 12 + mlen)
    ckpt = blob[16 + mlen : 16 + mlen + clen]
    if len(ckpt) != clen or hashlib.sha256(ckpt).hexdigest() != header["checkpoint_sha256"]:
        raise ValidationError("bundle checkpoint is truncated or corrupt")
    if header["distance"] != "euclidean":
        raise ValidationError(f"unsupported distance {header['distance']!r}")
    model = ReprModel(ReprConfig(**header["config"]))
    model.load_state_dict(gn.checkpoint.loads(ckpt))
    h0 = np.array([float.fromhex(v) for v in header["h0"]])
    hg = np.array([float.fromhex(v) for v in header["hg"]])
    return RewardModel(model, h0, hg, header["difference"], header["provenance"])


def save_bundle(path: str | Path, rm: RewardModel) -> bytes:
    blob = dumps(rm)
    Path(path).write_bytes(blob)
    return blob


def load_bundle(path: str | Path) -> RewardModel:
    return loads(Path(path).read_bytes())
