"""Temporal variant forward sampling.

From a recorded demonstration, pick seed states every ``interval`` steps, restore
each one exactly and roll out ``branches`` short forward branches. Each branch
action is the demo action at that time rotated by a random angle no larger than
the time-varying bound ``theta(t)``: small near the start and the goal, widest
mid-task. Every consecutive observation pair (along the demo trunk and along
each branch) becomes one training record.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    TunnelingError,
    UndefinedSimilarityError,
    ValidationError,
)
from .physim import OBS_DIM, Demonstration, Env, EnvState, Observation

log = logging.getLogger(__name__)

SOURCE_DEMO = 0
SOURCE_BRANCH = 1
MAGIC = b"PRPD"
VERSION = 1
FALLBACK_MAGNITUDE = 0.1


@dataclass(frozen=True)
class VarianceSchedule:
    theta_min: float = math.pi / 12
    theta_max: float = math.pi / 4
    T: int = 500
    kernel: str = "quadratic"

    def __post_init__(self):
        if not 0 <= self.theta_min <= self.theta_max <= math.pi:
            raise ConfigError("need 0 <= theta_min <= theta_max <= pi")
        if self.T < 1:
            raise ConfigError("schedule length T must be >= 1")
        if self.kernel != "quadratic":
            raise ConfigError(f"unsupported kernel {self.kernel!r}")

    def __call__(self, t: float) -> float:
        return variance_schedule_eval(self, t)


def variance_schedule_eval(sched: VarianceSchedule, t: float) -> float:
    """theta(t) = theta_min + (theta_max - theta_min) * 4 tau (1 - tau), tau = t / T."""
    if not 0 <= t <= sched.T:
        raise ValidationError(f"t={t} outside [0, {sched.T}]")
    tau = t / sched.T
    w = 4.0 * tau * (1.0 - tau)
    # convex-combination form keeps both endpoints and the peak exact
    return sched.theta_max * w + sched.theta_min * (1.0 - w)


@dataclass(frozen=True)
class SamplingConfig:
    interval: int = 50
    branches: int = 5
    steps: int = 10
    seed: int = 0
    scale_range: tuple[float, float] = (0.8, 1.2)

    def __post_init__(self):
        if self.interval < 1 or self.branches < 1 or self.steps < 1:
            raise ConfigError("interval, branches and steps must all be >= 1")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ConfigError("scale_range must satisfy 0 < lo <= hi")


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"length mismatch {a.shape} vs {b.shape}")
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise UndefinedSimilarityError("cosine similarity of a zero-norm vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


@dataclass
class SampledAction:
    action: np.ndarray  # clamped to [-1, 1]
    pre_clamp: np.ndarray
    angle: float
    scale: float
    fallback: bool = False


def sample_action(
    demo_action,
    theta: float,
    rng: np.random.Generator,
    scale_range: tuple[float, float] = (0.8, 1.2),
) -> SampledAction:
    """Rotate ``demo_action`` by an angle drawn from U[0, theta] and rescale it.

    The rotation direction is uniform in the plane spanned by the demo action and
    a random orthogonal unit vector, so the pre-clamp result always satisfies
    cosine_similarity(result, demo) >= cos(theta). A zero demo action yields a
    small isotropic perturbation instead (``fallback=True``).
    """
    if not 0.0 <= theta <= math.pi:
        raise ValidationError(f"theta={theta} outside [0, pi]")
    d = np.asarray(demo_action, dtype=np.float64)
    norm = float(np.linalg.norm(d))
    if norm < 1e-12:
        direction = rng.normal(size=d.shape)
        direction /= np.linalg.norm(direction)
        pre = direction * rng.uniform(0.0, FALLBACK_MAGNITUDE)
        return SampledAction(np.clip(pre, -1, 1), pre, float("nan"), 1.0, True)
    angle = rng.uniform(0.0, theta)
    scale = rng.uniform(*scale_range)
    unit = d / norm
    while True:
        g = rng.normal(size=d.shape)
        g -= np.dot(g, unit) * unit
        gn = float(np.linalg.norm(g))
        if gn > 1e-9:
            break
    ortho = g / gn
    pre = scale * (math.cos(angle) * d + math.sin(angle) * norm * ortho)
    return SampledAction(np.clip(pre, -1.0, 1.0), pre, angle, scale)


@dataclass(frozen=True)
class Seed:
    index: int
    t: int
    state: EnvState
    window: np.ndarray


def select_seeds(demo: Demonstration, interval: int) -> list[Seed]:
    """Seeds at t = 0, I, 2I, ... <= T, each carrying the stored state and F/T window."""
    if len(demo) == 0:
        raise ValidationError("empty demonstration")
    if interval < 1:
        raise ConfigError("sampling interval must be >= 1")
    return [
        Seed(i, t, demo.states[t], demo.observations[t].ft_window)
        for i, t in enumerate(range(0, demo.T + 1, interval))
    ]


_RECORD_DTYPE = np.dtype([
    ("source", "u1"), ("fallback", "u1"), ("pad", "u1", (2,)),
    ("seed_index", "<i4"), ("branch_index", "<i4"), ("step_index", "<i4"), ("t", "<i4"),
    ("theta", "<f8"), ("demo_action", "<f8", (3,)), ("pre_clamp", "<f8", (3,)),
    ("action", "<f8", (3,)), ("obs_t", "<f8", (OBS_DIM,)), ("obs_t1", "<f8", (OBS_DIM,)),
])


@dataclass(eq=False)
class PairDataset:
    """Column store of (s_t, s_{t+1}) pairs plus sampling metadata."""

    records: np.ndarray  # structured array with _RECORD_DTYPE
    provenance: dict = field(default_factory=dict)
    incidents: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def obs_t(self) -> np.ndarray:
        return self.records["obs_t"]

    @property
    def obs_t1(self) -> np.ndarray:
        return self.records["obs_t1"]

    def pair(self, i: int) -> tuple[Observation, Observation]:
        r = self.records[i]
        return Observation.from_flat(np.array(r["obs_t"])), Observation.from_flat(np.array(r["obs_t1"]))

    def branch_records(self) -> np.ndarray:
        return self.records[self.records["source"] == SOURCE_BRANCH]

    def provenance_hash(self) -> str:
        return hashlib.sha256(_canonical(self.provenance)).hexdigest()


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def expected_count(T: int, config: SamplingConfig) -> int:
    n_seeds = T // config.interval + 1
    return T + n_seeds * config.branches * config.steps


def _stream(config: SamplingConfig, seed_index: int, branch_index: int) -> np.random.Generator:
    stream_id = seed_index * config.branches + branch_index
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed, spawn_key=(stream_id,))))


def _demo_action(demo: Demonstration, t: int) -> np.ndarray:
    return demo.actions[min(t, demo.T - 1)]


def _rollout_one(args) -> tuple[list[tuple], str | None]:
    demo, seed, branch_index, config, sched = args
    rng = _stream(config, seed.index, branch_index)
    env = Env(demo.kind)
    prev = env.restore(seed.state, seed.window)
    rows = []
    for j in range(config.steps):
        t = seed.t + j
        demo_a = _demo_action(demo, t)
        theta = sched(min(t, sched.T))
        sampled = sample_action(demo_a, theta, rng, config.scale_range)
        try:
            nxt = env.step(sampled.action)
        except (TunnelingError, ValidationError) as exc:
            msg = f"seed {seed.index} branch {branch_index} truncated at step {j}: {exc}"
            return rows, msg
        rows.append((SOURCE_BRANCH, sampled.fallback, seed.index, branch_index, j, t, theta,
                     demo_a, sampled.pre_clamp, sampled.action, prev.flatten(), nxt.flatten()))
        prev = nxt
    return rows, None


def rollout_branches(
    demo: Demonstration,
    seeds: list[Seed],
    config: SamplingConfig,
    sched: VarianceSchedule,
    demo_hash: str = "",
    workers: int = 1,
) -> PairDataset:
    """Trunk pairs along the demo followed by N branches of K steps from every seed.

    Records are ordered trunk first, then by (seed, branch, step). Each branch
    draws from its own generator (stream id = seed_index * N + branch_index), so
    the result does not depend on ``workers``.
    """
    if demo.T < 1:
        raise ValidationError("demonstration needs at least one transition")
    rows = []
    for t in range(demo.T):
        a = demo.actions[t]
        rows.append((SOURCE_DEMO, False, -1, -1, t, t, 0.0, a, a, a,
                     demo.observations[t].flatten(), demo.observations[t + 1].flatten()))
    jobs = [(demo, s, b, config, sched) for s in seeds for b in range(config.branches)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_rollout_one, jobs))
    else:
        results = [_rollout_one(j) for j in jobs]
    incidents = []
    for branch_rows, incident in results:
        rows.extend(branch_rows)
        if incident:
            log.warning(incident)
            incidents.append(incident)

    rec = np.zeros(len(rows), dtype=_RECORD_DTYPE)
    for i, r in enumerate(rows):
        (rec[i]["source"], rec[i]["fallback"], rec[i]["seed_index"], rec[i]["branch_index"],
         rec[i]["step_index"], rec[i]["t"], rec[i]["theta"], rec[i]["demo_action"],
         rec[i]["pre_clamp"], rec[i]["action"], rec[i]["obs_t"], rec[i]["obs_t1"]) = r
    provenance = {
        "demo_hash": demo_hash,
        "demo_T": demo.T,
        "env_kind": demo.kind,
        "sampling": asdict(config),
        "schedule": asdict(sched),
        "incidents": len(incidents),
    }
    return PairDataset(rec, provenance, incidents)


def run_tvfs(
    demo: Demonstration,
    config: SamplingConfig,
    theta_min: float = math.pi / 12,
    theta_max: float = math.pi / 4,
    demo_hash: str = "",
    workers: int = 1,
) -> PairDataset:
    sched = VarianceSchedule(theta_min, theta_max, demo.T)
    return rollout_branches(demo, select_seeds(demo, config.interval), config, sched, demo_hash, workers)


def cone_violations(dataset: PairDataset, tol: float = 1e-12) -> int:
    """Branch records whose pre-clamp action leaves the theta(t) cone of the demo action."""
    bad = 0
    for r in dataset.branch_records():
        if r["fallback"]:
            continue
        if cosine_similarity(r["pre_clamp"], r["demo_action"]) < math.cos(r["theta"]) - tol:
            bad += 1
    return bad


# ------------------------------------------------------------------ file format
#
# header  magic b"PRPD" | u32 version | u32 record count | u32 observation length
#         | 32-byte sha256 provenance digest | u32 JSON length | JSON provenance
# records fixed-size little-endian rows laid out as _RECORD_DTYPE


def dumps(dataset: PairDataset) -> bytes:
    meta = _canonical(dataset.provenance)
    buf = io.BytesIO()
    buf.write(struct.pack("<4sIII", MAGIC, VERSION, len(dataset), OBS_DIM))
    buf.write(bytes.fromhex(dataset.provenance_hash()))
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    buf.write(dataset.records.tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> PairDataset:
    if len(blob) < 52 or blob[:4] != MAGIC:
        raise ValidationError("not a PRPD pair dataset")
    _, version, count, obs_dim = struct.unpack_from("<4sIII", blob, 0)
    if version != VERSION or obs_dim != OBS_DIM:
        raise ValidationError(f"unsupported PRPD version {version} / observation length {obs_dim}")
    digest = blob[16:48].hex()
    (mlen,) = struct.unpack_from("<I", blob, 48)
    provenance = json.loads(blob[52 : 52 + mlen])
    if hashlib.sha256(_canonical(provenance)).hexdigest() != digest:
        raise ValidationError("PRPD provenance digest mismatch")
    off = 52 + mlen
    if len(blob) - off != count * _RECORD_DTYPE.itemsize:
        raise ValidationError("PRPD record count does not match header")
    rec = np.frombuffer(blob, dtype=_RECORD_DTYPE, offset=off).copy()
    return PairDataset(rec, provenance)


def save_dataset(path: str | Path, dataset: PairDataset) -> bytes:
    blob = dumps(dataset)
    Path(path).write_bytes(blob)
    return blob


def load_dataset(path: str | Path) -> PairDataset:
    return loads(Path(path).read_bytes())
