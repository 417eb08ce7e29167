"""Resumable demo -> sample -> train -> bundle -> eval -> bench pipeline.

Every stage writes into a private staging directory first and moves its files
into place only after it finished, so a failure never leaves half-written
artifacts behind. ``manifest.json`` records, per stage, a digest of the stage's
inputs (config sections plus upstream artifact hashes) and the sha256 of every
file it produced. A stage whose input digest matches and whose files are intact
is skipped; a recorded file that changed on disk stops the run.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import rewardfn, sacrl, tvfs
from ..errors import ProvenanceError, StageError, ValidationError
from ..physim import demo as demo_io
from ..physim import record_demo, record_move_away
from ..replearn import ReprModel, train, write_history
from . import metrics
from .config import ExperimentConfig

log = logging.getLogger(__name__)

STAGES = ("demo", "sample", "train", "bundle", "eval", "bench")
MANIFEST = "manifest.json"

DEMO_FILE = "demo.prld"
DATASET_FILE = "dataset.prpd"
CHECKPOINT_FILE = "repr.prck"
HISTORY_FILE = "training.csv"
BUNDLE_FILE = "reward.prrb"
EVAL_FILE = "eval.json"
SUMMARY_FILE = "metrics.csv"


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def log_name(source: str, seed: int) -> str:
    return f"logs/{source}-seed{seed}.csv"


def curve_name(source: str) -> str:
    return f"curves-{source}.csv"


def spearman(x, y) -> float:
    """Rank correlation with average ranks for ties."""
    rx, ry = _ranks(np.asarray(x, dtype=np.float64)), _ranks(np.asarray(y, dtype=np.float64))
    rx, ry = rx - rx.mean(), ry - ry.mean()
    denom = np.sqrt((rx * rx).sum() * (ry * ry).sum())
    return float((rx * ry).sum() / denom) if denom > 0 else float("nan")


def _ranks(a: np.ndarray) -> np.ndarray:
    order = np.argsort(a, kind="mergesort")
    ranks = np.empty(a.size)
    sa = a[order]
    i = 0
    while i < a.size:
        j = i
        while j + 1 < a.size and sa[j + 1] == sa[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0
        i = j + 1
    return ranks


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def trajectory_columns(rm: rewardfn.RewardModel, demo) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # one observation at a time: the same arithmetic the RL reward uses, so endpoints are exact
    p = np.array([rewardfn.progress(rm, o) for o in demo.observations])
    hand = np.array([sacrl.handcrafted_reward(s) for s in demo.states])
    sparse = np.array([sacrl.sparse_reward(s) for s in demo.states])
    return p, hand, sparse


# ------------------------------------------------------------------ benchmark


def _bench_job(job):
    source, seed_index, rl_seed, spec_kw, hyper, bundle_blob = job
    rm = rewardfn.loads(bundle_blob) if source == "dense" else None
    spec = sacrl.RunSpec(source=source, seed=rl_seed, **spec_kw)
    records = sacrl.train_sac(spec, hyper, rm)
    return [replace(r, seed=seed_index) for r in records]


def run_single(config: ExperimentConfig, source: str, seed_index: int, bundle_blob: bytes | None) -> list:
    """One SAC run; the log's seed column holds the configured seed index."""
    if source == "dense" and bundle_blob is None:
        raise ValidationError("the dense source needs a reward bundle")
    b = config.bench
    spec_kw = {"kind": config.demo.env, "episodes": b.episodes, "horizon": b.horizon,
               "action_repeat": b.action_repeat}
    return _bench_job((source, seed_index, config.rl_seed(seed_index), spec_kw, config.sac, bundle_blob))


def run_benchmark(config: ExperimentConfig, bundle_blob: bytes | None, workers: int | None = None,
                  on_run=None) -> metrics.RunMetrics:
    """Train SAC for every (source, seed) pair. A failed run is recorded and the rest continue."""
    b = config.bench
    spec_kw = {"kind": config.demo.env, "episodes": b.episodes, "horizon": b.horizon,
               "action_repeat": b.action_repeat}
    keys = [(src, s) for src in b.sources for s in b.seeds]
    jobs = [(src, s, config.rl_seed(s), spec_kw, config.sac, bundle_blob if src == "dense" else None)
            for src, s in keys]
    if "dense" in b.sources and bundle_blob is None:
        raise ValidationError("the dense source needs a reward bundle")
    result = metrics.RunMetrics()
    workers = b.workers if workers is None else workers

    def collect(key, fut_result):
        try:
            result.records[key] = fut_result()
        except Exception as exc:  # isolate: one run failing must not stop the rest
            log.error("run %s seed %d failed: %s", key[0], key[1], exc)
            result.failures[key] = f"{type(exc).__name__}: {exc}"
        if on_run is not None:
            on_run(key, result)

    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            futures = [pool.submit(_bench_job, j) for j in jobs]
            for key, fut in zip(keys, futures):
                collect(key, fut.result)
    else:
        for key, job in zip(keys, jobs):
            collect(key, lambda job=job: _bench_job(job))
    return result


def write_benchmark(out: str | Path, result: metrics.RunMetrics) -> list[str]:
    """Logs, summary and per-source curves; returns the relative paths written."""
    out = Path(out)
    (out / "logs").mkdir(parents=True, exist_ok=True)
    written = []
    for (src, seed), recs in sorted(result.records.items()):
        sacrl.write_log(out / log_name(src, seed), recs)
        written.append(log_name(src, seed))
    metrics.write_summary(out / SUMMARY_FILE, result.summaries())
    written.append(SUMMARY_FILE)
    for src in result.sources():
        curves, seeds = result.curve(src)
        metrics.write_curve(out / curve_name(src), curves, seeds)
        written.append(curve_name(src))
    return written


def load_benchmark(out: str | Path) -> metrics.RunMetrics:
    """Rebuild RunMetrics from the per-run logs under ``out/logs``."""
    result = metrics.RunMetrics()
    for path in sorted(Path(out, "logs").glob("*.csv")):
        recs = sacrl.read_log(path)
        if not recs:
            continue
        result.records[(recs[0].source, recs[0].seed)] = recs
    if not result.records:
        raise ValidationError(f"no run logs under {Path(out, 'logs')}")
    return result


# ------------------------------------------------------------------ pipeline


class Pipeline:
    def __init__(self, config: ExperimentConfig, out: str | Path | None = None, workers: int | None = None):
        self.config = config
        self.out = Path(out if out is not None else config.out)
        self.workers = workers
        self.manifest = self._read_manifest()

    # ------------------------------------------------------------ manifest

    def _read_manifest(self) -> dict:
        path = self.out / MANIFEST
        if not path.exists():
            return {"version": 1, "stages": {}}
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ProvenanceError(f"{path} is not valid JSON") from exc
        if data.get("version") != 1 or not isinstance(data.get("stages"), dict):
            raise ProvenanceError(f"{path} has an unknown layout")
        return data

    def _write_manifest(self) -> None:
        _atomic_write(self.out / MANIFEST, json.dumps(self.manifest, indent=2, sort_keys=True).encode())

    def outputs(self, stage: str) -> dict[str, str]:
        entry = self.manifest["stages"].get(stage)
        if entry is None:
            raise ProvenanceError(f"stage {stage!r} has not run in {self.out}")
        return entry["outputs"]

    def verify(self, stage: str) -> dict[str, str]:
        """Check a finished stage's files against the manifest."""
        outs = self.outputs(stage)
        for rel, sha in outs.items():
            path = self.out / rel
            if not path.is_file():
                raise ProvenanceError(f"{rel} from stage {stage!r} is missing")
            if sha256_file(path) != sha:
                raise ProvenanceError(f"{rel} does not match the hash recorded by stage {stage!r}")
        return outs

    def sha(self, stage: str, rel: str) -> str:
        return self.verify(stage)[rel]

    # ------------------------------------------------------------ stage inputs

    def inputs(self, stage: str) -> dict:
        c = self.config.to_dict()
        if stage == "demo":
            return {"demo": c["demo"]}
        if stage == "sample":
            return {"demo": self.sha("demo", DEMO_FILE), "sampling": c["sampling"], "schedule": c["schedule"],
                    "seed": self.config.seed}
        if stage == "train":
            return {"dataset": self.sha("sample", DATASET_FILE), "model": c["model"], "train": c["train"],
                    "seed": self.config.seed}
        if stage == "bundle":
            return {"checkpoint": self.sha("train", CHECKPOINT_FILE), "demo": self.sha("demo", DEMO_FILE)}
        if stage == "eval":
            return {"bundle": self.sha("bundle", BUNDLE_FILE), "env": c["demo"]["env"], "eval": c["eval"]}
        if stage == "bench":
            bench = {k: v for k, v in c["bench"].items() if k != "workers"}
            return {"bundle": self.sha("bundle", BUNDLE_FILE), "env": c["demo"]["env"], "bench": bench,
                    "sac": c["sac"], "seed": self.config.seed}
        raise ValidationError(f"unknown stage {stage!r}")

    # ------------------------------------------------------------ driver

    def run(self, until: str = "bench", force: bool = False, progress=None) -> Path:
        if until not in STAGES:
            raise ValidationError(f"unknown stage {until!r}; expected one of {STAGES}")
        self.out.mkdir(parents=True, exist_ok=True)
        for stage in STAGES[: STAGES.index(until) + 1]:
            self.run_stage(stage, force=force, progress=progress)
        return self.out

    def is_current(self, stage: str) -> bool:
        entry = self.manifest["stages"].get(stage)
        if entry is None or entry["inputs"] != _digest(self.inputs(stage)):
            return False
        for rel in entry["outputs"]:
            if not (self.out / rel).is_file():
                return False
        self.verify(stage)  # present but altered: refuse rather than silently redo
        return True

    def run_stage(self, stage: str, force: bool = False, progress=None) -> bool:
        """Run one stage unless it is current. Returns True when it executed."""
        inputs = self.inputs(stage)
        if not force and self.is_current(stage):
            log.info("stage %s is up to date", stage)
            if progress is not None:
                progress(stage, "skipped")
            return False
        log.info("running stage %s", stage)
        if progress is not None:
            progress(stage, "running")
        staging = Path(tempfile.mkdtemp(prefix=f".{stage}-", dir=self.out))
        try:
            getattr(self, f"_stage_{stage}")(staging, _digest(inputs))
            produced = sorted(p.relative_to(staging).as_posix() for p in staging.rglob("*") if p.is_file())
        except (ProvenanceError, KeyboardInterrupt):
            shutil.rmtree(staging, ignore_errors=True)
            raise
        except Exception as exc:
            shutil.rmtree(staging, ignore_errors=True)
            raise StageError(stage, exc) from exc
        # downstream entries stay; their input digests stop matching if any output changed
        old = self.manifest["stages"].pop(stage, None)
        if old is not None:
            for rel in set(old["outputs"]) - set(produced):
                (self.out / rel).unlink(missing_ok=True)
        outputs = {}
        for rel in produced:
            dst = self.out / rel
            dst.parent.mkdir(parents=True, exist_ok=True)
            os.replace(staging / rel, dst)
            outputs[rel] = sha256_file(dst)
        shutil.rmtree(staging, ignore_errors=True)
        self.manifest["stages"][stage] = {"inputs": _digest(inputs), "outputs": outputs}
        self._write_manifest()
        if progress is not None:
            progress(stage, "done")
        return True

    # ------------------------------------------------------------ stages

    def _stage_demo(self, staging: Path, _: str) -> None:
        d = self.config.demo
        demo = record_demo(d.env, d.seed, horizon=d.horizon, stop_on_success=d.stop_on_success)
        if not demo.success:
            raise ValidationError(f"demonstration {d.env} seed {d.seed} did not reach the goal")
        demo_io.save_demo(staging / DEMO_FILE, demo)

    def _load_demo(self):
        self.verify("demo")
        return demo_io.load_demo(self.out / DEMO_FILE)

    def _stage_sample(self, staging: Path, _: str) -> None:
        demo = self._load_demo()
        s = self.config.schedule
        workers = self.workers or self.config.bench.workers
        ds = tvfs.run_tvfs(demo, self.config.effective_sampling(), s.theta_min, s.theta_max,
                           demo_hash=self.sha("demo", DEMO_FILE), workers=workers)
        tvfs.save_dataset(staging / DATASET_FILE, ds)

    def _stage_train(self, staging: Path, _: str) -> None:
        self.verify("sample")
        ds = tvfs.load_dataset(self.out / DATASET_FILE)
        if ds.provenance.get("demo_hash") != self.sha("demo", DEMO_FILE):
            raise ProvenanceError("dataset was sampled from a different demonstration")
        model = ReprModel(self.config.effective_model())
        res = train(model, ds.obs_t, ds.obs_t1, self.config.effective_train(), checkpoint_dir=staging / "checkpoints")
        model.save(staging / CHECKPOINT_FILE)
        write_history(staging / HISTORY_FILE, res.history)

    def _stage_bundle(self, staging: Path, digest: str) -> None:
        self.verify("train")
        model = ReprModel.load(self.out / CHECKPOINT_FILE, self.config.effective_model())
        rm = rewardfn.RewardModel.from_demo(model, self._load_demo(), provenance=digest)
        rewardfn.save_bundle(staging / BUNDLE_FILE, rm)

    def load_bundle(self) -> tuple[rewardfn.RewardModel, bytes]:
        self.verify("bundle")
        blob = (self.out / BUNDLE_FILE).read_bytes()
        rm = rewardfn.loads(blob)
        if rm.provenance != self.manifest["stages"]["bundle"]["inputs"]:
            raise ProvenanceError("reward bundle was built from different inputs than this run")
        return rm, blob

    def _stage_eval(self, staging: Path, _: str) -> None:
        rm, _ = self.load_bundle()
        e, env = self.config.eval, self.config.demo.env
        trajs = {
            "demo": self._load_demo(),
            "heldout": record_demo(env, e.heldout_seed),
            "move-away": record_move_away(env, e.move_away_seed, horizon=e.move_away_horizon),
        }
        report = {}
        for name, traj in trajs.items():
            p, hand, sparse = trajectory_columns(rm, traj)
            metrics.write_rewards(staging / f"rewards-{name}.csv", p, hand, sparse)
            report[name] = {"success": bool(traj.success), "steps": traj.T, "p_initial": float(p[0]),
                            "p_final": float(p[-1]), "spearman": spearman(np.arange(p.size), p)}
        (staging / EVAL_FILE).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")

    def _stage_bench(self, staging: Path, _: str) -> None:
        _, blob = self.load_bundle()
        done = []

        def on_run(key, result):
            done.append(key)
            log.info("run %d/%d finished: %s seed %d", len(done),
                     len(self.config.bench.sources) * len(self.config.bench.seeds), *key)

        result = run_benchmark(self.config, blob, workers=self.workers, on_run=on_run)
        write_benchmark(staging, result)
        if not result.records:
            raise RuntimeError("every benchmark run failed: " + "; ".join(result.failures.values()))


def run_pipeline(config: ExperimentConfig, out: str | Path | None = None, until: str = "bench",
                 workers: int | None = None, force: bool = False, progress=None) -> Path:
    return Pipeline(config, out, workers).run(until, force=force, progress=progress)


def _atomic_write(path: Path, blob: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}-", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
