"""End-to-end acceptance checks.

Criteria 2 to 8 run the full pipeline from ``configs/full.toml`` (twice, for
the determinism check), which takes roughly an hour on one core. Each test
records a PASS/FAIL line that is printed in the terminal summary.
"""

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pytest

from densereward import gradnet as gn
from densereward import replearn as rl
from densereward import rewardfn as rf
from densereward import tvfs
from densereward.bench import metrics
from densereward.bench.config import ExperimentConfig
from densereward.bench.pipeline import (
    BUNDLE_FILE,
    DATASET_FILE,
    EVAL_FILE,
    HISTORY_FILE,
    MANIFEST,
    SUMMARY_FILE,
    Pipeline,
)
from densereward.physim import geometry, load_demo, world
from densereward.physim import raster as rmod
from oracles import (
    central_difference,
    max_rel_error,
    naive_causal_conv1d,
    naive_conv2d,
    naive_conv_transpose2d,
    ray_cast_inside,
)

FULL = Path(__file__).resolve().parents[1] / "configs" / "full.toml"

pytestmark = pytest.mark.slow


@dataclass
class Run:
    out: Path
    seconds: dict[str, float] = field(default_factory=dict)

    @property
    def demo(self):
        return load_demo(self.out / "demo.prld")


def _execute(out: Path) -> Run:
    run = Run(out)
    started = {}

    def progress(stage, state):
        if state == "running":
            started[stage] = time.perf_counter()
        elif state == "done":
            run.seconds[stage] = time.perf_counter() - started[stage]

    Pipeline(ExperimentConfig.load(FULL), out).run("bench", progress=progress)
    return run


@pytest.fixture(scope="session")
def full_run(tmp_path_factory):
    return _execute(tmp_path_factory.mktemp("full-a") / "run")


@pytest.fixture(scope="session")
def repeat_run(tmp_path_factory, full_run):
    return _execute(tmp_path_factory.mktemp("full-b") / "run")


# ------------------------------------------------------------------ gradients


def _projection(shape):
    return np.cos(np.arange(int(np.prod(shape)), dtype=np.float64) * 0.7 + 0.3).reshape(shape)


def _fd_error(build, arrays) -> float:
    """Worst relative error between reverse-mode and central-difference gradients."""

    def scalar(*ts):
        y = build(*ts)
        return gn.sum(gn.mul(y, gn.Tensor(_projection(y.shape))))

    params = [gn.parameter(np.array(a, dtype=np.float64)) for a in arrays]
    gn.backward(scalar(*params))
    worst = 0.0
    for idx, arr in enumerate(arrays):

        def f(x, idx=idx):
            args = [gn.Tensor(np.array(a, dtype=np.float64)) for a in arrays]
            args[idx] = gn.Tensor(x)
            return scalar(*args).item()

        worst = max(worst, max_rel_error(params[idx].grad, central_difference(f, arr, h=1e-6)))
    return worst


def _primitive_cases(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    pos = rng.uniform(0.5, 2.0, size=(3, 4))
    return {
        "add": (lambda x, y: gn.add(x, y), [a, b]),
        "sub": (lambda x, y: gn.sub(x, y), [a, b]),
        "mul": (lambda x, y: gn.mul(x, y), [a, b]),
        "square": (gn.square, [a]),
        "relu": (gn.relu, [a]),
        "sigmoid": (gn.sigmoid, [a]),
        "tanh": (gn.tanh, [a]),
        "exp": (gn.exp, [a]),
        "log": (gn.log, [pos]),
        "softplus": (gn.softplus, [a]),
        "clip": (lambda x: gn.clip(x, -0.5, 0.5), [a]),
        "minimum": (gn.minimum, [a, b]),
        "sum": (lambda x: gn.sum(x, axis=1), [a]),
        "mean": (lambda x: gn.mean(x, axis=0), [a]),
        "mse": (gn.mse, [a, b]),
        "matmul": (gn.matmul, [a, rng.normal(size=(4, 2))]),
        "linear": (gn.linear, [a, rng.normal(size=(4, 5)), rng.normal(size=5)]),
        "reshape": (lambda x: gn.reshape(x, (2, 6)), [a]),
        "concat": (lambda x, y: gn.concat([x, y], axis=0), [a, b]),
        "take": (lambda x: gn.take(x, (slice(None), slice(1, 3))), [a]),
        "l2_normalize": (gn.l2_normalize, [a]),
        "conv2d": (lambda x, w, c: gn.conv2d(x, w, c, stride=2),
                   [rng.normal(size=(2, 2, 7, 7)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)]),
        "conv_transpose2d": (lambda x, w, c: gn.conv_transpose2d(x, w, c, stride=2),
                             [rng.normal(size=(2, 3, 3, 3)), rng.normal(size=(3, 2, 2, 2)), rng.normal(size=2)]),
        "causal_conv1d": (lambda x, w, c: gn.causal_conv1d(x, w, c, dilation=2),
                          [rng.normal(size=(2, 3, 9)), rng.normal(size=(2, 3, 3)), rng.normal(size=2)]),
    }


def _hybrid_loss_error(rng) -> float:
    cfg = rl.ReprConfig.tiny()
    model = rl.ReprModel(cfg)
    for p in model.parameters().values():  # move ReLU inputs off their kinks
        p.data = p.data + rng.normal(0.0, 0.05, p.shape)

    def batch():
        return rl.Batch(rng.random((3, 2, cfg.grid, cfg.grid)), rng.normal(size=(3, cfg.window, 6)) * 5,
                        rng.normal(size=(3, 3)) * 0.1)

    bt, bt1 = batch(), batch()
    grads = gn.backward(rl.loss_graph(model, bt, bt1, 10.0)[0], accumulate=False)
    worst, h = 0.0, 1e-6
    for p in model.parameters().values():
        flat, g = p.data.reshape(-1), grads.get(id(p), np.zeros_like(p.data)).reshape(-1)
        for i in rng.choice(flat.size, size=min(4, flat.size), replace=False):
            old = flat[i]
            flat[i] = old + h
            fp = rl.loss_graph(model, bt, bt1, 10.0)[0].item()
            flat[i] = old - h
            fm = rl.loss_graph(model, bt, bt1, 10.0)[0].item()
            flat[i] = old
            worst = max(worst, max_rel_error(np.array([(fp - fm) / (2 * h)]), g[i : i + 1], floor=1e-5))
    return worst


def test_gradient_suite(verdict):
    with verdict(1, "gradients match central differences") as v:
        start = time.perf_counter()
        rng = np.random.default_rng(2024)
        errors = {name: _fd_error(build, arrays) for name, (build, arrays) in _primitive_cases(rng).items()}
        errors["hybrid loss"] = _hybrid_loss_error(rng)
        elapsed = time.perf_counter() - start
        name = max(errors, key=errors.get)
        v.detail = f"{len(errors)} checks, worst {errors[name]:.1e} ({name}), {elapsed:.1f} s"
        assert errors[name] < 1e-3
        assert elapsed < 120


# ------------------------------------------------------------------ sampling and training


def test_tvfs_count_and_cone(verdict, full_run):
    with verdict(2, "pair count and cone constraint") as v:
        demo = full_run.demo
        ds = tvfs.load_dataset(full_run.out / DATASET_FILE)
        branches = ds.branch_records()
        sched = tvfs.VarianceSchedule(math.pi / 12, math.pi / 4, T=demo.T)
        v.detail = f"T={demo.T}, {len(ds)} pairs, {len(branches)} branch records, {tvfs.cone_violations(ds)} outside"
        assert demo.T == 500
        assert len(ds) == 500 + 11 * 5 * 10 == 1050
        assert len(branches) == 11 * 5 * 10
        assert tvfs.cone_violations(ds) == 0
        assert sched(0) == sched(500) == math.pi / 12
        assert sched(250) == math.pi / 4


def test_loss_identity(verdict, full_run):
    with verdict(3, "l = l_recon + 10 l_temporal at every iteration") as v:
        rows = rl.read_history(full_run.out / HISTORY_FILE)
        worst = max(abs(r["l"] - (r["l_recon"] + 10.0 * r["l_temporal"])) for r in rows)
        v.detail = f"{len(rows)} iterations, worst gap {worst:.1e}"
        assert len(rows) == 5000
        assert worst <= 1e-12


def test_dynamic_embeddings_unit_norm(verdict, full_run):
    with verdict(4, "dynamic embeddings have unit norm") as v:
        rm = rf.load_bundle(full_run.out / BUNDLE_FILE)
        ds = tvfs.load_dataset(full_run.out / DATASET_FILE)
        flat = np.concatenate([ds.obs_t, ds.obs_t1])
        norms = np.concatenate([np.linalg.norm(rm.model.encode_dynamic_batch(rl.Batch.from_flat(flat[i : i + 256])),
                                               axis=1) for i in range(0, len(flat), 256)])
        worst = float(np.max(np.abs(norms - 1.0)))
        v.detail = f"{norms.size} embeddings, worst deviation {worst:.1e}"
        assert worst < 1e-6


def test_progress_endpoints(verdict, full_run):
    with verdict(5, "progress endpoints") as v:
        rm = rf.load_bundle(full_run.out / BUNDLE_FILE)
        demo = full_run.demo
        p0 = rf.progress(rm, demo.observations[0])
        pg = rf.progress(rm, demo.observations[-1])
        far = rm.hg + 2.0 * (rm.h0 - rm.hg)
        pf = float(rf.progress_from_embeddings(far, rm.h0, rm.hg))
        v.detail = f"p(initial)={p0!r}, p(goal)={pg!r}, p(twice as far)={pf!r}"
        assert p0 == 0.0
        assert pg == 1.0
        assert abs(pf + 1.0) <= 1e-12


def test_reward_trend(verdict, full_run):
    with verdict(6, "progress rises along a held-out demo and falls on a move-away") as v:
        report = json.loads((full_run.out / EVAL_FILE).read_text())
        held, away = report["heldout"], report["move-away"]
        iterations = len(rl.read_history(full_run.out / HISTORY_FILE))
        minutes = full_run.seconds["train"] / 60
        v.detail = (f"spearman {held['spearman']:.3f}, move-away p {away['p_initial']:.3f} -> "
                    f"{away['p_final']:.3f}, {iterations} iterations in {minutes:.1f} min")
        assert held["success"]
        assert held["spearman"] >= 0.7
        assert away["p_final"] < away["p_initial"]
        assert iterations <= 5000
        assert minutes < 30


def _first(s: metrics.RunSummary) -> float:
    return math.inf if s.first_success is None else s.first_success


def test_benchmark_trend(verdict, full_run):
    with verdict(7, "dense beats sparse on first success and final success rate") as v:
        summaries = metrics.read_summary(full_run.out / SUMMARY_FILE)
        by = {(s.source, s.seed): s for s in summaries}
        seeds = sorted({s.seed for s in summaries})
        faster = sum(_first(by["dense", k]) < _first(by["sparse", k]) for k in seeds)
        steadier = sum(by["dense", k].final_rate >= by["sparse", k].final_rate for k in seeds)
        hours = full_run.seconds["bench"] / 3600

        def describe(src):
            return ",".join("-" if by[src, k].first_success is None else str(by[src, k].first_success)
                            for k in seeds)

        v.detail = (f"first success dense [{describe('dense')}] sparse [{describe('sparse')}] "
                    f"handcrafted [{describe('handcrafted')}]; dense faster in {faster}/3, final rate >= "
                    f"sparse in {steadier}/3; {hours:.2f} h")
        assert len(summaries) == 9 and all(s.status == "ok" and s.episodes == 500 for s in summaries)
        assert hours < 4
        assert steadier >= 2
        assert faster >= 2


def test_determinism(verdict, full_run, repeat_run):
    with verdict(8, "repeated pipeline is byte-identical") as v:
        files = sorted(json.loads((full_run.out / MANIFEST).read_text())["stages"]["sample"]["outputs"])
        for stage in ("train", "bench", "eval", "bundle"):
            files += sorted(json.loads((full_run.out / MANIFEST).read_text())["stages"][stage]["outputs"])
        differ = [rel for rel in files
                  if (full_run.out / rel).read_bytes() != (repeat_run.out / rel).read_bytes()]
        v.detail = f"{len(files)} files compared, {len(differ)} differ"
        assert any(f.startswith("checkpoints/") for f in files)
        assert SUMMARY_FILE in files and DATASET_FILE in files
        assert not differ, differ[:5]


# ------------------------------------------------------------------ physics and rendering


def test_physics_and_render_oracles(verdict):
    with verdict(9, "conv, raster and contact force oracles") as v:
        rng = np.random.default_rng(99)
        conv_err = 0.0
        for stride in (1, 2):
            x, w = rng.normal(size=(3, 9, 9)), rng.normal(size=(4, 3, 3, 3))
            conv_err = max(conv_err, np.max(np.abs(gn.conv2d(gn.Tensor(x), gn.Tensor(w), stride=stride).data
                                                   - naive_conv2d(x, w, stride))))
            x, w = rng.normal(size=(3, 5, 5)), rng.normal(size=(3, 2, 3, 3))
            conv_err = max(conv_err, np.max(np.abs(gn.conv_transpose2d(gn.Tensor(x), gn.Tensor(w), stride=stride).data
                                                   - naive_conv_transpose2d(x, w, stride))))
        x, w = rng.normal(size=(3, 20)), rng.normal(size=(4, 3, 4))
        conv_err = max(conv_err, np.max(np.abs(gn.causal_conv1d(gn.Tensor(x), gn.Tensor(w), dilation=3).data
                                               - naive_causal_conv1d(x, w, 3))))

        centres = rmod.cell_centres()
        mismatched, shapes = 0, 0
        for angle in (0.0, 0.3, 0.77, 1.1, 2.5):
            for cx, cy, wd, ht in ((0.013, 0.151, 0.2, 0.2), (-0.11, 0.05, 0.1, 0.25), (0.2, 0.3, 0.31, 0.07)):
                poly = geometry.box(cx, cy, angle, wd, ht)
                got = rmod.render_polygons([(poly, 1.0, 0.5)])[0] > 0
                want = np.array([ray_cast_inside(px, py, poly.tolist()) for px, py in centres]).reshape(got.shape)
                mismatched += int(np.count_nonzero(got != want))
                shapes += 1

        spots = [(0.01, 0.0), (0.01, 0.2), (0.002, -0.05), (0.02, 1.5), (0.01, -10.0), (0.0, 0.0)]
        force_ok = all(world.normal_force(d, r) == max(0.0, world.CONTACT_K * d + world.CONTACT_D * r)
                       for d, r in spots)
        v.detail = f"conv error {conv_err:.1e}, {mismatched} raster mismatches over {shapes} shapes"
        assert conv_err <= 1e-12
        assert mismatched == 0
        assert force_ok
        assert world.normal_force(0.01, 0.0) == 5.0 and world.normal_force(0.01, -10.0) == 0.0
