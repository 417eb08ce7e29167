from pathlib import Path

import pytest

from densereward.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main
from densereward.physim import load_demo

SMOKE = str(Path(__file__).resolve().parents[1] / "configs" / "smoke.toml")


def test_help_lists_subcommands(capsys):
    assert main(["--help"]) == EXIT_OK
    text = capsys.readouterr().out
    for name in ("demo", "sample", "train-repr", "bundle-reward", "eval-reward", "train-rl", "bench", "export"):
        assert name in text


@pytest.mark.parametrize("argv", [["frobnicate"], ["demo", "--bogus"], ["sample", "--interval", "zero"],
                                  ["train-rl"], ["demo", "--seed", "-3"]])
def test_usage_errors_exit_one(argv, capsys):
    assert main(argv) == EXIT_INVALID
    assert "Usage" in capsys.readouterr().err


def test_demo_writes_file(tmp_path):
    assert main(["demo", "--env", "block-insertion", "--seed", "7", "--out", str(tmp_path / "d")]) == EXIT_OK
    demo = load_demo(tmp_path / "d" / "demo.prld")
    assert demo.success and demo.seed == 7


def test_bad_config_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[demo]\nenv = 'pegboard'\n")
    assert main(["sample", "--config", str(bad)]) == EXIT_INVALID
    assert "pegboard" in capsys.readouterr().err
    assert main(["sample", "--config", str(tmp_path / "missing.toml")]) == EXIT_INVALID


@pytest.fixture(scope="module")
def bench_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run"
    assert main(["bench", "--config", SMOKE, "--out", str(out)]) == EXIT_OK
    return out


def test_bench_outputs(bench_dir):
    assert len(list((bench_dir / "logs").glob("*.csv"))) == 6
    assert (bench_dir / "metrics.csv").exists()


def test_export_check_passes_on_fresh_run(bench_dir, capsys):
    stored = (bench_dir / "metrics.csv").read_bytes()
    assert main(["export", "--out", str(bench_dir), "--check"]) == EXIT_OK
    assert (bench_dir / "metrics.csv").read_bytes() == stored
    assert "curves-dense.csv" in capsys.readouterr().out


def test_export_check_detects_drift(bench_dir, tmp_path):
    import shutil

    out = tmp_path / "copy"
    shutil.copytree(bench_dir, out)
    (out / "metrics.csv").write_text((out / "metrics.csv").read_text().replace(",ok", ",OK", 1))
    assert main(["export", "--out", str(out), "--check"]) == EXIT_INVALID


def test_train_rl_single_run(bench_dir, capsys):
    assert main(["train-rl", "--config", SMOKE, "--out", str(bench_dir), "--source", "sparse",
                 "--rl-seed", "4", "--episodes", "2"]) == EXIT_OK
    assert (bench_dir / "logs" / "sparse-seed4.csv").exists()
    (bench_dir / "logs" / "sparse-seed4.csv").unlink()


def test_tampered_artifact_is_runtime_failure(bench_dir, tmp_path, capsys):
    import shutil

    out = tmp_path / "copy"
    shutil.copytree(bench_dir, out)
    with open(out / "reward.prrb", "ab") as fh:
        fh.write(b"\0")
    assert main(["bench", "--config", SMOKE, "--out", str(out)]) == EXIT_RUNTIME
    assert "reward.prrb" in capsys.readouterr().err
