import json

import pytest

from latdeduce.cli import build_parser, main


def _run(*argv):
    return main(list(argv))


TRAIN_FLAGS = [
    "--embed-dim", "16", "--layers", "1", "--heads", "2", "--iterations", "2",
    "--batch-size", "4", "--steps", "3", "--seed", "0",
]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A tiny generate/train pipeline shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    bundle = root / "train.jsonl"
    ckpt = root / "model.ckpt"
    assert _run("generate", "--domain", "sudoku", "--box-rows", "2", "--box-cols", "2",
                "--count", "6", "--seed", "1", "--out", str(bundle)) == 0
    assert _run("train", "--data", str(bundle), "--out", str(ckpt), *TRAIN_FLAGS) == 0
    return root


def test_generate_writes_bundle_and_manifest(workspace):
    bundle = workspace / "train.jsonl"
    assert len(bundle.read_text().strip().split("\n")) == 6
    manifest = json.loads((workspace / "train.jsonl.manifest.json").read_text())
    assert manifest["subcommand"] == "generate"
    assert manifest["config"]["count"] == 6
    assert manifest["seed"] == 1


def test_generate_maze(tmp_path):
    out = tmp_path / "mazes.jsonl"
    assert _run("generate", "--domain", "maze", "--rows", "6", "--cols", "6",
                "--min-path-len", "4", "--count", "2", "--K", "2",
                "--seed", "0", "--out", str(out)) == 0
    records = [json.loads(l) for l in out.read_text().strip().split("\n")]
    assert all(r["domain"] == "maze" and len(r["solutions"]) == 2 for r in records)


def test_train_writes_checkpoint(workspace):
    assert (workspace / "model.ckpt").read_bytes()[:4] == b"LDCK"
    manifest = json.loads((workspace / "model.ckpt.manifest.json").read_text())
    assert manifest["config"]["steps"] == 3


def test_solve_emits_line_records(workspace, tmp_path):
    out = tmp_path / "verdicts.jsonl"
    assert _run("solve", "--checkpoint", str(workspace / "model.ckpt"),
                "--puzzles", str(workspace / "train.jsonl"), "--out", str(out),
                "--slots", "2", "--chains", "2", "--budget", "3", "--seed", "0") == 0
    records = [json.loads(l) for l in out.read_text().strip().split("\n")]
    assert len(records) == 6
    for r in records:
        assert r["outcome"] in ("solved", "abstained")
        assert r["batched_forwards"] >= 1


def test_eval_writes_report(workspace, tmp_path, capsys):
    out = tmp_path / "report.csv"
    assert _run("eval", "--checkpoint", str(workspace / "model.ckpt"),
                "--test", str(workspace / "train.jsonl"), "--out", str(out),
                "--slots", "2", "--chains", "2", "--budget", "3", "--seed", "0") == 0
    header = out.read_text().split("\n")[0]
    assert header.split(",")[:2] == ["id", "outcome"]
    assert "soundness" in capsys.readouterr().out


def test_check_subcommand(capsys):
    assert _run("check", "--suite", "galois", "--cases", "20") == 0
    assert capsys.readouterr().out.startswith("PASS")


def test_config_file_precedence(tmp_path):
    """Defaults < config file < explicit flags."""
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"count": 3, "seed": 9}))
    out = tmp_path / "b.jsonl"
    assert _run("--config", str(cfg), "generate", "--domain", "sudoku",
                "--box-rows", "2", "--box-cols", "2", "--out", str(out),
                "--count", "2") == 0
    manifest = json.loads((tmp_path / "b.jsonl.manifest.json").read_text())
    assert manifest["config"]["count"] == 2  # flag beats config file
    assert manifest["seed"] == 9  # config file beats default
    assert len(out.read_text().strip().split("\n")) == 2


def test_parser_rejects_unknown_domain():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["generate", "--domain", "chess", "--count", "1", "--out", "x"])
