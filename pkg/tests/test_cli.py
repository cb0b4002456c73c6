import csv
import hashlib

import pytest

from lobsrv.cli import build_settings, main

TINY = """\
# tiny end-to-end run
n_days = 3
session_seconds = 150
mean_event_rate = 15
per_day_quota = 25
lookback = 10
hidden_size = 8
n_layers = 1
action_embedding = 4
max_epochs = 2
batch_size = 16
explain_count = 3
background_size = 8
n_path_samples = 4
"""


def digest(root):
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(root.rglob("*")) if p.is_file()}


def run(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY)
    out = root / "run"
    common = ["--config", str(cfg), "--seed", "7", "--out", str(out), "--quiet"]
    codes, changed = {}, {}
    for stage in ("simulate", "featurize", "train", "evaluate", "explain", "ablate"):
        before = digest(out) if out.exists() else {}
        codes[stage] = run(stage, *common)
        after = digest(out)
        # earlier artifacts are never rewritten by a later stage
        changed[stage] = [k for k, v in before.items() if after.get(k) != v]
    return root, cfg, out, common, codes, changed


def test_all_stages_succeed(pipeline):
    _, _, _, _, codes, _ = pipeline
    assert codes == dict.fromkeys(codes, 0)


def test_no_stage_mutates_its_inputs(pipeline):
    root, cfg, _, _, _, changed = pipeline
    assert all(not c for c in changed.values()), changed
    assert cfg.read_text() == TINY


def test_artifacts_and_metrics(pipeline):
    _, _, out, _, _, _ = pipeline
    for rel in (
        "streams/manifest.json",
        "streams/day_000.ndjson",
        "shards/train.lobds",
        "shards/validation.lobds",
        "shards/test.lobds",
        "shards/normalizer.ckpt",
        "model/checkpoint.ckpt",
        "model/train_log.ndjson",
        "reports/metrics.csv",
        "reports/curves.csv",
        "reports/attribution.csv",
    ):
        assert (out / rel).is_file(), rel
    rows = list(csv.DictReader((out / "reports/metrics.csv").open()))
    scalars = {r["metric"] for r in rows if r["horizon"] == ""}
    assert scalars == {"rcll", "ibs", "iauc", "cindex"}


def test_ablate_emits_nine_rows(pipeline):
    _, _, out, _, _, _ = pipeline
    rows = list(csv.DictReader((out / "reports/ablation.csv").open()))
    assert len(rows) == 9
    assert [r["table"] for r in rows] == ["architecture"] * 4 + ["inputs"] * 5
    assert len(list((out / "reports/ablation").glob("row_*.csv"))) == 9


def test_simulate_is_reproducible(pipeline, tmp_path):
    root, cfg, out, _, _, _ = pipeline
    again = tmp_path / "again"
    assert run("simulate", "--config", str(cfg), "--seed", "7", "--out", str(again), "--quiet") == 0
    assert digest(again / "streams") == digest(out / "streams")
    other = tmp_path / "other"
    run("simulate", "--config", str(cfg), "--seed", "8", "--out", str(other), "--quiet")
    assert digest(other / "streams") != digest(out / "streams")


def test_downstream_outputs_are_reproducible(pipeline, tmp_path):
    _, cfg, out, _, _, _ = pipeline
    again = tmp_path / "again"
    for stage in ("simulate", "featurize", "train", "evaluate", "explain"):
        assert run(stage, "--config", str(cfg), "--seed", "7", "--out", str(again), "--quiet") == 0
    a, b = digest(out), digest(again)
    # the training log carries wall-clock timings, everything else must match
    for rel, h in b.items():
        if rel != "model/train_log.ndjson":
            assert a[rel] == h, rel


def test_missing_artifact_message(tmp_path, capsys):
    assert run("train", "--out", str(tmp_path / "empty"), "--quiet") == 2
    err = capsys.readouterr().err
    assert "run featurize first" in err
    assert run("featurize", "--out", str(tmp_path / "empty"), "--quiet") == 2
    assert "run simulate first" in capsys.readouterr().err


def test_summary_line_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("n_days = 5\nsession_seconds = 20\nmean_event_rate = 5\nseed = 1\n")
    assert run("simulate", "--config", str(cfg), "--set", "n_days=2", "--out", str(tmp_path / "r"), "--quiet") == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("simulate: 2 days")
    assert build_settings({"seed": "1"}, 4, "x").experiment.seed == 4


def test_bad_config_is_reported(tmp_path, capsys):
    assert run("simulate", "--set", "no_such_key=1", "--out", str(tmp_path), "--quiet") == 1
    assert "unknown config keys" in capsys.readouterr().err
    assert run("simulate", "--set", "labels=weird", "--out", str(tmp_path), "--quiet") == 1
