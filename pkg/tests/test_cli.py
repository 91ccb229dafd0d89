import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from hdrtrack.cli import main, verify_manifest
from hdrtrack.errors import VocabularyDigestMismatch
from hdrtrack.ingest import Direction, merge_datasets, persist_dataset
from hdrtrack.synthetic import synthetic_dataset

FILTERS = "! test list\n||track.example^\n"


@pytest.fixture
def workspace(tmp_path):
    a = synthetic_dataset(400, seed=1, labeled=False)
    req = synthetic_dataset(100, seed=11, labeled=False, direction=Direction.REQUEST,
                            id_offset=50_000)
    persist_dataset(merge_datasets([a, req]), tmp_path / "chrome.jsonl")
    b = synthetic_dataset(200, seed=2, labeled=False, browser_tag="firefox", id_offset=10**6)
    persist_dataset(b, tmp_path / "firefox.jsonl")
    (tmp_path / "easylist.txt").write_text(FILTERS, encoding="utf-8")
    (tmp_path / "easyprivacy.txt").write_text("! empty\n/beacon/\n", encoding="utf-8")
    return tmp_path


def _prepare(ws, out="out", threads="1"):
    return main(["prepare", "--in", str(ws / "chrome.jsonl"),
                 "--filter-list", str(ws / "easylist.txt"),
                 "--filter-list", str(ws / "easyprivacy.txt"),
                 "--split", "0.7,0.1,0.2", "--seed", "42",
                 "--out-dir", str(ws / out), "--threads", threads])


def test_prepare_train_cross_eval_digest_threading(workspace, capsys):
    ws = workspace
    assert _prepare(ws) == 0
    out = ws / "out"
    for split in ("train", "calib", "test"):
        assert (out / "matrices" / f"chrome.{split}.bfm").exists()
    vocab = json.loads((out / "vocab" / "chrome.vocab.json").read_text())
    assert main(["train", "--kind", "extra_trees", "--matrix",
                 str(out / "matrices" / "chrome.train.bfm"), "--seed", "42",
                 "--param", "n_estimators=10", "--name", "et", "--out-dir", str(out)]) == 0
    model = out / "models" / "et.model.json"
    assert main(["evaluate", "--model", str(model), "--matrix",
                 f"test={out / 'matrices' / 'chrome.test.bfm'}", "--out-dir", str(out)]) == 0
    assert main(["label", "--in", str(ws / "firefox.jsonl"), "--filter-list",
                 str(ws / "easylist.txt"), "--out-dir", str(out)]) == 0
    assert main(["cross-eval", "--model", str(model), "--test",
                 f"firefox={out / 'datasets' / 'firefox.labeled.jsonl'}",
                 "--out-dir", str(out)]) == 0
    ev = json.loads((out / "reports" / "evaluate.evaluate.json").read_text())
    cx = json.loads((out / "reports" / "cross-eval.cross-eval.json").read_text())
    assert ev["vocabulary_digest"] == cx["vocabulary_digest"] == vocab["digest"]
    assert cx["reports"]["firefox"]["extra"]["vocabulary_digest"] == vocab["digest"]
    assert "firefox" in capsys.readouterr().out


def test_header_source_selects_stream(workspace):
    ws = workspace
    assert _prepare(ws) == 0
    assert main(["prepare", "--in", str(ws / "chrome.jsonl"), "--filter-list",
                 str(ws / "easylist.txt"), "--header-source", "request", "--name", "req",
                 "--out-dir", str(ws / "out")]) == 0
    seen = {}
    for name in ("chrome", "req"):
        dirs = []
        for split in ("train", "calib", "test"):
            path = ws / "out" / "datasets" / f"{name}.{split}.jsonl"
            dirs += [json.loads(line)["dir"] for line in open(path) if '"meta"' not in line]
        seen[name] = dirs
    assert set(seen["chrome"]) == {"res"} and len(seen["chrome"]) == 400
    assert set(seen["req"]) == {"req"} and len(seen["req"]) == 100


def test_exclude_host_substring(workspace):
    ws = workspace
    assert main(["prepare", "--in", str(ws / "chrome.jsonl"), "--filter-list",
                 str(ws / "easylist.txt"), "--exclude-host-substring", "s1",
                 "--out-dir", str(ws / "out")]) == 0
    for line in open(ws / "out" / "datasets" / "chrome.train.jsonl"):
        obj = json.loads(line)
        if "host" in obj:
            assert not obj["host"].startswith("s1")


def test_wrong_vocabulary_exit_1(workspace, capsys):
    ws = workspace
    assert _prepare(ws) == 0
    out = ws / "out"
    assert main(["train", "--kind", "bernoulli_nb", "--matrix",
                 str(out / "matrices" / "chrome.train.bfm"), "--out-dir", str(out)]) == 0
    assert main(["prepare", "--in", str(ws / "firefox.jsonl"), "--filter-list",
                 str(ws / "easylist.txt"), "--name", "other", "--out-dir", str(out)]) == 0
    capsys.readouterr()
    code = main(["evaluate", "--model", str(out / "models" / "bernoulli_nb.model.json"),
                 "--matrix", str(out / "matrices" / "other.test.bfm"), "--out-dir", str(out)])
    assert code == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: VocabularyDigestMismatch: ")


def test_usage_error_exit_2(workspace):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--matrix"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["prepare", "--in", "x", "--split", "0.7,0.3"])
    assert exc.value.code == 2


def test_runtime_errors_are_single_line(workspace, capsys):
    ws = workspace
    code = main(["prepare", "--in", str(ws / "chrome.jsonl"), "--out-dir", str(ws / "out")])
    assert code == 1
    assert capsys.readouterr().err.startswith("error: UnlabeledDataset: ")
    code = main(["prepare", "--in", str(ws / "chrome.jsonl"), "--filter-list",
                 str(ws / "easylist.txt"), "--split", "0.5,0.1,0.1", "--out-dir", str(ws / "out")])
    assert code == 1
    assert capsys.readouterr().err.startswith("error: InvalidFractions: ")
    code = main(["train", "--kind", "random_forest", "--preset", "xgboost", "--matrix",
                 str(ws / "missing.bfm"), "--out-dir", str(ws / "out")])
    assert code == 1
    line = capsys.readouterr().err
    assert line.count("\n") == 1 and line.startswith("error: ")


def test_manifests_reference_outputs(workspace):
    ws = workspace
    assert _prepare(ws) == 0
    out = ws / "out"
    manifests = sorted((out / "manifests").glob("prepare-*.json"))
    assert len(manifests) == 1
    m = verify_manifest(manifests[0])
    assert m["command"] == "prepare" and m["seed"] == 42
    assert str(ws / "chrome.jsonl") in m["inputs"]
    header = json.loads(open(out / "matrices" / "chrome.train.bfm").readline())
    assert header["manifest"] == m["manifest_id"]
    vocab = json.loads((out / "vocab" / "chrome.vocab.json").read_text())
    assert vocab["manifest"] == m["manifest_id"]
    (out / "vocab" / "chrome.vocab.json").write_text("{}")
    with pytest.raises(VocabularyDigestMismatch):
        verify_manifest(manifests[0])


def _artifact_bytes(root: Path) -> dict:
    """Every file except run manifests, whose wall-clock fields legitimately vary."""
    out = {}
    for p in sorted(root.rglob("*")):
        if not p.is_file():
            continue
        if "manifests" in p.parts and not p.name.endswith(".splits.json"):
            continue
        out[str(p.relative_to(root))] = p.read_bytes()
    return out


def _pipeline(ws: Path, out: str, threads: str):
    o = ws / out
    assert _prepare(ws, out, threads) == 0
    common = ["--out-dir", str(o), "--threads", threads]
    assert main(["train", "--kind", "random_forest", "--param", "n_estimators=12", "--name", "rf",
                 "--matrix", str(o / "matrices" / "chrome.train.bfm"), "--seed", "42",
                 *common]) == 0
    assert main(["calibrate", "--model", str(o / "models" / "rf.model.json"), "--matrix",
                 str(o / "matrices" / "chrome.calib.bfm"), *common]) == 0
    assert main(["evaluate", "--model", str(o / "models" / "rf.calibrated.model.json"),
                 "--matrix", str(o / "matrices" / "chrome.test.bfm"), "--ci", "--plot-data",
                 "--seed", "42", *common]) == 0
    assert main(["importance", "--model", str(o / "models" / "rf.model.json"), "--matrix",
                 str(o / "matrices" / "chrome.test.bfm"), "--repeats", "2", *common]) == 0
    assert main(["cv", "--in", str(o / "datasets" / "chrome.train.jsonl"), "--kind",
                 "bernoulli_nb", "--repeats", "2", "--k", "3", *common]) == 0
    assert main(["profile", "--in", str(o / "datasets" / "chrome.train.jsonl"),
                 "--value-summary", "x-h001", *common]) == 0
    assert main(["report", str(o / "reports" / "evaluate.evaluate.json"), *common]) == 0


def test_rerun_is_byte_identical_and_thread_independent(workspace):
    ws = workspace
    _pipeline(ws, "a", "1")
    _pipeline(ws, "b", "1")
    _pipeline(ws, "c", "4")
    a = _artifact_bytes(ws / "a")
    assert len(a) > 15
    assert a == _artifact_bytes(ws / "b")
    assert a == _artifact_bytes(ws / "c")


def test_threads_env_default(workspace, monkeypatch):
    from hdrtrack import cli

    monkeypatch.setenv(cli.THREADS_ENV, "3")
    args = cli.build_parser().parse_args(["report", "x.json"])
    assert args.threads == 3


def test_console_script_entry_point(workspace):
    env = dict(os.environ)
    proc = subprocess.run([sys.executable, "-m", "hdrtrack.cli", "--version"],
                          capture_output=True, text=True, env=env)
    assert proc.returncode == 0 and proc.stdout.startswith("hdrtrack ")
