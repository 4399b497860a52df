import json
import tarfile
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from cryptext import cli, pipeline
from cryptext.config import ExperimentConfig
from cryptext.wordcrypt import derive_context
from synth import write_bydate_corpus

FAST = {"embed.epochs": "3", "embed.vector_size": "20", "embed.min_count": "2", "gbt.rounds": "5",
        "gbt.max_depth": "3", "lstm.epochs": "2", "lstm.units": "8,4", "lstm.batch_size": "8"}
FAST_ARGS = [arg for k, v in FAST.items() for arg in ("--set", f"{k}={v}")]


def fast_cfg(**extra):
    return ExperimentConfig().with_overrides({**FAST, **{k: str(v) for k, v in extra.items()}})


def body_lines(path):
    return [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]


@pytest.fixture
def six_doc_root(tmp_path):
    for cat in ("rec.autos", "sci.space"):
        for split, ids in (("train", (1, 2)), ("test", (3,))):
            for i in ids:
                p = tmp_path / "corpus" / split / cat / str(i)
                p.parent.mkdir(parents=True, exist_ok=True)
                p.write_text(f"Subject: {cat} post {i}\nThe engine and the orbit, item {i}!\n")
    return tmp_path / "corpus"


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


# -- single stages ----------------------------------------------------------------

def test_prep_writes_one_line_per_doc(six_doc_root, tmp_path, capsys):
    out = tmp_path / "prep"
    assert run_cli("prep", "--corpus-root", six_doc_root, "--out", out) == 0
    lines = body_lines(out / "tokens.train.tsv") + body_lines(out / "tokens.test.tsv")
    assert len(lines) == 6
    assert body_lines(out / "labels.txt") == ["rec.autos", "sci.space"]
    head = (out / "tokens.train.tsv").read_text().splitlines()[0]
    assert head.startswith("# cryptext stage=prep config=") and "seed=42" in head
    info = json.loads((out / "prep.json").read_text())
    assert info["n_train"] == 4 and info["n_test"] == 2
    assert "4 train / 2 test" in capsys.readouterr().out


def test_encrypt_verify_reports_full_round_trip(tmp_path, passphrase_env, capsys):
    assert run_cli("prep", "--out", tmp_path / "p") == 0
    assert run_cli("encrypt", "--in", tmp_path / "p", "--out", tmp_path / "e", "--verify") == 0
    assert "round-trip: 100.00%" in capsys.readouterr().out
    plain = body_lines(tmp_path / "p" / "tokens.train.tsv")
    enc = body_lines(tmp_path / "e" / "tokens.train.tsv")
    assert len(plain) == len(enc) == 25
    assert [ln.split("\t")[:2] for ln in plain] == [ln.split("\t")[:2] for ln in enc]


def test_encrypt_without_passphrase_fails_cleanly(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("CRYPTEXT_PASSPHRASE", raising=False)
    monkeypatch.setattr("sys.stdin.isatty", lambda: False)
    assert run_cli("prep", "--out", tmp_path / "p") == 0
    assert run_cli("encrypt", "--in", tmp_path / "p", "--out", tmp_path / "e") == 2
    assert "CRYPTEXT_PASSPHRASE" in capsys.readouterr().err


def test_embed_seed_7_is_byte_identical(tmp_path):
    assert run_cli("prep", "--out", tmp_path / "p") == 0
    for name in ("a", "b"):
        assert run_cli("embed", "--in", tmp_path / "p", "--out", tmp_path / name, "--seed", 7, *FAST_ARGS) == 0
    for f in ("docvecs.train.txt", "docvecs.test.txt", "embedding.model.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert run_cli("embed", "--in", tmp_path / "p", "--out", tmp_path / "c", "--seed", 8, *FAST_ARGS) == 0
    assert (tmp_path / "a" / "docvecs.train.txt").read_bytes() != (tmp_path / "c" / "docvecs.train.txt").read_bytes()


def test_missing_input_names_file_and_producer(tmp_path, capsys):
    assert run_cli("embed", "--in", tmp_path / "nothing", "--out", tmp_path / "x") == 2
    err = capsys.readouterr().err
    assert "tokens.train.tsv" in err and "cryptext prep" in err
    assert run_cli("evaluate", "--in", tmp_path / "nothing") == 2
    assert "docvecs.test.txt" in capsys.readouterr().err


def test_corrupt_input_names_file_and_line(tmp_path, capsys):
    assert run_cli("prep", "--out", tmp_path / "p") == 0
    path = tmp_path / "p" / "tokens.train.tsv"
    lines = path.read_text().splitlines()
    lines[3] = "garbage-without-tabs"
    path.write_text("\n".join(lines) + "\n")
    assert run_cli("embed", "--in", tmp_path / "p") == 2
    assert "tokens.train.tsv:4" in capsys.readouterr().err


def test_train_and_evaluate_stages(tmp_path, capsys):
    p = tmp_path / "p"
    assert run_cli("prep", "--out", p) == 0
    assert run_cli("embed", "--in", p, *FAST_ARGS) == 0
    assert run_cli("train", "--in", p, *FAST_ARGS) == 0
    assert (p / "gbt.model.json").exists() and (p / "lstm" / "weights.bin").exists()
    first = {f: (p / f).read_bytes() for f in ("gbt.model.json", "lstm/weights.bin", "lstm/manifest.json")}
    assert run_cli("train", "--in", p, *FAST_ARGS) == 0
    assert first == {f: (p / f).read_bytes() for f in first}
    assert run_cli("evaluate", "--in", p, *FAST_ARGS) == 0
    out = capsys.readouterr().out
    assert "== gbt ==" in out and "== lstm ==" in out
    pred = body_lines(p / "predictions.gbt.tsv")
    assert pred[0] == "doc_id\ttrue\tpred" and len(pred) == 13
    report = json.loads((p / "report.lstm.json").read_text())
    assert report["classifier"] == "lstm" and report["n_samples"] == 12


def test_corpus_stats_and_unknown_category(capsys):
    assert run_cli("corpus", "stats") == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["n_train"] == 25
    assert run_cli("corpus", "stats", "--categories", "no.such.group") == 2
    assert "no.such.group" in capsys.readouterr().err


def test_bad_override_is_config_error(capsys):
    assert run_cli("corpus", "stats", "--set", "embed.window=zero") == 2
    assert run_cli("corpus", "stats", "--set", "novalue") == 2


def test_fetch_from_local_archive(tmp_path, capsys):
    src = write_bydate_corpus(tmp_path / "src", ["a.x", "b.y"], 3, 2,
                              split_names=("20news-bydate-train", "20news-bydate-test"))
    archive = tmp_path / "bydate.tar.gz"
    with tarfile.open(archive, "w:gz") as tar:
        for name in ("20news-bydate-train", "20news-bydate-test"):
            tar.add(src / name, arcname=name)
    assert run_cli("fetch", "--dest", tmp_path / "dest", "--archive", archive) == 0
    root = capsys.readouterr().out.strip()
    assert run_cli("corpus", "stats", "--corpus-root", root) == 0
    assert json.loads(capsys.readouterr().out)["n_test"] == 4


# -- compare ----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def fixture_compare(tmp_path_factory):
    out = tmp_path_factory.mktemp("cmp")
    ctx = derive_context("correct horse battery staple")
    report = pipeline.compare(fast_cfg(), ctx, out)
    return out, report


def test_compare_fixture_is_exact(fixture_compare):
    out, report = fixture_compare
    eq = report["equivariance"]
    assert eq["passed"] and eq["round_trip_rate"] == 1.0
    assert eq["plaintext_tokens_in_encrypted_arm"] == 0
    assert eq["predictions_identical"] == {"gbt": True, "lstm": True}
    for clf in ("gbt", "lstm"):
        block = report["classifiers"][clf]
        assert block["plain"] == block["encrypted"]
        assert block["delta"]["max_abs_delta"] == 0.0 and block["delta"]["exact_equal"]
    for name in ("comparison.json", "comparison.txt", "comparison.tsv", "timings.json",
                 "figures/headline.png", "figures/f1_by_class_gbt.png", "figures/lstm_history.png",
                 "figures/gbt_mlogloss.png"):
        assert (out / name).is_file(), name
    assert (out / "figures" / "headline.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    tsv = (out / "comparison.tsv").read_text().splitlines()
    assert tsv[0] == "classifier\tmetric\tplain\tencrypted\tdelta" and len(tsv) == 1 + 2 * 7


def test_compare_rerun_is_byte_identical(fixture_compare, tmp_path):
    out, _ = fixture_compare
    pipeline.compare(fast_cfg(), derive_context("correct horse battery staple"), tmp_path)
    files = sorted(p.relative_to(out) for p in out.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(tmp_path) for p in tmp_path.rglob("*") if p.is_file())
    for rel in files:
        if rel.name == "timings.json":
            continue
        assert (out / rel).read_bytes() == (tmp_path / rel).read_bytes(), rel


def test_encrypted_arm_has_no_plaintext_words(fixture_compare, fixture_tokens):
    out, _ = fixture_compare
    vocab = {t for d in fixture_tokens[0] + fixture_tokens[1] for t in d.tokens}
    assert pipeline.plaintext_leaks(vocab, out / "encrypted") == []
    # the scan does find words in the plaintext arm
    assert len(pipeline.plaintext_leaks(vocab, out / "plain")) > 0
    raw = " ".join((out / "encrypted" / f).read_text() for f in ("tokens.train.tsv", "embedding.model.txt"))
    words = set(raw.split())
    assert not (vocab - {"rec.autos", "sci.space"}) & words


def test_compare_transductive_is_exact(tmp_path):
    report = pipeline.compare(fast_cfg(transductive="true", classifier="gbt"),
                              derive_context("another passphrase"), tmp_path)
    assert report["equivariance"]["passed"]
    assert list(report["classifiers"]) == ["gbt"]


def _drifting_embed(monkeypatch):
    original = pipeline.run_embed

    def run_embed(cfg, in_dir, out_dir):
        if Path(out_dir).name == "encrypted":
            cfg = replace(cfg, seed=cfg.seed + 1)
        return original(cfg, in_dir, out_dir)

    monkeypatch.setattr(pipeline, "run_embed", run_embed)


def test_drift_exits_3_and_still_prints_table(tmp_path, monkeypatch, passphrase_env, capsys):
    _drifting_embed(monkeypatch)
    code = run_cli("compare", "--out", tmp_path, "--classifier", "gbt", *FAST_ARGS)
    captured = capsys.readouterr()
    assert code == 3
    assert "equivariance check failed" in captured.err
    assert "accuracy" in captured.out
    assert not json.loads((tmp_path / "comparison.json").read_text())["equivariance"]["passed"]


def test_allow_drift_and_nondeterministic_mode(tmp_path, monkeypatch, passphrase_env, capsys):
    _drifting_embed(monkeypatch)
    assert run_cli("compare", "--out", tmp_path / "a", "--classifier", "gbt", "--allow-drift", *FAST_ARGS) == 0
    assert "DRIFT" in capsys.readouterr().out
    report = pipeline.compare(fast_cfg(classifier="gbt", deterministic="false"),
                              derive_context("x"), tmp_path / "b")
    assert not report["equivariance"]["passed"]


def test_stage_failure_names_arm_and_stage(tmp_path, monkeypatch):
    calls = []
    original = pipeline.boost.fit

    def fit(X, y, hyper, n_classes=None):
        calls.append(1)
        if len(calls) == 2:
            raise FloatingPointError("synthetic failure")
        return original(X, y, hyper, n_classes)

    monkeypatch.setattr(pipeline.boost, "fit", fit)
    with pytest.raises(pipeline.StageError) as err:
        pipeline.compare(fast_cfg(classifier="gbt"), derive_context("x"), tmp_path)
    assert err.value.arm == "encrypted" and err.value.stage == "train"
    assert "synthetic failure" in str(err.value)


def test_cli_compare_success(tmp_path, passphrase_env, capsys):
    assert run_cli("compare", "--out", tmp_path, "--classifier", "gbt", *FAST_ARGS) == 0
    out = capsys.readouterr().out
    assert "equivariance: exact" in out
    assert "+0.00" in out


def test_compare_subset_of_synthetic_corpus(synth4_root, tmp_path):
    cfg = fast_cfg(corpus_root=synth4_root, categories="comp.beta,sci.delta")
    report = pipeline.compare(cfg, derive_context("x"), tmp_path)
    assert report["equivariance"]["passed"]
    acc = report["classifiers"]["gbt"]["plain"]["accuracy"]
    assert acc > 0.5
    assert np.isclose(acc, report["classifiers"]["gbt"]["encrypted"]["accuracy"])
