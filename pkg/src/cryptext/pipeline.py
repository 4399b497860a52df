"""Experiment stages and the plaintext-vs-encrypted comparison.

Each stage reads the artifacts of the previous one from a directory and
writes its own next to them.  All outputs are deterministic functions of
the configuration; the only exception is ``timings.json``.
"""
from __future__ import annotations

import hashlib
import json
import logging
import shutil
import time
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import boost, embed, plots, recur
from .config import FIXTURE, ExperimentConfig, stage_seed
from .corpus import CorpusSplit, load_corpus, load_fixture, subset
from .metrics import MetricsReport, compare_reports, compute_report
from .textprep import (FormatError, TokenizedDoc, default_stopwords, preprocess_corpus,
                       read_token_file, write_token_file)
from .wordcrypt import CipherContext, TokenCipher, encrypt_corpus, verify_round_trip

log = logging.getLogger(__name__)

SPLITS = ("train", "test")
ARMS = ("plain", "encrypted")
LABELS = "labels.txt"
PREP_INFO = "prep.json"
EMBED_MODEL = "embedding.model.txt"
GBT_MODEL = "gbt.model.json"
LSTM_DIR = "lstm"


def tokens_file(split: str) -> str:
    return f"tokens.{split}.tsv"


def docvecs_file(split: str) -> str:
    return f"docvecs.{split}.txt"


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str, arm: Optional[str] = None):
        self.stage, self.arm = stage, arm
        where = f"[{arm}] {stage}" if arm else stage
        super().__init__(f"{where}: {message}")


class EquivarianceError(RuntimeError):
    """Plaintext and encrypted arms diverged in deterministic mode."""


def header(cfg: ExperimentConfig, stage: str) -> List[str]:
    return [f"cryptext stage={stage} config={cfg.digest()[:16]} seed={cfg.seed}"]


def meta(cfg: ExperimentConfig, stage: str) -> dict:
    return {"stage": stage, "config": cfg.digest()[:16], "seed": cfg.seed}


def _require(path: Path, stage: str, producer: str) -> Path:
    if not path.exists():
        raise StageError(stage, f"missing input {path}; run `cryptext {producer}` first")
    return path


def read_labels(directory: Path, stage: str) -> List[str]:
    path = _require(Path(directory) / LABELS, stage, "prep")
    return [ln.rstrip("\n") for ln in path.read_text(encoding="utf-8").splitlines()
            if ln and not ln.startswith("#")]


def write_labels(directory: Path, names: Sequence[str], hdr: Sequence[str]) -> None:
    with open(Path(directory) / LABELS, "w", encoding="utf-8", newline="\n") as fh:
        for line in hdr:
            fh.write(f"# {line}\n")
        for name in names:
            fh.write(name + "\n")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def corpus_digest(corpus: CorpusSplit) -> str:
    h = hashlib.sha256()
    for doc in corpus.train + corpus.test:
        h.update(f"{doc.doc_id}\x00{doc.label_id}\x00".encode("utf-8"))
        h.update(doc.text.encode("utf-8", errors="surrogatepass"))
        h.update(b"\x01")
    return h.hexdigest()


def load_configured_corpus(cfg: ExperimentConfig) -> CorpusSplit:
    corpus = load_fixture() if cfg.corpus_root == FIXTURE else load_corpus(cfg.corpus_root)
    if cfg.categories:
        corpus = subset(corpus, cfg.categories)
    return corpus


# -- stages ---------------------------------------------------------------------


def run_prep(cfg: ExperimentConfig, out_dir) -> Dict[str, List[TokenizedDoc]]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus = load_configured_corpus(cfg)
    stopwords = default_stopwords()
    train, test = preprocess_corpus(corpus, stopwords)
    hdr = header(cfg, "prep")
    for split, docs in (("train", train), ("test", test)):
        write_token_file(out / tokens_file(split), docs, hdr)
    write_labels(out, corpus.label_names, hdr)
    info = {
        "meta": meta(cfg, "prep"),
        "corpus_digest": corpus_digest(corpus),
        "stopwords_checksum": stopwords.source_checksum,
        "n_train": len(train),
        "n_test": len(test),
        "label_names": corpus.label_names,
    }
    (out / PREP_INFO).write_text(json.dumps(info, indent=2) + "\n", encoding="utf-8")
    return {"train": train, "test": test}


def read_tokens(directory, stage: str) -> Dict[str, List[TokenizedDoc]]:
    directory = Path(directory)
    out = {}
    for split in SPLITS:
        path = _require(directory / tokens_file(split), stage, "prep")
        try:
            out[split] = read_token_file(path)
        except FormatError as exc:
            raise StageError(stage, str(exc)) from None
    return out


def run_encrypt(cfg: ExperimentConfig, in_dir, out_dir, ctx: CipherContext,
                verify: bool = False) -> Optional[float]:
    """Encrypt the token files; with ``verify`` return the round-trip success rate."""
    src, out = Path(in_dir), Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plain = read_tokens(src, "encrypt")
    labels = read_labels(src, "encrypt")
    hdr = header(cfg, "encrypt")
    enc = {}
    for split in SPLITS:
        enc[split] = encrypt_corpus(ctx, plain[split])
        write_token_file(out / tokens_file(split), enc[split], hdr)
    write_labels(out, labels, hdr)
    if (src / PREP_INFO).exists() and src.resolve() != out.resolve():
        shutil.copyfile(src / PREP_INFO, out / PREP_INFO)
    if not verify:
        return None
    n = sum(len(plain[s]) for s in SPLITS)
    ok = sum(verify_round_trip(ctx, plain[s], enc[s]) * len(plain[s]) for s in SPLITS)
    return ok / n if n else 1.0


def run_embed(cfg: ExperimentConfig, in_dir, out_dir) -> embed.EmbeddingModel:
    src, out = Path(in_dir), Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    docs = read_tokens(src, "embed")
    labels = read_labels(src, "embed")
    hyper = replace(cfg.embed, seed=stage_seed(cfg.seed, "embed"))
    train_docs, test_docs = docs["train"], docs["test"]
    if cfg.transductive:
        joint = train_docs + test_docs
        vocab = embed.build_vocab(joint, hyper.min_count)
        model = embed.train(joint, vocab, hyper)
        vectors = {"train": model.D[:len(train_docs)], "test": model.D[len(train_docs):]}
    else:
        vocab = embed.build_vocab(train_docs, hyper.min_count)
        model = embed.train(train_docs, vocab, hyper)
        vectors = {"train": model.D,
                   "test": embed.infer_vectors(model, test_docs, seed=stage_seed(cfg.seed, "infer"))}
    if not model.is_finite():
        raise StageError("embed", "training produced non-finite values")
    hdr = header(cfg, "embed")
    for split in SPLITS:
        split_docs = docs[split]
        embed.write_doc_vectors(out / docvecs_file(split), [d.doc_id for d in split_docs],
                                [d.label_id for d in split_docs], vectors[split], hdr)
    embed.write_model(out / EMBED_MODEL, model, hdr)
    if src.resolve() != out.resolve():
        write_labels(out, labels, hdr)
    return model


def read_vectors(directory, split: str, stage: str):
    path = _require(Path(directory) / docvecs_file(split), stage, "embed")
    try:
        return embed.read_doc_vectors(path)
    except FormatError as exc:
        raise StageError(stage, str(exc)) from None


def run_train(cfg: ExperimentConfig, in_dir, out_dir) -> dict:
    src, out = Path(in_dir), Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _, y, X = read_vectors(src, "train", "train")
    labels = read_labels(src, "train")
    models = {}
    if "gbt" in cfg.classifiers:
        model = boost.fit(X, y, cfg.gbt, n_classes=len(labels))
        model.save(out / GBT_MODEL, meta(cfg, "train"))
        models["gbt"] = model
    if "lstm" in cfg.classifiers:
        hyper = replace(cfg.lstm, seed=stage_seed(cfg.seed, "lstm"))
        model = recur.fit(X, y, n_classes=len(labels), hyper=hyper)
        if not model.is_finite():
            raise StageError("train", "LSTM weights became non-finite")
        model.save(out / LSTM_DIR, meta(cfg, "train"))
        models["lstm"] = model
    if src.resolve() != out.resolve():
        write_labels(out, labels, header(cfg, "train"))
    return models


def load_classifier(directory, clf: str):
    directory = Path(directory)
    if clf == "gbt":
        return boost.TreeEnsemble.load(_require(directory / GBT_MODEL, "evaluate", "train"))
    _require(directory / LSTM_DIR / "manifest.json", "evaluate", "train")
    return recur.LstmModel.load(directory / LSTM_DIR)


def predict_with(model, X) -> np.ndarray:
    if isinstance(model, boost.TreeEnsemble):
        return boost.predict(model, X)
    return model.predict(X)


def run_evaluate(cfg: ExperimentConfig, in_dir, out_dir=None) -> Dict[str, Tuple[MetricsReport, np.ndarray]]:
    src = Path(in_dir)
    out = Path(out_dir) if out_dir is not None else src
    out.mkdir(parents=True, exist_ok=True)
    doc_ids, y, X = read_vectors(src, "test", "evaluate")
    labels = read_labels(src, "evaluate")
    results = {}
    for clf in cfg.classifiers:
        model = load_classifier(src, clf)
        pred = predict_with(model, X)
        report = compute_report(y, pred, labels)
        with open(out / f"predictions.{clf}.tsv", "w", encoding="utf-8", newline="\n") as fh:
            for line in header(cfg, "evaluate"):
                fh.write(f"# {line}\n")
            fh.write("doc_id\ttrue\tpred\n")
            for doc_id, t, p in zip(doc_ids, y, pred):
                fh.write(f"{doc_id}\t{t}\t{p}\n")
        obj = report.to_dict()
        obj["meta"] = meta(cfg, "evaluate")
        obj["classifier"] = clf
        (out / f"report.{clf}.json").write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")
        (out / f"report.{clf}.txt").write_text(report.render(), encoding="utf-8")
        results[clf] = (report, pred)
    return results


# -- comparison -------------------------------------------------------------------


def plaintext_leaks(plain_vocab, arm_dir) -> List[str]:
    """Plaintext vocabulary tokens that appear as tokens in an encrypted arm's files.

    Document ids and label names are shared metadata and are not scanned.
    Plaintext words that are themselves block-sized hex strings are skipped,
    since they cannot be told apart from ciphertokens.
    """
    def looks_like_ciphertoken(tok):
        return len(tok) % 32 == 0 and all(c in "0123456789abcdef" for c in tok)

    suspects = {t for t in plain_vocab if not looks_like_ciphertoken(t)}
    found = set()
    arm_dir = Path(arm_dir)
    for split in SPLITS:
        for doc in read_token_file(arm_dir / tokens_file(split)):
            found.update(suspects.intersection(doc.tokens))
    model_path = arm_dir / EMBED_MODEL
    if model_path.exists():
        model = embed.read_model(model_path)
        found.update(suspects.intersection(model.vocab.tokens))
    return sorted(found)


def _fmt_pct(v: float) -> str:
    return f"{100 * v:.2f}"


def render_comparison(results: Dict[str, Dict[str, MetricsReport]]) -> Tuple[str, str]:
    """Human table and TSV of headline metrics for every classifier."""
    rows = []
    for clf, arms in results.items():
        plain, enc = arms["plain"], arms["encrypted"]
        rows.append((clf, "accuracy", plain.accuracy, enc.accuracy))
        for avg in ("macro_avg", "weighted_avg"):
            for k in ("precision", "recall", "f1"):
                rows.append((clf, f"{avg.split('_')[0]} {k}", getattr(plain, avg)[k], getattr(enc, avg)[k]))
    table = [f"{'classifier':<10} {'metric':<18} {'plain %':>9} {'encrypted %':>12} {'delta':>8}"]
    tsv = ["classifier\tmetric\tplain\tencrypted\tdelta"]
    for clf, name, a, b in rows:
        table.append(f"{clf:<10} {name:<18} {_fmt_pct(a):>9} {_fmt_pct(b):>12} {100 * (a - b):>+8.2f}")
        tsv.append(f"{clf}\t{name.replace(' ', '_')}\t{a!r}\t{b!r}\t{(a - b)!r}")
    return "\n".join(table) + "\n", "\n".join(tsv) + "\n"


def _artifact_hashes(out: Path) -> Dict[str, str]:
    hashes = {}
    for arm in ARMS:
        for path in sorted((out / arm).rglob("*")):
            if path.is_file():
                hashes[path.relative_to(out).as_posix()] = file_sha256(path)
    return hashes


def compare(cfg: ExperimentConfig, ctx: CipherContext, out_dir=None) -> dict:
    """Run both arms with one seed and write the comparison report.

    Raises :class:`EquivarianceError` after writing all outputs when the
    arms differ in deterministic mode, unless ``cfg.allow_drift`` is set.
    """
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dirs = {arm: out / arm for arm in ARMS}
    timings = {}

    def timed(arm, stage, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            result = fn(*args, **kw)
        except StageError as exc:
            raise StageError(exc.stage, str(exc), arm) from exc
        except Exception as exc:
            raise StageError(stage, f"{type(exc).__name__}: {exc}", arm) from exc
        timings[f"{arm}/{stage}"] = time.perf_counter() - t0
        log.info("[%s] %s done in %.1fs", arm, stage, timings[f"{arm}/{stage}"])
        return result

    timed("plain", "prep", run_prep, cfg, dirs["plain"])
    round_trip = timed("encrypted", "encrypt", run_encrypt, cfg, dirs["plain"], dirs["encrypted"], ctx,
                       verify=True)
    models, results, preds, trained = {}, {}, {}, {}
    for arm in ARMS:
        models[arm] = timed(arm, "embed", run_embed, cfg, dirs[arm], dirs[arm])
        trained[arm] = timed(arm, "train", run_train, cfg, dirs[arm], dirs[arm])
        evaluated = timed(arm, "evaluate", run_evaluate, cfg, dirs[arm])
        for clf, (report, pred) in evaluated.items():
            results.setdefault(clf, {})[arm] = report
            preds.setdefault(clf, {})[arm] = pred

    plain_m, enc_m = models["plain"], models["encrypted"]
    cipher = TokenCipher(ctx)
    deltas = {clf: compare_reports(r["plain"], r["encrypted"]) for clf, r in results.items()}
    leaks = plaintext_leaks(plain_m.vocab.tokens, dirs["encrypted"])
    equivariance = {
        "vocab_size_equal": len(plain_m.vocab) == len(enc_m.vocab),
        "vocab_bijection": [cipher.encrypt(t) for t in plain_m.vocab.tokens] == enc_m.vocab.tokens
        and np.array_equal(plain_m.vocab.counts, enc_m.vocab.counts),
        "embedding_matrices_equal": all(np.array_equal(getattr(plain_m, k), getattr(enc_m, k))
                                        for k in ("W_in", "D", "W_out")),
        "docvec_files_identical": all(
            (dirs["plain"] / docvecs_file(s)).read_bytes() == (dirs["encrypted"] / docvecs_file(s)).read_bytes()
            for s in SPLITS),
        "predictions_identical": {clf: bool(np.array_equal(p["plain"], p["encrypted"])) for clf, p in preds.items()},
        "exact_equal_metrics": all(d.exact_equal for d in deltas.values()),
        "round_trip_rate": round_trip,
        "plaintext_tokens_in_encrypted_arm": len(leaks),
    }
    passed = (equivariance["vocab_size_equal"] and equivariance["vocab_bijection"]
              and equivariance["embedding_matrices_equal"] and equivariance["docvec_files_identical"]
              and all(equivariance["predictions_identical"].values())
              and equivariance["exact_equal_metrics"])
    equivariance["passed"] = bool(passed)

    table, tsv = render_comparison(results)
    (out / "comparison.txt").write_text(table, encoding="utf-8")
    (out / "comparison.tsv").write_text(tsv, encoding="utf-8")
    figures = [plots.headline({clf: (r["plain"], r["encrypted"]) for clf, r in results.items()},
                              out / "figures" / "headline.png")]
    for clf, r in results.items():
        figures.append(plots.per_class_f1(r["plain"], r["encrypted"], out / "figures" / f"f1_by_class_{clf}.png",
                                          title=f"{clf}: per-class F1"))
    if "gbt" in trained["plain"]:
        figures.append(plots.boosting_curve({arm: trained[arm]["gbt"].history for arm in ARMS},
                                            out / "figures" / "gbt_mlogloss.png"))
    if "lstm" in trained["plain"]:
        figures.append(plots.lstm_history({arm: trained[arm]["lstm"].history for arm in ARMS},
                                          out / "figures" / "lstm_history.png"))

    report = {
        "meta": meta(cfg, "compare"),
        "config": cfg.to_items(),
        "config_digest": cfg.digest(),
        "inputs": _artifact_hashes(out),
        "classifiers": {
            clf: {"plain": r["plain"].to_dict(), "encrypted": r["encrypted"].to_dict(),
                  "delta": deltas[clf].to_dict()}
            for clf, r in results.items()
        },
        "equivariance": equivariance,
        "outputs": {"table": "comparison.txt", "tsv": "comparison.tsv",
                    "figures": [p.relative_to(out).as_posix() for p in figures],
                    "timings": "timings.json"},
    }
    (out / "comparison.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    (out / "timings.json").write_text(json.dumps(timings, indent=2) + "\n", encoding="utf-8")
    if cfg.deterministic and not cfg.allow_drift and not passed:
        raise EquivarianceError(f"plaintext and encrypted arms differ: {json.dumps(equivariance)}")
    return report
