"""Text cleaning, stopword removal and the token-file interchange format."""
from __future__ import annotations

import hashlib
import re
import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import FrozenSet, Iterable, List, Optional, Sequence, Tuple

from .corpus import CorpusSplit

_URL_RE = re.compile(r"https?://\S+|www\.\S+")
_PUNCT_DIGITS = str.maketrans({c: " " for c in string.punctuation + string.digits})
_WS_RE = re.compile(r"\s+")


@dataclass(frozen=True)
class TokenizedDoc:
    doc_id: str
    label_id: int
    tokens: Tuple[str, ...]


@dataclass(frozen=True)
class StopwordList:
    words: FrozenSet[str]
    source_checksum: str

    def __contains__(self, token: str) -> bool:
        return token in self.words

    def __len__(self) -> int:
        return len(self.words)

    @classmethod
    def from_text(cls, text: str) -> "StopwordList":
        words = set()
        for line in text.splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                words.add(line.lower())
        if not words:
            raise ValueError("stopword list is empty")
        checksum = hashlib.sha256(text.encode("utf-8")).hexdigest()
        return cls(frozenset(words), checksum)

    @classmethod
    def from_file(cls, path) -> "StopwordList":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def default_stopwords() -> StopwordList:
    """The vendored 179-word English list."""
    text = (resources.files("cryptext") / "data" / "stopwords_en.txt").read_text(encoding="utf-8")
    return StopwordList.from_text(text)


def clean_text(raw: str) -> str:
    """Strip URLs, ASCII punctuation and digits, lowercase, normalise spaces.

    Punctuation and digits become spaces rather than being deleted, so
    ``"abc123def"`` yields two words.
    """
    text = _URL_RE.sub("", raw)
    text = text.translate(_PUNCT_DIGITS)
    text = text.lower()
    return _WS_RE.sub(" ", text).strip()


def tokenize(cleaned: str, stopwords: StopwordList) -> List[str]:
    if not cleaned:
        return []
    return [tok for tok in cleaned.split(" ") if tok and tok not in stopwords]


def preprocess_docs(docs, stopwords: StopwordList) -> List[TokenizedDoc]:
    return [
        TokenizedDoc(d.doc_id, d.label_id, tuple(tokenize(clean_text(d.text), stopwords)))
        for d in docs
    ]


def preprocess_corpus(
    corpus: CorpusSplit, stopwords: Optional[StopwordList] = None
) -> Tuple[List[TokenizedDoc], List[TokenizedDoc]]:
    """Clean and tokenize both splits.  Documents left without tokens are kept."""
    if stopwords is None:
        stopwords = default_stopwords()
    return preprocess_docs(corpus.train, stopwords), preprocess_docs(corpus.test, stopwords)


# -- token files -------------------------------------------------------------


class FormatError(ValueError):
    """A stage input file is malformed; the message carries file and line."""


def write_token_file(path, docs: Sequence[TokenizedDoc], header: Iterable[str] = ()) -> None:
    """One document per line: ``doc_id<TAB>label_id<TAB>tok tok ...``."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        for d in docs:
            if "\t" in d.doc_id or "\n" in d.doc_id:
                raise ValueError(f"doc_id {d.doc_id!r} contains a tab or newline")
            fh.write(f"{d.doc_id}\t{d.label_id}\t{' '.join(d.tokens)}\n")


def read_token_file(path) -> List[TokenizedDoc]:
    docs = []
    with open(path, encoding="utf-8", newline="\n") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            doc_id, label, toks = parts
            try:
                label_id = int(label)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: label {label!r} is not an integer") from None
            docs.append(TokenizedDoc(doc_id, label_id, tuple(toks.split(" ")) if toks else ()))
    return docs
