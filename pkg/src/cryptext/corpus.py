"""Loading the 20 Newsgroups "bydate" corpus from its directory layout."""
from __future__ import annotations

import json
import shutil
import tarfile
import urllib.request
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

BYDATE_URL = "http://qwone.com/~jason/20Newsgroups/20news-bydate.tar.gz"

# Accepted directory names per split, in lookup order.
_SPLIT_DIRS = {
    "train": ("train", "20news-bydate-train"),
    "test": ("test", "20news-bydate-test"),
}


class CorpusError(ValueError):
    """Raised when a corpus tree does not have the expected layout."""


@dataclass(frozen=True)
class RawDocument:
    doc_id: str
    label_id: int
    label_name: str
    text: str


@dataclass
class CorpusSplit:
    train: List[RawDocument]
    test: List[RawDocument]
    label_names: List[str] = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return len(self.label_names)

    def stats(self) -> dict:
        """Per-category document counts for both splits."""
        out = {"label_names": list(self.label_names), "train": {}, "test": {}}
        for split in ("train", "test"):
            counts = Counter(d.label_name for d in getattr(self, split))
            out[split] = {name: counts.get(name, 0) for name in self.label_names}
        out["n_train"] = len(self.train)
        out["n_test"] = len(self.test)
        return out


def _split_dir(root: Path, split: str) -> Path:
    for name in _SPLIT_DIRS[split]:
        candidate = root / name
        if candidate.is_dir():
            return candidate
    raise CorpusError(
        f"{root}: missing {split!r} split directory "
        f"(looked for {', '.join(_SPLIT_DIRS[split])})"
    )


def load_corpus(root_dir) -> CorpusSplit:
    """Read ``<split>/<category>/<file>`` into a :class:`CorpusSplit`.

    Categories are the union of the category directories of both splits,
    sorted lexicographically; a category directory with no files still
    contributes its label.  Files are decoded as UTF-8 with invalid bytes
    replaced, so loading never fails on encoding.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise CorpusError(f"{root}: not a directory")
    split_dirs = {split: _split_dir(root, split) for split in _SPLIT_DIRS}

    categories = set()
    for d in split_dirs.values():
        categories.update(p.name for p in d.iterdir() if p.is_dir())
    label_names = sorted(categories)
    label_of = {name: i for i, name in enumerate(label_names)}

    splits = {}
    for split, d in split_dirs.items():
        docs = []
        for name in label_names:
            cat_dir = d / name
            if not cat_dir.is_dir():
                continue
            for path in sorted(p for p in cat_dir.iterdir() if p.is_file()):
                text = path.read_bytes().decode("utf-8", errors="replace")
                docs.append(
                    RawDocument(
                        doc_id=f"{split}/{name}/{path.name}",
                        label_id=label_of[name],
                        label_name=name,
                        text=text,
                    )
                )
        splits[split] = docs
    return CorpusSplit(train=splits["train"], test=splits["test"], label_names=label_names)


def subset(corpus: CorpusSplit, categories: Iterable[str]) -> CorpusSplit:
    """Keep only ``categories``, re-indexing labels densely in sorted order."""
    wanted = set(categories)
    unknown = sorted(wanted.difference(corpus.label_names))
    if unknown:
        raise CorpusError(
            f"unknown categories {unknown}; valid names: {', '.join(corpus.label_names)}"
        )
    label_names = sorted(wanted)
    label_of = {name: i for i, name in enumerate(label_names)}

    def keep(docs: Sequence[RawDocument]) -> List[RawDocument]:
        return [
            RawDocument(d.doc_id, label_of[d.label_name], d.label_name, d.text)
            for d in docs
            if d.label_name in label_of
        ]

    return CorpusSplit(train=keep(corpus.train), test=keep(corpus.test), label_names=label_names)


def fixture_root() -> Path:
    """Path of the small corpus bundled with the package."""
    return Path(str(resources.files("cryptext") / "data" / "fixture"))


def load_fixture() -> CorpusSplit:
    return load_corpus(fixture_root())


def fetch(dest, archive: Optional[str] = None, url: str = BYDATE_URL) -> Path:
    """Unpack the bydate tarball into ``dest``; download it first if no local archive is given.

    Returns ``dest``, which then loads with :func:`load_corpus`.
    """
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    if archive is None:
        archive_path = dest / Path(url).name
        if not archive_path.exists():
            tmp = archive_path.with_suffix(".part")
            with urllib.request.urlopen(url) as resp, open(tmp, "wb") as fh:
                shutil.copyfileobj(resp, fh)
            tmp.rename(archive_path)
    else:
        archive_path = Path(archive)
    with tarfile.open(archive_path, "r:*") as tar:
        for member in tar.getmembers():
            target = (dest / member.name).resolve()
            if not str(target).startswith(str(dest.resolve())):
                raise CorpusError(f"refusing to extract {member.name!r} outside {dest}")
        tar.extractall(dest)
    return dest


def stats_json(corpus: CorpusSplit) -> str:
    return json.dumps(corpus.stats(), indent=2, sort_keys=False)
