"""Experiment configuration: a flat ``key = value`` file plus overrides."""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Iterable, Tuple

from .boost import BoostHyper
from .embed import EmbedHyper
from .recur import LstmHyper

CLASSIFIERS = ("gbt", "lstm")
FIXTURE = "fixture"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    corpus_root: str = FIXTURE  # "fixture" selects the bundled corpus
    categories: Tuple[str, ...] = ()
    passphrase_env: str = "CRYPTEXT_PASSPHRASE"
    classifier: str = "both"
    seed: int = 42
    deterministic: bool = True
    transductive: bool = False
    allow_drift: bool = False
    output_dir: str = "runs/default"
    embed: EmbedHyper = field(default_factory=EmbedHyper)
    gbt: BoostHyper = field(default_factory=BoostHyper)
    lstm: LstmHyper = field(default_factory=LstmHyper)

    @property
    def classifiers(self) -> Tuple[str, ...]:
        return CLASSIFIERS if self.classifier == "both" else (self.classifier,)

    def to_items(self) -> Dict[str, str]:
        """Canonical ``key -> value`` rendering, sub-blocks as dotted keys."""
        items = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if dataclasses.is_dataclass(value):
                for sub in fields(value):
                    items[f"{f.name}.{sub.name}"] = _render(getattr(value, sub.name))
            else:
                items[f.name] = _render(value)
        return items

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_items().items())

    def digest(self) -> str:
        """Hash of everything that affects results (output location excluded)."""
        items = {k: v for k, v in self.to_items().items() if k not in ("output_dir", "allow_drift")}
        text = "".join(f"{k}={v}\n" for k, v in sorted(items.items()))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def with_overrides(self, overrides: Dict[str, str]) -> "ExperimentConfig":
        top, blocks = {}, {}
        for key, raw in overrides.items():
            key = key.strip()
            if "." in key:
                block, sub = key.split(".", 1)
                if block not in ("embed", "gbt", "lstm"):
                    raise ConfigError(f"unknown config block {block!r}")
                hyper = getattr(self, block)
                blocks.setdefault(block, {})[sub] = _parse_field(type(hyper), sub, raw)
            else:
                top[key] = _parse_field(type(self), key, raw)
        cfg = replace(self, **top)
        for block, kw in blocks.items():
            try:
                cfg = replace(cfg, **{block: replace(getattr(cfg, block), **kw)})
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if cfg.classifier not in CLASSIFIERS + ("both",):
            raise ConfigError(f"classifier must be gbt, lstm or both, got {cfg.classifier!r}")
        return cfg


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if value is None:
        return "none"
    return str(value)


def _parse_field(cls, name: str, raw: str):
    types = {f.name: f.type for f in fields(cls)}
    if name not in types:
        raise ConfigError(f"unknown config key {name!r} for {cls.__name__}")
    kind = str(types[name])
    raw = raw.strip()
    try:
        if kind.startswith("Optional") and raw.lower() in ("none", ""):
            return None
        if "bool" in kind:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind.startswith("Tuple[int"):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if kind.startswith("Tuple"):
            return tuple(x.strip() for x in raw.split(",") if x.strip())
        if "float" in kind:
            return float(raw)
        if "int" in kind:
            return int(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r} (expected {kind})") from None
    return raw


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    items = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        items[key.strip()] = value.strip()
    return items


def load_config(path=None, overrides: Iterable[Tuple[str, str]] = ()) -> ExperimentConfig:
    items = {}
    if path is not None:
        items.update(parse_config_text(Path(path).read_text(encoding="utf-8"), str(path)))
    items.update(dict(overrides))
    return ExperimentConfig().with_overrides(items)


def stage_seed(root: int, label: str) -> int:
    """Independent 63-bit seed for one stage, derived from the root seed."""
    digest = hashlib.sha256(f"cryptext:{root}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1
