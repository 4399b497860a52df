"""Command-line entry point: ``cryptext <command> [options]``."""
from __future__ import annotations

import argparse
import getpass
import logging
import os
import sys
from pathlib import Path

from . import pipeline
from .config import ConfigError, ExperimentConfig, load_config
from .corpus import BYDATE_URL, CorpusError, fetch, stats_json
from .wordcrypt import derive_context

EXIT_STAGE = 2
EXIT_DRIFT = 3


def _common(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("experiment")
    g.add_argument("--config", type=Path, help="key = value config file")
    g.add_argument("--seed", type=int)
    g.add_argument("--categories", help="comma-separated category subset")
    g.add_argument("--classifier", choices=("gbt", "lstm", "both"))
    g.add_argument("--transductive", action="store_true", default=None,
                   help="train document vectors over train+test jointly")
    g.add_argument("--allow-drift", action="store_true", default=None,
                   help="do not fail when the two arms differ")
    g.add_argument("--corpus-root", help="bydate directory, or 'fixture'")
    g.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. --set embed.epochs=5")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cryptext", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", help="download and unpack the 20news-bydate archive")
    p.add_argument("--dest", type=Path, required=True)
    p.add_argument("--archive", help="use a local .tar.gz instead of downloading")
    p.add_argument("--url", default=BYDATE_URL)

    p = sub.add_parser("corpus", help="corpus utilities")
    csub = p.add_subparsers(dest="corpus_command", required=True)
    _common(csub.add_parser("stats", help="per-category document counts as JSON"))

    p = sub.add_parser("prep", help="clean and tokenize the corpus")
    _common(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("encrypt", help="encrypt token files word by word")
    _common(p)
    p.add_argument("--in", dest="in_dir", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--verify", action="store_true", help="decrypt again and report the round-trip rate")

    for name, helptext in (("embed", "train document vectors"),
                           ("train", "fit classifiers on training document vectors"),
                           ("evaluate", "score classifiers on test document vectors")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--in", dest="in_dir", type=Path, required=True)
        p.add_argument("--out", type=Path, help="defaults to --in")

    p = sub.add_parser("compare", help="run plaintext and encrypted arms and compare them")
    _common(p)
    p.add_argument("--out", type=Path, help="defaults to output_dir from the config")
    return parser


def config_from_args(args) -> ExperimentConfig:
    overrides = []
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides.append(tuple(item.split("=", 1)))
    for key, value in (("seed", args.seed), ("categories", args.categories),
                       ("classifier", args.classifier), ("transductive", args.transductive),
                       ("allow_drift", args.allow_drift), ("corpus_root", args.corpus_root)):
        if value is not None:
            overrides.append((key, str(value)))
    return load_config(args.config, overrides)


def passphrase_context(cfg: ExperimentConfig):
    """Passphrases come from the environment or an interactive prompt, never argv."""
    passphrase = os.environ.get(cfg.passphrase_env)
    if not passphrase:
        if not sys.stdin.isatty():
            raise ConfigError(f"set the passphrase in ${cfg.passphrase_env}")
        passphrase = getpass.getpass("passphrase: ")
    return derive_context(passphrase, hint=cfg.passphrase_env)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (ConfigError, CorpusError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except pipeline.StageError as exc:
        print(f"stage failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except pipeline.EquivarianceError as exc:
        print(f"equivariance check failed: {exc}", file=sys.stderr)
        return EXIT_DRIFT


def _dispatch(args) -> int:
    if args.command == "fetch":
        root = fetch(args.dest, archive=args.archive, url=args.url)
        print(root)
        return 0
    cfg = config_from_args(args)
    if args.command == "corpus":
        print(stats_json(pipeline.load_configured_corpus(cfg)))
    elif args.command == "prep":
        docs = pipeline.run_prep(cfg, args.out)
        print(f"prep: {len(docs['train'])} train / {len(docs['test'])} test documents -> {args.out}")
    elif args.command == "encrypt":
        rate = pipeline.run_encrypt(cfg, args.in_dir, args.out, passphrase_context(cfg), verify=args.verify)
        print(f"encrypt: -> {args.out}")
        if rate is not None:
            print(f"round-trip: {100 * rate:.2f}% of documents decrypt to their plaintext")
            if rate < 1.0:
                return EXIT_STAGE
    elif args.command == "embed":
        model = pipeline.run_embed(cfg, args.in_dir, args.out or args.in_dir)
        print(f"embed: vocab {len(model.vocab)}, {model.D.shape[0]} trained document vectors")
    elif args.command == "train":
        models = pipeline.run_train(cfg, args.in_dir, args.out or args.in_dir)
        print(f"train: fitted {', '.join(models)}")
    elif args.command == "evaluate":
        results = pipeline.run_evaluate(cfg, args.in_dir, args.out)
        for clf, (report, _) in results.items():
            print(f"== {clf} ==")
            print(report.render())
    elif args.command == "compare":
        out = args.out or Path(cfg.output_dir)
        table = Path(out) / "comparison.txt"
        try:
            report = pipeline.compare(cfg, passphrase_context(cfg), out)
        except pipeline.EquivarianceError:
            print(table.read_text(encoding="utf-8"), end="")
            raise
        print(table.read_text(encoding="utf-8"), end="")
        eq = report["equivariance"]
        print(f"equivariance: {'exact' if eq['passed'] else 'DRIFT'}; report -> {Path(out) / 'comparison.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
