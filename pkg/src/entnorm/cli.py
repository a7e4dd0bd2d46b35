"""Command-line interface: ``entnorm <subcommand> [options]``.

Subcommands: synth, build-index, train, tune-threshold, predict, evaluate.
Every option can also come from a flat ``key = value`` config file passed
with ``--config``; explicit flags win over the file, which wins over the
built-in defaults. Exit status is 0 on success, 1 for bad input or
incompatible artifacts, 2 for internal errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from . import __version__
from .kb import (
    Dataset,
    NIL,
    EntNormError,
    load_dataset,
    load_documents,
    load_kb,
    split_train_dev,
)
from .linker import (
    Pipeline,
    evaluation_report,
    learn_threshold_from_scores,
    link_dataset,
    load_predictions,
    save_predictions,
    score_dataset,
)
from .preprocess import Resources, load_abbreviation_list, load_spelling_lexicon
from .ranker import CrossEncoder, Hyperparams, build_vocab, load_checkpoint, make_training_pairs, save_checkpoint, train
from .retrieval import build_index, index_fingerprint, load_index, save_index
from .synth import SynthSpec, generate, write_corpus

logger = logging.getLogger("entnorm")


class UsageError(EntNormError):
    pass


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


@dataclass(frozen=True)
class Option:
    type: Callable[[Any], Any]
    default: Any
    help: str
    flag: str | None = None  # defaults to --name with dashes


_HP = Hyperparams()
_SYNTH = SynthSpec()

OPTIONS: dict[str, Option] = {
    # paths
    "kb": Option(Path, None, "knowledge base (JSONL)"),
    "train": Option(Path, None, "training mentions (JSONL)"),
    "dev": Option(Path, None, "development mentions; default: last 10%% of --train"),
    "input": Option(Path, None, "mentions to link (JSONL); default: --test"),
    "test": Option(Path, None, "test mentions; used by predict and evaluate when --input/--gold are absent"),
    "gold": Option(Path, None, "gold mentions (JSONL); default: --test"),
    "predictions": Option(Path, None, "predictions (JSONL)"),
    "spelling": Option(Path, None, "spelling lexicon (TSV misspelled<TAB>correction)"),
    "abbreviations": Option(Path, None, "global abbreviation list (TSV short<TAB>long)"),
    "docs": Option(Path, None, "source documents (JSONL) for in-text abbreviation detection"),
    "index": Option(Path, None, "index artifact"),
    "checkpoint": Option(Path, None, "model checkpoint"),
    "tau": Option(Path, None, "threshold file written by tune-threshold"),
    "out": Option(Path, None, "output path"),
    "report": Option(Path, None, "where to write the report"),
    # retrieval
    "k": Option(int, 10, "candidates retrieved per mention"),
    "k1": Option(float, 1.2, "BM25 k1"),
    "b": Option(float, 0.75, "BM25 b"),
    # model
    "hidden": Option(int, _HP.H, "hidden width H"),
    "layers": Option(int, _HP.L, "transformer layers L"),
    "heads": Option(int, _HP.A, "attention heads A"),
    "max_len": Option(int, _HP.max_len, "maximum pair-sequence length"),
    "batch_size": Option(int, _HP.batch_size, "mini-batch size (16 or 32 unless --allow-any-batch)"),
    "learning_rate": Option(float, _HP.learning_rate, "Adam learning rate"),
    "epochs": Option(int, _HP.epochs, "training epochs (1..10); the best dev epoch is kept"),
    "dropout": Option(float, _HP.dropout, "dropout rate"),
    "allow_any_batch": Option(_bool, False, "lift the 16/32 batch-size guard"),
    "baseline": Option(str, None, "predict with a baseline instead of the ranker (only: bm25)"),
    # synth
    "n_concepts": Option(int, _SYNTH.n_concepts, "concepts in the synthetic KB"),
    "n_train": Option(int, _SYNTH.n_train, "synthetic training mentions"),
    "n_dev": Option(int, _SYNTH.n_dev, "synthetic dev mentions"),
    "n_test": Option(int, _SYNTH.n_test, "synthetic test mentions"),
    "nil_fraction": Option(float, _SYNTH.nil_fraction, "fraction of unlinkable mentions"),
    # global
    "seed": Option(int, 0, "random seed"),
    "verbose": Option(_bool, False, "log progress to stderr"),
    "config": Option(Path, None, "flat key = value config file"),
}

GLOBAL = ("config", "seed", "verbose")
RESOURCES = ("spelling", "abbreviations", "docs")
HYPER = ("hidden", "layers", "heads", "max_len", "batch_size", "learning_rate", "epochs", "dropout", "allow_any_batch")

COMMANDS: dict[str, tuple[str, tuple[str, ...]]] = {
    "synth": ("generate a synthetic KB and mention datasets",
              ("out", "n_concepts", "n_train", "n_dev", "n_test", "nil_fraction")),
    "build-index": ("build the BM25 index over KB names and training mentions",
                    ("kb", "train", "dev", *RESOURCES, "out", "k1", "b")),
    "train": ("train the cross-encoder ranker",
              ("kb", "train", "dev", "index", *RESOURCES, "out", "report", "k", *HYPER)),
    "tune-threshold": ("learn the NIL threshold on the dev set",
                       ("kb", "train", "dev", "index", "checkpoint", *RESOURCES, "out", "k")),
    "predict": ("link mentions to concepts",
                ("input", "test", "index", "checkpoint", "tau", "baseline", *RESOURCES, "out", "k")),
    "evaluate": ("score predictions against gold labels", ("predictions", "gold", "test", "out")),
}

# Options a command refuses to run without.
REQUIRED: dict[str, tuple[str, ...]] = {
    "synth": ("out",),
    "build-index": ("kb", "train", "out"),
    "train": ("kb", "train", "index", "out"),
    "tune-threshold": ("kb", "train", "index", "checkpoint", "out"),
    "predict": ("input", "index", "out"),
    "evaluate": ("predictions", "gold"),
}
INPUT_PATHS = ("kb", "train", "dev", "test", "input", "gold", "predictions", "spelling", "abbreviations", "docs",
               "index", "checkpoint", "tau")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_option(parser: argparse.ArgumentParser, name: str) -> None:
    opt = OPTIONS[name]
    flag = opt.flag or "--" + name.replace("_", "-")
    if opt.type is _bool:
        parser.add_argument(flag, dest=name, action="store_const", const=True,
                            default=argparse.SUPPRESS, help=opt.help)
    else:
        parser.add_argument(flag, dest=name, type=opt.type, default=argparse.SUPPRESS, help=opt.help)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="entnorm", description="Entity normalization with BM25 retrieval and a cross-encoder ranker.")
    parser.add_argument("--version", action="version", version=f"entnorm {__version__}")
    for name in GLOBAL:
        _add_option(parser, name)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for cmd, (help_text, names) in COMMANDS.items():
        p = sub.add_parser(cmd, help=help_text, description=help_text)
        for name in (*names, *GLOBAL):
            _add_option(p, name)
    return parser


def read_config(path: Path) -> dict[str, Any]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    if not path.exists():
        raise UsageError(f"{path}: config file not found")
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in OPTIONS or key == "config":
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = OPTIONS[key].type(value)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return values


def resolve_config(command: str, flags: dict[str, Any]) -> dict[str, Any]:
    """Merge defaults < config file < flags, then validate input paths."""
    allowed = set(COMMANDS[command][1]) | set(GLOBAL)
    cfg = {name: OPTIONS[name].default for name in allowed}
    if flags.get("config") is not None:
        # a shared config file may carry keys for other commands; they are ignored here
        cfg.update({k: v for k, v in read_config(flags["config"]).items() if k in allowed})
    cfg.update(flags)
    for alias in ("input", "gold"):
        if alias in cfg and cfg[alias] is None:
            cfg[alias] = cfg.get("test")
    missing = [n for n in REQUIRED[command] if cfg.get(n) is None]
    if missing:
        raise UsageError(f"{command}: missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
    for name in INPUT_PATHS:
        if name in cfg and cfg[name] is not None and not Path(cfg[name]).exists():
            raise UsageError(f"{command}: --{name} path not found: {cfg[name]}")
    return cfg


# -- shared loading ----------------------------------------------------------


def load_resources(cfg) -> Resources:
    lexicon = load_spelling_lexicon(cfg["spelling"]) if cfg.get("spelling") else {}
    abbrevs = load_abbreviation_list(cfg["abbreviations"]) if cfg.get("abbreviations") else {}
    docs = load_documents(cfg["docs"]) if cfg.get("docs") else {}
    return Resources(lexicon=lexicon, abbreviations=abbrevs, documents=docs)


def train_and_dev(cfg) -> tuple[Dataset, Dataset]:
    """Training portion and dev set; without --dev the last 10% of --train is held out."""
    train_ds = load_dataset(cfg["train"], "train")
    if cfg.get("dev"):
        return train_ds, load_dataset(cfg["dev"], "dev")
    return split_train_dev(train_ds, 0.1)


def _check_index(index, kb, train_ds, resources) -> None:
    expected = index_fingerprint(kb, train_ds, resources, index.k1, index.b)
    if index.fingerprint != expected:
        raise EntNormError("index was built from different KB/training/preprocessing inputs; rebuild it")


def _check_checkpoint(meta: dict, index) -> None:
    if meta.get("index_fingerprint") != index.fingerprint:
        raise EntNormError("checkpoint was trained against a different index (fingerprint mismatch)")


def _write_json(path: Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- commands ----------------------------------------------------------------


def cmd_synth(cfg) -> int:
    spec = SynthSpec(
        n_concepts=cfg["n_concepts"], n_train=cfg["n_train"], n_dev=cfg["n_dev"], n_test=cfg["n_test"],
        nil_fraction=cfg["nil_fraction"], seed=cfg["seed"],
    )
    corpus = generate(spec)
    paths = write_corpus(corpus, cfg["out"])
    print(json.dumps({"files": {k: str(v) for k, v in paths.items()}, "stats": corpus.stats}, sort_keys=True))
    return 0


def cmd_build_index(cfg) -> int:
    kb = load_kb(cfg["kb"])
    train_ds, _ = train_and_dev(cfg)
    resources = load_resources(cfg)
    index = build_index(kb, train_ds, resources, k1=cfg["k1"], b=cfg["b"])
    save_index(index, cfg["out"])
    report = {**index.report.as_dict(), "N": index.N, "avgdl": index.avgdl, "terms": len(index.postings)}
    print(json.dumps(report, sort_keys=True))
    return 0


def _hyper(cfg) -> Hyperparams:
    return Hyperparams(
        H=cfg["hidden"], L=cfg["layers"], A=cfg["heads"], max_len=cfg["max_len"], batch_size=cfg["batch_size"],
        learning_rate=cfg["learning_rate"], epochs=cfg["epochs"], seed=cfg["seed"], dropout=cfg["dropout"],
        allow_any_batch=cfg["allow_any_batch"],
    )


def cmd_train(cfg) -> int:
    try:
        hyper = _hyper(cfg)
    except ValueError as exc:
        raise UsageError(f"train: {exc}") from None
    kb = load_kb(cfg["kb"])
    train_ds, dev = train_and_dev(cfg)
    resources = load_resources(cfg)
    index = load_index(cfg["index"])
    _check_index(index, kb, train_ds, resources)
    vocab = build_vocab(kb, train_ds, resources)
    pairs = make_training_pairs(train_ds, index, kb, resources, k=cfg["k"])
    logger.info("vocabulary %d tokens, %d training pairs, dev %d mentions", len(vocab), len(pairs), len(dev))
    model = CrossEncoder(vocab, hyper)
    best, report = train(model, pairs, hyper, dev, index, resources, k=cfg["k"])
    meta = {
        "index_fingerprint": index.fingerprint,
        "resources_fingerprint": resources.fingerprint(),
        "best_epoch": report.best_epoch,
    }
    digest = save_checkpoint(best, cfg["out"], meta)
    report_path = cfg.get("report") or Path(str(cfg["out"]) + ".report.jsonl")
    with Path(report_path).open("w", encoding="utf-8") as fh:
        for row in report.lines():
            dev_acc = row["dev_accuracy"]
            fh.write(json.dumps({"epoch": row["epoch"], "mean_loss": float(row["mean_loss"]),
                                 "dev_accuracy": None if dev_acc is None else float(dev_acc)}) + "\n")
    print(json.dumps({"checkpoint": str(cfg["out"]), "sha256": digest, "best_epoch": report.best_epoch,
                      "report": str(report_path)}, sort_keys=True))
    return 0


def cmd_tune_threshold(cfg) -> int:
    kb = load_kb(cfg["kb"])
    train_ds, dev = train_and_dev(cfg)
    if len(dev) == 0:
        raise EntNormError("tune-threshold: the dev set is empty")
    resources = load_resources(cfg)
    index = load_index(cfg["index"])
    _check_index(index, kb, train_ds, resources)
    model, meta = load_checkpoint(cfg["checkpoint"])
    _check_checkpoint(meta, index)
    pipe = Pipeline(index=index, model=model, tau=0.0, resources=resources, k=cfg["k"])
    tau, acc = learn_threshold_from_scores(score_dataset(dev, pipe), dev)
    out = {"tau": tau, "dev_accuracy": float(acc), "checkpoint_sha256": meta["sha256"],
           "index_fingerprint": index.fingerprint}
    _write_json(cfg["out"], out)
    print(json.dumps(out, sort_keys=True))
    return 0


def cmd_predict(cfg) -> int:
    baseline = cfg.get("baseline")
    if baseline not in (None, "bm25"):
        raise UsageError(f"predict: unknown baseline {baseline!r} (supported: bm25)")
    if baseline is None and (cfg.get("checkpoint") is None or cfg.get("tau") is None):
        raise UsageError("predict: --checkpoint and --tau are required unless --baseline bm25 is given")
    ds = load_dataset(cfg["input"])
    resources = load_resources(cfg)
    index = load_index(cfg["index"])
    if index.resources_fingerprint != resources.fingerprint():
        raise EntNormError("predict: spelling/abbreviation resources differ from those the index was built with")
    if baseline == "bm25":
        pipe = Pipeline(index=index, model=None, resources=resources, k=cfg["k"])
    else:
        model, meta = load_checkpoint(cfg["checkpoint"])
        _check_checkpoint(meta, index)
        try:
            tau_rec = json.loads(Path(cfg["tau"]).read_text(encoding="utf-8"))
            tau = float(tau_rec["tau"])
        except (ValueError, KeyError, TypeError) as exc:
            raise EntNormError(f"{cfg['tau']}: not a threshold file ({exc})") from None
        if tau_rec.get("checkpoint_sha256") != meta["sha256"]:
            raise EntNormError("predict: threshold file was tuned for a different checkpoint")
        pipe = Pipeline(index=index, model=model, tau=tau, resources=resources, k=cfg["k"])
    decisions = link_dataset(ds, pipe)
    save_predictions(decisions, cfg["out"])
    n_nil = sum(1 for d in decisions if d.predicted is NIL)
    print(json.dumps({"predictions": str(cfg["out"]), "n": len(decisions), "n_nil": n_nil}, sort_keys=True))
    return 0


def cmd_evaluate(cfg) -> int:
    rows = load_predictions(cfg["predictions"])
    gold = load_dataset(cfg["gold"])
    if len(rows) != len(gold):
        raise EntNormError(f"evaluate: {len(rows)} predictions for {len(gold)} gold mentions")
    for i, (row, m) in enumerate(zip(rows, gold.mentions), start=1):
        if row.get("doc_id") != m.doc_id or row.get("mention") != m.text:
            raise EntNormError(f"evaluate: line {i} does not align with the gold file")
    report = evaluation_report([r["predicted"] for r in rows], gold)
    if cfg.get("out"):
        _write_json(cfg["out"], report)
    print(json.dumps(report, sort_keys=True))
    return 0


HANDLERS = {
    "synth": cmd_synth,
    "build-index": cmd_build_index,
    "train": cmd_train,
    "tune-threshold": cmd_tune_threshold,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    verbose = False
    try:
        ns = build_parser().parse_args(argv)
        if ns.command is None:
            raise UsageError("entnorm: a subcommand is required (see --help)")
        flags = {k: v for k, v in vars(ns).items() if k != "command"}
        cfg = resolve_config(ns.command, flags)
        verbose = bool(cfg.get("verbose"))
        logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s", stream=sys.stderr, force=True)
        started = time.perf_counter()
        code = HANDLERS[ns.command](cfg)
        logger.info("%s finished in %.1fs", ns.command, time.perf_counter() - started)
        return code
    except EntNormError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        if verbose:
            logging.getLogger("entnorm").exception("internal error")
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
