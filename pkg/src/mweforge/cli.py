"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 input-format failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field, replace

from . import evaluation, synth, verify
from .cupt import MWE_COLUMN, Corpus, CuptFormatError, encode_mwe_cells, parse_cupt, read_cupt, write_cupt
from .tagging import TagDecodeError, decode_tags, encode_tags
from .training import (
    METHODS,
    TrainConfig,
    history_csv,
    load_model,
    parse_config_text,
    predict_corpus,
    save_model,
    train,
)

EXIT_OK, EXIT_RUNTIME, EXIT_FORMAT = 0, 1, 2
TAG_COLUMN = "MWEFORGE:TAG"
SEED_ENV = "MWEFORGE_SEED"

log = logging.getLogger("mweforge")


class InputError(Exception):
    """Bad input data (maps to exit code 2)."""


@dataclass
class ExperimentSpec:
    train: dict[str, str]
    dev: dict[str, str] = field(default_factory=dict)
    test: dict[str, str] = field(default_factory=dict)
    method: str = "multilingual"
    config: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str = "run"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of: {', '.join(METHODS)}")
        if self.method == "monolingual" and len(self.train) != 1:
            raise ValueError(f"monolingual training needs exactly one language, got {len(self.train)}")
        if not self.train:
            raise ValueError("no training files given")

    @property
    def languages(self) -> list[str]:
        return list(self.train)


def _read(path) -> Corpus:
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    try:
        return read_cupt(path)
    except CuptFormatError as exc:
        raise InputError(f"{path}: {exc}") from exc


def _write(path, text: str) -> None:
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)


def _on_off(value: str) -> bool:
    return value == "on"


# -- convert ----------------------------------------------------------------


def _rename_header(text: str, old: str, new: str) -> str:
    return "\n".join(
        line.replace(old, new) if line.startswith("# global.columns") else line for line in text.split("\n")
    )


def cupt_to_tags(text: str) -> tuple[str, list[str]]:
    """Replace the MWE column by one IOB label per word; report dropped MWEs."""
    corpus = parse_cupt(text)
    dropped: list[str] = []
    for sent in corpus.sentences:
        enc = encode_tags(sent)
        dropped += [str(d) for d in enc.dropped]
        for tok, label in zip(sent.tokens, enc.labels):
            # an underscore cell (no annotation at all) survives as-is
            tok.mwe_cell = "_" if tok.mwe_cell == "_" and label == "O" else label
    return _rename_header(write_cupt(corpus, verbatim=True), MWE_COLUMN, TAG_COLUMN), dropped


def tags_to_cupt(text: str) -> str:
    corpus = parse_cupt(_rename_header(text, TAG_COLUMN, MWE_COLUMN), decode=False)
    for sent in corpus.sentences:
        labels = [tok.mwe_cell for tok in sent.tokens]
        try:
            mwes = decode_tags(["O" if lab == "_" else lab for lab in labels], strict=True)
        except TagDecodeError as exc:
            raise InputError(f"sentence {sent.sentence_id}: {exc}") from exc
        blank = ["_" if lab == "_" else "*" for lab in labels]
        for tok, cell in zip(sent.tokens, encode_mwe_cells(len(sent.tokens), mwes, blank)):
            tok.mwe_cell = cell
        sent.mwes = mwes
    return write_cupt(corpus)


def cmd_convert(args) -> int:
    text = _read_text(args.input)
    if args.direction == "cupt2tags":
        out, notes = cupt_to_tags(text)
    else:
        out, notes = tags_to_cupt(text), []
    _write(args.output, out)
    _write(args.output + ".diag", "".join(n + "\n" for n in notes))
    print(f"wrote {args.output} ({len(notes)} dropped MWE memberships)")
    return EXIT_OK


def _read_text(path) -> str:
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, encoding="utf-8", newline="") as f:
        return f.read()


# -- synth ------------------------------------------------------------------


def cmd_synth(args) -> int:
    corpora = synth.generate(args.languages, args.sentences, _seed(args))
    paths = synth.write_corpora(corpora, args.out)
    for p in paths:
        print(p)
    return EXIT_OK


# -- train / predict --------------------------------------------------------


def _seed(args) -> int:
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        return int(env)
    return args.seed if args.seed is not None else 0


def _pairs(values) -> dict[str, str]:
    out = {}
    for v in values or []:
        lang, sep, path = v.partition("=")
        if not sep:
            raise ValueError(f"expected LANG=PATH, got {v!r}")
        out[lang] = path
    return out


def build_config(args) -> tuple[str, TrainConfig]:
    """Config file, then method, then explicit flags, then the seed variable."""
    values: dict = {}
    if args.config:
        values.update(parse_config_text(_read_text(args.config)))
    method = args.method or values.pop("method", "multilingual")
    values.pop("method", None)
    overrides = {
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "learning_rate": args.lr,
        "max_seq_len": args.max_len,
        "k": args.k,
        "lam": args.lam,
        "embedding_dim": args.dim,
        "window_radius": args.radius,
        "optimizer": args.optimizer,
        "seed": args.seed,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    config = TrainConfig.from_mapping(values).with_method(method)
    if args.li is not None:
        config = replace(config, li_enabled=_on_off(args.li))
    if args.adv is not None:
        config = replace(config, adv_enabled=_on_off(args.adv))
    if os.environ.get(SEED_ENV):
        config = replace(config, seed=int(os.environ[SEED_ENV]))
    return method, config


def build_spec(args) -> ExperimentSpec:
    train_paths, dev_paths, test_paths = _pairs(args.train), _pairs(args.dev), _pairs(args.test)
    if args.data_dir:
        langs = args.languages.split(",") if args.languages else sorted(
            d for d in os.listdir(args.data_dir) if os.path.isdir(os.path.join(args.data_dir, d))
        )
        for lang in langs:
            base = os.path.join(args.data_dir, lang)
            train_paths.setdefault(lang, os.path.join(base, "train.cupt"))
            for split, table in (("dev", dev_paths), ("test", test_paths)):
                path = os.path.join(base, f"{split}.cupt")
                if os.path.exists(path):
                    table.setdefault(lang, path)
    method, config = build_config(args)
    return ExperimentSpec(train_paths, dev_paths, test_paths, method, config, args.out)


def cmd_train(args) -> int:
    spec = build_spec(args)
    cfg = spec.config
    print(
        f"method={spec.method} epochs={cfg.epochs} batch={cfg.batch_size} lr={cfg.learning_rate:g} "
        f"max_len={cfg.max_seq_len} k={cfg.k:g} lambda={cfg.lam:g} li={'on' if cfg.li_enabled else 'off'} "
        f"adv={'on' if cfg.adv_enabled else 'off'} seed={cfg.seed}"
    )
    for path in [*spec.train.values(), *spec.dev.values(), *spec.test.values()]:
        if not os.path.exists(path):
            raise FileNotFoundError(f"no such file: {path}")
    corpora = [(lang, _read(path)) for lang, path in spec.train.items()]
    result = train(corpora, cfg)
    out = spec.out_dir
    _write(os.path.join(out, "config.txt"), f"method = {spec.method}\n" + cfg.as_text())
    _write(os.path.join(out, "checkpoint.json"), save_model(result.model, cfg))
    _write(os.path.join(out, "history.csv"), history_csv(result.history))
    _write(os.path.join(out, "train.diag"), "".join(d + "\n" for d in result.diagnostics))
    if spec.test:
        items = []
        for lang, path in spec.test.items():
            gold = _read(path)
            pred = predict_corpus(result.model, gold, cfg)
            _write(os.path.join(out, "pred", f"{lang}.test.cupt"), write_cupt(pred))
            refs = [c for name, c in corpora if name == lang]
            if args.unseen_ref == "train+dev" and lang in spec.dev:
                refs.append(_read(spec.dev[lang]))
            items.append((lang, gold, pred, refs))
        report = evaluation.evaluate_languages(items, category_strict=_on_off(args.category_strict))
        _write(os.path.join(out, "report.txt"), evaluation.format_table(report, spec.method))
        _write(os.path.join(out, "report.csv"), evaluation.format_csv(report, spec.method))
        print(evaluation.format_table(report, spec.method), end="")
    last = result.history[-1]
    print(f"final epoch {last.epoch}: L_y={last.loss_y:.4f} L_ld={last.loss_ld:.4f} disc_acc={last.disc_accuracy:.3f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model, cfg = load_model(_read_text(args.checkpoint))
    pred = predict_corpus(model, _read(args.input), cfg)
    _write(args.output, write_cupt(pred))
    return EXIT_OK


# -- eval / delta -----------------------------------------------------------


def cmd_eval(args) -> int:
    gold, pred = _read(args.gold), _read(args.pred)
    refs = [_read(args.reference)]
    if args.dev and args.unseen_ref == "train+dev":
        refs.append(_read(args.dev))
    try:
        report = evaluation.evaluate_languages(
            [(args.language, gold, pred, refs)], category_strict=_on_off(args.category_strict)
        )
    except evaluation.AlignmentError as exc:
        raise InputError(str(exc)) from exc
    table = evaluation.format_table(report, args.method or "")
    if args.out:
        _write(args.out + ".txt", table)
        _write(args.out + ".csv", evaluation.format_csv(report, args.method or ""))
    print(table, end="")
    return EXIT_OK


def _f1_from_csv(path: str, language: str | None) -> tuple[float, float]:
    import csv

    found: dict[str, float] = {}
    with open(path, encoding="utf-8") as f:
        for row in csv.DictReader(f):
            if language in (None, row["language"]):
                found.setdefault(row["scope"], 100.0 * float(row["f1"]))
    if "global" not in found or "unseen" not in found:
        raise InputError(f"{path}: no global/unseen rows" + (f" for {language}" if language else ""))
    return found["global"], found["unseen"]


def cmd_delta(args) -> int:
    if args.baseline_report:
        baseline = _f1_from_csv(args.baseline_report, args.language)
        new = _f1_from_csv(args.new_report, args.language)
    else:
        vals = (args.baseline_global, args.baseline_unseen, args.new_global, args.new_unseen)
        if any(v is None for v in vals):
            raise ValueError("give either --baseline-report/--new-report or all four F1 values")
        baseline, new = (vals[0], vals[1]), (vals[2], vals[3])
    print(evaluation.format_delta(args.language or "all", baseline, new), end="")
    return EXIT_OK


# -- gradcheck --------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    results = verify.run_suite(args.inject_fault)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("FAILED: " + ", ".join(failed))
        return EXIT_RUNTIME
    print(f"all {len(results)} checks passed")
    return EXIT_OK


# -- argument parsing -------------------------------------------------------


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file with TrainConfig fields")
    p.add_argument("--method", choices=list(METHODS), help="default: multilingual")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--max-len", type=int)
    p.add_argument("--k", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--li", choices=["on", "off"])
    p.add_argument("--adv", choices=["on", "off"])
    p.add_argument("--dim", type=int, help="embedding width")
    p.add_argument("--radius", type=int, help="encoder window radius")
    p.add_argument("--optimizer", choices=["adam", "sgd"])


def _add_eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--unseen-ref", choices=["train", "train+dev"], default="train+dev")
    p.add_argument("--category-strict", choices=["on", "off"], default="off")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mweforge", description="Multilingual VMWE identification lab")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic .cupt corpora")
    p.add_argument("--languages", type=int, default=3)
    p.add_argument("--sentences", type=int, default=300, help="sentences per language")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("convert", help="convert between .cupt and per-token tags")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--direction", choices=["cupt2tags", "tags2cupt"], required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("train", help="train a tagger")
    p.add_argument("--data-dir", help="directory with LANG/{train,dev,test}.cupt")
    p.add_argument("--languages", help="comma-separated subset of languages in --data-dir")
    p.add_argument("--train", action="append", metavar="LANG=PATH")
    p.add_argument("--dev", action="append", metavar="LANG=PATH")
    p.add_argument("--test", action="append", metavar="LANG=PATH")
    p.add_argument("--out", default="run")
    _add_train_flags(p)
    _add_eval_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="tag a .cupt file with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="strict global/unseen MWE-based scores")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--reference", required=True, help="training corpus for unseen-ness")
    p.add_argument("--dev", help="dev corpus, added to the reference with --unseen-ref train+dev")
    p.add_argument("--language", default="all")
    p.add_argument("--method")
    p.add_argument("--out", help="output prefix; writes PREFIX.txt and PREFIX.csv")
    _add_eval_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("delta", help="relative F1 improvement over a baseline")
    p.add_argument("--language")
    p.add_argument("--baseline-report")
    p.add_argument("--new-report")
    p.add_argument("--baseline-global", type=float)
    p.add_argument("--baseline-unseen", type=float)
    p.add_argument("--new-global", type=float)
    p.add_argument("--new-unseen", type=float)
    p.set_defaults(func=cmd_delta)

    p = sub.add_parser("gradcheck", help="run the gradient and invariant suite")
    p.add_argument("--inject-fault", choices=sorted(verify.FAULTS), help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InputError, CuptFormatError, TagDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (OSError, ValueError, KeyError, IndexError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
