"""Strict MWE-based precision/recall/F1, globally and on unseen MWEs."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .cupt import Corpus, MweInstance, Sentence

SCOPES = ("global", "unseen", "seen")


class AlignmentError(ValueError):
    pass


@dataclass
class MatchCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: MatchCounts) -> MatchCounts:
        return MatchCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def _key(m: MweInstance, category_strict: bool):
    return (m.token_positions, m.category) if category_strict else m.token_positions


def strict_match(gold: list[MweInstance], pred: list[MweInstance], category_strict: bool = False) -> MatchCounts:
    """One-to-one exact matching on token-position sets (one sentence)."""
    pool = Counter(_key(g, category_strict) for g in gold)
    tp = 0
    for p in pred:
        k = _key(p, category_strict)
        if pool[k] > 0:
            pool[k] -= 1
            tp += 1
    return MatchCounts(tp, len(pred) - tp, len(gold) - tp)


def prf(counts: MatchCounts) -> tuple[float, float, float]:
    p = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    r = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def improvement_delta(baseline_f1: float, new_f1: float) -> float | None:
    """Relative change in percent; None when the baseline is zero."""
    if baseline_f1 == 0:
        return None
    return 100.0 * (new_f1 - baseline_f1) / baseline_f1


# -- seen / unseen ----------------------------------------------------------


def lemma_key(sentence: Sentence, mwe: MweInstance, diagnostics: list[str] | None = None) -> tuple[str, ...]:
    """Sorted lowercased lemmas of the MWE's tokens (a multiset)."""
    out = []
    for p in mwe.token_positions:
        tok = sentence.tokens[p - 1]
        lemma = tok.lemma
        if lemma in ("_", ""):
            if diagnostics is not None:
                diagnostics.append(f"{sentence.sentence_id}: token {p} has no lemma; using its form")
            lemma = tok.form
        out.append(lemma.lower())
    return tuple(sorted(out))


def reference_keys(reference, diagnostics: list[str] | None = None) -> set[tuple[str, ...]]:
    corpora = [reference] if isinstance(reference, Corpus) else list(reference)
    return {lemma_key(s, m, diagnostics) for c in corpora for s in c.sentences for m in s.mwes}


def unseen_partition(test: Corpus, reference, diagnostics: list[str] | None = None):
    """Split test gold MWEs into seen/unseen lists of (sentence index, mwe_id).

    ``reference`` is a corpus or a sequence of corpora (e.g. train and dev).
    """
    keys = reference_keys(reference, diagnostics)
    seen, unseen = [], []
    for i, s in enumerate(test.sentences):
        for m in s.mwes:
            (seen if lemma_key(s, m, diagnostics) in keys else unseen).append((i, m.mwe_id))
    return seen, unseen


# -- corpus-level evaluation ------------------------------------------------


@dataclass
class ScopeScores:
    counts: MatchCounts
    precision: float
    recall: float
    f1: float

    @classmethod
    def of(cls, counts: MatchCounts) -> ScopeScores:
        return cls(counts, *prf(counts))


@dataclass
class LanguageReport:
    language: str
    scores: dict[str, ScopeScores]
    seen_gold: int
    unseen_gold: int


@dataclass
class EvalReport:
    languages: list[LanguageReport] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)

    def average(self, scope: str) -> tuple[float, float, float]:
        """Unweighted mean of P, R, F1 over languages."""
        if not self.languages:
            return 0.0, 0.0, 0.0
        n = len(self.languages)
        rows = [lr.scores[scope] for lr in self.languages]
        return (
            sum(r.precision for r in rows) / n,
            sum(r.recall for r in rows) / n,
            sum(r.f1 for r in rows) / n,
        )


def check_alignment(gold: Corpus, pred: Corpus) -> None:
    if len(gold.sentences) != len(pred.sentences):
        first = gold.sentences[len(pred.sentences)].sentence_id if len(gold.sentences) > len(pred.sentences) else (
            pred.sentences[len(gold.sentences)].sentence_id)
        raise AlignmentError(
            f"gold has {len(gold.sentences)} sentences, prediction has {len(pred.sentences)}; first unmatched: {first}"
        )
    for g, p in zip(gold.sentences, pred.sentences):
        if g.sentence_id != p.sentence_id or [t.form for t in g.tokens] != [t.form for t in p.tokens]:
            raise AlignmentError(f"sentences diverge at {g.sentence_id}")


def evaluate_language(gold: Corpus, pred: Corpus, reference, language: str = "all",
                      category_strict: bool = False, diagnostics: list[str] | None = None) -> LanguageReport:
    check_alignment(gold, pred)
    keys = reference_keys(reference, diagnostics)
    totals = {scope: MatchCounts() for scope in SCOPES}
    n_seen = n_unseen = 0
    for g, p in zip(gold.sentences, pred.sentences):
        totals["global"] += strict_match(g.mwes, p.mwes, category_strict)
        g_flags = [lemma_key(g, m, diagnostics) in keys for m in g.mwes]
        # pred lemmas come from the gold tokens: prediction files may be blind
        p_flags = [lemma_key(g, m) in keys for m in p.mwes]
        g_seen = [m for m, s in zip(g.mwes, g_flags) if s]
        g_unseen = [m for m, s in zip(g.mwes, g_flags) if not s]
        p_seen = [m for m, s in zip(p.mwes, p_flags) if s]
        p_unseen = [m for m, s in zip(p.mwes, p_flags) if not s]
        n_unseen += len(g_unseen)
        n_seen += len(g_seen)
        totals["unseen"] += strict_match(g_unseen, p_unseen, category_strict)
        totals["seen"] += strict_match(g_seen, p_seen, category_strict)
    return LanguageReport(language, {s: ScopeScores.of(c) for s, c in totals.items()}, n_seen, n_unseen)


def evaluate(gold: Corpus, pred: Corpus, reference, category_strict: bool = False) -> EvalReport:
    report = EvalReport()
    report.languages.append(evaluate_language(gold, pred, reference, "all", category_strict, report.diagnostics))
    return report


def evaluate_languages(items, category_strict: bool = False) -> EvalReport:
    """``items``: iterable of (language, gold, pred, reference)."""
    report = EvalReport()
    for lang, gold, pred, ref in items:
        report.languages.append(evaluate_language(gold, pred, ref, lang, category_strict, report.diagnostics))
    return report


# -- rendering --------------------------------------------------------------


def format_table(report: EvalReport, method: str = "") -> str:
    """Aligned text table: P, R, F1 for global and unseen scopes."""
    head = ["Language", "Method", "Global P", "Global R", "Global F1", "Unseen P", "Unseen R", "Unseen F1"]
    rows = []
    for lr in report.languages:
        g, u = lr.scores["global"], lr.scores["unseen"]
        rows.append([lr.language, method, *(f"{v:.3f}" for v in (g.precision, g.recall, g.f1, u.precision, u.recall, u.f1))])
    if len(report.languages) > 1:
        rows.append(["Average", method, *(f"{v:.3f}" for v in (*report.average("global"), *report.average("unseen")))])
    widths = [max(len(r[i]) for r in [head, *rows]) for i in range(len(head))]
    lines = []
    for r in [head, *rows]:
        cells = [r[0].ljust(widths[0]), r[1].ljust(widths[1])] + [c.rjust(w) for c, w in zip(r[2:], widths[2:])]
        lines.append("  ".join(cells).rstrip())
    rule = "-" * len(lines[0])
    return "\n".join([lines[0], rule, *lines[1:]]) + "\n"


CSV_HEADER = "language,method,scope,tp,fp,fn,precision,recall,f1,seen_gold,unseen_gold"


def format_csv(report: EvalReport, method: str = "") -> str:
    out = [CSV_HEADER]
    for lr in report.languages:
        for scope in SCOPES:
            s = lr.scores[scope]
            c = s.counts
            out.append(
                f"{lr.language},{method},{scope},{c.tp},{c.fp},{c.fn},"
                f"{s.precision!r},{s.recall!r},{s.f1!r},{lr.seen_gold},{lr.unseen_gold}"
            )
    return "\n".join(out) + "\n"


def format_delta(language: str, baseline: tuple[float, float], new: tuple[float, float]) -> str:
    """Relative F1 change for the global and unseen scopes, one decimal."""
    parts = []
    for scope, b, n in (("global", baseline[0], new[0]), ("unseen", baseline[1], new[1])):
        d = improvement_delta(b, n)
        parts.append(f"{scope} {b:.2f} -> {n:.2f}: " + ("n/a" if d is None else f"{d:+.1f}%"))
    return f"{language}: " + "; ".join(parts) + "\n"
