"""Reading and writing PARSEME ``.cupt`` corpora (CoNLL-U Plus + MWE column).

Parsed files are written back byte-for-byte. A sentence whose MWE list was
changed after parsing gets its MWE column regenerated with ids renumbered
1..n by first token position.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

CATEGORIES = frozenset(
    ["VID", "LVC.full", "LVC.cause", "IRV", "VPC.full", "VPC.semi", "MVC", "IAV", "LS.ICV"]
)

DEFAULT_COLUMNS = "ID FORM LEMMA UPOS XPOS FEATS HEAD DEPREL DEPS MISC PARSEME:MWE".split()
MWE_COLUMN = "PARSEME:MWE"
GLOBAL_COLUMNS_PREFIX = "# global.columns ="

_WORD_ID = re.compile(r"^[1-9][0-9]*$")


class CuptFormatError(ValueError):
    """Malformed input; ``lineno`` is 1-based."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno is not None else message)


@dataclass
class Token:
    position: int
    form: str
    lemma: str
    upos: str
    other_cols: list[str]
    mwe_cell: str = "*"

    @property
    def columns(self) -> list[str]:
        """All columns except the MWE one, in file order."""
        return [str(self.position), self.form, self.lemma, self.upos, *self.other_cols]


@dataclass(frozen=True)
class MweInstance:
    mwe_id: int
    category: str | None
    token_positions: tuple[int, ...]

    def __post_init__(self):
        pos = tuple(self.token_positions)
        if not pos:
            raise ValueError("an MWE needs at least one token")
        if list(pos) != sorted(set(pos)):
            raise ValueError(f"token positions must be strictly increasing: {pos}")
        object.__setattr__(self, "token_positions", pos)

    @property
    def span(self) -> tuple[int, int]:
        return self.token_positions[0], self.token_positions[-1]


@dataclass
class Sentence:
    sentence_id: str
    tokens: list[Token]
    mwes: list[MweInstance]
    metadata_lines: list[str] = field(default_factory=list)
    # range ("3-4") and empty-node ("5.1") lines: (number of words before it, raw line)
    extra_lines: list[tuple[int, str]] = field(default_factory=list)
    blank_lines_after: int = 1

    def lemma_of(self, position: int) -> str:
        return self.tokens[position - 1].lemma


@dataclass
class Corpus:
    sentences: list[Sentence] = field(default_factory=list)
    columns: list[str] = field(default_factory=lambda: list(DEFAULT_COLUMNS))
    leading_blank_lines: int = 0
    final_newline: bool = True
    diagnostics: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)


@dataclass
class CorpusStats:
    sentence_count: int
    token_count: int
    avg_sentence_length: float
    mwe_count: int
    per_category_counts: dict[str, int]

    def avg_display(self) -> str:
        return f"{self.avg_sentence_length:.1f}"


# -- MWE column codec -------------------------------------------------------


def decode_mwe_cells(cells: list[str], *, strict_categories: bool = False,
                     diagnostics: list[str] | None = None, where: str = "",
                     first_lineno: int | None = None) -> list[MweInstance]:
    """Turn per-token MWE cells into instances (ordered by id)."""
    positions: dict[int, list[int]] = {}
    categories: dict[int, str] = {}
    for i, cell in enumerate(cells, start=1):
        if cell in ("*", "_"):
            continue
        lineno = None if first_lineno is None else first_lineno + i - 1
        for part in cell.split(";"):
            ident, sep, cat = part.partition(":")
            if not ident.isdigit() or int(ident) < 1 or (sep and not cat):
                raise CuptFormatError(f"bad MWE code {part!r} in cell {cell!r}", lineno)
            mid = int(ident)
            if sep:
                if mid in categories:
                    raise CuptFormatError(f"category given twice for MWE {mid}", lineno)
                categories[mid] = cat
                if diagnostics is not None and cat not in CATEGORIES:
                    diagnostics.append(f"{where}unknown category {cat!r} for MWE {mid}")
            members = positions.setdefault(mid, [])
            if members and members[-1] == i:
                raise CuptFormatError(f"MWE {mid} listed twice on one token", lineno)
            members.append(i)
    out = []
    for mid in sorted(positions):
        cat = categories.get(mid)
        if cat is None and strict_categories and diagnostics is not None:
            diagnostics.append(f"{where}MWE {mid} has no category")
        out.append(MweInstance(mid, cat, tuple(positions[mid])))
    return out


def encode_mwe_cells(n_tokens: int, mwes: list[MweInstance], blank: list[str] | None = None) -> list[str]:
    """Canonical MWE column: ids 1..n by first position, category on first token.

    ``blank`` gives the empty marker per token ("*" by default).
    """
    ordered = sorted(mwes, key=lambda m: (m.token_positions, m.category or ""))
    cells: list[list[str]] = [[] for _ in range(n_tokens)]
    for new_id, m in enumerate(ordered, start=1):
        for j, p in enumerate(m.token_positions):
            if p < 1 or p > n_tokens:
                raise ValueError(f"MWE references token {p} but the sentence has {n_tokens} tokens")
            code = str(new_id)
            if j == 0 and m.category is not None:
                code += ":" + m.category
            cells[p - 1].append(code)
    blank = blank or ["*"] * n_tokens
    return [";".join(c) if c else blank[i] for i, c in enumerate(cells)]


def canonical_mwes(mwes: list[MweInstance]) -> list[MweInstance]:
    """Renumber ids 1..n by first token position."""
    ordered = sorted(mwes, key=lambda m: (m.token_positions, m.category or ""))
    return [MweInstance(i, m.category, m.token_positions) for i, m in enumerate(ordered, start=1)]


# -- parsing ----------------------------------------------------------------


def parse_cupt(text: str, *, strict_categories: bool = False, decode: bool = True) -> Corpus:
    """Parse a ``.cupt`` document.

    With ``decode=False`` the MWE column is kept as raw cells only (used for
    files whose last column holds something else, such as tag labels).
    """
    corpus = Corpus()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    else:
        corpus.final_newline = False if text else True
    ncols = len(corpus.columns)
    mwe_col = ncols - 1

    block: list[tuple[int, str]] = []
    blanks = 0

    def flush():
        nonlocal ncols, mwe_col
        sent = _parse_block(block, len(corpus.sentences), ncols, mwe_col, strict_categories,
                            corpus.diagnostics, decode)
        corpus.sentences.append(sent)

    for lineno, line in enumerate(lines, start=1):
        if line == "":
            if block:
                flush()
                block = []
                blanks = 1
            elif corpus.sentences:
                blanks += 1
            else:
                corpus.leading_blank_lines += 1
            if corpus.sentences:
                corpus.sentences[-1].blank_lines_after = blanks
            continue
        if line.startswith(GLOBAL_COLUMNS_PREFIX):
            cols = line[len(GLOBAL_COLUMNS_PREFIX):].split()
            if MWE_COLUMN not in cols:
                raise CuptFormatError(f"global.columns does not declare {MWE_COLUMN}", lineno)
            corpus.columns = cols
            ncols = len(cols)
            mwe_col = cols.index(MWE_COLUMN)
            if mwe_col != ncols - 1 or cols[:4] != DEFAULT_COLUMNS[:4]:
                raise CuptFormatError("expected ID FORM LEMMA UPOS first and PARSEME:MWE last", lineno)
        block.append((lineno, line))
    if block:
        flush()
        corpus.sentences[-1].blank_lines_after = 0
    elif corpus.sentences:
        corpus.sentences[-1].blank_lines_after = blanks
    return corpus


def _parse_block(block, index, ncols, mwe_col, strict_categories, diagnostics, decode=True) -> Sentence:
    metadata: list[str] = []
    tokens: list[Token] = []
    extra: list[tuple[int, str]] = []
    first_word_line = None
    sent_id = None
    source_id = None
    for lineno, line in block:
        if line.startswith("#"):
            if tokens or extra:
                raise CuptFormatError("comment line inside a sentence", lineno)
            metadata.append(line)
            key, sep, val = line[1:].partition("=")
            if sep:
                key = key.strip()
                if key == "sent_id":
                    sent_id = val.strip()
                elif key == "source_sent_id" and val.split():
                    # "<corpus> <file> <id>": the last field names the sentence
                    source_id = val.split()[-1]
            continue
        cols = line.split("\t")
        if len(cols) != ncols:
            raise CuptFormatError(f"expected {ncols} tab-separated columns, found {len(cols)}", lineno)
        ident = cols[0]
        if _WORD_ID.match(ident):
            pos = int(ident)
            if pos != len(tokens) + 1:
                raise CuptFormatError(f"word id {pos} out of sequence (expected {len(tokens) + 1})", lineno)
            if cols[1] == "":
                raise CuptFormatError("empty FORM", lineno)
            if first_word_line is None:
                first_word_line = lineno
            tokens.append(Token(pos, cols[1], cols[2], cols[3], cols[4:mwe_col], cols[mwe_col]))
        elif re.match(r"^[0-9]+(-[0-9]+|\.[0-9]+)$", ident):
            extra.append((len(tokens), line))
        else:
            raise CuptFormatError(f"unrecognised token id {ident!r}", lineno)
    sid = sent_id or source_id or str(index + 1)
    if not decode:
        return Sentence(sid, tokens, [], metadata, extra)
    mwes = decode_mwe_cells(
        [t.mwe_cell for t in tokens],
        strict_categories=strict_categories,
        diagnostics=diagnostics,
        where=f"sentence {sid}: ",
        first_lineno=first_word_line,
    )
    return Sentence(sid, tokens, mwes, metadata, extra)


def read_cupt(path, **kwargs) -> Corpus:
    with open(path, encoding="utf-8", newline="") as f:
        return parse_cupt(f.read(), **kwargs)


# -- writing ----------------------------------------------------------------


def sentence_mwe_cells(sentence: Sentence) -> list[str]:
    raw = [t.mwe_cell for t in sentence.tokens]
    try:
        parsed = decode_mwe_cells(raw)
    except CuptFormatError:
        parsed = None
    if parsed == list(sentence.mwes):
        return raw
    blank = ["_" if c == "_" else "*" for c in raw]
    return encode_mwe_cells(len(sentence.tokens), list(sentence.mwes), blank)


def write_cupt(corpus: Corpus, *, verbatim: bool = False) -> str:
    """Serialise ``corpus``; ``verbatim`` writes each token's raw MWE cell."""
    out: list[str] = [""] * corpus.leading_blank_lines
    for sent in corpus.sentences:
        out.extend(sent.metadata_lines)
        cells = [t.mwe_cell for t in sent.tokens] if verbatim else sentence_mwe_cells(sent)
        extra = sorted(sent.extra_lines, key=lambda e: e[0])
        k = 0
        for i, tok in enumerate(sent.tokens):
            while k < len(extra) and extra[k][0] == i:
                out.append(extra[k][1])
                k += 1
            out.append("\t".join([*tok.columns, cells[i]]))
        out.extend(line for _, line in extra[k:])
        out.extend([""] * sent.blank_lines_after)
    if not out:
        return ""
    text = "\n".join(out)
    return text + "\n" if corpus.final_newline else text


def save_cupt(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(write_cupt(corpus))


# -- statistics -------------------------------------------------------------


def corpus_stats(corpus: Corpus) -> CorpusStats:
    n_sent = len(corpus.sentences)
    n_tok = sum(len(s.tokens) for s in corpus.sentences)
    cats: Counter[str] = Counter()
    n_mwe = 0
    for s in corpus.sentences:
        for m in s.mwes:
            n_mwe += 1
            cats[m.category or "_"] += 1
    avg = n_tok / n_sent if n_sent else 0.0
    return CorpusStats(n_sent, n_tok, avg, n_mwe, dict(sorted(cats.items())))


def make_sentence(sentence_id: str, forms, lemmas=None, mwes=(), upos=None) -> Sentence:
    """Build a sentence with placeholder CoNLL-U columns."""
    lemmas = list(lemmas) if lemmas is not None else list(forms)
    upos = list(upos) if upos is not None else ["_"] * len(forms)
    tokens = [
        Token(i, f, l, u, ["_"] * 6)
        for i, (f, l, u) in enumerate(zip(forms, lemmas, upos), start=1)
    ]
    meta = [f"# source_sent_id = . . {sentence_id}", "# text = " + " ".join(forms)]
    sent = Sentence(sentence_id, tokens, [], meta)
    sent.mwes = canonical_mwes(list(mwes))
    for t, cell in zip(tokens, encode_mwe_cells(len(tokens), sent.mwes)):
        t.mwe_cell = cell
    return sent
