"""Synthetic multilingual ``.cupt`` corpora with implanted MWEs.

Each language gets its own vocabulary (disjoint from every other language),
a set of MWE patterns of 2-3 lemmas and a held-out set of patterns built
from lexemes that never occur in train or dev. Roughly 30% of the test
MWEs come from the held-out patterns.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .cupt import Corpus, MweInstance, Sentence, make_sentence, save_cupt

VOCAB_SIZE = 200
GAP_PROB = 0.3
SPLITS = ("train", "dev", "test")
SPLIT_SHARES = (0.7, 0.1, 0.2)
CATEGORY_POOL = ("VID", "LVC.full", "LVC.cause", "IRV", "VPC.full", "IAV")

_ONSETS = list("bdfgklmnprstvz") + ["ch", "sh", "th", "gr", "pl", "tr", "kr", "st"]
_VOWELS = list("aeiou") + ["ai", "ou", "ea"]


@dataclass
class Pattern:
    lemmas: tuple[str, ...]
    category: str


@dataclass
class Language:
    name: str
    fillers: list[str]
    verbs: list[str]
    inflections: tuple[str, str]
    seen: list[Pattern]
    unseen: list[Pattern]


def _word(rng: np.random.Generator, used: set[str]) -> str:
    while True:
        n = int(rng.integers(2, 4))
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(n))
        if w not in used:
            used.add(w)
            return w


def make_language(name: str, rng: np.random.Generator, used: set[str]) -> Language:
    words = [_word(rng, used) for _ in range(VOCAB_SIZE)]
    # 130 fillers, 10 verbs, 40 partners for seen patterns, 20 held-out lexemes
    fillers, verbs, partners, held = words[:130], words[130:140], words[140:180], words[180:]

    def patterns(heads, tails, count):
        out, k = [], 0
        for i in range(count):
            size = 2 if rng.random() < 0.6 else 3
            lemmas = [heads[i % len(heads)], *tails[k : k + size - 1]]
            k += size - 1
            if k > len(tails):
                break
            out.append(Pattern(tuple(lemmas), CATEGORY_POOL[rng.integers(len(CATEGORY_POOL))]))
        return out

    seen = patterns(verbs, partners, 20)
    unseen = patterns(held[:6], held[6:], 6)
    suffixes = (_VOWELS[rng.integers(3)] + "n", _VOWELS[3 + rng.integers(2)] + "t")
    return Language(name, fillers, verbs, suffixes, seen, unseen)


def _sentence(lang: Language, rng: np.random.Generator, sid: str, patterns: list[Pattern]) -> Sentence:
    """Fillers with the given patterns implanted left to right."""
    lemmas: list[str] = []
    pos_tags: list[str] = []
    mwes: list[MweInstance] = []

    def fill(n):
        for _ in range(n):
            lemmas.append(lang.fillers[rng.integers(len(lang.fillers))])
            pos_tags.append("NOUN")

    fill(int(rng.integers(1, 5)))
    for pat in patterns:
        positions = []
        for j, lemma in enumerate(pat.lemmas):
            if j > 0 and rng.random() < GAP_PROB:
                fill(1)
            lemmas.append(lemma)
            pos_tags.append("VERB" if j == 0 else "NOUN")
            positions.append(len(lemmas))
        mwes.append(MweInstance(len(mwes) + 1, pat.category, tuple(positions)))
        fill(int(rng.integers(1, 4)))
    if rng.random() < 0.15:
        # a pattern verb used on its own, outside any MWE
        lemmas.insert(0, lang.verbs[rng.integers(len(lang.verbs))])
        pos_tags.insert(0, "VERB")
        mwes = [MweInstance(m.mwe_id, m.category, tuple(p + 1 for p in m.token_positions)) for m in mwes]
    forms = [
        lem + lang.inflections[rng.integers(2)] if tag == "VERB" else lem
        for lem, tag in zip(lemmas, pos_tags)
    ]
    return make_sentence(sid, forms, lemmas, mwes, pos_tags)


def generate_language(lang: Language, sentences: int, rng: np.random.Generator) -> dict[str, Corpus]:
    sizes = [int(round(sentences * s)) for s in SPLIT_SHARES[:2]]
    sizes.append(max(sentences - sum(sizes), 0))
    out = {}
    test_mwe = 0
    for split, size in zip(SPLITS, sizes):
        corpus = Corpus()
        for i in range(size):
            n_mwes = int(rng.choice([0, 1, 1, 1, 2]))
            chosen = []
            for _ in range(n_mwes):
                if split == "test" and test_mwe % 10 < 3 and lang.unseen:
                    pool = lang.unseen
                else:
                    pool = lang.seen
                if split == "test":
                    test_mwe += 1
                chosen.append(pool[rng.integers(len(pool))])
            sid = f"{lang.name}-{split}-{i + 1:04d}"
            corpus.sentences.append(_sentence(lang, rng, sid, chosen))
        if corpus.sentences:
            corpus.sentences[0].metadata_lines.insert(0, "# global.columns = " + " ".join(corpus.columns))
        out[split] = corpus
    return out


def language_names(n: int) -> list[str]:
    return [f"L{i + 1}" for i in range(n)]


def generate(languages: int = 3, sentences: int = 300, seed: int = 0) -> dict[str, dict[str, Corpus]]:
    """``sentences`` per language, split 70/10/20 into train/dev/test."""
    if languages < 1:
        raise ValueError("need at least one language")
    rng = np.random.default_rng(seed)
    used: set[str] = set()
    specs = [make_language(name, rng, used) for name in language_names(languages)]
    return {spec.name: generate_language(spec, sentences, rng) for spec in specs}


def write_corpora(corpora: dict[str, dict[str, Corpus]], out_dir) -> list[str]:
    paths = []
    for lang, splits in corpora.items():
        os.makedirs(os.path.join(out_dir, lang), exist_ok=True)
        for split, corpus in splits.items():
            path = os.path.join(out_dir, lang, f"{split}.cupt")
            save_cupt(corpus, path)
            paths.append(path)
    return paths
