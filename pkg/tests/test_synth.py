from mweforge import synth
from mweforge.cupt import parse_cupt, read_cupt, write_cupt
from mweforge.evaluation import unseen_partition


def test_structure_and_parseability(tmp_path):
    paths = synth.write_corpora(synth.generate(3, 300, seed=0), tmp_path)
    assert len(paths) == 9
    for p in paths:
        corpus = read_cupt(p)
        assert corpus.sentences
        assert write_cupt(corpus) == open(p, encoding="utf-8").read()


def test_split_sizes():
    splits = synth.generate(1, 300, seed=0)["L1"]
    assert [len(splits[s]) for s in synth.SPLITS] == [210, 30, 60]


def test_same_seed_same_files():
    a, b = synth.generate(2, 80, seed=4), synth.generate(2, 80, seed=4)
    c = synth.generate(2, 80, seed=5)
    text = lambda d: [write_cupt(d[lang][s]) for lang in d for s in synth.SPLITS]
    assert text(a) == text(b)
    assert text(a) != text(c)


def test_languages_share_no_words():
    data = synth.generate(3, 100, seed=1)
    vocab = {
        lang: {t.lemma for s in data[lang]["train"] for t in s.tokens}
        for lang in data
    }
    langs = list(vocab)
    for i in range(len(langs)):
        for j in range(i + 1, len(langs)):
            assert not vocab[langs[i]] & vocab[langs[j]]


def test_test_split_has_unseen_mwes():
    for seed in range(3):
        for lang, splits in synth.generate(3, 300, seed=seed).items():
            seen, unseen = unseen_partition(splits["test"], [splits["train"], splits["dev"]])
            assert len(unseen) / (len(seen) + len(unseen)) >= 0.2


def test_mwes_have_two_or_three_tokens_and_some_gaps():
    corpus = synth.generate(1, 300, seed=0)["L1"]["train"]
    mwes = [m for s in corpus for m in s.mwes]
    assert {len(m.token_positions) for m in mwes} == {2, 3}
    assert any(m.span[1] - m.span[0] + 1 > len(m.token_positions) for m in mwes)


def test_header_on_first_sentence_only():
    text = write_cupt(synth.generate(1, 20, seed=0)["L1"]["train"])
    assert text.startswith("# global.columns = ID FORM LEMMA")
    assert text.count("global.columns") == 1
    assert parse_cupt(text).columns[-1] == "PARSEME:MWE"
