import math

import numpy as np
import pytest

from mweforge import synth
from mweforge.autodiff import Tape, Tensor
from mweforge.cupt import Corpus, MweInstance, make_sentence, write_cupt
from mweforge.tagging import encode_tags
from mweforge.training import (
    METHODS,
    AdamState,
    Batch,
    Model,
    Optimizer,
    TrainConfig,
    Vocab,
    adam_step,
    backward_pass,
    compute_gradients,
    feature_gradient_paths,
    forward_pass,
    history_csv,
    load_model,
    make_batches,
    make_examples,
    parse_config_text,
    predict_corpus,
    predict_labels,
    save_model,
    train,
    truncate,
)
from mweforge.verify import decomposition_law

LABELS = ["O", "o-", "B-VID", "I-VID"]
FAST = dict(learning_rate=1e-2, embedding_dim=16, window_radius=1)


@pytest.fixture(scope="module")
def corpora():
    data = synth.generate(3, 60, seed=11)
    return [(lang, splits["train"]) for lang, splits in data.items()]


def _model(cfg, languages=("a", "b", "c")):
    return Model(Vocab(["<pad>", "<unk>", "x", "y", "z"]), LABELS, list(languages), cfg)


def _batch(rng, n=4, t=5, languages=3):
    return Batch(
        rng.integers(1, 5, size=(n, t)),
        np.ones((n, t)),
        rng.integers(0, 4, size=(n, t)),
        rng.integers(0, languages, size=n),
    )


# -- config -----------------------------------------------------------------


def test_config_defaults():
    cfg = TrainConfig()
    assert (cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.max_seq_len, cfg.k, cfg.lam) == (
        10, 32, 3e-5, 150, 10.0, 0.01,
    )
    assert (cfg.beta1, cfg.beta2, cfg.adam_eps) == (0.9, 0.999, 1e-8)


def test_config_validation():
    for bad in (dict(batch_size=0), dict(learning_rate=0.0), dict(k=-1.0), dict(lam=-0.1), dict(max_seq_len=0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_config_text_round_trip():
    cfg = TrainConfig(lam=0.5, li_enabled=True, seed=9, optimizer="sgd")
    assert TrainConfig.from_mapping(parse_config_text(cfg.as_text())) == cfg
    with pytest.raises(KeyError):
        TrainConfig.from_mapping({"nope": "1"})


def test_method_table():
    assert METHODS["multilingual+LI+Adv"] == (True, True)
    cfg = TrainConfig().with_method("multilingual+Adv")
    assert (cfg.li_enabled, cfg.adv_enabled) == (False, True)


# -- optimiser --------------------------------------------------------------


def test_adam_first_step():
    p = {"w": Tensor(np.array([0.0]))}
    adam_step(p, {"w": np.array([1.0])}, AdamState(), lr=3e-5)
    assert p["w"].data[0] == pytest.approx(-3e-5 / (1 + 1e-8), rel=1e-12)


def test_adam_zero_gradient():
    p = {"w": Tensor(np.array([1.0, -2.0]))}
    state = AdamState()
    adam_step(p, {"w": np.array([0.5, 0.5])}, state, lr=0.1)
    before, m = p["w"].data.copy(), state.m["w"].copy()
    adam_step(p, {"w": np.zeros(2)}, state, lr=0.1)
    # the decayed first moment still moves the parameter; with fresh state it would not
    assert np.allclose(state.m["w"], 0.9 * m)
    fresh = {"w": Tensor(before.copy())}
    adam_step(fresh, {"w": np.zeros(2)}, AdamState(), lr=0.1)
    assert np.array_equal(fresh["w"].data, before)


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step({"w": Tensor(np.zeros(2))}, {"w": np.zeros(3)}, AdamState(), lr=0.1)


def test_adam_is_deterministic():
    def run():
        rng = np.random.default_rng(0)
        p = {"w": Tensor(rng.normal(size=(3, 3)))}
        state = AdamState()
        for _ in range(5):
            adam_step(p, {"w": rng.normal(size=(3, 3))}, state, lr=1e-3)
        return p["w"].data

    assert run().tobytes() == run().tobytes()


# -- forward / backward -----------------------------------------------------


def test_untrained_loss_is_log_c():
    cfg = TrainConfig(**FAST)
    res = forward_pass(_batch(np.random.default_rng(0)), _model(cfg), cfg)
    assert res.loss_y.item() == pytest.approx(math.log(4), abs=1e-12)
    assert res.loss_ld.item() == pytest.approx(math.log(3), abs=1e-12)


def test_single_language_loss_is_zero():
    cfg = TrainConfig(**FAST)
    res = forward_pass(_batch(np.random.default_rng(0), languages=1), _model(cfg, ["only"]), cfg)
    assert res.loss_ld.item() == 0.0


def test_all_pass_li_matches_no_li():
    cfg_li = TrainConfig(li_enabled=True, **FAST)
    model = _model(cfg_li)
    rng = np.random.default_rng(1)
    model.head.W.data = rng.normal(size=model.head.W.shape)
    model.li.W.data[:] = 0.0
    model.li.B.data[:] = 1.0
    batch = _batch(rng)
    with_li = forward_pass(batch, model, cfg_li).loss_y.item()
    without = forward_pass(batch, model, TrainConfig(**FAST)).loss_y.item()
    assert with_li == without


def test_out_of_range_indices():
    cfg = TrainConfig(**FAST)
    batch = _batch(np.random.default_rng(0))
    batch.labels[0, 0] = 4
    with pytest.raises(IndexError):
        forward_pass(batch, _model(cfg), cfg)
    batch = _batch(np.random.default_rng(0))
    batch.languages[0] = 3
    with pytest.raises(IndexError):
        forward_pass(batch, _model(cfg), cfg)


def test_backward_without_forward():
    cfg = TrainConfig(**FAST)
    with Tape() as tape:
        with pytest.raises(RuntimeError):
            compute_gradients(tape, None, _model(cfg))


def test_decomposition_law():
    assert decomposition_law(seed=3).passed


def test_lambda_zero_is_pure_task_training():
    rng = np.random.default_rng(2)
    batch = _batch(rng)
    grads = {}
    for adv in (True, False):
        cfg = TrainConfig(lam=0.0, adv_enabled=adv, li_enabled=True, **FAST)
        model = _model(cfg)
        model.head.W.data = np.random.default_rng(5).normal(size=model.head.W.shape)
        with Tape() as tape:
            g = compute_gradients(tape, forward_pass(batch, model, cfg), model)
        grads[adv] = {n: g[n] for n in model.feature_params()}
    for name in grads[True]:
        assert np.array_equal(grads[True][name], grads[False][name])


def test_classifier_untouched_by_language_loss():
    cfg = TrainConfig(adv_enabled=True, li_enabled=True, **FAST)
    model = _model(cfg)
    rng = np.random.default_rng(3)
    model.disc.W2.data = rng.normal(size=model.disc.W2.shape)
    batch = _batch(rng)
    with Tape() as tape:
        res = forward_pass(batch, model, cfg)
        params = model.classifier_params()
        g = tape.backward(res.loss_ld, list(params.values()))
    assert all(not np.any(v) for v in g.values())


def test_discriminator_gradient_unaffected_by_reversal():
    rng = np.random.default_rng(4)
    batch = _batch(rng)
    out = {}
    for adv in (True, False):
        cfg = TrainConfig(adv_enabled=adv, **FAST)
        model = _model(cfg)
        with Tape() as tape:
            g = compute_gradients(tape, forward_pass(batch, model, cfg), model)
        out[adv] = {n: g[n] for n in model.discriminator_params()}
    for name in out[True]:
        assert np.array_equal(out[True][name], out[False][name])


def test_feature_paths_are_separate():
    cfg = TrainConfig(adv_enabled=True, **FAST)
    model = _model(cfg)
    model.head.W.data = np.random.default_rng(0).normal(size=model.head.W.shape)
    paths = feature_gradient_paths(_batch(np.random.default_rng(1)), model, cfg)
    assert set(paths) == {"task", "lang"}
    assert any(np.any(v) for v in paths["task"].values())


def test_backward_pass_updates_parameters():
    cfg = TrainConfig(adv_enabled=True, li_enabled=True, **FAST)
    model = _model(cfg)
    before = model.snapshot()
    with Tape() as tape:
        backward_pass(tape, forward_pass(_batch(np.random.default_rng(0)), model, cfg), model, Optimizer(cfg))
    after = model.snapshot()
    assert any(not np.array_equal(before[n], after[n]) for n in before)


# -- data -------------------------------------------------------------------


def test_batch_sizes():
    corpus = Corpus([make_sentence(f"s{i}", ["x", "y"]) for i in range(70)])
    examples = make_examples(corpus, 0, Vocab(["<pad>", "<unk>", "x", "y"]), LABELS, 150)
    assert [len(b) for b in make_batches(examples, 32)] == [32, 32, 6]


def test_padding_never_counts():
    vocab = Vocab(["<pad>", "<unk>", "x", "y"])
    cfg = TrainConfig(**FAST)
    model = _model(cfg)
    model.head.W.data = np.random.default_rng(0).normal(size=model.head.W.shape)
    short = make_sentence("a", ["x", "y"], mwes=[MweInstance(1, "VID", (1, 2))])
    long = make_sentence("b", ["y"] * 6)
    ex = make_examples(Corpus([short, long]), 0, vocab, LABELS, 150)
    both = forward_pass(make_batches(ex, 2)[0], model, cfg)
    alone = [forward_pass(make_batches([e], 1)[0], model, cfg) for e in ex]
    weighted = (alone[0].loss_y.item() * 2 + alone[1].loss_y.item() * 6) / 8
    assert both.loss_y.item() == pytest.approx(weighted, abs=1e-12)


def test_truncation_drops_late_mwes_with_diagnostic():
    sent = make_sentence(
        "long", ["w"] * 200,
        mwes=[MweInstance(1, "VID", (3, 7)), MweInstance(2, "IRV", (148, 151)), MweInstance(3, "VID", (190, 195))],
    )
    notes: list[str] = []
    cut = truncate(sent, 150, notes)
    assert len(cut.tokens) == 150
    assert [m.token_positions for m in cut.mwes] == [(3, 7)]
    assert len(notes) == 3
    assert len(sent.tokens) == 200  # the original is untouched


def test_shuffle_is_seeded():
    corpus = Corpus([make_sentence(f"s{i}", ["x"] * (i % 5 + 1)) for i in range(40)])
    ex = make_examples(corpus, 0, Vocab(["<pad>", "<unk>", "x"]), LABELS, 150)
    a = make_batches(ex, 8, np.random.default_rng(3))
    b = make_batches(ex, 8, np.random.default_rng(3))
    assert all(np.array_equal(x.ids, y.ids) for x, y in zip(a, b))


# -- end to end -------------------------------------------------------------


def test_empty_corpus_is_an_error():
    with pytest.raises(ValueError):
        train([("xx", Corpus())], TrainConfig())


def test_single_language_adversarial_warns():
    corpus = Corpus([make_sentence("s", ["x", "y"])])
    res = train([("xx", corpus)], TrainConfig(epochs=1, adv_enabled=True, **FAST))
    assert any("single language" in d for d in res.diagnostics)


def test_zero_epochs_returns_initial_model(corpora):
    res = train(corpora, TrainConfig(epochs=0, **FAST))
    snap = res.model.snapshot()
    assert all(np.array_equal(snap[n], res.initial[n]) for n in snap)
    assert len(res.history) == 1


@pytest.mark.parametrize("method", list(METHODS))
def test_every_variant_lowers_training_loss(corpora, method):
    data = corpora[:1] if method == "monolingual" else corpora
    res = train(data, TrainConfig(epochs=3, **FAST).with_method(method))
    assert res.history[-1].loss_y < res.history[0].loss_y


def test_training_is_deterministic(corpora):
    cfg = TrainConfig(epochs=2, li_enabled=True, adv_enabled=True, **FAST)
    a, b = train(corpora, cfg), train(corpora, cfg)
    assert history_csv(a.history) == history_csv(b.history)
    assert save_model(a.model, cfg) == save_model(b.model, cfg)


def test_monolingual_tag_accuracy():
    corpus = synth.generate(1, 150, seed=2)["L1"]["train"]
    cfg = TrainConfig(learning_rate=1e-2, batch_size=8).with_method("monolingual")
    model = train([("L1", corpus)], cfg).model
    right = total = 0
    for sent in corpus.sentences:
        gold = encode_tags(sent).labels
        pred = predict_labels(model, sent, cfg)
        right += sum(g == p for g, p in zip(gold, pred))
        total += len(gold)
    assert right / total >= 0.95


def test_checkpoint_round_trip(corpora):
    cfg = TrainConfig(epochs=1, li_enabled=True, **FAST)
    res = train(corpora, cfg)
    text = save_model(res.model, cfg)
    model, cfg2 = load_model(text)
    assert cfg2 == cfg
    assert save_model(model, cfg2) == text
    test = corpora[0][1]
    assert write_cupt(predict_corpus(model, test, cfg2)) == write_cupt(predict_corpus(res.model, test, cfg))


def test_prediction_keeps_everything_but_mwes(corpora):
    cfg = TrainConfig(epochs=1, **FAST)
    model = train(corpora, cfg).model
    gold = corpora[0][1]
    pred = predict_corpus(model, gold, cfg)
    for g, p in zip(gold.sentences, pred.sentences):
        assert [t.columns for t in g.tokens] == [t.columns for t in p.tokens]
        assert g.metadata_lines == p.metadata_lines
