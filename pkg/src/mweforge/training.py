"""Monolingual, multilingual and language-adversarial training of the tagger."""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .cupt import Corpus, MweInstance, Sentence, encode_mwe_cells
from .layers import (
    LanguageDiscriminator,
    LateralInhibitionLayer,
    LinearHead,
    ToyEncoder,
    dump_tensors,
    grl_apply,
    li_forward,
    load_tensors,
)
from .tagging import OUTSIDE, decode_tags, encode_tags, label_vocabulary

log = logging.getLogger(__name__)

PAD, UNK = "<pad>", "<unk>"

# method name -> (li_enabled, adv_enabled)
METHODS = {
    "monolingual": (False, False),
    "multilingual": (False, False),
    "multilingual+LI": (True, False),
    "multilingual+Adv": (False, True),
    "multilingual+LI+Adv": (True, True),
}


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 3e-5
    max_seq_len: int = 150
    k: float = 10.0
    lam: float = 0.01
    li_enabled: bool = False
    adv_enabled: bool = False
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    optimizer: str = "adam"
    embedding_dim: int = 32
    window_radius: int = 2
    summary: str = "mean"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        for name in ("batch_size", "max_seq_len", "embedding_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate <= 0 or self.k <= 0:
            raise ValueError("learning_rate and k must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.window_radius < 0:
            raise ValueError("window_radius must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.summary not in ("mean", "first"):
            raise ValueError(f"unknown summary mode {self.summary!r}")

    def with_method(self, method: str) -> TrainConfig:
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
        li, adv = METHODS[method]
        return replace(self, li_enabled=li, adv_enabled=adv)

    @classmethod
    def from_mapping(cls, values: dict) -> TrainConfig:
        """Build from string key/values (config files, CLI overrides)."""
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            name = "lam" if key in ("lambda", "lambda_") else key
            if name not in types:
                raise KeyError(f"unknown config key {key!r}")
            kwargs[name] = _coerce(types[name], raw)
        return cls(**kwargs)

    def as_text(self) -> str:
        items = asdict(self)
        items["lambda"] = items.pop("lam")
        return "".join(f"{k} = {items[k]}\n" for k in sorted(items))


def _coerce(type_name, raw):
    if not isinstance(raw, str):
        return raw
    if type_name in ("bool", bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if type_name in ("int", int):
        return int(raw)
    if type_name in ("float", float):
        return float(raw)
    return raw.strip()


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ValueError(f"config line {lineno}: expected key = value")
        out[key.strip()] = val.strip()
    return out


# -- optimisation -----------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place."""
    for name, p in params.items():
        if grads[name].shape != p.shape:
            raise ad.ShapeError(f"adam_step: gradient {grads[name].shape} for parameter {name} of shape {p.shape}")
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


def sgd_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], lr: float) -> None:
    for name, p in params.items():
        p.data = p.data - lr * grads[name]


# -- vocabularies and model -------------------------------------------------


@dataclass
class Vocab:
    tokens: list[str]

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def build(cls, corpora) -> Vocab:
        seen = sorted({tok.form.lower() for c in corpora for s in c.sentences for tok in s.tokens})
        return cls([PAD, UNK, *seen])

    def ids(self, forms) -> list[int]:
        return [self.index.get(f.lower(), 1) for f in forms]

    def __len__(self) -> int:
        return len(self.tokens)


class Model:
    """Encoder F, classifier C (optional LI + linear head) and discriminator LD."""

    def __init__(self, vocab: Vocab, labels: list[str], languages: list[str], config: TrainConfig):
        rng = np.random.default_rng(config.seed)
        d = config.embedding_dim
        self.vocab = vocab
        self.labels = labels
        self.languages = languages
        self.encoder = ToyEncoder.init(len(vocab), d, config.window_radius, rng, summary=config.summary)
        self.li = LateralInhibitionLayer.init(d, rng, k=config.k) if config.li_enabled else None
        self.head = LinearHead.zeros(len(labels), d)
        self.disc = LanguageDiscriminator.init(d, len(languages), rng)

    def feature_params(self) -> dict[str, Tensor]:
        return self.encoder.params()

    def classifier_params(self) -> dict[str, Tensor]:
        out = dict(self.li.params()) if self.li is not None else {}
        out.update(self.head.params())
        return out

    def discriminator_params(self) -> dict[str, Tensor]:
        return self.disc.params()

    def params(self) -> dict[str, Tensor]:
        return {**self.feature_params(), **self.classifier_params(), **self.discriminator_params()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params().items()}


def save_model(model: Model, config: TrainConfig) -> str:
    meta = {
        "config": {**asdict(config)},
        "vocab": model.vocab.tokens,
        "labels": model.labels,
        "languages": model.languages,
    }
    return dump_tensors({n: p.data for n, p in model.params().items()}, meta)


def load_model(text: str) -> tuple[Model, TrainConfig]:
    tensors, meta = load_tensors(text)
    config = TrainConfig(**meta["config"])
    model = Model(Vocab(meta["vocab"]), meta["labels"], meta["languages"], config)
    params = model.params()
    if set(params) != set(tensors):
        raise ValueError("checkpoint tensors do not match the configured model")
    for name, arr in tensors.items():
        if params[name].shape != arr.shape:
            raise ValueError(f"checkpoint tensor {name} has shape {arr.shape}, expected {params[name].shape}")
        params[name].data = arr
    return model, config


# -- data -------------------------------------------------------------------


@dataclass
class Example:
    sentence_id: str
    ids: list[int]
    labels: list[int]
    language: int


@dataclass
class Batch:
    ids: np.ndarray  # B x T token ids, 0 = padding
    mask: np.ndarray  # B x T, 1.0 for real tokens
    labels: np.ndarray  # B x T label indices (0 on padding)
    languages: np.ndarray  # B

    def __len__(self) -> int:
        return self.ids.shape[0]


def truncate(sentence: Sentence, max_len: int, diagnostics: list[str] | None = None) -> Sentence:
    if len(sentence.tokens) <= max_len:
        return sentence
    kept = [m for m in sentence.mwes if m.span[1] <= max_len]
    if diagnostics is not None:
        diagnostics.append(f"{sentence.sentence_id}: truncated {len(sentence.tokens)} -> {max_len} tokens")
        for m in sentence.mwes:
            if m.span[1] > max_len:
                diagnostics.append(f"{sentence.sentence_id}: dropped MWE at {list(m.token_positions)} past the length limit")
    return Sentence(sentence.sentence_id, sentence.tokens[:max_len], kept)


def make_examples(corpus: Corpus, language: int, vocab: Vocab, labels: list[str], max_len: int,
                  diagnostics: list[str] | None = None) -> list[Example]:
    label_index = {lab: i for i, lab in enumerate(labels)}
    out = []
    for sent in corpus.sentences:
        if not sent.tokens:
            continue
        sent = truncate(sent, max_len, diagnostics)
        enc = encode_tags(sent)
        if diagnostics is not None:
            diagnostics.extend(f"dropped overlapping MWE: {d}" for d in enc.dropped)
        try:
            y = [label_index[lab] for lab in enc.labels]
        except KeyError as exc:
            raise ValueError(f"sentence {sent.sentence_id}: label {exc.args[0]} is not in the label vocabulary") from None
        out.append(Example(sent.sentence_id, vocab.ids(t.form for t in sent.tokens), y, language))
    return out


def collate(examples: list[Example]) -> Batch:
    width = max(len(e.ids) for e in examples)
    ids = np.zeros((len(examples), width), dtype=np.int64)
    mask = np.zeros((len(examples), width))
    labels = np.zeros((len(examples), width), dtype=np.int64)
    for i, e in enumerate(examples):
        n = len(e.ids)
        ids[i, :n] = e.ids
        mask[i, :n] = 1.0
        labels[i, :n] = e.labels
    return Batch(ids, mask, labels, np.array([e.language for e in examples], dtype=np.int64))


def make_batches(examples: list[Example], batch_size: int, rng: np.random.Generator | None = None) -> list[Batch]:
    """Chunk (optionally shuffled) examples into padded batches."""
    order = rng.permutation(len(examples)) if rng is not None else np.arange(len(examples))
    return [
        collate([examples[j] for j in order[i : i + batch_size]])
        for i in range(0, len(examples), batch_size)
    ]


# -- forward / backward -----------------------------------------------------


@dataclass
class ForwardResult:
    loss_y: Tensor
    loss_ld: Tensor
    token_probs: np.ndarray  # (B*T) x c
    language_probs: np.ndarray  # B x L
    summary: Tensor


def forward_pass(batch: Batch, model: Model, config: TrainConfig,
                 reversal: Callable | None = None) -> ForwardResult:
    """Encode, optional LI, MWE classifier, language discriminator, two losses.

    The discriminator sees the sentence summary through the reversal layer
    when ``adv_enabled``; otherwise through a detached copy, so it still
    learns but sends nothing back to the encoder.
    """
    c, n_lang = len(model.labels), len(model.languages)
    if batch.labels.size and batch.labels[batch.mask > 0].max(initial=0) >= c:
        raise IndexError(f"label index out of range for {c} labels")
    if batch.languages.max(initial=0) >= n_lang or batch.languages.min(initial=0) < 0:
        raise IndexError(f"language index out of range for {n_lang} languages")
    rows, summary = model.encoder.encode_batch(batch.ids, batch.mask)
    h = li_forward(rows, model.li) if config.li_enabled and model.li is not None else rows
    logits = model.head.logits(h)
    loss_y, token_probs = ad.softmax_cross_entropy(logits, batch.labels.reshape(-1), batch.mask.reshape(-1))
    if config.adv_enabled:
        disc_in = (reversal or grl_apply)(summary, config.lam)
    else:
        disc_in = ad.detach(summary)
    loss_ld, lang_probs = ad.softmax_cross_entropy(model.disc.logits(disc_in), batch.languages)
    return ForwardResult(loss_y, loss_ld, token_probs, lang_probs, summary)


def compute_gradients(tape: Tape, result: ForwardResult | None, model: Model) -> dict[str, np.ndarray]:
    """Gradients for all parameters from ``L_y + L_ld`` in one reverse pass.

    C receives only dL_y, LD only dL_ld, and F receives dL_y minus lambda
    times dL_ld because the reversal layer sits between LD and F.
    """
    if result is None or not tape.nodes:
        raise RuntimeError("backward_pass needs a completed forward_pass on this tape")
    params = model.params()
    total = ad.add(result.loss_y, result.loss_ld)
    grads = tape.backward(total, list(params.values()))
    return {name: grads[p] for name, p in params.items()}


class Optimizer:
    def __init__(self, config: TrainConfig):
        self.config = config
        self.state = AdamState()

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> None:
        cfg = self.config
        if cfg.optimizer == "sgd":
            sgd_step(params, grads, cfg.learning_rate)
        else:
            adam_step(params, grads, self.state, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)


def backward_pass(tape: Tape, result: ForwardResult | None, model: Model, optimizer: Optimizer) -> dict[str, np.ndarray]:
    grads = compute_gradients(tape, result, model)
    optimizer.step(model.params(), grads)
    return grads


def feature_gradient_paths(batch: Batch, model: Model, config: TrainConfig) -> dict[str, dict[str, np.ndarray]]:
    """Encoder gradients from each loss separately, reversal replaced by identity.

    Used to check that the combined gradient equals ``task - lambda * lang``.
    """
    out = {}
    identity = lambda x, lam: ad.custom_node((x,), ad.as_tensor(x).data, lambda g: (g,), name="identity")
    cfg = replace(config, adv_enabled=True)
    feats = model.feature_params()
    for key in ("task", "lang"):
        with Tape() as tape:
            res = forward_pass(batch, model, cfg, reversal=identity)
            loss = res.loss_y if key == "task" else res.loss_ld
            g = tape.backward(loss, list(feats.values()))
        out[key] = {n: g[p] for n, p in feats.items()}
    return out


# -- training loop ----------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    loss_y: float
    loss_ld: float
    disc_accuracy: float

    def csv_row(self) -> str:
        return f"{self.epoch},{self.loss_y!r},{self.loss_ld!r},{self.disc_accuracy!r}"


HISTORY_HEADER = "epoch,L_y,L_ld,discriminator_accuracy"


def history_csv(history: list[EpochRecord]) -> str:
    return HISTORY_HEADER + "\n" + "".join(r.csv_row() + "\n" for r in history)


def measure(model: Model, examples: list[Example], config: TrainConfig, epoch: int) -> EpochRecord:
    """Token-weighted L_y, sentence-weighted L_ld and discriminator accuracy."""
    sum_y = n_tok = sum_ld = correct = 0.0
    for batch in make_batches(examples, config.batch_size):
        res = forward_pass(batch, model, config)
        tokens = float(batch.mask.sum())
        sum_y += float(res.loss_y.data) * tokens
        n_tok += tokens
        sum_ld += float(res.loss_ld.data) * len(batch)
        correct += float((res.language_probs.argmax(axis=1) == batch.languages).sum())
    n = len(examples)
    return EpochRecord(epoch, float(sum_y / n_tok), float(sum_ld / n), float(correct / n))


@dataclass
class TrainResult:
    model: Model
    history: list[EpochRecord]
    diagnostics: list[str]
    initial: dict[str, np.ndarray]


def build_model(corpora: list[tuple[str, Corpus]], config: TrainConfig) -> Model:
    if not corpora:
        raise ValueError("need at least one training corpus")
    categories = {m.category or "_" for _, c in corpora for s in c.sentences for m in s.mwes}
    return Model(
        Vocab.build([c for _, c in corpora]),
        label_vocabulary(categories),
        [name for name, _ in corpora],
        config,
    )


def train(corpora: list[tuple[str, Corpus]], config: TrainConfig, model: Model | None = None) -> TrainResult:
    """Train on the concatenation of per-language corpora, one shuffle per epoch."""
    if not corpora or all(len(c.sentences) == 0 for _, c in corpora):
        raise ValueError("empty training corpus")
    diagnostics: list[str] = []
    if config.adv_enabled and len(corpora) < 2:
        msg = "adversarial training with a single language: the language loss is degenerate"
        log.warning(msg)
        diagnostics.append(msg)
    if model is None:
        model = build_model(corpora, config)
    examples: list[Example] = []
    for lang, (_, corpus) in enumerate(corpora):
        examples += make_examples(corpus, lang, model.vocab, model.labels, config.max_seq_len, diagnostics)
    if not examples:
        raise ValueError("empty training corpus")
    initial = model.snapshot()
    optimizer = Optimizer(config)
    rng = np.random.default_rng(config.seed + 1)
    history = [measure(model, examples, config, 0)]
    for epoch in range(1, config.epochs + 1):
        for batch in make_batches(examples, config.batch_size, rng):
            with Tape() as tape:
                res = forward_pass(batch, model, config)
                backward_pass(tape, res, model, optimizer)
        history.append(measure(model, examples, config, epoch))
        log.info("epoch %d: L_y=%.4f L_ld=%.4f disc_acc=%.3f", epoch, history[-1].loss_y,
                 history[-1].loss_ld, history[-1].disc_accuracy)
    return TrainResult(model, history, diagnostics, initial)


# -- inference --------------------------------------------------------------


def predict_labels(model: Model, sentence: Sentence, config: TrainConfig) -> list[str]:
    n = len(sentence.tokens)
    if n == 0:
        return []
    width = min(n, config.max_seq_len)
    ids = np.array([model.vocab.ids(t.form for t in sentence.tokens[:width])])
    rows, _ = model.encoder.encode_batch(ids, np.ones((1, width)))
    h = li_forward(rows, model.li) if config.li_enabled and model.li is not None else rows
    best = model.head.logits(h).data.argmax(axis=1)
    return [model.labels[i] for i in best] + [OUTSIDE] * (n - width)


def predict_corpus(model: Model, corpus: Corpus, config: TrainConfig) -> Corpus:
    """Copy of ``corpus`` whose MWE annotations are the model's predictions."""
    out = copy.deepcopy(corpus)
    out.diagnostics = []
    for sent in out.sentences:
        mwes = decode_tags(predict_labels(model, sent, config))
        sent.mwes = [MweInstance(m.mwe_id, m.category, m.token_positions) for m in mwes]
        blank = ["_" if t.mwe_cell == "_" else "*" for t in sent.tokens]
        for tok, cell in zip(sent.tokens, encode_mwe_cells(len(sent.tokens), sent.mwes, blank)):
            tok.mwe_cell = cell
    return out
