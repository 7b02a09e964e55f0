"""Model components: lateral inhibition, gradient reversal, heads, toy encoder.

Everything uses the row-vector convention: a token embedding is a row, a
batch of tokens is an ``n x d`` matrix and linear maps are ``X @ W.T + b``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_FORMAT = "mweforge-checkpoint"
CHECKPOINT_VERSION = 1


# -- gate primitives --------------------------------------------------------


def heaviside(x, k: float = 10.0) -> Tensor:
    """Hard step (``x > 0``) whose backward uses the slope of ``sigmoid(k x)``."""
    x = ad.as_tensor(x)
    k = float(k)
    value = (x.data > 0).astype(np.float64)

    def back(g):
        s = ad._sigmoid(k * x.data)
        return (g * k * s * (1.0 - s),)

    return ad.custom_node((x,), value, back, name="heaviside")


def zero_diag(m) -> Tensor:
    m = ad.as_tensor(m)
    if m.data.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ad.ShapeError(f"zero_diag: expected a square matrix, got {m.shape}")
    return ad.mul(m, Tensor(1.0 - np.eye(m.shape[0])))


# -- lateral inhibition -----------------------------------------------------


@dataclass
class LateralInhibitionLayer:
    W: Tensor
    B: Tensor
    k: float = 10.0
    smooth: bool = False  # forward with sigmoid gates instead of hard steps

    def __post_init__(self):
        d = self.B.shape[0]
        if self.W.data.ndim != 2 or self.W.shape[0] != self.W.shape[1]:
            raise ad.ShapeError(f"lateral inhibition weights must be square, got {self.W.shape}")
        if self.W.shape[0] != d:
            raise ad.ShapeError(f"bias length {d} does not match weights {self.W.shape}")
        if self.k <= 0:
            raise ValueError("k must be positive")

    @classmethod
    def init(cls, d: int, rng: np.random.Generator, k: float = 10.0) -> LateralInhibitionLayer:
        W = Tensor(rng.uniform(-0.1, 0.1, size=(d, d)), requires_grad=True, name="li.W")
        B = Tensor(np.full(d, 0.5), requires_grad=True, name="li.B")
        return cls(W, B, k)

    def params(self) -> dict[str, Tensor]:
        return {"li.W": self.W, "li.B": self.B}


def li_preactivation(X: np.ndarray, W: np.ndarray, B: np.ndarray) -> np.ndarray:
    Z = (W * (1.0 - np.eye(W.shape[0]))).T
    return X @ Z + B


def li_smooth_grads(X, W, B, k, G):
    """Gradients of ``sum(G * X * sigmoid_k(X ZeroDiag(W^T) + B))``.

    Returns (dX, dW, dB).
    """
    mask = 1.0 - np.eye(W.shape[0])
    Z = (W * mask).T
    s = ad._sigmoid(k * (X @ Z + B))
    ds = k * s * (1.0 - s)
    dP = G * X * ds
    dX = G * s + dP @ Z.T
    dW = (dP.T @ X) * mask
    dB = dP.sum(axis=0)
    return dX, dW, dB


def li_forward(X, layer: LateralInhibitionLayer) -> Tensor:
    """Gate each coordinate of each row by a step of its neighbours' weighted sum.

    The hard layer's backward is the exact gradient of the smoothed layer
    ``X * sigmoid_k(pre)``, gate dependence on ``X`` included.
    """
    X = ad.as_tensor(X)
    if X.data.ndim != 2 or X.shape[1] != layer.W.shape[0]:
        raise ad.ShapeError(f"li_forward: input {X.shape} does not match layer width {layer.W.shape[0]}")
    if layer.smooth:
        Z = ad.transpose(zero_diag(layer.W))
        pre = ad.add_bias(ad.matmul(X, Z), layer.B)
        return ad.mul(X, ad.sigmoid(pre, layer.k))
    Xd, Wd, Bd, k = X.data, layer.W.data, layer.B.data, layer.k
    gate = (li_preactivation(Xd, Wd, Bd) > 0).astype(np.float64)
    return ad.custom_node(
        (X, layer.W, layer.B),
        Xd * gate,
        lambda g: li_smooth_grads(Xd, Wd, Bd, k, g),
        name="lateral_inhibition",
    )


# -- gradient reversal ------------------------------------------------------


def grl_apply(x, lam: float) -> Tensor:
    """Identity forward; multiplies the incoming gradient by ``-lam``."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    x = ad.as_tensor(x)
    lam = float(lam)
    return ad.custom_node((x,), x.data, lambda g: (-lam * g,), name="gradient_reversal")


@dataclass
class GradientReversal:
    lam: float = 0.01

    def __call__(self, x) -> Tensor:
        return grl_apply(x, self.lam)


# -- heads ------------------------------------------------------------------


@dataclass
class LinearHead:
    W: Tensor
    b: Tensor

    @classmethod
    def zeros(cls, c: int, d: int, prefix: str = "head") -> LinearHead:
        return cls(
            Tensor(np.zeros((c, d)), requires_grad=True, name=f"{prefix}.W"),
            Tensor(np.zeros(c), requires_grad=True, name=f"{prefix}.b"),
        )

    def logits(self, E) -> Tensor:
        E = ad.as_tensor(E)
        if E.shape[-1] != self.W.shape[1]:
            raise ad.ShapeError(f"head expects width {self.W.shape[1]}, got {E.shape}")
        return ad.add_bias(ad.matmul(E, ad.transpose(self.W)), self.b)

    def params(self) -> dict[str, Tensor]:
        return {self.W.name: self.W, self.b.name: self.b}


def token_logits(E, head: LinearHead, li: LateralInhibitionLayer | None = None) -> Tensor:
    h = li_forward(E, li) if li is not None else ad.as_tensor(E)
    return head.logits(h)


def classify_tokens(E, head: LinearHead, li: LateralInhibitionLayer | None = None) -> np.ndarray:
    return ad.softmax(token_logits(E, head, li).data)


# -- encoder ----------------------------------------------------------------


@dataclass
class ToyEncoder:
    """Trainable embeddings mixed over a fixed window of neighbours.

    Output row i is ``sum_o emb[t_{i+o}] @ M_o`` for ``o in [-r, r]``, with
    zero rows past the sentence ends.
    """

    table: Tensor
    mixers: dict[int, Tensor]
    radius: int
    summary: str = "mean"  # or "first"

    @classmethod
    def init(cls, vocab_size: int, d: int, radius: int, rng: np.random.Generator,
             summary: str = "mean") -> ToyEncoder:
        table = Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), size=(vocab_size, d)), requires_grad=True, name="enc.emb")
        table.data[0] = 0.0  # padding row
        mixers = {}
        for o in range(-radius, radius + 1):
            m = rng.normal(0.0, 0.1 / np.sqrt(d), size=(d, d))
            if o == 0:
                m += np.eye(d)
            mixers[o] = Tensor(m, requires_grad=True, name=f"enc.M[{o:+d}]")
        return cls(table, mixers, radius, summary)

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def params(self) -> dict[str, Tensor]:
        out = {"enc.emb": self.table}
        for o in sorted(self.mixers):
            out[self.mixers[o].name] = self.mixers[o]
        return out

    def encode_batch(self, ids: np.ndarray, mask: np.ndarray) -> tuple[Tensor, Tensor]:
        """Encode a padded ``B x T`` id matrix.

        Returns per-token rows ``(B*T) x d`` and summaries ``B x d``.
        """
        ids = np.asarray(ids)
        mask = np.asarray(mask, dtype=np.float64)
        nb, nt = ids.shape
        d = self.dim
        if self.summary not in ("mean", "first"):
            raise ValueError(f"unknown summary mode {self.summary!r}")
        emb = ad.mul(ad.embed(self.table, ids), Tensor(np.repeat(mask[:, :, None], d, axis=2)))
        mixed = None
        for o in range(-self.radius, self.radius + 1):
            part = ad.matmul(ad.reshape(ad.shift(emb, o, axis=1), (nb * nt, d)), self.mixers[o])
            mixed = part if mixed is None else ad.add(mixed, part)
        h3 = ad.reshape(mixed, (nb, nt, d))
        if self.summary == "first":
            summary = ad.take(h3, 0, axis=1)
        else:
            lengths = mask.sum(axis=1)
            pooled = ad.tsum(ad.mul(h3, Tensor(np.repeat(mask[:, :, None], d, axis=2))), axis=1)
            summary = ad.mul(pooled, Tensor(np.repeat((1.0 / lengths)[:, None], d, axis=1)))
        return mixed, summary


def encode_sentence(token_ids, enc: ToyEncoder) -> tuple[Tensor, Tensor]:
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ValueError("encode_sentence needs a non-empty 1-d id sequence")
    if ids.min() < 0 or ids.max() >= enc.table.shape[0]:
        raise IndexError(f"token id out of range for vocabulary of size {enc.table.shape[0]}")
    rows, summary = enc.encode_batch(ids[None, :], np.ones((1, ids.size)))
    return rows, ad.reshape(summary, (enc.dim,))


# -- language discriminator -------------------------------------------------


@dataclass
class LanguageDiscriminator:
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, d: int, n_languages: int, rng: np.random.Generator) -> LanguageDiscriminator:
        return cls(
            Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d)), requires_grad=True, name="ld.W1"),
            Tensor(np.zeros(d), requires_grad=True, name="ld.b1"),
            Tensor(np.zeros((n_languages, d)), requires_grad=True, name="ld.W2"),
            Tensor(np.zeros(n_languages), requires_grad=True, name="ld.b2"),
        )

    def params(self) -> dict[str, Tensor]:
        return {"ld.W1": self.W1, "ld.b1": self.b1, "ld.W2": self.W2, "ld.b2": self.b2}

    def logits(self, summary) -> Tensor:
        s = ad.as_tensor(summary)
        if s.shape[-1] != self.W1.shape[1]:
            raise ad.ShapeError(f"discriminator expects width {self.W1.shape[1]}, got {s.shape}")
        if s.data.ndim == 1:
            s = ad.reshape(s, (1, s.shape[0]))
        hidden = ad.tanh(ad.add_bias(ad.matmul(s, ad.transpose(self.W1)), self.b1))
        return ad.add_bias(ad.matmul(hidden, ad.transpose(self.W2)), self.b2)


def discriminate_language(summary, ld: LanguageDiscriminator, lam: float,
                          reversal: Callable = grl_apply) -> np.ndarray:
    probs = ad.softmax(ld.logits(reversal(summary, lam)).data)
    return probs[0] if ad.as_tensor(summary).data.ndim == 1 else probs


# -- checkpoints ------------------------------------------------------------


def dump_tensors(tensors: dict[str, np.ndarray], meta: dict | None = None) -> str:
    """Serialise named arrays as versioned JSON; float repr round-trips exactly."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "tensors": [
            {"name": name, "shape": list(arr.shape), "data": [float(v) for v in np.asarray(arr).reshape(-1)]}
            for name, arr in tensors.items()
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def load_tensors(text: str) -> tuple[dict[str, np.ndarray], dict]:
    doc = json.loads(text)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    out = {}
    for item in doc["tensors"]:
        out[item["name"]] = np.array(item["data"], dtype=np.float64).reshape(item["shape"])
    return out, doc["meta"]
