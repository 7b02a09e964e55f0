"""Gradient and invariant checks run by ``mweforge gradcheck``.

Every check returns a :class:`CheckResult`; the suite passes iff all do.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, grad_check
from .layers import (
    LanguageDiscriminator,
    LateralInhibitionLayer,
    LinearHead,
    ToyEncoder,
    grl_apply,
    heaviside,
    li_forward,
    li_preactivation,
    zero_diag,
)

OP_TOL = 1e-6
MODEL_TOL = 1e-4
LI_TOL = 1e-10
SIGN_TOL = 1e-12
LAMBDAS = (0.0, 0.01, 1.0)


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error)) and self.error <= self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<44} max error {self.error:.3e}  (tolerance {self.tolerance:.0e})"


def _leaf(rng, *shape, name=None) -> Tensor:
    return Tensor(rng.normal(size=shape), requires_grad=True, name=name)


# -- primitive ops ----------------------------------------------------------


def op_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    c34, c42 = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    ids = np.array([[0, 2, 1], [3, 3, 0]])
    gold = rng.integers(0, 7, size=5)
    mask = np.array([1, 1, 0, 1, 1.0])
    cases: dict[str, tuple[Callable, list[Tensor]]] = {
        "matmul": (lambda a, b: ad.tsum(ad.mul(ad.matmul(a, b), Tensor(c42[:3]))), [_leaf(rng, 3, 4), _leaf(rng, 4, 2)]),
        "add": (lambda a, b: ad.tsum(ad.mul(ad.add(a, b), ad.add(a, b))), [_leaf(rng, 3, 4), _leaf(rng, 3, 4)]),
        "add_bias": (lambda x, b: ad.tsum(ad.mul(ad.add_bias(x, b), Tensor(c34))), [_leaf(rng, 3, 4), _leaf(rng, 4)]),
        "mul": (lambda a, b: ad.tsum(ad.mul(a, b)), [_leaf(rng, 3, 4), _leaf(rng, 3, 4)]),
        "scale": (lambda x: ad.tsum(ad.mul(ad.scale(x, -2.5), x)), [_leaf(rng, 3, 4)]),
        "sigmoid(k=10)": (lambda x: ad.tsum(ad.mul(ad.sigmoid(x, 10.0), Tensor(c34))), [Tensor(rng.normal(scale=0.2, size=(3, 4)), requires_grad=True)]),
        "tanh": (lambda x: ad.tsum(ad.mul(ad.tanh(x), Tensor(c34))), [_leaf(rng, 3, 4)]),
        "transpose": (lambda x: ad.tsum(ad.mul(ad.transpose(x), Tensor(c34.T))), [_leaf(rng, 3, 4)]),
        "reshape": (lambda x: ad.tsum(ad.mul(ad.reshape(x, (4, 3)), Tensor(c34.reshape(4, 3)))), [_leaf(rng, 3, 4)]),
        "sum(axis)": (lambda x: ad.tsum(ad.mul(ad.tsum(x, axis=0), ad.tsum(x, axis=0))), [_leaf(rng, 3, 4)]),
        "embed": (lambda t: ad.tsum(ad.mul(ad.embed(t, ids), ad.embed(t, ids))), [_leaf(rng, 4, 3)]),
        "shift": (lambda x: ad.tsum(ad.mul(ad.shift(x, 1, axis=1), Tensor(rng_fixed(2, 3, 2)))), [_leaf(rng, 2, 3, 2)]),
        "take": (lambda x: ad.tsum(ad.mul(ad.take(x, 1, axis=1), ad.take(x, 1, axis=1))), [_leaf(rng, 2, 3, 2)]),
        "zero_diag": (lambda m: ad.tsum(ad.mul(zero_diag(m), Tensor(c34[:3, :3]))), [_leaf(rng, 3, 3)]),
        "softmax_cross_entropy": (lambda z: ad.softmax_cross_entropy(z, gold)[0], [_leaf(rng, 5, 7)]),
        "softmax_cross_entropy(mask)": (lambda z: ad.softmax_cross_entropy(z, gold, mask)[0], [_leaf(rng, 5, 7)]),
    }
    return [CheckResult(f"op {name}", grad_check(f, ps), OP_TOL) for name, (f, ps) in cases.items()]


def rng_fixed(*shape) -> np.ndarray:
    return np.random.default_rng(123).normal(size=shape)


# -- composed models --------------------------------------------------------


@dataclass
class TinyNet:
    encoder: ToyEncoder
    li: LateralInhibitionLayer
    head: LinearHead
    disc: LanguageDiscriminator

    @classmethod
    def build(cls, seed: int = 0, vocab: int = 6, d: int = 4, radius: int = 1, labels: int = 4, languages: int = 3,
              smooth_li: bool = True) -> TinyNet:
        rng = np.random.default_rng(seed)
        enc = ToyEncoder.init(vocab, d, radius, rng)
        for m in enc.mixers.values():
            m.data = m.data + rng.normal(scale=0.3, size=m.shape)
        li = LateralInhibitionLayer(
            Tensor(rng.normal(scale=0.5, size=(d, d)), requires_grad=True, name="li.W"),
            Tensor(rng.normal(scale=0.2, size=d), requires_grad=True, name="li.B"),
            k=2.0,
            smooth=smooth_li,
        )
        head = LinearHead(
            Tensor(rng.normal(size=(labels, d)), requires_grad=True, name="head.W"),
            Tensor(rng.normal(size=labels), requires_grad=True, name="head.b"),
        )
        disc = LanguageDiscriminator.init(d, languages, rng)
        disc.W2.data = rng.normal(size=disc.W2.shape)
        disc.b1.data = rng.normal(scale=0.1, size=disc.b1.shape)
        return cls(enc, li, head, disc)

    def batch(self, seed: int = 1):
        rng = np.random.default_rng(seed)
        ids = rng.integers(1, self.encoder.table.shape[0], size=(3, 5))
        mask = np.ones((3, 5))
        mask[1, 4:] = 0
        mask[2, 3:] = 0
        ids = np.where(mask > 0, ids, 0)
        labels = rng.integers(0, self.head.W.shape[0], size=(3, 5))
        langs = rng.integers(0, self.disc.W2.shape[0], size=3)
        return ids, mask, labels, langs

    def tagging_params(self) -> list[Tensor]:
        return [*self.encoder.params().values(), self.li.W, self.li.B, self.head.W, self.head.b]

    def disc_params(self) -> list[Tensor]:
        return list(self.disc.params().values())


def model_checks(seed: int = 0, reversal: Callable = grl_apply) -> list[CheckResult]:
    net = TinyNet.build(seed)
    ids, mask, labels, langs = net.batch(seed + 1)

    def tagging_loss(*_):
        rows, _s = net.encoder.encode_batch(ids, mask)
        logits = net.head.logits(li_forward(rows, net.li))
        return ad.softmax_cross_entropy(logits, labels.reshape(-1), mask.reshape(-1))[0]

    def disc_loss(*_):
        _r, summary = net.encoder.encode_batch(ids, mask)
        return ad.softmax_cross_entropy(net.disc.logits(summary), langs)[0]

    tag_params = net.tagging_params()
    disc_params = [*net.encoder.params().values(), *net.disc_params()]
    assert sum(p.data.size for p in tag_params) <= 200
    assert sum(p.data.size for p in disc_params) <= 200
    return [
        CheckResult("model encoder -> LI -> head", grad_check(tagging_loss, tag_params), MODEL_TOL),
        CheckResult("model encoder -> discriminator", grad_check(disc_loss, disc_params), MODEL_TOL),
        reversed_model_check(net, ids, mask, langs, reversal=reversal),
    ]


def numeric_grad(f: Callable[[], Tensor], p: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central differences of ``f()`` with respect to the entries of ``p``."""
    out = np.zeros_like(p.data)
    flat, oflat = p.data.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f().item()
        flat[i] = orig - eps
        down = f().item()
        flat[i] = orig
        oflat[i] = (up - down) / (2.0 * eps)
    return out


def reversed_model_check(net: TinyNet, ids, mask, langs, lam: float = 0.01,
                         reversal: Callable = grl_apply) -> CheckResult:
    """encoder -> GRL -> discriminator: tape gradients vs finite differences.

    The reversal is identity going forward, so the finite-difference slope
    is the unreversed one; encoder entries are compared against it scaled
    by ``-lam``, discriminator entries unscaled.
    """

    def loss():
        _r, summary = net.encoder.encode_batch(ids, mask)
        return ad.softmax_cross_entropy(net.disc.logits(reversal(summary, lam)), langs)[0]

    feats, disc = list(net.encoder.params().values()), net.disc_params()
    with Tape() as tape:
        analytic = tape.backward(loss(), feats + disc)
    worst = 0.0
    for p in feats + disc:
        expected = numeric_grad(loss, p) * (-lam if p in feats else 1.0)
        err = np.abs(analytic[p] - expected) / np.maximum(1e-8, np.abs(analytic[p]) + np.abs(expected))
        worst = max(worst, float(err.max()))
    return CheckResult("model encoder -> GRL -> discriminator", worst, MODEL_TOL)


# -- lateral inhibition -----------------------------------------------------


def li_oracle_2x2(X, W, B, k, G):
    """Hand-derived gradients of sum(G * X * sigmoid_k(pre)) for width 2."""
    sig = lambda z: 1.0 / (1.0 + np.exp(-k * z))
    dsig = lambda z: k * sig(z) * (1.0 - sig(z))
    dX = np.zeros_like(X)
    dW = np.zeros((2, 2))
    dB = np.zeros(2)
    for r in range(X.shape[0]):
        x0, x1 = X[r]
        g0, g1 = G[r]
        p0 = x1 * W[0, 1] + B[0]
        p1 = x0 * W[1, 0] + B[1]
        dX[r, 0] = g0 * sig(p0) + g1 * x1 * dsig(p1) * W[1, 0]
        dX[r, 1] = g1 * sig(p1) + g0 * x0 * dsig(p0) * W[0, 1]
        dW[0, 1] += g0 * x0 * dsig(p0) * x1
        dW[1, 0] += g1 * x1 * dsig(p1) * x0
        dB[0] += g0 * x0 * dsig(p0)
        dB[1] += g1 * x1 * dsig(p1)
    return dX, dW, dB


def li_tape_grads(X, W, B, k, G, smooth: bool):
    x = Tensor(X, requires_grad=True)
    layer = LateralInhibitionLayer(Tensor(W, requires_grad=True), Tensor(B, requires_grad=True), k, smooth=smooth)
    with Tape() as tape:
        loss = ad.tsum(ad.mul(li_forward(x, layer), Tensor(G)))
        g = tape.backward(loss, [x, layer.W, layer.B])
    return g[x], g[layer.W], g[layer.B]


def li_surrogate_check(trials: int = 200, seed: int = 0) -> CheckResult:
    """Hard-gate tape backward vs the hand-derived smoothed-gate gradient."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 4))
        X, W, B, G = rng.normal(size=(n, 2)), rng.normal(size=(2, 2)), rng.normal(size=2), rng.normal(size=(n, 2))
        k = float(rng.choice([1.0, 2.5, 10.0]))
        expected = li_oracle_2x2(X, W, B, k, G)
        for smooth in (False, True):
            for got, want in zip(li_tape_grads(X, W, B, k, G, smooth), expected):
                worst = max(worst, float(np.max(np.abs(got - want))))
    return CheckResult("LI surrogate backward vs analytic", worst, LI_TOL)


def li_gate_laws(trials: int = 1000, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    d = 5
    open_err = closed_err = diag_err = 0.0
    for _ in range(trials // 10):
        X = rng.normal(size=(4, d))
        zero_w = Tensor(np.zeros((d, d)))
        opened = li_forward(X, LateralInhibitionLayer(zero_w, Tensor(np.ones(d)))).data
        closed = li_forward(X, LateralInhibitionLayer(zero_w, Tensor(-np.ones(d)))).data
        open_err = max(open_err, float(np.any(opened != X)))
        closed_err = max(closed_err, float(np.any(closed != 0.0)))
    for _ in range(trials):
        X = rng.normal(size=(3, d))
        W, B = rng.normal(size=(d, d)), rng.normal(size=d)
        r, j = int(rng.integers(3)), int(rng.integers(d))
        before = li_preactivation(X, W, B)[r, j]
        X2 = X.copy()
        X2[r, j] += rng.normal(scale=5.0)
        after = li_preactivation(X2, W, B)[r, j]
        diag_err = max(diag_err, abs(after - before))
    return [
        CheckResult("LI all-open gates reproduce input", open_err, 0.0),
        CheckResult("LI all-closed gates give zeros", closed_err, 0.0),
        CheckResult("LI self-exclusion (zero diagonal)", diag_err, 0.0),
    ]


def heaviside_surrogate_check(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=50), requires_grad=True)
    k = 10.0
    with Tape() as tape:
        g = tape.backward(ad.tsum(heaviside(x, k)), [x])[x]
    s = 1.0 / (1.0 + np.exp(-k * x.data))
    return CheckResult("Heaviside surrogate derivative", float(np.max(np.abs(g - k * s * (1 - s)))), 1e-12)


# -- gradient reversal ------------------------------------------------------


def identity_layer(x, lam):
    x = ad.as_tensor(x)
    return ad.custom_node((x,), x.data, lambda g: (g,), name="identity")


def grl_sign_law(reversal: Callable = grl_apply, seed: int = 0) -> CheckResult:
    """Encoder gradients via the discriminator: reversal == -lambda * identity."""
    net = TinyNet.build(seed)
    ids, mask, _labels, langs = net.batch(seed + 1)
    feats = list(net.encoder.params().values())

    def grads(layer, lam):
        with Tape() as tape:
            _r, summary = net.encoder.encode_batch(ids, mask)
            loss = ad.softmax_cross_entropy(net.disc.logits(layer(summary, lam)), langs)[0]
            g = tape.backward(loss, feats + net.disc_params())
        return g

    worst = 0.0
    for lam in LAMBDAS:
        rev, ident = grads(reversal, lam), grads(identity_layer, lam)
        for p in feats:
            worst = max(worst, float(np.max(np.abs(rev[p] - (-lam) * ident[p]))))
        # the discriminator itself sits above the reversal and is unaffected
        for p in net.disc_params():
            worst = max(worst, float(np.max(np.abs(rev[p] - ident[p]))))
    return CheckResult("gradient reversal sign law", worst, SIGN_TOL)


def _corrupted_grl(x, lam):
    x = ad.as_tensor(x)
    return ad.custom_node((x,), x.data, lambda g: (lam * g,), name="gradient_reversal")


FAULTS = {"grl-sign": _corrupted_grl}


def decomposition_law(seed: int = 0, reversal: Callable = grl_apply) -> CheckResult:
    """Adversarial encoder gradient == task gradient - lambda * language gradient."""
    from .training import Batch, Model, TrainConfig, Vocab, compute_gradients, feature_gradient_paths, forward_pass

    worst = 0.0
    for lam in LAMBDAS:
        cfg = TrainConfig(embedding_dim=4, window_radius=1, lam=lam, li_enabled=True, adv_enabled=True, seed=seed)
        model = Model(Vocab(["<pad>", "<unk>", "a", "b", "c", "d"]), ["O", "o-", "B-VID", "I-VID"], ["x", "y", "z"], cfg)
        rng = np.random.default_rng(seed)
        model.head.W.data = rng.normal(size=model.head.W.shape)
        model.disc.W2.data = rng.normal(size=model.disc.W2.shape)
        ids = rng.integers(1, 6, size=(4, 6))
        batch = Batch(ids, np.ones((4, 6)), rng.integers(0, 4, size=(4, 6)), np.array([0, 1, 2, 1]))
        paths = feature_gradient_paths(batch, model, cfg)
        with Tape() as tape:
            res = forward_pass(batch, model, cfg, reversal=reversal)
            combined = compute_gradients(tape, res, model)
        for name in model.feature_params():
            expected = paths["task"][name] - lam * paths["lang"][name]
            worst = max(worst, float(np.max(np.abs(combined[name] - expected))))
    return CheckResult("adversarial gradient decomposition", worst, SIGN_TOL)


def run_suite(fault: str | None = None) -> list[CheckResult]:
    reversal = FAULTS[fault] if fault else grl_apply
    results = op_checks()
    results += model_checks(reversal=reversal)
    results.append(heaviside_surrogate_check())
    results.append(li_surrogate_check())
    results += li_gate_laws()
    results.append(grl_sign_law(reversal))
    results.append(decomposition_law(reversal=reversal))
    return results
