"""Frozen-encoder representation probe: a one-hidden-layer classifier on z_t."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .corpus import Vocab, encode_chars
from .model import CONTENT, SuperAE
from .numerics import Value
from .trainer import AdamState, TrainConfig, adam_step, clip_gradients, params_digest


@dataclass(frozen=True)
class LabeledExample:
    text: str
    label: int


@dataclass
class ProbeConfig:
    hidden: int = 32
    steps: int = 300
    lr: float = 0.01
    batch_size: int = 64
    seed: int = 0
    init_scale: float = 0.1


class ProbeClassifier:
    def __init__(self, n_in: int, k: int, hidden: int = 32, seed: int = 0, init_scale: float = 0.1,
                 dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.k = k
        self.n_in = n_in

        def uni(*shape):
            return rng.uniform(-init_scale, init_scale, size=shape).astype(dtype)

        self.w1 = Value(uni(n_in, hidden), requires_grad=True, name="probe.w1")
        self.b1 = Value(np.zeros(hidden, dtype=dtype), requires_grad=True, name="probe.b1")
        self.w2 = Value(uni(hidden, k), requires_grad=True, name="probe.w2")
        self.b2 = Value(np.zeros(k, dtype=dtype), requires_grad=True, name="probe.b2")

    @property
    def params(self) -> list[Value]:
        return [self.w1, self.b1, self.w2, self.b2]

    def logits(self, reps: Value) -> Value:
        if reps.shape[-1] != self.n_in:
            raise nx.ShapeError(f"probe: representation width {reps.shape[-1]} != {self.n_in}")
        hid = nx.tanh(nx.add(nx.matmul(reps, self.w1), self.b1))
        return nx.add(nx.matmul(hid, self.w2), self.b2)

    def distribution(self, reps) -> np.ndarray:
        with nx.no_grad():
            return nx.softmax(self.logits(nx.as_value(reps))).data

    def predict(self, reps) -> np.ndarray:
        # argmax returns the first maximum, i.e. the smaller class index on ties
        return self.distribution(reps).argmax(axis=-1)


def representations(model: SuperAE, texts: Sequence[str], vocab: Vocab, batch_size: int = 64) -> np.ndarray:
    """z_t for each text, computed without recording gradients."""
    rows = []
    with nx.no_grad():
        for k in range(0, len(texts), batch_size):
            ids = [encode_chars(t, vocab) for t in texts[k:k + batch_size]]
            if any(len(x) == 0 for x in ids):
                raise ValueError("probe: empty text")
            T = max(len(x) for x in ids)
            src = np.zeros((len(ids), T), dtype=np.int64)
            mask = np.zeros((len(ids), T))
            for r, x in enumerate(ids):
                src[r, :len(x)] = x
                mask[r, :len(x)] = 1
            rows.append(model.encode_content(src, mask).z.data)
    return np.concatenate(rows, axis=0)


def _check_labels(examples: Sequence[LabeledExample], k: int) -> np.ndarray:
    labels = np.array([e.label for e in examples], dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"probe: label out of range for k={k}")
    return labels


def fit_classifier(reps: np.ndarray, labels: np.ndarray, k: int, cfg: ProbeConfig | None = None) -> ProbeClassifier:
    """Minibatch Adam on cross entropy over fixed representation rows."""
    cfg = cfg or ProbeConfig()
    clf = ProbeClassifier(reps.shape[1], k, cfg.hidden, cfg.seed, cfg.init_scale, dtype=reps.dtype)
    opt, adam_cfg = AdamState(), TrainConfig(lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    n = len(reps)
    for _ in range(cfg.steps):
        idx = rng.choice(n, size=min(cfg.batch_size, n), replace=False)
        for p in clf.params:
            p.grad = None
        logp = nx.log_softmax(clf.logits(Value(reps[idx])))
        loss = nx.mul(nx.mean(nx.pick(logp, labels[idx])), -1.0)
        nx.backward(loss)
        grads, _ = clip_gradients([p.grad for p in clf.params], adam_cfg.clip_norm)
        adam_step(clf.params, grads, opt, adam_cfg)
    return clf


def train_probe(model: SuperAE, vocab: Vocab, train: Sequence[LabeledExample], k: int,
                cfg: ProbeConfig | None = None) -> ProbeClassifier:
    """Fit the classifier on frozen content-encoder representations."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if not train:
        raise ValueError("probe: empty training set")
    labels = _check_labels(train, k)
    before = params_digest(model, [CONTENT])
    reps = representations(model, [e.text for e in train], vocab)
    clf = fit_classifier(reps, labels, k, cfg)
    if params_digest(model, [CONTENT]) != before:
        raise RuntimeError("probe training modified the frozen encoder")
    return clf


def probe_accuracy(clf: ProbeClassifier, model: SuperAE, vocab: Vocab, test: Sequence[LabeledExample], k: int) -> float:
    if not test:
        raise ValueError("probe: empty test set")
    labels = _check_labels(test, k)
    reps = representations(model, [e.text for e in test], vocab)
    return float(np.mean(clf.predict(reps) == labels))
