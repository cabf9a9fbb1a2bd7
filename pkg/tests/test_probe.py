import numpy as np
import pytest

from superae.corpus import build_vocab
from superae.model import CONTENT, ModelConfig, SuperAE
from superae.probe import (LabeledExample, ProbeClassifier, ProbeConfig, fit_classifier, probe_accuracy,
                           representations, train_probe)
from superae.synth import sentiment_task
from superae.trainer import params_digest


def labeled(n, seed, k=2):
    return [LabeledExample(p.text, p.label) for p in sentiment_task(n, seed, k=k)]


@pytest.fixture(scope="module")
def encoder():
    data = labeled(40, 0)
    vocab = build_vocab([e.text for e in data], 60)
    return SuperAE(ModelConfig(len(vocab), 16, 16, 1), seed=0), vocab


def test_probe_training_keeps_encoder_frozen(encoder):
    model, vocab = encoder
    before = params_digest(model)
    train_probe(model, vocab, labeled(40, 1), 2, ProbeConfig(steps=30))
    assert params_digest(model) == before


def test_separable_representations_are_learned():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 3, size=300)
    centers = rng.normal(size=(3, 8)) * 3
    reps = (centers[labels] + rng.normal(size=(300, 8)) * 0.3).astype(np.float32)
    clf = fit_classifier(reps, labels, 3, ProbeConfig(steps=300))
    assert np.mean(clf.predict(reps) == labels) >= 0.99


def test_distribution_sums_to_one():
    clf = ProbeClassifier(4, 2, seed=1)
    d = clf.distribution(np.random.default_rng(1).normal(size=(5, 4)).astype(np.float32))
    np.testing.assert_allclose(d.sum(axis=1), 1.0, atol=1e-6)


def test_majority_predictor_accuracy(encoder):
    model, vocab = encoder
    clf = ProbeClassifier(model.config.n_h, 2)
    clf.w2.data[...] = 0.0
    clf.b2.data[...] = [0.0, 1.0]
    test = [LabeledExample("abc", 1)] * 3 + [LabeledExample("abd", 0)]
    assert probe_accuracy(clf, model, vocab, test, 2) == pytest.approx(0.75)


def test_ties_go_to_smaller_class():
    clf = ProbeClassifier(3, 3)
    clf.w2.data[...] = 0.0
    assert list(clf.predict(np.ones((2, 3), dtype=np.float32))) == [0, 0]


def test_accuracy_invariant_to_test_order(encoder):
    model, vocab = encoder
    clf = train_probe(model, vocab, labeled(40, 2), 2, ProbeConfig(steps=20))
    test = labeled(30, 3)
    shuffled = [test[i] for i in np.random.default_rng(0).permutation(len(test))]
    assert probe_accuracy(clf, model, vocab, test, 2) == probe_accuracy(clf, model, vocab, shuffled, 2)


def test_representations_are_content_encoder_outputs(encoder):
    model, vocab = encoder
    reps = representations(model, ["abc", "defgh"], vocab)
    assert reps.shape == (2, model.config.n_h)
    assert params_digest(model, [CONTENT])


def test_probe_errors(encoder):
    model, vocab = encoder
    with pytest.raises(ValueError, match="label"):
        train_probe(model, vocab, [LabeledExample("abc", 2)], 2)
    with pytest.raises(ValueError):
        train_probe(model, vocab, [LabeledExample("abc", 0)], 1)
    clf = ProbeClassifier(model.config.n_h, 2)
    with pytest.raises(ValueError, match="empty"):
        probe_accuracy(clf, model, vocab, [], 2)


def test_modified_encoder_is_detected(encoder, monkeypatch):
    model, vocab = encoder
    import superae.probe as probe_mod

    real = probe_mod.fit_classifier

    def tampering(*args, **kw):
        model.params[f"{CONTENT}.proj.b"].data[0] += 1.0
        return real(*args, **kw)

    monkeypatch.setattr(probe_mod, "fit_classifier", tampering)
    try:
        with pytest.raises(RuntimeError, match="frozen"):
            train_probe(model, vocab, labeled(10, 4), 2, ProbeConfig(steps=2))
    finally:
        model.params[f"{CONTENT}.proj.b"].data[0] -= 1.0
