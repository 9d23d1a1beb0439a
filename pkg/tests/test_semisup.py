import math

import numpy as np
import pytest

from vgan import nets
from vgan.config import TrainConfig
from vgan.data import Dataset
from vgan.generator import TransitionGenerator
from vgan.ndiff.gradcheck import max_relative_error, numeric_gradient
from vgan.semisup import (
    augmented_loss,
    build_classifier,
    cross_entropy,
    split_labeled,
    train_classifier,
    write_results,
)

SHAPE = (1, 8, 8)


def cfg(**kw):
    base = dict(clf_channels="2,3", clf_hidden=8, clf_epochs=2, clf_N=10, clf_dropout=0.0, clf_noise=0.0)
    base.update(kw)
    return TrainConfig(**base).validate()


def toy(n=60, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 10
    x = rng.uniform(0, 0.2, size=(n,) + SHAPE)
    for i, c in enumerate(y):  # class c lights up row c % 8
        x[i, 0, c % 8, : 1 + c // 8 * 4] = 1.0
    return Dataset(x, y)


def test_cross_entropy_uniform_and_gradient():
    loss, d = cross_entropy(np.zeros((4, 10)), [0, 3, 9, 2])
    assert loss == pytest.approx(math.log(10), abs=1e-14)
    logits = np.random.default_rng(0).normal(size=(5, 10))
    y = [1, 2, 3, 4, 5]
    _, d = cross_entropy(logits, y)
    assert max_relative_error(d, numeric_gradient(lambda: cross_entropy(logits, y)[0], logits)) < 1e-6


def test_label_out_of_range():
    with pytest.raises(ValueError):
        cross_entropy(np.zeros((2, 10)), [0, 10])
    with pytest.raises(ValueError):
        cross_entropy(np.zeros((2, 10)), [-1, 0])


def test_probabilities_sum_to_one():
    clf = build_classifier(cfg(), SHAPE, np.random.default_rng(0))
    p = clf.predict_proba(toy().images)
    assert p.shape == (60, 10)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        from vgan.semisup import Classifier
        Classifier(nets.mlp(SHAPE, [4], 3), 10)


def test_clean_only_weights_equal_plain_loss():
    clf = build_classifier(cfg(), SHAPE, np.random.default_rng(0))
    ds = toy(10)

    def never(x, rng):
        raise AssertionError("no augmented sample should be drawn")

    loss, grads = augmented_loss(clf, never, ds.images, ds.labels, np.random.default_rng(0), (1.0, 0.0))
    plain, d = cross_entropy(clf.net.forward(ds.images, "train"), ds.labels)
    ref, _ = clf.net.backward(d)
    assert loss == plain
    for k in ref:
        np.testing.assert_array_equal(grads[k], ref[k])


def test_identity_generator_gives_plain_loss():
    clf = build_classifier(cfg(), SHAPE, np.random.default_rng(0))
    ds = toy(10)
    loss, grads = augmented_loss(clf, lambda x, rng: x, ds.images, ds.labels, np.random.default_rng(0))
    plain, d = cross_entropy(clf.net.forward(ds.images, "train"), ds.labels)
    ref, _ = clf.net.backward(d)
    assert loss == pytest.approx(plain, abs=1e-14)
    for k in ref:
        np.testing.assert_allclose(grads[k], ref[k], atol=1e-14)


def test_augmented_loss_gradient():
    clf = build_classifier(cfg(), SHAPE, np.random.default_rng(1))
    ds = toy(6)
    gen = lambda x, rng: np.clip(x + 0.1 * rng.normal(size=x.shape), 0, 1)  # noqa: E731
    f = lambda: augmented_loss(clf, gen, ds.images, ds.labels, np.random.default_rng(3), (0.3, 0.7))[0]  # noqa: E731
    _, grads = augmented_loss(clf, gen, ds.images, ds.labels, np.random.default_rng(3), (0.3, 0.7))
    params = clf.net.parameters()
    for name in sorted(params)[-4:]:
        assert max_relative_error(grads[name], numeric_gradient(f, params[name])) < 1e-4, name


def test_zero_epochs_is_chance_level():
    ds = toy(200)
    res = train_classifier(cfg(clf_epochs=0), ds, ds, ds)
    assert res.best_epoch == 0 and len(res.history) == 1
    assert 0.7 <= res.test_error <= 1.0


def test_training_beats_chance_and_selects_epoch():
    ds = toy(200)
    res = train_classifier(cfg(clf_epochs=6, clf_lr=1.0), ds.subset(slice(0, 150)), ds.subset(slice(150, 200)),
                           ds.subset(slice(150, 200)))
    assert res.val_error == min(h[2] for h in res.history)
    assert res.test_error < 0.5


def test_generator_is_untouched_by_classifier_training():
    rng = np.random.default_rng(0)
    enc = nets.mlp(SHAPE, [6], 4, out="tanh", rng=rng)
    dec = nets.mlp((4,), [6], 64, out="sigmoid", batchnorm=True, out_shape=SHAPE, rng=rng)
    gen = TransitionGenerator(enc, dec)
    before = {k: v.tobytes() for k, v in gen.state().items()}
    ds = toy(40)
    train_classifier(cfg(clf_epochs=1), ds, ds, ds, gen=gen)
    assert {k: v.tobytes() for k, v in gen.state().items()} == before


def test_classifier_determinism():
    ds = toy(60)
    a = train_classifier(cfg(clf_dropout=0.5, clf_noise=0.1), ds, ds, ds, seed=4)
    b = train_classifier(cfg(clf_dropout=0.5, clf_noise=0.1), ds, ds, ds, seed=4)
    assert a.history[1:] == b.history[1:]
    assert a.test_error == b.test_error


def test_split_layout():
    ds = Dataset(np.zeros((100,) + SHAPE), np.arange(100))
    labeled, val, test, pool = split_labeled(ds, 10, 20, 30)
    np.testing.assert_array_equal(labeled.labels, np.arange(10))
    np.testing.assert_array_equal(val.labels, np.arange(50, 70))
    np.testing.assert_array_equal(test.labels, np.arange(70, 100))
    np.testing.assert_array_equal(pool.labels, np.arange(50))
    with pytest.raises(ValueError):
        split_labeled(ds, 60, 20, 30)
    with pytest.raises(ValueError):
        split_labeled(ds, 10, 0, 30)


def test_results_csv(tmp_path):
    write_results([("no augmentation", "MNIST 1k", 5.123), ("VCD rho=0.01", "MNIST 1k", 4.0)], tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines() == [
        "model,dataset,error", "no augmentation,MNIST 1k,5.12", "VCD rho=0.01,MNIST 1k,4.00"]
