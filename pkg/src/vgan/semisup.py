"""Classifier training with transition-operator data augmentation."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax, softmax

from . import nets
from .data import Dataset, minibatches
from .generator import TransitionGenerator, transition_sample
from .ndiff import Adadelta, Graph, NonFiniteError

log = logging.getLogger(__name__)


class Classifier:
    """A logit graph; probabilities come from a softmax on top."""

    def __init__(self, net: Graph, n_classes=10):
        if net.output_shape != (n_classes,):
            raise ValueError(f"classifier graph must output ({n_classes},), got {net.output_shape}")
        self.net, self.n_classes = net, n_classes

    def predict_proba(self, x, batch=500):
        out = [softmax(self.net.forward(x[i:i + batch], "eval"), axis=1) for i in range(0, len(x), batch)]
        return np.concatenate(out)

    def error_rate(self, dataset: Dataset):
        pred = self.predict_proba(dataset.images).argmax(axis=1)
        return float(np.mean(pred != dataset.labels))


def build_classifier(cfg, in_shape, rng, n_classes=10):
    net = nets.classifier_net(in_shape, nets.parse_sizes(cfg.clf_channels), cfg.clf_hidden, n_classes,
                              dropout=cfg.clf_dropout, noise=cfg.clf_noise, rng=rng)
    return Classifier(net, n_classes)


def cross_entropy(logits, y):
    """Mean softmax cross-entropy and its gradient with respect to the logits."""
    y = np.asarray(y)
    n, c = logits.shape
    if np.any((y < 0) | (y >= c)):
        raise ValueError(f"labels must lie in [0, {c})")
    logp = log_softmax(logits, axis=1)
    loss = -float(logp[np.arange(n), y].mean())
    d = np.exp(logp)
    d[np.arange(n), y] -= 1.0
    return loss, d / n


def augmented_loss(clf, gen, x, y, rng, weights=(0.5, 0.5)):
    """``w_clean * CE(x, y) + w_aug * CE(x_tilde, y)`` with one ``x_tilde`` per example.

    ``gen`` is a frozen :class:`TransitionGenerator` (sampled in eval mode) or
    any callable ``(x, rng) -> x_tilde``. The clean pass consumes ``rng``
    first; with ``w_aug == 0`` no augmented sample is drawn at all.
    Returns ``(loss, grads)`` for the classifier parameters.
    """
    w_clean, w_aug = weights
    loss_c, d = cross_entropy(clf.net.forward(x, "train", rng=rng), y)
    grads, _ = clf.net.backward(w_clean * d)
    loss = w_clean * loss_c
    if w_aug and gen is not None:
        if isinstance(gen, TransitionGenerator):
            x_tilde = transition_sample(gen, x, rng, mode="eval").x_tilde
        else:
            x_tilde = gen(x, rng)
        loss_a, d = cross_entropy(clf.net.forward(x_tilde, "train", rng=rng), y)
        aug_grads, _ = clf.net.backward(w_aug * d)
        grads = {k: grads[k] + aug_grads[k] for k in grads}
        loss += w_aug * loss_a
    return float(loss), grads


@dataclass
class ClassifierResult:
    clf: Classifier
    test_error: float
    val_error: float
    best_epoch: int
    history: list = field(default_factory=list)  # (epoch, train_loss, val_error)


def train_classifier(cfg, labeled: Dataset, val: Dataset, test: Dataset, gen=None, seed=0):
    """Train on ``labeled``; keep the epoch with the lowest clean validation error.

    Epoch 0 is the untrained network, so ``clf.epochs = 0`` reports chance-level
    error. Returns a :class:`ClassifierResult` with the test error of the
    selected epoch.
    """
    if len(labeled) == 0:
        raise ValueError("labeled subset is empty")
    init_rng, data_rng, noise_rng = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]
    clf = build_classifier(cfg, labeled.shape, init_rng)
    opt = Adadelta(clf.net.parameters(), lr=cfg.clf_lr, decay=cfg.opt_decay, eps=cfg.opt_eps)
    weights = (cfg.clf_clean_weight, cfg.clf_aug_weight) if gen is not None else (1.0, 0.0)
    best = (clf.error_rate(val), 0, clf.net.state())
    history = [(0, float("nan"), best[0])]
    for epoch in range(1, cfg.clf_epochs + 1):
        losses = []
        for batch in minibatches(labeled, min(cfg.clf_N, len(labeled)), data_rng):
            loss, grads = augmented_loss(clf, gen, batch.images, batch.labels, noise_rng, weights)
            if not np.isfinite(loss):
                raise NonFiniteError(f"classifier loss diverged at epoch {epoch}")
            opt.step(grads)
            losses.append(loss)
        err = clf.error_rate(val)
        history.append((epoch, float(np.mean(losses)), err))
        if err < best[0]:
            best = (err, epoch, clf.net.state())
        log.info("classifier epoch %d: loss %.4f val error %.4f", epoch, np.mean(losses), err)
    clf.net.load_state(best[2])
    return ClassifierResult(clf, clf.error_rate(test), best[0], best[1], history)


def split_labeled(dataset: Dataset, n_labeled, n_val, n_test):
    """``(labeled, val, test, pool)`` cut from one file-ordered dataset.

    Test is the last ``n_test`` images and validation the ``n_val`` before
    it. ``pool`` is everything ahead of validation (the unlabeled training
    images a transition generator may see); ``labeled`` is its first
    ``n_labeled`` images.
    """
    n = len(dataset)
    if min(n_labeled, n_val, n_test) < 1:
        raise ValueError("labeled, validation and test sizes must all be positive")
    pool_end = n - n_val - n_test
    if n_labeled > pool_end:
        raise ValueError(f"{n} images cannot hold {n_labeled} labeled + {n_val} val + {n_test} test")
    return (dataset.subset(slice(0, n_labeled)), dataset.subset(slice(pool_end, n - n_test)),
            dataset.subset(slice(n - n_test, n)), dataset.subset(slice(0, pool_end)))


def write_results(rows, path):
    """Rows of ``(model, dataset, error_percent)`` mirroring the error table layout."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("model", "dataset", "error"))
        for model, dataset, err in rows:
            w.writerow((model, dataset, f"{err:.2f}"))
