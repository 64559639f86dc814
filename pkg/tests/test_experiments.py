"""Run-and-measure checks on full-size synthetic data.

These train real victims, so they are marked slow; thresholds come from
pilot runs recorded in the README.
"""

import numpy as np
import pytest

from shapeadv import classifier as clf
from shapeadv.attack import ifgm_baseline
from shapeadv.data import ShapeSpec, split_dataset

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def full_size():
    train, test = split_dataset(ShapeSpec("sphere", m=1024, jitter=0.01), 200, 20, seed=7)
    return clf.train(train, epochs=30, seed=0), test


def test_eight_class_training_reaches_ninety_percent(full_size):
    model, test = full_size
    assert clf.accuracy(model, test) >= 0.90


def test_deleting_salient_points_hurts_more_than_random(full_size):
    model, test = full_size
    rng = np.random.default_rng(0)
    clouds = [c for c in test.clouds if clf.predict(model, c) == c.label][::7][:20]
    assert len(clouds) == 20
    top, rand = [], []
    for c in clouds:
        base = clf.logits(model, c)[c.label]
        s1 = clf.saliency_scores(model, c)
        for drop, out in ((np.argsort(-s1, kind="stable")[:32], top),
                          (rng.choice(c.m, 32, replace=False), rand)):
            kept = np.delete(c.points, drop, axis=0)
            out.append(base - clf.logits(model, kept)[c.label])
    assert np.mean(top) > np.mean(rand)


def test_adversarial_training_lowers_ifgm_success():
    # smaller clouds keep the PGD inner loop affordable
    train, test = split_dataset(ShapeSpec("sphere", m=256, jitter=0.01), 40, 10, seed=5)
    plain = clf.train(train, epochs=30, seed=0)
    robust = clf.adversarial_train(train, budget=1.0, steps=5, epochs=30, seed=0)

    def asr(model):
        # same split for both models; each attacks the clouds it classifies correctly
        hits = [ifgm_baseline(model, c, 1.0).success for c in test.clouds if clf.predict(model, c) == c.label]
        return np.mean(hits)

    assert asr(robust) < asr(plain)
