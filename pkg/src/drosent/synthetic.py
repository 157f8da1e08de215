"""Seeded synthetic data: a two-feature subgroup-shift mixture and toy review corpora."""

from __future__ import annotations

import numpy as np

from drosent.data import RawReview, Scale
from drosent.pipeline import Dataset

# class-conditional means of each subgroup for label 1; label 0 uses the negation
MAJORITY_MEAN = np.array([1.0, 0.0])
MINORITY_MEAN = np.array([-0.4, 1.2])


def subgroup_shift_data(n, minority_fraction, seed, noise=0.6):
    """Two-feature Gaussian mixture with a majority and a minority subgroup.

    In the majority subgroup the label is carried by the first feature; in
    the minority it is carried by the second (and the first points the other
    way).  Returns ``(dataset, group)`` with ``group[i] = 1`` for minority.
    """
    rng = np.random.default_rng(seed)
    n_minor = int(round(minority_fraction * n))
    group = np.zeros(n, dtype=int)
    group[:n_minor] = 1
    rng.shuffle(group)
    labels = rng.integers(0, 2, size=n)
    sign = 2.0 * labels - 1.0
    means = np.where(group[:, None] == 1, MINORITY_MEAN, MAJORITY_MEAN) * sign[:, None]
    x = means + noise * rng.standard_normal((n, 2))
    return Dataset.from_arrays(x, labels), group


POSITIVE_WORDS = ("great", "wonderful", "moving", "brilliant", "delightful", "superb", "charming",
                  "gripping", "funny", "beautiful")
NEGATIVE_WORDS = ("boring", "awful", "dull", "terrible", "tedious", "clumsy", "bland", "messy",
                  "forgettable", "weak")
NEUTRAL_WORDS = ("the", "movie", "film", "plot", "actor", "scene", "story", "director", "a", "was",
                 "and", "it", "of", "cast", "ending", "script")


def toy_reviews(n, scale, seed, shift=0.0):
    """Short synthetic movie reviews with scores on ``scale``.

    ``shift`` in [0, 1] swaps that fraction of the sentiment vocabulary for
    words the unshifted corpus never uses, so a classifier trained on
    ``shift=0`` sees fewer familiar cues.
    """
    scale = Scale(scale)
    rng = np.random.default_rng(seed)
    k = int(round(shift * len(POSITIVE_WORDS)))
    pos = list(POSITIVE_WORDS[k:]) + [f"pos{i}" for i in range(k)]
    neg = list(NEGATIVE_WORDS[k:]) + [f"neg{i}" for i in range(k)]
    reviews = []
    for _ in range(n):
        score = float(rng.integers(0, 11 if scale is Scale.TEN else 5))
        polarity = score / scale.max_score
        words = list(rng.choice(NEUTRAL_WORDS, size=rng.integers(4, 12)))
        for _ in range(rng.integers(1, 4)):
            bank = pos if rng.random() < polarity else neg
            words.insert(int(rng.integers(0, len(words) + 1)), str(rng.choice(bank)))
        text = " ".join(words).capitalize() + rng.choice([".", "!", " ..."])
        reviews.append(RawReview(text, score, scale))
    return reviews
