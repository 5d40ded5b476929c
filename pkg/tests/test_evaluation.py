import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from wav2pix.evaluation import (
    NearestMeanIdentityOracle,
    chunk_samples_for,
    evaluate_model,
    identity_accuracy,
    landmark_detection_rate,
    load_oracle,
    per_identity_separation,
    train_fixture_identity_head,
)
from wav2pix.networks import Wav2Pix
from wav2pix.trainer import TrainConfig


class _Points:
    def __init__(self, counts):
        self.counts = iter(counts)

    def detect(self, image):
        n = next(self.counts)
        return None if n is None else np.zeros((n, 2))


class _Constant:
    def classify(self, image):
        return 0


def constant_oracle():
    return _Constant()


def test_landmark_rate_counts_only_full_sets():
    imgs = [np.zeros((3, 8, 8))] * 4
    assert landmark_detection_rate(imgs, _Points([68, 67, None, 68])) == 0.5
    assert landmark_detection_rate(imgs[:1], _Points([69])) == 0.0
    with pytest.raises(ValueError):
        landmark_detection_rate([], _Points([]))


@pytest.mark.parametrize("K", [2, 4, 5])
def test_constant_identity_oracle(K):
    labels = np.repeat(np.arange(K), 3)
    assert identity_accuracy(np.zeros((len(labels), 3, 4, 4)), labels, _Constant()) == pytest.approx(1 / K)


def test_identity_accuracy_length_mismatch():
    with pytest.raises(ValueError):
        identity_accuracy(np.zeros((2, 3, 4, 4)), [0], _Constant())


def _separable(K=4, n=16, dim=32, seed=0):
    rng = np.random.default_rng(seed)
    centers = rng.normal(0, 5, size=(K, dim))
    labels = np.repeat(np.arange(K), n)
    return centers[labels] + rng.normal(0, 0.3, size=(len(labels), dim)), labels


def test_identity_head_on_separable_embeddings():
    x, y = _separable()
    assert LogisticRegression(max_iter=1000).fit(x, y).score(x, y) == 1.0
    assert train_fixture_identity_head(x, y) == 1.0


def test_identity_head_on_random_labels():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(400, 128))
    y = rng.integers(0, 4, size=400)
    # held-out accuracy is chance; train a tiny head briefly so it cannot memorise
    acc = train_fixture_identity_head(x[:, :2], y, steps=50)
    assert abs(acc - 0.25) < 0.1


def test_separation_identical_images_is_chance():
    labels = np.repeat(np.arange(4), 5)
    # all means coincide; the tie goes to identity 0
    assert per_identity_separation(np.zeros((20, 3, 4, 4)), labels) == pytest.approx(0.25)


def test_separation_flat_colours_is_perfect():
    labels = np.repeat(np.arange(3), 4)
    imgs = np.stack([np.full((3, 4, 4), k / 3.0) for k in labels])
    assert per_identity_separation(imgs, labels) == 1.0


def test_separation_errors():
    with pytest.raises(ValueError):
        per_identity_separation(np.zeros((3, 3, 2, 2)), [0, 0, 0])
    with pytest.raises(ValueError):
        per_identity_separation(np.zeros((3, 3, 2, 2)), [0, 2, 2])


def test_nearest_mean_oracle():
    imgs = np.stack([np.full((3, 2, 2), v) for v in (-1.0, -0.9, 0.9, 1.0)])
    o = NearestMeanIdentityOracle(imgs, [0, 0, 1, 1])
    assert o.classify(np.full((3, 2, 2), 0.7)) == 1
    assert o.classify(np.full((3, 2, 2), -0.2)) == 0


@pytest.mark.parametrize("ms,expected", [(None, 16384), (300, 4800), (700, 11200), (1000, 16000)])
def test_chunk_samples_for(ms, expected):
    assert chunk_samples_for(ms) == expected


def test_load_oracle():
    assert isinstance(load_oracle("test_evaluation:constant_oracle"), _Constant)
    with pytest.raises(ValueError):
        load_oracle("no_colon_here")


def test_evaluate_model_report(small_fixture):
    cfg = TrainConfig(batch_size=2)
    model = Wav2Pix(cfg.model_config(small_fixture.num_identities), seed=0)
    report = evaluate_model(model, small_fixture, per_record=1)
    assert set(report) == {"landmark_rate", "identity_accuracy", "separation", "n_images", "chunk_ms", "image_size"}
    assert report["landmark_rate"] is None and report["n_images"] == 8
    assert report["chunk_ms"] == 1024.0 and report["image_size"] == 64
    with_oracle = evaluate_model(model, small_fixture, per_record=1, landmark_oracle=_Points([68] * 8),
                                 identity_oracle=_Constant())
    assert with_oracle["landmark_rate"] == 1.0 and with_oracle["identity_accuracy"] == 0.5
    with pytest.raises(ValueError):
        evaluate_model(model, small_fixture, chunk_ms=300)
