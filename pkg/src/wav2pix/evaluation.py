"""Face-plausibility and identity metrics over generated images.

Landmark detection and face identification are external oracles. Anything
with ``detect(image)`` or ``classify(image)`` plugs in; the package ships only
a nearest-mean identity classifier fitted on real faces.
"""

from __future__ import annotations

import importlib
from typing import Optional, Protocol, Sequence

import numpy as np
import torch

from .audio import CHUNK_SAMPLES, TARGET_RATE, chunk_offsets, fit_chunk_length, padded_length
from .dataset import Manifest, load_face, load_segment
from .networks import IdentityHead

NUM_LANDMARKS = 68

# Values reported for the full-scale model; not reproducible with the synthetic fixture.
REFERENCE_LANDMARK_RATE = {300: 0.8116, 700: 0.8912, 1000: 0.9025}
REFERENCE_IDENTITY_ACCURACY = {"train": 0.7681, "test": 0.5008}

REPORT_KEYS = ("landmark_rate", "identity_accuracy", "separation", "n_images", "chunk_ms", "image_size")


class LandmarkOracle(Protocol):
    def detect(self, image: np.ndarray) -> Optional[Sequence]: ...


class IdentityOracle(Protocol):
    def classify(self, image: np.ndarray) -> int: ...


def landmark_detection_rate(images, oracle: LandmarkOracle) -> float:
    """Fraction of images on which the oracle finds all 68 key-points."""
    images = list(images)
    if not images:
        raise ValueError("no images to evaluate")
    hits = 0
    for im in images:
        points = oracle.detect(im)
        hits += points is not None and len(points) == NUM_LANDMARKS
    return hits / len(images)


def identity_accuracy(images, true_labels, oracle: IdentityOracle) -> float:
    images, true_labels = list(images), list(true_labels)
    if len(images) != len(true_labels):
        raise ValueError(f"{len(images)} images but {len(true_labels)} labels")
    if not images:
        raise ValueError("no images to evaluate")
    return float(np.mean([oracle.classify(im) == int(y) for im, y in zip(images, true_labels)]))


def _nearest_mean(flat: np.ndarray, means: np.ndarray) -> np.ndarray:
    d = ((flat[:, None, :] - means[None, :, :]) ** 2).sum(-1)
    return d.argmin(axis=1)  # argmin breaks ties towards the lowest index


def per_identity_separation(generated_images, labels) -> float:
    """Accuracy of assigning each image to the closest per-identity mean image."""
    x = np.asarray(generated_images, dtype=np.float64).reshape(len(labels), -1)
    labels = np.asarray(labels)
    ids = np.unique(labels)
    if len(ids) < 2:
        raise ValueError("separation needs at least two identities")
    K = int(ids.max()) + 1
    if len(ids) != K:
        missing = sorted(set(range(K)) - set(ids.tolist()))
        raise ValueError(f"identities {missing} have no samples")
    means = np.stack([x[labels == k].mean(axis=0) for k in range(K)])
    return float((_nearest_mean(x, means) == labels).mean())


class NearestMeanIdentityOracle:
    """Classifies an image to the identity whose mean real face is closest."""

    def __init__(self, images, labels):
        x = np.asarray(images, dtype=np.float64).reshape(len(labels), -1)
        labels = np.asarray(labels)
        self.means = np.stack([x[labels == k].mean(axis=0) for k in range(int(labels.max()) + 1)])

    def classify(self, image) -> int:
        flat = np.asarray(image, dtype=np.float64).reshape(1, -1)
        return int(_nearest_mean(flat, self.means)[0])


def train_fixture_identity_head(embeddings, labels, steps: int = 200, lr: float = 0.05,
                                num_identities: Optional[int] = None, seed: int = 0) -> float:
    """Fit a fresh linear softmax head on fixed embeddings; return its training accuracy."""
    x = torch.as_tensor(np.asarray(embeddings), dtype=torch.float32)
    y = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    K = num_identities or int(y.max()) + 1
    if len(torch.unique(y)) < 2 or K < 2:
        raise ValueError("identity head needs samples from at least two identities")
    torch.manual_seed(seed)
    head = IdentityHead(x.shape[1], K)
    opt = torch.optim.Adam(head.parameters(), lr=lr)
    for _ in range(steps):
        opt.zero_grad()
        torch.nn.functional.cross_entropy(head(x), y).backward()
        opt.step()
    with torch.no_grad():
        return float((head(x).argmax(1) == y).float().mean())


# -- generation over a manifest ------------------------------------------------

def chunk_samples_for(chunk_ms: Optional[float]) -> int:
    """Raw chunk length for a duration in ms; 16384 samples when unspecified."""
    if chunk_ms is None:
        return CHUNK_SAMPLES
    if chunk_ms <= 0:
        raise ValueError("chunk_ms must be positive")
    return int(round(chunk_ms * TARGET_RATE / 1000.0))


def check_chunk_fits(model, raw_samples: int) -> None:
    want = model.config.encoder.input_samples
    if padded_length(raw_samples) != want:
        raise ValueError(
            f"{raw_samples}-sample chunks pad to {padded_length(raw_samples)}, "
            f"but the checkpoint's encoder expects {want}"
        )


@torch.no_grad()
def generate_for_manifest(model, manifest: Manifest, raw_samples: int, per_record: int = 2,
                          seed: int = 0, batch_size: int = 32):
    """Generate ``per_record`` images per record from random chunks of its segment.

    Returns ``(images, labels, embeddings)`` as numpy arrays.
    """
    check_chunk_fits(model, raw_samples)
    model.eval()
    chunks, labels = [], []
    for i, rec in enumerate(manifest.records):
        seg = load_segment(manifest, rec)
        for o in chunk_offsets(len(seg), per_record, raw_samples, seed=[seed, i]):
            chunks.append(fit_chunk_length(seg[o : o + raw_samples]))
            labels.append(rec.identity_index)
    x = torch.as_tensor(np.stack(chunks), dtype=torch.float32)
    images, embeddings = [], []
    for b, start in enumerate(range(0, len(x), batch_size)):
        e = model.encoder(x[start : start + batch_size])
        images.append(model.generator(e, dropout_seed=seed + b).numpy())
        embeddings.append(e.numpy())
    return np.concatenate(images), np.asarray(labels), np.concatenate(embeddings)


def evaluate_model(model, manifest: Manifest, chunk_ms: Optional[float] = None, per_record: int = 2,
                   seed: int = 0, landmark_oracle: Optional[LandmarkOracle] = None,
                   identity_oracle: Optional[IdentityOracle] = None) -> dict:
    """Evaluation report. Without a landmark oracle ``landmark_rate`` is None; the
    default identity oracle is a nearest-mean classifier over the manifest's real faces."""
    raw = chunk_samples_for(chunk_ms)
    images, labels, _ = generate_for_manifest(model, manifest, raw, per_record, seed)
    if identity_oracle is None:
        faces = np.stack([load_face(manifest, r) for r in manifest.records])
        identity_oracle = NearestMeanIdentityOracle(faces, [r.identity_index for r in manifest.records])
    present = len(np.unique(labels)) >= 2
    return {
        "landmark_rate": None if landmark_oracle is None else landmark_detection_rate(images, landmark_oracle),
        "identity_accuracy": identity_accuracy(images, labels, identity_oracle),
        "separation": per_identity_separation(images, labels) if present else None,
        "n_images": int(len(images)),
        "chunk_ms": chunk_ms if chunk_ms is not None else raw * 1000.0 / TARGET_RATE,
        "image_size": int(images.shape[-1]),
    }


def load_oracle(spec: str):
    """Instantiate ``package.module:factory`` (called with no arguments)."""
    module, _, attr = spec.partition(":")
    if not attr:
        raise ValueError(f"oracle spec must look like 'module:factory', got {spec!r}")
    return getattr(importlib.import_module(module), attr)()
