"""Manifests, face crops, identity splits, batching and the synthetic fixture."""

from __future__ import annotations

import colorsys
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
from PIL import Image

from .audio import (
    CHUNK_SAMPLES,
    TARGET_RATE,
    Waveform,
    chunk_offsets,
    fit_chunk_length,
    load_wav,
    preprocess_segment,
    standardize,
    write_wav,
)

MANIFEST_NAME = "manifest.jsonl"
RECORD_FIELDS = ("identity", "identity_index", "audio_path", "image_path", "bbox", "frame_index")
AUGMENT_COPIES = 5


@dataclass(frozen=True)
class Detection:
    bbox: tuple
    confidence: float

    def __post_init__(self):
        if not np.isfinite(self.confidence):
            raise ValueError("detection confidence must be finite")


@dataclass(frozen=True)
class SampleRecord:
    identity: str
    identity_index: int
    audio_path: str
    image_path: str
    bbox: tuple
    frame_index: int = 0

    def to_json(self) -> str:
        d = asdict(self)
        d["bbox"] = [int(v) for v in self.bbox]
        return json.dumps({k: d[k] for k in RECORD_FIELDS})


@dataclass
class Manifest:
    records: list
    identities: list
    image_size: int = 64
    chunk_samples: int = CHUNK_SAMPLES
    root: Optional[Path] = None

    def __post_init__(self):
        known = set(self.identities)
        for r in self.records:
            if r.identity not in known:
                raise ValueError(f"record identity {r.identity!r} not in identity list")
            if self.identities[r.identity_index] != r.identity:
                raise ValueError(f"identity_index {r.identity_index} does not match {r.identity!r}")

    def __len__(self):
        return len(self.records)

    @property
    def num_identities(self) -> int:
        return len(self.identities)

    def resolve(self, p: str) -> Path:
        path = Path(p)
        if path.is_absolute() or self.root is None:
            return path
        return self.root / path

    def subset(self, records) -> "Manifest":
        return replace(self, records=list(records))


def dense_identities(labels) -> list:
    """Identity labels in first-seen order; their positions are the dense indices."""
    return list(dict.fromkeys(labels))


def write_manifest(manifest: Manifest, path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        for r in manifest.records:
            fh.write(r.to_json() + "\n")
    return path


def load_manifest(path, image_size: int = 64, chunk_samples: int = CHUNK_SAMPLES, check_files: bool = True) -> Manifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            d = json.loads(line)
            if set(d) != set(RECORD_FIELDS):
                raise ValueError(f"{path}:{lineno}: manifest fields must be exactly {RECORD_FIELDS}")
            records.append(SampleRecord(
                d["identity"], int(d["identity_index"]), d["audio_path"], d["image_path"],
                tuple(int(v) for v in d["bbox"]), int(d["frame_index"]),
            ))
    if not records:
        raise ValueError(f"{path}: empty manifest")
    by_index = {}
    for r in records:
        if by_index.setdefault(r.identity_index, r.identity) != r.identity:
            raise ValueError(f"identity_index {r.identity_index} used for two labels")
    if sorted(by_index) != list(range(len(by_index))) or len(set(by_index.values())) != len(by_index):
        raise ValueError("identity_index must be a dense zero-based encoding of identity labels")
    manifest = Manifest(records, [by_index[i] for i in range(len(by_index))],
                        image_size, chunk_samples, path.parent)
    if check_files:
        for r in records:
            for p in (r.audio_path, r.image_path):
                if not manifest.resolve(p).is_file():
                    raise FileNotFoundError(f"manifest references missing file {p}")
    return manifest


# -- faces -------------------------------------------------------------------

def select_best_detection(detections) -> Optional[Detection]:
    """Most confident detection; ties go to the first listed. None for no detections."""
    best = None
    for d in detections:
        if best is None or d.confidence > best.confidence:
            best = d
    return best


def full_frame_detector(frame: np.ndarray) -> list:
    h, w = frame.shape[:2]
    return [Detection((0, 0, w, h), 1.0)]


def clamp_bbox(bbox, frame_shape) -> tuple:
    x, y, w, h = bbox
    if w <= 0 or h <= 0:
        raise ValueError(f"bbox must have positive size, got {bbox}")
    fh, fw = frame_shape[:2]
    x0, y0 = max(int(x), 0), max(int(y), 0)
    x1, y1 = min(int(x + w), fw), min(int(y + h), fh)
    if x1 <= x0 or y1 <= y0:
        raise ValueError(f"bbox {bbox} lies outside the {fw}x{fh} frame")
    return x0, y0, x1 - x0, y1 - y0


def crop_and_scale_face(frame: np.ndarray, bbox, target: int = 64, channel_order: str = "RGB") -> np.ndarray:
    """Crop ``bbox`` from an HxWx3 uint8 frame and return a 3xSxS float32 tensor in [-1, 1]."""
    if target not in (64, 128):
        raise ValueError(f"target size must be 64 or 128, got {target}")
    frame = np.asarray(frame)
    if frame.size == 0:
        raise ValueError("empty frame")
    if frame.ndim == 2:
        frame = np.repeat(frame[..., None], 3, axis=2)
    frame = frame[..., :3]
    if channel_order == "BGR":
        frame = frame[..., ::-1]
    x, y, w, h = clamp_bbox(bbox, frame.shape)
    crop = Image.fromarray(np.ascontiguousarray(frame[y : y + h, x : x + w]).astype(np.uint8))
    crop = np.asarray(crop.resize((target, target), Image.BILINEAR), dtype=np.float32)
    return (crop.transpose(2, 0, 1) * (2.0 / 255.0) - 1.0).astype(np.float32)


def load_frame(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def tensor_to_uint8(image: np.ndarray) -> np.ndarray:
    """3xSxS tensor in [-1, 1] to SxSx3 uint8 via round(255 * (v + 1) / 2)."""
    v = np.clip(np.asarray(image, dtype=np.float64), -1.0, 1.0)
    return np.round(255.0 * (v + 1.0) / 2.0).astype(np.uint8).transpose(1, 2, 0)


def save_png(image: np.ndarray, path) -> None:
    Image.fromarray(tensor_to_uint8(image), "RGB").save(path)


# -- splits ------------------------------------------------------------------

def split_by_identity(manifest: Manifest, train_fraction: float = 0.8, seed: int = 0):
    """Stratified within-identity split. Each identity contributes to both sides."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    in_train = set()
    for k, label in enumerate(manifest.identities):
        idx = [i for i, r in enumerate(manifest.records) if r.identity_index == k]
        if len(idx) < 2:
            raise ValueError(f"identity {label!r} has {len(idx)} record(s); need 2 to split")
        n_train = min(max(int(round(len(idx) * train_fraction)), 1), len(idx) - 1)
        in_train.update(np.asarray(idx)[rng.permutation(len(idx))[:n_train]].tolist())
    train = [r for i, r in enumerate(manifest.records) if i in in_train]
    test = [r for i, r in enumerate(manifest.records) if i not in in_train]
    return manifest.subset(train), manifest.subset(test)


# -- synthetic fixture -------------------------------------------------------

FIXTURE_FRAME = 128
FIXTURE_SECONDS = 4.0


def fixture_color(k: int, K: int) -> np.ndarray:
    r, g, b = colorsys.hsv_to_rgb(k / K, 0.7, 0.85)
    return np.array([r, g, b]) * 255.0


def _fixture_frame(k: int, K: int, rng: np.random.Generator) -> np.ndarray:
    n = FIXTURE_FRAME
    base = fixture_color(k, K)
    img = np.empty((n, n, 3))
    img[:] = base
    dy, dx = rng.integers(-4, 5, size=2)
    yy, xx = np.mgrid[0:n, 0:n]
    cy, cx = n / 2 + dy, n / 2 + dx
    face = ((yy - cy) / (0.38 * n)) ** 2 + ((xx - cx) / (0.30 * n)) ** 2 <= 1.0
    img[face] = 0.5 * base + 0.5 * 235.0
    for ex in (cx - 0.12 * n, cx + 0.12 * n):
        eye = (np.abs(yy - (cy - 0.08 * n)) < 0.04 * n) & (np.abs(xx - ex) < 0.05 * n)
        img[eye] = 30.0
    mouth = (np.abs(yy - (cy + 0.18 * n)) < 0.025 * n) & (np.abs(xx - cx) < 0.12 * n)
    img[mouth] = 90.0
    img += rng.normal(0.0, 3.0) + rng.normal(0.0, 2.0, size=img.shape)
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def _fixture_audio(k: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(int(FIXTURE_SECONDS * TARGET_RATE)) / TARGET_RATE
    phase = rng.uniform(0, 2 * np.pi)
    x = 0.5 * np.sin(2 * np.pi * 200.0 * (k + 1) * t + phase) + rng.normal(0.0, 0.01, size=t.shape)
    return np.clip(x, -1.0, 1.0)


def make_synthetic_fixture(K: int, n_per_identity: int, out_dir, seed: int = 0,
                           image_size: int = 64, chunk_samples: int = CHUNK_SAMPLES) -> Manifest:
    """Write K * n WAV/PNG pairs plus a manifest.

    Identity k speaks a 200*(k+1) Hz tone (sigma=0.01 noise) and has a flat
    base colour with a jittered cartoon face.
    """
    if K < 2 or n_per_identity < 1:
        raise ValueError("need K >= 2 identities and at least one sample each")
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    identities = [f"id{k:02d}" for k in range(K)]
    records = []
    for k, label in enumerate(identities):
        for i in range(n_per_identity):
            stem = f"{label}_{i:03d}"
            audio_rel, image_rel = f"audio/{stem}.wav", f"frames/{stem}.png"
            write_wav(out / audio_rel, Waveform(_fixture_audio(k, rng), TARGET_RATE))
            frame = _fixture_frame(k, K, rng)
            Image.fromarray(frame, "RGB").save(out / image_rel)
            (det,) = full_frame_detector(frame)
            records.append(SampleRecord(label, k, audio_rel, image_rel, det.bbox, i))
    manifest = Manifest(records, identities, image_size, chunk_samples, out)
    write_manifest(manifest, out / MANIFEST_NAME)
    return manifest


# -- batching ----------------------------------------------------------------

def load_segment(manifest: Manifest, record: SampleRecord) -> np.ndarray:
    w = load_wav(manifest.resolve(record.audio_path))
    if w.channels != 1 or w.sample_rate != TARGET_RATE:
        w = standardize(w)
    return preprocess_segment(w)


def load_face(manifest: Manifest, record: SampleRecord) -> np.ndarray:
    return crop_and_scale_face(load_frame(manifest.resolve(record.image_path)), record.bbox, manifest.image_size)


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def epoch_offsets(manifest: Manifest, index: int, segment_len: int, seed: int, epoch: int,
                  copies: int = AUGMENT_COPIES, fixed_augmentation: bool = False) -> int:
    """Chunk offset served for record ``index`` in ``epoch``.

    An augmentation cycle spans ``copies`` epochs; within it each record walks
    through ``copies`` independently drawn offsets.
    """
    cycle = 0 if fixed_augmentation else epoch // copies
    offs = chunk_offsets(segment_len, copies, manifest.chunk_samples, seed=[seed, cycle, index])
    return int(offs[epoch % copies])


def batches_per_epoch(manifest: Manifest, batch_size: int) -> int:
    return len(manifest) // batch_size


def batch_iterator(manifest: Manifest, batch_size: int, seed: int = 0, epoch: int = 0, *,
                   copies: int = AUGMENT_COPIES, fixed_augmentation: bool = False,
                   cache: Optional[dict] = None, start_batch: int = 0) -> Iterator[tuple]:
    """Yield ``(chunks, images, labels)`` batches for one epoch; the last partial batch is dropped."""
    n = len(manifest)
    if n == 0:
        raise ValueError("empty manifest")
    if batch_size > n:
        raise ValueError(f"batch_size {batch_size} exceeds the {n} available records")
    cache = {} if cache is None else cache
    order = epoch_order(n, seed, epoch)
    T = manifest.chunk_samples
    for b in range(start_batch, n // batch_size):
        idx = order[b * batch_size : (b + 1) * batch_size]
        chunks, images, labels = [], [], []
        for i in idx:
            i = int(i)
            if i not in cache:
                rec = manifest.records[i]
                cache[i] = (load_segment(manifest, rec), load_face(manifest, rec))
            segment, face = cache[i]
            o = epoch_offsets(manifest, i, len(segment), seed, epoch, copies, fixed_augmentation)
            chunks.append(fit_chunk_length(segment[o : o + T]))
            images.append(face)
            labels.append(manifest.records[i].identity_index)
        yield (np.stack(chunks).astype(np.float32), np.stack(images),
               np.asarray(labels, dtype=np.int64))
