"""Manifest construction from a directory of user-supplied recordings and frames.

Expected layout::

    input/<identity>/<stem>.wav    speech around the frame (any rate/channels, PCM16)
    input/<identity>/<stem>.png    the video frame
    input/<identity>/<stem>.json   optional: {"time": s, "frame_index": i,
                                              "detections": [{"bbox": [x, y, w, h], "confidence": c}]}

Without a sidecar the frame time is the middle of the recording and the
whole frame counts as the face. Frames with no detection are skipped.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

from .audio import TARGET_RATE, Waveform, extract_context_window, load_wav, standardize, write_wav
from .dataset import (
    MANIFEST_NAME,
    Detection,
    Manifest,
    SampleRecord,
    clamp_bbox,
    full_frame_detector,
    load_frame,
    select_best_detection,
    write_manifest,
)

log = logging.getLogger(__name__)


def prepare_directory(input_dir, out_dir, context_seconds: float = 4.0) -> Manifest:
    src, out = Path(input_dir), Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    identities = sorted(p.name for p in src.iterdir() if p.is_dir())
    records = []
    for k, label in enumerate(identities):
        for n, frame_path in enumerate(sorted((src / label).glob("*.png"))):
            wav_path = frame_path.with_suffix(".wav")
            if not wav_path.is_file():
                log.warning("skipping %s: no matching WAV", frame_path)
                continue
            sidecar = frame_path.with_suffix(".json")
            meta = json.loads(sidecar.read_text()) if sidecar.is_file() else {}
            frame = load_frame(frame_path)
            if "detections" in meta:
                dets = [Detection(tuple(d["bbox"]), float(d["confidence"])) for d in meta["detections"]]
            else:
                dets = full_frame_detector(frame)
            best = select_best_detection(dets)
            if best is None:
                log.info("skipping %s: no face detected", frame_path)
                continue
            audio = standardize(load_wav(wav_path))
            center = float(meta.get("time", audio.duration / 2))
            segment = extract_context_window(audio, center, context_seconds)
            audio_rel = f"audio/{label}_{frame_path.stem}.wav"
            write_wav(out / audio_rel, Waveform(segment.samples, TARGET_RATE))
            records.append(SampleRecord(
                label, k, audio_rel, str(frame_path.resolve()),
                clamp_bbox(best.bbox, frame.shape), int(meta.get("frame_index", n)),
            ))
    used = [lab for lab in identities if any(r.identity == lab for r in records)]
    remap = {lab: i for i, lab in enumerate(used)}
    records = [SampleRecord(r.identity, remap[r.identity], r.audio_path, r.image_path, r.bbox, r.frame_index)
               for r in records]
    if not records:
        raise ValueError(f"no usable WAV/PNG pairs under {src}")
    manifest = Manifest(records, used, root=out)
    write_manifest(manifest, out / MANIFEST_NAME)
    return manifest
