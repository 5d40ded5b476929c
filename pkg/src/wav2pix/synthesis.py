"""Checkpoint loading and single-file face generation."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .audio import (
    TARGET_RATE,
    Waveform,
    extract_context_window,
    fit_chunk_length,
    load_wav,
    preprocess_segment,
    standardize,
)
from .checkpoint import read_container
from .dataset import save_png
from .evaluation import check_chunk_fits, chunk_samples_for
from .networks import ModelConfig, Wav2Pix


def load_model(path) -> Wav2Pix:
    """Rebuild the network from a training checkpoint, in inference mode."""
    meta, arrays = read_container(path)
    model = Wav2Pix(ModelConfig.from_dict(meta["model_config"]), seed=None)
    model.load_state_dict({k: torch.from_numpy(arrays[f"model/{k}"]) for k in model.state_dict()})
    model.identities = meta.get("identities", [])
    return model.eval()


def speech_chunk(w: Waveform, raw_samples: int) -> np.ndarray:
    """Centered ``raw_samples`` window of a preprocessed recording, padded for the encoder."""
    w = standardize(w)
    if w.duration < 1.0:
        raise ValueError(f"need at least 1 s of audio, got {w.duration:.3f} s")
    segment = Waveform(preprocess_segment(w), TARGET_RATE)
    window = extract_context_window(segment, segment.duration / 2, raw_samples / TARGET_RATE)
    return fit_chunk_length(window)


@torch.no_grad()
def generate_from_wav(checkpoint, audio, out, dropout_seed: int = 0, chunk_ms: Optional[float] = None) -> dict:
    model = load_model(checkpoint)
    raw = chunk_samples_for(chunk_ms)
    check_chunk_fits(model, raw)
    chunk = speech_chunk(load_wav(audio), raw)
    x = torch.as_tensor(chunk[None], dtype=torch.float32)
    image = model.generator(model.encoder(x), dropout_seed=dropout_seed)[0].numpy()
    save_png(image, out)
    return {"output": str(Path(out)), "dropout_seed": dropout_seed,
            "chunk_samples": raw, "encoder_samples": int(x.shape[1])}
