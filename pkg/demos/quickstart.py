# Quickstart: a toy speaker-to-face run on the synthetic fixture.
#
# Each synthetic "speaker" hums a pure tone (200 Hz, 400 Hz, ...) and has a
# flat-coloured cartoon face.  A few hundred steps are enough for the
# generator to learn which colour goes with which pitch.
#
#    python demos/quickstart.py [steps]

import sys
import tempfile
from pathlib import Path

import numpy as np

from wav2pix import TrainConfig, make_synthetic_fixture, train
from wav2pix.dataset import save_png
from wav2pix.evaluation import evaluate_model, generate_for_manifest
from wav2pix.synthesis import load_model

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 200
work = Path(tempfile.mkdtemp(prefix="wav2pix_"))

# 4 speakers x 8 clips, 4 s of 16 kHz audio per clip, 128x128 frames
manifest = make_synthetic_fixture(4, 8, work / "fixture", seed=0)
print("fixture:", len(manifest), "records in", work / "fixture")

config = TrainConfig(batch_size=8, max_steps=steps, checkpoint_every=steps, seed=0)
ckpt = train(config, manifest, work / "run")
print("checkpoint:", ckpt)

# The first and last lines of the loss log
rows = (work / "run" / "metrics.csv").read_text().splitlines()
print(rows[0]); print(rows[1]); print(rows[-1])

model = load_model(ckpt)
print(evaluate_model(model, manifest))

# One face per speaker, tiled left to right
images, labels, _ = generate_for_manifest(model, manifest, manifest.chunk_samples, per_record=1)
row = np.concatenate([images[np.flatnonzero(labels == k)[0]] for k in range(4)], axis=2)
save_png(row, work / "faces.png")
print("wrote", work / "faces.png")
