# Speech chunk length ablation through the command line.
#
# 300 / 700 / 1000 ms chunks hold 4800 / 11200 / 16000 samples.  They are
# zero-padded symmetrically to 8192 / 12288 / 16384 so that six stride-4
# layers divide them evenly, and the encoder is sized for the padded length.
# The fixture is tiny and training is short; the point is the plumbing, not
# the numbers.

import json
import subprocess
import sys
import tempfile
from pathlib import Path

steps = sys.argv[1] if len(sys.argv) > 1 else "20"
work = Path(tempfile.mkdtemp(prefix="wav2pix_ablation_"))


def wav2pix(*args):
    out = subprocess.run([sys.executable, "-m", "wav2pix", *map(str, args)],
                         check=True, capture_output=True, text=True).stdout
    return json.loads(out)


fx = wav2pix("synth-fixture", "--out", work / "fx", "--identities", 2, "--per-identity", 4)
for ms in (300, 700, 1000):
    run = wav2pix("train", "--manifest", fx["manifest"], "--out", work / f"ms{ms}",
                  "--chunk-ms", ms, "--max-steps", steps, "--batch-size", 4)
    report = wav2pix("evaluate", "--checkpoint", run["checkpoint"], "--manifest", fx["manifest"],
                     "--chunk-ms", ms)
    print(ms, "ms:", report)
