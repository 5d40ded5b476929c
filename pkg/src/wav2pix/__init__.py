"""Face image synthesis conditioned on raw speech waveforms.

A strided 1-D convolutional encoder turns one second of speech into a
128-d embedding; a transposed-convolution generator maps it to a face; a
spectrally normalized discriminator scores (face, embedding) pairs under a
least-squares adversarial objective, with an auxiliary identity classifier
on the embedding.
"""

from .audio import Waveform, load_wav, write_wav
from .dataset import Manifest, SampleRecord, load_manifest, make_synthetic_fixture
from .networks import ModelConfig, Wav2Pix
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train, train_step

__version__ = "0.1.0"

__all__ = [
    "Manifest",
    "ModelConfig",
    "SampleRecord",
    "TrainConfig",
    "Wav2Pix",
    "Waveform",
    "load_checkpoint",
    "load_manifest",
    "load_wav",
    "make_synthetic_fixture",
    "save_checkpoint",
    "train",
    "train_step",
    "write_wav",
]
