"""Audio preprocessing: WAV I/O, standardization, pre-emphasis, normalization, chunking."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from math import gcd
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

TARGET_RATE = 16000
CHUNK_SAMPLES = 16384
DECIMATION = 4096  # 4**6, total stride of the speech encoder


@dataclass(frozen=True)
class Waveform:
    """Sampled audio. ``samples`` is (n,) for mono or (n, channels) otherwise."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.ndim not in (1, 2):
            raise ValueError("samples must be 1-D (mono) or 2-D (frames x channels)")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    @property
    def channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self):
        return len(self.samples)


def _mono(w: Waveform) -> np.ndarray:
    if w.channels != 1:
        raise ValueError(f"expected a mono waveform, got {w.channels} channels")
    return w.samples.reshape(-1)


def load_wav(path) -> Waveform:
    """Read a PCM16 WAV file; integer sample v becomes v / 32768."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such WAV file: {path}")
    try:
        with wave.open(str(path), "rb") as fh:
            width = fh.getsampwidth()
            channels = fh.getnchannels()
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise ValueError(f"{path}: unsupported WAV encoding ({exc})") from exc
    if width != 2:
        raise ValueError(f"{path}: expected 16-bit PCM, got {8 * width}-bit samples")
    data = np.frombuffer(raw, dtype="<i2")
    if data.size == 0:
        raise ValueError(f"{path}: zero-length audio")
    samples = data.astype(np.float64) / 32768.0
    if channels > 1:
        samples = samples.reshape(-1, channels)
    return Waveform(samples, rate)


def write_wav(path, w: Waveform) -> None:
    """Write a waveform as PCM16. Values on the 1/32768 grid round-trip exactly."""
    ints = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(w.channels)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(ints.tobytes())


def standardize(w: Waveform, rate: int = TARGET_RATE) -> Waveform:
    """Downmix to mono by channel mean and resample to ``rate`` Hz.

    Resampling is polyphase windowed-sinc; the output length is
    ``round(n_in * rate / rate_in)``.
    """
    x = w.samples if w.channels == 1 else w.samples.mean(axis=1)
    x = x.reshape(-1)
    if w.sample_rate == rate:
        return Waveform(x.copy(), rate)
    n_out = int(round(len(x) * rate / w.sample_rate))
    g = gcd(rate, w.sample_rate)
    y = resample_poly(x, rate // g, w.sample_rate // g, padtype="line")
    if len(y) >= n_out:
        y = y[:n_out]
    else:
        y = np.pad(y, (0, n_out - len(y)), mode="edge")
    return Waveform(y, rate)


def pre_emphasis(w: Waveform, alpha: float = 0.95) -> Waveform:
    """First-order high-pass: y[0] = x[0], y[t] = x[t] - alpha * x[t-1]."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    x = _mono(w)
    y = x.copy()
    y[1:] -= alpha * x[:-1]
    return Waveform(y, w.sample_rate)


def de_emphasis(w: Waveform, alpha: float = 0.95) -> Waveform:
    """Inverse of :func:`pre_emphasis`."""
    from scipy.signal import lfilter

    return Waveform(lfilter([1.0], [1.0, -alpha], _mono(w)), w.sample_rate)


def peak_normalize(w: Waveform) -> Waveform:
    x = _mono(w)
    peak = np.max(np.abs(x))
    if peak == 0:
        raise ValueError("cannot normalize an all-zero waveform; drop this sample")
    return Waveform(x / peak, w.sample_rate)


def extract_context_window(w: Waveform, center_time: float, duration: float = 4.0) -> Waveform:
    """Return ``duration`` seconds centred on ``center_time``, zero-padded at the edges."""
    x = _mono(w)
    if center_time < 0 or center_time > w.duration:
        raise ValueError(
            f"center_time {center_time} s outside audio of {w.duration:.3f} s"
        )
    n = int(round(duration * w.sample_rate))
    start = int(round(center_time * w.sample_rate)) - n // 2
    out = np.zeros(n, dtype=x.dtype)
    lo, hi = max(start, 0), min(start + n, len(x))
    if hi > lo:
        out[lo - start : hi - start] = x[lo:hi]
    return Waveform(out, w.sample_rate)


def chunk_offsets(length: int, n: int = 5, chunk_len: int = CHUNK_SAMPLES, seed: int = 0) -> np.ndarray:
    """Uniform start offsets in ``[0, length - chunk_len]``."""
    if length < chunk_len:
        raise ValueError(f"segment of {length} samples is shorter than chunk_len={chunk_len}")
    rng = np.random.default_rng(seed)
    return rng.integers(0, length - chunk_len + 1, size=n)


def sample_chunks(segment: Waveform, n: int = 5, chunk_len: int = CHUNK_SAMPLES, seed: int = 0) -> list[np.ndarray]:
    x = _mono(segment)
    return [x[o : o + chunk_len].copy() for o in chunk_offsets(len(x), n, chunk_len, seed)]


def fit_chunk_length(chunk, target_multiple: int = DECIMATION) -> np.ndarray:
    """Zero-pad symmetrically up to the next multiple of ``target_multiple``."""
    x = _mono(chunk) if isinstance(chunk, Waveform) else np.asarray(chunk, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ValueError("empty chunk")
    if not np.all(np.isfinite(x)):
        raise ValueError("chunk contains non-finite samples")
    total = -(-x.size // target_multiple) * target_multiple - x.size
    if total == 0:
        return x
    left = total // 2
    return np.pad(x, (left, total - left))


def padded_length(n_samples: int, target_multiple: int = DECIMATION) -> int:
    return -(-n_samples // target_multiple) * target_multiple


def preprocess_segment(w: Waveform, alpha: float = 0.95) -> np.ndarray:
    """Pre-emphasis then peak normalization, applied to a whole speech segment."""
    return peak_normalize(pre_emphasis(w, alpha)).samples
