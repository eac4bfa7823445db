"""Feature extraction and binary feature-file I/O.

Model inputs come in two shapes: a (T, 257) magnitude spectrogram sequence
for the convolutional scorer, and a fixed-dimension pooled vector (768 by
default) ingested from precomputed feature files for the pooled scorer.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
WINDOW_SAMPLES = 512   # 32 ms at 16 kHz
HOP_SAMPLES = 256      # 16 ms
N_BINS = 257
FRAME_SHIFT_S = HOP_SAMPLES / SAMPLE_RATE

FEATURE_MAGIC = b"SVDF"
SPECTROGRAM_MAGIC = b"SVDS"
FORMAT_VERSION = 1

# Frames whose RMS falls more than this far below the loudest frame are
# treated as silent when normalizing levels.
SILENCE_FLOOR_DB = 40.0
DEFAULT_TARGET_DB = -26.0


class AudioError(ValueError):
    """Raised for unusable audio input (wrong rate, too short, all silent)."""


class FormatError(ValueError):
    """Raised for corrupt or mismatched binary feature files."""


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray  # float64 amplitudes, nominally in [-1, 1]
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self) -> None:
        if self.samples.ndim != 1 or len(self.samples) == 0:
            raise AudioError("waveform must be a non-empty 1-D sample array")


def stft_magnitude(w: Waveform) -> np.ndarray:
    """Magnitude spectrogram: 512-sample Hamming window, 256-sample hop,
    512-point FFT, bins 0..256. The final partial window is dropped, so the
    frame count is floor((N - 512) / 256) + 1.
    """
    if w.sample_rate_hz != SAMPLE_RATE:
        raise AudioError(f"expected {SAMPLE_RATE} Hz input, got {w.sample_rate_hz}")
    n = len(w.samples)
    if n < WINDOW_SAMPLES:
        raise AudioError(f"input of {n} samples is shorter than one {WINDOW_SAMPLES}-sample window")
    n_frames = (n - WINDOW_SAMPLES) // HOP_SAMPLES + 1
    window = np.hamming(WINDOW_SAMPLES)
    starts = np.arange(n_frames) * HOP_SAMPLES
    frames = w.samples[starts[:, None] + np.arange(WINDOW_SAMPLES)] * window
    return np.abs(np.fft.rfft(frames, n=WINDOW_SAMPLES, axis=1))


def _frame_rms(samples: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Split into consecutive 32 ms frames (tail partial kept) with their RMS."""
    frames = [samples[s:s + WINDOW_SAMPLES] for s in range(0, len(samples), WINDOW_SAMPLES)]
    rms = np.array([np.sqrt(np.mean(np.square(f))) for f in frames])
    return frames, rms


def level_normalize(w: Waveform, target_level_db: float = DEFAULT_TARGET_DB) -> Waveform:
    """Scale so the RMS over non-silent frames hits the target dBFS level.

    A frame is silent when its RMS sits more than 40 dB below the loudest
    frame. The output is the input times a single gain, so idempotent.
    """
    frames, rms = _frame_rms(w.samples)
    peak = rms.max()
    if peak == 0.0:
        raise AudioError("cannot normalize an all-silent waveform")
    keep = rms >= peak * 10.0 ** (-SILENCE_FLOOR_DB / 20.0)
    active = np.concatenate([f for f, k in zip(frames, keep) if k])
    current = np.sqrt(np.mean(np.square(active)))
    target = 10.0 ** (target_level_db / 20.0)
    return Waveform(w.samples * (target / current), w.sample_rate_hz)


def time_average(frames: np.ndarray) -> np.ndarray:
    """Arithmetic mean over the time axis of a (T, D) feature sequence."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise ValueError("expected a non-empty (T, D) matrix")
    return frames.mean(axis=0)


def read_wav(path: str | Path) -> Waveform:
    """Read 16-bit PCM mono RIFF WAVE at 16 kHz into float64 in [-1, 1)."""
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise AudioError(f"{path}: expected mono audio, got {fh.getnchannels()} channels")
        if fh.getsampwidth() != 2:
            raise AudioError(f"{path}: expected 16-bit PCM")
        if fh.getframerate() != SAMPLE_RATE:
            raise AudioError(f"{path}: expected {SAMPLE_RATE} Hz, got {fh.getframerate()}")
        raw = fh.readframes(fh.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples)


def write_wav(path: str | Path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate_hz)
        fh.writeframes(pcm.tobytes())


def write_feature_file(path: str | Path, vector: np.ndarray) -> None:
    """Write a pooled feature vector: magic "SVDF", u32 version, u32 D, D f32 LE."""
    vector = np.asarray(vector, dtype=np.float64)
    if vector.ndim != 1:
        raise FormatError("pooled feature must be a 1-D vector")
    if not np.all(np.isfinite(vector)):
        raise FormatError("pooled feature contains non-finite values")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(vector)))
        fh.write(vector.astype("<f4").tobytes())


def read_feature_file(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic, not a pooled feature file")
    if len(data) < 12:
        raise FormatError(f"{path}: truncated header")
    version, dim = struct.unpack("<II", data[4:12])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    payload = data[12:]
    if len(payload) != 4 * dim:
        raise FormatError(f"{path}: declared {dim} values but payload holds {len(payload) // 4}")
    vector = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    if not np.all(np.isfinite(vector)):
        raise FormatError(f"{path}: non-finite feature values")
    return vector


def write_spectrogram_file(path: str | Path, frames: np.ndarray) -> None:
    """Write a spectrogram cache: magic "SVDS", u32 version, u32 T, u32 257,
    then T x 257 f32 LE row-major."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != N_BINS:
        raise FormatError(f"spectrogram must be (T, {N_BINS})")
    with open(path, "wb") as fh:
        fh.write(SPECTROGRAM_MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, frames.shape[0], N_BINS))
        fh.write(np.ascontiguousarray(frames, dtype="<f4").tobytes())


def read_spectrogram_file(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != SPECTROGRAM_MAGIC:
        raise FormatError(f"{path}: bad magic, not a spectrogram cache")
    if len(data) < 16:
        raise FormatError(f"{path}: truncated header")
    version, t, bins = struct.unpack("<III", data[4:16])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if bins != N_BINS:
        raise FormatError(f"{path}: expected {N_BINS} bins per frame, got {bins}")
    payload = data[16:]
    if len(payload) != 4 * t * bins:
        raise FormatError(f"{path}: truncated payload")
    frames = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(t, bins)
    if not np.all(np.isfinite(frames)):
        raise FormatError(f"{path}: non-finite spectrogram values")
    return frames


def read_model_input(path: str | Path) -> np.ndarray:
    """Read either feature-file kind, dispatching on the magic bytes."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == FEATURE_MAGIC:
        return read_feature_file(path)
    if magic == SPECTROGRAM_MAGIC:
        return read_spectrogram_file(path)
    raise FormatError(f"{path}: unrecognized feature file magic {magic!r}")
