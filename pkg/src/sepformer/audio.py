"""Mono 16-bit PCM WAV reading and writing.

Samples live in [-1, 1] scaled by 1/32768; writing rounds with saturation,
so read(write(x)) agrees with x to within one quantization step.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AudioFormatError, DataError

PCM_SCALE = 32768.0


@dataclass
class AudioSignal:
    samples: np.ndarray  # float64 in [-1, 1]
    sample_rate: int = 8000

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DataError(f"audio must be mono 1-D, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise DataError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("audio contains non-finite samples")
        if self.samples.size and np.abs(self.samples).max() > 1.0 + 1e-9:
            raise DataError("audio samples exceed [-1, 1]")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def read_wav(path) -> AudioSignal:
    """Read a mono PCM16 RIFF/WAVE file. No resampling: the signal carries
    whatever rate the header declares."""
    path = Path(path)
    if not path.exists():
        raise AudioFormatError(f"no such file: {path}")
    try:
        with wave.open(str(path), "rb") as w:
            channels = w.getnchannels()
            width = w.getsampwidth()
            comptype = w.getcomptype()
            rate = w.getframerate()
            frames = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise AudioFormatError(f"{path}: malformed WAV ({exc})") from exc
    if comptype != "NONE":
        raise AudioFormatError(f"{path}: compressed WAV ({comptype}) not supported")
    if channels != 1:
        raise AudioFormatError(f"{path}: expected mono, got {channels} channels")
    if width != 2:
        raise AudioFormatError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    pcm = np.frombuffer(frames, dtype="<i2")
    return AudioSignal(pcm.astype(np.float64) / PCM_SCALE, sample_rate=rate)


def write_wav(path, signal: AudioSignal) -> None:
    """Write mono PCM16 with saturating rounding."""
    pcm = np.clip(np.rint(signal.samples * PCM_SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(signal.sample_rate)
        w.writeframes(pcm.tobytes())
