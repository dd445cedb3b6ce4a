"""Audio buffers and WAV file I/O (PCM16 or float32, mono or stereo)."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import FormatError, ValidationError

SAMPLE_RATE = 48000


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """Channel-major samples, shape ``(channels, length)``."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[None, :]
        if s.ndim != 2 or s.shape[0] not in (1, 2):
            raise ValidationError(f"audio must have 1 or 2 channels, got shape {s.shape}")
        if self.sample_rate <= 0:
            raise ValidationError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(s)):
            raise ValidationError("audio contains non-finite samples")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    def __len__(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    @property
    def mono(self) -> np.ndarray:
        if self.channels != 1:
            raise ValidationError("expected a single-channel buffer")
        return self.samples[0]

    def crop(self, start: int, stop: int | None = None) -> "AudioBuffer":
        return AudioBuffer(self.samples[:, start:stop], self.sample_rate)


def read_wav(path) -> AudioBuffer:
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported sample encoding {data.dtype} (PCM16 or float32 only)")
    if samples.ndim == 1:
        samples = samples[None, :]
    else:
        samples = samples.T
    if samples.shape[0] not in (1, 2):
        raise FormatError(f"{path}: {samples.shape[0]} channels (1 or 2 supported)")
    try:
        return AudioBuffer(samples, rate)
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_wav(buffer: AudioBuffer, path, encoding: str = "float32") -> None:
    if encoding == "float32":
        data = buffer.samples.astype(np.float32)
    elif encoding == "pcm16":
        data = np.clip(np.round(buffer.samples * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise FormatError(f"unknown encoding {encoding!r}")
    data = data[0] if buffer.channels == 1 else np.ascontiguousarray(data.T)
    wavfile.write(Path(path), buffer.sample_rate, data)
