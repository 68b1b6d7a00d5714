"""Multichannel audio container and WAV file I/O.

Shape convention used throughout the toolkit:
    samples: C x S float64 (C: num_channels, S: num_frames)
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

from .errors import BoundsError, FormatError, ShapeError

PCM16_SCALE = 32768.0


@dataclass
class AudioClip:
    """A fixed-rate multichannel waveform.

    Arguments:
        samples: C x S array, mono input may be passed as a 1-D array
        sample_rate: frames per second, positive
    """

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if samples.ndim != 2:
            raise ShapeError(f"expected 1-D or 2-D samples, got ndim={samples.ndim}")
        if samples.shape[0] < 1:
            raise ShapeError("clip needs at least one channel")
        if not np.all(np.isfinite(samples)):
            raise ShapeError("clip contains non-finite samples")
        if self.sample_rate <= 0:
            raise ShapeError(f"sample_rate must be positive, got {self.sample_rate}")
        self.samples = samples
        self.sample_rate = int(self.sample_rate)

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_frames(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.samples.shape[1] / self.sample_rate

    def channel(self, index: int) -> "AudioClip":
        """Single channel as a new mono clip."""
        if not 0 <= index < self.num_channels:
            raise BoundsError(f"channel {index} out of range [0, {self.num_channels})")
        return AudioClip(self.samples[index].copy(), self.sample_rate)

    def crop(self, start_frame: int, end_frame: int) -> "AudioClip":
        """Sample range [start_frame, end_frame) as a new clip."""
        if start_frame < 0 or end_frame > self.num_frames or start_frame >= end_frame:
            raise BoundsError(
                f"crop [{start_frame}, {end_frame}) outside [0, {self.num_frames})"
            )
        return AudioClip(self.samples[:, start_frame:end_frame].copy(), self.sample_rate)


def read_wav(path: str | os.PathLike) -> AudioClip:
    """Read a PCM16 or IEEE float32 WAV file.

    Integer samples are scaled to [-1, 1); float samples are taken verbatim.
    """
    rate, data = wavfile.read(os.fspath(path))
    if data.ndim == 1:
        data = data[:, None]
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported WAV sample format {data.dtype}")
    return AudioClip(samples.T, int(rate))


def write_wav(path: str | os.PathLike, clip: AudioClip, encoding: str = "float32") -> None:
    """Write a clip as WAV.

    Arguments:
        encoding: "float32" (IEEE float) or "pcm16" (clipped to [-1, 1))
    """
    data = clip.samples.T
    if encoding == "float32":
        out = data.astype(np.float32)
    elif encoding == "pcm16":
        clipped = np.clip(data, -1.0, 1.0 - 1.0 / PCM16_SCALE)
        out = np.round(clipped * PCM16_SCALE).astype(np.int16)
    else:
        raise ShapeError(f"unknown encoding {encoding!r}")
    if out.shape[1] == 1:
        out = out[:, 0]
    wavfile.write(os.fspath(path), clip.sample_rate, out)
