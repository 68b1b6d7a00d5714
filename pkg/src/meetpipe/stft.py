"""Short-time Fourier analysis with exact overlap-add reconstruction.

The same square-root Hann window is used for analysis and synthesis, so the
overlap-add of windowed frames sums to a flat constant once the signal is
padded by one window tail on each side.  With that padding the round trip
istft(stft(x)) reproduces x up to float rounding for any hop that divides
frame_len into 2 or 4.

Shape conventions (C: num_channels, T: num_frames, F: num_bins):
    bins: C x T x F complex128, F = frame_len // 2 + 1
    mask: T x F float64 in [0, 1]
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import AudioClip
from .errors import ConfigurationError, ShapeError

SQRT_HANN = "sqrt_hann"


def _sqrt_hann(frame_len: int) -> np.ndarray:
    # periodic Hann, so w(n)^2 + w(n + frame_len/2)^2 == 1 exactly
    n = np.arange(frame_len)
    return np.sin(np.pi * n / frame_len)


def _check_config(frame_len: int, hop: int) -> None:
    if frame_len <= 0 or frame_len & (frame_len - 1):
        raise ConfigurationError(f"frame_len must be a power of two, got {frame_len}")
    if hop not in (frame_len // 2, frame_len // 4):
        raise ConfigurationError(
            f"hop {hop} breaks constant overlap-add for frame_len {frame_len}; "
            f"use {frame_len // 2} or {frame_len // 4}"
        )


@dataclass
class Spectrogram:
    """Complex one-sided spectra of a multichannel clip.

    Arguments:
        bins: C x T x F complex array
        sample_rate: rate of the analysed signal
        frame_len: analysis window length in samples
        hop: frame advance in samples
    """

    bins: np.ndarray
    sample_rate: int
    frame_len: int
    hop: int
    window: str = SQRT_HANN

    def __post_init__(self):
        bins = np.asarray(self.bins)
        if bins.ndim != 3:
            raise ShapeError(f"expected C x T x F bins, got ndim={bins.ndim}")
        _check_config(self.frame_len, self.hop)
        if bins.shape[2] != self.frame_len // 2 + 1:
            raise ShapeError(
                f"got {bins.shape[2]} bins for frame_len {self.frame_len}, "
                f"expected {self.frame_len // 2 + 1}"
            )
        if self.window != SQRT_HANN:
            raise ConfigurationError(f"unknown analysis window {self.window!r}")
        self.bins = bins.astype(np.complex128, copy=False)

    @property
    def num_channels(self) -> int:
        return self.bins.shape[0]

    @property
    def num_frames(self) -> int:
        return self.bins.shape[1]

    @property
    def num_bins(self) -> int:
        return self.bins.shape[2]

    def channel(self, index: int) -> "Spectrogram":
        return Spectrogram(
            self.bins[index : index + 1], self.sample_rate, self.frame_len, self.hop
        )

    def magnitude(self) -> np.ndarray:
        return np.abs(self.bins)


@dataclass
class TFMask:
    """Real-valued time-frequency weights in [0, 1], shared across channels."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ShapeError(f"expected T x F mask, got ndim={values.ndim}")
        if not np.all(np.isfinite(values)):
            raise ShapeError("mask contains non-finite values")
        lo, hi = values.min(initial=0.0), values.max(initial=0.0)
        if lo < -1e-9 or hi > 1.0 + 1e-9:
            raise ShapeError(f"mask values outside [0, 1]: min={lo}, max={hi}")
        self.values = np.clip(values, 0.0, 1.0)

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def num_bins(self) -> int:
        return self.values.shape[1]


def _num_frames(num_samples: int, frame_len: int, hop: int) -> int:
    pad = frame_len - hop
    return max(1, int(np.ceil((num_samples + pad) / hop)))


def stft(clip: AudioClip, frame_len: int = 512, hop: int = 256) -> Spectrogram:
    """Analyse a clip into one-sided complex spectra.

    The signal is zero padded by frame_len - hop samples at the front and
    enough at the back that every input sample falls in the flat region of
    the overlap-add window sum.  With the default half-window hop, frame t
    is centred on sample t * hop.
    """
    _check_config(frame_len, hop)
    if clip.num_frames == 0:
        raise ShapeError("cannot analyse an empty clip")
    pad = frame_len - hop
    num_frames = _num_frames(clip.num_frames, frame_len, hop)
    padded_len = (num_frames - 1) * hop + frame_len
    padded = np.zeros((clip.num_channels, padded_len))
    padded[:, pad : pad + clip.num_frames] = clip.samples
    window = _sqrt_hann(frame_len)
    frames = np.lib.stride_tricks.sliding_window_view(padded, frame_len, axis=1)
    frames = frames[:, ::hop, :][:, :num_frames, :] * window
    bins = np.fft.rfft(frames, axis=-1)
    return Spectrogram(bins, clip.sample_rate, frame_len, hop)


def istft(spec: Spectrogram, out_len: int) -> AudioClip:
    """Overlap-add synthesis back to a waveform of out_len samples."""
    if out_len < 0:
        raise ShapeError(f"out_len must be non-negative, got {out_len}")
    frame_len, hop = spec.frame_len, spec.hop
    pad = frame_len - hop
    window = _sqrt_hann(frame_len)
    frames = np.fft.irfft(spec.bins, n=frame_len, axis=-1) * window
    total = (spec.num_frames - 1) * hop + frame_len
    canvas = np.zeros((spec.num_channels, total))
    for t in range(spec.num_frames):
        canvas[:, t * hop : t * hop + frame_len] += frames[:, t]
    # analysis * synthesis Hann pairs overlap-add to this constant
    canvas /= frame_len / (2.0 * hop)
    out = np.zeros((spec.num_channels, out_len))
    avail = min(out_len, total - pad)
    out[:, :avail] = canvas[:, pad : pad + avail]
    return AudioClip(out, spec.sample_rate)


def apply_mask(spec: Spectrogram, mask: TFMask) -> Spectrogram:
    """Pointwise product of a mask with every channel of a spectrogram."""
    if mask.values.shape != spec.bins.shape[1:]:
        raise ShapeError(
            f"mask shape {mask.values.shape} does not match spectrogram "
            f"frames x bins {spec.bins.shape[1:]}"
        )
    return Spectrogram(
        spec.bins * mask.values[None], spec.sample_rate, spec.frame_len, spec.hop
    )


def frame_index(time_s: float, sample_rate: int, hop: int) -> int:
    """Frame whose centre is nearest to a time instant."""
    return int(round(time_s * sample_rate / hop))
