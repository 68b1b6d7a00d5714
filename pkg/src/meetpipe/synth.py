"""Synthetic talker corpus for demos and tests.

Each synthetic speaker is a harmonic source with a fixed fundamental and a
personal set of resonance peaks, amplitude modulated at a syllable-like rate.
The spectra differ enough between speakers that embedding based clustering
has something real to work with, while everything stays seeded and cheap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import AudioClip
from .errors import ConfigurationError

_SYLLABLES = (
    "ba", "de", "ki", "lo", "mu", "na", "po", "re", "sa", "ti",
    "vo", "wa", "ze", "fi", "gu", "ha", "jo", "ku", "le", "mi",
)


def vocabulary(size: int) -> list[str]:
    """Deterministic list of pronounceable pseudo words."""
    words = []
    i = 0
    while len(words) < size:
        first = _SYLLABLES[i % len(_SYLLABLES)]
        second = _SYLLABLES[(i // len(_SYLLABLES) + i) % len(_SYLLABLES)]
        word = first + second + (_SYLLABLES[i % 7] if i % 3 == 0 else "")
        if word not in words:
            words.append(word)
        i += 1
    return words


@dataclass(frozen=True)
class SpeakerProfile:
    """Source parameters for one synthetic talker."""

    name: str
    f0: float
    resonances: tuple[tuple[float, float], ...]  # (centre_hz, width_hz)
    syllable_rate: float


def make_profiles(num_speakers: int, rng: np.random.Generator) -> list[SpeakerProfile]:
    """Speakers with fundamentals spread over a fixed range plus jitter."""
    if num_speakers < 1:
        raise ConfigurationError("need at least one speaker")
    lo, hi = 105.0, 285.0
    profiles = []
    for i in range(num_speakers):
        if num_speakers == 1:
            base = 0.5 * (lo + hi)
        else:
            base = lo + (hi - lo) * i / (num_speakers - 1)
        f0 = base * (1.0 + rng.uniform(-0.03, 0.03))
        centres = rng.uniform(350.0, 3200.0, size=3)
        widths = rng.uniform(120.0, 320.0, size=3)
        resonances = tuple(
            (float(c), float(w)) for c, w in zip(np.sort(centres), widths)
        )
        rate = float(rng.uniform(3.0, 5.0))
        profiles.append(SpeakerProfile(f"spk{chr(ord('a') + i)}", f0, resonances, rate))
    return profiles


def _resonance_gain(freqs: np.ndarray, profile: SpeakerProfile) -> np.ndarray:
    gain = np.full_like(freqs, 0.04)
    for centre, width in profile.resonances:
        gain = gain + np.exp(-0.5 * ((freqs - centre) / width) ** 2)
    return gain


def synth_utterance(
    profile: SpeakerProfile,
    duration: float,
    rng: np.random.Generator,
    sample_rate: int = 16000,
) -> AudioClip:
    """One voiced utterance of roughly the requested duration."""
    num = max(int(round(duration * sample_rate)), sample_rate // 10)
    t = np.arange(num) / sample_rate
    # slow fundamental drift so consecutive utterances are not phase locked
    drift = 1.0 + 0.03 * np.sin(2.0 * np.pi * rng.uniform(0.2, 0.6) * t + rng.uniform(0, 2 * np.pi))
    f0 = profile.f0 * drift
    phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate

    max_harmonic = int(3800.0 // profile.f0)
    signal = np.zeros(num)
    for k in range(1, max_harmonic + 1):
        amp = _resonance_gain(np.array([k * profile.f0]), profile)[0] / k**0.4
        signal += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))

    # shallow syllable-rate modulation, deep enough to look like speech but
    # not deep enough to fragment energy based activity detection
    mod = 0.7 + 0.3 * 0.5 * (1.0 + np.sin(2.0 * np.pi * profile.syllable_rate * t + rng.uniform(0, 2 * np.pi)))
    signal *= mod
    signal += 0.002 * rng.standard_normal(num)

    ramp = min(int(0.03 * sample_rate), num // 4)
    if ramp > 0:
        fade = 0.5 * (1.0 - np.cos(np.pi * np.arange(ramp) / ramp))
        signal[:ramp] *= fade
        signal[-ramp:] *= fade[::-1]

    rms = np.sqrt(np.mean(signal**2))
    signal *= 0.08 / max(rms, 1e-12)
    return AudioClip(signal, sample_rate)
