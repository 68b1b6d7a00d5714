"""Continuous separation of long recordings into a fixed number of streams.

The recording is analysed once, cut into overlapping chunks, and a pluggable
estimator produces per-chunk time-frequency masks whose output order is
arbitrary.  Consecutive chunks are aligned by comparing their masks (or
signals) on the shared overlap region, the aligned masks are averaged into
meeting-wide masks, and each stream is extracted with a mask-weighted MVDR
beamformer using one noise covariance for the whole recording.

Shape conventions (C: num_mics, T: num_frames, F: num_bins):
    spectrogram bins: C x T x F
    mask: T x F
    covariance: F x C x C
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .audio import AudioClip
from .errors import ConfigurationError, EstimationError, ShapeError
from .stft import Spectrogram, TFMask, istft, stft

COVARIANCE_LOADING = 1e-6
AMBIGUITY_TOL = 1e-12
TRACE_FLOOR = 1e-12
EMPTY_MASK_MEAN = 1e-4  # below this mean mask value a stream is treated as unused


@dataclass
class ChunkPlan:
    """Chunk spans in seconds; consecutive chunks share chunk_len - hop."""

    chunk_len: float
    hop: float
    boundaries: list[tuple[float, float]]

    @property
    def overlap(self) -> float:
        return self.chunk_len - self.hop

    @property
    def num_chunks(self) -> int:
        return len(self.boundaries)


def plan_chunks(duration: float, chunk_len: float = 2.4, hop: float = 0.8) -> ChunkPlan:
    """Tile [0, duration] with fixed-length chunks advancing by hop.

    The final chunk is clamped to the recording end; a recording shorter
    than one chunk yields a single full-length chunk.
    """
    if duration <= 0:
        raise ConfigurationError(f"duration must be positive, got {duration}")
    if not 0 < hop < chunk_len:
        raise ConfigurationError(f"need 0 < hop < chunk_len, got hop={hop}, chunk_len={chunk_len}")
    boundaries = []
    start = 0.0
    index = 0
    while True:
        end = min(start + chunk_len, duration)
        boundaries.append((start, end))
        if start + chunk_len >= duration - 1e-9:
            break
        index += 1
        start = index * hop
    return ChunkPlan(chunk_len, hop, boundaries)


class MaskEstimator(Protocol):
    """Per-chunk mask source: num_streams speech masks plus one noise mask."""

    num_streams: int

    def estimate(self, chunk: Spectrogram, frame_offset: int) -> list[TFMask]:
        ...


class UniformMaskEstimator:
    """Constant masks; useful as an interface check and a null baseline."""

    def __init__(self, num_streams: int = 2, value: float = 0.5):
        if not 0.0 <= value <= 1.0:
            raise ConfigurationError(f"mask value must lie in [0, 1], got {value}")
        self.num_streams = int(num_streams)
        self.value = value

    def estimate(self, chunk: Spectrogram, frame_offset: int) -> list[TFMask]:
        shape = (chunk.num_frames, chunk.num_bins)
        return [TFMask(np.full(shape, self.value)) for _ in range(self.num_streams + 1)]


@dataclass
class ChunkMasks:
    """Masks for one chunk: speech masks in slot order, noise mask last."""

    chunk_index: int
    frame_start: int
    masks: list[TFMask]

    def __post_init__(self):
        if len(self.masks) < 3:
            raise ShapeError("a chunk needs at least two speech masks plus noise")
        if self.num_streams not in (2, 3):
            raise ShapeError(f"num_streams must be 2 or 3, got {self.num_streams}")
        shapes = {m.values.shape for m in self.masks}
        if len(shapes) != 1:
            raise ShapeError(f"chunk masks disagree on shape: {sorted(shapes)}")

    @property
    def num_streams(self) -> int:
        return len(self.masks) - 1

    @property
    def num_frames(self) -> int:
        return self.masks[0].num_frames


def estimate_masks(
    chunk: Spectrogram, estimator: MaskEstimator, chunk_index: int, frame_start: int
) -> ChunkMasks:
    """Run one estimator call and validate its output."""
    try:
        masks = estimator.estimate(chunk, frame_start)
    except Exception as exc:
        raise EstimationError(f"mask estimator failed on chunk {chunk_index}: {exc}") from exc
    expected = estimator.num_streams + 1
    if len(masks) != expected:
        raise EstimationError(
            f"chunk {chunk_index}: estimator returned {len(masks)} masks, expected {expected}"
        )
    for m in masks:
        if m.values.shape != (chunk.num_frames, chunk.num_bins):
            raise EstimationError(
                f"chunk {chunk_index}: mask shape {m.values.shape} does not match "
                f"chunk frames x bins ({chunk.num_frames}, {chunk.num_bins})"
            )
    return ChunkMasks(chunk_index, frame_start, masks)


@dataclass
class StitchResult:
    masks: list[TFMask]  # speech masks in stream order, then the noise mask
    permutations: list[tuple[int, ...]]  # per chunk: stream slot -> chunk slot


def _best_permutation(
    cost: np.ndarray,
    context: str,
    recency: np.ndarray | None = None,
    mass: np.ndarray | None = None,
) -> tuple[int, ...]:
    """Minimum-total-cost permutation of the square cost matrix.

    A silent overlap region cannot distinguish streams that are all zero
    there, so near-tied permutations are re-scored by routing the most
    active chunk slots onto the most recently active streams; otherwise a
    talker returning from silence can land on a padding stream for the rest
    of the meeting.  With no activity signal at all the identity order is
    kept and a warning is raised.
    """
    size = cost.shape[0]
    perms = list(itertools.permutations(range(size)))
    totals = np.array([sum(cost[g, p[g]] for g in range(size)) for p in perms])
    best = float(totals.min())
    candidates = [p for p, t in zip(perms, totals) if t - best <= AMBIGUITY_TOL]
    if len(candidates) == 1:
        return candidates[0]
    if recency is not None and mass is not None:
        scores = [sum(recency[g] * mass[p[g]] for g in range(size)) for p in candidates]
        if max(scores) - min(scores) > 0.0:
            return candidates[int(np.argmax(scores))]
    identity = tuple(range(size))
    if len(candidates) == len(perms) and size > 1:
        warnings.warn(
            f"{context}: overlap region is ambiguous, keeping identity order",
            RuntimeWarning,
            stacklevel=3,
        )
    return identity if identity in candidates else candidates[0]


def stitch_masks(chunks: list[ChunkMasks], total_frames: int) -> StitchResult:
    """Align chunk masks left to right and average them into meeting masks.

    Chunk c is aligned to chunk c-1 by the permutation of its speech masks
    with the smallest mean absolute difference on the shared frames; the
    noise mask is never permuted.  Overlapping frames are averaged over all
    chunks that cover them.
    """
    if not chunks:
        raise ShapeError("no chunks to stitch")
    num_streams = chunks[0].num_streams
    num_bins = chunks[0].masks[0].num_bins
    for c in chunks:
        if c.num_streams != num_streams:
            raise ShapeError("chunks disagree on the number of streams")

    acc = np.zeros((num_streams + 1, total_frames, num_bins))
    count = np.zeros(total_frames)
    permutations: list[tuple[int, ...]] = []
    prev_aligned: list[np.ndarray] | None = None
    prev_span: tuple[int, int] | None = None
    recency = np.full(num_streams, -1.0)  # last frame with mask mass, -1 = never

    for chunk in chunks:
        lo = chunk.frame_start
        hi = lo + chunk.num_frames
        if hi > total_frames:
            raise ShapeError(f"chunk {chunk.chunk_index} frames [{lo}, {hi}) exceed {total_frames}")
        speech = [m.values for m in chunk.masks[:num_streams]]
        if prev_aligned is None:
            perm = tuple(range(num_streams))
        else:
            ov_lo, ov_hi = lo, min(prev_span[1], hi)
            if ov_hi > ov_lo:
                prev_ov = [m[ov_lo - prev_span[0] : ov_hi - prev_span[0]] for m in prev_aligned]
                cur_ov = [m[: ov_hi - ov_lo] for m in speech]
            else:
                # documented fallback: no shared frames, compare edge frames
                prev_ov = [m[-1:] for m in prev_aligned]
                cur_ov = [m[:1] for m in speech]
            cost = np.empty((num_streams, num_streams))
            for g in range(num_streams):
                for j in range(num_streams):
                    cost[g, j] = np.mean(np.abs(prev_ov[g] - cur_ov[j]))
            mass = np.array([float(np.mean(m)) for m in speech])
            perm = _best_permutation(cost, f"chunk {chunk.chunk_index}", recency, mass)
        aligned = [speech[perm[g]] for g in range(num_streams)]
        permutations.append(perm)
        for g in range(num_streams):
            acc[g, lo:hi] += aligned[g]
            active = np.flatnonzero(np.mean(aligned[g], axis=1) > 1e-6)
            if active.size:
                recency[g] = float(lo + active[-1])
        acc[num_streams, lo:hi] += chunk.masks[num_streams].values
        count[lo:hi] += 1.0
        prev_aligned = aligned
        prev_span = (lo, hi)

    if np.any(count == 0):
        raise ShapeError("chunk plan leaves frames uncovered; cannot stitch")
    stitched = acc / count[None, :, None]
    return StitchResult([TFMask(m) for m in stitched], permutations)


@dataclass
class SeparatedStreams:
    """Fixed-count output streams with their meeting-wide masks."""

    streams: list[AudioClip]
    stream_masks: list[TFMask] | None = None
    noise_mask: TFMask | None = None
    chunk_permutations: list[tuple[int, ...]] | None = None

    def __post_init__(self):
        if not self.streams:
            raise ShapeError("no output streams")
        lengths = {s.num_frames for s in self.streams}
        if len(lengths) != 1:
            raise ShapeError(f"streams disagree on length: {sorted(lengths)}")

    @property
    def num_streams(self) -> int:
        return len(self.streams)


def stitch_signals(
    chunk_signals: list[list[np.ndarray]],
    plan: ChunkPlan,
    sample_rate: int,
    frame_len: int = 512,
    hop: int = 256,
) -> tuple[SeparatedStreams, list[tuple[int, ...]]]:
    """Waveform-domain variant: align chunks by magnitude spectra, crossfade.

    Alignment cost is the mean squared difference of magnitude spectra over
    the overlapped samples; overlapped samples are blended with a linear
    crossfade.  A silent overlap keeps identity order and warns.
    """
    if len(chunk_signals) != plan.num_chunks:
        raise ShapeError(
            f"{len(chunk_signals)} chunk signal lists for {plan.num_chunks} planned chunks"
        )
    num_streams = len(chunk_signals[0])
    for c, sigs in enumerate(chunk_signals):
        if len(sigs) != num_streams:
            raise ShapeError(f"chunk {c} has {len(sigs)} streams, expected {num_streams}")

    def mag(x: np.ndarray) -> np.ndarray:
        return stft(AudioClip(x, sample_rate), frame_len, hop).magnitude()[0]

    samples = [
        (int(round(t0 * sample_rate)), int(round(t1 * sample_rate)))
        for t0, t1 in plan.boundaries
    ]
    total = samples[-1][1]
    acc = np.zeros((num_streams, total))
    weight = np.zeros(total)
    permutations: list[tuple[int, ...]] = []
    prev_aligned: list[np.ndarray] | None = None
    prev_lo = 0

    for c, (lo, hi) in enumerate(samples):
        sigs = [np.asarray(s, dtype=np.float64) for s in chunk_signals[c]]
        for s in sigs:
            if s.ndim != 1 or len(s) < hi - lo:
                raise ShapeError(f"chunk {c} signals must be 1-D with >= {hi - lo} samples")
        sigs = [s[: hi - lo] for s in sigs]

        if prev_aligned is None:
            perm = tuple(range(num_streams))
        else:
            ov = min(prev_lo + len(prev_aligned[0]), hi) - lo
            if ov >= frame_len:
                cost = np.empty((num_streams, num_streams))
                for g in range(num_streams):
                    m_prev = mag(prev_aligned[g][lo - prev_lo : lo - prev_lo + ov])
                    for j in range(num_streams):
                        cost[g, j] = np.mean((m_prev - mag(sigs[j][:ov])) ** 2)
            else:
                cost = np.zeros((num_streams, num_streams))
            perm = _best_permutation(cost, f"chunk {c}")
        aligned = [sigs[perm[g]] for g in range(num_streams)]
        permutations.append(perm)

        # trapezoid weight: fade in over the overlap with the previous chunk,
        # fade out over the overlap with the next; normalisation by the total
        # weight makes unevenly covered samples come out right
        w = np.ones(hi - lo)
        ramp_in = min(max(prev_lo + len(prev_aligned[0]) - lo, 0) if prev_aligned else 0, hi - lo)
        if ramp_in > 0:
            w[:ramp_in] = (np.arange(ramp_in) + 0.5) / ramp_in
        if c + 1 < len(samples):
            ramp_out = min(max(hi - samples[c + 1][0], 0), hi - lo)
            if ramp_out > 0:
                w[hi - lo - ramp_out :] = np.minimum(
                    w[hi - lo - ramp_out :], (np.arange(ramp_out)[::-1] + 0.5) / ramp_out
                )
        for g in range(num_streams):
            acc[g, lo:hi] += aligned[g] * w
        weight[lo:hi] += w
        prev_aligned = aligned
        prev_lo = lo

    weight = np.maximum(weight, 1e-12)
    streams = [AudioClip(acc[g] / weight, sample_rate) for g in range(num_streams)]
    return SeparatedStreams(streams), permutations


# ---------------------------------------------------------------------------
# spatial statistics and beamforming


@dataclass
class SpatialCovariance:
    """Per-frequency Hermitian covariance matrices, F x C x C."""

    matrices: np.ndarray

    def __post_init__(self):
        mats = np.asarray(self.matrices, dtype=np.complex128)
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
            raise ShapeError(f"expected F x C x C matrices, got shape {mats.shape}")
        drift = np.abs(mats - mats.conj().swapaxes(1, 2)).max(initial=0.0)
        scale = np.abs(mats).max(initial=0.0)
        if drift > 1e-9 * max(scale, 1.0):
            raise ShapeError(f"covariance not Hermitian: asymmetry {drift:.3e}")
        self.matrices = mats

    @property
    def num_bins(self) -> int:
        return self.matrices.shape[0]

    @property
    def num_channels(self) -> int:
        return self.matrices.shape[1]


def spatial_covariance(spec: Spectrogram, mask: TFMask) -> SpatialCovariance:
    """Mask-weighted covariance of the observation vectors per frequency.

    phi(f) = sum_t m(t,f) y(t,f) y(t,f)^H / sum_t m(t,f), plus diagonal
    loading of 1e-6 * trace / C.  Frequencies whose mask is identically zero
    fall back to the unweighted covariance.
    """
    if mask.values.shape != spec.bins.shape[1:]:
        raise ShapeError(
            f"mask shape {mask.values.shape} does not match spectrogram "
            f"frames x bins {spec.bins.shape[1:]}"
        )
    y = spec.bins  # C x T x F
    m = mask.values  # T x F
    num = np.einsum("tf,ctf,dtf->fcd", m, y, y.conj(), optimize=True)
    denom = m.sum(axis=0)  # F
    zero = denom <= 0.0
    if np.any(zero):
        unweighted = np.einsum("ctf,dtf->fcd", y, y.conj(), optimize=True) / max(
            spec.num_frames, 1
        )
        num[zero] = unweighted[zero]
        denom = np.where(zero, 1.0, denom)
    phi = num / denom[:, None, None]
    phi = 0.5 * (phi + phi.conj().swapaxes(1, 2))
    channels = phi.shape[1]
    trace = np.einsum("fcc->f", phi).real
    loading = COVARIANCE_LOADING * trace / channels
    phi += loading[:, None, None] * np.eye(channels)[None]
    return SpatialCovariance(phi)


def mvdr_beamform(
    phi_speech: SpatialCovariance,
    phi_noise: SpatialCovariance,
    spec: Spectrogram,
    ref_channel: int = 0,
) -> Spectrogram:
    """Distortionless extraction of one source, one weight vector per bin.

    w(f) = (phi_noise^-1 phi_speech / trace(phi_noise^-1 phi_speech)) u_ref

    Bins whose speech statistics carry no energy (trace below a floor, not
    finite, or a singular noise matrix) pass the reference channel through.
    """
    if phi_speech.matrices.shape != phi_noise.matrices.shape:
        raise ShapeError("speech and noise covariances disagree on shape")
    channels = phi_speech.num_channels
    if spec.num_channels != channels or spec.num_bins != phi_speech.num_bins:
        raise ShapeError(
            f"spectrogram C={spec.num_channels}, F={spec.num_bins} does not match "
            f"covariance C={channels}, F={phi_speech.num_bins}"
        )
    if not 0 <= ref_channel < channels:
        raise ShapeError(f"ref_channel {ref_channel} out of range [0, {channels})")

    weights = np.zeros((phi_speech.num_bins, channels), dtype=np.complex128)
    weights[:, ref_channel] = 1.0  # pass-through default
    try:
        ratio = np.linalg.solve(phi_noise.matrices, phi_speech.matrices)
        ok = np.ones(phi_speech.num_bins, dtype=bool)
    except np.linalg.LinAlgError:
        ratio = np.zeros_like(phi_speech.matrices)
        ok = np.zeros(phi_speech.num_bins, dtype=bool)
        for f in range(phi_speech.num_bins):
            try:
                ratio[f] = np.linalg.solve(phi_noise.matrices[f], phi_speech.matrices[f])
                ok[f] = True
            except np.linalg.LinAlgError:
                pass
    trace = np.einsum("fcc->f", ratio)
    usable = ok & np.isfinite(trace) & (trace.real > TRACE_FLOOR)
    if np.any(usable):
        weights[usable] = ratio[usable][:, :, ref_channel] / trace[usable][:, None]
    out = np.einsum("fc,ctf->tf", weights.conj(), spec.bins)
    return Spectrogram(out[None], spec.sample_rate, spec.frame_len, spec.hop)


def select_reference_channel(
    spec: Spectrogram, speech_masks: list[TFMask], noise_mask: TFMask
) -> int:
    """Channel with the best masked speech-to-noise power ratio."""
    power = np.abs(spec.bins) ** 2  # C x T x F
    speech = sum(np.einsum("tf,ctf->c", m.values, power) for m in speech_masks)
    noise = np.einsum("tf,ctf->c", noise_mask.values, power)
    return int(np.argmax(speech / np.maximum(noise, 1e-30)))


def separate(
    recording: AudioClip,
    estimator: MaskEstimator,
    chunk_len: float = 2.4,
    chunk_hop: float = 0.8,
    frame_len: int = 512,
    stft_hop: int = 256,
    ref_channel: int | str = 0,
) -> SeparatedStreams:
    """Full separation of one recording into estimator.num_streams streams.

    Analyse once, estimate masks per chunk, stitch, form one noise covariance
    and one covariance per stream over the whole meeting, beamform, and
    synthesise each stream back to the recording length.
    """
    spec = stft(recording, frame_len, stft_hop)
    plan = plan_chunks(recording.duration, chunk_len, chunk_hop)
    sample_rate = recording.sample_rate

    chunks = []
    for ci, (t0, t1) in enumerate(plan.boundaries):
        f0 = int(round(t0 * sample_rate / stft_hop))
        f1 = spec.num_frames if ci == plan.num_chunks - 1 else int(
            round(t1 * sample_rate / stft_hop)
        )
        f0 = min(f0, spec.num_frames - 1)
        f1 = max(min(f1, spec.num_frames), f0 + 1)
        sub = Spectrogram(spec.bins[:, f0:f1], sample_rate, frame_len, stft_hop)
        chunks.append(estimate_masks(sub, estimator, ci, f0))

    stitched = stitch_masks(chunks, spec.num_frames)
    speech_masks, noise_mask = stitched.masks[:-1], stitched.masks[-1]

    if ref_channel == "auto":
        ref = select_reference_channel(spec, speech_masks, noise_mask)
    else:
        ref = int(ref_channel)
    phi_noise = spatial_covariance(spec, noise_mask)
    streams = []
    for mask in speech_masks:
        if float(np.mean(mask.values)) < EMPTY_MASK_MEAN:
            # a stream that claimed nothing all meeting stays silent; the
            # per-frequency covariance fallback would beamform the mixture
            streams.append(AudioClip(np.zeros(recording.num_frames), sample_rate))
            continue
        phi_speech = spatial_covariance(spec, mask)
        beam = mvdr_beamform(phi_speech, phi_noise, spec, ref)
        streams.append(istft(beam, recording.num_frames))
    return SeparatedStreams(
        streams=streams,
        stream_masks=speech_masks,
        noise_mask=noise_mask,
        chunk_permutations=stitched.permutations,
    )


# ---------------------------------------------------------------------------
# oracle stream-to-speaker mapping


def oracle_track_map(
    streams: SeparatedStreams | list[AudioClip],
    references: dict[str, AudioClip],
    block: float = 0.8,
    frame_len: int = 512,
    hop: int = 256,
) -> dict[str, AudioClip]:
    """Rearrange stream content into per-speaker tracks, block by block.

    Within each block the reference images decide which speakers (at most
    two) are active; those speakers are assigned to the streams with the
    closest magnitude spectra.  Unassigned spans stay silent, so the tracks
    are directly comparable with the references.
    """
    clips = streams.streams if isinstance(streams, SeparatedStreams) else list(streams)
    if not clips or not references:
        raise ShapeError("need at least one stream and one reference")
    sample_rate = clips[0].sample_rate
    length = min(min(c.num_frames for c in clips), min(r.num_frames for r in references.values()))
    speakers = sorted(references)
    for clip in list(references.values()) + clips:
        if clip.num_channels != 1:
            raise ShapeError("track mapping expects mono streams and references")
        if clip.sample_rate != sample_rate:
            raise ShapeError("sample rate mismatch between streams and references")

    stream_mags = [stft(c, frame_len, hop).magnitude()[0] for c in clips]
    ref_mags = {s: stft(references[s], frame_len, hop).magnitude()[0] for s in speakers}

    block_samples = int(round(block * sample_rate))
    num_blocks = int(np.ceil(length / block_samples))
    ref_rms = {}
    for s in speakers:
        padded = np.zeros(num_blocks * block_samples)
        padded[:length] = references[s].samples[0, :length] ** 2
        ref_rms[s] = np.sqrt(padded.reshape(num_blocks, block_samples).mean(axis=1))
    activity_floor = {
        s: max(ref_rms[s].max(initial=0.0) * 10 ** (-30.0 / 20.0), 1e-7) for s in speakers
    }

    tracks = {s: np.zeros(length) for s in speakers}
    for b in range(num_blocks):
        lo = b * block_samples
        hi = min(length, lo + block_samples)
        f_lo = int(round(lo / hop))
        f_hi = max(int(round(hi / hop)), f_lo + 1)
        active = [s for s in speakers if ref_rms[s][b] > activity_floor[s]]
        if len(active) > 2:
            active = sorted(active, key=lambda s: -ref_rms[s][b])[:2]
            active = sorted(active)
        if not active:
            continue
        cost = np.empty((len(active), len(clips)))
        for i, s in enumerate(active):
            for j in range(len(clips)):
                cost[i, j] = np.mean((ref_mags[s][f_lo:f_hi] - stream_mags[j][f_lo:f_hi]) ** 2)
        best, best_cost = None, np.inf
        for combo in itertools.permutations(range(len(clips)), len(active)):
            c = sum(cost[i, combo[i]] for i in range(len(active)))
            if c < best_cost - 1e-15:
                best, best_cost = combo, c
        for i, s in enumerate(active):
            tracks[s][lo:hi] = clips[best[i]].samples[0, lo:hi]
    return {s: AudioClip(tracks[s], sample_rate) for s in speakers}


def augment_reference_channel(
    clip: AudioClip, noise_var: float = 1e-6, seed: int = 0
) -> AudioClip:
    """Append a pseudo-channel: channel 0 delayed one sample plus white noise.

    Gives covariance-based processing a second observation when only a
    single microphone is available.
    """
    rng = np.random.default_rng(seed)
    shifted = np.concatenate([[0.0], clip.samples[0, :-1]])
    extra = shifted + rng.normal(0.0, np.sqrt(noise_var), size=shifted.shape)
    return AudioClip(np.vstack([clip.samples, extra]), clip.sample_rate)
