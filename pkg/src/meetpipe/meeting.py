"""Meeting mixture simulation with segment level ground truth.

A meeting is a sequence of utterances drawn from a pool, placed on a common
timeline so that the fraction of overlapped speech tracks a requested target.
At most two talkers are ever active at once and a talker never overlaps
themselves.  Each placed utterance is convolved with the room response for
its speaker position, summed into the microphone mixture, and also kept as a
per-speaker image so that ideal masks and separation references exist.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .annotations import (
    MIXTURE_STREAM,
    SegmentAnnotation,
    SpeakerTranscript,
    TranscriptUtterance,
    quantize_ms,
)
from .audio import AudioClip, read_wav, write_wav
from .errors import (
    ConfigurationError,
    FormatError,
    OracleUnavailableError,
    SchedulingError,
    ShapeError,
)
from .rir import ArrayGeometry, RoomSpec, compute_rir
from .stft import Spectrogram, TFMask, stft
from . import synth

IRM_EPS = 1e-8
SILENCE_RANGES = {"short": (0.1, 0.5), "long": (2.9, 3.0)}
# skip overlaps too short to matter; keeps the controller from emitting dust
MIN_OVERLAP = 0.05
SOURCE_WALL_MARGIN = 0.4
MIN_SOURCE_MIC_DIST = 0.3


@dataclass(frozen=True)
class PoolUtterance:
    """One pool entry: mono audio, its words, and who spoke it."""

    speaker: str
    clip: AudioClip
    words: tuple[str, ...]

    def __post_init__(self):
        if self.clip.num_channels != 1:
            raise ShapeError(f"pool utterance for {self.speaker} must be mono")


@dataclass
class MeetingSpec:
    """Recipe for one simulated session."""

    num_speakers: int = 2
    target_overlap: float = 0.2
    session_length: float = 60.0
    silence_mode: str = "short"
    noise_snr_db: float = 40.0
    seed: int = 0

    def __post_init__(self):
        if self.num_speakers < 1:
            raise ConfigurationError(f"num_speakers must be >= 1, got {self.num_speakers}")
        if not 0.0 <= self.target_overlap <= 0.5:
            raise ConfigurationError(
                f"target_overlap must lie in [0, 0.5], got {self.target_overlap}"
            )
        if self.session_length <= 0:
            raise ConfigurationError("session_length must be positive")
        if self.silence_mode not in SILENCE_RANGES:
            raise ConfigurationError(
                f"silence_mode must be one of {sorted(SILENCE_RANGES)}, got {self.silence_mode!r}"
            )


@dataclass
class GroundTruth:
    """Everything the simulator knows about a rendered session."""

    segments: list[SegmentAnnotation]
    per_source_images: dict[str, AudioClip]
    noise: AudioClip
    transcripts: SpeakerTranscript
    speaker_positions: dict[str, tuple[float, float, float]] = field(default_factory=dict)

    @property
    def speakers(self) -> list[str]:
        return sorted(self.per_source_images)


def default_room(seed: int = 0) -> RoomSpec:
    """Mid-size office with moderate damping."""
    return RoomSpec(dimensions=(6.0, 5.0, 3.0), absorption=0.5, max_reflection_order=3)


def default_array(room: RoomSpec) -> ArrayGeometry:
    """Seven microphones: one centre plus a 4.25 cm ring at table height."""
    lx, ly, lz = room.dimensions
    return ArrayGeometry.circular((lx / 2.0, ly / 2.0, min(1.0, lz / 2.0)))


# ---------------------------------------------------------------------------
# utterance pools


def build_synthetic_pool(
    num_speakers: int,
    utterances_per_speaker: int,
    seed: int = 0,
    duration_range: tuple[float, float] = (1.8, 3.5),
    words_per_second: float = 2.5,
    sample_rate: int = 16000,
) -> list[PoolUtterance]:
    """Seeded pool of synthetic talkers with pseudo-word transcripts."""
    rng = np.random.default_rng(seed)
    profiles = synth.make_profiles(num_speakers, rng)
    vocab = synth.vocabulary(200)
    pool = []
    for profile in profiles:
        for _ in range(utterances_per_speaker):
            duration = rng.uniform(*duration_range)
            clip = synth.synth_utterance(profile, duration, rng, sample_rate)
            count = max(1, int(round(clip.duration * words_per_second)))
            words = tuple(vocab[i] for i in rng.integers(0, len(vocab), size=count))
            pool.append(PoolUtterance(profile.name, clip, words))
    return pool


def save_utterance_pool(pool: list[PoolUtterance], directory: str | os.PathLike) -> None:
    """Write pool WAVs with sidecar .txt transcripts and a speaker manifest."""
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    manifest = {}
    for idx, utt in enumerate(pool):
        stem = f"utt{idx:04d}"
        write_wav(os.path.join(directory, stem + ".wav"), utt.clip)
        with open(os.path.join(directory, stem + ".txt"), "w") as fh:
            fh.write(" ".join(utt.words) + "\n")
        manifest[stem + ".wav"] = utt.speaker
    with open(os.path.join(directory, "speakers.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_utterance_pool(directory: str | os.PathLike) -> list[PoolUtterance]:
    directory = os.fspath(directory)
    manifest_path = os.path.join(directory, "speakers.json")
    if not os.path.exists(manifest_path):
        raise FormatError(f"{manifest_path}: speaker manifest not found")
    with open(manifest_path) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{manifest_path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    pool = []
    for wav_name in sorted(manifest):
        wav_path = os.path.join(directory, wav_name)
        txt_path = os.path.splitext(wav_path)[0] + ".txt"
        if not os.path.exists(txt_path):
            raise FormatError(f"{txt_path}: sidecar transcript not found")
        clip = read_wav(wav_path)
        if clip.num_channels != 1:
            clip = clip.channel(0)
        with open(txt_path) as fh:
            words = tuple(fh.read().split())
        pool.append(PoolUtterance(manifest[wav_name], clip, words))
    if not pool:
        raise FormatError(f"{directory}: utterance pool is empty")
    return pool


# ---------------------------------------------------------------------------
# scheduling


@dataclass(frozen=True)
class _Placement:
    speaker: str
    utterance: PoolUtterance
    start: float  # seconds, on the millisecond grid

    @property
    def end(self) -> float:
        return self.start + self.utterance.clip.duration


def _schedule(
    pool: list[PoolUtterance],
    spec: MeetingSpec,
    rng: np.random.Generator,
) -> list[_Placement]:
    speakers = sorted({u.speaker for u in pool})
    if len(speakers) < spec.num_speakers:
        raise SchedulingError(
            f"pool has {len(speakers)} speakers, need {spec.num_speakers}"
        )
    chosen = [str(s) for s in rng.choice(speakers, size=spec.num_speakers, replace=False)]
    queues: dict[str, list[PoolUtterance]] = {s: [] for s in chosen}
    for utt in pool:
        if utt.speaker in queues:
            queues[utt.speaker].append(utt)
    for s in chosen:
        rng.shuffle(queues[s])

    silence_lo, silence_hi = SILENCE_RANGES[spec.silence_mode]
    ratio = spec.target_overlap
    placements: list[_Placement] = []
    cum_speech = 0.0
    cum_overlap = 0.0
    latest_end = 0.0  # end of the utterance that currently closes the meeting
    cover_end = 0.0  # latest end among all earlier utterances
    latest_start = 0.0
    latest_speaker = None

    while True:
        candidates = [s for s in chosen if queues[s]]
        if not candidates:
            break
        order = [s for s in candidates if s != latest_speaker] or list(candidates)
        rng.shuffle(order)
        placed = None
        for speaker in order:
            gap = rng.uniform(silence_lo, silence_hi)
            for i, utt in enumerate(queues[speaker]):
                dur = utt.clip.duration
                want = ratio / (1.0 + ratio) * (cum_speech + dur) - cum_overlap
                if placements and speaker != latest_speaker:
                    max_ov = min(latest_end - max(cover_end, latest_start), 0.95 * dur)
                else:
                    max_ov = 0.0
                overlap = float(np.clip(want, 0.0, max_ov))
                if overlap < MIN_OVERLAP:
                    overlap = 0.0
                if not placements:
                    start = 0.0
                elif overlap > 0.0:
                    start = quantize_ms(latest_end - overlap)
                else:
                    start = quantize_ms(latest_end + gap)
                if start + dur <= spec.session_length + 1e-9:
                    placed = _Placement(speaker, queues[speaker].pop(i), max(0.0, start))
                    break
            if placed is not None:
                break
        if placed is None:
            break

        placements.append(placed)
        if len(placements) > 1:
            cum_overlap += max(0.0, latest_end - placed.start)
        cum_speech += placed.utterance.clip.duration
        cover_end = latest_end
        latest_end = placed.end
        latest_start = placed.start
        latest_speaker = placed.speaker

    if not placements:
        raise SchedulingError("utterance pool too short for the requested session")
    achieved = cum_overlap / max(cum_speech - cum_overlap, 1e-9)
    if abs(achieved - ratio) > 0.02:
        raise SchedulingError(
            f"achieved overlap ratio {achieved:.3f} misses target {ratio:.3f} "
            f"by more than 0.02; pool may be too small"
        )
    return placements


# ---------------------------------------------------------------------------
# rendering


def _speaker_positions(
    speakers: list[str],
    room: RoomSpec,
    mics: ArrayGeometry,
    rng: np.random.Generator,
) -> dict[str, tuple[float, float, float]]:
    dims = np.asarray(room.dimensions)
    if np.any(dims <= 2 * SOURCE_WALL_MARGIN):
        raise ConfigurationError(
            f"room {room.dimensions} too small for a {SOURCE_WALL_MARGIN} m source margin"
        )
    positions = {}
    for speaker in speakers:
        for _ in range(200):
            pos = rng.uniform(SOURCE_WALL_MARGIN, dims - SOURCE_WALL_MARGIN)
            dist = np.linalg.norm(mics.mic_positions - pos, axis=1).min()
            if dist >= MIN_SOURCE_MIC_DIST:
                positions[speaker] = tuple(float(x) for x in pos)
                break
        else:
            raise SchedulingError(f"could not place speaker {speaker} away from the array")
    return positions


def simulate_meeting(
    pool: list[PoolUtterance],
    spec: MeetingSpec,
    room: RoomSpec | None = None,
    mics: ArrayGeometry | None = None,
    sample_rate: int = 16000,
) -> tuple[AudioClip, GroundTruth]:
    """Render one session; same seed and inputs give bit-identical output.

    Returns:
        mixture: M x S clip, sum of all per-speaker images plus sensor noise
        ground_truth: segments, images, noise, transcripts, positions
    """
    room = room if room is not None else default_room()
    mics = mics if mics is not None else default_array(room)
    rng = np.random.default_rng(spec.seed)

    placements = _schedule(pool, spec, rng)
    speakers = sorted({p.speaker for p in placements})
    positions = _speaker_positions(speakers, room, mics, rng)
    rirs = {
        s: compute_rir(room, np.asarray(positions[s]), mics, sample_rate) for s in speakers
    }

    total = int(np.ceil(spec.session_length * sample_rate))
    images = {s: np.zeros((mics.num_mics, total)) for s in speakers}
    segments = []
    transcripts = SpeakerTranscript()
    for placement in placements:
        start_sample = int(round(placement.start * sample_rate))
        wet = fftconvolve(rirs[placement.speaker], placement.utterance.clip.samples, axes=1)
        stop = min(total, start_sample + wet.shape[1])
        images[placement.speaker][:, start_sample:stop] += wet[:, : stop - start_sample]
        end = quantize_ms(placement.end)
        segments.append(
            SegmentAnnotation(MIXTURE_STREAM, placement.speaker, placement.start, end)
        )
        transcripts.add(
            placement.speaker,
            TranscriptUtterance(placement.start, end, placement.utterance.words),
        )

    speech = np.zeros((mics.num_mics, total))
    for s in speakers:
        speech += images[s]
    speech_rms = np.sqrt(np.mean(speech**2))
    noise_std = speech_rms * 10.0 ** (-spec.noise_snr_db / 20.0)
    noise = rng.normal(0.0, noise_std, size=speech.shape) if noise_std > 0 else np.zeros_like(speech)
    mixture = speech + noise

    ground_truth = GroundTruth(
        segments=sorted(segments, key=lambda g: (g.start, g.end, g.speaker)),
        per_source_images={s: AudioClip(images[s], sample_rate) for s in speakers},
        noise=AudioClip(noise, sample_rate),
        transcripts=transcripts,
        speaker_positions=positions,
    )
    return AudioClip(mixture, sample_rate), ground_truth


# ---------------------------------------------------------------------------
# ideal masks


def oracle_masks(
    ground_truth: GroundTruth,
    mixture_spec: Spectrogram,
    ref_channel: int = 0,
) -> tuple[list[TFMask], TFMask]:
    """Ideal ratio masks at one reference channel.

    Each speaker mask is its image magnitude over the total magnitude of all
    images plus noise (plus a small epsilon), so masks are in [0, 1] and sum
    to at most one per bin.  Mask order follows sorted speaker names.
    """
    if not ground_truth.per_source_images:
        raise OracleUnavailableError("ground truth has no per-source images")
    frame_len, hop = mixture_spec.frame_len, mixture_spec.hop
    mags = []
    for speaker in ground_truth.speakers:
        image = ground_truth.per_source_images[speaker].channel(ref_channel)
        mags.append(stft(image, frame_len, hop).magnitude()[0])
    noise_mag = stft(ground_truth.noise.channel(ref_channel), frame_len, hop).magnitude()[0]
    if mags[0].shape != mixture_spec.bins.shape[1:]:
        raise ShapeError(
            f"image frames {mags[0].shape} do not match mixture {mixture_spec.bins.shape[1:]}; "
            "analyse both with the same settings"
        )
    denom = np.sum(mags, axis=0) + noise_mag + IRM_EPS
    speech = [TFMask(m / denom) for m in mags]
    return speech, TFMask(noise_mag / denom)


class OracleMaskEstimator:
    """Chunk mask estimator backed by simulator ground truth.

    Per chunk the speakers with the most ideal-mask mass are mapped to the
    output slots.  With shuffle on (the default) the slot order is randomised
    per chunk with a seed derived from the chunk position, mimicking the
    arbitrary output order of a permutation invariant separator; stitching
    has to undo it.
    """

    def __init__(
        self,
        images: dict[str, AudioClip],
        noise: AudioClip,
        num_streams: int = 2,
        ref_channel: int = 0,
        shuffle: bool = True,
        seed: int = 0,
    ):
        if not images:
            raise OracleUnavailableError("oracle estimator needs per-source images")
        self.images = images
        self.noise = noise
        self.num_streams = int(num_streams)
        self.ref_channel = ref_channel
        self.shuffle = shuffle
        self.seed = seed
        self._cache: dict[tuple[int, int], tuple[list[np.ndarray], np.ndarray]] = {}

    @classmethod
    def from_ground_truth(cls, ground_truth: GroundTruth, **kwargs) -> "OracleMaskEstimator":
        return cls(ground_truth.per_source_images, ground_truth.noise, **kwargs)

    def _full_masks(self, frame_len: int, hop: int):
        key = (frame_len, hop)
        if key not in self._cache:
            speakers = sorted(self.images)
            mags = [
                stft(self.images[s].channel(self.ref_channel), frame_len, hop).magnitude()[0]
                for s in speakers
            ]
            noise_mag = stft(self.noise.channel(self.ref_channel), frame_len, hop).magnitude()[0]
            denom = np.sum(mags, axis=0) + noise_mag + IRM_EPS
            self._cache[key] = ([m / denom for m in mags], noise_mag / denom)
        return self._cache[key]

    def estimate(self, chunk: Spectrogram, frame_offset: int) -> list[TFMask]:
        speech, noise = self._full_masks(chunk.frame_len, chunk.hop)
        lo, hi = frame_offset, frame_offset + chunk.num_frames
        if hi > speech[0].shape[0]:
            raise ShapeError(
                f"chunk frames [{lo}, {hi}) exceed the {speech[0].shape[0]} ground truth frames"
            )
        slices = [m[lo:hi] for m in speech]
        mass = np.array([float(s.sum()) for s in slices])
        order = np.argsort(-mass, kind="stable")[: self.num_streams]
        order = np.sort(order)  # canonical slot order before any shuffle
        out = [slices[i] for i in order]
        while len(out) < self.num_streams:
            out.append(np.zeros_like(noise[lo:hi]))
        if self.shuffle:
            rng = np.random.default_rng((self.seed, frame_offset))
            perm = rng.permutation(self.num_streams)
            out = [out[i] for i in perm]
        return [TFMask(m) for m in out] + [TFMask(noise[lo:hi])]
