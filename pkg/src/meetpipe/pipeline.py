"""Session orchestration: config, manifests, staged execution, reports.

Every stage writes its artifacts to disk before the next stage starts, and
every stage reads only what is on disk, so any stage can be re-run in
isolation and deleting downstream artifacts never loses information.  File
writes go through a temp-file rename, which keeps concurrent runs over
disjoint sessions from ever exposing partial files.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .annotations import (
    SegmentAnnotation,
    SpeakerTranscript,
    TranscriptUtterance,
    read_rttm,
    read_transcript_json,
    write_rttm,
    write_transcript_json,
)
from .audio import AudioClip, read_wav, write_wav
from .diarization import DiarizationConfig, DiarizationResult, diarize, filter_enclosed
from .errors import ConfigurationError, FormatError, OracleUnavailableError
from .meeting import (
    MeetingSpec,
    OracleMaskEstimator,
    PoolUtterance,
    default_array,
    default_room,
    simulate_meeting,
)
from .metrics import cpwer, der, meeting_sdr, overlap_ratio
from .report import CONDITIONS, PipelineReport, SessionScore, render_figures
from .rir import ArrayGeometry, RoomSpec
from .separation import UniformMaskEstimator, oracle_track_map, separate

ESTIMATORS = ("oracle", "uniform")
ASR_MODES = ("simulate", "external")
ROUTING_MODES = ("best", "all")

CONDITION_RECIPES = {
    "0L": (0.0, "long"),
    "0S": (0.0, "short"),
    "OV10": (0.1, "short"),
    "OV20": (0.2, "short"),
    "OV30": (0.3, "short"),
    "OV40": (0.4, "short"),
}


def derive_seed(master: int, *parts: str) -> int:
    """Stable per-purpose seed: hash of the master seed and a label path."""
    text = f"{master}|" + "|".join(parts)
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "big")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class SeparationSettings:
    enabled: bool = True
    chunk_len: float = 2.4
    chunk_hop: float = 0.8
    num_streams: int = 2
    estimator: str = "oracle"
    ref_channel: int | str = 0
    frame_len: int = 512
    stft_hop: int = 256

    def __post_init__(self):
        if self.num_streams not in (2, 3):
            raise ConfigurationError(f"num_streams must be 2 or 3, got {self.num_streams}")
        if self.estimator not in ESTIMATORS:
            raise ConfigurationError(
                f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}"
            )
        if self.ref_channel != "auto":
            try:
                self.ref_channel = int(self.ref_channel)
            except (TypeError, ValueError):
                raise ConfigurationError(
                    f"ref_channel must be an index or 'auto', got {self.ref_channel!r}"
                ) from None


@dataclass
class AsrSettings:
    mode: str = "simulate"
    sub_rate: float = 0.0
    del_rate: float = 0.0
    ins_rate: float = 0.0
    routing: str = "best"
    hypothesis_dir: str | None = None

    def __post_init__(self):
        if self.mode not in ASR_MODES:
            raise ConfigurationError(f"asr mode must be one of {ASR_MODES}, got {self.mode!r}")
        for name in ("sub_rate", "del_rate", "ins_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1), got {rate}")
        if self.routing not in ROUTING_MODES:
            raise ConfigurationError(
                f"routing must be one of {ROUTING_MODES}, got {self.routing!r}"
            )
        if self.mode == "external":
            if not self.hypothesis_dir:
                raise ConfigurationError("external asr mode needs hypothesis_dir")
            if not os.path.isdir(self.hypothesis_dir):
                raise ConfigurationError(
                    f"hypothesis_dir does not resolve: {self.hypothesis_dir}"
                )


@dataclass
class ScoringSettings:
    collar: float = 0.0

    def __post_init__(self):
        if self.collar < 0:
            raise ConfigurationError(f"collar must be >= 0, got {self.collar}")


@dataclass
class PipelineConfig:
    separation: SeparationSettings = field(default_factory=SeparationSettings)
    diarization: DiarizationConfig = field(default_factory=DiarizationConfig)
    asr: AsrSettings = field(default_factory=AsrSettings)
    scoring: ScoringSettings = field(default_factory=ScoringSettings)
    seed: int = 0


CONFIG_TEMPLATE = """\
# meetpipe pipeline configuration.  Values below are the defaults.

[pipeline]
seed = {seed}

[separation]
# off runs diarization on channel 0 of the raw mixture
enabled = {enabled}
chunk_len = {chunk_len}
chunk_hop = {chunk_hop}
num_streams = {num_streams}
# oracle needs ground_truth/ next to each recording; uniform needs nothing
estimator = {estimator}
# channel index, or auto to pick by masked speech-to-noise ratio
ref_channel = {ref_channel}
frame_len = {frame_len}
stft_hop = {stft_hop}

[diarization]
clusterer = {clusterer}
max_speakers = {max_speakers}
ahc_threshold = {ahc_threshold}
top_p = {top_p}
window = {window}
stride = {stride}
merge_gap = {merge_gap}
enclosed_filter = {enclosed_filter}

[sad]
margin_db = {sad_margin_db}
peak_drop_db = {sad_peak_drop_db}
flatness_weight = {sad_flatness_weight}
transition_penalty = {sad_transition_penalty}
edge_drop_db = {sad_edge_drop_db}
min_segment = {sad_min_segment}
min_gap = {sad_min_gap}
# frames this far below a concurrent louder stream are dropped; inf disables
leak_gate_db = {leak_gate_db}

[asr]
mode = {mode}
sub_rate = {sub_rate}
del_rate = {del_rate}
ins_rate = {ins_rate}
routing = {routing}
# directory of <session>.json hypothesis transcripts; required for external
hypothesis_dir = {hypothesis_dir}

[scoring]
collar = {collar}
"""


def default_config_text(config: PipelineConfig | None = None) -> str:
    c = config if config is not None else PipelineConfig()
    return CONFIG_TEMPLATE.format(
        seed=c.seed,
        enabled=str(c.separation.enabled).lower(),
        chunk_len=c.separation.chunk_len,
        chunk_hop=c.separation.chunk_hop,
        num_streams=c.separation.num_streams,
        estimator=c.separation.estimator,
        ref_channel=c.separation.ref_channel,
        frame_len=c.separation.frame_len,
        stft_hop=c.separation.stft_hop,
        clusterer=c.diarization.clusterer,
        max_speakers=c.diarization.max_speakers,
        ahc_threshold=c.diarization.ahc_threshold,
        top_p=c.diarization.top_p,
        window=c.diarization.window,
        stride=c.diarization.stride,
        merge_gap=c.diarization.merge_gap,
        enclosed_filter=str(c.diarization.enclosed_filter).lower(),
        sad_margin_db=c.diarization.sad_margin_db,
        sad_peak_drop_db=c.diarization.sad_peak_drop_db,
        sad_flatness_weight=c.diarization.sad_flatness_weight,
        sad_transition_penalty=c.diarization.sad_transition_penalty,
        sad_edge_drop_db=c.diarization.sad_edge_drop_db,
        sad_min_segment=c.diarization.sad_min_segment,
        sad_min_gap=c.diarization.sad_min_gap,
        leak_gate_db=c.diarization.leak_gate_db,
        mode=c.asr.mode,
        sub_rate=c.asr.sub_rate,
        del_rate=c.asr.del_rate,
        ins_rate=c.asr.ins_rate,
        routing=c.asr.routing,
        hypothesis_dir=c.asr.hypothesis_dir or "",
        collar=c.scoring.collar,
    )


_CONFIG_SCHEMA = {
    "pipeline": {"seed"},
    "separation": {
        "enabled",
        "chunk_len",
        "chunk_hop",
        "num_streams",
        "estimator",
        "ref_channel",
        "frame_len",
        "stft_hop",
    },
    "diarization": {
        "clusterer",
        "max_speakers",
        "ahc_threshold",
        "top_p",
        "window",
        "stride",
        "merge_gap",
        "enclosed_filter",
    },
    "sad": {
        "margin_db",
        "peak_drop_db",
        "flatness_weight",
        "transition_penalty",
        "edge_drop_db",
        "min_segment",
        "min_gap",
        "leak_gate_db",
    },
    "asr": {"mode", "sub_rate", "del_rate", "ins_rate", "routing", "hypothesis_dir"},
    "scoring": {"collar"},
}


def _typed(parser, section, key, kind, default):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key)
    try:
        if kind is bool:
            return parser.getboolean(section, key)
        return kind(raw)
    except ValueError as exc:
        raise ConfigurationError(f"[{section}] {key} = {raw!r}: {exc}") from exc


def load_config(path: str | os.PathLike) -> PipelineConfig:
    """Parse and validate an INI config; unknown keys are errors."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    for section in parser.sections():
        if section not in _CONFIG_SCHEMA:
            raise ConfigurationError(f"{path}: unknown section [{section}]")
        unknown = set(parser.options(section)) - _CONFIG_SCHEMA[section]
        if unknown:
            raise ConfigurationError(
                f"{path}: unknown keys in [{section}]: {sorted(unknown)}"
            )

    hypothesis_dir = None
    if parser.has_option("asr", "hypothesis_dir"):
        raw = parser.get("asr", "hypothesis_dir").strip()
        if raw:
            hypothesis_dir = str((path.parent / raw).resolve()) if not os.path.isabs(raw) else raw

    separation = SeparationSettings(
        enabled=_typed(parser, "separation", "enabled", bool, True),
        chunk_len=_typed(parser, "separation", "chunk_len", float, 2.4),
        chunk_hop=_typed(parser, "separation", "chunk_hop", float, 0.8),
        num_streams=_typed(parser, "separation", "num_streams", int, 2),
        estimator=_typed(parser, "separation", "estimator", str, "oracle"),
        ref_channel=_typed(parser, "separation", "ref_channel", str, "0"),
        frame_len=_typed(parser, "separation", "frame_len", int, 512),
        stft_hop=_typed(parser, "separation", "stft_hop", int, 256),
    )
    diarization = DiarizationConfig(
        clusterer=_typed(parser, "diarization", "clusterer", str, "spectral"),
        max_speakers=_typed(parser, "diarization", "max_speakers", int, 8),
        ahc_threshold=_typed(parser, "diarization", "ahc_threshold", float, 0.35),
        top_p=_typed(parser, "diarization", "top_p", float, 0.3),
        window=_typed(parser, "diarization", "window", float, 1.5),
        stride=_typed(parser, "diarization", "stride", float, 0.75),
        merge_gap=_typed(parser, "diarization", "merge_gap", float, 0.25),
        enclosed_filter=_typed(parser, "diarization", "enclosed_filter", bool, True),
        sad_margin_db=_typed(parser, "sad", "margin_db", float, 12.0),
        sad_peak_drop_db=_typed(parser, "sad", "peak_drop_db", float, 35.0),
        sad_flatness_weight=_typed(parser, "sad", "flatness_weight", float, 2.0),
        sad_transition_penalty=_typed(parser, "sad", "transition_penalty", float, 2.0),
        sad_edge_drop_db=_typed(parser, "sad", "edge_drop_db", float, 8.0),
        sad_min_segment=_typed(parser, "sad", "min_segment", float, 0.1),
        sad_min_gap=_typed(parser, "sad", "min_gap", float, 0.1),
        leak_gate_db=_typed(parser, "sad", "leak_gate_db", float, 12.0),
    )
    asr = AsrSettings(
        mode=_typed(parser, "asr", "mode", str, "simulate"),
        sub_rate=_typed(parser, "asr", "sub_rate", float, 0.0),
        del_rate=_typed(parser, "asr", "del_rate", float, 0.0),
        ins_rate=_typed(parser, "asr", "ins_rate", float, 0.0),
        routing=_typed(parser, "asr", "routing", str, "best"),
        hypothesis_dir=hypothesis_dir,
    )
    scoring = ScoringSettings(collar=_typed(parser, "scoring", "collar", float, 0.0))
    return PipelineConfig(
        separation=separation,
        diarization=diarization,
        asr=asr,
        scoring=scoring,
        seed=_typed(parser, "pipeline", "seed", int, 0),
    )


def write_config(path: str | os.PathLike, config: PipelineConfig | None = None) -> None:
    with _atomic(Path(path)) as tmp:
        tmp.write_text(default_config_text(config))


# ---------------------------------------------------------------------------
# manifests


@dataclass
class SessionManifest:
    """Where one session's inputs live and which condition it belongs to."""

    session: str
    condition: str
    recording: Path
    rttm: Path
    transcript: Path

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise ConfigurationError(
                f"condition must be one of {CONDITIONS}, got {self.condition!r}"
            )
        self.recording = Path(self.recording)
        self.rttm = Path(self.rttm)
        self.transcript = Path(self.transcript)


def write_manifest(path: str | os.PathLike, entries: list[SessionManifest]) -> None:
    path = Path(path)
    records = []
    for entry in entries:
        records.append(
            {
                "session": entry.session,
                "condition": entry.condition,
                "recording": os.path.relpath(entry.recording, path.parent),
                "rttm": os.path.relpath(entry.rttm, path.parent),
                "transcript": os.path.relpath(entry.transcript, path.parent),
            }
        )
    with _atomic(path) as tmp:
        tmp.write_text(json.dumps({"sessions": records}, indent=2, sort_keys=True) + "\n")


def read_manifest(path: str | os.PathLike) -> list[SessionManifest]:
    """Load a manifest; every referenced path must resolve."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"manifest not found: {path}")
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(payload, dict) or "sessions" not in payload:
        raise FormatError(f"{path}: expected an object with a sessions list")
    entries = []
    for idx, rec in enumerate(payload["sessions"]):
        try:
            entry = SessionManifest(
                session=rec["session"],
                condition=rec["condition"],
                recording=path.parent / rec["recording"],
                rttm=path.parent / rec["rttm"],
                transcript=path.parent / rec["transcript"],
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{path}: session {idx} missing field: {exc}") from exc
        for attr in ("recording", "rttm", "transcript"):
            target = getattr(entry, attr)
            if not target.exists():
                raise ConfigurationError(f"{path}: session {entry.session}: {attr} does not resolve: {target}")
        entries.append(entry)
    return entries


# ---------------------------------------------------------------------------
# atomic persistence helpers


@contextmanager
def _atomic(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".part")
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def _write_json(path: Path, payload) -> None:
    with _atomic(path) as tmp:
        tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_wav_atomic(path: Path, clip: AudioClip) -> None:
    with _atomic(path) as tmp:
        write_wav(tmp, clip)


def _write_npy(path: Path, array: np.ndarray) -> None:
    with _atomic(path) as tmp:
        buffer = io.BytesIO()
        np.save(buffer, array)
        tmp.write_bytes(buffer.getvalue())


# ---------------------------------------------------------------------------
# session simulation


def simulate_sessions(
    outdir: str | os.PathLike,
    pool: list[PoolUtterance],
    conditions: list[str],
    sessions_per_condition: int = 1,
    session_length: float = 60.0,
    num_speakers: int = 2,
    seed: int = 0,
    room: RoomSpec | None = None,
    mics: ArrayGeometry | None = None,
    noise_snr_db: float = 40.0,
    sample_rate: int = 16000,
) -> tuple[Path, list[SessionManifest]]:
    """Render one session per (condition, index) and write a manifest.

    Each session directory carries the mixture recording plus a
    ground_truth/ folder (reference RTTM, transcript, per-speaker source
    images, noise) that oracle separation and SDR scoring read back.
    """
    outdir = Path(outdir)
    room = room if room is not None else default_room()
    mics = mics if mics is not None else default_array(room)
    entries = []
    for condition in conditions:
        if condition not in CONDITION_RECIPES:
            raise ConfigurationError(
                f"condition must be one of {sorted(CONDITION_RECIPES)}, got {condition!r}"
            )
        overlap, silence = CONDITION_RECIPES[condition]
        for k in range(sessions_per_condition):
            name = f"{condition}_s{k:02d}"
            spec = MeetingSpec(
                num_speakers=num_speakers,
                target_overlap=overlap,
                session_length=session_length,
                silence_mode=silence,
                noise_snr_db=noise_snr_db,
                seed=derive_seed(seed, name),
            )
            mixture, truth = simulate_meeting(pool, spec, room, mics, sample_rate)

            session_dir = outdir / name
            gt_dir = session_dir / "ground_truth"
            _write_wav_atomic(session_dir / "recording.wav", mixture)
            with _atomic(gt_dir / "reference.rttm") as tmp:
                write_rttm(tmp, truth.segments, name)
            with _atomic(gt_dir / "transcript.json") as tmp:
                write_transcript_json(tmp, truth.transcripts, name)
            _write_wav_atomic(gt_dir / "noise.wav", truth.noise)
            for speaker, image in truth.per_source_images.items():
                _write_wav_atomic(gt_dir / "images" / f"{speaker}.wav", image)
            entries.append(
                SessionManifest(
                    session=name,
                    condition=condition,
                    recording=session_dir / "recording.wav",
                    rttm=gt_dir / "reference.rttm",
                    transcript=gt_dir / "transcript.json",
                )
            )
    manifest_path = outdir / "manifest.json"
    write_manifest(manifest_path, entries)
    return manifest_path, entries


# ---------------------------------------------------------------------------
# pipeline stages (each reads upstream artifacts from disk only)


def _ground_truth_dir(manifest: SessionManifest) -> Path:
    return manifest.recording.parent / "ground_truth"


def _load_oracle_inputs(manifest: SessionManifest) -> tuple[dict[str, AudioClip], AudioClip]:
    gt_dir = _ground_truth_dir(manifest)
    images_dir = gt_dir / "images"
    noise_path = gt_dir / "noise.wav"
    if not images_dir.is_dir() or not noise_path.exists():
        raise OracleUnavailableError(
            f"oracle estimator needs {images_dir} and {noise_path}"
        )
    images = {
        p.stem: read_wav(p) for p in sorted(images_dir.glob("*.wav"))
    }
    if not images:
        raise OracleUnavailableError(f"no source images under {images_dir}")
    return images, read_wav(noise_path)


def stage_separate(session_dir: Path, manifest: SessionManifest, config: PipelineConfig) -> None:
    """Mixture -> streams/*.wav plus stitched masks and permutations."""
    sep = config.separation
    recording = read_wav(manifest.recording)
    if sep.estimator == "oracle":
        images, noise = _load_oracle_inputs(manifest)
        estimator = OracleMaskEstimator(
            images,
            noise,
            num_streams=sep.num_streams,
            seed=derive_seed(config.seed, manifest.session, "masks"),
        )
    else:
        estimator = UniformMaskEstimator(num_streams=sep.num_streams)
    result = separate(
        recording,
        estimator,
        chunk_len=sep.chunk_len,
        chunk_hop=sep.chunk_hop,
        frame_len=sep.frame_len,
        stft_hop=sep.stft_hop,
        ref_channel=sep.ref_channel,
    )
    for idx, stream in enumerate(result.streams):
        _write_wav_atomic(
            session_dir / "streams" / f"{manifest.session}.stream{idx}.wav", stream
        )
    for idx, mask in enumerate(result.stream_masks):
        _write_npy(session_dir / "masks" / f"stream{idx}.npy", mask.values)
    _write_npy(session_dir / "masks" / "noise.npy", result.noise_mask.values)
    _write_json(
        session_dir / "masks" / "stitch_permutations.json",
        [list(perm) for perm in result.chunk_permutations],
    )


def _load_streams(session_dir: Path) -> list[AudioClip]:
    paths = sorted((session_dir / "streams").glob("*.stream*.wav"))
    if not paths:
        raise FormatError(f"no separated streams under {session_dir / 'streams'}")
    return [read_wav(p) for p in paths]


def stage_diarize(session_dir: Path, manifest: SessionManifest, config: PipelineConfig) -> None:
    """Streams (or raw channel 0) -> diarization.rttm."""
    if config.separation.enabled:
        streams = _load_streams(session_dir)
    else:
        streams = [read_wav(manifest.recording).channel(0)]
    dconfig = dataclasses.replace(
        config.diarization, seed=derive_seed(config.seed, manifest.session, "diarize")
    )
    result = diarize(streams, dconfig)
    if dconfig.enclosed_filter:
        result = filter_enclosed(result)
    with _atomic(session_dir / "diarization.rttm") as tmp:
        write_rttm(tmp, result.segments, manifest.session)


def simulate_asr(
    reference: SpeakerTranscript,
    segments: DiarizationResult | list[SegmentAnnotation],
    rates: tuple[float, float, float] = (0.0, 0.0, 0.0),
    seed: int = 0,
    routing: str = "best",
    vocabulary: list[str] | None = None,
) -> SpeakerTranscript:
    """Route reference words into hypothesis segments and corrupt them.

    A word lands in a segment containing its utterance-midpoint time; with
    routing "best" it goes only to the segment overlapping its source
    utterance the most, with routing "all" it is copied into every
    containing segment (leakage-style duplicates).  Words no segment
    contains are dropped.  Routed words are then independently deleted,
    substituted, and followed by insertions at the given rates.
    """
    sub_rate, del_rate, ins_rate = rates
    for name, rate in (("sub", sub_rate), ("del", del_rate), ("ins", ins_rate)):
        if not 0.0 <= rate < 1.0:
            raise ConfigurationError(f"{name} rate must lie in [0, 1), got {rate}")
    if routing not in ROUTING_MODES:
        raise ConfigurationError(f"routing must be one of {ROUTING_MODES}, got {routing!r}")
    segs = segments.segments if isinstance(segments, DiarizationResult) else list(segments)
    segs = sorted(segs, key=lambda s: (s.start, s.end, s.speaker, s.stream))

    events = []  # (midpoint, utterance span, word) in deterministic order
    for speaker in reference.speakers:
        for utt in reference.utterances[speaker]:
            n = len(utt.words)
            for k, word in enumerate(utt.words):
                midpoint = utt.start + (k + 0.5) * (utt.end - utt.start) / n
                events.append((midpoint, utt.start, utt.end, k, word))
    events.sort(key=lambda e: (e[0], e[1], e[3]))

    if vocabulary is None:
        vocabulary = sorted({w for s in reference.speakers for w in reference.words_for(s)})

    routed: dict[int, list[str]] = {}
    rng = np.random.default_rng(seed)
    for midpoint, utt_start, utt_end, _, word in events:
        containing = [
            (i, seg) for i, seg in enumerate(segs) if seg.start <= midpoint < seg.end
        ]
        if not containing:
            continue
        if routing == "best":
            containing.sort(
                key=lambda pair: (
                    -(min(pair[1].end, utt_end) - max(pair[1].start, utt_start)),
                    pair[0],
                )
            )
            containing = containing[:1]
        for i, _seg in containing:
            draws = rng.random(3)
            if draws[0] < del_rate:
                continue
            out = word
            if draws[1] < sub_rate and vocabulary:
                choices = [w for w in vocabulary if w != word] or [word]
                out = choices[int(rng.integers(len(choices)))]
            routed.setdefault(i, []).append(out)
            if draws[2] < ins_rate and vocabulary:
                routed[i].append(vocabulary[int(rng.integers(len(vocabulary)))])

    hypothesis = SpeakerTranscript()
    for i, words in sorted(routed.items()):
        seg = segs[i]
        hypothesis.add(seg.speaker, TranscriptUtterance(seg.start, seg.end, tuple(words)))
    return hypothesis


def stage_asr(session_dir: Path, manifest: SessionManifest, config: PipelineConfig) -> None:
    """diarization.rttm + reference transcript -> hypothesis.json."""
    if config.asr.mode == "external":
        source = Path(config.asr.hypothesis_dir) / f"{manifest.session}.json"
        if not source.exists():
            raise ConfigurationError(f"external hypothesis missing: {source}")
        _, transcript = read_transcript_json(source)  # canonical re-serialization
    else:
        _, reference = read_transcript_json(manifest.transcript)
        hyp_segments = read_rttm(session_dir / "diarization.rttm")
        transcript = simulate_asr(
            reference,
            hyp_segments,
            rates=(config.asr.sub_rate, config.asr.del_rate, config.asr.ins_rate),
            seed=derive_seed(config.seed, manifest.session, "asr"),
            routing=config.asr.routing,
        )
    with _atomic(session_dir / "hypothesis.json") as tmp:
        write_transcript_json(tmp, transcript, manifest.session)


def stage_score(session_dir: Path, manifest: SessionManifest, config: PipelineConfig) -> SessionScore:
    """All artifacts -> scores.json; returns the parsed score."""
    reference_segments = read_rttm(manifest.rttm)
    hypothesis_segments = read_rttm(session_dir / "diarization.rttm")
    _, reference_transcript = read_transcript_json(manifest.transcript)
    _, hypothesis_transcript = read_transcript_json(session_dir / "hypothesis.json")

    score = SessionScore(manifest.session, manifest.condition)
    score.der = der(reference_segments, hypothesis_segments, collar=config.scoring.collar)
    score.cpwer = cpwer(reference_transcript, hypothesis_transcript)
    score.overlap = overlap_ratio(reference_segments)

    images_dir = _ground_truth_dir(manifest) / "images"
    if config.separation.enabled and images_dir.is_dir():
        streams = _load_streams(session_dir)
        references = {
            p.stem: read_wav(p).channel(0) for p in sorted(images_dir.glob("*.wav"))
        }
        if references:
            tracks = oracle_track_map(
                streams,
                references,
                frame_len=config.separation.frame_len,
                hop=config.separation.stft_hop,
            )
            score.sdr = meeting_sdr(tracks, references)

    _write_json(session_dir / "scores.json", score.to_dict())
    return score


_STAGES = (
    ("separate", stage_separate),
    ("diarize", stage_diarize),
    ("asr", stage_asr),
)


def run_session(
    outdir: Path, manifest: SessionManifest, config: PipelineConfig
) -> tuple[SessionScore, dict[str, float]]:
    """All stages for one session; failures are captured, not raised."""
    session_dir = outdir / manifest.session
    session_dir.mkdir(parents=True, exist_ok=True)
    timing: dict[str, float] = {}
    try:
        for name, stage in _STAGES:
            if name == "separate" and not config.separation.enabled:
                continue
            begin = time.perf_counter()
            stage(session_dir, manifest, config)
            timing[name] = time.perf_counter() - begin
        begin = time.perf_counter()
        score = stage_score(session_dir, manifest, config)
        timing["score"] = time.perf_counter() - begin
    except Exception as exc:  # continue-and-mark: other sessions still run
        return (
            SessionScore(
                manifest.session,
                manifest.condition,
                failed=True,
                error=f"{type(exc).__name__}: {exc}",
            ),
            timing,
        )
    return score, timing


def run_pipeline(
    config: PipelineConfig,
    manifests: list[SessionManifest],
    outdir: str | os.PathLike,
    workers: int = 1,
) -> PipelineReport:
    """Separation -> diarization -> ASR -> scoring over all sessions.

    Sessions run concurrently up to the worker limit; stages within one
    session stay sequential.  Writes report.json, report.csv, figures, and
    a timing.json diagnostic (wall-clock, so not part of the deterministic
    artifact set).
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if workers < 1:
        raise ConfigurationError(f"workers must be >= 1, got {workers}")

    if workers == 1:
        outcomes = [run_session(outdir, m, config) for m in manifests]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(
                pool.map(lambda m: run_session(outdir, m, config), manifests)
            )

    scores = [score for score, _ in outcomes]
    timing: dict[str, float] = {}
    for _, stage_times in outcomes:
        for name, seconds in stage_times.items():
            timing[name] = timing.get(name, 0.0) + seconds

    report = PipelineReport.build(scores, timing)
    with _atomic(outdir / "report.json") as tmp:
        tmp.write_text(report.to_json())
    with _atomic(outdir / "report.csv") as tmp:
        tmp.write_text(report.to_csv())
    figures_dir = outdir / "figures"
    figures_dir.mkdir(parents=True, exist_ok=True)
    render_figures(report, figures_dir)
    _write_json(outdir / "timing.json", {k: round(v, 6) for k, v in timing.items()})
    return report


def score_external(
    reference_rttm: str | os.PathLike,
    reference_transcript: str | os.PathLike,
    hypothesis_rttm: str | os.PathLike,
    hypothesis_transcript: str | os.PathLike,
    collar: float = 0.0,
    session: str = "external",
    condition: str = "0L",
) -> PipelineReport:
    """Metrics-only scoring of externally produced diarization and ASR."""
    reference_segments = read_rttm(reference_rttm)
    hypothesis_segments = read_rttm(hypothesis_rttm)
    _, ref_transcript = read_transcript_json(reference_transcript)
    _, hyp_transcript = read_transcript_json(hypothesis_transcript)
    score = SessionScore(session, condition)
    score.der = der(reference_segments, hypothesis_segments, collar=collar)
    score.cpwer = cpwer(ref_transcript, hyp_transcript)
    score.overlap = overlap_ratio(reference_segments)
    return PipelineReport.build([score])
