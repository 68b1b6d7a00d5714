"""Meeting transcription pipeline: simulation, separation, diarization, scoring."""

from .annotations import (
    MIXTURE_STREAM,
    SegmentAnnotation,
    SpeakerTranscript,
    TranscriptUtterance,
    read_rttm,
    read_transcript_json,
    write_rttm,
    write_transcript_json,
)
from .audio import AudioClip, read_wav, write_wav
from .diarization import (
    DiarizationConfig,
    DiarizationResult,
    Embedding,
    ExternalEmbeddingStore,
    LogMelStatsEmbedder,
    ahc_cluster,
    cosine_affinity,
    detect_speech,
    diarize,
    embed,
    filter_enclosed,
    spectral_cluster,
    subsegment,
    write_external_embeddings,
)
from .errors import (
    BoundsError,
    ConfigurationError,
    EstimationError,
    FormatError,
    GeometryError,
    MeetpipeError,
    OracleUnavailableError,
    SchedulingError,
    ShapeError,
    UndefinedMetricError,
)
from .meeting import (
    GroundTruth,
    MeetingSpec,
    OracleMaskEstimator,
    PoolUtterance,
    build_synthetic_pool,
    default_array,
    default_room,
    load_utterance_pool,
    oracle_masks,
    save_utterance_pool,
    simulate_meeting,
)
from .metrics import (
    Assignment,
    CpWerResult,
    DERBreakdown,
    MeetingSdr,
    WordErrors,
    cpwer,
    der,
    meeting_sdr,
    normalize_words,
    overlap_ratio,
    si_sdr,
    solve_assignment,
    wer,
)
from .pipeline import (
    AsrSettings,
    PipelineConfig,
    ScoringSettings,
    SeparationSettings,
    SessionManifest,
    load_config,
    read_manifest,
    run_pipeline,
    score_external,
    simulate_asr,
    simulate_sessions,
    write_config,
    write_manifest,
)
from .report import PipelineReport, SessionScore
from .rir import ArrayGeometry, RoomSpec, compute_rir
from .separation import (
    ChunkMasks,
    ChunkPlan,
    SeparatedStreams,
    SpatialCovariance,
    UniformMaskEstimator,
    augment_reference_channel,
    estimate_masks,
    mvdr_beamform,
    oracle_track_map,
    plan_chunks,
    select_reference_channel,
    separate,
    spatial_covariance,
    stitch_masks,
    stitch_signals,
)
from .stft import Spectrogram, TFMask, apply_mask, frame_index, istft, stft

__version__ = "0.1.0"

__all__ = [
    "MIXTURE_STREAM",
    "SegmentAnnotation",
    "SpeakerTranscript",
    "TranscriptUtterance",
    "read_rttm",
    "read_transcript_json",
    "write_rttm",
    "write_transcript_json",
    "AudioClip",
    "read_wav",
    "write_wav",
    "DiarizationConfig",
    "DiarizationResult",
    "Embedding",
    "ExternalEmbeddingStore",
    "LogMelStatsEmbedder",
    "ahc_cluster",
    "cosine_affinity",
    "detect_speech",
    "diarize",
    "embed",
    "filter_enclosed",
    "spectral_cluster",
    "subsegment",
    "write_external_embeddings",
    "BoundsError",
    "ConfigurationError",
    "EstimationError",
    "FormatError",
    "GeometryError",
    "MeetpipeError",
    "OracleUnavailableError",
    "SchedulingError",
    "ShapeError",
    "UndefinedMetricError",
    "GroundTruth",
    "MeetingSpec",
    "OracleMaskEstimator",
    "PoolUtterance",
    "build_synthetic_pool",
    "default_array",
    "default_room",
    "load_utterance_pool",
    "oracle_masks",
    "save_utterance_pool",
    "simulate_meeting",
    "Assignment",
    "CpWerResult",
    "DERBreakdown",
    "MeetingSdr",
    "WordErrors",
    "cpwer",
    "der",
    "meeting_sdr",
    "normalize_words",
    "overlap_ratio",
    "si_sdr",
    "solve_assignment",
    "wer",
    "AsrSettings",
    "PipelineConfig",
    "ScoringSettings",
    "SeparationSettings",
    "SessionManifest",
    "load_config",
    "read_manifest",
    "run_pipeline",
    "score_external",
    "simulate_asr",
    "simulate_sessions",
    "write_config",
    "write_manifest",
    "PipelineReport",
    "SessionScore",
    "ArrayGeometry",
    "RoomSpec",
    "compute_rir",
    "ChunkMasks",
    "ChunkPlan",
    "SeparatedStreams",
    "SpatialCovariance",
    "UniformMaskEstimator",
    "augment_reference_channel",
    "estimate_masks",
    "mvdr_beamform",
    "oracle_track_map",
    "plan_chunks",
    "select_reference_channel",
    "separate",
    "spatial_covariance",
    "stitch_masks",
    "stitch_signals",
    "Spectrogram",
    "TFMask",
    "apply_mask",
    "frame_index",
    "istft",
    "stft",
]
