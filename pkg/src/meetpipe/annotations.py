"""Speaker segment annotations, transcripts, and their file formats.

Two plain-text interchange formats are supported:

* RTTM speaker lines:
      SPEAKER <recording> 1 <onset> <duration> <NA> <NA> <speaker> <NA> <NA>
  with times printed to millisecond precision.

* Transcript JSON: a list of utterance records, each
      {"recording": ..., "speaker": ..., "start": ..., "end": ..., "words": [...]}
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .errors import FormatError, ShapeError

# stream id used for annotations that describe the mixture rather than a
# separated output stream
MIXTURE_STREAM = -1


def quantize_ms(t: float) -> float:
    """Snap a time in seconds to the millisecond grid."""
    return round(round(t * 1000.0) / 1000.0, 3)


@dataclass(frozen=True)
class SegmentAnnotation:
    """One labelled stretch of speech on one stream."""

    stream: int
    speaker: str
    start: float
    end: float

    def __post_init__(self):
        object.__setattr__(self, "start", quantize_ms(self.start))
        object.__setattr__(self, "end", quantize_ms(self.end))
        if self.start < 0 or self.end <= self.start:
            raise ShapeError(
                f"bad segment times [{self.start}, {self.end}] for {self.speaker}"
            )

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class TranscriptUtterance:
    start: float
    end: float
    words: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "start", quantize_ms(self.start))
        object.__setattr__(self, "end", quantize_ms(self.end))
        object.__setattr__(self, "words", tuple(self.words))
        if self.start < 0 or self.end <= self.start:
            raise ShapeError(f"bad utterance times [{self.start}, {self.end}]")


@dataclass
class SpeakerTranscript:
    """Per-speaker utterance lists, kept sorted by onset."""

    utterances: dict[str, list[TranscriptUtterance]] = field(default_factory=dict)

    def add(self, speaker: str, utterance: TranscriptUtterance) -> None:
        self.utterances.setdefault(speaker, []).append(utterance)
        self.utterances[speaker].sort(key=lambda u: (u.start, u.end))

    @property
    def speakers(self) -> list[str]:
        return sorted(self.utterances)

    def words_for(self, speaker: str) -> list[str]:
        """All words of one speaker, concatenated in utterance onset order."""
        out: list[str] = []
        for utt in self.utterances.get(speaker, []):
            out.extend(utt.words)
        return out

    def total_words(self) -> int:
        return sum(len(u.words) for utts in self.utterances.values() for u in utts)


def write_rttm(path: str | os.PathLike, segments: list[SegmentAnnotation], recording: str) -> None:
    lines = []
    for seg in sorted(segments, key=lambda s: (s.start, s.end, s.speaker)):
        lines.append(
            f"SPEAKER {recording} 1 {seg.start:.3f} {seg.duration:.3f} "
            f"<NA> <NA> {seg.speaker} <NA> <NA>"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def read_rttm(path: str | os.PathLike, stream: int = MIXTURE_STREAM) -> list[SegmentAnnotation]:
    """Parse RTTM speaker lines; malformed lines raise with their line number."""
    segments = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 10 or parts[0] != "SPEAKER":
                raise FormatError(f"{path}:{lineno}: not an RTTM speaker line: {line!r}")
            try:
                onset = float(parts[3])
                dur = float(parts[4])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad time field: {exc}") from exc
            if dur <= 0:
                raise FormatError(f"{path}:{lineno}: non-positive duration {dur}")
            segments.append(
                SegmentAnnotation(stream=stream, speaker=parts[7], start=onset, end=onset + dur)
            )
    return segments


def write_transcript_json(
    path: str | os.PathLike, transcript: SpeakerTranscript, recording: str
) -> None:
    records = []
    for speaker in transcript.speakers:
        for utt in transcript.utterances[speaker]:
            records.append(
                {
                    "recording": recording,
                    "speaker": speaker,
                    "start": utt.start,
                    "end": utt.end,
                    "words": list(utt.words),
                }
            )
    records.sort(key=lambda r: (r["start"], r["end"], r["speaker"]))
    with open(path, "w") as fh:
        json.dump(records, fh, indent=2)
        fh.write("\n")


def read_transcript_json(path: str | os.PathLike) -> tuple[str, SpeakerTranscript]:
    """Load utterance records; returns the recording id and the transcript."""
    with open(path) as fh:
        try:
            records = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(records, list):
        raise FormatError(f"{path}: expected a list of utterance records")
    transcript = SpeakerTranscript()
    recording = ""
    for idx, rec in enumerate(records):
        try:
            recording = rec["recording"]
            transcript.add(
                rec["speaker"],
                TranscriptUtterance(rec["start"], rec["end"], tuple(rec["words"])),
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{path}: record {idx} missing field: {exc}") from exc
    return recording, transcript
