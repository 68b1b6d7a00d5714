"""Evaluation: SI-SDR, assignment solving, DER, WER, cpWER, overlap ratio.

All interval arithmetic runs on an integer millisecond grid so the error
components add up exactly.  Everything here is pure; parallelism, if any,
belongs to the caller.
"""

from __future__ import annotations

import math
import string
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .annotations import SegmentAnnotation, SpeakerTranscript
from .audio import AudioClip
from .errors import ShapeError, UndefinedMetricError

SDR_CLAMP_DB = 100.0


def normalize_words(text: str | list[str]) -> list[str]:
    """Lowercase tokens with punctuation stripped; empty tokens dropped."""
    tokens = text.split() if isinstance(text, str) else list(text)
    table = str.maketrans("", "", string.punctuation)
    out = []
    for token in tokens:
        cleaned = token.lower().translate(table)
        if cleaned:
            out.append(cleaned)
    return out


# ---------------------------------------------------------------------------
# signal metrics


def si_sdr(estimate: AudioClip, reference: AudioClip) -> float:
    """Scale-invariant SDR in dB, clamped to [-100, 100].

    The estimate is projected onto the reference, so any rescaling of the
    estimate scores identically.  No allowed-distortion filter is applied,
    which makes this harsher on beamformed output than filter-based SDR.
    """
    if estimate.num_channels != 1 or reference.num_channels != 1:
        raise ShapeError("si_sdr expects mono clips")
    if estimate.num_frames != reference.num_frames:
        raise ShapeError(
            f"length mismatch: {estimate.num_frames} vs {reference.num_frames}"
        )
    ref = reference.samples[0]
    est = estimate.samples[0]
    ref_energy = float(np.dot(ref, ref))
    if ref_energy <= 0.0:
        raise UndefinedMetricError("si_sdr undefined for an all-zero reference")
    target = (float(np.dot(est, ref)) / ref_energy) * ref
    target_energy = float(np.dot(target, target))
    error = est - target
    error_energy = float(np.dot(error, error))
    if target_energy <= 0.0:
        return -SDR_CLAMP_DB
    if error_energy <= 0.0:
        return SDR_CLAMP_DB
    value = 10.0 * math.log10(target_energy / error_energy)
    return float(min(max(value, -SDR_CLAMP_DB), SDR_CLAMP_DB))


@dataclass
class MeetingSdr:
    """Per-speaker SI-SDR over a whole meeting plus the arithmetic mean."""

    per_speaker: dict[str, float]
    mean: float
    missing: list[str] = field(default_factory=list)


def meeting_sdr(
    speaker_tracks: dict[str, AudioClip], references: dict[str, AudioClip]
) -> MeetingSdr:
    """Score mapped speaker tracks against per-speaker reference images.

    A reference speaker with no track at all is scored at the -100 dB floor
    and listed in missing.
    """
    per_speaker: dict[str, float] = {}
    missing: list[str] = []
    for speaker in sorted(references):
        if speaker not in speaker_tracks:
            per_speaker[speaker] = -SDR_CLAMP_DB
            missing.append(speaker)
            continue
        per_speaker[speaker] = si_sdr(speaker_tracks[speaker], references[speaker])
    if not per_speaker:
        raise UndefinedMetricError("meeting_sdr needs at least one reference speaker")
    mean = float(np.mean(list(per_speaker.values())))
    return MeetingSdr(per_speaker, mean, missing)


# ---------------------------------------------------------------------------
# assignment


@dataclass
class Assignment:
    """One-to-one pairing of rows to columns with its summed cost."""

    mapping: list[tuple[int, int]]
    total_cost: float


def solve_assignment(cost: np.ndarray) -> Assignment:
    """Minimum-cost one-to-one assignment of min(m, n) pairs."""
    matrix = np.asarray(cost, dtype=np.float64)
    if matrix.size == 0:
        return Assignment([], 0.0)
    if matrix.ndim != 2:
        raise ShapeError(f"cost must be a matrix, got {matrix.ndim} dims")
    if not np.all(np.isfinite(matrix)):
        raise ShapeError("cost matrix entries must be finite")
    rows, cols = linear_sum_assignment(matrix)
    mapping = [(int(r), int(c)) for r, c in zip(rows, cols)]
    return Assignment(mapping, float(matrix[rows, cols].sum()))


# ---------------------------------------------------------------------------
# diarization error rate


def _ms(value: float) -> int:
    return int(round(value * 1000.0))


def _merge_intervals(intervals: list[tuple[int, int]]) -> list[tuple[int, int]]:
    merged: list[tuple[int, int]] = []
    for a, b in sorted(intervals):
        if merged and a <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], b))
        else:
            merged.append((a, b))
    return [iv for iv in merged if iv[1] > iv[0]]


def _intersect(a: list[tuple[int, int]], b: list[tuple[int, int]]) -> list[tuple[int, int]]:
    out = []
    i = j = 0
    while i < len(a) and j < len(b):
        lo = max(a[i][0], b[j][0])
        hi = min(a[i][1], b[j][1])
        if hi > lo:
            out.append((lo, hi))
        if a[i][1] <= b[j][1]:
            i += 1
        else:
            j += 1
    return out


def _total(intervals: list[tuple[int, int]]) -> int:
    return sum(b - a for a, b in intervals)


def _by_speaker(segments: list[SegmentAnnotation]) -> dict[str, list[tuple[int, int]]]:
    raw: dict[str, list[tuple[int, int]]] = {}
    for seg in segments:
        raw.setdefault(seg.speaker, []).append((_ms(seg.start), _ms(seg.end)))
    return {spk: _merge_intervals(ivs) for spk, ivs in raw.items()}


@dataclass
class DERBreakdown:
    """Missed, false alarm, and confusion seconds against scored speech."""

    missed: float
    false_alarm: float
    confusion: float
    total_speech: float
    der: float


def der(
    reference: list[SegmentAnnotation],
    hypothesis: list[SegmentAnnotation],
    collar: float = 0.0,
) -> DERBreakdown:
    """Diarization error rate with a globally optimal speaker mapping.

    The timeline is cut at every boundary; inside each piece the active
    reference and hypothesis speakers are compared under the one-to-one
    mapping that maximizes total attributed time.  A collar around each
    reference segment boundary is excluded from scoring.  Overlapping
    speech is scored.
    """
    ref = _by_speaker(reference)
    hyp = _by_speaker(hypothesis)
    if not ref:
        raise UndefinedMetricError("der undefined without reference speech")

    horizon = max(
        [hi for ivs in ref.values() for _, hi in ivs]
        + [hi for ivs in hyp.values() for _, hi in ivs]
    )
    collar_ms = _ms(collar)
    excluded: list[tuple[int, int]] = []
    if collar_ms > 0:
        for seg in reference:
            for bound in (_ms(seg.start), _ms(seg.end)):
                excluded.append((max(0, bound - collar_ms), bound + collar_ms))
        excluded = _merge_intervals(excluded)
    scored = _subtract((0, horizon), excluded)

    ref_scored = {s: _intersect(ivs, scored) for s, ivs in ref.items()}
    hyp_scored = {s: _intersect(ivs, scored) for s, ivs in hyp.items()}
    ref_names = sorted(ref_scored)
    hyp_names = sorted(hyp_scored)

    total_speech_ms = sum(_total(ivs) for ivs in ref_scored.values())
    if total_speech_ms == 0:
        raise UndefinedMetricError("der undefined: no scored reference speech")

    mapping: set[tuple[str, str]] = set()
    if ref_names and hyp_names:
        overlap = np.zeros((len(ref_names), len(hyp_names)))
        for i, r in enumerate(ref_names):
            for j, h in enumerate(hyp_names):
                overlap[i, j] = _total(_intersect(ref_scored[r], hyp_scored[h]))
        solution = solve_assignment(-overlap)
        mapping = {
            (ref_names[i], hyp_names[j])
            for i, j in solution.mapping
            if overlap[i, j] > 0
        }

    bounds = sorted(
        {b for ivs in ref_scored.values() for iv in ivs for b in iv}
        | {b for ivs in hyp_scored.values() for iv in ivs for b in iv}
    )
    missed_ms = fa_ms = conf_ms = 0
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        dur = hi - lo
        active_ref = [s for s in ref_names if _covers(ref_scored[s], lo)]
        active_hyp = [s for s in hyp_names if _covers(hyp_scored[s], lo)]
        if not active_ref and not active_hyp:
            continue
        correct = sum(
            1 for r in active_ref for h in active_hyp if (r, h) in mapping
        )
        n_ref, n_hyp = len(active_ref), len(active_hyp)
        missed_ms += dur * max(0, n_ref - n_hyp)
        fa_ms += dur * max(0, n_hyp - n_ref)
        conf_ms += dur * (min(n_ref, n_hyp) - correct)

    missed = missed_ms / 1000.0
    false_alarm = fa_ms / 1000.0
    confusion = conf_ms / 1000.0
    total_speech = total_speech_ms / 1000.0
    return DERBreakdown(
        missed=missed,
        false_alarm=false_alarm,
        confusion=confusion,
        total_speech=total_speech,
        der=(missed + false_alarm + confusion) / total_speech,
    )


def _covers(intervals: list[tuple[int, int]], point: int) -> bool:
    return any(a <= point < b for a, b in intervals)


def _subtract(
    span: tuple[int, int], holes: list[tuple[int, int]]
) -> list[tuple[int, int]]:
    out = []
    cursor = span[0]
    for a, b in holes:
        if a > cursor:
            out.append((cursor, min(a, span[1])))
        cursor = max(cursor, b)
        if cursor >= span[1]:
            break
    if cursor < span[1]:
        out.append((cursor, span[1]))
    return [iv for iv in out if iv[1] > iv[0]]


# ---------------------------------------------------------------------------
# word error rates


@dataclass
class WordErrors:
    substitutions: int
    deletions: int
    insertions: int
    wer: float

    @property
    def edits(self) -> int:
        return self.substitutions + self.deletions + self.insertions


def wer(reference: list[str], hypothesis: list[str]) -> WordErrors:
    """Levenshtein alignment with unit costs, counted by type.

    An empty reference against a nonempty hypothesis reports infinity.
    """
    n, m = len(reference), len(hypothesis)
    if n == 0:
        rate = math.inf if m > 0 else 0.0
        return WordErrors(0, 0, m, rate)

    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = dist[i - 1, j - 1] + (reference[i - 1] != hypothesis[j - 1])
            dist[i, j] = min(sub, dist[i - 1, j] + 1, dist[i, j - 1] + 1)

    subs = dels = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (
            reference[i - 1] != hypothesis[j - 1]
        ):
            if reference[i - 1] != hypothesis[j - 1]:
                subs += 1
            i, j = i - 1, j - 1
        elif i > 0 and dist[i, j] == dist[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return WordErrors(subs, dels, ins, (subs + dels + ins) / n)


@dataclass
class CpWerResult:
    cpwer: float
    total_edits: int
    total_reference_words: int
    speaker_mapping: dict[str, str]


def cpwer(reference: SpeakerTranscript, hypothesis: SpeakerTranscript) -> CpWerResult:
    """Concatenated-utterance WER under the best speaker pairing.

    Each speaker's words are concatenated in start-time order, every
    (reference, hypothesis) speaker pair is scored, and the pairing that
    minimizes the TOTAL edit count is chosen.  Unpaired reference speakers
    count as all deletions, unpaired hypothesis speakers as all insertions.
    """
    ref_names = reference.speakers
    if not ref_names:
        raise UndefinedMetricError("cpwer needs at least one reference speaker")
    hyp_names = hypothesis.speakers
    ref_words = {s: normalize_words(reference.words_for(s)) for s in ref_names}
    hyp_words = {s: normalize_words(hypothesis.words_for(s)) for s in hyp_names}

    ref_total = sum(len(w) for w in ref_words.values())
    hyp_total = sum(len(w) for w in hyp_words.values())

    mapping: dict[str, str] = {}
    if hyp_names:
        # Shift each pair cost by -(len_r + len_h): matching then never beats
        # leaving both unmatched by accident, and the assignment total plus
        # all word counts recovers the true minimum edit count.
        shifted = np.zeros((len(ref_names), len(hyp_names)))
        for i, r in enumerate(ref_names):
            for j, h in enumerate(hyp_names):
                edits = wer(ref_words[r], hyp_words[h]).edits
                shifted[i, j] = edits - len(ref_words[r]) - len(hyp_words[h])
        solution = solve_assignment(shifted)
        total_edits = int(round(ref_total + hyp_total + solution.total_cost))
        mapping = {ref_names[i]: hyp_names[j] for i, j in solution.mapping}
    else:
        total_edits = ref_total

    if ref_total == 0:
        rate = math.inf if total_edits > 0 else 0.0
    else:
        rate = total_edits / ref_total
    return CpWerResult(rate, total_edits, ref_total, mapping)


# ---------------------------------------------------------------------------
# overlap


def overlap_ratio(segments: list[SegmentAnnotation]) -> float:
    """Fraction of speech time where two or more speakers are active."""
    by_speaker = _by_speaker(segments)
    if not by_speaker:
        raise UndefinedMetricError("overlap_ratio undefined without speech")
    bounds = sorted({b for ivs in by_speaker.values() for iv in ivs for b in iv})
    speech_ms = overlapped_ms = 0
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        active = sum(1 for ivs in by_speaker.values() if _covers(ivs, lo))
        if active >= 1:
            speech_ms += hi - lo
        if active >= 2:
            overlapped_ms += hi - lo
    if speech_ms == 0:
        raise UndefinedMetricError("overlap_ratio undefined without speech")
    return overlapped_ms / speech_ms
