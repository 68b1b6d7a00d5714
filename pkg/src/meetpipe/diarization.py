"""Who-spoke-when labelling of one or more audio streams.

The stages are deliberately simple and fully seeded: an energy and spectral
flatness detector smoothed by a two-state Viterbi pass, a sliding-window cut
into embedding-sized pieces, a log-mel statistics embedder (or externally
supplied vectors), and clustering of the pooled embeddings from all streams
at once, so the same talker appearing on two streams receives one label.
"""

from __future__ import annotations

import itertools
import json
import os
import struct
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .annotations import SegmentAnnotation, quantize_ms
from .audio import AudioClip
from .errors import BoundsError, ConfigurationError, FormatError, ShapeError

CLUSTERERS = ("spectral", "ahc")


# ---------------------------------------------------------------------------
# speech activity detection


def _frame_features(clip: AudioClip, frame_len: int, hop: int):
    """Per-frame log power (dB) and spectral flatness."""
    x = clip.samples[0]
    num = max(0, 1 + (len(x) - frame_len) // hop)
    if num == 0:
        return np.empty(0), np.empty(0)
    frames = np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop][:num]
    power = np.mean(frames**2, axis=1)
    energy_db = 10.0 * np.log10(power + 1e-12)
    window = np.hanning(frame_len)
    spectrum = np.abs(np.fft.rfft(frames * window, n=512, axis=1)) ** 2 + 1e-12
    flatness = np.exp(np.mean(np.log(spectrum), axis=1)) / np.mean(spectrum, axis=1)
    return energy_db, flatness


def detect_speech(
    clip: AudioClip,
    margin_db: float = 12.0,
    peak_drop_db: float = 35.0,
    flatness_weight: float = 2.0,
    transition_penalty: float = 2.0,
    edge_drop_db: float = 8.0,
    min_segment: float = 0.1,
    min_gap: float = 0.1,
    frame: float = 0.025,
    hop: float = 0.010,
) -> list[tuple[float, float]]:
    """Energy-driven speech regions with Viterbi smoothing.

    The decision threshold adapts to the clip: a margin above the quiet
    energy floor, but never more than peak_drop_db below the loudest frame.
    Each segment's edges are then trimmed back to where the energy comes
    within edge_drop_db of that segment's own body level, which strips
    reverberation decay and bleed-through from a louder neighbouring
    stream without touching genuinely quiet talkers.  Gaps shorter than
    min_gap are bridged, then segments shorter than min_segment dropped.
    """
    if clip.num_channels != 1:
        raise ShapeError("speech detection expects a mono clip")
    frame_len = int(round(frame * clip.sample_rate))
    hop_len = int(round(hop * clip.sample_rate))
    energy_db, flatness = _frame_features(clip, frame_len, hop_len)
    if len(energy_db) == 0 or np.max(energy_db) < -100.0:
        return []

    floor = np.percentile(energy_db, 10)
    threshold = max(floor + margin_db, np.max(energy_db) - peak_drop_db)
    score = (energy_db - threshold) / 4.0 + flatness_weight * (0.5 - flatness)

    # two states (silence, speech); switching costs transition_penalty
    num = len(score)
    delta = np.zeros((num, 2))
    back = np.zeros((num, 2), dtype=int)
    delta[0] = [-score[0] / 2.0, score[0] / 2.0]
    for t in range(1, num):
        for state in (0, 1):
            stay = delta[t - 1, state]
            switch = delta[t - 1, 1 - state] - transition_penalty
            back[t, state] = state if stay >= switch else 1 - state
            emit = score[t] / 2.0 if state == 1 else -score[t] / 2.0
            delta[t, state] = max(stay, switch) + emit
    states = np.zeros(num, dtype=int)
    states[-1] = int(np.argmax(delta[-1]))
    for t in range(num - 2, -1, -1):
        states[t] = back[t + 1, states[t + 1]]

    segments = []
    start = None
    for t, s in enumerate(states):
        if s == 1 and start is None:
            start = t
        elif s == 0 and start is not None:
            segments.append((start, t - 1))
            start = None
    if start is not None:
        segments.append((start, num - 1))

    trimmed = []
    for a, b in segments:
        bar = np.percentile(energy_db[a : b + 1], 85) - edge_drop_db
        while b > a and energy_db[b] < bar:
            b -= 1
        while a < b and energy_db[a] < bar:
            a += 1
        trimmed.append((a, b))

    spans = [
        (quantize_ms(a * hop), quantize_ms(b * hop + frame)) for a, b in trimmed
    ]
    bridged: list[tuple[float, float]] = []
    for span in spans:
        if bridged and span[0] - bridged[-1][1] < min_gap:
            bridged[-1] = (bridged[-1][0], span[1])
        else:
            bridged.append(span)
    return [s for s in bridged if s[1] - s[0] >= min_segment]


def subsegment(
    segments: list[tuple[float, float]],
    window: float = 1.5,
    stride: float = 0.75,
) -> list[tuple[float, float]]:
    """Sliding windows over each segment, clipped to the segment bounds.

    Segments shorter than the window pass through whole.  When the regular
    windows stop short of the segment end, one tail window is added if at
    least half a window of material remains.
    """
    if window <= 0 or stride <= 0 or stride > window:
        raise ConfigurationError(f"need 0 < stride <= window, got {stride}, {window}")
    out = []
    for seg_start, seg_end in segments:
        length = seg_end - seg_start
        if length <= window + 1e-9:
            out.append((seg_start, seg_end))
            continue
        k = 0
        last_end = seg_start
        while seg_start + k * stride + window <= seg_end + 1e-9:
            out.append((quantize_ms(seg_start + k * stride), quantize_ms(seg_start + k * stride + window)))
            last_end = seg_start + k * stride + window
            k += 1
        if last_end < seg_end - 1e-9:
            tail_start = seg_start + k * stride
            if seg_end - tail_start >= 0.5 * window - 1e-9:
                out.append((quantize_ms(tail_start), quantize_ms(seg_end)))
    return out


# ---------------------------------------------------------------------------
# embeddings


class Embedder(Protocol):
    dim: int

    def embed_window(self, clip: AudioClip, stream: int, start: float, end: float) -> np.ndarray:
        ...


def _mel_filterbank(num_mels: int, nfft: int, sample_rate: int) -> np.ndarray:
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    points = mel_to_hz(np.linspace(hz_to_mel(40.0), hz_to_mel(sample_rate / 2.0), num_mels + 2))
    bins = np.floor((nfft + 1) * points / sample_rate).astype(int)
    bank = np.zeros((num_mels, nfft // 2 + 1))
    for m in range(1, num_mels + 1):
        left, centre, right = bins[m - 1], bins[m], bins[m + 1]
        for k in range(left, centre):
            bank[m - 1, k] = (k - left) / max(centre - left, 1)
        for k in range(centre, right):
            bank[m - 1, k] = (right - k) / max(right - centre, 1)
    return bank


class LogMelStatsEmbedder:
    """Mean and deviation of log-mel energies, unit normalised.

    A deliberately small fixed-function fingerprint: 23 mel bands give a
    46-dimensional vector.  Loudness shifts mostly move the mean half, so
    cosine similarity is nearly level invariant.
    """

    def __init__(self, num_mels: int = 23, frame: float = 0.025, hop: float = 0.010):
        self.num_mels = num_mels
        self.frame = frame
        self.hop = hop
        self.dim = 2 * num_mels
        self._banks: dict[int, np.ndarray] = {}

    def embed_window(self, clip: AudioClip, stream: int, start: float, end: float) -> np.ndarray:
        rate = clip.sample_rate
        lo, hi = int(round(start * rate)), int(round(end * rate))
        x = clip.samples[0, lo:hi]
        frame_len = int(round(self.frame * rate))
        hop_len = int(round(self.hop * rate))
        nfft = 512
        if len(x) < frame_len:
            x = np.pad(x, (0, frame_len - len(x)))
        num = 1 + (len(x) - frame_len) // hop_len
        frames = np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop_len][:num]
        window = np.hanning(frame_len)
        power = np.abs(np.fft.rfft(frames * window, n=nfft, axis=1)) ** 2
        if rate not in self._banks:
            self._banks[rate] = _mel_filterbank(self.num_mels, nfft, rate)
        logmel = np.log(power @ self._banks[rate].T + 1e-10)
        vec = np.concatenate([logmel.mean(axis=0), logmel.std(axis=0)])
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


@dataclass
class Embedding:
    """One vector with the (stream, start, end) window it came from."""

    vector: np.ndarray
    stream: int
    start: float
    end: float


def embed(
    clip: AudioClip, window: tuple[int, float, float], embedder: Embedder
) -> Embedding:
    stream, start, end = window
    if start < 0 or end > clip.duration + 1e-6 or start >= end:
        raise BoundsError(
            f"window [{start}, {end}] outside clip of {clip.duration:.3f} s"
        )
    vector = embedder.embed_window(clip, stream, start, end)
    return Embedding(np.asarray(vector, dtype=np.float64), stream, start, end)


class ExternalEmbeddingStore:
    """Vectors precomputed elsewhere: float32 little-endian binary + index.

    The index maps (stream, start, end) windows to byte offsets.  Implements
    the embedder interface; the audio argument is ignored.
    """

    def __init__(self, index_path: str | os.PathLike, binary_path: str | os.PathLike):
        with open(index_path) as fh:
            try:
                index = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{index_path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
        try:
            self.dim = int(index["dim"])
            entries = index["entries"]
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{index_path}: missing field {exc}") from exc
        with open(binary_path, "rb") as fh:
            self._blob = fh.read()
        self._offsets: dict[tuple[int, float, float], int] = {}
        for i, entry in enumerate(entries):
            try:
                key = (int(entry["stream"]), quantize_ms(entry["start"]), quantize_ms(entry["end"]))
                self._offsets[key] = int(entry["offset"])
            except (KeyError, TypeError) as exc:
                raise FormatError(f"{index_path}: entry {i} missing field {exc}") from exc

    def embed_window(self, clip, stream: int, start: float, end: float) -> np.ndarray:
        key = (stream, quantize_ms(start), quantize_ms(end))
        if key not in self._offsets:
            raise FormatError(f"no external embedding for stream {stream} [{start}, {end}]")
        offset = self._offsets[key]
        raw = self._blob[offset : offset + 4 * self.dim]
        if len(raw) != 4 * self.dim:
            raise FormatError(f"embedding at offset {offset} truncated")
        return np.asarray(struct.unpack(f"<{self.dim}f", raw), dtype=np.float64)


def write_external_embeddings(
    index_path: str | os.PathLike,
    binary_path: str | os.PathLike,
    embeddings: list[Embedding],
) -> None:
    dim = len(embeddings[0].vector) if embeddings else 0
    entries = []
    with open(binary_path, "wb") as fh:
        for emb in embeddings:
            if len(emb.vector) != dim:
                raise ShapeError("external embeddings must share one dimension")
            entries.append(
                {"stream": emb.stream, "start": emb.start, "end": emb.end, "offset": fh.tell()}
            )
            fh.write(struct.pack(f"<{dim}f", *np.asarray(emb.vector, dtype=np.float32)))
    with open(index_path, "w") as fh:
        json.dump({"dim": dim, "entries": entries}, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# clustering


def cosine_affinity(embeddings: list[Embedding]) -> np.ndarray:
    """Pairwise cosine similarity, symmetric with unit diagonal."""
    if not embeddings:
        raise ShapeError("no embeddings to compare")
    vectors = np.stack([e.vector for e in embeddings])
    norms = np.linalg.norm(vectors, axis=1)
    for i, n in enumerate(norms):
        if n <= 0:
            e = embeddings[i]
            raise ShapeError(
                f"zero-norm embedding for stream {e.stream} [{e.start}, {e.end}]"
            )
    unit = vectors / norms[:, None]
    affinity = np.clip(unit @ unit.T, -1.0, 1.0)
    affinity = 0.5 * (affinity + affinity.T)
    np.fill_diagonal(affinity, 1.0)
    return affinity


def _check_affinity(affinity: np.ndarray) -> np.ndarray:
    a = np.asarray(affinity, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"affinity must be square, got shape {a.shape}")
    if not np.allclose(a, a.T, atol=1e-8):
        raise ShapeError("affinity must be symmetric")
    return a


def _kmeans(points: np.ndarray, k: int, seed: int, restarts: int) -> np.ndarray:
    """Seeded Lloyd iterations with plus-plus style starts; best of restarts."""
    n = points.shape[0]
    best_labels, best_inertia = None, np.inf
    for r in range(restarts):
        rng = np.random.default_rng((seed, r))
        centres = np.empty((k, points.shape[1]))
        centres[0] = points[int(rng.integers(n))]
        for c in range(1, k):
            d2 = np.min(
                np.sum((points[:, None, :] - centres[None, :c, :]) ** 2, axis=2), axis=1
            )
            total = d2.sum()
            if total <= 0:
                centres[c] = points[int(rng.integers(n))]
            else:
                centres[c] = points[int(rng.choice(n, p=d2 / total))]
        labels = np.full(n, -1, dtype=int)
        for _ in range(100):
            dists = np.sum((points[:, None, :] - centres[None, :, :]) ** 2, axis=2)
            new_labels = np.argmin(dists, axis=1)
            for c in range(k):  # re-seed empty clusters from the worst point
                if not np.any(new_labels == c):
                    new_labels[int(np.argmax(np.min(dists, axis=1)))] = c
            if np.array_equal(new_labels, labels):
                break
            labels = new_labels
            for c in range(k):
                centres[c] = points[labels == c].mean(axis=0)
        inertia = float(np.sum((points - centres[labels]) ** 2))
        if inertia < best_inertia - 1e-12:
            best_inertia, best_labels = inertia, labels
    return best_labels


def _component_labels(adjacency: np.ndarray) -> np.ndarray:
    """Connected-component labels of a boolean adjacency matrix."""
    n = adjacency.shape[0]
    labels = np.full(n, -1, dtype=int)
    count = 0
    for start in range(n):
        if labels[start] >= 0:
            continue
        labels[start] = count
        stack = [start]
        while stack:
            node = stack.pop()
            for peer in np.flatnonzero(adjacency[node]):
                if labels[peer] < 0:
                    labels[peer] = count
                    stack.append(peer)
        count += 1
    return labels


def _boundary_in_noise_floor(a: np.ndarray, in_p: np.ndarray, in_q: np.ndarray) -> bool:
    """True when the split between two clusters sits inside estimation noise.

    Within-cluster similarities deviate from 1 only by the embedder's
    estimation noise, so 1 - median(within) measures that noise level. A
    split of one homogeneous group lands inside the noise level on both
    sides at once; a real boundary clears it on at least one side, even
    when the other side is too loose a cluster to judge by.
    """
    best = float(a[np.ix_(in_p, in_q)].max())
    if best <= 0.0:
        return False
    for inside in (in_p, in_q):
        idx = np.flatnonzero(inside)
        if idx.size > 1:
            block = a[np.ix_(idx, idx)]
            med = float(np.median(block[~np.eye(idx.size, dtype=bool)]))
            if med - best > 1.0 - med:
                return False
    return True  # two positive singletons also land here and do merge


def _merge_unsupported_splits(a: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Fuse cluster pairs whose boundary the similarity values cannot support.

    Rank-based pruning on near-tied affinities can hand the eigengap and
    k-means a structure the values never contained; such boundaries land
    inside the noise floor and are removed again.
    """
    labels = labels.copy()
    merged = True
    while merged:
        merged = False
        present = np.unique(labels)
        if present.size <= 1:
            break
        for pi in range(present.size):
            for qi in range(pi + 1, present.size):
                p, q = present[pi], present[qi]
                if _boundary_in_noise_floor(a, labels == p, labels == q):
                    labels[labels == q] = p
                    merged = True
                    break
            if merged:
                break
    remap: dict[int, int] = {}
    for lab in labels:
        remap.setdefault(int(lab), len(remap))
    return np.array([remap[int(lab)] for lab in labels], dtype=int)


def spectral_cluster(
    affinity: np.ndarray,
    max_speakers: int = 8,
    top_p: float = 0.3,
    seed: int = 0,
    restarts: int = 10,
) -> np.ndarray:
    """Normalised-Laplacian spectral clustering with eigengap model order.

    Rows keep only their top_p fraction of strongest similarities, the
    pruned matrix is re-symmetrised with the elementwise maximum, and the
    speaker count is the position of the largest gap among the smallest
    max_speakers eigenvalues.

    Rank pruning must not manufacture speakers out of near-tied rows, so
    disconnected pruned graphs floor k at their component count and every
    proposed boundary is validated against the raw similarity values; splits
    the values cannot support are fused again. Points with no positive
    similarity to anything stay singletons (up to max_speakers).
    """
    a = _check_affinity(affinity)
    n = a.shape[0]
    if max_speakers < 1:
        raise ConfigurationError(f"max_speakers must be >= 1, got {max_speakers}")
    if not 0.0 < top_p <= 1.0:
        raise ConfigurationError(f"top_p must lie in (0, 1], got {top_p}")
    if n == 1:
        return np.zeros(1, dtype=int)

    keep = max(1, int(np.ceil(top_p * n)))
    pruned = np.zeros_like(a)
    for i in range(n):
        order = np.argsort(-a[i], kind="stable")
        cutoff = a[i, order[keep - 1]]
        idx = np.flatnonzero(a[i] >= cutoff)  # ties at the cutoff all stay
        pruned[i, idx] = a[i, idx]
    sym = np.maximum(pruned, pruned.T)

    off_diagonal = ~np.eye(n, dtype=bool)
    num_components = int(_component_labels((sym > 0) & off_diagonal).max()) + 1

    degree = sym.sum(axis=1)
    inv_sqrt = np.where(degree > 0, 1.0 / np.sqrt(np.maximum(degree, 1e-30)), 0.0)
    laplacian = np.eye(n) - inv_sqrt[:, None] * sym * inv_sqrt[None, :]
    eigvals, eigvecs = np.linalg.eigh(laplacian)

    considered = min(max_speakers, n)
    if considered == 1:
        return np.zeros(n, dtype=int)
    gaps = np.diff(eigvals[:considered])
    k = max(int(np.argmax(gaps)) + 1, min(num_components, considered))
    if k == 1:
        return np.zeros(n, dtype=int)

    basis = eigvecs[:, :k]
    norms = np.linalg.norm(basis, axis=1)
    basis = basis / np.where(norms > 0, norms, 1.0)[:, None]
    return _merge_unsupported_splits(a, _kmeans(basis, k, seed, restarts))


def ahc_cluster(affinity: np.ndarray, threshold: float) -> np.ndarray:
    """Average-linkage agglomeration until the best pair drops below threshold."""
    a = _check_affinity(affinity)
    n = a.shape[0]
    if n == 1:
        return np.zeros(1, dtype=int)

    sums = a.copy()  # total pairwise similarity between clusters
    sizes = np.ones(n)
    active = list(range(n))
    members = {i: [i] for i in range(n)}
    while len(active) > 1:
        best_pair, best_link = None, -np.inf
        for ii in range(len(active)):
            for jj in range(ii + 1, len(active)):
                i, j = active[ii], active[jj]
                link = sums[i, j] / (sizes[i] * sizes[j])
                if link > best_link + 1e-15:
                    best_link, best_pair = link, (i, j)
        if best_link < threshold:
            break
        i, j = best_pair
        for k in active:
            if k not in (i, j):
                sums[i, k] += sums[j, k]
                sums[k, i] = sums[i, k]
        sizes[i] += sizes[j]
        members[i].extend(members.pop(j))
        active.remove(j)

    labels = np.zeros(n, dtype=int)
    for label, i in enumerate(active):
        for point in members[i]:
            labels[point] = label
    return labels


# ---------------------------------------------------------------------------
# end-to-end diarization


@dataclass
class DiarizationConfig:
    clusterer: str = "spectral"
    max_speakers: int = 8
    ahc_threshold: float = 0.35
    top_p: float = 0.3
    window: float = 1.5
    stride: float = 0.75
    merge_gap: float = 0.25
    enclosed_filter: bool = True
    seed: int = 0
    sad_margin_db: float = 12.0
    sad_peak_drop_db: float = 35.0
    sad_flatness_weight: float = 2.0
    sad_transition_penalty: float = 2.0
    sad_edge_drop_db: float = 8.0
    sad_min_segment: float = 0.1
    sad_min_gap: float = 0.1
    leak_gate_db: float = 12.0

    def __post_init__(self):
        if self.clusterer not in CLUSTERERS:
            raise ConfigurationError(
                f"clusterer must be one of {CLUSTERERS}, got {self.clusterer!r}"
            )
        if self.max_speakers < 1:
            raise ConfigurationError(f"max_speakers must be >= 1, got {self.max_speakers}")
        if not 0.0 < self.top_p <= 1.0:
            raise ConfigurationError(f"top_p must lie in (0, 1], got {self.top_p}")


@dataclass
class DiarizationResult:
    segments: list[SegmentAnnotation]
    num_speakers: int


def _merge_labelled(
    windows: list[tuple[float, float]], merge_gap: float
) -> list[tuple[float, float]]:
    merged: list[tuple[float, float]] = []
    for start, end in sorted(windows):
        if merged and start - merged[-1][1] <= merge_gap + 1e-9:
            merged[-1] = (merged[-1][0], max(merged[-1][1], end))
        else:
            merged.append((start, end))
    return merged


def _clip_to_regions(
    span: tuple[float, float], regions: list[tuple[float, float]]
) -> list[tuple[float, float]]:
    pieces = []
    for r_start, r_end in regions:
        lo, hi = max(span[0], r_start), min(span[1], r_end)
        if hi - lo >= 0.01:
            pieces.append((lo, hi))
    return pieces


def _split_stream_conflicts(
    spans: list[tuple[float, float, str]],
) -> list[tuple[float, float, str]]:
    """Resolve different-speaker overlap on one stream at region midpoints.

    A separated stream carries one talker at a time, so competing claims are
    subsegment-window spillover; each contested region goes half-and-half to
    the abutting claimants.
    """
    bounds = sorted({b for span in spans for b in span[:2]})
    pieces: list[tuple[float, float, str]] = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        claimants = [s for s in spans if s[0] <= lo and hi <= s[1]]
        if not claimants:
            continue
        speakers = sorted({c[2] for c in claimants})
        if len(speakers) == 1:
            pieces.append((lo, hi, speakers[0]))
            continue
        # order contenders by how their spans straddle the region: earlier
        # starters first, later enders last
        speakers = sorted(
            speakers,
            key=lambda spk: (
                min(c[0] for c in claimants if c[2] == spk),
                max(c[1] for c in claimants if c[2] == spk),
            ),
        )
        step = (hi - lo) / len(speakers)
        for i, spk in enumerate(speakers):
            pieces.append((quantize_ms(lo + i * step), quantize_ms(lo + (i + 1) * step), spk))

    pieces.sort(key=lambda p: (p[2], p[0]))
    merged: list[tuple[float, float, str]] = []
    for lo, hi, spk in pieces:
        if merged and merged[-1][2] == spk and lo - merged[-1][1] <= 1e-9:
            merged[-1] = (merged[-1][0], hi, spk)
        else:
            merged.append((lo, hi, spk))
    return [(lo, hi, spk) for lo, hi, spk in merged if hi - lo >= 0.01]


def gate_cross_stream(
    streams: list[AudioClip],
    regions: dict[int, list[tuple[float, float]]],
    gate_db: float = 12.0,
    min_segment: float = 0.1,
    min_gap: float = 0.1,
    frame: float = 0.025,
    hop: float = 0.010,
) -> dict[int, list[tuple[float, float]]]:
    """Pare detected speech down to frames near the loudest concurrent stream.

    A beamformed stream keeps a quieter copy of each loud talker on the
    other streams.  Where that copy forms a whole segment the enclosed
    filter removes it later; where it fuses onto the edge of a genuine
    segment only the detection itself can be corrected.  A frame survives
    when its energy is within gate_db of every other stream at the same
    instant; suppressed runs shorter than min_gap are forgiven so genuine
    overlapped speech is not chopped up by momentary dips.
    """
    if len(streams) < 2 or not np.isfinite(gate_db):
        return regions
    frame_len = int(round(frame * streams[0].sample_rate))
    hop_len = int(round(hop * streams[0].sample_rate))
    energies = [_frame_features(clip, frame_len, hop_len)[0] for clip in streams]
    num = min(len(e) for e in energies)
    if num == 0:
        return regions
    stacked = np.stack([e[:num] for e in energies])
    centres = np.arange(num) * hop + frame / 2.0

    gated: dict[int, list[tuple[float, float]]] = {}
    for stream_id, spans in regions.items():
        others = np.delete(stacked, stream_id, axis=0)
        loudest = others.max(axis=0)
        active = np.zeros(num, dtype=bool)
        for lo, hi in spans:
            active |= (centres >= lo) & (centres <= hi)
        keep = active & (stacked[stream_id] >= loudest - gate_db)

        runs = []
        start = None
        for t in range(num):
            if keep[t] and start is None:
                start = t
            elif not keep[t] and start is not None:
                runs.append((start, t - 1))
                start = None
        if start is not None:
            runs.append((start, num - 1))

        pieces: list[tuple[float, float]] = []
        for a, b in runs:
            span = (quantize_ms(a * hop), quantize_ms(b * hop + frame))
            for lo, hi in spans:
                cut = (max(span[0], lo), min(span[1], hi))
                if cut[1] > cut[0]:
                    pieces.append(cut)
        bridged: list[tuple[float, float]] = []
        for span in sorted(pieces):
            if bridged and span[0] - bridged[-1][1] < min_gap:
                bridged[-1] = (bridged[-1][0], max(bridged[-1][1], span[1]))
            else:
                bridged.append(span)
        gated[stream_id] = [s for s in bridged if s[1] - s[0] >= min_segment]
    return gated


def diarize(
    streams: list[AudioClip],
    config: DiarizationConfig | None = None,
    embedder: Embedder | None = None,
) -> DiarizationResult:
    """Label speech across all streams with one shared speaker inventory.

    Embeddings from every stream are pooled and clustered together, labels
    are renamed spk0, spk1, ... in order of first appearance, and adjacent
    same-speaker windows on a stream are merged (bridging gaps up to
    merge_gap) before being clipped back to the detected speech regions.
    """
    config = config if config is not None else DiarizationConfig()
    embedder = embedder if embedder is not None else LogMelStatsEmbedder()

    regions: dict[int, list[tuple[float, float]]] = {}
    for stream_id, clip in enumerate(streams):
        regions[stream_id] = detect_speech(
            clip,
            margin_db=config.sad_margin_db,
            peak_drop_db=config.sad_peak_drop_db,
            flatness_weight=config.sad_flatness_weight,
            transition_penalty=config.sad_transition_penalty,
            edge_drop_db=config.sad_edge_drop_db,
            min_segment=config.sad_min_segment,
            min_gap=config.sad_min_gap,
        )
    regions = gate_cross_stream(
        streams,
        regions,
        gate_db=config.leak_gate_db,
        min_segment=config.sad_min_segment,
        min_gap=config.sad_min_gap,
    )

    embeddings: list[Embedding] = []
    for stream_id, clip in enumerate(streams):
        for window in subsegment(regions[stream_id], config.window, config.stride):
            embeddings.append(embed(clip, (stream_id, window[0], window[1]), embedder))

    if not embeddings:
        return DiarizationResult([], 0)
    if len(embeddings) == 1:
        labels = np.zeros(1, dtype=int)
    else:
        affinity = cosine_affinity(embeddings)
        if config.clusterer == "spectral":
            labels = spectral_cluster(
                affinity, config.max_speakers, config.top_p, config.seed
            )
        else:
            labels = ahc_cluster(affinity, config.ahc_threshold)
            if labels.max() >= config.max_speakers:
                # cap the inventory: reassign surplus clusters to the nearest kept one
                labels = _cap_clusters(affinity, labels, config.max_speakers)

    order: dict[int, int] = {}
    appearance = sorted(
        range(len(embeddings)),
        key=lambda i: (embeddings[i].start, embeddings[i].stream, embeddings[i].end),
    )
    for idx in appearance:
        label = int(labels[idx])
        if label not in order:
            order[label] = len(order)
    names = {old: f"spk{new}" for old, new in order.items()}

    by_stream: dict[int, dict[str, list[tuple[float, float]]]] = {}
    for emb, label in zip(embeddings, labels):
        speaker = names[int(label)]
        by_stream.setdefault(emb.stream, {}).setdefault(speaker, []).append(
            (emb.start, emb.end)
        )

    segments: list[SegmentAnnotation] = []
    for stream_id, by_speaker in by_stream.items():
        spans = [
            (lo, hi, speaker)
            for speaker, windows in by_speaker.items()
            for lo, hi in _merge_labelled(windows, config.merge_gap)
        ]
        for lo, hi, speaker in _split_stream_conflicts(spans):
            for c_lo, c_hi in _clip_to_regions((lo, hi), regions[stream_id]):
                segments.append(SegmentAnnotation(stream_id, speaker, c_lo, c_hi))
    segments.sort(key=lambda s: (s.stream, s.start, s.end, s.speaker))
    return DiarizationResult(segments, len({s.speaker for s in segments}))


def _cap_clusters(affinity: np.ndarray, labels: np.ndarray, max_speakers: int) -> np.ndarray:
    """Fold the smallest surplus clusters into their most similar kept cluster."""
    unique, counts = np.unique(labels, return_counts=True)
    keep = unique[np.argsort(-counts, kind="stable")][:max_speakers]
    out = labels.copy()
    for label in unique:
        if label in keep:
            continue
        mask = labels == label
        sims = [affinity[np.ix_(mask, labels == k)].mean() for k in keep]
        out[mask] = keep[int(np.argmax(sims))]
    remap = {old: new for new, old in enumerate(dict.fromkeys(out.tolist()))}
    return np.array([remap[v] for v in out], dtype=int)


def filter_enclosed(result: DiarizationResult) -> DiarizationResult:
    """Drop segments fully enclosed by a same-speaker segment on another stream.

    The enclosed copy is usually leakage of the same talker picked up twice.
    Identical twins keep only the lowest-numbered stream's copy.  Applying
    the filter twice changes nothing.
    """
    segments = result.segments
    kept = []
    for seg in segments:
        enclosed = False
        for other in segments:
            if other is seg or other.speaker != seg.speaker or other.stream == seg.stream:
                continue
            if other.start <= seg.start and seg.end <= other.end:
                identical = other.start == seg.start and other.end == seg.end
                if not identical or other.stream < seg.stream:
                    enclosed = True
                    break
        if not enclosed:
            kept.append(seg)
    return DiarizationResult(kept, len({s.speaker for s in kept}))
