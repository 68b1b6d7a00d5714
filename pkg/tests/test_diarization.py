"""Speech detection, embeddings, clustering, and cross-stream diarization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import meetpipe as mp
import meetpipe.diarization as dz
from meetpipe.errors import BoundsError, ConfigurationError, FormatError, ShapeError


def noise_burst(spans, total=3.0, sr=16000, floor=1e-5, level=0.1, seed=0):
    gen = np.random.default_rng(seed)
    x = gen.normal(scale=floor, size=int(total * sr))
    for start, end in spans:
        lo, hi = int(start * sr), int(end * sr)
        x[lo:hi] = gen.normal(scale=level, size=hi - lo)
    return mp.AudioClip(x, sr)


# -- speech detection --------------------------------------------------------


def test_detect_single_burst():
    clip = noise_burst([(1.0, 2.0)])
    segments = mp.detect_speech(clip)
    assert len(segments) == 1
    start, end = segments[0]
    assert 0.95 <= start <= 1.05
    assert 1.95 <= end <= 2.05


def test_detect_silence_is_empty():
    clip = mp.AudioClip(np.zeros(16000), 16000)
    assert mp.detect_speech(clip) == []


def test_detect_bridges_tiny_gaps():
    clip = noise_burst([(1.0, 1.5), (1.55, 2.0)])
    segments = mp.detect_speech(clip)
    assert len(segments) == 1


def test_detect_keeps_real_gaps():
    clip = noise_burst([(0.5, 1.0), (2.0, 2.5)])
    segments = mp.detect_speech(clip)
    assert len(segments) == 2


def test_detect_drops_blips():
    clip = noise_burst([(1.0, 1.04)])
    assert mp.detect_speech(clip) == []


def test_detect_requires_mono():
    with pytest.raises(ShapeError):
        mp.detect_speech(mp.AudioClip(np.zeros((2, 8000)), 16000))


# -- subsegmentation ---------------------------------------------------------


def test_subsegment_sliding_windows():
    assert mp.subsegment([(0.0, 3.0)], 1.5, 0.75) == [
        (0.0, 1.5),
        (0.75, 2.25),
        (1.5, 3.0),
    ]


def test_subsegment_clamps_tail():
    assert mp.subsegment([(0.0, 2.0)], 1.5, 0.75) == [(0.0, 1.5), (0.75, 2.0)]


def test_subsegment_short_segment_passes_through():
    assert mp.subsegment([(0.0, 1.0)], 1.5, 0.75) == [(0.0, 1.0)]
    assert mp.subsegment([], 1.5, 0.75) == []


def test_subsegment_validation():
    with pytest.raises(ConfigurationError):
        mp.subsegment([(0.0, 3.0)], 1.5, 2.0)


# -- embeddings --------------------------------------------------------------


def test_embedder_dimension_and_determinism():
    clip = noise_burst([(0.0, 1.5)], total=1.5)
    embedder = mp.LogMelStatsEmbedder()
    a = mp.embed(clip, (0, 0.0, 1.5), embedder)
    b = mp.embed(clip, (0, 0.0, 1.5), embedder)
    assert a.vector.shape == (46,)
    np.testing.assert_array_equal(a.vector, b.vector)
    assert np.linalg.norm(a.vector) == pytest.approx(1.0)


def test_embedder_is_nearly_level_invariant():
    clip = noise_burst([(0.0, 1.5)], total=1.5)
    loud = mp.AudioClip(2.0 * clip.samples, clip.sample_rate)
    embedder = mp.LogMelStatsEmbedder()
    a = mp.embed(clip, (0, 0.0, 1.5), embedder).vector
    b = mp.embed(loud, (0, 0.0, 1.5), embedder).vector
    cos = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
    assert cos >= 0.99


def test_embed_window_bounds_checked():
    clip = noise_burst([(0.0, 1.0)], total=1.0)
    with pytest.raises(BoundsError):
        mp.embed(clip, (0, 0.5, 2.0), mp.LogMelStatsEmbedder())
    with pytest.raises(BoundsError):
        mp.embed(clip, (0, -0.1, 0.5), mp.LogMelStatsEmbedder())


def test_external_embeddings_round_trip(tmp_path):
    windows = [(0, 0.0, 1.5), (0, 0.75, 2.25), (1, 0.0, 1.5)]
    gen = np.random.default_rng(7)
    embeddings = [
        dz.Embedding(gen.normal(size=46), stream, start, end)
        for stream, start, end in windows
    ]
    index, binary = tmp_path / "emb.json", tmp_path / "emb.bin"
    dz.write_external_embeddings(index, binary, embeddings)
    store = mp.ExternalEmbeddingStore(index, binary)
    clip = mp.AudioClip(np.zeros(16000 * 3), 16000)  # audio is ignored
    for want in embeddings:
        got = mp.embed(clip, (want.stream, want.start, want.end), store)
        np.testing.assert_allclose(got.vector, want.vector, atol=1e-6)


def test_external_embeddings_unknown_window(tmp_path):
    emb = [dz.Embedding(np.ones(4), 0, 0.0, 1.0)]
    dz.write_external_embeddings(tmp_path / "i.json", tmp_path / "b.bin", emb)
    store = mp.ExternalEmbeddingStore(tmp_path / "i.json", tmp_path / "b.bin")
    clip = mp.AudioClip(np.zeros(16000 * 2), 16000)
    with pytest.raises(FormatError, match="no external embedding"):
        mp.embed(clip, (0, 0.5, 1.5), store)


def test_external_embeddings_bad_index(tmp_path):
    (tmp_path / "i.json").write_text("{broken")
    (tmp_path / "b.bin").write_bytes(b"")
    with pytest.raises(FormatError):
        mp.ExternalEmbeddingStore(tmp_path / "i.json", tmp_path / "b.bin")


# -- affinity ----------------------------------------------------------------


def as_embeddings(vectors):
    return [dz.Embedding(np.asarray(v, dtype=float), 0, float(i), float(i + 1)) for i, v in enumerate(vectors)]


def test_affinity_reference_values():
    affinity = mp.cosine_affinity(
        as_embeddings([[1.0, 0.0], [0.0, 1.0], [3.0, 0.0], [1.0, 1.0]])
    )
    assert affinity[0, 1] == pytest.approx(0.0, abs=1e-12)  # orthogonal
    assert affinity[0, 2] == pytest.approx(1.0, abs=1e-12)  # same direction, scaled
    assert affinity[0, 3] == pytest.approx(0.7071, abs=1e-4)
    np.testing.assert_allclose(np.diag(affinity), 1.0)
    np.testing.assert_allclose(affinity, affinity.T)


def test_affinity_rejects_zero_vector():
    with pytest.raises(ShapeError, match=r"stream 0 \[1.0, 2.0\]"):
        mp.cosine_affinity(as_embeddings([[1.0, 0.0], [0.0, 0.0]]))


# -- clustering --------------------------------------------------------------


def block_affinity(sizes, within=1.0, between=0.0):
    n = sum(sizes)
    a = np.full((n, n), between, dtype=float)
    offset = 0
    for size in sizes:
        a[offset : offset + size, offset : offset + size] = within
        offset += size
    np.fill_diagonal(a, 1.0)
    return a


def label_partition(labels):
    groups = {}
    for i, lab in enumerate(labels):
        groups.setdefault(lab, set()).add(i)
    return sorted(map(frozenset, groups.values()), key=min)


def test_spectral_ideal_blocks():
    labels = mp.spectral_cluster(block_affinity([3, 4, 2]))
    assert label_partition(labels) == [
        frozenset({0, 1, 2}),
        frozenset({3, 4, 5, 6}),
        frozenset({7, 8}),
    ]


def test_spectral_single_block():
    labels = mp.spectral_cluster(block_affinity([5]))
    assert len(set(labels)) == 1


@given(sizes=st.lists(st.integers(min_value=1, max_value=6), min_size=1, max_size=8))
@settings(max_examples=50, deadline=None)
def test_spectral_recovers_any_block_count(sizes):
    # ideal block affinity: estimated cluster count must equal the block count
    # for any layout with at most max_speakers blocks
    labels = mp.spectral_cluster(block_affinity(sizes))
    assert len(set(labels)) == len(sizes)
    expected, offset = [], 0
    for size in sizes:
        expected.append(frozenset(range(offset, offset + size)))
        offset += size
    assert label_partition(labels) == expected


def test_spectral_four_noisy_clusters():
    # four tight direction cones: within-cluster cosine >= 0.9, between <= 0.3
    gen = np.random.default_rng(0)
    centers = np.eye(4)
    vectors, truth = [], []
    for c in range(4):
        for _ in range(8):
            v = centers[c] + gen.normal(scale=0.05, size=4)
            vectors.append(v)
            truth.append(c)
    affinity = mp.cosine_affinity(as_embeddings(vectors))
    within = [affinity[i, j] for i in range(32) for j in range(32) if i != j and truth[i] == truth[j]]
    between = [affinity[i, j] for i in range(32) for j in range(32) if truth[i] != truth[j]]
    assert min(within) >= 0.9
    assert max(between) <= 0.3
    labels = mp.spectral_cluster(affinity)
    assert len(set(labels)) == 4
    # purity: every predicted cluster maps to exactly one true cluster
    for lab in set(labels):
        members = {truth[i] for i in range(32) if labels[i] == lab}
        assert len(members) == 1


def test_spectral_zero_affinity_splits_everyone():
    a = np.zeros((5, 5))
    np.fill_diagonal(a, 1.0)
    labels = mp.spectral_cluster(a, max_speakers=8)
    assert len(set(labels)) == 5


def test_spectral_caps_at_max_speakers():
    a = np.zeros((6, 6))
    np.fill_diagonal(a, 1.0)
    labels = mp.spectral_cluster(a, max_speakers=3)
    assert len(set(labels)) == 3


def test_spectral_scale_invariant_through_affinity():
    vectors = np.random.default_rng(3).normal(size=(12, 6))
    base = mp.cosine_affinity(as_embeddings(vectors))
    scaled = mp.cosine_affinity(as_embeddings(vectors * 7.5))
    a = mp.spectral_cluster(base, seed=0)
    b = mp.spectral_cluster(scaled, seed=0)
    assert label_partition(a) == label_partition(b)


def test_ahc_threshold_behavior():
    two = block_affinity([3, 3], within=0.9, between=0.1)
    assert len(set(mp.ahc_cluster(two, threshold=0.5))) == 2
    assert len(set(mp.ahc_cluster(two, threshold=-1.0))) == 1
    assert len(set(mp.ahc_cluster(two, threshold=0.95))) == 6


def test_affinity_validation():
    with pytest.raises(ShapeError):
        mp.spectral_cluster(np.ones((3, 2)))
    lopsided = np.array([[1.0, 0.2], [0.8, 1.0]])
    with pytest.raises(ShapeError):
        mp.spectral_cluster(lopsided)


# -- cross-stream gating -----------------------------------------------------


def test_gate_single_stream_unchanged():
    clip = noise_burst([(0.5, 1.5)])
    regions = {0: mp.detect_speech(clip)}
    gated = dz.gate_cross_stream([clip], dict(regions))
    assert gated == regions


def test_gate_removes_faint_copy_of_louder_stream():
    loud = noise_burst([(0.5, 2.5)], level=0.2)
    faint = mp.AudioClip(0.05 * loud.samples, loud.sample_rate)  # -26 dB copy
    regions = {
        0: mp.detect_speech(loud.channel(0)),
        1: mp.detect_speech(faint.channel(0)),
    }
    assert regions[1]  # detector alone keeps the leak
    gated = dz.gate_cross_stream([loud, faint], regions, gate_db=12.0)
    assert gated[0] == regions[0]
    assert sum(e - s for s, e in gated[1]) <= 0.2 * sum(e - s for s, e in regions[1])


def test_gate_keeps_balanced_overlap():
    a = noise_burst([(0.5, 2.5)], level=0.2, seed=1)
    b = noise_burst([(0.5, 2.5)], level=0.2, seed=2)
    regions = {0: mp.detect_speech(a.channel(0)), 1: mp.detect_speech(b.channel(0))}
    gated = dz.gate_cross_stream([a, b], regions, gate_db=12.0)
    kept = sum(e - s for s, e in gated[1])
    original = sum(e - s for s, e in regions[1])
    assert kept >= 0.9 * original


# -- end-to-end diarization --------------------------------------------------


def one_speaker_clip(pool, speaker_index=0, count=3, gap=0.4, sr=16000):
    """Consecutive utterances of one pool speaker with silence in between."""
    speakers = sorted({u.speaker for u in pool})
    utts = [u for u in pool if u.speaker == speakers[speaker_index]][:count]
    pieces = [np.zeros(int(0.3 * sr))]
    for u in utts:
        pieces.append(u.clip.samples[0])
        pieces.append(np.zeros(int(gap * sr)))
    return mp.AudioClip(np.concatenate(pieces), sr)


def test_diarize_single_stream_single_speaker(pool):
    clip = one_speaker_clip(pool)
    result = mp.diarize([clip])
    assert result.num_speakers == 1
    assert {s.speaker for s in result.segments} == {"spk0"}
    assert all(s.stream == 0 for s in result.segments)


def test_diarize_oracle_streams_match_ground_truth(meeting, separated):
    _, truth = meeting
    result = mp.diarize(separated.streams)
    assert result.num_speakers == 2
    breakdown = mp.der(truth.segments, result.segments, collar=0.0)
    assert breakdown.der < 0.05


def test_diarize_is_stream_permutation_invariant(separated):
    config = mp.DiarizationConfig(seed=0)
    forward = mp.diarize(separated.streams, config)
    swapped = mp.diarize(list(reversed(separated.streams)), config)
    total = len(separated.streams) - 1

    def canonical(result, flip):
        return sorted(
            (total - s.stream if flip else s.stream, round(s.start, 3), round(s.end, 3))
            for s in result.segments
        )

    assert canonical(forward, False) == canonical(swapped, True)
    assert forward.num_speakers == swapped.num_speakers


def test_diarize_speaker_moving_across_streams_keeps_one_label(pool):
    voice = one_speaker_clip(pool, count=4)
    half = voice.num_frames // 2
    sr = voice.sample_rate
    first = np.concatenate([voice.samples[0][:half], np.zeros(voice.num_frames - half)])
    second = np.concatenate([np.zeros(half), voice.samples[0][half:]])
    result = mp.diarize([mp.AudioClip(first, sr), mp.AudioClip(second, sr)])
    assert result.num_speakers == 1


def test_diarize_labels_are_canonical(meeting, separated):
    result = mp.diarize(separated.streams)
    labels = sorted({s.speaker for s in result.segments})
    assert labels == [f"spk{i}" for i in range(len(labels))]


def test_diarize_stays_inside_detected_regions(separated):
    config = mp.DiarizationConfig()
    result = mp.diarize(separated.streams, config)
    regions = {
        idx: mp.detect_speech(
            stream.channel(0),
            margin_db=config.sad_margin_db,
            peak_drop_db=config.sad_peak_drop_db,
            flatness_weight=config.sad_flatness_weight,
            transition_penalty=config.sad_transition_penalty,
            edge_drop_db=config.sad_edge_drop_db,
            min_segment=config.sad_min_segment,
            min_gap=config.sad_min_gap,
        )
        for idx, stream in enumerate(separated.streams)
    }
    regions = dz.gate_cross_stream(
        separated.streams,
        regions,
        gate_db=config.leak_gate_db,
        min_segment=config.sad_min_segment,
        min_gap=config.sad_min_gap,
    )
    for seg in result.segments:
        inside = any(
            lo - 1e-6 <= seg.start and seg.end <= hi + 1e-6 for lo, hi in regions[seg.stream]
        )
        assert inside, f"{seg} escapes detected speech"


def test_diarize_empty_streams():
    silent = mp.AudioClip(np.zeros(16000), 16000)
    result = mp.diarize([silent, silent])
    assert result.segments == []
    assert result.num_speakers == 0


def test_diarization_config_validation():
    with pytest.raises(ConfigurationError):
        mp.DiarizationConfig(clusterer="kmeans")
    with pytest.raises(ConfigurationError):
        mp.DiarizationConfig(top_p=0.0)
    with pytest.raises(ConfigurationError):
        mp.DiarizationConfig(max_speakers=0)


# -- cross-talk filter -------------------------------------------------------


def seg(stream, speaker, start, end):
    return mp.SegmentAnnotation(stream, speaker, start, end)


def test_filter_enclosed_drops_same_speaker_copy():
    result = dz.DiarizationResult(
        [seg(0, "spk0", 0.0, 4.0), seg(1, "spk0", 1.0, 2.0)], 1
    )
    kept = mp.filter_enclosed(result).segments
    assert kept == [seg(0, "spk0", 0.0, 4.0)]


def test_filter_enclosed_keeps_other_speakers():
    result = dz.DiarizationResult(
        [seg(0, "spk0", 0.0, 4.0), seg(1, "spk1", 1.0, 2.0)], 2
    )
    kept = mp.filter_enclosed(result).segments
    assert len(kept) == 2


def test_filter_enclosed_keeps_partial_overlap():
    result = dz.DiarizationResult(
        [seg(0, "spk0", 0.0, 2.0), seg(1, "spk0", 1.0, 3.0)], 1
    )
    kept = mp.filter_enclosed(result).segments
    assert len(kept) == 2


def test_filter_enclosed_tie_keeps_lowest_stream():
    result = dz.DiarizationResult(
        [seg(1, "spk0", 1.0, 2.0), seg(0, "spk0", 1.0, 2.0)], 1
    )
    kept = mp.filter_enclosed(result).segments
    assert kept == [seg(0, "spk0", 1.0, 2.0)]


def test_filter_enclosed_is_idempotent(meeting, separated):
    result = mp.diarize(separated.streams, mp.DiarizationConfig(enclosed_filter=False))
    once = mp.filter_enclosed(result)
    twice = mp.filter_enclosed(once)
    assert once.segments == twice.segments
