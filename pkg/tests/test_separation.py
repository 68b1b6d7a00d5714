"""Chunking, permutation stitching, spatial statistics, MVDR, and separate()."""

import numpy as np
import pytest

import meetpipe as mp
import meetpipe.separation as sp
from meetpipe.errors import ConfigurationError, EstimationError


# -- chunk planning ----------------------------------------------------------


def test_chunk_plan_stride_and_overlap():
    plan = mp.plan_chunks(10.0, chunk_len=2.4, hop=0.8)
    starts = [b[0] for b in plan.boundaries]
    np.testing.assert_allclose(starts, 0.8 * np.arange(len(starts)), atol=1e-9)
    for (s0, e0), (s1, e1) in zip(plan.boundaries, plan.boundaries[1:]):
        assert e0 - s1 == pytest.approx(1.6)  # chunk_len - hop
    assert plan.boundaries[0] == (0.0, 2.4)
    assert plan.boundaries[-1][1] == pytest.approx(10.0)


def test_chunk_plan_four_second_hop():
    plan = mp.plan_chunks(20.0, chunk_len=8.0, hop=4.0)
    for (s0, e0), (s1, e1) in zip(plan.boundaries, plan.boundaries[1:]):
        assert e0 - s1 == pytest.approx(4.0)


def test_short_recording_is_one_chunk():
    plan = mp.plan_chunks(1.0, chunk_len=2.4, hop=0.8)
    assert plan.boundaries == [(0.0, 1.0)]


def test_chunk_plan_covers_duration_without_gaps():
    plan = mp.plan_chunks(33.3, chunk_len=2.4, hop=0.8)
    covered = plan.boundaries[0][1]
    for start, end in plan.boundaries[1:]:
        assert start < covered  # consecutive chunks always overlap
        covered = max(covered, end)
    assert covered == pytest.approx(33.3)


def test_chunk_plan_validation():
    with pytest.raises(ConfigurationError):
        mp.plan_chunks(5.0, chunk_len=1.0, hop=1.5)
    with pytest.raises(ConfigurationError):
        mp.plan_chunks(0.0, chunk_len=2.4, hop=0.8)


# -- per-chunk masks ---------------------------------------------------------


def test_uniform_estimator_emits_speech_plus_noise_masks(rng):
    spec = mp.stft(mp.AudioClip(rng.normal(size=(2, 16000)), 16000))
    out = mp.estimate_masks(spec, mp.UniformMaskEstimator(num_streams=2), 3, 128)
    assert out.chunk_index == 3
    assert out.frame_start == 128
    assert len(out.masks) == 3  # two speech slots and one noise slot
    for mask in out.masks:
        assert mask.values.shape == spec.bins.shape[1:]


def test_estimator_failure_names_chunk():
    class Broken:
        num_streams = 2

        def estimate(self, chunk, frame_start):
            raise ValueError("no masks today")

    spec = mp.stft(mp.AudioClip(np.zeros((1, 8000)), 16000))
    with pytest.raises(EstimationError, match="chunk 7"):
        mp.estimate_masks(spec, Broken(), 7, 0)


def test_oracle_estimator_isolates_single_speaker():
    sr, total = 16000, 1.0
    t = np.arange(int(total * sr)) / sr
    lead = mp.AudioClip(0.5 * np.sin(2 * np.pi * 1000.0 * t), sr)
    silent = mp.AudioClip(np.zeros_like(t), sr)
    noise = mp.AudioClip(np.random.default_rng(0).normal(scale=1e-4, size=t.size), sr)
    estimator = mp.OracleMaskEstimator(
        {"a": lead, "b": silent}, noise, num_streams=2, shuffle=False
    )
    mixture = mp.AudioClip(lead.samples + noise.samples, sr)
    chunk = mp.stft(mixture)
    masks = mp.estimate_masks(chunk, estimator, 0, 0).masks
    energetic = np.abs(chunk.bins[0]) > 1e-2
    lead_mean = np.mean(masks[0].values[energetic])
    other_mean = np.mean(masks[1].values[energetic])
    assert lead_mean >= 0.95
    assert other_mean <= 0.05


# -- stitching ---------------------------------------------------------------


def chunk_grid(total_frames=140, chunk_frames=60, hop_frames=40, bins=5, seed=0):
    """Global binary speech patterns sliced into overlapping chunks."""
    gen = np.random.default_rng(seed)
    pattern_a = (gen.uniform(size=(total_frames, bins)) < 0.5).astype(float)
    pattern_b = 1.0 - pattern_a
    starts = list(range(0, total_frames - chunk_frames + 1, hop_frames))
    chunks = []
    for idx, start in enumerate(starts):
        sl = slice(start, start + chunk_frames)
        masks = [
            mp.TFMask(pattern_a[sl].copy()),
            mp.TFMask(pattern_b[sl].copy()),
            mp.TFMask(np.zeros((chunk_frames, bins))),
        ]
        chunks.append(sp.ChunkMasks(chunk_index=idx, frame_start=start, masks=masks))
    return pattern_a, pattern_b, chunks


def test_stitch_aligned_chunks_is_identity():
    pattern_a, pattern_b, chunks = chunk_grid()
    result = mp.stitch_masks(chunks, total_frames=140)
    assert all(perm == (0, 1) for perm in result.permutations)
    np.testing.assert_allclose(result.masks[0].values, pattern_a, atol=1e-12)
    np.testing.assert_allclose(result.masks[1].values, pattern_b, atol=1e-12)


def test_stitch_undoes_known_permutations():
    pattern_a, pattern_b, chunks = chunk_grid(seed=3)
    applied = [(0, 1), (1, 0), (1, 0)]
    scrambled = []
    for chunk, perm in zip(chunks, applied):
        speech = [chunk.masks[p] for p in perm]
        scrambled.append(
            sp.ChunkMasks(chunk.chunk_index, chunk.frame_start, speech + [chunk.masks[-1]])
        )
    result = mp.stitch_masks(scrambled, total_frames=140)
    np.testing.assert_allclose(result.masks[0].values, pattern_a, atol=1e-12)
    np.testing.assert_allclose(result.masks[1].values, pattern_b, atol=1e-12)
    # composed permutation inverts what was applied; identity-anchored first chunk
    for perm, orig in zip(result.permutations, applied):
        recovered = tuple(orig[p] for p in perm)
        assert recovered == (0, 1)


def test_stitch_silent_overlap_warns_and_keeps_identity():
    _, _, chunks = chunk_grid()
    silent = []
    for chunk in chunks:
        masks = [mp.TFMask(np.zeros_like(m.values)) for m in chunk.masks]
        silent.append(sp.ChunkMasks(chunk.chunk_index, chunk.frame_start, masks))
    with pytest.warns(RuntimeWarning, match="ambiguous"):
        result = mp.stitch_masks(silent, total_frames=140)
    assert all(perm == (0, 1) for perm in result.permutations)


def test_stitch_signals_undoes_per_chunk_flips():
    sr = 16000
    gen = np.random.default_rng(4)
    a = gen.normal(size=4 * sr)
    b = gen.normal(size=4 * sr)
    plan = mp.plan_chunks(4.0, chunk_len=1.6, hop=0.8)
    chunk_signals = []
    flip = [(0, 1), (1, 0), (0, 1), (1, 0), (0, 1)][: len(plan.boundaries)]
    for (start, end), perm in zip(plan.boundaries, flip):
        lo, hi = int(start * sr), int(end * sr)
        pair = [a[lo:hi], b[lo:hi]]
        chunk_signals.append([pair[p] for p in perm])
    streams, perms = mp.stitch_signals(chunk_signals, plan, sr)
    assert len(streams.streams) == 2
    got_a = streams.streams[0].samples[0]
    got_b = streams.streams[1].samples[0]
    np.testing.assert_allclose(got_a, a, atol=1e-9)
    np.testing.assert_allclose(got_b, b, atol=1e-9)


def test_stitch_signals_silent_overlap_warns():
    sr = 16000
    plan = mp.plan_chunks(2.0, chunk_len=1.2, hop=0.8)
    zeros = [np.zeros(int((e - s) * sr)) for s, e in plan.boundaries]
    chunk_signals = [[z, z] for z in zeros]
    with pytest.warns(RuntimeWarning, match="ambiguous"):
        _, perms = mp.stitch_signals(chunk_signals, plan, sr)
    assert perms == [(0, 1), (0, 1)]


# -- spatial statistics ------------------------------------------------------


def test_covariance_all_ones_mask_single_channel(rng):
    spec = mp.stft(mp.AudioClip(rng.normal(size=8000), 16000))
    mask = mp.TFMask(np.ones(spec.bins.shape[1:]))
    cov = mp.spatial_covariance(spec, mask)
    freqs = spec.bins.shape[2]
    assert cov.matrices.shape == (freqs, 1, 1)
    expected = np.mean(np.abs(spec.bins[0]) ** 2, axis=0)
    np.testing.assert_allclose(cov.matrices[:, 0, 0].real, expected, rtol=1e-5)


def test_covariance_single_frame_is_rank_one(rng):
    spec = mp.stft(mp.AudioClip(rng.normal(size=(3, 4000)), 16000))
    values = np.zeros(spec.bins.shape[1:])
    values[5, :] = 1.0
    cov = mp.spatial_covariance(spec, mp.TFMask(values))
    f = 17
    y = spec.bins[:, 5, f]
    # diagonal loading is 1e-6 of the trace, absorbed by the tolerance
    np.testing.assert_allclose(
        cov.matrices[f],
        np.outer(y, y.conj()),
        rtol=1e-5,
        atol=1e-5 * float(np.sum(np.abs(y) ** 2)),
    )


def test_covariance_is_hermitian(rng):
    spec = mp.stft(mp.AudioClip(rng.normal(size=(4, 6000)), 16000))
    mask = mp.TFMask(rng.uniform(size=spec.bins.shape[1:]))
    cov = mp.spatial_covariance(spec, mask)
    sym_err = np.max(np.abs(cov.matrices - np.conj(np.transpose(cov.matrices, (0, 2, 1)))))
    assert sym_err < 1e-9


def test_covariance_zero_mask_falls_back_to_unweighted(rng):
    spec = mp.stft(mp.AudioClip(rng.normal(size=(2, 4000)), 16000))
    values = rng.uniform(size=spec.bins.shape[1:])
    dead = 9
    values[:, dead] = 0.0
    cov = mp.spatial_covariance(spec, mp.TFMask(values))
    y = spec.bins[:, :, dead]  # C x T
    unweighted = (y @ y.conj().T) / y.shape[1]
    np.testing.assert_allclose(
        cov.matrices[dead],
        unweighted,
        rtol=1e-5,
        atol=1e-5 * float(np.mean(np.abs(y) ** 2)),
    )


# -- MVDR --------------------------------------------------------------------


def rank_one_case(channels, freqs, frames, ref, seed):
    gen = np.random.default_rng(seed)
    d = gen.normal(size=(freqs, channels)) + 1j * gen.normal(size=(freqs, channels))
    phi_s = sp.SpatialCovariance(np.einsum("fc,fd->fcd", d, d.conj()))
    phi_n = sp.SpatialCovariance(np.broadcast_to(np.eye(channels), (freqs, channels, channels)).copy())
    s = gen.normal(size=(frames, freqs)) + 1j * gen.normal(size=(frames, freqs))
    bins = np.einsum("fc,tf->ctf", d, s)
    spec = mp.Spectrogram(bins, 16000, 16, 8)
    return d, s, phi_s, phi_n, spec


@pytest.mark.parametrize("channels", [2, 4, 7])
def test_mvdr_is_distortionless_on_rank_one_speech(channels):
    # identity noise + rank-one speech: w^H d must return the reference entry of d
    for seed in range(10):
        d, s, phi_s, phi_n, spec = rank_one_case(channels, 9, 4, ref=1, seed=seed)
        out = mp.mvdr_beamform(phi_s, phi_n, spec, ref_channel=1)
        expected = d[:, 1][None, :] * s
        assert np.max(np.abs(out.bins[0] - expected)) < 1e-9 * max(1.0, np.max(np.abs(expected)))


def test_mvdr_single_channel_is_passthrough(rng):
    spec = mp.stft(mp.AudioClip(rng.normal(size=4000), 16000))
    ones = mp.TFMask(np.ones(spec.bins.shape[1:]))
    phi = mp.spatial_covariance(spec, ones)
    out = mp.mvdr_beamform(phi, phi, spec, ref_channel=0)
    np.testing.assert_allclose(out.bins, spec.bins, rtol=1e-12)


def test_mvdr_zero_speech_statistics_pass_reference_channel(rng):
    spec = mp.stft(mp.AudioClip(rng.normal(size=(3, 4000)), 16000))
    freqs = spec.bins.shape[2]
    phi_s = sp.SpatialCovariance(np.zeros((freqs, 3, 3), dtype=complex))
    phi_n = sp.SpatialCovariance(np.broadcast_to(np.eye(3), (freqs, 3, 3)).astype(complex).copy())
    out = mp.mvdr_beamform(phi_s, phi_n, spec, ref_channel=2)
    np.testing.assert_allclose(out.bins[0], spec.bins[2], rtol=1e-12)


# -- end-to-end separation ---------------------------------------------------


def test_separate_is_deterministic(meeting):
    mixture, truth = meeting
    est = mp.OracleMaskEstimator.from_ground_truth(truth, num_streams=2, seed=5)
    first = mp.separate(mixture, est)
    second = mp.separate(mixture, est)
    for a, b in zip(first.streams, second.streams):
        np.testing.assert_array_equal(a.samples, b.samples)
    assert first.chunk_permutations == second.chunk_permutations


def test_separate_stream_count_and_length(separated, meeting):
    mixture, _ = meeting
    assert len(separated.streams) == 2
    for stream in separated.streams:
        assert stream.num_channels == 1
        assert stream.num_frames == mixture.num_frames


def test_extra_stream_stays_nearly_silent(meeting):
    mixture, truth = meeting
    est = mp.OracleMaskEstimator.from_ground_truth(truth, num_streams=3, seed=5)
    out = mp.separate(mixture, est)
    energies = sorted(float(np.sum(s.samples**2)) for s in out.streams)
    mix_energy = float(np.sum(mixture.channel(0).samples ** 2))
    assert energies[0] < 0.01 * mix_energy


def test_single_speaker_separation_quality(pool):
    spec = mp.MeetingSpec(1, 0.0, 8.0, "short", seed=2)
    mixture, truth = mp.simulate_meeting(pool, spec)
    est = mp.OracleMaskEstimator.from_ground_truth(truth, num_streams=2, shuffle=False, seed=2)
    out = mp.separate(mixture, est)
    image = truth.per_source_images[truth.speakers[0]].channel(0)
    score = mp.si_sdr(out.streams[0], image)
    assert score >= 10.0


# -- oracle stream-to-speaker assignment -------------------------------------


def band_noise(seed, seconds=4.0, sr=16000):
    gen = np.random.default_rng(seed)
    return mp.AudioClip(gen.normal(size=int(seconds * sr)) * 0.1, sr)


def test_track_map_identity():
    refs = {"a": band_noise(1), "b": band_noise(2)}
    tracks = mp.oracle_track_map([refs["a"], refs["b"]], refs)
    np.testing.assert_allclose(tracks["a"].samples, refs["a"].samples, atol=1e-12)
    np.testing.assert_allclose(tracks["b"].samples, refs["b"].samples, atol=1e-12)


def test_track_map_global_swap():
    refs = {"a": band_noise(1), "b": band_noise(2)}
    tracks = mp.oracle_track_map([refs["b"], refs["a"]], refs)
    np.testing.assert_allclose(tracks["a"].samples, refs["a"].samples, atol=1e-12)
    np.testing.assert_allclose(tracks["b"].samples, refs["b"].samples, atol=1e-12)


def test_track_map_follows_mid_meeting_flip():
    sr = 16000
    refs = {"a": band_noise(1), "b": band_noise(2)}
    cut = int(2.4 * sr)  # a whole number of 0.8 s blocks
    s0 = np.concatenate([refs["a"].samples[0][:cut], refs["b"].samples[0][cut:]])
    s1 = np.concatenate([refs["b"].samples[0][:cut], refs["a"].samples[0][cut:]])
    streams = [mp.AudioClip(s0, sr), mp.AudioClip(s1, sr)]
    tracks = mp.oracle_track_map(streams, refs, block=0.8)
    np.testing.assert_allclose(tracks["a"].samples, refs["a"].samples, atol=1e-12)
    np.testing.assert_allclose(tracks["b"].samples, refs["b"].samples, atol=1e-12)


# -- channel helpers ---------------------------------------------------------


def test_select_reference_channel_in_range(separated, meeting):
    mixture, _ = meeting
    spec = mp.stft(mixture)
    idx = mp.select_reference_channel(spec, separated.stream_masks, separated.noise_mask)
    assert 0 <= idx < mixture.num_channels


def test_augment_reference_channel_is_seeded(rng):
    # a mono recording gains a perturbed companion channel so the spatial
    # statistics are not rank deficient; channel 0 stays untouched
    clip = mp.AudioClip(rng.normal(size=(1, 4000)), 16000)
    a = mp.augment_reference_channel(clip, seed=3)
    b = mp.augment_reference_channel(clip, seed=3)
    c = mp.augment_reference_channel(clip, seed=4)
    assert a.num_channels == 2
    np.testing.assert_array_equal(a.samples[0], clip.samples[0])
    np.testing.assert_array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)
