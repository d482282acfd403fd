"""Datapipe tests: WAV ingestion, sample generation, inference chunking."""

import json

import numpy as np
import pytest
from scipy.io import wavfile
from scipy.signal import periodogram

import toyworld
from lyralign import datapipe, net
from lyralign.alphabet import normalize_lyrics

CFG = toyworld.TOY_NET
GEO = net.compute_geometry(CFG)
SR = CFG.sample_rate
WINDOW = CFG.output_samples


class TestLoadAudio:
    def test_stereo_opposite_channels_cancel(self, tmp_path):
        rng = np.random.default_rng(127)
        left = rng.normal(size=44100).astype(np.float32) * 0.5
        stereo = np.stack([left, -left], axis=1)
        path = tmp_path / "s.wav"
        wavfile.write(path, 44100, stereo)
        mono = datapipe.load_audio(path, target_rate=22050)
        assert np.max(np.abs(mono)) < 1e-7

    def test_native_rate_passthrough(self, tmp_path):
        rng = np.random.default_rng(131)
        x = rng.uniform(-0.9, 0.9, size=22050).astype(np.float32)
        path = tmp_path / "p.wav"
        wavfile.write(path, 22050, x)
        out = datapipe.load_audio(path, target_rate=22050)
        assert np.max(np.abs(out - x)) < 1e-6

    def test_440hz_survives_resampling(self, tmp_path):
        t = np.arange(44100) / 44100
        x = (0.5 * np.sin(2 * np.pi * 440.0 * t)).astype(np.float32)
        path = tmp_path / "tone.wav"
        wavfile.write(path, 44100, x)
        out = datapipe.load_audio(path, target_rate=22050)
        assert len(out) == 22050
        freqs, power = periodogram(out, fs=22050)
        assert freqs[int(np.argmax(power))] == pytest.approx(440.0, abs=1.0)

    def test_int16_scaling(self, tmp_path):
        x = np.array([0, 16384, -16384, 32767], dtype=np.int16)
        path = tmp_path / "i.wav"
        wavfile.write(path, 22050, x)
        out = datapipe.load_audio(path, target_rate=22050)
        np.testing.assert_allclose(out[:3], [0.0, 0.5, -0.5], atol=1e-4)
        assert np.max(np.abs(out)) <= 1.0

    def test_unreadable_file_rejected(self, tmp_path):
        path = tmp_path / "nope.wav"
        path.write_bytes(b"this is not a wav")
        with pytest.raises(ValueError):
            datapipe.load_audio(path)

    def test_deterministic(self, tmp_path):
        x = (np.random.default_rng(5).normal(size=8000) * 0.2).astype(
            np.float32)
        path = tmp_path / "d.wav"
        wavfile.write(path, 8000, x)
        a = datapipe.load_audio(path, target_rate=22050)
        b = datapipe.load_audio(path, target_rate=22050)
        np.testing.assert_array_equal(a, b)


class TestAnnotations:
    def test_load_json_lines(self, tmp_path):
        path = tmp_path / "a.jsonl"
        path.write_text(
            json.dumps({"text": "hey there", "start": 1.0, "end": 2.5})
            + "\n\n"
            + json.dumps({"text": "more", "start": 3, "end": 4}) + "\n")
        lines = datapipe.load_annotations(path)
        assert lines == [datapipe.Line("hey there", 1.0, 2.5),
                         datapipe.Line("more", 3.0, 4.0)]

    def test_malformed_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"text": "x"}\n')
        with pytest.raises(ValueError):
            datapipe.load_annotations(path)

    def test_song_validation(self):
        song = datapipe.Song("s", np.zeros(SR), [datapipe.Line("x", 0.5, 0.2)],
                             SR)
        with pytest.raises(ValueError):
            song.validate()
        song = datapipe.Song("s", np.zeros(SR), [datapipe.Line("x", 0.5, 9.0)],
                             SR)
        with pytest.raises(ValueError):
            song.validate()


def make_song(lines, n_samples=4 * WINDOW):
    return datapipe.Song("test", np.zeros(n_samples), lines, SR)


class TestGenerateTrainingSamples:
    def test_instrumental_song_all_empty_targets(self):
        song = make_song([])
        samples = datapipe.generate_training_samples(song, CFG)
        starts = [s.chunk_start_sample for s in samples]
        # Half-window shift: one chunk per shift position.
        assert starts == list(range(0, 4 * WINDOW, WINDOW // 2))
        for s in samples:
            assert len(s.target) == 0
            assert s.loss_slice == (0, GEO.output_frames)

    def test_contained_line_sampled_per_containing_window(self):
        # A short line inside the second window only.
        line = datapipe.Line("ab", (WINDOW + 100) / SR, (WINDOW + 500) / SR)
        song = make_song([line])
        samples = datapipe.generate_training_samples(song, CFG)
        word = [s for s in samples if len(s.target)]
        # Containing windows: those whose [start, start+W] covers the line.
        containing = [st for st in range(0, 4 * WINDOW, WINDOW // 2)
                      if st <= WINDOW + 100 and st + WINDOW >= WINDOW + 500]
        assert len(containing) > 1
        assert [s.chunk_start_sample for s in word] == containing
        for s in word:
            assert list(s.target) == list(normalize_lyrics("ab"))

    def test_slice_covers_line_frames(self):
        start = 10 * GEO.hop
        end = 16 * GEO.hop
        line = datapipe.Line("ab", start / SR, end / SR)
        song = make_song([line])
        samples = datapipe.generate_training_samples(song, CFG)
        first = [s for s in samples
                 if len(s.target) and s.chunk_start_sample == 0][0]
        assert first.loss_slice == (10, 16)

    def test_overlong_line_discarded(self):
        line = datapipe.Line("way too long", 0.0, (WINDOW + 1) / SR)
        song = make_song([line])
        samples = datapipe.generate_training_samples(song, CFG)
        # The line is never a target...
        assert all(len(s.target) == 0 for s in samples)
        # ...and windows overlapping it yield no empty-target sample
        # either (the audio there is sung, just unusable).
        starts = {s.chunk_start_sample for s in samples}
        assert 0 not in starts and WINDOW // 2 not in starts
        assert 2 * WINDOW in starts

    def test_infeasible_line_skipped_with_warning(self):
        # Many characters crammed into a single frame's worth of time.
        line = datapipe.Line("abcdefghij" * 3, 0.0, GEO.hop / SR)
        song = make_song([line])
        with pytest.warns(UserWarning, match="infeasible"):
            samples = datapipe.generate_training_samples(song, CFG)
        assert all(len(s.target) == 0 for s in samples)

    def test_short_song_warns(self):
        song = datapipe.Song("tiny", np.zeros(CFG.input_samples // 2), [], SR)
        with pytest.warns(UserWarning, match="shorter"):
            datapipe.generate_training_samples(song, CFG)

    @pytest.mark.filterwarnings("ignore:song .* shorter")
    def test_targets_always_feasible(self):
        songs, _ = toyworld.build_corpus()
        from lyralign import ctc
        for song in songs:
            for s in datapipe.generate_training_samples(song, CFG):
                lo, hi = s.loss_slice
                assert 0 <= lo < hi <= GEO.output_frames
                assert ctc.is_feasible(hi - lo, s.target)


class TestExtractChunk:
    def test_zero_padding_before_song_start(self):
        audio = np.ones(WINDOW)
        chunk = datapipe.extract_chunk(audio, 0, CFG)
        assert len(chunk) == CFG.input_samples
        assert np.all(chunk[:GEO.context_left] == 0)
        assert np.all(chunk[GEO.context_left:GEO.context_left + WINDOW] == 1)

    def test_window_alignment(self):
        audio = np.arange(3 * WINDOW, dtype=np.float64)
        chunk = datapipe.extract_chunk(audio, WINDOW, CFG)
        assert chunk[GEO.context_left] == WINDOW


class TestChunkForInference:
    def test_exact_window_single_chunk(self):
        chunks, frames = datapipe.chunk_for_inference(np.zeros(WINDOW), CFG)
        assert len(chunks) == 1
        assert frames == GEO.output_frames

    def test_one_extra_sample_two_chunks(self):
        chunks, _ = datapipe.chunk_for_inference(np.zeros(WINDOW + 1), CFG)
        assert len(chunks) == 2

    def test_three_and_a_half_windows_four_chunks(self):
        chunks, _ = datapipe.chunk_for_inference(
            np.zeros(int(3.5 * WINDOW)), CFG)
        assert len(chunks) == 4

    def test_empty_waveform_rejected(self):
        with pytest.raises(ValueError):
            datapipe.chunk_for_inference(np.zeros(0), CFG)

    def test_frame_count_truncation(self):
        n = WINDOW + GEO.hop * 3 + 1
        _, frames = datapipe.chunk_for_inference(np.zeros(n), CFG)
        assert frames == -(-n // GEO.hop)

    def test_tiling_covers_song_without_overlap(self):
        n = int(2.25 * WINDOW)
        chunks, _ = datapipe.chunk_for_inference(np.ones(n), CFG)
        covered = np.zeros(n)
        for c, chunk in enumerate(chunks):
            lo = c * WINDOW
            hi = min(lo + WINDOW, n)
            covered[lo:hi] += chunk[GEO.context_left:
                                    GEO.context_left + hi - lo]
        np.testing.assert_array_equal(covered, np.ones(n))


class TestSongProbabilities:
    def test_shape_and_rows(self, toy_model):
        song = toy_model["songs"][0]
        P = datapipe.song_probabilities(song.audio, toy_model["params"], CFG)
        assert P.shape == (len(song.audio) // GEO.hop, CFG.num_classes)
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-6)


class TestDatasetStats:
    def test_all_short_lines(self):
        lines = [datapipe.Line("x", 0.0, WINDOW / SR / 4)]
        stats = datapipe.dataset_stats([make_song(lines)], CFG)
        assert stats.line_count == 1
        assert stats.frac_under_half_window == 1.0
        assert stats.frac_under_window == 1.0
        assert "100.0%" in stats.report()

    def test_empty_dataset(self):
        stats = datapipe.dataset_stats([], CFG)
        assert stats.line_count == 0
        assert stats.frac_under_window is None
        assert "N/A" in stats.report()

    def test_known_mixture_fractions(self):
        half = WINDOW / SR / 2
        full = WINDOW / SR
        lines = [datapipe.Line("a", 0.0, half * 0.5),
                 datapipe.Line("b", 0.0, half * 1.5),
                 datapipe.Line("c", 0.0, full * 1.5),
                 datapipe.Line("d", 0.0, half * 0.9)]
        stats = datapipe.dataset_stats(
            [make_song(lines, n_samples=2 * WINDOW * 3)], CFG)
        assert stats.frac_under_half_window == pytest.approx(0.5)
        assert stats.frac_under_window == pytest.approx(0.75)

    def test_csv_output(self, tmp_path):
        lines = [datapipe.Line("x", 0.0, 0.5)]
        stats = datapipe.dataset_stats([make_song(lines)], CFG)
        path = tmp_path / "h.csv"
        stats.write_csv(path)
        header = path.read_text().splitlines()[0]
        assert header == "bin_start_s,bin_end_s,count"
