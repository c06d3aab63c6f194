import os
from types import SimpleNamespace

import numpy as np
import pytest

from aamse import corpus, metrics
from aamse.core import SAMPLE_RATE, StftParams, Waveform, read_wav
from aamse.corpus import ArticulatoryTrack, MixPlan
from aamse.errors import AlignmentError, InvalidInput

from conftest import SMALL_PLAN


def random_track(n, seed=0, sensors=corpus.SENSORS):
    rng = np.random.default_rng(seed)
    return ArticulatoryTrack(rng.normal(0, 1, (2 * len(sensors), n)), 250, sensors)


def measured_snr(clean, noisy):
    return metrics.snr_db(clean, Waveform(noisy.samples - clean.samples))


# ---------------------------------------------------------------------------
# Mixing
# ---------------------------------------------------------------------------


class TestMixing:
    def test_hits_the_requested_snr(self):
        rng = np.random.default_rng(0)
        snrs = corpus.TRAIN_SNRS + corpus.TEST_SNRS
        clean = Waveform(rng.normal(0, 0.03, 2000))
        noise = Waveform(rng.normal(0, 0.2, 5000))
        for k in range(1000):
            snr = snrs[k % len(snrs)]
            noisy = corpus.mix_at_snr(clean, noise, snr, seed=k)
            assert abs(measured_snr(clean, noisy) - snr) < 0.01

    def test_noise_scale(self):
        clean = Waveform(np.full(1000, 0.1))
        noise = Waveform(0.1 * np.sign(np.random.default_rng(1).normal(size=1000)))
        noisy = corpus.mix_at_snr(clean, noise, 20.0, seed=0)
        assert np.allclose(noisy.samples - clean.samples, 0.1 * noise.samples)

    def test_short_noise_loops(self):
        rng = np.random.default_rng(2)
        clean = Waveform(rng.normal(0, 0.03, 1000))
        noise = Waveform(rng.normal(0, 0.1, 100))
        added = corpus.mix_at_snr(clean, noise, 0.0, seed=5).samples - clean.samples
        assert np.allclose(added[:-100], added[100:])

    def test_crop_depends_on_seed_only(self):
        rng = np.random.default_rng(3)
        clean = Waveform(rng.normal(0, 0.03, 1000))
        noise = Waveform(rng.normal(0, 0.1, 4000))
        a = corpus.mix_at_snr(clean, noise, 0.0, seed=7)
        b = corpus.mix_at_snr(clean, noise, 0.0, seed=7)
        c = corpus.mix_at_snr(clean, noise, 0.0, seed=8)
        assert np.array_equal(a.samples, b.samples)
        assert not np.array_equal(a.samples, c.samples)

    @pytest.mark.parametrize("silent", ["clean", "noise"])
    def test_silent_inputs(self, silent):
        sig = Waveform(np.random.default_rng(0).normal(size=100))
        zero = Waveform(np.zeros(100))
        clean, noise = (zero, sig) if silent == "clean" else (sig, zero)
        with pytest.raises(InvalidInput, match="Silent"):
            corpus.mix_at_snr(clean, noise, 0.0, seed=0)


# ---------------------------------------------------------------------------
# Alignment
# ---------------------------------------------------------------------------


class TestAlignment:
    def test_ramp_is_interpolated_exactly(self):
        n = 250
        ramp = np.tile(np.arange(n) / 250, (18, 1))
        aligned = corpus.align_to_waveform(ArticulatoryTrack(ramp))

        assert aligned.shape == (18, 16000)
        inside = np.arange((n - 1) * 64 + 1)
        assert np.max(np.abs(aligned[:, inside] - inside / SAMPLE_RATE)) < 1e-12
        # held past the last track sample
        assert np.all(aligned[:, -1] == ramp[0, -1])

    def test_sinusoid_at_frame_centers(self):
        n = 250
        t_emma = np.arange(n) / 250
        channels = np.tile(np.sin(2 * np.pi * 2 * t_emma), (18, 1))
        aligned = corpus.align_to_frames(ArticulatoryTrack(channels))

        assert aligned.shape == (18, StftParams().frame_count(16000))
        times = StftParams().frame_times(16000)
        inside = times <= (n - 1) / 250
        expected = np.sin(2 * np.pi * 2 * times[inside])
        assert np.max(np.abs(aligned[:, inside] - expected)) < 1e-3

    def test_frame_count_matches_stft(self):
        aligned = corpus.align_to_frames(random_track(100), n_samples=6400)
        assert aligned.shape[1] == StftParams().frame_count(6400)

    def test_duration_mismatch(self):
        with pytest.raises(AlignmentError):
            corpus.align_to_frames(random_track(100), n_samples=16000)

    def test_needs_two_samples(self):
        with pytest.raises(InvalidInput):
            corpus.align_to_waveform(random_track(1))

    def test_other_rates(self):
        track = ArticulatoryTrack(np.zeros((18, 100)), rate=200)
        with pytest.raises(InvalidInput, match="250"):
            corpus.align_to_waveform(track)

    def test_fit_length(self):
        x = np.arange(6.0).reshape(2, 3)
        assert corpus.fit_length(x, 2).shape == (2, 2)
        assert np.all(corpus.fit_length(x, 5)[:, -1] == [2, 5])


# ---------------------------------------------------------------------------
# Sensors and normalization
# ---------------------------------------------------------------------------


class TestSensors:
    def test_velum_rows(self):
        track = random_track(50)
        vm = corpus.select_sensors(track, ["VM"])
        assert vm.sensors == ("VM",)
        assert np.array_equal(vm.channels, track.channels[16:18])

    def test_canonical_order(self):
        sub = corpus.select_sensors(random_track(50), "T1,LL,UL")
        assert sub.sensors == ("UL", "LL", "T1")
        assert sub.channel_labels == ["UL_x", "UL_y", "LL_x", "LL_y", "T1_x", "T1_y"]

    def test_nested_selection(self):
        track = random_track(50)
        outer = corpus.select_sensors(track, corpus.LESS_INVASIVE)
        inner = corpus.select_sensors(outer, ["LJ", "UL"])
        assert np.array_equal(inner.channels, corpus.select_sensors(track, ["UL", "LJ"]).channels)

    def test_unknown_label(self):
        with pytest.raises(InvalidInput, match="valid labels are UL,LL"):
            corpus.parse_sensors("UL,XX")

    def test_missing_in_track(self):
        track = random_track(50, sensors=("UL", "LL"))
        with pytest.raises(InvalidInput, match="no sensors"):
            corpus.select_sensors(track, "UL,VM")

    def test_track_validation(self):
        with pytest.raises(InvalidInput):
            ArticulatoryTrack(np.zeros((17, 10)))


class TestNormalization:
    def test_speaker_statistics(self):
        tracks = [("S1", random_track(200, seed=k)) for k in range(3)]
        tracks = [(s, ArticulatoryTrack(5 + 3 * t.channels)) for s, t in tracks]
        stats = corpus.fit_track_stats(tracks)

        joined = np.concatenate(
            [corpus.normalize_track(t, stats, "S1").channels for _, t in tracks], axis=1
        )
        assert np.allclose(joined.mean(axis=1), 0, atol=1e-12)
        assert np.allclose(joined.std(axis=1), 1)

    def test_unseen_speaker_uses_pooled(self):
        tracks = [("S1", random_track(100, 1)), ("S2", ArticulatoryTrack(4 + random_track(100, 2).channels))]
        stats = corpus.fit_track_stats(tracks)
        t = random_track(100, 3)
        out = corpus.normalize_track(t, stats, "S9")
        expected = (t.channels - stats.pooled_mean[:, None]) / stats.pooled_std[:, None]
        assert np.allclose(out.channels, expected)

    def test_constant_channel(self):
        channels = np.ones((18, 20))
        stats = corpus.fit_track_stats([("S1", ArticulatoryTrack(channels))])
        out = corpus.normalize_track(ArticulatoryTrack(channels), stats, "S1")
        assert np.all(out.channels == 0)

    def test_subset_uses_matching_rows(self):
        track = random_track(200, 4)
        stats = corpus.fit_track_stats([("S1", track)])
        full = corpus.normalize_track(track, stats, "S1")
        sub = corpus.normalize_track(corpus.select_sensors(track, "LJ"), stats, "S1")
        assert np.allclose(sub.channels, full.channels[6:8])

    def test_stats_serialize(self):
        stats = corpus.fit_track_stats([("S1", random_track(30))])
        back = corpus.TrackStats.from_dict(stats.to_dict())
        assert np.array_equal(back.mean["S1"], stats.mean["S1"])
        assert back.sensors == stats.sensors


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------


class TestSynthCorpus:
    def test_shapes_and_ids(self, small_corpus):
        items, pool = small_corpus
        assert [it.utterance_id for it in items] == [f"S1_U{k:04d}" for k in range(1, 5)]
        assert list(pool) == ["N00_white", "N01_pink", "N02_brown", "N03_ar1"]
        for item in items:
            assert len(item.clean) == 16000
            assert item.track.channels.shape == (18, 250)

    def test_deterministic(self):
        a, pool_a = corpus.synth_corpus(2, 0.5, 0.5, seed=11, n_noises=2)
        b, pool_b = corpus.synth_corpus(2, 0.5, 0.5, seed=11, n_noises=2)
        c, _ = corpus.synth_corpus(2, 0.5, 0.5, seed=12, n_noises=2)
        for x, y in zip(a, b):
            assert np.array_equal(x.clean.samples, y.clean.samples)
            assert np.array_equal(x.track.channels, y.track.channels)
        assert np.array_equal(pool_a["N00_white"].samples, pool_b["N00_white"].samples)
        assert not np.array_equal(a[0].clean.samples, c[0].clean.samples)

    def test_speakers_round_robin(self):
        items, _ = corpus.synth_corpus(5, 0.2, 1.0, seed=0, n_speakers=2, n_noises=0)
        assert [it.utterance_id for it in items] == [
            "S1_U0001", "S2_U0001", "S1_U0002", "S2_U0002", "S1_U0003",
        ]

    def test_uncoupled_tracks_ignore_the_audio(self):
        items, _ = corpus.synth_corpus(1, 30.0, 0.0, seed=5, n_noises=0)
        item = items[0]
        envelope = np.sqrt(np.mean(item.clean.samples.reshape(-1, corpus.UPSAMPLE) ** 2, axis=1))
        assert len(envelope) == item.track.n_samples
        for ch in item.track.channels:
            assert abs(np.corrcoef(ch, envelope)[0, 1]) < 0.1

    def test_coupling_range(self):
        with pytest.raises(InvalidInput, match="Coupling"):
            corpus.synth_corpus(1, 1.0, 1.5, seed=0)

    def test_misaligned_item(self):
        with pytest.raises(AlignmentError):
            corpus.CorpusItem(Waveform(np.zeros(16000)), random_track(100), "S1", "S1_U0001")


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


def fake_items(n, speaker="S1"):
    return [SimpleNamespace(utterance_id=f"{speaker}_U{k:04d}", speaker_id=speaker) for k in range(1, n + 1)]


class TestManifest:
    def test_default_protocol_counts(self):
        noise_ids = [f"N{j:02d}" for j in range(12)]
        manifest = corpus.build_manifest(fake_items(354), noise_ids)
        counts = manifest["split"].value_counts()
        assert counts["train"] == 12160
        assert counts["test"] == 2100
        assert manifest.attrs["noise_snr_pairing"] == "cartesian"

    def test_single_row(self):
        plan = MixPlan(train_snrs=(0.0,), test_snrs=(), noises_per_utterance=1, n_test_noises=0, n_test_utterances=0)
        manifest = corpus.build_manifest(fake_items(1), ["N00"], plan)
        assert len(manifest) == 1
        row = manifest.iloc[0]
        assert row["noisy_path"] == "noisy/S1_U0001__N00__+0dB.wav"
        assert row["track_path"] == "tracks/S1_U0001.emma"

    def test_splits_are_disjoint(self, small_manifest):
        train = small_manifest[small_manifest["split"] == "train"]
        test = small_manifest[small_manifest["split"] == "test"]
        assert not set(train["utterance_id"]) & set(test["utterance_id"])
        assert not set(train["noise_id"]) & set(test["noise_id"])
        assert set(test["snr_db"]) == set(SMALL_PLAN.test_snrs)
        assert len(train) == 3 * 2 * 2
        assert len(test) == 1 * 2 * 2

    def test_independent_of_item_order(self):
        items = fake_items(20)
        noise_ids = [f"N{j:02d}" for j in range(12)]
        a = corpus.build_manifest(items, noise_ids)
        b = corpus.build_manifest(items[::-1], noise_ids[::-1])
        assert a.equals(b)

    def test_noise_pool_too_small(self):
        with pytest.raises(InvalidInput, match="too small"):
            corpus.build_manifest(fake_items(3), ["N00"], MixPlan(n_test_noises=2))

    def test_file_round_trip(self, small_manifest, tmp_path):
        path = str(tmp_path / "manifest.tsv")
        corpus.write_manifest(small_manifest, path)
        with open(path) as f:
            assert f.readline().startswith("# aamse manifest v1")
        back = corpus.read_manifest(path)
        assert list(back.columns) == corpus.MANIFEST_COLUMNS
        assert back["seed"].tolist() == small_manifest["seed"].tolist()
        assert np.allclose(back["snr_db"], small_manifest["snr_db"])

    def test_file_keeps_precision_and_hashes(self, small_manifest, tmp_path):
        manifest = small_manifest.copy()
        manifest["snr_db"] = np.linspace(-7.123456789012345, 3.0, len(manifest)) / 3
        manifest["noise_id"] = "N#" + manifest["noise_id"]
        path = str(tmp_path / "manifest.tsv")
        corpus.write_manifest(manifest, path)

        back = corpus.read_manifest(path)
        assert back["snr_db"].tolist() == manifest["snr_db"].tolist()
        assert back["noise_id"].tolist() == manifest["noise_id"].tolist()


# ---------------------------------------------------------------------------
# Files on disk
# ---------------------------------------------------------------------------


class TestCorpusOnDisk:
    def test_track_round_trip(self, tmp_path):
        track = corpus.select_sensors(random_track(40), corpus.LESS_INVASIVE)
        path = str(tmp_path / "a.emma")
        corpus.write_track(path, track)
        back = corpus.read_track(path)
        assert back.sensors == corpus.LESS_INVASIVE
        assert back.rate == 250
        assert np.allclose(back.channels, track.channels, rtol=1e-6, atol=1e-6)

    def test_bad_track_header(self, tmp_path):
        path = tmp_path / "bad.emma"
        path.write_bytes(b"HELLO\n\x00\x00")
        with pytest.raises(InvalidInput, match="EMMA"):
            corpus.read_track(str(path))

    def test_layout(self, written_corpus):
        root, manifest = written_corpus
        for sub in ("clean", "noisy", "tracks", "noise"):
            assert os.path.isdir(os.path.join(root, sub))
        for row in manifest.itertuples():
            assert os.path.exists(os.path.join(root, row.noisy_path))

    def test_stored_mixtures_keep_their_snr(self, written_corpus):
        root, manifest = written_corpus
        for row in manifest.itertuples():
            item = corpus.load_row(row, root)
            assert abs(measured_snr(item.clean, item.noisy) - row.snr_db) < 0.01

    def test_render_matches_disk(self, small_corpus, written_corpus):
        items, pool = small_corpus
        root, manifest = written_corpus
        mixed = corpus.render_items(items, pool, manifest, split="test")
        rows = manifest[manifest["split"] == "test"]
        assert len(mixed) == len(rows)
        for item, row in zip(mixed, rows.itertuples()):
            on_disk = read_wav(os.path.join(root, row.noisy_path))
            assert np.max(np.abs(on_disk.samples - item.noisy.samples)) <= 1 / 32768

    def test_workers_do_not_change_output(self, small_corpus, small_manifest, tmp_path):
        items, pool = small_corpus
        corpus.write_corpus(items, pool, small_manifest, str(tmp_path / "a"), workers=1)
        corpus.write_corpus(items, pool, small_manifest, str(tmp_path / "b"), workers=2)
        for row in small_manifest.itertuples():
            a = (tmp_path / "a" / row.noisy_path).read_bytes()
            b = (tmp_path / "b" / row.noisy_path).read_bytes()
            assert a == b
