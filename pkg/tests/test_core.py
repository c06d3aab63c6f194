import numpy as np
import pytest
from scipy.io import wavfile

from aamse import core
from aamse.core import SAMPLE_RATE, StftParams, Waveform
from aamse.errors import InvalidInput, ReconstructionError, WavFormatError

from conftest import tone


class TestWaveform:
    def test_rejects_stereo(self):
        with pytest.raises(InvalidInput, match="mono"):
            Waveform(np.zeros((2, 100)))

    def test_rejects_nan(self):
        x = np.zeros(100)
        x[3] = np.nan
        with pytest.raises(InvalidInput, match="non-finite"):
            Waveform(x)

    def test_duration(self):
        assert Waveform(np.zeros(8000)).duration == pytest.approx(0.5)


class TestStft:
    def test_frame_count_of_one_window(self):
        sp = core.stft(Waveform(np.zeros(512)))
        assert sp.log_mag.shape == (5, 257)
        assert sp.phase.shape == (5, 257)
        assert np.all(sp.log_mag == 0)

    def test_one_second(self):
        sp = core.stft(Waveform(np.random.default_rng(1).normal(0, 0.1, SAMPLE_RATE)))
        assert sp.n_frames == 126
        assert StftParams().frame_count(SAMPLE_RATE) == 126

    @pytest.mark.parametrize("k", [8, 32, 100])
    def test_sinusoid_peaks_in_its_bin(self, k):
        sp = core.stft(tone(k * SAMPLE_RATE / 512))
        interior = sp.log_mag[2:-2]
        assert np.all(np.argmax(interior, axis=1) == k)

    def test_frame_times(self):
        times = StftParams().frame_times(SAMPLE_RATE)
        assert times[0] == 0
        assert times[1] == pytest.approx(0.008)

    @pytest.mark.parametrize("seed", range(5))
    def test_frame_energy(self, seed):
        params = StftParams()
        x = np.random.default_rng(seed).uniform(-1, 1, 3000)
        windowed = core.frame_signal(x, params) * params.taper()
        spec = core.complex_stft(x, params)

        # one-sided spectrum, DC and Nyquist bins count once
        power = np.abs(spec) ** 2
        power[:, 1:-1] *= 2
        spectral = power.sum(axis=1) / params.fft_len
        temporal = np.sum(windowed ** 2, axis=1)
        assert np.allclose(spectral, temporal, rtol=1e-6, atol=0)

    def test_complex_transform_is_linear(self):
        params = StftParams()
        rng = np.random.default_rng(5)
        x, y = rng.normal(size=(2, 2500))
        a, b = 0.7, -2.3
        combined = core.complex_stft(a * x + b * y, params)
        separate = a * core.complex_stft(x, params) + b * core.complex_stft(y, params)
        assert np.allclose(combined, separate, rtol=0, atol=1e-9)

    def test_rejects_other_rates(self):
        with pytest.raises(InvalidInput, match="16000"):
            core.stft(Waveform(np.zeros(1000), 8000))

    def test_rejects_empty(self):
        with pytest.raises(InvalidInput, match="Empty"):
            core.stft(Waveform(np.zeros(0)))

    def test_spectrogram_table(self):
        sp = core.stft(tone(1000))
        table = core.spectrogram_table(sp)
        assert table.shape == (126, 257)
        assert table.index[1] == pytest.approx(0.008)


class TestReconstruction:
    def test_round_trip(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            w = Waveform(rng.uniform(-1, 1) * rng.standard_normal(SAMPLE_RATE))
            back = core.istft(core.stft(w))
            assert len(back) == len(w)
            bound = 1e-6 * max(1.0, np.max(np.abs(w.samples)))
            assert np.max(np.abs(back.samples - w.samples)) < bound

    @pytest.mark.parametrize("n", [300, 513, 1000, 4097])
    def test_round_trip_odd_lengths(self, n):
        w = Waveform(np.random.default_rng(n).uniform(-1, 1, n))
        back = core.istft(core.stft(w))
        assert len(back) == n
        assert np.max(np.abs(back.samples - w.samples)) < 1e-6

    def test_uncovered_samples(self):
        params = StftParams(window_len=512, hop=512)
        w = Waveform(np.random.default_rng(0).normal(0, 0.1, 2000))
        with pytest.raises(ReconstructionError):
            core.istft(core.stft(w, params))

    def test_hop_must_divide_window(self):
        with pytest.raises(InvalidInput, match="divide"):
            StftParams(hop=100)

    def test_shape_mismatch(self):
        sp = core.stft(tone(500))
        bad = core.Spectrogram(sp.log_mag, sp.phase[:-1], sp.params, sp.source_len)
        with pytest.raises(InvalidInput, match="shape"):
            core.istft(bad)

    def test_compression(self):
        mag = np.array([0.0, 1.0, 100.0])
        assert np.allclose(core.decompress(core.compress(mag)), mag)
        assert core.decompress(np.array([-1.0]))[0] == 0
        with pytest.raises(InvalidInput):
            core.compress(np.array([-1.0]))


class TestWav:
    def test_round_trip(self, tmp_path):
        w = tone(440, dur=0.25)
        path = str(tmp_path / "a.wav")
        core.write_wav(path, w)
        back = core.read_wav(path)
        assert back.rate == SAMPLE_RATE
        assert np.max(np.abs(back.samples - w.samples)) <= 1 / core.PCM_SCALE

    def test_clipping_warns(self, tmp_path, caplog):
        path = str(tmp_path / "loud.wav")
        core.write_wav(path, Waveform(np.full(100, 2.0)))
        assert "clipping 100 samples" in caplog.text
        assert np.all(core.read_wav(path).samples > 0.99)

    @pytest.mark.parametrize(
        "rate, data, field",
        [
            (8000, np.zeros(100, dtype=np.int16), "rate"),
            (16000, np.zeros((100, 2), dtype=np.int16), "channels"),
            (16000, np.zeros(100, dtype=np.float32), "format"),
        ],
    )
    def test_unsupported_files(self, tmp_path, rate, data, field):
        path = str(tmp_path / "bad.wav")
        wavfile.write(path, rate, data)
        with pytest.raises(WavFormatError) as info:
            core.read_wav(path)
        assert info.value.field == field
        assert info.value.path == path
