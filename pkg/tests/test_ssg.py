import numpy as np
import pytest

from aamse import ssg


def test_latents_are_standardized():
    z = ssg.latent_trajectories(2000, np.random.default_rng(0))
    assert z.shape == (ssg.N_LATENT, 2000)
    assert np.allclose(z.mean(axis=1), 0, atol=1e-12)
    assert np.allclose(z.std(axis=1), 1)


def test_speech_level():
    rng = np.random.default_rng(1)
    z = ssg.latent_trajectories(250, rng)
    x = ssg.harmonic_speech(z, 16000, 150.0, rng)
    assert len(x) == 16000
    assert np.sqrt(np.mean(x ** 2)) == pytest.approx(ssg.SPEECH_RMS)


def test_coupled_channels_follow_their_latent():
    rng = np.random.default_rng(2)
    z = ssg.latent_trajectories(3000, rng)
    mixing = ssg.mixing_matrix(18, rng)
    channels = ssg.articulatory_channels(z, 1.0, mixing, rng)

    corrs = [abs(np.corrcoef(ch, z[c % ssg.N_LATENT])[0, 1]) for c, ch in enumerate(channels)]
    assert max(corrs) > 0.8


def test_uncoupled_channels_ignore_the_latents():
    rng = np.random.default_rng(3)
    z = ssg.latent_trajectories(7500, rng)
    mixing = ssg.mixing_matrix(18, rng)
    channels = ssg.articulatory_channels(z, 0.0, mixing, rng)

    corrs = np.corrcoef(np.vstack([channels, z]))[:18, 18:]
    assert np.max(np.abs(corrs)) < 0.1


@pytest.mark.parametrize("kind", [k for k in ssg.NOISE_KINDS if k != "babble"])
def test_noise_is_unit_rms(kind):
    sig = ssg.make_noise(kind, 8000, np.random.default_rng(4))
    assert abs(sig.mean()) < 1e-12
    assert np.sqrt(np.mean(sig ** 2)) == pytest.approx(1.0)


def test_babble():
    sig = ssg.make_noise("babble", 4000, np.random.default_rng(5))
    assert len(sig) == 4000
    assert np.sqrt(np.mean(sig ** 2)) == pytest.approx(1.0)


def test_unknown_noise():
    with pytest.raises(ValueError, match="Unknown noise kind"):
        ssg.make_noise("rain", 100, np.random.default_rng(0))


def test_ar1_autocorrelation():
    x = ssg.ar1_sim(0.9, 50000, np.random.default_rng(6))
    lag1 = np.corrcoef(x[:-1], x[1:])[0, 1]
    assert lag1 == pytest.approx(0.9, abs=0.02)


def test_assemble_signal():
    out = ssg.assemble_signal([np.ones(4), np.arange(4)], [2, 1])
    assert np.all(out == [2, 3, 4, 5])
    with pytest.raises(ValueError):
        ssg.assemble_signal([np.ones(4)], [1, 2])
