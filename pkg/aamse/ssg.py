import numpy as np
from numpy import pi
from scipy.ndimage import gaussian_filter1d, uniform_filter1d
from scipy.signal import lfilter
from scipy.special import expit

''' Simple functions to create synthetic paired speech and articulatory signals '''

EMMA_RATE = 250
AUDIO_RATE = 16000

# latent articulator trajectories driving both modalities:
# 0 - pitch, 1 - tongue height (F1), 2 - tongue advancement (F2), 3 - mouth opening
N_LATENT = 4

# rms of the synthetic clean speech, keeps -10 dB mixtures clear of clipping
SPEECH_RMS = 0.03


def latent_trajectories(n_samples, rng, sigma=12):

    '''
    Smooth articulator trajectories at the EMMA rate,
    zero mean and unit variance per latent.

    n_samples: int, number of EMMA samples
    rng: numpy Generator
    sigma: float, Gaussian smoothing width in EMMA samples,
           12 samples ~ 50 ms gives syllable-rate movements
    '''

    raw = rng.standard_normal((N_LATENT, n_samples))
    z = gaussian_filter1d(raw, sigma, axis=1, mode="reflect")
    return standardize(z)


def standardize(x, axis=-1):

    x = x - x.mean(axis=axis, keepdims=True)
    std = x.std(axis=axis, keepdims=True)
    std[std == 0] = 1
    return x / std


def upsample(z, n_out, rate_in=EMMA_RATE, rate_out=AUDIO_RATE):

    '''
    Linear interpolation of the rows of *z* onto the audio time axis
    '''

    t_in = np.arange(z.shape[-1]) / rate_in
    t_out = np.arange(n_out) / rate_out
    return np.array([np.interp(t_out, t_in, row) for row in np.atleast_2d(z)])


def mouth_opening(z_open):

    '''
    Amplitude envelope from the opening latent,
    closes (nearly silent) for negative excursions.
    '''

    return expit(4 * z_open)


def harmonic_speech(latents, n_samples, f0_base, rng, rms=SPEECH_RMS):

    '''
    Speech-like signal: amplitude-modulated harmonics of a
    gliding fundamental, weighted by two formant-like resonances
    that follow the latent trajectories.

    latents: 2d ndarray, N_LATENT x EMMA samples
    n_samples: int, number of audio samples
    f0_base: float, the speaker's mean pitch in Hz
    rng: numpy Generator, for the aspiration noise
    '''

    z = upsample(latents, n_samples)

    f0 = f0_base * (1 + 0.1 * z[0])
    f1 = np.clip(500 + 150 * z[1], 250, 900)
    f2 = np.clip(1500 + 400 * z[2], 800, 2500)
    env = mouth_opening(z[3])

    phase = 2 * pi * np.cumsum(f0) / AUDIO_RATE

    n_harmonics = int(7000 // f0.min())
    signal = np.zeros(n_samples)
    for h in range(1, n_harmonics + 1):
        freq = h * f0
        weight = (
            np.exp(-0.5 * ((freq - f1) / 120) ** 2)
            + 0.6 * np.exp(-0.5 * ((freq - f2) / 200) ** 2)
            + 0.3 * np.exp(-0.5 * ((freq - 2800) / 300) ** 2)
            + 0.02
        )
        weight[freq > 7000] = 0
        signal += weight * np.sin(h * phase)

    # aspiration noise
    signal += 0.05 * rng.standard_normal(n_samples)

    signal = env * signal
    return rms * signal / np.sqrt(np.mean(signal ** 2))


def articulatory_channels(latents, coupling, mixing, rng):

    '''
    Channels that share the latent trajectories scaled by
    *coupling* plus independent noise scaled by (1 - coupling).

    The independent part is only lightly smoothed (3 samples)
    so that it is decorrelated from any slow audio feature.

    Returns
    -------

    2d ndarray, channels x EMMA samples, unit variance per channel
    '''

    n_channels = mixing.shape[0]
    n_samples = latents.shape[1]

    shared = standardize(mixing @ latents)
    own = uniform_filter1d(
        rng.standard_normal((n_channels, n_samples)), size=3, axis=1
    )
    own = standardize(own)

    return coupling * shared + (1 - coupling) * own


def mixing_matrix(n_channels, rng):

    '''
    Every channel is dominated by one latent (cycling through them)
    with small contributions from the others.
    '''

    mixing = 0.3 * rng.standard_normal((n_channels, N_LATENT))
    for c in range(n_channels):
        mixing[c, c % N_LATENT] = 1.0
    return mixing


# --- noise types ---------------------------------------------


def ar1_sim(alpha, N, rng, sigma=1):

    '''
    AR(1) realization x[i] = alpha * x[i-1] + sigma * xi[i]
    '''

    noise = sigma * rng.standard_normal(int(N))
    return lfilter([1.0], [1.0, -alpha], noise)


def shaped_noise(n_samples, rng, exponent):

    '''
    Gaussian noise with power spectrum ~ 1/f**exponent
    '''

    spec = np.fft.rfft(rng.standard_normal(n_samples))
    freqs = np.fft.rfftfreq(n_samples)
    freqs[0] = freqs[1]
    spec = spec / freqs ** (exponent / 2)
    return np.fft.irfft(spec, n=n_samples)


def band_noise(n_samples, rng, low=1000, high=3000):

    spec = np.fft.rfft(rng.standard_normal(n_samples))
    freqs = np.fft.rfftfreq(n_samples, d=1 / AUDIO_RATE)
    spec[(freqs < low) | (freqs > high)] = 0
    return np.fft.irfft(spec, n=n_samples)


def hum(n_samples, rng, base=50.0):

    tvec = np.arange(n_samples) / AUDIO_RATE
    phases = rng.uniform(0, 2 * pi, size=4)
    sig = sum(
        np.sin(2 * pi * base * (k + 1) * tvec + phases[k]) / (k + 1) for k in range(4)
    )
    return sig + 0.1 * rng.standard_normal(n_samples)


def babble(n_samples, rng, n_talkers=4):

    n_emma = int(np.ceil(n_samples * EMMA_RATE / AUDIO_RATE)) + 1
    talkers = [
        harmonic_speech(
            latent_trajectories(n_emma, rng), n_samples, rng.uniform(90, 240), rng
        )
        for _ in range(n_talkers)
    ]
    return assemble_signal(talkers, np.ones(n_talkers))


NOISE_KINDS = ("white", "pink", "brown", "ar1", "babble", "hum", "band")


def make_noise(kind, n_samples, rng):

    '''
    One noise realization of the given *kind*, unit rms.
    '''

    if kind == "white":
        sig = rng.standard_normal(n_samples)
    elif kind == "pink":
        sig = shaped_noise(n_samples, rng, 1)
    elif kind == "brown":
        sig = shaped_noise(n_samples, rng, 2)
    elif kind == "ar1":
        sig = ar1_sim(0.9, n_samples, rng)
    elif kind == "babble":
        sig = babble(n_samples, rng)
    elif kind == "hum":
        sig = hum(n_samples, rng)
    elif kind == "band":
        sig = band_noise(n_samples, rng)
    else:
        raise ValueError(f"Unknown noise kind {kind!r}, choose from {NOISE_KINDS}")

    sig = sig - sig.mean()
    return sig / np.sqrt(np.mean(sig ** 2))


def assemble_signal(list_of_components, weights):

    '''
    Linearly combines all signal components
    with the given weights.

    list_of_components: list of sequences of same length
    weights: sequence, the weights of each component
    '''

    if not len(weights) == len(list_of_components):
        raise ValueError('Need as much weights as signal components!')

    cpts = np.array(list_of_components).T  # time x component
    cpts = np.asarray(weights) * cpts

    return np.sum(cpts, axis=1)
