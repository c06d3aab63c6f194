###########################################################################
# Objective evaluation measures
#
# Short-time objective intelligibility on the 16 kHz signals,
# scale-invariant SDR, SNR, Levenshtein distance and character
# correct rate, and an adapter for an external PESQ executable.
###########################################################################

import logging
import os
import shutil
import subprocess
import tempfile
from dataclasses import dataclass

import numpy as np
from numpy.fft import rfft
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from aamse.core import SAMPLE_RATE, write_wav
from aamse.errors import AAMSEError, InvalidInput

logger = logging.getLogger(__name__)

# global variables
# -----------------------------------------------------------
EPS = np.finfo(float).eps

# short-time objective intelligibility constants at 16 kHz:
# 16 ms frames, 8 ms hop, 48 frames = 384 ms analysis segments
STOI_DEFAULTS = {
    "frame_len": 256,
    "hop": 128,
    "fft_len": 512,
    "n_bands": 15,
    "min_freq": 150.0,
    "n_seg": 48,
    "beta": -15.0,
    "dyn_range": 40.0,
}

MIN_STOI_DURATION = 0.5  # seconds
# score for signals too silent to fill one analysis segment
DEGENERATE_STOI = 1e-5

SI_SDR_CAP = 60.0  # dB, bound for (near) perfect estimates

CCR_FORMULA = "max(0, 1 - levenshtein(ref, hyp) / len(ref))"
# -----------------------------------------------------------


def _check_pair(ref, est):

    if ref.rate != est.rate:
        raise InvalidInput(f"Sampling rates differ: {ref.rate} vs {est.rate}")
    if len(ref) != len(est):
        raise InvalidInput(f"Signal lengths differ: {len(ref)} vs {len(est)}")
    if len(ref) < 1:
        raise InvalidInput("Empty signals")


# ============ STOI =========================================


def third_octave_bands(rate, fft_len, n_bands, min_freq):

    """
    One-third octave band matrix, bands x (fft_len/2 + 1),
    band edges snapped to the nearest FFT bin.

    Returns
    -------

    obm : 2d ndarray of 0/1 weights
    center_freqs : 1d ndarray in Hz
    """

    freqs = np.linspace(0, rate, fft_len + 1)[: fft_len // 2 + 1]
    k = np.arange(n_bands)
    center_freqs = min_freq * 2 ** (k / 3)
    low = min_freq * 2 ** ((2 * k - 1) / 6)
    high = min_freq * 2 ** ((2 * k + 1) / 6)

    obm = np.zeros((n_bands, len(freqs)))
    for i in range(n_bands):
        lo = np.argmin((freqs - low[i]) ** 2)
        hi = np.argmin((freqs - high[i]) ** 2)
        obm[i, lo:hi] = 1

    return obm, center_freqs


def _frames(x, frame_len, hop):

    # hann without its zero end points
    win = get_window("hann", frame_len + 2, fftbins=False)[1:-1]
    return sliding_window_view(x, frame_len)[::hop] * win


def remove_silent_frames(x, y, dyn_range, frame_len, hop):

    '''
    Drops the frames whose clean energy lies more than *dyn_range* dB
    below the loudest clean frame, from both signals, and
    re-synthesizes them by overlap-add.
    '''

    x_frames = _frames(x, frame_len, hop)
    y_frames = _frames(y, frame_len, hop)

    energies = 20 * np.log10(np.linalg.norm(x_frames, axis=1) + EPS)
    keep = energies > np.max(energies) - dyn_range

    x_frames, y_frames = x_frames[keep], y_frames[keep]
    n_out = (len(x_frames) - 1) * hop + frame_len

    x_sil = np.zeros(n_out)
    y_sil = np.zeros(n_out)
    for i in range(len(x_frames)):
        x_sil[i * hop : i * hop + frame_len] += x_frames[i]
        y_sil[i * hop : i * hop + frame_len] += y_frames[i]

    return x_sil, y_sil


def _band_envelopes(x, obm, frame_len, hop, fft_len):

    spec = rfft(_frames(x, frame_len, hop), n=fft_len, axis=1)
    return np.sqrt(obm @ np.abs(spec.T) ** 2)  # bands x frames


def stoi(clean, processed, **overrides):

    """
    Short-time objective intelligibility of *processed*
    with respect to *clean*, both 16 kHz Waveforms of
    equal length. No resampling takes place.

    Parameters
    ----------

    clean : Waveform
    processed : Waveform
    overrides : replace entries of STOI_DEFAULTS, every
                deviation gets logged as a warning

    Returns
    -------

    score : float, in [-1, 1], 1 for processed = clean,
            DEGENERATE_STOI if fewer non-silent frames than
            one analysis segment remain
    """

    params = dict(STOI_DEFAULTS)
    for key, value in overrides.items():
        if key not in params:
            raise InvalidInput(f"Unknown STOI constant {key!r}, valid are {list(params)}")
        if value != params[key]:
            logger.warning(f"STOI constant {key} overridden: {params[key]} -> {value}")
        params[key] = value

    _check_pair(clean, processed)
    if clean.rate != SAMPLE_RATE:
        raise InvalidInput(f"STOI runs on {SAMPLE_RATE} Hz signals, got {clean.rate} Hz")
    if clean.duration < MIN_STOI_DURATION:
        raise InvalidInput(
            f"STOI needs at least {MIN_STOI_DURATION}s of audio, got {clean.duration:.3f}s"
        )

    frame_len, hop, n_seg = params["frame_len"], params["hop"], params["n_seg"]

    x, y = remove_silent_frames(
        clean.samples, processed.samples, params["dyn_range"], frame_len, hop
    )

    obm, _ = third_octave_bands(
        clean.rate, params["fft_len"], params["n_bands"], params["min_freq"]
    )
    X = _band_envelopes(x, obm, frame_len, hop, params["fft_len"])
    Y = _band_envelopes(y, obm, frame_len, hop, params["fft_len"])

    if X.shape[1] < n_seg:
        logger.warning(
            f"Only {X.shape[1]} non-silent frames, STOI needs at least {n_seg}, "
            f"returning {DEGENERATE_STOI}"
        )
        return DEGENERATE_STOI

    # bands x segments x frames per segment
    X_seg = sliding_window_view(X, n_seg, axis=1)
    Y_seg = sliding_window_view(Y, n_seg, axis=1)

    # normalize the processed envelope to the clean energy, then clip
    gain = np.linalg.norm(X_seg, axis=2, keepdims=True) / (
        np.linalg.norm(Y_seg, axis=2, keepdims=True) + EPS
    )
    clip = 10 ** (-params["beta"] / 20)
    Y_prime = np.minimum(Y_seg * gain, X_seg * (1 + clip))

    Xc = X_seg - X_seg.mean(axis=2, keepdims=True)
    Yc = Y_prime - Y_prime.mean(axis=2, keepdims=True)
    Xc = Xc / (np.linalg.norm(Xc, axis=2, keepdims=True) + EPS)
    Yc = Yc / (np.linalg.norm(Yc, axis=2, keepdims=True) + EPS)

    return float(np.mean(np.sum(Xc * Yc, axis=2)))


# ============ SDR / SNR ====================================


def si_sdr(ref, est):

    '''
    Scale-invariant signal-to-distortion ratio in dB, the
    estimate is projected onto the reference without mean
    removal. Bounded to +-SI_SDR_CAP.
    '''

    _check_pair(ref, est)
    r, e = ref.samples, est.samples

    ref_energy = np.dot(r, r)
    if ref_energy == 0:
        raise InvalidInput("Silent reference, SI-SDR is undefined")

    target = np.dot(e, r) / ref_energy * r
    residual = e - target

    t_energy = np.dot(target, target)
    r_energy = np.dot(residual, residual)
    if r_energy <= EPS * t_energy:
        return SI_SDR_CAP
    if t_energy == 0:
        return -SI_SDR_CAP

    return float(np.clip(10 * np.log10(t_energy / r_energy), -SI_SDR_CAP, SI_SDR_CAP))


def snr_db(ref, noise):

    '''
    10 log10(|ref|^2 / |noise|^2), *noise* is the additive
    part of a mixture. Noise-free pairs give +inf.
    '''

    _check_pair(ref, noise)
    ref_energy = np.sum(ref.samples ** 2)
    noise_energy = np.sum(noise.samples ** 2)

    if ref_energy == 0:
        raise InvalidInput("Silent reference, SNR is undefined")
    if noise_energy == 0:
        return np.inf

    return float(10 * np.log10(ref_energy / noise_energy))


# ============ Transcripts ==================================


def levenshtein(a, b):

    '''
    Minimal number of insertions, deletions and substitutions
    turning sequence *a* into *b*.
    '''

    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)

    previous = list(range(len(b) + 1))
    for i, sa in enumerate(a, start=1):
        current = [i]
        for j, sb in enumerate(b, start=1):
            current.append(
                min(
                    previous[j] + 1,  # deletion
                    current[j - 1] + 1,  # insertion
                    previous[j - 1] + (sa != sb),  # substitution
                )
            )
        previous = current

    return previous[-1]


def ccr(ref, hyp):

    '''
    Character correct rate of the hypothesis transcript,
    see CCR_FORMULA.
    '''

    if len(ref) == 0:
        raise InvalidInput("Empty reference transcript")
    return max(0.0, 1.0 - levenshtein(ref, hyp) / len(ref))


# ============ External PESQ ================================


class PesqError(AAMSEError):
    pass


@dataclass(frozen=True)
class PesqAdapter:

    """
    Runs ``<exe> <ref.wav> <deg.wav>`` and reads one decimal
    score from its standard output.
    """

    exe: str
    timeout: float = 60.0

    @classmethod
    def find(cls, exe="pesq"):

        '''
        The adapter if *exe* resolves to an executable, else None
        '''

        if exe is None:
            return None
        path = shutil.which(exe)
        if path is None:
            logger.info(f"No PESQ executable {exe!r} found, PESQ scores are omitted")
            return None
        return cls(path)

    def score(self, ref, deg):

        with tempfile.TemporaryDirectory(prefix="aamse-pesq-") as tmp:
            ref_path = os.path.join(tmp, "ref.wav")
            deg_path = os.path.join(tmp, "deg.wav")
            write_wav(ref_path, ref)
            write_wav(deg_path, deg)

            try:
                result = subprocess.run(
                    [self.exe, ref_path, deg_path],
                    capture_output=True,
                    text=True,
                    timeout=self.timeout,
                    check=True,
                )
            except (OSError, subprocess.SubprocessError) as e:
                raise PesqError(f"PESQ executable {self.exe} failed: {e}") from None

        return parse_pesq_output(result.stdout)


def parse_pesq_output(text):

    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if len(lines) != 1:
        raise PesqError(f"Expected one score line from the PESQ tool, got {len(lines)}")
    try:
        return float(lines[0])
    except ValueError:
        raise PesqError(f"Unparsable PESQ output {lines[0]!r}") from None
