###########################################################################
# DSP front end for waveform- and spectral-mapping speech enhancement
#
# Framing, STFT/iSTFT with a periodic Hann window at 75% overlap,
# log1p magnitude compression and noisy-phase waveform reconstruction.
# Everything runs in 64-bit floats, WAV I/O is 16-bit PCM.
###########################################################################

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from numpy.fft import rfft, irfft
from scipy.io import wavfile
from scipy.signal import get_window

from aamse.errors import InvalidInput, ReconstructionError, WavFormatError

logger = logging.getLogger(__name__)

# global variables
# -----------------------------------------------------------
SAMPLE_RATE = 16000  # audio sampling rate in Hz
PCM_SCALE = 32768.0  # int16 full scale

# window power sums below that count as zero coverage
min_window_power = 1e-10
# -----------------------------------------------------------


@dataclass(frozen=True)
class Waveform:

    '''
    Mono audio signal, *samples* are nominally in [-1, 1]
    '''

    samples: np.ndarray
    rate: int = SAMPLE_RATE

    def __post_init__(self):

        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1:
            raise InvalidInput(f"Waveform must be mono, got shape {samples.shape}")
        if self.rate <= 0:
            raise InvalidInput(f"Sampling rate must be positive, got {self.rate}")
        if not np.all(np.isfinite(samples)):
            raise InvalidInput("Waveform contains non-finite samples")

        # frozen dataclass, bypass to store the converted array
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.rate


@dataclass(frozen=True)
class StftParams:

    window_len: int = 512
    hop: int = 128
    fft_len: int = 512
    window: str = "hann"

    def __post_init__(self):

        if self.window_len % self.hop != 0:
            raise InvalidInput(
                f"hop {self.hop} must divide window length {self.window_len}"
            )
        if self.fft_len < self.window_len:
            raise InvalidInput("fft_len must not be shorter than the window")

    @property
    def bin_count(self):
        return self.fft_len // 2 + 1

    @property
    def pad(self):
        # center convention
        return self.window_len // 2

    def taper(self):
        # periodic window, satisfies COLA at 75% overlap
        return get_window(self.window, self.window_len, fftbins=True)

    def frame_count(self, n_samples):
        padded_len = n_samples + 2 * self.pad
        return (padded_len - self.window_len) // self.hop + 1

    def frame_times(self, n_samples, rate=SAMPLE_RATE):

        '''
        Frame center instants in seconds, with center padding
        frame f is centered on sample f * hop.
        '''

        return np.arange(self.frame_count(n_samples)) * self.hop / rate


@dataclass(frozen=True)
class Spectrogram:

    '''
    *log_mag* and *phase* have shape frames x bins
    '''

    log_mag: np.ndarray
    phase: np.ndarray
    params: StftParams = field(default_factory=StftParams)
    source_len: int = 0

    @property
    def n_frames(self):
        return self.log_mag.shape[0]


def _check_waveform(w):

    if len(w) < 1:
        raise InvalidInput("Empty waveform")
    if not np.all(np.isfinite(w.samples)):
        raise InvalidInput("Waveform contains non-finite samples")


def frame_signal(samples, params):

    '''
    Reflect-pads *samples* by window_len/2 on both ends
    and cuts them into overlapping frames.

    Returns
    -------

    frames : 2d ndarray, frames x window_len
    '''

    samples = np.asarray(samples, dtype=float)
    padded = np.pad(samples, params.pad, mode="reflect")
    frames = np.lib.stride_tricks.sliding_window_view(padded, params.window_len)
    return frames[:: params.hop]


def complex_stft(samples, params):

    '''
    The complex short-time Fourier transform, frames x bins.
    '''

    frames = frame_signal(samples, params) * params.taper()
    return rfft(frames, n=params.fft_len, axis=1)


def stft(w, p=StftParams()):

    """
    Log1p-compressed magnitude and raw phase of the
    short-time Fourier transform of *w*.

    Parameters
    ----------

    w : Waveform, has to be sampled at 16 kHz

    p : StftParams, framing parameters

    Returns
    -------

    A Spectrogram with frames x (fft_len/2 + 1) matrices
    """

    _check_waveform(w)
    if w.rate != SAMPLE_RATE:
        raise InvalidInput(f"Expected {SAMPLE_RATE} Hz audio, got {w.rate} Hz")

    spec = complex_stft(w.samples, p)

    return Spectrogram(
        log_mag=compress(np.abs(spec)),
        phase=np.angle(spec),
        params=p,
        source_len=len(w),
    )


def overlap_add(frames, params, source_len):

    '''
    Windowed overlap-add of time-domain *frames* with
    window-power normalization, the center padding is
    removed and the result cut to *source_len*.
    '''

    win = params.taper()
    n_frames = frames.shape[0]
    buf_len = (n_frames - 1) * params.hop + params.window_len

    out = np.zeros(buf_len)
    wsum = np.zeros(buf_len)
    for i in range(n_frames):
        start = i * params.hop
        out[start : start + params.window_len] += frames[i] * win
        wsum[start : start + params.window_len] += win ** 2

    # drop the center padding
    out = out[params.pad : params.pad + source_len]
    wsum = wsum[params.pad : params.pad + source_len]

    if np.any(wsum < min_window_power):
        raise ReconstructionError(
            f"Window {params.window!r} with hop {params.hop} leaves samples uncovered"
        )

    out = out / wsum

    # pad if the frames did not cover the requested length
    if len(out) < source_len:
        out = np.r_[out, np.zeros(source_len - len(out))]

    return out


def istft(sp):

    """
    Waveform from a (possibly enhanced) log1p magnitude
    and the stored phase, which usually is borrowed
    from the noisy input.

    Parameters
    ----------

    sp : Spectrogram

    Returns
    -------

    Waveform of length sp.source_len
    """

    params = sp.params
    if sp.log_mag.shape != sp.phase.shape:
        raise InvalidInput(
            f"Magnitude {sp.log_mag.shape} and phase {sp.phase.shape} differ in shape"
        )

    spec = decompress(sp.log_mag) * np.exp(1j * sp.phase)
    frames = irfft(spec, n=params.fft_len, axis=1)[:, : params.window_len]

    samples = overlap_add(frames, params, sp.source_len)

    return Waveform(samples, SAMPLE_RATE)


def compress(mag):

    '''
    log(1 + m) elementwise, *mag* must be non-negative
    '''

    mag = np.asarray(mag, dtype=float)
    if np.any(mag < 0):
        raise InvalidInput("Negative magnitude")
    return np.log1p(mag)


def decompress(c):

    '''
    exp(c) - 1 elementwise, clamped at 0
    '''

    c = np.asarray(c, dtype=float)
    return np.maximum(np.expm1(c), 0.0)


def spectrogram_table(sp, rate=SAMPLE_RATE):

    '''
    Numeric spectrogram export for external plotting,
    rows are frames (indexed by their center time in seconds),
    columns are the bin frequencies in Hz.
    '''

    p = sp.params
    freqs = np.arange(p.bin_count) * rate / p.fft_len
    df = pd.DataFrame(
        sp.log_mag,
        index=pd.Index(np.arange(sp.n_frames) * p.hop / rate, name="time"),
        columns=[f"{f:.2f}" for f in freqs],
    )
    return df


# ============== WAV I/O ================================


def read_wav(path):

    '''
    Reads a RIFF PCM 16-bit mono 16 kHz file into a Waveform.
    '''

    rate, data = wavfile.read(path)

    if rate != SAMPLE_RATE:
        raise WavFormatError(path, "rate", rate, SAMPLE_RATE)
    if data.ndim != 1:
        raise WavFormatError(path, "channels", data.shape[1], 1)
    if data.dtype != np.int16:
        raise WavFormatError(path, "format", str(data.dtype), "int16")

    return Waveform(data.astype(float) / PCM_SCALE, rate)


def write_wav(path, w):

    pcm = np.round(w.samples * PCM_SCALE)
    n_clipped = np.sum((pcm > 32767) | (pcm < -32768))
    if n_clipped:
        logger.warning(f"{path}: clipping {n_clipped} samples")

    pcm = np.clip(pcm, -32768, 32767).astype("<i2")
    wavfile.write(path, w.rate, pcm)
