###########################################################################
# Paired audio / articulatory corpora
#
# SNR-exact noise mixing, EMMA-to-audio alignment, sensor subsets,
# per-speaker track normalization, the synthetic paired corpus and
# the train/test manifest following the multi-noise, multi-SNR protocol.
###########################################################################

import hashlib
import io
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from aamse import ssg
from aamse.core import SAMPLE_RATE, StftParams, Waveform, read_wav, write_wav
from aamse.errors import AlignmentError, InvalidInput

logger = logging.getLogger(__name__)

# global variables
# -----------------------------------------------------------
EMMA_RATE = 250
UPSAMPLE = SAMPLE_RATE // EMMA_RATE  # 64 audio samples per EMMA sample

# canonical sensor order, each sensor contributes an (x, y) channel pair
SENSORS = ("UL", "LL", "UJ", "LJ", "T1", "T2", "T3", "T4", "VM")
LESS_INVASIVE = ("UL", "LL", "LJ", "T1")

TRAIN_SNRS = (-10.0, -7.0, -4.0, -1.0, 1.0, 4.0, 7.0, 10.0)
TEST_SNRS = (-8.0, -5.0, -2.0, 0.0, 2.0, 5.0)

MANIFEST_COLUMNS = [
    "split",
    "utterance_id",
    "clean_path",
    "noisy_path",
    "track_path",
    "noise_id",
    "snr_db",
    "seed",
    "speaker_id",
]

# rough midsagittal rest positions in mm (x, y) per sensor
_REST_POSITIONS = np.array(
    [
        [12.0, 10.0],  # UL
        [12.0, -14.0],  # LL
        [4.0, 6.0],  # UJ
        [2.0, -20.0],  # LJ
        [-8.0, -2.0],  # T1
        [-20.0, 2.0],  # T2
        [-32.0, 4.0],  # T3
        [-44.0, -2.0],  # T4
        [-52.0, 12.0],  # VM
    ]
).ravel()
# -----------------------------------------------------------


@dataclass(frozen=True)
class ArticulatoryTrack:

    '''
    Sensor coordinates over time, *channels* has shape
    (2 * number of sensors) x N, rows ordered as
    sensor0_x, sensor0_y, sensor1_x, ...
    '''

    channels: np.ndarray
    rate: float = EMMA_RATE
    sensors: tuple = SENSORS

    def __post_init__(self):

        channels = np.atleast_2d(np.asarray(self.channels, dtype=float))
        sensors = tuple(self.sensors)
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "sensors", sensors)

        unknown = [s for s in sensors if s not in SENSORS]
        if unknown:
            raise InvalidInput(f"Unknown sensor labels {unknown}, valid are {SENSORS}")
        if channels.shape[0] != 2 * len(sensors):
            raise InvalidInput(
                f"{channels.shape[0]} channels do not match {len(sensors)} sensors"
            )
        if not np.all(np.isfinite(channels)):
            raise InvalidInput("Track contains non-finite values")

    @property
    def n_samples(self):
        return self.channels.shape[1]

    @property
    def duration(self):
        return self.n_samples / self.rate

    @property
    def channel_labels(self):
        return [f"{s}_{c}" for s in self.sensors for c in "xy"]


@dataclass(frozen=True)
class CorpusItem:

    '''
    A clean utterance with its articulatory track, the
    noisy version is present once the item was mixed.
    '''

    clean: Waveform
    track: ArticulatoryTrack
    speaker_id: str
    utterance_id: str
    noisy: Waveform = None
    noise_id: str = None
    snr_db: float = None

    def __post_init__(self):

        if self.noisy is not None and len(self.noisy) != len(self.clean):
            raise InvalidInput(
                f"{self.utterance_id}: clean and noisy lengths differ"
            )
        if abs(self.track.duration - self.clean.duration) > 1 / EMMA_RATE:
            raise AlignmentError(
                f"{self.utterance_id}: track lasts {self.track.duration:.4f}s, "
                f"audio {self.clean.duration:.4f}s"
            )


@dataclass(frozen=True)
class MixPlan:

    '''
    Noise contamination protocol. Per speaker, the last
    *n_test_utterances* utterances (by id) are held out, if not
    given *test_fraction* of them. The last *n_test_noises* noises
    (by id) form the unseen test noise pool.
    '''

    train_snrs: tuple = TRAIN_SNRS
    test_snrs: tuple = TEST_SNRS
    noises_per_utterance: int = 5
    seed: int = 0
    n_test_noises: int = 7
    n_test_utterances: int = None
    test_fraction: float = 50 / 354

    def n_test_for(self, n_utterances):

        if self.n_test_utterances is not None:
            return min(self.n_test_utterances, n_utterances)
        return int(round(n_utterances * self.test_fraction))


# ============ Mixing =====================================


def rms(x):
    return np.sqrt(np.mean(np.square(x)))


def crop_noise(noise, n_samples, rng):

    '''
    Random crop of *noise* with *n_samples*, uniform start offset,
    loops without crossfade if the noise is too short.
    '''

    noise = np.asarray(noise)
    if len(noise) >= n_samples:
        start = rng.integers(0, len(noise) - n_samples + 1)
        return noise[start : start + n_samples]

    start = rng.integers(0, len(noise))
    return np.take(noise, start + np.arange(n_samples), mode="wrap")


def mix_at_snr(clean, noise, snr_db, seed):

    """
    Adds a crop of *noise* to *clean* at the requested SNR.

    s = x + alpha * n'
    alpha = rms(x) / rms(n') * 10**(-snr_db / 20)

    Parameters
    ----------

    clean : Waveform, the clean speech x
    noise : Waveform, the noise recording
    snr_db : float, the target SNR in dB
    seed : int, controls the crop position

    Returns
    -------

    the noisy Waveform s, same length as clean
    """

    if len(clean) < 1 or rms(clean.samples) == 0:
        raise InvalidInput("Silent clean signal, SNR is undefined")
    if len(noise) < 1 or rms(noise.samples) == 0:
        raise InvalidInput("Silent noise signal, SNR is undefined")

    rng = np.random.default_rng(seed)
    crop = crop_noise(noise.samples, len(clean), rng)

    crop_rms = rms(crop)
    if crop_rms == 0:
        raise InvalidInput("Noise crop is silent, SNR is undefined")

    alpha = rms(clean.samples) / crop_rms * 10 ** (-snr_db / 20)
    return Waveform(clean.samples + alpha * crop, clean.rate)


# ============ Alignment ====================================


def _check_emma_rate(t):

    if t.rate != EMMA_RATE:
        raise InvalidInput(f"Expected a {EMMA_RATE} Hz track, got {t.rate} Hz")


def align_to_waveform(t):

    '''
    Linearly interpolates every channel onto the 16 kHz audio
    sample instants, T = N * 64 samples. Samples past the last
    EMMA sample hold its value, so both endpoints are kept exactly.

    Returns
    -------

    2d ndarray, channels x T
    '''

    _check_emma_rate(t)
    if t.n_samples < 2:
        raise InvalidInput("Need at least 2 track samples to interpolate")

    n_out = int(round(t.n_samples * UPSAMPLE))
    t_in = np.arange(t.n_samples) / EMMA_RATE
    t_out = np.arange(n_out) / SAMPLE_RATE

    return np.array([np.interp(t_out, t_in, ch) for ch in t.channels])


def align_to_frames(t, p=StftParams(), n_samples=None):

    '''
    Resamples every channel at the STFT frame center instants
    of the paired audio by linear interpolation.

    Parameters
    ----------

    t : ArticulatoryTrack, sampled at 250 Hz
    p : StftParams, the framing of the paired spectrogram
    n_samples : int, length of the paired audio, defaults
                to the track duration in audio samples

    Returns
    -------

    2d ndarray, channels x frames, the frame count equals
    the one of stft() for the paired audio
    '''

    _check_emma_rate(t)
    if t.n_samples < 2:
        raise InvalidInput("Need at least 2 track samples to interpolate")

    if n_samples is None:
        n_samples = t.n_samples * UPSAMPLE
    elif abs(n_samples / SAMPLE_RATE - t.duration) > 1 / EMMA_RATE:
        raise AlignmentError(
            f"Track lasts {t.duration:.4f}s but the audio {n_samples / SAMPLE_RATE:.4f}s"
        )

    t_in = np.arange(t.n_samples) / EMMA_RATE
    t_frames = p.frame_times(n_samples, SAMPLE_RATE)

    return np.array([np.interp(t_frames, t_in, ch) for ch in t.channels])


def fit_length(x, n):

    '''
    Cuts or edge-pads the last axis of *x* to length *n*
    '''

    if x.shape[-1] >= n:
        return x[..., :n]
    pad = [(0, 0)] * (x.ndim - 1) + [(0, n - x.shape[-1])]
    return np.pad(x, pad, mode="edge")


# ============ Sensors ======================================


def parse_sensors(labels):

    '''
    Sensor labels from a comma separated string or
    a sequence, returned in canonical order.
    '''

    if isinstance(labels, str):
        labels = [s.strip() for s in labels.split(",") if s.strip()]

    labels = set(labels)
    if not labels:
        raise InvalidInput("Need at least one sensor")

    unknown = sorted(labels - set(SENSORS))
    if unknown:
        raise InvalidInput(
            f"Unknown sensor labels {unknown}, valid labels are {','.join(SENSORS)}"
        )

    return tuple(s for s in SENSORS if s in labels)


def select_sensors(t, keep):

    '''
    Track restricted to the sensors in *keep*, channels in
    canonical sensor order, rate unchanged.
    '''

    keep = parse_sensors(keep)

    missing = [s for s in keep if s not in t.sensors]
    if missing:
        raise InvalidInput(f"Track has no sensors {missing}")

    rows = []
    for s in keep:
        i = t.sensors.index(s)
        rows += [2 * i, 2 * i + 1]

    return ArticulatoryTrack(t.channels[rows], t.rate, keep)


# ============ Normalization ================================


@dataclass
class TrackStats:

    '''
    Per-speaker channel means and standard deviations
    over the full sensor set, plus pooled statistics
    as fallback for unseen speakers.
    '''

    mean: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)
    pooled_mean: np.ndarray = None
    pooled_std: np.ndarray = None
    sensors: tuple = SENSORS

    def to_dict(self):

        return {
            "sensors": list(self.sensors),
            "mean": {k: v.tolist() for k, v in self.mean.items()},
            "std": {k: v.tolist() for k, v in self.std.items()},
            "pooled_mean": self.pooled_mean.tolist(),
            "pooled_std": self.pooled_std.tolist(),
        }

    @classmethod
    def from_dict(cls, d):

        return cls(
            mean={k: np.array(v) for k, v in d["mean"].items()},
            std={k: np.array(v) for k, v in d["std"].items()},
            pooled_mean=np.array(d["pooled_mean"]),
            pooled_std=np.array(d["pooled_std"]),
            sensors=tuple(d["sensors"]),
        )


def fit_track_stats(tracks):

    '''
    Parameters
    ----------

    tracks : iterable of (speaker_id, ArticulatoryTrack) pairs,
             the training split tracks

    Returns
    -------

    TrackStats
    '''

    by_speaker = {}
    sensors = None
    for speaker_id, t in tracks:
        if sensors is None:
            sensors = t.sensors
        elif t.sensors != sensors:
            raise InvalidInput("All tracks need the same sensor set")
        by_speaker.setdefault(speaker_id, []).append(t.channels)

    if not by_speaker:
        raise InvalidInput("No tracks to compute statistics from")

    stats = TrackStats(sensors=sensors)
    for speaker_id in sorted(by_speaker):
        data = np.concatenate(by_speaker[speaker_id], axis=1)
        stats.mean[speaker_id] = data.mean(axis=1)
        stats.std[speaker_id] = data.std(axis=1)

    pooled = np.concatenate([np.concatenate(v, axis=1) for v in by_speaker.values()], axis=1)
    stats.pooled_mean = pooled.mean(axis=1)
    stats.pooled_std = pooled.std(axis=1)

    return stats


def normalize_track(t, stats, speaker_id=None):

    '''
    Per-channel z-score with the speaker's training statistics,
    channels with zero variance are only mean-subtracted.
    '''

    if speaker_id in stats.mean:
        mean, std = stats.mean[speaker_id], stats.std[speaker_id]
    else:
        if speaker_id is not None:
            logger.debug(f"No track statistics for speaker {speaker_id}, using pooled ones")
        mean, std = stats.pooled_mean, stats.pooled_std

    rows = []
    for s in t.sensors:
        if s not in stats.sensors:
            raise InvalidInput(f"No statistics for sensor {s}")
        i = stats.sensors.index(s)
        rows += [2 * i, 2 * i + 1]

    mean = mean[rows][:, None]
    std = std[rows].copy()
    std[std == 0] = 1.0

    return ArticulatoryTrack((t.channels - mean) / std[:, None], t.rate, t.sensors)


# ============ Synthetic corpus =============================


def synth_corpus(n_utts, dur_s, coupling, seed, n_speakers=1, n_noises=12):

    """
    Synthetic paired corpus of speech-like audio and 18-channel
    articulatory tracks driven by shared latent trajectories.

    Parameters
    ----------

    n_utts : int, total number of utterances, distributed
             round-robin over the speakers

    dur_s : float, utterance duration in seconds

    coupling : float in [0, 1], weight of the latent trajectories in the
               track channels, 0 gives tracks independent of the audio

    seed : int, the corpus is a deterministic function of all arguments

    n_speakers : int, speakers differ in pitch and sensor positions

    n_noises : int, size of the noise pool

    Returns
    -------

    items : list of CorpusItem (clean only)
    noise_pool : dict, noise_id -> Waveform
    """

    if n_utts < 1:
        raise InvalidInput("Need at least one utterance")
    if dur_s <= 0:
        raise InvalidInput("Duration must be positive")
    if not 0 <= coupling <= 1:
        raise InvalidInput(f"Coupling must be in [0, 1], got {coupling}")
    if n_speakers < 1:
        raise InvalidInput("Need at least one speaker")

    n_emma = max(2, int(round(dur_s * EMMA_RATE)))
    n_audio = n_emma * UPSAMPLE
    n_channels = 2 * len(SENSORS)

    mixing = ssg.mixing_matrix(n_channels, np.random.default_rng([seed, 0]))

    speakers = []
    for k in range(n_speakers):
        rng = np.random.default_rng([seed, 1, k])
        speakers.append(
            {
                "id": f"S{k + 1}",
                "f0": rng.uniform(100, 220),
                "offset": _REST_POSITIONS + rng.normal(0, 2.0, n_channels),
                "scale": rng.uniform(2.0, 6.0, n_channels),
            }
        )

    counters = {}
    items = []
    for i in range(n_utts):
        spk = speakers[i % n_speakers]
        counters[spk["id"]] = counters.get(spk["id"], 0) + 1
        utt_id = f"{spk['id']}_U{counters[spk['id']]:04d}"

        rng = np.random.default_rng([seed, 2, i])
        latents = ssg.latent_trajectories(n_emma, rng)
        audio = ssg.harmonic_speech(latents, n_audio, spk["f0"], rng)
        channels = ssg.articulatory_channels(latents, coupling, mixing, rng)
        channels = spk["offset"][:, None] + spk["scale"][:, None] * channels

        items.append(
            CorpusItem(
                clean=Waveform(audio, SAMPLE_RATE),
                track=ArticulatoryTrack(channels, EMMA_RATE, SENSORS),
                speaker_id=spk["id"],
                utterance_id=utt_id,
            )
        )

    # some noises are shorter than the utterances to exercise looping
    length_factors = (0.6, 1.5, 3.0)
    noise_pool = {}
    for j in range(n_noises):
        kind = ssg.NOISE_KINDS[j % len(ssg.NOISE_KINDS)]
        rng = np.random.default_rng([seed, 3, j])
        n = int(n_audio * length_factors[j % len(length_factors)])
        noise_pool[f"N{j:02d}_{kind}"] = Waveform(
            0.05 * ssg.make_noise(kind, n, rng), SAMPLE_RATE
        )

    logger.info(
        f"Synthesized {n_utts} utterances of {dur_s}s from {n_speakers} speaker(s), "
        f"{n_noises} noises, coupling={coupling}"
    )

    return items, noise_pool


# ============ Manifest =====================================


def row_seed(plan_seed, utterance_id, noise_id, snr_db):

    '''
    Seed of a manifest row, independent of row order
    and of the Python hash randomization.
    '''

    key = f"{plan_seed}|{utterance_id}|{noise_id}|{float(snr_db):g}"
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:4], "little")


def snr_tag(snr_db):
    return f"{float(snr_db):+g}dB"


def split_items(items, plan):

    '''
    Per speaker, sorted by utterance id, the last utterances
    form the test split.

    Returns
    -------

    dict, utterance_id -> 'train' or 'test'
    '''

    by_speaker = {}
    for item in items:
        by_speaker.setdefault(item.speaker_id, []).append(item.utterance_id)

    splits = {}
    for speaker_id, utt_ids in by_speaker.items():
        utt_ids = sorted(utt_ids)
        n_test = plan.n_test_for(len(utt_ids))
        for k, utt_id in enumerate(utt_ids):
            splits[utt_id] = "test" if k >= len(utt_ids) - n_test else "train"

    return splits


def split_noises(noise_ids, plan):

    noise_ids = sorted(noise_ids)
    n_test = plan.n_test_noises
    if n_test > len(noise_ids):
        raise InvalidInput(
            f"Noise pool of {len(noise_ids)} is too small for {n_test} test noises"
        )
    cut = len(noise_ids) - n_test
    return noise_ids[:cut], noise_ids[cut:]


def build_manifest(items, noise_pool, plan=MixPlan()):

    """
    Every training utterance gets *plan.noises_per_utterance*
    randomly selected training noises, each mixed at every training
    SNR (Cartesian product). Test utterances get every
    (test noise x test SNR) pair.

    Parameters
    ----------

    items : sequence of CorpusItem
    noise_pool : mapping or sequence of noise ids
    plan : MixPlan

    Returns
    -------

    manifest : DataFrame with MANIFEST_COLUMNS, the pairing
               interpretation is stored in manifest.attrs
    """

    if not items:
        raise InvalidInput("No utterances to build a manifest from")

    train_noises, test_noises = split_noises(list(noise_pool), plan)
    if len(train_noises) < plan.noises_per_utterance:
        raise InvalidInput(
            f"Need {plan.noises_per_utterance} training noises, "
            f"the pool holds {len(train_noises)}"
        )

    splits = split_items(items, plan)
    rows = []

    for item in sorted(items, key=lambda it: it.utterance_id):
        utt_id = item.utterance_id
        split = splits[utt_id]

        if split == "train":
            rng = np.random.default_rng(row_seed(plan.seed, utt_id, "", 0))
            picked = rng.choice(len(train_noises), plan.noises_per_utterance, replace=False)
            noise_ids = [train_noises[k] for k in picked]
            snrs = plan.train_snrs
        else:
            if not test_noises:
                raise InvalidInput("Test utterances need at least one test noise")
            noise_ids = test_noises
            snrs = plan.test_snrs

        for noise_id in noise_ids:
            for snr in snrs:
                rows.append(
                    (
                        split,
                        utt_id,
                        f"clean/{utt_id}.wav",
                        f"noisy/{utt_id}__{noise_id}__{snr_tag(snr)}.wav",
                        f"tracks/{utt_id}.emma",
                        noise_id,
                        float(snr),
                        row_seed(plan.seed, utt_id, noise_id, snr),
                        item.speaker_id,
                    )
                )

    manifest = pd.DataFrame(rows, columns=MANIFEST_COLUMNS)
    manifest.attrs["noise_snr_pairing"] = "cartesian"
    manifest.attrs["plan_seed"] = plan.seed

    return manifest


def write_manifest(manifest, path):

    with open(path, "w", encoding="utf-8", newline="\n") as f:
        meta = " ".join(f"{k}={v}" for k, v in sorted(manifest.attrs.items()))
        f.write(f"# aamse manifest v1 {meta}\n")
        manifest.to_csv(f, sep="\t", index=False, float_format="%.17g", lineterminator="\n")


def read_tsv(path, **kwargs):

    '''
    Tab separated table, only lines starting with '#' are
    comments, a '#' inside a field is kept.
    '''

    with open(path, encoding="utf-8") as f:
        lines = [line for line in f if not line.startswith("#")]
    return pd.read_csv(io.StringIO("".join(lines)), sep="\t", **kwargs)


def read_manifest(path):

    manifest = read_tsv(
        path,
        float_precision="round_trip",
        dtype={"utterance_id": str, "noise_id": str, "speaker_id": str, "split": str},
    )

    missing = set(MANIFEST_COLUMNS[:8]) - set(manifest.columns)
    if missing:
        raise InvalidInput(f"{path}: manifest lacks columns {sorted(missing)}")
    if "speaker_id" not in manifest.columns:
        manifest["speaker_id"] = manifest["utterance_id"].str.split("_").str[0]

    return manifest


# ============ Track files ==================================


def write_track(path, t):

    '''
    Text header line followed by little-endian float32
    frames, all channels of one time step after another.
    '''

    header = f"EMMA v1 rate={t.rate:g} sensors={','.join(t.sensors)}\n"
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(t.channels.T.astype("<f4").tobytes())


def read_track(path):

    with open(path, "rb") as f:
        header = f.readline().decode("ascii").split()
        payload = f.read()

    if header[:2] != ["EMMA", "v1"]:
        raise InvalidInput(f"{path}: not an EMMA v1 track file")

    fields = dict(tok.split("=", 1) for tok in header[2:])
    try:
        rate = float(fields["rate"])
        sensors = tuple(fields["sensors"].split(","))
    except KeyError as e:
        raise InvalidInput(f"{path}: header lacks {e}") from None

    n_channels = 2 * len(sensors)
    data = np.frombuffer(payload, dtype="<f4")
    if data.size % n_channels:
        raise InvalidInput(f"{path}: payload is not a whole number of frames")

    channels = data.reshape(-1, n_channels).T.astype(float)
    return ArticulatoryTrack(channels, rate, sensors)


# ============ Corpus on disk ===============================


def _render_row(task):

    clean, noise, snr_db, seed, path = task
    noisy = mix_at_snr(clean, noise, snr_db, seed)
    write_wav(path, noisy)
    return path


def write_corpus(items, noise_pool, manifest, root, workers=1):

    '''
    Writes clean WAVs, tracks, noise WAVs and one noisy WAV
    per manifest row below *root*. Every row is rendered from
    its own seed, so the output does not depend on *workers*.
    '''

    for sub in ("clean", "noisy", "tracks", "noise"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)

    by_id = {item.utterance_id: item for item in items}

    for item in items:
        write_wav(os.path.join(root, "clean", f"{item.utterance_id}.wav"), item.clean)
        write_track(os.path.join(root, "tracks", f"{item.utterance_id}.emma"), item.track)

    for noise_id, noise in noise_pool.items():
        write_wav(os.path.join(root, "noise", f"{noise_id}.wav"), noise)

    tasks = (
        (
            by_id[row.utterance_id].clean,
            noise_pool[row.noise_id],
            row.snr_db,
            int(row.seed),
            os.path.join(root, row.noisy_path),
        )
        for row in manifest.itertuples()
    )

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for path in pool.map(_render_row, tasks, chunksize=16):
                logger.debug(f"wrote {path}")
    else:
        for task in tasks:
            logger.debug(f"wrote {_render_row(task)}")

    write_manifest(manifest, os.path.join(root, "manifest.tsv"))


def render_items(items, noise_pool, manifest, split=None):

    '''
    Mixed CorpusItems for the manifest rows (of *split*)
    without touching the disk, same mixtures as write_corpus.
    '''

    by_id = {item.utterance_id: item for item in items}
    if split is not None:
        manifest = manifest[manifest["split"] == split]

    mixed = []
    for row in manifest.itertuples():
        item = by_id[row.utterance_id]
        noisy = mix_at_snr(item.clean, noise_pool[row.noise_id], row.snr_db, int(row.seed))
        mixed.append(
            CorpusItem(
                clean=item.clean,
                track=item.track,
                speaker_id=item.speaker_id,
                utterance_id=item.utterance_id,
                noisy=noisy,
                noise_id=row.noise_id,
                snr_db=float(row.snr_db),
            )
        )
    return mixed


def load_row(row, root):

    '''
    The CorpusItem of a manifest *row*, paths are relative to *root*.
    '''

    clean = read_wav(os.path.join(root, row.clean_path))
    noisy = read_wav(os.path.join(root, row.noisy_path))
    track = read_track(os.path.join(root, row.track_path))

    return CorpusItem(
        clean=clean,
        track=track,
        speaker_id=row.speaker_id,
        utterance_id=row.utterance_id,
        noisy=noisy,
        noise_id=row.noise_id,
        snr_db=float(row.snr_db),
    )
