###########################################################################
# Audio-articulatory enhancement models
#
# The three backbones (waveform FCN, spectral TDNN and BLSTM) combined
# with the fusion strategies audio-only, direct concatenation,
# unilateral and bilateral encoding, plus training and enhancement.
###########################################################################

import configparser
import logging
from dataclasses import asdict, dataclass, replace

import numpy as np
import pandas as pd

from aamse import __version__
from aamse import corpus, nn
from aamse.core import SAMPLE_RATE, Spectrogram, StftParams, Waveform, istft, stft
from aamse.errors import AlignmentError, InvalidInput, NumericalError, ShapeError, SpecError

logger = logging.getLogger(__name__)

# global variables
# -----------------------------------------------------------
BACKBONES = ("fcn", "tdnn", "blstm")
FUSIONS = ("audio_only", "direct", "unilateral", "bilateral")

# layer kinds a stack of each backbone may hold
STACK_KINDS = {
    "fcn": ("conv1d",),
    "tdnn": ("tdnn", "dense"),
    "blstm": ("blstm", "dense"),
}

N_BINS = StftParams().bin_count  # 257
BOTTLENECK_CONTEXT = (-1, 0, 1)

HIDDEN_ACTIVATION = "leaky_relu"
# -----------------------------------------------------------


def _layers(token, times=1):
    return [parse_layer(token)] * times


def _table(backbone, fusion):

    '''
    Layer stacks (audio encoder, EMMA encoder, SE network)
    of the reference architectures.
    '''

    if backbone == "fcn":
        if fusion in ("audio_only", "direct"):
            return [], [], _layers("conv1d:128:55", 7) + _layers("conv1d:1:55")
        se = _layers("conv1d:128:55", 4) + _layers("conv1d:1:55")
        if fusion == "unilateral":
            e_enc = _layers("conv1d:128:256") + _layers("conv1d:128:128") + _layers("conv1d:1:55")
            return [], e_enc, se
        s_enc = _layers("conv1d:128:55", 2) + _layers("conv1d:18:55")
        e_enc = _layers("conv1d:128:128", 2) + _layers("conv1d:18:64")
        return s_enc, e_enc, se

    if backbone == "tdnn":
        bottleneck = _layers("dense:771") + _layers("dense:257")
        if fusion in ("audio_only", "direct"):
            return [], [], _layers("tdnn:257", 3) + bottleneck + _layers("tdnn:257", 4)
        if fusion == "unilateral":
            se = _layers("tdnn:257", 2) + bottleneck + _layers("tdnn:257", 4)
            return [], _layers("tdnn:18", 2), se
        se = _layers("tdnn:257", 2) + bottleneck + _layers("tdnn:257", 3)
        return _layers("tdnn:257"), _layers("tdnn:18", 2), se

    if fusion in ("audio_only", "direct"):
        return [], [], _layers("blstm:500", 3) + _layers("dense:257")
    se = _layers("blstm:514", 2) + _layers("blstm:257") + _layers("dense:257")
    if fusion == "unilateral":
        return [], _layers("blstm:36", 3) + _layers("dense:36", 2), se
    s_enc = _layers("blstm:257") + _layers("linear:257")
    e_enc = _layers("blstm:18", 4) + _layers("dense:18")
    return s_enc, e_enc, se


@dataclass(frozen=True)
class ModelSpec:

    '''
    Backbone, fusion strategy and the three layer stacks,
    *sensors* are the articulatory sensors the model consumes.
    '''

    backbone: str
    fusion: str
    audio_encoder: tuple = ()
    emma_encoder: tuple = ()
    se_network: tuple = ()
    sensors: tuple = corpus.SENSORS
    tdnn_context: tuple = nn.TDNN_CONTEXT
    bottleneck_context: tuple = BOTTLENECK_CONTEXT

    def __post_init__(self):

        if self.backbone not in BACKBONES:
            raise SpecError(f"Unknown backbone {self.backbone!r}, choose from {BACKBONES}")
        if self.fusion not in FUSIONS:
            raise SpecError(f"Unknown fusion {self.fusion!r}, choose from {FUSIONS}")

        for name in ("audio_encoder", "emma_encoder", "se_network"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        for name in ("tdnn_context", "bottleneck_context"):
            object.__setattr__(self, name, tuple(int(c) for c in getattr(self, name)))

        try:
            object.__setattr__(self, "sensors", corpus.parse_sensors(self.sensors))
        except InvalidInput as e:
            raise SpecError(str(e)) from None

    @property
    def name(self):
        return f"{self.backbone}-{self.fusion}"

    @property
    def uses_track(self):
        return self.fusion != "audio_only"

    @property
    def spectral(self):
        return self.backbone != "fcn"

    def to_dict(self):

        return {
            "backbone": self.backbone,
            "fusion": self.fusion,
            "audio_encoder": [s.to_dict() for s in self.audio_encoder],
            "emma_encoder": [s.to_dict() for s in self.emma_encoder],
            "se_network": [s.to_dict() for s in self.se_network],
            "sensors": list(self.sensors),
            "tdnn_context": list(self.tdnn_context),
            "bottleneck_context": list(self.bottleneck_context),
        }

    @classmethod
    def from_dict(cls, d):

        return cls(
            backbone=d["backbone"],
            fusion=d["fusion"],
            audio_encoder=[nn.LayerSpec.from_dict(s) for s in d["audio_encoder"]],
            emma_encoder=[nn.LayerSpec.from_dict(s) for s in d["emma_encoder"]],
            se_network=[nn.LayerSpec.from_dict(s) for s in d["se_network"]],
            sensors=d["sensors"],
            tdnn_context=d["tdnn_context"],
            bottleneck_context=d["bottleneck_context"],
        )


def default_spec(backbone, fusion, sensors=corpus.SENSORS):

    '''
    The reference architecture for *backbone* and *fusion*.
    Audio-only and direct concatenation share the SE network.
    '''

    if backbone not in BACKBONES:
        raise SpecError(f"Unknown backbone {backbone!r}, choose from {BACKBONES}")
    if fusion not in FUSIONS:
        raise SpecError(f"Unknown fusion {fusion!r}, choose from {FUSIONS}")

    s_enc, e_enc, se = _table(backbone, fusion)
    return ModelSpec(backbone, fusion, s_enc, e_enc, se, sensors)


def preset_names():
    return [f"{b}-{f}" for b in BACKBONES for f in FUSIONS]


# ============ Spec files ===================================


def parse_layer(token):

    '''
    conv1d:<f>:<k>, dense:<n>, linear:<n>, tdnn:<n>, blstm:<n>
    with an optional @<activation> suffix
    '''

    token = token.strip()
    body, _, activation = token.partition("@")
    parts = body.split(":")
    kind = parts[0].strip().lower()
    activation = activation.strip() or None

    try:
        if kind == "conv1d" and len(parts) == 3:
            return nn.LayerSpec("conv1d", int(parts[1]), int(parts[2]), activation)
        if kind == "linear" and len(parts) == 2:
            return nn.LayerSpec("dense", int(parts[1]), activation=activation or "linear")
        if kind in ("dense", "tdnn", "blstm") and len(parts) == 2:
            return nn.LayerSpec(kind, int(parts[1]), activation=activation)
    except (ValueError, InvalidInput) as e:
        raise SpecError(f"Bad layer token {token!r}: {e}") from None

    raise SpecError(f"Bad layer token {token!r}")


def parse_stack(text):

    '''
    Comma separated layer tokens, <token>*<n> repeats a layer
    '''

    layers = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        tok, _, times = tok.partition("*")
        try:
            times = int(times) if times else 1
        except ValueError:
            raise SpecError(f"Bad repetition in {tok!r}*{times}") from None
        layers += [parse_layer(tok)] * times
    return layers


def format_stack(layers):

    groups = []
    for spec in layers:
        if groups and groups[-1][0] == spec:
            groups[-1][1] += 1
        else:
            groups.append([spec, 1])

    return ",".join(s.token() + (f"*{n}" if n > 1 else "") for s, n in groups)


SPEC_KEYS = (
    "backbone",
    "fusion",
    "audio_encoder",
    "emma_encoder",
    "se_network",
    "sensors",
    "tdnn_context",
    "bottleneck_context",
)


def _parse_ints(text):
    return tuple(int(c) for c in text.replace(" ", "").split(",") if c)


def parse_spec(text):

    """
    Reads a model spec from key=value lines, e.g.

        backbone=blstm
        fusion=unilateral
        emma_encoder=blstm:36*3,dense:36*2
        sensors=UL,LL,LJ,T1

    Stacks not given are taken from the reference
    architecture of the backbone and fusion.
    """

    parser = configparser.ConfigParser(
        interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",)
    )
    try:
        parser.read_string("[model]\n" + text)
    except configparser.Error as e:
        raise SpecError(f"Unreadable model spec: {e}") from None

    fields = dict(parser["model"])
    unknown = sorted(set(fields) - set(SPEC_KEYS))
    if unknown:
        raise SpecError(f"Unknown model spec keys {unknown}, valid are {list(SPEC_KEYS)}")

    for key in ("backbone", "fusion"):
        if key not in fields:
            raise SpecError(f"Model spec lacks {key!r}")

    backbone = fields["backbone"].strip().lower()
    fusion = fields["fusion"].strip().lower()
    sensors = fields.get("sensors", ",".join(corpus.SENSORS))

    preset = default_spec(backbone, fusion, sensors)
    stacks = {
        name: parse_stack(fields[name]) if name in fields else getattr(preset, name)
        for name in ("audio_encoder", "emma_encoder", "se_network")
    }

    try:
        contexts = {
            name: _parse_ints(fields[name])
            for name in ("tdnn_context", "bottleneck_context")
            if name in fields
        }
    except ValueError as e:
        raise SpecError(f"Bad context offsets: {e}") from None

    return ModelSpec(backbone, fusion, sensors=sensors, **stacks, **contexts)


def format_spec(spec):

    lines = [
        f"backbone={spec.backbone}",
        f"fusion={spec.fusion}",
        f"audio_encoder={format_stack(spec.audio_encoder)}",
        f"emma_encoder={format_stack(spec.emma_encoder)}",
        f"se_network={format_stack(spec.se_network)}",
        f"sensors={','.join(spec.sensors)}",
    ]
    if spec.backbone == "tdnn":
        lines.append(f"tdnn_context={','.join(map(str, spec.tdnn_context))}")
        lines.append(f"bottleneck_context={','.join(map(str, spec.bottleneck_context))}")

    return "\n".join(lines) + "\n"


def read_spec(path):

    with open(path, encoding="utf-8") as f:
        return parse_spec(f.read())


def resolve_spec(name_or_path, sensors=None):

    '''
    A preset name like 'blstm-direct' or a spec file path,
    *sensors* overrides the sensor set.
    '''

    if name_or_path in preset_names():
        backbone, fusion = name_or_path.split("-", 1)
        spec = default_spec(backbone, fusion)
    else:
        spec = read_spec(name_or_path)

    if sensors is not None:
        spec = replace(spec, sensors=sensors)
    return spec


# ============ Building =====================================


def _resolve_stack(spec, stack_name, in_dim, final):

    '''
    Symbolic shape pass over one stack, resolves activations,
    TDNN contexts and odd BLSTM widths.

    Returns
    -------

    resolved : list of LayerSpec
    out_dim : int, feature dimension after the stack
    '''

    layers = getattr(spec, stack_name)
    allowed = STACK_KINDS[spec.backbone]

    resolved = []
    dim = in_dim
    first_dense = True
    for k, layer in enumerate(layers):
        where = f"{stack_name}[{k}] {layer.token()}"
        last = k == len(layers) - 1

        if layer.kind not in allowed:
            raise SpecError(f"{where}: a {spec.backbone} stack only holds {allowed}")

        activation = layer.activation
        if activation is None:
            if (last and final) or layer.kind == "blstm":
                activation = "linear"
            else:
                activation = HIDDEN_ACTIVATION

        context = layer.context
        if context is None and layer.kind == "tdnn":
            context = spec.tdnn_context
        elif context is None and layer.kind == "dense" and spec.backbone == "tdnn":
            # the first Dense of a TDNN stack is the spliced bottleneck
            context = spec.bottleneck_context if first_dense else nn.DENSE_CONTEXT
        if layer.kind == "dense":
            first_dense = False

        if context is not None and (not context or 0 not in context):
            raise SpecError(f"{where}: context offsets {context} must include 0")

        size = layer.size
        if layer.kind == "blstm" and size % 2:
            size += 1
            logger.info(f"{where}: odd BLSTM width realized as {size}")

        resolved.append(replace(layer, size=size, activation=activation, context=context))
        dim = size

    return resolved, dim


def check_spec(spec):

    """
    Validates the fusion/encoder correspondence and runs the
    symbolic shape pass.

    Returns
    -------

    dict with the resolved stacks and input dimensions
    """

    has_s = bool(spec.audio_encoder)
    has_e = bool(spec.emma_encoder)

    if spec.fusion in ("audio_only", "direct") and (has_s or has_e):
        raise SpecError(f"{spec.fusion} models take no encoders")
    if spec.fusion == "unilateral" and (has_s or not has_e):
        raise SpecError("unilateral models need an EMMA encoder and no audio encoder")
    if spec.fusion == "bilateral" and not (has_s and has_e):
        raise SpecError("bilateral models need both an audio and an EMMA encoder")
    if not spec.se_network:
        raise SpecError("Empty SE network")

    audio_dim = N_BINS if spec.spectral else 1
    emma_dim = 2 * len(spec.sensors)

    s_layers, s_dim = _resolve_stack(spec, "audio_encoder", audio_dim, final=False)
    e_layers, e_dim = _resolve_stack(spec, "emma_encoder", emma_dim, final=False)

    if spec.fusion == "audio_only":
        se_in = audio_dim
    else:
        se_in = s_dim + e_dim

    se_layers, se_out = _resolve_stack(spec, "se_network", se_in, final=True)

    expected = N_BINS if spec.spectral else 1
    if se_out != expected:
        raise SpecError(
            f"se_network[{len(se_layers) - 1}] {spec.se_network[-1].token()}: "
            f"a {spec.backbone} model outputs {expected} features, got {se_out}"
        )

    return {
        "audio_encoder": (audio_dim, s_layers),
        "emma_encoder": (emma_dim, e_layers),
        "se_network": (se_in, se_layers),
    }


def _instantiate(in_dim, layers, rng):

    stack = []
    for layer in layers:
        stack.append(nn.make_layer(layer, in_dim, rng))
        in_dim = stack[-1].out_dim
    return nn.Stack(stack)


def fuse(s_repr, e_repr, strategy):

    '''
    Concatenates audio and articulatory representations along
    the feature axis, audio features first. Audio-only models
    pass *s_repr* through and take no articulatory input.
    '''

    if strategy not in FUSIONS:
        raise InvalidInput(f"Unknown fusion {strategy!r}")

    if strategy == "audio_only":
        if e_repr is not None:
            raise InvalidInput("audio_only fusion takes no articulatory input")
        return s_repr

    if e_repr is None:
        raise InvalidInput(f"{strategy} fusion needs an articulatory input")
    if s_repr.shape[1] != e_repr.shape[1]:
        raise ShapeError(
            f"Audio ({s_repr.shape[1]}) and articulatory ({e_repr.shape[1]}) lengths differ"
        )

    return np.concatenate([s_repr, e_repr], axis=0)


# ============ The model ====================================


class SEModel:

    """
    Speech enhancement model built from a ModelSpec.

    Parameters
    ----------

    spec : ModelSpec
    seed : int, parameter initialization seed
    stats : corpus.TrackStats, articulatory normalization,
            fit by train()
    """

    def __init__(self, spec, seed=0, stats=None):

        plan = check_spec(spec)

        self.spec = spec
        self.seed = seed
        self.stats = stats
        self.train_config = None
        self.stft_params = StftParams()

        rng = np.random.default_rng(seed)
        self.audio_encoder = _instantiate(*plan["audio_encoder"], rng)
        self.emma_encoder = _instantiate(*plan["emma_encoder"], rng)
        self.se_network = _instantiate(*plan["se_network"], rng)

        self._s_dim = None

        logger.debug(f"Built {spec.name} with {self.param_count()} parameters")

    def __repr__(self):
        return f"SEModel({self.spec.name}, params={self.param_count()})"

    def params(self):
        return (
            self.audio_encoder.params()
            + self.emma_encoder.params()
            + self.se_network.params()
        )

    def param_count(self):
        return sum(p.size for p in self.params())

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def layers(self):
        return list(self.audio_encoder) + list(self.emma_encoder) + list(self.se_network)

    # --- features ---------------------------------------

    def _track_features(self, track, n_samples, speaker_id):

        if track.sensors != self.spec.sensors:
            raise InvalidInput(
                f"Track sensors {','.join(track.sensors)} do not match "
                f"the model's {','.join(self.spec.sensors)}"
            )
        if self.stats is not None:
            track = corpus.normalize_track(track, self.stats, speaker_id)

        if self.spec.spectral:
            return corpus.align_to_frames(track, self.stft_params, n_samples)

        if abs(track.duration - n_samples / SAMPLE_RATE) > 1 / corpus.EMMA_RATE:
            raise AlignmentError(
                f"Track lasts {track.duration:.4f}s, audio {n_samples / SAMPLE_RATE:.4f}s"
            )
        return corpus.fit_length(corpus.align_to_waveform(track), n_samples)

    def features(self, noisy, track=None, speaker_id=None):

        '''
        Network inputs for *noisy* (and *track*).

        Returns
        -------

        audio : 2d ndarray, 1 x T samples or 257 x F log1p magnitudes
        emma : 2d ndarray aligned to audio, None for audio-only models
        spectrogram : the noisy Spectrogram of spectral models, else None
        '''

        if self.spec.uses_track and track is None:
            raise InvalidInput(f"{self.spec.name} needs an articulatory track")
        if not self.spec.uses_track and track is not None:
            raise InvalidInput(f"{self.spec.name} takes no articulatory track")

        sp = None
        if self.spec.spectral:
            sp = stft(noisy, self.stft_params)
            audio = sp.log_mag.T
        else:
            if len(noisy) < 1:
                raise InvalidInput("Empty waveform")
            audio = noisy.samples[None, :]

        emma = None
        if track is not None:
            emma = self._track_features(track, len(noisy), speaker_id)

        return audio, emma, sp

    def target(self, clean):

        if self.spec.spectral:
            return stft(clean, self.stft_params).log_mag.T
        return clean.samples[None, :]

    # --- forward / backward -----------------------------

    def forward(self, audio, emma=None):

        s = self.audio_encoder(audio) if len(self.audio_encoder) else audio
        e = None
        if emma is not None:
            e = self.emma_encoder(emma) if len(self.emma_encoder) else emma

        v = fuse(s, e, self.spec.fusion)
        self._s_dim = s.shape[0]
        return self.se_network(v)

    def backward(self, dy):

        '''
        Accumulates parameter gradients of the last forward pass
        '''

        dv = self.se_network.backward(dy)
        if self.spec.fusion == "audio_only":
            ds, de = dv, None
        else:
            ds, de = dv[: self._s_dim], dv[self._s_dim :]

        if len(self.audio_encoder):
            self.audio_encoder.backward(ds)
        if de is not None and len(self.emma_encoder):
            self.emma_encoder.backward(de)

    def enhance(self, noisy, track=None, speaker_id=None):

        """
        Enhanced waveform of the same length as *noisy*.
        Spectral models reuse the noisy phase.

        Parameters
        ----------

        noisy : Waveform
        track : ArticulatoryTrack, required by all but audio-only models,
                with exactly the model's sensors
        speaker_id : str, selects the track normalization statistics
        """

        audio, emma, sp = self.features(noisy, track, speaker_id)
        y = self.forward(audio, emma)

        if not self.spec.spectral:
            return Waveform(y[0], noisy.rate)

        log_mag = np.maximum(y.T, 0.0)
        return istft(Spectrogram(log_mag, sp.phase, sp.params, sp.source_len))

    # --- persistence ------------------------------------

    def save(self, path):

        meta = {
            "aamse_version": __version__,
            "spec": self.spec.to_dict(),
            "seed": self.seed,
            "train_config": asdict(self.train_config) if self.train_config else None,
            "stats": self.stats.to_dict() if self.stats is not None else None,
            "activations": [layer.activation for layer in self.layers()],
        }
        nn.save_checkpoint(path, [p.value for p in self.params()], meta)

    @classmethod
    def load(cls, path):

        meta, values = nn.load_checkpoint(path)

        spec = ModelSpec.from_dict(meta["spec"])
        stats = corpus.TrackStats.from_dict(meta["stats"]) if meta["stats"] else None
        model = cls(spec, meta["seed"], stats)
        if meta.get("train_config"):
            model.train_config = TrainConfig(**meta["train_config"])

        params = model.params()
        if len(params) != len(values):
            raise InvalidInput(f"{path}: {len(values)} parameter blocks, model has {len(params)}")
        for p, v in zip(params, values):
            if p.shape != v.shape:
                raise InvalidInput(f"{path}: block {p.name} has shape {v.shape}, expected {p.shape}")
            p.value[...] = v

        return model


def build_model(spec, seed=0):

    '''
    Instantiates the layer stacks of *spec* after
    validating them, see check_spec.
    '''

    return SEModel(spec, seed)


def enhance(model, noisy, track=None, speaker_id=None):
    return model.enhance(noisy, track, speaker_id)


# ============ Training =====================================


@dataclass(frozen=True)
class TrainConfig:

    '''
    *patience* stops training after that many epochs without
    improvement of the mean training loss, None disables it.
    '''

    loss: str = "L2"
    lr: float = 1e-3
    epochs: int = 20
    seed: int = 0
    patience: int = None
    clip_norm: float = nn.CLIP_NORM

    def __post_init__(self):

        if self.loss not in ("L1", "L2"):
            raise InvalidInput(f"Loss must be L1 or L2, got {self.loss!r}")
        if not self.lr > 0:
            raise InvalidInput(f"Learning rate must be positive, got {self.lr}")
        if self.epochs < 1:
            raise InvalidInput(f"Need at least one epoch, got {self.epochs}")
        if self.patience is not None and self.patience < 1:
            raise InvalidInput(f"Patience must be >= 1, got {self.patience}")

    @classmethod
    def for_backbone(cls, backbone, **overrides):

        '''
        L2 at 1e-3 for the waveform FCN, L1 at 1e-4 for the
        spectral backbones, keyword arguments override.
        '''

        if backbone == "fcn":
            defaults = dict(loss="L2", lr=1e-3)
        elif backbone in ("tdnn", "blstm"):
            defaults = dict(loss="L1", lr=1e-4)
        else:
            raise InvalidInput(f"Unknown backbone {backbone!r}")

        defaults.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**defaults)


def training_items(manifest, root=None):

    '''
    Noisy training CorpusItems, *manifest* is a manifest
    DataFrame (train rows get loaded from *root*) or
    a sequence of mixed CorpusItems.
    '''

    if isinstance(manifest, pd.DataFrame):
        rows = manifest[manifest["split"] == "train"]
        if root is None:
            raise InvalidInput("Loading manifest rows needs the corpus root")
        items = [corpus.load_row(row, root) for row in rows.itertuples()]
    else:
        items = list(manifest)

    if not items:
        raise InvalidInput("No training rows")
    for item in items:
        if item.noisy is None:
            raise InvalidInput(f"{item.utterance_id} has no noisy version")

    return items


def train(model, manifest, cfg=None, root=None):

    """
    Trains *model* with one utterance per Adam update on
    the training rows of *manifest*.

    FCN models map to the clean waveform, spectral models
    to the clean log1p magnitude.

    Parameters
    ----------

    model : SEModel
    manifest : manifest DataFrame or sequence of noisy CorpusItems
    cfg : TrainConfig, defaults per backbone
    root : corpus directory of the manifest paths

    Returns
    -------

    model : the trained SEModel
    loss_log : DataFrame with columns epoch, loss, n_updates
    """

    if cfg is None:
        cfg = TrainConfig.for_backbone(model.spec.backbone)

    items = training_items(manifest, root)

    # z-score statistics from the training tracks, one per utterance
    tracks = {it.utterance_id: (it.speaker_id, it.track) for it in items}
    model.stats = corpus.fit_track_stats(tracks[k] for k in sorted(tracks))
    model.train_config = cfg

    examples = []
    for it in items:
        track = corpus.select_sensors(it.track, model.spec.sensors) if model.spec.uses_track else None
        audio, emma, _ = model.features(it.noisy, track, it.speaker_id)
        examples.append((it.utterance_id, audio, emma, model.target(it.clean)))

    params = model.params()
    state = nn.AdamState(lr=cfg.lr)

    logger.info(
        f"Training {model.spec.name} ({model.param_count()} parameters) on "
        f"{len(examples)} rows, {cfg.loss} loss, lr={cfg.lr}"
    )

    log = []
    best, stale = np.inf, 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(cfg.seed + epoch).permutation(len(examples))

        losses = []
        for k in order:
            utt_id, audio, emma, target = examples[k]
            try:
                model.zero_grad()
                y = model.forward(audio, emma)
                value, grad = nn.loss(cfg.loss, y, target)
                if not np.isfinite(value):
                    raise NumericalError(f"Non-finite {cfg.loss} loss")
                model.backward(grad)

                grads = [p.grad for p in params]
                nn.clip_gradients(grads, cfg.clip_norm)
                nn.adam_step([p.value for p in params], grads, state)
            except NumericalError as e:
                e.utterance_id = utt_id
                logger.error(f"Training halted in epoch {epoch + 1}: {e}")
                raise

            losses.append(value)

        mean_loss = float(np.mean(losses))
        log.append((epoch + 1, mean_loss, len(losses)))
        logger.info(f"epoch {epoch + 1}/{cfg.epochs}  {cfg.loss} loss {mean_loss:.6g}")

        if mean_loss < best:
            best, stale = mean_loss, 0
        else:
            stale += 1
            if cfg.patience is not None and stale >= cfg.patience:
                logger.info(f"No improvement for {stale} epochs, stopping")
                break

    return model, pd.DataFrame(log, columns=["epoch", "loss", "n_updates"])
