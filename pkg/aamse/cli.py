''' Batch command line: synth, train, enhance and eval '''

import argparse
import configparser
import logging
import os
import sys

from aamse import __version__
from aamse import corpus, evaluation, metrics, models
from aamse.core import write_wav
from aamse.errors import AAMSEError, InvalidInput

logger = logging.getLogger("aamse")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


# --- argument types ------------------------------------------


def sensor_list(text):

    try:
        return corpus.parse_sensors(text)
    except InvalidInput:
        raise argparse.ArgumentTypeError(
            f"invalid sensors {text!r}, valid labels are {','.join(corpus.SENSORS)}"
        ) from None


def unit_interval(text):

    value = float(text)
    if not 0 <= value <= 1:
        raise argparse.ArgumentTypeError(f"{value} is not in [0, 1]")
    return value


def positive_int(text):

    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"{value} is not a positive integer")
    return value


def positive_float(text):

    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"{value} is not positive")
    return value


def snr_list(text):
    return tuple(float(s) for s in text.split(",") if s.strip())


# --- parser --------------------------------------------------


def build_parser():

    parser = argparse.ArgumentParser(
        prog="aamse", description="Audio-articulatory speech enhancement experiments"
    )
    parser.add_argument("--debug", action="store_true", help="debug logging")
    parser.add_argument("--version", action="version", version="aamse " + __version__)
    sub = parser.add_subparsers(dest="command", required=True)
    parser.commands = {}

    def common(p):
        p.add_argument("--config", help="key=value file, flags override its entries")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=positive_int)

    p = sub.add_parser("synth", help="synthesize a paired corpus")
    parser.commands["synth"] = p
    common(p)
    p.add_argument("--utts", type=positive_int, help="number of utterances")
    p.add_argument("--dur", type=positive_float, help="utterance duration in seconds")
    p.add_argument("--coupling", type=unit_interval, help="audio/track coupling in [0, 1]")
    p.add_argument("--speakers", type=positive_int)
    p.add_argument("--noises", type=positive_int, help="size of the noise pool")
    p.add_argument("--test-noises", type=int, help="unseen test noises")
    p.add_argument("--test-utts", type=int, help="test utterances per speaker")
    p.add_argument("--noises-per-utt", type=positive_int)
    p.add_argument("--train-snrs", type=snr_list, help="comma separated dB values")
    p.add_argument("--test-snrs", type=snr_list, help="comma separated dB values")

    p = sub.add_parser("train", help="train a model on the training rows")
    parser.commands["train"] = p
    common(p)
    p.add_argument("--manifest")
    p.add_argument("--model-spec", help="spec file or preset like blstm-direct")
    p.add_argument("--checkpoint", help="checkpoint to write, default <out>/model.ckpt")
    p.add_argument("--sensors", type=sensor_list, help="e.g. UL,LL,LJ,T1")
    p.add_argument("--epochs", type=positive_int)
    p.add_argument("--lr", type=positive_float)
    p.add_argument("--loss", choices=("L1", "L2"))
    p.add_argument("--patience", type=positive_int)

    p = sub.add_parser("enhance", help="enhance the test rows")
    parser.commands["enhance"] = p
    common(p)
    p.add_argument("--manifest")
    p.add_argument("--checkpoint")
    p.add_argument("--sensors", type=sensor_list)

    p = sub.add_parser("eval", help="score models on the test rows")
    parser.commands["eval"] = p
    common(p)
    p.add_argument("--manifest")
    p.add_argument(
        "--checkpoint", action="append", help="[name=]path, may be repeated"
    )
    p.add_argument("--sensors", type=sensor_list)
    p.add_argument("--baseline", help="system the deltas refer to, default noisy")
    p.add_argument("--transcripts", help="utterance_id<TAB>text file")
    p.add_argument("--hypotheses", help="system<TAB>noisy_path<TAB>text file")
    p.add_argument("--pesq", help="external PESQ executable")

    return parser


DEFAULTS = {
    "synth": dict(
        out="corpus",
        seed=0,
        workers=1,
        utts=12,
        dur=2.0,
        coupling=1.0,
        speakers=1,
        noises=12,
        test_noises=7,
        test_utts=None,
        noises_per_utt=5,
        train_snrs=corpus.TRAIN_SNRS,
        test_snrs=corpus.TEST_SNRS,
    ),
    "train": dict(
        out="run",
        seed=0,
        workers=1,
        manifest=None,
        model_spec=None,
        checkpoint=None,
        sensors=None,
        epochs=20,
        lr=None,
        loss=None,
        patience=None,
    ),
    "enhance": dict(out="enhanced", seed=0, workers=1, manifest=None, checkpoint=None, sensors=None),
    "eval": dict(
        out="report",
        seed=0,
        workers=1,
        manifest=None,
        checkpoint=None,
        sensors=None,
        baseline=None,
        transcripts=None,
        hypotheses=None,
        pesq=None,
    ),
}

REQUIRED = {
    "synth": (),
    "train": ("manifest", "model_spec"),
    "enhance": ("manifest", "checkpoint"),
    "eval": ("manifest", "checkpoint"),
}


def read_config_file(path, command, parser):

    '''
    Section-less key=value file, values get converted by the
    argument types of *command*. Unknown keys are usage errors.
    '''

    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as f:
            cp.read_string("[run]\n" + f.read())
    except (OSError, configparser.Error) as e:
        parser.error(f"cannot read config {path}: {e}")

    actions = {a.dest: a for a in parser.commands[command]._actions}

    values = {}
    for key, raw in cp["run"].items():
        dest = key.replace("-", "_")
        if dest not in DEFAULTS[command] or dest not in actions:
            parser.error(f"unknown key {key!r} in {path} for command {command}")
        action = actions[dest]
        try:
            if action.type is not None:
                value = action.type(raw)
            elif action.dest == "checkpoint" and command == "eval":
                value = [v.strip() for v in raw.split(",") if v.strip()]
            else:
                value = raw
        except (argparse.ArgumentTypeError, ValueError) as e:
            parser.error(f"{path}: {key}: {e}")
        if action.choices is not None and value not in action.choices:
            parser.error(f"{path}: {key}: invalid choice {value!r}")
        values[dest] = value

    return values


def resolve(args, parser):

    '''
    Defaults, then config file entries, then flags
    '''

    cfg = dict(DEFAULTS[args.command])
    if args.config:
        cfg.update(read_config_file(args.config, args.command, parser))
    for key in cfg:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value

    missing = [k for k in REQUIRED[args.command] if cfg.get(k) is None]
    if missing:
        parser.error(f"{args.command} needs " + ", ".join("--" + k.replace("_", "-") for k in missing))

    return cfg


def _format_value(value):

    if value is None:
        return ""
    if isinstance(value, (tuple, list)):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return f"{value:g}"
    return str(value)


def write_resolved_config(cfg, command, out_dir):

    cp = configparser.ConfigParser(interpolation=None)
    cp[command] = {k: _format_value(cfg[k]) for k in sorted(cfg)}

    path = os.path.join(out_dir, "resolved_config.ini")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        cp.write(f)
    return path


# --- commands ------------------------------------------------


def cmd_synth(cfg):

    plan = corpus.MixPlan(
        train_snrs=tuple(cfg["train_snrs"]),
        test_snrs=tuple(cfg["test_snrs"]),
        noises_per_utterance=cfg["noises_per_utt"],
        seed=cfg["seed"],
        n_test_noises=cfg["test_noises"],
        n_test_utterances=cfg["test_utts"],
    )

    items, noise_pool = corpus.synth_corpus(
        cfg["utts"],
        cfg["dur"],
        cfg["coupling"],
        cfg["seed"],
        n_speakers=cfg["speakers"],
        n_noises=cfg["noises"],
    )
    manifest = corpus.build_manifest(items, noise_pool, plan)

    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    corpus.write_corpus(items, noise_pool, manifest, out, workers=cfg["workers"])
    write_resolved_config(cfg, "synth", out)

    n_train = int((manifest["split"] == "train").sum())
    logger.info(f"{out}: {len(items)} utterances, {n_train} train / {len(manifest) - n_train} test rows")
    return EXIT_OK


def _corpus_root(manifest_path):
    return os.path.dirname(os.path.abspath(manifest_path))


def cmd_train(cfg):

    spec = models.resolve_spec(cfg["model_spec"], cfg["sensors"])
    train_cfg = models.TrainConfig.for_backbone(
        spec.backbone,
        loss=cfg["loss"],
        lr=cfg["lr"],
        epochs=cfg["epochs"],
        seed=cfg["seed"],
        patience=cfg["patience"],
    )
    # record what was actually used
    cfg.update(loss=train_cfg.loss, lr=train_cfg.lr, sensors=spec.sensors)

    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    write_resolved_config(cfg, "train", out)

    manifest = corpus.read_manifest(cfg["manifest"])
    model = models.build_model(spec, seed=cfg["seed"])
    model, loss_log = models.train(model, manifest, train_cfg, root=_corpus_root(cfg["manifest"]))

    ckpt = cfg["checkpoint"] or os.path.join(out, "model.ckpt")
    model.save(ckpt)
    loss_log.to_csv(os.path.join(out, "loss.tsv"), sep="\t", index=False, lineterminator="\n")
    with open(os.path.join(out, "model.spec"), "w", encoding="utf-8", newline="\n") as f:
        f.write(models.format_spec(spec))

    logger.info(f"Saved {ckpt}, final loss {loss_log['loss'].iloc[-1]:.6g}")
    return EXIT_OK


def _checkpoint_entries(entries):

    '''
    [name=]path entries, names default to the file stem
    '''

    out = {}
    for entry in entries:
        name, sep, path = entry.partition("=")
        if not sep:
            name, path = os.path.splitext(os.path.basename(entry))[0], entry
        if name in out:
            raise InvalidInput(f"Duplicate system name {name!r}")
        out[name] = path
    return out


def _check_sensors(model, sensors, name):

    if sensors is not None and model.spec.uses_track:
        extra = set(model.spec.sensors) - set(sensors)
        if extra:
            raise InvalidInput(
                f"{name} consumes sensors {','.join(sorted(extra))} outside --sensors"
            )


def cmd_enhance(cfg):

    model = models.SEModel.load(cfg["checkpoint"])
    _check_sensors(model, cfg["sensors"], cfg["checkpoint"])

    manifest = corpus.read_manifest(cfg["manifest"])
    root = _corpus_root(cfg["manifest"])
    rows = manifest[manifest["split"] == "test"].sort_values("noisy_path", kind="stable")

    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    write_resolved_config(cfg, "enhance", out)

    n_failed = 0
    for row in rows.itertuples():
        try:
            item = corpus.load_row(row, root)
            track = None
            if model.spec.uses_track:
                track = corpus.select_sensors(item.track, model.spec.sensors)
            enhanced = model.enhance(item.noisy, track, item.speaker_id)
            write_wav(os.path.join(out, os.path.basename(row.noisy_path)), enhanced)
        except (AAMSEError, OSError) as e:
            n_failed += 1
            logger.error(f"{row.noisy_path}: {e}")

    logger.info(f"Enhanced {len(rows) - n_failed} of {len(rows)} test rows into {out}")
    return EXIT_RUNTIME if n_failed else EXIT_OK


def cmd_eval(cfg):

    checkpoints = _checkpoint_entries(cfg["checkpoint"])
    systems = {}
    for name, path in checkpoints.items():
        systems[name] = models.SEModel.load(path)
        _check_sensors(systems[name], cfg["sensors"], name)

    transcripts = hypotheses = None
    if cfg["transcripts"]:
        transcripts = evaluation.read_transcripts(cfg["transcripts"])
    if cfg["hypotheses"]:
        hypotheses = evaluation.read_hypotheses(cfg["hypotheses"])

    pesq = None
    if cfg["pesq"]:
        pesq = metrics.PesqAdapter.find(cfg["pesq"])

    manifest = corpus.read_manifest(cfg["manifest"])
    report = evaluation.evaluate(
        systems,
        manifest,
        _corpus_root(cfg["manifest"]),
        transcripts=transcripts,
        hypotheses=hypotheses,
        baseline=cfg["baseline"],
        workers=cfg["workers"],
        pesq=pesq,
    )

    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    write_resolved_config(cfg, "eval", out)
    evaluation.write_report(report, out, config={k: _format_value(v) for k, v in cfg.items()})

    if len(report.errors):
        logger.error(f"{len(report.errors)} (system, row) pairs failed, see report.json")
        return EXIT_RUNTIME
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "enhance": cmd_enhance,
    "eval": cmd_eval,
}


def setup_logging(debug=False):

    requested = os.environ.get("AAMSE_LOG", "INFO").upper()
    level = requested if requested in LOG_LEVELS else "INFO"
    if debug:
        level = "DEBUG"

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logger.handlers[:] = [handler]
    logger.setLevel(level)
    logger.propagate = False

    if requested not in LOG_LEVELS:
        logger.warning(
            f"Ignoring AAMSE_LOG={requested!r}, valid are {','.join(LOG_LEVELS)}, using {level}"
        )


def run(argv=None):

    '''
    Parses *argv* and runs the command, returns the exit status
    '''

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve(args, parser)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    setup_logging(args.debug)

    try:
        return COMMANDS[args.command](cfg)
    except (AAMSEError, OSError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_RUNTIME
