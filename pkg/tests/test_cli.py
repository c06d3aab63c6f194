import configparser
import logging
import os
import shutil

import pandas as pd
import pytest

from aamse import cli, corpus

FAST_CORPUS = [
    "--utts", "4",
    "--dur", "1.0",
    "--noises", "4",
    "--test-noises", "2",
    "--test-utts", "1",
    "--noises-per-utt", "2",
    "--train-snrs=-5,5",
    "--test-snrs=-5,5",
    "--seed", "3",
]

TINY_SPECS = {
    "blstm": "backbone=blstm\nfusion=direct\nse_network=blstm:8,dense:257\n",
    "fcn": "backbone=fcn\nfusion=audio_only\nse_network=conv1d:4:9,conv1d:1:9\n",
}


def resolved(out_dir):
    cp = configparser.ConfigParser(interpolation=None)
    cp.read(os.path.join(out_dir, "resolved_config.ini"))
    section = cp.sections()[0]
    return dict(cp[section])


def spec_file(tmp_path, backbone):
    path = tmp_path / f"{backbone}.spec"
    path.write_text(TINY_SPECS[backbone])
    return str(path)


@pytest.fixture(scope="module")
def cli_corpus(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("cli") / "corpus")
    assert cli.run(["synth", "--out", out] + FAST_CORPUS) == cli.EXIT_OK
    return out


@pytest.fixture(scope="module")
def checkpoint(cli_corpus, tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    out = str(tmp / "blstm")
    argv = [
        "train",
        "--manifest", os.path.join(cli_corpus, "manifest.tsv"),
        "--model-spec", spec_file(tmp, "blstm"),
        "--epochs", "1",
        "--out", out,
    ]
    assert cli.run(argv) == cli.EXIT_OK
    return os.path.join(out, "model.ckpt")


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


class TestSynth:
    def test_layout(self, tmp_path):
        out = str(tmp_path / "c")
        argv = ["synth", "--utts", "12", "--dur", "2.0", "--coupling", "1.0", "--seed", "7",
                "--noises", "4", "--test-noises", "1", "--noises-per-utt", "1",
                "--train-snrs", "0", "--test-snrs", "0", "--out", out]
        assert cli.run(argv) == 0

        assert len(os.listdir(os.path.join(out, "clean"))) == 12
        assert len(os.listdir(os.path.join(out, "tracks"))) == 12
        manifest = corpus.read_manifest(os.path.join(out, "manifest.tsv"))
        assert len(os.listdir(os.path.join(out, "noisy"))) == len(manifest)
        assert resolved(out)["coupling"] == "1"

    def test_reruns_are_byte_identical(self, tmp_path):
        outs = [str(tmp_path / name) for name in ("a", "b")]
        for out in outs:
            assert cli.run(["synth", "--out", out] + FAST_CORPUS) == 0

        for dirpath, _, files in os.walk(outs[0]):
            rel = os.path.relpath(dirpath, outs[0])
            for name in files:
                if name == "resolved_config.ini":
                    continue
                with open(os.path.join(dirpath, name), "rb") as f:
                    a = f.read()
                with open(os.path.join(outs[1], rel, name), "rb") as f:
                    b = f.read()
                assert a == b, os.path.join(rel, name)

    def test_coupling_range(self, tmp_path, capsys):
        assert cli.run(["synth", "--coupling", "1.5", "--out", str(tmp_path)]) == cli.EXIT_USAGE
        assert "not in [0, 1]" in capsys.readouterr().err

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "synth.cfg"
        cfg.write_text("# small corpus\nutts = 2\ndur = 0.5\nnoises = 2\ntest_noises = 1\nnoises_per_utt = 1\ntest-utts = 1\n")
        out = str(tmp_path / "c")
        assert cli.run(["synth", "--config", str(cfg), "--utts", "3", "--out", out]) == 0

        assert len(os.listdir(os.path.join(out, "clean"))) == 3
        values = resolved(out)
        assert values["dur"] == "0.5"
        assert values["utts"] == "3"

    def test_example_config(self):
        path = os.path.join(os.path.dirname(__file__), "..", "example_data", "synth.cfg")
        values = cli.read_config_file(path, "synth", cli.build_parser())
        assert values["utts"] == 30
        assert values["train_snrs"] == (-5.0, 0.0, 5.0)
        assert values["noises_per_utt"] == 2

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "synth.cfg"
        cfg.write_text("utterances = 2\n")
        assert cli.run(["synth", "--config", str(cfg)]) == cli.EXIT_USAGE
        assert "unknown key 'utterances'" in capsys.readouterr().err

    def test_bad_log_level(self, monkeypatch, capsys):
        monkeypatch.setenv("AAMSE_LOG", "loud")
        cli.setup_logging()
        assert logging.getLogger("aamse").level == logging.INFO
        assert "Ignoring AAMSE_LOG='LOUD'" in capsys.readouterr().err

    def test_log_level_from_environment(self, monkeypatch, capsys):
        monkeypatch.setenv("AAMSE_LOG", "warning")
        cli.setup_logging()
        assert logging.getLogger("aamse").level == logging.WARNING
        assert capsys.readouterr().err == ""

    def test_debug_logging(self, tmp_path):
        out = str(tmp_path / "c")
        argv = ["--debug", "synth", "--utts", "1", "--dur", "0.5", "--noises", "1",
                "--test-noises", "0", "--noises-per-utt", "1", "--test-utts", "0", "--out", out]
        assert cli.run(argv) == 0
        assert logging.getLogger("aamse").level == logging.DEBUG


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


class TestTrain:
    def test_outputs(self, checkpoint):
        out = os.path.dirname(checkpoint)
        for name in ("model.ckpt", "loss.tsv", "model.spec", "resolved_config.ini"):
            assert os.path.exists(os.path.join(out, name))
        log = pd.read_csv(os.path.join(out, "loss.tsv"), sep="\t")
        assert log.columns.tolist() == ["epoch", "loss", "n_updates"]

    def test_records_spectral_defaults(self, checkpoint):
        values = resolved(os.path.dirname(checkpoint))
        assert values["loss"] == "L1"
        assert values["lr"] == "0.0001"
        assert values["sensors"] == ",".join(corpus.SENSORS)

    def test_records_waveform_defaults(self, cli_corpus, tmp_path):
        out = str(tmp_path / "fcn")
        argv = [
            "train",
            "--manifest", os.path.join(cli_corpus, "manifest.tsv"),
            "--model-spec", spec_file(tmp_path, "fcn"),
            "--epochs", "1",
            "--out", out,
        ]
        assert cli.run(argv) == 0
        values = resolved(out)
        assert values["loss"] == "L2"
        assert values["lr"] == "0.001"

    def test_unknown_sensor(self, cli_corpus, tmp_path, capsys):
        argv = ["train", "--manifest", os.path.join(cli_corpus, "manifest.tsv"),
                "--model-spec", "blstm-direct", "--sensors", "UL,XX", "--out", str(tmp_path)]
        assert cli.run(argv) == cli.EXIT_USAGE
        assert "valid labels are UL,LL,UJ,LJ,T1,T2,T3,T4,VM" in capsys.readouterr().err

    def test_missing_manifest(self, tmp_path):
        argv = ["train", "--manifest", str(tmp_path / "none.tsv"), "--model-spec",
                spec_file(tmp_path, "blstm"), "--out", str(tmp_path / "out")]
        assert cli.run(argv) == cli.EXIT_RUNTIME

    def test_required_flags(self, tmp_path, capsys):
        assert cli.run(["train", "--out", str(tmp_path)]) == cli.EXIT_USAGE
        assert "--manifest" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# enhance / eval
# ---------------------------------------------------------------------------


class TestEnhance:
    def test_writes_the_test_rows(self, cli_corpus, checkpoint, tmp_path):
        out = str(tmp_path / "enh")
        argv = ["enhance", "--manifest", os.path.join(cli_corpus, "manifest.tsv"),
                "--checkpoint", checkpoint, "--out", out]
        assert cli.run(argv) == 0

        manifest = corpus.read_manifest(os.path.join(cli_corpus, "manifest.tsv"))
        expected = {os.path.basename(p) for p in manifest[manifest["split"] == "test"]["noisy_path"]}
        assert set(os.listdir(out)) - {"resolved_config.ini"} == expected

    def test_missing_track(self, cli_corpus, checkpoint, tmp_path, capsys):
        copy = str(tmp_path / "corpus")
        shutil.copytree(cli_corpus, copy)
        os.remove(os.path.join(copy, "tracks", "S1_U0004.emma"))

        argv = ["enhance", "--manifest", os.path.join(copy, "manifest.tsv"),
                "--checkpoint", checkpoint, "--out", str(tmp_path / "enh")]
        assert cli.run(argv) == cli.EXIT_RUNTIME
        assert "S1_U0004.emma" in capsys.readouterr().err

    def test_sensors_outside_the_allowed_set(self, cli_corpus, checkpoint, tmp_path):
        argv = ["enhance", "--manifest", os.path.join(cli_corpus, "manifest.tsv"),
                "--checkpoint", checkpoint, "--sensors", "UL,LL", "--out", str(tmp_path)]
        assert cli.run(argv) == cli.EXIT_RUNTIME


class TestEval:
    def test_self_baseline(self, cli_corpus, checkpoint, tmp_path):
        out = str(tmp_path / "report")
        argv = ["eval", "--manifest", os.path.join(cli_corpus, "manifest.tsv"),
                "--checkpoint", f"mine={checkpoint}", "--baseline", "mine", "--out", out]
        assert cli.run(argv) == 0

        table = pd.read_csv(os.path.join(out, "report.tsv"), sep="\t", comment="#", dtype={"snr": str})
        mine = table[table["system"] == "mine"]
        assert mine["snr"].tolist() == ["-5", "5", "all"]
        assert (mine["delta_stoi"] == 0).all()
        assert (mine["delta_si_sdr"] == 0).all()
        assert set(table["system"]) == {"noisy", "mine"}

    def test_duplicate_names(self, cli_corpus, checkpoint, tmp_path):
        argv = ["eval", "--manifest", os.path.join(cli_corpus, "manifest.tsv"),
                "--checkpoint", f"a={checkpoint}", "--checkpoint", f"a={checkpoint}",
                "--out", str(tmp_path)]
        assert cli.run(argv) == cli.EXIT_RUNTIME
