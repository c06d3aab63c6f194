'''
Desk-scale experiments on the synthetic corpus, several minutes
each. Run with ``pytest -m slow``.
'''

import pytest

from aamse import corpus, evaluation, models
from aamse.models import ModelSpec, TrainConfig

pytestmark = pytest.mark.slow

PLAN = corpus.MixPlan(
    train_snrs=(-5.0, 0.0, 5.0),
    test_snrs=(-5.0, 0.0, 5.0),
    noises_per_utterance=2,
    n_test_noises=2,
    n_test_utterances=6,
)

# identical SE budget for all systems
SE_NETWORK = models.parse_stack("blstm:64,dense:257")


def run_experiment(coupling, root, with_ablation=False):

    # 24 training and 6 test utterances, white/pink for training, brown/ar1 unseen
    items, pool = corpus.synth_corpus(30, 1.0, coupling, seed=11, n_noises=4)
    manifest = corpus.build_manifest(items, pool, PLAN)
    corpus.write_corpus(items, pool, manifest, root)

    specs = {
        "audio_only": ModelSpec("blstm", "audio_only", se_network=SE_NETWORK),
        "direct": ModelSpec("blstm", "direct", se_network=SE_NETWORK),
    }
    if with_ablation:
        specs["direct_lessinvasive"] = ModelSpec(
            "blstm", "direct", se_network=SE_NETWORK, sensors=corpus.LESS_INVASIVE
        )

    train_items = corpus.render_items(items, pool, manifest, split="train")
    cfg = TrainConfig.for_backbone("blstm", lr=1e-3, epochs=15, seed=0)

    systems = {}
    for name, spec in specs.items():
        systems[name], _ = models.train(models.build_model(spec, seed=0), train_items, cfg)

    report = evaluation.evaluate(systems, manifest, root)
    overall = report.summary[report.summary["snr"] == evaluation.ALL]
    return overall.set_index("system")


def test_articulatory_input_helps_when_coupled(tmp_path):
    scores = run_experiment(1.0, str(tmp_path), with_ablation=True)

    assert scores.loc["direct", "stoi"] > scores.loc["audio_only", "stoi"]
    assert scores.loc["direct", "si_sdr"] > scores.loc["audio_only", "si_sdr"]
    # four less invasive sensors suffice for the direction
    assert scores.loc["direct_lessinvasive", "stoi"] > scores.loc["audio_only", "stoi"]


def test_gain_vanishes_without_coupling(tmp_path):
    scores = run_experiment(0.0, str(tmp_path))
    assert abs(scores.loc["direct", "stoi"] - scores.loc["audio_only", "stoi"]) < 0.02
