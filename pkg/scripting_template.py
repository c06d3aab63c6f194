import numpy as np

import aamse
from aamse import corpus, evaluation, models
from aamse.models import ModelSpec, TrainConfig

out_dir = 'aamse_demo'
seed = 0
coupling = 1.0  # 0 gives tracks carrying no information about the audio

# --- create a synthetic paired corpus ---

n_utts = 30  # the last 20% become test utterances
dur = 1.0  # seconds

items, noise_pool = aamse.synth_corpus(n_utts, dur, coupling, seed = seed, n_noises = 4)

plan = corpus.MixPlan(
    train_snrs = (-5.0, 0.0, 5.0),
    test_snrs = (-5.0, 0.0, 5.0),
    noises_per_utterance = 2,
    n_test_noises = 2,
)
manifest = aamse.build_manifest(items, noise_pool, plan)
print(manifest.groupby('split').size())

# mix a single utterance by hand
item = items[0]
noisy = aamse.mix_at_snr(item.clean, noise_pool['N00_white'], snr_db = 0, seed = seed)
print('STOI of the 0dB mixture:', aamse.stoi(item.clean, noisy))

# --- write the corpus, the evaluation reads it back ---

corpus.write_corpus(items, noise_pool, manifest, out_dir)

# --- train audio only vs. direct fusion with the same SE network ---

se_network = models.parse_stack('blstm:64,dense:257')
specs = {
    'audio_only': ModelSpec('blstm', 'audio_only', se_network = se_network),
    'direct': ModelSpec('blstm', 'direct', se_network = se_network),
    # the four less invasive sensors
    'direct_UL_LL_LJ_T1': ModelSpec(
        'blstm', 'direct', se_network = se_network, sensors = corpus.LESS_INVASIVE
    ),
}

# mixtures in memory, identical to the ones on disk
train_items = corpus.render_items(items, noise_pool, manifest, split = 'train')
cfg = TrainConfig.for_backbone('blstm', lr = 1e-3, epochs = 15, seed = seed)

systems = {}
for name, spec in specs.items():
    model = aamse.build_model(spec, seed = seed)
    systems[name], loss_log = aamse.train(model, train_items, cfg)
    print(name, 'final loss:', loss_log['loss'].iloc[-1])
    systems[name].save(f'{out_dir}/{name}.ckpt')

# --- enhance one test mixture ---

test_row = manifest[manifest['split'] == 'test'].iloc[0]
test_item = corpus.load_row(test_row, out_dir)
enhanced = aamse.enhance(systems['direct'], test_item.noisy, test_item.track, test_item.speaker_id)
aamse.write_wav(f'{out_dir}/enhanced_example.wav', enhanced)
print('SI-SDR noisy/enhanced:',
      aamse.si_sdr(test_item.clean, test_item.noisy),
      aamse.si_sdr(test_item.clean, enhanced))

# --- evaluate all systems on the test rows ---

# report is an EvalReport holding pandas DataFrames
report = aamse.evaluate(systems, manifest, out_dir)

overall = report.summary[report.summary['snr'] == evaluation.ALL]
print(overall.set_index('system')[report.metrics])
print(report.deltas)

evaluation.write_report(report, f'{out_dir}/report', config = {'seed': seed, 'coupling': coupling})

# STOI per test SNR, one column per system
print(np.round(evaluation.metric_series(report, 'stoi'), 3))
