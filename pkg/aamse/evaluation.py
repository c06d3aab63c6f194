''' Scoring of enhancement systems over the test rows of a corpus '''

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import pandas as pd

from aamse import __version__
from aamse import corpus, metrics
from aamse.errors import AAMSEError, InvalidInput

logger = logging.getLogger(__name__)

NOISY = "noisy"  # the unprocessed input as pseudo-system
ALL = "all"  # label of the aggregate over all SNRs

# per worker process, set by the pool initializer
_state = {}


@dataclass
class EvalReport:

    '''
    rows : one score record per (system, manifest row)
    cells : means and counts per (system, snr_db, noise_id)
    summary : means and counts per (system, snr), snr 'all' aggregates
    deltas : summary metrics minus the ones of the baseline system
    errors : failed (system, row) pairs, excluded from all means
    '''

    rows: pd.DataFrame
    cells: pd.DataFrame
    summary: pd.DataFrame
    deltas: pd.DataFrame
    errors: pd.DataFrame
    baseline: str
    metrics: list


def _init_worker(models, root, transcripts, hypotheses, pesq):

    _state.update(
        models=models, root=root, transcripts=transcripts, hypotheses=hypotheses, pesq=pesq
    )


def _scores(clean, processed, system, row, state):

    scores = {
        "stoi": metrics.stoi(clean, processed),
        "si_sdr": metrics.si_sdr(clean, processed),
    }
    if state["pesq"] is not None:
        scores["pesq"] = state["pesq"].score(clean, processed)

    refs, hyps = state["transcripts"], state["hypotheses"]
    if refs is not None and hyps is not None:
        hyp = hyps.get((system, row.noisy_path))
        ref = refs.get(row.utterance_id)
        if hyp is not None and ref is not None:
            scores["ccr"] = metrics.ccr(ref, hyp)

    return scores


def score_row(row):

    '''
    Enhances one manifest row with every model and scores
    the outputs and the noisy input against the clean signal.

    Returns
    -------

    list of record dicts, one per system
    '''

    state = _state
    base = {
        "utterance_id": row.utterance_id,
        "speaker_id": row.speaker_id,
        "noise_id": row.noise_id,
        "snr_db": float(row.snr_db),
        "noisy_path": row.noisy_path,
    }

    try:
        item = corpus.load_row(row, state["root"])
    except (AAMSEError, OSError) as e:
        return [
            dict(base, system=name, error=f"{type(e).__name__}: {e}")
            for name in [NOISY] + list(state["models"])
        ]

    records = []
    for name, model in [(NOISY, None)] + list(state["models"].items()):
        record = dict(base, system=name, error=None)
        try:
            if model is None:
                processed = item.noisy
            else:
                track = None
                if model.spec.uses_track:
                    track = corpus.select_sensors(item.track, model.spec.sensors)
                processed = model.enhance(item.noisy, track, item.speaker_id)
            record.update(_scores(item.clean, processed, name, row, state))
        except AAMSEError as e:
            record["error"] = f"{type(e).__name__}: {e}"
            logger.warning(f"{name} on {row.noisy_path}: {record['error']}")
        records.append(record)

    return records


def _aggregate(ok, keys, metric_cols):

    grouped = ok.groupby(keys, sort=False)
    out = grouped[metric_cols].mean()
    out.insert(0, "count", grouped.size())
    return out.reset_index()


def evaluate(
    models,
    manifest,
    root,
    transcripts=None,
    hypotheses=None,
    baseline=None,
    workers=1,
    pesq=None,
):

    """
    Scores every test row of *manifest* for all *models*
    and the unprocessed noisy input.

    Parameters
    ----------

    models : dict, system name -> SEModel
    manifest : manifest DataFrame
    root : corpus directory the manifest paths are relative to
    transcripts : dict, utterance_id -> reference transcript, optional
    hypotheses : dict, (system, noisy_path) -> recognized transcript, optional
    baseline : str, system the deltas refer to, defaults to 'noisy'
    workers : int, number of processes scoring rows
    pesq : metrics.PesqAdapter or None

    Returns
    -------

    EvalReport
    """

    if NOISY in models:
        raise InvalidInput(f"System name {NOISY!r} is reserved for the unprocessed input")

    systems = [NOISY] + list(models)
    baseline = baseline or NOISY
    if baseline not in systems:
        raise InvalidInput(f"Baseline {baseline!r} is none of the systems {systems}")

    rows = manifest[manifest["split"] == "test"].sort_values("noisy_path", kind="stable")
    if rows.empty:
        raise InvalidInput("Manifest has no test rows")

    init_args = (models, root, transcripts, hypotheses, pesq)
    if workers > 1:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_init_worker, initargs=init_args
        ) as pool:
            results = list(pool.map(score_row, rows.itertuples(), chunksize=4))
    else:
        _init_worker(*init_args)
        results = [score_row(row) for row in rows.itertuples()]

    records = pd.DataFrame([rec for recs in results for rec in recs])

    metric_cols = [c for c in ("stoi", "si_sdr", "pesq", "ccr") if c in records.columns]
    failed = records["error"].notna()
    errors = records[failed].reset_index(drop=True)
    ok = records[~failed]

    if ok.empty:
        raise InvalidInput(f"Every system failed on every row, first error: {errors.loc[0, 'error']}")
    if len(errors):
        logger.warning(f"{len(errors)} (system, row) pairs failed and are excluded")

    cells = _aggregate(ok, ["system", "snr_db", "noise_id"], metric_cols)
    cells = _order(cells, systems, ["snr_db", "noise_id"])

    per_snr = _aggregate(ok, ["system", "snr_db"], metric_cols)
    per_snr = _order(per_snr, systems, ["snr_db"])
    per_snr.insert(1, "snr", per_snr.pop("snr_db").map(lambda s: f"{s:g}"))

    overall = _aggregate(ok, ["system"], metric_cols)
    overall.insert(1, "snr", ALL)

    summary = pd.concat([per_snr, overall], ignore_index=True)
    summary = _order(summary, systems, [])

    return EvalReport(
        rows=ok.reset_index(drop=True),
        cells=cells,
        summary=summary,
        deltas=compute_deltas(summary, baseline, metric_cols),
        errors=errors,
        baseline=baseline,
        metrics=metric_cols,
    )


def _order(df, systems, keys):

    '''
    Sorts by the system order given, then by *keys*,
    keeping the 'all' rows last within each system.
    '''

    df = df.copy()
    df["_sys"] = df["system"].map({s: k for k, s in enumerate(systems)})
    sort_keys = ["_sys"] + keys
    if "snr" in df.columns and not keys:
        df["_all"] = df["snr"] == ALL
        df["_snr"] = pd.to_numeric(df["snr"].where(df["snr"] != ALL), errors="coerce")
        sort_keys += ["_all", "_snr"]

    df = df.sort_values(sort_keys, kind="stable")
    return df.drop(columns=[c for c in df.columns if c.startswith("_")]).reset_index(drop=True)


def compute_deltas(summary, baseline, metric_cols):

    '''
    Per (system, snr) metric differences to the baseline
    system at the same snr label.
    '''

    ref = summary[summary["system"] == baseline].set_index("snr")[metric_cols]

    deltas = summary[["system", "snr"]].copy()
    for col in metric_cols:
        deltas[col] = summary[col].values - ref[col].reindex(summary["snr"]).values

    return deltas


# ============ Export =======================================


def config_hash(config):

    blob = json.dumps(config or {}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _records(df):
    # NaN -> null
    return json.loads(df.to_json(orient="records"))


def metric_series(report, metric):

    '''
    SNR x system matrix of one metric, for plotting
    '''

    per_snr = report.summary[report.summary["snr"] != ALL]
    table = per_snr.pivot(index="snr", columns="system", values=metric)
    table = table.loc[sorted(table.index, key=float)]
    systems = list(dict.fromkeys(per_snr["system"]))
    return table[systems]


def write_report(report, out_dir, config=None):

    """
    Writes report.tsv (summary with deltas), rows.tsv, report.json
    and one series_<metric>.tsv per metric into *out_dir*.

    Returns
    -------

    list of the written file paths
    """

    os.makedirs(out_dir, exist_ok=True)
    chash = config_hash(config)
    header = (
        f"# aamse {__version__} config_hash={chash} baseline={report.baseline} "
        f"ccr={metrics.CCR_FORMULA.replace(' ', '')}\n"
    )

    table = report.summary.copy()
    for col in report.metrics:
        table[f"delta_{col}"] = report.deltas[col].values

    written = []

    path = os.path.join(out_dir, "report.tsv")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(header)
        table.to_csv(f, sep="\t", index=False, float_format="%.6f", lineterminator="\n")
    written.append(path)

    path = os.path.join(out_dir, "rows.tsv")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(header)
        report.rows.to_csv(f, sep="\t", index=False, float_format="%.6f", lineterminator="\n")
    written.append(path)

    doc = {
        "tool": "aamse",
        "version": __version__,
        "config_hash": chash,
        "config": config or {},
        "baseline": report.baseline,
        "ccr_formula": metrics.CCR_FORMULA,
        "metrics": report.metrics,
        "summary": _records(report.summary),
        "deltas": _records(report.deltas),
        "cells": _records(report.cells),
        "errors": _records(report.errors),
    }
    path = os.path.join(out_dir, "report.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1, sort_keys=True, default=str)
    written.append(path)

    for metric in report.metrics:
        path = os.path.join(out_dir, f"series_{metric}.tsv")
        metric_series(report, metric).to_csv(
            path, sep="\t", float_format="%.6f", lineterminator="\n"
        )
        written.append(path)

    logger.info(f"Wrote report to {out_dir}")
    return written


def read_transcripts(path):

    '''
    utterance_id <TAB> transcript lines
    '''

    table = corpus.read_tsv(
        path, header=None, names=["utterance_id", "text"], dtype=str, keep_default_na=False
    )
    return dict(zip(table["utterance_id"], table["text"]))


def read_hypotheses(path):

    '''
    system <TAB> noisy_path <TAB> transcript lines
    '''

    table = corpus.read_tsv(
        path, header=None, names=["system", "noisy_path", "text"], dtype=str, keep_default_na=False
    )
    return {(s, p): t for s, p, t in zip(table["system"], table["noisy_path"], table["text"])}
