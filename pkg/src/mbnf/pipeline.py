"""Pipeline stages and the end-to-end runner.

Stages run in dependency order, each owning one subdirectory of the run
directory. A stage is considered complete when all of its declared outputs
exist, so deleting one stage's outputs and re-running the pipeline reruns
exactly that stage (and nothing upstream). Outputs contain no timestamps;
two runs with the same configuration and seed produce byte-identical
archives.
"""

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from types import SimpleNamespace

import numpy as np

from . import aligner as alignmod
from . import corpus as corpusmod
from . import dsp, gmm, ivector, metrics
from . import net as netmod
from .archive import ArchiveReader, ArchiveWriter
from .config import dump_config, synth_config
from .errors import ConfigError, DataError, OverwriteError
from .net import NetSpec, TrainSchedule
from .util import STREAM_SPLIT, substream

logger = logging.getLogger(__name__)

SPEED_FACTORS = (0.9, 1.1)  # 1.0 is the untouched original


def _outputs_exist(run_dir, paths):
    return all(os.path.exists(os.path.join(run_dir, p)) for p in paths)


def _check_overwrite(run_dir, paths, force):
    existing = [p for p in paths if os.path.exists(os.path.join(run_dir, p))]
    if existing and not force:
        raise OverwriteError(
            f"outputs exist in {run_dir}: {', '.join(existing)} (use --force)"
        )


def _ensure_dir(path):
    os.makedirs(path, exist_ok=True)


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

SYNTH_OUTPUTS = (
    "synth/manifest.jsonl",
    "synth/cs_refs.jsonl",
    "synth/gold.mbna",
    "synth/wav",
)


def stage_synth(cfg, run_dir, force=False):
    scfg = synth_config(cfg)
    if sum(spec.num_utterances for spec in scfg.languages) == 0:
        raise ConfigError("synthetic corpus has zero utterances")
    _check_overwrite(run_dir, SYNTH_OUTPUTS, force)
    out = os.path.join(run_dir, "synth")
    _ensure_dir(os.path.join(out, "wav"))
    records, _, gold = corpusmod.synth_corpus(scfg)
    segments, _ = corpusmod.synth_waveforms(scfg)
    for rec, seg in zip(records, segments):
        rel = os.path.join("wav", f"{rec.utt_id}.wav")
        dsp.write_wav(os.path.join(out, rel), seg)
        rec.audio_ref = rel
    corpusmod.write_manifest(records, os.path.join(out, "manifest.jsonl"))
    cs_refs = corpusmod.synth_cs_transcripts(scfg, cfg.corpus.cs_utterances)
    corpusmod.write_manifest(cs_refs, os.path.join(out, "cs_refs.jsonl"))
    with ArchiveWriter(os.path.join(out, "gold.mbna"), force=True) as w:
        for utt_id in sorted(gold):
            w.put("align", utt_id, gold[utt_id].astype(np.uint32))
    return {"utterances": len(records), "cs_utterances": len(cs_refs)}


# ---------------------------------------------------------------------------
# extract
# ---------------------------------------------------------------------------

EXTRACT_OUTPUTS = ("feats/feats.mbna", "feats/manifest.jsonl")
EXTRACT_KINDS = ("mfcc13dd", "mfcc40", "pitch3")


def _extract_one(audio, kinds, cfg13, cfg40):
    feats = {}
    if "mfcc13dd" in kinds:
        feats["mfcc13dd"] = dsp.add_deltas(dsp.mfcc(audio, cfg13))
    if "mfcc40" in kinds:
        feats["mfcc40"] = dsp.mfcc(audio, cfg40)
    if "pitch3" in kinds:
        feats["pitch3"] = dsp.pitch3(audio, cfg13)
    return feats


def stage_extract(cfg, run_dir, force=False, kinds=EXTRACT_KINDS, jobs=1):
    unknown = set(kinds) - set(EXTRACT_KINDS)
    if unknown:
        raise ConfigError(f"unknown feature kinds: {sorted(unknown)}")
    _check_overwrite(run_dir, EXTRACT_OUTPUTS, force)
    synth_dir = os.path.join(run_dir, "synth")
    records = corpusmod.load_manifest(os.path.join(synth_dir, "manifest.jsonl"))
    missing = [
        rec.utt_id
        for rec in records
        if rec.audio_ref is None or not os.path.exists(os.path.join(synth_dir, rec.audio_ref))
    ]
    if missing:
        raise DataError(f"missing audio for: {', '.join(missing)}")
    cfg13 = dsp.MfccConfig.mfcc13(sample_rate_hz=cfg.features.sample_rate_hz)
    cfg40 = dsp.MfccConfig.mfcc40(sample_rate_hz=cfg.features.sample_rate_hz)

    def load_audio(rec):
        return dsp.read_wav(os.path.join(synth_dir, rec.audio_ref), utt_id=rec.utt_id)

    work = []  # (utt_id, audio, source record)
    out_records = []
    for rec in records:
        audio = load_audio(rec)
        work.append((rec.utt_id, audio, rec))
        out_records.append(rec)
        if cfg.features.augment:
            for factor in SPEED_FACTORS:
                utt_id = f"{rec.utt_id}#sp{factor}"
                perturbed = dsp.speed_perturb(audio, factor)
                perturbed.utt_id = utt_id
                work.append((utt_id, perturbed, rec))
                out_records.append(
                    corpusmod.UtteranceRecord(
                        utt_id=utt_id,
                        tokens=list(rec.tokens),
                        phone_seq=list(rec.phone_seq),
                    )
                )

    def run_one(item):
        utt_id, audio, _ = item
        return utt_id, _extract_one(audio, kinds, cfg13, cfg40)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = dict(pool.map(run_one, work))
    else:
        results = dict(run_one(item) for item in work)
    feats_dir = os.path.join(run_dir, "feats")
    _ensure_dir(feats_dir)
    with ArchiveWriter(os.path.join(feats_dir, "feats.mbna"), force=True) as w:
        for utt_id in sorted(results):
            for kind, feat in sorted(results[utt_id].items()):
                w.put(kind, utt_id, feat.data)
    corpusmod.write_manifest(out_records, os.path.join(feats_dir, "manifest.jsonl"))
    return {"utterances": len(out_records), "kinds": sorted(kinds)}


# ---------------------------------------------------------------------------
# ubm / ivector
# ---------------------------------------------------------------------------

UBM_OUTPUTS = ("ubm/ubm.mbna",)


def stage_ubm(cfg, run_dir, force=False):
    _check_overwrite(run_dir, UBM_OUTPUTS, force)
    with ArchiveReader(os.path.join(run_dir, "feats", "feats.mbna")) as r:
        frames = [r.get("mfcc13dd", key) for key in r.keys("mfcc13dd")]
    model, trace = gmm.em_fit_gmm(
        np.vstack(frames), cfg.ubm.num_comp, iters=cfg.ubm.iters, seed=cfg.seed
    )
    out = os.path.join(run_dir, "ubm")
    _ensure_dir(out)
    with ArchiveWriter(os.path.join(out, "ubm.mbna"), force=True) as w:
        w.put("ubm", "weights", model.weights)
        w.put("ubm", "means", model.means)
        w.put("ubm", "vars", model.vars)
    return {"loglik_trace": trace}


def _load_ubm(run_dir):
    with ArchiveReader(os.path.join(run_dir, "ubm", "ubm.mbna")) as r:
        return gmm.DiagGmm(
            weights=r.get("ubm", "weights")[0],
            means=r.get("ubm", "means"),
            vars=r.get("ubm", "vars"),
        )


IVECTOR_OUTPUTS = ("ivector/tv.mbna", "ivector/ivecs.mbna")


def stage_ivector(cfg, run_dir, force=False):
    _check_overwrite(run_dir, IVECTOR_OUTPUTS, force)
    ubm = _load_ubm(run_dir)
    with ArchiveReader(os.path.join(run_dir, "feats", "feats.mbna")) as r:
        keys = r.keys("mfcc13dd")
        stats = {key: ivector.accumulate_bw_stats(ubm, r.get("mfcc13dd", key)) for key in keys}
    model, trace = ivector.train_tmatrix(
        ubm, [stats[k] for k in keys], cfg.ivector.dim, iters=cfg.ivector.iters, seed=cfg.seed
    )
    out = os.path.join(run_dir, "ivector")
    _ensure_dir(out)
    with ArchiveWriter(os.path.join(out, "tv.mbna"), force=True) as w:
        w.put("tvmodel", "T", model.T)
        w.put("tvmodel", "ubm/weights", ubm.weights)
        w.put("tvmodel", "ubm/means", ubm.means)
        w.put("tvmodel", "ubm/vars", ubm.vars)
    with ArchiveWriter(os.path.join(out, "ivecs.mbna"), force=True) as w:
        for key in keys:
            w.put("ivec", key, ivector.extract_ivector(model, stats[key]))
    return {"objective_trace": trace}


def _load_tvmodel(run_dir):
    with ArchiveReader(os.path.join(run_dir, "ivector", "tv.mbna")) as r:
        ubm = gmm.DiagGmm(
            weights=r.get("tvmodel", "ubm/weights")[0],
            means=r.get("tvmodel", "ubm/means"),
            vars=r.get("tvmodel", "ubm/vars"),
        )
        T = r.get("tvmodel", "T")
    return ivector.TvModel(ubm=ubm, T=T, ivec_dim=T.shape[1])


# ---------------------------------------------------------------------------
# align
# ---------------------------------------------------------------------------

ALIGN_OUTPUTS = ("align/align.mbna", "align/align_summary.json")


def _phonesets(cfg):
    return {
        code: corpusmod.make_phoneset(
            code, i, cfg.corpus.phones_per_language, cfg.corpus.states_per_phone
        )
        for i, code in enumerate(cfg.corpus.languages)
    }


def _records_by_lang(records):
    grouped = {}
    for rec in records:
        if not rec.phone_seq:
            continue
        code = rec.phone_seq[0][1]
        grouped.setdefault(code, []).append(rec)
    return grouped


def _alignment_features(r, utt_id, use_pitch):
    X = r.get("mfcc13dd", utt_id)
    if use_pitch:
        X = np.hstack([X, r.get("pitch3", utt_id)])
    return X


def stage_align(cfg, run_dir, force=False):
    _check_overwrite(run_dir, ALIGN_OUTPUTS, force)
    records = corpusmod.load_manifest(os.path.join(run_dir, "feats", "manifest.jsonl"))
    grouped = _records_by_lang(records)
    phonesets = _phonesets(cfg)
    gold_path = os.path.join(run_dir, "synth", "gold.mbna")
    gold = {}
    if os.path.exists(gold_path):
        with ArchiveReader(gold_path) as r:
            gold = {k: r.get("align", k)[0].astype(np.int64) for k in r.keys("align")}
    summary = {"languages": {}}
    out = os.path.join(run_dir, "align")
    _ensure_dir(out)
    with ArchiveReader(os.path.join(run_dir, "feats", "feats.mbna")) as r:
        with ArchiveWriter(os.path.join(out, "align.mbna"), force=True) as w:
            for code in cfg.corpus.languages:
                recs = grouped.get(code, [])
                if not recs:
                    raise DataError(f"no utterances for language {code}")
                feats = {
                    rec.utt_id: SimpleNamespace(
                        data=_alignment_features(r, rec.utt_id, cfg.aligner.use_pitch),
                        utt_id=rec.utt_id,
                    )
                    for rec in recs
                }
                hmms, trace = alignmod.train_monophone(
                    recs,
                    feats,
                    phonesets[code],
                    iters=cfg.aligner.iters,
                    num_comp=cfg.aligner.num_comp,
                    seed=cfg.seed,
                )
                accs = []
                for rec in recs:
                    align, _ = alignmod.viterbi_align(hmms, feats[rec.utt_id], rec.phone_seq)
                    w.put("align", rec.utt_id, align.states.astype(np.uint32))
                    base = rec.utt_id.split("#")[0]
                    if base == rec.utt_id and base in gold:
                        mapped = corpusmod.gold_for_waveform_frames(
                            gold[base], align.num_frames
                        )
                        accs.append(alignmod.frame_accuracy(align, mapped))
                summary["languages"][code] = {
                    "viterbi_loglik_trace": trace,
                    "gold_frame_accuracy": float(np.mean(accs)) if accs else None,
                }
    with open(os.path.join(out, "align_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    return summary


# ---------------------------------------------------------------------------
# mbnf-train / mbnf-extract / combine
# ---------------------------------------------------------------------------

TRAIN_OUTPUTS = ("net/net.mbna", "net/history.json")


def _net_input(r, ivecs, utt_id):
    """Network input features: mfcc40 | pitch3 | i-vector (replicated)."""
    mfcc40 = dsp.FeatureMatrix(utt_id=utt_id, kind="mfcc40", data=r.get("mfcc40", utt_id))
    pitch = dsp.FeatureMatrix(utt_id=utt_id, kind="pitch3", data=r.get("pitch3", utt_id))
    return netmod.combine_features([mfcc40, pitch], ivecs[utt_id])


def _net_spec(cfg, input_dim=None):
    phonesets = _phonesets(cfg)
    blocks = [(code, phonesets[code].num_states) for code in cfg.corpus.languages]
    raw_dim = 40 + 3 + cfg.ivector.dim
    context = netmod.default_context(cfg.net.num_hidden)
    return NetSpec(
        input_dim=input_dim or raw_dim * len(context[0]),
        hidden_dim=cfg.net.hidden_dim,
        num_hidden=cfg.net.num_hidden,
        bottleneck_dim=cfg.net.bottleneck_dim,
        blocks=blocks,
        context=context,
        seed=cfg.seed,
    )


def save_net(path, network, norm=None):
    spec = network.spec
    spec_obj = {
        "input_dim": spec.input_dim,
        "hidden_dim": spec.hidden_dim,
        "num_hidden": spec.num_hidden,
        "bottleneck_dim": spec.bottleneck_dim,
        "blocks": [[code, size] for code, size in spec.blocks],
        "context": spec.context,
        "seed": spec.seed,
    }
    raw = json.dumps(spec_obj, sort_keys=True).encode("utf-8")
    with ArchiveWriter(path, force=True) as w:
        w.put("net", "spec", np.frombuffer(raw, dtype=np.uint8).astype(np.uint32))
        if norm is not None:
            w.put("net", "norm/mean", norm[0])
            w.put("net", "norm/std", norm[1])
        for name, arr in network.param_items():
            w.put("net", name, np.asarray(arr, dtype=np.float64))


def load_net(path):
    with ArchiveReader(path) as r:
        raw = bytes(r.get("net", "spec")[0].astype(np.uint8))
        obj = json.loads(raw.decode("utf-8"))
        norm = None
        if ("net", "norm/mean") in r:
            norm = (r.get("net", "norm/mean")[0], r.get("net", "norm/std")[0])
        spec = NetSpec(
            input_dim=obj["input_dim"],
            hidden_dim=obj["hidden_dim"],
            num_hidden=obj["num_hidden"],
            bottleneck_dim=obj["bottleneck_dim"],
            blocks=[(code, size) for code, size in obj["blocks"]],
            context=[list(c) for c in obj["context"]],
            seed=obj["seed"],
        )
        network = netmod.BlockSoftmaxNet(spec=spec)
        for i in range(spec.num_hidden):
            network.hidden_w.append(r.get("net", f"h{i}/W"))
            network.hidden_b.append(r.get("net", f"h{i}/b")[0])
        network.bn_w = r.get("net", "bn/W")
        network.bn_b = r.get("net", "bn/b")[0]
        for code, _ in spec.blocks:
            network.out_w[code] = r.get("net", f"out/{code}/W")
            network.out_b[code] = r.get("net", f"out/{code}/b")[0]
    return network, norm


def _load_ivecs(run_dir):
    with ArchiveReader(os.path.join(run_dir, "ivector", "ivecs.mbna")) as r:
        return {k: r.get("ivec", k)[0] for k in r.keys("ivec")}


def stage_train(cfg, run_dir, force=False):
    _check_overwrite(run_dir, TRAIN_OUTPUTS, force)
    records = corpusmod.load_manifest(os.path.join(run_dir, "feats", "manifest.jsonl"))
    grouped = _records_by_lang(records)
    ivecs = _load_ivecs(run_dir)
    spec = _net_spec(cfg)
    network = netmod.init_net(spec)
    raw = []
    with ArchiveReader(os.path.join(run_dir, "feats", "feats.mbna")) as r, ArchiveReader(
        os.path.join(run_dir, "align", "align.mbna")
    ) as ra:
        for code in cfg.corpus.languages:
            for rec in grouped.get(code, []):
                feats = _net_input(r, ivecs, rec.utt_id)
                targets = ra.get("align", rec.utt_id)[0].astype(np.int64)
                raw.append((feats.data, targets, code))
    # Per-dimension input normalization over the training frames; raw MFCC
    # log-energy scales are far too large for SGD from a He init.
    pooled = np.vstack([x for x, _, _ in raw])
    mean = pooled.mean(axis=0)
    std = np.maximum(pooled.std(axis=0), 1e-8)
    items = [
        (netmod.splice((x - mean) / std, spec.context[0]), y, code) for x, y, code in raw
    ]
    schedule = TrainSchedule(
        epochs=cfg.net.epochs,
        batch_size=cfg.net.batch_size,
        learning_rate=cfg.net.learning_rate,
        decay=cfg.net.decay,
        sampling=cfg.net.sampling,
        seed=cfg.seed,
    )
    network, history = netmod.train(network, items, schedule)
    out = os.path.join(run_dir, "net")
    _ensure_dir(out)
    save_net(os.path.join(out, "net.mbna"), network, norm=(mean, std))
    with open(os.path.join(out, "history.json"), "w") as fh:
        json.dump(history, fh, indent=2)
    return {"final_epoch": history[-1] if history else None}


BNF_OUTPUTS = ("bnf/bnf.mbna",)


def stage_bnf(cfg, run_dir, force=False):
    _check_overwrite(run_dir, BNF_OUTPUTS, force)
    network, norm = load_net(os.path.join(run_dir, "net", "net.mbna"))
    ivecs = _load_ivecs(run_dir)
    out = os.path.join(run_dir, "bnf")
    _ensure_dir(out)
    with ArchiveReader(os.path.join(run_dir, "feats", "feats.mbna")) as r:
        keys = r.keys("mfcc40")
        with ArchiveWriter(os.path.join(out, "bnf.mbna"), force=True) as w:
            for utt_id in keys:
                feats = _net_input(r, ivecs, utt_id)
                if norm is not None:
                    feats = dsp.FeatureMatrix(
                        utt_id=utt_id,
                        kind="combined",
                        data=(feats.data - norm[0]) / norm[1],
                        frame_shift_ms=feats.frame_shift_ms,
                    )
                bnf = netmod.extract_bnf(network, feats)
                w.put("bnf", utt_id, bnf.data)
    return {"utterances": len(keys), "bottleneck_dim": network.spec.bottleneck_dim}


COMBINE_OUTPUTS = ("combined/combined.mbna",)


def stage_combine(cfg, run_dir, force=False):
    _check_overwrite(run_dir, COMBINE_OUTPUTS, force)
    ivecs = _load_ivecs(run_dir)
    out = os.path.join(run_dir, "combined")
    _ensure_dir(out)
    with ArchiveReader(os.path.join(run_dir, "feats", "feats.mbna")) as r, ArchiveReader(
        os.path.join(run_dir, "bnf", "bnf.mbna")
    ) as rb:
        keys = r.keys("mfcc40")
        with ArchiveWriter(os.path.join(out, "combined.mbna"), force=True) as w:
            for utt_id in keys:
                base = _net_input(r, ivecs, utt_id)
                bnf = dsp.FeatureMatrix(
                    utt_id=utt_id, kind="bnf", data=rb.get("bnf", utt_id)
                )
                final = netmod.combine_features([base, bnf])
                w.put("combined", utt_id, final.data)
    return {"utterances": len(keys)}


# ---------------------------------------------------------------------------
# probe / score
# ---------------------------------------------------------------------------

PROBE_OUTPUTS = ("probe/probe.json",)


def _probe_split(records, cfg):
    """Per-language train/test split over base utterances; augmented copies
    follow their source so no test material leaks into training."""
    grouped = _records_by_lang(records)
    split = {}
    for code in cfg.corpus.languages:
        base_ids = sorted({rec.utt_id.split("#")[0] for rec in grouped.get(code, [])})
        rng = substream(cfg.seed, STREAM_SPLIT, cfg.corpus.languages.index(code))
        order = list(rng.permutation(len(base_ids)))
        n_train = max(1, int(round(cfg.probe.train_fraction * len(base_ids))))
        if n_train >= len(base_ids):
            n_train = len(base_ids) - 1
        if n_train < 1:
            raise DataError(f"language {code}: too few utterances to split")
        train_base = {base_ids[i] for i in order[:n_train]}
        split[code] = train_base
    return split


def stage_probe(cfg, run_dir, force=False):
    _check_overwrite(run_dir, PROBE_OUTPUTS, force)
    records = corpusmod.load_manifest(os.path.join(run_dir, "feats", "manifest.jsonl"))
    grouped = _records_by_lang(records)
    phonesets = _phonesets(cfg)
    blocks = [(code, phonesets[code].num_states) for code in cfg.corpus.languages]
    split = _probe_split(records, cfg)
    sets = {"mfcc40": {"train": [], "test": []}, "combined": {"train": [], "test": []}}
    test_counts = {}
    with ArchiveReader(os.path.join(run_dir, "feats", "feats.mbna")) as r, ArchiveReader(
        os.path.join(run_dir, "combined", "combined.mbna")
    ) as rc, ArchiveReader(os.path.join(run_dir, "align", "align.mbna")) as ra:
        for code in cfg.corpus.languages:
            for rec in grouped.get(code, []):
                part = "train" if rec.utt_id.split("#")[0] in split[code] else "test"
                targets = ra.get("align", rec.utt_id)[0].astype(np.int64)
                mfcc40 = r.get("mfcc40", rec.utt_id)
                combined = rc.get("combined", rec.utt_id)
                sets["mfcc40"][part].append((mfcc40, targets, code))
                sets["combined"][part].append((combined, targets, code))
                if part == "test":
                    test_counts[code] = test_counts.get(code, 0) + targets.shape[0]
    result = {}
    for name in ("mfcc40", "combined"):
        acc = netmod.probe_eval(
            sets[name]["train"],
            sets[name]["test"],
            blocks,
            epochs=cfg.probe.epochs,
            lr=cfg.probe.learning_rate,
            batch_size=cfg.probe.batch_size,
            seed=cfg.seed,
        )
        total = sum(test_counts.values())
        overall = sum(acc[code] * test_counts[code] for code in acc) / total
        result[name] = {"per_language": acc, "overall": overall}
    result["improvement"] = result["combined"]["overall"] - result["mfcc40"]["overall"]
    out = os.path.join(run_dir, "probe")
    _ensure_dir(out)
    with open(os.path.join(out, "probe.json"), "w") as fh:
        json.dump(result, fh, indent=2)
    return result


SCORE_OUTPUTS = ("score/hyp.tsv", "score/score.json", "score/score.txt")


def stage_score(cfg, run_dir, force=False):
    _check_overwrite(run_dir, SCORE_OUTPUTS, force)
    refs = corpusmod.load_manifest(os.path.join(run_dir, "synth", "cs_refs.jsonl"))
    scfg = synth_config(cfg)
    hyps = corpusmod.synth_hypotheses(
        scfg,
        refs,
        sub_rate=cfg.score.sub_rate,
        del_rate=cfg.score.del_rate,
        ins_rate=cfg.score.ins_rate,
    )
    out = os.path.join(run_dir, "score")
    _ensure_dir(out)
    metrics.write_hypotheses(hyps, os.path.join(out, "hyp.tsv"))
    report = metrics.score_corpus(refs, hyps)
    with open(os.path.join(out, "score.json"), "w") as fh:
        fh.write(report.to_json() + "\n")
    with open(os.path.join(out, "score.txt"), "w") as fh:
        fh.write(report.render_table() + "\n")
    return report.to_dict()


# ---------------------------------------------------------------------------
# runner
# ---------------------------------------------------------------------------

STAGES = (
    ("synth", SYNTH_OUTPUTS, stage_synth),
    ("extract", EXTRACT_OUTPUTS, stage_extract),
    ("ubm", UBM_OUTPUTS, stage_ubm),
    ("ivector", IVECTOR_OUTPUTS, stage_ivector),
    ("align", ALIGN_OUTPUTS, stage_align),
    ("mbnf-train", TRAIN_OUTPUTS, stage_train),
    ("mbnf-extract", BNF_OUTPUTS, stage_bnf),
    ("combine", COMBINE_OUTPUTS, stage_combine),
    ("probe", PROBE_OUTPUTS, stage_probe),
    ("score", SCORE_OUTPUTS, stage_score),
)


class RunLock:
    """Exclusive ownership of a run directory while the pipeline executes."""

    def __init__(self, run_dir):
        self.path = os.path.join(run_dir, ".lock")

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise OverwriteError(
                f"run directory is locked by another process: {self.path}"
            ) from None
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        return self

    def __exit__(self, *exc):
        try:
            os.remove(self.path)
        except FileNotFoundError:
            pass
        return False


def run_pipeline(cfg, run_dir, force=False, jobs=1):
    """Run all stages in dependency order; completed stages are skipped.

    Writes the resolved config and a summary with per-stage wall times plus
    the probe comparison into the run directory.
    """
    _ensure_dir(run_dir)
    with RunLock(run_dir):
        with open(os.path.join(run_dir, "config.ini"), "w") as fh:
            fh.write(dump_config(cfg))
        summary = {"stages": {}, "seed": cfg.seed, "preset": cfg.preset}
        for name, outputs, fn in STAGES:
            if not force and _outputs_exist(run_dir, outputs):
                logger.info("stage %s: outputs present, skipping", name)
                summary["stages"][name] = {"skipped": True}
                continue
            logger.info("stage %s: running", name)
            start = time.perf_counter()
            kwargs = {"jobs": jobs} if name == "extract" else {}
            result = fn(cfg, run_dir, force=True, **kwargs)
            elapsed = time.perf_counter() - start
            summary["stages"][name] = {"skipped": False, "seconds": elapsed}
            if name == "probe":
                summary["probe"] = result
            elif name == "align":
                summary["align"] = {
                    code: info["gold_frame_accuracy"]
                    for code, info in result["languages"].items()
                }
        with open(os.path.join(run_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2)
    return summary


def archive_checksums(run_dir):
    """SHA-256 of every archive in the run directory, keyed by relative path."""
    import hashlib

    sums = {}
    for root, _dirs, files in os.walk(run_dir):
        for fname in sorted(files):
            if fname.endswith(".mbna"):
                path = os.path.join(root, fname)
                with open(path, "rb") as fh:
                    digest = hashlib.sha256(fh.read()).hexdigest()
                sums[os.path.relpath(path, run_dir)] = digest
    return sums
