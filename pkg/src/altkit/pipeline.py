"""Experiment stages behind the CLI: synth -> features -> AM/LM training ->
first-pass decoding -> lattice rescoring -> scoring, plus attention and
parameter reports.

Every stage reads and writes under one run directory, records the files it
produced in ``<stage>/outputs.json`` and writes each file atomically.
"""

import csv
import hashlib
import io
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import attention_analysis as aa
from .acoustic import (ModelConfig, SpeakerEmbedding, TrainConfig, Utterance, AcousticModel,
                       build_model, closed_form_param_count, compute_speaker_embedding,
                       forward_posteriors, perturb_labels, read_labels, train, write_labels,
                       write_loss_curve)
from .config import sub_seed
from .decoder import (DecodeParams, best_path, build_graph, decode, lattice_stats, parse_lattice,
                      rescore_ngram, rescore_rnnlm)
from .features import (AudioSignal, FeatureConfig, apply_cmvn, load_wav,
                       mel_spectrogram, read_feature_archive, read_manifest, speaker_stats,
                       speed_perturb, write_feature_archive)
from .lexicon import load_lexicon, make_unk_model
from .lm.ngram import attach_unk, load_arpa, perplexity, read_corpus, train_ngram
from .lm.rnnlm import RecurrentLM, RNNLMConfig, perplexity as rnn_perplexity, train_rnnlm
from .scoring import read_text_file, score_dataset
from .synth import SPLITS, SynthSpec, generate, read_phones

log = logging.getLogger("altkit")

FIRST_PASS = ("3G", "3G_unk")
# distinct-sequence counts above this are reported as the cap (and flagged inexact)
STATS_SEQUENCE_LIMIT = 1000
LM_ROWS = ("3G", "3G_unk", "4G", "4G_unk")
RESULTS_HEADER = ["lm", "rescore", "dev_wer", "test_wer"]
RESCORE = ("none", "rnnlm")
MODELS = {"ctdnn_sa": "CTDNN_SA", "ctdnn": "CTDNN"}


class MissingInputError(FileNotFoundError):
    exit_code = 3


# ---------------------------------------------------------------- run-dir helpers

class Run:
    """Paths inside one run directory plus the config driving it."""

    def __init__(self, cfg, out, jobs=1):
        self.cfg = cfg
        self.out = os.path.abspath(out)
        self.jobs = max(1, int(jobs))
        os.makedirs(self.out, exist_ok=True)

    def path(self, *parts):
        return os.path.join(self.out, *parts)

    @property
    def data(self):
        return os.path.abspath(self.cfg.data) if self.cfg.data else self.path("data")

    def require(self, *paths):
        for p in paths:
            if not os.path.exists(p):
                raise MissingInputError(f"missing input: {p} (run the earlier stage first)")


def atomic_write(path, data):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    tmp = path + ".tmp"
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as f:
        f.write(data)
    os.replace(tmp, path)
    return path


def write_outputs(run, stage, files):
    """Record produced files (relative path, size, sha256) for one stage."""
    entries = []
    for p in sorted(set(files)):
        with open(p, "rb") as f:
            digest = hashlib.sha256(f.read()).hexdigest()
        entries.append({"path": os.path.relpath(p, run.out), "bytes": os.path.getsize(p), "sha256": digest})
    atomic_write(run.path(stage, "outputs.json"), json.dumps({"stage": stage, "files": entries}, indent=2) + "\n")
    return files


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------- synth

def stage_synth(run):
    c = run.cfg
    spec = SynthSpec(utterances={"train": c.train_utterances, "dev": c.dev_utterances,
                                 "test": c.test_utterances},
                     lm_sentences=c.lm_sentences, seed=sub_seed(c.seed, "synth"))
    ds = generate(spec, run.data)
    files = [ds.lexicon, ds.phones, ds.lm_corpus]
    for split in ds.splits.values():
        files += list(split.values())
    return write_outputs(run, "data", files)


# ---------------------------------------------------------------- features

def _load_split(run, split, factors, fcfg):
    manifest = os.path.join(run.data, split, "manifest.tsv")
    labels_path = os.path.join(run.data, split, "labels.txt")
    run.require(manifest, labels_path)
    labels = read_labels(labels_path)
    feats, labs = [], {}
    for e in read_manifest(manifest):
        sig = load_wav(e.wav_path)
        for f in factors:
            spk = e.speaker_id if f == 1.0 else f"sp{f:g}-{e.speaker_id}"
            uid = e.utt_id if f == 1.0 else f"sp{f:g}-{e.utt_id}"
            s = sig if f == 1.0 else speed_perturb(sig, f)
            s = AudioSignal(s.samples, s.sample_rate, spk, uid)
            fm = mel_spectrogram(s, fcfg)
            lab = labels[e.utt_id]
            if f != 1.0:
                lab = perturb_labels(lab, f, fcfg.frame_samples(s.sample_rate),
                                     fcfg.hop_samples(s.sample_rate), fm.num_frames)
            if len(lab) != fm.num_frames:
                raise ValueError(f"{uid}: {len(lab)} labels for {fm.num_frames} frames")
            feats.append(fm)
            labs[uid] = lab
    return feats, labs


def stage_features(run):
    fcfg = FeatureConfig()
    files, embeddings = [], {}
    for split in SPLITS:
        factors = run.cfg.speed_factors if split == "train" else (1.0,)
        feats, labs = _load_split(run, split, factors, fcfg)
        by_spk = {}
        for fm in feats:
            by_spk.setdefault(fm.speaker_id, []).append(fm)
        stats = {s: speaker_stats(v) for s, v in by_spk.items()}
        for s, v in sorted(by_spk.items()):
            embeddings[s] = compute_speaker_embedding(v).vector
        normed = [apply_cmvn(fm, stats[fm.speaker_id], norm_vars=run.cfg.cmvn_variance) for fm in feats]
        ark = run.path("features", f"{split}.ark")
        os.makedirs(os.path.dirname(ark), exist_ok=True)
        write_feature_archive(ark, normed)
        lab_path = run.path("features", f"{split}.labels")
        write_labels(lab_path + ".tmp", labs)
        os.replace(lab_path + ".tmp", lab_path)
        files += [ark, ark + ".idx", lab_path]
    emb_path = run.path("features", "embeddings.tsv")
    atomic_write(emb_path, "".join(f"{s}\t{' '.join(repr(float(v)) for v in vec)}\n"
                                   for s, vec in sorted(embeddings.items())))
    files.append(emb_path)
    return write_outputs(run, "features", files)


def load_embeddings(path):
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            spk, _, vals = line.rstrip("\n").partition("\t")
            if spk:
                out[spk] = SpeakerEmbedding(spk, np.array([float(v) for v in vals.split()], dtype=np.float32))
    return out


def load_split_features(run, split):
    ark = run.path("features", f"{split}.ark")
    lab = run.path("features", f"{split}.labels")
    run.require(ark, lab)
    labels = read_labels(lab)
    return [Utterance(fm, labels[fm.utterance_id]) for fm in read_feature_archive(ark)]


# ---------------------------------------------------------------- acoustic models

def model_config(run, attention=True):
    c = run.cfg
    phones = read_phones(os.path.join(run.data, "phones.txt"))
    mc = ModelConfig.desk(output_units=len(phones), seed=sub_seed(c.seed, "am-init"))
    if attention:
        mc = mc.with_attention(c.num_heads, c.context_left, c.context_right, c.key_dim, c.value_dim)
    return mc


def train_config(run):
    c = run.cfg
    return TrainConfig(lr_initial=c.lr_initial, lr_final=c.lr_final, epochs=c.epochs,
                       minibatch_size=c.minibatch_size, models_to_average=c.models_to_average,
                       speed_factors=c.speed_factors, loss_reduction=c.loss_reduction,
                       max_param_change=c.max_param_change, seed=sub_seed(c.seed, "am-train"))


def stage_train_am(run, which=None, progress=None):
    which = which or (("ctdnn_sa", "ctdnn") if run.cfg.train_baseline else ("ctdnn_sa",))
    emb_path = run.path("features", "embeddings.tsv")
    run.require(emb_path)
    embeddings = load_embeddings(emb_path)
    train_set = load_split_features(run, "train")
    valid_set = load_split_features(run, "dev")
    files = []
    for name in which:
        model = build_model(model_config(run, attention=(name == "ctdnn_sa")))
        t0 = time.time()
        res = train(model, train_set, valid_set, embeddings, train_config(run), progress=progress)
        log.info("%s: %d params, trained in %.1f s", MODELS[name], model.num_params(), time.time() - t0)
        ckpt = run.path("am", f"{name}.ckpt")
        os.makedirs(os.path.dirname(ckpt), exist_ok=True)
        res.model.save(ckpt)
        curve = run.path("am", f"{name}_loss.csv")
        write_loss_curve(curve + ".tmp", res.curve)
        os.replace(curve + ".tmp", curve)
        files += [ckpt, curve]
    return write_outputs(run, "am", files)


# ---------------------------------------------------------------- language models

def _lexicon(run):
    path = os.path.join(run.data, "lexicon.txt")
    run.require(path)
    return load_lexicon(path)


def stage_train_lm(run, progress=None):
    c = run.cfg
    corpus_path = os.path.join(run.data, "lm_corpus.txt")
    run.require(corpus_path)
    corpus = read_corpus(corpus_path)
    lexicon = _lexicon(run)
    unk = make_unk_model(lexicon)
    dev = [w for _, w in read_text_file(os.path.join(run.data, "dev", "text"))]
    files, report = [], {}
    for order in (3, 4):
        base = train_ngram(corpus, order, discount=c.discount, vocab=lexicon.words)
        for name, model in ((f"{order}G", base), (f"{order}G_unk", attach_unk(base, unk))):
            path = run.path("lm", f"{name}.arpa")
            os.makedirs(os.path.dirname(path), exist_ok=True)
            atomic_write(path, model.to_arpa())
            files.append(path)
            report[name] = {"dev_perplexity": perplexity(model, dev)}
    if c.rnnlm:
        rcfg = RNNLMConfig(dim=c.rnnlm_dim, epochs=c.rnnlm_epochs, seed=sub_seed(c.seed, "rnnlm"))
        rnn = train_rnnlm(corpus, rcfg, valid=dev, progress=progress)
        path = run.path("lm", "rnnlm.ckpt")
        rnn.save(path)
        files.append(path)
        report["rnnlm"] = {"dev_perplexity": rnn_perplexity(rnn, dev), "epoch_perplexity": rnn.history}
    rep = run.path("lm", "perplexity.json")
    atomic_write(rep, json.dumps(report, indent=2, sort_keys=True) + "\n")
    files.append(rep)
    return write_outputs(run, "lm", files)


def load_lm(run, name):
    path = run.path("lm", f"{name}.arpa")
    run.require(path)
    model = load_arpa(path)
    if name.endswith("_unk"):
        model.unk_model = make_unk_model(_lexicon(run))
    return model


# ---------------------------------------------------------------- decoding

def decode_params(run):
    c = run.cfg
    return DecodeParams(beam=c.beam, lattice_beam=c.lattice_beam, acoustic_scale=c.acoustic_scale,
                        word_insertion_penalty=c.word_insertion_penalty,
                        max_active_tokens=c.max_active_tokens)


def _decode_one(args):
    utt_id, logpost, graph, params = args
    hyp, lat = decode(logpost, graph, params)
    return utt_id, hyp.words, lat.to_text()


def write_lattice_archive(path, items):
    """``items``: (utt_id, lattice text). Blocks start with ``# utt <id>``."""
    atomic_write(path, "".join(f"# utt {u}\n{text}" for u, text in items))


def read_lattice_archive(path):
    out, cur, lines = [], None, []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.startswith("# utt "):
                if cur is not None:
                    out.append((cur, parse_lattice("".join(lines))))
                cur, lines = line[6:].strip(), []
            else:
                lines.append(line)
    if cur is not None:
        out.append((cur, parse_lattice("".join(lines))))
    return out


def _write_hyps(path, hyps):
    atomic_write(path, "".join(f"{u}\t{' '.join(w)}\n" for u, w in hyps))


def posteriors_for(run, model_name, split):
    ckpt = run.path("am", f"{model_name}.ckpt")
    run.require(ckpt)
    model = AcousticModel.load(ckpt)
    embeddings = load_embeddings(run.path("features", "embeddings.tsv"))
    utts = load_split_features(run, split)
    return [(u.utt_id, forward_posteriors(model, u.features, embeddings.get(u.speaker_id)))
            for u in utts]


def stage_decode(run, models=None, lms=FIRST_PASS, splits=("dev", "test")):
    models = models or (("ctdnn_sa", "ctdnn") if os.path.exists(run.path("am", "ctdnn.ckpt")) else ("ctdnn_sa",))
    lexicon = _lexicon(run)
    phones = read_phones(os.path.join(run.data, "phones.txt"))
    params = decode_params(run)
    files = []
    pool = ProcessPoolExecutor(run.jobs) if run.jobs > 1 else None
    try:
        for model_name in models:
            for split in splits:
                post = posteriors_for(run, model_name, split)
                for lm_name in lms:
                    # the baseline AM is only compared on the plain 3G first pass
                    if model_name != "ctdnn_sa" and lm_name != "3G":
                        continue
                    graph = build_graph(lexicon, load_lm(run, lm_name), phones)
                    jobs = [(u, p, graph, params) for u, p in post]
                    results = list(pool.map(_decode_one, jobs, chunksize=8)) if pool else [_decode_one(j) for j in jobs]
                    tag = f"{model_name}/{lm_name}"
                    lat_path = run.path("decode", tag, f"{split}.lats")
                    hyp_path = run.path("decode", tag, f"{split}.hyp")
                    write_lattice_archive(lat_path, [(u, t) for u, _, t in results])
                    _write_hyps(hyp_path, [(u, w) for u, w, _ in results])
                    files += [lat_path, hyp_path]
    finally:
        if pool:
            pool.shutdown()
    return write_outputs(run, "decode", files)


# ---------------------------------------------------------------- rescoring

def stage_rescore(run, splits=("dev", "test"), model_name="ctdnn_sa"):
    c = run.cfg
    rnn = None
    if c.rnnlm:
        path = run.path("lm", "rnnlm.ckpt")
        run.require(path)
        rnn = RecurrentLM.load(path)
    files, stats = [], {}
    for split in splits:
        for first in FIRST_PASS:
            src = run.path("decode", model_name, first, f"{split}.lats")
            run.require(src)
            lats = read_lattice_archive(src)
            four = first.replace("3G", "4G")
            lm4 = load_lm(run, four)
            sets = {first: lats, four: [(u, rescore_ngram(l, lm4)) for u, l in lats]}
            for name, items in sets.items():
                variants = {"none": items}
                if rnn is not None:
                    variants["rnnlm"] = [(u, rescore_rnnlm(l, rnn, c.rnnlm_weight, c.rnnlm_pruning_beam,
                                                           c.merge_order)) for u, l in items]
                for resc, lat_items in variants.items():
                    tag = f"{name}+{resc}"
                    if not (name == first and resc == "none"):
                        lat_path = run.path("rescore", tag, f"{split}.lats")
                        write_lattice_archive(lat_path, [(u, l.to_text()) for u, l in lat_items])
                        files.append(lat_path)
                    hyp_path = run.path("rescore", tag, f"{split}.hyp")
                    _write_hyps(hyp_path, [(u, best_path(l).words) for u, l in lat_items])
                    files.append(hyp_path)
                    st = [lattice_stats(l, limit=STATS_SEQUENCE_LIMIT) for _, l in lat_items]
                    stats[f"{tag}/{split}"] = {
                        "mean_nodes": float(np.mean([s[0] for s in st])),
                        "mean_arcs": float(np.mean([s[1] for s in st])),
                        "mean_word_sequences": float(np.mean([s[2] for s in st])),
                        "sequence_counts_exact": sum(bool(s[3]) for s in st),
                        "lattices": len(st),
                    }
    sp = run.path("rescore", "lattice_stats.json")
    atomic_write(sp, json.dumps(stats, indent=2, sort_keys=True) + "\n")
    files.append(sp)
    return write_outputs(run, "rescore", files)


# ---------------------------------------------------------------- scoring

def _corpus_wer(run, hyp_path, split):
    run.require(hyp_path)
    refs = read_text_file(os.path.join(run.data, split, "text"))
    hyps = dict(read_text_file(hyp_path))
    return score_dataset(refs, hyps).wer


def stage_score(run):
    rows = []
    for lm_name in LM_ROWS:
        for resc in RESCORE:
            if resc == "rnnlm" and not run.cfg.rnnlm:
                continue
            row = [lm_name, resc]
            for split in ("dev", "test"):
                hyp = run.path("rescore", f"{lm_name}+{resc}", f"{split}.hyp")
                row.append(f"{_corpus_wer(run, hyp, split):.2f}")
            rows.append(row)
    results = atomic_write(run.path("results.csv"), _csv_text(RESULTS_HEADER, rows))
    files = [results]
    model_rows = []
    for key, label in MODELS.items():
        hyp_dev = run.path("decode", key, "3G", "dev.hyp")
        if os.path.exists(hyp_dev):
            wers = [_corpus_wer(run, run.path("decode", key, "3G", f"{s}.hyp"), s) for s in ("dev", "test")]
            model_rows.append([label, "3G"] + [f"{w:.2f}" for w in wers])
    if model_rows:
        files.append(atomic_write(run.path("models.csv"),
                                  _csv_text(["model", "lm", "dev_wer", "test_wer"], model_rows)))
    write_outputs(run, "score", files)
    return files


def read_results(path):
    with open(path, encoding="utf-8") as f:
        return list(csv.DictReader(f))


# ---------------------------------------------------------------- reports

def stage_analyze_attention(run, model_path=None, split="dev"):
    model_path = model_path or run.path("am", "ctdnn_sa.ckpt")
    run.require(model_path)
    model = AcousticModel.load(model_path)
    embeddings = load_embeddings(run.path("features", "embeddings.tsv"))
    feats = [u.features for u in load_split_features(run, split)]
    prof = aa.extract_profile(model, feats, embeddings, os.path.basename(model_path), split)
    srt = aa.sort_heads(prof)
    files = [
        atomic_write(run.path("attention", "profile.csv"), aa.profile_to_csv(prof)),
        atomic_write(run.path("attention", "profile_sorted.csv"), aa.profile_to_csv(srt)),
        atomic_write(run.path("attention", "profile.svg"),
                     aa.profile_to_svg(srt, f"{prof.model_id} on {split}: heads sorted by leftmost weight")),
        atomic_write(run.path("attention", "report.json"),
                     json.dumps(aa.profile_report(prof), indent=2) + "\n"),
    ]
    return write_outputs(run, "attention", files)


def params_table(output_units=64):
    """(name, scale, closed-form count, runtime count) for CTDNN and CTDNN_SA head sweeps."""
    rows = []
    for scale, base in (("desk", ModelConfig.desk(output_units=output_units)),
                        ("full", ModelConfig(output_units=output_units))):
        variants = [("CTDNN", base)] + [(f"CTDNN_SA_H{h}", base.with_attention(num_heads=h))
                                        for h in (1, 15, 30, 60)]
        for name, cfg in variants:
            rows.append((name, scale, closed_form_param_count(cfg), build_model(cfg).num_params()))
    return rows


def stage_params_report(run):
    rows = params_table()
    path = atomic_write(run.path("params", "params.csv"),
                        _csv_text(["model", "scale", "closed_form", "measured"], rows))
    return write_outputs(run, "params", [path])


# ---------------------------------------------------------------- everything

def run_all(run, progress=None):
    timings = {}

    def timed(name, fn, *a, **kw):
        t0 = time.time()
        out = fn(*a, **kw)
        timings[name] = round(time.time() - t0, 2)
        log.info("stage %s done in %.1f s", name, timings[name])
        return out

    if not run.cfg.data:
        timed("synth", stage_synth, run)
    timed("features", stage_features, run)
    timed("train-am", stage_train_am, run, progress=progress)
    timed("train-lm", stage_train_lm, run)
    timed("decode", stage_decode, run)
    timed("rescore", stage_rescore, run)
    files = timed("score", stage_score, run)
    timed("analyze-attention", stage_analyze_attention, run)
    timed("params-report", stage_params_report, run)
    timings["total"] = round(sum(timings.values()), 2)
    atomic_write(run.path("timings.json"), json.dumps(timings, indent=2) + "\n")
    return files[0], timings
