"""Pipeline stages over a work directory.

Layout under ``work_dir``::

    corpus/                         synthetic corpus (``synth``)
    cluster/<lang>/                 model.zrsm, labels.csv, cdf.json
    filter/P<p>/                    labels.csv, report.json
    align/P<p>/                     transcriptions.csv, hmm_<lang>.json,
                                    align_phone.csv, align_state.csv, history.json
    train/P<p>/                     <net>.zrsn, <net>.log.jsonl
    extract/P<p>/<feats>/           manifest.csv, feats/*.zrsf
    abx/<feats>/ and abx/P<p>/<feats>/   <condition>.json, <condition>.csv
    reports/<command>.json          one run report per command

Every stage reads its inputs from disk, so stages can be rerun in isolation.
Stage seeds derive from the global seed and a per-stage constant.
"""
import json
import logging
import time
import traceback
from collections import OrderedDict
from pathlib import Path

import numpy as np

from . import abx as abx_mod
from .config import ConfigError
from .corpus import (REMOVED, CorpusManifest, Utterance, read_labels, read_manifest,
                     write_labels, write_manifest, write_transcriptions)
from .dpgmm import DpgmmConfig, cluster_cdf, dpgmm_assign, dpgmm_fit, load_model, save_model
from .features import cmvn, splice, write_feature_file
from .hmm import (alignment_labels, align_corpus, collapse, hmm_em_train, hmm_init_uniform,
                  save_hmm)
from .label_filter import filter_labels
from .mtl import (MtlNetwork, TaskDataset, TrainConfig, concat_features, extract_bnf,
                  load_network, mtl_train, save_network)
from .synth import generate_synthetic_corpus

log = logging.getLogger(__name__)

_STAGE_IDS = {"synth": 1, "cluster": 2, "align": 3, "train": 4}


def stage_seed(seed, stage, *extra):
    """64-bit seed for one stage (and optional sub-key) of a run."""
    ss = np.random.SeedSequence([int(seed), _STAGE_IDS[stage], *extra])
    return int(ss.generate_state(1, np.uint64)[0])


def _p_name(P):
    return f"P{format(P, '.4g')}"


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n", encoding="utf-8")


class Workspace:
    """Resolves stage paths and caches corpus data for one command."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.root = Path(cfg.paths.work_dir)
        self._manifest = None
        self._raw = None
        self._input = None
        self._spliced = None

    @property
    def manifest_path(self):
        p = self.cfg.paths.manifest
        return Path(p) if p else self.root / "corpus" / "manifest.csv"

    @property
    def segments_path(self):
        p = self.cfg.paths.segments
        return Path(p) if p else self.manifest_path.parent / "segments.csv"

    def path(self, *parts):
        return self.root.joinpath(*parts)

    def p_dir(self, stage, P):
        return self.root / stage / _p_name(P)

    def require(self, path, what):
        if not Path(path).exists():
            raise FileNotFoundError(f"{what} not found: {path}")
        return Path(path)

    def manifest(self):
        if self._manifest is None:
            self.require(self.manifest_path, "manifest")
            seg = self.segments_path if self.segments_path.exists() else None
            self._manifest = read_manifest(self.manifest_path, seg)
        return self._manifest

    def raw_features(self):
        if self._raw is None:
            self._raw = self.manifest().load_features()
        return self._raw

    def input_features(self):
        """Features fed to clustering, HMMs and the network (CMVN if configured)."""
        if self._input is None:
            raw = self.raw_features()
            if self.cfg.features.cmvn:
                self._input = OrderedDict((k, cmvn(v)) for k, v in raw.items())
            else:
                self._input = OrderedDict((k, v.astype(np.float64)) for k, v in raw.items())
        return self._input

    def spliced_features(self):
        if self._spliced is None:
            n = self.cfg.features.splice
            self._spliced = OrderedDict((k, splice(v, n)) for k, v in self.input_features().items())
        return self._spliced

    def utts_of(self, lang):
        return [u.utt_id for u in self.manifest().utterances if u.language_id == lang]


# -- stages -------------------------------------------------------------------

def run_synth(ws):
    cfg = ws.cfg
    if cfg.synth is None:
        raise ConfigError("synth: no 'synth' section in the config")
    out = ws.manifest_path.parent
    corpus = generate_synthetic_corpus(cfg.synth, stage_seed(cfg.seed, "synth"), out)
    ws._manifest = None
    return {"outputs": [str(out)],
            "metrics": {"utterances": len(corpus.manifest.utterances),
                        "segments": len(corpus.manifest.segments),
                        "frames": int(sum(v.shape[0] for v in corpus.features.values()))}}


def run_cluster(ws):
    cfg = ws.cfg
    feats = ws.input_features()
    metrics, outputs = OrderedDict(), []
    for li, lang in enumerate(ws.manifest().languages()):
        utts = ws.utts_of(lang)
        pooled = np.concatenate([feats[u] for u in utts])
        d = cfg.dpgmm
        dcfg = DpgmmConfig(alpha=d.alpha, sweeps=d.sweeps, seed=stage_seed(cfg.seed, "cluster", li),
                           init_clusters=d.init_clusters, kappa0=d.kappa0, a0=d.a0)
        model = dpgmm_fit(pooled, dcfg)
        labels = OrderedDict((u, dpgmm_assign(model, feats[u])) for u in utts)
        cdf = cluster_cdf(labels.values())
        out = ws.path("cluster", lang)
        out.mkdir(parents=True, exist_ok=True)
        save_model(out / "model.zrsm", model)
        write_labels(out / "labels.csv", labels)
        _write_json(out / "cdf.json", {"language": lang, "K": model.K, "N": model.N,
                                       "points": [[k, q] for k, q in cdf]})
        outputs.append(str(out))
        metrics[lang] = {"K": model.K, "frames": model.N, "cdf_last": cdf[-1][1],
                         "clusters_used": len(cdf)}
    return {"outputs": outputs, "metrics": metrics}


def run_filter(ws, Ps):
    outputs, metrics = [], OrderedDict()
    for P in Ps:
        out = ws.p_dir("filter", P)
        all_labels, report = OrderedDict(), OrderedDict()
        for lang in ws.manifest().languages():
            cdir = ws.require(ws.path("cluster", lang), "cluster output")
            K = load_model(cdir / "model.zrsm").K
            labels = read_labels(cdir / "labels.csv")
            keys = list(labels)
            pooled = np.concatenate([labels[k] for k in keys])
            res = filter_labels(pooled, K, P)
            report[lang] = res.report()
            offs = np.cumsum([0] + [labels[k].shape[0] for k in keys])
            for k, a, b in zip(keys, offs[:-1], offs[1:]):
                all_labels[k] = res.labels[a:b]
        write_labels(out / "labels.csv", all_labels)
        _write_json(out / "report.json", report)
        outputs.append(str(out))
        metrics[_p_name(P)] = report
    return {"outputs": outputs, "metrics": metrics}


def _hmm_data(ws, transcriptions, lang):
    feats = ws.input_features()
    return OrderedDict((u, (feats[u], transcriptions[u])) for u in ws.utts_of(lang)
                       if u in transcriptions and transcriptions[u])


def run_align(ws, Ps):
    cfg = ws.cfg
    outputs, metrics = [], OrderedDict()
    for P in Ps:
        fdir = ws.require(ws.p_dir("filter", P), "filter output")
        labels = read_labels(fdir / "labels.csv")
        trans = OrderedDict((k, collapse(v)) for k, v in labels.items())
        out = ws.p_dir("align", P)
        out.mkdir(parents=True, exist_ok=True)
        write_transcriptions(out / "transcriptions.csv", trans)
        phone, state, history = OrderedDict(), OrderedDict(), OrderedDict()
        for lang in ws.manifest().languages():
            data = _hmm_data(ws, trans, lang)
            if not data:
                raise ConfigError(f"align: no usable transcription for language {lang}")
            model = hmm_init_uniform({k: t for k, (_, t) in data.items()},
                                     {k: f for k, (f, _) in data.items()},
                                     cfg.hmm.num_components)
            model, hist = hmm_em_train(model, data, cfg.hmm.iterations)
            alis = align_corpus(model, data)
            save_hmm(out / f"hmm_{lang}.json", model)
            phone.update(alignment_labels(alis, "phone"))
            state.update(alignment_labels(alis, "state"))
            history[lang] = hist
        order = [k for k in labels if k in phone]
        write_labels(out / "align_phone.csv", OrderedDict((k, phone[k]) for k in order))
        write_labels(out / "align_state.csv", OrderedDict((k, state[k]) for k in order))
        _write_json(out / "history.json", history)
        outputs.append(str(out))
        metrics[_p_name(P)] = {lang: {"loglik_first": h[0], "loglik_last": h[-1]}
                               for lang, h in history.items()}
    return {"outputs": outputs, "metrics": metrics}


def _task_labels(ws, task, P):
    """Per-utterance class labels for one task (``REMOVED`` marks unused frames)."""
    if task.source == "dpgmm":
        path = ws.require(ws.p_dir("filter", P) / "labels.csv", "filter labels")
    elif task.source in ("dpgmm-hmm-phone", "dpgmm-hmm-state"):
        level = task.source.rsplit("-", 1)[1]
        path = ws.require(ws.p_dir("align", P) / f"align_{level}.csv", "alignments")
    else:
        path = ws.require(Path(task.path), "external label file")
    labels = read_labels(path)
    utts = ws.utts_of(task.language) if task.language else [u.utt_id for u in ws.manifest().utterances]
    return OrderedDict((u, labels[u]) for u in utts if u in labels)


def build_task_dataset(ws, task, P):
    spliced = ws.spliced_features()
    labels = _task_labels(ws, task, P)
    if not labels:
        raise ConfigError(f"task {task.task_id}: no labelled utterances")
    xs, ys = [], []
    for u, lab in labels.items():
        x = spliced[u]
        if lab.shape[0] != x.shape[0]:
            raise ConfigError(f"task {task.task_id}: {u} has {lab.shape[0]} labels for {x.shape[0]} frames")
        keep = lab != REMOVED
        xs.append(x[keep])
        ys.append(lab[keep])
    y = np.concatenate(ys)
    if task.source == "external":
        if y.size and y.min() < 0:
            raise ConfigError(f"task {task.task_id}: negative class ids")
        classes = int(y.max()) + 1
    else:
        uniq, y = np.unique(y, return_inverse=True)
        classes = int(uniq.shape[0])
    if classes < 2:
        raise ConfigError(f"task {task.task_id}: needs at least 2 classes")
    return TaskDataset(task.task_id, np.concatenate(xs), y), classes


def run_train(ws, Ps):
    cfg = ws.cfg
    m = cfg.mtl
    if not m.networks:
        raise ConfigError("train: mtl.networks is empty")
    outputs, metrics = [], OrderedDict()
    for P in Ps:
        out = ws.p_dir("train", P)
        out.mkdir(parents=True, exist_ok=True)
        pm = OrderedDict()
        for ni, spec in enumerate(m.networks):
            if not spec.tasks:
                raise ConfigError(f"train: network {spec.name!r} has an empty task list")
            datasets, heads = [], OrderedDict()
            for t in spec.tasks:
                ds, classes = build_task_dataset(ws, t, P)
                if ds.task_id in heads:
                    raise ConfigError(f"train: duplicate task {ds.task_id!r} in {spec.name!r}")
                datasets.append(ds)
                heads[ds.task_id] = classes
            seed = stage_seed(cfg.seed, "train", ni)
            net = MtlNetwork.create(datasets[0].frames.shape[1], m.shared_dims, m.bottleneck_dim,
                                    m.post_dims, heads, seed=seed, init_scale=m.init_scale)
            tcfg = TrainConfig(learning_rate=m.learning_rate, batch_size=m.batch_size,
                               max_epochs=m.max_epochs, cv_fraction=m.cv_fraction,
                               patience=m.patience, seed=seed)
            res = mtl_train(net, datasets, tcfg, log_path=out / f"{spec.name}.log.jsonl")
            save_network(out / f"{spec.name}.zrsn", res.net)
            outputs.append(str(out / f"{spec.name}.zrsn"))
            last = res.log[-1] if res.log else {}
            pm[spec.name] = {"tasks": list(heads), "classes": list(heads.values()),
                             "epochs": len(res.log), "final_cv": last.get("cv_loss_per_task")}
        metrics[_p_name(P)] = pm
    return {"outputs": outputs, "metrics": metrics}


def _write_feature_set(ws, out, feats):
    man = ws.manifest()
    (out / "feats").mkdir(parents=True, exist_ok=True)
    utts = []
    for u in man.utterances:
        rel = f"feats/{u.utt_id}.zrsf"
        write_feature_file(out / rel, feats[u.utt_id])
        utts.append(Utterance(u.utt_id, u.speaker_id, u.language_id, rel))
    write_manifest(out / "manifest.csv", CorpusManifest(utts))


def extracted_sets(cfg):
    """Names of the feature sets ``extract`` produces."""
    names = list(cfg.extract.networks or [n.name for n in cfg.mtl.networks])
    return names + ["+".join(group) for group in cfg.extract.concat]


def run_extract(ws, Ps):
    cfg = ws.cfg
    names = list(cfg.extract.networks or [n.name for n in cfg.mtl.networks])
    if not names:
        raise ConfigError("extract: no networks configured")
    spliced = ws.spliced_features()
    outputs = []
    for P in Ps:
        tdir = ws.p_dir("train", P)
        bnfs = OrderedDict()
        for name in names:
            net = load_network(ws.require(tdir / f"{name}.zrsn", "trained network"))
            bnfs[name] = OrderedDict((u, extract_bnf(net, x)) for u, x in spliced.items())
        for group in cfg.extract.concat:
            missing = [g for g in group if g not in bnfs]
            if missing:
                raise ConfigError(f"extract.concat: unknown networks {missing}")
            bnfs["+".join(group)] = OrderedDict(
                (u, concat_features([bnfs[g][u] for g in group])) for u in spliced)
        for name, feats in bnfs.items():
            out = ws.p_dir("extract", P) / name
            _write_feature_set(ws, out, feats)
            outputs.append(str(out))
    return {"outputs": outputs, "metrics": {"feature_sets": list(bnfs)}}


def _feature_sets(ws, Ps):
    """(label, output dir, features) for every ABX feature set."""
    cfg = ws.cfg
    sets = []
    if "raw" in cfg.abx.features:
        sets.append(("raw", ws.path("abx", "raw"), lambda: ws.raw_features()))
    if "input" in cfg.abx.features:
        sets.append(("input", ws.path("abx", "input"), lambda: ws.input_features()))
    if "bnf" in cfg.abx.features:
        for P in Ps:
            for name in extracted_sets(cfg):
                d = ws.require(ws.p_dir("extract", P) / name / "manifest.csv", "extracted features")
                loader = (lambda d=d: read_manifest(d).load_features())
                sets.append((f"{_p_name(P)}/{name}", ws.p_dir("abx", P) / name, loader))
    return sets


def run_abx(ws, Ps, conditions=None):
    cfg = ws.cfg
    conditions = conditions or cfg.abx.conditions
    man = ws.manifest()
    if not man.segments:
        raise ConfigError(f"abx: no segment annotations ({ws.segments_path})")
    man.check_segments({k: v.shape[0] for k, v in ws.raw_features().items()})
    outputs, metrics = [], OrderedDict()
    for label, out, loader in _feature_sets(ws, Ps):
        feats = loader()
        cache = abx_mod.DistanceCache(feats, man.segments)
        metrics[label] = OrderedDict()
        for cond in conditions:
            res = abx_mod.evaluate_abx(man, feats, cond, cfg.abx.aggregation, cache)
            abx_mod.write_abx_report(res, out / f"{cond}.json", out / f"{cond}.csv")
            outputs.append(str(out / f"{cond}.json"))
            metrics[label][cond] = res.overall
    return {"outputs": outputs, "metrics": metrics}


def run_all(ws, Ps):
    cfg = ws.cfg
    stages = OrderedDict()
    steps = []
    if cfg.synth is not None and not cfg.paths.manifest:
        steps.append(("synth", lambda: run_synth(ws)))
    steps += [("cluster", lambda: run_cluster(ws)),
              ("filter", lambda: run_filter(ws, Ps)),
              ("align", lambda: run_align(ws, Ps)),
              ("train", lambda: run_train(ws, Ps)),
              ("extract", lambda: run_extract(ws, Ps)),
              ("abx", lambda: run_abx(ws, Ps))]
    timings = OrderedDict()
    try:
        for name, fn in steps:
            t0 = time.perf_counter()
            stages[name] = fn()
            timings[name] = time.perf_counter() - t0
    finally:
        ws.stage_timings = timings
        ws.partial = stages
    abx_m = stages["abx"]["metrics"]
    table = OrderedDict()
    for P in Ps:
        row = OrderedDict()
        for name in extracted_sets(cfg):
            key = f"{_p_name(P)}/{name}"
            if key in abx_m:
                row[name] = abx_m[key]
        table[_p_name(P)] = row
    summary = {"raw": abx_m.get("raw"), "input": abx_m.get("input"), "per_P": table}
    if abx_m.get("raw") and "across" in abx_m["raw"]:
        raw_across = abx_m["raw"]["across"]
        summary["relative_improvement_across"] = OrderedDict(
            (f"{p}/{n}", (raw_across - v["across"]) / raw_across)
            for p, row in table.items() for n, v in row.items() if "across" in v)
    outputs = [o for s in stages.values() for o in s["outputs"]]
    return {"outputs": outputs, "metrics": summary, "stages": {k: v["metrics"] for k, v in stages.items()}}


# -- run reports --------------------------------------------------------------

def execute(command, cfg, fn):
    """Run ``fn`` and emit exactly one run report, including on failure."""
    ws = Workspace(cfg)
    report = OrderedDict(command=command, config_digest=cfg.digest(), seed=cfg.seed,
                         work_dir=str(ws.root), timings={}, outputs=[], metrics={}, error=None)
    t0 = time.perf_counter()
    try:
        result = fn(ws)
        report["outputs"] = result.get("outputs", [])
        report["metrics"] = result.get("metrics", {})
        if "stages" in result:
            report["stages"] = result["stages"]
        return report
    except Exception as exc:
        report["error"] = f"{type(exc).__name__}: {exc}"
        report["traceback"] = traceback.format_exc()
        if getattr(ws, "partial", None):
            report["stages"] = {k: v["metrics"] for k, v in ws.partial.items()}
        raise
    finally:
        report["timings"] = dict(getattr(ws, "stage_timings", {}),
                                 total=time.perf_counter() - t0)
        _write_json(ws.root / "reports" / f"{command}.json", report)


def write_failure_report(command, work_dir, seed, error):
    """Report for a command that failed before its config could be resolved."""
    report = OrderedDict(command=command, config_digest=None, seed=seed, work_dir=str(work_dir),
                         timings={}, outputs=[], metrics={}, error=error)
    _write_json(Path(work_dir) / "reports" / f"{command}.json", report)
