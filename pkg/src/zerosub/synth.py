"""Seeded synthetic corpora with known frame labels.

Each language owns ``num_units`` unit types with diagonal-Gaussian emissions
and a sparse successor graph. An utterance walks the graph, dwells a
geometric number of frames in each unit, and the clean frames are passed
through a per-speaker affine map ``x -> A x + b``. All random streams are
keyed by purpose (unit inventory, speaker, utterance), so changing the
speaker shift scale leaves the clean frames of a matched-seed corpus intact.
"""
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .corpus import (CorpusManifest, SegmentAnnotation, Utterance, write_labels,
                     write_manifest, write_segments, write_transcriptions)
from .features import write_feature_file

_UNITS, _SPEAKER, _UTT, _AUX = 1, 2, 3, 4


@dataclass(frozen=True)
class SynthSpec:
    num_languages: int = 2
    num_units: int = 8
    dim: int = 8
    unit_separation: float = 4.0
    noise_std: float = 1.0
    speaker_shift_scale: float = 1.0
    speakers_per_language: int = 4
    utterances_per_speaker: int = 10
    min_units: int = 20
    max_units: int = 40
    mean_dwell: float = 4.0
    branching: int = 3
    aux_classes: int = 4
    aux_noise: float = 0.1

    def validate(self):
        checks = [
            (self.num_languages >= 1, "num_languages >= 1"),
            (self.num_units >= 2, "num_units >= 2"),
            (self.dim >= 1, "dim >= 1"),
            (self.unit_separation > 0, "unit_separation > 0"),
            (self.noise_std > 0, "noise_std > 0"),
            (self.speaker_shift_scale >= 0, "speaker_shift_scale >= 0"),
            (self.speakers_per_language >= 1, "speakers_per_language >= 1"),
            (self.utterances_per_speaker >= 1, "utterances_per_speaker >= 1"),
            (1 <= self.min_units <= self.max_units, "1 <= min_units <= max_units"),
            (self.mean_dwell >= 1, "mean_dwell >= 1"),
            (1 <= self.branching <= self.num_units - 1, "1 <= branching <= num_units - 1"),
            (self.aux_classes == 0 or self.aux_classes >= 2, "aux_classes is 0 or >= 2"),
            (0 <= self.aux_noise <= 1, "0 <= aux_noise <= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(f"invalid synthetic corpus spec: need {msg}")
        return self

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synthetic corpus keys: {sorted(unknown)}")
        return cls(**d).validate()

    def to_dict(self):
        return asdict(self)


@dataclass
class SyntheticCorpus:
    manifest: CorpusManifest
    features: OrderedDict        # utt_id -> (T, D) float32
    clean: OrderedDict           # utt_id -> frames before the speaker map
    labels: OrderedDict          # utt_id -> true unit id per frame (1-based)
    units: OrderedDict           # utt_id -> unit sequence
    aux_labels: OrderedDict      # utt_id -> auxiliary class per frame (0-based)
    unit_means: dict             # language_id -> (U, D)
    speaker_maps: dict           # speaker_id -> (A, b)


def _rng(seed, *key):
    return np.random.default_rng([int(seed) & (2**64 - 1), *key])


def _unit_means(rng, spec):
    for _ in range(10000):
        # typical pairwise distance ~1.5 * separation, independent of dim
        std = 1.5 * spec.unit_separation / np.sqrt(2.0 * spec.dim)
        means = rng.normal(0.0, std, size=(spec.num_units, spec.dim))
        diff = means[:, None, :] - means[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1))
        dist[np.diag_indices(spec.num_units)] = np.inf
        if dist.min() >= spec.unit_separation:
            return means
    raise ValueError("could not place unit means at the requested separation")


def _successors(rng, spec):
    succ = []
    for u in range(spec.num_units):
        others = np.array([v for v in range(spec.num_units) if v != u])
        succ.append(rng.choice(others, size=spec.branching, replace=False))
    return succ


def _speaker_map(rng, spec):
    D = spec.dim
    s = spec.speaker_shift_scale
    G = rng.standard_normal((D, D))
    g = rng.standard_normal(D)
    A = np.eye(D) + s * G / (2.0 * np.sqrt(D))
    b = s * spec.unit_separation * g / np.sqrt(D)
    return A, b


def synthesize(spec, seed):
    """Generate an in-memory corpus; identical ``(spec, seed)`` give identical output."""
    spec.validate()
    utts, segments = [], []
    feats, clean, labels, units, aux = (OrderedDict() for _ in range(5))
    unit_means, speaker_maps = {}, {}
    for li in range(spec.num_languages):
        lang = f"L{li}"
        rng_u = _rng(seed, _UNITS, li)
        means = _unit_means(rng_u, spec)
        succ = _successors(rng_u, spec)
        unit_means[lang] = means
        if spec.aux_classes:
            rng_a = _rng(seed, _AUX, li)
            aux_map = rng_a.integers(0, spec.aux_classes, size=spec.num_units)
            k = min(spec.aux_classes, spec.num_units)
            aux_map[:k] = rng_a.permutation(spec.aux_classes)[:k]
        for si in range(spec.speakers_per_language):
            spk = f"{lang}S{si}"
            A, b = _speaker_map(_rng(seed, _SPEAKER, li, si), spec)
            speaker_maps[spk] = (A, b)
            for ui in range(spec.utterances_per_speaker):
                utt_id = f"{spk}_{ui:03d}"
                rng = _rng(seed, _UTT, li, si, ui)
                L = int(rng.integers(spec.min_units, spec.max_units + 1))
                seq = [int(rng.integers(spec.num_units))]
                for _ in range(L - 1):
                    seq.append(int(succ[seq[-1]][rng.integers(spec.branching)]))
                dwell = rng.geometric(1.0 / spec.mean_dwell, size=L)
                frame_units = np.repeat(seq, dwell)
                x = means[frame_units] + spec.noise_std * rng.standard_normal(
                    (frame_units.shape[0], spec.dim))
                clean[utt_id] = x.astype(np.float32)
                feats[utt_id] = (x @ A.T + b).astype(np.float32)
                labels[utt_id] = frame_units.astype(np.int64) + 1
                units[utt_id] = [u + 1 for u in seq]
                if spec.aux_classes:
                    a = aux_map[frame_units]
                    flip = rng.random(a.shape[0]) < spec.aux_noise
                    a = np.where(flip, rng.integers(0, spec.aux_classes, a.shape[0]), a)
                    aux[utt_id] = a.astype(np.int64)
                bounds = np.concatenate([[0], np.cumsum(dwell)])
                for i in range(1, L - 1):
                    cat = f"{seq[i - 1] + 1}-{seq[i] + 1}-{seq[i + 1] + 1}"
                    segments.append(SegmentAnnotation(
                        utt_id, int(bounds[i - 1]), int(bounds[i + 2]), cat, spk))
                utts.append(Utterance(utt_id, spk, lang, f"feats/{utt_id}.zrsf"))
    manifest = CorpusManifest(utts, segments)
    return SyntheticCorpus(manifest, feats, clean, labels, units, aux, unit_means, speaker_maps)


def generate_synthetic_corpus(spec, seed, out_dir):
    """Generate a corpus and write it under ``out_dir``.

    Layout: ``manifest.csv``, ``segments.csv``, ``feats/<utt>.zrsf``,
    ``truth/labels.csv``, ``truth/units.csv`` and, when auxiliary classes are
    enabled, ``aux_labels.csv``.
    """
    out_dir = Path(out_dir)
    corpus = synthesize(spec, seed)
    (out_dir / "feats").mkdir(parents=True, exist_ok=True)
    for utt in corpus.manifest.utterances:
        write_feature_file(out_dir / utt.path, corpus.features[utt.utt_id])
    write_manifest(out_dir / "manifest.csv", corpus.manifest)
    write_segments(out_dir / "segments.csv", corpus.manifest.segments)
    write_labels(out_dir / "truth" / "labels.csv", corpus.labels)
    write_transcriptions(out_dir / "truth" / "units.csv", corpus.units)
    if corpus.aux_labels:
        write_labels(out_dir / "aux_labels.csv", corpus.aux_labels)
    corpus.manifest.root = out_dir
    return corpus
