"""Corpus manifests and the CSV side files exchanged between stages.

Formats (UTF-8, with header row, 0-based end-exclusive frame indices):

* manifest:        ``utt_id,speaker_id,language_id,path``
* segments:        ``utt_id,start_frame,end_frame,category,speaker_id``
* frame labels:    ``utt_id,frame,label`` (``-1`` marks a removed frame)
* transcriptions:  ``utt_id,unit_sequence`` (space-separated unit ids)

Relative feature paths in a manifest are resolved against the manifest's
directory.
"""
import csv
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import read_feature_file

REMOVED = -1

MANIFEST_FIELDS = ["utt_id", "speaker_id", "language_id", "path"]
SEGMENT_FIELDS = ["utt_id", "start_frame", "end_frame", "category", "speaker_id"]
LABEL_FIELDS = ["utt_id", "frame", "label"]
TRANSCRIPTION_FIELDS = ["utt_id", "unit_sequence"]


class CorpusError(ValueError):
    """Raised for inconsistent manifests or side files."""


@dataclass(frozen=True)
class Utterance:
    utt_id: str
    speaker_id: str
    language_id: str
    path: str

    def __post_init__(self):
        for name in ("utt_id", "speaker_id", "language_id"):
            if not getattr(self, name):
                raise CorpusError(f"utterance field {name!r} must be nonempty")


@dataclass(frozen=True)
class SegmentAnnotation:
    utt_id: str
    start_frame: int
    end_frame: int
    category: str
    speaker_id: str

    def __post_init__(self):
        if not 0 <= self.start_frame < self.end_frame:
            raise CorpusError(
                f"segment {self.utt_id}[{self.start_frame}:{self.end_frame}] is empty or negative"
            )


@dataclass
class CorpusManifest:
    utterances: list
    segments: list = field(default_factory=list)
    root: Path = Path(".")

    def __post_init__(self):
        seen = set()
        for u in self.utterances:
            if u.utt_id in seen:
                raise CorpusError(f"duplicate utt_id {u.utt_id!r}")
            seen.add(u.utt_id)
        for s in self.segments:
            if s.utt_id not in seen:
                raise CorpusError(f"segment references unknown utt_id {s.utt_id!r}")

    def by_id(self):
        return OrderedDict((u.utt_id, u) for u in self.utterances)

    def languages(self):
        return sorted({u.language_id for u in self.utterances})

    def feature_path(self, utt):
        p = Path(utt.path)
        return p if p.is_absolute() else self.root / p

    def load_features(self, utt_ids=None):
        """Read feature matrices, keyed by utt_id in manifest order."""
        wanted = None if utt_ids is None else set(utt_ids)
        return OrderedDict(
            (u.utt_id, read_feature_file(self.feature_path(u)))
            for u in self.utterances
            if wanted is None or u.utt_id in wanted
        )

    def check_segments(self, num_frames):
        """Ensure every segment fits inside its utterance (``num_frames``: utt_id -> T)."""
        for s in self.segments:
            T = num_frames[s.utt_id]
            if s.end_frame > T:
                raise CorpusError(
                    f"segment {s.utt_id}[{s.start_frame}:{s.end_frame}] exceeds T={T}"
                )


def _read_rows(path, fields):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != fields:
            raise CorpusError(f"{path}: expected header {','.join(fields)}, got {reader.fieldnames}")
        return list(reader)


def _write_rows(path, fields, rows):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        w.writerows(rows)


def read_manifest(path, segments_path=None):
    path = Path(path)
    utts = [Utterance(r["utt_id"], r["speaker_id"], r["language_id"], r["path"])
            for r in _read_rows(path, MANIFEST_FIELDS)]
    segs = read_segments(segments_path) if segments_path is not None else []
    return CorpusManifest(utts, segs, root=path.parent)


def write_manifest(path, manifest):
    _write_rows(path, MANIFEST_FIELDS,
                [(u.utt_id, u.speaker_id, u.language_id, u.path) for u in manifest.utterances])


def read_segments(path):
    try:
        return [SegmentAnnotation(r["utt_id"], int(r["start_frame"]), int(r["end_frame"]),
                                  r["category"], r["speaker_id"])
                for r in _read_rows(path, SEGMENT_FIELDS)]
    except (TypeError, ValueError) as exc:
        if isinstance(exc, CorpusError):
            raise
        raise CorpusError(f"{path}: {exc}") from exc


def write_segments(path, segments):
    _write_rows(path, SEGMENT_FIELDS,
                [(s.utt_id, s.start_frame, s.end_frame, s.category, s.speaker_id)
                 for s in segments])


def write_labels(path, labels):
    """Write ``{utt_id: int array}`` as a frame-label CSV, in dict order."""
    rows = []
    for utt_id, seq in labels.items():
        rows.extend((utt_id, t, int(v)) for t, v in enumerate(seq))
    _write_rows(path, LABEL_FIELDS, rows)


def read_labels(path):
    """Read a frame-label CSV into ``{utt_id: int64 array}``.

    Frames of each utterance must be listed contiguously as 0, 1, ..., T-1.
    """
    out = OrderedDict()
    for r in _read_rows(path, LABEL_FIELDS):
        seq = out.setdefault(r["utt_id"], [])
        if int(r["frame"]) != len(seq):
            raise CorpusError(f"{path}: frames of {r['utt_id']!r} are not contiguous from 0")
        seq.append(int(r["label"]))
    return OrderedDict((k, np.asarray(v, dtype=np.int64)) for k, v in out.items())


def write_transcriptions(path, transcriptions):
    _write_rows(path, TRANSCRIPTION_FIELDS,
                [(k, " ".join(str(int(u)) for u in v)) for k, v in transcriptions.items()])


def read_transcriptions(path):
    return OrderedDict(
        (r["utt_id"], [int(u) for u in r["unit_sequence"].split()])
        for r in _read_rows(path, TRANSCRIPTION_FIELDS)
    )
