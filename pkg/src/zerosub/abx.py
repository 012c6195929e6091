"""Minimal-pair ABX discriminability with DTW over cosine frame distances.

For categories ``x`` and ``y`` the asymmetric error is the fraction of
triples (A in x, B in y, X in x, X != A) for which X lies closer to B than
to A, ties counting one half. Within-speaker cells draw A, B and X from one
speaker; across-speaker cells draw A and B from one speaker and X from
another. Results are symmetrised per speaker context and averaged first over
contexts, then over category pairs.
"""
import csv
import json
import math
from collections import OrderedDict, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import _kernels
from .features import as_frame_matrix

WITHIN = "within"
ACROSS = "across"
CONDITIONS = (WITHIN, ACROSS)


class AbxError(ValueError):
    """Raised for invalid ABX inputs (empty sets, zero vectors, no tasks)."""


def _unit_rows(m):
    m = np.asarray(m, dtype=np.float64)
    norms = np.sqrt((m * m).sum(axis=-1, keepdims=True))
    if np.any(norms == 0.0):
        raise AbxError("cosine distance is undefined for all-zero frames")
    return m / norms


def cosine_distance(u, v):
    """``1 - u.v / (|u| |v|)``, evaluated as half the squared chord of unit vectors."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise AbxError("vectors differ in dimension")
    d = _unit_rows(u) - _unit_rows(v)
    return float(min(max(0.5 * (d * d).sum(), 0.0), 2.0))


def cosine_cost_matrix(a, b):
    """Pairwise cosine distances between the frames of two segments."""
    ua = _unit_rows(a)
    ub = _unit_rows(b)
    diff = ua[:, None, :] - ub[None, :, :]
    return np.clip(0.5 * (diff * diff).sum(axis=-1), 0.0, 2.0)


def dtw_distance(a, b):
    """Path-length-normalised DTW cost with cosine frame distance.

    Among monotone paths with steps (1,0), (0,1), (1,1) from the first to the
    last frame pair, the one with the smallest accumulated cost is chosen
    (shorter paths win exact ties); its cost is divided by its length.
    """
    a = as_frame_matrix(a)
    b = as_frame_matrix(b)
    if a.shape[1] != b.shape[1]:
        raise AbxError(f"segment dims differ: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise AbxError("segments need at least one frame")
    cost, length = _kernels.dtw_accumulate(np.ascontiguousarray(cosine_cost_matrix(a, b)))
    return cost / length


def cell_error(d_ax, d_bx, same_items):
    """Asymmetric error from distance tables.

    ``d_ax[a, x]`` and ``d_bx[b, x]`` are distances to the X items. With
    ``same_items`` the A and X sets coincide and the ``a == x`` terms are
    excluded, giving the ``|S(x)|(|S(x)|-1)|S(y)|`` denominator.
    """
    d_ax = np.asarray(d_ax, dtype=np.float64)
    d_bx = np.asarray(d_bx, dtype=np.float64)
    nA, nX = d_ax.shape
    nB = d_bx.shape[0]
    gt = d_ax[:, None, :] > d_bx[None, :, :]
    eq = d_ax[:, None, :] == d_bx[None, :, :]
    if same_items:
        keep = ~np.eye(nA, dtype=bool)[:, None, :]
        gt &= keep
        eq &= keep
        denom = nA * (nA - 1) * nB
    else:
        denom = nA * nX * nB
    if denom == 0:
        raise AbxError("ABX cell has no triples")
    return (2 * int(gt.sum()) + int(eq.sum())) / (2 * denom)


def abx_error_asym(Sx, Sy, distance):
    """Error of discriminating x from y; ``distance(p, q)`` scores a pair of items."""
    Sx, Sy = list(Sx), list(Sy)
    if len(Sx) < 2 or len(Sy) < 1:
        raise AbxError("need |S(x)| >= 2 and |S(y)| >= 1")
    d_ax = [[distance(A, X) for X in Sx] for A in Sx]
    d_bx = [[distance(B, X) for X in Sx] for B in Sy]
    return cell_error(d_ax, d_bx, same_items=True)


def abx_error_sym(Sx, Sy, distance):
    return 0.5 * (abx_error_asym(Sx, Sy, distance) + abx_error_asym(Sy, Sx, distance))


def abx_error_enumerate(Sx, Sy, distance):
    """Exact rational error by direct triple enumeration (reference version)."""
    total = Fraction(0)
    for A in range(len(Sx)):
        for B in Sy:
            for X in range(len(Sx)):
                if X == A:
                    continue
                dax = distance(Sx[A], Sx[X])
                dbx = distance(B, Sx[X])
                total += 1 if dax > dbx else Fraction(1, 2) if dax == dbx else 0
    return total / (len(Sx) * (len(Sx) - 1) * len(Sy))


# -- task construction --------------------------------------------------------

@dataclass(frozen=True)
class AbxTask:
    """One directed cell: discriminate ``x`` from ``y`` in one speaker context."""

    language: str
    x: str
    y: str
    context: str
    A: tuple
    B: tuple
    X: tuple

    @property
    def same_items(self):
        return self.A == self.X


@dataclass
class AbxTaskSet:
    condition: str
    tasks: list
    skipped: dict = field(default_factory=dict)


def _triphone_context(cat):
    parts = cat.split("-")
    return (parts[0], parts[2]) if len(parts) == 3 else None


def is_minimal_pair(c1, c2):
    """Triphones ``a-b-c`` pair up when only the centre differs; other labels always pair."""
    if c1 == c2:
        return False
    k1, k2 = _triphone_context(c1), _triphone_context(c2)
    if k1 is None or k2 is None:
        return True
    return k1 == k2


def build_abx_tasks(manifest, condition):
    """Enumerate directed ABX cells over the manifest's segments.

    Items are indices into ``manifest.segments``. Cells without enough items
    are skipped and counted in ``skipped``; an empty task set is returned as
    is (``abx_aggregate`` rejects it).
    """
    if condition not in CONDITIONS:
        raise AbxError(f"condition must be one of {CONDITIONS}")
    lang_of = {u.utt_id: u.language_id for u in manifest.utterances}
    groups = defaultdict(list)
    for i, s in enumerate(manifest.segments):
        groups[(lang_of[s.utt_id], s.speaker_id, s.category)].append(i)
    by_lang = defaultdict(lambda: (set(), set()))
    for lang, spk, cat in groups:
        by_lang[lang][0].add(spk)
        by_lang[lang][1].add(cat)

    tasks = []
    skipped = OrderedDict(insufficient_items=0, no_other_speaker=0)
    for lang in sorted(by_lang):
        speakers, cats = (sorted(v) for v in by_lang[lang])
        for x in cats:
            for y in cats:
                if not is_minimal_pair(x, y):
                    continue
                for s in speakers:
                    A = tuple(groups.get((lang, s, x), ()))
                    B = tuple(groups.get((lang, s, y), ()))
                    if not A and not B:
                        continue
                    if condition == WITHIN:
                        if len(A) >= 2 and len(B) >= 1:
                            tasks.append(AbxTask(lang, x, y, s, A, B, A))
                        else:
                            skipped["insufficient_items"] += 1
                        continue
                    others = [o for o in speakers if o != s]
                    if not others:
                        skipped["no_other_speaker"] += 1
                        continue
                    for o in others:
                        X = tuple(groups.get((lang, o, x), ()))
                        if A and B and X:
                            tasks.append(AbxTask(lang, x, y, f"{s}|{o}", A, B, X))
                        else:
                            skipped["insufficient_items"] += 1
    return AbxTaskSet(condition, tasks, dict(skipped))


# -- scoring ------------------------------------------------------------------

class DistanceCache:
    """Memoised DTW distances between segment items (computed once per pair)."""

    def __init__(self, features, segments):
        self.features = features
        self.segments = segments
        self._cache = {}

    def segment(self, i):
        s = self.segments[i]
        return self.features[s.utt_id][s.start_frame:s.end_frame]

    def __call__(self, i, j):
        key = (i, j) if i <= j else (j, i)
        d = self._cache.get(key)
        if d is None:
            d = 0.0 if i == j else dtw_distance(self.segment(key[0]), self.segment(key[1]))
            self._cache[key] = d
        return d

    def table(self, rows, cols):
        return np.array([[self(r, c) for c in cols] for r in rows], dtype=np.float64)

    def __len__(self):
        return len(self._cache)


@dataclass
class AbxResult:
    condition: str
    per_pair: list            # rows: language, x, y, speaker_context, eps_xy, eps_yx, eps_sym
    per_pair_means: OrderedDict
    overall: float
    skipped_cells: dict
    aggregation: str = "two-level"

    def to_dict(self):
        return {"condition": self.condition, "aggregation": self.aggregation,
                "per_pair": self.per_pair, "per_pair_means": self.per_pair_means,
                "overall": self.overall, "skipped_cells": self.skipped_cells}


def score_tasks(task_set, distance):
    """Asymmetric error of every directed cell: ``{(lang, x, y, context): eps}``."""
    out = OrderedDict()
    for t in task_set.tasks:
        d_ax = distance.table(t.A, t.X)
        d_bx = distance.table(t.B, t.X)
        out[(t.language, t.x, t.y, t.context)] = cell_error(d_ax, d_bx, t.same_items)
    return out


def symmetrize(cell_scores):
    """Pair both directions of each (category pair, context); returns rows and orphans."""
    rows = []
    orphans = 0
    for (lang, x, y, ctx), e_xy in cell_scores.items():
        if x > y:
            if (lang, y, x, ctx) not in cell_scores:
                orphans += 1
            continue
        e_yx = cell_scores.get((lang, y, x, ctx))
        if e_yx is None:
            orphans += 1
            continue
        rows.append({"language": lang, "x": x, "y": y, "speaker_context": ctx,
                     "eps_xy": e_xy, "eps_yx": e_yx, "eps_sym": 0.5 * (e_xy + e_yx)})
    return rows, orphans


def _mean(values):
    return math.fsum(values) / len(values)


def abx_aggregate(rows, mode="two-level"):
    """Overall error and per-pair means.

    ``two-level``: mean over speaker contexts within each category pair, then
    mean over pairs. ``flat``: mean over all rows. Results do not depend on
    row order.
    """
    if not rows:
        raise AbxError("no ABX results to aggregate")
    if mode not in ("two-level", "flat"):
        raise AbxError(f"unknown aggregation mode {mode!r}")
    per_pair = defaultdict(list)
    for r in rows:
        per_pair[f"{r['language']}:{r['x']}|{r['y']}"].append(r["eps_sym"])
    means = OrderedDict((k, _mean(sorted(v))) for k, v in sorted(per_pair.items()))
    if mode == "flat":
        overall = _mean(sorted(r["eps_sym"] for r in rows))
    else:
        overall = _mean(list(means.values()))
    return overall, means


def evaluate_abx(manifest, features, condition, mode="two-level", cache=None):
    """Build, score, symmetrise and aggregate the ABX cells of one condition."""
    task_set = build_abx_tasks(manifest, condition)
    if cache is None:
        cache = DistanceCache(features, manifest.segments)
    scores = score_tasks(task_set, cache)
    rows, orphans = symmetrize(scores)
    skipped = dict(task_set.skipped, unpaired_direction=orphans)
    overall, means = abx_aggregate(rows, mode)
    return AbxResult(condition, rows, means, overall, skipped, mode)


def write_abx_report(result, json_path, csv_path=None):
    Path(json_path).parent.mkdir(parents=True, exist_ok=True)
    Path(json_path).write_text(json.dumps(result.to_dict(), indent=2))
    if csv_path is not None:
        fields = ["language", "x", "y", "speaker_context", "eps_xy", "eps_yx", "eps_sym"]
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
            w.writeheader()
            w.writerows(result.per_pair)
