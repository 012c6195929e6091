"""Pseudo-phone HMMs: one emitting state per unit, aligned left to right.

Each pseudo transcription defines a linear chain of units. A frame either
stays in the current unit (``p_loop``) or advances to the next one
(``1 - p_loop``); a path's score is the sum of its emission and transition
log-probabilities, without an exit transition after the last unit. Training
is hard (Viterbi) EM, started from a uniform segmentation.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .corpus import REMOVED

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-4
P_LOOP_INIT_RANGE = (0.5, 0.99)
P_LOOP_RANGE = (1e-3, 1.0 - 1e-3)


class AlignmentError(ValueError):
    """Raised when a transcription cannot be aligned to an utterance."""


def collapse(labels):
    """Drop ``REMOVED`` frames, then merge runs of equal labels."""
    out = []
    for v in labels:
        v = int(v)
        if v == REMOVED:
            continue
        if not out or out[-1] != v:
            out.append(v)
    return out


@dataclass
class HmmModel:
    units: np.ndarray      # (U,) sorted unit ids
    weights: np.ndarray    # (U, G)
    means: np.ndarray      # (U, G, D)
    variances: np.ndarray  # (U, G, D)
    p_loop: np.ndarray     # (U,)

    def __post_init__(self):
        self._index = {int(u): i for i, u in enumerate(self.units)}

    @property
    def dim(self):
        return int(self.means.shape[2])

    @property
    def num_components(self):
        return int(self.weights.shape[1])

    def index(self, unit):
        try:
            return self._index[int(unit)]
        except KeyError:
            raise AlignmentError(f"unit {unit} has no HMM state") from None

    def copy(self):
        return HmmModel(self.units.copy(), self.weights.copy(), self.means.copy(),
                        self.variances.copy(), self.p_loop.copy())

    def to_dict(self):
        return {k: getattr(self, k).tolist()
                for k in ("units", "weights", "means", "variances", "p_loop")}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["units"], dtype=np.int64),
                   *(np.asarray(d[k], dtype=np.float64)
                     for k in ("weights", "means", "variances", "p_loop")))


def save_hmm(path, model):
    Path(path).write_text(json.dumps(model.to_dict()))


def load_hmm(path):
    return HmmModel.from_dict(json.loads(Path(path).read_text()))


def _gmm_loglik(x, weights, means, variances):
    """``(T, G)`` per-component weighted log densities for one state."""
    inv = 1.0 / variances
    quad = (x * x) @ inv.T - 2.0 * x @ (means * inv).T + (means ** 2 * inv).sum(1)
    const = np.log(weights) - 0.5 * np.log(2.0 * np.pi * variances).sum(1)
    return const - 0.5 * quad


def emission_matrix(model, frames, transcription):
    """``(T, L)`` log-likelihood of each frame under each transcription position."""
    x = np.asarray(frames, dtype=np.float64)
    if x.shape[1] != model.dim:
        raise AlignmentError(f"frame dim {x.shape[1]} != model dim {model.dim}")
    rows = [model.index(u) for u in transcription]
    uniq = sorted(set(rows))
    per_unit = {r: logsumexp(_gmm_loglik(x, model.weights[r], model.means[r],
                                         model.variances[r]), axis=1)
                for r in uniq}
    return np.column_stack([per_unit[r] for r in rows])


@dataclass(frozen=True)
class Alignment:
    units: np.ndarray      # (T,) unit id per frame
    positions: np.ndarray  # (T,) transcription position per frame
    score: float


def _check_feasible(T, L):
    if L == 0:
        raise AlignmentError("empty transcription")
    if T < L:
        raise AlignmentError(f"{T} frames cannot cover {L} units")


def viterbi_align(model, frames, transcription):
    """Best monotone frame-to-unit assignment; ties advance as late as possible."""
    T, L = len(frames), len(transcription)
    _check_feasible(T, L)
    emit = np.ascontiguousarray(emission_matrix(model, frames, transcription))
    p = model.p_loop[[model.index(u) for u in transcription]]
    score, pos = _kernels.viterbi_chain(emit, np.log(p), np.log1p(-p))
    units = np.asarray(transcription, dtype=np.int64)[pos]
    return Alignment(units, pos, score)


def uniform_durations(T, L):
    """Equal spans; the ``T % L`` remainder frames go one each to the last units."""
    _check_feasible(T, L)
    base, rem = divmod(T, L)
    return [base] * (L - rem) + [base + 1] * rem


class _Accumulator:
    def __init__(self, units, D):
        self.units = list(units)
        self.frames = {u: [] for u in self.units}
        self.stays = dict.fromkeys(self.units, 0)
        self.advances = dict.fromkeys(self.units, 0)

    def add(self, x, transcription, durations):
        start = 0
        for j, (u, d) in enumerate(zip(transcription, durations)):
            self.frames[u].append(x[start:start + d])
            self.stays[u] += d - 1
            if j < len(transcription) - 1:
                self.advances[u] += 1
            start += d


def _durations_from_positions(pos, L):
    return np.bincount(pos, minlength=L).tolist()


def _split_means(mean, var, G):
    offsets = (np.arange(G) - (G - 1) / 2.0) * 0.2
    return mean[None, :] + offsets[:, None] * np.sqrt(var)[None, :]


def hmm_init_uniform(transcriptions, features, num_components=1):
    """Estimate single-Gaussian states from a uniform segmentation.

    ``transcriptions`` and ``features`` are keyed by utt_id; utterances with an
    empty transcription are ignored. With ``num_components > 1`` each state's
    Gaussian is split into equally weighted components with spread means.
    """
    if num_components < 1:
        raise ValueError("num_components must be >= 1")
    items = [(k, t) for k, t in transcriptions.items() if len(t)]
    if not items:
        raise AlignmentError("no nonempty transcription to initialise from")
    units = sorted({u for _, t in items for u in t})
    D = np.asarray(features[items[0][0]]).shape[1]
    acc = _Accumulator(units, D)
    total_frames = total_units = 0
    for k, t in items:
        x = np.asarray(features[k], dtype=np.float64)
        acc.add(x, t, uniform_durations(x.shape[0], len(t)))
        total_frames += x.shape[0]
        total_units += len(t)
    d = total_frames / total_units
    p = float(np.clip((d - 1.0) / d, *P_LOOP_INIT_RANGE))
    G = num_components
    U = len(units)
    weights = np.full((U, G), 1.0 / G)
    means = np.zeros((U, G, D))
    variances = np.zeros((U, G, D))
    for i, u in enumerate(units):
        x = np.concatenate(acc.frames[u])
        mu = x.mean(axis=0)
        var = np.maximum(x.var(axis=0), VAR_FLOOR)
        means[i] = _split_means(mu, var, G)
        variances[i] = var
    return HmmModel(np.asarray(units, dtype=np.int64), weights, means, variances,
                    np.full(U, p))


def _reestimate_state(x, weights, means, variances):
    """One GMM EM step from the current parameters (closed form for G == 1)."""
    G = weights.shape[0]
    if G == 1:
        mu = x.mean(axis=0)
        return (np.ones(1), mu[None, :],
                np.maximum(((x - mu) ** 2).mean(axis=0), VAR_FLOOR)[None, :])
    ll = _gmm_loglik(x, weights, means, variances)
    resp = np.exp(ll - logsumexp(ll, axis=1, keepdims=True))
    nk = resp.sum(axis=0)
    live = nk > 0
    w = nk / nk.sum()
    mu = means.copy()
    var = variances.copy()
    mu[live] = (resp[:, live].T @ x) / nk[live, None]
    for g in np.flatnonzero(live):
        var[g] = np.maximum((resp[:, g, None] * (x - mu[g]) ** 2).sum(0) / nk[g], VAR_FLOOR)
    w = np.where(live, w, 0.0)
    if not live.all():
        # dead components keep a tiny weight so log(w) stays finite
        w = np.where(live, w, 1e-12)
        w /= w.sum()
    return w, mu, var


def hmm_em_train(model, data, iterations):
    """Hard-EM training.

    ``data`` maps utt_id to ``(frames, transcription)``. Returns the trained
    model and the per-iteration total Viterbi log-likelihood (measured with
    the parameters entering that iteration). Units that receive no frames
    keep their previous parameters.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    model = model.copy()
    history = []
    for it in range(iterations):
        acc = _Accumulator([int(u) for u in model.units], model.dim)
        total = 0.0
        for utt_id in sorted(data):
            frames, trans = data[utt_id]
            if not len(trans):
                continue
            x = np.asarray(frames, dtype=np.float64)
            ali = viterbi_align(model, x, trans)
            total += ali.score
            acc.add(x, trans, _durations_from_positions(ali.positions, len(trans)))
        history.append(total)
        starved = []
        for i, u in enumerate(model.units):
            u = int(u)
            if not acc.frames[u]:
                starved.append(u)
                continue
            x = np.concatenate(acc.frames[u])
            model.weights[i], model.means[i], model.variances[i] = _reestimate_state(
                x, model.weights[i], model.means[i], model.variances[i])
            moves = acc.stays[u] + acc.advances[u]
            if moves:
                model.p_loop[i] = np.clip(acc.stays[u] / moves, *P_LOOP_RANGE)
        if starved:
            log.info("iteration %d: units %s received no frames; parameters kept", it, starved)
        log.debug("iteration %d: total log-likelihood %.6f", it, total)
    return model, history


def align_corpus(model, data):
    """Viterbi-align every utterance; returns ``{utt_id: Alignment}``."""
    return {k: viterbi_align(model, np.asarray(f, dtype=np.float64), t)
            for k, (f, t) in data.items() if len(t)}


def alignment_labels(alignments, level="phone"):
    """Per-frame labels for export; with one state per unit both levels coincide."""
    if level not in ("phone", "state"):
        raise ValueError("level must be 'phone' or 'state'")
    return {k: a.units.copy() for k, a in alignments.items()}
