"""Multi-task MLP with a shared linear bottleneck.

Architecture::

    input -> [sigmoid]*  -> bottleneck (linear) -> [sigmoid]* -> head_task (softmax)

All hidden layers are shared by the tasks; each task owns one affine +
softmax head. Training minimises the summed per-frame cross entropy of the
selected head with plain SGD and a halve-on-plateau learning-rate schedule.
Everything runs in float64.
"""
import json
import logging
import math
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import FeatureFormatError, as_frame_matrix

log = logging.getLogger(__name__)

NET_MAGIC = b"ZRSN"
NET_VERSION = 1


class TrainingError(RuntimeError):
    """Raised when training produces a non-finite loss."""


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _softmax(a):
    a = a - a.max(axis=1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=1, keepdims=True)


DEFAULT_INIT_SCALE = 4.0


def _init_layer(rng, n_in, n_out, scale=DEFAULT_INIT_SCALE):
    r = scale / math.sqrt(n_in)
    return [rng.uniform(-r, r, size=(n_in, n_out)), rng.uniform(-r, r, size=n_out)]


class MtlNetwork:
    """Shared sigmoid layers, a linear bottleneck, more shared layers, task heads.

    Layers are ``[W, b]`` pairs with ``W`` of shape ``(in, out)``; ``heads``
    maps task id to its ``[W, b]``.
    """

    def __init__(self, shared, bottleneck, post, heads, seed=0):
        self.shared = [list(p) for p in shared]
        self.bottleneck = list(bottleneck)
        self.post = [list(p) for p in post]
        self.heads = OrderedDict((k, list(v)) for k, v in heads.items())
        self.seed = int(seed)
        self._check()

    @classmethod
    def create(cls, input_dim, shared_dims, bottleneck_dim, post_dims, head_classes, seed=0,
               init_scale=DEFAULT_INIT_SCALE):
        """Initialise weights and biases uniformly in ``+-init_scale/sqrt(fan_in)``.

        The default scale of 4 suits sigmoid units; with a scale of 1 the
        stacked sigmoids start out nearly linear around 0.5 and plain SGD
        spends most of its budget learning class priors.
        """
        if bottleneck_dim < 1:
            raise ValueError("bottleneck_dim must be positive")
        if not init_scale > 0:
            raise ValueError("init_scale must be positive")
        rng = np.random.default_rng([int(seed) & (2**64 - 1), 0x3B])

        def init(a, b):
            return _init_layer(rng, a, b, init_scale)

        dims = [input_dim, *shared_dims]
        shared = [init(a, b) for a, b in zip(dims[:-1], dims[1:])]
        bottleneck = init(dims[-1], bottleneck_dim)
        dims = [bottleneck_dim, *post_dims]
        post = [init(a, b) for a, b in zip(dims[:-1], dims[1:])]
        heads = OrderedDict((t, init(dims[-1], c)) for t, c in head_classes.items())
        return cls(shared, bottleneck, post, heads, seed)

    def _check(self):
        dim = self.input_dim
        for W, b in [*self.shared, self.bottleneck, *self.post]:
            if W.shape[0] != dim or b.shape != (W.shape[1],):
                raise ValueError("layer dimensions do not chain")
            dim = W.shape[1]
        if not self.heads:
            raise ValueError("network needs at least one task head")
        for t, (W, b) in self.heads.items():
            if W.shape[0] != dim or b.shape != (W.shape[1],):
                raise ValueError(f"head {t!r} does not match the last hidden layer")
            if W.shape[1] < 2:
                raise ValueError(f"head {t!r} needs at least 2 classes")

    @property
    def input_dim(self):
        return int((self.shared[0][0] if self.shared else self.bottleneck[0]).shape[0])

    @property
    def bottleneck_dim(self):
        return int(self.bottleneck[0].shape[1])

    def num_classes(self, task):
        return int(self.head(task)[0].shape[1])

    def head(self, task):
        try:
            return self.heads[task]
        except KeyError:
            raise KeyError(f"unknown task {task!r}") from None

    def layers(self, task=None):
        """All ``[W, b]`` pairs in serialization order, or the path used by ``task``."""
        heads = list(self.heads.values()) if task is None else [self.head(task)]
        return [*self.shared, self.bottleneck, *self.post, *heads]

    def copy(self):
        cp = lambda ls: [[W.copy(), b.copy()] for W, b in ls]
        return MtlNetwork(cp(self.shared), cp([self.bottleneck])[0], cp(self.post),
                          OrderedDict((k, cp([v])[0]) for k, v in self.heads.items()),
                          self.seed)

    # -- forward / backward -------------------------------------------------

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise FeatureFormatError(
                f"input has shape {x.shape}, network expects (*, {self.input_dim})")
        return x

    def _hidden(self, x):
        acts = [x]
        for W, b in self.shared:
            acts.append(_sigmoid(acts[-1] @ W + b))
        acts.append(acts[-1] @ self.bottleneck[0] + self.bottleneck[1])
        for W, b in self.post:
            acts.append(_sigmoid(acts[-1] @ W + b))
        return acts

    def forward(self, x, task):
        """Class posteriors of ``task`` and bottleneck activations."""
        x = self._check_input(x)
        W, b = self.head(task)
        acts = self._hidden(x)
        probs = _softmax(acts[-1] @ W + b)
        return probs, acts[len(self.shared) + 1]

    def bottleneck_features(self, x):
        x = self._check_input(x)
        h = x
        for W, b in self.shared:
            h = _sigmoid(h @ W + b)
        return h @ self.bottleneck[0] + self.bottleneck[1]

    def loss_and_grads(self, x, targets, task):
        """Summed cross entropy and its gradient for each layer on the task path.

        Gradients are returned aligned with ``self.layers(task)``.
        """
        x = self._check_input(x)
        targets = np.asarray(targets, dtype=np.int64)
        W_h, b_h = self.head(task)
        acts = self._hidden(x)
        probs = _softmax(acts[-1] @ W_h + b_h)
        rows = np.arange(targets.shape[0])
        loss = float(-np.log(np.maximum(probs[rows, targets], 1e-300)).sum())
        delta = probs
        delta[rows, targets] -= 1.0

        layers = self.layers(task)
        nshared = len(self.shared)
        grads = [None] * len(layers)
        grads[-1] = [acts[-1].T @ delta, delta.sum(axis=0)]
        g = delta @ W_h.T
        for li in range(len(layers) - 2, -1, -1):
            a_out = acts[li + 1]
            if li != nshared:  # every hidden layer except the bottleneck is sigmoid
                g = g * a_out * (1.0 - a_out)
            W, _ = layers[li]
            grads[li] = [acts[li].T @ g, g.sum(axis=0)]
            if li:
                g = g @ W.T
        return loss, grads


def mtl_forward(net, batch, task):
    return net.forward(batch, task)


def extract_bnf(net, m):
    """Bottleneck activations ``(T, B)`` of an already spliced frame matrix."""
    return net.bottleneck_features(as_frame_matrix(m, dtype=np.float64))


def concat_features(parts):
    """Column-wise concatenation, in argument order."""
    parts = [as_frame_matrix(p) for p in parts]
    if not parts:
        raise ValueError("concat_features needs at least one part")
    T = parts[0].shape[0]
    if any(p.shape[0] != T for p in parts):
        raise FeatureFormatError("all parts must have the same number of frames")
    return np.concatenate(parts, axis=1)


def gradient_check(net, x, targets, task, step=1e-3):
    """Max relative error between analytic and central-difference gradients.

    Each parameter ``theta`` is perturbed by ``step * max(1, |theta|)``. The
    relative error of one entry is ``|a - n| / max(|a|, |n|, 1e-7)``.
    """
    net = net.copy()
    _, grads = net.loss_and_grads(x, targets, task)
    worst = 0.0
    for layer, glayer in zip(net.layers(task), grads):
        for p, g in zip(layer, glayer):
            flat = p.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.shape[0]):
                old = flat[i]
                h = step * max(1.0, abs(old))
                flat[i] = old + h
                lp, _ = net.loss_and_grads(x, targets, task)
                flat[i] = old - h
                lm, _ = net.loss_and_grads(x, targets, task)
                flat[i] = old
                num = (lp - lm) / (2.0 * h)
                err = abs(gflat[i] - num) / max(abs(gflat[i]), abs(num), 1e-7)
                worst = max(worst, err)
    return worst


def sgd_step(net, x, targets, task, lr):
    """One in-place SGD update on the task's path; returns the batch loss."""
    loss, grads = net.loss_and_grads(x, targets, task)
    for layer, glayer in zip(net.layers(task), grads):
        for p, g in zip(layer, glayer):
            p -= lr * g
    return loss


# -- training -----------------------------------------------------------------

@dataclass
class TaskDataset:
    task_id: str
    frames: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.int64)
        if self.frames.ndim != 2 or self.frames.shape[0] != self.targets.shape[0]:
            raise ValueError(f"task {self.task_id!r}: frames and targets differ in length")
        if self.targets.shape[0] == 0:
            raise ValueError(f"task {self.task_id!r} is empty")
        if self.targets.min() < 0:
            raise ValueError(f"task {self.task_id!r} has negative targets")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.008
    batch_size: int = 256
    max_epochs: int = 20
    cv_fraction: float = 0.05
    patience: int = 1
    min_lr_ratio: float = 1.0 / 128
    seed: int = 0

    def validate(self):
        if not (self.learning_rate > 0 and self.batch_size > 0 and self.patience > 0):
            raise ValueError("learning_rate, batch_size and patience must be positive")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if not 0.0 < self.cv_fraction < 0.5:
            raise ValueError("cv_fraction must lie in (0, 0.5)")
        if not 0.0 < self.min_lr_ratio < 1.0:
            raise ValueError("min_lr_ratio must lie in (0, 1)")
        return self


@dataclass
class TrainResult:
    net: MtlNetwork
    log: list = field(default_factory=list)


def _split_cv(ds, fraction):
    n = ds.targets.shape[0]
    n_cv = max(1, int(math.ceil(fraction * n))) if n > 1 else 0
    n_tr = n - n_cv
    return (ds.frames[:n_tr], ds.targets[:n_tr]), (ds.frames[n_tr:], ds.targets[n_tr:])


def _mean_loss(net, x, y, task, chunk=4096):
    if y.shape[0] == 0:
        return float("nan")
    total = 0.0
    for s in range(0, y.shape[0], chunk):
        probs, _ = net.forward(x[s:s + chunk], task)
        p = probs[np.arange(min(chunk, y.shape[0] - s)), y[s:s + chunk]]
        total += float(-np.log(np.maximum(p, 1e-300)).sum())
    return total / y.shape[0]


def mtl_train(net, datasets, config=TrainConfig(), log_path=None):
    """Train a copy of ``net`` on the task datasets.

    Each task's last ``cv_fraction`` of frames is held out. An epoch visits
    every training frame once in single-task minibatches whose order is
    shuffled across tasks. When the frame-weighted CV loss fails to improve
    for ``patience`` epochs, the best parameters are restored and the rate is
    halved; training stops once the rate drops below ``min_lr_ratio`` of its
    initial value or after ``max_epochs``.
    """
    config.validate()
    if not datasets:
        raise ValueError("mtl_train needs at least one task dataset")
    net = net.copy()
    splits = OrderedDict()
    for ds in datasets:
        if ds.frames.shape[1] != net.input_dim:
            raise FeatureFormatError(
                f"task {ds.task_id!r}: frame dim {ds.frames.shape[1]} != input {net.input_dim}")
        if ds.targets.max() >= net.num_classes(ds.task_id):
            raise ValueError(f"task {ds.task_id!r} has targets beyond its head size")
        splits[ds.task_id] = _split_cv(ds, config.cv_fraction)
    rng = np.random.default_rng([int(config.seed) & (2**64 - 1), 0x7A])
    lr = config.learning_rate
    records = []
    fh = open(log_path, "w", encoding="utf-8") if log_path else None

    def cv_losses(n):
        return OrderedDict((t, _mean_loss(n, *cv, t)) for t, (_, cv) in splits.items())

    def combined(losses):
        sizes = {t: splits[t][1][1].shape[0] for t in losses}
        tot = sum(sizes.values())
        if tot == 0:
            return float("nan")
        return sum(l * sizes[t] for t, l in losses.items() if sizes[t]) / tot

    best_net, best_cv = net.copy(), combined(cv_losses(net))
    bad_epochs = 0
    try:
        for epoch in range(1, config.max_epochs + 1):
            batches = []
            for t, ((x, y), _) in splits.items():
                perm = rng.permutation(y.shape[0])
                batches += [(t, perm[s:s + config.batch_size])
                            for s in range(0, y.shape[0], config.batch_size)]
            sums = OrderedDict((t, 0.0) for t in splits)
            for bi in rng.permutation(len(batches)):
                t, idx = batches[bi]
                x, y = splits[t][0]
                loss = sgd_step(net, x[idx], y[idx], t, lr)
                if not math.isfinite(loss):
                    raise TrainingError(
                        f"non-finite loss on task {t!r} at epoch {epoch} (lr={lr:g})")
                sums[t] += loss
            train_loss = OrderedDict(
                (t, sums[t] / max(1, splits[t][0][1].shape[0])) for t in splits)
            cv = cv_losses(net)
            rec = {"epoch": epoch, "lr": lr, "train_loss_per_task": train_loss,
                   "cv_loss_per_task": cv}
            records.append(rec)
            if fh:
                fh.write(json.dumps(rec) + "\n")
            log.info("epoch %d lr %g train %s cv %s", epoch, lr, dict(train_loss), dict(cv))
            c = combined(cv)
            if not math.isfinite(c) or c < best_cv or not math.isfinite(best_cv):
                best_net, best_cv = net.copy(), c
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= config.patience:
                    net = best_net.copy()
                    lr *= 0.5
                    bad_epochs = 0
                    if lr < config.learning_rate * config.min_lr_ratio:
                        break
    finally:
        if fh:
            fh.close()
    if math.isfinite(best_cv):
        net = best_net
    return TrainResult(net, records)


# -- serialization ------------------------------------------------------------

def encode_network(net):
    """``ZRSN`` container: dimension table, head names, then float64 parameters.

    Layout (little-endian): magic, version:u32, input_dim:u32,
    n_shared:u32, shared dims:u32*, bottleneck:u32, n_post:u32, post dims:u32*,
    n_heads:u32, per head (name_len:u32, utf-8 name, classes:u32), seed:u64,
    then every layer's ``W`` (row-major, ``in x out``) followed by its ``b``, in
    the order shared, bottleneck, post, heads.
    """
    u32 = lambda v: struct.pack("<I", int(v))
    out = [NET_MAGIC, u32(NET_VERSION), u32(net.input_dim), u32(len(net.shared))]
    out += [u32(W.shape[1]) for W, _ in net.shared]
    out += [u32(net.bottleneck_dim), u32(len(net.post))]
    out += [u32(W.shape[1]) for W, _ in net.post]
    out.append(u32(len(net.heads)))
    for t, (W, _) in net.heads.items():
        name = str(t).encode("utf-8")
        out += [u32(len(name)), name, u32(W.shape[1])]
    out.append(struct.pack("<Q", net.seed & (2**64 - 1)))
    for W, b in net.layers():
        out += [np.ascontiguousarray(W, dtype="<f8").tobytes(),
                np.asarray(b, dtype="<f8").tobytes()]
    return b"".join(out)


def decode_network(buf):
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(buf):
            raise FeatureFormatError("truncated network file")
        chunk = buf[off:off + n]
        off += n
        return chunk

    u32 = lambda: struct.unpack("<I", take(4))[0]
    if take(4) != NET_MAGIC:
        raise FeatureFormatError("bad magic, expected b'ZRSN'")
    if u32() != NET_VERSION:
        raise FeatureFormatError("unsupported network version")
    input_dim = u32()
    shared_dims = [u32() for _ in range(u32())]
    bneck = u32()
    post_dims = [u32() for _ in range(u32())]
    heads = OrderedDict()
    for _ in range(u32()):
        name = take(u32()).decode("utf-8")
        heads[name] = u32()
    seed = struct.unpack("<Q", take(8))[0]

    def layer(n_in, n_out):
        W = np.frombuffer(take(8 * n_in * n_out), dtype="<f8").reshape(n_in, n_out)
        b = np.frombuffer(take(8 * n_out), dtype="<f8")
        return [W.astype(np.float64), b.astype(np.float64)]

    dims = [input_dim, *shared_dims]
    shared = [layer(a, b) for a, b in zip(dims[:-1], dims[1:])]
    bottleneck = layer(dims[-1], bneck)
    dims = [bneck, *post_dims]
    post = [layer(a, b) for a, b in zip(dims[:-1], dims[1:])]
    head_layers = OrderedDict((t, layer(dims[-1], c)) for t, c in heads.items())
    if off != len(buf):
        raise FeatureFormatError("trailing bytes in network file")
    return MtlNetwork(shared, bottleneck, post, head_layers, seed)


def save_network(path, net):
    Path(path).write_bytes(encode_network(net))


def load_network(path):
    return decode_network(Path(path).read_bytes())
