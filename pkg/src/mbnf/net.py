"""Shared-hidden-layer bottleneck network with a per-language block softmax.

Architecture: affine+ReLU hidden layers, a linear (activation-free)
bottleneck, and one independently-normalized softmax output block per
language. Temporal context enters twice: the layer-1 input is a spliced
window of raw feature frames (done by the data pipeline via ``splice``), and
deeper layers may splice their predecessor's frame sequence, i.e. the stack
is a 1-D convolution network.

Training consumes single-language minibatches. Each example is a small
window of spliced frames wide enough to feed the deeper-layer context in
"valid" mode, so exactly one output frame survives per example. Gradients
flow through the shared stack and the owning language's output block only;
other blocks' parameters are untouched by construction.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .dsp import FeatureMatrix
from .errors import ConfigError, DataError


def default_context(num_hidden):
    """Layer 1 sees +/-2 frames, layers 2-3 +/-1, deeper layers none."""
    ctx = []
    for layer in range(num_hidden):
        if layer == 0:
            ctx.append([-2, -1, 0, 1, 2])
        elif layer <= 2:
            ctx.append([-1, 0, 1])
        else:
            ctx.append([0])
    return ctx


@dataclass
class NetSpec:
    """Network geometry. ``input_dim`` is the layer-1 input dim after splicing."""

    input_dim: int
    hidden_dim: int
    num_hidden: int
    bottleneck_dim: int
    blocks: list  # ordered (lang code, block size)
    context: list | None = None
    seed: int = 0

    def __post_init__(self):
        if self.context is None:
            self.context = default_context(self.num_hidden)
        if min(self.input_dim, self.hidden_dim, self.num_hidden, self.bottleneck_dim) < 1:
            raise ConfigError("all network dimensions must be >= 1")
        if not self.blocks:
            raise ConfigError("network needs at least one language block")
        codes = [code for code, _ in self.blocks]
        if len(set(codes)) != len(codes):
            raise ConfigError("duplicate language codes in blocks")
        if any(size < 1 for _, size in self.blocks):
            raise ConfigError("block sizes must be >= 1")
        if len(self.context) != self.num_hidden:
            raise ConfigError("context must list offsets for every hidden layer")
        for offs in self.context:
            if sorted(set(offs)) != list(offs):
                raise ConfigError("context offsets must be sorted and unique")

    @property
    def receptive_radius(self):
        """Frames of context needed beyond layer-1 splicing (layers >= 2)."""
        return sum(max(abs(o) for o in offs) for offs in self.context[1:])

    @property
    def window(self):
        return 2 * self.receptive_radius + 1

    def block_size(self, lang):
        for code, size in self.blocks:
            if code == lang:
                return size
        raise ConfigError(f"language {lang!r} has no output block")


@dataclass
class BlockSoftmaxNet:
    spec: NetSpec
    hidden_w: list = field(default_factory=list)
    hidden_b: list = field(default_factory=list)
    bn_w: np.ndarray | None = None
    bn_b: np.ndarray | None = None
    out_w: dict = field(default_factory=dict)
    out_b: dict = field(default_factory=dict)

    def param_items(self):
        """(name, array) pairs in the documented serialization order."""
        items = []
        for i, (w, b) in enumerate(zip(self.hidden_w, self.hidden_b)):
            items.append((f"h{i}/W", w))
            items.append((f"h{i}/b", b))
        items.append(("bn/W", self.bn_w))
        items.append(("bn/b", self.bn_b))
        for code, _ in self.spec.blocks:
            items.append((f"out/{code}/W", self.out_w[code]))
            items.append((f"out/{code}/b", self.out_b[code]))
        return items


@dataclass
class TrainBatch:
    """One single-language minibatch of frame windows."""

    inputs: np.ndarray  # (B, window, input_dim)
    lang: str
    targets: np.ndarray  # (B,) block-local state indices

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.int64)
        if self.inputs.ndim != 3 or self.inputs.shape[0] == 0:
            raise DataError("batch inputs must be a non-empty (B, window, dim) array")
        if self.targets.shape != (self.inputs.shape[0],):
            raise DataError("targets must align with the batch")


@dataclass
class TrainSchedule:
    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 0.1
    decay: float = 1.0
    sampling: str = "proportional"  # or "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be > 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.sampling not in ("proportional", "uniform"):
            raise ConfigError(f"unknown sampling policy {self.sampling!r}")


def splice(feats, offsets):
    """Concatenate each frame with its context frames (edges replicated).

    Output dim = input dim * len(offsets); offsets are taken in the given
    (sorted) order, so column blocks run from the most negative offset to the
    most positive.
    """
    data = feats.data if isinstance(feats, FeatureMatrix) else np.asarray(feats, dtype=np.float64)
    if data.shape[0] == 0:
        raise DataError("cannot splice an empty feature matrix")
    return _splice_seq(data[None], list(offsets), mode="same")[0]


def _splice_seq(h, offsets, mode):
    """Splice a (B, T, D) sequence along time. 'same' replicates edges;
    'valid' shrinks T by 2*radius."""
    B, T, D = h.shape
    offs = np.asarray(offsets, dtype=np.int64)
    if offs.shape[0] == 1 and offs[0] == 0:
        return h
    rad = int(np.max(np.abs(offs)))
    if mode == "same":
        base = np.arange(T)[:, None]
        idx = np.clip(base + offs[None, :], 0, T - 1)
    else:
        T_out = T - 2 * rad
        if T_out < 1:
            raise ConfigError(f"sequence of {T} frames too short for context radius {rad}")
        idx = (np.arange(T_out) + rad)[:, None] + offs[None, :]
    gathered = h[:, idx, :]  # (B, T_out, m, D)
    return gathered.reshape(B, idx.shape[0], offs.shape[0] * D)


def _splice_backward(dS, offsets, T_in):
    """Scatter-add the gradient of a 'valid' splice back to the input frames."""
    B, T_out, _ = dS.shape
    offs = list(offsets)
    if len(offs) == 1 and offs[0] == 0:
        return dS
    rad = max(abs(o) for o in offs)
    D = dS.shape[2] // len(offs)
    dh = np.zeros((B, T_in, D))
    for k, o in enumerate(offs):
        start = rad + o
        dh[:, start : start + T_out, :] += dS[:, :, k * D : (k + 1) * D]
    return dh


def init_net(spec):
    """He-normal weights (scale sqrt(2/fan_in)), zero biases, seeded."""
    rng = np.random.default_rng(spec.seed)
    net = BlockSoftmaxNet(spec=spec)
    fan_in = spec.input_dim
    for layer in range(spec.num_hidden):
        if layer > 0:
            fan_in = spec.hidden_dim * len(spec.context[layer])
        w = rng.standard_normal((spec.hidden_dim, fan_in)) * math.sqrt(2.0 / fan_in)
        net.hidden_w.append(w)
        net.hidden_b.append(np.zeros(spec.hidden_dim))
        fan_in = spec.hidden_dim
    net.bn_w = rng.standard_normal((spec.bottleneck_dim, spec.hidden_dim)) * math.sqrt(
        2.0 / spec.hidden_dim
    )
    net.bn_b = np.zeros(spec.bottleneck_dim)
    for code, size in spec.blocks:
        net.out_w[code] = rng.standard_normal((size, spec.bottleneck_dim)) * math.sqrt(
            2.0 / spec.bottleneck_dim
        )
        net.out_b[code] = np.zeros(size)
    return net


def _forward_hidden(net, x3, mode, want_cache=False):
    cache = []
    h = x3
    for layer in range(net.spec.num_hidden):
        S = h if layer == 0 else _splice_seq(h, net.spec.context[layer], mode)
        z = S @ net.hidden_w[layer].T + net.hidden_b[layer]
        h = np.maximum(z, 0.0)
        if want_cache:
            cache.append((S, z))
    bnf = h @ net.bn_w.T + net.bn_b
    if want_cache:
        cache.append((h, None))
    return bnf, cache


def _block_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def forward(net, batch, lang=None):
    """Forward pass over a spliced frame sequence (T, input_dim).

    Returns (bottleneck activations, posteriors); posteriors are a dict of
    per-language arrays, or a single array when ``lang`` is given. Deeper
    layers see edge-replicated context.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2:
        raise DataError("forward expects a (T, input_dim) matrix")
    if x.shape[1] != net.spec.input_dim:
        raise DataError(f"input dim {x.shape[1]} != spec input_dim {net.spec.input_dim}")
    bnf, _ = _forward_hidden(net, x[None], mode="same")
    bnf = bnf[0]
    if lang is not None:
        if lang not in net.out_w:
            raise ConfigError(f"language {lang!r} has no output block")
        logits = bnf @ net.out_w[lang].T + net.out_b[lang]
        return bnf, _block_softmax(logits)
    posts = {}
    for code, _ in net.spec.blocks:
        logits = bnf @ net.out_w[code].T + net.out_b[code]
        posts[code] = _block_softmax(logits)
    return bnf, posts


def _loss_and_grads(net, batch):
    """Mean cross-entropy over the batch plus gradients for the shared stack
    and the owning block. Non-owning blocks get no gradient at all."""
    spec = net.spec
    if batch.lang not in net.out_w:
        raise ConfigError(f"language {batch.lang!r} has no output block")
    K = spec.block_size(batch.lang)
    if np.any(batch.targets < 0) or np.any(batch.targets >= K):
        raise DataError(f"targets outside block of size {K}")
    if batch.inputs.shape[2] != spec.input_dim:
        raise DataError(
            f"batch input dim {batch.inputs.shape[2]} != spec input_dim {spec.input_dim}"
        )
    B = batch.inputs.shape[0]
    bnf3, cache = _forward_hidden(net, batch.inputs, mode="valid", want_cache=True)
    if bnf3.shape[1] != 1:
        raise ConfigError(
            f"training windows must collapse to one frame; got {bnf3.shape[1]} "
            f"(window should be {spec.window})"
        )
    bnf = bnf3[:, 0, :]
    Wo, bo = net.out_w[batch.lang], net.out_b[batch.lang]
    logits = bnf @ Wo.T + bo
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(B)
    loss = float(np.mean(log_z - shifted[rows, batch.targets]))

    dlogits = np.exp(shifted - log_z[:, None])
    dlogits[rows, batch.targets] -= 1.0
    dlogits /= B
    grads = {
        f"out/{batch.lang}/W": dlogits.T @ bnf,
        f"out/{batch.lang}/b": dlogits.sum(axis=0),
    }
    dbnf = dlogits @ Wo  # (B, bottleneck_dim)
    h_last = cache[-1][0][:, 0, :]
    grads["bn/W"] = dbnf.T @ h_last
    grads["bn/b"] = dbnf.sum(axis=0)
    dh = (dbnf @ net.bn_w)[:, None, :]  # (B, 1, H)
    for layer in range(spec.num_hidden - 1, -1, -1):
        S, z = cache[layer]
        dz = dh * (z > 0)
        B_, T_out, _ = dz.shape
        dz2 = dz.reshape(B_ * T_out, -1)
        S2 = S.reshape(B_ * T_out, -1)
        grads[f"h{layer}/W"] = dz2.T @ S2
        grads[f"h{layer}/b"] = dz2.sum(axis=0)
        if layer > 0:
            dS = dz @ net.hidden_w[layer]
            T_in = cache[layer - 1][1].shape[1]
            dh = _splice_backward(dS, spec.context[layer], T_in)
    return loss, grads


def train_step(net, batch, lr):
    """One SGD step on a single-language batch; returns the mean
    cross-entropy of the batch before the update."""
    loss, grads = _loss_and_grads(net, batch)
    for i in range(net.spec.num_hidden):
        net.hidden_w[i] -= lr * grads[f"h{i}/W"]
        net.hidden_b[i] -= lr * grads[f"h{i}/b"]
    net.bn_w -= lr * grads["bn/W"]
    net.bn_b -= lr * grads["bn/b"]
    net.out_w[batch.lang] -= lr * grads[f"out/{batch.lang}/W"]
    net.out_b[batch.lang] -= lr * grads[f"out/{batch.lang}/b"]
    return loss


def _window_indices(num_frames, offset, radius):
    rel = np.arange(-radius, radius + 1)
    idx = np.clip(np.arange(num_frames)[:, None] + rel[None, :], 0, num_frames - 1)
    return idx + offset


def build_training_set(items, radius):
    """Group (spliced, targets, lang) triples by language.

    Returns {lang: (X, targets, window_index)} where X concatenates the
    language's spliced frames, and window_index maps each frame to its
    window rows (edge-replicated within each utterance).
    """
    grouped = {}
    for spliced, targets, lang in items:
        spliced = np.asarray(spliced, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.int64)
        if spliced.shape[0] != targets.shape[0]:
            raise DataError("spliced frames and targets must have equal length")
        grouped.setdefault(lang, []).append((spliced, targets))
    out = {}
    for lang, parts in grouped.items():
        X = np.vstack([p[0] for p in parts])
        y = np.concatenate([p[1] for p in parts])
        idx = np.vstack(
            [
                _window_indices(p[0].shape[0], off, radius)
                for p, off in zip(parts, np.cumsum([0] + [p[0].shape[0] for p in parts[:-1]]))
            ]
        )
        out[lang] = (X, y, idx.astype(np.int64))
    return out


def train(net, items, schedule):
    """SGD over single-language minibatches drawn by the sampling policy.

    ``items`` is a list of (spliced feature matrix, frame targets, lang code)
    triples. Returns (net, history) where history[e][lang] is the language's
    mean batch loss in epoch e (None if the language was never drawn).
    """
    data = build_training_set(items, net.spec.receptive_radius)
    langs = [code for code, _ in net.spec.blocks]
    for lang in data:
        if lang not in langs:
            raise ConfigError(f"language {lang!r} present in data but absent from blocks")
    present = [lang for lang in langs if lang in data]
    if not present:
        raise DataError("no training data")
    counts = np.array([data[lang][0].shape[0] for lang in present], dtype=np.float64)
    if schedule.sampling == "proportional":
        probs = counts / counts.sum()
    else:
        probs = np.full(len(present), 1.0 / len(present))
    total = int(counts.sum())
    batches_per_epoch = max(1, math.ceil(total / schedule.batch_size))
    rng = np.random.default_rng(np.random.SeedSequence([int(schedule.seed), 23]))
    history = []
    for epoch in range(schedule.epochs):
        lr = schedule.learning_rate * (schedule.decay**epoch)
        sums = {lang: 0.0 for lang in present}
        nums = {lang: 0 for lang in present}
        for _ in range(batches_per_epoch):
            lang = present[int(rng.choice(len(present), p=probs))]
            X, y, idx = data[lang]
            rows = rng.integers(0, X.shape[0], size=schedule.batch_size)
            batch = TrainBatch(inputs=X[idx[rows]], lang=lang, targets=y[rows])
            loss = train_step(net, batch, lr)
            sums[lang] += loss
            nums[lang] += 1
        history.append(
            {lang: (sums[lang] / nums[lang] if nums[lang] else None) for lang in present}
        )
    return net, history


def extract_bnf(net, feats, raw_context=None):
    """Bottleneck activations for a whole utterance; frame count preserved.

    ``feats`` is the un-spliced network-input FeatureMatrix; its frames are
    spliced with the layer-1 context before the forward pass.
    """
    offsets = raw_context if raw_context is not None else net.spec.context[0]
    spliced = splice(feats, offsets)
    if spliced.shape[1] != net.spec.input_dim:
        raise DataError(
            f"{feats.utt_id if isinstance(feats, FeatureMatrix) else ''}: spliced dim "
            f"{spliced.shape[1]} != spec input_dim {net.spec.input_dim}"
        )
    bnf, _ = forward(net, spliced)
    utt_id = feats.utt_id if isinstance(feats, FeatureMatrix) else ""
    shift = feats.frame_shift_ms if isinstance(feats, FeatureMatrix) else 10.0
    return FeatureMatrix(utt_id=utt_id, kind="bnf", data=bnf, frame_shift_ms=shift)


def combine_features(parts, utterance_ivector=None, num_frames=None, utt_id=None):
    """Per-frame concatenation of framed parts, plus the utterance i-vector
    replicated on every frame (appended after the parts).

    With an empty parts list, ``num_frames`` must be given and the result is
    the constant i-vector matrix.
    """
    if not parts and utterance_ivector is None:
        raise DataError("combine_features needs at least one part or an i-vector")
    if parts:
        frames = [p.num_frames for p in parts]
        if len(set(frames)) != 1:
            detail = ", ".join(f"{p.kind}={p.num_frames}" for p in parts)
            raise DataError(f"frame-count mismatch between parts: {detail}")
        shifts = {p.frame_shift_ms for p in parts}
        if len(shifts) != 1:
            raise DataError("parts disagree on the frame grid")
        num_frames = frames[0]
        utt_id = utt_id if utt_id is not None else parts[0].utt_id
        shift = parts[0].frame_shift_ms
    else:
        if num_frames is None:
            raise DataError("num_frames is required when parts is empty")
        utt_id = utt_id or ""
        shift = 10.0
    columns = [p.data for p in parts]
    if utterance_ivector is not None:
        vec = np.asarray(utterance_ivector, dtype=np.float64).reshape(1, -1)
        columns.append(np.repeat(vec, num_frames, axis=0))
    data = np.hstack(columns)
    return FeatureMatrix(utt_id=utt_id, kind="combined", data=data, frame_shift_ms=shift)


def probe_eval(train_items, test_items, blocks, epochs=25, lr=0.5, batch_size=256,
               seed=0, standardize=True):
    """Affine + block-softmax probe accuracy, the desk-scale stand-in for an
    acoustic-model comparison.

    Items are (features (T, D), frame targets, lang code) triples. The probe
    is trained on the training frames with the same one-language-per-batch
    masking as the main network and returns held-out frame accuracy per
    language.
    """
    if not test_items:
        raise DataError("probe_eval needs a non-empty test set")
    block_map = dict(blocks)
    tr = {}
    for X, y, lang in train_items:
        tr.setdefault(lang, []).append((np.asarray(X, dtype=np.float64), np.asarray(y)))
    te = {}
    for X, y, lang in test_items:
        te.setdefault(lang, []).append((np.asarray(X, dtype=np.float64), np.asarray(y)))
    all_train = np.vstack([X for parts in tr.values() for X, _ in parts])
    if standardize:
        mu = all_train.mean(axis=0)
        sd = np.maximum(all_train.std(axis=0), 1e-8)
    else:
        mu = np.zeros(all_train.shape[1])
        sd = np.ones(all_train.shape[1])
    data = {
        lang: (
            (np.vstack([X for X, _ in parts]) - mu) / sd,
            np.concatenate([y for _, y in parts]).astype(np.int64),
        )
        for lang, parts in tr.items()
    }
    weights = {lang: np.zeros((block_map[lang], all_train.shape[1])) for lang in data}
    biases = {lang: np.zeros(block_map[lang]) for lang in data}
    langs = sorted(data)
    counts = np.array([data[lang][0].shape[0] for lang in langs], dtype=np.float64)
    probs = counts / counts.sum()
    batches = max(1, math.ceil(counts.sum() / batch_size))
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 29]))
    for epoch in range(epochs):
        for _ in range(batches):
            lang = langs[int(rng.choice(len(langs), p=probs))]
            X, y = data[lang]
            rows = rng.integers(0, X.shape[0], size=batch_size)
            xb, yb = X[rows], y[rows]
            logits = xb @ weights[lang].T + biases[lang]
            post = _block_softmax(logits)
            post[np.arange(xb.shape[0]), yb] -= 1.0
            post /= xb.shape[0]
            weights[lang] -= lr * (post.T @ xb)
            biases[lang] -= lr * post.sum(axis=0)
    acc = {}
    for lang, parts in te.items():
        if lang not in weights:
            raise DataError(f"language {lang!r} has no training data for the probe")
        X = (np.vstack([Xp for Xp, _ in parts]) - mu) / sd
        y = np.concatenate([yp for _, yp in parts]).astype(np.int64)
        pred = np.argmax(X @ weights[lang].T + biases[lang], axis=1)
        acc[lang] = float(np.mean(pred == y))
    return acc
