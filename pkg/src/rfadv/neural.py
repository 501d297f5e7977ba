"""Small convolutional modulation classifier written directly in numpy.

Every layer exposes an explicit forward and backward pass, so exact
gradients with respect to both the parameters and the IQ input are
available to the training loop and to the attacks.  Layers keep no state
between calls: forward returns a cache that is handed back to backward,
which makes a model safe to evaluate from several threads at once.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .channel import add_awgn, phase_rotate

log = logging.getLogger(__name__)

MODEL_MAGIC = b"RFADVM1"


# ---------------------------------------------------------------- layers


class Layer:
    tag = 0
    kind = "layer"

    def arrays(self) -> list[np.ndarray]:
        """Arrays written to disk (parameters and hyperparameters)."""
        return []

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {}

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dy, cache, need_params=True):
        raise NotImplementedError


class Conv1D(Layer):
    """1-D convolution, stride 1, 'same' padding (extra pad on the right)."""

    tag = 1
    kind = "conv1d"

    def __init__(self, W: np.ndarray, b: np.ndarray):
        self.W = W  # (kernel, in_ch, out_ch)
        self.b = b

    @classmethod
    def init(cls, in_ch, out_ch, kernel, rng, dtype=np.float64):
        std = np.sqrt(2.0 / (in_ch * kernel))
        return cls((rng.standard_normal((kernel, in_ch, out_ch)) * std).astype(dtype),
                   np.zeros(out_ch, dtype=dtype))

    @property
    def params(self):
        return {"W": self.W, "b": self.b}

    def arrays(self):
        return [self.W, self.b]

    def forward(self, x, train=False, rng=None):
        K, cin, cout = self.W.shape
        B, L, _ = x.shape
        left = (K - 1) // 2
        xp = np.pad(x, ((0, 0), (left, K - 1 - left), (0, 0)))
        # columns ordered (cin, K) to match the sliding window layout
        cols = np.lib.stride_tricks.sliding_window_view(xp, K, axis=1).reshape(B * L, cin * K)
        y = cols @ self._wmat() + self.b
        return y.reshape(B, L, cout), cols

    def _wmat(self):
        K, cin, cout = self.W.shape
        return self.W.transpose(1, 0, 2).reshape(cin * K, cout)

    def backward(self, dy, cache, need_params=True):
        cols = cache
        K, cin, cout = self.W.shape
        B, L, _ = dy.shape
        dy2 = dy.reshape(B * L, cout)
        grads = {}
        if need_params:
            grads["W"] = (cols.T @ dy2).reshape(cin, K, cout).transpose(1, 0, 2)
            grads["b"] = dy2.sum(axis=0)
        dcols = (dy2 @ self._wmat().T).reshape(B, L, cin, K)
        left = (K - 1) // 2
        dxp = np.zeros((B, L + K - 1, cin), dtype=dy.dtype)
        for k in range(K):
            dxp[:, k:k + L, :] += dcols[:, :, :, k]
        return dxp[:, left:left + L, :], grads


class Dense(Layer):
    tag = 5
    kind = "dense"

    def __init__(self, W: np.ndarray, b: np.ndarray):
        self.W = W  # (in, out)
        self.b = b

    @classmethod
    def init(cls, n_in, n_out, rng, dtype=np.float64, gain=2.0):
        std = np.sqrt(gain / n_in)
        return cls((rng.standard_normal((n_in, n_out)) * std).astype(dtype),
                   np.zeros(n_out, dtype=dtype))

    @property
    def params(self):
        return {"W": self.W, "b": self.b}

    def arrays(self):
        return [self.W, self.b]

    def forward(self, x, train=False, rng=None):
        return x @ self.W + self.b, x

    def backward(self, dy, cache, need_params=True):
        x = cache
        grads = {"W": x.T @ dy, "b": dy.sum(axis=0)} if need_params else {}
        return dy @ self.W.T, grads


class ReLU(Layer):
    tag = 2
    kind = "relu"

    def forward(self, x, train=False, rng=None):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, cache, need_params=True):
        return dy * cache, {}


class MaxPool1D(Layer):
    tag = 3
    kind = "maxpool1d"

    def __init__(self, size: int = 2):
        self.size = int(size)

    def arrays(self):
        return [np.array([self.size], dtype=np.float64)]

    def forward(self, x, train=False, rng=None):
        B, L, C = x.shape
        s = self.size
        x4 = x[:, : (L // s) * s].reshape(B, L // s, s, C)
        if s == 2:
            # ties go to the first element, as with argmax
            first = x4[:, :, 0, :] >= x4[:, :, 1, :]
            return np.where(first, x4[:, :, 0, :], x4[:, :, 1, :]), (first, x.shape)
        idx = x4.argmax(axis=2)
        y = np.take_along_axis(x4, idx[:, :, None, :], axis=2)[:, :, 0, :]
        return y, (idx, x.shape)

    def backward(self, dy, cache, need_params=True):
        idx, shape = cache
        B, L, C = shape
        s = self.size
        if s == 2:
            dx = np.zeros(shape, dtype=dy.dtype)
            dx[:, 0:(L // 2) * 2:2] = dy * idx
            dx[:, 1:(L // 2) * 2:2] = dy * ~idx
            return dx, {}
        dx4 = np.zeros((B, L // s, s, C), dtype=dy.dtype)
        np.put_along_axis(dx4, idx[:, :, None, :], dy[:, :, None, :], axis=2)
        dx = np.zeros(shape, dtype=dy.dtype)
        dx[:, : (L // s) * s] = dx4.reshape(B, (L // s) * s, C)
        return dx, {}


class AvgPool1D(Layer):
    tag = 9
    kind = "avgpool1d"

    def __init__(self, size: int = 4):
        self.size = int(size)

    def arrays(self):
        return [np.array([self.size], dtype=np.float64)]

    def forward(self, x, train=False, rng=None):
        B, L, C = x.shape
        s = self.size
        return x[:, : (L // s) * s].reshape(B, L // s, s, C).mean(axis=2), x.shape

    def backward(self, dy, cache, need_params=True):
        B, L, C = cache
        s = self.size
        dx = np.zeros(cache, dtype=dy.dtype)
        dx[:, : (L // s) * s] = np.repeat(dy / s, s, axis=1)
        return dx, {}


class ChannelNorm(Layer):
    """Fixed per-channel standardization ``(x - shift) / scale``.

    Not trained by gradient descent.  :func:`train` fits it once from an
    augmented sample of the training frames if it has not been fitted yet.
    """

    tag = 10
    kind = "channelnorm"

    def __init__(self, shift, scale, fitted: bool = True):
        self.shift = np.asarray(shift, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)
        self.fitted = bool(fitted)
        if self.shift.shape != self.scale.shape or np.any(self.scale <= 0):
            raise ValueError("ChannelNorm needs matching shift/scale with positive scale")

    @classmethod
    def identity(cls, channels: int) -> "ChannelNorm":
        return cls(np.zeros(channels), np.ones(channels), fitted=False)

    def arrays(self):
        return [self.shift, self.scale, np.array([float(self.fitted)])]

    def fit(self, x) -> None:
        self.shift = x.mean(axis=(0, 1)).astype(np.float64)
        # floored so near-constant channels are not blown up
        self.scale = np.sqrt(x.var(axis=(0, 1)).astype(np.float64) + 1e-2)
        self.fitted = True

    def forward(self, x, train=False, rng=None):
        return (x - self.shift.astype(x.dtype)) / self.scale.astype(x.dtype), None

    def backward(self, dy, cache, need_params=True):
        return dy / self.scale.astype(dy.dtype), {}


class Flatten(Layer):
    tag = 4
    kind = "flatten"

    def forward(self, x, train=False, rng=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache, need_params=True):
        return dy.reshape(cache), {}


class Dropout(Layer):
    """Inverted dropout; identity outside training."""

    tag = 6
    kind = "dropout"

    def __init__(self, rate: float = 0.5):
        self.rate = float(rate)

    def arrays(self):
        return [np.array([self.rate], dtype=np.float64)]

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            return x, None
        keep = 1.0 - self.rate
        mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * mask, mask

    def backward(self, dy, cache, need_params=True):
        return (dy if cache is None else dy * cache), {}


class IQFeatures(Layer):
    """Fixed front end producing phase-aware and phase-invariant channels.

    Channels are raw I and Q, the power ``|y|^2`` of the matched-filtered
    signal ``y``, and for two sources (raw ``x`` at lag ``lags[0]``, ``y``
    at lag ``lags[1]``) the re/im parts of ``(u[n] conj(u[n-lag]))^k`` for
    every ``k`` in ``powers``, where ``u = s / sqrt(|s|^2 + delta)`` is the
    amplitude-normalised source.  The lag products cancel any common
    carrier phase, and their powers turn the discrete step structure of
    PSK and FSK alphabets into quantities a linear layer can read off.
    Last come soft amplitude bins ``exp(-(a - c)^2 / (2 width^2))`` for
    each level ``c``, with ``a = sqrt(|y|^2 + delta) / rms(y)`` so that the
    bins do not drift with received power; averaged over time they form
    a smooth histogram of the ring and grid amplitudes that separate QAM
    from APSK orders.
    Filtering and lags are circular.  No trainable parameters.
    """

    tag = 7
    kind = "iqfeatures"

    def __init__(self, taps=None, powers=(1, 2, 4, 8), lags=(1, 4), delta=1e-2, levels=(), width=0.06):
        self.taps = np.array([1.0]) if taps is None else np.asarray(taps, dtype=np.float64)
        self.powers = tuple(int(k) for k in powers)
        self.lags = tuple(int(k) for k in lags)
        self.delta = float(delta)
        self.levels = np.asarray(levels, dtype=np.float64).reshape(-1)
        self.width = float(width)
        if len(self.lags) != 2 or min(self.powers, default=1) < 1:
            raise ValueError("IQFeatures needs two lags and positive powers")

    @property
    def out_channels(self) -> int:
        return 3 + 4 * len(self.powers) + len(self.levels)

    def arrays(self):
        return [self.taps, np.array(self.powers, dtype=np.float64),
                np.array([*self.lags, self.delta, self.width], dtype=np.float64), self.levels]

    def _bins(self, y):
        p = y.real**2 + y.imag**2
        b = np.sqrt(p + self.delta)
        rho = np.sqrt(p.mean(axis=1, keepdims=True) + 1e-12)  # silent frames stay finite
        a = b / rho
        c = self.levels.astype(a.dtype)
        return (a, b, rho), np.exp(-((a[..., None] - c) ** 2) / (2 * self.width**2))

    def _filter(self, z):
        # taps are real and symmetric, so the adjoint is the same filter
        H = _circular_response(self.taps, z.shape[1]).astype(z.dtype)
        return np.fft.ifft(np.fft.fft(z, axis=1) * H, axis=1)

    def forward(self, x, train=False, rng=None):
        z = x[..., 0] + 1j * x[..., 1]
        y = self._filter(z)
        chans = [x[..., 0], x[..., 1], (y.real**2 + y.imag**2).astype(x.dtype)]
        for src, lag in ((z, self.lags[0]), (y, self.lags[1])):
            u = src / np.sqrt(src.real**2 + src.imag**2 + self.delta)
            for w in _powers(u, self.powers).values():
                d = w * np.roll(w, lag, axis=1).conj()
                chans += [d.real, d.imag]
        out = np.stack(chans, axis=-1).astype(x.dtype, copy=False)
        if len(self.levels):
            out = np.concatenate([out, self._bins(y)[1].astype(x.dtype, copy=False)], axis=-1)
        return out, (z, y)

    def backward(self, dy, cache, need_params=True):
        z, y = cache
        grad = {}
        for name, src, lag, j0 in (("z", z, self.lags[0], 3), ("y", y, self.lags[1], 3 + 2 * len(self.powers))):
            p = src.real**2 + src.imag**2 + self.delta
            s = 1.0 / np.sqrt(p)
            u = src * s
            pw = _powers(u, sorted({*self.powers, *(k - 1 for k in self.powers)} - {0}))
            Gu = np.zeros_like(u)
            for j, k in enumerate(self.powers):
                Gd = dy[..., j0 + 2 * j] + 1j * dy[..., j0 + 2 * j + 1]
                w = pw[k]
                Gw = Gd * np.roll(w, lag, axis=1) + np.roll(Gd.conj() * w, -lag, axis=1)
                Gu += Gw * (k * pw[k - 1]).conj() if k > 1 else Gw
            # u = src * p^(-1/2), p = |src|^2 + delta
            grad[name] = Gu * s - src * (np.real(Gu * src.conj()) * s / p)
        Gy = grad["y"] + 2 * y * dy[..., 2]
        if len(self.levels):
            (a, b, rho), phi = self._bins(y)
            j0 = 3 + 4 * len(self.powers)
            # d/da of each bump; a = b / rho with b = sqrt(|y|^2 + delta), rho = rms(y)
            dLda = np.sum(dy[..., j0:] * phi * (self.levels.astype(a.dtype) - a[..., None]), axis=-1) / self.width**2
            dLdrho = -np.sum(dLda * a, axis=1, keepdims=True) / rho
            Gy = Gy + y * (dLda / (rho * b) + dLdrho / (y.shape[1] * rho))
        Gz = dy[..., 0] + 1j * dy[..., 1] + grad["z"] + self._filter(Gy)
        return np.stack([Gz.real, Gz.imag], axis=-1).astype(dy.dtype, copy=False), {}


def _powers(u, ks):
    """``{k: u**k}`` for the requested positive integer exponents."""
    out, cur, have = {}, u, 1
    for k in sorted(ks):
        while have < k:
            cur = cur * u
            have += 1
        out[k] = cur
    return out


def _circular_response(taps, n):
    return _response_cached(tuple(taps.tolist()), n)


@lru_cache(maxsize=16)
def _response_cached(taps, n):
    centre = (len(taps) - 1) // 2
    h = np.zeros(n)
    np.add.at(h, (np.arange(len(taps)) - centre) % n, taps)
    return np.fft.fft(h)


class GlobalAvgPool(Layer):
    tag = 8
    kind = "globalavgpool"

    def forward(self, x, train=False, rng=None):
        return x.mean(axis=1), x.shape

    def backward(self, dy, cache, need_params=True):
        B, L, C = cache
        return np.broadcast_to(dy[:, None, :] / L, cache).copy(), {}


_LAYER_TYPES = {cls.tag: cls for cls in (Conv1D, ReLU, MaxPool1D, Flatten, Dense, Dropout,
                                         IQFeatures, GlobalAvgPool, AvgPool1D, ChannelNorm)}


# ---------------------------------------------------------------- model


@dataclass
class Model:
    layers: list[Layer]
    input_len: int
    in_channels: int = 2

    @property
    def num_classes(self) -> int:
        for layer in reversed(self.layers):
            if isinstance(layer, Dense):
                return layer.W.shape[1]
        raise ValueError("model has no dense output layer")

    @property
    def dtype(self):
        for layer in self.layers:
            if layer.params:
                return layer.params["W"].dtype
        return np.dtype(np.float64)

    def parameters(self):
        """Yield ``(layer_index, name, array)`` for every trainable array."""
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params.items():
                yield i, name, arr

    def num_parameters(self) -> int:
        return sum(a.size for _, _, a in self.parameters())

    def astype(self, dtype) -> "Model":
        """Copy with parameters cast to ``dtype``."""
        layers = []
        for layer in self.layers:
            if isinstance(layer, (Conv1D, Dense)):
                layers.append(type(layer)(layer.W.astype(dtype), layer.b.astype(dtype)))
            elif isinstance(layer, (MaxPool1D, AvgPool1D)):
                layers.append(type(layer)(layer.size))
            elif isinstance(layer, Dropout):
                layers.append(Dropout(layer.rate))
            elif isinstance(layer, ChannelNorm):
                layers.append(ChannelNorm(layer.shift, layer.scale, layer.fitted))
            elif isinstance(layer, IQFeatures):
                layers.append(IQFeatures(layer.taps, layer.powers, layer.lags, layer.delta, layer.levels, layer.width))
            else:
                layers.append(type(layer)())
        return Model(layers, self.input_len, self.in_channels)

    def copy(self) -> "Model":
        return self.astype(self.dtype)


def build_model(num_classes: int, input_len: int = 1024, *, channels=(32, 32, 32), kernel: int = 8,
                hidden: int = 64, dropout: float = 0.5, front_end: bool = True, taps=None,
                powers=(1, 2, 4, 8), lags=(1, 4), levels=np.arange(32) * 0.08, width=0.06,
                front_pool: int = 4, global_pool: bool = True,
                seed: int = 0, dtype=np.float64) -> Model:
    """Feature front end averaged over ``front_pool`` samples, conv blocks
    (conv + ReLU + maxpool 2), pooling, dense + ReLU + dropout, then the
    class layer.

    ``taps`` is the receive matched filter used by the front end
    (root-raised-cosine, 0.35 rolloff, 8-symbol span, 4 sps by default).
    ``front_end=False`` feeds raw I/Q to the first convolution;
    ``global_pool=False`` flattens instead of averaging over time.
    """
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    cin, length = 2, input_len
    if front_end:
        if taps is None:
            from .modem import PulseShape
            taps = PulseShape().taps
        front = IQFeatures(taps, powers, lags, levels=levels, width=width)
        cin = front.out_channels
        layers += [front, ChannelNorm.identity(cin)]
        if front_pool > 1:
            layers.append(AvgPool1D(front_pool))
            length //= front_pool
    for cout in channels:
        layers += [Conv1D.init(cin, cout, kernel, rng, dtype), ReLU(), MaxPool1D(2)]
        cin, length = cout, length // 2
    if global_pool:
        layers.append(GlobalAvgPool())
        n_flat = cin
    else:
        layers.append(Flatten())
        n_flat = cin * length
    layers += [Dense.init(n_flat, hidden, rng, dtype), ReLU(), Dropout(dropout)]
    layers.append(Dense.init(hidden, num_classes, rng, dtype, gain=1.0))
    return Model(layers, input_len)


# ---------------------------------------------------------------- evaluation


@dataclass
class Prediction:
    scores: np.ndarray
    probs: np.ndarray = field(init=False)
    label: np.ndarray | int = field(init=False)

    def __post_init__(self):
        self.probs = softmax(self.scores)
        lab = np.argmax(self.scores, axis=-1)
        self.label = int(lab) if np.ndim(lab) == 0 else lab


def softmax(z):
    z = np.asarray(z)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def as_input(model: Model, x) -> tuple[np.ndarray, bool]:
    """Convert frames to a ``(B, L, 2)`` real batch; also report whether ``x`` was a single frame.

    Accepts complex ``(L,)`` / ``(B, L)`` or real ``(L, 2)`` / ``(B, L, 2)``.
    """
    x = np.asarray(x)
    if np.iscomplexobj(x):
        single = x.ndim == 1
        x = np.stack([x.real, x.imag], axis=-1)
    else:
        single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1] != model.input_len or x.shape[2] != model.in_channels:
        raise ValueError(
            f"input shape {x.shape[1:] if x.ndim == 3 else x.shape} does not match model input "
            f"({model.input_len}, {model.in_channels})"
        )
    return np.ascontiguousarray(x, dtype=model.dtype), single


def _run(model: Model, X, train=False, rng=None):
    caches = []
    for layer in model.layers:
        X, cache = layer.forward(X, train, rng)
        caches.append(cache)
    return X, caches


def _backprop(model: Model, caches, dlogits, need_params=True):
    grads = [None] * len(model.layers)
    d = dlogits
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        d, g = layer.backward(d, caches[i], need_params)
        grads[i] = g
    return d, grads


def logits(model: Model, x, batch_size: int = 256) -> np.ndarray:
    X, single = as_input(model, x)
    out = np.concatenate([_run(model, X[i:i + batch_size])[0] for i in range(0, len(X), batch_size)]) \
        if len(X) else np.zeros((0, model.num_classes), dtype=model.dtype)
    return out[0] if single else out


def forward(model: Model, x) -> Prediction:
    """Evaluation-mode prediction for one frame or a batch."""
    return Prediction(logits(model, x))


def predict(model: Model, x, batch_size: int = 256) -> np.ndarray:
    return np.atleast_1d(np.argmax(logits(model, x, batch_size), axis=-1))


def accuracy(model: Model, x, labels, batch_size: int = 256) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        return float("nan")
    return float(np.mean(predict(model, x, batch_size) == labels))


def loss(pred: Prediction, label) -> np.ndarray | float:
    """Cross-entropy ``-log probs[label]``."""
    logp = log_softmax(pred.scores)
    label = np.asarray(label)
    if logp.ndim == 1:
        return float(-logp[int(label)])
    label = np.broadcast_to(label, logp.shape[:1])
    return -np.take_along_axis(logp, label[:, None], axis=1)[:, 0]


def log_softmax(z):
    z = np.asarray(z)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def _ce_grad(scores, labels):
    g = softmax(scores)
    g[np.arange(len(labels)), labels] -= 1.0
    return g


def loss_and_grad_input(model: Model, x, labels):
    """Per-frame cross-entropy, logits and input gradients in one pass.

    Returns ``(loss, scores, grad)`` with ``grad`` shaped like the ``(B, L, 2)``
    input batch.  Each frame's gradient is of its own loss only.
    """
    X, _ = as_input(model, x)
    labels = np.broadcast_to(np.asarray(labels, dtype=np.int64), (len(X),))
    scores, caches = _run(model, X)
    logp = log_softmax(scores)
    losses = -logp[np.arange(len(X)), labels]
    dX, _ = _backprop(model, caches, _ce_grad(scores, labels), need_params=False)
    return losses, scores, dX


def grad_input(model: Model, x, label) -> np.ndarray:
    """Exact gradient of the cross-entropy w.r.t. the input, as ``(L, 2)`` or ``(B, L, 2)``."""
    X, single = as_input(model, x)
    _, _, g = loss_and_grad_input(model, X, label)
    return g[0] if single else g


def grad_params(model: Model, x, label, *, train=False, rng=None) -> list[dict[str, np.ndarray]]:
    """Gradient of the summed cross-entropy w.r.t. every parameter, one dict per layer."""
    X, _ = as_input(model, x)
    labels = np.broadcast_to(np.asarray(label, dtype=np.int64), (len(X),))
    scores, caches = _run(model, X, train, rng)
    _, grads = _backprop(model, caches, _ce_grad(scores, labels))
    return grads


# ---------------------------------------------------------------- training


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    dropout_rate: float = 0.5
    aug_snr_range_db: tuple[float, float] = (0.0, 30.0)
    aug_phase_range_rad: tuple[float, float] = (-np.pi, np.pi)
    augment: bool = True
    betas: tuple[float, float] = (0.9, 0.999)
    lr_schedule: str = "cosine"
    seed: int = 0

    def __post_init__(self):
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate < 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and learning_rate >= 0 are required")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for ``epoch``; cosine decays to zero over the run."""
        if self.lr_schedule == "constant" or self.epochs <= 1:
            return self.learning_rate
        return 0.5 * self.learning_rate * (1 + np.cos(np.pi * epoch / self.epochs))


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    accuracy: float
    val_accuracy: float = float("nan")


class Adam:
    def __init__(self, model: Model, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.t = 0
        self.m = [{k: np.zeros_like(v) for k, v in layer.params.items()} for layer in model.layers]
        self.v = [{k: np.zeros_like(v) for k, v in layer.params.items()} for layer in model.layers]

    def step(self, model: Model, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for i, layer in enumerate(model.layers):
            for name, p in layer.params.items():
                g = grads[i][name]
                m, v = self.m[i][name], self.v[i][name]
                m *= self.b1
                m += (1 - self.b1) * g
                v *= self.b2
                v += (1 - self.b2) * g * g
                p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def augment_batch(frames, rng, snr_range=(0.0, 30.0), phase_range=(-np.pi, np.pi)):
    """Random AWGN and phase offset, drawn independently for every frame."""
    n = len(frames)
    snr = rng.uniform(snr_range[0], snr_range[1], n)
    theta = rng.uniform(phase_range[0], phase_range[1], n)
    return add_awgn(phase_rotate(frames, theta), snr, rng)


def _fit_norms(model: Model, frames, cfg: TrainConfig, rng, sample: int = 256) -> None:
    """Fit unfitted :class:`ChannelNorm` layers on an augmented sample of ``frames``."""
    todo = [i for i, layer in enumerate(model.layers) if isinstance(layer, ChannelNorm) and not layer.fitted]
    if not todo:
        return
    idx = rng.choice(len(frames), size=min(sample, len(frames)), replace=False)
    xb = frames[np.sort(idx)]
    if cfg.augment:
        xb = augment_batch(xb, rng, cfg.aug_snr_range_db, cfg.aug_phase_range_rad)
    h, _ = as_input(model, xb)
    for i, layer in enumerate(model.layers[: todo[-1] + 1]):
        if i in todo:
            layer.fit(h)
        h, _ = layer.forward(h)


def train(model: Model, frames, labels, cfg: TrainConfig = TrainConfig(), *,
          val=None, callback=None) -> tuple[Model, list[EpochMetrics]]:
    """Mini-batch Adam on augmented complex frames.  Trains ``model`` in place.

    ``val`` is an optional ``(frames, labels)`` pair scored after each epoch.
    """
    frames = np.asarray(frames)
    labels = np.asarray(labels, dtype=np.int64)
    if len(frames) == 0:
        raise ValueError("cannot train on an empty dataset")
    if labels.max() >= model.num_classes or labels.min() < 0:
        raise ValueError(f"labels must lie in [0, {model.num_classes})")
    for layer in model.layers:
        if isinstance(layer, Dropout):
            layer.rate = cfg.dropout_rate
    rng = np.random.default_rng(cfg.seed)
    _fit_norms(model, frames, cfg, rng)
    opt = Adam(model, cfg.learning_rate, cfg.betas)
    history = []
    n = len(frames)
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr_at(epoch)
        order = rng.permutation(n)
        tot_loss, tot_correct = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = frames[idx]
            if cfg.augment:
                xb = augment_batch(xb, rng, cfg.aug_snr_range_db, cfg.aug_phase_range_rad)
            X, _ = as_input(model, xb)
            yb = labels[idx]
            scores, caches = _run(model, X, True, rng)
            batch_loss = -log_softmax(scores)[np.arange(len(idx)), yb]
            if not np.all(np.isfinite(batch_loss)):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch starting {start}")
            _, grads = _backprop(model, caches, _ce_grad(scores, yb) / len(idx))
            opt.step(model, grads)
            tot_loss += float(batch_loss.sum())
            tot_correct += int(np.sum(np.argmax(scores, axis=1) == yb))
        m = EpochMetrics(epoch, tot_loss / n, tot_correct / n)
        if val is not None:
            m.val_accuracy = accuracy(model, val[0], val[1])
        for _, name, p in model.parameters():
            if not np.all(np.isfinite(p)):
                raise FloatingPointError(f"non-finite parameter {name} after epoch {epoch}")
        history.append(m)
        log.info("epoch %d loss %.4f acc %.4f val %.4f", epoch, m.loss, m.accuracy, m.val_accuracy)
        if callback is not None:
            callback(m)
    return model, history


# ---------------------------------------------------------------- persistence


def save_model(model: Model, path) -> None:
    """Write the RFADVM1 binary format (little-endian throughout).

    Layout: magic, u32 layer count, u32 input length, u32 input channels,
    then per layer: u8 kind tag, u8 array count, and per array: u8 ndim,
    ndim x u32 dims, float64 payload.
    """
    chunks = [MODEL_MAGIC, struct.pack("<III", len(model.layers), model.input_len, model.in_channels)]
    for layer in model.layers:
        arrays = layer.arrays()
        chunks.append(struct.pack("<BB", layer.tag, len(arrays)))
        for a in arrays:
            chunks.append(struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
            chunks.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class ModelFileError(ValueError):
    pass


def load_model(path) -> Model:
    data = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise ModelFileError(f"{path}: truncated at byte {pos} (wanted {n} more, file has {len(data)})")
        out = data[pos:pos + n]
        pos += n
        return out

    if take(len(MODEL_MAGIC)) != MODEL_MAGIC:
        raise ModelFileError(f"{path}: bad magic, not an RFADVM1 model file")
    n_layers, input_len, in_ch = struct.unpack("<III", take(12))
    layers: list[Layer] = []
    for li in range(n_layers):
        tag, n_arrays = struct.unpack("<BB", take(2))
        if tag not in _LAYER_TYPES:
            raise ModelFileError(f"{path}: layer {li} has unknown kind tag {tag}")
        arrays = []
        for _ in range(n_arrays):
            (ndim,) = struct.unpack("<B", take(1))
            shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            arrays.append(np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).astype(np.float64))
        cls = _LAYER_TYPES[tag]
        try:
            if cls in (Conv1D, Dense):
                W, b = arrays
                if W.shape[-1] != b.shape[0]:
                    raise ModelFileError(f"{path}: layer {li} weight {W.shape} / bias {b.shape} mismatch")
                layers.append(cls(W, b))
            elif cls in (MaxPool1D, AvgPool1D):
                layers.append(cls(int(arrays[0][0])))
            elif cls is Dropout:
                layers.append(Dropout(float(arrays[0][0])))
            elif cls is ChannelNorm:
                layers.append(ChannelNorm(arrays[0], arrays[1], bool(arrays[2][0])))
            elif cls is IQFeatures:
                layers.append(IQFeatures(arrays[0], arrays[1].astype(int), arrays[2][:2].astype(int), arrays[2][2],
                                          arrays[3], arrays[2][3]))
            else:
                layers.append(cls())
        except (ValueError, IndexError) as exc:
            if isinstance(exc, ModelFileError):
                raise
            raise ModelFileError(f"{path}: layer {li} ({cls.kind}) has malformed arrays "
                                 f"{[a.shape for a in arrays]}") from exc
    if pos != len(data):
        raise ModelFileError(f"{path}: {len(data) - pos} trailing bytes")
    model = Model(layers, input_len, in_ch)
    # shape check by a dry run
    try:
        logits(model, np.zeros((1, input_len, in_ch)))
    except ValueError as exc:
        raise ModelFileError(f"{path}: layer shapes are inconsistent: {exc}") from exc
    return model
