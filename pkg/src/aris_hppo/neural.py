"""Small dense networks with hand-written backprop and an Adam optimizer.

Everything is float64. A forward pass returns a :class:`GradientTape`
holding the activations needed by :meth:`DenseNet.backward`; tapes are
bound to the parameter version they were recorded with, so a tape cannot
be replayed after the weights change.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("identity", "tanh")
_ACT_CODE = {name: i for i, name in enumerate(ACTIVATIONS)}

CHECKPOINT_MAGIC = b"HPPOCKPT"
CHECKPOINT_VERSION = 1


def orthogonal(fan_in, fan_out, gain, rng):
    """Orthogonal matrix of shape (fan_in, fan_out) scaled by ``gain``."""
    a = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if fan_in < fan_out:
        q = q.T
    return gain * q[:fan_in, :fan_out]


@dataclass
class GradientTape:
    inputs: list
    outputs: list
    version: int
    net_id: int


class DenseNet:
    """Stack of affine layers, each followed by ``tanh`` or identity.

    Weights are stored as (fan_in, fan_out) so a batch ``X`` of shape
    (batch, fan_in) maps to ``X @ W + b``.
    """

    def __init__(self, weights, biases, activations):
        if not (len(weights) == len(biases) == len(activations)) or not weights:
            raise ValueError("weights, biases and activations must be non-empty and aligned")
        for i, (w, b, act) in enumerate(zip(weights, biases, activations)):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: bias shape {b.shape} does not match weight {w.shape}")
            if i and weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i}: fan_in {w.shape[0]} != previous fan_out "
                                 f"{weights[i - 1].shape[1]}")
        self.weights = [np.array(w, dtype=np.float64, order="C") for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        self.activations = list(activations)
        self.version = 0

    @classmethod
    def mlp(cls, in_dim, hidden, out_dim=None, rng=None, out_activation="identity",
            hidden_gain=1.0, out_gain=1.0):
        """Build a tanh MLP; ``out_dim=None`` leaves the last hidden layer as output."""
        rng = np.random.default_rng() if rng is None else rng
        widths = [in_dim, *hidden] + ([] if out_dim is None else [out_dim])
        acts = ["tanh"] * len(hidden) + ([] if out_dim is None else [out_activation])
        gains = [hidden_gain] * len(hidden) + ([] if out_dim is None else [out_gain])
        weights = [orthogonal(a, b, g, rng) for a, b, g in zip(widths[:-1], widths[1:], gains)]
        biases = [np.zeros(b) for b in widths[1:]]
        return cls(weights, biases, acts)

    @property
    def widths(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def in_dim(self):
        return self.weights[0].shape[0]

    @property
    def out_dim(self):
        return self.weights[-1].shape[1]

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def touch(self):
        """Mark parameters as modified, invalidating outstanding tapes."""
        self.version += 1

    def copy(self):
        return DenseNet([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                        self.activations)

    def forward(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.in_dim:
            raise ValueError(f"expected input of shape (batch, {self.in_dim}), got {X.shape}")
        inputs, outputs = [], []
        h = X
        for w, b, act in zip(self.weights, self.biases, self.activations):
            inputs.append(h)
            h = h @ w + b
            if act == "tanh":
                h = np.tanh(h)
            outputs.append(h)
        return h, GradientTape(inputs, outputs, self.version, id(self))

    def predict(self, X):
        return self.forward(X)[0]

    def backward(self, tape: GradientTape, output_grad):
        """Reverse-mode pass.

        Returns:
            (grads, input_grad) where ``grads`` follows :meth:`parameters`
            ordering and ``input_grad`` is dLoss/dX.
        """
        if tape.net_id != id(self) or tape.version != self.version:
            raise RuntimeError("stale gradient tape: parameters changed since forward()")
        g = np.asarray(output_grad, dtype=np.float64)
        if g.shape != tape.outputs[-1].shape:
            raise ValueError(f"output gradient shape {g.shape} != output shape "
                             f"{tape.outputs[-1].shape}")
        grads = [None] * (2 * len(self.weights))
        for i in reversed(range(len(self.weights))):
            if self.activations[i] == "tanh":
                g = g * (1.0 - tape.outputs[i] ** 2)
            grads[2 * i] = tape.inputs[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grads, g


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_by_global_norm(grads, max_norm):
    """Scale gradients so their joint L2 norm is at most ``max_norm``."""
    if max_norm is None:
        return grads, global_norm(grads)
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        grads = [g * scale for g in grads]
    return grads, norm


def optimizer_step(params, grads, state: AdamState, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8,
                   clip_norm=None):
    """Bias-corrected Adam update applied in place; returns the pre-clip grad norm."""
    if len(params) != len(grads):
        raise ValueError("params and grads must align")
    grads, norm = clip_by_global_norm(grads, clip_norm)
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return norm


class Adam:
    """Adam over a fixed list of parameter arrays (updated in place)."""

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=None,
                 owners=()):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.clip_norm = clip_norm
        self.owners = list(owners)
        self.state = AdamState([np.zeros_like(p) for p in self.params],
                               [np.zeros_like(p) for p in self.params])

    def step(self, grads):
        norm = optimizer_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2,
                              self.eps, self.clip_norm)
        for net in self.owners:
            net.touch()
        return norm


def numerical_gradient(loss_fn, params, h=1e-5):
    """Central finite differences of ``loss_fn()`` w.r.t. each array in ``params``."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = loss_fn()
            p[idx] = orig - h
            down = loss_fn()
            p[idx] = orig
            g[idx] = (up - down) / (2.0 * h)
        out.append(g)
    return out


def max_relative_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)) if a.size else 0.0)
    return worst


# -- checkpoint file ---------------------------------------------------------
#
# Little-endian layout:
#   magic "HPPOCKPT" | u32 version | u32 n_nets | u32 n_arrays
#   per net:   u16 name_len | name utf-8 | u32 n_layers
#              n_layers x (u32 fan_in | u32 fan_out | u8 activation)
#              n_layers x (f64[fan_in*fan_out] weights row-major | f64[fan_out] bias)
#   per array: u16 name_len | name utf-8 | u32 length | f64[length]

def _pack_name(name):
    raw = name.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def checkpoint_bytes(nets: dict, arrays: dict | None = None):
    arrays = arrays or {}
    parts = [CHECKPOINT_MAGIC, struct.pack("<III", CHECKPOINT_VERSION, len(nets), len(arrays))]
    for name, net in nets.items():
        parts.append(_pack_name(name))
        parts.append(struct.pack("<I", len(net.weights)))
        for w, act in zip(net.weights, net.activations):
            parts.append(struct.pack("<IIB", w.shape[0], w.shape[1], _ACT_CODE[act]))
        for w, b in zip(net.weights, net.biases):
            parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8").reshape(-1)
        parts.append(_pack_name(name))
        parts.append(struct.pack("<I", arr.size))
        parts.append(arr.tobytes())
    return b"".join(parts)


def save_checkpoint(path, nets: dict, arrays: dict | None = None):
    """Write atomically: temp file in the target directory, then rename."""
    data = checkpoint_bytes(nets, arrays)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ValueError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self):
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")

    def floats(self, count):
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)


def parse_checkpoint(data: bytes):
    r = _Reader(data)
    if r.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version, n_nets, n_arrays = r.unpack("<III")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    nets, arrays = {}, {}
    for _ in range(n_nets):
        name = r.name()
        (n_layers,) = r.unpack("<I")
        dims = [r.unpack("<IIB") for _ in range(n_layers)]
        weights, biases = [], []
        for fan_in, fan_out, _ in dims:
            weights.append(r.floats(fan_in * fan_out).reshape(fan_in, fan_out))
            biases.append(r.floats(fan_out))
        nets[name] = DenseNet(weights, biases, [ACTIVATIONS[d[2]] for d in dims])
    for _ in range(n_arrays):
        name = r.name()
        (n,) = r.unpack("<I")
        arrays[name] = r.floats(n)
    if r.pos != len(data):
        raise ValueError("trailing bytes in checkpoint")
    return nets, arrays


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())
