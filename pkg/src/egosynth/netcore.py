"""Small feed-forward network engine in double precision.

Inputs are row vectors: a single example has shape ``(d,)``, a batch
``(B, d)``.  Weight matrices are stored ``(fan_out, fan_in)`` so a layer
computes ``x @ W.T + b``.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import jsonio
from .errors import ParseError, ValidationError

ACTIVATIONS = ("identity", "tanh", "sigmoid")
WEIGHT_FORMAT = "egosynth-net"
WEIGHT_VERSION = 1


def _sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(name, z):
    if name == "identity":
        return z
    if name == "tanh":
        return np.tanh(z)
    return _sigmoid(z)


def _activation_grad(name, a):
    """Derivative of the activation expressed through its output ``a``."""
    if name == "identity":
        return np.ones_like(a)
    if name == "tanh":
        return 1.0 - a * a
    return a * (1.0 - a)


@dataclass(frozen=True)
class NetSpec:
    sizes: tuple
    activations: tuple

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        acts = tuple(self.activations)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ValidationError(f"invalid layer sizes {sizes}")
        if len(acts) != len(sizes) - 1 or any(a not in ACTIVATIONS for a in acts):
            raise ValidationError(f"need {len(sizes) - 1} activations from {ACTIVATIONS}, got {acts}")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "activations", acts)

    @classmethod
    def mlp(cls, sizes, hidden="tanh", output="identity"):
        return cls(tuple(sizes), (hidden,) * (len(sizes) - 2) + (output,))

    @property
    def n_layers(self):
        return len(self.sizes) - 1


@dataclass
class NetParams:
    spec: NetSpec
    weights: list
    biases: list
    seed: object = None

    def copy(self):
        return NetParams(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.seed)

    def arrays(self):
        """Parameters in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_arrays(self, arrays):
        return NetParams(self.spec, list(arrays[0::2]), list(arrays[1::2]), self.seed)


@dataclass
class Cache:
    params: NetParams
    activations: list  # layer inputs followed by the final output
    single: bool


def net_init(spec, seed):
    """Glorot-uniform weights, zero biases."""
    if not isinstance(spec, NetSpec):
        raise ValidationError("net_init expects a NetSpec")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.sizes[:-1], spec.sizes[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return NetParams(spec, weights, biases, seed)


def zeros_like_net(spec):
    return NetParams(
        spec,
        [np.zeros((o, i)) for i, o in zip(spec.sizes[:-1], spec.sizes[1:])],
        [np.zeros(o) for o in spec.sizes[1:]],
    )


def forward(params, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != params.spec.sizes[0]:
        raise ValidationError(f"input has shape {x.shape}, network expects {params.spec.sizes[0]} features")
    acts = [X]
    for W, b, name in zip(params.weights, params.biases, params.spec.activations):
        acts.append(_activate(name, acts[-1] @ W.T + b))
    out = acts[-1][0] if single else acts[-1]
    return out, Cache(params, acts, single)


def predict(params, x):
    return forward(params, x)[0]


def _backward(params, cache, out_grad, want_params):
    if cache.params is not params:
        raise ValidationError("stale cache: it was produced by a different parameter set")
    g = np.asarray(out_grad, dtype=np.float64)
    G = g[None, :] if cache.single else g
    if G.shape != cache.activations[-1].shape:
        raise ValidationError(f"out_grad shape {g.shape} does not match network output")
    dWs, dbs = [], []
    for layer in reversed(range(params.spec.n_layers)):
        a_out = cache.activations[layer + 1]
        dz = G * _activation_grad(params.spec.activations[layer], a_out)
        if want_params:
            dWs.append(dz.T @ cache.activations[layer])
            dbs.append(dz.sum(axis=0))
        G = dz @ params.weights[layer]
    return dWs[::-1], dbs[::-1], G


def backward_params(params, cache, out_grad):
    """Gradients of a scalar loss w.r.t. all parameters.

    ``out_grad`` is dL/d(output) per row; contributions from batch rows are
    summed, so a mean-over-batch loss should already carry the 1/B factor.
    Returns a list in ``NetParams.arrays()`` order.
    """
    dWs, dbs, _ = _backward(params, cache, out_grad, True)
    grads = []
    for dW, db in zip(dWs, dbs):
        grads += [dW, db]
    return grads


def backward_input(params, cache, out_grad):
    G = _backward(params, cache, out_grad, False)[2]
    return G[0] if cache.single else G


def backward(params, cache, out_grad):
    """Parameter gradients and input gradient from one backward sweep."""
    dWs, dbs, G = _backward(params, cache, out_grad, True)
    grads = []
    for dW, db in zip(dWs, dbs):
        grads += [dW, db]
    return grads, (G[0] if cache.single else G)


@dataclass
class SgdState:
    lr: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    velocity: list = field(default_factory=list)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValidationError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValidationError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValidationError("weight decay must be non-negative")


def sgd_step(arrays, grads, state):
    """One momentum-SGD update: ``v <- mu v + g + wd w;  w <- w - lr v``.

    ``arrays`` is a list of parameter arrays (or a ``NetParams``); returns a
    new object of the same kind.  ``state.velocity`` is updated in place.
    """
    net = arrays if isinstance(arrays, NetParams) else None
    ws = net.arrays() if net is not None else list(arrays)
    if len(ws) != len(grads):
        raise ValidationError(f"{len(grads)} gradients for {len(ws)} parameter arrays")
    if not state.velocity:
        state.velocity = [np.zeros_like(w, dtype=np.float64) for w in ws]
    out = []
    for i, (w, g) in enumerate(zip(ws, grads)):
        w = np.asarray(w, dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        if w.shape != g.shape or state.velocity[i].shape != w.shape:
            raise ValidationError(f"shape mismatch at parameter {i}: {w.shape} vs {g.shape}")
        v = state.momentum * state.velocity[i] + g + state.weight_decay * w
        state.velocity[i] = v
        out.append(w - state.lr * v)
    return net.with_arrays(out) if net is not None else out


def net_to_dict(params):
    return {
        "sizes": list(params.spec.sizes),
        "activations": list(params.spec.activations),
        "seed": params.seed,
        "weights": [w.reshape(-1) for w in params.weights],
        "biases": [b for b in params.biases],
    }


def net_from_dict(d):
    try:
        spec = NetSpec(tuple(d["sizes"]), tuple(d["activations"]))
        weights, biases = [], []
        if len(d["weights"]) != spec.n_layers or len(d["biases"]) != spec.n_layers:
            raise ValidationError("layer count does not match spec")
        for i, (fan_in, fan_out) in enumerate(zip(spec.sizes[:-1], spec.sizes[1:])):
            w = np.array(d["weights"][i], dtype=np.float64)
            b = np.array(d["biases"][i], dtype=np.float64)
            if w.shape != (fan_in * fan_out,) or b.shape != (fan_out,):
                raise ValidationError(f"layer {i} parameter shapes do not match spec")
            weights.append(w.reshape(fan_out, fan_in))
            biases.append(b)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed network record: {exc}") from exc
    return NetParams(spec, weights, biases, d.get("seed"))


def save_net(path, params):
    rec = {"format": WEIGHT_FORMAT, "version": WEIGHT_VERSION, **net_to_dict(params)}
    jsonio.atomic_write_text(path, jsonio.dumps(rec) + "\n")


def load_net(path):
    with open(path, encoding="utf-8") as f:
        text = f.read()
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc), line=exc.lineno, path=path) from exc
    if rec.get("format") != WEIGHT_FORMAT or rec.get("version") != WEIGHT_VERSION:
        raise ParseError("unknown weight file format or version", path=path)
    return net_from_dict(rec)
