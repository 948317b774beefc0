"""Camera encoder, multi-branch future predictor and goal verifier.

All regression targets and verifier inputs live in the normalized 12D
configuration space of the dataset's ``Normalizer``.  Observations are
standardized with the dataset's observation normalizer before entering a
network.
"""

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from . import jsonio
from . import netcore as nc
from .errors import ParseError, ValidationError

log = logging.getLogger(__name__)

GOAL_THRESHOLD = 0.92
ANCHOR_MAX_TIME = 0.1
MODEL_FORMAT = "egosynth-model"
MODEL_VERSION = 1


@dataclass
class TrainConfig:
    iterations: int = 10_000
    lr: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 20
    seed: int = 0

    def validate(self):
        if self.iterations <= 0 or self.batch_size <= 0:
            raise ValidationError("iterations and batch size must be positive")
        if not self.lr > 0 or self.weight_decay < 0:
            raise ValidationError("learning rate must be positive and weight decay non-negative")
        if not 0 <= self.momentum < 1:
            raise ValidationError("momentum must lie in [0, 1)")


@dataclass
class EgoEncoder:
    net: nc.NetParams
    normalizer: geo.Normalizer
    obs_normalizer: geo.Normalizer
    history: list = field(default_factory=list, repr=False)


@dataclass
class FuturePredictor:
    trunk: nc.NetParams
    branches: list
    normalizer: geo.Normalizer
    obs_normalizer: geo.Normalizer
    history: list = field(default_factory=list, repr=False)

    @property
    def k(self):
        return len(self.branches)


@dataclass
class GoalVerifier:
    net: nc.NetParams
    normalizer: geo.Normalizer | None = None
    history: list = field(default_factory=list, repr=False)


def branch_interval(j, k):
    if k < 1 or not 1 <= j <= k:
        raise ValidationError(f"branch index {j} outside 1..{k}")
    return ((j - 1) / k, j / k)


def branch_of(s, k):
    """Branch whose interval holds time ``s``; shared endpoints go to the lower branch."""
    return min(max(math.ceil(s * k - 1e-12), 1), k)


def goal_label(s):
    if not 0.0 <= s <= 1.0:
        raise ValidationError(f"normalized time {s} outside [0, 1]")
    return 1 if s > GOAL_THRESHOLD else 0


def _frames(seqs, normalizer, obs_normalizer=None):
    """Stack all frames: normalized configs, times, and (optionally) observations."""
    Y = np.concatenate([geo.normalize(s.configs, normalizer) for s in seqs])
    times = np.concatenate([s.times for s in seqs])
    X = None
    if obs_normalizer is not None:
        X = np.concatenate([geo.normalize(s.observations, obs_normalizer) for s in seqs])
    return X, Y, times


def _train_nets(nets, cfg, sample_batch, loss_and_grads):
    """Momentum SGD over a list of networks treated as one parameter set."""
    rng = np.random.default_rng(cfg.seed)
    state = nc.SgdState(cfg.lr, cfg.momentum, cfg.weight_decay)
    counts = [len(n.arrays()) for n in nets]
    history = []
    for _ in range(cfg.iterations):
        batch = sample_batch(rng)
        loss, grads = loss_and_grads(nets, batch)
        flat = [a for n in nets for a in n.arrays()]
        updated = nc.sgd_step(flat, [g for gs in grads for g in gs], state)
        rebuilt, start = [], 0
        for n, c in zip(nets, counts):
            rebuilt.append(n.with_arrays(updated[start : start + c]))
            start += c
        nets = rebuilt
        history.append(float(loss))
    return nets, history


# -- EgoEncoder ----------------------------------------------------------------


def encoder_spec(d_obs, hidden=64):
    return nc.NetSpec.mlp([d_obs, hidden, geo.CONFIG_DIM])


def _regression_loss_grads(net, X, Y):
    out, cache = nc.forward(net, X)
    diff = out - Y
    loss = np.mean(np.sum(diff * diff, axis=1))
    return loss, nc.backward_params(net, cache, 2.0 * diff / len(X))


def train_ego_encoder(dataset, cfg, hidden=64):
    """Regress normalized configs from observations with a squared L2 loss."""
    cfg.validate()
    if not dataset.train:
        raise ValidationError("empty training set")
    X, Y, _ = _frames(dataset.train, dataset.normalizer, dataset.obs_normalizer)
    net = nc.net_init(encoder_spec(X.shape[1], hidden), cfg.seed)

    def sample(rng):
        return rng.integers(0, len(X), size=cfg.batch_size)

    def step(nets, idx):
        loss, grads = _regression_loss_grads(nets[0], X[idx], Y[idx])
        return loss, [grads]

    (net,), history = _train_nets([net], cfg, sample, step)
    return EgoEncoder(net, dataset.normalizer, dataset.obs_normalizer, history)


def encode(encoder, o):
    o = np.asarray(o, dtype=np.float64)
    if o.shape[-1] != encoder.net.spec.sizes[0]:
        raise ValidationError(f"observation has {o.shape[-1]} entries, encoder expects {encoder.net.spec.sizes[0]}")
    return nc.predict(encoder.net, geo.normalize(o, encoder.obs_normalizer))


def encoder_loss(encoder, seqs):
    X, Y, _ = _frames(seqs, encoder.normalizer, encoder.obs_normalizer)
    diff = nc.predict(encoder.net, X) - Y
    return float(np.mean(np.sum(diff * diff, axis=1)))


# -- FuturePredictor -----------------------------------------------------------


def future_specs(d_obs, k, hidden=64):
    trunk = nc.NetSpec((d_obs, hidden, hidden), ("tanh", "tanh"))
    branch = nc.NetSpec((hidden, geo.CONFIG_DIM), ("identity",))
    return trunk, [branch] * k


def init_future(d_obs, k, seed, normalizer, obs_normalizer, hidden=64):
    trunk_spec, branch_specs = future_specs(d_obs, k, hidden)
    seeds = np.random.SeedSequence(seed).generate_state(k + 1)
    trunk = nc.net_init(trunk_spec, int(seeds[0]))
    branches = [nc.net_init(s, int(seeds[j + 1])) for j, s in enumerate(branch_specs)]
    return FuturePredictor(trunk, branches, normalizer, obs_normalizer)


def future_forward(trunk, branches, X):
    """Branch outputs stacked as ``(..., k, 12)`` plus the caches needed for backprop."""
    hidden, tcache = nc.forward(trunk, X)
    outs, bcaches = [], []
    for b in branches:
        o, c = nc.forward(b, hidden)
        outs.append(o)
        bcaches.append(c)
    return np.stack(outs, axis=-2), (tcache, bcaches)


def future_backward(trunk, branches, caches, out_grad):
    """Parameter gradients (trunk, then each branch) and the input gradient."""
    tcache, bcaches = caches
    hidden_grad = 0.0
    branch_grads = []
    for j, (b, c) in enumerate(zip(branches, bcaches)):
        grads, gh = nc.backward(b, c, out_grad[..., j, :])
        branch_grads.append(grads)
        hidden_grad = hidden_grad + gh
    trunk_grads, gx = nc.backward(trunk, tcache, hidden_grad)
    return [trunk_grads] + branch_grads, gx


def _future_pairs(seqs, k):
    """Per sequence: anchor frame indices and per-branch target frame indices."""
    usable = []
    for si, s in enumerate(seqs):
        t = s.times
        anchors = np.flatnonzero(t <= ANCHOR_MAX_TIME + 1e-12)
        if len(anchors) == 0:
            log.warning("sequence %s has %d frames, too short for an anchor; skipped", s.id, len(s))
            continue
        groups = [[] for _ in range(k)]
        for i, ti in enumerate(t):
            groups[branch_of(ti, k) - 1].append(i)
        if any(len(g) == 0 for g in groups):
            log.warning("sequence %s leaves a branch interval empty; skipped", s.id)
            continue
        usable.append((si, anchors, [np.array(g) for g in groups]))
    return usable


def train_future(dataset, k=4, cfg=None, hidden=64):
    """Fit branch j to configs whose time falls in branch interval j."""
    cfg = cfg or TrainConfig()
    cfg.validate()
    if k < 1:
        raise ValidationError("k must be at least 1")
    if not dataset.train:
        raise ValidationError("empty training set")
    seqs = dataset.train
    usable = _future_pairs(seqs, k)
    if not usable:
        raise ValidationError("no training sequence is long enough to supply an anchor frame")
    obs = [geo.normalize(s.observations, dataset.obs_normalizer) for s in seqs]
    cfgs = [geo.normalize(s.configs, dataset.normalizer) for s in seqs]
    model = init_future(obs[0].shape[1], k, cfg.seed, dataset.normalizer, dataset.obs_normalizer, hidden)

    def sample(rng):
        X, T = [], []
        for u in rng.integers(0, len(usable), size=cfg.batch_size):
            si, anchors, groups = usable[u]
            X.append(obs[si][anchors[rng.integers(len(anchors))]])
            T.append([cfgs[si][g[rng.integers(len(g))]] for g in groups])
        return np.array(X), np.array(T)

    def step(nets, batch):
        X, T = batch
        out, caches = future_forward(nets[0], nets[1:], X)
        diff = out - T
        loss = np.mean(np.sum(diff * diff, axis=(1, 2)))
        grads, _ = future_backward(nets[0], nets[1:], caches, 2.0 * diff / len(X))
        return loss, grads

    nets, history = _train_nets([model.trunk] + model.branches, cfg, sample, step)
    model.trunk, model.branches, model.history = nets[0], nets[1:], history
    return model


def predict_future(predictor, o):
    o = np.asarray(o, dtype=np.float64)
    if o.shape[-1] != predictor.trunk.spec.sizes[0]:
        raise ValidationError(
            f"observation has {o.shape[-1]} entries, predictor expects {predictor.trunk.spec.sizes[0]}"
        )
    out, _ = future_forward(predictor.trunk, predictor.branches, geo.normalize(o, predictor.obs_normalizer))
    return out


def future_loss(predictor, seqs, rng_seed=0, samples=4):
    """Mean summed branch error over anchors with randomly drawn interval targets."""
    rng = np.random.default_rng(rng_seed)
    usable = _future_pairs(seqs, predictor.k)
    X, T = [], []
    for si, anchors, groups in usable:
        s = seqs[si]
        o = geo.normalize(s.observations, predictor.obs_normalizer)
        y = geo.normalize(s.configs, predictor.normalizer)
        for _ in range(samples):
            X.append(o[anchors[rng.integers(len(anchors))]])
            T.append([y[g[rng.integers(len(g))]] for g in groups])
    out, _ = future_forward(predictor.trunk, predictor.branches, np.array(X))
    diff = out - np.array(T)
    return float(np.mean(np.sum(diff * diff, axis=(1, 2))))


# -- GoalVerifier --------------------------------------------------------------

VERIFIER_SPEC = nc.NetSpec.mlp([geo.CONFIG_DIM, 100, 1], output="sigmoid")


def _bce_out_grad(psi, labels, n):
    # dL/dpsi for the mean binary cross-entropy; the sigmoid factor cancels
    # it back to (psi - g) inside backward
    denom = np.maximum(psi * (1.0 - psi), np.finfo(float).tiny)
    return (psi - labels) / denom / n


def bce(psi, labels):
    eps = np.finfo(float).tiny
    return float(-np.mean(labels * np.log(np.maximum(psi, eps)) + (1 - labels) * np.log(np.maximum(1 - psi, eps))))


def train_goal_verifier(dataset, cfg=None):
    """Cross-entropy on (config, goal label) with class-balanced batches."""
    cfg = cfg or TrainConfig()
    cfg.validate()
    if not dataset.train:
        raise ValidationError("empty training set")
    _, Y, times = _frames(dataset.train, dataset.normalizer)
    labels = np.array([goal_label(t) for t in times], dtype=np.float64)
    pos, neg = np.flatnonzero(labels == 1), np.flatnonzero(labels == 0)
    if len(pos) == 0 or len(neg) == 0:
        raise ValidationError("goal verifier needs both positive and negative frames")
    net = nc.net_init(VERIFIER_SPEC, cfg.seed)
    n_pos = cfg.batch_size // 2

    def sample(rng):
        return np.concatenate(
            [pos[rng.integers(0, len(pos), n_pos)], neg[rng.integers(0, len(neg), cfg.batch_size - n_pos)]]
        )

    def step(nets, idx):
        psi, cache = nc.forward(nets[0], Y[idx])
        g = labels[idx][:, None]
        return bce(psi, g), [nc.backward_params(nets[0], cache, _bce_out_grad(psi, g, len(idx)))]

    (net,), history = _train_nets([net], cfg, sample, step)
    return GoalVerifier(net, dataset.normalizer, history)


def _check_h(verifier, h):
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != verifier.net.spec.sizes[0]:
        raise ValidationError(f"configuration has {h.shape[-1]} entries, verifier expects {verifier.net.spec.sizes[0]}")
    return h


def verify(verifier, h):
    out = nc.predict(verifier.net, _check_h(verifier, h))
    return out[..., 0]


def verify_with_grad(verifier, h):
    h = _check_h(verifier, h)
    psi, cache = nc.forward(verifier.net, h)
    grad = nc.backward_input(verifier.net, cache, np.ones_like(psi))
    return psi[..., 0], grad


def verify_grad(verifier, h):
    return verify_with_grad(verifier, h)[1]


def zero_verifier():
    return GoalVerifier(nc.zeros_like_net(VERIFIER_SPEC))


def auc(scores, labels):
    """Area under the ROC curve via the rank-sum statistic (ties count half)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = labels.sum(), (~labels).sum()
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUC needs both classes")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1
        i = j + 1
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def verifier_auc(verifier, seqs, normalizer):
    _, Y, times = _frames(seqs, normalizer)
    labels = np.array([goal_label(t) for t in times])
    return auc(verify(verifier, Y), labels)


# -- bundles -------------------------------------------------------------------


def normalizer_id(normalizer):
    return jsonio.digest(normalizer.to_dict())


def model_role(model):
    from .evaluation import RecurrentBaseline

    roles = {EgoEncoder: "ego", FuturePredictor: "future", GoalVerifier: "verifier", RecurrentBaseline: "recurrent"}
    return roles[type(model)]


def model_to_dict(model):
    role = model_role(model)
    rec = {"format": MODEL_FORMAT, "version": MODEL_VERSION, "role": role}
    norm = getattr(model, "normalizer", None)
    rec["normalizer_id"] = normalizer_id(norm) if norm is not None else None
    rec["normalizer"] = norm.to_dict() if norm is not None else None
    if role in ("ego", "future"):
        rec["obs_normalizer"] = model.obs_normalizer.to_dict()
    if role == "future":
        rec["nets"] = {"trunk": nc.net_to_dict(model.trunk)}
        for j, b in enumerate(model.branches, start=1):
            rec["nets"][f"branch{j}"] = nc.net_to_dict(b)
    else:
        rec["nets"] = {"net": nc.net_to_dict(model.net)}
    if role == "recurrent":
        rec["epsilon"] = model.epsilon
        rec["max_length"] = model.max_length
    return rec


def model_from_dict(rec, path=None):
    from .evaluation import RecurrentBaseline

    if rec.get("format") != MODEL_FORMAT or rec.get("version") != MODEL_VERSION:
        raise ParseError("unknown model bundle format or version", path=path)
    try:
        role = rec["role"]
        norm = geo.Normalizer.from_dict(rec["normalizer"]) if rec.get("normalizer") else None
        nets = {k: nc.net_from_dict(v) for k, v in rec["nets"].items()}
        if role == "ego":
            return EgoEncoder(nets["net"], norm, geo.Normalizer.from_dict(rec["obs_normalizer"]))
        if role == "future":
            k = len(nets) - 1
            branches = [nets[f"branch{j}"] for j in range(1, k + 1)]
            return FuturePredictor(nets["trunk"], branches, norm, geo.Normalizer.from_dict(rec["obs_normalizer"]))
        if role == "verifier":
            return GoalVerifier(nets["net"], norm)
        if role == "recurrent":
            return RecurrentBaseline(nets["net"], norm, float(rec["epsilon"]), int(rec["max_length"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed model bundle: {exc}", path=path) from exc
    raise ParseError(f"unknown model role {role!r}", path=path)


def save_model(path, model):
    jsonio.atomic_write_text(path, jsonio.dumps(model_to_dict(model)) + "\n")


def load_model(path, expect_role=None):
    with open(path, encoding="utf-8") as f:
        try:
            rec = json.load(f)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, exc.lineno, path) from exc
    model = model_from_dict(rec, path)
    if expect_role is not None and rec["role"] != expect_role:
        raise ParseError(f"expected a {expect_role!r} bundle, found {rec['role']!r}", path=path)
    return model
