"""Sequence metrics, baselines and the benchmark table.

PFM is the mean symmetric Hausdorff distance between each real test
sequence and the sequence generated from its first frame.  CG looks up the
real test frame nearest to the last generated configuration and scores its
relative position ``i/N`` in its own sequence (1-based, so the final frame
scores 1.0).  All distances are Euclidean in normalized 12D space.
"""

import logging
import statistics
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from . import jsonio
from . import models as m
from . import netcore as nc
from .errors import ValidationError
from .simcourt import Sequence
from .synthesis import SynthesisOptions, synthesize_batch, to_sequence

log = logging.getLogger(__name__)

METHODS = ("nn", "recurrent", "noverifier", "full")
METHOD_LABELS = {
    "nn": "NN",
    "recurrent": "Recurrent",
    "noverifier": "Ours w/o GV",
    "full": "Ours w/ GV",
}


def _points(seq, normalizer):
    X = seq.configs if isinstance(seq, Sequence) else np.asarray(seq, dtype=np.float64)
    X = np.atleast_2d(X)
    if X.size == 0 or len(X) == 0:
        raise ValidationError("sequence is empty")
    return geo.normalize(X, normalizer) if normalizer is not None else X


def hausdorff(a, b, normalizer=None):
    """Symmetric Hausdorff distance between two sequences viewed as point sets."""
    A, B = _points(a, normalizer), _points(b, normalizer)
    diff = A[:, None, :] - B[None, :, :]
    D = np.sqrt(np.sum(diff * diff, axis=-1))
    return float(max(D.min(axis=1).max(), D.min(axis=0).max()))


def pfm_score(generator, testset, normalizer):
    """Mean Hausdorff distance between real test sequences and their generations.

    ``generator(seq)`` returns a Sequence grown from ``seq``'s first frame.
    Failures are excluded and reported.  Returns ``(mean, per_sequence, excluded)``.
    """
    per_seq, excluded = {}, []
    for seq in testset:
        try:
            gen = generator(seq)
        except Exception as exc:  # noqa: BLE001 - any generator failure excludes the sequence
            log.warning("generation failed for %s: %s", seq.id, exc)
            excluded.append(seq.id)
            continue
        per_seq[seq.id] = hausdorff(seq, gen, normalizer)
    mean = float(np.mean(list(per_seq.values()))) if per_seq else float("nan")
    return mean, per_seq, excluded


@dataclass
class FramePool:
    configs: np.ndarray  # normalized, (P, 12)
    ids: list
    index: np.ndarray  # 1-based position within its sequence
    length: np.ndarray


def frame_pool(testset, normalizer):
    """All test frames ordered by (sequence id, index) so argmin breaks ties correctly."""
    configs, ids, index, length = [], [], [], []
    for seq in sorted(testset, key=lambda s: s.id):
        M = len(seq)
        configs.append(geo.normalize(seq.configs, normalizer))
        ids += [seq.id] * M
        index.append(np.arange(1, M + 1))
        length.append(np.full(M, M))
    if not ids:
        raise ValidationError("frame pool is empty")
    return FramePool(np.concatenate(configs), ids, np.concatenate(index), np.concatenate(length))


def cg_score(last_generated, pool, normalizer):
    if len(pool.ids) == 0:
        raise ValidationError("frame pool is empty")
    q = geo.normalize(geo.as_config(last_generated), normalizer)
    diff = pool.configs - q
    best = int(np.argmin(np.sum(diff * diff, axis=1)))
    return float(pool.index[best] / pool.length[best])


def nn_baseline(start, trainset, normalizer):
    """Training sequence whose first configuration is nearest to ``start``, verbatim."""
    if not trainset:
        raise ValidationError("empty training set")
    q = geo.normalize(geo.as_config(start), normalizer)
    firsts = geo.normalize(np.array([s.configs[0] for s in trainset]), normalizer)
    d = np.sum((firsts - q) ** 2, axis=1)
    return trainset[int(np.argmin(d))]


def nn_retrieval_error(dataset):
    """Mean normalized L2 error of copying the config of the nearest training observation."""
    Xtr = np.concatenate([geo.normalize(s.observations, dataset.obs_normalizer) for s in dataset.train])
    Ytr = np.concatenate([geo.normalize(s.configs, dataset.normalizer) for s in dataset.train])
    errs = []
    for s in dataset.test:
        X = geo.normalize(s.observations, dataset.obs_normalizer)
        Y = geo.normalize(s.configs, dataset.normalizer)
        d = np.sum(X * X, axis=1)[:, None] - 2 * X @ Xtr.T + np.sum(Xtr * Xtr, axis=1)[None, :]
        errs.append(np.linalg.norm(Ytr[np.argmin(d, axis=1)] - Y, axis=1))
    return float(np.mean(np.concatenate(errs)))


def encoder_error(encoder, seqs):
    """Mean normalized L2 error of the encoder on every frame of ``seqs``."""
    errs = [
        np.linalg.norm(m.encode(encoder, s.observations) - geo.normalize(s.configs, encoder.normalizer), axis=1)
        for s in seqs
    ]
    return float(np.mean(np.concatenate(errs)))


# -- recurrent baseline --------------------------------------------------------


@dataclass
class RecurrentBaseline:
    """Residual one-step predictor ``f(h) = h + g(h)`` in normalized space."""

    net: nc.NetParams
    normalizer: geo.Normalizer
    epsilon: float = 1e-3
    max_length: int = 30
    history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")


def recurrent_step(baseline, h):
    return h + nc.predict(baseline.net, h)


def train_recurrent_baseline(dataset, cfg=None, hidden=64, epsilon=1e-3):
    """Fit the residual step on adjacent normalized configuration pairs."""
    cfg = cfg or m.TrainConfig()
    cfg.validate()
    if not dataset.train:
        raise ValidationError("empty training set")
    pairs = [geo.normalize(s.configs, dataset.normalizer) for s in dataset.train if len(s) >= 2]
    if not pairs:
        raise ValidationError("no training sequence has two frames")
    H0 = np.concatenate([p[:-1] for p in pairs])
    H1 = np.concatenate([p[1:] for p in pairs])
    net = nc.net_init(nc.NetSpec.mlp([geo.CONFIG_DIM, hidden, geo.CONFIG_DIM]), cfg.seed)

    def sample(rng):
        return rng.integers(0, len(H0), size=cfg.batch_size)

    def step(nets, idx):
        out, cache = nc.forward(nets[0], H0[idx])
        diff = H0[idx] + out - H1[idx]
        loss = np.mean(np.sum(diff * diff, axis=1))
        return loss, [nc.backward_params(nets[0], cache, 2.0 * diff / len(idx))]

    (net,), history = m._train_nets([net], cfg, sample, step)
    max_len = max(len(s) for s in dataset.train + dataset.test)
    return RecurrentBaseline(net, dataset.normalizer, epsilon, max_len, history)


def rollout_normalized(baseline, start):
    """Iterate the step from ``start`` until it stalls or the length cap is hit."""
    h = np.array(start, dtype=np.float64)
    out = [h]
    while len(out) - 1 < baseline.max_length:
        nxt = recurrent_step(baseline, h)
        out.append(nxt)
        if np.linalg.norm(nxt - h) < baseline.epsilon:
            break
        h = nxt
    return np.array(out)


def rollout(baseline, start, seq_id="recurrent"):
    return to_sequence(rollout_normalized(baseline, start), baseline.normalizer, seq_id)


# -- benchmark -----------------------------------------------------------------


@dataclass
class Pipeline:
    """Trained components for one seed."""

    encoder: m.EgoEncoder
    future: m.FuturePredictor
    verifier: m.GoalVerifier
    recurrent: RecurrentBaseline
    seed: int = 0


def first_frame_inputs(pipeline, seqs):
    """Encoded start configs and branch predictions for each sequence's first frame."""
    obs0 = np.array([s.observations[0] for s in seqs])
    return m.encode(pipeline.encoder, obs0), m.predict_future(pipeline.future, obs0)


def generate(pipeline, seqs, normalizer, use_verifier=True, opts=None):
    """Inverse synthesis for every sequence in one batched descent.

    Returns ``(generated, batch_result)``; generated sequences keep the ids
    of their source sequences.
    """
    opts = opts or SynthesisOptions()
    opts = SynthesisOptions(opts.iterations, opts.step, opts.m_out, use_verifier)
    starts, phis = first_frame_inputs(pipeline, seqs)
    result = synthesize_batch(starts, phis, pipeline.verifier, opts)
    generated = [to_sequence(result.iterates[:, b], normalizer, s.id) for b, s in enumerate(seqs)]
    return generated, result


@dataclass
class MetricReport:
    methods: dict  # method -> {"pfm": median, "cg": median or None}
    per_seed: dict  # seed -> method -> {"pfm", "cg", "excluded"}
    per_sequence: list  # dicts: seed, method, id, pfm, cg
    seeds: list
    dataset_id: str = ""
    epsilon: float = 1e-3
    incomplete: list = field(default_factory=list)

    def to_dict(self):
        return {
            "methods": self.methods,
            "per_seed": {str(k): v for k, v in self.per_seed.items()},
            "seeds": self.seeds,
            "dataset_id": self.dataset_id,
            "epsilon": self.epsilon,
            "incomplete": self.incomplete,
        }


def evaluate_seed(dataset, pipeline, generated, seed):
    """Score every method for one seed.

    ``generated`` maps method -> {sequence id: Sequence} for methods produced
    ahead of time (the synthesis methods); NN and recurrent are generated here.
    """
    normalizer = dataset.normalizer
    pool = frame_pool(dataset.test, normalizer)
    starts, _ = first_frame_inputs(pipeline, dataset.test)
    start_of = {s.id: starts[i] for i, s in enumerate(dataset.test)}

    generators = {
        "nn": lambda s: nn_baseline(geo.denormalize(start_of[s.id], normalizer), dataset.train, normalizer),
        "recurrent": lambda s: rollout(pipeline.recurrent, start_of[s.id], s.id),
    }
    for method, seqs in generated.items():
        generators[method] = lambda s, seqs=seqs: seqs[s.id]

    results, rows = {}, []
    for method in METHODS:
        if method not in generators:
            continue
        cache = {}

        def gen(s, method=method, cache=cache):
            cache[s.id] = generators[method](s)
            return cache[s.id]

        pfm, per_seq, excluded = pfm_score(gen, dataset.test, normalizer)
        cgs = {}
        if method != "nn":
            cgs = {sid: cg_score(cache[sid].configs[-1], pool, normalizer) for sid in per_seq}
        results[method] = {
            "pfm": pfm,
            "cg": float(np.mean(list(cgs.values()))) if cgs else None,
            "excluded": excluded,
        }
        for sid, d in per_seq.items():
            rows.append({"seed": seed, "method": method, "id": sid, "pfm": d, "cg": cgs.get(sid)})
    return results, rows


def aggregate(per_seed, rows, seeds, dataset_id="", epsilon=1e-3):
    methods, incomplete = {}, []
    for method in METHODS:
        pfms = [per_seed[s][method]["pfm"] for s in seeds if method in per_seed[s]]
        pfms = [p for p in pfms if np.isfinite(p)]
        if not pfms:
            incomplete.append(method)
            continue
        cgs = [per_seed[s][method]["cg"] for s in seeds if method in per_seed[s]]
        cgs = [c for c in cgs if c is not None]
        methods[method] = {
            "pfm": float(statistics.median(pfms)),
            "cg": float(statistics.median(cgs)) if cgs else None,
        }
    return MetricReport(methods, per_seed, rows, list(seeds), dataset_id, epsilon, incomplete)


def run_benchmark(dataset, pipelines, opts=None):
    """Generate with every method for every seed's pipeline and aggregate medians."""
    per_seed, rows = {}, []
    for pipe in pipelines:
        generated = {}
        for method, use_v in (("noverifier", False), ("full", True)):
            seqs, _ = generate(pipe, dataset.test, dataset.normalizer, use_v, opts)
            generated[method] = {s.id: s for s in seqs}
        per_seed[pipe.seed], seed_rows = evaluate_seed(dataset, pipe, generated, pipe.seed)
        rows += seed_rows
    eps = pipelines[0].recurrent.epsilon if pipelines else 1e-3
    return aggregate(per_seed, rows, [p.seed for p in pipelines], dataset_id(dataset), eps)


def dataset_id(dataset):
    return jsonio.digest({"normalizer": dataset.normalizer.to_dict(), "train": [s.id for s in dataset.train]})


ORDERINGS = (
    "CG(full) > CG(no-verifier)",
    "PFM(full) < PFM(NN)",
    "PFM(full) < PFM(recurrent)",
    "|PFM(full) - PFM(no-verifier)| <= 0.1 PFM(full)",
)


def check_orderings(report):
    """Evaluate the benchmark orderings; returns ``[(name, passed, detail), ...]``."""
    r = report.methods
    out = []

    def get(method, metric):
        v = r.get(method, {}).get(metric)
        return float("nan") if v is None else v

    full_pfm, nov_pfm = get("full", "pfm"), get("noverifier", "pfm")
    checks = [
        (get("full", "cg") > get("noverifier", "cg"), f"{get('full', 'cg'):.4f} vs {get('noverifier', 'cg'):.4f}"),
        (full_pfm < get("nn", "pfm"), f"{full_pfm:.4f} vs {get('nn', 'pfm'):.4f}"),
        (full_pfm < get("recurrent", "pfm"), f"{full_pfm:.4f} vs {get('recurrent', 'pfm'):.4f}"),
        (abs(full_pfm - nov_pfm) <= 0.1 * full_pfm, f"|{full_pfm:.4f} - {nov_pfm:.4f}| vs {0.1 * full_pfm:.4f}"),
    ]
    for name, (ok, detail) in zip(ORDERINGS, checks):
        out.append((name, bool(ok), detail))
    return out


def format_table(report):
    lines = [
        f"{'Method':<14}{'PFM (lower)':>14}{'CG (higher)':>14}",
        "-" * 42,
    ]
    for method in METHODS:
        row = report.methods.get(method)
        if row is None:
            lines.append(f"{METHOD_LABELS[method]:<14}{'failed':>14}{'failed':>14}")
            continue
        cg = "-" if row["cg"] is None else f"{row['cg']:.3f}"
        lines.append(f"{METHOD_LABELS[method]:<14}{row['pfm']:>14.3f}{cg:>14}")
    lines.append("")
    lines.append(f"medians over seeds {report.seeds}; dataset {report.dataset_id}; recurrent stop epsilon {report.epsilon:g}")
    if report.incomplete:
        lines.append(f"INCOMPLETE: no results for {', '.join(report.incomplete)}")
    return "\n".join(lines) + "\n"


def format_details(report):
    return "".join(jsonio.dumps(row) + "\n" for row in report.per_sequence)
