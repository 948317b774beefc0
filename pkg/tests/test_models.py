import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import central_diff, rel_error

from egosynth import evaluation as ev
from egosynth import geometry as geo
from egosynth import models as m
from egosynth import netcore as nc
from egosynth import simcourt as sc
from egosynth.errors import ParseError, ValidationError


@pytest.fixture(scope="module")
def tiny_dataset():
    return sc.generate_dataset(sc.SimParams(count=40, seed=11))


SHORT = m.TrainConfig(iterations=200, seed=1)


# -- labels and intervals -------------------------------------------------------


def test_branch_interval_examples():
    assert m.branch_interval(2, 4) == (0.25, 0.5)
    assert m.branch_interval(1, 4) == (0, 0.25)
    assert m.branch_interval(1, 1) == (0, 1)


@pytest.mark.parametrize("j,k", [(0, 4), (5, 4), (1, 0)])
def test_branch_interval_rejects(j, k):
    with pytest.raises(ValidationError):
        m.branch_interval(j, k)


@given(st.integers(1, 50))
def test_branch_intervals_partition(k):
    iv = [m.branch_interval(j, k) for j in range(1, k + 1)]
    assert iv[0][0] == 0 and iv[-1][1] == 1
    for (a0, a1), (b0, b1) in zip(iv, iv[1:]):
        assert a1 == pytest.approx(b0, abs=1e-15)
        assert a0 < a1


@given(st.integers(1, 12), st.floats(0, 1))
def test_branch_of_inside_interval(k, s):
    lo, hi = m.branch_interval(m.branch_of(s, k), k)
    assert lo - 1e-12 <= s <= hi + 1e-12


def test_branch_of_shared_endpoint_goes_low():
    assert m.branch_of(0.25, 4) == 1
    assert m.branch_of(0.26, 4) == 2
    assert m.branch_of(1.0, 4) == 4


def test_goal_label_examples():
    assert m.goal_label(0.95) == 1
    assert m.goal_label(0.92) == 0
    assert m.goal_label(0.5) == 0


@given(st.floats(0, 1), st.floats(0, 1))
def test_goal_label_monotone(a, b):
    lo, hi = sorted((a, b))
    assert m.goal_label(lo) <= m.goal_label(hi)


def test_goal_label_rejects_out_of_range():
    with pytest.raises(ValidationError):
        m.goal_label(1.5)


def test_train_config_validation():
    with pytest.raises(ValidationError):
        m.TrainConfig(momentum=1.0).validate()
    with pytest.raises(ValidationError):
        m.TrainConfig(lr=0).validate()


# -- encoder --------------------------------------------------------------------


def test_encoder_zero_noise_readout():
    p = sc.SimParams(count=200, obs_rotation_noise=0, obs_translation_noise=0, obs_feature_noise=0, seed=3)
    ds = sc.generate_dataset(p)
    enc = m.train_ego_encoder(ds, m.TrainConfig(iterations=20_000, lr=3e-3))
    assert ev.encoder_error(enc, ds.test) < 0.05


def test_encode_shape_and_determinism(tiny_dataset):
    enc = m.train_ego_encoder(tiny_dataset, SHORT)
    o = tiny_dataset.test[0].observations[0]
    a, b = m.encode(enc, o), m.encode(enc, o)
    assert a.shape == (12,)
    assert np.array_equal(a, b)
    with pytest.raises(ValidationError):
        m.encode(enc, o[:5])


# -- future predictor -----------------------------------------------------------


def test_future_heads(tiny_dataset):
    fp = m.train_future(tiny_dataset, 4, SHORT)
    assert fp.k == 4
    out = m.predict_future(fp, tiny_dataset.test[0].observations[0])
    assert out.shape == (4, 12)
    assert np.array_equal(out, m.predict_future(fp, tiny_dataset.test[0].observations[0]))


def test_future_skips_short_sequences(tiny_dataset, caplog):
    short = sc.Sequence("short", tiny_dataset.train[0].configs[:5], tiny_dataset.train[0].observations[:5])
    assert m._future_pairs([short], 4) == []
    assert "too short" in caplog.text


def test_future_backward_finite_differences():
    rng = np.random.default_rng(0)
    for trial in range(10):
        d, k, hidden = 20, int(rng.integers(1, 5)), int(rng.integers(3, 9))
        fp = m.init_future(d, k, trial, None, None, hidden)
        X = rng.normal(size=(3, d))
        T = rng.normal(size=(3, k, 12))

        def loss(nets, X=X):
            out, _ = m.future_forward(nets[0], nets[1:], X)
            return np.sum((out - T) ** 2)

        nets = [fp.trunk] + fp.branches
        out, caches = m.future_forward(fp.trunk, fp.branches, X)
        grads, gx = m.future_backward(fp.trunk, fp.branches, caches, 2 * (out - T))
        for ni, net in enumerate(nets):
            for ai, arr in enumerate(net.arrays()):

                def f(a, ni=ni, ai=ai):
                    arrays = list(nets[ni].arrays())
                    arrays[ai] = a
                    trial_nets = list(nets)
                    trial_nets[ni] = nets[ni].with_arrays(arrays)
                    return loss(trial_nets)

                assert rel_error(grads[ni][ai], central_diff(f, arr)) < 1e-5
        assert rel_error(gx, central_diff(lambda x: loss(nets, x), X)) < 1e-5


# -- verifier -------------------------------------------------------------------


def test_zero_verifier():
    v = m.zero_verifier()
    h = np.random.default_rng(0).normal(size=(5, 12))
    psi, g = m.verify_with_grad(v, h)
    assert np.all(psi == 0.5)
    assert np.all(g == 0)


def test_verify_grad_finite_differences():
    rng = np.random.default_rng(1)
    for seed in range(20):
        v = m.GoalVerifier(nc.net_init(m.VERIFIER_SPEC, seed))
        h = rng.normal(size=12) * 2
        g = m.verify_grad(v, h)
        assert rel_error(g, central_diff(lambda x: m.verify(v, x), h)) < 1e-5


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=12, max_size=12), st.integers(0, 1000))
def test_verifier_range(h, seed):
    v = m.GoalVerifier(nc.net_init(m.VERIFIER_SPEC, seed))
    assert 0 < m.verify(v, np.array(h)) < 1


def test_verifier_needs_both_classes(tiny_dataset):
    # a single-frame sequence has s = 1, so every frame is a positive
    singles = [sc.Sequence(s.id, s.configs[:1], s.observations[:1]) for s in tiny_dataset.train]
    ds = sc.make_dataset(singles, [], tiny_dataset.params)
    with pytest.raises(ValidationError, match="both"):
        m.train_goal_verifier(ds, SHORT)


def test_auc_examples():
    assert m.auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert m.auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0
    assert m.auc([0.5, 0.5], [0, 1]) == 0.5


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_auc_matches_pair_count(seed):
    rng = np.random.default_rng(seed)
    scores = rng.integers(0, 5, size=20).astype(float)
    labels = np.r_[0, 1, rng.integers(0, 2, size=18)]
    pos, neg = scores[labels == 1], scores[labels == 0]
    brute = np.mean([(p > q) + 0.5 * (p == q) for p in pos for q in neg])
    assert m.auc(scores, labels) == pytest.approx(brute, abs=1e-12)


# -- bundles --------------------------------------------------------------------


def test_bundle_round_trip(tmp_path, tiny_dataset):
    models = [
        m.train_ego_encoder(tiny_dataset, SHORT),
        m.train_future(tiny_dataset, 3, SHORT),
        m.train_goal_verifier(tiny_dataset, SHORT),
        ev.train_recurrent_baseline(tiny_dataset, SHORT),
    ]
    for model in models:
        role = m.model_role(model)
        path = tmp_path / f"{role}.json"
        m.save_model(path, model)
        back = m.load_model(path, expect_role=role)
        nets = [model.trunk] + model.branches if role == "future" else [model.net]
        nets_back = [back.trunk] + back.branches if role == "future" else [back.net]
        for a, b in zip(nets, nets_back):
            for x, y in zip(a.arrays(), b.arrays()):
                assert np.array_equal(x, y)
        assert m.normalizer_id(back.normalizer) == m.normalizer_id(tiny_dataset.normalizer)


def test_bundle_wrong_role(tmp_path, tiny_dataset):
    path = tmp_path / "v.json"
    m.save_model(path, m.train_goal_verifier(tiny_dataset, SHORT))
    with pytest.raises(ParseError, match="expected"):
        m.load_model(path, expect_role="ego")


def test_bundle_garbage(tmp_path):
    path = tmp_path / "x.json"
    path.write_text('{"format": "egosynth-model", "version": 1, "role": "ego"}')
    with pytest.raises(ParseError):
        m.load_model(path)


# -- measured on the reference run ----------------------------------------------


def _loss_blocks(run, role, rep=0):
    import csv

    with open(run["out"] / "models" / f"rep{rep}" / f"{role}_loss.csv") as f:
        rows = list(csv.reader(f))[1:]
    h = np.array([float(r[1]) for r in rows])
    return h.reshape(-1, 100).mean(axis=1)


@pytest.mark.slow
def test_encoder_loss_drops(reference_run):
    b = _loss_blocks(reference_run, "ego")
    assert b[-1] < 0.1 * b[0]


@pytest.mark.slow
def test_future_loss_drops(reference_run):
    b = _loss_blocks(reference_run, "future")
    assert b[-1] < 0.25 * b[0]


@pytest.mark.slow
def test_encoder_beats_retrieval(reference_dataset, reference_pipeline):
    assert ev.encoder_error(reference_pipeline.encoder, reference_dataset.test) < ev.nn_retrieval_error(reference_dataset)


@pytest.mark.slow
def test_branch_distance_grows(reference_dataset, reference_pipeline):
    starts, phis = ev.first_frame_inputs(reference_pipeline, reference_dataset.test)
    dist = np.linalg.norm(phis - starts[:, None, :], axis=2).mean(axis=0)
    assert np.all(np.diff(dist) > 0)


@pytest.mark.slow
def test_last_branch_near_basket(reference_dataset, reference_pipeline):
    _, phis = ev.first_frame_inputs(reference_pipeline, reference_dataset.test)
    raw = geo.denormalize(phis[:, -1], reference_dataset.normalizer)
    basket = reference_dataset.params.basket_floor
    d = [np.linalg.norm(geo.court_projection(geo.orthonormalize_config(c)) - basket) for c in raw]
    assert np.mean(np.array(d) <= 3.0) >= 0.9


@pytest.mark.slow
def test_verifier_separates(reference_dataset, reference_pipeline):
    v = reference_pipeline.verifier
    late, early = [], []
    for s in reference_dataset.test:
        psi = m.verify(v, geo.normalize(s.configs, reference_dataset.normalizer))
        late += list(psi[s.times > 0.92])
        early += list(psi[s.times < 0.5])
    assert np.mean(late) > np.mean(early)
    assert m.verifier_auc(v, reference_dataset.test, reference_dataset.normalizer) >= 0.9
