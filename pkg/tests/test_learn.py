import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import nnms.learn as learn
from nnms.channel import SnrPoint, transmit_all_zero
from nnms.decode import UNIT_RAW, DecoderWeights, Kind, WeightScheme, decode
from nnms.learn import (LossConfig, OptimizerState, TrainSettings, adam_step, backward,
                        forward_unrolled, grad_check, loss_and_grad, loss_grad, loss_hybrid,
                        loss_terms, lr_schedule, plateau_reached, train)
from nnms.traindata import MixtureSpec, mixture_moments, sample_approx_batch


def _frames(code, n, snr=2.0, seed=0):
    return transmit_all_zero(SnrPoint(snr, code.params), n, seed).llrs


# -- loss -----------------------------------------------------------------------

def test_loss_of_perfect_output_is_zero():
    soft = np.full((5, 3, 8), 200.0)
    assert loss_hybrid(soft, 0) == pytest.approx(0.0, abs=1e-9)


def test_loss_of_uninformative_output():
    loss, ce, mse = loss_terms(np.zeros((4, 2, 10)), 0)
    assert ce == pytest.approx(math.log(2))
    assert mse == pytest.approx(0.25)
    assert loss == pytest.approx(0.2 * math.log(2) + 0.8 * 100 * 0.25)
    assert loss == pytest.approx(20.14, abs=5e-3)


def test_loss_scores_the_correct_bit():
    # labels flip which sign of the LLR is right
    x = np.array([[[3.0, -3.0]]])
    assert loss_hybrid(x, np.array([[0, 1]])) == pytest.approx(loss_hybrid(-x, np.array([[1, 0]])))
    assert loss_hybrid(x, np.array([[0, 1]])) < loss_hybrid(x, np.array([[1, 0]]))


def test_cross_entropy_averages_every_layer():
    rng = np.random.default_rng(0)
    soft = rng.normal(2, 3, (6, 4, 20))
    _, ce, _ = loss_terms(soft, 0)
    per_layer = [loss_terms(soft[l:l + 1], 0)[1] for l in range(6)]
    assert ce == pytest.approx(np.mean(per_layer))
    changed = soft.copy()
    changed[0] += 1.0
    assert loss_hybrid(changed, 0) != loss_hybrid(soft, 0)


def test_loss_of_raw_channel_llrs_code_b(code_b):
    m = mixture_moments(MixtureSpec(2.8, 3.2, 5, code_b.params))
    llrs = sample_approx_batch(m, 256, code_b.n, seed=0).llrs
    soft = np.broadcast_to(llrs, (10,) + llrs.shape)
    assert loss_hybrid(soft, 0) == pytest.approx(2.45, abs=0.15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.0, 1.0), st.floats(0.5, 200.0))
def test_loss_gradient_matches_finite_differences(seed, rho, kappa):
    rng = np.random.default_rng(seed)
    soft = rng.normal(1, 4, (3, 2, 5))
    labels = rng.integers(0, 2, (2, 5))
    cfg = LossConfig(rho, kappa)
    _, g = loss_grad(soft, labels, cfg)
    def central(idx, h):
        up = soft.copy()
        dn = soft.copy()
        up[idx] += h
        dn[idx] -= h
        return (loss_hybrid(up, labels, cfg) - loss_hybrid(dn, labels, cfg)) / (2 * h)

    for idx in [(0, 0, 0), (2, 1, 4), (1, 0, 3), (2, 0, 2)]:
        num = (4 * central(idx, 5e-5) - central(idx, 1e-4)) / 3
        assert g[idx] == pytest.approx(num, rel=1e-5, abs=1e-9)


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(rho=1.5)
    with pytest.raises(ValueError):
        LossConfig(kappa=0.0)


# -- forward --------------------------------------------------------------------

def test_unit_weights_forward_equals_min_sum_layerwise(toy):
    llrs = _frames(toy, 10, seed=1)
    tr = forward_unrolled(toy.graph, llrs, DecoderWeights.initial(WeightScheme(Kind.SNNMS, 6), toy.graph))
    ms = forward_unrolled(toy.graph, llrs, DecoderWeights.fixed("ms", 6))
    assert np.array_equal(tr.x, ms.x) and np.array_equal(tr.c, ms.c) and np.array_equal(tr.u, ms.u)
    for t in range(1, 7):
        for f in range(10):
            d = decode(toy.graph, llrs[f], DecoderWeights.fixed("ms", t), early_exit=False)
            np.testing.assert_array_equal(d.soft, tr.soft[t - 1, f])


def test_forward_agrees_with_early_exit_decoder_up_to_exit(toy):
    w = DecoderWeights(WeightScheme(Kind.UNNMS, 8), [-0.7])
    llrs = _frames(toy, 30, seed=2)
    tr = forward_unrolled(toy.graph, llrs, w)
    for f in range(30):
        d = decode(toy.graph, llrs[f], w)
        np.testing.assert_array_equal(d.soft, tr.soft[d.iterations_used - 1, f])


def test_noiseless_frame_has_confident_marginals(toy):
    llrs = _frames(toy, 1, snr=12.0)
    assert np.abs(llrs).max() < 100  # below the clip level
    tr = forward_unrolled(toy.graph, llrs, DecoderWeights.initial(WeightScheme(Kind.UNNMS, 4), toy.graph))
    assert np.all(tr.soft[-1] >= np.abs(llrs))
    assert loss_hybrid(tr.soft, 0) < 1e-9
    # far above the clip level the marginals saturate at the clip
    loud = _frames(toy, 1, snr=40.0)
    tr = forward_unrolled(toy.graph, loud, DecoderWeights.initial(WeightScheme(Kind.UNNMS, 4), toy.graph))
    assert np.all(tr.soft[-1] == 100.0)


def test_stored_winners_replay(toy):
    g = toy.graph
    tr = forward_unrolled(g, _frames(toy, 6, seed=3), DecoderWeights(WeightScheme(Kind.SNNMS, 3), [0.1, -0.5, 0.3]))
    for layer in range(3):
        for j in range(g.n_checks):
            edges = g.check_edge_ids(j)
            for f in range(6):
                mags = [(abs(tr.u[layer, e, f]), e) for e in edges]
                order = sorted(mags)
                assert tr.idx1[layer, j, f] == order[0][1]
                assert tr.idx2[layer, j, f] == order[1][1]
                negs = sum(tr.u[layer, e, f] < 0 for e in edges)
                assert tr.par[layer, j, f] == (negs % 2 == 1)
                # the excluded-edge winner is idx1 for every edge but idx1 itself
                for e in edges:
                    rest = [(abs(tr.u[layer, k, f]), k) for k in edges if k != e]
                    want = min(rest)[1]
                    got = tr.idx2[layer, j, f] if e == tr.idx1[layer, j, f] else tr.idx1[layer, j, f]
                    assert got == want


# -- backward -------------------------------------------------------------------

def test_zero_upstream_gradient(toy):
    w = DecoderWeights(WeightScheme(Kind.ANNMS, 2),
                       np.full(WeightScheme(Kind.ANNMS, 2).param_count(toy.graph), 0.2))
    tr = forward_unrolled(toy.graph, _frames(toy, 4), w)
    g = backward(toy.graph, tr, np.zeros((2, 4, toy.n)), w)
    assert g.shape == w.raw.shape and not g.any()


def test_trace_scheme_mismatch(toy):
    w = DecoderWeights(WeightScheme(Kind.UNNMS, 3), [0.0])
    tr = forward_unrolled(toy.graph, _frames(toy, 2), w)
    with pytest.raises(ValueError):
        backward(toy.graph, tr, np.zeros((3, 2, toy.n)), DecoderWeights(WeightScheme(Kind.SNNMS, 3), [0.0] * 3))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_weight_sharing_collapse(toy, seed):
    g = toy.graph
    t, n, e = 3, g.n_vars, g.edge_count
    layer_raw = np.random.default_rng(seed).normal(-0.3, 0.6, t)
    llrs = _frames(toy, 20, seed=seed)
    snnms = DecoderWeights(WeightScheme(Kind.SNNMS, t), layer_raw)
    full = np.concatenate([np.full(t * n, UNIT_RAW), np.full(t * e, UNIT_RAW), np.repeat(layer_raw, e)])
    annms = DecoderWeights(WeightScheme(Kind.ANNMS, t), full)
    gs = loss_and_grad(g, llrs, 0, snnms).grad
    ga = loss_and_grad(g, llrs, 0, annms).grad[t * (n + e):].reshape(t, e)
    np.testing.assert_allclose(gs, ga.sum(axis=1), rtol=1e-10, atol=1e-14)


def test_first_layer_beta_gradient_is_zero(toy):
    w = DecoderWeights.initial(WeightScheme(Kind.ANNMS, 2), toy.graph)
    g = loss_and_grad(toy.graph, _frames(toy, 8), 0, w).grad
    n, e = toy.graph.n_vars, toy.graph.edge_count
    assert not g[2 * n: 2 * n + e].any()


def test_sub_batches_do_not_change_the_result(toy):
    w = DecoderWeights(WeightScheme(Kind.SNNMS, 4), [0.2, -0.1, 0.4, -0.6])
    llrs = _frames(toy, 37, seed=5)
    a = loss_and_grad(toy.graph, llrs, 0, w, sub_batch=64)
    b = loss_and_grad(toy.graph, llrs, 0, w, sub_batch=5)
    assert a.loss == pytest.approx(b.loss, rel=1e-12)
    np.testing.assert_allclose(a.grad, b.grad, rtol=1e-10)
    assert (a.ber, a.fer) == (b.ber, b.fer)


def test_grad_check_unnms_and_annms(toy):
    assert grad_check(toy, WeightScheme(Kind.UNNMS, 5), 100, seed=0).max_rel_err < 1e-4
    assert grad_check(toy, WeightScheme(Kind.ANNMS, 2), 20, seed=0).max_rel_err < 1e-4


def test_grad_check_is_deterministic(toy):
    a = grad_check(toy, WeightScheme(Kind.SNNMS, 2), 10, seed=3)
    b = grad_check(toy, WeightScheme(Kind.SNNMS, 2), 10, seed=3)
    assert np.array_equal(a.analytic, b.analytic) and np.array_equal(a.numeric, b.numeric)


# -- optimizer ------------------------------------------------------------------

def test_learning_rate_schedule():
    assert lr_schedule(0) == 0.002
    assert lr_schedule(400) == pytest.approx(0.0019)
    assert lr_schedule(4000) == pytest.approx(0.002 * 0.95 ** 10)
    assert lr_schedule(4000) == pytest.approx(0.001197, abs=1e-6)
    st = OptimizerState.for_params(1, staircase=True)
    assert st.lr(399) == 0.002 and st.lr(400) == pytest.approx(0.0019)


def test_adam_first_step_moves_by_learning_rate():
    for g in (3.0, -0.01, 250.0):
        st = OptimizerState.for_params(1)
        new = adam_step(st, np.array([0.5]), np.array([g]))
        assert new[0] - 0.5 == pytest.approx(-0.002 * np.sign(g), rel=1e-4)
        assert st.step == 1


def test_adam_zero_gradient_keeps_weights():
    st = OptimizerState.for_params(3)
    raw = np.array([0.1, -0.2, 0.3])
    for _ in range(50):
        raw = adam_step(st, raw, np.zeros(3))
    np.testing.assert_array_equal(raw, [0.1, -0.2, 0.3])


def test_adam_rejects_bad_gradients():
    st = OptimizerState.for_params(2)
    with pytest.raises(FloatingPointError):
        adam_step(st, np.zeros(2), np.array([1.0, np.nan]))
    assert st.step == 0
    with pytest.raises(ValueError):
        adam_step(st, np.zeros(2), np.zeros(3))


# -- training loop --------------------------------------------------------------

def test_zero_epochs(toy):
    r = train(toy, WeightScheme(Kind.UNNMS, 5), TrainSettings(10, 8, 0, 5, 1.5, 2.5))
    assert r.steps == 0 and r.jsonl() == ""
    assert r.weights.raw.tolist() == [UNIT_RAW]


def test_training_is_reproducible_and_records_every_step(toy):
    s = TrainSettings(6, 8, 2, 4, 1.5, 2.5, snapshot_every=5)
    a = train(toy, WeightScheme(Kind.SNNMS, 4), s, seed=11)
    b = train(toy, WeightScheme(Kind.SNNMS, 4), s, seed=11)
    assert a.steps == 12 and len(a.ber) == len(a.fer) == len(a.lr) == 12
    assert a.jsonl() == b.jsonl() and np.array_equal(a.weights.raw, b.weights.raw)
    assert sorted(a.snapshots) == [0, 5, 10, 12]
    assert a.lr[0] == 0.002
    # batches are replayed each epoch, so the first step of epoch two sees batch 0
    c = train(toy, WeightScheme(Kind.SNNMS, 4), s, seed=12)
    assert a.jsonl() != c.jsonl()


def test_blended_training_runs(toy):
    s = TrainSettings(3, 10, 1, 3, 1.5, 2.5, n_points=3, blended=True)
    assert train(toy, WeightScheme(Kind.UNNMS, 3), s).steps == 3


def test_divergence_reports_step_and_weights(toy, monkeypatch):
    real = learn.loss_and_grad
    calls = []

    def flaky(*a, **k):
        calls.append(1)
        res = real(*a, **k)
        if len(calls) == 3:
            res.loss = math.nan
        return res

    monkeypatch.setattr(learn, "loss_and_grad", flaky)
    with pytest.raises(learn.TrainingDiverged) as err:
        train(toy, WeightScheme(Kind.UNNMS, 3), TrainSettings(5, 4, 1, 3, 1.5, 2.5))
    assert err.value.step == 2
    assert err.value.weights.raw.size == 1


def test_plateau_rule():
    flat = [1.0] * 800
    assert plateau_reached(flat, 200, 1e-3, 3)
    assert not plateau_reached(flat[:600], 200, 1e-3, 3)
    falling = list(np.linspace(5, 1, 800))
    assert not plateau_reached(falling, 200, 1e-3, 3)


def test_trainable_kind_required(toy):
    with pytest.raises(ValueError):
        train(toy, WeightScheme(Kind.PLAIN_MS, 3), TrainSettings(1, 1, 1, 3, 1.5, 2.5))
