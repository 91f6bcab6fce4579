import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import codewords, map_llrs
from nnms.channel import SnrPoint, transmit_all_zero
from nnms.codes import tree_code
from nnms.decode import (UNIT_RAW, DecoderWeights, DecodingDiverged, Kind, WeightScheme,
                         check_update_bp, check_update_ms, decode, decode_batch, inverse_softplus,
                         marginals, nms_factor_from_unnms, softplus, variable_update)
from nnms.tanner import Code, syndrome


def _frames(code, n, snr=2.0, seed=0):
    return transmit_all_zero(SnrPoint(snr, code.params), n, seed).llrs


# -- node updates against brute-force exclusion --------------------------------

@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.1, 2.0), st.floats(0.0, 1.0))
def test_check_update_ms_brute_force(toy, seed, gamma, offset):
    g = toy.graph
    u = np.random.default_rng(seed).normal(0, 3, g.edge_count)
    got = check_update_ms(g, u, gamma, offset)
    for j in range(g.n_checks):
        edges = g.check_edge_ids(j)
        for e in edges:
            others = [u[k] for k in edges if k != e]
            mag = max(min(abs(v) for v in others) - offset, 0.0)
            sign = np.prod([1.0 if v >= 0 else -1.0 for v in others])
            assert got[e] == pytest.approx(sign * gamma * mag, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_check_update_bp_brute_force(toy, seed):
    g = toy.graph
    u = np.random.default_rng(seed).normal(0, 2, g.edge_count)
    got = check_update_bp(g, u)
    for j in range(g.n_checks):
        edges = g.check_edge_ids(j)
        for e in edges:
            prod = np.prod([math.tanh(u[k] / 2) for k in edges if k != e])
            assert got[e] == pytest.approx(2 * math.atanh(prod), abs=1e-9)


def test_check_update_bp_saturates_finitely(toy):
    u = np.full(toy.graph.edge_count, 80.0)
    out = check_update_bp(toy.graph, u)
    assert np.all(np.isfinite(out))
    assert out.max() == pytest.approx(2 * math.atanh(1 - 1e-12), rel=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_variable_update_brute_force(toy, seed):
    g = toy.graph
    rng = np.random.default_rng(seed)
    b = rng.normal(2, 2, g.n_vars)
    c = rng.normal(0, 5, g.edge_count)
    alpha = rng.uniform(0.5, 1.5, g.n_vars)
    beta = rng.uniform(0.5, 1.5, g.edge_count)
    got = variable_update(g, b, c, alpha, beta, clip=6.0)
    for i in range(g.n_vars):
        edges = g.var_edge_ids(i)
        for e in edges:
            v = alpha[i] * b[i] + sum(beta[k] * c[k] for k in edges if k != e)
            assert got[e] == pytest.approx(np.clip(v, -6, 6), abs=1e-12)
    x = marginals(g, b, c, clip=math.inf)
    for i in range(g.n_vars):
        assert x[i] == pytest.approx(b[i] + sum(c[k] for k in g.var_edge_ids(i)), abs=1e-12)


def test_first_layer_messages_are_channel_values(toy):
    b = _frames(toy, 1)[0]
    u = variable_update(toy.graph, b, np.zeros(toy.graph.edge_count))
    np.testing.assert_array_equal(u, np.clip(b[toy.graph.edge_var], -100, 100))


def test_batched_node_updates_match_single_frames(toy):
    g = toy.graph
    rng = np.random.default_rng(1)
    u = rng.normal(0, 3, (4, g.edge_count))
    batch = check_update_ms(g, u, 0.7)
    for f in range(4):
        np.testing.assert_array_equal(batch[f], check_update_ms(g, u[f], 0.7))


# -- full decoders ------------------------------------------------------------

def test_bp_is_exact_on_a_tree():
    code = Code.from_matrix(tree_code(10, seed=7), "tree")
    words = codewords(code)
    llrs = _frames(code, 50, snr=1.0, seed=2)
    res = decode_batch(code.graph, llrs, DecoderWeights.fixed("bp", 20), clip=None, early_exit=False)
    for f in range(50):
        np.testing.assert_allclose(res.soft[f], map_llrs(words, llrs[f]), atol=1e-6)


def test_identity_reductions_bit_exact(toy):
    llrs = _frames(toy, 100, snr=2.5, seed=4)
    ref = decode_batch(toy.graph, llrs, DecoderWeights.fixed("ms", 15))
    others = [DecoderWeights.fixed("nms", 15, 1.0)]
    others += [DecoderWeights.initial(WeightScheme(k, 15), toy.graph)
               for k in (Kind.UNNMS, Kind.SNNMS, Kind.ANNMS)]
    for w in others:
        r = decode_batch(toy.graph, llrs, w)
        assert np.array_equal(r.soft, ref.soft) and np.array_equal(r.hard, ref.hard)
        assert np.array_equal(r.iterations_used, ref.iterations_used)


@pytest.mark.parametrize("kind", ["bp", "ms", "nms", "oms"])
def test_noiseless_frames_converge_at_once(toy, kind):
    llrs = _frames(toy, 20, snr=60.0)
    r = decode_batch(toy.graph, llrs, DecoderWeights.fixed(kind, 10, 0.8 if kind == "nms" else None))
    assert not r.hard.any()
    assert np.all(r.iterations_used == 1) and r.converged.all()


def test_result_invariants(code_b):
    llrs = _frames(code_b, 30, snr=3.0, seed=8)
    r = decode_batch(code_b.graph, llrs, DecoderWeights.fixed("nms", 10, nms_factor_from_unnms()))
    assert np.array_equal(r.hard, (r.soft < 0).astype(np.uint8))
    synd = syndrome(code_b.h, r.hard)
    assert not synd[r.converged].any()
    assert synd[~r.converged].any(axis=1).all()
    assert np.all((1 <= r.iterations_used) & (r.iterations_used <= 10))
    single = decode(code_b.graph, llrs[3], DecoderWeights.fixed("nms", 10, nms_factor_from_unnms()))
    assert np.array_equal(single.soft, r.soft[3]) and single.iterations_used == r.iterations_used[3]


def test_early_exit_matches_full_run_prefix(toy):
    llrs = _frames(toy, 40, snr=2.0, seed=6)
    w = DecoderWeights.fixed("ms", 12)
    stop = decode_batch(toy.graph, llrs, w)
    for f in range(40):
        t = int(stop.iterations_used[f])
        full = decode(toy.graph, llrs[f], DecoderWeights.fixed("ms", t), early_exit=False)
        np.testing.assert_array_equal(full.soft, stop.soft[f])


def test_nan_input_raises(toy):
    llrs = _frames(toy, 2)
    llrs[1, 5] = np.nan
    with pytest.raises(DecodingDiverged) as err:
        decode_batch(toy.graph, llrs, DecoderWeights.fixed("ms", 5))
    assert err.value.frame == 1


def test_wrong_frame_length(toy):
    with pytest.raises(ValueError):
        decode(toy.graph, np.zeros(95), DecoderWeights.fixed("ms", 5))


# -- weights ------------------------------------------------------------------

def test_softplus_unit_point():
    assert softplus(UNIT_RAW) == 1.0
    assert UNIT_RAW == pytest.approx(math.log(math.e - 1), abs=1e-15)
    assert nms_factor_from_unnms() == pytest.approx(0.313262, abs=1e-6)
    np.testing.assert_allclose(softplus(inverse_softplus([0.1, 2.0, 7.5])), [0.1, 2.0, 7.5])


def test_parameter_counts(code_b):
    g = code_b.graph
    assert WeightScheme(Kind.UNNMS, 10).param_count(g) == 1
    assert WeightScheme(Kind.SNNMS, 10).param_count(g) == 10
    assert WeightScheme(Kind.ANNMS, 10).param_count(g) == 10 * (1023 + 2 * 32736)


def test_annms_layout(toy):
    g = toy.graph
    t, n, e = 2, g.n_vars, g.edge_count
    raw = np.arange(t * (n + 2 * e), dtype=float) / 1000.0
    alpha, beta, gamma, _ = DecoderWeights(WeightScheme(Kind.ANNMS, t), raw).expand(g)
    np.testing.assert_allclose(alpha[1, 3], softplus(raw[n + 3]))
    np.testing.assert_allclose(beta[0, 5], softplus(raw[t * n + 5]))
    np.testing.assert_allclose(gamma[1, 7], softplus(raw[t * (n + e) + e + 7]))


def test_weight_file_round_trip(tmp_path, toy):
    w = DecoderWeights(WeightScheme(Kind.SNNMS, 4), [0.1, -0.2, 0.3, -1.0])
    w.save(tmp_path / "w.json")
    back = DecoderWeights.load(tmp_path / "w.json", toy.graph)
    assert back.scheme == w.scheme and np.array_equal(back.raw, w.raw)
    assert back.to_json() == w.to_json()


def test_weight_count_is_validated(toy):
    bad = DecoderWeights(WeightScheme(Kind.SNNMS, 4), [0.1, 0.2])
    with pytest.raises(ValueError, match="needs 4 raw parameters"):
        bad.validate(toy.graph)
    with pytest.raises(ValueError):
        DecoderWeights.from_json('{"scheme": "unnms", "t_max": 5, "raw": [1, 2]}', toy.graph)


def test_scheme_validation():
    with pytest.raises(ValueError):
        WeightScheme(Kind.NMS, 5)
    with pytest.raises(ValueError):
        WeightScheme("ms", 0)
    assert WeightScheme("oms", 5).factor == 0.5
