"""Loss catalog: grammar, reference values, graph/reference parity.

Frozen expected values were computed with 50-digit arithmetic (mpmath)
from the loss definitions and rounded to the nearest float64.
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ranklab import autodiff as ad
from ranklab import losses
from ranklab.losses import LossConfigError, parse_loss

S = np.array([3.0, 1.0, 2.0])  # reference catalog, target index 0


class TestParse:
    @pytest.mark.parametrize("text,kind,attrs", [
        ("ce", "ce", {}),
        ("ce-top:5", "ce_topn", {"top_n": 5}),
        ("ce-eta:0.5", "ce_eta", {"eta": 0.5}),
        ("bce", "bce", {}),
        ("bpr", "bpr", {}),
        ("nce:10", "nce", {"sample_count": 10}),
        ("ssm:64", "ssm", {"sample_count": 64}),
        ("sce:128:32.5", "sce", {"sample_count": 128, "alpha": 32.5}),
        ("  CE  ", "ce", {}),
    ])
    def test_grammar(self, text, kind, attrs):
        spec = parse_loss(text)
        assert spec.kind == kind
        for name, want in attrs.items():
            assert getattr(spec, name) == want

    @pytest.mark.parametrize("text", [
        "", "softmax", "ce:", "ce-top", "ce-top:0", "ce-top:2.5", "ce-eta",
        "ce-eta:-1", "ce-eta:inf", "bce:1", "nce", "nce:-3", "ssm:1.5",
        "sce:5", "sce:5:0.5", "sce:5:nan", "ssm:0",
    ])
    def test_rejects(self, text):
        with pytest.raises(LossConfigError):
            parse_loss(text)

    @pytest.mark.parametrize("text", [
        "ce", "ce-top:5", "ce-eta:0.5", "bce", "bpr", "nce:10", "ssm:64",
        "sce:128:32.5",
    ])
    def test_config_string_roundtrip(self, text):
        assert parse_loss(text).config_string() == text

    def test_negatives_per_example(self):
        assert parse_loss("ce").negatives_per_example == 0
        assert parse_loss("bce").negatives_per_example == 1
        assert parse_loss("bpr").negatives_per_example == 1
        assert parse_loss("sce:7:2").negatives_per_example == 7

    def test_needs_full_catalog(self):
        assert parse_loss("ce-eta:1").needs_full_catalog
        assert not parse_loss("ssm:3").needs_full_catalog


class TestReferenceValues:
    def test_ce(self):
        assert losses.ce_loss(S, 0).value == pytest.approx(0.4076059644443803, abs=1e-15)

    def test_ce_topn(self):
        # top-2 of [3,1,2] keeps scores {3,2}
        assert losses.ce_topn_loss(S, 0, 2).value == pytest.approx(
            0.31326168751822283, abs=1e-15)

    def test_ce_topn_beyond_catalog_equals_ce(self):
        assert losses.ce_topn_loss(S, 0, 50).value == pytest.approx(
            losses.ce_loss(S, 0).value, abs=0)

    def test_ce_eta(self):
        # eta=0.5 keeps s_v >= 3 - 1.5, i.e. {3, 2}
        assert losses.ce_eta_loss(S, 0, 0.5).value == pytest.approx(
            0.31326168751822283, abs=1e-15)

    def test_ce_eta_narrow_keeps_only_target(self):
        assert losses.ce_eta_loss(S, 0, 0.1).value == 0.0

    def test_bce(self):
        assert losses.bce_loss(3.0, 2.0).value == pytest.approx(
            2.1755153626167146, abs=1e-15)

    def test_bpr(self):
        assert losses.bpr_loss(3.0, 2.0).value == pytest.approx(
            0.31326168751822283, abs=1e-15)

    def test_nce(self):
        # negatives scored [1, 2], offset 0, catalog 3: correction log(2/3)
        assert losses.nce_loss(3.0, [1.0, 2.0], 0.0, 3).value == pytest.approx(
            4.149304086401859, abs=1e-14)

    def test_ssm(self):
        # -1 + log(e^1 + 2e^0)
        assert losses.ssm_loss(1.0, [0.0, 0.0]).value == pytest.approx(
            0.5514447139320511, abs=1e-15)

    def test_sce(self):
        # alpha=2 on negatives [1, 2] against target 3
        assert losses.sce_loss(3.0, [1.0, 2.0], 2.0).value == pytest.approx(
            0.6963567487889982, abs=1e-15)

    def test_sce_log_identity(self):
        # equal scores: value collapses to log(1 + alpha K)
        assert losses.sce_loss(0.0, [0.0, 0.0], 3.0).value == pytest.approx(
            math.log(7.0), abs=1e-14)


class TestAlgebra:
    @given(st.data())
    @settings(max_examples=150, deadline=None)
    def test_decomposition(self, data):
        n = data.draw(st.integers(min_value=2, max_value=12))
        scores = np.array(data.draw(st.lists(
            st.floats(min_value=-20, max_value=20, allow_nan=False),
            min_size=n, max_size=n)))
        tgt = data.draw(st.integers(min_value=0, max_value=n - 1))
        neg = data.draw(st.integers(min_value=0, max_value=n - 1))
        for spec, kwargs in [
            (parse_loss("ce"), {}),
            (parse_loss("ce-top:3"), {}),
            (parse_loss("ce-eta:0.7"), {}),
            (parse_loss("bce"), {"sampled_negatives": [neg]}),
            (parse_loss("bpr"), {"sampled_negatives": [neg]}),
            (parse_loss("ssm:1"), {"sampled_negatives": [neg]}),
            (parse_loss("sce:1:4"), {"sampled_negatives": [neg]}),
            (parse_loss("nce:1"), {"sampled_negatives": [neg], "nce_offset": 0.3}),
        ]:
            out = losses.loss_eval(spec, scores, tgt, **kwargs)
            s_plus = scores[tgt]
            assert out.value == pytest.approx(-s_plus + out.normalizer_log,
                                              rel=1e-12, abs=1e-12)

    @given(st.data())
    @settings(max_examples=100, deadline=None)
    def test_truncation_never_exceeds_ce(self, data):
        n = data.draw(st.integers(min_value=2, max_value=20))
        scores = np.array(data.draw(st.lists(
            st.floats(min_value=-10, max_value=10, allow_nan=False),
            min_size=n, max_size=n)))
        tgt = data.draw(st.integers(min_value=0, max_value=n - 1))
        full = losses.ce_loss(scores, tgt).value
        cut = data.draw(st.integers(min_value=1, max_value=n))
        assert losses.ce_topn_loss(scores, tgt, cut).value <= full + 1e-12
        eta = data.draw(st.floats(min_value=0, max_value=5, allow_nan=False))
        assert losses.ce_eta_loss(scores, tgt, eta).value <= full + 1e-12

    @given(st.floats(min_value=0, max_value=3), st.floats(min_value=0, max_value=3))
    @settings(max_examples=60, deadline=None)
    def test_ce_eta_monotone_in_eta(self, e1, e2):
        lo, hi = sorted((e1, e2))
        assert (losses.ce_eta_loss(S, 0, lo).value
                <= losses.ce_eta_loss(S, 0, hi).value + 1e-12)

    def test_ce_eta_large_equals_ce(self):
        assert losses.ce_eta_loss(S, 0, 100.0).value == losses.ce_loss(S, 0).value

    @given(st.data())
    @settings(max_examples=100, deadline=None)
    def test_sce_alpha_one_is_ssm(self, data):
        k = data.draw(st.integers(min_value=1, max_value=8))
        s_plus = data.draw(st.floats(min_value=-15, max_value=15, allow_nan=False))
        neg = np.array(data.draw(st.lists(
            st.floats(min_value=-15, max_value=15, allow_nan=False),
            min_size=k, max_size=k)))
        a = losses.sce_loss(s_plus, neg, 1.0).value
        b = losses.ssm_loss(s_plus, neg).value
        assert a == pytest.approx(b, rel=1e-13, abs=1e-13)

    @given(st.data())
    @settings(max_examples=100, deadline=None)
    def test_sce_monotone_in_alpha(self, data):
        neg = np.array(data.draw(st.lists(
            st.floats(min_value=-5, max_value=5, allow_nan=False),
            min_size=1, max_size=6)))
        a1 = data.draw(st.floats(min_value=1, max_value=50))
        a2 = data.draw(st.floats(min_value=1, max_value=50))
        lo, hi = sorted((a1, a2))
        assert (losses.sce_loss(0.3, neg, lo).value
                <= losses.sce_loss(0.3, neg, hi).value + 1e-12)

    def test_sce_extreme_scores_stay_finite(self):
        v = losses.sce_loss(-700.0, np.array([700.0, -700.0]), 100.0)
        assert math.isfinite(v.value) and v.value > 1000

    def test_sce_values_batch_matches_scalar(self):
        rng = np.random.default_rng(5)
        negs = rng.normal(size=(40, 7)) * 3
        batch = losses.sce_values_batch(0.4, negs, 13.0)
        for i in range(negs.shape[0]):
            one = losses.sce_loss(0.4, negs[i], 13.0).value
            assert batch[i] == pytest.approx(one, rel=1e-13, abs=1e-13)


class TestLossEval:
    def test_binary_kinds_need_one_negative(self):
        with pytest.raises(LossConfigError):
            losses.loss_eval(parse_loss("bce"), S, 0, sampled_negatives=[1, 2])
        with pytest.raises(LossConfigError):
            losses.loss_eval(parse_loss("bpr"), S, 0, sampled_negatives=[])

    def test_sampled_kinds_need_ids(self):
        with pytest.raises(LossConfigError):
            losses.loss_eval(parse_loss("ssm:2"), S, 0)

    def test_full_kinds_ignore_sample(self):
        a = losses.loss_eval(parse_loss("ce"), S, 0)
        b = losses.loss_eval(parse_loss("ce"), S, 0, sampled_negatives=[1])
        assert a.value == b.value

    def test_nce_defaults_catalog_to_score_length(self):
        a = losses.loss_eval(parse_loss("nce:2"), S, 0, sampled_negatives=[1, 2])
        assert a.value == pytest.approx(4.149304086401859, abs=1e-14)


def _rows(rng, b, n):
    return rng.normal(size=(b, n)) * 2.0


class TestGraphParity:
    @pytest.mark.parametrize("text", ["ce", "ce-top:4", "ce-eta:0.7"])
    def test_full_graph_matches_reference(self, text):
        spec = parse_loss(text)
        rng = np.random.default_rng(9)
        raw = _rows(rng, 6, 11)
        targets = rng.integers(0, 11, size=6)
        graph_val = losses.full_loss_graph(spec, ad.Tensor(raw), targets).item()
        ref = np.mean([losses.loss_eval(spec, raw[i], int(targets[i])).value
                       for i in range(6)])
        assert graph_val == pytest.approx(ref, rel=1e-12)

    @pytest.mark.parametrize("text", ["bce", "bpr", "ssm:3", "sce:3:9", "nce:3"])
    def test_sampled_graph_matches_reference(self, text):
        spec = parse_loss(text)
        k = spec.negatives_per_example
        rng = np.random.default_rng(10)
        b, n = 5, 17
        raw = _rows(rng, b, n)
        targets = rng.integers(0, n, size=b)
        negs = rng.integers(0, n, size=(b, k))
        subset = np.concatenate([raw[np.arange(b), targets][:, None],
                                 raw[np.arange(b)[:, None], negs]], axis=1)
        kwargs = {}
        if spec.kind == "nce":
            kwargs = {"nce_offset": ad.Tensor(0.25), "catalog_size": n}
        graph_val = losses.sampled_loss_graph(spec, ad.Tensor(subset), **kwargs).item()
        ref = np.mean([
            losses.loss_eval(spec, raw[i], int(targets[i]),
                             sampled_negatives=negs[i],
                             nce_offset=0.25, catalog_size=n).value
            for i in range(b)])
        assert graph_val == pytest.approx(ref, rel=1e-12)

    def test_full_graph_rejects_sampled_kind(self):
        with pytest.raises(LossConfigError):
            losses.full_loss_graph(parse_loss("ssm:2"), ad.Tensor(np.zeros((2, 3))), [0, 1])

    def test_sampled_graph_rejects_full_kind(self):
        with pytest.raises(LossConfigError):
            losses.sampled_loss_graph(parse_loss("ce"), ad.Tensor(np.zeros((2, 3))))

    def test_sampled_graph_k_mismatch(self):
        spec = parse_loss("ssm:5")
        with pytest.raises(LossConfigError):
            losses.sampled_loss_graph(spec, ad.Tensor(np.zeros((2, 3))))

    def test_truncated_gradient_stops_at_cut(self):
        # items outside the retained set must get zero gradient
        spec = parse_loss("ce-top:2")
        raw = np.array([[3.0, 1.0, 2.0]])
        t = ad.Tensor(raw, requires_grad=True)
        with ad.Tape():
            out = losses.full_loss_graph(spec, t, [0])
            grads = ad.backward(out)
        g = grads.of(t)
        assert g[0, 1] == 0.0          # score 1.0 is cut away
        assert g[0, 0] != 0.0 and g[0, 2] != 0.0
