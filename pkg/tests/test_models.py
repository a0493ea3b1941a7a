"""Encoders, scoring, and checkpoint round-trips."""
import numpy as np
import pytest

from ranklab import autodiff as ad
from ranklab import models
from ranklab.models import CheckpointError


def params_for(item_count=9, dim=4, kind="mean_pool", seed=0, **kw):
    return models.init_params(item_count, dim, kind, seed, **kw)


class TestInit:
    def test_deterministic(self):
        a = params_for(kind="gru", seed=4)
        b = params_for(kind="gru", seed=4)
        for (_, ta), (_, tb) in zip(a.named_parameters(), b.named_parameters()):
            np.testing.assert_array_equal(ta.data, tb.data)

    def test_normal_scale(self):
        p = models.init_params(2000, 50, "mean_pool", 1)
        std = p.item_embeddings.data.std()
        assert 0.018 < std < 0.022

    def test_xavier_bounds(self):
        p = models.init_params(100, 60, "mean_pool", 1, init="xavier")
        limit = np.sqrt(6.0 / (100 + 60))
        assert np.abs(p.item_embeddings.data).max() <= limit

    def test_named_parameter_order(self):
        p = params_for(kind="gru", with_nce_offset=True)
        names = [n for n, _ in p.named_parameters()]
        assert names[0] == "item_embeddings"
        assert names[1:10] == list(models._GRU_FIELDS)
        assert names[-1] == "nce_offset"

    def test_rejects_unknown(self):
        with pytest.raises(ValueError):
            models.init_params(5, 4, "transformer", 0)
        with pytest.raises(ValueError):
            models.init_params(5, 4, "gru", 0, init="orthogonal")

    def test_all_finite_flags_nan(self):
        p = params_for()
        assert p.all_finite()
        p.item_embeddings.data[0, 0] = np.nan
        assert not p.all_finite()


class TestEncoders:
    @pytest.mark.parametrize("kind", models.ENCODER_KINDS)
    def test_batch_rows_match_single(self, kind):
        p = params_for(kind=kind, seed=2)
        histories = [[1, 2, 3], [4], [5, 6, 7, 8, 0], [2, 2]]
        batch = models.encode_batch(p, histories).data
        for i, h in enumerate(histories):
            single = models.encode(p, h).data
            np.testing.assert_allclose(batch[i], single, rtol=0, atol=1e-12)

    def test_mean_pool_is_arithmetic_mean(self):
        p = params_for(seed=3)
        e = p.item_embeddings.data
        out = models.encode(p, [2, 5, 7]).data
        np.testing.assert_allclose(out, (e[2] + e[5] + e[7]) / 3.0, rtol=1e-14)

    def test_mean_pool_single_item(self):
        p = params_for(seed=3)
        out = models.encode(p, [4]).data
        np.testing.assert_allclose(out, p.item_embeddings.data[4], rtol=0, atol=0)

    def test_gru_zero_weights_give_zero_state(self):
        p = params_for(kind="gru", seed=1)
        for name in models._GRU_FIELDS:
            p.gru[name].data[:] = 0.0
        out = models.encode_batch(p, [[1, 2, 3], [4]]).data
        # z = sigmoid(0) = 0.5 each step, candidate = tanh(0) = 0, so the
        # state stays at zero regardless of the inputs
        np.testing.assert_array_equal(out, np.zeros_like(out))

    def test_padding_neutral(self):
        # the same history must encode identically alone and next to a
        # longer neighbor that forces padding
        p = params_for(kind="gru", seed=5)
        alone = models.encode_batch(p, [[3, 1]]).data[0]
        padded = models.encode_batch(p, [[3, 1], [2, 4, 6, 8, 1]]).data[0]
        np.testing.assert_allclose(padded, alone, rtol=0, atol=1e-12)

    def test_empty_history_rejected(self):
        p = params_for()
        with pytest.raises(ValueError):
            models.encode_batch(p, [[1], []])
        with pytest.raises(ValueError):
            models.encode_batch(p, [])


class TestScoring:
    def test_subset_matches_full(self):
        p = params_for(item_count=11, dim=5, seed=6)
        h = models.encode(p, [1, 2])
        full = models.score_all(p, h).data
        sub = models.score_subset(p, h, np.arange(11)).data
        np.testing.assert_allclose(sub, full, rtol=0, atol=1e-12)

    def test_subset_duplicates(self):
        p = params_for(seed=6)
        h = models.encode(p, [1])
        s = models.score_subset(p, h, np.array([3, 3]))
        assert s.data[0] == s.data[1]

    def test_batch_scoring_matches_loops(self):
        p = params_for(item_count=13, dim=4, seed=7)
        hidden = models.encode_batch(p, [[1, 2], [3], [4, 5, 6]])
        full = models.score_all_batch(p, hidden).data
        ids = np.array([[0, 5, 5], [1, 2, 3], [12, 0, 7]])
        sub = models.score_subset_batch(p, hidden, ids).data
        for i in range(3):
            np.testing.assert_allclose(full[i], p.item_embeddings.data @ hidden.data[i],
                                       rtol=0, atol=1e-12)
            np.testing.assert_allclose(sub[i], full[i][ids[i]], rtol=0, atol=1e-12)

    def test_score_all_wants_vector(self):
        p = params_for()
        with pytest.raises(ad.ShapeError):
            models.score_all(p, ad.Tensor(np.zeros((2, 4))))

    def test_subset_gradient_is_sparse(self):
        p = params_for(item_count=50, dim=3, seed=8)
        hidden = models.encode_batch(p, [[1], [2]])
        ids = np.array([[5, 6], [7, 8]])
        with ad.Tape():
            s = models.score_subset_batch(p, hidden, ids)
            total = ad.sum_all(s)
            grads = ad.backward(total)
        chunks = grads.sparse_rows(p.item_embeddings)
        assert chunks is not None
        touched = {int(i) for ids_out, _ in chunks for i in np.ravel(ids_out)}
        # only the scored ids and the two history items get gradient rows
        assert touched <= {1, 2, 5, 6, 7, 8}


class TestCheckpoint:
    @pytest.mark.parametrize("kind", models.ENCODER_KINDS)
    def test_roundtrip_bitwise(self, tmp_path, kind):
        p = params_for(kind=kind, with_nce_offset=True, seed=9)
        prefix = str(tmp_path / "model")
        models.save_checkpoint(p, prefix, seed=9, config={"loss": "ce"})
        back, header = models.load_checkpoint(prefix)
        assert header["encoder"] == kind
        assert header["seed"] == 9
        for (na, ta), (nb, tb) in zip(p.named_parameters(), back.named_parameters()):
            assert na == nb
            np.testing.assert_array_equal(ta.data, tb.data)

    def test_truncated_blob_rejected(self, tmp_path):
        p = params_for()
        prefix = str(tmp_path / "model")
        models.save_checkpoint(p, prefix, seed=0)
        blob = open(prefix + ".bin", "rb").read()
        with open(prefix + ".bin", "wb") as fh:
            fh.write(blob[:-8])
        with pytest.raises(CheckpointError):
            models.load_checkpoint(prefix)

    def test_foreign_format_rejected(self, tmp_path):
        p = params_for()
        prefix = str(tmp_path / "model")
        models.save_checkpoint(p, prefix, seed=0)
        import json
        header = json.load(open(prefix + ".json"))
        header["format"] = "other"
        json.dump(header, open(prefix + ".json", "w"))
        with pytest.raises(CheckpointError):
            models.load_checkpoint(prefix)

    def test_config_hash_stable(self):
        a = models.config_hash({"loss": "ce", "dim": 64})
        b = models.config_hash({"dim": 64, "loss": "ce"})
        assert a == b
        assert len(a) == 16
        assert a != models.config_hash({"dim": 64, "loss": "bce"})
