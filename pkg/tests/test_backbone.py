"""Unit tests for the sequence backbones and recommendation losses."""
import numpy as np
import pytest

from prism import autograd as ag
from prism.autograd import Tensor
from prism.backbone import SequenceBackbone, bce_loss, bpr_loss
from prism.errors import ConfigurationError

LN2 = float(np.log(2.0))


def make_backbone(kind="attention", num_items=9, dim=8, max_len=6, seed=0):
    return SequenceBackbone(num_items, dim, max_len,
                            np.random.default_rng(seed), blocks=2, heads=2,
                            dropout=0.0, kind=kind)


class TestEncoder:
    @pytest.mark.parametrize("kind", ["attention", "mean-pool"])
    def test_causality_future_item_does_not_change_past(self, kind):
        bb = make_backbone(kind)
        rng = np.random.default_rng(1)
        items = rng.integers(1, 10, size=(3, 5))
        mask = np.ones((3, 5), dtype=np.float32)
        h1 = bb.encode(bb.embed(items, None, mask), mask).data
        items2 = items.copy()
        items2[:, -1] = (items2[:, -1] % 9) + 1  # change only the last item
        h2 = bb.encode(bb.embed(items2, None, mask), mask).data
        np.testing.assert_array_equal(h1[:, :-1], h2[:, :-1])

    def test_padding_rows_do_not_influence_real_positions(self):
        bb = make_backbone()
        items = np.array([[3, 4, 0, 0]])
        mask = (items != 0).astype(np.float32)
        h1 = bb.encode(bb.embed(items, None, mask), mask).data
        items2 = np.array([[3, 4, 7, 8]])  # different garbage in padded slots
        h2 = bb.encode(bb.embed(items2, None, mask), mask).data
        np.testing.assert_allclose(h1[0, :2], h2[0, :2], atol=1e-6)

    def test_padding_embedding_row_is_zero(self):
        bb = make_backbone()
        np.testing.assert_array_equal(bb.item_emb.table.data[0], 0.0)

    def test_over_long_sequence_rejected(self):
        bb = make_backbone(max_len=4)
        items = np.ones((1, 5), dtype=np.int64)
        with pytest.raises(ConfigurationError):
            bb.embed(items, None, np.ones((1, 5), dtype=np.float32))

    def test_forward_deterministic(self):
        bb = make_backbone()
        items = np.array([[1, 2, 3]])
        mask = np.ones((1, 3), dtype=np.float32)
        a = bb.encode(bb.embed(items, None, mask), mask).data
        b = bb.encode(bb.embed(items, None, mask), mask).data
        np.testing.assert_array_equal(a, b)

    def test_freeze_padding_row_zeroes_its_gradient(self):
        bb = make_backbone()
        items = np.array([[1, 2, 0]])
        mask = (items != 0).astype(np.float32)
        h = bb.encode(bb.embed(items, None, mask), mask)
        loss = bce_loss(bb.score_targets(h, np.array([[2, 3, 0]])),
                        bb.score_targets(h, np.array([[4, 5, 0]])), mask)
        loss.backward()
        bb.freeze_padding_row()
        np.testing.assert_array_equal(bb.item_emb.table.grad[0], 0.0)


class TestScoring:
    def test_score_targets_is_dot_product(self):
        bb = make_backbone(dim=4)
        h = Tensor(np.ones((1, 2, 4), dtype=np.float32))
        targets = np.array([[3, 5]])
        expected = bb.item_emb.table.data[targets].sum(axis=-1)
        np.testing.assert_allclose(bb.score_targets(h, targets).data, expected,
                                   rtol=1e-6)

    def test_score_catalog_matches_per_item_scores(self):
        bb = make_backbone(dim=4)
        h = Tensor(np.random.default_rng(3).standard_normal((2, 4)).astype(np.float32))
        logits = bb.score_catalog(h).data
        assert logits.shape == (2, bb.item_emb.table.shape[0])
        np.testing.assert_allclose(
            logits, h.data @ bb.item_emb.table.data.T, rtol=1e-6)


class TestLosses:
    def test_bce_at_zero_logits(self):
        z = Tensor(np.zeros((1, 3), dtype=np.float64))
        mask = np.ones((1, 3))
        assert float(bce_loss(z, z, mask).data) == pytest.approx(2 * LN2, rel=1e-12)

    def test_bce_at_unit_logits(self):
        pos = Tensor(np.ones((1, 1)))
        neg = Tensor(-np.ones((1, 1)))
        mask = np.ones((1, 1))
        # -log sigmoid(1) - log sigmoid(1) = 2 * 0.31326...
        expected = 2 * float(np.log1p(np.exp(-1.0)))
        assert float(bce_loss(pos, neg, mask).data) == pytest.approx(expected, rel=1e-9)

    def test_bpr_at_equal_scores(self):
        s = Tensor(np.full((2, 2), 0.7))
        mask = np.ones((2, 2))
        assert float(bpr_loss(s, s, mask).data) == pytest.approx(LN2, rel=1e-12)

    def test_bpr_prefers_separated_scores(self):
        mask = np.ones((1, 1))
        good = bpr_loss(Tensor(np.array([[5.0]])), Tensor(np.array([[-5.0]])), mask)
        bad = bpr_loss(Tensor(np.array([[-5.0]])), Tensor(np.array([[5.0]])), mask)
        assert float(good.data) < LN2 < float(bad.data)

    @pytest.mark.parametrize("loss", [bce_loss, bpr_loss])
    def test_masked_positions_do_not_contribute(self, loss):
        rng = np.random.default_rng(4)
        pos = rng.standard_normal((2, 4))
        neg = rng.standard_normal((2, 4))
        mask = np.array([[1, 1, 0, 0], [1, 0, 0, 0]], dtype=np.float64)
        base = float(loss(Tensor(pos), Tensor(neg), mask).data)
        pos2, neg2 = pos.copy(), neg.copy()
        pos2[mask == 0] = 99.0
        neg2[mask == 0] = -99.0
        assert float(loss(Tensor(pos2), Tensor(neg2), mask).data) == pytest.approx(base)

    @pytest.mark.parametrize("loss", [bce_loss, bpr_loss])
    def test_extreme_logits_finite(self, loss):
        big = Tensor(np.array([[800.0]]))
        small = Tensor(np.array([[-800.0]]))
        mask = np.ones((1, 1))
        assert np.isfinite(float(loss(big, small, mask).data))
        assert np.isfinite(float(loss(small, big, mask).data))
