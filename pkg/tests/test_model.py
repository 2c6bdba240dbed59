"""Unit tests for the assembled model's training and inference paths."""
import numpy as np
import pytest

from prism.config import ModelConfig, PrismConfig
from prism.data import Batch
from prism.errors import NumericError
from prism.model import PrismModel


class FakeDataset:
    def __init__(self, num_items=8, d=5, seed=0):
        rng = np.random.default_rng(seed)
        self.image_embeddings = rng.standard_normal((num_items + 1, d)).astype(np.float32)
        self.text_embeddings = rng.standard_normal((num_items + 1, d)).astype(np.float32)
        self.image_embeddings[0] = 0.0
        self.text_embeddings[0] = 0.0


def make_model(prism_cfg=None, seed=0, num_items=8, backbone="attention"):
    return PrismModel(
        num_items=num_items,
        d_img=5,
        d_txt=5,
        model_cfg=ModelConfig(backbone=backbone, dim=8, blocks=1, heads=2,
                              dropout=0.0, expert_hidden=6, reweight_hidden=6),
        prism_cfg=prism_cfg or PrismConfig(),
        max_len=6,
        rng=np.random.default_rng(seed),
    )


def make_batch(seed=0, b=3, l=4, num_items=8):
    rng = np.random.default_rng(seed)
    items = rng.integers(1, num_items + 1, size=(b, l))
    items[0, -1] = 0  # one padded slot
    mask = (items != 0).astype(np.float32)
    pos = rng.integers(1, num_items + 1, size=(b, l)) * (mask > 0)
    neg = rng.integers(1, num_items + 1, size=(b, l)) * (mask > 0)
    return Batch(user_ids=np.arange(b), items=items,
                 positions=np.arange(l), mask=mask,
                 pos_targets=pos, neg_targets=neg)


class TestTrainingLosses:
    def test_all_terms_present_and_finite(self):
        model = make_model()
        losses, weights = model.training_losses(
            make_batch(), FakeDataset(), np.random.default_rng(1))
        for key in ("rec", "uni_i", "uni_t", "syn", "rdn", "exp", "total"):
            assert np.isfinite(float(losses[key].data)), key
        assert weights is not None

    def test_total_is_rec_plus_exp(self):
        model = make_model()
        losses, _ = model.training_losses(
            make_batch(), FakeDataset(), np.random.default_rng(1))
        total = float(losses["total"].data)
        parts = float(losses["rec"].data) + float(losses["exp"].data)
        assert abs(total - parts) / max(abs(total), 1.0) < 1e-6

    def test_exp_is_lambda_weighted_sum(self):
        cfg = PrismConfig(lambdas={"uni_i": 0.3, "uni_t": 0.1,
                                   "syn": 0.25, "rdn": 0.5})
        model = make_model(cfg)
        losses, _ = model.training_losses(
            make_batch(), FakeDataset(), np.random.default_rng(1))
        expected = sum(cfg.lambdas[n] * float(losses[n].data)
                       for n in cfg.lambdas)
        assert float(losses["exp"].data) == pytest.approx(expected, rel=1e-6)

    def test_expert_pass_count_is_twelve(self):
        model = make_model()
        model.experts.passes = 0
        model.training_losses(make_batch(), FakeDataset(),
                              np.random.default_rng(1))
        assert model.experts.passes == 12

    def test_zero_lambda_expert_reports_zero_and_saves_passes(self):
        cfg = PrismConfig(lambdas={"uni_i": 0.2, "uni_t": 0.0,
                                   "syn": 0.2, "rdn": 0.5})
        model = make_model(cfg)
        model.experts.passes = 0
        losses, _ = model.training_losses(make_batch(), FakeDataset(),
                                          np.random.default_rng(1))
        assert float(losses["uni_t"].data) == 0.0
        # 3 supervised experts x 3 passes + 1 full pass for the fused path
        assert model.experts.passes == 10

    def test_prism_disabled_path(self):
        model = make_model(PrismConfig(enabled=False))
        losses, weights = model.training_losses(
            make_batch(), FakeDataset(), np.random.default_rng(1))
        assert weights is None
        assert float(losses["exp"].data) == 0.0
        assert model.experts is None

    def test_dropped_expert_changes_weight_width(self):
        cfg = PrismConfig(drop_uni_t=True)
        model = make_model(cfg)
        _, weights = model.training_losses(make_batch(), FakeDataset(),
                                           np.random.default_rng(1))
        assert weights.shape[-1] == 3

    def test_drop_afl_gives_uniform_weights(self):
        model = make_model(PrismConfig(drop_afl=True))
        _, weights = model.training_losses(make_batch(), FakeDataset(),
                                           np.random.default_rng(1))
        np.testing.assert_allclose(weights.data, 0.25)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_loss_raises(self):
        model = make_model()
        model.backbone.item_emb.table.data[2] = np.inf
        with pytest.raises(NumericError):
            model.training_losses(make_batch(), FakeDataset(),
                                  np.random.default_rng(1))

    @pytest.mark.parametrize("backbone", ["attention", "mean-pool"])
    def test_both_backbones_run(self, backbone):
        model = make_model(backbone=backbone)
        losses, _ = model.training_losses(make_batch(), FakeDataset(),
                                          np.random.default_rng(1))
        assert np.isfinite(float(losses["total"].data))

    def test_gradient_reaches_every_parameter_group(self):
        model = make_model()
        losses, _ = model.training_losses(make_batch(), FakeDataset(),
                                          np.random.default_rng(1))
        losses["total"].backward()
        grads = {k: p.grad for k, p in model.parameters().items()}
        for prefix in ("backbone.item_emb", "backbone.pos_emb",
                       "experts.uni_i", "experts.syn", "reweight"):
            assert any(k.startswith(prefix) and g is not None
                       and np.any(g != 0) for k, g in grads.items()), prefix


class TestInference:
    def test_score_last_position_shape_and_pad_handling(self):
        model = make_model()
        ds = FakeDataset()
        items = np.array([[1, 2, 0], [3, 4, 5]])
        mask = (items != 0).astype(np.float32)
        scores = model.score_last_position(items, mask, ds)
        assert scores.shape == (2, 9)  # num_items + padding row

    def test_last_position_respects_mask(self):
        model = make_model()
        ds = FakeDataset()
        a = model.score_last_position(np.array([[1, 2, 0]]),
                                      np.array([[1.0, 1.0, 0.0]]), ds)
        b = model.score_last_position(np.array([[1, 2]]),
                                      np.array([[1.0, 1.0]]), ds)
        np.testing.assert_allclose(a, b, atol=1e-5)

    def test_forward_fused_weights_channelwise(self):
        model = make_model()
        ds = FakeDataset()
        items = np.array([[1, 2, 3]])
        mask = np.ones((1, 3), dtype=np.float32)
        hidden, weights = model.forward_fused(items, mask, ds,
                                              return_weights=True)
        assert weights.shape == (1, 3, 4)
        assert hidden.shape == (1, 3, 8)
