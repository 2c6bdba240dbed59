"""Finite-difference verification of every differentiable layer type.

All builders construct float64 modules with deterministic loss closures.
Random draws are retried when a forward pass lands too close to a ReLU or
hinge kink, where central differences are meaningless.
"""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor, record_kink_margins
from .backbone import AttentionBlock, SequenceBackbone, bce_loss, bpr_loss
from .config import ModelConfig, PrismConfig
from .data import Batch
from .experts import ExpertBank, ReweightNet, adaptive_fusion, uniqueness_loss
from .model import PrismModel
from .nn import MLP, Embedding, LayerNorm, Linear, grad_check

F64 = np.float64


def _sq(t):
    return ag.sum_(ag.mul(t, t))


def build_linear(seed):
    rng = np.random.default_rng(seed)
    layer = Linear(3, 2, rng, dtype=F64)
    x = Tensor(rng.standard_normal((4, 3)))
    return layer, lambda: _sq(layer(x))


def build_mlp(seed):
    rng = np.random.default_rng(seed)
    mlp = MLP([3, 5, 2], rng, dtype=F64)
    x = Tensor(rng.standard_normal((4, 3)))
    return mlp, lambda: _sq(mlp(x))


def build_layer_norm(seed):
    rng = np.random.default_rng(seed)
    ln = LayerNorm(6, dtype=F64)
    ln.gain.data = rng.standard_normal(6)
    ln.bias.data = rng.standard_normal(6)
    x = Tensor(rng.standard_normal((3, 6)))
    return ln, lambda: _sq(ln(x))


def build_embedding(seed):
    rng = np.random.default_rng(seed)
    emb = Embedding(6, 4, rng, dtype=F64, scale=0.5)
    idx = rng.integers(0, 6, size=(2, 3))
    return emb, lambda: _sq(emb(idx))


def build_attention_block(seed):
    rng = np.random.default_rng(seed)
    block = AttentionBlock(4, 2, rng, dtype=F64)
    x = Tensor(rng.standard_normal((2, 3, 4)))
    bias = np.where(np.triu(np.ones((3, 3), dtype=bool), k=1), -1e9, 0.0)
    return block, lambda: _sq(block(x, bias[None, None]))


def build_backbone(seed, kind="attention"):
    rng = np.random.default_rng(seed)
    bb = SequenceBackbone(5, 4, 6, rng, blocks=1, heads=2, dropout=0.0,
                          kind=kind, dtype=F64)
    items = rng.integers(1, 6, size=(2, 3))
    mask = np.ones((2, 3))
    pos = rng.integers(1, 6, size=(2, 3))
    neg = rng.integers(1, 6, size=(2, 3))

    def loss():
        h = bb.encode(bb.embed(items, None, mask), mask)
        return bce_loss(bb.score_targets(h, pos), bb.score_targets(h, neg), mask)

    return bb, loss


def build_mean_pool_backbone(seed):
    return build_backbone(seed, kind="mean-pool")


def build_expert_triplet(seed):
    rng = np.random.default_rng(seed)
    bank = ExpertBank(3, 3, 4, 4, rng, dtype=F64)
    img = rng.standard_normal((5, 3))
    txt = rng.standard_normal((5, 3))
    r = rng.standard_normal((5, 3))

    def loss():
        y = bank.forward("uni_i", img, txt)
        y_img = bank.forward("uni_i", img, r)
        y_txt = bank.forward("uni_i", r, txt)
        return uniqueness_loss(y, y_img, y_txt, margin=1.0)

    return bank, loss


def build_reweight_fusion(seed):
    rng = np.random.default_rng(seed)
    net = ReweightNet(4, 5, 4, rng, dtype=F64)
    embs = [Tensor(rng.standard_normal((3, 4))) for _ in range(4)]
    id_emb = Tensor(rng.standard_normal((3, 4)))

    def loss():
        _, fused = adaptive_fusion(embs, id_emb, net=net)
        return _sq(fused)

    return net, loss


def build_composite(seed, rec_loss="bce"):
    rng = np.random.default_rng(seed)
    model = PrismModel(
        num_items=5,
        d_img=3,
        d_txt=3,
        model_cfg=ModelConfig(dim=4, blocks=1, heads=2, dropout=0.0,
                              expert_hidden=3, reweight_hidden=3,
                              rec_loss=rec_loss),
        prism_cfg=PrismConfig(mask_strategy="zero",
                              lambdas={"uni_i": 0.3, "uni_t": 0.2,
                                       "syn": 0.25, "rdn": 0.25}),
        max_len=4,
        rng=rng,
        dtype=F64,
    )

    class _DS:
        image_embeddings = rng.standard_normal((6, 3))
        text_embeddings = rng.standard_normal((6, 3))

    batch = Batch(
        user_ids=np.arange(2),
        items=rng.integers(1, 6, size=(2, 3)),
        positions=np.arange(3),
        mask=np.ones((2, 3), dtype=np.float64),
        pos_targets=rng.integers(1, 6, size=(2, 3)),
        neg_targets=rng.integers(1, 6, size=(2, 3)),
    )

    def loss():
        losses, _ = model.training_losses(batch, _DS(), np.random.default_rng(7))
        return losses["total"]

    return model, loss


def build_composite_bpr(seed):
    return build_composite(seed, rec_loss="bpr")


CHECKS = {
    "linear": build_linear,
    "mlp": build_mlp,
    "layer_norm": build_layer_norm,
    "embedding": build_embedding,
    "attention_block": build_attention_block,
    "backbone_attention_bce": build_backbone,
    "backbone_mean_pool": build_mean_pool_backbone,
    "expert_triplet": build_expert_triplet,
    "reweight_fusion": build_reweight_fusion,
    "composite_loss": build_composite,
    "composite_loss_bpr": build_composite_bpr,
}


def run_check(builder, seed, eps=1e-6, min_margin=1e-3, max_tries=10):
    """grad_check at a seed, resampling away from hinge kinks."""
    for attempt in range(max_tries):
        module, loss_fn = builder(seed + 7919 * attempt)
        margins = []
        with record_kink_margins(margins):
            loss_fn()
        if margins and min(margins) < min_margin:
            continue
        return grad_check(module, loss_fn, eps=eps)
    raise RuntimeError(f"no kink-free configuration found for seed {seed}")


def run_all(seeds=range(3), eps=1e-6):
    """Max relative error per layer type over the given seeds."""
    return {
        name: max(run_check(builder, seed, eps=eps) for seed in seeds)
        for name, builder in CHECKS.items()
    }
