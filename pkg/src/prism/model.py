"""The full model: backbone + interaction experts + adaptive fusion.

One training step runs, for every active expert, a full-input pass and two
masked passes through the shared encoder (pooled into a single stacked
encode call), computes the interaction losses on the resulting prediction
vectors, and runs the fused pass that feeds the recommendation loss.
"""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .backbone import REC_LOSSES, SequenceBackbone
from .errors import NumericError
from .experts import (
    ExpertBank,
    ReweightNet,
    adaptive_fusion,
    expert_interaction_loss,
    interaction_loss,
    mask_modality,
)
from .nn import ParamModule


class PrismModel(ParamModule):
    def __init__(self, num_items, d_img, d_txt, model_cfg, prism_cfg, max_len,
                 rng, dtype=np.float32):
        super().__init__()
        self.model_cfg = model_cfg
        self.prism_cfg = prism_cfg
        self.num_items = num_items
        self.backbone = self.add_child(
            "backbone",
            SequenceBackbone(
                num_items=num_items,
                dim=model_cfg.dim,
                max_len=max_len,
                rng=rng,
                blocks=model_cfg.blocks,
                heads=model_cfg.heads,
                dropout=model_cfg.dropout,
                kind=model_cfg.backbone,
                dtype=dtype,
            ),
        )
        self.rec_loss_fn = REC_LOSSES[model_cfg.rec_loss]
        if prism_cfg.enabled:
            active = prism_cfg.active_experts()
            self.experts = self.add_child(
                "experts",
                ExpertBank(d_img, d_txt, model_cfg.expert_hidden, model_cfg.dim,
                           rng, dtype, names=active),
            )
            self.reweight = self.add_child(
                "reweight",
                ReweightNet(model_cfg.dim, model_cfg.reweight_hidden, len(active),
                            rng, dtype),
            )
        else:
            self.experts = None
            self.reweight = None

    # -- shared pieces -------------------------------------------------------

    def _modalities(self, dataset, items):
        return dataset.image_embeddings[items], dataset.text_embeddings[items]

    def _expert_embeddings(self, e_img, e_txt):
        return {n: self.experts.forward(n, e_img, e_txt) for n in self.experts.names}

    def fuse(self, expert_embs, items, uniform=False):
        """Adaptive (or uniform, under the AFL ablation / warmup) combination."""
        id_emb = self.backbone.item_emb(items)
        return adaptive_fusion(
            [expert_embs[n] for n in self.experts.names],
            id_emb,
            net=self.reweight,
            uniform=uniform or self.prism_cfg.drop_afl,
        )

    # -- training ------------------------------------------------------------

    def training_losses(self, batch, dataset, mask_rng, dropout_rng=None,
                        uniform_fusion=False):
        """All loss terms for one batch, as graph-connected Tensors.

        Returns (losses, fusion_weights); `losses` maps rec / per-expert /
        exp / total to scalar Tensors.
        """
        mask = batch.mask
        losses = {}
        if self.experts is not None:
            e_img, e_txt = self._modalities(dataset, batch.items)
            cfg = self.prism_cfg
            supervised = [
                n for n in self.experts.names if cfg.lambdas.get(n, 0.0) > 0.0
            ]
            b = mask.shape[0]
            expert_embs = {}
            embs = []
            if supervised:
                # The surrogate replacing a masked modality is a property of
                # the batch; every expert routes the same three input
                # variants (full, text-masked, image-masked), so the variants
                # are built once and each expert runs one stacked pass.
                r_txt = mask_modality(e_txt, cfg.mask_strategy, mask_rng, mask)
                r_img = mask_modality(e_img, cfg.mask_strategy, mask_rng, mask)
                variants = Tensor(np.concatenate([
                    np.concatenate([e_img, e_txt], axis=-1),
                    np.concatenate([e_img, r_txt], axis=-1),
                    np.concatenate([r_img, e_txt], axis=-1),
                ], axis=0))
            for name in self.experts.names:
                if name in supervised:
                    out = self.experts.forward_stacked(name, variants, 3)
                    embs.append(out)
                    expert_embs[name] = out[:b]
                else:
                    expert_embs[name] = self.experts.forward(name, e_img, e_txt)
            weights, fused = self.fuse(expert_embs, batch.items,
                                       uniform=uniform_fusion)
            embs.append(fused)
            n_blocks = 3 * len(supervised) + 1
            tiled_mask = np.tile(mask, (n_blocks, 1))
            # every block shares the same (id + positional) part, so embed it
            # once and broadcast-add the per-block fused embeddings
            base = self.backbone.embed(batch.items, None, mask)  # [B, L, D]
            l, d = base.shape[1], base.shape[2]
            fused_blocks = ag.reshape(ag.concat(embs, axis=0), (n_blocks, b, l, d))
            masked_fused = ag.mul(fused_blocks, Tensor(mask[None, :, :, None]))
            stacked = ag.reshape(ag.add(masked_fused, base), (n_blocks * b, l, d))
            hidden = self.backbone.encode(stacked, tiled_mask, dropout_rng,
                                          training=dropout_rng is not None)
            h_fusion = hidden[len(supervised) * 3 * b :]
            expert_losses = {}
            if supervised:
                pooled = self._pool(hidden[: len(supervised) * 3 * b], tiled_mask[: len(supervised) * 3 * b])
                cand_scores = self._candidate_scores(pooled, batch, b)
                for i, name in enumerate(supervised):
                    y, y_img, y_txt = cand_scores[3 * i : 3 * i + 3]
                    expert_losses[name] = expert_interaction_loss(
                        name, y, y_img, y_txt, cfg.margin
                    )
            for name in self.experts.names:
                losses[name] = expert_losses.get(name, Tensor(np.zeros(())))
            losses["exp"] = interaction_loss(expert_losses, cfg.lambdas)
        else:
            weights = None
            x_fusion = self.backbone.embed(batch.items, None, mask)
            h_fusion = self.backbone.encode(x_fusion, mask, dropout_rng,
                                            training=dropout_rng is not None)
            losses["exp"] = Tensor(np.zeros(()))
        pos = self.backbone.score_targets(h_fusion, batch.pos_targets)
        neg = self.backbone.score_targets(h_fusion, batch.neg_targets)
        losses["rec"] = self.rec_loss_fn(pos, neg, mask)
        losses["total"] = ag.add(losses["rec"], losses["exp"])
        for name, value in losses.items():
            if not np.all(np.isfinite(value.data)):
                raise NumericError(f"loss term {name!r} is non-finite")
        return losses, weights

    def _pool(self, hidden, mask):
        """Mean hidden state over unmasked positions, per sequence."""
        m = Tensor(mask[:, :, None])
        counts = np.maximum(mask.sum(axis=1, keepdims=True), 1.0)
        return ag.mul(ag.sum_(ag.mul(hidden, m), axis=1), Tensor(1.0 / counts))

    def _candidate_scores(self, pooled, batch, b):
        """Prediction vectors: each pooled state scored against that
        sequence's positive and negative target items. Padding slots hit the
        all-zero embedding row and contribute nothing."""
        cands = np.concatenate([batch.pos_targets, batch.neg_targets], axis=1)
        cand_emb = self.backbone.item_emb(cands)  # [B, C, D]
        v = pooled.shape[0] // b
        # [V·B, D] -> [B, D, V], one batched matmul against every variant.
        h = ag.transpose(ag.reshape(pooled, (v, b, pooled.shape[1])), (1, 2, 0))
        scores = ag.matmul(cand_emb, h)  # [B, C, V]
        return [scores[:, :, i] for i in range(v)]

    # -- inference -------------------------------------------------------------

    def forward_fused(self, items, mask, dataset, return_weights=False):
        """Hidden states from the deployed path: experts + fusion + encoder."""
        if self.experts is not None:
            e_img, e_txt = self._modalities(dataset, items)
            expert_embs = self._expert_embeddings(e_img, e_txt)
            weights, fused = self.fuse(expert_embs, items)
        else:
            weights, fused = None, None
        x = self.backbone.embed(items, fused, mask)
        hidden = self.backbone.encode(x, mask)
        if return_weights:
            return hidden, weights
        return hidden

    def score_last_position(self, items, mask, dataset):
        """Catalog logits from each sequence's last unmasked position."""
        with ag.no_grad():
            hidden = self.forward_fused(items, mask, dataset)
            last = np.maximum(mask.sum(axis=1).astype(int) - 1, 0)
            rows = hidden.data[np.arange(items.shape[0]), last]
            return rows @ self.backbone.item_emb.table.data.T
