"""Host sequential recommender: ID/positional embeddings, a causal
self-attention encoder (plus a trivial mean-pool host behind the same
interface), dot-product scoring, and the BCE/BPR recommendation losses."""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigurationError
from .nn import Embedding, LayerNorm, Linear, ParamModule

NEG_INF = -1e9


class AttentionBlock(ParamModule):
    """Pre-layer-norm causal self-attention + position-wise feed-forward."""

    def __init__(self, dim, heads, rng, dtype=np.float32):
        super().__init__()
        if dim % heads != 0:
            raise ConfigurationError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        for name in ("wq", "wk", "wv", "wo"):
            self.add_child(name, Linear(dim, dim, rng, dtype))
        self.add_child("ln_attn", LayerNorm(dim, dtype))
        self.add_child("ln_ffn", LayerNorm(dim, dtype))
        self.add_child("ffn1", Linear(dim, dim, rng, dtype))
        self.add_child("ffn2", Linear(dim, dim, rng, dtype))

    def _split_heads(self, x, batch, length):
        x = ag.reshape(x, (batch, length, self.heads, self.head_dim))
        return ag.transpose(x, (0, 2, 1, 3))

    def __call__(self, x, attn_bias, dropout_p=0.0, rng=None, training=False):
        batch, length, _ = x.shape
        a = self._children["ln_attn"](x)
        q = self._split_heads(self._children["wq"](a), batch, length)
        k = self._split_heads(self._children["wk"](a), batch, length)
        v = self._split_heads(self._children["wv"](a), batch, length)
        scores = ag.matmul(q, ag.transpose(k, (0, 1, 3, 2)))
        scores = ag.mul(scores, 1.0 / np.sqrt(self.head_dim))
        scores = ag.add(scores, Tensor(attn_bias))
        attn = ag.softmax(scores, axis=-1)
        ctx = ag.matmul(attn, v)
        ctx = ag.reshape(ag.transpose(ctx, (0, 2, 1, 3)), (batch, length, self.dim))
        ctx = ag.dropout(self._children["wo"](ctx), dropout_p, rng, training)
        x = ag.add(x, ctx)
        f = self._children["ln_ffn"](x)
        f = self._children["ffn2"](ag.relu(self._children["ffn1"](f)))
        f = ag.dropout(f, dropout_p, rng, training)
        return ag.add(x, f)


class SequenceBackbone(ParamModule):
    """ID + positional embedding, sequence encoder, shared-embedding scoring.

    `kind` selects the encoder: "attention" (default) or "mean-pool", the
    latter being a causal average followed by one linear transform.
    """

    def __init__(self, num_items, dim, max_len, rng, blocks=2, heads=2,
                 dropout=0.2, kind="attention", dtype=np.float32):
        super().__init__()
        if kind not in ("attention", "mean-pool"):
            raise ConfigurationError(f"unknown backbone kind {kind!r}")
        self.dim = dim
        self.max_len = max_len
        self.dropout_p = dropout
        self.kind = kind
        self.item_emb = self.add_child(
            "item_emb", Embedding(num_items + 1, dim, rng, dtype, zero_row0=True)
        )
        self.pos_emb = self.add_child("pos_emb", Embedding(max_len, dim, rng, dtype))
        if kind == "attention":
            self.blocks = [
                self.add_child(f"block{i}", AttentionBlock(dim, heads, rng, dtype))
                for i in range(blocks)
            ]
            self.add_child("ln_out", LayerNorm(dim, dtype))
        else:
            self.add_child("pool_proj", Linear(dim, dim, rng, dtype))

    # -- embedding ---------------------------------------------------------

    def embed(self, items, fused=None, mask=None):
        """ID embedding + fused multimodal vector + positional embedding,
        zeroed at padding positions."""
        length = items.shape[1]
        if length > self.max_len:
            raise ConfigurationError(f"sequence length {length} exceeds max_len {self.max_len}")
        x = self.item_emb(items)
        if fused is not None:
            x = ag.add(x, fused)
        x = ag.add(x, self.pos_emb(np.arange(length)))
        if mask is None:
            mask = (items != 0).astype(x.dtype)
        return ag.mul(x, Tensor(mask[:, :, None]))

    # -- encoding ----------------------------------------------------------

    def encode(self, x, mask, rng=None, training=False):
        if self.kind == "attention":
            return self._encode_attention(x, mask, rng, training)
        return self._encode_mean_pool(x, mask)

    def _encode_attention(self, x, mask, rng, training):
        batch, length, _ = x.shape
        causal = np.triu(np.ones((length, length), dtype=bool), k=1)
        bias = np.where(causal, NEG_INF, 0.0).astype(x.dtype)
        key_pad = (mask[:, None, None, :] == 0.0)
        bias = bias[None, None, :, :] + np.where(key_pad, NEG_INF, 0.0).astype(x.dtype)
        p = self.dropout_p if training else 0.0
        for block in self.blocks:
            x = block(x, bias, p, rng, training)
        return self._children["ln_out"](x)

    def _encode_mean_pool(self, x, mask):
        length = x.shape[1]
        tri = np.tril(np.ones((length, length), dtype=x.dtype))
        weights = tri[None, :, :] * mask[:, None, :]
        counts = np.maximum(weights.sum(axis=-1, keepdims=True), 1.0)
        pooled = ag.matmul(Tensor(weights / counts), x)
        return self._children["pool_proj"](pooled)

    # -- scoring -----------------------------------------------------------

    def score_targets(self, hidden, item_ids):
        """Dot product of each position's hidden state with the given items'
        ID embedding rows."""
        emb = self.item_emb(item_ids)
        return ag.sum_(ag.mul(hidden, emb), axis=-1)

    def score_catalog(self, hidden):
        """Scores of every catalog row (including padding row 0)."""
        return ag.matmul(hidden, ag.transpose(self.item_emb.table))

    def freeze_padding_row(self):
        """Keep the padding embedding at exactly zero: call between backward
        and the optimizer step."""
        grad = self.item_emb.table.grad
        if grad is not None:
            grad[0] = 0.0


def _masked_mean(per_position, mask):
    total = float(mask.sum())
    if total == 0.0:
        return Tensor(np.zeros(()))
    summed = ag.sum_(ag.mul(per_position, Tensor(mask)))
    return ag.mul(summed, 1.0 / total)


def bce_loss(pos_logits, neg_logits, mask):
    """Mean over unmasked positions of -log s(pos) - log(1 - s(neg))."""
    per_pos = ag.add(
        ag.mul(ag.log_sigmoid(pos_logits), -1.0),
        ag.mul(ag.log_sigmoid(ag.mul(neg_logits, -1.0)), -1.0),
    )
    return _masked_mean(per_pos, mask)


def bpr_loss(pos_logits, neg_logits, mask):
    """Mean over unmasked positions of -log s(pos - neg)."""
    diff = ag.add(pos_logits, ag.mul(neg_logits, -1.0))
    return _masked_mean(ag.mul(ag.log_sigmoid(diff), -1.0), mask)


REC_LOSSES = {"bce": bce_loss, "bpr": bpr_loss}
