"""Interaction experts, modality masking, interaction losses, adaptive fusion.

Four initially identical MLP fusion experts map concatenated (image, text)
embeddings to a shared-dimension vector. Masking one modality and comparing
the resulting predictions drives each expert toward one interaction type:
image uniqueness, text uniqueness, synergy, or redundancy.
"""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigurationError
from .nn import MLP, ParamModule

EXPERT_NAMES = ("uni_i", "uni_t", "syn", "rdn")
MASK_STRATEGIES = ("random", "mean", "zero")


class ExpertBank(ParamModule):
    """Identically shaped fusion MLPs, one per interaction type.

    `passes` counts logical expert forward invocations (full or masked);
    complexity instrumentation reads and resets it.
    """

    def __init__(self, d_img, d_txt, hidden, out_dim, rng, dtype=np.float32,
                 names=EXPERT_NAMES):
        super().__init__()
        self.names = tuple(names)
        self.in_dim = d_img + d_txt
        init_state = rng.bit_generator.state
        for name in self.names:
            # experts start as identical fusion models and diverge only
            # through their losses
            rng.bit_generator.state = init_state
            self.add_child(name, MLP([self.in_dim, hidden, out_dim], rng, dtype))
        self.passes = 0

    def forward(self, name, e_img, e_txt):
        """Fused embedding from one expert; inputs are raw arrays or Tensors."""
        e_img, e_txt = ag.as_tensor(e_img), ag.as_tensor(e_txt)
        if e_img.shape[-1] + e_txt.shape[-1] != self.in_dim:
            raise ConfigurationError("expert input dims do not match configuration")
        self.passes += 1
        return self._children[name](ag.concat([e_img, e_txt], axis=-1))

    def forward_stacked(self, name, x, n_variants):
        """One MLP call over `n_variants` input variants stacked on axis 0.

        Counts as `n_variants` logical passes; numerically identical to that
        many separate forward() calls because the MLP acts row-wise.
        """
        if x.shape[-1] != self.in_dim:
            raise ConfigurationError("expert input dims do not match configuration")
        self.passes += n_variants
        return self._children[name](x)


def mask_modality(e, strategy, rng=None, valid_mask=None):
    """Replacement vectors simulating an absent modality.

    random: fresh standard-normal draws, rescaled per vector to the mean
    valid-position norm of `e`; mean: the per-dimension mean over valid
    positions, broadcast; zero: zeros. Returns a plain array (no gradient
    flows into the surrogate).
    """
    e = np.asarray(e)
    if strategy == "zero":
        return np.zeros_like(e)
    flat = e.reshape(-1, e.shape[-1])
    if valid_mask is not None:
        flat = flat[np.asarray(valid_mask).reshape(-1) > 0]
    if flat.size == 0:
        return np.zeros_like(e)
    if strategy == "mean":
        mean = flat.mean(axis=0)
        return np.broadcast_to(mean, e.shape).astype(e.dtype).copy()
    if strategy == "random":
        if rng is None:
            raise ConfigurationError("random masking requires an RNG")
        target = float(np.linalg.norm(flat, axis=-1).mean())
        r = rng.standard_normal(e.shape).astype(e.dtype)
        norms = np.linalg.norm(r, axis=-1, keepdims=True)
        return r * (target / np.maximum(norms, 1e-12))
    raise ConfigurationError(f"unknown mask strategy {strategy!r}")


# -- interaction losses ----------------------------------------------------


def uniqueness_loss(anchor, positive, negative, margin):
    """Cosine-distance triplet, hinged at `margin`, averaged over rows."""
    if margin <= 0:
        raise ConfigurationError("triplet margin must be positive")
    d_pos = 1.0 - ag.cosine_similarity(anchor, positive)
    d_neg = 1.0 - ag.cosine_similarity(anchor, negative)
    return ag.mean(ag.relu(margin + d_pos - d_neg))


def synergy_loss(y, y_img, y_txt):
    """Mean of the two anchor-to-perturbation cosines; minimizing it pushes
    the full prediction away from both unimodal ones."""
    half_sum = ag.mul(
        ag.add(ag.cosine_similarity(y, y_img), ag.cosine_similarity(y, y_txt)), 0.5
    )
    return ag.mean(half_sum)


def redundancy_loss(y, y_img, y_txt):
    """Complement of the synergy objective: rewards masking-invariance."""
    return 1.0 - synergy_loss(y, y_img, y_txt)


def expert_interaction_loss(name, y, y_img, y_txt, margin):
    if name == "uni_i":
        return uniqueness_loss(y, y_img, y_txt, margin)
    if name == "uni_t":
        return uniqueness_loss(y, y_txt, y_img, margin)
    if name == "syn":
        return synergy_loss(y, y_img, y_txt)
    if name == "rdn":
        return redundancy_loss(y, y_img, y_txt)
    raise ConfigurationError(f"no interaction loss for expert {name!r}")


def interaction_loss(losses, lambdas):
    """Weighted sum of the per-expert losses that are present."""
    total = Tensor(np.zeros(()))
    for name, value in losses.items():
        total = ag.add(total, ag.mul(value, float(lambdas[name])))
    return total


# -- adaptive fusion -------------------------------------------------------


class ReweightNet(ParamModule):
    """MLP scoring each interaction embedding's importance per position."""

    def __init__(self, dim, hidden, num_experts, rng, dtype=np.float32):
        super().__init__()
        self.num_experts = num_experts
        self.add_child("mlp", MLP([(num_experts + 1) * dim, hidden, num_experts], rng, dtype))

    def __call__(self, expert_embs, id_emb):
        return self._children["mlp"](ag.concat(list(expert_embs) + [id_emb], axis=-1))


def adaptive_fusion(expert_embs, id_emb, net=None, uniform=False):
    """Softmax weights over the expert embeddings, and their weighted sum.

    `expert_embs` is an ordered list of [..., D] Tensors. With `uniform`
    (the fusion-layer ablation), weights are fixed at 1/K.
    """
    k = len(expert_embs)
    stacked = ag.concat([ag.reshape(e, tuple(e.shape[:-1]) + (1, e.shape[-1]))
                         for e in expert_embs], axis=-2)
    if uniform:
        shape = tuple(expert_embs[0].shape[:-1]) + (k,)
        weights = Tensor(np.full(shape, 1.0 / k, dtype=expert_embs[0].dtype))
    else:
        if net is None:
            raise ConfigurationError("adaptive fusion requires a reweighting net")
        weights = ag.softmax(net(expert_embs, id_emb), axis=-1)
    fused = ag.sum_(ag.mul(stacked, ag.reshape(weights, tuple(weights.shape) + (1,))), axis=-2)
    return weights, fused
