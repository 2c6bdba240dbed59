"""Synthetic datasets with provable interaction structure, plus a plug-in
mutual-information oracle that certifies them.

Each item carries a latent bit per modality, embedded as fixed Gaussian
codewords plus noise. The next-item class follows the current item's class
(a function of the latent bits that differs per scenario) and flips with
probability `noise`. A model therefore has to recover the scenario's
defining signal - one modality's bit, the shared bit, or the XOR of both -
to predict the next item's class.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .data import (
    InteractionDataset,
    _build_dataset,
    write_modality_embeddings,
)
from .errors import ConfigurationError

SCENARIOS = ("unique_img", "unique_txt", "redundant", "synergy_xor")


@dataclass
class PidScenario:
    variant: str
    num_users: int = 5000
    num_items: int = 200
    seq_len: int = 20
    noise: float = 0.05
    embed_dim: int = 16
    codeword_noise: float = 0.1
    corrupt_frac: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.variant not in SCENARIOS:
            raise ConfigurationError(f"unknown scenario {self.variant!r}")
        if not 0.0 <= self.noise < 0.5:
            raise ConfigurationError("noise must lie in [0, 0.5)")
        if not 0.0 <= self.corrupt_frac < 1.0:
            raise ConfigurationError("corrupt_frac must lie in [0, 1)")


@dataclass
class MIEstimate:
    i_t_x1: float  # bits
    i_t_x2: float
    i_t_joint: float
    samples: int


def _item_class(variant, b_img, b_txt):
    if variant == "unique_img":
        return b_img
    if variant == "unique_txt":
        return b_txt
    if variant == "redundant":
        return b_img
    return b_img ^ b_txt  # synergy_xor


def generate_pid_dataset(scenario):
    """Returns (InteractionDataset with modalities attached, ground truth).

    Ground truth maps raw item ids to their latent bits and class, plus the
    scenario metadata.
    """
    rng = np.random.default_rng(np.random.SeedSequence(scenario.seed))
    n = scenario.num_items
    b_img = rng.integers(0, 2, size=n)
    b_txt = b_img.copy() if scenario.variant == "redundant" else rng.integers(0, 2, size=n)
    classes = _item_class(scenario.variant, b_img, b_txt)
    # fixed codeword per (modality, bit value), noisy copy per item
    code_img = rng.standard_normal((2, scenario.embed_dim))
    code_txt = rng.standard_normal((2, scenario.embed_dim))
    img_vecs = code_img[b_img] + scenario.codeword_noise * rng.standard_normal((n, scenario.embed_dim))
    txt_vecs = code_txt[b_txt] + scenario.codeword_noise * rng.standard_normal((n, scenario.embed_dim))
    # a fraction of items carry unreliable modality content: both vectors are
    # replaced by loud noise while the latent bits (and hence the transition
    # process and its MI signature) stay intact
    n_corrupt = int(round(scenario.corrupt_frac * n))
    corrupt_ids = rng.choice(n, size=n_corrupt, replace=False) if n_corrupt else np.array([], dtype=np.int64)
    if n_corrupt:
        img_vecs[corrupt_ids] = 3.0 * rng.standard_normal((n_corrupt, scenario.embed_dim))
        txt_vecs[corrupt_ids] = 3.0 * rng.standard_normal((n_corrupt, scenario.embed_dim))

    class_members = [np.flatnonzero(classes == c) for c in (0, 1)]
    if any(len(m) == 0 for m in class_members):
        raise ConfigurationError("scenario produced an empty item class; use more items")
    raw_sequences = {}
    for user in range(1, scenario.num_users + 1):
        seq = np.empty(scenario.seq_len, dtype=np.int64)
        item = int(rng.integers(0, n))
        seq[0] = item
        for t in range(1, scenario.seq_len):
            cls = int(classes[item])
            if rng.random() < scenario.noise:
                cls = 1 - cls
            members = class_members[cls]
            item = int(members[rng.integers(0, len(members))])
            seq[t] = item
        raw_sequences[user] = [int(i) + 1 for i in seq]  # raw item ids are 1-based
    ds = _build_dataset(raw_sequences)
    img_table = {i + 1: img_vecs[i].astype(np.float32) for i in range(n)}
    txt_table = {i + 1: txt_vecs[i].astype(np.float32) for i in range(n)}
    ds.attach_modalities(img_table, txt_table)
    ground_truth = {
        "variant": scenario.variant,
        "noise": scenario.noise,
        "seed": scenario.seed,
        "bits": {str(i + 1): [int(b_img[i]), int(b_txt[i])] for i in range(n)},
        "classes": {str(i + 1): int(classes[i]) for i in range(n)},
        "corrupted": sorted(int(i) + 1 for i in corrupt_ids),
    }
    return ds, ground_truth


def write_scenario_files(scenario, out_dir):
    """Standard dataset files: interactions TSV, two embedding binaries, and
    the latent ground truth JSON."""
    ds, ground_truth = generate_pid_dataset(scenario)
    os.makedirs(out_dir, exist_ok=True)
    tsv = os.path.join(out_dir, "interactions.tsv")
    with open(tsv, "w", encoding="utf-8") as f:
        f.write("# user_id\titem_id\ttimestamp\n")
        for u in sorted(ds.sequences):
            for t, item in enumerate(ds.sequences[u]):
                f.write(f"{ds.user_ids[u]}\t{ds.item_ids[item]}\t{t}\n")
    img_table = {int(ds.item_ids[i]): ds.image_embeddings[i] for i in range(1, len(ds.item_ids))}
    txt_table = {int(ds.item_ids[i]): ds.text_embeddings[i] for i in range(1, len(ds.item_ids))}
    write_modality_embeddings(os.path.join(out_dir, "image_embeddings.prem"), img_table)
    write_modality_embeddings(os.path.join(out_dir, "text_embeddings.prem"), txt_table)
    with open(os.path.join(out_dir, "ground_truth.json"), "w", encoding="utf-8") as f:
        json.dump(ground_truth, f, indent=2, sort_keys=True)
    return ds, ground_truth


def transition_samples(ds, ground_truth):
    """(T, X1, X2) tuples over all consecutive pairs: sources are the current
    item's latent bits, the target is the next item's class."""
    bits = ground_truth["bits"]
    classes = ground_truth["classes"]
    t_out, x1_out, x2_out = [], [], []
    for seq in ds.sequences.values():
        for cur, nxt in zip(seq[:-1], seq[1:]):
            raw_cur, raw_nxt = str(ds.item_ids[cur]), str(ds.item_ids[nxt])
            x1_out.append(bits[raw_cur][0])
            x2_out.append(bits[raw_cur][1])
            t_out.append(classes[raw_nxt])
    return np.array(t_out), np.array(x1_out), np.array(x2_out)


def scenario_samples(scenario, n):
    """Draw (T, X1, X2) directly from the scenario's latent process."""
    rng = np.random.default_rng(np.random.SeedSequence((scenario.seed, 1)))
    x1 = rng.integers(0, 2, size=n)
    x2 = x1.copy() if scenario.variant == "redundant" else rng.integers(0, 2, size=n)
    cls = _item_class(scenario.variant, x1, x2)
    flips = rng.random(n) < scenario.noise
    return np.where(flips, 1 - cls, cls), x1, x2


def _entropy_bits(labels):
    _, counts = np.unique(labels, return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log2(p)).sum())


def _mi_bits(a, b):
    joint = a.astype(np.int64) * (b.max() + 1) + b
    return _entropy_bits(a) + _entropy_bits(b) - _entropy_bits(joint)


def discrete_mi(t, x1, x2):
    """Plug-in mutual information (bits) from empirical joint counts."""
    t, x1, x2 = (np.asarray(v) for v in (t, x1, x2))
    if t.size == 0:
        raise ConfigurationError("discrete_mi needs at least one sample")
    pair = x1.astype(np.int64) * (x2.max() + 1) + x2
    return MIEstimate(
        i_t_x1=_mi_bits(t, x1),
        i_t_x2=_mi_bits(t, x2),
        i_t_joint=_mi_bits(t, pair),
        samples=int(t.size),
    )


def classify_interaction(mi, tol=0.1):
    """Dominant interaction type from an MI signature."""
    if tol <= 0:
        raise ConfigurationError("tol must be positive")
    if mi.i_t_joint - mi.i_t_x1 - mi.i_t_x2 > tol:
        return "synergy"
    if mi.i_t_x1 > mi.i_t_x2 + tol and abs(mi.i_t_joint - mi.i_t_x1) <= tol:
        return "unique_img"
    if mi.i_t_x2 > mi.i_t_x1 + tol and abs(mi.i_t_joint - mi.i_t_x2) <= tol:
        return "unique_txt"
    if (abs(mi.i_t_x1 - mi.i_t_x2) <= tol
            and abs(mi.i_t_joint - mi.i_t_x1) <= tol
            and mi.i_t_joint > tol):
        return "redundant"
    return "mixed"


SCENARIO_EXPERT = {
    "unique_img": "uni_i",
    "unique_txt": "uni_t",
    "redundant": "rdn",
    "synergy_xor": "syn",
}


def mean_fusion_weights(model, split, dataset, batch_size=256):
    """FusionTrace weights averaged over every test-context position."""
    from . import autograd as ag
    from .data import PAD_ID

    users = sorted(split.test)
    max_len = model.backbone.max_len
    totals = np.zeros(len(model.experts.names))
    count = 0
    with ag.no_grad():
        for start in range(0, len(users), batch_size):
            chunk = users[start : start + batch_size]
            contexts = [split.test_context(u)[-max_len:] for u in chunk]
            width = max(len(c) for c in contexts)
            items = np.full((len(chunk), width), PAD_ID, dtype=np.int64)
            mask = np.zeros((len(chunk), width), dtype=np.float32)
            for row, ctx in enumerate(contexts):
                items[row, : len(ctx)] = ctx
                mask[row, : len(ctx)] = 1.0
            _, weights = model.forward_fused(items, mask, dataset, return_weights=True)
            totals += (weights.data * mask[:, :, None]).sum(axis=(0, 1))
            count += int(mask.sum())
    means = totals / max(count, 1)
    return {name: float(means[i]) for i, name in enumerate(model.experts.names)}


def expert_specialization_report(trained):
    """`trained` maps scenario variant -> (model, split, dataset). Reports
    mean fusion weights and the dominant expert per scenario."""
    report = {}
    for variant, (model, split, dataset) in trained.items():
        weights = mean_fusion_weights(model, split, dataset)
        argmax = max(weights, key=weights.get)
        report[variant] = {
            "mean_weights": weights,
            "argmax_expert": argmax,
            "expected_expert": SCENARIO_EXPERT[variant],
        }
    return report


def make_memorizable_dataset(num_users=100, num_items=50, seq_len=12,
                             embed_dim=16, seed=0):
    """Deterministic permutation walk: every next item is a fixed function of
    the current one, so the catalog is memorizable."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    perm = rng.permutation(num_items)
    raw_sequences = {}
    for user in range(1, num_users + 1):
        item = int(rng.integers(0, num_items))
        seq = [item]
        for _ in range(seq_len - 1):
            item = int(perm[item])
            seq.append(item)
        raw_sequences[user] = [i + 1 for i in seq]
    ds = _build_dataset(raw_sequences)
    img = {i + 1: rng.standard_normal(embed_dim).astype(np.float32) for i in range(num_items)}
    txt = {i + 1: rng.standard_normal(embed_dim).astype(np.float32) for i in range(num_items)}
    ds.attach_modalities(img, txt)
    return ds
