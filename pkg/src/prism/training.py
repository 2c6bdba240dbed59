"""Joint optimization loop, early stopping, multi-seed orchestration."""
from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .config import RunConfig
from .data import PAD_ID, make_batches
from .evaluate import evaluate, peak_rss_bytes
from .model import PrismModel
from .nn import Adam

LOSS_KEYS = ("rec", "uni_i", "uni_t", "syn", "rdn", "exp", "total")


@dataclass
class LossReport:
    epoch: int
    rec: float
    uni_i: float
    uni_t: float
    syn: float
    rdn: float
    exp: float
    total: float
    seconds: float
    peak_rss: int

    def losses(self):
        return {k: getattr(self, k) for k in LOSS_KEYS}


def seed_streams(seed, epochs):
    """Expand one seed into independent init / batching / masking / dropout
    streams. Batching gets one child seed per epoch."""
    root = np.random.SeedSequence(seed)
    init_ss, batch_ss, mask_ss, dropout_ss = root.spawn(4)
    batch_seeds = [int(child.generate_state(1)[0]) for child in batch_ss.spawn(epochs)]
    return (
        np.random.default_rng(init_ss),
        batch_seeds,
        np.random.default_rng(mask_ss),
        np.random.default_rng(dropout_ss),
    )


def train_epoch(model, batches, optimizer, dataset, mask_rng, dropout_rng,
                staged_updates=False, epoch=0, uniform_fusion=False):
    """One pass over the batches; returns per-term mean losses."""
    sums = {k: 0.0 for k in LOSS_KEYS}
    t0 = time.monotonic()
    for batch in batches:
        losses, _ = model.training_losses(batch, dataset, mask_rng, dropout_rng,
                                          uniform_fusion=uniform_fusion)
        model.zero_grad()
        if staged_updates and model.experts is not None:
            # the recommendation loss updates the backbone and the fusion
            # net but never the experts, so each expert is shaped only by
            # its interaction loss and cannot be repurposed as a generic
            # feature extractor
            losses["rec"].backward()
            for p in model.experts.parameters().values():
                if p.grad is not None:
                    p.grad[...] = 0.0
            losses["exp"].backward()
        else:
            losses["total"].backward()
        model.backbone.freeze_padding_row()
        optimizer.step()
        for k in LOSS_KEYS:
            sums[k] += float(losses[k].data) if k in losses else 0.0
    n = max(len(batches), 1)
    return LossReport(
        epoch=epoch,
        **{k: sums[k] / n for k in LOSS_KEYS},
        seconds=time.monotonic() - t0,
        peak_rss=peak_rss_bytes(),
    )


def total_loss(l_rec, l_exp):
    return l_rec + l_exp


def train_one_seed(cfg: RunConfig, dataset, split, seed, dtype=np.float32):
    """Full training run for one seed: early stopping on validation N@10,
    returns (model restored to its best epoch, run record)."""
    init_rng, batch_seeds, mask_rng, dropout_rng = seed_streams(seed, cfg.train.epochs)
    model = PrismModel(
        num_items=dataset.num_items,
        d_img=dataset.image_embeddings.shape[1],
        d_txt=dataset.text_embeddings.shape[1],
        model_cfg=cfg.model,
        prism_cfg=cfg.prism,
        max_len=cfg.data.max_len,
        rng=init_rng,
        dtype=dtype,
    )
    optimizer = Adam(model, lr=cfg.train.learning_rate)
    ks = sorted(set(cfg.eval.ks) | {10})
    best = {"metric": -1.0, "epoch": -1, "params": None}
    curves = []
    for epoch in range(cfg.train.epochs):
        batches = make_batches(split, cfg.data.max_len, cfg.train.batch_size,
                               batch_seeds[epoch])
        report = train_epoch(model, batches, optimizer, dataset, mask_rng,
                             dropout_rng, cfg.prism.staged_updates, epoch,
                             uniform_fusion=epoch < cfg.prism.afl_warmup_epochs)
        curves.append(report)
        valid_metrics = evaluate(model, split, dataset, ks=ks, which="valid",
                                 exclude_seen=cfg.eval.exclude_seen)
        score = valid_metrics["ndcg@10"]
        if score > best["metric"]:
            best = {
                "metric": score,
                "epoch": epoch,
                "params": {k: p.data.copy() for k, p in model.parameters().items()},
            }
        elif epoch - best["epoch"] >= cfg.train.patience:
            break
    if best["params"] is not None:
        for name, p in model.parameters().items():
            p.data = best["params"][name]
    test_metrics = evaluate(model, split, dataset, ks=ks, which="test",
                            exclude_seen=cfg.eval.exclude_seen)
    record = {
        "seed": seed,
        "best_epoch": best["epoch"],
        "best_valid_ndcg10": best["metric"],
        "test_metrics": test_metrics,
        "loss_curves": [
            {"epoch": r.epoch, **{k: r.losses()[k] for k in LOSS_KEYS}} for r in curves
        ],
    }
    timing = {
        "seconds_per_epoch": [r.seconds for r in curves],
        "peak_rss": max(r.peak_rss for r in curves),
    }
    return model, record, timing


def run_experiment(cfg: RunConfig, dataset, split, out_dir=None):
    """Train one model per seed; report per-seed and mean/std test metrics.

    The returned report is a deterministic function of (config, data, seeds);
    wall-clock timing is returned separately so reports stay byte-stable.
    """
    records, timings = [], []
    for seed in cfg.train.seeds:
        model, record, timing = train_one_seed(cfg, dataset, split, seed)
        records.append(record)
        timings.append(timing)
        if out_dir is not None:
            save_model(model, os.path.join(out_dir, f"checkpoint_seed{seed}.prck"),
                       cfg, dataset)
            trace_path = os.path.join(out_dir, f"fusion_trace_seed{seed}.csv")
            export_fusion_trace(model, split, dataset, trace_path)
    metric_names = sorted(records[0]["test_metrics"])
    mean_metrics = {
        m: float(np.mean([r["test_metrics"][m] for r in records])) for m in metric_names
    }
    std_metrics = {
        m: float(np.std([r["test_metrics"][m] for r in records])) for m in metric_names
    }
    report = {
        "config": cfg.to_dict(),
        "seeds": list(cfg.train.seeds),
        "per_seed": records,
        "mean_metrics": mean_metrics,
        "std_metrics": std_metrics,
    }
    timing_block = {
        "per_seed": timings,
        "peak_rss": max(t["peak_rss"] for t in timings),
    }
    return report, timing_block


def save_model(model, path, cfg, dataset):
    """PRCK parameter dump plus a JSON sidecar describing the architecture."""
    checkpoint.save_params(path, model.parameters())
    meta = {
        "num_items": model.num_items,
        "d_img": int(dataset.image_embeddings.shape[1]),
        "d_txt": int(dataset.text_embeddings.shape[1]),
        "max_len": cfg.data.max_len,
        "model": cfg.to_dict()["model"],
        "prism": cfg.to_dict()["prism"],
    }
    with open(path + ".json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)


def load_model(path, dtype=np.float32):
    from .config import ModelConfig, PrismConfig  # local to avoid cycle noise

    with open(path + ".json", "r", encoding="utf-8") as f:
        meta = json.load(f)
    rng = np.random.default_rng(0)
    model = PrismModel(
        num_items=meta["num_items"],
        d_img=meta["d_img"],
        d_txt=meta["d_txt"],
        model_cfg=ModelConfig(**meta["model"]),
        prism_cfg=PrismConfig(**meta["prism"]),
        max_len=meta["max_len"],
        rng=rng,
        dtype=dtype,
    )
    checkpoint.restore_module(model, checkpoint.load_params(path))
    return model


FUSION_TRACE_HEADER = "user_id,position,item_id,w_uni_i,w_uni_t,w_syn,w_rdn"


def export_fusion_trace(model, split, dataset, path, batch_size=256):
    """Per-position interaction weights over each user's test context."""
    from . import autograd as ag

    lines = [FUSION_TRACE_HEADER]
    if model.experts is None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
        return
    users = sorted(split.test)
    max_len = model.backbone.max_len
    name_order = ("uni_i", "uni_t", "syn", "rdn")
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
            w = weights.data
            active = model.experts.names
            for row, u in enumerate(chunk):
                for t in range(len(contexts[row])):
                    full = {n: 0.0 for n in name_order}
                    for j, n in enumerate(active):
                        full[n] = float(w[row, t, j])
                    lines.append(
                        f"{dataset.user_ids[u]},{t},{dataset.item_ids[items[row, t]]},"
                        + ",".join(f"{full[n]:.6f}" for n in name_order)
                    )
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
