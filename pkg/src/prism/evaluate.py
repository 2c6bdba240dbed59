"""Leave-one-out ranking evaluation and complexity instrumentation."""
from __future__ import annotations

import resource
import time
from dataclasses import dataclass

import numpy as np

from .data import PAD_ID
from .errors import EvaluationError


@dataclass
class RankResult:
    user_id: int
    truth: int
    rank: int  # 1-based


def rank_items(scores, truth):
    """1-based rank of `truth` in a per-item score map; ties broken by
    ascending item id."""
    if truth not in scores:
        raise EvaluationError(f"ground-truth item {truth} missing from scores")
    s = scores[truth]
    rank = 1
    for item, val in scores.items():
        if val > s or (val == s and item < truth):
            rank += 1
    return rank


def recall_at_k(rank, k):
    return 1.0 if rank <= k else 0.0


def ndcg_at_k(rank, k):
    """Single-ground-truth form: 1/log2(rank+1) on a hit, else 0."""
    return 1.0 / np.log2(rank + 1.0) if rank <= k else 0.0


def _rank_rows(score_matrix, truths):
    """Vectorized deterministic ranking: 1 + strictly-greater count + count
    of equal scores at a smaller item id."""
    rows = np.arange(score_matrix.shape[0])
    s_truth = score_matrix[rows, truths]
    greater = (score_matrix > s_truth[:, None]).sum(axis=1)
    tied_before = (
        (score_matrix == s_truth[:, None])
        & (np.arange(score_matrix.shape[1])[None, :] < truths[:, None])
    ).sum(axis=1)
    return 1 + greater + tied_before


def evaluate(model, split, dataset, ks=(10, 20), which="test", exclude_seen=False,
             batch_size=256):
    """Mean R@K / N@K over all users with a held-out target, ranking the
    ground truth against the full catalog."""
    users = sorted(split.test if which == "test" else split.valid)
    max_len = model.backbone.max_len
    per_metric = {("recall", k): [] for k in ks}
    per_metric.update({("ndcg", k): [] for k in ks})
    for start in range(0, len(users), batch_size):
        chunk = users[start : start + batch_size]
        contexts = [
            (split.test_context(u) if which == "test" else split.valid_context(u))[-max_len:]
            for u in chunk
        ]
        width = max(len(c) for c in contexts)
        items = np.full((len(chunk), width), PAD_ID, dtype=np.int64)
        mask = np.zeros((len(chunk), width), dtype=np.float32)
        for row, ctx in enumerate(contexts):
            items[row, : len(ctx)] = ctx
            mask[row, : len(ctx)] = 1.0
        scores = model.score_last_position(items, mask, dataset)
        scores[:, PAD_ID] = -np.inf
        truths = np.array(
            [(split.test if which == "test" else split.valid)[u] for u in chunk]
        )
        if exclude_seen:
            for row, ctx in enumerate(contexts):
                seen = [i for i in split.train[chunk[row]] if i != truths[row]]
                scores[row, seen] = -np.inf
        ranks = _rank_rows(scores, truths)
        for k in ks:
            per_metric[("recall", k)].extend(recall_at_k(r, k) for r in ranks)
            per_metric[("ndcg", k)].extend(ndcg_at_k(r, k) for r in ranks)
    return {
        f"{name}@{k}": float(np.mean(vals)) if vals else 0.0
        for (name, k), vals in per_metric.items()
    }


def metrics_csv(rows):
    """`rows`: list of (metric, K, mean, std, n_seeds)."""
    lines = ["metric,K,mean,std,n_seeds"]
    for metric, k, mean, std, n in rows:
        lines.append(f"{metric},{k},{mean:.6f},{std:.6f},{n}")
    return "\n".join(lines) + "\n"


@dataclass
class ComplexityReport:
    seconds_per_epoch_on: float
    seconds_per_epoch_off: float
    overhead_ratio: float
    expert_passes_per_step: int
    peak_rss_bytes: int

    def to_dict(self):
        return {
            "seconds_per_epoch_on": self.seconds_per_epoch_on,
            "seconds_per_epoch_off": self.seconds_per_epoch_off,
            "overhead_ratio": self.overhead_ratio,
            "expert_passes_per_step": self.expert_passes_per_step,
            "peak_rss_bytes": self.peak_rss_bytes,
        }


def peak_rss_bytes():
    usage = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return int(usage * 1024)  # linux reports KiB


def measure_complexity(run_epoch_on, run_epoch_off, expert_passes_per_step,
                       epochs=3):
    """Median per-epoch wall time with and without the interaction module.

    Both callables run one full training epoch; each configuration gets one
    warm-up epoch before `epochs` timed ones.
    """
    timings = {}
    for label, fn in (("on", run_epoch_on), ("off", run_epoch_off)):
        fn()  # warm-up
        laps = []
        for _ in range(epochs):
            t0 = time.monotonic()
            fn()
            laps.append(time.monotonic() - t0)
        timings[label] = float(np.median(laps))
    return ComplexityReport(
        seconds_per_epoch_on=timings["on"],
        seconds_per_epoch_off=timings["off"],
        overhead_ratio=timings["on"] / timings["off"],
        expert_passes_per_step=expert_passes_per_step,
        peak_rss_bytes=peak_rss_bytes(),
    )
