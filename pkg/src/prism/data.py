"""Interaction logs, modality embeddings, core filtering, splits, batching."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    DatasetExhaustedError,
    ModalityCoverageError,
    ParseError,
)

PAD_ID = 0

PREM_MAGIC = b"PREM"
PREM_VERSION = 1


@dataclass
class ItemRecord:
    item_id: int
    image_embedding: np.ndarray | None = None
    text_embedding: np.ndarray | None = None


@dataclass
class InteractionDataset:
    """Dense-indexed interaction data. Item index 0 is reserved for padding."""

    sequences: dict  # user index -> list of item indices, chronological
    user_ids: list  # user index -> raw id
    item_ids: list  # item index -> raw id; [0] is None (padding)
    image_embeddings: np.ndarray | None = None  # [num_items+1, D_img], row 0 zero
    text_embeddings: np.ndarray | None = None

    @property
    def num_users(self):
        return len(self.user_ids)

    @property
    def num_items(self):
        return len(self.item_ids) - 1

    @property
    def num_interactions(self):
        return sum(len(s) for s in self.sequences.values())

    def item_record(self, idx):
        return ItemRecord(
            item_id=self.item_ids[idx],
            image_embedding=None if self.image_embeddings is None else self.image_embeddings[idx],
            text_embedding=None if self.text_embeddings is None else self.text_embeddings[idx],
        )

    def attach_modalities(self, image_table, text_table):
        """Align raw-id keyed embedding tables with dense item indices."""
        self.image_embeddings = _align_table(self.item_ids, image_table)
        self.text_embeddings = _align_table(self.item_ids, text_table)


def _align_table(item_ids, table):
    missing = []
    dim = len(next(iter(table.values())))
    out = np.zeros((len(item_ids), dim), dtype=np.float32)
    for idx, raw in enumerate(item_ids):
        if idx == PAD_ID:
            continue
        key = int(raw)
        if key not in table:
            missing.append(key)
            continue
        out[idx] = table[key]
    if missing:
        raise ModalityCoverageError(missing)
    return out


def load_interactions(path):
    """Parse a `user<TAB>item<TAB>timestamp` TSV into an InteractionDataset.

    Rows are grouped by user and sorted by ascending timestamp; ties keep
    file order. Lines starting with '#' are ignored.
    """
    events = {}  # raw user -> list of (timestamp, file order, raw item)
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"expected 3 tab-separated fields, got {len(parts)}", lineno)
            user, item, ts = parts
            try:
                ts_val = float(ts)
            except ValueError:
                raise ParseError(f"bad timestamp {ts!r}", lineno) from None
            events.setdefault(user, []).append((ts_val, lineno, item))
    return _build_dataset(
        {u: [item for _, _, item in sorted(rows)] for u, rows in events.items()}
    )


def _build_dataset(raw_sequences):
    """Remap raw ids to dense indices (items from 1; 0 is padding)."""
    user_ids = []
    item_ids = [None]
    item_index = {}
    sequences = {}
    for raw_user in raw_sequences:
        seq = []
        for raw_item in raw_sequences[raw_user]:
            if raw_item not in item_index:
                item_index[raw_item] = len(item_ids)
                item_ids.append(raw_item)
            seq.append(item_index[raw_item])
        sequences[len(user_ids)] = seq
        user_ids.append(raw_user)
    return InteractionDataset(sequences=sequences, user_ids=user_ids, item_ids=item_ids)


def five_core_filter(ds, min_count=5):
    """Iteratively drop users and items with fewer than `min_count`
    interactions until both minima hold simultaneously."""
    sequences = {u: list(s) for u, s in ds.sequences.items()}
    while True:
        item_counts = {}
        for seq in sequences.values():
            for it in seq:
                item_counts[it] = item_counts.get(it, 0) + 1
        bad_items = {it for it, c in item_counts.items() if c < min_count}
        changed = False
        if bad_items:
            for u in list(sequences):
                kept = [it for it in sequences[u] if it not in bad_items]
                if len(kept) != len(sequences[u]):
                    sequences[u] = kept
                    changed = True
        short_users = [u for u, seq in sequences.items() if len(seq) < min_count]
        for u in short_users:
            del sequences[u]
            changed = True
        if not changed:
            break
    if not sequences:
        raise DatasetExhaustedError(f"no users or items survive {min_count}-core filtering")
    raw_sequences = {
        ds.user_ids[u]: [ds.item_ids[it] for it in sequences[u]] for u in sorted(sequences)
    }
    out = _build_dataset(raw_sequences)
    return out


@dataclass
class SplitView:
    """Leave-one-out split: last item is the test target, second-to-last the
    validation target, the rest the training prefix."""

    train: dict  # user -> list of item indices
    valid: dict  # user -> item index
    test: dict  # user -> item index
    excluded: set  # users with fewer than 3 interactions
    num_items: int

    def valid_context(self, u):
        return self.train[u]

    def test_context(self, u):
        return self.train[u] + [self.valid[u]]


def leave_one_out_split(ds):
    train, valid, test, excluded = {}, {}, {}, set()
    for u, seq in ds.sequences.items():
        if len(seq) < 3:
            excluded.add(u)
            train[u] = list(seq)
            continue
        train[u] = seq[:-2]
        valid[u] = seq[-2]
        test[u] = seq[-1]
    return SplitView(train=train, valid=valid, test=test, excluded=excluded,
                     num_items=ds.num_items)


def split_manifest(split, ds):
    """JSON-friendly audit view of the split, keyed by raw user id."""
    out = {}
    for u, prefix in split.train.items():
        entry = {"train": [ds.item_ids[i] for i in prefix]}
        if u in split.valid:
            entry["valid"] = ds.item_ids[split.valid[u]]
            entry["test"] = ds.item_ids[split.test[u]]
        out[str(ds.user_ids[u])] = entry
    return out


@dataclass
class Batch:
    user_ids: np.ndarray  # [B]
    items: np.ndarray  # [B, L] item indices, PAD_ID on padding
    positions: np.ndarray  # [L]
    mask: np.ndarray  # [B, L] float, 1 where a target exists
    pos_targets: np.ndarray  # [B, L]
    neg_targets: np.ndarray  # [B, L]


def make_batches(split, max_len, batch_size, seed, num_items=None):
    """Deterministic training batches: a seeded permutation of users, each
    sequence truncated to its most recent `max_len` items, one uniform
    rejection-sampled negative per supervised position."""
    if batch_size < 1:
        raise ConfigurationError("batch_size must be >= 1")
    if max_len < 2:
        raise ConfigurationError("max_len must be >= 2")
    if num_items is None:
        num_items = split.num_items
    rng = np.random.default_rng(seed)
    users = [u for u, seq in sorted(split.train.items()) if len(seq) >= 2]
    order = rng.permutation(len(users))
    batches = []
    for start in range(0, len(users), batch_size):
        chunk = [users[i] for i in order[start : start + batch_size]]
        seqs = [split.train[u][-max_len:] for u in chunk]
        width = max(len(s) for s in seqs) - 1
        items = np.full((len(chunk), width), PAD_ID, dtype=np.int64)
        pos = np.full((len(chunk), width), PAD_ID, dtype=np.int64)
        neg = np.full((len(chunk), width), PAD_ID, dtype=np.int64)
        mask = np.zeros((len(chunk), width), dtype=np.float32)
        for row, seq in enumerate(seqs):
            n = len(seq) - 1
            items[row, :n] = seq[:-1]
            pos[row, :n] = seq[1:]
            mask[row, :n] = 1.0
            for t in range(n):
                while True:
                    cand = int(rng.integers(1, num_items + 1))
                    if cand != pos[row, t]:
                        neg[row, t] = cand
                        break
        batches.append(
            Batch(
                user_ids=np.array(chunk, dtype=np.int64),
                items=items,
                positions=np.arange(width, dtype=np.int64),
                mask=mask,
                pos_targets=pos,
                neg_targets=neg,
            )
        )
    return batches


def write_modality_embeddings(path, table):
    """`table` maps integer item id -> 1-D float vector; all same dim."""
    ids = sorted(table)
    dim = len(table[ids[0]]) if ids else 0
    with open(path, "wb") as f:
        f.write(PREM_MAGIC)
        f.write(struct.pack("<III", PREM_VERSION, len(ids), dim))
        for item_id in ids:
            vec = np.ascontiguousarray(table[item_id], dtype="<f4")
            if vec.shape != (dim,):
                raise ConfigurationError(f"embedding for item {item_id} has dim {vec.shape}")
            f.write(struct.pack("<Q", item_id))
            f.write(vec.tobytes())


def load_modality_embeddings(path, expected_dim=None):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != PREM_MAGIC:
        raise ConfigurationError(f"bad embedding magic in {path}")
    version, count, dim = struct.unpack_from("<III", blob, 4)
    if version != PREM_VERSION:
        raise ConfigurationError(f"unsupported embedding format version {version}")
    if expected_dim is not None and dim != expected_dim:
        raise ConfigurationError(f"embedding dim {dim} != expected {expected_dim}")
    table = {}
    offset = 16
    record = 8 + 4 * dim
    if len(blob) - offset != count * record:
        raise ConfigurationError(f"embedding file {path} has wrong length")
    for _ in range(count):
        (item_id,) = struct.unpack_from("<Q", blob, offset)
        vec = np.frombuffer(blob, dtype="<f4", count=dim, offset=offset + 8)
        table[item_id] = vec.copy()
        offset += record
    return table
