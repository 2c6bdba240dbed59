"""Ablation-direction probe: trains full / w/o-synergy / w/o-AFL models on a
PID scenario and prints test NDCG@10 per seed. Used to size the ablation
experiment so the ordering is reliable within its time budget."""
import argparse
import json
import os
import sys
import tempfile
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from prism.cli import load_dataset_dir
from prism.config import config_from_dict
from prism.data import leave_one_out_split, make_batches
from prism.evaluate import evaluate
from prism.model import PrismModel
from prism.nn import Adam
from prism.synthetic import PidScenario, write_scenario_files
from prism.training import seed_streams, train_epoch


def train(cfg, ds, split, seed, epochs, seq_len, batch, lr, warmup):
    init_rng, bseeds, mask_rng, drop_rng = seed_streams(seed, epochs)
    model = PrismModel(ds.num_items, 16, 16, cfg.model, cfg.prism,
                       seq_len, init_rng)
    opt = Adam(model, lr=lr)
    for ep in range(epochs):
        train_epoch(model, make_batches(split, seq_len, batch, bseeds[ep]),
                    opt, ds, mask_rng, drop_rng,
                    staged_updates=cfg.prism.staged_updates, epoch=ep,
                    uniform_fusion=ep < warmup)
    return model


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--users", type=int, default=2000)
    ap.add_argument("--items", type=int, default=2000)
    ap.add_argument("--seq-len", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=14)
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--warmup", type=int, default=5)
    ap.add_argument("--margin", type=float, default=2.0)
    ap.add_argument("--noise", type=float, default=0.05)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--blocks", type=int, default=2)
    ap.add_argument("--lambdas", type=json.loads,
                    default={"uni_i": 1.0, "uni_t": 1.0,
                             "syn": 0.05, "rdn": 1.0})
    args = ap.parse_args()

    tmp = tempfile.mkdtemp()
    write_scenario_files(
        PidScenario(variant="synergy_xor", num_users=args.users,
                    num_items=args.items, seq_len=args.seq_len,
                    noise=args.noise, seed=0), tmp)
    ds = load_dataset_dir(tmp)
    split = leave_one_out_split(ds)
    wins_syn = wins_afl = 0
    for seed in args.seeds:
        t0 = time.time()
        scores = {}
        for tag, prism in (("full", {}), ("wo_syn", {"drop_syn": True}),
                           ("wo_afl", {"drop_afl": True})):
            cfg = config_from_dict({
                "data": {"interactions": os.path.join(tmp, "interactions.tsv"),
                         "image_embeddings": os.path.join(tmp, "image_embeddings.prem"),
                         "text_embeddings": os.path.join(tmp, "text_embeddings.prem"),
                         "max_len": args.seq_len},
                "model": {"dim": args.dim, "blocks": args.blocks, "heads": 2,
                          "dropout": 0.0, "expert_hidden": args.dim,
                          "reweight_hidden": args.dim},
                "prism": {"staged_updates": False, "margin": args.margin,
                          "afl_warmup_epochs": args.warmup,
                          "lambdas": args.lambdas, **prism},
                "train": {"batch_size": args.batch, "epochs": args.epochs,
                          "learning_rate": args.lr, "seeds": [seed]}})
            model = train(cfg, ds, split, seed, args.epochs, args.seq_len,
                          args.batch, args.lr, args.warmup)
            scores[tag] = evaluate(model, split, ds, ks=[10],
                                   which="test")["ndcg@10"]
        wins_syn += scores["wo_syn"] < scores["full"]
        wins_afl += scores["wo_afl"] < scores["full"]
        print(f"seed={seed} " +
              " ".join(f"{t}={scores[t]:.4f}" for t in scores) +
              f" [{time.time() - t0:.0f}s]", flush=True)
    print(f"wo_syn<full: {wins_syn}/{len(args.seeds)}  "
          f"wo_afl<full: {wins_afl}/{len(args.seeds)}")


if __name__ == "__main__":
    main()
