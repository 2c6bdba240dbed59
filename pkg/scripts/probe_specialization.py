"""Quick specialization probe: trains on a PID scenario and prints the mean
fusion weights per seed. Used to tune the scenario/training configuration
behind the specialization experiments."""
import argparse
import json
import os
import sys
import tempfile
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from prism.cli import load_dataset_dir
from prism.config import config_from_dict
from prism.data import leave_one_out_split, make_batches
from prism.model import PrismModel
from prism.nn import Adam
from prism.synthetic import PidScenario, mean_fusion_weights, write_scenario_files
from prism.training import seed_streams, train_epoch


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("variant")
    ap.add_argument("--users", type=int, default=2000)
    ap.add_argument("--items", type=int, default=2000)
    ap.add_argument("--seq-len", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=12)
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--blocks", type=int, default=2)
    ap.add_argument("--dropout", type=float, default=0.2)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--lambdas", type=json.loads, default=None)
    ap.add_argument("--joint", action="store_true", help="disable staged updates")
    ap.add_argument("--warmup", type=int, default=0)
    ap.add_argument("--margin", type=float, default=1.0)
    ap.add_argument("--noise", type=float, default=0.05)
    args = ap.parse_args()

    tmp = tempfile.mkdtemp()
    write_scenario_files(
        PidScenario(variant=args.variant, num_users=args.users,
                    num_items=args.items, seq_len=args.seq_len,
                    noise=args.noise, seed=0), tmp)
    ds = load_dataset_dir(tmp)
    split = leave_one_out_split(ds)
    prism_cfg = {"staged_updates": not args.joint,
                 "afl_warmup_epochs": args.warmup,
                 "margin": args.margin}
    if args.lambdas:
        prism_cfg["lambdas"] = args.lambdas
    hits = 0
    for seed in args.seeds:
        t0 = time.time()
        cfg = config_from_dict({
            "data": {"interactions": os.path.join(tmp, "interactions.tsv"),
                     "image_embeddings": os.path.join(tmp, "image_embeddings.prem"),
                     "text_embeddings": os.path.join(tmp, "text_embeddings.prem"),
                     "max_len": args.seq_len},
            "model": {"dim": args.dim, "blocks": args.blocks, "heads": 2,
                      "dropout": args.dropout, "expert_hidden": args.dim,
                      "reweight_hidden": args.dim},
            "prism": prism_cfg,
            "train": {"batch_size": args.batch, "epochs": args.epochs,
                      "learning_rate": args.lr, "seeds": [seed]}})
        init_rng, bseeds, mask_rng, drop_rng = seed_streams(seed, args.epochs)
        model = PrismModel(ds.num_items, 16, 16, cfg.model, cfg.prism,
                           args.seq_len, init_rng)
        opt = Adam(model, lr=args.lr)
        for ep in range(args.epochs):
            batches = make_batches(split, args.seq_len, args.batch, bseeds[ep])
            rep = train_epoch(model, batches, opt, ds, mask_rng, drop_rng,
                              staged_updates=cfg.prism.staged_updates, epoch=ep,
                              uniform_fusion=ep < cfg.prism.afl_warmup_epochs)
        w = mean_fusion_weights(model, split, ds)
        argmax = max(w, key=w.get)
        expected = {"unique_img": "uni_i", "unique_txt": "uni_t",
                    "synergy_xor": "syn", "redundant": "rdn"}[args.variant]
        hits += argmax == expected
        print(f"{args.variant} seed={seed} rec={rep.rec:.4f} "
              f"w={{{', '.join(f'{k}: {v:.3f}' for k, v in w.items())}}} "
              f"argmax={argmax} {'OK' if argmax == expected else 'MISS'} "
              f"[{time.time() - t0:.0f}s]", flush=True)
    print(f"{args.variant}: {hits}/{len(args.seeds)} correct")


if __name__ == "__main__":
    main()
