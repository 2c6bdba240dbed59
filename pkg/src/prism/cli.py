"""Command-line entry point: train, eval, synth, gradcheck, bench, weights.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .data import (
    five_core_filter,
    leave_one_out_split,
    load_interactions,
    load_modality_embeddings,
)
from .errors import ConfigurationError, PrismError
from .evaluate import evaluate, measure_complexity, metrics_csv
from .gradchecks import CHECKS, run_check
from .synthetic import (
    SCENARIOS,
    PidScenario,
    classify_interaction,
    discrete_mi,
    transition_samples,
    write_scenario_files,
)
from .training import (
    export_fusion_trace,
    load_model,
    make_batches,
    run_experiment,
    seed_streams,
    train_epoch,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def load_dataset(data_cfg):
    ds = load_interactions(data_cfg.interactions)
    if data_cfg.five_core:
        ds = five_core_filter(ds)
    img = load_modality_embeddings(data_cfg.image_embeddings)
    txt = load_modality_embeddings(data_cfg.text_embeddings)
    ds.attach_modalities(img, txt)
    return ds


def load_dataset_dir(path):
    """Directory convention: interactions.tsv + image/text_embeddings.prem."""
    from .config import DataConfig

    return load_dataset(DataConfig(
        interactions=os.path.join(path, "interactions.tsv"),
        image_embeddings=os.path.join(path, "image_embeddings.prem"),
        text_embeddings=os.path.join(path, "text_embeddings.prem"),
    ))


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def cmd_train(args):
    cfg = load_config(args.config)
    if args.seed:
        cfg.train.seeds = list(args.seed)
    os.makedirs(args.out, exist_ok=True)
    dataset = load_dataset(cfg.data)
    split = leave_one_out_split(dataset)
    report, timing = run_experiment(cfg, dataset, split, out_dir=args.out)
    _write_json(os.path.join(args.out, "report.json"), report)
    _write_json(os.path.join(args.out, "timing.json"), timing)
    manifest = {
        "tool_version": __version__,
        "config": cfg.to_dict(),
        "seeds": list(cfg.train.seeds),
        "input_digests": {
            name: _sha256(path)
            for name, path in (
                ("interactions", cfg.data.interactions),
                ("image_embeddings", cfg.data.image_embeddings),
                ("text_embeddings", cfg.data.text_embeddings),
            )
        },
        "outputs": sorted(
            f for f in os.listdir(args.out) if f != "run_manifest.json"
        ),
    }
    _write_json(os.path.join(args.out, "run_manifest.json"), manifest)
    print(json.dumps(report["mean_metrics"], sort_keys=True))
    return EXIT_OK


def cmd_eval(args):
    model = load_model(args.checkpoint)
    dataset = load_dataset_dir(args.data)
    if dataset.num_items != model.num_items:
        raise ConfigurationError(
            f"checkpoint expects {model.num_items} items, dataset has {dataset.num_items}"
        )
    split = leave_one_out_split(dataset)
    ks = args.k or [10, 20]
    metrics = evaluate(model, split, dataset, ks=ks, exclude_seen=args.exclude_seen)
    rows = []
    for k in ks:
        rows.append(("recall", k, metrics[f"recall@{k}"], 0.0, 1))
    for k in ks:
        rows.append(("ndcg", k, metrics[f"ndcg@{k}"], 0.0, 1))
    csv = metrics_csv(rows)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(csv)
    print(csv, end="")
    return EXIT_OK


def cmd_synth(args):
    scenario = PidScenario(
        variant=args.scenario,
        num_users=args.users,
        num_items=args.items,
        seq_len=args.seq_len,
        noise=args.noise,
        seed=args.seed,
    )
    ds, ground_truth = write_scenario_files(scenario, args.out)
    mi = discrete_mi(*transition_samples(ds, ground_truth))
    print(
        f"MI signature (bits): I(T;X_img)={mi.i_t_x1:.4f} "
        f"I(T;X_txt)={mi.i_t_x2:.4f} I(T;X_img,X_txt)={mi.i_t_joint:.4f} "
        f"-> {classify_interaction(mi)}"
    )
    return EXIT_OK


def cmd_gradcheck(args):
    failed = False
    for name, builder in CHECKS.items():
        worst = max(run_check(builder, seed) for seed in range(args.seeds))
        ok = worst < 1e-5
        failed |= not ok
        print(f"{name}: max_rel_err={worst:.3e} {'PASS' if ok else 'FAIL'}")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_bench(args):
    import copy

    cfg = load_config(args.config)
    dataset = load_dataset(cfg.data)
    split = leave_one_out_split(dataset)
    from .nn import Adam
    from .training import train_one_seed  # noqa: F401  (shared config plumbing)
    from .model import PrismModel

    def make_runner(enabled):
        run_cfg = copy.deepcopy(cfg)
        run_cfg.prism.enabled = enabled
        init_rng, batch_seeds, mask_rng, dropout_rng = seed_streams(
            cfg.train.seeds[0], cfg.train.epochs + 16
        )
        model = PrismModel(
            num_items=dataset.num_items,
            d_img=dataset.image_embeddings.shape[1],
            d_txt=dataset.text_embeddings.shape[1],
            model_cfg=run_cfg.model,
            prism_cfg=run_cfg.prism,
            max_len=run_cfg.data.max_len,
            rng=init_rng,
        )
        optimizer = Adam(model, lr=cfg.train.learning_rate)
        state = {"epoch": 0}

        def run():
            batches = make_batches(split, cfg.data.max_len, cfg.train.batch_size,
                                   batch_seeds[state["epoch"] % len(batch_seeds)])
            train_epoch(model, batches, optimizer, dataset, mask_rng, dropout_rng)
            state["epoch"] += 1

        return model, run

    model_on, run_on = make_runner(True)
    _, run_off = make_runner(False)
    # logical expert passes in a single step
    model_on.experts.passes = 0
    batches = make_batches(split, cfg.data.max_len, cfg.train.batch_size,
                           seed=cfg.train.seeds[0])
    model_on.training_losses(batches[0], dataset, np.random.default_rng(0))
    passes = model_on.experts.passes
    report = measure_complexity(run_on, run_off, passes, epochs=args.epochs)
    payload = report.to_dict()
    if args.out:
        _write_json(args.out, payload)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_weights(args):
    model = load_model(args.checkpoint)
    dataset = load_dataset_dir(args.data)
    split = leave_one_out_split(dataset)
    export_fusion_trace(model, split, dataset, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="prism")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train per config, write report and checkpoints")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, action="append")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rank the test targets with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, action="append")
    p.add_argument("--exclude-seen", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic interaction-structure dataset")
    p.add_argument("--scenario", required=True, choices=SCENARIOS)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--users", type=int, default=5000)
    p.add_argument("--items", type=int, default=200)
    p.add_argument("--seq-len", type=int, default=20)
    p.add_argument("--noise", type=float, default=0.05)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer type")
    p.add_argument("--seeds", type=int, default=3)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="per-epoch timing with and without the experts")
    p.add_argument("--config", required=True)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("weights", help="export per-position fusion weights as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_weights)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PrismError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
