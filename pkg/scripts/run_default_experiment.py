#!/usr/bin/env python3
"""End-to-end single-seed run on the default synthetic task.

Generates the dataset, runs both training stages, and writes every artifact
(checkpoint, loss curves, metrics, partition table, parameter report) under
--out-dir. Equivalent to chaining the CLI subcommands; kept as one script
for convenience.
"""

import argparse
import time
from dataclasses import asdict
from pathlib import Path

from modalsplit import storage
from modalsplit.model import build_model, module_param_counts
from modalsplit.synth import SynthConfig, bayes_oracle, generate
from modalsplit.training import TrainConfig, evaluate, pretrain, train_joint


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="out/default_run")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    synth_cfg = SynthConfig(seed=args.seed)
    train_cfg = TrainConfig(seed=args.seed)
    print(f"synth config: {asdict(synth_cfg)}")
    print(f"train config: {asdict(train_cfg)}")

    dataset = generate(synth_cfg)
    storage.save_dataset(dataset, out / "dataset.bin")

    model = build_model(train_cfg.dims(synth_cfg), train_cfg.seed)
    for name, count in module_param_counts(model).items():
        print(f"  params {name:>16}: {count}")

    t0 = time.perf_counter()
    rows = pretrain(model, dataset, train_cfg)
    print(f"pretrain: {time.perf_counter() - t0:.1f}s, UPR {rows[0].upr:.2f} -> {rows[-1].upr:.2f}")
    storage.save_checkpoint(model, out / "checkpoint.bin", {"stage": "pretrain"})

    t0 = time.perf_counter()
    rows += train_joint(model, dataset, train_cfg, epoch_offset=len(rows))
    print(f"joint: {time.perf_counter() - t0:.1f}s, task {rows[-1].task:.3f}")
    storage.save_checkpoint(model, out / "model.bin", {"stage": "joint"})
    storage.write_loss_curve_csv(rows, out / "loss_curve.csv")

    report = evaluate(model, dataset, "test", train_cfg)
    storage.write_metrics_json(report, out / "metrics.json")
    storage.write_partition_csv(report.partition_table, out / "partition.csv")
    print(f"test accuracy {report.accuracy:.4f}, weighted F1 {report.weighted_f1:.4f}")
    for row in report.partition_table:
        print(f"  {row['modality']}: uni {row['percent_uni']:.1f}% paired {row['percent_paired']:.1f}% "
              f"cut_u {row['cut_u']} cut_p {row['cut_p']}")

    oracle = bayes_oracle(synth_cfg, n_mc=50_000)
    print(f"oracle ceiling {oracle.accuracy:.4f} +- {oracle.stderr:.4f}")


if __name__ == "__main__":
    main()
