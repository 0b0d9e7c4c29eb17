"""Command-line harness: data generation, the two training stages,
evaluation, the benchmark grid, parameter reports, and gradient checks.

Configuration comes from an optional key=value file plus per-field flag
overrides (every SynthConfig and TrainConfig field has one). Errors exit
nonzero with a single machine-parsable line: `error:<Class>:<message>`.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import storage
from .gradcheck import grad_check, grad_check_many
from .model import build_model, flatten_params, joint_objective, module_param_counts, pretrain_objective
from .synth import SynthConfig, generate
from .tensor import Tensor
from .training import TrainConfig, evaluate, pretrain, run_benchmark, train_joint

__all__ = ["main"]


def _parse_value(field_type, raw: str):
    if field_type is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    return field_type(raw)


def _add_config_flags(parser: argparse.ArgumentParser, cls):
    # `seed` appears in both config dataclasses and intentionally shares one flag
    existing = {s for a in parser._actions for s in a.option_strings}
    for f in dataclasses.fields(cls):
        flag = "--" + f.name.replace("_", "-")
        if flag in existing:
            continue
        parser.add_argument(flag, dest=f.name, type=str, default=None, metavar="V")


def _read_config_file(path) -> dict:
    """key = value lines; '#' starts a comment; values parse as JSON scalars
    with a plain-string fallback."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, _, value = stripped.partition("=")
        out[key.strip()] = value.strip()
    return out


def _build_config(cls, file_values: dict, args):
    kwargs = {}
    for f in dataclasses.fields(cls):
        raw = file_values.get(f.name)
        cli_val = getattr(args, f.name, None)
        if cli_val is not None:
            raw = cli_val
        if raw is None:
            continue
        base_type = f.type if not isinstance(f.type, str) else {"int": int, "float": float, "bool": bool, "str": str}[f.type]
        kwargs[f.name] = _parse_value(base_type, str(raw))
    return cls(**kwargs)


def _consume_file_keys(file_values: dict):
    synth_names = {f.name for f in dataclasses.fields(SynthConfig)}
    train_names = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(file_values) - synth_names - train_names
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")


def _load_configs(args):
    file_values = _read_config_file(args.config) if getattr(args, "config", None) else {}
    _consume_file_keys(file_values)
    synth_cfg = _build_config(SynthConfig, file_values, args)
    train_cfg = _build_config(TrainConfig, file_values, args)
    return synth_cfg, train_cfg


def _outdir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args):
    synth_cfg, _ = _load_configs(args)
    ds = generate(synth_cfg)
    storage.save_dataset(ds, args.out)
    sizes = {name: split.n for name, split in ds.splits.items()}
    print(f"wrote {args.out} splits={json.dumps(sizes, sort_keys=True)}")
    return 0


def cmd_pretrain(args):
    _, cfg = _load_configs(args)
    ds = storage.load_dataset(args.data)
    out = _outdir(args)
    model = build_model(cfg.dims(ds.config), cfg.seed)
    rows = pretrain(model, ds, cfg)
    storage.save_checkpoint(model, out / "checkpoint.bin", {"stage": "pretrain", "epochs": cfg.pretrain_epochs})
    storage.write_loss_curve_csv(rows, out / "loss_curve.csv")
    print(f"pretrained {cfg.pretrain_epochs} epochs -> {out / 'checkpoint.bin'}")
    return 0


def cmd_train(args):
    _, cfg = _load_configs(args)
    ds = storage.load_dataset(args.data)
    out = _outdir(args)
    if args.checkpoint:
        model = storage.load_checkpoint(args.checkpoint)
        rows = []
    else:
        model = build_model(cfg.dims(ds.config), cfg.seed)
        rows = pretrain(model, ds, cfg)
    rows += train_joint(model, ds, cfg, epoch_offset=len(rows))
    storage.save_checkpoint(model, out / "model.bin", {"stage": "joint", "epochs": cfg.joint_epochs})
    storage.write_loss_curve_csv(rows, out / "loss_curve.csv")
    report = evaluate(model, ds, "val", cfg)
    storage.write_metrics_json(report, out / "metrics.json")
    storage.write_partition_csv(report.partition_table, out / "partition.csv")
    print(f"trained -> {out / 'model.bin'} val_acc={report.accuracy:.4f}")
    return 0


def cmd_eval(args):
    _, cfg = _load_configs(args)
    ds = storage.load_dataset(args.data)
    out = _outdir(args)
    model = storage.load_checkpoint(args.checkpoint)
    report = evaluate(model, ds, args.split, cfg)
    storage.write_metrics_json(report, out / "metrics.json")
    storage.write_partition_csv(report.partition_table, out / "partition.csv")
    print(f"{args.split} acc={report.accuracy:.4f} weighted_f1={report.weighted_f1:.4f}")
    return 0


def cmd_benchmark(args):
    synth_cfg, cfg = _load_configs(args)
    out = _outdir(args)
    seeds = list(range(args.seeds))
    rows = run_benchmark(synth_cfg, cfg, seeds, oracle_mc=args.oracle_mc)
    storage.write_benchmark_csv(rows, out / "benchmark.csv")
    for r in rows:
        std = f" +- {r['accuracy_std']:.4f}" if r["accuracy_std"] is not None else ""
        print(f"{r['method']:>12}: acc {r['accuracy_mean']:.4f}{std}")
    return 0


def cmd_report_params(args):
    if args.checkpoint:
        model = storage.load_checkpoint(args.checkpoint)
    else:
        synth_cfg, cfg = _load_configs(args)
        model = build_model(cfg.dims(synth_cfg), cfg.seed)
    counts = module_param_counts(model)
    for name, count in counts.items():
        print(f"{name:>16}: {count}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("module,parameters\n")
            for name, count in counts.items():
                fh.write(f"{name},{count}\n")
    return 0


def _gradcheck_primitives() -> float:
    from . import tensor as T

    worst = 0.0
    for seed in range(3):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.uniform(-2, 2, size=(2, 3, 4)))
        aux = Tensor(rng.uniform(-2, 2, size=(2, 3, 4)))
        w = Tensor(rng.uniform(-2, 2, size=(4, 4)))
        cases = [
            lambda t: T.sum_axis(T.mul(T.add(t, aux), t), (0, 1, 2)),
            lambda t: T.sum_axis(T.matmul(t, w), (0, 1, 2)),
            lambda t: T.sum_axis(T.softmax_last(t), (0, 1, 2)),
            lambda t: T.sum_axis(T.cumsum_last(t), (0, 1, 2)),
            lambda t: T.sum_axis(T.gelu(t), (0, 1, 2)),
            lambda t: T.sum_squared_error(t, aux),
        ]
        for f in cases:
            worst = max(worst, grad_check(f, Tensor(x.data.copy()), eps=1e-5))
    return worst


def cmd_gradcheck(args):
    synth_cfg = SynthConfig(
        n_modalities=2, d_model=8, seq_len=4, d_uni=4, d_paired=4, n_train=2, n_val=2, n_test=2, seed=args.seed
    )
    cfg = TrainConfig(seed=args.seed, n_blocks=1)
    ds = generate(synth_cfg)
    model = build_model(cfg.dims(synth_cfg), cfg.seed)
    feats = [Tensor(f) for f in ds.splits["train"].features]
    labels = ds.splits["train"].labels
    params = flatten_params(model)
    rng = np.random.default_rng(args.seed)

    worst_prim = _gradcheck_primitives()
    print(f"primitives: max relative error {worst_prim:.3e}")

    err_p = grad_check_many(
        lambda: pretrain_objective(model, feats)[0], params, max_coords_per_param=args.coords, rng=rng
    )
    print(f"pretrain objective: max relative error {err_p:.3e}")
    err_d = grad_check_many(
        lambda: joint_objective(model, feats, labels, cfg.alpha, cfg.beta)[0],
        params,
        max_coords_per_param=args.coords,
        rng=rng,
    )
    print(f"joint objective: max relative error {err_d:.3e}")
    ok = max(worst_prim, err_p, err_d) < args.tolerance
    print("gradcheck " + ("PASS" if ok else "FAIL"))
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modalsplit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def with_configs(p, synth=True, train=True):
        p.add_argument("--config", default=None, help="key = value config file")
        if synth:
            _add_config_flags(p, SynthConfig)
        if train:
            _add_config_flags(p, TrainConfig)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset container")
    with_configs(p, train=False)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("pretrain", help="stage-one training of the partition objectives")
    with_configs(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("train", help="two-stage (or resumed) training plus validation metrics")
    with_configs(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", default=None, help="resume joint stage from a pretrain checkpoint")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    with_configs(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("benchmark", help="train and score every method over several seeds")
    with_configs(p)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--oracle-mc", type=int, default=50000)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_benchmark)

    p = sub.add_parser("report-params", help="trainable parameter counts per module")
    with_configs(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_report_params)

    p = sub.add_parser("gradcheck", help="finite-difference check of primitives and objectives")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coords", type=int, default=8, help="sampled coordinates per parameter tensor")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except Exception as err:  # one-line machine-parsable failure
        print(f"error:{type(err).__name__}:{err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
