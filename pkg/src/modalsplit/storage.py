"""Deterministic on-disk formats: one binary container, CSV and JSON reports.

Container layout (little-endian):

    bytes 0..7    magic b"MSPLIT01" (format name + version)
    bytes 8..11   uint32 header length H
    bytes 12..    UTF-8 JSON header {"meta": ..., "arrays": [{name, dtype, shape}]}
    then          raw row-major array bytes, in header order

Only float64 and int64 arrays are stored. Writing the same content twice
produces byte-identical files, which the determinism checks rely on.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict

import numpy as np

from .model import Model, ModelDims, build_model, flatten_params
from .synth import Split, SynthConfig, SynthDataset

MAGIC = b"MSPLIT01"

__all__ = [
    "write_container",
    "read_container",
    "save_dataset",
    "load_dataset",
    "save_checkpoint",
    "load_checkpoint",
    "config_hash",
    "write_loss_curve_csv",
    "write_partition_csv",
    "write_benchmark_csv",
    "write_metrics_json",
]


def _canon_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg) -> str:
    payload = cfg if isinstance(cfg, dict) else asdict(cfg)
    return hashlib.sha256(_canon_json(payload).encode()).hexdigest()[:12]


def write_container(path, meta: dict, arrays: dict):
    entries = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in (np.float64, np.int64):
            raise TypeError(f"container stores float64/int64 only, got {arr.dtype} for {name}")
        entries.append({"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape)})
    header = _canon_json({"meta": meta, "arrays": entries}).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for name in arrays:
            fh.write(np.ascontiguousarray(arrays[name]).astype(arrays[name].dtype, copy=False).tobytes())


def read_container(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ValueError(f"not a modalsplit container (magic {magic!r})")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode())
        arrays = {}
        for entry in header["arrays"]:
            dtype = np.dtype(entry["dtype"])
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            buf = fh.read(count * dtype.itemsize)
            arrays[entry["name"]] = np.frombuffer(buf, dtype=dtype).reshape(entry["shape"]).copy()
    return header["meta"], arrays


# ---------------------------------------------------------------------------
# datasets


def save_dataset(ds: SynthDataset, path):
    arrays = {}
    for split_name, split in ds.splits.items():
        for m, feat in enumerate(split.features):
            arrays[f"{split_name}.features.{m}"] = feat
            arrays[f"{split_name}.uni_latents.{m}"] = split.uni_latents[m]
            arrays[f"{split_name}.paired_latents.{m}"] = split.paired_latents[m]
        arrays[f"{split_name}.labels"] = split.labels.astype(np.int64)
    for m, w in enumerate(ds.uni_dirs):
        arrays[f"uni_dirs.{m}"] = w
        arrays[f"markers.{m}"] = ds.markers[m]
    if ds.mixing is not None:
        for m, q in enumerate(ds.mixing):
            arrays[f"mixing.{m}"] = q
    write_container(path, {"kind": "dataset", "config": asdict(ds.config)}, arrays)


def load_dataset(path) -> SynthDataset:
    meta, arrays = read_container(path)
    if meta.get("kind") != "dataset":
        raise ValueError("container does not hold a dataset")
    cfg = SynthConfig(**meta["config"])
    splits = {}
    for split_name in ("train", "val", "test"):
        features = [arrays[f"{split_name}.features.{m}"] for m in range(cfg.n_modalities)]
        uni_lat = [arrays[f"{split_name}.uni_latents.{m}"] for m in range(cfg.n_modalities)]
        paired_lat = [arrays[f"{split_name}.paired_latents.{m}"] for m in range(cfg.n_modalities)]
        splits[split_name] = Split(features, arrays[f"{split_name}.labels"], uni_lat, paired_lat)
    uni_dirs = [arrays[f"uni_dirs.{m}"] for m in range(cfg.n_modalities)]
    markers = [arrays[f"markers.{m}"] for m in range(cfg.n_modalities)]
    mixing = None
    if cfg.entangle:
        mixing = [arrays[f"mixing.{m}"] for m in range(cfg.n_modalities)]
    return SynthDataset(config=cfg, splits=splits, uni_dirs=uni_dirs, markers=markers, mixing=mixing)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: Model, path, extra_meta: dict | None = None):
    arrays = {name: t.data for name, t in flatten_params(model).items()}
    meta = {"kind": "checkpoint", "dims": asdict(model.dims)}
    if extra_meta:
        meta["extra"] = extra_meta
    write_container(path, meta, arrays)


def load_checkpoint(path) -> Model:
    meta, arrays = read_container(path)
    if meta.get("kind") != "checkpoint":
        raise ValueError("container does not hold a checkpoint")
    dims = ModelDims(**meta["dims"])
    model = build_model(dims, seed=0)
    params = flatten_params(model)
    if set(params) != set(arrays):
        raise ValueError("checkpoint parameter names do not match the model layout")
    for name, tensor in params.items():
        if tuple(arrays[name].shape) != tensor.data.shape:
            raise ValueError(f"shape mismatch for {name}")
        tensor.data = arrays[name]
    return model


# ---------------------------------------------------------------------------
# reports


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_loss_curve_csv(rows, path):
    with open(path, "w") as fh:
        fh.write("epoch,stage,ufc,pfc,upr,task,total\n")
        for r in rows:
            fh.write(
                f"{r.epoch},{r.stage},{_fmt(r.ufc)},{_fmt(r.pfc)},{_fmt(r.upr)},{_fmt(r.task)},{_fmt(r.total)}\n"
            )


def write_partition_csv(rows, path):
    with open(path, "w") as fh:
        fh.write("modality,percent_uni,percent_paired,percent_overlap,cut_u,cut_p\n")
        for r in rows:
            fh.write(
                f"{r['modality']},{_fmt(r['percent_uni'])},{_fmt(r['percent_paired'])},"
                f"{_fmt(r['percent_overlap'])},{r['cut_u']},{r['cut_p']}\n"
            )


def write_benchmark_csv(rows, path):
    with open(path, "w") as fh:
        fh.write("method,accuracy_mean,accuracy_std,weighted_f1_mean,weighted_f1_std,n_seeds\n")
        for r in rows:
            fh.write(
                f"{r['method']},{_fmt(r['accuracy_mean'])},{_fmt(r['accuracy_std'])},"
                f"{_fmt(r['weighted_f1_mean'])},{_fmt(r['weighted_f1_std'])},{r['n_seeds']}\n"
            )


def write_metrics_json(report, path):
    payload = asdict(report) if not isinstance(report, dict) else report
    with open(path, "w") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=2))
        fh.write("\n")
