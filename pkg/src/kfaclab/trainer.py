"""Training-run orchestration: data provisioning, the epoch loop, metrics
rows, run manifests, and exactly-resumable checkpoints.

Randomness discipline: every stochastic choice draws from a child stream
derived from the run seed (data generation, eval split, per-epoch shuffles,
weight init), so a run is reproducible from its seed alone and a resumed run
regenerates shuffle order instead of persisting RNG state.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from .config import RunConfig
from .datasets import Dataset, gen_synthetic, load_idx
from .distsim import Cluster, build_cluster, lr_schedule, run_step, shard_batch
from .errors import ArgumentError, DataFormatError
from .model import Batch, predict, _per_sample_losses
from .numerics import EigenPair

CSV_COLUMNS = (
    "iteration", "epoch", "lr", "train_loss", "eval_loss", "eval_accuracy",
    "gradcomp", "factorcomp", "inversecomp",
    "gradcomm", "factorcomm", "predcomm", "inversecomm",
)

CHECKPOINT_MAGIC = b"KFACLAB\0"
CHECKPOINT_VERSION = 1


@dataclass
class MetricsRow:
    iteration: int
    epoch: int
    lr: float
    train_loss: float
    eval_loss: Optional[float]
    eval_accuracy: Optional[float]
    gradcomp: int
    factorcomp: int
    inversecomp: int
    gradcomm: int
    factorcomm: int
    predcomm: int
    inversecomm: int

    def as_csv_fields(self) -> list[str]:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return repr(v)
            return str(v)
        return [fmt(getattr(self, c)) for c in CSV_COLUMNS]


@dataclass
class TrainResult:
    rows: list[MetricsRow]
    cluster: Cluster
    iters_per_epoch: int
    final_iteration: int


def _child_seeds(seed: int) -> dict[str, int]:
    """Named child streams off the run seed (order is part of the contract)."""
    state = np.random.SeedSequence(seed).generate_state(4, dtype=np.uint64)
    names = ("data", "split", "init", "shuffle")
    return {name: int(s) for name, s in zip(names, state)}


def provision_dataset(cfg: RunConfig) -> Dataset:
    seeds = _child_seeds(cfg.train.seed)
    if cfg.data.kind == "idx":
        return load_idx(cfg.data.images, cfg.data.labels)
    return gen_synthetic(cfg.data.kind, cfg.data.synthetic_params(), seeds["data"])


def split_dataset(dataset: Dataset, eval_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic permutation split; returns (train_idx, eval_idx)."""
    n = dataset.n_samples
    perm = np.random.default_rng(seed).permutation(n)
    n_eval = int(round(n * eval_fraction))
    return perm[n_eval:], perm[:n_eval]


def _take(dataset: Dataset, idx: np.ndarray) -> Batch:
    targets = dataset.targets[idx] if dataset.targets.ndim == 1 else dataset.targets[:, idx]
    return Batch(dataset.inputs[:, idx], targets)


def evaluate(cluster: Cluster, batch: Batch) -> tuple[float, Optional[float]]:
    """Held-out loss (and accuracy for classification) on worker 0's replica."""
    net = cluster.workers[0].replica
    outputs = predict(net, batch.inputs)
    loss = float(np.mean(_per_sample_losses(outputs, batch.targets, net.spec.loss_kind)))
    if net.spec.loss_kind == "softmax_cross_entropy":
        acc = float(np.mean(outputs.argmax(axis=0) == batch.targets))
        return loss, acc
    return loss, None


def run_training(
    cfg: RunConfig,
    row_sink: Optional[Callable[[MetricsRow], None]] = None,
    resume_from: Optional["Checkpoint"] = None,
) -> TrainResult:
    """Run the configured training job; one metrics row per iteration.

    ``row_sink`` is called with each row as soon as it exists so callers can
    stream to disk.  ``resume_from`` continues an earlier run of the same
    config at its stored iteration (data order is regenerated from the seed).
    """
    seeds = _child_seeds(cfg.train.seed)
    dataset = provision_dataset(cfg)
    if dataset.input_dim != cfg.network.layer_dims[0]:
        raise ArgumentError(
            f"dataset dim {dataset.input_dim} does not match network input "
            f"{cfg.network.layer_dims[0]}"
        )
    train_idx, eval_idx = split_dataset(dataset, cfg.data.eval_fraction, seeds["split"])
    B = cfg.train.batch_size
    iters_per_epoch = len(train_idx) // B
    if iters_per_epoch < 1:
        raise ArgumentError(f"batch size {B} exceeds the {len(train_idx)} training samples")

    cluster = build_cluster(
        cfg.network, cfg.train.algorithm, cfg.train.workers, seeds["init"]
    )
    start_epoch = 0
    t = 0
    if resume_from is not None:
        restore_cluster(cluster, resume_from, cfg)
        t = resume_from.iteration
        start_epoch = resume_from.epoch
        if start_epoch >= cfg.train.epochs:
            raise ArgumentError(
                f"checkpoint already at epoch {start_epoch}; config trains {cfg.train.epochs}"
            )

    hyper = cfg.hyper.kfac_hyper()
    sched = cfg.hyper.schedule(cfg.train.workers)
    eval_batch = _take(dataset, eval_idx) if len(eval_idx) > 0 else None

    rows: list[MetricsRow] = []
    for epoch in range(start_epoch, cfg.train.epochs):
        order = np.random.default_rng([seeds["shuffle"], epoch]).permutation(len(train_idx))
        for b in range(iters_per_epoch):
            batch = _take(dataset, train_idx[order[b * B: (b + 1) * B]])
            shards = shard_batch(batch, cfg.train.workers, cfg.train.shard_policy)
            lr = lr_schedule(t, epoch, sched)
            result = run_step(cluster, shards, hyper, lr, cfg.hyper.momentum, t)
            eval_loss = eval_acc = None
            if b == iters_per_epoch - 1 and eval_batch is not None:
                eval_loss, eval_acc = evaluate(cluster, eval_batch)
            c = result.counters
            row = MetricsRow(
                iteration=t, epoch=epoch, lr=lr, train_loss=result.loss,
                eval_loss=eval_loss, eval_accuracy=eval_acc,
                gradcomp=c.gradcomp, factorcomp=c.factorcomp, inversecomp=c.inversecomp,
                gradcomm=c.gradcomm, factorcomm=c.factorcomm,
                predcomm=c.predcomm, inversecomm=c.inversecomm,
            )
            rows.append(row)
            if row_sink is not None:
                row_sink(row)
            t += 1
    return TrainResult(rows=rows, cluster=cluster, iters_per_epoch=iters_per_epoch,
                       final_iteration=t)


# ---------------------------------------------------------------------------
# file outputs


def atomic_write_bytes(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_run_manifest(path: Path, cfg: RunConfig, extra: Optional[dict] = None):
    manifest = {
        "kfaclab_version": __version__,
        "seed": cfg.train.seed,
        "config": cfg.to_dict(),
        "csv_columns": list(CSV_COLUMNS),
    }
    if extra:
        manifest.update(extra)
    atomic_write_bytes(path, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())


def csv_header() -> str:
    return ",".join(CSV_COLUMNS)


# ---------------------------------------------------------------------------
# checkpoints: magic + version + JSON header + raw little-endian arrays


@dataclass
class Checkpoint:
    iteration: int
    epoch: int
    meta: dict
    arrays: dict[str, np.ndarray]


def _cluster_arrays(cluster: Cluster) -> tuple[dict[str, np.ndarray], dict]:
    arrays: dict[str, np.ndarray] = {}
    factor_meta: dict[str, dict] = {}
    # replicas are identical by the step contract; weights stored once
    for i, layer in enumerate(cluster.workers[0].replica.layers):
        arrays[f"layer{i}/weight"] = layer.weight
    for i, m in enumerate(cluster.workers[0].momentum):
        arrays[f"layer{i}/momentum"] = m
    for worker in cluster.workers:
        for i, state in worker.factors.items():
            prefix = f"worker{worker.rank}/layer{i}"
            factor_meta[prefix] = {
                "initialized": state.initialized,
                "last_factor_update": state.last_factor_update,
                "last_inverse_update": state.last_inverse_update,
            }
            fields = {
                "a_cov": state.a_cov, "g_cov": state.g_cov,
                "a_damped_inv": state.a_damped_inv, "g_damped_inv": state.g_damped_inv,
            }
            if state.a_eig is not None:
                fields.update({"a_eig_q": state.a_eig.q, "a_eig_v": state.a_eig.values})
            if state.g_eig is not None:
                fields.update({"g_eig_q": state.g_eig.q, "g_eig_v": state.g_eig.values})
            for name, arr in fields.items():
                if arr is not None:
                    arrays[f"{prefix}/{name}"] = arr
    return arrays, factor_meta


def save_checkpoint(path: Path, cluster: Cluster, iteration: int, epoch: int):
    arrays, factor_meta = _cluster_arrays(cluster)
    names = sorted(arrays)
    header = {
        "meta": {
            "iteration": iteration,
            "epoch": epoch,
            "algorithm": cluster.config.algorithm,
            "workers": cluster.config.workers,
            "factor_states": factor_meta,
        },
        "arrays": [
            {"name": n, "shape": list(arrays[n].shape), "dtype": "<f8"} for n in names
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<I", CHECKPOINT_VERSION)
    out += struct.pack("<Q", len(blob))
    out += blob
    for n in names:
        out += np.ascontiguousarray(arrays[n], dtype="<f8").tobytes()
    atomic_write_bytes(path, bytes(out))


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: bad checkpoint magic at byte offset 0")
    version = struct.unpack("<I", data[8:12])[0]
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    header_len = struct.unpack("<Q", data[12:20])[0]
    header = json.loads(data[20:20 + header_len].decode())
    offset = 20 + header_len
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(data):
            raise DataFormatError(f"{path}: truncated array data at byte offset {offset}")
        arrays[entry["name"]] = np.frombuffer(
            data, dtype="<f8", count=count, offset=offset
        ).reshape(shape).copy()
        offset += nbytes
    meta = header["meta"]
    return Checkpoint(iteration=meta["iteration"], epoch=meta["epoch"], meta=meta, arrays=arrays)


def restore_cluster(cluster: Cluster, ckpt: Checkpoint, cfg: RunConfig):
    if ckpt.meta["algorithm"] != cfg.train.algorithm or ckpt.meta["workers"] != cfg.train.workers:
        raise ArgumentError(
            "checkpoint was produced with a different algorithm/worker configuration"
        )
    for worker in cluster.workers:
        for i, layer in enumerate(worker.replica.layers):
            layer.weight[...] = ckpt.arrays[f"layer{i}/weight"]
        for i, m in enumerate(worker.momentum):
            m[...] = ckpt.arrays[f"layer{i}/momentum"]
        for i, state in worker.factors.items():
            prefix = f"worker{worker.rank}/layer{i}"
            fm = ckpt.meta["factor_states"].get(prefix)
            if fm is None:
                continue
            state.initialized = fm["initialized"]
            state.last_factor_update = fm["last_factor_update"]
            state.last_inverse_update = fm["last_inverse_update"]
            state.a_cov = ckpt.arrays.get(f"{prefix}/a_cov")
            state.g_cov = ckpt.arrays.get(f"{prefix}/g_cov")
            state.a_damped_inv = ckpt.arrays.get(f"{prefix}/a_damped_inv")
            state.g_damped_inv = ckpt.arrays.get(f"{prefix}/g_damped_inv")
            if f"{prefix}/a_eig_q" in ckpt.arrays:
                state.a_eig = EigenPair(ckpt.arrays[f"{prefix}/a_eig_q"],
                                        ckpt.arrays[f"{prefix}/a_eig_v"])
            if f"{prefix}/g_eig_q" in ckpt.arrays:
                state.g_eig = EigenPair(ckpt.arrays[f"{prefix}/g_eig_q"],
                                        ckpt.arrays[f"{prefix}/g_eig_v"])
