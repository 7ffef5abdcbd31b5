"""Dataset provisioning: seeded synthetic generators and the IDX binary format.

Synthetic tasks are desk-scale stand-ins for image corpora:

* ``gaussian_blobs``: class centers drawn uniformly on the unit sphere,
  samples are a center plus isotropic Gaussian noise; balanced labels.
* ``deep_linear_regression``: targets from a hidden random linear map of
  Gaussian inputs, plus observation noise.

The IDX reader/writer implements the classic big-endian layout (magic
0x00000803 for ubyte image stacks, 0x00000801 for ubyte label vectors);
pixel values are scaled to [0, 1] and images flattened to columns.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ArgumentError, DataFormatError

SYNTHETIC_KINDS = ("gaussian_blobs", "deep_linear_regression")

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Columns-are-samples inputs plus targets (class indices or a target
    matrix), ready for batching."""

    inputs: np.ndarray
    targets: np.ndarray
    task: str  # "classification" | "regression"

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[1]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[0]


def _param(params: Mapping, key: str, cast, default=None):
    if key not in params:
        if default is None:
            raise ArgumentError(f"synthetic dataset params missing {key!r}")
        return default
    try:
        return cast(params[key])
    except (TypeError, ValueError) as exc:
        raise ArgumentError(f"bad synthetic dataset param {key}={params[key]!r}") from exc


def gen_synthetic(kind: str, params: Mapping, seed: int) -> Dataset:
    """Deterministic synthetic dataset; same (kind, params, seed) gives
    bit-identical tensors."""
    if kind not in SYNTHETIC_KINDS:
        raise ArgumentError(f"unknown synthetic dataset kind {kind!r}")
    rng = np.random.default_rng(seed)
    if kind == "gaussian_blobs":
        classes = _param(params, "classes", int)
        dim = _param(params, "dim", int)
        samples = _param(params, "samples", int)
        noise = _param(params, "noise", float, 0.1)
        if classes < 2 or dim < 1 or samples < classes:
            raise ArgumentError("gaussian_blobs needs classes >= 2, dim >= 1, samples >= classes")
        centers = rng.standard_normal((dim, classes))
        centers /= np.linalg.norm(centers, axis=0, keepdims=True)
        labels = np.arange(samples, dtype=np.int64) % classes
        inputs = centers[:, labels] + noise * rng.standard_normal((dim, samples))
        return Dataset(inputs, labels, task="classification")
    dim = _param(params, "dim", int)
    out_dim = _param(params, "out_dim", int)
    samples = _param(params, "samples", int)
    noise = _param(params, "noise", float, 0.1)
    if dim < 1 or out_dim < 1 or samples < 1:
        raise ArgumentError("deep_linear_regression needs dim, out_dim, samples >= 1")
    hidden_map = rng.standard_normal((out_dim, dim)) / np.sqrt(dim)
    inputs = rng.standard_normal((dim, samples))
    targets = hidden_map @ inputs + noise * rng.standard_normal((out_dim, samples))
    return Dataset(inputs, targets, task="regression")


def _read_exact(fh, n: int, offset: int, path, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise DataFormatError(
            f"{path}: truncated {what} at byte offset {offset + len(data)} "
            f"(wanted {n} bytes, got {len(data)})"
        )
    return data


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label file pair as a classification dataset."""
    with open(images_path, "rb") as fh:
        magic = struct.unpack(">I", _read_exact(fh, 4, 0, images_path, "magic"))[0]
        if magic != IDX_IMAGES_MAGIC:
            raise DataFormatError(
                f"{images_path}: bad magic 0x{magic:08x} at byte offset 0 "
                f"(expected 0x{IDX_IMAGES_MAGIC:08x})"
            )
        n, rows, cols = struct.unpack(">III", _read_exact(fh, 12, 4, images_path, "header"))
        pixels = _read_exact(fh, n * rows * cols, 16, images_path, "pixel data")
        extra = fh.read(1)
        if extra:
            raise DataFormatError(f"{images_path}: trailing bytes at offset {16 + n * rows * cols}")
    with open(labels_path, "rb") as fh:
        magic = struct.unpack(">I", _read_exact(fh, 4, 0, labels_path, "magic"))[0]
        if magic != IDX_LABELS_MAGIC:
            raise DataFormatError(
                f"{labels_path}: bad magic 0x{magic:08x} at byte offset 0 "
                f"(expected 0x{IDX_LABELS_MAGIC:08x})"
            )
        n_labels = struct.unpack(">I", _read_exact(fh, 4, 4, labels_path, "header"))[0]
        label_bytes = _read_exact(fh, n_labels, 8, labels_path, "label data")
    if n_labels != n:
        raise DataFormatError(
            f"image/label counts differ: {n} images in {images_path}, "
            f"{n_labels} labels in {labels_path}"
        )
    images = np.frombuffer(pixels, dtype=np.uint8).reshape(n, rows * cols)
    inputs = images.astype(np.float64).T / 255.0
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    return Dataset(inputs, labels, task="classification")


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray):
    """Write an IDX pair: ``images`` is uint8 of shape (n, rows, cols),
    ``labels`` uint8 of shape (n,)."""
    if images.ndim != 3 or images.dtype != np.uint8:
        raise ArgumentError("images must be a uint8 array of shape (n, rows, cols)")
    if labels.ndim != 1 or labels.dtype != np.uint8 or labels.shape[0] != images.shape[0]:
        raise ArgumentError("labels must be uint8 of shape (n,) matching the image count")
    n, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes(order="C"))
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        fh.write(labels.tobytes(order="C"))


def quantize_for_idx(dataset: Dataset, rows: int, cols: int) -> tuple[np.ndarray, np.ndarray]:
    """Affinely map a classification dataset onto the uint8 IDX range.

    Lossy by construction; intended for materializing synthetic tasks as
    MNIST-style file pairs.
    """
    if dataset.task != "classification":
        raise ArgumentError("IDX export supports classification datasets only")
    if dataset.input_dim != rows * cols:
        raise ArgumentError(
            f"input dim {dataset.input_dim} does not factor as {rows}x{cols}"
        )
    if int(dataset.targets.max()) > 255:
        raise ArgumentError("IDX labels are bytes; need class indices <= 255")
    lo, hi = float(dataset.inputs.min()), float(dataset.inputs.max())
    span = hi - lo if hi > lo else 1.0
    scaled = np.clip(np.rint((dataset.inputs - lo) / span * 255.0), 0, 255)
    images = scaled.T.reshape(dataset.n_samples, rows, cols).astype(np.uint8)
    return images, dataset.targets.astype(np.uint8)
