"""Run configuration: sectioned key-value files plus command-line overrides.

The config format is INI-style (``[section]`` headers, ``key = value``
lines, ``#``/``;`` comments), chosen because the resolved experiment
manifests stay diff-able.  Overrides are dotted ``section.key=value``
strings and win over file values.  Unknown sections or keys are errors; so
are missing required keys.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Optional

from .distsim import ALGORITHMS, SHARD_POLICIES, LrSchedule
from .errors import ConfigError
from .kfac import INV_TYPES, KfacHyper
from .model import NetworkSpec
from .datasets import SYNTHETIC_KINDS


@dataclass(frozen=True)
class DataConfig:
    kind: str = "gaussian_blobs"  # gaussian_blobs | deep_linear_regression | idx
    classes: int = 10
    dim: int = 64
    samples: int = 10000
    noise: float = 0.1
    out_dim: int = 1
    images: str = ""
    labels: str = ""
    eval_fraction: float = 0.1

    def synthetic_params(self) -> dict:
        if self.kind == "gaussian_blobs":
            return {"classes": self.classes, "dim": self.dim,
                    "samples": self.samples, "noise": self.noise}
        return {"dim": self.dim, "out_dim": self.out_dim,
                "samples": self.samples, "noise": self.noise}


@dataclass(frozen=True)
class TrainConfig:
    algorithm: str = "dp_kfac"
    workers: int = 1
    shard_policy: str = "disjoint"
    epochs: int = 1
    batch_size: int = 128
    seed: int = 0
    out_dir: str = "runs/latest"


@dataclass(frozen=True)
class HyperConfig:
    lr: float = 0.1
    momentum: float = 0.9
    xi: float = 0.95
    gamma: float = 0.03
    inv_type: str = "eigen"
    f_freq: int = 1
    k_freq: int = 1
    warmup_iters: int = 0
    decay_epochs: tuple[int, ...] = ()

    def kfac_hyper(self) -> KfacHyper:
        return KfacHyper(gamma=self.gamma, xi=self.xi, inv_type=self.inv_type,
                         f_freq=self.f_freq, k_freq=self.k_freq)

    def schedule(self, workers: int) -> LrSchedule:
        return LrSchedule(base_lr=self.lr, workers=workers,
                          warmup_iters=self.warmup_iters, decay_epochs=self.decay_epochs)


@dataclass(frozen=True)
class RunConfig:
    network: NetworkSpec
    data: DataConfig
    train: TrainConfig
    hyper: HyperConfig

    def to_dict(self) -> dict:
        return {
            "network": {
                "layer_dims": list(self.network.layer_dims),
                "activation": self.network.activation,
                "loss_kind": self.network.loss_kind,
                "bias_mode": self.network.bias_mode,
            },
            "data": asdict(self.data),
            "train": asdict(self.train),
            "hyper": {**asdict(self.hyper), "decay_epochs": list(self.hyper.decay_epochs)},
        }


def _int_list(raw: str) -> tuple[int, ...]:
    raw = raw.strip()
    if not raw:
        return ()
    return tuple(int(x) for x in raw.replace(",", " ").split())


def _enum(options):
    def cast(raw: str) -> str:
        if raw not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return raw
    return cast


# section -> key -> caster
_SCHEMA: dict[str, dict[str, object]] = {
    "network": {
        "layer_dims": _int_list,
        "activation": _enum(("relu", "tanh", "identity")),
        "loss_kind": _enum(("softmax_cross_entropy", "mean_squared_error")),
        "bias_mode": _enum(("none", "homogeneous")),
    },
    "data": {
        "kind": _enum(SYNTHETIC_KINDS + ("idx",)),
        "classes": int, "dim": int, "samples": int, "noise": float,
        "out_dim": int, "images": str, "labels": str, "eval_fraction": float,
    },
    "train": {
        "algorithm": _enum(ALGORITHMS),
        "workers": int,
        "shard_policy": _enum(SHARD_POLICIES),
        "epochs": int, "batch_size": int, "seed": int, "out_dir": str,
    },
    "hyper": {
        "lr": float, "momentum": float, "xi": float, "gamma": float,
        "inv_type": _enum(INV_TYPES),
        "f_freq": int, "k_freq": int, "warmup_iters": int,
        "decay_epochs": _int_list,
    },
}


def parse_overrides(pairs) -> dict[str, str]:
    """Turn ``section.key=value`` strings (optionally ``--``-prefixed) into a
    flat mapping."""
    overrides = {}
    for raw in pairs:
        item = raw[2:] if raw.startswith("--") else raw
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {raw!r} is not of the form section.key=value")
        dotted, value = item.split("=", 1)
        overrides[dotted] = value
    return overrides


def load_config(path, overrides: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Parse, override, validate."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep keys case-sensitive
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        parser.read_string(path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc

    values: dict[str, dict[str, str]] = {s: dict(parser.items(s)) for s in parser.sections()}
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        values.setdefault(section, {})[key] = value

    for section in values:
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key in values[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")

    def section_kwargs(section: str) -> dict:
        kwargs = {}
        for key, raw in values.get(section, {}).items():
            cast = _SCHEMA[section][key]
            try:
                kwargs[key] = cast(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {section}.{key}: {raw!r} ({exc})") from exc
        return kwargs

    net_kwargs = section_kwargs("network")
    if "layer_dims" not in net_kwargs:
        raise ConfigError("missing required key network.layer_dims")
    try:
        network = NetworkSpec(**net_kwargs)
        cfg = RunConfig(
            network=network,
            data=DataConfig(**section_kwargs("data")),
            train=TrainConfig(**section_kwargs("train")),
            hyper=HyperConfig(**section_kwargs("hyper")),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    validate_config(cfg)
    return cfg


def config_from_dict(d: Mapping) -> RunConfig:
    """Rebuild a RunConfig from a run manifest's resolved ``config`` block,
    so a finished run's JSON is sufficient to reproduce it exactly."""
    try:
        net = d["network"]
        cfg = RunConfig(
            network=NetworkSpec(
                layer_dims=tuple(net["layer_dims"]),
                activation=net["activation"],
                loss_kind=net["loss_kind"],
                bias_mode=net["bias_mode"],
            ),
            data=DataConfig(**d["data"]),
            train=TrainConfig(**d["train"]),
            hyper=HyperConfig(**{**d["hyper"],
                                 "decay_epochs": tuple(d["hyper"]["decay_epochs"])}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"run manifest config block is incomplete: {exc}") from exc
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig):
    t, d = cfg.train, cfg.data
    if t.workers < 1 or t.epochs < 1 or t.batch_size < 1:
        raise ConfigError("train.workers, train.epochs, and train.batch_size must be >= 1")
    if t.shard_policy == "disjoint" and t.batch_size % t.workers != 0:
        raise ConfigError(
            f"train.batch_size={t.batch_size} not divisible by train.workers={t.workers} "
            "under disjoint sharding"
        )
    if not (0.0 <= d.eval_fraction < 1.0):
        raise ConfigError("data.eval_fraction must lie in [0, 1)")
    if d.kind == "idx":
        for label, p in (("data.images", d.images), ("data.labels", d.labels)):
            if not p:
                raise ConfigError(f"{label} is required for data.kind=idx")
            if not Path(p).is_file():
                raise ConfigError(f"{label}: file not found: {p}")
    if d.kind == "gaussian_blobs" and cfg.network.loss_kind != "softmax_cross_entropy":
        raise ConfigError("gaussian_blobs is a classification task; use softmax_cross_entropy")
    if d.kind == "deep_linear_regression" and cfg.network.loss_kind != "mean_squared_error":
        raise ConfigError("deep_linear_regression needs loss_kind=mean_squared_error")
    # the network must fit the data
    expected_in = {"gaussian_blobs": d.dim, "deep_linear_regression": d.dim}.get(d.kind)
    if expected_in is not None and cfg.network.layer_dims[0] != expected_in:
        raise ConfigError(
            f"network.layer_dims[0]={cfg.network.layer_dims[0]} does not match data.dim={d.dim}"
        )
    if d.kind == "gaussian_blobs" and cfg.network.layer_dims[-1] != d.classes:
        raise ConfigError(
            f"network.layer_dims[-1]={cfg.network.layer_dims[-1]} "
            f"does not match data.classes={d.classes}"
        )
    if d.kind == "deep_linear_regression" and cfg.network.layer_dims[-1] != d.out_dim:
        raise ConfigError("network output dim does not match data.out_dim")
