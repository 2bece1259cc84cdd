"""Run configuration: a YAML file of flat keys, optionally grouped in sections.

Sections are only for readability; ``schedule: {T: 600}`` and ``T: 600`` are
the same setting. Defaults are the full-scale image setup (10 devices, 28x28
inputs) where one exists; the synthetic data fields have no such reference.
"""
import dataclasses
from dataclasses import dataclass, field
from typing import List, Optional

import yaml

STRATEGIES = ("cf-cl", "uniform", "fedavg", "cf-cl-localmodel")
PULL_STRATEGIES = ("cf-cl", "uniform", "cf-cl-localmodel")


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class RunConfig:
    seed: int = 0
    strategy: str = "cf-cl"

    # schedule
    T: int = 2500
    T_a: int = 50
    T_p: int = 10
    lambda_slope: float = 6.0
    lambda_offset: float = 4.0

    # network
    devices: int = 10
    topology: str = "rgg"
    target_degree: float = 3.0
    degree_tolerance: float = 0.5
    adjacency: Optional[list] = None

    # exchange
    K_reserve: int = 500
    K_approx: int = 1000
    cluster_count: int = 4
    budget: int = 50
    buffer: str = "limited"
    reserve_selection: str = "kmeans"

    # local training
    margin: float = 1.0
    learning_rate: float = 0.01
    batch_size: int = 32
    hidden_dims: List[int] = field(default_factory=lambda: [128])
    embedding_dim: int = 64
    activation: str = "relu"
    noise_scale: float = 0.1
    scale_range: List[float] = field(default_factory=lambda: [0.8, 1.2])
    mask_fraction: float = 0.1

    # data
    source: str = "synthetic"
    classes: int = 10
    dim: int = 16
    sigma: float = 1.0
    separation: float = 4.0
    per_class: Optional[int] = None
    idx_images: Optional[str] = None
    idx_labels: Optional[str] = None
    eval_idx_images: Optional[str] = None
    eval_idx_labels: Optional[str] = None
    labels_per_device: int = 2
    per_device_size: int = 6000
    eval_per_class: int = 200

    # evaluation
    probe_iters: int = 1000
    probe_lr: float = 0.1
    probe_batch: int = 64
    eval_stride: int = 1
    global_loss_sample: int = 256

    # delay model
    rate_bps: float = 1e6
    model_bits: int = 32
    data_bits: int = 8
    param_count: Optional[int] = None
    overhead_per_event_s: float = 0.0

    log_candidates: bool = True

    def layer_dims(self, input_dim):
        return [int(input_dim)] + [int(h) for h in self.hidden_dims] + [int(self.embedding_dim)]

    def temperature(self, t):
        return self.lambda_slope * t / self.T + self.lambda_offset

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_dict(self):
        return dataclasses.asdict(self)

    def validate(self):
        def need(ok, key, msg):
            if not ok:
                raise ConfigError(key, msg)

        need(self.strategy in STRATEGIES, "strategy", f"must be one of {STRATEGIES}")
        for key in ("T", "T_a", "T_p", "devices", "K_reserve", "K_approx", "cluster_count",
                    "batch_size", "embedding_dim", "classes", "dim", "labels_per_device",
                    "per_device_size", "probe_iters", "probe_batch", "eval_stride"):
            need(int(getattr(self, key)) >= 1, key, "must be >= 1")
        need(self.budget >= 0, "budget", "must be >= 0")
        need(self.budget <= self.K_approx, "budget", "exceeds K_approx")
        need(self.K_reserve <= self.per_device_size, "K_reserve", "exceeds per_device_size")
        need(self.margin >= 0, "margin", "must be >= 0")
        need(self.learning_rate >= 0, "learning_rate", "must be >= 0")
        need(all(int(h) >= 1 for h in self.hidden_dims), "hidden_dims", "entries must be >= 1")
        need(self.activation in ("relu", "tanh", "identity"), "activation", "unknown activation")
        need(self.noise_scale >= 0, "noise_scale", "must be >= 0")
        need(len(self.scale_range) == 2 and 0 < self.scale_range[0] <= self.scale_range[1],
             "scale_range", "must be [low, high] with 0 < low <= high")
        need(0 <= self.mask_fraction <= 1, "mask_fraction", "must lie in [0, 1]")
        need(self.buffer in ("limited", "unlimited"), "buffer", "must be limited or unlimited")
        need(self.reserve_selection in ("kmeans", "random"), "reserve_selection", "must be kmeans or random")
        need(self.topology in ("rgg", "explicit"), "topology", "must be rgg or explicit")
        if self.topology == "explicit":
            need(self.adjacency is not None and len(self.adjacency) == self.devices,
                 "adjacency", "explicit topology needs one neighbor list per device")
        else:
            need(0 < self.target_degree <= self.devices - 1 or self.devices == 1,
                 "target_degree", "must lie in (0, devices - 1]")
        need(self.source in ("synthetic", "idx"), "source", "must be synthetic or idx")
        if self.source == "idx":
            need(bool(self.idx_images) and bool(self.idx_labels), "idx_images", "idx source needs image and label paths")
            need(bool(self.eval_idx_images) == bool(self.eval_idx_labels), "eval_idx_images",
                 "eval images and labels must be given together")
        need(self.labels_per_device <= self.classes, "labels_per_device", "exceeds classes")
        need(self.sigma >= 0, "sigma", "must be >= 0")
        need(min(self.rate_bps, self.model_bits, self.data_bits) > 0, "rate_bps", "delay parameters must be positive")
        need(self.overhead_per_event_s >= 0, "overhead_per_event_s", "must be >= 0")
        return self


FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def config_from_dict(raw):
    flat = {}
    for key, value in (raw or {}).items():
        if isinstance(value, dict) and key not in FIELDS:
            for k, v in value.items():
                flat[k] = v
        else:
            flat[key] = value
    unknown = sorted(set(flat) - FIELDS)
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    return RunConfig(**flat).validate()


def load_config(path):
    with open(path) as f:
        raw = yaml.safe_load(f)
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    return config_from_dict(raw)


def dump_config(cfg, path):
    with open(path, "w") as f:
        yaml.safe_dump(cfg.to_dict(), f, sort_keys=False)
