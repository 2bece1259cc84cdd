"""Federated orchestration: local SGD, periodic pulls and weighted aggregation.

Every random draw comes from a stream keyed by (seed, purpose, time, device...)
so outcomes do not depend on the order devices or pairs are processed in.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .config import PULL_STRATEGIES
from .exchange import (ReserveStore, approximate_dataset, pull_sample, select_reserve,
                       select_reserve_random, uniform_pull)
from .metrics import DelayParams, transmission_delay
from .model import AugmentationSpec, EncoderModel, batch_gradient, augment_rows, triplet_loss, embed
from .topology import Topology, generate_rgg, neighbors

log = logging.getLogger(__name__)

# stream tags
INIT, SGD, APPROX, PULL, RESERVE, TOPOLOGY, GLOBAL_SAMPLE = 1, 2, 3, 4, 5, 9, 10


def stream(seed, *key):
    return np.random.default_rng([int(seed)] + [int(k) for k in key])


@dataclass
class Schedule:
    T: int = 2500
    T_a: int = 50
    T_p: int = 10
    lambda_slope: float = 6.0
    lambda_offset: float = 4.0

    def __post_init__(self):
        if min(self.T, self.T_a, self.T_p) < 1:
            raise ValueError("T, T_a and T_p must be >= 1")

    def temperature(self, t):
        return self.lambda_slope * t / self.T + self.lambda_offset

    def is_pull(self, t):
        return t % self.T_p == 0

    def is_aggregation(self, t):
        return t % self.T_a == 0

    @property
    def has_pulls(self):
        # a pull at t = T would feed no further training step
        return self.T_p < self.T


@dataclass
class DeviceState:
    id: int
    initial_ids: np.ndarray
    model: EncoderModel
    pulled_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    reserve_stores: Dict[int, ReserveStore] = field(default_factory=dict)
    cardinality_history: List[int] = field(default_factory=list)

    def training_ids(self):
        if len(self.pulled_ids) == 0:
            return self.initial_ids
        ids = np.concatenate([self.initial_ids, self.pulled_ids])
        _, first = np.unique(ids, return_index=True)
        return ids[np.sort(first)]


@dataclass
class RunHistory:
    loss_log: list = field(default_factory=list)          # (t, device, loss)
    pull_log: list = field(default_factory=list)          # one dict per (t, i, j) pull
    eval_log: list = field(default_factory=list)          # one dict per evaluation
    aggregation_log: list = field(default_factory=list)   # (gamma, t, global_loss, weights)
    label_variance_trace: list = field(default_factory=list)  # (t, mean variance)
    uplink_transfers: int = 0
    d2d_model_transfers: int = 0
    points_pushed: int = 0
    points_pulled: int = 0
    exchange_events: int = 0
    compute_seconds: float = 0.0
    global_model: Optional[EncoderModel] = None
    T: int = 0

    def time_averaged_label_variance(self):
        """Mean over steps 1..T of the label variance of the set used at each step."""
        if not self.label_variance_trace:
            return float("nan")
        times = [t for t, _ in self.label_variance_trace] + [self.T]
        total = 0.0
        for k, (t, v) in enumerate(self.label_variance_trace):
            total += v * (min(times[k + 1], self.T) - t)
        return total / self.T

    def accuracy_curve(self):
        return np.array([[r["t"], r["accuracy"]] for r in self.eval_log if r["accuracy"] is not None])


def aggregate(models, weights):
    """Weighted elementwise mean of equally shaped models."""
    if len(models) == 0 or len(models) != len(weights):
        raise ValueError("need one weight per model")
    w = np.asarray(weights, dtype=float)
    if np.any(w <= 0):
        raise ValueError("aggregation weights must be positive")
    w = w / w.sum()
    dims = models[0].layer_dims
    if any(m.layer_dims != dims for m in models):
        raise ValueError("models differ in shape")
    weights_out = [sum(wk * m.weights[l] for wk, m in zip(w, models)) for l in range(len(dims) - 1)]
    biases_out = [sum(wk * m.biases[l] for wk, m in zip(w, models)) for l in range(len(dims) - 1)]
    return EncoderModel(dims, weights_out, biases_out, models[0].activation)


def average_cardinality(cardinality_history, gamma, T_a):
    """Mean training-set size over steps (gamma-1)*T_a+1 .. gamma*T_a.

    ``cardinality_history[t-1]`` is the size at step t.
    """
    lo, hi = (gamma - 1) * T_a, gamma * T_a
    if gamma < 1 or len(cardinality_history) < hi:
        raise ValueError(f"history of length {len(cardinality_history)} does not cover step {hi}")
    return float(np.mean(cardinality_history[lo:hi]))


def global_loss_estimate(model, anchors, positives, negatives, m=1.0):
    if len(anchors) == 0:
        raise ValueError("empty triplet sample")
    return float(np.mean(triplet_loss(embed(model, anchors), embed(model, positives),
                                      embed(model, negatives), m)))


class Federation:
    """One simulated federation over unlabeled device datasets.

    ``monitor`` is an optional harness object with ``training_sets(t, id_sets)``
    and ``evaluate(t, model)``; ids index the concatenation of ``device_data``.
    """

    def __init__(self, device_data, topology: Topology, cfg, monitor=None):
        if len(device_data) != topology.n:
            raise ValueError("one dataset per topology node required")
        self.cfg = cfg
        self.topology = topology
        self.monitor = monitor
        self.schedule = Schedule(cfg.T, cfg.T_a, cfg.T_p, cfg.lambda_slope, cfg.lambda_offset)
        sizes = [len(d) for d in device_data]
        self.pool = np.concatenate([np.asarray(d, dtype=float) for d in device_data])
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        dims = cfg.layer_dims(self.pool.shape[1])
        self.global_model = EncoderModel.init(dims, stream(cfg.seed, INIT), cfg.activation)
        self.devices = [DeviceState(i, np.arange(offsets[i], offsets[i + 1]), self.global_model.copy())
                        for i in range(topology.n)]
        self.neighbors = [sorted(neighbors(topology, i)) for i in range(topology.n)]
        sigma = cfg.noise_scale * self.pool.std(0)
        self.augmentations = [
            AugmentationSpec("noise", sigma=sigma),
            AugmentationSpec("scale", low=cfg.scale_range[0], high=cfg.scale_range[1]),
            AugmentationSpec("mask", fraction=cfg.mask_fraction),
        ]
        self.delay = DelayParams(cfg.rate_bps, cfg.model_bits, cfg.data_bits,
                                 cfg.param_count or self.global_model.n_params, self.pool.shape[1])
        self.approx: Dict[int, np.ndarray] = {}
        self.history = RunHistory(T=cfg.T)
        self._global_sample = self._sample_global_triplets()

    @property
    def pulls_enabled(self):
        return self.cfg.strategy in PULL_STRATEGIES and self.cfg.budget > 0 and self.schedule.has_pulls

    def _sample_global_triplets(self):
        rng = stream(self.cfg.seed, GLOBAL_SAMPLE)
        n = len(self.pool)
        k = min(self.cfg.global_loss_sample, n)
        a = rng.choice(n, size=k, replace=False)
        neg = rng.integers(n - 1, size=k)
        neg += neg >= a
        anchors = self.pool[a]
        return anchors, augment_rows(anchors, self.augmentations, rng), self.pool[neg]

    # protocol steps

    def push_reserves(self):
        select = select_reserve if self.cfg.reserve_selection == "kmeans" else select_reserve_random
        for i, dev in enumerate(self.devices):
            X = self.pool[dev.initial_ids]
            for j in self.neighbors[i]:
                pts, idx = select(X, self.cfg.K_reserve, stream(self.cfg.seed, RESERVE, i, j), return_indices=True)
                self.devices[j].reserve_stores[i] = ReserveStore(i, j, pts, dev.initial_ids[idx])
                self.history.points_pushed += len(pts)

    def refresh_approximations(self, t):
        for j, dev in enumerate(self.devices):
            ids = dev.training_ids()
            _, idx = approximate_dataset(self.pool[ids], self.cfg.K_approx, stream(self.cfg.seed, APPROX, t, j),
                                         return_indices=True)
            self.approx[j] = ids[idx]

    def pull_event(self, t):
        cfg = self.cfg
        lam = self.schedule.temperature(t)
        new_buffers = {}
        for i, dev in enumerate(self.devices):
            got = []
            for j in self.neighbors[i]:
                cand = self.approx[j]
                n = min(cfg.budget, len(cand))
                rng = stream(cfg.seed, PULL, t, i, j)
                if cfg.strategy == "uniform":
                    _, plan = uniform_pull(self.pool[cand], n, rng, cand)
                else:
                    model = dev.model if cfg.strategy == "cf-cl-localmodel" else self.global_model
                    reserve = self.devices[j].reserve_stores[i].points
                    _, plan = pull_sample(self.pool[cand], reserve, model, n, lam, cfg.cluster_count,
                                          rng, self.augmentations, cfg.margin, cand)
                    if cfg.strategy == "cf-cl-localmodel":
                        self.history.d2d_model_transfers += 1
                got.append(cand[plan.chosen])
                self.history.points_pulled += n
                self._log_pull(t, i, j, n, plan)
            pulled = np.concatenate(got) if got else np.zeros(0, dtype=int)
            if cfg.buffer == "unlimited":
                pulled = np.concatenate([dev.pulled_ids, pulled])
            new_buffers[i] = pulled
        for i, pulled in new_buffers.items():
            self.devices[i].pulled_ids = pulled
        self.history.exchange_events += 1

    def _log_pull(self, t, i, j, n, plan):
        rec = {"t": t, "i": i, "j": j, "n": n, "macro": plan.macro_probs.tolist(),
               "entropy": plan.entropy()}
        if self.cfg.log_candidates:
            rec["candidate_ids"] = plan.candidate_ids
            rec["probabilities"] = plan.composed
            rec["chosen"] = plan.chosen
        self.history.pull_log.append(rec)

    def local_step(self, t, dev):
        cfg = self.cfg
        ids = dev.training_ids()
        dev.cardinality_history.append(len(ids))
        rng = stream(cfg.seed, SGD, t, dev.id)
        n = len(ids)
        b = min(cfg.batch_size, n)
        a = rng.choice(n, size=b, replace=False)
        neg = rng.integers(n - 1, size=b)
        neg += neg >= a
        X = self.pool[ids]
        anchors = X[a]
        positives = augment_rows(anchors, self.augmentations, rng)
        loss, grad = batch_gradient(dev.model, anchors, positives, X[neg], cfg.margin)
        dev.model = dev.model - grad * cfg.learning_rate
        self.history.loss_log.append((t, dev.id, loss))

    def aggregate_and_broadcast(self, t):
        gamma = t // self.cfg.T_a
        weights = [average_cardinality(d.cardinality_history, gamma, self.cfg.T_a) for d in self.devices]
        self.global_model = aggregate([d.model for d in self.devices], weights)
        for d in self.devices:
            d.model = self.global_model.copy()
        self.history.uplink_transfers += len(self.devices)
        gl = global_loss_estimate(self.global_model, *self._global_sample, self.cfg.margin)
        self.history.aggregation_log.append((gamma, t, gl, weights))
        return gamma

    def cumulative_delay(self):
        h = self.history
        return (transmission_delay(self.delay, h.uplink_transfers, h.points_pushed + h.points_pulled,
                                   h.d2d_model_transfers)
                + self.cfg.overhead_per_event_s * h.exchange_events)

    def _observe_sets(self, t):
        if self.monitor is not None:
            v = self.monitor.training_sets(t, [d.training_ids() for d in self.devices])
            self.history.label_variance_trace.append((t, v))
            return v
        return None

    def _evaluate(self, gamma, t, label_var):
        acc = None if self.monitor is None else self.monitor.evaluate(t, self.global_model)
        self.history.eval_log.append({"gamma": gamma, "t": t, "accuracy": acc,
                                      "label_variance_mean": label_var,
                                      "cumulative_delay_s": self.cumulative_delay()})

    def run(self):
        cfg, sched = self.cfg, self.schedule
        if self.pulls_enabled:
            start = time.perf_counter()
            if cfg.strategy != "uniform":
                self.push_reserves()
            self.refresh_approximations(0)
            self.history.compute_seconds += time.perf_counter() - start
        label_var = self._observe_sets(0)
        self._evaluate(0, 0, label_var)
        for t in range(1, sched.T + 1):
            for dev in self.devices:
                self.local_step(t, dev)
            if sched.is_aggregation(t):
                gamma = self.aggregate_and_broadcast(t)
                if self.pulls_enabled:
                    start = time.perf_counter()
                    self.refresh_approximations(t)
                    self.history.compute_seconds += time.perf_counter() - start
                if gamma % cfg.eval_stride == 0:
                    self._evaluate(gamma, t, label_var)
            if self.pulls_enabled and sched.is_pull(t) and t < sched.T:
                start = time.perf_counter()
                self.pull_event(t)
                self.history.compute_seconds += time.perf_counter() - start
                label_var = self._observe_sets(t)
        self.history.global_model = self.global_model
        log.info("run finished: %d aggregations, %d points pulled", len(self.history.aggregation_log),
                 self.history.points_pulled)
        return self.history


def build_topology(cfg):
    if cfg.topology == "explicit":
        return Topology.from_adjacency(cfg.adjacency, cfg.devices)
    if cfg.devices == 1:
        return Topology(1, np.zeros((1, 1), dtype=bool))
    return generate_rgg(cfg.devices, cfg.target_degree, stream(cfg.seed, TOPOLOGY), cfg.degree_tolerance)


def run_simulation(cfg, return_federation=False):
    """Assemble data and topology for ``cfg`` and run it.

    Labels stay with the monitor; the federation only receives point arrays.
    """
    from .data import assemble_data
    from .metrics import LabelMonitor

    cfg.validate()
    parts, probe_train, probe_test = assemble_data(cfg)
    labels = np.concatenate([p.labels for p in parts])
    monitor = LabelMonitor(labels, cfg.classes, (probe_train.points, probe_train.labels),
                           (probe_test.points, probe_test.labels), cfg.probe_iters, cfg.probe_lr,
                           cfg.probe_batch, cfg.seed)
    fed = Federation([p.points for p in parts], build_topology(cfg), cfg, monitor)
    history = fed.run()
    return (history, fed) if return_federation else history
