"""Synchronous data-parallel training loop.

Each iteration every worker: takes its disjoint shard of the global batch,
runs forward/backward (the computation phase), aggregates gradients through
the configured collective (the communication phase, which includes the
pack/unpack copies), divides by the worker count, and applies the same SGD
update. All workers hold bit-identical weights after every iteration.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from .collectives import CommGroup, allreduce_chunkwise, pack, ring_allreduce, tree_allreduce, unpack
from .data import make_blobs
from .errors import RingtrainError
from .model import GradientSet, RealModel
from .transport.net import NetProfile
from .transport.sim import SimCluster

AGGREGATIONS = ("ring_packed", "tree_packed", "ring_chunkwise")
LR_SCALINGS = ("none", "linear")

# virtual-clock compute model for sim-mode runs: seconds = batch * params / throughput
SIM_COMPUTE_THROUGHPUT = 1e8   # weight elements per second
SIM_PACK_BANDWIDTH = 1.9e8     # bytes per second for pack/unpack copies

METRICS_HEADER = "iter,rank,t_comp_s,t_comm_s,loss"


class TrainingError(RingtrainError):
    """A rank failed mid-run; the message names the rank and phase."""


@dataclass
class TrainingConfig:
    global_batch: int
    per_device_batch: int
    workers: int
    base_lr: float = 0.01
    weight_decay: float = 0.0002
    iterations: int = 100
    seed: int = 0
    aggregation: str = "ring_packed"
    lr_scaling: str = "none"
    lr_reference_batch: int = 32
    model_dims: list[int] = field(default_factory=lambda: [2, 16, 2])
    dataset_size: int = 512
    dataset_classes: int = 2
    dataset_spread: float = 0.6

    def validate(self) -> "TrainingConfig":
        if self.global_batch != self.per_device_batch * self.workers:
            raise ValueError(
                f"global_batch {self.global_batch} != per_device_batch "
                f"{self.per_device_batch} * workers {self.workers}")
        if self.per_device_batch < 1:
            raise ValueError("per_device_batch must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
        if self.lr_scaling not in LR_SCALINGS:
            raise ValueError(f"lr_scaling must be one of {LR_SCALINGS}")
        if self.dataset_size < self.global_batch:
            raise ValueError("dataset must hold at least one global batch")
        if self.model_dims[-1] != self.dataset_classes:
            raise ValueError("model output dim must equal dataset class count")
        return self

    @classmethod
    def from_json(cls, path: str | Path) -> "TrainingConfig":
        return cls(**json.loads(Path(path).read_text())).validate()

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n")


@dataclass
class IterationMetrics:
    iteration: int
    rank: int
    t_comp: float
    t_comm: float
    loss: float

    def csv_row(self) -> str:
        return f"{self.iteration},{self.rank},{self.t_comp!r},{self.t_comm!r},{self.loss!r}"


def scale_lr(base_lr: float, batch: int, reference_batch: int, mode: str = "linear") -> float:
    """Linear large-batch scaling: lr * B / B_ref (or base_lr when mode is none)."""
    if batch < 1 or reference_batch < 1:
        raise ValueError("batch sizes must be >= 1")
    if mode == "none":
        return base_lr
    if mode == "linear":
        return base_lr * batch / reference_batch
    raise ValueError(f"unknown lr scaling mode {mode!r}")


def shard_indices(iteration: int, rank: int, workers: int, per_device: int,
                  dataset_size: int) -> np.ndarray:
    """Deterministic disjoint shard: (iter*B + rank*b + j) mod dataset_size."""
    batch = per_device * workers
    base = iteration * batch + rank * per_device
    return (base + np.arange(per_device)) % dataset_size


def shard_batch(dataset: tuple[np.ndarray, np.ndarray], iteration: int, rank: int,
                workers: int, per_device: int) -> tuple[np.ndarray, np.ndarray]:
    inputs, labels = dataset
    idx = shard_indices(iteration, rank, workers, per_device, inputs.shape[0])
    return inputs[idx], labels[idx]


class Worker:
    """One rank's training loop over a transport endpoint.

    ``mode`` selects the timing source: "real" uses the wall clock around the
    actual computation; "sim" charges modeled durations to the endpoint's
    virtual clock (compute from a throughput proxy, communication from the
    simulated transfers plus modeled pack/unpack copies).
    """

    def __init__(self, config: TrainingConfig, endpoint, mode: str = "real"):
        config.validate()
        if mode not in ("real", "sim"):
            raise ValueError("mode must be 'real' or 'sim'")
        self.config = config
        self.endpoint = endpoint
        self.mode = mode
        self.group = CommGroup(endpoint)
        self.model = RealModel(config.model_dims, seed=config.seed)
        self.dataset = make_blobs(config.dataset_size, config.model_dims[0],
                                  config.dataset_classes, seed=config.seed + 1,
                                  spread=config.dataset_spread)
        self.lr = scale_lr(config.base_lr, config.global_batch,
                           config.lr_reference_batch, config.lr_scaling)
        self.last_local_grads: GradientSet | None = None
        self.last_mean_grads: GradientSet | None = None

    def _aggregate(self, grads: GradientSet) -> GradientSet:
        agg = self.config.aggregation
        if agg == "ring_chunkwise":
            return allreduce_chunkwise(grads, self.group, ring_allreduce)
        buf = pack(grads)
        if self.mode == "sim":
            self.endpoint.advance(buf.data.nbytes / SIM_PACK_BANDWIDTH)
        alg = ring_allreduce if agg == "ring_packed" else tree_allreduce
        buf = alg(buf, self.group)
        if self.mode == "sim":
            self.endpoint.advance(buf.data.nbytes / SIM_PACK_BANDWIDTH)
        return unpack(buf)

    def train_step(self, iteration: int) -> IterationMetrics:
        cfg = self.config
        rank = self.endpoint.rank
        inputs, labels = shard_batch(self.dataset, iteration, rank,
                                     cfg.workers, cfg.per_device_batch)
        phase = "compute"
        try:
            if self.mode == "real":
                t0 = time.perf_counter()
                loss, cache = self.model.forward(inputs, labels)
                grads = self.model.backward(cache)
                t1 = time.perf_counter()
                phase = "aggregate"
                summed = self._aggregate(grads)
                t2 = time.perf_counter()
                t_comp, t_comm = t1 - t0, t2 - t1
            else:
                loss, cache = self.model.forward(inputs, labels)
                grads = self.model.backward(cache)
                t_comp = cfg.per_device_batch * self.model.param_count() / SIM_COMPUTE_THROUGHPUT
                self.endpoint.advance(t_comp)
                phase = "aggregate"
                clock0 = self.endpoint.clock
                summed = self._aggregate(grads)
                t_comm = self.endpoint.clock - clock0
        except Exception as exc:
            raise TrainingError(
                f"rank {rank} failed during {phase} at iteration {iteration}: {exc}"
            ) from exc

        mean = GradientSet([c / cfg.workers for c in summed])
        self.last_local_grads = grads
        self.last_mean_grads = mean
        self.model.sgd_update(mean, lr=self.lr, weight_decay=cfg.weight_decay)
        return IterationMetrics(iteration, rank, t_comp, t_comm, float(loss))

    def run(self) -> list[IterationMetrics]:
        return [self.train_step(it) for it in range(self.config.iterations)]


class LocalEndpoint:
    """Degenerate single-rank endpoint (K=1 runs and unit tests)."""

    rank = 0
    size = 1
    nonblocking_send = True

    def __init__(self):
        self.clock = 0.0
        self.n_sends = 0
        self.n_recvs = 0

    def advance(self, seconds: float) -> None:
        self.clock += seconds

    def send(self, dst, tag, payload):  # pragma: no cover - no peers exist
        raise ValueError("single-rank endpoint has no peers")

    def recv(self, src, tag, timeout=None):  # pragma: no cover - no peers exist
        raise ValueError("single-rank endpoint has no peers")


def run_training_sim(config: TrainingConfig, profile: NetProfile | None = None
                     ) -> tuple[list[list[IterationMetrics]], list[RealModel]]:
    """Run all K workers as simulated ranks; returns per-rank metrics and models."""
    config.validate()
    if profile is None:
        profile = NetProfile(base_bandwidth=940.0, latency=1e-4, seed=config.seed)
    if config.workers == 1:
        worker = Worker(config, LocalEndpoint(), mode="sim")
        return [worker.run()], [worker.model]
    cluster = SimCluster(config.workers, profile, seed=config.seed)
    workers = [Worker(config, ep, mode="sim") for ep in cluster.endpoints]

    def task(endpoint):
        return workers[endpoint.rank].run()

    metrics = cluster.run(task)
    return metrics, [w.model for w in workers]


def run_training(config: TrainingConfig, endpoint, mode: str = "real"
                 ) -> tuple[list[IterationMetrics], RealModel]:
    """Run this rank's share of the training; returns (metrics stream, model)."""
    worker = Worker(config, endpoint, mode=mode)
    return worker.run(), worker.model


def write_metrics_csv(metrics: list[IterationMetrics], path: str | Path) -> None:
    lines = [METRICS_HEADER] + [m.csv_row() for m in metrics]
    Path(path).write_text("\n".join(lines) + "\n")
