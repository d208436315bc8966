"""Federated round loop: local training on sampled clients, then weighted-delta aggregation."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from feded.data import Dataset, batch_iter
from feded.errors import ConfigError, ShapeError, TrainingDivergenceError
from feded.losses import (
    ClassPrior,
    LossResult,
    class_priors,
    loss_cal,
    loss_ce,
    loss_dis,
    loss_logit,
    prox_term,
)
from feded.metrics import RoundReport, evaluate, summarize_runs
from feded.nn import Model, OptimizerState, backward, forward, init_model, sgd_step
from feded.partition import Partition

log = logging.getLogger(__name__)

# stream tags keep the seeded generators for different purposes independent
_INIT, _SELECT, _SHUFFLE = 0, 1, 2


class Method(str, Enum):
    FEDAVG = "fedavg"
    FEDPROX = "fedprox"
    CALIBRATED = "calibrated"
    FEDED = "feded"
    FEDED_NO_DIS = "feded_no_dis"
    FEDED_NO_LOGIT = "feded_no_logit"

    @classmethod
    def parse(cls, name) -> "Method":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower().replace("-", "_"))
        except ValueError:
            raise ConfigError(
                f"unknown method {name!r}; choose from {', '.join(m.value for m in cls)}"
            ) from None

    @property
    def terms(self) -> tuple[bool, bool]:
        """(uses distillation, uses logit suppression) on top of the calibrated base."""
        return {
            Method.CALIBRATED: (False, False),
            Method.FEDED_NO_DIS: (False, True),
            Method.FEDED_NO_LOGIT: (True, False),
            Method.FEDED: (True, True),
        }.get(self, (False, False))

    @property
    def calibrated(self) -> bool:
        return self not in (Method.FEDAVG, Method.FEDPROX)


@dataclass(frozen=True)
class FedConfig:
    rounds: int = 50
    num_clients: int = 10
    participation: float = 1.0
    local_epochs: int = 5
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-5
    method: Method = Method.FEDED
    lam: float = 0.1
    mu: float = 0.01
    # scales the suppression term; 1.0 keeps the plain sum
    logit_weight: float = 1.0
    hidden: tuple[int, ...] = (256, 128)
    # global L2 gradient clipping before each SGD step; None disables it
    clip_norm: float | None = None
    master_seed: int = 0
    # True: divide by |D| over all clients; False: over this round's participants
    strict_weights: bool = False
    workers: int = 1
    diagnostics: bool = False

    def __post_init__(self):
        object.__setattr__(self, "method", Method.parse(self.method))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        for name in ("rounds", "num_clients", "local_epochs", "batch_size", "workers"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0 < self.participation <= 1:
            raise ConfigError(f"participation must lie in (0, 1], got {self.participation}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        for name in ("weight_decay", "lam", "mu", "logit_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigError(f"clip_norm must be positive, got {self.clip_norm}")
        if any(h < 1 for h in self.hidden):
            raise ConfigError(f"hidden widths must be positive, got {self.hidden}")

    @property
    def clients_per_round(self) -> int:
        # epsilon guards products like 0.29 * 100 = 28.999999999999996
        return max(math.floor(self.participation * self.num_clients + 1e-9), 1)

    def with_(self, **changes) -> "FedConfig":
        return replace(self, **changes)


@dataclass
class ClientState:
    id: int
    indices: np.ndarray
    prior: ClassPrior
    sample_count: int = field(init=False)

    def __post_init__(self):
        self.sample_count = int(len(self.indices))
        if self.sample_count == 0:
            raise ConfigError(f"client {self.id} has no samples")


def make_clients(train: Dataset, partition: Partition) -> list[ClientState]:
    return [ClientState(i, idx, class_priors(train.labels[idx], train.num_classes))
            for i, idx in enumerate(partition.assignments)]


def select_clients(num_clients: int, participation: float, round_idx: int, master_seed: int) -> list[int]:
    m = max(math.floor(participation * num_clients + 1e-9), 1)
    if not 1 <= m <= num_clients:
        raise ConfigError(f"cannot select {m} of {num_clients} clients")
    if m == num_clients:
        return list(range(num_clients))
    rng = np.random.default_rng([master_seed, _SELECT, round_idx])
    return sorted(rng.choice(num_clients, size=m, replace=False).tolist())


def method_loss(method: Method, logits, teacher_logits, labels, prior: ClassPrior,
                config: FedConfig) -> LossResult:
    if not method.calibrated:
        return loss_ce(logits, labels)
    use_dis, use_logit = method.terms
    res = loss_cal(logits, labels, prior)
    value, d = res.value, res.dlogits
    if use_dis and teacher_logits is not None:
        dis = loss_dis(logits, teacher_logits, prior.empty)
        value += config.lam * dis.value
        d = d + config.lam * dis.dlogits
    if use_logit:
        sup = loss_logit(logits, labels, prior)
        value += config.logit_weight * sup.value
        d = d + config.logit_weight * sup.dlogits
    return LossResult(value, d)


def local_update(global_model: Model, client: ClientState, train: Dataset, config: FedConfig,
                 round_idx: int) -> Model:
    """Run E epochs of minibatch SGD from the round-start global model.

    Momentum buffers start at zero every round. The global model is only read,
    so it doubles as the frozen distillation teacher.
    """
    method = config.method
    local = global_model.copy()
    state = OptimizerState.for_model(local, config.learning_rate, config.momentum, config.weight_decay)
    needs_teacher = method.terms[0] and len(client.prior.empty) > 1
    # overflow is caught by the explicit finiteness check below
    with np.errstate(over="ignore", invalid="ignore"):
        _train_epochs(local, global_model, client, train, config, round_idx, state, needs_teacher)
    return local


def _train_epochs(local, global_model, client, train, config, round_idx, state, needs_teacher):
    method = config.method
    for epoch in range(config.local_epochs):
        seed = [config.master_seed, _SHUFFLE, client.id, round_idx, epoch]
        for b, batch in enumerate(batch_iter(train, client.indices, config.batch_size, seed)):
            logits, cache = forward(local, batch.features)
            teacher = forward(global_model, batch.features)[0] if needs_teacher else None
            res = method_loss(method, logits, teacher, batch.labels, client.prior, config)
            grads = backward(local, cache, res.dlogits)
            value = res.value
            if method is Method.FEDPROX and config.mu > 0:
                prox, pgrads = prox_term(local, global_model, config.mu)
                value += prox
                grads = [g + pg for g, pg in zip(grads, pgrads)]
            if not (math.isfinite(value) and all(np.all(np.isfinite(g)) for g in grads)):
                raise TrainingDivergenceError(
                    f"non-finite loss on client {client.id}, round {round_idx}, "
                    f"epoch {epoch}, batch {b}"
                )
            if config.clip_norm is not None:
                grads = clip_by_global_norm(grads, config.clip_norm)
            sgd_step(local, grads, state)


def clip_by_global_norm(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return [g * scale for g in grads]


def aggregate(global_model: Model, locals_: Sequence[tuple[Model, int]], total: int | None = None) -> Model:
    """w + sum_i n_i / n * (w_i - w).

    ``total`` is the sample count over all clients; when omitted the weights
    are normalized over the participants passed in.
    """
    if not locals_:
        return global_model.copy()
    denom = float(total) if total is not None else float(sum(n for _, n in locals_))
    if denom <= 0:
        raise ConfigError("aggregation weights need a positive sample total")
    base = global_model.params()
    out = [p.copy() for p in base]
    for model, n in locals_:
        params = model.params()
        if len(params) != len(base) or any(a.shape != b.shape for a, b in zip(params, base)):
            raise ShapeError("local model shape does not match the global model")
        w = n / denom
        for acc, p, g in zip(out, params, base):
            acc += w * (p - g)
    return Model.from_params(out)


def initial_model(config: FedConfig, train: Dataset) -> Model:
    widths = [train.dim, *config.hidden, train.num_classes]
    seed = int(np.random.SeedSequence([config.master_seed, _INIT]).generate_state(1)[0])
    return init_model(widths, seed)


def run_experiment(config: FedConfig, train: Dataset, test: Dataset, partition: Partition,
                   model: Model | None = None) -> list[RoundReport]:
    """Train for ``config.rounds`` rounds, evaluating the global model after each."""
    if partition.num_clients != config.num_clients:
        raise ConfigError(f"partition has {partition.num_clients} clients, config expects {config.num_clients}")
    clients = make_clients(train, partition)
    total = sum(c.sample_count for c in clients) if config.strict_weights else None
    global_model = model.copy() if model is not None else initial_model(config, train)
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    reports = []
    try:
        for t in range(1, config.rounds + 1):
            start = time.perf_counter()
            chosen = select_clients(config.num_clients, config.participation, t, config.master_seed)

            def work(i, g=global_model, t=t):
                return local_update(g, clients[i], train, config, t)

            updated = list(pool.map(work, chosen)) if pool else [work(i) for i in chosen]
            new_global = aggregate(global_model, [(m, clients[i].sample_count) for m, i in zip(updated, chosen)], total)
            acc, cw = evaluate(new_global, test)
            per_client = None
            if config.diagnostics:
                per_client = [None] * config.num_clients
                for m, i in zip(updated, chosen):
                    per_client[i] = evaluate(m, test)[1].tolist()
            global_model = new_global
            reports.append(RoundReport(t, acc, cw.tolist(), chosen, per_client, time.perf_counter() - start))
            log.debug("round %d  method=%s  acc=%.4f", t, config.method.value, acc)
    finally:
        if pool:
            pool.shutdown()
    return reports


PartitionSource = Partition | Callable[[int], Partition]


def _partition_for(source: PartitionSource, seed: int) -> Partition:
    return source(seed) if callable(source) else source


def run_seeds(config: FedConfig, train: Dataset, test: Dataset, partition: PartitionSource,
              seeds: Sequence[int]) -> dict[int, list[RoundReport]]:
    return {s: run_experiment(config.with_(master_seed=s), train, test, _partition_for(partition, s))
            for s in seeds}


def final_accuracy(reports: list[RoundReport]) -> float:
    return reports[-1].global_accuracy


def compare(configs: dict[str, FedConfig], train: Dataset, test: Dataset, partition: PartitionSource,
            seeds: Sequence[int]) -> dict[str, dict]:
    """Run each named config over the same seeds and partitions."""
    out = {}
    for name, cfg in configs.items():
        runs = run_seeds(cfg, train, test, partition, seeds)
        finals = [final_accuracy(runs[s]) for s in seeds]
        mean, std = summarize_runs(finals)
        out[name] = {"config": cfg, "runs": runs, "final": finals, "mean": mean, "std": std}
        log.debug("%-16s %.4f +- %.4f", name, mean, std)
    return out


ABLATION_ROWS = {
    "calibrated": Method.CALIBRATED,
    "logit_only": Method.FEDED_NO_DIS,
    "dis_only": Method.FEDED_NO_LOGIT,
    "feded": Method.FEDED,
}


def run_ablation_suite(base_config: FedConfig, train: Dataset, test: Dataset, partition: PartitionSource,
                       seeds: Sequence[int] | None = None) -> dict[str, dict]:
    """Four rows: neither extra term, logit suppression only, distillation only, both.

    Each row's entry gains ``delta``: its mean accuracy minus the first row's.
    """
    seeds = list(seeds) if seeds is not None else [base_config.master_seed]
    res = compare({k: base_config.with_(method=m) for k, m in ABLATION_ROWS.items()},
                  train, test, partition, seeds)
    first = res["calibrated"]["mean"]
    for row in res.values():
        row["delta"] = row["mean"] - first
    return res


LAMBDA_GRID = (0.05, 0.1, 0.25, 0.5, 1.0)


def run_lambda_sweep(base_config: FedConfig, train: Dataset, test: Dataset, partition: PartitionSource,
                     seeds: Sequence[int] | None = None, grid: Sequence[float] = LAMBDA_GRID) -> dict[str, dict]:
    seeds = list(seeds) if seeds is not None else [base_config.master_seed]
    return compare({f"lambda={lam:g}": base_config.with_(method=Method.FEDED, lam=float(lam)) for lam in grid},
                   train, test, partition, seeds)
