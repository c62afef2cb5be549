"""FedAvg round loop with pluggable per-client defenses and snapshot recording.

Every client trains every round (full participation keeps the coalition's
noise cancellation exact). The server aggregates local parameters with
weights proportional to each client's original local dataset size, and
records model snapshots — the global broadcast and every uploaded local —
at round 1 and every snapshot_every rounds thereafter.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import models
from .assignment import (
    ClassAssignmentSchedule,
    CoalitionSpec,
    build_schedule,
    select_assigned_subset,
)
from .compensation import BanditState, RecycleConfig, Telemetry, compensated_local_update
from .data import ClientDataset
from .models import ModelSpec
from .perturbation import NoisePlan, apply_perturbation, build_noise_plan
from .rng import stream

DEFENSE_KINDS = ("none", "coalition", "grad_sparse", "grad_noise")


@dataclass(frozen=True)
class FlConfig:
    """Federation-level knobs; `coalition` is the set of defended clients."""

    num_clients: int
    rounds: int
    lr: float = 0.2
    local_epochs: int = 1
    batch_size: int = 32
    snapshot_every: int = 10
    defense: str = "none"
    coalition: tuple[int, ...] = ()
    seed: int = 0
    keep_rate: float = 0.1  # grad_sparse
    noise_sigma: float = 0.01  # grad_noise

    def __post_init__(self) -> None:
        if self.num_clients < 1 or self.rounds < 1 or self.snapshot_every < 1:
            raise ValueError("num_clients, rounds, snapshot_every must be >= 1")
        if self.defense not in DEFENSE_KINDS:
            raise ValueError(f"defense must be one of {DEFENSE_KINDS}")
        coalition = tuple(sorted(set(self.coalition)))
        object.__setattr__(self, "coalition", coalition)
        if coalition and not (0 <= coalition[0] and coalition[-1] < self.num_clients):
            raise ValueError("coalition ids must lie in [0, num_clients)")
        if self.defense != "none" and not coalition:
            raise ValueError(f"defense {self.defense!r} needs a non-empty coalition")


@dataclass(frozen=True)
class CoalitionDefenseConfig:
    """Knobs for the collaborative defense run by the coalition."""

    m_max: int
    m_min: int
    decay: str = "linear"
    recycle: RecycleConfig = field(default_factory=RecycleConfig)
    sigma: float = 0.1
    tail_ratio: float = 0.2


@dataclass
class RoundReport:
    round_t: int
    test_acc: float
    mean_train_loss: float
    client_sizes: tuple[int, ...]


class SnapshotStore:
    """Recorded model snapshots: global broadcast and uploaded locals per round."""

    def __init__(self, spec: ModelSpec, client_sizes: np.ndarray):
        self.spec = spec
        self.client_sizes = np.asarray(client_sizes, dtype=np.int64)
        self.rounds: list[int] = []
        self._globals: dict[int, np.ndarray] = {}
        self._locals: dict[int, dict[int, np.ndarray]] = {}

    @property
    def num_clients(self) -> int:
        return len(self.client_sizes)

    def record(self, round_t: int, global_params: np.ndarray, local_map: dict[int, np.ndarray]):
        self.rounds.append(round_t)
        self._globals[round_t] = global_params.copy()
        self._locals[round_t] = {k: v.copy() for k, v in local_map.items()}

    def global_at(self, round_t: int) -> np.ndarray:
        return self._globals[round_t]

    def local_at(self, round_t: int, client: int) -> np.ndarray:
        locals_t = self._locals[round_t]
        if client not in locals_t:
            raise KeyError(f"no snapshot of client {client} at round {round_t}")
        return locals_t[client]

    def save(self, path: str) -> None:
        spec = self.spec
        globals_stack = np.stack([self._globals[t] for t in self.rounds])
        locals_stack = np.stack(
            [np.stack([self._locals[t][k] for k in range(self.num_clients)]) for t in self.rounds]
        )
        np.savez_compressed(
            path,
            rounds=np.asarray(self.rounds, dtype=np.int64),
            client_sizes=self.client_sizes,
            spec=np.asarray([spec.input_dim, spec.hidden_dim, spec.num_classes], dtype=np.int64),
            globals=globals_stack,
            locals=locals_stack,
        )

    @classmethod
    def load(cls, path: str) -> "SnapshotStore":
        with np.load(path) as blob:
            d, h, n = (int(v) for v in blob["spec"])
            store = cls(ModelSpec(d, h, n), blob["client_sizes"])
            for i, t in enumerate(blob["rounds"]):
                store.record(
                    int(t),
                    blob["globals"][i],
                    {k: blob["locals"][i, k] for k in range(store.num_clients)},
                )
        return store


def aggregate_weighted(params_list, weights) -> np.ndarray:
    """Element-wise weighted average sum(w_k * theta_k) / sum(w_k)."""
    weights = np.asarray(weights, dtype=np.float64)
    if len(params_list) != len(weights):
        raise ValueError("params_list and weights differ in length")
    if len(params_list) == 0:
        raise ValueError("nothing to aggregate")
    if np.any(weights < 0) or weights.sum() <= 0:
        raise ValueError("weights must be non-negative with positive sum")
    length = len(params_list[0])
    if any(len(p) != length for p in params_list):
        raise ValueError("parameter vectors differ in length")
    out = np.zeros(length)
    for w, p in zip(weights, params_list):
        out += w * p
    return out / weights.sum()


def grad_sparsify(update: np.ndarray, keep_rate: float) -> np.ndarray:
    """Keep the top ceil(keep_rate * P) entries by |value| (ties to lower index)."""
    if not 0.0 < keep_rate <= 1.0:
        raise ValueError("keep_rate must be in (0, 1]")
    p = len(update)
    keep = int(np.ceil(keep_rate * p))
    order = np.argsort(-np.abs(update), kind="stable")
    out = np.zeros_like(update)
    out[order[:keep]] = update[order[:keep]]
    return out


def grad_gaussian_noise(update: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Add i.i.d. N(0, sigma^2) per coordinate; sigma=0 is the identity."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0.0:
        return update.copy()
    return update + rng.normal(0.0, sigma, size=len(update))


@dataclass
class TrainingState:
    """Mutable state threaded through run_round."""

    config: FlConfig
    spec: ModelSpec
    clients: list[ClientDataset]
    test_X: np.ndarray
    test_y: np.ndarray
    global_params: np.ndarray
    store: SnapshotStore
    reports: list[RoundReport] = field(default_factory=list)
    telemetry: list[Telemetry] = field(default_factory=list)
    schedule: ClassAssignmentSchedule | None = None
    noise_plan: NoisePlan | None = None
    bandits: dict[int, BanditState] = field(default_factory=dict)
    defense_cfg: CoalitionDefenseConfig | None = None
    threads: int = 1


def init_training(
    config: FlConfig,
    spec: ModelSpec,
    clients: list[ClientDataset],
    test_X: np.ndarray,
    test_y: np.ndarray,
    defense_cfg: CoalitionDefenseConfig | None = None,
    threads: int = 1,
) -> TrainingState:
    """Coordinator preparation: model init plus, for the coalition defense,
    the full class-assignment schedule and the precomputed noise plan."""
    if len(clients) != config.num_clients:
        raise ValueError("client list does not match num_clients")
    sizes = np.asarray([c.num_samples for c in clients], dtype=np.int64)
    state = TrainingState(
        config=config,
        spec=spec,
        clients=clients,
        test_X=np.asarray(test_X, dtype=np.float64),
        test_y=np.asarray(test_y, dtype=np.int64),
        global_params=models.init_params(spec, stream(config.seed, "init")),
        store=SnapshotStore(spec, sizes),
        threads=max(1, threads),
    )
    if config.defense == "coalition":
        if defense_cfg is None:
            raise ValueError("coalition defense requires a CoalitionDefenseConfig")
        state.defense_cfg = defense_cfg
        coalition_spec = CoalitionSpec(
            coalition_size=len(config.coalition),
            num_classes=spec.num_classes,
            m_max=defense_cfg.m_max,
            m_min=defense_cfg.m_min,
            decay=defense_cfg.decay,
            rounds=config.rounds,
        )
        state.schedule = build_schedule(coalition_spec, config.seed)
        state.noise_plan = build_noise_plan(
            weights=sizes[list(config.coalition)],
            sigma=defense_cfg.sigma,
            tail_ratio=defense_cfg.tail_ratio,
            rounds=config.rounds,
            seed=config.seed,
        )
        state.bandits = {
            k: BanditState.fresh(defense_cfg.recycle.num_intervals, defense_cfg.recycle.eta)
            for k in config.coalition
        }
    return state


def _local_update(state: TrainingState, client_id: int, round_t: int):
    """One client's round: returns (uploaded params, telemetry or None)."""
    cfg = state.config
    client = state.clients[client_id]
    train_rng = stream(cfg.seed, "train", client_id, round_t)
    in_coalition = client_id in cfg.coalition

    if cfg.defense == "coalition" and in_coalition:
        dcfg = state.defense_cfg
        member = cfg.coalition.index(client_id)
        classes = state.schedule.round_subsets(round_t)[member]
        assigned = select_assigned_subset(client, classes)
        params, tele = compensated_local_update(
            state.spec,
            state.global_params,
            client,
            assigned,
            round_t,
            dcfg.recycle,
            state.bandits[client_id],
            cfg.lr,
            cfg.local_epochs,
            cfg.batch_size,
            train_rng,
            stream(cfg.seed, "bandit", client_id, round_t),
        )
        if dcfg.sigma > 0:
            delta = float(state.noise_plan.round_deltas(round_t)[member])
            params = apply_perturbation(params, delta, dcfg.tail_ratio)
        return params, tele

    params = models.sgd_epochs(
        state.spec,
        state.global_params,
        client.train_X,
        client.train_y,
        cfg.lr,
        cfg.local_epochs,
        cfg.batch_size,
        train_rng,
    )
    if in_coalition and cfg.defense == "grad_sparse":
        params = state.global_params + grad_sparsify(params - state.global_params, cfg.keep_rate)
    elif in_coalition and cfg.defense == "grad_noise":
        noise_rng = stream(cfg.seed, "gradnoise", client_id, round_t)
        params = state.global_params + grad_gaussian_noise(
            params - state.global_params, cfg.noise_sigma, noise_rng
        )
    return params, None


def snapshot_due(round_t: int, snapshot_every: int) -> bool:
    """Round 1 is always snapshotted; later rounds at the snapshot cadence."""
    return round_t == 1 or round_t % snapshot_every == 0


def run_round(state: TrainingState, round_t: int) -> TrainingState:
    """Execute one federation round: local updates, snapshot, aggregation, report."""
    cfg = state.config
    if not 1 <= round_t <= cfg.rounds:
        raise ValueError(f"round {round_t} outside [1, {cfg.rounds}]")

    ids = list(range(cfg.num_clients))
    if state.threads > 1:
        with ThreadPoolExecutor(max_workers=state.threads) as pool:
            results = list(pool.map(lambda k: _local_update(state, k, round_t), ids))
    else:
        results = [_local_update(state, k, round_t) for k in ids]
    local_map = {k: res[0] for k, res in zip(ids, results)}
    for _, tele in results:
        if tele is not None:
            state.telemetry.append(tele)

    if snapshot_due(round_t, cfg.snapshot_every):
        state.store.record(round_t, state.global_params, local_map)

    sizes = state.store.client_sizes
    state.global_params = aggregate_weighted([local_map[k] for k in ids], sizes)

    loss_sum = 0.0
    sample_count = 0
    for client in state.clients:
        losses = models.per_sample_losses(
            state.spec, state.global_params, client.train_X, client.train_y
        )
        loss_sum += float(losses.sum())
        sample_count += len(losses)
    state.reports.append(
        RoundReport(
            round_t=round_t,
            test_acc=models.accuracy(state.spec, state.global_params, state.test_X, state.test_y),
            mean_train_loss=loss_sum / max(1, sample_count),
            client_sizes=tuple(int(s) for s in sizes),
        )
    )
    return state


def run_training(
    config: FlConfig,
    spec: ModelSpec,
    clients: list[ClientDataset],
    test_X: np.ndarray,
    test_y: np.ndarray,
    defense_cfg: CoalitionDefenseConfig | None = None,
    threads: int = 1,
) -> TrainingState:
    """Full deterministic training run; returns the final state with
    snapshots, round reports, compensation telemetry, and the schedule."""
    state = init_training(config, spec, clients, test_X, test_y, defense_cfg, threads)
    for t in range(1, config.rounds + 1):
        run_round(state, t)
    return state
