"""Trajectory-based membership-inference attacks over recorded snapshots.

Every attack consumes per-sample measurement trajectories (loss, true-class
confidence, or gradient cosine) across the recorded rounds of a training
run and emits one score per sample, with the convention that a higher
score means "more likely a member".

Targets: the global model series, one client's local model series, or the
weighted aggregate of the defender coalition's locals (the adaptive
attacker's target, which the cancellation property makes identical with
and without perturbation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import models
from .data import EvalPools, LabeledDataset
from .federation import SnapshotStore, aggregate_weighted
from .metrics import DEFAULT_FPR_LEVELS, auc_score, tpr_at_fpr

MEASUREMENT_KINDS = ("loss", "confidence", "grad_cosine", "entropy", "max_prob")
ATTACK_NAMES = ("loss_series", "avg_cosine", "fta_l", "fta_c", "fedmia_i", "fedmia_ii")

OUT_STD_FLOOR = 1e-6


@dataclass
class TrajectoryRecord:
    """One sample's measurement series across the recorded rounds."""

    sample_id: int
    kind: str
    rounds: np.ndarray
    values: np.ndarray


@dataclass
class OutDistribution:
    """Per-round mean/std of a sample's measurement under non-target locals."""

    rounds: np.ndarray
    mean: np.ndarray
    std: np.ndarray


@dataclass
class AttackResult:
    attack: str
    target: str
    scores: np.ndarray
    labels: np.ndarray  # 1 = member
    auc: float
    tpr_at_fpr: dict[float, float]


# ---------------------------------------------------------------------------
# measurement extraction
# ---------------------------------------------------------------------------


def _target_params(store: SnapshotStore, selector, round_t: int) -> np.ndarray:
    """Resolve a selector to model parameters at one recorded round.

    selector: "global", ("local", k), or ("coalition", ids).
    """
    if selector == "global":
        return store.global_at(round_t)
    tag = selector[0]
    if tag == "local":
        return store.local_at(round_t, selector[1])
    if tag == "coalition":
        ids = list(selector[1])
        params = [store.local_at(round_t, k) for k in ids]
        return aggregate_weighted(params, store.client_sizes[ids])
    raise ValueError(f"unknown selector {selector!r}")


def _static_measurements(spec, params, x, y, kind) -> np.ndarray:
    probs = models.predict_proba(spec, params, x)
    idx = np.arange(len(y))
    if kind == "loss":
        return models.per_sample_losses(spec, params, x, y)
    if kind == "confidence":
        return probs[idx, y]
    if kind == "entropy":
        safe = np.clip(probs, 1e-300, 1.0)
        return -(probs * np.log(safe)).sum(axis=1)
    if kind == "max_prob":
        return probs.max(axis=1)
    raise ValueError(f"unknown measurement kind {kind!r}")


def _grad_matrix(spec, params, x, y) -> np.ndarray:
    """Per-sample cross-entropy gradients stacked into an (n, P) matrix."""
    return np.stack(
        [models.per_sample_grad(spec, params, x[i], int(y[i])) for i in range(len(y))]
    )


def _cosine_rows(grads: np.ndarray, direction: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(grads, axis=1) * np.linalg.norm(direction)
    dots = grads @ direction
    out = np.zeros(len(grads))
    ok = norms > 0
    out[ok] = dots[ok] / norms[ok]
    return out


def trajectory_matrix(
    store: SnapshotStore,
    selector,
    x: np.ndarray,
    y: np.ndarray,
    kind: str,
) -> tuple[np.ndarray, np.ndarray]:
    """(values (n, rounds), recorded rounds) for a batch of query samples.

    grad_cosine is the cosine between each sample's gradient at the round's
    global model and the selected model's update direction for that round
    (selected params minus the global broadcast).
    """
    if kind not in MEASUREMENT_KINDS:
        raise ValueError(f"unknown measurement kind {kind!r}")
    if not store.rounds:
        raise ValueError("snapshot store is empty")
    rounds = np.asarray(store.rounds, dtype=np.int64)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    cols = []
    for t in store.rounds:
        if kind == "grad_cosine":
            global_t = store.global_at(t)
            grads = _grad_matrix(store.spec, global_t, x, y)
            if selector == "global":
                all_locals = [store.local_at(t, k) for k in range(store.num_clients)]
                target = aggregate_weighted(all_locals, store.client_sizes)
            else:
                target = _target_params(store, selector, t)
            cols.append(_cosine_rows(grads, target - global_t))
        else:
            params = _target_params(store, selector, t)
            cols.append(_static_measurements(store.spec, params, x, y, kind))
    return np.column_stack(cols), rounds


def extract_trajectory(
    store: SnapshotStore,
    selector,
    dataset: LabeledDataset,
    sample_ids: np.ndarray,
    kind: str,
) -> list[TrajectoryRecord]:
    """Measurement trajectories for the given dataset sample ids."""
    sample_ids = np.asarray(sample_ids, dtype=np.int64)
    values, rounds = trajectory_matrix(
        store, selector, dataset.X[sample_ids], dataset.y[sample_ids], kind
    )
    return [
        TrajectoryRecord(sample_id=int(sid), kind=kind, rounds=rounds, values=values[i])
        for i, sid in enumerate(sample_ids)
    ]


# ---------------------------------------------------------------------------
# attack scoring
# ---------------------------------------------------------------------------


def _as_matrix(records: list[TrajectoryRecord]) -> tuple[np.ndarray, np.ndarray]:
    if not records:
        raise ValueError("no trajectory records")
    rounds = records[0].rounds
    if len(rounds) == 0:
        raise ValueError("empty trajectories")
    return np.stack([r.values for r in records]), np.asarray(rounds, dtype=np.float64)


def attack_loss_series(records: list[TrajectoryRecord]) -> np.ndarray:
    """Score = -mean(loss trajectory): members sit at lower loss."""
    values, _ = _as_matrix(records)
    return -values.mean(axis=1)


def attack_avg_cosine(records: list[TrajectoryRecord]) -> np.ndarray:
    """Score = -mean of first differences of the gradient-cosine trajectory."""
    values, _ = _as_matrix(records)
    if values.shape[1] < 2:
        raise ValueError("need at least 2 recorded rounds")
    return -np.diff(values, axis=1).mean(axis=1)


def _ols_slope(values: np.ndarray, rounds: np.ndarray) -> np.ndarray:
    r = rounds - rounds.mean()
    denom = float(r @ r)
    if denom == 0.0:
        raise ValueError("need at least 2 distinct rounds")
    centered = values - values.mean(axis=1, keepdims=True)
    return centered @ r / denom


def attack_fta(records: list[TrajectoryRecord], kind: str) -> np.ndarray:
    """Trajectory-slope attack: score = -slope of loss, or +slope of confidence."""
    values, rounds = _as_matrix(records)
    if values.shape[1] < 2:
        raise ValueError("need at least 2 recorded rounds")
    slope = _ols_slope(values, rounds)
    if kind == "loss":
        return -slope
    if kind == "confidence":
        return slope
    raise ValueError(f"fta kind must be loss or confidence, got {kind!r}")


def build_out_distribution(
    store: SnapshotStore,
    x: np.ndarray,
    y: int,
    target_client: int,
    kind: str,
) -> OutDistribution:
    """Reference statistics of one sample under all non-target local models.

    Uses the population standard deviation, floored at 1e-6.
    """
    others = [k for k in range(store.num_clients) if k != target_client]
    if len(others) < 2:
        raise ValueError("need at least 2 non-target clients")
    means, stds = [], []
    xb = np.asarray(x, dtype=np.float64)[None, :]
    yb = np.asarray([int(y)])
    for t in store.rounds:
        vals = []
        for k in others:
            if kind == "grad_cosine":
                global_t = store.global_at(t)
                grads = _grad_matrix(store.spec, global_t, xb, yb)
                vals.append(float(_cosine_rows(grads, store.local_at(t, k) - global_t)[0]))
            else:
                vals.append(
                    float(_static_measurements(store.spec, store.local_at(t, k), xb, yb, kind)[0])
                )
        arr = np.asarray(vals)
        means.append(arr.mean())
        stds.append(max(arr.std(), OUT_STD_FLOOR))
    return OutDistribution(
        rounds=np.asarray(store.rounds, dtype=np.int64),
        mean=np.asarray(means),
        std=np.asarray(stds),
    )


def _out_stats_matrix(store, x, y, exclude_clients, kind):
    """Vectorized OUT statistics for a batch: mean/std arrays of shape (n, rounds)."""
    others = [k for k in range(store.num_clients) if k not in exclude_clients]
    if len(others) < 2:
        raise ValueError("need at least 2 non-target clients")
    per_round_means, per_round_stds = [], []
    for t in store.rounds:
        cols = []
        if kind == "grad_cosine":
            global_t = store.global_at(t)
            grads = _grad_matrix(store.spec, global_t, x, y)
            for k in others:
                cols.append(_cosine_rows(grads, store.local_at(t, k) - global_t))
        else:
            for k in others:
                cols.append(_static_measurements(store.spec, store.local_at(t, k), x, y, kind))
        stack = np.stack(cols)  # (others, n)
        per_round_means.append(stack.mean(axis=0))
        per_round_stds.append(np.maximum(stack.std(axis=0), OUT_STD_FLOOR))
    return np.column_stack(per_round_means), np.column_stack(per_round_stds)


def attack_fedmia(
    store: SnapshotStore,
    dataset: LabeledDataset,
    sample_ids: np.ndarray,
    target_selector,
    variant: str,
    exclude_clients=None,
) -> np.ndarray:
    """Likelihood-ratio-style attack: sum of signed per-round z-scores.

    Variant "i" measures loss, variant "ii" gradient cosine. Under the
    update-direction cosine used here (per-sample gradient vs theta_k -
    theta_global, which points against the accumulated gradient), member
    measurements fall below the OUT mean for both kinds, so both z-sums are
    negated to keep higher score = more likely member. The OUT distribution
    is estimated from clients outside `exclude_clients` (default: just the
    target client).
    """
    if variant not in ("i", "ii"):
        raise ValueError("variant must be 'i' or 'ii'")
    kind = "loss" if variant == "i" else "grad_cosine"
    sign = -1.0
    sample_ids = np.asarray(sample_ids, dtype=np.int64)
    x, y = dataset.X[sample_ids], dataset.y[sample_ids]
    if exclude_clients is None:
        if not (isinstance(target_selector, tuple) and target_selector[0] == "local"):
            raise ValueError("exclude_clients is required for non-local targets")
        exclude_clients = {target_selector[1]}
    values, _ = trajectory_matrix(store, target_selector, x, y, kind)
    out_mean, out_std = _out_stats_matrix(store, x, y, set(exclude_clients), kind)
    z = (values - out_mean) / out_std
    return sign * z.sum(axis=1)


# ---------------------------------------------------------------------------
# evaluation and dispatch
# ---------------------------------------------------------------------------


def evaluate_attack(
    scores: np.ndarray,
    labels: np.ndarray,
    attack: str = "",
    target: str = "",
    levels=DEFAULT_FPR_LEVELS,
) -> AttackResult:
    """AUC (rank statistic, ties 1/2) and TPR at the standard FPR budgets."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    return AttackResult(
        attack=attack,
        target=target,
        scores=scores,
        labels=labels,
        auc=auc_score(scores, labels),
        tpr_at_fpr=tpr_at_fpr(scores, labels, levels),
    )


def _pool_ids_and_labels(pools: EvalPools) -> tuple[np.ndarray, np.ndarray]:
    ids = np.concatenate([pools.member_ids, pools.ifl_ids, pools.ofl_ids])
    labels = np.concatenate(
        [
            np.ones(len(pools.member_ids), dtype=np.int64),
            np.zeros(len(pools.ifl_ids) + len(pools.ofl_ids), dtype=np.int64),
        ]
    )
    return ids, labels


def run_attack(
    store: SnapshotStore,
    dataset: LabeledDataset,
    pools: EvalPools,
    target_client: int,
    name: str,
    selector=None,
) -> AttackResult:
    """Score the member/non-member pools with one named attack.

    The default selector is the target client's local model series; pass
    "global" or ("coalition", ids) to retarget. FedMIA always estimates its
    OUT distribution from clients other than the target (and, for a
    coalition target, other than every coalition member).
    """
    if name not in ATTACK_NAMES:
        raise ValueError(f"unknown attack {name!r}; choose from {ATTACK_NAMES}")
    if selector is None:
        selector = ("local", target_client)
    ids, labels = _pool_ids_and_labels(pools)

    if name in ("fedmia_i", "fedmia_ii"):
        if isinstance(selector, tuple) and selector[0] == "coalition":
            exclude = set(selector[1])
        else:
            exclude = {target_client}
        scores = attack_fedmia(
            store, dataset, ids, selector, "i" if name == "fedmia_i" else "ii", exclude
        )
    else:
        kind = {
            "loss_series": "loss",
            "fta_l": "loss",
            "fta_c": "confidence",
            "avg_cosine": "grad_cosine",
        }[name]
        records = extract_trajectory(store, selector, dataset, ids, kind)
        if name == "loss_series":
            scores = attack_loss_series(records)
        elif name == "avg_cosine":
            scores = attack_avg_cosine(records)
        else:
            scores = attack_fta(records, kind)

    target_desc = (
        "global"
        if selector == "global"
        else f"local({selector[1]})"
        if selector[0] == "local"
        else "coalition(" + ",".join(str(k) for k in selector[1]) + ")"
    )
    return evaluate_attack(scores, labels, attack=name, target=target_desc)


def attack_adaptive_coalition(
    store: SnapshotStore,
    coalition,
    dataset: LabeledDataset,
    pools: EvalPools,
    target_client: int,
    name: str,
) -> AttackResult:
    """Run a named attack against the coalition's weighted aggregate series."""
    coalition = tuple(sorted(coalition))
    return run_attack(
        store, dataset, pools, target_client, name, selector=("coalition", coalition)
    )
