"""Evaluation metrics and exact communication/computation cost accounting.

Wire sizes follow one rule everywhere: a message carrying P float64
parameters and I int32 indices costs exactly 8*P + 4*I bytes.  FLOPs use the
analytic model 2*in*out per dense layer per sample forward, with backward
costing twice the forward.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import seeding

# Stable key order for rounds.jsonl; wall_seconds is intentionally absent so
# identical runs serialize to identical bytes.
REPORT_JSON_KEYS = (
    "round",
    "train_loss",
    "test_rmse",
    "test_ndcg",
    "params_down",
    "params_up",
    "indices_down",
    "indices_up",
    "bytes_down",
    "bytes_up",
    "flops",
    "cum_params_down",
    "cum_params_up",
    "cum_indices_down",
    "cum_indices_up",
    "cum_bytes_down",
    "cum_bytes_up",
    "cum_flops",
)


@dataclass
class RoundReport:
    round: int
    train_loss: float | None
    test_rmse: float | None
    test_ndcg: float | None
    params_down: int
    params_up: int
    indices_down: int
    indices_up: int
    flops: int
    cum_params_down: int
    cum_params_up: int
    cum_indices_down: int
    cum_indices_up: int
    cum_flops: int
    wall_seconds: float = 0.0

    @property
    def bytes_down(self) -> int:
        return 8 * self.params_down + 4 * self.indices_down

    @property
    def bytes_up(self) -> int:
        return 8 * self.params_up + 4 * self.indices_up

    @property
    def cum_bytes_down(self) -> int:
        return 8 * self.cum_params_down + 4 * self.cum_indices_down

    @property
    def cum_bytes_up(self) -> int:
        return 8 * self.cum_params_up + 4 * self.cum_indices_up

    def to_json(self) -> str:
        values = {key: getattr(self, key) for key in REPORT_JSON_KEYS}
        return json.dumps(values, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "RoundReport":
        values = json.loads(line)
        values.pop("bytes_down", None)
        values.pop("bytes_up", None)
        values.pop("cum_bytes_down", None)
        values.pop("cum_bytes_up", None)
        return cls(**values)


def rmse(
    predictions: np.ndarray,
    targets: np.ndarray,
    clamp: tuple[float, float] | None = None,
) -> float:
    """Root mean squared error over rated test entries.

    Explicit-feedback predictions are clamped to the rating scale before
    scoring; training itself never clamps.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ValueError("predictions and targets must align")
    if predictions.size == 0:
        raise ValueError("rmse undefined on an empty test set")
    if clamp is not None:
        predictions = np.clip(predictions, clamp[0], clamp[1])
    return float(np.sqrt(np.mean((predictions - targets) ** 2)))


def ndcg_single(
    scores: np.ndarray, relevance: np.ndarray, cutoff: int | None = None
) -> float | None:
    """NDCG of one user's test items, or None if the user has no positive.

    Items are ranked by descending score with ties broken by ascending item
    index (the position order of the input arrays).  Gain is the binary
    relevance, discount is 1/log2(rank + 1), and without a cutoff the whole
    list is scored.
    """
    scores = np.asarray(scores, dtype=np.float64)
    relevance = np.asarray(relevance, dtype=np.float64)
    if scores.shape != relevance.shape or scores.ndim != 1:
        raise ValueError("scores and relevance must be aligned 1-d arrays")
    if relevance.sum() == 0:
        return None
    order = np.lexsort((np.arange(scores.size), -scores))
    ranked = relevance[order]
    ideal = np.sort(relevance)[::-1]
    if cutoff is not None:
        ranked = ranked[:cutoff]
        ideal = ideal[:cutoff]
    discounts = 1.0 / np.log2(np.arange(2, ranked.size + 2))
    dcg = float(np.sum(ranked * discounts))
    idcg = float(np.sum(ideal * discounts))
    if idcg == 0.0:
        return None
    return dcg / idcg


def ndcg(
    per_user: Iterable[tuple[np.ndarray, np.ndarray]], cutoff: int | None = None
) -> float:
    """Mean NDCG over users with at least one positive test item."""
    values = []
    for scores, relevance in per_user:
        value = ndcg_single(scores, relevance, cutoff)
        if value is not None:
            values.append(value)
    if not values:
        raise ValueError("ndcg undefined: no user has a positive test item")
    return float(np.mean(values))


# ---------------------------------------------------------------------------
# Parameter counting and cost models
# ---------------------------------------------------------------------------


def layer_params(out_dim: int, in_dim: int) -> int:
    return out_dim * in_dim + out_dim


def encoder_params(num_items: int, hidden: tuple[int, int] = (256, 128)) -> int:
    return layer_params(hidden[0], num_items) + layer_params(hidden[1], hidden[0])


def decoder_params(num_items: int, hidden: tuple[int, int] = (256, 128)) -> int:
    return layer_params(hidden[0], hidden[1]) + layer_params(num_items, hidden[0])


def model_params(num_items: int, hidden: tuple[int, int] = (256, 128)) -> int:
    return encoder_params(num_items, hidden) + decoder_params(num_items, hidden)


def active_slice_params(n_active: int, hidden: tuple[int, int] = (256, 128)) -> int:
    """Inner decoder layers in full plus the active output rows and biases."""
    return layer_params(hidden[0], hidden[1]) + n_active * (hidden[0] + 1)


def forward_flops_per_sample(
    num_items: int, n_out: int, hidden: tuple[int, int] = (256, 128)
) -> int:
    """2 * in * out per dense layer, output layer shrunk to ``n_out`` rows."""
    dims = [
        (num_items, hidden[0]),
        (hidden[0], hidden[1]),
        (hidden[1], hidden[0]),
        (hidden[0], n_out),
    ]
    return sum(2 * i * o for i, o in dims)


def train_flops_per_sample(
    num_items: int, n_out: int, hidden: tuple[int, int] = (256, 128)
) -> int:
    """Forward plus backward; backward costs twice the forward."""
    return 3 * forward_flops_per_sample(num_items, n_out, hidden)


@dataclass
class CommCost:
    params_down: int = 0
    params_up: int = 0
    indices_down: int = 0
    indices_up: int = 0

    @property
    def bytes_down(self) -> int:
        return 8 * self.params_down + 4 * self.indices_down

    @property
    def bytes_up(self) -> int:
        return 8 * self.params_up + 4 * self.indices_up

    @property
    def total_bytes(self) -> int:
        return self.bytes_down + self.bytes_up


def _resolve_selections(num_clients, participation, rounds, selections, seed):
    if selections is None:
        return seeding.sample_selections(num_clients, participation, rounds, seed)
    return selections


def comm_cost(
    algorithm: str,
    num_clients: int,
    participation: float,
    num_items: int,
    index_set_sizes: Sequence[int],
    rounds: int,
    hidden: tuple[int, int] = (256, 128),
    pc_enabled: bool = True,
    selections: Sequence[Sequence[int]] | None = None,
    seed: int = 0,
) -> CommCost:
    """Closed-form transmitted-parameter counts for a whole run.

    Per selected client per round, fedavg moves the full model both ways;
    the partially federated algorithm moves the decoder (shrunk to the active
    slice when partial compression is on).  Index registration is a one-time
    upload of every client's rated index set and only exists when compression
    needs it.  Selections are replayed from the same stream the trainer uses,
    so predictions match run meters exactly.
    """
    if algorithm == "joint":
        return CommCost()
    cost = CommCost()
    sel = _resolve_selections(num_clients, participation, rounds, selections, seed)
    if algorithm == "fedavg":
        per_client = model_params(num_items, hidden)
        for chosen in sel:
            cost.params_down += per_client * len(chosen)
            cost.params_up += per_client * len(chosen)
        return cost
    if algorithm != "personalfr":
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if pc_enabled:
        cost.indices_up += int(sum(index_set_sizes))
        sizes = [active_slice_params(int(n), hidden) for n in index_set_sizes]
    else:
        sizes = [decoder_params(num_items, hidden)] * num_clients
    for chosen in sel:
        for m in chosen:
            cost.params_down += sizes[m]
            cost.params_up += sizes[m]
    return cost


def compute_cost(
    algorithm: str,
    num_items: int,
    client_user_counts: Sequence[int],
    index_set_sizes: Sequence[int],
    local_epochs: int,
    rounds: int,
    hidden: tuple[int, int] = (256, 128),
    pc_enabled: bool = True,
    participation: float = 1.0,
    selections: Sequence[Sequence[int]] | None = None,
    seed: int = 0,
) -> int:
    """Total client-side training FLOPs for a run under the analytic model.

    Every local epoch touches each of the client's users once; with partial
    compression the output layer is ``n_active`` wide for that client.
    ``client_user_counts`` has one entry per client; for a centralized run
    pass a single entry holding the full user count (rounds = epochs).
    """
    if algorithm == "joint":
        per_sample = train_flops_per_sample(num_items, num_items, hidden)
        return per_sample * int(client_user_counts[0]) * rounds
    num_clients = len(client_user_counts)
    sel = _resolve_selections(num_clients, participation, rounds, selections, seed)
    total = 0
    for chosen in sel:
        for m in chosen:
            if algorithm == "personalfr" and pc_enabled:
                n_out = int(index_set_sizes[m])
            else:
                n_out = num_items
            per_sample = train_flops_per_sample(num_items, n_out, hidden)
            total += per_sample * int(client_user_counts[m]) * local_epochs
    return total
