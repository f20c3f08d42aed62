"""Federated training loop: active-parameter slicing, refill, aggregation.

Three runners share one local-training core:

* ``joint``      — centralized training of a single autoencoder.
* ``fedavg``     — the whole model travels to selected clients and the new
                   global model is the mean of the returned ones.
* ``personalfr`` — each client keeps a private encoder forever; only decoder
                   parameters cross the wire, optionally shrunk to the rows
                   of items the client has rated (partial compression).

Everything is simulated in one process.  Clients execute sequentially in
ascending id order and aggregation reduces in that same order, so results do
not depend on scheduling.  All randomness flows through derived streams, so a
fixed seed reproduces runs bit for bit.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import metrics, nn, seeding
from .data import ClientPartition, RatingMatrix, partition as make_partition
from .metrics import RoundReport
from .nn import AutoEncoderParams, DenseLayer, MaskedBatch
from .optim import DivergenceError, make_optimizer

ALGORITHMS = ("joint", "fedavg", "personalfr")


@dataclass
class FederationConfig:
    """Training knobs shared by all runners.

    ``T`` counts communication rounds for the federated runners and epochs
    for centralized training.  ``M``, ``C`` and ``K`` are ignored by the
    centralized runner.
    """

    algorithm: str = "personalfr"
    M: int = 1
    C: float = 0.1
    K: int = 5
    T: int = 800
    B: int = 10
    pc_enabled: bool = True
    seed: int = 0
    optimizer: str = "sgd"
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    feedback: str = "explicit"
    eval_every: int = 1
    hidden: tuple[int, int] = (256, 128)
    activation: str = "sigmoid"
    dtype: str = "float64"
    trace_params: bool = False

    def loss_kind(self) -> str:
        return "cross_entropy" if self.feedback == "implicit" else "quadratic"

    def mode(self) -> str:
        return "implicit" if self.feedback == "implicit" else "explicit"

    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.feedback not in ("explicit", "implicit"):
            raise ValueError(f"unknown feedback {self.feedback!r}")
        if not 0.0 < self.C <= 1.0:
            raise ValueError("participation C must be in (0, 1]")
        if self.M < 1 or self.T < 0 or self.K < 0 or self.B < 1:
            raise ValueError("M, T, K, B out of range")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


# ---------------------------------------------------------------------------
# Active-parameter slicing (partial compression) and refill
# ---------------------------------------------------------------------------


@dataclass
class ActiveDecoderSlice:
    """Decoder restricted to a client's rated items.

    Inner layers are carried whole; the output layer keeps only the weight
    rows and bias entries at ``active_item_indices`` (sorted ascending).
    """

    inner_layers: list[DenseLayer]
    active_item_indices: np.ndarray
    w_prime: np.ndarray  # (n_active, q)
    b_prime: np.ndarray  # (n_active,)

    @property
    def n_active(self) -> int:
        return int(self.active_item_indices.size)

    def as_layers(self) -> list[DenseLayer]:
        """Layer view sharing this slice's arrays; training mutates the slice."""
        return list(self.inner_layers) + [DenseLayer(self.w_prime, self.b_prime)]

    def param_count(self) -> int:
        return nn.param_count(self.as_layers())


def _check_index_set(item_indices: np.ndarray, num_items: int) -> np.ndarray:
    item_indices = np.asarray(item_indices, dtype=np.int64)
    if item_indices.size == 0:
        raise ValueError("empty rated-item index set; client cannot train")
    if (np.diff(item_indices) <= 0).any():
        raise ValueError("item index set must be sorted and duplicate-free")
    if item_indices[0] < 0 or item_indices[-1] >= num_items:
        raise ValueError("item index out of range")
    return item_indices


def extract_active(decoder: list[DenseLayer], item_indices: np.ndarray) -> ActiveDecoderSlice:
    """Gather the active rows of the output layer; the source is not modified."""
    item_indices = _check_index_set(item_indices, decoder[-1].out_dim)
    inner = [layer.copy() for layer in decoder[:-1]]
    out = decoder[-1]
    return ActiveDecoderSlice(
        inner_layers=inner,
        active_item_indices=item_indices.copy(),
        w_prime=out.weight[item_indices],
        b_prime=out.bias[item_indices],
    )


def refill(previous_full: list[DenseLayer], update: ActiveDecoderSlice) -> list[DenseLayer]:
    """Splice an active-slice update back into a full decoder.

    Output rows at the active indices come from the update; every other row
    is taken verbatim from ``previous_full``.  Inner layers are replaced by
    the update's inner layers.
    """
    out_prev = previous_full[-1]
    idx = _check_index_set(update.active_item_indices, out_prev.out_dim)
    if len(update.inner_layers) != len(previous_full) - 1:
        raise ValueError("inner layer count mismatch")
    for got, want in zip(update.inner_layers, previous_full[:-1]):
        if got.weight.shape != want.weight.shape:
            raise ValueError("inner layer shape mismatch")
    if update.w_prime.shape != (idx.size, out_prev.in_dim):
        raise ValueError("active row shape mismatch")
    weight = out_prev.weight.copy()
    bias = out_prev.bias.copy()
    weight[idx] = update.w_prime
    bias[idx] = update.b_prime
    return [layer.copy() for layer in update.inner_layers] + [DenseLayer(weight, bias)]


def _mean_layer_lists(layer_lists: list[list[DenseLayer]]) -> list[DenseLayer]:
    """Unweighted mean, accumulated in the given (ascending client id) order.

    Computed as first + mean of differences, which keeps the mean of
    identical inputs exactly equal to them for any participant count.
    """
    base = layer_lists[0]
    count = len(layer_lists)
    diff = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in base]
    for other in layer_lists[1:]:
        for (d_w, d_b), b_layer, o_layer in zip(diff, base, other):
            d_w += o_layer.weight - b_layer.weight
            d_b += o_layer.bias - b_layer.bias
    return [
        DenseLayer(b.weight + d_w / count, b.bias + d_b / count)
        for b, (d_w, d_b) in zip(base, diff)
    ]


def server_aggregate(
    previous_decoder: list[DenseLayer],
    updates: list[tuple[int, "ActiveDecoderSlice | list[DenseLayer]"]],
    registered: dict[int, np.ndarray] | None = None,
) -> list[DenseLayer]:
    """New global decoder: mean of the refilled client decoders.

    Each active-slice update is refilled against the previous global decoder
    (the only decoder state both parties share); full-decoder updates are used
    as-is.  Summation runs in ascending client-id order.
    """
    if not updates:
        raise ValueError("nothing to aggregate")
    if registered is not None:
        for client_id, _ in updates:
            if client_id not in registered:
                raise ValueError(f"client {client_id} is not registered")
    updates = sorted(updates, key=lambda pair: pair[0])
    refilled = [
        refill(previous_decoder, upd) if isinstance(upd, ActiveDecoderSlice) else upd
        for _, upd in updates
    ]
    return _mean_layer_lists(refilled)


# ---------------------------------------------------------------------------
# Simulated wire messages (the privacy boundary)
# ---------------------------------------------------------------------------
# Only these types ever cross the client/server boundary.  None of them can
# carry ratings, latent codes or encoder parameters: payloads are restricted
# to rated-item index sets and decoder parameters by construction.


@dataclass(frozen=True)
class IndexRegistration:
    client_id: int
    item_indices: np.ndarray


@dataclass(frozen=True)
class DecoderDownlink:
    client_id: int
    payload: "ActiveDecoderSlice | list[DenseLayer]"


@dataclass(frozen=True)
class DecoderUplink:
    client_id: int
    payload: "ActiveDecoderSlice | list[DenseLayer]"


WIRE_MESSAGE_TYPES = (IndexRegistration, DecoderDownlink, DecoderUplink)


def _payload_params(payload) -> int:
    layers = payload.as_layers() if isinstance(payload, ActiveDecoderSlice) else payload
    return nn.param_count(layers)


def _check_decoder_shaped(payload, num_items: int, hidden: tuple[int, int]) -> None:
    """Guard against anything encoder-shaped leaking into an uplink."""
    layers = payload.as_layers() if isinstance(payload, ActiveDecoderSlice) else payload
    if len(layers) != 2:
        raise AssertionError("uplink payload is not a two-layer decoder")
    if layers[0].weight.shape != (hidden[0], hidden[1]):
        raise AssertionError("uplink inner layer is not decoder-shaped")
    if layers[1].weight.shape[1] != hidden[0] or layers[1].weight.shape[0] > num_items:
        raise AssertionError("uplink output layer is not decoder-shaped")


# ---------------------------------------------------------------------------
# Client state and local training
# ---------------------------------------------------------------------------


@dataclass
class LocalData:
    """Compact per-client view of the train split."""

    users: np.ndarray
    user_items: list[np.ndarray]
    user_values: list[np.ndarray]
    num_items: int
    num_entries: int


@dataclass
class ClientState:
    """One client: private encoder, local data, persistent local streams.

    The encoder never leaves this object; only decoder parameters and the
    rated-item index set are handed to the runner for transmission.
    """

    client_id: int
    data: LocalData
    item_indices: np.ndarray
    user_item_pos: list[np.ndarray]
    output_decay_mask: np.ndarray
    encoder: list[DenseLayer] = field(default_factory=list)
    encoder_opt: object = None
    batch_rng: np.random.Generator = None


def _local_data(train: RatingMatrix, users: np.ndarray) -> LocalData:
    items = [train.per_user_rated[u] for u in users]
    values = [train.per_user_values[u] for u in users]
    return LocalData(
        users=users,
        user_items=items,
        user_values=values,
        num_items=train.num_items,
        num_entries=int(sum(len(a) for a in items)),
    )


def _make_batch(data: LocalData, positions, dtype, item_pos=None, width=None) -> MaskedBatch:
    """Dense batch for the given local user positions.

    With ``item_pos``/``width`` the targets and mask are restricted to the
    client's active columns; inputs always span the full item set.
    """
    n_out = data.num_items if width is None else width
    inputs = np.zeros((len(positions), data.num_items), dtype=dtype)
    mask = np.zeros((len(positions), n_out), dtype=bool)
    targets = np.zeros((len(positions), n_out), dtype=dtype)
    for row, p in enumerate(positions):
        items = data.user_items[p]
        vals = data.user_values[p]
        inputs[row, items] = vals
        cols = items if item_pos is None else item_pos[p]
        mask[row, cols] = True
        targets[row, cols] = vals
    return MaskedBatch(inputs, mask, targets)


@dataclass
class LocalTrainStats:
    loss_sum: float = 0.0
    batches: int = 0
    samples: int = 0

    def mean_loss(self) -> float | None:
        return self.loss_sum / self.batches if self.batches else None


def _train_epochs(
    params: AutoEncoderParams,
    enc_opt,
    dec_opt,
    data: LocalData,
    build_batch,
    rng: np.random.Generator,
    epochs: int,
    batch_size: int,
    loss_kind: str,
    dec_masks=None,
) -> LocalTrainStats:
    stats = LocalTrainStats()
    num_local = len(data.users)
    for _ in range(epochs):
        perm = rng.permutation(num_local)
        for start in range(0, num_local, batch_size):
            positions = perm[start : start + batch_size]
            batch = build_batch(positions)
            if not batch.mask.any():
                continue  # every selected user is train-empty; nothing to fit
            with np.errstate(over="ignore"):  # overflow -> inf, caught below
                preds, cache = nn.forward(params, batch)
                loss = nn.masked_loss(preds, batch, loss_kind)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite training loss {loss!r}")
            enc_grads, dec_grads = nn.backward(params, cache, batch, loss_kind)
            enc_opt.step(params.encoder, enc_grads)
            dec_opt.step(params.decoder, dec_grads, dec_masks)
            stats.loss_sum += loss
            stats.batches += 1
            stats.samples += len(positions)
    return stats


def client_update(
    client: ClientState,
    decoder_in: "ActiveDecoderSlice | list[DenseLayer]",
    cfg: FederationConfig,
) -> tuple["ActiveDecoderSlice | list[DenseLayer]", LocalTrainStats]:
    """K local epochs of minibatch training on one client.

    The private encoder and the received decoder are optimized jointly on the
    masked reconstruction loss.  The encoder (and its optimizer state) stays
    on the client; only the decoder object is returned, mutated in place, so
    its shape matches what was received.  A fresh decoder optimizer is used
    because the received decoder is a new object every round.  Weight decay
    on a full-width output layer is scoped to the client's rated rows, which
    keeps full-width training identical to physically sliced training.
    """
    if client.data.num_entries < 1:
        raise ValueError(f"client {client.client_id} has no training entries")
    active = isinstance(decoder_in, ActiveDecoderSlice)
    if active:
        dec_layers = decoder_in.as_layers()
        dec_masks = None
        build = lambda pos: _make_batch(
            client.data,
            pos,
            cfg.np_dtype(),
            item_pos=client.user_item_pos,
            width=decoder_in.n_active,
        )
    else:
        dec_layers = decoder_in
        dec_masks = [None] * (len(dec_layers) - 1) + [client.output_decay_mask]
        build = lambda pos: _make_batch(client.data, pos, cfg.np_dtype())
    params = AutoEncoderParams(
        client.encoder, dec_layers, activation=cfg.activation,
        head="sigmoid" if cfg.feedback == "implicit" else "identity",
    )
    dec_opt = make_optimizer(
        cfg.optimizer, dec_layers, lr=cfg.learning_rate, momentum=cfg.momentum,
        weight_decay=cfg.weight_decay, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2,
        eps=cfg.adam_eps,
    )
    stats = _train_epochs(
        params, client.encoder_opt, dec_opt, client.data, build,
        client.batch_rng, cfg.K, cfg.B, cfg.loss_kind(), dec_masks,
    )
    return decoder_in, stats


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def evaluate_predictions(
    predict_rows,
    train: RatingMatrix,
    test: RatingMatrix,
    feedback: str,
    chunk_size: int = 512,
) -> dict:
    """Score per-round test metrics.

    Inputs are each user's train row (zeros at unrated positions); targets are
    that user's held-out test entries.  Explicit feedback pools squared errors
    over all test entries and clamps predictions to the rating scale; implicit
    feedback averages per-user NDCG over users with a positive test item.
    """
    users = [u for u in range(test.num_users) if len(test.per_user_rated[u])]
    if not users:
        return {"test_rmse": None, "test_ndcg": None}
    pred_chunks: list[np.ndarray] = []
    true_chunks: list[np.ndarray] = []
    ndcg_pairs: list[tuple[np.ndarray, np.ndarray]] = []
    for start in range(0, len(users), chunk_size):
        chunk = np.asarray(users[start : start + chunk_size])
        preds = predict_rows(chunk, train.dense_rows(chunk))
        for row, u in enumerate(chunk):
            items = test.per_user_rated[u]
            scores = preds[row, items]
            truth = test.per_user_values[u]
            pred_chunks.append(scores)
            true_chunks.append(truth)
            ndcg_pairs.append((scores, truth))
    if feedback == "implicit":
        return {"test_rmse": None, "test_ndcg": metrics.ndcg(ndcg_pairs)}
    value = metrics.rmse(
        np.concatenate(pred_chunks), np.concatenate(true_chunks),
        clamp=train.rating_scale,
    )
    return {"test_rmse": value, "test_ndcg": None}


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    algorithm: str
    config: FederationConfig
    reports: list[RoundReport]
    selections: list[list[int]]
    partition: ClientPartition | None = None
    model: AutoEncoderParams | None = None
    decoder: list[DenseLayer] | None = None
    encoders: list[list[DenseLayer]] | None = None
    model_trace: list[AutoEncoderParams] | None = None
    decoder_trace: list[list[DenseLayer]] | None = None
    encoder_trace: list[list[list[DenseLayer]]] | None = None


def _layers_state(layers: list[DenseLayer]) -> list:
    return [[l.weight.copy(), l.bias.copy()] for l in layers]


def _load_layers(layers: list[DenseLayer], state) -> None:
    for layer, (weight, bias) in zip(layers, state):
        layer.weight[...] = weight
        layer.bias[...] = bias


_CUM_KEYS = ("params_down", "params_up", "indices_down", "indices_up", "flops")


class _TrainerBase:
    algorithm = ""

    def __init__(self, train: RatingMatrix, test: RatingMatrix | None, cfg: FederationConfig):
        cfg.validate()
        if cfg.algorithm != self.algorithm:
            raise ValueError(f"config algorithm {cfg.algorithm!r} != {self.algorithm!r}")
        if train.num_entries < 1:
            raise ValueError("training split is empty")
        self.train = train
        self.test = test
        self.cfg = cfg
        self.round = 0
        self.reports: list[RoundReport] = []
        self.selections: list[list[int]] = []
        self.cum = {key: 0 for key in _CUM_KEYS}

    # -- shared helpers ----------------------------------------------------

    def _should_eval(self, t: int) -> bool:
        if self.test is None or self.test.num_entries == 0:
            return False
        return t % self.cfg.eval_every == 0 or t == self.cfg.T

    def _metrics(self, t: int) -> dict:
        if not self._should_eval(t):
            return {"test_rmse": None, "test_ndcg": None}
        return evaluate_predictions(
            self._predict_rows, self.train, self.test, self.cfg.feedback
        )

    def _report(self, t, train_loss, measured, delta, wall) -> RoundReport:
        for key in _CUM_KEYS:
            self.cum[key] += delta[key]
        report = RoundReport(
            round=t,
            train_loss=train_loss,
            test_rmse=measured["test_rmse"],
            test_ndcg=measured["test_ndcg"],
            params_down=delta["params_down"],
            params_up=delta["params_up"],
            indices_down=delta["indices_down"],
            indices_up=delta["indices_up"],
            flops=delta["flops"],
            cum_params_down=self.cum["params_down"],
            cum_params_up=self.cum["params_up"],
            cum_indices_down=self.cum["indices_down"],
            cum_indices_up=self.cum["indices_up"],
            cum_flops=self.cum["flops"],
            wall_seconds=wall,
        )
        self.reports.append(report)
        return report

    def run(self, on_round=None) -> RunResult:
        while self.round < self.cfg.T:
            start = time.perf_counter()
            self._run_round(self.round + 1, start)
            self.round += 1
            if on_round is not None:
                on_round(self)
        return self.result()

    # -- per-algorithm hooks ------------------------------------------------

    def _run_round(self, t: int, start: float) -> None:
        raise NotImplementedError

    def _predict_rows(self, users: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def result(self) -> RunResult:
        raise NotImplementedError


class JointTrainer(_TrainerBase):
    """Centralized training on all users; one round is one epoch."""

    algorithm = "joint"

    def __init__(self, train, test, cfg):
        super().__init__(train, test, cfg)
        dtype = cfg.np_dtype()
        self.model = nn.init_autoencoder(
            train.num_items, cfg.seed, mode=cfg.mode(), hidden=cfg.hidden,
            activation=cfg.activation, dtype=dtype,
        )
        self.enc_opt = self._new_opt(self.model.encoder)
        self.dec_opt = self._new_opt(self.model.decoder)
        self.batch_rng = seeding.derive_rng(cfg.seed, seeding.BATCHES, 0)
        self.data = _local_data(train, np.arange(train.num_users))
        self.trace: list[AutoEncoderParams] | None = [] if cfg.trace_params else None

    def _new_opt(self, layers):
        cfg = self.cfg
        return make_optimizer(
            cfg.optimizer, layers, lr=cfg.learning_rate, momentum=cfg.momentum,
            weight_decay=cfg.weight_decay, beta1=cfg.adam_beta1,
            beta2=cfg.adam_beta2, eps=cfg.adam_eps,
        )

    def _run_round(self, t, start):
        cfg = self.cfg
        build = lambda pos: _make_batch(self.data, pos, cfg.np_dtype())
        try:
            stats = _train_epochs(
                self.model, self.enc_opt, self.dec_opt, self.data, build,
                self.batch_rng, 1, cfg.B, cfg.loss_kind(),
            )
        except DivergenceError as exc:
            raise DivergenceError(f"epoch {t}: {exc}") from None
        delta = dict.fromkeys(_CUM_KEYS, 0)
        delta["flops"] = metrics.train_flops_per_sample(
            self.train.num_items, self.train.num_items, cfg.hidden
        ) * stats.samples
        if self.trace is not None:
            self.trace.append(self.model.copy())
        measured = self._metrics(t)
        self._report(t, stats.mean_loss(), measured, delta, time.perf_counter() - start)

    def _predict_rows(self, users, inputs):
        return nn.predict(self.model, inputs)

    def result(self) -> RunResult:
        return RunResult(
            algorithm=self.algorithm,
            config=self.cfg,
            reports=self.reports,
            selections=self.selections,
            model=self.model,
            model_trace=self.trace,
        )

    def state_dict(self) -> dict:
        return {
            "round": self.round,
            "cum": dict(self.cum),
            "model": _layers_state(self.model.layers()),
            "enc_opt": self.enc_opt.state_dict(),
            "dec_opt": self.dec_opt.state_dict(),
            "batch_rng": self.batch_rng.bit_generator.state,
        }

    def load_state_dict(self, state: dict) -> None:
        self.round = int(state["round"])
        self.cum = {key: int(value) for key, value in state["cum"].items()}
        _load_layers(self.model.layers(), state["model"])
        self.enc_opt.load_state_dict(state["enc_opt"])
        self.dec_opt.load_state_dict(state["dec_opt"])
        self.batch_rng.bit_generator.state = state["batch_rng"]


class _FederatedBase(_TrainerBase):
    def __init__(self, train, test, cfg, part: ClientPartition | None = None):
        super().__init__(train, test, cfg)
        if part is None:
            part = make_partition(train, cfg.M, cfg.seed)
        if part.num_clients != cfg.M:
            raise ValueError("partition does not match config M")
        self.partition = part
        self.select_rng = seeding.derive_rng(cfg.seed, seeding.SELECTION)

    def _select(self) -> np.ndarray:
        size = seeding.num_selected(self.cfg.M, self.cfg.C)
        chosen = np.sort(self.select_rng.choice(self.cfg.M, size=size, replace=False))
        self.selections.append([int(m) for m in chosen])
        return chosen


class FedAvgTrainer(_FederatedBase):
    """Whole-model federated averaging; prediction uses the global model."""

    algorithm = "fedavg"

    def __init__(self, train, test, cfg, part=None):
        super().__init__(train, test, cfg, part)
        dtype = cfg.np_dtype()
        self.model = nn.init_autoencoder(
            train.num_items, cfg.seed, mode=cfg.mode(), hidden=cfg.hidden,
            activation=cfg.activation, dtype=dtype,
        )
        self.client_data = [_local_data(train, users) for users in self.partition.members]
        self.batch_rngs = [
            seeding.derive_rng(cfg.seed, seeding.BATCHES, m) for m in range(cfg.M)
        ]
        self.trace: list[AutoEncoderParams] | None = [] if cfg.trace_params else None

    def _run_round(self, t, start):
        cfg = self.cfg
        chosen = self._select()
        per_client = nn.param_count(self.model)
        delta = dict.fromkeys(_CUM_KEYS, 0)
        round_stats = LocalTrainStats()
        enc_updates: list[list[DenseLayer]] = []
        dec_updates: list[list[DenseLayer]] = []
        for m in chosen:
            local = self.client_data[int(m)]
            if local.num_entries < 1:
                raise ValueError(f"round {t}: client {m} has no training entries")
            enc = [l.copy() for l in self.model.encoder]
            dec = [l.copy() for l in self.model.decoder]
            params = AutoEncoderParams(enc, dec, cfg.activation, self.model.head)
            enc_opt = self._new_opt(enc)
            dec_opt = self._new_opt(dec)
            delta["params_down"] += per_client
            build = lambda pos, local=local: _make_batch(local, pos, cfg.np_dtype())
            try:
                stats = _train_epochs(
                    params, enc_opt, dec_opt, local, build,
                    self.batch_rngs[int(m)], cfg.K, cfg.B, cfg.loss_kind(),
                )
            except DivergenceError as exc:
                raise DivergenceError(f"round {t}, client {m}: {exc}") from None
            delta["params_up"] += per_client
            delta["flops"] += metrics.train_flops_per_sample(
                self.train.num_items, self.train.num_items, cfg.hidden
            ) * stats.samples
            round_stats.loss_sum += stats.loss_sum
            round_stats.batches += stats.batches
            enc_updates.append(enc)
            dec_updates.append(dec)
        self.model.encoder = _mean_layer_lists(enc_updates)
        self.model.decoder = _mean_layer_lists(dec_updates)
        if self.trace is not None:
            self.trace.append(self.model.copy())
        measured = self._metrics(t)
        self._report(t, round_stats.mean_loss(), measured, delta, time.perf_counter() - start)

    def _new_opt(self, layers):
        cfg = self.cfg
        return make_optimizer(
            cfg.optimizer, layers, lr=cfg.learning_rate, momentum=cfg.momentum,
            weight_decay=cfg.weight_decay, beta1=cfg.adam_beta1,
            beta2=cfg.adam_beta2, eps=cfg.adam_eps,
        )

    def _predict_rows(self, users, inputs):
        return nn.predict(self.model, inputs)

    def result(self) -> RunResult:
        return RunResult(
            algorithm=self.algorithm,
            config=self.cfg,
            reports=self.reports,
            selections=self.selections,
            partition=self.partition,
            model=self.model,
            model_trace=self.trace,
        )

    def state_dict(self) -> dict:
        return {
            "round": self.round,
            "cum": dict(self.cum),
            "model": _layers_state(self.model.layers()),
            "select_rng": self.select_rng.bit_generator.state,
            "batch_rngs": [rng.bit_generator.state for rng in self.batch_rngs],
            "selections": list(self.selections),
        }

    def load_state_dict(self, state: dict) -> None:
        self.round = int(state["round"])
        self.cum = {key: int(value) for key, value in state["cum"].items()}
        _load_layers(self.model.layers(), state["model"])
        self.select_rng.bit_generator.state = state["select_rng"]
        for rng, rng_state in zip(self.batch_rngs, state["batch_rngs"]):
            rng.bit_generator.state = rng_state
        self.selections = [list(map(int, sel)) for sel in state["selections"]]


class PersonalFRTrainer(_FederatedBase):
    """Private per-client encoders; the decoder is the only shared state.

    Clients register their rated-item index sets once, then every round the
    selected clients receive decoder parameters (the active slice when
    partial compression is on), train locally, and upload the same object
    back.  The server refills slices against the previous global decoder and
    averages.  Prediction routes every user through their client's encoder.
    """

    algorithm = "personalfr"

    def __init__(self, train, test, cfg, part=None):
        super().__init__(train, test, cfg, part)
        dtype = cfg.np_dtype()
        self.decoder = nn.init_decoder(
            train.num_items, seeding.derive_rng(cfg.seed, seeding.DECODER_INIT),
            cfg.hidden, dtype,
        )
        self.head = "sigmoid" if cfg.feedback == "implicit" else "identity"
        self.clients: list[ClientState] = []
        for m in range(cfg.M):
            users = self.partition.members[m]
            data = _local_data(train, users)
            item_indices = self.partition.item_index_sets[m]
            user_item_pos = [
                np.searchsorted(item_indices, items) for items in data.user_items
            ]
            decay_mask = np.zeros(train.num_items, dtype=bool)
            decay_mask[item_indices] = True
            encoder = nn.init_encoder(
                train.num_items,
                seeding.derive_rng(cfg.seed, seeding.ENCODER_INIT, m),
                cfg.hidden, dtype,
            )
            self.clients.append(
                ClientState(
                    client_id=m,
                    data=data,
                    item_indices=item_indices,
                    user_item_pos=user_item_pos,
                    output_decay_mask=decay_mask,
                    encoder=encoder,
                    encoder_opt=make_optimizer(
                        cfg.optimizer, encoder, lr=cfg.learning_rate,
                        momentum=cfg.momentum, weight_decay=cfg.weight_decay,
                        beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps,
                    ),
                    batch_rng=seeding.derive_rng(cfg.seed, seeding.BATCHES, m),
                )
            )
        # Registration phase: every client announces its rated-item indices.
        registrations = [
            IndexRegistration(m, self.clients[m].item_indices) for m in range(cfg.M)
        ]
        self.registered = {
            msg.client_id: msg.item_indices for msg in registrations
        }
        self._pending_registration_indices = (
            sum(int(msg.item_indices.size) for msg in registrations)
            if cfg.pc_enabled
            else 0
        )
        self.decoder_trace: list[list[DenseLayer]] | None = [] if cfg.trace_params else None
        self.encoder_trace: list[list[list[DenseLayer]]] | None = (
            [] if cfg.trace_params else None
        )

    def _run_round(self, t, start):
        cfg = self.cfg
        chosen = self._select()
        delta = dict.fromkeys(_CUM_KEYS, 0)
        delta["indices_up"] = self._pending_registration_indices
        self._pending_registration_indices = 0
        round_stats = LocalTrainStats()
        updates: list[tuple[int, ActiveDecoderSlice | list[DenseLayer]]] = []
        for m in chosen:
            client = self.clients[int(m)]
            if cfg.pc_enabled:
                payload = extract_active(self.decoder, client.item_indices)
            else:
                payload = [layer.copy() for layer in self.decoder]
            downlink = DecoderDownlink(int(m), payload)
            delta["params_down"] += _payload_params(downlink.payload)
            try:
                decoder_out, stats = client_update(client, downlink.payload, cfg)
            except DivergenceError as exc:
                raise DivergenceError(f"round {t}, client {m}: {exc}") from None
            uplink = DecoderUplink(int(m), decoder_out)
            _check_decoder_shaped(uplink.payload, self.train.num_items, cfg.hidden)
            delta["params_up"] += _payload_params(uplink.payload)
            n_out = client.item_indices.size if cfg.pc_enabled else self.train.num_items
            delta["flops"] += metrics.train_flops_per_sample(
                self.train.num_items, int(n_out), cfg.hidden
            ) * stats.samples
            round_stats.loss_sum += stats.loss_sum
            round_stats.batches += stats.batches
            updates.append((int(m), uplink.payload))
        self.decoder = server_aggregate(self.decoder, updates, self.registered)
        if self.decoder_trace is not None:
            self.decoder_trace.append([layer.copy() for layer in self.decoder])
            self.encoder_trace.append(
                [[layer.copy() for layer in c.encoder] for c in self.clients]
            )
        measured = self._metrics(t)
        self._report(t, round_stats.mean_loss(), measured, delta, time.perf_counter() - start)

    def _predict_rows(self, users, inputs):
        out = np.empty((len(users), self.train.num_items), dtype=self.cfg.np_dtype())
        owners = self.partition.assignment[users]
        for m in np.unique(owners):
            rows = np.flatnonzero(owners == m)
            params = AutoEncoderParams(
                self.clients[int(m)].encoder, self.decoder,
                self.cfg.activation, self.head,
            )
            out[rows] = nn.predict(params, inputs[rows])
        return out

    def result(self) -> RunResult:
        return RunResult(
            algorithm=self.algorithm,
            config=self.cfg,
            reports=self.reports,
            selections=self.selections,
            partition=self.partition,
            decoder=self.decoder,
            encoders=[c.encoder for c in self.clients],
            decoder_trace=self.decoder_trace,
            encoder_trace=self.encoder_trace,
        )

    def state_dict(self) -> dict:
        return {
            "round": self.round,
            "cum": dict(self.cum),
            "decoder": _layers_state(self.decoder),
            "encoders": [_layers_state(c.encoder) for c in self.clients],
            "encoder_opts": [c.encoder_opt.state_dict() for c in self.clients],
            "batch_rngs": [c.batch_rng.bit_generator.state for c in self.clients],
            "select_rng": self.select_rng.bit_generator.state,
            "pending_registration": self._pending_registration_indices,
            "selections": list(self.selections),
        }

    def load_state_dict(self, state: dict) -> None:
        self.round = int(state["round"])
        self.cum = {key: int(value) for key, value in state["cum"].items()}
        _load_layers(self.decoder, state["decoder"])
        for client, enc_state, opt_state, rng_state in zip(
            self.clients, state["encoders"], state["encoder_opts"], state["batch_rngs"]
        ):
            _load_layers(client.encoder, enc_state)
            client.encoder_opt.load_state_dict(opt_state)
            client.batch_rng.bit_generator.state = rng_state
        self.select_rng.bit_generator.state = state["select_rng"]
        self._pending_registration_indices = int(state["pending_registration"])
        self.selections = [list(map(int, sel)) for sel in state["selections"]]


TRAINERS = {
    "joint": JointTrainer,
    "fedavg": FedAvgTrainer,
    "personalfr": PersonalFRTrainer,
}


def make_trainer(train, test, cfg: FederationConfig, part: ClientPartition | None = None):
    cls = TRAINERS.get(cfg.algorithm)
    if cls is None:
        raise ValueError(f"unknown algorithm {cfg.algorithm!r}")
    if cfg.algorithm == "joint":
        return cls(train, test, cfg)
    return cls(train, test, cfg, part)


def run_joint(train, test, cfg: FederationConfig) -> RunResult:
    return JointTrainer(train, test, cfg).run()


def run_fedavg(train, test, cfg: FederationConfig, part=None) -> RunResult:
    return FedAvgTrainer(train, test, cfg, part).run()


def run_personalfr(train, test, cfg: FederationConfig, part=None) -> RunResult:
    return PersonalFRTrainer(train, test, cfg, part).run()
