"""Dense autoencoder core: forward pass, masked losses, exact backprop.

The network is a fixed 4-layer autoencoder (encoder n -> h0 -> h1, decoder
h1 -> h0 -> n) with a configurable hidden activation and an output head that
is the identity for rating regression or a sigmoid for binarized feedback.
All math is float64 by default; forward and backward are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import seeding

ACTIVATIONS = ("sigmoid", "identity")
HEADS = ("identity", "sigmoid")
LOSS_KINDS = ("quadratic", "cross_entropy")


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weight.copy(), self.bias.copy())


@dataclass
class AutoEncoderParams:
    encoder: list[DenseLayer]
    decoder: list[DenseLayer]
    activation: str = "sigmoid"
    head: str = "identity"

    def layers(self) -> list[DenseLayer]:
        return list(self.encoder) + list(self.decoder)

    def copy(self) -> "AutoEncoderParams":
        return AutoEncoderParams(
            [l.copy() for l in self.encoder],
            [l.copy() for l in self.decoder],
            self.activation,
            self.head,
        )


@dataclass
class MaskedBatch:
    """Dense input rows plus a rated-position mask over the target columns.

    ``inputs`` always spans the full item set (the encoder sees everything);
    ``targets`` and ``mask`` may span a column subset when the output layer is
    physically restricted to a client's rated items.
    """

    inputs: np.ndarray  # (batch, n_in), zeros at unrated positions
    mask: np.ndarray  # (batch, n_out) boolean, True where rated
    targets: np.ndarray  # (batch, n_out)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _activate(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "sigmoid":
        return _sigmoid(x)
    if kind == "identity":
        return x
    raise ValueError(f"unknown activation {kind!r}")


def _activation_grad(post: np.ndarray, kind: str) -> np.ndarray:
    if kind == "sigmoid":
        return post * (1.0 - post)
    if kind == "identity":
        return np.ones_like(post)
    raise ValueError(f"unknown activation {kind!r}")


def init_layer(rng: np.random.Generator, out_dim: int, in_dim: int, dtype=np.float64) -> DenseLayer:
    """Uniform fan-in-scaled weights, zero biases."""
    bound = 1.0 / np.sqrt(in_dim)
    weight = rng.uniform(-bound, bound, size=(out_dim, in_dim)).astype(dtype)
    return DenseLayer(weight, np.zeros(out_dim, dtype=dtype))


def init_encoder(
    num_items: int,
    rng: np.random.Generator,
    hidden: tuple[int, int] = (256, 128),
    dtype=np.float64,
) -> list[DenseLayer]:
    dims = (num_items, hidden[0], hidden[1])
    return [init_layer(rng, dims[i + 1], dims[i], dtype) for i in range(2)]


def init_decoder(
    num_items: int,
    rng: np.random.Generator,
    hidden: tuple[int, int] = (256, 128),
    dtype=np.float64,
) -> list[DenseLayer]:
    dims = (hidden[1], hidden[0], num_items)
    return [init_layer(rng, dims[i + 1], dims[i], dtype) for i in range(2)]


def init_autoencoder(
    num_items: int,
    seed: int,
    mode: str = "explicit",
    hidden: tuple[int, int] = (256, 128),
    activation: str = "sigmoid",
    dtype=np.float64,
) -> AutoEncoderParams:
    """Seeded autoencoder init; deterministic per (seed, shape).

    Uses the same derived streams as the federated trainers (encoder stream of
    client 0 plus the shared decoder stream), so a centralized model is
    bit-identical to the degenerate single-client federated one.
    """
    if num_items < 1:
        raise ValueError("need at least one item")
    if mode not in ("explicit", "implicit"):
        raise ValueError(f"unknown mode {mode!r}")
    enc = init_encoder(num_items, seeding.derive_rng(seed, seeding.ENCODER_INIT, 0), hidden, dtype)
    dec = init_decoder(num_items, seeding.derive_rng(seed, seeding.DECODER_INIT), hidden, dtype)
    head = "sigmoid" if mode == "implicit" else "identity"
    return AutoEncoderParams(enc, dec, activation=activation, head=head)


def param_count(layers_or_params) -> int:
    layers = layers_or_params.layers() if isinstance(layers_or_params, AutoEncoderParams) else layers_or_params
    return int(sum(l.weight.size + l.bias.size for l in layers))


def forward(params: AutoEncoderParams, batch: MaskedBatch) -> tuple[np.ndarray, dict]:
    """Run the autoencoder on a batch; returns predictions and a backprop cache.

    The output head is applied to the predictions.  The cache keeps every
    layer input so gradients are exact.
    """
    layers = params.layers()
    if batch.inputs.ndim != 2 or batch.inputs.shape[1] != layers[0].in_dim:
        raise ValueError(
            f"input width {batch.inputs.shape} does not match encoder input {layers[0].in_dim}"
        )
    if batch.targets.shape[1] != layers[-1].out_dim:
        raise ValueError(
            f"target width {batch.targets.shape[1]} does not match output layer {layers[-1].out_dim}"
        )
    if batch.mask.shape != batch.targets.shape:
        raise ValueError("mask and targets must have identical shapes")
    posts = [batch.inputs]
    a = batch.inputs
    for layer in layers[:-1]:
        z = a @ layer.weight.T + layer.bias
        a = _activate(z, params.activation)
        posts.append(a)
    z_out = a @ layers[-1].weight.T + layers[-1].bias
    preds = _activate(z_out, params.head) if params.head == "sigmoid" else z_out
    cache = {"inputs": batch.inputs, "posts": posts, "preds": preds}
    return preds, cache


def predict(params: AutoEncoderParams, inputs: np.ndarray) -> np.ndarray:
    """Forward pass without cache, for evaluation."""
    a = inputs
    layers = params.layers()
    for layer in layers[:-1]:
        a = _activate(a @ layer.weight.T + layer.bias, params.activation)
    z = a @ layers[-1].weight.T + layers[-1].bias
    return _sigmoid(z) if params.head == "sigmoid" else z


def masked_loss(preds: np.ndarray, batch: MaskedBatch, kind: str) -> float:
    """Mean per-entry loss over rated (mask-true) positions only."""
    rated = int(batch.mask.sum())
    if rated == 0:
        raise ValueError("loss undefined: batch has no rated entries")
    p = preds[batch.mask]
    t = batch.targets[batch.mask]
    if kind == "quadratic":
        return float(np.mean((p - t) ** 2))
    if kind == "cross_entropy":
        p = np.clip(p, 1e-12, 1.0 - 1e-12)
        return float(np.mean(-(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))))
    raise ValueError(f"unknown loss kind {kind!r}")


def backward(
    params: AutoEncoderParams, cache: dict, batch: MaskedBatch, kind: str
) -> tuple[list[tuple[np.ndarray, np.ndarray]], list[tuple[np.ndarray, np.ndarray]]]:
    """Exact gradients of the masked loss w.r.t. every weight and bias.

    Output-layer weight rows (and bias entries) for items with no rated entry
    in the batch are exactly zero.  Returns (encoder_grads, decoder_grads) as
    lists of (dW, db) matching the layer shapes.
    """
    if cache.get("inputs") is not batch.inputs:
        raise ValueError("cache does not belong to this batch (stale cache)")
    rated = int(batch.mask.sum())
    if rated == 0:
        raise ValueError("loss undefined: batch has no rated entries")
    preds = cache["preds"]
    posts = cache["posts"]
    layers = params.layers()

    m = batch.mask.astype(preds.dtype)
    if kind == "quadratic":
        d_pred = 2.0 * (preds - batch.targets) * m / rated
        if params.head == "sigmoid":
            dz = d_pred * preds * (1.0 - preds)
        else:
            dz = d_pred
    elif kind == "cross_entropy":
        if params.head != "sigmoid":
            raise ValueError("cross_entropy loss requires a sigmoid output head")
        dz = (preds - batch.targets) * m / rated
    else:
        raise ValueError(f"unknown loss kind {kind!r}")

    grads: list[tuple[np.ndarray, np.ndarray]] = []
    for idx in range(len(layers) - 1, -1, -1):
        a_in = posts[idx]
        grads.append((dz.T @ a_in, dz.sum(axis=0)))
        if idx > 0:
            da = dz @ layers[idx].weight
            dz = da * _activation_grad(posts[idx], params.activation)
    grads.reverse()
    n_enc = len(params.encoder)
    return grads[:n_enc], grads[n_enc:]
