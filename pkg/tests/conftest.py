"""Shared fixtures and independent oracles used across the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from fedrec import data, nn


def assert_layers_equal(a, b, atol=0.0, rtol=0.0):
    assert len(a) == len(b)
    for la, lb in zip(a, b):
        if atol == 0.0 and rtol == 0.0:
            np.testing.assert_array_equal(la.weight, lb.weight)
            np.testing.assert_array_equal(la.bias, lb.bias)
        else:
            np.testing.assert_allclose(la.weight, lb.weight, atol=atol, rtol=rtol)
            np.testing.assert_allclose(la.bias, lb.bias, atol=atol, rtol=rtol)


def max_layer_diff(a, b) -> float:
    out = 0.0
    for la, lb in zip(a, b):
        out = max(out, float(np.abs(la.weight - lb.weight).max()))
        out = max(out, float(np.abs(la.bias - lb.bias).max()))
    return out


def toy_params(n, hidden, weight=1.0, activation="identity", head="identity"):
    """Autoencoder with constant weights and zero biases, for hand-traced math."""
    dims_enc = (n, hidden[0], hidden[1])
    dims_dec = (hidden[1], hidden[0], n)
    enc = [
        nn.DenseLayer(np.full((dims_enc[i + 1], dims_enc[i]), weight), np.zeros(dims_enc[i + 1]))
        for i in range(2)
    ]
    dec = [
        nn.DenseLayer(np.full((dims_dec[i + 1], dims_dec[i]), weight), np.zeros(dims_dec[i + 1]))
        for i in range(2)
    ]
    return nn.AutoEncoderParams(enc, dec, activation=activation, head=head)


def random_params(rng, n, hidden, activation="sigmoid", head="identity"):
    enc = nn.init_encoder(n, rng, hidden)
    dec = nn.init_decoder(n, rng, hidden)
    return nn.AutoEncoderParams(enc, dec, activation=activation, head=head)


def random_batch(rng, batch, n, implicit=False):
    """Random masked batch with at least one rated entry."""
    while True:
        mask = rng.random((batch, n)) < 0.5
        if mask.any():
            break
    if implicit:
        values = (rng.random((batch, n)) < 0.5).astype(np.float64)
    else:
        values = rng.integers(1, 6, size=(batch, n)).astype(np.float64)
    inputs = np.where(mask, values, 0.0)
    return nn.MaskedBatch(inputs=inputs, mask=mask, targets=np.where(mask, values, 0.0))


def numerical_gradients(params, batch, kind, step=1e-5):
    """Central finite differences of the masked loss w.r.t. every parameter.

    Independent of the backprop path: evaluates the loss through the public
    forward function only.
    """

    def loss_value():
        preds, _ = nn.forward(params, batch)
        return nn.masked_loss(preds, batch, kind)

    grads = []
    for layer in params.layers():
        g_w = np.zeros_like(layer.weight)
        g_b = np.zeros_like(layer.bias)
        for arr, grad in ((layer.weight, g_w), (layer.bias, g_b)):
            flat = arr.ravel()
            flat_g = grad.ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                hi = loss_value()
                flat[i] = orig - step
                lo = loss_value()
                flat[i] = orig
                flat_g[i] = (hi - lo) / (2.0 * step)
        grads.append((g_w, g_b))
    return grads


def max_relative_error(analytic, numerical, floor=1e-5) -> float:
    """max |a - f| / max(|a|, |f|, floor) over all parameters.

    The floor guards near-zero entries: central differences of an O(1) loss
    at step 1e-5 carry ~1e-10 of roundoff noise, so comparing entries whose
    true magnitude is below the floor would only measure that noise.  Any
    genuinely wrong gradient above the floor still fails at 1e-4.
    """
    worst = 0.0
    for (a_w, a_b), (f_w, f_b) in zip(analytic, numerical):
        for a, f in ((a_w, f_w), (a_b, f_b)):
            denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
            worst = max(worst, float((np.abs(a - f) / denom).max()))
    return worst


@pytest.fixture(scope="session")
def small_dataset():
    """Dense synthetic matrix whose train split covers every item."""
    matrix = data.gen_synthetic(30, 12, sparsity=0.5, seed=1)
    train, test = data.split(matrix, data.SplitSpec(0.8, seed=1))
    assert len(train.rated_items()) == train.num_items
    return train, test
