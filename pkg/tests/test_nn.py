"""Forward/backward correctness against hand traces and finite differences."""

from __future__ import annotations

import numpy as np
import pytest

from conftest import (
    max_relative_error,
    numerical_gradients,
    random_batch,
    random_params,
    toy_params,
)
from fedrec import nn


def test_forward_zero_weights_identity_head():
    params = toy_params(4, (3, 2), weight=0.0)
    batch = random_batch(np.random.default_rng(0), 2, 4)
    preds, _ = nn.forward(params, batch)
    np.testing.assert_array_equal(preds, np.zeros((2, 4)))


def test_forward_linear_toy_composition():
    # n=1, all widths 1, weights 1, biases 0, identity everywhere:
    # input 2 passes unchanged through all four layers.
    params = toy_params(1, (1, 1), weight=1.0)
    batch = nn.MaskedBatch(
        inputs=np.array([[2.0]]), mask=np.array([[True]]), targets=np.array([[2.0]])
    )
    preds, _ = nn.forward(params, batch)
    assert preds[0, 0] == 2.0


def test_forward_rows_independent():
    rng = np.random.default_rng(1)
    params = random_params(rng, 5, (4, 3))
    row = rng.random((1, 5))
    batch = nn.MaskedBatch(
        inputs=np.repeat(row, 3, axis=0),
        mask=np.ones((3, 5), dtype=bool),
        targets=np.ones((3, 5)),
    )
    preds, _ = nn.forward(params, batch)
    np.testing.assert_array_equal(preds[0], preds[1])
    np.testing.assert_array_equal(preds[0], preds[2])


def test_forward_is_pure():
    rng = np.random.default_rng(2)
    params = random_params(rng, 6, (4, 2))
    batch = random_batch(rng, 3, 6)
    p1, _ = nn.forward(params, batch)
    p2, _ = nn.forward(params, batch)
    np.testing.assert_array_equal(p1, p2)


def test_forward_dimension_mismatch():
    params = toy_params(4, (3, 2))
    bad = nn.MaskedBatch(
        inputs=np.zeros((2, 5)), mask=np.ones((2, 4), bool), targets=np.zeros((2, 4))
    )
    with pytest.raises(ValueError, match="input width"):
        nn.forward(params, bad)


def test_masked_loss_exact_fit_is_zero():
    rng = np.random.default_rng(3)
    batch = random_batch(rng, 2, 4)
    assert nn.masked_loss(batch.targets.copy(), batch, "quadratic") == 0.0


def test_masked_loss_two_term_hand_sum():
    # pred [4,1,3,2], target [5,.,3,.], mask [T,F,T,F] -> ((4-5)^2 + 0)/2 = 0.5
    batch = nn.MaskedBatch(
        inputs=np.zeros((1, 4)),
        mask=np.array([[True, False, True, False]]),
        targets=np.array([[5.0, 0.0, 3.0, 0.0]]),
    )
    preds = np.array([[4.0, 1.0, 3.0, 2.0]])
    assert nn.masked_loss(preds, batch, "quadratic") == 0.5


def test_masked_loss_cross_entropy_half():
    # p = 0.5 at a rated positive -> ln 2
    batch = nn.MaskedBatch(
        inputs=np.zeros((1, 1)), mask=np.array([[True]]), targets=np.array([[1.0]])
    )
    assert nn.masked_loss(np.array([[0.5]]), batch, "cross_entropy") == pytest.approx(
        np.log(2.0), abs=1e-15
    )


def test_masked_loss_no_rated_entries_errors():
    batch = nn.MaskedBatch(
        inputs=np.zeros((1, 2)), mask=np.zeros((1, 2), bool), targets=np.zeros((1, 2))
    )
    with pytest.raises(ValueError, match="no rated"):
        nn.masked_loss(np.zeros((1, 2)), batch, "quadratic")


def test_backward_matches_finite_differences_quadratic():
    rng = np.random.default_rng(4)
    for _ in range(5):
        params = random_params(rng, 5, (4, 3))
        batch = random_batch(rng, 3, 5)
        preds, cache = nn.forward(params, batch)
        enc_g, dec_g = nn.backward(params, cache, batch, "quadratic")
        numeric = numerical_gradients(params, batch, "quadratic")
        assert max_relative_error(enc_g + dec_g, numeric) < 1e-4


def test_backward_matches_finite_differences_cross_entropy():
    rng = np.random.default_rng(5)
    for _ in range(5):
        params = random_params(rng, 5, (4, 3), head="sigmoid")
        batch = random_batch(rng, 3, 5, implicit=True)
        preds, cache = nn.forward(params, batch)
        enc_g, dec_g = nn.backward(params, cache, batch, "cross_entropy")
        numeric = numerical_gradients(params, batch, "cross_entropy")
        assert max_relative_error(enc_g + dec_g, numeric) < 1e-4


def test_backward_all_false_mask_row_contributes_nothing():
    rng = np.random.default_rng(6)
    params = random_params(rng, 4, (3, 2))
    base = random_batch(rng, 2, 4)
    # add a third row that is entirely unrated
    extra_inputs = np.vstack([base.inputs, rng.random((1, 4))])
    extra_mask = np.vstack([base.mask, np.zeros((1, 4), bool)])
    extra_targets = np.vstack([base.targets, np.zeros((1, 4))])
    padded = nn.MaskedBatch(extra_inputs, extra_mask, extra_targets)

    _, cache = nn.forward(params, base)
    g_base = nn.backward(params, cache, base, "quadratic")
    _, cache_p = nn.forward(params, padded)
    g_pad = nn.backward(params, cache_p, padded, "quadratic")
    for (a_w, a_b), (b_w, b_b) in zip(g_base[0] + g_base[1], g_pad[0] + g_pad[1]):
        np.testing.assert_array_equal(a_w, b_w)
        np.testing.assert_array_equal(a_b, b_b)


def test_backward_output_rows_outside_batch_items_exactly_zero():
    rng = np.random.default_rng(7)
    params = random_params(rng, 6, (4, 3))
    batch = random_batch(rng, 3, 6)
    rated_items = np.flatnonzero(batch.mask.any(axis=0))
    unrated_items = np.setdiff1d(np.arange(6), rated_items)
    assert unrated_items.size > 0 or batch.mask.all()
    _, cache = nn.forward(params, batch)
    _, dec_g = nn.backward(params, cache, batch, "quadratic")
    d_w, d_b = dec_g[-1]
    np.testing.assert_array_equal(d_w[unrated_items], 0.0)
    np.testing.assert_array_equal(d_b[unrated_items], 0.0)


def test_backward_locality_at_mask_false_positions():
    rng = np.random.default_rng(8)
    params = random_params(rng, 5, (3, 2))
    batch = random_batch(rng, 2, 5)
    _, cache = nn.forward(params, batch)
    loss = nn.masked_loss(cache["preds"], batch, "quadratic")
    grads = nn.backward(params, cache, batch, "quadratic")

    # perturbing targets at mask-false positions changes nothing
    perturbed_targets = batch.targets + np.where(batch.mask, 0.0, 123.0)
    perturbed = nn.MaskedBatch(batch.inputs, batch.mask, perturbed_targets)
    _, cache2 = nn.forward(params, perturbed)
    assert nn.masked_loss(cache2["preds"], perturbed, "quadratic") == loss
    grads2 = nn.backward(params, cache2, perturbed, "quadratic")
    for (a_w, a_b), (b_w, b_b) in zip(grads[0] + grads[1], grads2[0] + grads2[1]):
        np.testing.assert_array_equal(a_w, b_w)
        np.testing.assert_array_equal(a_b, b_b)


def test_backward_stale_cache_rejected():
    rng = np.random.default_rng(9)
    params = random_params(rng, 4, (3, 2))
    batch1 = random_batch(rng, 2, 4)
    batch2 = random_batch(rng, 2, 4)
    _, cache = nn.forward(params, batch1)
    with pytest.raises(ValueError, match="stale"):
        nn.backward(params, cache, batch2, "quadratic")


def test_cross_entropy_requires_sigmoid_head():
    rng = np.random.default_rng(10)
    params = random_params(rng, 4, (3, 2), head="identity")
    batch = random_batch(rng, 2, 4, implicit=True)
    _, cache = nn.forward(params, batch)
    with pytest.raises(ValueError, match="sigmoid"):
        nn.backward(params, cache, batch, "cross_entropy")


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def test_init_deterministic_and_zero_bias():
    a = nn.init_autoencoder(20, seed=3)
    b = nn.init_autoencoder(20, seed=3)
    for la, lb in zip(a.layers(), b.layers()):
        np.testing.assert_array_equal(la.weight, lb.weight)
        np.testing.assert_array_equal(la.bias, 0.0)
    c = nn.init_autoencoder(20, seed=4)
    assert not np.array_equal(a.encoder[0].weight, c.encoder[0].weight)


def test_init_parameter_count_closed_form():
    # [3706, 256, 128, 256, 3706]: per layer out*in + out
    n = 3706
    expected = (
        (256 * n + 256)
        + (128 * 256 + 128)
        + (256 * 128 + 256)
        + (n * 256 + n)
    )
    params = nn.init_autoencoder(n, seed=0)
    assert nn.param_count(params) == expected
    assert expected == 1_967_354  # frozen from the arithmetic above


def test_init_modes():
    assert nn.init_autoencoder(5, 0, mode="explicit").head == "identity"
    assert nn.init_autoencoder(5, 0, mode="implicit").head == "sigmoid"
    with pytest.raises(ValueError):
        nn.init_autoencoder(5, 0, mode="other")
    with pytest.raises(ValueError):
        nn.init_autoencoder(0, 0)


def test_init_weights_fan_in_bounded():
    params = nn.init_autoencoder(50, seed=1)
    for layer in params.layers():
        bound = 1.0 / np.sqrt(layer.in_dim)
        assert np.abs(layer.weight).max() <= bound
