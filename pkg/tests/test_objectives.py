import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gan_introspect import autodiff as ad
from gan_introspect.autodiff import Tensor
from gan_introspect.errors import ConfigError, ShapeError
from gan_introspect.objectives import (LossWeights, adv_loss_d, adv_loss_d_scores, adv_loss_g, cycle_loss,
                                       full_d_objective, full_g_objective, identity_loss, log_adv_loss_d,
                                       log_adv_loss_g)


def identity_g(x, codes):
    return x


def perfect_d(real_data):
    """Scores 1 on exactly the real batch and 0 on anything else."""
    def d(x, first, second):
        return Tensor(np.array([1.0 if np.array_equal(xi, ri) else 0.0 for xi, ri in zip(x.data, real_data)]))
    return d


def batch(seed, shape=(3, 1, 4, 8)):
    return Tensor(np.random.default_rng(seed).standard_normal(shape))


def test_perfect_discriminator_has_zero_loss():
    x, fake = batch(0), batch(1)
    assert adv_loss_d(perfect_d(x.data), x, [0, 1, 2], fake, [1, 2, 0]).data == 0.0


def test_fooled_discriminator_and_generator_losses():
    x = batch(0)
    d = perfect_d(x.data)
    # generator output equal to the real data fools it completely
    assert adv_loss_g(d, x, 0, 1).data == 0.0
    assert adv_loss_d(d, x, 0, x, 1).data == pytest.approx(1.0)


def test_identity_generator_zeroes_cycle_and_identity():
    x = batch(2)
    assert cycle_loss(identity_g, x, [0, 1, 2], [2, 0, 1]).data == 0.0
    assert identity_loss(identity_g, x, [0, 1, 2]).data == 0.0


def test_cycle_loss_matches_direct_formula():
    x = batch(3)

    def g(t, codes):
        return ad.add(ad.mul(t, 0.5), 0.1 * (np.asarray(codes).reshape(-1, 1, 1, 1) + 1))

    c, c_hat = np.array([0, 1, 2]), np.array([1, 1, 0])
    want = np.mean(np.abs(x.data - (0.5 * (0.5 * x.data + 0.1 * (c_hat + 1)[:, None, None, None])
                                   + 0.1 * (c + 1)[:, None, None, None])))
    assert cycle_loss(g, x, c, c_hat).data == pytest.approx(want, abs=1e-15)


def test_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        identity_loss(lambda x, c: ad.reshape(x, (3, -1)), batch(0), 0)


@settings(max_examples=100)
@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), st.integers(0, 300))
def test_total_objective_is_affine_with_default_weights(adv, cyc, idt, it):
    w = LossWeights()
    total = full_g_objective(Tensor(adv), Tensor(cyc), Tensor(idt), w, it).data
    want = adv + 10.0 * cyc + (5.0 * idt if it < w.id_cutoff_iterations else 0.0)
    assert abs(total - want) <= 1e-12 * max(1.0, abs(want))


def test_identity_term_is_dropped_after_cutoff():
    w = LossWeights(id_cutoff_iterations=3)
    adv, cyc, idt = Tensor(1.0), Tensor(2.0), Tensor(100.0)
    assert full_g_objective(adv, cyc, idt, w, 2).data == 521.0
    assert full_g_objective(adv, cyc, idt, w, 3).data == 21.0
    assert full_g_objective(adv, cyc, None, w, 0).data == 21.0


def test_default_weights_and_validation():
    w = LossWeights()
    assert (w.lambda_cyc, w.lambda_id) == (10.0, 5.0)
    with pytest.raises(ConfigError):
        LossWeights(lambda_cyc=-1.0)


def test_discriminator_objective_gradients_flow():
    real = Tensor(np.array([0.5, 2.0]), requires_grad=True)
    fake = Tensor(np.array([0.3, -0.1]), requires_grad=True)
    ad.backward(full_d_objective(adv_loss_d_scores(real, fake)))
    np.testing.assert_allclose(real.grad, (real.data - 1.0))
    np.testing.assert_allclose(fake.grad, fake.data)


def test_log_losses_match_closed_form():
    real, fake = np.array([0.4, -2.0, 30.0]), np.array([1.5, -0.7, -40.0])
    sig = lambda z: 1 / (1 + np.exp(-z))
    want_d = -np.mean(np.log(sig(real))) - np.mean(np.log(1 - sig(fake)))
    assert log_adv_loss_d(Tensor(real), Tensor(fake)).data == pytest.approx(want_d, rel=1e-12)
    assert log_adv_loss_g(Tensor(fake)).data == pytest.approx(-np.mean(np.log(sig(fake))), rel=1e-12)
