import math

import numpy as np
import pytest

from primpose import gradcheck, losses
from primpose.exceptions import InvalidInputError
from primpose.losses import (DEFAULT_ALPHA, DEFAULT_TOPK, LatentStats, LossValue, kl_divergence,
                             loss_adversarial, loss_keypoint, loss_object_topk, loss_primitive,
                             loss_vae_total, topk_indices)


def test_defaults():
    assert DEFAULT_TOPK == 128
    assert DEFAULT_ALPHA == 5


def test_topk_identity(rng):
    x = rng.uniform(size=(16, 16, 3))
    lv = loss_object_topk(x, x.copy())
    assert lv.value == 0
    assert np.all(lv.grad == 0)


def test_topk_hand_example():
    x = np.zeros((2, 2, 1))
    x_hat = np.sqrt(np.array([0.01, 0.09, 0.04, 0.16])).reshape(2, 2, 1)
    assert loss_object_topk(x, x_hat, K=2).value == pytest.approx(0.125, abs=1e-15)


def test_topk_selects_largest(rng):
    q = rng.uniform(size=50)
    idx = topk_indices(q, 7)
    assert set(idx) == set(np.argsort(q)[-7:])


def test_topk_k_larger_than_image(rng):
    with pytest.raises(InvalidInputError):
        loss_object_topk(np.zeros((2, 2, 3)), np.ones((2, 2, 3)), K=5)


def test_primitive_perfect_reconstruction(rng):
    x = rng.uniform(size=(6, 6, 3))
    lv = loss_primitive(x, x.copy(), K=4)
    assert lv.value == 0
    assert np.all(np.isfinite(lv.grad))


def test_primitive_single_pixel_hand_value():
    x = np.array([[[0.2, 0.0, 0.0]]])
    x_hat = np.zeros((1, 1, 3))
    # S_R = e^(5*0.2) * 0.04, C_R = 0.04, weight_R = e
    assert math.exp(1) * 0.04 == pytest.approx(0.1087313, abs=1e-7)
    assert loss_primitive(x, x_hat, alpha=5, K=1).value == pytest.approx(0.29557, abs=1e-5)


def test_kl_cases():
    assert kl_divergence(LatentStats(np.zeros(4), np.zeros(4))).value == 0
    assert kl_divergence(LatentStats(np.ones(1), np.zeros(1))).value == pytest.approx(0.5, abs=1e-15)
    v = kl_divergence(LatentStats(np.zeros(1), np.log([2.0]))).value
    assert abs(v - 0.5 * (2 - 1 - math.log(2))) <= 1e-15
    assert v == pytest.approx(0.1534264, abs=1e-7)


def test_vae_total():
    z = LossValue(0.0, None)
    assert loss_vae_total(z, z, z) == 0
    total = loss_vae_total(LossValue(0.125, None), LossValue(0.29557, None), LossValue(0.5, None))
    assert total == pytest.approx(0.92057, abs=1e-12)


def test_vae_total_matches_recomputation(rng):
    x, x_hat = rng.uniform(size=(5, 5, 3)), rng.uniform(size=(5, 5, 3))
    st = LatentStats(rng.normal(size=8), rng.normal(size=8))
    parts = loss_object_topk(x, x_hat, 6), loss_primitive(x, x_hat, 5, 6), kl_divergence(st)
    direct = (np.sort(((x - x_hat) ** 2).reshape(-1, 3).sum(axis=1))[-6:].mean()
              + parts[1].value + 0.5 * np.sum(st.mu ** 2 + np.exp(st.log_var) - 1 - st.log_var))
    assert abs(loss_vae_total(*parts) - direct) <= 1e-12


def test_adversarial_values():
    l_d, l_g = loss_adversarial(np.array([0.5]), np.array([0.5]))
    assert l_d.value == pytest.approx(1.386294, abs=1e-6)
    assert l_g.value == pytest.approx(0.693147, abs=1e-6)
    l_d, _ = loss_adversarial(np.array([1 - 1e-9]), np.array([1e-9]))
    assert l_d.value < 1e-8
    with pytest.raises(InvalidInputError):
        loss_adversarial(np.array([1.0]), np.array([0.5]))


def test_adversarial_gradients_fd(rng):
    dr, df = rng.uniform(0.1, 0.9, 5), rng.uniform(0.1, 0.9, 7)
    h = 1e-6
    for which in (0, 1):
        lv = loss_adversarial(dr, df)[which]
        for arr_i, arr in enumerate((dr, df)):
            for i in range(arr.size):
                orig = arr[i]
                arr[i] = orig + h
                fp = loss_adversarial(dr, df)[which].value
                arr[i] = orig - h
                fm = loss_adversarial(dr, df)[which].value
                arr[i] = orig
                num = (fp - fm) / (2 * h)
                g = lv.grad[arr_i][i]
                assert abs(g - num) <= 1e-6 * max(abs(g), abs(num), 1e-6)


def test_keypoint_loss():
    t = np.random.default_rng(0).uniform(0, 600, (21, 2))
    assert loss_keypoint(t, t).value == 0
    p = t.copy()
    p[4] += [3, 4]
    assert loss_keypoint(p, t).value == pytest.approx(25, abs=1e-9)
    p2 = t + 2.5 * (p - t)
    assert loss_keypoint(p2, t).value == pytest.approx(2.5 ** 2 * 25, rel=1e-12)


def test_gradcheck_default_kernels_pass():
    rep = gradcheck.run_gradcheck(seed=0, n_seeds=4, max_size=8)
    assert rep.passed, rep.to_dict()
    assert {k.name for k in rep.kernels} >= {"loss_object_topk", "loss_primitive", "kl_divergence",
                                             "loss_keypoint"}


def test_gradcheck_detects_injected_bug():
    good = gradcheck._kl_kernel()

    def bad_eval(arrays):
        value, grads, sig = good.evaluate(arrays)
        return value, [grads[0] * 1.01, grads[1]], sig

    rep = gradcheck.run_gradcheck(n_seeds=2, kernels=[gradcheck.GradKernel("kl_bug", good.sample, bad_eval)])
    assert not rep.passed
    assert rep.failures()[0].name == "kl_bug"
    assert rep.failures()[0].worst is not None


def test_gradcheck_is_deterministic():
    a = gradcheck.run_gradcheck(seed=7, n_seeds=2, max_size=6).to_dict()
    b = gradcheck.run_gradcheck(seed=7, n_seeds=2, max_size=6).to_dict()
    assert a == b


def test_loss_input_validation():
    with pytest.raises(InvalidInputError):
        loss_object_topk(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))
    with pytest.raises(InvalidInputError):
        loss_keypoint(np.zeros((21, 2)), np.zeros((20, 2)))
    assert losses.clamp_probabilities(np.array([0.0, 1.0])).tolist() == [losses.PROB_EPS, 1 - losses.PROB_EPS]
