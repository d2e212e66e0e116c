import numpy as np
import pytest

from depthseg import geometry, losses
from depthseg.losses import (LossError, LossWeights, SsimParams,
                             combine_shared_gradients, cross_entropy,
                             cross_entropy_grad, hint_loss, hint_loss_grad,
                             multiscale_photometric, photometric_loss,
                             photometric_loss_grad, smoothness_loss,
                             smoothness_loss_grad, ssim_map)


def finite_difference(f, x, eps=1e-6):
    num = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += eps
        xm = x.copy()
        xm[idx] -= eps
        num[idx] = (f(xp) - f(xm)) / (2 * eps)
    return num


def rel_error(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-8)


def test_weights_from_config(tmp_path):
    path = tmp_path / "weights.cfg"
    path.write_text("gamma=0.9\nalpha=0.25\nlam_s=0.001\n")
    w = LossWeights.from_config(path)
    assert w.gamma == 0.9 and w.alpha == 0.25 and w.lam_s == 0.001


def test_weights_from_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "weights.cfg"
    path.write_text("nope=1\n")
    with pytest.raises(LossError):
        LossWeights.from_config(path)


def test_ssim_identical_images_is_one():
    rng = np.random.default_rng(0)
    img = rng.random((8, 8, 3))
    s = ssim_map(img, img)
    assert np.allclose(s, 1.0, atol=1e-12)


def test_ssim_constant_vs_shifted_constant():
    # closed form: means differ by 1, variances are 0
    a = np.zeros((6, 6))
    b = np.ones((6, 6))
    p = SsimParams()
    expected = (2 * 0 * 1 + p.c1) * p.c2 / ((0 + 1 + p.c1) * p.c2)
    s = ssim_map(a, b, p)
    assert np.allclose(s, expected, atol=1e-12)


def test_photometric_identity_zero():
    rng = np.random.default_rng(1)
    img = rng.random((10, 12, 3))
    assert abs(photometric_loss(img, img)) < 1e-7


def test_photometric_gamma_zero_is_l1():
    a = np.zeros((5, 5))
    b = np.full((5, 5), 0.25)
    val = photometric_loss(a, b, w=LossWeights(gamma=0.0))
    assert val == pytest.approx(0.25)


def test_photometric_respects_mask():
    a = np.zeros((4, 4))
    b = np.zeros((4, 4))
    b[0, 0] = 1.0
    mask = np.ones((4, 4), bool)
    mask[0, 0] = False
    masked = photometric_loss(a, b, mask, w=LossWeights(gamma=0.0))
    full = photometric_loss(a, b, w=LossWeights(gamma=0.0))
    assert masked == pytest.approx(0.0)
    assert full > 0


def test_photometric_all_masked_rejected():
    a = np.zeros((3, 3))
    with pytest.raises(LossError):
        photometric_loss(a, a, np.zeros((3, 3), bool))


@pytest.mark.parametrize("gamma", [0.0, 0.85])
def test_photometric_gradient(gamma):
    rng = np.random.default_rng(2)
    a = rng.random((8, 8, 3))
    b = rng.random((8, 8, 3))
    w = LossWeights(gamma=gamma)
    grad = photometric_loss_grad(a, b, w=w)
    num = finite_difference(lambda x: photometric_loss(a, x, w=w), b)
    assert rel_error(grad, num) < 1e-4


def test_hint_loss_log_form():
    val = hint_loss(np.array([[2.0]]), np.array([[1.0]]))
    assert val == pytest.approx(np.log(2.0), abs=1e-7)


def test_hint_loss_zero_at_equality():
    d = np.full((4, 4), 3.0)
    assert hint_loss(d, d) == 0.0


def test_hint_loss_rejects_nonpositive_depth():
    with pytest.raises(LossError):
        hint_loss(np.zeros((2, 2)), np.ones((2, 2)))


def test_hint_gradient():
    rng = np.random.default_rng(3)
    d = rng.random((8, 8)) + 0.5
    t = rng.random((8, 8)) + 0.5
    grad = hint_loss_grad(d, t)
    num = finite_difference(lambda x: hint_loss(x, t), d)
    assert rel_error(grad, num) < 1e-4


def test_smoothness_zero_for_constant_disparity():
    disp = np.full((6, 6), 0.4)
    rng = np.random.default_rng(4)
    img = rng.random((6, 6, 3))
    assert smoothness_loss(disp, img) == pytest.approx(0.0)


def test_smoothness_mean_normalization_makes_it_scale_invariant():
    rng = np.random.default_rng(5)
    disp = rng.random((6, 6)) + 0.1
    img = rng.random((6, 6, 3))
    a = smoothness_loss(disp, img)
    b = smoothness_loss(disp * 7.5, img)
    assert a == pytest.approx(b, rel=1e-12)


def test_smoothness_edges_downweight_gradients():
    disp = np.tile(np.array([0.2, 0.8]), (4, 2))
    flat_img = np.full((4, 4), 0.5)
    edge_img = np.tile(np.array([0.0, 1.0]), (4, 2))
    assert smoothness_loss(disp, edge_img) < smoothness_loss(disp, flat_img)


def test_smoothness_gradient():
    rng = np.random.default_rng(6)
    disp = rng.random((8, 8)) + 0.1
    img = rng.random((8, 8, 3))
    grad = smoothness_loss_grad(disp, img)
    num = finite_difference(lambda x: smoothness_loss(x, img), disp)
    assert rel_error(grad, num) < 1e-4


@pytest.mark.parametrize("k", [2, 19])
def test_cross_entropy_uniform_is_log_k(k):
    probs = np.full((4, 5, k), 1.0 / k)
    target = np.zeros((4, 5), dtype=np.int64)
    assert cross_entropy(target, probs) == pytest.approx(np.log(k), abs=1e-6)


def test_cross_entropy_perfect_prediction_is_zero():
    probs = np.zeros((2, 2, 3))
    probs[..., 1] = 1.0
    target = np.ones((2, 2), dtype=np.int64)
    assert cross_entropy(target, probs) == pytest.approx(0.0, abs=1e-6)


def test_cross_entropy_rejects_unnormalized():
    with pytest.raises(LossError):
        cross_entropy(np.zeros((2, 2), int), np.full((2, 2, 3), 0.5))


def test_cross_entropy_rejects_out_of_range_ids():
    probs = np.full((2, 2, 3), 1 / 3)
    with pytest.raises(LossError):
        cross_entropy(np.full((2, 2), 3), probs)


def test_cross_entropy_gradient():
    rng = np.random.default_rng(8)
    logits = rng.random((8, 8, 4)) + 0.1
    probs = logits / logits.sum(axis=2, keepdims=True)
    target = rng.integers(0, 4, (8, 8))
    grad = cross_entropy_grad(target, probs)
    num = finite_difference(lambda p: cross_entropy(target, p), probs)
    assert rel_error(grad, num) < 1e-4


def test_total_losses_combine_linearly():
    w = LossWeights(lam_pe=2.0, lam_h=3.0, lam_rfd=1.0, lam_s=0.5,
                    lam_ps=4.0, lam_rfs=0.25, beta1=0.5, beta2=2.0)
    d = losses.total_depth_loss(1.0, 1.0, 1.0, 1.0, w)
    s = losses.total_seg_loss(1.0, 1.0, w)
    assert d == pytest.approx(6.5)
    assert s == pytest.approx(4.25)
    assert losses.total_loss(d, s, w) == pytest.approx(0.5 * 6.5 + 2.0 * 4.25)


def test_multiscale_photometric_self_consistent():
    # warping the target image itself at identity pose reconstructs it, so
    # the loss vanishes at every scale
    rng = np.random.default_rng(9)
    img = rng.random((16, 32)).astype(np.float64)
    disparities = [np.full((16 >> s, 32 >> s), 0.5) for s in range(4)]
    cam = geometry.Camera(10.0, 10.0, 15.5, 7.5)
    val = multiscale_photometric(disparities, img, img,
                                 geometry.Pose.identity(), cam,
                                 geometry.DepthParams(0.1, 100.0))
    assert abs(val) < 1e-6


def test_combine_shared_gradients_endpoints_and_linearity():
    rng = np.random.default_rng(10)
    gd = rng.random((5, 7))
    gs = rng.random((5, 7))
    assert np.array_equal(combine_shared_gradients(gd, gs, 1.0), gd)
    assert np.array_equal(combine_shared_gradients(gd, gs, 0.0), gs)
    mid = combine_shared_gradients(gd, gs, 0.5)
    assert np.allclose(mid, 0.5 * gd + 0.5 * gs)
    assert np.allclose(combine_shared_gradients(gd, gd, 0.3), gd)


def test_combine_shared_gradients_rejects_bad_alpha():
    g = np.zeros((2, 2))
    with pytest.raises(LossError):
        combine_shared_gradients(g, g, 1.5)
