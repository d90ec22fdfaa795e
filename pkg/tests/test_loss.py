import numpy as np
import pytest

import oracles
from standseg.errors import ShapeError
from standseg.net import (
    LossConfig,
    focal_tversky_grad,
    focal_tversky_loss,
    tversky_counts,
    tversky_index,
)


def random_pair(rng, b=2, c=5, h=6, w=6):
    logits = rng.normal(size=(b, c, h, w))
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs = e / e.sum(axis=1, keepdims=True)
    target = np.zeros((b, c, h, w))
    codes = rng.integers(0, c, size=(b, h, w))
    for k in range(c):
        target[:, k] = codes == k
    return probs, target


def test_config_validation():
    with pytest.raises(ValueError):
        LossConfig(alpha=0.0)
    with pytest.raises(ValueError):
        LossConfig(alpha=1.0)
    with pytest.raises(ValueError):
        LossConfig(gamma=0.9)
    with pytest.raises(ValueError):
        LossConfig(epsilon=-1e-9)


def test_beta_complements_alpha():
    for alpha in (0.3, 0.5, 0.62, 0.7):
        assert LossConfig(alpha=alpha).beta == 1.0 - alpha


def test_hand_case_single_pixel():
    # two classes, one pixel, truth = class 0, p = (0.6, 0.4):
    # TI_0 = 0.6 / (0.6 + 0.5*0.4) = 0.75, TI_1 = 0 / 0.2 = 0
    probs = np.array([0.6, 0.4]).reshape(1, 2, 1, 1)
    target = np.array([1.0, 0.0]).reshape(1, 2, 1, 1)
    cfg = LossConfig(alpha=0.5, gamma=1.0, epsilon=0.0)
    # the index itself rounds one ulp under 0.75 (0.6 and 0.8 are not binary),
    # but the loss arithmetic lands back on exactly 0.625
    assert tversky_index(probs, target, 0, cfg) == pytest.approx(0.75, rel=1e-15)
    assert tversky_index(probs, target, 1, cfg) == 0.0
    assert focal_tversky_loss(probs, target, cfg) == 0.625


def test_counts_match_loops(rng):
    probs, target = random_pair(rng)
    mask = rng.random((2, 6, 6)) < 0.8
    tp, fp, fn = tversky_counts(probs, target, mask)
    for c in range(5):
        etp = efp = efn = 0.0
        for b in range(2):
            for i in range(6):
                for j in range(6):
                    if not mask[b, i, j]:
                        continue
                    p, g = probs[b, c, i, j], target[b, c, i, j]
                    etp += p * g
                    efp += p * (1 - g)
                    efn += (1 - p) * g
        assert tp[c] == pytest.approx(etp, abs=1e-12)
        assert fp[c] == pytest.approx(efp, abs=1e-12)
        assert fn[c] == pytest.approx(efn, abs=1e-12)


def test_loss_matches_loop_oracle(rng):
    probs, target = random_pair(rng)
    cfg = LossConfig(alpha=0.4, gamma=1.3)
    expect = oracles.tversky_loss_loops(probs, target, alpha=0.4, gamma=1.3, eps=cfg.epsilon)
    assert focal_tversky_loss(probs, target, cfg) == pytest.approx(expect, abs=1e-12)


def test_perfect_prediction_near_zero(rng):
    _, target = random_pair(rng)
    cfg = LossConfig()
    loss = focal_tversky_loss(target.astype(np.float64), target, cfg)
    assert 0.0 <= loss <= 10 * cfg.epsilon


def test_complement_prediction_is_one():
    # two classes so the complement of a one-hot target is a valid distribution
    target = np.zeros((1, 2, 2, 2))
    target[0, 0] = 1.0
    probs = 1.0 - target
    for gamma in (1.0, 1.5, 2.0):
        cfg = LossConfig(gamma=gamma, epsilon=0.0)
        assert focal_tversky_loss(probs, target, cfg) == 1.0


def test_dice_equivalence(rng):
    # alpha = beta = 0.5, gamma = 1 reduces to macro soft Dice loss
    for _ in range(20):
        probs, target = random_pair(rng, b=1, h=4, w=4)
        cfg = LossConfig(alpha=0.5, gamma=1.0, epsilon=0.0)
        loss = focal_tversky_loss(probs, target, cfg)
        dice = []
        for c in range(5):
            p, g = probs[0, c], target[0, c]
            denom = p.sum() + g.sum()
            dice.append(2 * (p * g).sum() / denom if denom > 0 else 1.0)
        assert loss == pytest.approx(1.0 - np.mean(dice), abs=1e-9)


def test_batch_pooling_not_per_image_mean(rng):
    # counts pool over the batch before the index forms, so the loss of a
    # 2-batch differs from the mean of the two single-image losses
    probs, target = random_pair(rng, b=2)
    cfg = LossConfig(alpha=0.4, gamma=1.0)
    pooled = focal_tversky_loss(probs, target, cfg)
    a = focal_tversky_loss(probs[:1], target[:1], cfg)
    b = focal_tversky_loss(probs[1:], target[1:], cfg)
    assert pooled != pytest.approx((a + b) / 2, abs=1e-9)


@pytest.mark.parametrize("alpha,gamma", [(0.5, 1.0), (0.4, 1.3), (0.7, 2.0)])
def test_gradient_matches_finite_differences(rng, alpha, gamma):
    probs, target = random_pair(rng, b=1, c=3, h=4, w=4)
    mask = rng.random((1, 4, 4)) < 0.9
    cfg = LossConfig(alpha=alpha, gamma=gamma)
    _, grad = focal_tversky_grad(probs, target, cfg, mask)
    fd = oracles.central_diff(lambda p: focal_tversky_loss(p, target, cfg, mask), probs, step=1e-6)
    scale = np.maximum(np.abs(fd), 1e-8)
    assert (np.abs(grad - fd) / scale).max() < 1e-4


def test_gradient_zero_when_class_perfect():
    # a perfectly segmented class must not push weights: zero subgradient
    target = np.zeros((1, 2, 2, 2))
    target[0, 0, :, :1] = 1.0
    target[0, 1, :, 1:] = 1.0
    probs = target.astype(np.float64)
    cfg = LossConfig(gamma=1.5)
    loss, grad = focal_tversky_grad(probs, target, cfg)
    assert loss <= 10 * cfg.epsilon
    assert np.all(np.isfinite(grad))
    assert np.abs(grad).max() == 0.0


def test_masked_pixels_get_zero_gradient(rng):
    probs, target = random_pair(rng, b=1, c=3, h=4, w=4)
    mask = np.ones((1, 4, 4), dtype=bool)
    mask[0, 0, 0] = False
    _, grad = focal_tversky_grad(probs, target, LossConfig(), mask)
    assert np.all(grad[0, :, 0, 0] == 0.0)


def test_shape_validation(rng):
    probs, target = random_pair(rng)
    with pytest.raises(ShapeError):
        focal_tversky_loss(probs, target[:, :4], LossConfig())
    with pytest.raises(ShapeError):
        focal_tversky_loss(probs[0], target[0], LossConfig())
    with pytest.raises(ShapeError):
        tversky_counts(probs, target, np.ones((2, 3, 3), dtype=bool))
