import numpy as np
import pytest

from standseg.errors import TrainingError
from standseg.net import (
    AdamState,
    LossConfig,
    TrainConfig,
    UNetConfig,
    adam_step,
    history_to_csv,
    init_params,
    train,
)
from standseg.net.train import evaluate_tiles


def toy_tiles(rng, n=6, c=3, size=8):
    """Tiles whose input literally is the one-hot target: trivially learnable."""
    tiles = []
    for _ in range(n):
        codes = rng.integers(0, c, (size, size))
        target = (codes[None] == np.arange(c)[:, None, None]).astype(np.float32)
        tiles.append((target.copy(), target, None))
    return tiles


TOY_CFG = UNetConfig(in_channels=3, n_classes=3, base_filters=4, kernel_size=3, depth=1)


# -- optimizer ------------------------------------------------------------------


def test_adam_first_step_is_signed_lr():
    # after one step m_hat = g and v_hat = g*g, so the update is
    # lr * g / (|g| + eps) = lr * sign(g) up to eps
    params = {"w": np.array([1.0, -2.0, 3.0])}
    grads = {"w": np.array([0.5, -0.1, 2.0])}
    cfg = TrainConfig(learning_rate=0.01, max_epochs=2, patience=1)
    adam_step(params, grads, AdamState(), cfg)
    assert np.allclose(params["w"], [1.0 - 0.01, -2.0 + 0.01, 3.0 - 0.01], atol=1e-6)


def test_adam_two_steps_match_hand_formula():
    theta0 = 0.7
    g1, g2 = 0.3, -0.2
    params = {"w": np.array([theta0])}
    cfg = TrainConfig(learning_rate=0.05, max_epochs=2, patience=1)
    state = AdamState()
    adam_step(params, {"w": np.array([g1])}, state, cfg)
    adam_step(params, {"w": np.array([g2])}, state, cfg)

    b1, b2, eps, lr = 0.9, 0.999, 1e-8, 0.05
    m = (1 - b1) * g1
    v = (1 - b2) * g1 * g1
    theta = theta0 - lr * (m / (1 - b1)) / (np.sqrt(v / (1 - b2)) + eps)
    m = b1 * m + (1 - b1) * g2
    v = b2 * v + (1 - b2) * g2 * g2
    theta -= lr * (m / (1 - b1**2)) / (np.sqrt(v / (1 - b2**2)) + eps)
    assert params["w"][0] == pytest.approx(theta, abs=1e-12)


def test_adam_rejects_non_finite_gradient():
    params = {"w": np.zeros(2)}
    state = AdamState()
    cfg = TrainConfig(max_epochs=2, patience=1)
    with pytest.raises(TrainingError, match="'w'"):
        adam_step(params, {"w": np.array([1.0, np.nan])}, state, cfg)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(patience=50, max_epochs=50)
    with pytest.raises(ValueError):
        TrainConfig(patience=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


# -- training loop -----------------------------------------------------------------


def test_training_learns_identity_mapping(rng):
    # needs enough filters: 3x3 convs entangle neighboring pixels, so
    # recovering per-pixel random labels is not free despite the skip path
    tiles = toy_tiles(rng)
    net = UNetConfig(in_channels=3, n_classes=3, base_filters=16, kernel_size=3, depth=1)
    params = init_params(net, seed=0)
    cfg = TrainConfig(learning_rate=0.01, batch_size=4, max_epochs=150, patience=149, seed=0)
    best, history = train(params, net, cfg, LossConfig(), tiles[:4], tiles[4:])
    assert history[-1].val_loss < history[0].val_loss
    _, train_mmcc = evaluate_tiles(best, net, LossConfig(), tiles[:4])
    _, val_mmcc = evaluate_tiles(best, net, LossConfig(), tiles[4:])
    assert train_mmcc > 0.99
    assert val_mmcc > 0.75


def test_train_does_not_mutate_input_params(rng):
    tiles = toy_tiles(rng, n=3)
    params = init_params(TOY_CFG, seed=0)
    before = {k: v.copy() for k, v in params.items()}
    cfg = TrainConfig(learning_rate=0.01, batch_size=2, max_epochs=3, patience=2, seed=0)
    train(params, TOY_CFG, cfg, LossConfig(), tiles[:2], tiles[2:])
    assert all(np.array_equal(params[k], before[k]) for k in params)


def test_train_deterministic_for_seed(rng):
    tiles = toy_tiles(rng, n=4)
    cfg = TrainConfig(learning_rate=0.01, batch_size=2, max_epochs=5, patience=4, seed=11)
    runs = []
    for _ in range(2):
        params = init_params(TOY_CFG, seed=11)
        best, history = train(params, TOY_CFG, cfg, LossConfig(), tiles[:3], tiles[3:])
        runs.append((best, [h.train_loss for h in history]))
    assert runs[0][1] == runs[1][1]
    assert all(np.array_equal(runs[0][0][k], runs[1][0][k]) for k in runs[0][0])


def test_early_stopping_with_scripted_validation(rng):
    # validation improves only through epoch 5; with patience 10 the loop
    # must stop after epoch 15 and return the epoch-5 weights bitwise
    tiles = toy_tiles(rng, n=2)
    params = init_params(TOY_CFG, seed=1)
    cfg = TrainConfig(learning_rate=1e-3, batch_size=2, max_epochs=200, patience=10, seed=1)
    snapshots = {}

    def scripted(current, epoch):
        snapshots[epoch] = {k: v.copy() for k, v in current.items()}
        val = 1.0 / epoch if epoch <= 5 else 0.2
        return val, 0.0

    best, history = train(params, TOY_CFG, cfg, LossConfig(), tiles, [], val_metrics_fn=scripted)
    assert len(history) == 15
    assert [h.epoch for h in history] == list(range(1, 16))
    assert all(np.array_equal(best[k], snapshots[5][k]) for k in best)
    assert not all(np.array_equal(best[k], snapshots[15][k]) for k in best)


def test_tie_does_not_reset_patience(rng):
    tiles = toy_tiles(rng, n=2)
    params = init_params(TOY_CFG, seed=1)
    cfg = TrainConfig(learning_rate=1e-3, batch_size=2, max_epochs=50, patience=3, seed=1)
    # epoch 1 sets best = 1.0; equal values afterwards never improve strictly
    best_seen = []

    def scripted(current, epoch):
        best_seen.append(epoch)
        return 1.0, 0.0

    _, history = train(params, TOY_CFG, cfg, LossConfig(), tiles, [], val_metrics_fn=scripted)
    assert len(history) == 4  # epoch 1 is best, epochs 2-4 exhaust patience 3


def test_evaluate_tiles_pooled_over_batches(rng):
    tiles = toy_tiles(rng, n=5)
    params = init_params(TOY_CFG, seed=2)
    a = evaluate_tiles(params, TOY_CFG, LossConfig(), tiles, batch_size=1)
    b = evaluate_tiles(params, TOY_CFG, LossConfig(), tiles, batch_size=5)
    assert a[0] == pytest.approx(b[0], abs=1e-12)
    assert a[1] == pytest.approx(b[1], abs=1e-12)


def test_train_requires_tiles(rng):
    params = init_params(TOY_CFG, seed=0)
    cfg = TrainConfig(max_epochs=2, patience=1)
    with pytest.raises(ValueError):
        train(params, TOY_CFG, cfg, LossConfig(), [], toy_tiles(rng, n=1))
    with pytest.raises(ValueError):
        train(params, TOY_CFG, cfg, LossConfig(), toy_tiles(rng, n=1), [])


def test_history_csv_layout():
    from standseg.net import HistoryEntry

    text = history_to_csv([HistoryEntry(1, 0.5, 0.6, 0.1), HistoryEntry(2, 0.4, 0.55, 0.2)])
    lines = text.strip().split("\n")
    assert lines[0] == "epoch,train_loss,val_loss,val_mmcc"
    assert lines[1].split(",")[0] == "1"
    assert len(lines) == 3
