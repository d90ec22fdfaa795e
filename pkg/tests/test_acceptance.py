"""End-to-end acceptance gate: twelve checks, one printed verdict line each.

Every test prints `[acceptance NN] PASS|FAIL <measured vs required>` before
asserting, so the suite output doubles as a sign-off sheet. Expected values
come from the brute-force implementations in oracles.py or from closed-form
identities; the expensive product chain (synthetic scene -> composites ->
trained models) runs twice through the CLI in single-thread mode so the
reproducibility check covers the exact artifacts a user would build.
"""

from __future__ import annotations

import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

import oracles
from standseg.composite import fold_plan_from_json, make_tiles, plan_folds, tiles_from_json
from standseg.grid import GeoGrid, read_grid_file
from standseg.metrics import agreement, confusion, evaluate
from standseg.net import (
    LossConfig,
    TrainConfig,
    UNetConfig,
    focal_tversky_grad,
    focal_tversky_loss,
    init_params,
    train,
    unet_backward,
    unet_forward,
)
from standseg.pipeline import subset_mask
from standseg.pointcloud import (
    GridSpec,
    PointCloud,
    finalize_height_grid,
    normalize_heights,
    rasterize_canopy_p2r,
    rasterize_terrain_tin,
)
from standseg.synth import SceneSpec, generate_scene
from standseg.tune import RandomSampler, SearchSpace
from standseg.vectorize import components, mmu_filter, polygonize


def verdict(num: int, ok: bool, detail: str) -> None:
    line = f"[acceptance {num:02d}] {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    assert ok, line


# -- the end-to-end product chain -------------------------------------------------

SYNTH_ARGS = [
    "synth", "--seed", "28", "--extent", "384", "256", "--stands", "24",
    "--mix", "0.25", "0.25", "0.25", "0", "0.25",
    "--als-density", "4", "--dap-density", "10", "--munis", "3", "--out", ".",
]
PRODUCT_STEPS = [
    ["chm", "--points", "als.csv", "--grid-json", "grid.json", "--out", "chm_als.sdgr"],
    ["chm", "--points", "dap.csv", "--ground-points", "als.csv", "--grid-json", "grid.json",
     "--out", "chm_dap.sdgr"],
    ["ortho", "--points", "dap.csv", "--grid-json", "grid.json", "--out", "ortho.sdgr"],
    ["composite", "--combo", "RGBI-ALS", "--ortho", "ortho.sdgr", "--chm", "chm_als.sdgr",
     "--out", "comp_als.sdgr"],
    ["composite", "--combo", "RGBI-DAP", "--ortho", "ortho.sdgr", "--chm", "chm_dap.sdgr",
     "--out", "comp_dap.sdgr"],
    ["tiles", "--grid-json", "grid.json", "--tile", "64", "--municipalities",
     "municipalities.json", "--out", "tiles.json"],
    ["folds", "--tiles", "tiles.json", "--val-period", "4", "--val-offset", "0", "3",
     "--out", "folds.json"],
]


def train_args(composite: str, model: str, history: str) -> list[str]:
    return [
        "train", "--composite", composite, "--mask", "true_mask.sdgr",
        "--tiles", "tiles.json", "--folds", "folds.json", "--fold", "0",
        "--lr", "5e-3", "--batch", "2", "--filters", "8", "--kernel", "3", "--depth", "2",
        "--alpha", "0.5", "--gamma", "1.0", "--epochs", "200", "--patience", "199",
        "--seed", "9", "--history", history, "--out", model,
    ]


def run_cli(args: list[str], cwd: Path) -> str:
    proc = subprocess.run(
        [sys.executable, "-m", "standseg.cli", *args, "--threads", "1"],
        cwd=cwd, capture_output=True, text=True, timeout=900,
    )
    assert proc.returncode == 0, f"{' '.join(args[:2])} exited {proc.returncode}: {proc.stderr}"
    return proc.stdout


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    """Scene -> composites -> ALS model -> prediction, built twice via the CLI."""
    base = tmp_path_factory.mktemp("chain")
    runs = {}
    for run in ("run1", "run2"):
        d = base / run
        d.mkdir()
        run_cli(SYNTH_ARGS, d)
        for step in PRODUCT_STEPS:
            run_cli(step, d)
        t0 = time.time()
        run_cli(train_args("comp_als.sdgr", "model_als.bin", "history_als.csv"), d)
        train_secs = time.time() - t0
        run_cli(["predict", "--model", "model_als.bin", "--composite", "comp_als.sdgr",
                 "--out", "pred_als.sdgr"], d)
        runs[run] = {"dir": d, "train_secs": train_secs}
    d1 = runs["run1"]["dir"]
    run_cli(["evaluate", "--pred", "pred_als.sdgr", "--ref", "true_mask.sdgr",
             "--tiles", "tiles.json", "--folds", "folds.json", "--fold", "0",
             "--subset", "test", "--out", "eval_als.json"], d1)
    return runs


def fold_test_selector(scene: Path) -> tuple[np.ndarray, list[int]]:
    """(boolean pixel selector, reference-present classes) for fold 0's test tiles."""
    mask = read_grid_file(scene / "true_mask.sdgr")
    tiles, _, _ = tiles_from_json(json.loads((scene / "tiles.json").read_text()))
    plan = fold_plan_from_json(json.loads((scene / "folds.json").read_text()))
    sel = subset_mask((mask.height, mask.width), tiles, plan.folds[0].test_tiles)
    present = sorted(int(c) for c in np.unique(mask.data[0][sel]))
    return sel, present


def present_mean_mcc(report: dict, present: list[int]) -> float:
    return float(np.mean([report["per_class"][str(c)]["mcc"] for c in present]))


# -- 1: analytic gradients vs central finite differences ---------------------------


def gate_signature(cache: dict) -> list[np.ndarray]:
    """Activation pattern of a forward pass: ReLU gates plus pooling argmaxes.

    A finite-difference probe is only a derivative estimate while the pattern
    stays constant over the probed interval; probes that flip a gate straddle
    a non-differentiable point and are excluded from the comparison.
    """
    sig = []
    for name in sorted(cache):
        if name in ("skips", "drops", "pools", "head_in", "probs"):
            continue
        _, relu_cache = cache[name]
        sig.append(relu_cache[0])
    for pool_cache in cache["pools"]:
        sig.append(pool_cache[0])
    return sig


def same_signature(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def central_difference(params, cfg, x, target, loss_cfg, base_sig, name, i, step):
    """Two-sided loss difference at one parameter, or None if either probe
    flips an activation gate (the loss has a kink inside the interval and
    the quotient no longer estimates the derivative at the center)."""
    flat = params[name].ravel()
    keep = flat[i]
    flat[i] = keep + step
    p_hi, c_hi = unet_forward(params, cfg, x, want_cache=True)
    hi = focal_tversky_loss(p_hi, target, loss_cfg, None)
    hi_ok = same_signature(base_sig, gate_signature(c_hi))
    flat[i] = keep - step
    p_lo, c_lo = unet_forward(params, cfg, x, want_cache=True)
    lo = focal_tversky_loss(p_lo, target, loss_cfg, None)
    lo_ok = same_signature(base_sig, gate_signature(c_lo))
    flat[i] = keep
    if not (hi_ok and lo_ok):
        return None
    return (hi - lo) / (2 * step)


def test_unet_gradients_match_finite_differences():
    cfg = UNetConfig(in_channels=5, n_classes=5, base_filters=4, kernel_size=3, depth=2)
    params = init_params(cfg, seed=7, dtype="f64")
    rng = np.random.default_rng(11)
    x = rng.normal(0.0, 1.0, size=(1, 5, 16, 16))
    codes = rng.integers(0, 5, size=(1, 16, 16))
    target = np.zeros((1, 5, 16, 16))
    for c in range(5):
        target[:, c][codes == c] = 1.0
    loss_cfg = LossConfig(alpha=0.4, gamma=1.3)

    t0 = time.time()
    probs, cache0 = unet_forward(params, cfg, x, training=True, want_cache=True)
    base_sig = gate_signature(cache0)
    _, dprobs = focal_tversky_grad(probs, target, loss_cfg, None)
    grads = unet_backward(params, cfg, cache0, dprobs)

    def rel_err(a: float, fd: float) -> float:
        return abs(a - fd) / max(abs(a) + abs(fd), 1e-8)

    # gate-crossing probes retry at a 100x narrower step; the looser bound
    # there reflects the larger cancellation error, not a weaker claim
    max_rel = 0.0
    max_rel_retry = 0.0
    checked = 0
    retried = 0
    unverified = 0
    total = sum(g.size for g in grads.values())
    for name in sorted(grads):
        flat_g = grads[name].ravel()
        for i in range(flat_g.size):
            args = (params, cfg, x, target, loss_cfg, base_sig, name, i)
            fd = central_difference(*args, step=1e-3)
            if fd is not None:
                max_rel = max(max_rel, rel_err(flat_g[i], fd))
                checked += 1
                continue
            fd = central_difference(*args, step=1e-5)
            if fd is not None:
                max_rel_retry = max(max_rel_retry, rel_err(flat_g[i], fd))
                retried += 1
            else:
                unverified += 1
    elapsed = time.time() - t0

    ok = (
        max_rel < 1e-4 and max_rel_retry < 1e-3
        and unverified <= 0.02 * total and elapsed < 60.0
    )
    verdict(1, ok,
            f"max rel err {max_rel:.2e} (tol 1e-4) at step 1e-3 over {checked}/{total} "
            f"parameters; {retried} probes straddling an activation boundary re-checked at "
            f"step 1e-5, max rel err {max_rel_retry:.2e} (tol 1e-3); {unverified} parameters "
            f"on a boundary at both steps; {elapsed:.0f}s (cap 60s)")


# -- 2: loss identities -------------------------------------------------------------


def test_loss_identities():
    rng = np.random.default_rng(21)

    codes = rng.integers(0, 5, size=(2, 8, 8))
    target = np.zeros((2, 5, 8, 8))
    for c in range(5):
        target[:, c][codes == c] = 1.0
    cfg = LossConfig()
    perfect = focal_tversky_loss(target.copy(), target, cfg, None)

    dice_cfg = LossConfig(alpha=0.5, gamma=1.0, epsilon=0.0)
    worst_gap = 0.0
    for _ in range(100):
        logits = rng.normal(0.0, 2.0, size=(3, 5, 8, 8))
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs = e / e.sum(axis=1, keepdims=True)
        codes = rng.integers(0, 5, size=(3, 8, 8))
        tgt = np.zeros_like(probs)
        for c in range(5):
            tgt[:, c][codes == c] = 1.0
        got = focal_tversky_loss(probs, tgt, dice_cfg, None)
        dice = 0.0
        for c in range(5):
            p, g = probs[:, c], tgt[:, c]
            tp = float((p * g).sum())
            fp = float((p * (1.0 - g)).sum())
            fn = float(((1.0 - p) * g).sum())
            dice += 1.0 - 2.0 * tp / (2.0 * tp + fp + fn)
        worst_gap = max(worst_gap, abs(got - dice / 5.0))

    hand = focal_tversky_loss(
        np.array([[[[0.6]], [[0.4]]]]), np.array([[[[1.0]], [[0.0]]]]), dice_cfg, None
    )

    ok = perfect <= 10 * cfg.epsilon and worst_gap <= 1e-9 and hand == 0.625
    verdict(2, ok,
            f"perfect-prediction loss {perfect:.1e} (cap {10 * cfg.epsilon:.0e}); "
            f"max |loss - macro soft-Dice| {worst_gap:.2e} on 100 pairs (tol 1e-9); "
            f"hand case {hand!r} (want exactly 0.625)")


# -- 3: metrics vs brute-force oracle -----------------------------------------------


def test_metrics_match_brute_force():
    rng = np.random.default_rng(33)
    keys = ("oa", "mmcc", "miou", "mf1", "mua", "mpa")
    worst = 0.0
    for _ in range(100):
        pred = rng.integers(0, 5, size=(32, 32))
        ref = rng.integers(0, 5, size=(32, 32))
        rep = evaluate(confusion(pred, ref, 5))
        want = oracles.metrics_from_cm(oracles.confusion_loops(pred, ref, 5))
        for key in keys:
            worst = max(worst, abs(getattr(rep, key) - want[key]))

    ref = rng.integers(0, 2, size=(6, 6))
    same = evaluate(confusion(ref, ref, 2)).per_class[0]["mcc"]
    inverted = evaluate(confusion(1 - ref, ref, 2)).per_class[0]["mcc"]
    orthogonal = evaluate(
        confusion(np.array([0, 1, 0, 1]), np.array([0, 0, 1, 1]), 2)
    ).per_class[0]["mcc"]

    ok = worst <= 1e-12 and same == 1.0 and inverted == -1.0 and orthogonal == 0.0
    verdict(3, ok,
            f"max |metric - oracle| {worst:.2e} over 100 random 32x32 pairs (tol 1e-12); "
            f"binary MCC fixtures ({same}, {orthogonal}, {inverted}) == (1.0, 0.0, -1.0)")


# -- 4: agreement identities ---------------------------------------------------------


def test_agreement_identities():
    rng = np.random.default_rng(44)
    a = rng.integers(0, 5, size=(40, 40))
    a.flat[:5] = np.arange(5)  # force every class present
    self_rep = agreement(a, a, 5)
    self_ok = all(
        getattr(self_rep, key) == 1.0 for key in ("oa", "mmcc", "miou", "mf1", "mua", "mpa")
    )

    sym_ok = 0
    for _ in range(50):
        p = rng.integers(0, 5, size=(20, 20))
        q = rng.integers(0, 5, size=(20, 20))
        ab = agreement(p, q, 5)
        ba = agreement(q, p, 5)
        if ab.mua == ba.mpa and ab.mpa == ba.mua and ab.oa == ba.oa:
            sym_ok += 1

    ok = self_ok and sym_ok == 50
    verdict(4, ok,
            f"self-agreement metrics all exactly 1.0: {self_ok}; "
            f"mUA(A,B)==mPA(B,A) and OA symmetric on {sym_ok}/50 pairs (exact)")


# -- 5: rasterization oracles ---------------------------------------------------------


def test_rasterization_oracles():
    rng = np.random.default_rng(55)
    spec = GridSpec(origin_x=2.0, origin_y=14.0, width=6, height=5, cell_size=2.0)
    clouds_ok = 0
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        xs = rng.uniform(0.0, 14.0, n)
        ys = rng.uniform(2.0, 16.0, n)
        zs = rng.uniform(-2.0, 40.0, n)
        cloud = PointCloud(x=xs, y=ys, z=zs, cls=np.ones(n, dtype=np.int8), normalized=True)
        grid = rasterize_canopy_p2r(cloud, spec)
        want, hit = oracles.p2r_max(xs, ys, zs, 2.0, 14.0, 6, 5, 2.0)
        if np.array_equal(grid.data[0][hit], want[hit].astype(np.float32)) and np.array_equal(
            grid.nodata_mask, ~hit
        ):
            clouds_ok += 1

    gx, gy = np.meshgrid(np.linspace(0.0, 40.0, 9), np.linspace(0.0, 30.0, 8))
    gx, gy = gx.ravel(), gy.ravel()
    gz = 0.05 * gx - 0.03 * gy + 12.0
    ground = PointCloud(x=gx, y=gy, z=gz, cls=np.full(gx.size, 2, dtype=np.int8))
    tin_spec = GridSpec(origin_x=0.0, origin_y=30.0, width=40, height=30, cell_size=1.0)
    dtm = rasterize_terrain_tin(ground, tin_spec)
    cols = np.arange(40) + 0.5
    rows = 30.0 - (np.arange(30) + 0.5)
    plane = 0.05 * cols[None, :] - 0.03 * rows[:, None] + 12.0
    tin_err = float(np.max(np.abs(dtm.data[0] - plane)))

    raw = GeoGrid(origin_x=0.0, origin_y=1.0, cell_size=1.0, width=3, height=1, channels=1,
                  channel_names=("chm",), dtype="f32",
                  data=np.array([[[-3.0, 25.0, 60.0]]], dtype=np.float32))
    final = finalize_height_grid(raw).data[0, 0]
    final_ok = np.array_equal(final, np.array([0.0, 0.5, 1.0], dtype=np.float32))

    ok = clouds_ok == 1000 and tin_err <= 1e-9 and final_ok
    verdict(5, ok,
            f"p2r == 9-replica oracle on {clouds_ok}/1000 clouds (exact); "
            f"TIN affine-plane max err {tin_err:.1e} (tol 1e-9); "
            f"finalize {{-3,25,60}} -> {final.tolist()} (want [0.0, 0.5, 1.0])")


# -- 6: height normalization -----------------------------------------------------------


def test_height_normalization():
    scene = generate_scene(SceneSpec(
        extent_m=(96.0, 64.0), n_stands=5, class_mix=(0.2, 0.2, 0.2, 0.2, 0.2),
        als_density=3.0, dap_density=8.0, n_municipalities=2, seed=4,
    ))
    als = normalize_heights(scene.als)
    ground_max = float(np.max(np.abs(als.z[scene.als.ground()])))

    dap = normalize_heights(scene.dap, ground_source=scene.als)
    sel = scene.dap.ground()
    rmse = float(np.sqrt(np.mean(dap.z[sel] ** 2)))

    ok = ground_max == 0.0 and rmse < 0.05
    verdict(6, ok,
            f"ground returns after self-normalization: max |height| = {ground_max} (want 0 exactly, "
            f"n={int(scene.als.ground().sum())}); ground-height RMSE {rmse:.4f} m "
            f"over {int(sel.sum())} photogrammetric ground points (cap 0.05 m)")


# -- 7: leave-one-municipality-out fold plan -------------------------------------------


def test_fold_plan_shares():
    spec = GridSpec(origin_x=0.0, origin_y=80.0, width=480, height=80, cell_size=1.0)
    tiles = make_tiles(spec, tile_px=8)
    for tile in tiles:
        tile.municipality = tile.lattice_col // 10  # six 80 m bands, 100 tiles each
    plan = plan_folds(tiles)

    all_ids = {t.id for t in tiles}
    test_seen: dict[int, int] = {tid: 0 for tid in all_ids}
    disjoint_covering = True
    shares = []
    muni_of = {t.id: t.municipality for t in tiles}
    for fold in plan.folds:
        tr, va, te = set(fold.train_tiles), set(fold.val_tiles), set(fold.test_tiles)
        if tr & va or tr & te or va & te or (tr | va | te) != all_ids:
            disjoint_covering = False
        for tid in te:
            test_seen[tid] += 1
        for muni in sorted({m for m in muni_of.values() if m != fold.test_municipality}):
            muni_ids = {tid for tid, m in muni_of.items() if m == muni}
            shares.append(len(va & muni_ids) / len(muni_ids))

    once = all(n == 1 for n in test_seen.values())
    share_lo, share_hi = min(shares), max(shares)
    shares_ok = 0.14 <= share_lo and share_hi <= 0.18

    ok = len(plan.folds) == 6 and once and disjoint_covering and shares_ok
    verdict(7, ok,
            f"600 tiles over 6 municipalities: every tile in exactly one test fold ({once}); "
            f"splits disjoint and covering ({disjoint_covering}); validation share per "
            f"municipality {share_lo:.3f}..{share_hi:.3f} (need 0.16 +/- 0.02)")


# -- 8: early stopping restores the best epoch ------------------------------------------


def test_early_stopping_restores_best():
    cfg = UNetConfig(in_channels=2, n_classes=2, base_filters=4, kernel_size=3, depth=1)
    params = init_params(cfg, seed=3)
    rng = np.random.default_rng(8)
    tiles = []
    for _ in range(2):
        x = rng.normal(0.0, 1.0, size=(2, 8, 8)).astype(np.float32)
        codes = rng.integers(0, 2, size=(8, 8))
        g = np.zeros((2, 8, 8), dtype=np.float32)
        for c in range(2):
            g[c][codes == c] = 1.0
        tiles.append((x, g, None))

    snapshot: dict[str, dict] = {}

    def scripted_validation(weights, epoch):
        if epoch == 5:
            snapshot["weights"] = {k: v.copy() for k, v in weights.items()}
        return (1.0 - 0.1 * epoch) if epoch <= 5 else 1.0, 0.0

    train_cfg = TrainConfig(learning_rate=1e-3, batch_size=2, max_epochs=50, patience=10, seed=3)
    best, history = train(params, cfg, train_cfg, LossConfig(), tiles, [],
                          val_metrics_fn=scripted_validation)

    stopped_at = len(history)
    restored = (
        best.keys() == snapshot["weights"].keys()
        and all(
            best[k].dtype == snapshot["weights"][k].dtype
            and best[k].tobytes() == snapshot["weights"][k].tobytes()
            for k in best
        )
    )
    ok = stopped_at == 15 and restored
    verdict(8, ok,
            f"validation improves only through epoch 5, patience 10: stopped after epoch "
            f"{stopped_at} (want 15); restored weights bitwise-equal to epoch-5 snapshot: {restored}")


# -- 9: end-to-end quality and reproducibility -------------------------------------------


def test_end_to_end_quality_and_reproducibility(chain):
    d1, d2 = chain["run1"]["dir"], chain["run2"]["dir"]

    artifacts = ("als.csv", "dap.csv", "true_mask.sdgr", "model_als.bin",
                 "history_als.csv", "pred_als.sdgr")
    identical = sum((d1 / a).read_bytes() == (d2 / a).read_bytes() for a in artifacts)

    epochs = len((d1 / "history_als.csv").read_text().splitlines()) - 1
    report = json.loads((d1 / "eval_als.json").read_text())
    _, present = fold_test_selector(d1)
    mmcc = present_mean_mcc(report, present)
    t1, t2 = chain["run1"]["train_secs"], chain["run2"]["train_secs"]

    ok = (
        report["oa"] >= 0.90 and mmcc >= 0.80 and identical == len(artifacts)
        and epochs <= 200 and max(t1, t2) < 600.0 and len(present) == 4
    )
    verdict(9, ok,
            f"held-out fold OA {report['oa']:.4f} (need >= 0.90), mMCC over the {len(present)} "
            f"reference-present classes {mmcc:.4f} (need >= 0.80); {identical}/{len(artifacts)} "
            f"artifacts bitwise-identical across two runs; {epochs} epochs (cap 200), "
            f"single-core training {t1:.0f}s/{t2:.0f}s (cap 600s)")


# -- 10: sensor-combination parity ---------------------------------------------------------


def test_input_combination_parity(chain):
    d1 = chain["run1"]["dir"]
    run_cli(train_args("comp_dap.sdgr", "model_dap.bin", "history_dap.csv"), d1)
    run_cli(["predict", "--model", "model_dap.bin", "--composite", "comp_dap.sdgr",
             "--out", "pred_dap.sdgr"], d1)
    run_cli(["evaluate", "--pred", "pred_dap.sdgr", "--ref", "true_mask.sdgr",
             "--tiles", "tiles.json", "--folds", "folds.json", "--fold", "0",
             "--subset", "test", "--out", "eval_dap.json"], d1)

    sel, present = fold_test_selector(d1)
    mcc_als = present_mean_mcc(json.loads((d1 / "eval_als.json").read_text()), present)
    mcc_dap = present_mean_mcc(json.loads((d1 / "eval_dap.json").read_text()), present)

    pred_als = read_grid_file(d1 / "pred_als.sdgr").data[0]
    pred_dap = read_grid_file(d1 / "pred_dap.sdgr").data[0]
    pair = agreement(pred_als, pred_dap, 5, sel)
    mcc_pair = float(np.mean([pair.per_class[c]["mcc"] for c in present]))

    gap = abs(mcc_als - mcc_dap)
    ok = gap <= 0.10 and mcc_pair > mcc_als and mcc_pair > mcc_dap
    verdict(10, ok,
            f"held-out mMCC: lidar-composite {mcc_als:.4f} vs photogrammetry-composite "
            f"{mcc_dap:.4f}, gap {gap:.4f} (cap 0.10); inter-model agreement mMCC {mcc_pair:.4f} "
            f"exceeds both (ordering required)")


# -- 11: vectorization conserves area ---------------------------------------------------------


def test_vectorization_area_conservation(chain):
    d1 = chain["run1"]["dir"]
    pred = read_grid_file(d1 / "pred_als.sdgr")
    region_set = components(pred, connectivity=4)

    cell_area = pred.cell_size ** 2
    total_area = pred.width * pred.height * cell_area
    labeled_area = region_set.total_pixels() * cell_area
    before = sum(p.area_m2 for p in polygonize(region_set))

    filtered, log = mmu_filter(region_set, min_area_m2=2000.0)
    polygons = polygonize(filtered)
    after = sum(p.area_m2 for p in polygons)
    unflagged_small = [p for p in polygons if p.area_m2 < 2000.0 and not p.flagged]
    smallest_kept = min((p.area_m2 for p in polygons if not p.flagged), default=float("inf"))

    ok = (
        labeled_area == total_area and before == total_area and after == total_area
        and not unflagged_small and len(log) > 0
    )
    verdict(11, ok,
            f"polygon area before {before:.0f} and after {after:.0f} MMU filtering == "
            f"{total_area:.0f} m2 grid area (exact); {len(log)} regions merged; "
            f"{len(unflagged_small)} unflagged regions under 2000 m2 "
            f"(smallest kept {smallest_kept:.0f} m2)")


# -- 12: hyperparameter sampler ---------------------------------------------------------------


def test_sampler_bounds_and_distribution():
    space = SearchSpace()
    sampler = RandomSampler()
    rng = np.random.default_rng(120)
    draws = [sampler.sample(space, [], rng) for _ in range(10_000)]

    in_bounds = all(
        1e-6 <= p.learning_rate <= 1e-3
        and p.batch_size in (4, 8, 16)
        and 8 <= p.base_filters <= 64
        and p.kernel_size in (3, 5, 7)
        and 0.0 <= p.dropout <= 0.5
        and 0.3 <= p.alpha <= 0.7
        and 1.0 <= p.gamma <= 2.0
        for p in draws
    )
    beta_exact = all(p.beta == 1.0 - p.alpha for p in draws)

    log_lr = np.log10([p.learning_rate for p in draws])
    counts, _ = np.histogram(log_lr, bins=10, range=(-6.0, -3.0))
    p_value = float(stats.chisquare(counts).pvalue)

    ok = in_bounds and beta_exact and p_value > 0.01
    verdict(12, ok,
            f"10000 draws inside bounds: {in_bounds}; beta == 1 - alpha exact: {beta_exact}; "
            f"log10(lr) uniformity chi-squared p = {p_value:.3f} (need > 0.01)")
