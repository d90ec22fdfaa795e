"""Command-line pipeline driver.

Subcommands cover the full flow: synth scenes, CHM/DTM/orthophoto
rasterization, composite stacking, stand-map rasterization, tiling and fold
planning, training, prediction, evaluation, inter-model agreement,
hyperparameter search, vectorization, and PNG rendering.

Settings resolve as flags > JSON config (per-subcommand section, then top
level) > built-in defaults. All randomness descends from one --seed through
labeled streams. `--threads N` pins the numeric thread pools before numpy
loads; `--threads 1` is the bitwise-reproducible mode, which is why heavy
imports happen inside the command handlers, not at module scope.

Exit codes: 0 success, 1 usage error, 2 data/input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

log = logging.getLogger("standseg")

_THREAD_ENV = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _version() -> str:
    try:
        from importlib.metadata import version

        return version("standseg")
    except Exception:
        return "0.0.0"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse maps usage problems to exit code 2; this pipeline reserves 2
    for data errors, so usage failures raise and main returns 1."""

    def error(self, message):
        raise _UsageError(message)


def _apply_thread_env(argv: list[str]) -> None:
    threads = None
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif arg.startswith("--threads="):
            threads = arg.split("=", 1)[1]
    if threads is not None:
        if "numpy" in sys.modules:
            log.debug("numpy already imported; thread env applies to new pools only")
        for name in _THREAD_ENV:
            os.environ[name] = str(threads)


class _Settings:
    """flags > config[subcommand] > config top level > defaults."""

    def __init__(self, args: argparse.Namespace):
        self.args = vars(args)
        self.config: dict = {}
        path = self.args.get("config")
        if path:
            with open(path, "r", encoding="utf-8") as fh:
                self.config = json.load(fh)
            if not isinstance(self.config, dict):
                raise ValueError("config file must hold a JSON object")
        self.section = self.config.get(self.args.get("command") or "", {})
        if not isinstance(self.section, dict):
            raise ValueError("config subcommand section must be a JSON object")

    def get(self, name: str, default=None, required: bool = False):
        value = self.args.get(name)
        if value is None:
            value = self.section.get(name)
        if value is None:
            top = self.config.get(name)
            value = top if not isinstance(top, dict) else None
        if value is None:
            value = default
        if required and value is None:
            raise _UsageError(f"missing required setting --{name.replace('_', '-')}")
        return value


def _grid_spec(settings: _Settings):
    from .pointcloud import GridSpec

    values = settings.get("grid")
    if values is not None:
        if len(values) == 4:
            values = list(values) + [1.0]
        if len(values) != 5:
            raise _UsageError("--grid takes ORIGIN_X ORIGIN_Y WIDTH HEIGHT [CELL]")
        x0, y0, w, h, cell = values
        return GridSpec(origin_x=float(x0), origin_y=float(y0), width=int(w), height=int(h), cell_size=float(cell))
    path = settings.get("grid_json")
    if path is None:
        raise _UsageError("a grid is required: pass --grid or --grid-json")
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return GridSpec(
        origin_x=float(doc["origin_x"]),
        origin_y=float(doc["origin_y"]),
        width=int(doc["width"]),
        height=int(doc["height"]),
        cell_size=float(doc.get("cell_size", 1.0)),
    )


def _load_tiles(path):
    from .composite import tiles_from_json

    with open(path, "r", encoding="utf-8") as fh:
        return tiles_from_json(json.load(fh))


def _load_fold_plan(path):
    from .composite import fold_plan_from_json

    with open(path, "r", encoding="utf-8") as fh:
        return fold_plan_from_json(json.load(fh))


def _write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _done(path) -> int:
    print(path)
    return 0


# -- scene and raster products ------------------------------------------------------


def cmd_synth(args) -> int:
    from .synth import SceneSpec, generate_scene, write_scene

    s = _Settings(args)
    spec = SceneSpec(
        seed=int(s.get("seed", 0)),
        extent_m=tuple(float(v) for v in s.get("extent", (384.0, 256.0))),
        cell_size=float(s.get("cell", 1.0)),
        n_stands=int(s.get("stands", 30)),
        class_mix=tuple(float(v) for v in s.get("mix", (0.16, 0.21, 0.21, 0.21, 0.21))),
        als_density=float(s.get("als_density", 5.0)),
        dap_density=float(s.get("dap_density", 25.0)),
        dap_smoothing_radius=float(s.get("smooth_radius", 2.0)),
        dap_ground_frac=float(s.get("ground_frac", 0.02)),
        boundary_shift_m=float(s.get("shift", 2.0)),
        n_municipalities=int(s.get("munis", 6)),
    )
    scene = generate_scene(spec)
    paths = write_scene(scene, s.get("out", required=True))
    for name in ("als", "dap", "stands", "municipalities", "true_mask", "grid"):
        print(paths[name])
    return 0


def cmd_chm(args) -> int:
    from .grid import write_grid_file
    from .pointcloud import (
        finalize_height_grid,
        normalize_heights,
        rasterize_canopy_p2r,
        read_points,
    )

    s = _Settings(args)
    spec = _grid_spec(s)
    cloud = read_points(s.get("points", required=True))
    ground_path = s.get("ground_points")
    ground = read_points(ground_path) if ground_path else None
    cloud = normalize_heights(
        cloud, k=int(s.get("k", 10)), power=float(s.get("power", 2.0)), ground_source=ground
    )
    grid = rasterize_canopy_p2r(cloud, spec, subcircle_radius=float(s.get("subcircle", 0.15)))
    grid = finalize_height_grid(grid, cap=float(s.get("cap", 50.0)))
    out = s.get("out", required=True)
    write_grid_file(grid, out)
    return _done(out)


def cmd_dtm(args) -> int:
    from .grid import write_grid_file
    from .pointcloud import rasterize_terrain_tin, read_points

    s = _Settings(args)
    spec = _grid_spec(s)
    cloud = read_points(s.get("points", required=True))
    grid = rasterize_terrain_tin(cloud, spec)
    out = s.get("out", required=True)
    write_grid_file(grid, out)
    return _done(out)


def cmd_ortho(args) -> int:
    from .grid import write_grid_file
    from .pointcloud import rasterize_spectral, read_points

    s = _Settings(args)
    spec = _grid_spec(s)
    cloud = read_points(s.get("points", required=True))
    grid = rasterize_spectral(cloud, spec, fill_kernel=int(s.get("fill_kernel", 3)))
    out = s.get("out", required=True)
    write_grid_file(grid, out)
    return _done(out)


def cmd_composite(args) -> int:
    from .composite import scale_channel, stack
    from .grid import read_grid_file, write_grid_file

    s = _Settings(args)
    combo = s.get("combo", required=True)
    ortho = read_grid_file(s.get("ortho", required=True))
    chm = read_grid_file(s.get("chm", required=True))  # already finalized to [0, 1]
    spectral = scale_channel(ortho, "spectral")
    dtm = None
    if combo == "RGBI-DAP-DTM":
        dtm_path = s.get("dtm")
        if dtm_path is None:
            raise _UsageError("combo RGBI-DAP-DTM needs --dtm")
        dtm = scale_channel(read_grid_file(dtm_path), "dtm", dtm_max=float(s.get("dtm_max", 375.0)))
    chm_source = "als" if combo == "RGBI-ALS" else "dap"
    comp = stack(spectral, chm, dtm, chm_source=chm_source)
    out = s.get("out", required=True)
    write_grid_file(comp.grid, out)
    return _done(out)


def cmd_rasterize_stands(args) -> int:
    from .grid import write_grid_file
    from .refmask import load_stand_map, rasterize_stands

    s = _Settings(args)
    spec = _grid_spec(s)
    stands = load_stand_map(s.get("stands", required=True))
    mask = rasterize_stands(stands, spec)
    out = s.get("out", required=True)
    write_grid_file(mask.grid, out)
    return _done(out)


# -- tiling and folds ----------------------------------------------------------------


def cmd_tiles(args) -> int:
    from .composite import assign_municipalities, make_tiles, municipalities_from_json, tiles_to_json

    s = _Settings(args)
    spec = _grid_spec(s)
    tile_px = int(s.get("tile", 512))
    tiles = make_tiles(spec, tile_px=tile_px, min_coverage=float(s.get("min_coverage", 0.0)))
    with open(s.get("municipalities", required=True), "r", encoding="utf-8") as fh:
        munis = municipalities_from_json(json.load(fh))
    assign_municipalities(tiles, munis, spec)
    out = s.get("out", required=True)
    _write_json(out, tiles_to_json(tiles, spec, tile_px))
    return _done(out)


def cmd_folds(args) -> int:
    from .composite import fold_plan_to_json, plan_folds

    s = _Settings(args)
    tiles, _, _ = _load_tiles(s.get("tiles", required=True))
    offset = s.get("val_offset", (0, 0))
    plan = plan_folds(tiles, val_period=int(s.get("val_period", 5)), val_offset=tuple(int(v) for v in offset))
    out = s.get("out", required=True)
    _write_json(out, fold_plan_to_json(plan))
    return _done(out)


# -- model lifecycle -----------------------------------------------------------------


def _hyper_settings(s: _Settings):
    from .net import LossConfig, TrainConfig, UNetConfig

    unet = dict(
        base_filters=int(s.get("filters", 16)),
        kernel_size=int(s.get("kernel", 3)),
        depth=int(s.get("depth", 4)),
        dropout=float(s.get("dropout", 0.0)),
    )
    train_cfg = TrainConfig(
        learning_rate=float(s.get("lr", 1e-4)),
        batch_size=int(s.get("batch", 8)),
        max_epochs=int(s.get("epochs", 50)),
        patience=int(s.get("patience", 10)),
        seed=int(s.get("seed", 0)),
    )
    loss_cfg = LossConfig(
        alpha=float(s.get("alpha", 0.5)),
        gamma=float(s.get("gamma", 1.0)),
        epsilon=float(s.get("epsilon", 1e-6)),
    )
    return unet, train_cfg, loss_cfg


def cmd_train(args) -> int:
    from .grid import read_grid_file
    from .net import UNetConfig, history_to_csv, write_model_file
    from .pipeline import train_fold
    from .refmask import N_CLASSES

    s = _Settings(args)
    comp = read_grid_file(s.get("composite", required=True))
    mask = read_grid_file(s.get("mask", required=True))
    tiles, _, _ = _load_tiles(s.get("tiles", required=True))
    plan = _load_fold_plan(s.get("folds", required=True))
    fold_idx = int(s.get("fold", 0))
    if not 0 <= fold_idx < len(plan.folds):
        raise _UsageError(f"--fold must be in [0, {len(plan.folds)}), got {fold_idx}")
    fold = plan.folds[fold_idx]

    unet_kw, train_cfg, loss_cfg = _hyper_settings(s)
    cfg = UNetConfig(in_channels=comp.channels, n_classes=N_CLASSES, **unet_kw)
    best, history, val_mmcc = train_fold(
        comp,
        mask,
        tiles,
        fold.train_tiles,
        fold.val_tiles,
        cfg,
        train_cfg,
        loss_cfg,
        log_fn=lambda h: log.info(
            "epoch %d train_loss %.6f val_loss %.6f val_mmcc %.4f",
            h.epoch,
            h.train_loss,
            h.val_loss,
            h.val_mmcc,
        ),
    )
    out = s.get("out", required=True)
    write_model_file(out, best, cfg)
    hist_path = s.get("history")
    if hist_path:
        with open(hist_path, "w", encoding="utf-8") as fh:
            fh.write(history_to_csv(history))
    print(f"{out}\tepochs={len(history)}\tval_mmcc={val_mmcc:.6f}")
    return 0


def cmd_predict(args) -> int:
    from .grid import read_grid_file, write_grid_file
    from .net import read_model_file
    from .pipeline import predict_mask

    s = _Settings(args)
    comp = read_grid_file(s.get("composite", required=True))
    params, cfg = read_model_file(s.get("model", required=True))
    tiles = None
    tiles_path = s.get("tiles")
    if tiles_path:
        tiles, _, _ = _load_tiles(tiles_path)
    mask = predict_mask(params, cfg, comp, tiles)
    out = s.get("out", required=True)
    write_grid_file(mask, out)
    return _done(out)


def _evaluation_masks(s: _Settings, pred, ref):
    import numpy as np

    valid = pred.valid_mask() & ref.valid_mask()
    tiles_path = s.get("tiles")
    if tiles_path is None:
        return valid
    from .pipeline import subset_mask

    tiles, _, _ = _load_tiles(tiles_path)
    plan = _load_fold_plan(s.get("folds", required=True))
    fold_idx = int(s.get("fold", 0))
    subset = s.get("subset", "test")
    fold = plan.folds[fold_idx]
    ids = {"train": fold.train_tiles, "val": fold.val_tiles, "test": fold.test_tiles}.get(subset)
    if ids is None:
        raise _UsageError(f"--subset must be train, val or test, got {subset!r}")
    return valid & subset_mask(valid.shape, tiles, ids)


def cmd_evaluate(args) -> int:
    from .grid import read_grid_file
    from .metrics import confusion, evaluate, report_to_json, reports_to_csv
    from .refmask import N_CLASSES

    s = _Settings(args)
    pred = read_grid_file(s.get("pred", required=True))
    ref = read_grid_file(s.get("ref", required=True))
    valid = _evaluation_masks(s, pred, ref)
    cm = confusion(pred.data[0], ref.data[0], N_CLASSES, valid)
    report = evaluate(cm, reference=str(s.get("ref")), prediction=str(s.get("pred")))
    out = s.get("out", required=True)
    _write_json(out, report_to_json(report))
    csv_path = s.get("csv")
    if csv_path:
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(reports_to_csv([report]))
    print(f"{out}\toa={report.oa:.6f}\tmmcc={report.mmcc:.6f}")
    return 0


def cmd_agree(args) -> int:
    from .grid import read_grid_file
    from .metrics import agreement, report_to_json, reports_to_csv
    from .refmask import N_CLASSES

    s = _Settings(args)
    a = read_grid_file(s.get("a", required=True))
    b = read_grid_file(s.get("b", required=True))
    valid = a.valid_mask() & b.valid_mask()
    report = agreement(
        a.data[0],
        b.data[0],
        N_CLASSES,
        valid,
        label_a=str(s.get("label_a", s.get("a"))),
        label_b=str(s.get("label_b", s.get("b"))),
    )
    out = s.get("out", required=True)
    _write_json(out, report_to_json(report))
    csv_path = s.get("csv")
    if csv_path:
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(reports_to_csv([report]))
    print(f"{out}\toa={report.oa:.6f}\tmmcc={report.mmcc:.6f}")
    return 0


def cmd_tune(args) -> int:
    from .grid import read_grid_file
    from .pipeline import make_fold_train_fn
    from .tune import SearchSpace, study

    s = _Settings(args)
    comp = read_grid_file(s.get("composite", required=True))
    mask = read_grid_file(s.get("mask", required=True))
    tiles, _, _ = _load_tiles(s.get("tiles", required=True))
    plan = _load_fold_plan(s.get("folds", required=True))
    train_fn = make_fold_train_fn(
        comp,
        mask,
        tiles,
        plan,
        depth=int(s.get("depth", 4)),
        max_epochs=int(s.get("epochs", 50)),
        patience=int(s.get("patience", 10)),
    )
    out = s.get("out", required=True)
    result = study(
        SearchSpace(),
        n_trials=int(s.get("trials", 30)),
        n_folds=len(plan.folds),
        train_fn=train_fn,
        seed=int(s.get("seed", 0)),
        log_path=out,
    )
    best = result.best
    print(f"{out}\tbest_trial={best.id}\tobjective={best.objective:.6f}")
    print(json.dumps(best.params.to_json()))
    return 0


# -- vector products and rendering -----------------------------------------------------


def cmd_vectorize(args) -> int:
    from .grid import read_grid_file
    from .vectorize import components, mmu_filter, polygonize, polygons_to_json, regions_to_csv

    s = _Settings(args)
    mask = read_grid_file(s.get("mask", required=True))
    region_set = components(mask, connectivity=int(s.get("connectivity", 4)))
    region_set, merges = mmu_filter(region_set, min_area_m2=float(s.get("mmu", 2000.0)))
    polygons = polygonize(region_set)
    out = s.get("out", required=True)
    _write_json(out, polygons_to_json(polygons))
    csv_path = s.get("csv")
    if csv_path:
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(regions_to_csv(region_set))
    merge_path = s.get("merge_log")
    if merge_path:
        _write_json(
            merge_path,
            {
                "merges": [
                    {
                        "absorbed_id": m.absorbed_id,
                        "into_id": m.into_id,
                        "area_m2": m.area_m2,
                        "shared_edges": m.shared_edges,
                    }
                    for m in merges
                ]
            },
        )
    print(f"{out}\tstands={len(polygons)}\tmerges={len(merges)}")
    return 0


def cmd_render(args) -> int:
    from .grid import read_grid_file
    from .render import write_png

    s = _Settings(args)
    grid = read_grid_file(s.get("input", required=True))
    out = s.get("out", required=True)
    write_png(out, grid, s.get("style", "classmap"))
    return _done(out)


# -- parser ----------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--threads", type=int, help="pin numeric thread pools (1 = bitwise-reproducible)")
    p.add_argument("--verbose", action="store_const", const=True, help="log progress to stderr")


def _add_grid_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid", nargs="+", type=float, metavar="V", help="ORIGIN_X ORIGIN_Y WIDTH HEIGHT [CELL]")
    p.add_argument("--grid-json", dest="grid_json", help="JSON file with the grid definition")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="standseg", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=_version())
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, parents=[], conflict_handler="resolve")
        p.set_defaults(func=func)
        _add_common(p)
        return p

    p = add("synth", cmd_synth, "generate a synthetic scene with ground truth")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--extent", nargs=2, type=float, metavar=("W", "H"))
    p.add_argument("--cell", type=float)
    p.add_argument("--stands", type=int)
    p.add_argument("--mix", nargs=5, type=float, metavar="P")
    p.add_argument("--als-density", dest="als_density", type=float)
    p.add_argument("--dap-density", dest="dap_density", type=float)
    p.add_argument("--smooth-radius", dest="smooth_radius", type=float)
    p.add_argument("--ground-frac", dest="ground_frac", type=float)
    p.add_argument("--shift", type=float, help="reference boundary displacement, m per axis")
    p.add_argument("--munis", type=int)

    p = add("chm", cmd_chm, "normalized canopy height raster from a point cloud")
    p.add_argument("--points")
    p.add_argument("--ground-points", dest="ground_points", help="cloud supplying ground returns")
    _add_grid_flags(p)
    p.add_argument("--k", type=int)
    p.add_argument("--power", type=float)
    p.add_argument("--subcircle", type=float)
    p.add_argument("--cap", type=float)
    p.add_argument("--out")

    p = add("dtm", cmd_dtm, "terrain raster from ground returns via TIN")
    p.add_argument("--points")
    _add_grid_flags(p)
    p.add_argument("--out")

    p = add("ortho", cmd_ortho, "per-cell mean RGBI raster with gap filling")
    p.add_argument("--points")
    _add_grid_flags(p)
    p.add_argument("--fill-kernel", dest="fill_kernel", type=int)
    p.add_argument("--out")

    p = add("composite", cmd_composite, "stack scaled channels into a model input")
    p.add_argument("--ortho")
    p.add_argument("--chm")
    p.add_argument("--dtm")
    p.add_argument("--combo", choices=["RGBI-ALS", "RGBI-DAP", "RGBI-DAP-DTM"])
    p.add_argument("--dtm-max", dest="dtm_max", type=float)
    p.add_argument("--out")

    p = add("rasterize-stands", cmd_rasterize_stands, "stand map JSON to class mask")
    p.add_argument("--stands")
    _add_grid_flags(p)
    p.add_argument("--out")

    p = add("tiles", cmd_tiles, "lay the tile lattice and assign municipalities")
    _add_grid_flags(p)
    p.add_argument("--tile", type=int)
    p.add_argument("--min-coverage", dest="min_coverage", type=float)
    p.add_argument("--municipalities")
    p.add_argument("--out")

    p = add("folds", cmd_folds, "municipality cross-validation fold plan")
    p.add_argument("--tiles")
    p.add_argument("--val-period", dest="val_period", type=int)
    p.add_argument("--val-offset", dest="val_offset", nargs=2, type=int, metavar=("R", "C"))
    p.add_argument("--out")

    p = add("train", cmd_train, "train one fold; writes the best-epoch model")
    for flag in ("--composite", "--mask", "--tiles", "--folds"):
        p.add_argument(flag)
    p.add_argument("--fold", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--filters", type=int)
    p.add_argument("--kernel", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--history", help="per-epoch CSV path")
    p.add_argument("--out")

    p = add("predict", cmd_predict, "apply a model; writes a class-mask raster")
    p.add_argument("--composite")
    p.add_argument("--model")
    p.add_argument("--tiles", help="predict per tile window instead of whole-grid")
    p.add_argument("--out")

    p = add("evaluate", cmd_evaluate, "metric report of prediction vs reference")
    p.add_argument("--pred")
    p.add_argument("--ref")
    p.add_argument("--tiles", help="restrict to a fold subset (with --folds/--fold/--subset)")
    p.add_argument("--folds")
    p.add_argument("--fold", type=int)
    p.add_argument("--subset", choices=["train", "val", "test"])
    p.add_argument("--csv")
    p.add_argument("--out")

    p = add("agree", cmd_agree, "pairwise inter-model agreement report")
    p.add_argument("--a")
    p.add_argument("--b")
    p.add_argument("--label-a", dest="label_a")
    p.add_argument("--label-b", dest="label_b")
    p.add_argument("--csv")
    p.add_argument("--out")

    p = add("tune", cmd_tune, "random hyperparameter search over CV folds")
    for flag in ("--composite", "--mask", "--tiles", "--folds"):
        p.add_argument(flag)
    p.add_argument("--trials", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="study log (JSON lines)")

    p = add("vectorize", cmd_vectorize, "class mask to stand polygons with MMU filter")
    p.add_argument("--mask")
    p.add_argument("--connectivity", type=int, choices=[4, 8])
    p.add_argument("--mmu", type=float, help="minimum mapping unit, m^2")
    p.add_argument("--csv", help="region table path")
    p.add_argument("--merge-log", dest="merge_log")
    p.add_argument("--out")

    p = add("render", cmd_render, "raster or mask to PNG")
    p.add_argument("--input")
    p.add_argument("--style", choices=["classmap", "grayscale", "rgb"])
    p.add_argument("--out")

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    _apply_thread_env(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"standseg: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if getattr(args, "command", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", None) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    from .errors import StandSegError

    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"standseg: error: {exc}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:  # before ValueError: it subclasses it
        print(f"standseg: data error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"standseg: error: {exc}", file=sys.stderr)
        return 1
    except (StandSegError, OSError) as exc:
        print(f"standseg: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
