"""Command-line entry point: ``agbnet <subcommand> [flags]``.

Every subcommand writes its outputs and a ``manifest.json`` run record
under ``--out``. Exit status is 0 on success, 1 for invalid input or usage
and 2 for internal errors.
"""

from __future__ import annotations

import argparse
import json
import math
import shutil
import sys
import time
import traceback
from pathlib import Path

from . import __version__

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_INTERNAL = 2

SUBCOMMANDS = ("synth", "preprocess", "patchify", "train", "evaluate", "predict", "gradcheck")


class UsageError(Exception):
    pass


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with settings; flags override it")
    common.add_argument("--seed", type=int, help="random seed (unsigned 64-bit)")
    common.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1, deterministic)")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--plot", action="store_true", help="also render figures as PNG files")

    parser = _Parser(prog="agbnet", description="Forest biomass mapping with attention UNets.")
    parser.add_argument("--version", action="version", version=f"agbnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="generate a synthetic landscape and footprints")
    p = sub.add_parser("preprocess", parents=[common], help="derive the feature stack and labels")
    p.add_argument("--input", type=Path, required=True, help="directory with sources/ and footprints.csv")
    p = sub.add_parser("patchify", parents=[common], help="cut the stack into labelled patches")
    p.add_argument("--input", type=Path, required=True, help="preprocess output directory")
    p = sub.add_parser("train", parents=[common], help="split and train the cross-validation folds")
    p.add_argument("--input", type=Path, required=True, help="patchify output directory")
    p = sub.add_parser("evaluate", parents=[common], help="score trained folds on the test split")
    p.add_argument("--input", type=Path, required=True, help="train output directory")
    p = sub.add_parser("predict", parents=[common], help="tiled whole-raster prediction and ensemble")
    p.add_argument("--input", type=Path, required=True, help="train output directory")
    p.add_argument("--stack", type=Path, help="feature stack (default: the one patches were cut from)")
    p.add_argument("--mask", type=Path, help="forest mask raster (1 forest, 0 other)")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every operator")
    return parser


# ---------------------------------------------------------------------------
# helpers


def _load_config(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ValidationError(f"config file {path} must hold a JSON object")
    return cfg


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ValidationError(f"{what} not found: {path}")
    return path


def _pick(cfg: dict, defaults: dict) -> dict:
    unknown = sorted(set(cfg) - set(defaults) - {"seed"})
    if unknown:
        raise ValidationError(f"unknown config keys: {unknown}")
    return {k: cfg.get(k, v) for k, v in defaults.items()}


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False, default=_jsonable))
    return path


def _jsonable(o):
    import numpy as np

    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def _clean(obj):
    """Replace non-finite floats by None so the JSON stays strict."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


# ---------------------------------------------------------------------------
# subcommands; each returns (effective config, inputs, outputs)


def cmd_synth(args, cfg):
    from dataclasses import asdict

    from .raster_io import write_footprints, write_raster
    from .synthdata import SynthSpec, generate_sources, sample_footprints

    fields = asdict(SynthSpec())
    settings = _pick(cfg, fields)
    settings["seed"] = args.seed if args.seed is not None else cfg.get("seed", 0)
    spec = SynthSpec(**settings)
    try:
        spec.validate()
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    out = args.out
    (out / "sources").mkdir(parents=True, exist_ok=True)
    sources, truth, mask = generate_sources(spec)
    outputs = []
    for name, grid in sources.items():
        write_raster(grid, out / "sources" / f"{name}.btr")
        outputs.append(out / "sources" / f"{name}.btr")
    write_raster(truth, out / "truth.btr")
    write_raster(mask, out / "forest_mask.btr")
    from .preprocess.bands import spectral_index

    kndvi = spectral_index("kNDVI", sources["s2"])
    write_footprints(sample_footprints(truth, spec, kndvi), out / "footprints.csv")
    (out / "synth_spec.json").write_text(spec.to_json())
    outputs += [out / "truth.btr", out / "forest_mask.btr", out / "footprints.csv", out / "synth_spec.json"]
    if args.plot:
        from .plotting import plot_map

        outputs.append(plot_map(truth, out / "truth.png", "true AGB", vmin=0, vmax=300))
    return asdict(spec), [], outputs


def cmd_preprocess(args, cfg):
    from .preprocess.pipeline import SOURCES, build_feature_stack, build_labels
    from .raster_io import read_footprints, read_raster, write_footprints, write_raster

    settings = _pick(cfg, {"focal_radius": 1, "palsar_factor": 1.0, "geolocation": True})
    src_dir = _require(args.input / "sources", "sources directory")
    fp_path = _require(args.input / "footprints.csv", "footprint table")
    sources = {k: read_raster(_require(src_dir / f"{k}.btr", f"source {k}")) for k in SOURCES}
    stack = build_feature_stack(sources, settings["focal_radius"], settings["palsar_factor"])
    footprints = read_footprints(fp_path)
    labels, kept, reports = build_labels(footprints, stack, settings["geolocation"])
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    write_raster(stack, out / "stack.btr")
    write_raster(labels, out / "labels.btr")
    write_footprints(kept, out / "footprints_filtered.csv")
    _write_json(out / "filter_report.json", [r.to_dict() for r in reports])
    outputs = [out / "stack.btr", out / "labels.btr", out / "footprints_filtered.csv", out / "filter_report.json"]
    for extra in ("truth.btr", "forest_mask.btr"):
        if (args.input / extra).exists():
            shutil.copyfile(args.input / extra, out / extra)
            outputs.append(out / extra)
    return settings, [src_dir, fp_path], outputs


def cmd_patchify(args, cfg):
    from .preprocess.dataset import patchify, save_patches
    from .raster_io import read_raster

    settings = _pick(cfg, {"patch_size": 64})
    stack_path = _require(args.input / "stack.btr", "feature stack")
    labels_path = _require(args.input / "labels.btr", "label raster")
    stack, labels = read_raster(stack_path), read_raster(labels_path)
    patches = patchify(stack, labels, settings["patch_size"])
    meta = {
        "stack": str(stack_path.resolve()),
        "footprints": str((args.input / "footprints_filtered.csv").resolve()),
        "band_names": stack.band_names,
        "patch_size": settings["patch_size"],
    }
    mask_path = args.input / "forest_mask.btr"
    if mask_path.exists():
        meta["forest_mask"] = str(mask_path.resolve())
    args.out.mkdir(parents=True, exist_ok=True)
    save_patches(args.out / "patches.npz", patches, meta)
    return settings, [stack_path, labels_path], [args.out / "patches.npz"]


TRAIN_DEFAULTS = {
    "kind": "AU",
    "depth": 4,
    "base_channels": 32,
    "initial_lr": 1e-3,
    "lr_decay_factor": 0.1,
    "lr_decay_every": 40,
    "max_epochs": 120,
    "batch_size": 128,
    "weight_decay": 1e-5,
    "split_ratio": [7, 2, 1],
    "folds": 5,
    "run_folds": None,
    "split_seed": None,
}


def cmd_train(args, cfg):
    from .models import ArchitectureDescriptor, ArchitectureError
    from .preprocess.dataset import load_patches
    from .raster_io import read_footprints, read_raster
    from .training import TrainConfig, assign_footprints, footprint_samples, kfold_plan, split_dataset, train

    settings = _pick(cfg, TRAIN_DEFAULTS)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    settings["seed"] = seed
    split_seed = settings["split_seed"] if settings["split_seed"] is not None else seed
    archive = _require(args.input / "patches.npz", "patch archive")
    patches, meta = load_patches(archive)
    try:
        desc = ArchitectureDescriptor(settings["kind"], settings["depth"], settings["base_channels"], patches[0].features.shape[0], patches[0].labels.shape[0])
        desc.validate()
        config = TrainConfig.from_dict({**settings, "seed": seed})
    except (ArchitectureError, ValueError, TypeError) as exc:
        raise ValidationError(str(exc)) from None
    index = list(range(len(patches)))
    tr, va, te = split_dataset(index, tuple(config.split_ratio), split_seed)
    plan = kfold_plan(tr + va, config.folds, split_seed)
    run_folds = settings["run_folds"] if settings["run_folds"] is not None else list(range(config.folds))
    bad = [k for k in run_folds if not 0 <= k < config.folds]
    if bad:
        raise ValidationError(f"run_folds {bad} outside 0..{config.folds - 1}")
    if desc.kind == "AU_FC":
        stack = read_raster(_require(Path(meta["stack"]), "feature stack"))
        footprints = read_footprints(_require(Path(meta["footprints"]), "footprint table"))

        def data(idx):
            sel = [patches[i] for i in idx]
            return footprint_samples(stack, [fp for _, fp in assign_footprints(stack, sel, footprints)])
    else:

        def data(idx):
            return [patches[i] for i in idx]

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    split = {"train_val": tr + va, "test": te, "folds": [[int(i) for i in v] for _, v in plan], "split_seed": split_seed}
    _write_json(out / "split.json", split)
    outputs = [out / "split.json"]
    summary = {"patches": str(archive.resolve()), "architecture": desc.to_dict(), "folds": []}
    for k in run_folds:
        fold_tr, fold_va = plan[k]
        fold_dir = out / f"fold{k}"
        fold_dir.mkdir(exist_ok=True)
        res = train(data(fold_tr), data(fold_va), desc, config)
        res.checkpoint.config["fold"] = k
        res.checkpoint.save(fold_dir / "checkpoint")
        res.write_history(fold_dir / "history.csv")
        outputs += [fold_dir / "checkpoint", fold_dir / "history.csv"]
        summary["folds"].append({"fold": k, "best_epoch": res.checkpoint.epoch, "val_loss": res.checkpoint.val_loss})
        if args.plot:
            from .plotting import plot_history

            outputs.append(plot_history(res.history, fold_dir / "history.png", f"fold {k}"))
    _write_json(out / "train_summary.json", _clean(summary))
    outputs.append(out / "train_summary.json")
    return {**settings, "split_seed": split_seed}, [archive], outputs


def _trained_folds(train_dir: Path):
    from .training import ModelCheckpoint

    summary = json.loads(_require(train_dir / "train_summary.json", "train summary").read_text())
    split = json.loads(_require(train_dir / "split.json", "split record").read_text())
    ckpts = [ModelCheckpoint.load(train_dir / f"fold{f['fold']}" / "checkpoint") for f in summary["folds"]]
    if not ckpts:
        raise ValidationError(f"no trained folds under {train_dir}")
    return summary, split, ckpts


def cmd_evaluate(args, cfg):
    import numpy as np

    from .preprocess.dataset import load_patches
    from .preprocess.footprints import agb_from_rh80, footprint_mean
    from .raster_io import read_footprints, read_raster
    from .training import (
        assign_footprints,
        evaluate,
        footprint_samples,
        patch_grid,
        predict_patches,
        regression_metrics,
    )

    _pick(cfg, {})
    summary, split, ckpts = _trained_folds(args.input)
    patches, meta = load_patches(_require(Path(summary["patches"]), "patch archive"))
    test = [patches[i] for i in split["test"]]
    stack = read_raster(_require(Path(meta["stack"]), "feature stack"))
    footprints = read_footprints(_require(Path(meta["footprints"]), "footprint table"))
    results = {"folds": []}
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    if ckpts[0].desc.kind == "AU_FC":
        samples = footprint_samples(stack, [fp for _, fp in assign_footprints(stack, test, footprints)])
        for ck in ckpts:
            results["folds"].append({"fold": ck.config.get("fold"), "footprint": evaluate(ck, samples).to_dict()})
    else:
        preds = []
        for ck in ckpts:
            pred = predict_patches(ck, test)
            preds.append(pred)
            results["folds"].append({
                "fold": ck.config.get("fold"),
                "pixel": evaluate(ck, test, "pixel", predictions=pred).to_dict(),
                "footprint": evaluate(ck, test, "footprint", footprints, stack, predictions=pred).to_dict(),
            })  # fmt: skip
        mean = np.mean(preds, axis=0)
        lab = np.stack([p.labels for p in test])
        ok = lab >= 0
        pix = regression_metrics(lab[ok], mean[ok], "pixel")
        pairs = [(agb_from_rh80(fp.rh80), footprint_mean(patch_grid(stack, test[i], mean[i]), fp)[0]) for i, fp in assign_footprints(stack, test, footprints)]
        fpm = regression_metrics([a for a, _ in pairs], [b for _, b in pairs], "footprint")
        results["ensemble"] = {"pixel": pix.to_dict(), "footprint": fpm.to_dict()}
        if args.plot:
            from .plotting import plot_scatter

            outputs.append(plot_scatter(lab[ok], mean[ok], out / "scatter_pixel.png", "pixel level", pix))
            outputs.append(plot_scatter([a for a, _ in pairs], [b for _, b in pairs], out / "scatter_footprint.png", "footprint level", fpm))
    _write_json(out / "metrics.json", _clean(results))
    outputs.insert(0, out / "metrics.json")
    return {}, [args.input], outputs


def cmd_predict(args, cfg):
    from .inference import apply_forest_mask, ensemble, plan_tiles, predict_tiled
    from .preprocess.dataset import load_patches
    from .raster_io import read_raster, write_raster

    settings = _pick(cfg, {"tile": None, "overlap": 10, "trim": 3})
    summary, _, ckpts = _trained_folds(args.input)
    if settings["tile"] is None:
        settings["tile"] = ckpts[0].desc.patch_size
    if ckpts[0].desc.kind == "AU_FC":
        raise ValidationError("AU_FC models predict per footprint, not per raster")
    _, meta = load_patches(_require(Path(summary["patches"]), "patch archive"))
    stack_path = args.stack or Path(meta["stack"])
    stack = read_raster(_require(stack_path, "feature stack"))
    try:
        plan = plan_tiles(stack.rows, stack.cols, settings["tile"], settings["overlap"], settings["trim"])
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    maps = [predict_tiled(ck, stack, plan) for ck in ckpts]
    mean, std = ensemble(maps)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    inputs = [args.input, stack_path]
    mask_path = args.mask or (Path(meta["forest_mask"]) if "forest_mask" in meta else None)
    if mask_path is not None:
        mask = read_raster(_require(mask_path, "forest mask"))
        mean, std = apply_forest_mask(mean, mask), apply_forest_mask(std, mask)
        inputs.append(mask_path)
    write_raster(mean, out / "agb_mean.btr")
    write_raster(std, out / "agb_uncertainty.btr")
    outputs = [out / "agb_mean.btr", out / "agb_uncertainty.btr"]
    if args.plot:
        from .plotting import plot_map

        outputs.append(plot_map(mean, out / "agb_mean.png", "AGB (fold mean)", vmin=0, vmax=300))
        outputs.append(plot_map(std, out / "agb_uncertainty.png", "AGB standard deviation across folds", cmap="magma"))
    return settings, inputs, outputs


def cmd_gradcheck(args, cfg):
    from .nn.suite import run_suite

    settings = _pick(cfg, {"seeds": 20, "tolerance": 1e-4})
    base = args.seed if args.seed is not None else cfg.get("seed", 0)
    results = run_suite(settings["seeds"], settings["tolerance"], base_seed=base)
    args.out.mkdir(parents=True, exist_ok=True)
    _write_json(args.out / "gradcheck.json", [r.to_dict() for r in results])
    for r in results:
        print(f"{r.name:16s} max_rel_err={r.max_error:.3e} {'ok' if r.passed else 'FAIL'}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise RuntimeError(f"gradient check failed for {failed}")
    return {**settings, "seed": base}, [], [args.out / "gradcheck.json"]


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "patchify": cmd_patchify,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
}


def _write_manifest(args, status, code, config, inputs, outputs, seconds, error=None):
    manifest = {
        "subcommand": args.command,
        "status": status,
        "exit_code": code,
        "config": _clean(config),
        "argv": {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()},
        "seed": args.seed if args.seed is not None else config.get("seed"),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "engine_version": __version__,
        "wall_time_s": round(seconds, 3),
    }
    if error:
        manifest["error"] = error
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        _write_json(args.out / "manifest.json", manifest)
    except OSError as exc:
        print(f"warning: could not write run manifest: {exc}", file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.threads < 1:
        print("agbnet: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    from threadpoolctl import threadpool_limits

    t0 = time.perf_counter()
    config, inputs, outputs = {}, [], []
    try:
        cfg = _load_config(args.config)
        with threadpool_limits(limits=args.threads):
            config, inputs, outputs = COMMANDS[args.command](args, cfg)
    except (ValidationError, FileNotFoundError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        print(f"agbnet {args.command}: error: {msg}", file=sys.stderr)
        _write_manifest(args, "invalid", EXIT_INVALID, config, inputs, outputs, time.perf_counter() - t0, str(msg))
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        traceback.print_exc()
        _write_manifest(args, "error", EXIT_INTERNAL, config, inputs, outputs, time.perf_counter() - t0, f"{type(exc).__name__}: {exc}")
        return EXIT_INTERNAL
    _write_manifest(args, "ok", EXIT_OK, config, inputs, outputs, time.perf_counter() - t0)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
