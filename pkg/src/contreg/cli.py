"""Command-line pipeline: data generation, training, tracking, evaluation.

All commands are deterministic for a fixed config and seed, and re-running
a command overwrites its outputs with byte-identical files. Errors are
reported as a single ``error: ...`` line on stderr with a nonzero exit.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from contreg.cascade import (
    build_training_cache,
    retrain_from_cache,
    sampling_cost_report,
    train_ccr,
    train_sdm,
)
from contreg.container import load_model, save_model
from contreg.features import EXTRACTIONS, FeatureConfig, taylor_validity
from contreg.incremental import init_incremental, update_cost_profile
from contreg.oracle import draw_perturbations
from contreg.shapes import build_pdm, fit_params
from contreg.solver import MomentSpec
from contreg.tracker import (
    GateConfig,
    GeneratorConfig,
    TrackRecord,
    anchor_offset_moments,
    ced_auc,
    default_thresholds,
    frame_statistics,
    generate_sequence,
    read_sequence,
    track,
    write_sequence,
)

TIERS = ("tier1", "tier2", "tier3")
MODES = ("ccr", "iccr", "sdm")

CONFIG_DEFAULTS = {
    # geometry and appearance
    "image_size": 96,
    "n_points": 8,
    "ring_radius": 26.0,
    "gen_flex": 3,
    "shape_seed": 7,
    "satellites": 2,
    "background_bumps": 12,
    # descriptor
    "descriptor": "gradient-histogram",
    "patch_size": 17,
    "cells": 2,
    "bins": 6,
    # model
    "n_components": 48,
    "model_flex": 6,
    "levels": 4,
    "draws": 10,
    "ridge": 0.0,  # 0 selects the automatic trace-scaled ridge
    # data splits
    "train_seqs": 6,
    "train_frames": 40,
    "tier_seqs": 4,
    "tier_frames": 120,
    # motion of the random walk, scaled per split
    "walk_translation_std": 0.35,
    "walk_scale_std": 0.004,
    "walk_angle_std": 0.008,
    "walk_flex_std": 0.06,
    "train_motion": 1.0,
    "tier1_motion": 0.0,
    "tier2_motion": 1.0,
    "tier3_motion": 1.8,
    "tier3_corr": 0.5,
    "tier3_drift_x": 0.05,
    "tier3_drift_y": 0.03,
    "tier3_appearance_drift": 0.01,
    "tier3_amplitude_drift": 0.15,
    "illumination_ramp": 0.0,
    # tracking gates
    "update_threshold": 0.35,
    "loss_threshold": 0.60,
    "update_spacing": 3,
    "window": 50,
    "min_window": 10,
    "forgetting": "0.01,0.025,0.05,0.1",
    "refresh_every": 100,
    # misc
    "mode": "ccr",
    "seed": 0,
    "taylor_images": 20,
    "taylor_draws": 10,
    "bench_images": 50,
}


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration


def parse_config(path: str | None, overrides: dict) -> dict:
    """Typed key=value config; file values override defaults, flags override both."""
    cfg = dict(CONFIG_DEFAULTS)
    if path is not None:
        if not os.path.exists(path):
            raise CliError(f"config file not found: {path}")
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise CliError(f"{path}:{lineno}: expected key = value")
                key, value = (part.strip() for part in line.split("=", 1))
                cfg[key] = _coerce(key, value, path, lineno)
    for key, value in overrides.items():
        if value is None:
            continue
        cfg[key] = _coerce(key, str(value), "<flag>", 0)
    return cfg


def _coerce(key: str, value: str, source: str, lineno: int):
    if key not in CONFIG_DEFAULTS:
        raise CliError(f"{source}:{lineno}: unknown config key {key!r}")
    default = CONFIG_DEFAULTS[key]
    try:
        if isinstance(default, bool):
            if value.lower() not in ("true", "false", "0", "1"):
                raise ValueError(value)
            return value.lower() in ("true", "1")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        return value
    except ValueError:
        raise CliError(f"{source}:{lineno}: bad value for {key}: {value!r}") from None


def _parse_forgetting(text: str, n_levels: int | None = None):
    try:
        values = tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise CliError(f"bad forgetting schedule: {text!r}") from None
    if not values:
        raise CliError("empty forgetting schedule")
    if n_levels is not None and len(values) > 1:
        # pad with the last factor / trim so the schedule fits the cascade
        values = (values + values[-1:] * n_levels)[:n_levels]
    return values if len(values) > 1 else values[0]


def _feature_config(cfg: dict) -> FeatureConfig:
    return FeatureConfig(descriptor=cfg["descriptor"], patch_size=cfg["patch_size"],
                         cells=cfg["cells"], bins=cfg["bins"])


def _gate_config(cfg: dict) -> GateConfig:
    return GateConfig(update_threshold=cfg["update_threshold"],
                      loss_threshold=cfg["loss_threshold"],
                      update_spacing=cfg["update_spacing"],
                      window=cfg["window"], min_window=cfg["min_window"],
                      seed=cfg["seed"])


def _split_generator(cfg: dict, split: str) -> GeneratorConfig:
    motion = cfg[f"{split}_motion"] if split != "train" else cfg["train_motion"]
    extras = {}
    if split == "tier3":
        extras = dict(
            walk_corr=cfg["tier3_corr"],
            walk_translation_mean=(cfg["tier3_drift_x"], cfg["tier3_drift_y"]),
            appearance_drift=cfg["tier3_appearance_drift"],
            amplitude_drift=cfg["tier3_amplitude_drift"],
        )
    n_frames = cfg["train_frames"] if split == "train" else cfg["tier_frames"]
    return GeneratorConfig(
        image_size=cfg["image_size"], n_points=cfg["n_points"],
        ring_radius=cfg["ring_radius"], n_flex=cfg["gen_flex"],
        shape_seed=cfg["shape_seed"], n_frames=n_frames,
        satellites=cfg["satellites"], background_bumps=cfg["background_bumps"],
        walk_scale_std=cfg["walk_scale_std"] * motion,
        walk_angle_std=cfg["walk_angle_std"] * motion,
        walk_translation_std=cfg["walk_translation_std"] * motion,
        walk_flex_std=cfg["walk_flex_std"] * motion,
        illumination_ramp=cfg["illumination_ramp"],
        **extras,
    )


_SPLIT_SEED_BASE = {"train": 1000, "tier1": 2000, "tier2": 3000, "tier3": 4000}


def _sequence_seed(cfg: dict, split: str, index: int) -> int:
    return cfg["seed"] * 100000 + _SPLIT_SEED_BASE[split] + index


def _model_path(out: str, mode: str) -> str:
    kind = "ccr" if mode in ("ccr", "iccr") else "sdm"
    return os.path.join(out, f"model_{kind}.bin")


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(cfg: dict, args) -> int:
    splits = [("train", cfg["train_seqs"])] + [(t, cfg["tier_seqs"]) for t in TIERS]
    for split, n_seqs in splits:
        gcfg = _split_generator(cfg, split)
        for i in range(n_seqs):
            seq = generate_sequence(gcfg, _sequence_seed(cfg, split, i))
            directory = os.path.join(args.out, split, f"seq_{i:03d}")
            write_sequence(seq, directory)
            line = f"{split}/seq_{i:03d}: {seq.n_frames} frames"
            if seq.truncated:
                line += f" ({seq.notice})"
            print(line)
    return 0


def _load_split(out: str, split: str):
    root = os.path.join(out, split)
    if not os.path.isdir(root):
        raise CliError(f"missing data split: {root} (run gen-data first)")
    names = sorted(d for d in os.listdir(root) if d.startswith("seq_"))
    if not names:
        raise CliError(f"no sequences under {root}")
    return [(name, *read_sequence(os.path.join(root, name))) for name in names]


def cmd_train(cfg: dict, args) -> int:
    mode = cfg["mode"]
    if mode not in MODES:
        raise CliError(f"unknown mode {mode!r}")
    sequences = _load_split(args.out, "train")
    all_shapes = [s for _, _, shapes in sequences for s in shapes]
    pdm = build_pdm(all_shapes, cfg["model_flex"])

    images, targets, param_seqs = [], [], []
    for _, frames, shapes in sequences:
        fitted = [fit_params(pdm, s) for s in shapes]
        images.extend(frames)
        targets.extend(fitted)
        param_seqs.append(np.stack([p.vector() for p in fitted]))
    moments = anchor_offset_moments(frame_statistics(param_seqs))

    feature_cfg = _feature_config(cfg)
    ridge = None if cfg["ridge"] == 0 else cfg["ridge"]
    EXTRACTIONS.reset()
    if mode == "sdm":
        model = train_sdm(images, targets, moments, feature_cfg, pdm=pdm,
                          levels=cfg["levels"], n_draws=cfg["draws"],
                          n_components=cfg["n_components"],
                          ridge=ridge if ridge is not None else 1e-6,
                          seed=cfg["seed"])
    else:
        model = train_ccr(images, targets, moments, feature_cfg, pdm=pdm,
                          levels=cfg["levels"], n_components=cfg["n_components"],
                          ridge=ridge, draws_per_image=cfg["draws"],
                          seed=cfg["seed"])
    extractions = EXTRACTIONS.count

    for idx, stats in enumerate(model.level_stats):
        spread = float(np.trace(stats.covariance))
        print(f"level {idx}: residual spread trace = {spread:.6g}, "
              f"mean shift = {np.linalg.norm(stats.mean):.6g}")
    path = _model_path(args.out, mode)
    save_model(model, path)
    print(f"extractions: {extractions} ({len(images)} images)")
    print(f"model: {path}")
    return 0


def cmd_track(cfg: dict, args) -> int:
    mode = cfg["mode"]
    if mode not in MODES:
        raise CliError(f"unknown mode {mode!r}")
    path = _model_path(args.out, mode)
    if not os.path.exists(path):
        raise CliError(f"missing model {path} (run train first)")
    model, _ = load_model(path)
    gate = _gate_config(cfg)
    outer = (0, cfg["n_points"] // 2)
    forgetting = _parse_forgetting(cfg["forgetting"], model.n_levels)

    tiers = args.tiers.split(",") if args.tiers else list(TIERS)
    for tier in tiers:
        if tier not in TIERS:
            raise CliError(f"unknown tier {tier!r}")
        rec_dir = os.path.join(args.out, "records", tier, mode)
        os.makedirs(rec_dir, exist_ok=True)
        medians = []
        for name, frames, shapes in _load_split(args.out, tier):
            state = None
            if mode == "iccr":
                state = init_incremental(model, forgetting,
                                         refresh_every=cfg["refresh_every"])
            record = track(model, frames, shapes, outer, mode=mode, gate=gate,
                           state=state)
            record.to_csv(os.path.join(rec_dir, f"{name}.csv"))
            medians.append(float(np.median(record.errors())))
            print(f"{tier}/{name} [{mode}]: median rmse = {medians[-1]:.6g}, "
                  f"reinits = {record.n_reinits}, updates = {record.n_updates}")
        print(f"{tier} [{mode}]: median of medians = {float(np.median(medians)):.6g}")
    return 0


def cmd_eval(cfg: dict, args) -> int:
    records_root = os.path.join(args.out, "records")
    if not os.path.isdir(records_root):
        raise CliError(f"missing records under {records_root} (run track first)")
    eval_dir = os.path.join(args.out, "eval")
    os.makedirs(eval_dir, exist_ok=True)
    summary_rows = []
    for tier in TIERS:
        for mode in MODES:
            rec_dir = os.path.join(records_root, tier, mode)
            if not os.path.isdir(rec_dir):
                continue
            files = sorted(f for f in os.listdir(rec_dir) if f.endswith(".csv"))
            if not files:
                continue
            records = [TrackRecord.from_csv(os.path.join(rec_dir, f), mode) for f in files]
            errors = np.concatenate([r.errors() for r in records])
            ced, auc = ced_auc(errors)
            thresholds = default_thresholds()
            ced_path = os.path.join(eval_dir, f"ced_{tier}_{mode}.csv")
            with open(ced_path, "w") as fh:
                fh.write("threshold,ced\n")
                for t, c in zip(thresholds, ced):
                    fh.write(f"{t:.17g},{c:.17g}\n")
            if args.gnuplot:
                with open(ced_path[:-4] + ".dat", "w") as fh:
                    for t, c in zip(thresholds, ced):
                        fh.write(f"{t:.17g} {c:.17g}\n")
            summary_rows.append((tier, mode, auc, float(np.median(errors))))
            print(f"{tier} [{mode}]: auc = {auc:.17g}, median rmse = "
                  f"{float(np.median(errors)):.6g}")
    if not summary_rows:
        raise CliError("no track records found to evaluate")
    with open(os.path.join(eval_dir, "auc.csv"), "w") as fh:
        fh.write("tier,mode,auc,median_rmse\n")
        for tier, mode, auc, med in summary_rows:
            fh.write(f"{tier},{mode},{auc:.17g},{med:.17g}\n")
    return 0


def cmd_bench(cfg: dict, args) -> int:
    os.makedirs(args.out, exist_ok=True)
    n_images = cfg["bench_images"]
    report = sampling_cost_report(cfg["levels"], cfg["draws"], n_images)

    gcfg = _split_generator(cfg, "train")
    frames, shapes = [], []
    seq_idx = 0
    while len(frames) < n_images:
        seq = generate_sequence(gcfg, _sequence_seed(cfg, "train", seq_idx))
        frames.extend(seq.frames)
        shapes.extend(seq.gt_shapes())
        seq_idx += 1
    frames, shapes = frames[:n_images], shapes[:n_images]
    pdm = build_pdm(shapes, cfg["model_flex"])
    targets = [fit_params(pdm, s) for s in shapes]
    param_seq = np.stack([p.vector() for p in targets])
    moments = anchor_offset_moments(frame_statistics([param_seq]))
    feature_cfg = _feature_config(cfg)

    n_components = min(cfg["n_components"], max(2, n_images - 2))
    if n_components != cfg["n_components"]:
        print(f"note: clamping n_components to {n_components} for {n_images} images")
    EXTRACTIONS.reset()
    cache = build_training_cache(frames, targets, feature_cfg, pdm=pdm,
                                 levels=cfg["levels"],
                                 n_components=n_components,
                                 draws_per_image=cfg["draws"], seed=cfg["seed"])
    measured_ccr = EXTRACTIONS.count
    EXTRACTIONS.reset()
    retrain_from_cache(cache, moments)
    measured_retrain = EXTRACTIONS.count
    EXTRACTIONS.reset()
    train_sdm(frames, targets, moments, feature_cfg, pdm=pdm, levels=cfg["levels"],
              n_draws=cfg["draws"], n_components=n_components,
              seed=cfg["seed"])
    measured_sdm = EXTRACTIONS.count

    profile = update_cost_profile(256, 10)

    rows = [
        ("closed_form_extractions", report.closed_form_extractions),
        ("sampling_extractions", report.sampling_extractions),
        ("retrain_extractions", report.retrain_extractions),
        ("extraction_speedup", report.speedup),
        ("measured_ccr_extractions", measured_ccr),
        ("measured_sdm_extractions", measured_sdm),
        ("measured_retrain_extractions", measured_retrain),
        ("incremental_multiplies", profile.measured_incremental["total"]),
        ("baseline_multiplies", profile.measured_sampling["total"]),
        ("measured_ratio", profile.measured_ratio),
        ("predicted_ratio", profile.predicted_ratio),
    ] + [(f"reference_{k}", v) for k, v in sorted(profile.reference_point.items())]
    with open(os.path.join(args.out, "bench.csv"), "w") as fh:
        fh.write("metric,value\n")
        for name, value in rows:
            fh.write(f"{name},{value:.17g}\n")
    for name, value in rows:
        print(f"{name} = {value:.17g}")
    return 0


def cmd_validate_taylor(cfg: dict, args) -> int:
    os.makedirs(args.out, exist_ok=True)
    gcfg = _split_generator(cfg, "tier2")
    feature_cfg = _feature_config(cfg)
    n_images = cfg["taylor_images"]
    n_draws = cfg["taylor_draws"]

    frames, shapes = [], []
    seq_idx = 0
    while len(frames) < n_images:
        seq = generate_sequence(gcfg, _sequence_seed(cfg, "tier2", 50 + seq_idx))
        frames.extend(seq.frames)
        shapes.extend(seq.gt_shapes())
        seq_idx += 1
    frames, shapes = frames[:n_images], shapes[:n_images]

    dim = 2 * cfg["n_points"]
    rows = []
    for level in range(3, 8):
        variance = float(2.0 ** (level - 1))
        moments = MomentSpec(mean=np.zeros(dim), covariance=variance * np.eye(dim))
        perts = draw_perturbations(moments, n_images, n_draws,
                                   seed=cfg["seed"] * 1000 + level)
        diag_vals, offdiag_vals = [], []
        for img, shape, deltas in zip(frames, shapes, perts.deltas):
            matrix = taylor_validity(img, shape, deltas, deltas, feature_cfg)
            mask = np.eye(n_draws, dtype=bool)
            diag_vals.extend(matrix[mask])
            offdiag_vals.extend(matrix[~mask])
        rows.append((level, variance, float(np.median(diag_vals)),
                     float(np.median(offdiag_vals))))
        print(f"level {level}: variance = {variance:g}, matched median = "
              f"{rows[-1][2]:.6g}, mismatched median = {rows[-1][3]:.6g}")
    with open(os.path.join(args.out, "taylor.csv"), "w") as fh:
        fh.write("level,variance,median_matched,median_mismatched\n")
        for level, variance, dmed, omed in rows:
            fh.write(f"{level},{variance:.17g},{dmed:.17g},{omed:.17g}\n")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contreg",
        description="Continuous-regression landmark alignment pipeline.",
    )
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--mode", choices=MODES, help="model/tracking mode")
    parser.add_argument("--levels", type=int, help="cascade depth override")
    parser.add_argument("--lambda", dest="lam",
                        help="forgetting factor(s), scalar or comma list")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", help="render the synthetic train/tier splits")
    sub.add_parser("train", help="train a cascade on the train split")
    track_p = sub.add_parser("track", help="track tier sequences")
    track_p.add_argument("--tiers", help="comma list of tiers (default: all)")
    eval_p = sub.add_parser("eval", help="summarise track records into CED/AUC")
    eval_p.add_argument("--gnuplot", action="store_true",
                        help="also write space-separated .dat files")
    sub.add_parser("bench", help="extraction and update cost accounting")
    sub.add_parser("validate-taylor", help="linearisation validity sweep")
    return parser


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "track": cmd_track,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "validate-taylor": cmd_validate_taylor,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {"seed": args.seed, "mode": args.mode, "levels": args.levels,
                 "forgetting": args.lam}
    try:
        cfg = parse_config(args.config, overrides)
        return _COMMANDS[args.command](cfg, args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, np.linalg.LinAlgError) as exc:
        message = " ".join(str(exc).split())
        print(f"error: {message}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
