"""Command-line front end: corrupt, estimate, evaluate, build grids, plan actions.

Every subcommand reads an optional TOML or JSON config file; explicit
flags override file values. Randomized subcommands refuse to run without
a seed so any artifact can be regenerated bit for bit. Artifacts are
written atomically and each output directory carries a manifest embedding
the merged run configuration.

Exit codes: 0 success, 2 configuration problem, 3 data problem.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - 3.10 fallback
    import tomli as tomllib

import numpy as np

from camcond.blur import (
    MtfSamples,
    defocus_kernel,
    kernel_mtf,
    linear_motion_kernel,
    nonlinear_motion_kernel,
)
from camcond.control import (
    CameraLimits,
    CameraState,
    TradeoffModel,
    alpha_for_blur_change,
    apply_action,
    linear_motion_calibration,
    mtf_to_blur_extent,
    optimal_alpha,
)
from camcond.estimators import (
    MTF_PATCH_SIZE,
    NOISE_PATCH_SIZE,
    SpectralMtfEstimator,
    get_mtf_estimator,
    get_noise_estimator,
)
from camcond.image import GrayImage, load_gray, save_gray, tile_patches
from camcond.iopc import (
    BLUR_LEVELS,
    SIGMA_LEVELS,
    DetBox,
    Iopc,
    average_precision,
    build_iopc,
    synthetic_detections,
)
from camcond.metrics import amae, expected_amae, robust_stats, write_csv
from camcond.mtf_division import DivisionGuard, divide_mtf
from camcond.noise import BlurStage, NoiseConfig, NoiseStage, corrupt_pipeline
from camcond.scenes import synthetic_scene, textured_patch

IMAGE_SUFFIXES = (".png", ".pgm")
REPRODUCE_FIGURES = ("table2", "fig9-heat", "fig10-walkthrough")


class ConfigError(Exception):
    """Bad or missing configuration; nothing was read or written."""


class DataError(Exception):
    """Input data absent or malformed."""


# configuration plumbing


@dataclass(frozen=True)
class RunConfig:
    """Merged view of config file and command-line flags for one run."""

    subcommand: str
    options: dict

    @property
    def seed(self):
        return self.options.get("seed")

    def to_dict(self) -> dict:
        safe = {}
        for key, value in sorted(self.options.items()):
            if isinstance(value, Path):
                value = str(value)
            safe[key] = value
        return {"subcommand": self.subcommand, "options": safe}


def _load_config_file(path: Path) -> dict:
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        if path.suffix == ".toml":
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        elif path.suffix == ".json":
            data = json.loads(path.read_text())
        else:
            raise ConfigError(f"config file must be .toml or .json, got {path.suffix!r}")
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a table of options")
    return data


def _run_config(args: argparse.Namespace) -> RunConfig:
    options: dict = {}
    if getattr(args, "config", None):
        options.update(_load_config_file(Path(args.config)))
    for key, value in vars(args).items():
        if key in ("subcommand", "config"):
            continue
        if value is not None:
            options[key] = value
    return RunConfig(subcommand=args.subcommand, options=options)


def _require(cfg: RunConfig, key: str):
    if key not in cfg.options or cfg.options[key] is None:
        raise ConfigError(f"{cfg.subcommand} needs '{key}' (flag --{key.replace('_', '-')} "
                          "or config file entry)")
    return cfg.options[key]


def _require_seed(cfg: RunConfig) -> int:
    value = _require(cfg, "seed")
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an integer, got {value!r}") from None


def _parse_levels(value, cast):
    if isinstance(value, str):
        parts = [p.strip() for p in value.split(",") if p.strip()]
    elif isinstance(value, (list, tuple)):
        parts = list(value)
    else:
        raise ConfigError(f"levels must be a comma list or array, got {value!r}")
    try:
        return tuple(cast(p) for p in parts)
    except (TypeError, ValueError):
        raise ConfigError(f"bad level list {value!r}") from None


def _child_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(entropy=seed, spawn_key=key).generate_state(1)[0])


def _write_json(path: Path, obj) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    tmp.write_text(json.dumps(obj, indent=2) + "\n")
    os.replace(tmp, path)


def _list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"input directory not found: {directory}")
    images = sorted(p for p in directory.iterdir() if p.suffix in IMAGE_SUFFIXES)
    if not images:
        raise DataError(f"no {'/'.join(IMAGE_SUFFIXES)} images in {directory}")
    return images


# corruption recipes


def _stages_from_recipe(recipe) -> list:
    if isinstance(recipe, str):
        try:
            recipe = json.loads(recipe)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"recipe is not valid JSON: {exc}") from exc
    if not isinstance(recipe, list) or not recipe:
        raise ConfigError("recipe must be a non-empty list of stage objects")
    stages = []
    for i, entry in enumerate(recipe):
        if not isinstance(entry, dict) or "kind" not in entry:
            raise ConfigError(f"recipe stage {i} must be an object with a 'kind'")
        kind = entry["kind"]
        try:
            if kind == "defocus":
                stages.append(BlurStage(defocus_kernel(int(entry["extent"]))))
            elif kind == "linear-motion":
                stages.append(BlurStage(linear_motion_kernel(
                    float(entry["extent"]), float(entry.get("angle", 0.0)))))
            elif kind == "nonlinear-motion":
                stages.append(BlurStage(nonlinear_motion_kernel(
                    float(entry["extent"]), int(entry["seed"]))))
            elif kind == "noise":
                sources = entry["sources"]
                if isinstance(sources, str):
                    sources = [sources]
                config = NoiseConfig(
                    sources=tuple(sources), target_sigma=float(entry["sigma"]),
                    temperature_k=float(entry.get("temperature_k", 330.0)),
                    exposure_time_s=float(entry.get("exposure_s", 0.1)))
                stages.append(NoiseStage(config))
            else:
                raise ConfigError(f"recipe stage {i}: unknown kind {kind!r}")
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"recipe stage {i} ({kind}): {exc}") from exc
    return stages


def cmd_corrupt(cfg: RunConfig) -> dict:
    seed = _require_seed(cfg)
    stages = _stages_from_recipe(_require(cfg, "recipe"))
    images = _list_images(_require(cfg, "input"))
    out_dir = Path(_require(cfg, "out"))
    out_dir.mkdir(parents=True, exist_ok=True)

    names = []
    for i, path in enumerate(images):
        img = load_gray(path)
        image_seed = _child_seed(seed, i)
        try:
            corrupted, bundle = corrupt_pipeline(img, stages, seed=image_seed)
        except ValueError as exc:
            # stage-order problems surface here, not at recipe parse time
            raise ConfigError(f"recipe rejected: {exc}") from exc
        save_gray(corrupted, out_dir / path.name)
        sidecar = {"run": cfg.to_dict(), "source": path.name}
        sidecar.update(bundle.to_dict())
        _write_json(out_dir / (path.stem + ".gt.json"), sidecar)
        names.append(path.name)
    _write_json(out_dir / "manifest.json",
                {"run": cfg.to_dict(), "images": names})
    return {"message": f"corrupted {len(names)} images into {out_dir} (seed {seed})",
            "out": str(out_dir), "n_images": len(names), "seed": seed}


# estimation over image directories


def _split_method_ids(ids) -> tuple[list[str], list[str]]:
    """Sort requested estimator ids into noise and contrast groups."""
    noise_ids, mtf_ids = [], []
    for method in ids:
        try:
            get_noise_estimator(method)
            noise_ids.append(method)
            continue
        except ValueError:
            pass
        try:
            get_mtf_estimator(method)
            mtf_ids.append(method)
        except ValueError:
            raise ConfigError(f"unknown estimator id {method!r}") from None
    return noise_ids, mtf_ids


def _calibrated_spectral(cfg: RunConfig) -> SpectralMtfEstimator:
    cal_dir = cfg.options.get("calibration")
    if cal_dir is None:
        raise ConfigError("mtf-spectral needs 'calibration': a directory of clean images")
    patches = []
    for path in _list_images(cal_dir):
        patches.extend(tile_patches(load_gray(path), MTF_PATCH_SIZE))
    if not patches:
        raise DataError(f"calibration images in {cal_dir} are smaller than "
                        f"{MTF_PATCH_SIZE}x{MTF_PATCH_SIZE}")
    return SpectralMtfEstimator.calibrate(patches)


def _spectral_curve(estimator: SpectralMtfEstimator, patches,
                    noise_sigma=None) -> MtfSamples:
    """Average batched estimates into one curve for a whole image."""
    chunks = [patches[i:i + SpectralMtfEstimator.MAX_BATCH]
              for i in range(0, len(patches), SpectralMtfEstimator.MAX_BATCH)]
    h = np.zeros(8)
    v = np.zeros(8)
    total = 0
    for chunk in chunks:
        est = estimator.estimate(chunk, noise_sigma=noise_sigma)
        h += np.array(est.samples.h) * est.n_patches
        v += np.array(est.samples.v) * est.n_patches
        total += est.n_patches
    return MtfSamples(h=tuple(h / total), v=tuple(v / total))


def _sidecar_for(path: Path) -> dict:
    sidecar_path = path.with_name(path.stem + ".gt.json")
    if not sidecar_path.is_file():
        raise DataError(f"missing sidecar {sidecar_path.name} for {path.name}")
    try:
        return json.loads(sidecar_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"bad sidecar {sidecar_path}: {exc}") from exc


def _sidecar_truth(sidecar: dict) -> MtfSamples | None:
    kernels = sidecar.get("kernels", [])
    if not kernels:
        return None
    product = MtfSamples.from_dict(kernels[0]["mtf"])
    for entry in kernels[1:]:
        product = product.product(MtfSamples.from_dict(entry["mtf"]))
    return product


def cmd_estimate(cfg: RunConfig) -> dict:
    methods = _parse_levels(cfg.options.get("methods", "pca"), str)
    noise_ids, mtf_ids = _split_method_ids(methods)
    images = _list_images(_require(cfg, "input"))
    out_path = Path(_require(cfg, "out"))
    noise_sigma = cfg.options.get("noise_sigma")
    if noise_sigma is not None:
        noise_sigma = float(noise_sigma)
    spectral = _calibrated_spectral(cfg) if "mtf-spectral" in mtf_ids else None

    lines = [json.dumps({"record": "run", **cfg.to_dict()})]
    n_records = 0
    for path in images:
        img = load_gray(path)
        for method in noise_ids:
            estimate = get_noise_estimator(method)
            for patch in tile_patches(img, NOISE_PATCH_SIZE):
                result = estimate(patch)
                lines.append(json.dumps({
                    "record": "estimate", "image": path.name, "method": method,
                    "origin": list(result.origin) if result.origin else None,
                    "sigma_hat": result.sigma_hat,
                }))
                n_records += 1
        for method in mtf_ids:
            if method == "mtf-oracle":
                truth = _sidecar_truth(_sidecar_for(path))
                # a sidecar with no blur stages pins the answer at full contrast
                curve = truth if truth is not None else MtfSamples(h=(1.0,) * 8,
                                                                  v=(1.0,) * 8)
                origin = None
            else:
                patches = tile_patches(img, MTF_PATCH_SIZE)
                if not patches:
                    raise DataError(f"{path.name} is smaller than the "
                                    f"{MTF_PATCH_SIZE}px contrast patch")
                curve = _spectral_curve(spectral, patches, noise_sigma)
                origin = [patches[0].x, patches[0].y]
            lines.append(json.dumps({
                "record": "estimate", "image": path.name, "method": method,
                "origin": origin,
                "mtf_h": list(curve.h), "mtf_v": list(curve.v),
            }))
            n_records += 1
    out_path.parent.mkdir(parents=True, exist_ok=True)
    tmp = out_path.with_name(out_path.name + ".part")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, out_path)
    return {"message": f"wrote {n_records} estimate records to {out_path}",
            "out": str(out_path), "n_records": n_records}


def cmd_evaluate(cfg: RunConfig) -> dict:
    noise_ids, mtf_ids = _split_method_ids(
        _parse_levels(cfg.options.get("methods", "pca,mtf-oracle"), str))
    images = _list_images(_require(cfg, "input"))
    out_dir = Path(_require(cfg, "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    spectral = _calibrated_spectral(cfg) if "mtf-spectral" in mtf_ids else None

    noise_groups: dict = {}
    blur_groups: dict = {}
    for path in images:
        img = load_gray(path)
        sidecar = _sidecar_for(path)
        truth = _sidecar_truth(sidecar)
        noises = sidecar.get("noises", [])
        noise_key = None
        if noises:
            last = noises[-1]
            noise_key = ("+".join(last["sources"]), float(last["target_sigma"]))
        kernel_key = ";".join(
            f"{k['kind']}:{k['length_px']}" for k in sidecar.get("kernels", []))

        for method in noise_ids:
            estimate = get_noise_estimator(method)
            values = [estimate(p).sigma_hat for p in tile_patches(img, NOISE_PATCH_SIZE)]
            key = (method,) + (noise_key or ("none", 0.0))
            noise_groups.setdefault(key, []).extend(values)

        for method in mtf_ids:
            if truth is None:
                continue
            if method == "mtf-oracle":
                curve = truth
            else:
                sigma_known = float(noises[-1]["sigma"]) if noises else None
                curve = _spectral_curve(spectral, tile_patches(img, MTF_PATCH_SIZE),
                                        sigma_known)
            score = amae(curve, truth)
            key = (method, kernel_key)
            blur_groups.setdefault(key, []).append(score)

    noise_rows = []
    for (method, sources, sigma), values in sorted(noise_groups.items()):
        stats = robust_stats(values)
        noise_rows.append([method, sources, sigma, stats.n_used, stats.n_trimmed,
                           stats.minimum, stats.median, stats.maximum])
    blur_rows = []
    for (method, kernels), scores in sorted(blur_groups.items()):
        blur_rows.append([
            method, kernels, len(scores),
            float(np.mean([s.mae_h for s in scores])),
            float(np.mean([s.mae_v for s in scores])),
            float(np.mean([s.amae for s in scores])),
        ])
    write_csv(out_dir / "noise_sigma.csv",
              ["method", "sources", "target_sigma", "n_used", "n_trimmed",
               "min", "median", "max"], noise_rows)
    write_csv(out_dir / "blur_amae.csv",
              ["method", "kernels", "n_images", "mae_h", "mae_v", "amae"], blur_rows)
    _write_json(out_dir / "manifest.json", {"run": cfg.to_dict(),
                                            "n_images": len(images)})
    return {"message": f"evaluated {len(images)} images into {out_dir}",
            "out": str(out_dir), "n_images": len(images),
            "noise_rows": len(noise_rows), "blur_rows": len(blur_rows)}


# performance grid construction


def _load_detections_map(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"detections file not found: {path}")
    try:
        raw = json.loads(path.read_text())
        mapping = {}
        for key, per_scene in raw.items():
            sigma_text, blur_text = key.split("|")
            boxes = {
                scene_id: [DetBox(label=b["label"], x=b["x"], y=b["y"], w=b["w"],
                                  h=b["h"], confidence=b.get("confidence"))
                           for b in entries]
                for scene_id, entries in per_scene.items()
            }
            mapping[(float(sigma_text), int(blur_text))] = boxes
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise DataError(f"bad detections file {path}: {exc}") from exc
    return mapping


def cmd_build_iopc(cfg: RunConfig) -> dict:
    seed = _require_seed(cfg)
    out_dir = Path(_require(cfg, "out"))
    n_scenes = int(cfg.options.get("n_scenes", 6))
    sigma_levels = _parse_levels(cfg.options.get("sigma_levels", SIGMA_LEVELS), float)
    blur_levels = _parse_levels(cfg.options.get("blur_levels", BLUR_LEVELS), int)
    noise_method = cfg.options.get("noise_method", "pca")
    label = cfg.options.get("label", "object")
    try:
        get_noise_estimator(noise_method)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    detections = None
    if cfg.options.get("detections"):
        detections = _load_detections_map(cfg.options["detections"])

    scenes = [synthetic_scene(seed + i, label=label) for i in range(n_scenes)]
    try:
        grid = build_iopc(scenes, seed=seed, sigma_levels=sigma_levels,
                          blur_levels=blur_levels, noise_method=noise_method,
                          detections=detections, label=label)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    grid.metadata["run"] = cfg.to_dict()
    out_dir.mkdir(parents=True, exist_ok=True)
    grid.save(out_dir / "iopc.json")
    header, rows = grid.to_csv_rows()
    write_csv(out_dir / "iopc.csv", header, rows)
    populated = int(np.count_nonzero(grid.counts))
    return {"message": f"built {len(sigma_levels)}x{len(blur_levels)} grid "
                       f"({populated} cells populated) into {out_dir}",
            "out": str(out_dir), "populated_cells": populated, "seed": seed}


# action planning


def _camera_setup(cfg: RunConfig) -> tuple[CameraState, CameraLimits, float | None]:
    raw = {}
    if cfg.options.get("camera"):
        raw = _load_config_file(Path(cfg.options["camera"]))
    try:
        state = CameraState(exposure_time=float(raw.get("exposure_s", 0.01)),
                            iso_gain=float(raw.get("iso", 1.0)))
        limits = CameraLimits(
            exposure_range=tuple(raw.get("exposure_range", (1e-4, 1.0))),
            iso_range=tuple(raw.get("iso_range", (0.25, 64.0))))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad camera description: {exc}") from exc
    speed = raw.get("blur_px_per_second")
    return state, limits, None if speed is None else float(speed)


def cmd_control(cfg: RunConfig) -> dict:
    iopc_path = Path(_require(cfg, "iopc"))
    if not iopc_path.is_file():
        raise DataError(f"performance grid not found: {iopc_path}")
    sigma_hat = float(_require(cfg, "sigma_hat"))
    mtf_hat = float(_require(cfg, "mtf_hat"))
    state, limits, speed = _camera_setup(cfg)
    try:
        grid = Iopc.load(iopc_path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"bad performance grid {iopc_path}: {exc}") from exc
    model = TradeoffModel(calibration=linear_motion_calibration(),
                          blur_px_per_second=speed)
    try:
        action = optimal_alpha(grid, sigma_hat, mtf_hat, model)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    new_state, clipped = apply_action(state, action.alpha, action.direction, limits)
    record = {
        "run": cfg.to_dict(),
        "alpha": action.alpha,
        "direction": action.direction,
        "new_exposure_s": new_state.exposure_time,
        "new_iso": new_state.iso_gain,
        "predicted_ap_before": action.ap_before,
        "predicted_ap_after": action.ap_after,
        "clipped": clipped,
        "blur_extent_before": action.blur_extent_before,
        "blur_extent_after": action.blur_extent_after,
        "sigma_after": action.sigma_after,
        "mtf_after": action.mtf_after,
    }
    out = cfg.options.get("out")
    if out:
        _write_json(Path(out), record)
    summary = {k: v for k, v in record.items() if k != "run"}
    summary["message"] = (f"{action.direction} by {action.alpha:.3g}: "
                          f"AP {action.ap_before:.3f} -> {action.ap_after:.3f}"
                          + (" (clipped)" if clipped else ""))
    summary["out"] = str(out) if out else None
    return summary


# figure-style reproduction recipes


def _table2_corpus(seed: int, n_patches: int) -> list[GrayImage]:
    # flat-ish spectrum and strong contrast keep the high bands above the
    # noise floor at the harshest sigma level
    return [textured_patch(_child_seed(seed, 41, i), size=MTF_PATCH_SIZE,
                           std=45.0, alpha=1.0) for i in range(n_patches)]


def _reproduce_table2(cfg: RunConfig, out_dir: Path) -> dict:
    """Division recovery of a leading motion blur through a noisy pipeline.

    Pipeline per row: horizontal streak d1, then a known vertical 7 px
    streak, then dark-current noise at sigma. The known curve is divided
    back out of the blind estimate and errors are scored against the d1
    kernel's true curve; the expected column propagates the two clean
    single-stage estimation errors in quadrature. Division by the small
    surviving vertical values amplifies noise, so the vertical error
    runs above the horizontal one.
    """
    seed = _require_seed(cfg)
    n_patches = int(cfg.options.get("n_patches", 8))
    clean = _table2_corpus(seed, n_patches)
    estimator = SpectralMtfEstimator.calibrate(clean)
    known = linear_motion_kernel(7.0, 90.0)
    known_curve = kernel_mtf(known)
    guard = DivisionGuard()

    direct_amae = {}
    known_err = None
    rows = []
    for row_index, (d1, sigma) in enumerate(
            [(3, 10.0), (3, 25.0), (11, 10.0), (11, 25.0)]):
        leading = linear_motion_kernel(float(d1), 0.0)
        truth = kernel_mtf(leading)
        if d1 not in direct_amae:
            blurred = [corrupt_pipeline(img, [BlurStage(leading)],
                                        seed=_child_seed(seed, 42, d1, i))[0]
                       for i, img in enumerate(clean)]
            direct_amae[d1] = amae(_spectral_curve(estimator, blurred), truth).amae
        if known_err is None:
            filtered = [corrupt_pipeline(img, [BlurStage(known)],
                                         seed=_child_seed(seed, 43, i))[0]
                        for i, img in enumerate(clean)]
            known_err = amae(_spectral_curve(estimator, filtered), known_curve).amae

        # both blurs act before the sensor, so the noise stays white
        stages = [BlurStage(leading), BlurStage(known),
                  NoiseStage(NoiseConfig(sources=("dcsn",), target_sigma=sigma))]
        corrupted = [corrupt_pipeline(img, stages,
                                      seed=_child_seed(seed, 44, row_index, i))[0]
                     for i, img in enumerate(clean)]
        sigma_hats = [get_noise_estimator("pca")(tile_patches(img, NOISE_PATCH_SIZE)[0]
                                                 ).sigma_hat for img in corrupted]
        combined = _spectral_curve(estimator, corrupted,
                                   noise_sigma=float(np.median(sigma_hats)))
        recovered = divide_mtf(combined, known_curve, guard)

        errors = {}
        for direction in ("h", "v"):
            got = np.array(getattr(recovered, direction))
            want = np.array(getattr(truth, direction))
            valid = ~np.isnan(got)
            errors[direction] = (100.0 * float(np.abs(got[valid] - want[valid]).mean())
                                 if valid.any() else math.nan)
        row_amae = float(np.nanmean([errors["h"], errors["v"]]))
        rows.append([d1, sigma, errors["h"], errors["v"], row_amae,
                     expected_amae(direct_amae[d1], known_err)])

    write_csv(out_dir / "table2.csv",
              ["blur_extent", "noise_sigma", "mae_h", "mae_v", "amae",
               "expected_amae"], rows)
    _write_json(out_dir / "manifest.json", {"run": cfg.to_dict(), "rows": len(rows)})
    return {"message": f"wrote division-recovery table ({len(rows)} rows) to {out_dir}",
            "out": str(out_dir), "rows": len(rows), "seed": seed}


def _reproduce_fig9(cfg: RunConfig, out_dir: Path) -> dict:
    """Detection-score heat map over the noise/contrast grid."""
    summary = cmd_build_iopc(RunConfig(subcommand="build-iopc", options={
        **{k: v for k, v in cfg.options.items() if k != "figure"},
        "out": str(out_dir),
    }))
    os.replace(out_dir / "iopc.csv", out_dir / "heat.csv")
    _write_json(out_dir / "manifest.json", {"run": cfg.to_dict()})
    summary["message"] = summary["message"].replace("built", "heat map:")
    summary["out"] = str(out_dir)
    return summary


def _reproduce_fig10(cfg: RunConfig, out_dir: Path) -> dict:
    """Four-state exposure-correction walkthrough on one simulated scene.

    A static reference, the same exposure once motion starts, the
    shortened exposure before gain compensation, and the gain-restored
    end state. Blur follows exposure time through a fixed scene speed;
    the correction factor comes from the measured streak length against
    a 9 px target.
    """
    seed = _require_seed(cfg)
    speed = float(cfg.options.get("blur_px_per_second", 750.0))
    exposure = float(cfg.options.get("exposure_s", 0.028))
    target_extent = float(cfg.options.get("target_extent", 9.0))
    scene = synthetic_scene(seed)
    table = linear_motion_calibration()
    model = TradeoffModel(calibration=table, blur_px_per_second=speed)
    # one fixed patch plays the role of an installed test target, so the
    # rest-state contrast reading is the identity by construction
    estimator = SpectralMtfEstimator.calibrate(
        tile_patches(scene.image, MTF_PATCH_SIZE)[:1])
    estimate_noise = get_noise_estimator(cfg.options.get("noise_method", "pca"))

    def measured_sigma(image: GrayImage) -> float:
        return float(np.median([estimate_noise(p).sigma_hat
                                for p in tile_patches(image, NOISE_PATCH_SIZE)]))

    # the rest-state reading is texture masquerading as noise; later
    # states subtract only their excess over this floor
    sigma_floor = measured_sigma(scene.image)

    def observe(image: GrayImage, spectral_valid: bool):
        sigma_hat = measured_sigma(image)
        if not spectral_valid:
            return sigma_hat, None, None
        excess = math.sqrt(max(sigma_hat ** 2 - sigma_floor ** 2, 0.0))
        curve = _spectral_curve(estimator,
                                tile_patches(image, MTF_PATCH_SIZE)[:1],
                                noise_sigma=excess if excess > 1e-9 else None)
        return sigma_hat, curve.h[0], mtf_to_blur_extent(curve.h[0], table)

    def detect(sigma: float, extent: float, contrast: float, state_index: int):
        # an underexposed frame reaches the detector with its contrast
        # scaled down, which the axis value carries directly
        axis = model.grid_axis_value(extent) * contrast
        draws = [synthetic_detections(scene.gt_boxes, sigma, axis,
                                      seed=_child_seed(seed, 90, state_index, r))
                 for r in range(5)]
        boxes = draws[0]
        return {"n_detections": len(boxes),
                "confidences": [round(b.confidence, 4) for b in boxes],
                "ap": float(np.mean([average_precision(d, scene.gt_boxes)
                                     for d in draws]))}

    def corrupt(extent: float, sigma: float, intensity: float, state_index: int,
                exposure_s: float) -> GrayImage:
        image = scene.image if intensity == 1.0 else GrayImage(
            scene.image.data * intensity)
        stages = []
        if extent > 0:
            stages.append(BlurStage(linear_motion_kernel(extent, 0.0)))
        if sigma > 0:
            stages.append(NoiseStage(NoiseConfig(
                sources=("dcsn", "readout"), target_sigma=sigma,
                exposure_time_s=exposure_s)))
        if not stages:
            return image
        return corrupt_pipeline(image, stages, seed=_child_seed(seed, 91, state_index))[0]

    states = []

    sigma_hat, mtf_hat, extent_hat = observe(scene.image, True)
    states.append({
        "name": "reference", "exposure_s": exposure, "iso": 1.0,
        "true": {"blur_extent": 0.0, "sigma": 0.0, "intensity_factor": 1.0},
        "estimates": {"sigma_hat": sigma_hat, "mtf_hat": mtf_hat,
                      "blur_extent_hat": extent_hat},
        "detection": detect(0.0, 0.0, 1.0, 0),
    })

    extent_true = speed * exposure
    sigma_true = 3.0
    degraded = corrupt(extent_true, sigma_true, 1.0, 1, exposure)
    sigma_hat, mtf_hat, extent_hat = observe(degraded, True)
    states.append({
        "name": "degraded", "exposure_s": exposure, "iso": 1.0,
        "true": {"blur_extent": extent_true, "sigma": sigma_true,
                 "intensity_factor": 1.0},
        "estimates": {"sigma_hat": sigma_hat, "mtf_hat": mtf_hat,
                      "blur_extent_hat": extent_hat},
        "detection": detect(sigma_true, extent_true, 1.0, 1),
    })

    alpha = alpha_for_blur_change(extent_hat, target_extent)
    reduced_exposure = exposure / alpha
    reduced_extent = speed * reduced_exposure
    reduced = corrupt(reduced_extent, sigma_true, 1.0 / alpha, 2, reduced_exposure)
    sigma_hat, _, _ = observe(reduced, False)
    states.append({
        "name": "reduced-exposure", "exposure_s": reduced_exposure, "iso": 1.0,
        "true": {"blur_extent": reduced_extent, "sigma": sigma_true,
                 "intensity_factor": 1.0 / alpha},
        "estimates": {"sigma_hat": sigma_hat, "mtf_hat": None,
                      "blur_extent_hat": None,
                      "note": "contrast reference not valid on a dimmed frame"},
        "detection": detect(sigma_true, reduced_extent, 1.0 / alpha, 2),
    })

    restored_sigma = sigma_true * alpha
    restored = corrupt(reduced_extent, restored_sigma, 1.0, 3, reduced_exposure)
    sigma_hat, mtf_hat, extent_hat = observe(restored, True)
    states.append({
        "name": "restored-gain", "exposure_s": reduced_exposure, "iso": alpha,
        "true": {"blur_extent": reduced_extent, "sigma": restored_sigma,
                 "intensity_factor": 1.0},
        "estimates": {"sigma_hat": sigma_hat, "mtf_hat": mtf_hat,
                      "blur_extent_hat": extent_hat},
        "detection": detect(restored_sigma, reduced_extent, 1.0, 3),
    })

    trace = {"run": cfg.to_dict(), "scene_id": scene.scene_id,
             "sigma_floor": sigma_floor,
             "blur_px_per_second": speed, "target_extent": target_extent,
             "alpha": alpha, "states": states}
    _write_json(out_dir / "walkthrough.json", trace)
    _write_json(out_dir / "manifest.json", {"run": cfg.to_dict()})
    return {"message": f"walkthrough alpha {alpha:.3g} over {len(states)} states "
                       f"-> {out_dir}",
            "out": str(out_dir), "alpha": alpha, "seed": seed}


def cmd_reproduce(cfg: RunConfig) -> dict:
    figure = _require(cfg, "figure")
    if figure not in REPRODUCE_FIGURES:
        raise ConfigError(f"unknown figure id {figure!r}; known: {REPRODUCE_FIGURES}")
    _require_seed(cfg)  # fail before the output directory exists
    out_dir = Path(_require(cfg, "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    if figure == "table2":
        return _reproduce_table2(cfg, out_dir)
    if figure == "fig9-heat":
        return _reproduce_fig9(cfg, out_dir)
    return _reproduce_fig10(cfg, out_dir)


# wiring


_DISPATCH = {
    "corrupt": cmd_corrupt,
    "estimate": cmd_estimate,
    "evaluate": cmd_evaluate,
    "build-iopc": cmd_build_iopc,
    "control": cmd_control,
    "reproduce": cmd_reproduce,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="camcond",
        description="Simulate camera corruptions, estimate them, and plan "
                    "exposure/gain corrections.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--config", help="TOML or JSON config file; flags override it")
        p.add_argument("--json", action="store_true", default=None,
                       help="print a machine-readable summary line")
        p.add_argument("--seed", type=int, help="seed for all randomized steps")
        p.add_argument("--out", help="output file or directory")

    p = sub.add_parser("corrupt", help="apply a blur/noise recipe to an image set")
    common(p)
    p.add_argument("--input", help="directory of input images")
    p.add_argument("--recipe", help="JSON list of stages")

    p = sub.add_parser("estimate", help="run blind estimators over images")
    common(p)
    p.add_argument("--input", help="directory of input images")
    p.add_argument("--methods", help="comma list of estimator ids")
    p.add_argument("--calibration", help="directory of clean images for mtf-spectral")
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float,
                   help="known noise level for spectral floor subtraction")

    p = sub.add_parser("evaluate", help="score estimators against ground-truth sidecars")
    common(p)
    p.add_argument("--input", help="directory of corrupted images with sidecars")
    p.add_argument("--methods", help="comma list of estimator ids")
    p.add_argument("--calibration", help="directory of clean images for mtf-spectral")

    p = sub.add_parser("build-iopc", help="measure the detection-score grid")
    common(p)
    p.add_argument("--n-scenes", dest="n_scenes", type=int)
    p.add_argument("--sigma-levels", dest="sigma_levels")
    p.add_argument("--blur-levels", dest="blur_levels")
    p.add_argument("--noise-method", dest="noise_method")
    p.add_argument("--label")
    p.add_argument("--detections", help="external per-grid-point detections file")

    p = sub.add_parser("control", help="plan an exposure/gain action from estimates")
    common(p)
    p.add_argument("--iopc", help="performance grid JSON file")
    p.add_argument("--sigma-hat", dest="sigma_hat", type=float)
    p.add_argument("--mtf-hat", dest="mtf_hat", type=float)
    p.add_argument("--camera", help="camera state/limits file")

    p = sub.add_parser("reproduce", help="run a packaged experiment recipe")
    common(p)
    p.add_argument("--figure", help=f"one of {', '.join(REPRODUCE_FIGURES)}")
    p.add_argument("--n-patches", dest="n_patches", type=int)
    p.add_argument("--n-scenes", dest="n_scenes", type=int)
    p.add_argument("--sigma-levels", dest="sigma_levels")
    p.add_argument("--blur-levels", dest="blur_levels")

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _run_config(args)
        summary = _DISPATCH[cfg.subcommand](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    if cfg.options.get("json"):
        print(json.dumps(summary, sort_keys=True))
    else:
        print(summary["message"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
