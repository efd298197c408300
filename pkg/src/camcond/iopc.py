"""Detection performance as a function of estimated image degradation.

An input-output performance curve (IOPC) is a small 2-D table: noise
level on one axis, a single contrast value on the other, detection
average precision in the cells. Built once per detector and object
class from corrupted footage with ground truth, it lets a controller
predict how a camera setting change will move detection quality without
running the detector again.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from camcond.blur import (
    MTF_FREQUENCIES,
    Kernel,
    MtfSamples,
    kernel_mtf,
    linear_motion_kernel,
)
from camcond.estimators import get_noise_estimator
from camcond.image import GrayImage, tile_patches
from camcond.metrics import format_number
from camcond.noise import BlurStage, NoiseConfig, NoiseStage, corrupt_pipeline

SIGMA_LEVELS = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0)
BLUR_LEVELS = (0, 3, 7, 11, 15, 21)
# index into MTF_FREQUENCIES at which the contrast axis is read
MTF_AXIS_INDEX = 0


@dataclass(frozen=True)
class DetBox:
    """Axis-aligned detection or ground-truth rectangle."""

    label: str
    x: float
    y: float
    w: float
    h: float
    confidence: float | None = None

    def __post_init__(self) -> None:
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box sides must be positive, got {self.w}x{self.h}")
        if self.confidence is not None and not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")

    def iou(self, other: "DetBox") -> float:
        x1 = max(self.x, other.x)
        y1 = max(self.y, other.y)
        x2 = min(self.x + self.w, other.x + other.w)
        y2 = min(self.y + self.h, other.y + other.h)
        if x2 <= x1 or y2 <= y1:
            return 0.0
        inter = (x2 - x1) * (y2 - y1)
        return inter / (self.w * self.h + other.w * other.h - inter)


@dataclass(frozen=True)
class Scene:
    """One annotated image."""

    scene_id: str
    image: GrayImage
    gt_boxes: tuple[DetBox, ...]


class Detector(Protocol):
    """Pixel-level object detector; must be deterministic per image."""

    def detect(self, image: GrayImage) -> Sequence[DetBox]: ...


def mtf_axis_value(samples: MtfSamples, index: int = MTF_AXIS_INDEX) -> float:
    """Single contrast number for the IOPC axis: mean of both directions."""
    return 0.5 * (samples.h[index] + samples.v[index])


def _match_greedily(dets, gts, iou_threshold):
    """True/false-positive flags for confidence-ranked detections."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    matched = [False] * len(gts)
    flags = [False] * len(dets)
    for i in order:
        det = dets[i]
        best_j = -1
        best_iou = iou_threshold
        for j, gt in enumerate(gts):
            if matched[j] or gt.label != det.label:
                continue
            iou = det.iou(gt)
            if iou >= best_iou:
                best_iou = iou
                best_j = j
        if best_j >= 0:
            matched[best_j] = True
            flags[i] = True
    return [(dets[i].confidence, flags[i]) for i in order]


def _ap_from_flags(scored, n_gt):
    scored = sorted(scored, key=lambda t: -t[0])
    tp = np.cumsum([1.0 if hit else 0.0 for _, hit in scored])
    precision = tp / np.arange(1, len(scored) + 1)
    recall = tp / n_gt
    # monotone envelope, integrated over every recall step
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mrec = np.concatenate(([0.0], recall, [1.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    return float(np.sum((mrec[1:] - mrec[:-1]) * mpre[1:]))


def average_precision(dets: Sequence[DetBox], gts: Sequence[DetBox],
                      iou_threshold: float = 0.5) -> float:
    """Single-class average precision with greedy IoU matching.

    Detections are visited in confidence order (ties keep insertion
    order) and each claims the best still-unmatched ground truth at or
    above the threshold. The returned value is the area under the
    monotone precision envelope over all recall points.
    """
    for det in dets:
        if det.confidence is None:
            raise ValueError("detections need a confidence value")
    if not gts:
        return 1.0 if not dets else 0.0
    if not dets:
        return 0.0
    scored = _match_greedily(list(dets), list(gts), iou_threshold)
    return _ap_from_flags(scored, len(gts))


def pooled_average_precision(per_image: Sequence[tuple[Sequence[DetBox], Sequence[DetBox]]],
                             iou_threshold: float = 0.5) -> float:
    """AP over a dataset: match per image, then pool one ranked list."""
    scored = []
    n_gt = 0
    for dets, gts in per_image:
        for det in dets:
            if det.confidence is None:
                raise ValueError("detections need a confidence value")
        n_gt += len(gts)
        scored.extend(_match_greedily(list(dets), list(gts), iou_threshold))
    if n_gt == 0:
        return 1.0 if not scored else 0.0
    if not scored:
        return 0.0
    return _ap_from_flags(scored, n_gt)


def detection_probability(sigma: float, mtf: float) -> float:
    """Chance the stand-in detector fires on one object.

    Deliberately much more sensitive to blur than to noise: contrast
    below 0.15 kills detection outright, while even sigma = 30 DN only
    costs about a third of the probability.
    """
    q_blur = min(max((mtf - 0.15) / 0.85, 0.0), 1.0) ** 1.5
    q_noise = 1.0 - 0.3 * min(max(sigma, 0.0), 30.0) / 30.0
    return q_blur * q_noise


def synthetic_detections(gt_boxes: Sequence[DetBox], sigma: float, mtf: float,
                         seed: int, fp_rate: float = 0.4) -> list[DetBox]:
    """Stand-in detector output for footage at a known degradation level.

    Each ground-truth box is reported with probability and confidence
    driven by ``detection_probability``; localization jitter and the
    false-positive budget both grow as quality drops. Clean input is
    reproduced perfectly at confidence >= 0.9.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(11,)))
    p = detection_probability(sigma, mtf)
    out = []
    for box in gt_boxes:
        if rng.random() >= p:
            continue
        shift = 3.0 * (1.0 - p)
        dx, dy = rng.uniform(-shift, shift, size=2)
        confidence = float(np.clip(0.35 + 0.65 * p - 0.05 * rng.random(), 0.05, 1.0))
        out.append(DetBox(label=box.label, x=box.x + dx, y=box.y + dy,
                          w=box.w, h=box.h, confidence=confidence))
    n_fp = int(rng.binomial(max(len(gt_boxes), 1), fp_rate * (1.0 - p)))
    for _ in range(n_fp):
        w = float(rng.uniform(25.0, 60.0))
        h = float(rng.uniform(25.0, 60.0))
        out.append(DetBox(label=gt_boxes[0].label if gt_boxes else "object",
                          x=float(rng.uniform(0.0, 300.0)), y=float(rng.uniform(0.0, 200.0)),
                          w=w, h=h, confidence=float(rng.uniform(0.05, 0.4))))
    return out


@dataclass
class Iopc:
    """AP over a (noise level x contrast value) grid with sample counts."""

    sigma_grid: tuple[float, ...]
    mtf_grid: tuple[float, ...]
    ap: np.ndarray
    counts: np.ndarray
    mtf_frequency: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.sigma_grid = tuple(float(x) for x in self.sigma_grid)
        self.mtf_grid = tuple(float(x) for x in self.mtf_grid)
        for grid, name in ((self.sigma_grid, "sigma"), (self.mtf_grid, "mtf")):
            if len(grid) < 2 or any(b <= a for a, b in zip(grid, grid[1:])):
                raise ValueError(f"{name} grid must be strictly increasing with >= 2 entries")
        shape = (len(self.sigma_grid), len(self.mtf_grid))
        self.ap = np.asarray(self.ap, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.ap.shape != shape or self.counts.shape != shape:
            raise ValueError(f"cell arrays must have shape {shape}")
        populated = self.counts > 0
        values = self.ap[populated]
        if values.size and (np.any(values < 0) or np.any(values > 1)):
            raise ValueError("populated AP cells must lie in [0, 1]")

    @classmethod
    def empty(cls, sigma_grid=SIGMA_LEVELS, mtf_grid=None, *, mtf_frequency: float,
              metadata: dict | None = None) -> "Iopc":
        if mtf_grid is None:
            raise ValueError("mtf_grid is required")
        shape = (len(tuple(sigma_grid)), len(tuple(mtf_grid)))
        return cls(sigma_grid=tuple(sigma_grid), mtf_grid=tuple(mtf_grid),
                   ap=np.full(shape, np.nan), counts=np.zeros(shape, dtype=np.int64),
                   mtf_frequency=mtf_frequency, metadata=metadata or {})

    def nearest_cell(self, sigma: float, mtf: float) -> tuple[int, int]:
        i = int(np.argmin(np.abs(np.asarray(self.sigma_grid) - sigma)))
        j = int(np.argmin(np.abs(np.asarray(self.mtf_grid) - mtf)))
        return i, j

    def add_sample(self, sigma: float, mtf: float, ap_value: float, weight: int = 1) -> None:
        """Fold one (estimated sigma, estimated contrast, AP) tuple in.

        The tuple lands in the nearest grid cell; repeated samples are
        combined by a count-weighted mean.
        """
        if not (0.0 <= ap_value <= 1.0):
            raise ValueError(f"AP must lie in [0, 1], got {ap_value}")
        if weight < 1:
            raise ValueError("weight must be >= 1")
        i, j = self.nearest_cell(sigma, mtf)
        n = self.counts[i, j]
        if n == 0:
            self.ap[i, j] = ap_value
        else:
            self.ap[i, j] = (self.ap[i, j] * n + ap_value * weight) / (n + weight)
        self.counts[i, j] = n + weight

    def lookup_ap(self, sigma: float, mtf: float) -> float:
        """Bilinear AP prediction at an estimated operating point.

        Fails loudly outside the grid hull or when any of the four
        surrounding cells is empty; silent extrapolation would defeat
        the point of the curve.
        """
        sg, mg = self.sigma_grid, self.mtf_grid
        if not (sg[0] <= sigma <= sg[-1]) or not (mg[0] <= mtf <= mg[-1]):
            raise ValueError(f"query ({sigma}, {mtf}) outside grid hull "
                             f"[{sg[0]}, {sg[-1]}] x [{mg[0]}, {mg[-1]}]")
        i = int(np.searchsorted(sg, sigma, side="right") - 1)
        j = int(np.searchsorted(mg, mtf, side="right") - 1)
        i = min(i, len(sg) - 2)
        j = min(j, len(mg) - 2)
        corners = [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)]
        for ci, cj in corners:
            if self.counts[ci, cj] == 0:
                raise ValueError(f"cell (sigma={sg[ci]}, mtf={mg[cj]}) is empty")
        ts = (sigma - sg[i]) / (sg[i + 1] - sg[i])
        tm = (mtf - mg[j]) / (mg[j + 1] - mg[j])
        top = self.ap[i, j] * (1 - tm) + self.ap[i, j + 1] * tm
        bottom = self.ap[i + 1, j] * (1 - tm) + self.ap[i + 1, j + 1] * tm
        return float(top * (1 - ts) + bottom * ts)

    def to_dict(self) -> dict:
        return {
            "sigma_grid": list(self.sigma_grid),
            "mtf_grid": list(self.mtf_grid),
            "mtf_frequency": self.mtf_frequency,
            "ap": [[None if self.counts[i, j] == 0 else float(self.ap[i, j])
                    for j in range(len(self.mtf_grid))]
                   for i in range(len(self.sigma_grid))],
            "counts": self.counts.tolist(),
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "Iopc":
        ap = np.asarray([[np.nan if v is None else float(v) for v in row]
                         for row in d["ap"]])
        return cls(sigma_grid=tuple(d["sigma_grid"]), mtf_grid=tuple(d["mtf_grid"]),
                   ap=ap, counts=np.asarray(d["counts"], dtype=np.int64),
                   mtf_frequency=float(d["mtf_frequency"]),
                   metadata=dict(d.get("metadata", {})))

    @classmethod
    def from_json(cls, text: str) -> "Iopc":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".part")
        tmp.write_text(self.to_json())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "Iopc":
        return cls.from_json(Path(path).read_text())

    def to_csv_rows(self) -> tuple[list[str], list[list]]:
        """Matrix export: one row per sigma level, one column per contrast."""
        header = ["sigma"] + [format_number(m) for m in self.mtf_grid]
        rows = []
        for i, s in enumerate(self.sigma_grid):
            row: list = [s]
            for j in range(len(self.mtf_grid)):
                row.append("" if self.counts[i, j] == 0 else self.ap[i, j])
            rows.append(row)
        return header, rows


def read_detections_jsonl(path) -> dict[str, list[DetBox]]:
    """Load {image, class, box, confidence?} records grouped by image."""
    out: dict[str, list[DetBox]] = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                x, y, w, h = rec["box"]
                box = DetBox(label=rec["class"], x=float(x), y=float(y),
                             w=float(w), h=float(h),
                             confidence=None if rec.get("confidence") is None
                             else float(rec["confidence"]))
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{line_no}: bad detection record: {exc}") from None
            out.setdefault(rec["image"], []).append(box)
    return out


def write_detections_jsonl(path, per_image: dict[str, Sequence[DetBox]]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    with open(tmp, "w") as fh:
        for image_id in per_image:
            for box in per_image[image_id]:
                rec = {"image": image_id, "class": box.label,
                       "box": [box.x, box.y, box.w, box.h]}
                if box.confidence is not None:
                    rec["confidence"] = box.confidence
                fh.write(json.dumps(rec) + "\n")
    os.replace(tmp, path)


def _grid_point_stages(sigma: float, blur_extent: int) -> tuple[list, Kernel | None]:
    kernel = linear_motion_kernel(blur_extent) if blur_extent > 0 else None
    stages = []
    if kernel is not None:
        stages.append(BlurStage(kernel))
    if sigma > 0:
        stages.append(NoiseStage(NoiseConfig(sources=("dcsn", "readout"),
                                             target_sigma=sigma,
                                             temperature_k=330.0,
                                             exposure_time_s=0.1)))
    return stages, kernel


def _patches_overlapping_gt(image: GrayImage, gt_boxes, size: int = 128,
                            stride: int = 64):
    chosen = []
    for patch in tile_patches(image, size, stride):
        region = DetBox(label=gt_boxes[0].label, x=patch.x, y=patch.y, w=size, h=size)
        if any(region.iou(gt) > 0.0 for gt in gt_boxes):
            chosen.append(patch)
    return chosen


def build_iopc(scenes: Sequence[Scene], *, seed: int,
               sigma_levels: Sequence[float] = SIGMA_LEVELS,
               blur_levels: Sequence[int] = BLUR_LEVELS,
               noise_method: str = "pca",
               detector: Detector | None = None,
               detections: dict[tuple[float, int], dict[str, Sequence[DetBox]]] | None = None,
               detector_repeats: int = 3,
               mtf_frequency_index: int = MTF_AXIS_INDEX,
               label: str = "object") -> Iopc:
    """Measure an IOPC over a corruption grid.

    Every scene is corrupted at each (sigma, blur extent) point; noise
    is estimated on the patches overlapping ground truth, contrast is
    read from the corruption records, and both medians index the cell
    that receives the pooled AP. Detections come from, in order of
    preference: an explicit per-grid-point mapping, a pixel detector, or
    the built-in synthetic stand-in.
    """
    scenes = list(scenes)
    if not scenes or all(not s.gt_boxes for s in scenes):
        raise ValueError("need at least one scene with ground-truth boxes")
    estimate_noise = get_noise_estimator(noise_method)

    mtf_axis_of_extent = {}
    for d in blur_levels:
        if d > 0:
            mtf_axis_of_extent[d] = mtf_axis_value(kernel_mtf(linear_motion_kernel(d)),
                                                   mtf_frequency_index)
        else:
            mtf_axis_of_extent[d] = 1.0

    grid = Iopc.empty(sigma_grid=tuple(sigma_levels),
                      mtf_grid=tuple(sorted(mtf_axis_of_extent[d] for d in blur_levels)),
                      mtf_frequency=MTF_FREQUENCIES[mtf_frequency_index],
                      metadata={"detector": "synthetic" if detector is None and detections is None
                                else ("external-file" if detections is not None else "custom"),
                                "class": label,
                                "noise_method": noise_method,
                                "sigma_levels": list(sigma_levels),
                                "blur_levels": list(blur_levels),
                                "seed": seed})

    for gi, sigma in enumerate(sigma_levels):
        for gj, d in enumerate(blur_levels):
            sigma_estimates = []
            mtf_estimates = []
            per_image = []
            for si, scene in enumerate(scenes):
                stages, kernel = _grid_point_stages(sigma, d)
                point_seed = int(np.random.SeedSequence(
                    entropy=seed, spawn_key=(gi, gj, si)).generate_state(1)[0])
                if stages:
                    corrupted, bundle = corrupt_pipeline(scene.image, stages, seed=point_seed)
                else:
                    corrupted = scene.image
                for patch in _patches_overlapping_gt(corrupted, scene.gt_boxes):
                    sigma_estimates.append(estimate_noise(patch).sigma_hat)
                mtf_estimates.append(mtf_axis_of_extent[d])

                if detections is not None:
                    key = (float(sigma), int(d))
                    try:
                        dets = list(detections[key].get(scene.scene_id, []))
                    except KeyError:
                        raise ValueError(f"no detections supplied for grid point {key}") from None
                    per_image.append((dets, list(scene.gt_boxes)))
                elif detector is not None:
                    per_image.append((list(detector.detect(corrupted)), list(scene.gt_boxes)))
                else:
                    for r in range(detector_repeats):
                        dets = synthetic_detections(scene.gt_boxes, sigma,
                                                    mtf_axis_of_extent[d],
                                                    seed=point_seed + r)
                        per_image.append((dets, list(scene.gt_boxes)))

            ap = pooled_average_precision(per_image)
            sigma_median = float(np.median(sigma_estimates))
            mtf_median = float(np.median(mtf_estimates))
            grid.add_sample(sigma_median, mtf_median, ap)
    return grid
