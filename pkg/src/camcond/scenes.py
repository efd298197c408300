"""Synthetic imagery with known ground truth.

Natural photographs have roughly power-law amplitude spectra, so the
generators here shape white noise in the frequency domain to get fields
that behave like camera footage under the estimators: smooth at large
scales, detailed at small ones, with a tunable spectral slope.
"""

from __future__ import annotations

import numpy as np

from camcond.image import GrayImage
from camcond.iopc import DetBox, Scene

DEFAULT_SPECTRAL_SLOPE = 1.2


def power_law_texture(shape: tuple[int, int], rng: np.random.Generator, *,
                      alpha: float = DEFAULT_SPECTRAL_SLOPE, std: float = 25.0,
                      mean: float = 120.0) -> np.ndarray:
    """Random field whose amplitude spectrum falls off as 1/f^alpha.

    The DC bin is zeroed before shaping so ``mean`` fully controls the
    offset; the result is rescaled to the requested spatial std.
    """
    h, w = shape
    if h < 4 or w < 4:
        raise ValueError("texture needs at least 4x4 pixels")
    white = rng.standard_normal((h, w))
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    radius = np.hypot(fy, fx)
    # floor keeps the first bins from dominating everything
    envelope = 1.0 / np.maximum(radius, 1.0 / max(h, w)) ** alpha
    envelope[0, 0] = 0.0
    field = np.real(np.fft.ifft2(np.fft.fft2(white) * envelope))
    sd = field.std()
    if sd > 0:
        field *= std / sd
    return field + mean


def textured_patch(seed: int, size: int = 128, *, std: float = 25.0,
                   mean: float = 120.0, alpha: float = DEFAULT_SPECTRAL_SLOPE) -> GrayImage:
    """Single seeded texture patch, clipped to stay inside display range."""
    rng = np.random.default_rng(seed)
    field = power_law_texture((size, size), rng, alpha=alpha, std=std, mean=mean)
    return GrayImage(np.clip(field, 0.0, 255.0))


def flat_patch(level: float, size: int = 128) -> GrayImage:
    """Uniform patch at a given gray level."""
    return GrayImage(np.full((size, size), float(level)))


def synthetic_scene(seed: int, *, width: int = 384, height: int = 256,
                    n_objects: int = 3, label: str = "car") -> Scene:
    """Textured background with rectangular high-contrast objects.

    Object rectangles double as ground-truth boxes. Placement avoids
    heavy overlap so greedy detection matching stays unambiguous; the
    paste keeps hard edges, which gives the spectral estimators real
    content to work with.
    """
    rng = np.random.default_rng(seed)
    background = power_law_texture((height, width), rng, std=18.0, mean=110.0)
    boxes: list[DetBox] = []
    for _ in range(n_objects):
        for _attempt in range(30):
            w = int(rng.integers(40, 81))
            h = int(rng.integers(40, 81))
            x = int(rng.integers(4, width - w - 4))
            y = int(rng.integers(4, height - h - 4))
            candidate = DetBox(label=label, x=x, y=y, w=w, h=h)
            if all(candidate.iou(b) < 0.05 for b in boxes):
                break
        else:
            continue
        offset = float(rng.uniform(35.0, 70.0)) * (1.0 if rng.random() < 0.5 else -1.0)
        patch = power_law_texture((h, w), rng, std=28.0, mean=0.0)
        background[y:y + h, x:x + w] = background[y:y + h, x:x + w] * 0.3 + patch + 110.0 + offset
        boxes.append(candidate)
    return Scene(scene_id=f"scene-{seed:05d}",
                 image=GrayImage(np.clip(background, 2.0, 253.0)),
                 gt_boxes=tuple(boxes))
