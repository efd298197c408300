"""Blur kernel synthesis, convolution and frequency-response sampling.

Two kernel families are generated: defocus disks (circle of confusion) and
motion paths rasterized with per-pixel coverage weights. The frequency
response of a kernel is summarized by contrast samples at eight fixed
spatial frequencies, taken separately along the horizontal and vertical
frequency axes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage, signal

from camcond.image import GrayImage, _atomic_write, save_gray

# default odd canvas; large enough for the biggest supported extent (21 px)
KERNEL_SIZE = 31

# contrast sample frequencies, cycles per pixel
MTF_FREQUENCIES = (0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6)

# transform length for frequency sampling; fine enough that linear
# interpolation between bins stays below 1e-6 of closed-form values
_MTF_PAD = 16384

# arc-length deposition step for path rasterization, px
_RASTER_STEP = 1.0 / 64.0


@dataclass(frozen=True)
class MtfSamples:
    """Contrast values at the eight fixed frequencies, per direction.

    ``h`` holds samples along the horizontal frequency axis (variation
    across columns), ``v`` along the vertical axis. All values lie in
    [0, 1] with 1 meaning full contrast.
    """

    h: tuple[float, ...]
    v: tuple[float, ...]
    frequencies: tuple[float, ...] = MTF_FREQUENCIES

    def __post_init__(self):
        for name, vals in (("h", self.h), ("v", self.v)):
            vals = tuple(float(x) for x in vals)
            if len(vals) != len(self.frequencies):
                raise ValueError(f"{name} needs {len(self.frequencies)} samples, got {len(vals)}")
            if any(not math.isfinite(x) or x < -1e-12 or x > 1.0 + 1e-9 for x in vals):
                raise ValueError(f"{name} samples out of [0, 1]: {vals}")
            object.__setattr__(self, name, tuple(min(max(x, 0.0), 1.0) for x in vals))

    def product(self, other: "MtfSamples") -> "MtfSamples":
        """Elementwise product; the response of two blurs applied in sequence."""
        if self.frequencies != other.frequencies:
            raise ValueError("frequency grids differ")
        return MtfSamples(
            h=tuple(a * b for a, b in zip(self.h, other.h)),
            v=tuple(a * b for a, b in zip(self.v, other.v)),
            frequencies=self.frequencies,
        )

    def to_dict(self) -> dict:
        return {"frequencies": list(self.frequencies), "h": list(self.h), "v": list(self.v)}

    @classmethod
    def from_dict(cls, d: dict) -> "MtfSamples":
        return cls(h=tuple(d["h"]), v=tuple(d["v"]), frequencies=tuple(d["frequencies"]))


@dataclass(frozen=True)
class Kernel:
    """Normalized non-negative point-spread weights on an odd square canvas."""

    weights: np.ndarray
    kind: str
    length_px: float | None = None
    orientation_deg: float | None = None
    seed: int | None = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, copy=True)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] % 2 == 0:
            raise ValueError(f"kernel must be odd and square, got shape {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("kernel weights must be finite and non-negative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"kernel weights must sum to 1, got {w.sum()!r}")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class MotionPath:
    """Polyline in kernel coordinates with per-segment intensity weights.

    ``waypoints`` is (n, 2) as (x, y) relative to the canvas center;
    ``segment_weights`` has n-1 positive entries modelling speed variation
    along the trajectory (slower segments expose longer and weigh more).
    """

    waypoints: np.ndarray
    segment_weights: np.ndarray

    def __post_init__(self):
        wp = np.array(self.waypoints, dtype=np.float64, copy=True)
        sw = np.array(self.segment_weights, dtype=np.float64, copy=True)
        if wp.ndim != 2 or wp.shape[1] != 2 or wp.shape[0] < 2:
            raise ValueError("waypoints must be (n, 2) with n >= 2")
        if sw.shape != (wp.shape[0] - 1,) or np.any(sw <= 0):
            raise ValueError("segment_weights must be positive, one per segment")
        wp.flags.writeable = False
        sw.flags.writeable = False
        object.__setattr__(self, "waypoints", wp)
        object.__setattr__(self, "segment_weights", sw)

    def arc_length(self) -> float:
        return float(np.sum(np.hypot(*np.diff(self.waypoints, axis=0).T)))


def identity_kernel() -> Kernel:
    """1x1 pass-through kernel (no blur)."""
    return Kernel(weights=np.ones((1, 1)), kind="identity", length_px=0.0)


def coc_diameter(aperture_mm: float, focal_length_mm: float, focus_distance_mm: float,
                 subject_distance_mm: float) -> float:
    """Circle-of-confusion diameter on the sensor for a thin-lens camera.

    Parameters are aperture diameter, focal length, the focused distance
    and the actual subject distance, all in mm. Returns the blur disk
    diameter in mm; zero when the subject sits exactly in the focal plane.
    """
    if focal_length_mm <= 0 or aperture_mm <= 0:
        raise ValueError("aperture and focal length must be positive")
    if focus_distance_mm <= focal_length_mm:
        raise ValueError("focus distance must exceed the focal length")
    if subject_distance_mm <= 0:
        raise ValueError("subject distance must be positive")
    return (aperture_mm * (focal_length_mm / (focus_distance_mm - focal_length_mm))
            * abs(subject_distance_mm - focus_distance_mm) / subject_distance_mm)


def defocus_kernel(diameter_px: int, size: int = KERNEL_SIZE) -> Kernel:
    """Uniform disk kernel of the given odd pixel diameter.

    Every pixel whose center lies within radius (d - 1) / 2 of the canvas
    center gets equal weight; d = 1 degenerates to a single pixel.
    """
    d = int(diameter_px)
    if d != diameter_px or d < 1 or d % 2 == 0:
        raise ValueError(f"diameter must be an odd positive integer, got {diameter_px!r}")
    if d > size:
        raise ValueError(f"diameter {d} exceeds canvas size {size}")
    c = size // 2
    yy, xx = np.mgrid[0:size, 0:size]
    r = (d - 1) / 2.0
    mask = (xx - c) ** 2 + (yy - c) ** 2 <= r * r + 1e-9
    w = mask / mask.sum()
    return Kernel(weights=w, kind="defocus", length_px=float(d))


def linear_path(length_px: float, angle_deg: float = 0.0) -> MotionPath:
    """Straight centered segment of the given arc length and direction."""
    if length_px < 2.0:
        raise ValueError(f"motion extent must be >= 2 px, got {length_px}")
    half = length_px / 2.0
    dx = math.cos(math.radians(angle_deg))
    dy = math.sin(math.radians(angle_deg))
    pts = np.array([[-half * dx, -half * dy], [half * dx, half * dy]])
    return MotionPath(waypoints=pts, segment_weights=np.array([1.0]))


def motion_kernel(path: MotionPath, size: int = KERNEL_SIZE, kind: str = "linear_motion",
                  orientation_deg: float | None = None, seed: int | None = None) -> Kernel:
    """Rasterize a motion path into a normalized kernel.

    Each pixel receives the path length traversed inside it, scaled by the
    local segment weight, so coverage is fractional at pixel transitions
    while the support stays a thin 8-connected trace.
    """
    w = _rasterize_path(path, size)
    return Kernel(weights=w / w.sum(), kind=kind, length_px=path.arc_length(),
                  orientation_deg=orientation_deg, seed=seed)


def linear_motion_kernel(length_px: float, angle_deg: float = 0.0,
                         size: int = KERNEL_SIZE) -> Kernel:
    """Straight motion kernel; axis-aligned integer lengths give exact box filters."""
    path = linear_path(length_px, angle_deg)
    return motion_kernel(path, size=size, kind="linear_motion",
                         orientation_deg=float(angle_deg) % 360.0)


def nonlinear_motion_kernel(length_px: float, seed: int, size: int = KERNEL_SIZE,
                            max_attempts: int = 50) -> Kernel:
    """Seeded smooth random-curve motion kernel of the given arc length.

    Curves are drawn from a bounded-curvature heading walk with a smooth
    speed profile. Draws whose rasterized trace is not a clean 8-connected
    chain of length within +-1 px of the target are rejected and redrawn
    from the next sub-seed.
    """
    if length_px < 2.0:
        raise ValueError(f"motion extent must be >= 2 px, got {length_px}")
    for attempt in range(max_attempts):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(attempt,)))
        path = _random_smooth_path(length_px, rng)
        try:
            kernel = motion_kernel(path, size=size, kind="nonlinear_motion", seed=seed)
        except ValueError:
            continue  # path left the canvas
        measured = rasterized_path_length(kernel.weights)
        if measured is not None and abs(measured - length_px) <= 1.0:
            return kernel
    raise RuntimeError(f"no acceptable curve after {max_attempts} draws (length {length_px})")


def rasterized_path_length(weights: np.ndarray, support_frac: float = 0.25) -> float | None:
    """Arc length of a rasterized path measured by walking its pixel trace.

    The trace is the set of pixels above ``support_frac`` of the maximum
    weight. Starting from the trace pixel farthest from the centroid, the
    walk repeatedly steps to the nearest unvisited 8-neighbor (axial moves
    preferred over diagonal) and sums center-to-center distances. Returns
    None when the support is not a coherent thin trace: some pixel has
    five or more support neighbors, or the walk strands pixels.
    """
    coords = [tuple(c) for c in np.argwhere(weights > support_frac * weights.max())]
    if len(coords) < 2:
        return None
    cells = set(coords)
    neighbors = {}
    for y, x in coords:
        adj = [(y + dy, x + dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)
               if (dy or dx) and (y + dy, x + dx) in cells]
        if len(adj) >= 5:
            return None  # compact blob, not a path
        neighbors[(y, x)] = adj
    centroid = np.mean(coords, axis=0)
    start = max(coords, key=lambda c: (np.hypot(c[0] - centroid[0], c[1] - centroid[1]), -c[0], -c[1]))
    visited = {start}
    cur = start
    total = 0.0
    while True:
        options = [n for n in neighbors[cur] if n not in visited]
        if not options:
            break
        step = min(options, key=lambda n: (math.hypot(n[0] - cur[0], n[1] - cur[1]), n))
        total += math.hypot(step[0] - cur[0], step[1] - cur[1])
        visited.add(step)
        cur = step
    if len(visited) != len(coords):
        return None  # walk stranded part of the trace
    return total


def convolve(img: GrayImage, kernel: Kernel) -> GrayImage:
    """Blur an image with a kernel; borders are mirror-extended."""
    return GrayImage(ndimage.convolve(img.data, kernel.weights, mode="reflect"))


def compose(a: Kernel, b: Kernel) -> Kernel:
    """Kernel equivalent to applying ``a`` then ``b`` (full linear convolution)."""
    w = signal.convolve2d(a.weights, b.weights, mode="full")
    w = np.clip(w, 0.0, None)
    return Kernel(weights=w / w.sum(), kind="composite")


def kernel_mtf(kernel: Kernel) -> MtfSamples:
    """Contrast of a kernel at the eight fixed frequencies per direction.

    Samples are read off the zero-padded discrete Fourier transform along
    the horizontal and vertical frequency axes and normalized by the DC
    value. Axis values of a 2-D transform equal 1-D transforms of the
    column and row sums, which keeps the padding cheap.
    """
    h = _axis_mtf(kernel.weights.sum(axis=0))
    v = _axis_mtf(kernel.weights.sum(axis=1))
    return MtfSamples(h=h, v=v)


def _axis_mtf(profile: np.ndarray) -> tuple[float, ...]:
    # wrap the profile so the canvas center sits at index 0: this removes
    # the linear phase ramp, and the complex transform of the (near-)
    # symmetric profile interpolates without magnitude loss
    padded = np.zeros(_MTF_PAD)
    padded[(np.arange(profile.size) - profile.size // 2) % _MTF_PAD] = profile
    spectrum = np.fft.rfft(padded)
    dc = abs(spectrum[0])
    if dc <= 0:
        raise ValueError("profile has no DC component")
    # interpolate the complex transform, not its magnitude: the magnitude
    # has corners at spectral zeros that linear interpolation cannot track
    bins = np.arange(spectrum.size)
    out = []
    for f in MTF_FREQUENCIES:
        f_eff = f if f <= 0.5 else 1.0 - f  # real input: |F(f)| mirrors around 0.5
        re = np.interp(f_eff * _MTF_PAD, bins, spectrum.real)
        im = np.interp(f_eff * _MTF_PAD, bins, spectrum.imag)
        out.append(min(float(np.hypot(re, im)) / dc, 1.0))
    return tuple(out)


def save_kernel(kernel: Kernel, json_path: str | Path) -> None:
    """Write exact weights plus metadata as JSON and a rescaled PGM preview."""
    json_path = Path(json_path)
    record = {
        "kind": kernel.kind,
        "size": kernel.size,
        "length_px": kernel.length_px,
        "orientation_deg": kernel.orientation_deg,
        "seed": kernel.seed,
        "weights": kernel.weights.tolist(),
    }
    _atomic_write(json_path, (json.dumps(record, indent=1) + "\n").encode("ascii"))
    preview = kernel.weights * (255.0 / kernel.weights.max())
    save_gray(GrayImage(preview), json_path.with_suffix(".pgm"))


def load_kernel(json_path: str | Path) -> Kernel:
    record = json.loads(Path(json_path).read_text())
    return Kernel(weights=np.array(record["weights"], dtype=np.float64),
                  kind=record["kind"], length_px=record["length_px"],
                  orientation_deg=record["orientation_deg"], seed=record["seed"])


def _rasterize_path(path: MotionPath, size: int) -> np.ndarray:
    center = size // 2
    grid = np.zeros((size, size))
    deltas = np.diff(path.waypoints, axis=0)
    seg_len = np.hypot(deltas[:, 0], deltas[:, 1])
    for (x0, y0), (dx, dy), length, wgt in zip(path.waypoints[:-1], deltas, seg_len,
                                               path.segment_weights):
        if length == 0:
            continue
        n = max(1, int(math.ceil(length / _RASTER_STEP)))
        ds = length / n
        s = (np.arange(n) + 0.5) * ds
        xs = center + x0 + s * (dx / length)
        ys = center + y0 + s * (dy / length)
        ix = np.floor(xs + 0.5).astype(int)
        iy = np.floor(ys + 0.5).astype(int)
        if ix.min() < 0 or iy.min() < 0 or ix.max() >= size or iy.max() >= size:
            raise ValueError("path leaves the kernel canvas")
        np.add.at(grid, (iy, ix), ds * wgt)
    if grid.sum() <= 0:
        raise ValueError("path rasterized to nothing")
    return grid


def _random_smooth_path(length_px: float, rng: np.random.Generator,
                        n_segments: int = 64) -> MotionPath:
    # bounded-curvature heading walk: a base turn rate plus one smooth
    # cosine modulation; gentle enough to avoid self-crossing
    total_turn = rng.uniform(0.5, 2.0) * rng.choice([-1.0, 1.0])
    mod_amp = rng.uniform(0.0, 0.6)
    mod_phase = rng.uniform(0.0, 2.0 * np.pi)
    heading0 = rng.uniform(0.0, 2.0 * np.pi)
    t = (np.arange(n_segments) + 0.5) / n_segments
    turn = (total_turn / n_segments) * (1.0 + mod_amp * np.cos(2.0 * np.pi * t + mod_phase))
    heading = heading0 + np.cumsum(turn)
    step = length_px / n_segments
    pts = np.zeros((n_segments + 1, 2))
    pts[1:, 0] = np.cumsum(step * np.cos(heading))
    pts[1:, 1] = np.cumsum(step * np.sin(heading))
    pts -= pts.mean(axis=0)  # center the curve on the canvas
    # smooth speed profile -> inhomogeneous deposition along the trace
    speed_phase = rng.uniform(0.0, 2.0 * np.pi)
    weights = 1.0 + 0.35 * np.cos(2.0 * np.pi * t + speed_phase)
    return MotionPath(waypoints=pts, segment_weights=weights)
