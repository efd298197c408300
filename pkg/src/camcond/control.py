"""Exposure/gain planning that trades motion blur against sensor noise.

Exposure time and ISO gain form a one-parameter family once scene
brightness is held fixed: multiplying the gain by a factor while dividing
the exposure by the same factor keeps image intensity, lengthens or
shortens the streak a moving object leaves, and scales the amplified
noise floor. The planner sweeps that factor over a geometric grid, scores
each candidate operating point on a measured performance curve, and picks
the factor with the best predicted detection score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from camcond.blur import MTF_FREQUENCIES, kernel_mtf, linear_motion_kernel
from camcond.iopc import Iopc

DEFAULT_BLUR_EXTENTS = (0, 3, 7, 11, 15, 21)
CALIBRATION_FREQUENCY_INDEX = 0

# factor grid 2**linspace(-3, 3): symmetric in log space, hits 1.0 exactly
_ALPHA_GRID_SPAN = 3.0
_ALPHA_GRID_POINTS = 65
# improvements below this are treated as ties and broken toward no action
_AP_TIE_EPS = 1e-12


@dataclass(frozen=True)
class CameraLimits:
    """Actuator bounds for one camera body."""

    exposure_range: tuple[float, float] = (1e-4, 1.0)
    iso_range: tuple[float, float] = (0.25, 64.0)

    def __post_init__(self) -> None:
        for lo, hi in (self.exposure_range, self.iso_range):
            if not (0.0 < lo < hi):
                raise ValueError(f"limit range must satisfy 0 < lo < hi, got ({lo}, {hi})")


@dataclass(frozen=True)
class CameraState:
    """Current exposure time (seconds) and ISO gain (multiplier)."""

    exposure_time: float
    iso_gain: float

    def __post_init__(self) -> None:
        if self.exposure_time <= 0.0 or self.iso_gain <= 0.0:
            raise ValueError("exposure time and ISO gain must be strictly positive")


@dataclass(frozen=True)
class CalibrationTable:
    """Sampled map between motion-streak length and contrast at one frequency.

    Rows come from rendering straight horizontal motion kernels of known
    extent and reading their contrast factor at the chosen sample
    frequency. Contrast must fall strictly as extent grows, otherwise the
    map cannot be inverted.
    """

    blur_extents: tuple[float, ...]
    mtf_values: tuple[float, ...]
    frequency: float

    def __post_init__(self) -> None:
        if len(self.blur_extents) != len(self.mtf_values):
            raise ValueError("blur extents and contrast values must pair up")
        if len(self.blur_extents) < 2:
            raise ValueError("calibration needs at least two rows")
        if self.blur_extents[0] != 0.0:
            raise ValueError("calibration must anchor at extent 0")
        if any(b <= a for a, b in zip(self.blur_extents, self.blur_extents[1:])):
            raise ValueError("blur extents must be strictly increasing")
        if any(b >= a for a, b in zip(self.mtf_values, self.mtf_values[1:])):
            raise ValueError("contrast must be strictly decreasing in blur extent")


def linear_motion_calibration(blur_extents=DEFAULT_BLUR_EXTENTS,
                              frequency_index: int = CALIBRATION_FREQUENCY_INDEX,
                              ) -> CalibrationTable:
    """Render horizontal motion kernels and tabulate their contrast.

    Extent 0 is the no-blur anchor and maps to contrast 1 exactly; other
    extents must be >= 2 px, the shortest renderable streak.
    """
    values = []
    for extent in blur_extents:
        if extent == 0:
            values.append(1.0)
        else:
            samples = kernel_mtf(linear_motion_kernel(float(extent), 0.0))
            values.append(samples.h[frequency_index])
    return CalibrationTable(blur_extents=tuple(float(e) for e in blur_extents),
                            mtf_values=tuple(values),
                            frequency=MTF_FREQUENCIES[frequency_index])


def mtf_to_blur_extent(mtf_value: float, table: CalibrationTable) -> float:
    """Invert the calibration: contrast reading -> streak length in pixels.

    Piecewise-linear in the tabulated rows, clamped to the table range, so
    a reading above the no-blur anchor maps to 0 and one below the longest
    tabulated streak maps to that streak.
    """
    if not math.isfinite(mtf_value) or mtf_value <= 0.0:
        raise ValueError(f"contrast reading must be positive, got {mtf_value}")
    # np.interp wants ascending x, so run the table from blurriest to sharpest
    xp = np.asarray(table.mtf_values[::-1])
    fp = np.asarray(table.blur_extents[::-1])
    return float(np.interp(mtf_value, xp, fp))


def blur_extent_to_mtf(extent: float, table: CalibrationTable) -> float:
    """Forward calibration lookup: streak length -> contrast, clamped."""
    if not math.isfinite(extent) or extent < 0.0:
        raise ValueError(f"blur extent must be >= 0, got {extent}")
    return float(np.interp(extent, np.asarray(table.blur_extents),
                           np.asarray(table.mtf_values)))


@dataclass(frozen=True)
class TradeoffModel:
    """How one exposure/gain factor moves the blur/noise operating point.

    Streak length scales with exposure time and the noise floor scales
    with gain, both linearly; intensity stays fixed because the two
    factors cancel. The optional absolute slopes tie the dimensionless
    factor back to physical units for reporting.
    """

    calibration: CalibrationTable
    blur_px_per_second: float | None = None
    sigma_per_gain: float | None = None

    def scaled_point(self, sigma: float, blur_extent: float,
                     factor: float) -> tuple[float, float]:
        """Noise/blur pair after multiplying gain by ``factor``.

        Exposure shrinks by the same factor to hold intensity, so the
        streak shortens as the noise floor rises, and vice versa.
        """
        if factor <= 0.0:
            raise ValueError(f"factor must be positive, got {factor}")
        return sigma * factor, blur_extent / factor

    def grid_axis_value(self, blur_extent: float) -> float:
        """Performance-grid contrast coordinate for a horizontal streak.

        The grid axis averages the horizontal and vertical directions;
        horizontal motion leaves the vertical direction untouched at 1,
        so the coordinate is the midpoint between the tabulated contrast
        and 1.
        """
        return 0.5 * (blur_extent_to_mtf(blur_extent, self.calibration) + 1.0)


@dataclass(frozen=True)
class ControlAction:
    """Planned exposure/gain move and its predicted effect.

    ``alpha`` is the magnitude (>= 1) of the factor; ``direction`` says
    which way it is applied. ``mtf_after`` is in the same convention as
    the estimate fed to the planner: contrast along the motion direction.
    """

    alpha: float
    direction: str
    blur_extent_before: float
    blur_extent_after: float
    sigma_after: float
    mtf_after: float
    ap_before: float
    ap_after: float

    def __post_init__(self) -> None:
        if self.alpha < 1.0:
            raise ValueError(f"action magnitude must be >= 1, got {self.alpha}")
        if self.direction not in ("blur-reduce", "noise-reduce", "hold"):
            raise ValueError(f"unknown action direction {self.direction!r}")


def default_alpha_grid() -> np.ndarray:
    return 2.0 ** np.linspace(-_ALPHA_GRID_SPAN, _ALPHA_GRID_SPAN, _ALPHA_GRID_POINTS)


def optimal_alpha(iopc: Iopc, sigma_hat: float, mtf_hat: float,
                  model: TradeoffModel, alpha_grid=None) -> ControlAction:
    """Pick the exposure/gain factor with the best predicted detection score.

    Every candidate factor is scored by moving the estimated operating
    point along the intensity-preserving trade line and reading the
    performance grid there; candidates that leave the populated grid are
    skipped. Ties go to the candidate closest to no action, so a flat
    grid yields a hold.

    Raises ValueError when the current point cannot be scored or no
    candidate stays on the grid.
    """
    if sigma_hat < 0.0:
        raise ValueError(f"noise estimate must be >= 0, got {sigma_hat}")
    grid = default_alpha_grid() if alpha_grid is None else np.asarray(alpha_grid, float)
    if grid.size == 0 or np.any(grid <= 0.0):
        raise ValueError("factor grid must be non-empty and positive")

    extent_hat = mtf_to_blur_extent(mtf_hat, model.calibration)
    ap_before = iopc.lookup_ap(sigma_hat, 0.5 * (mtf_hat + 1.0))

    # scan outward from 1 so equal scores resolve to the least intervention
    order = sorted(range(grid.size), key=lambda k: (abs(math.log(grid[k])), grid[k]))
    best = None
    for k in order:
        factor = float(grid[k])
        sigma_new, extent_new = model.scaled_point(sigma_hat, extent_hat, factor)
        try:
            ap_new = iopc.lookup_ap(sigma_new, model.grid_axis_value(extent_new))
        except ValueError:
            continue
        if best is None or ap_new > best[1] + _AP_TIE_EPS:
            best = (factor, ap_new, sigma_new, extent_new)
    if best is None:
        raise ValueError("no feasible factor keeps the query inside the grid hull")

    factor, ap_after, sigma_after, extent_after = best
    if factor == 1.0:
        alpha, direction = 1.0, "hold"
    elif factor > 1.0:
        alpha, direction = factor, "blur-reduce"
    else:
        alpha, direction = 1.0 / factor, "noise-reduce"
    return ControlAction(alpha=alpha, direction=direction,
                         blur_extent_before=extent_hat,
                         blur_extent_after=extent_after,
                         sigma_after=sigma_after,
                         mtf_after=blur_extent_to_mtf(extent_after, model.calibration),
                         ap_before=ap_before, ap_after=ap_after)


def alpha_for_blur_change(current_extent: float, target_extent: float) -> float:
    """Exact factor that moves the streak length onto a target.

    Pure quotient so round targets give round factors (18 px down to
    9 px is exactly 2).
    """
    if current_extent <= 0.0 or target_extent <= 0.0:
        raise ValueError("blur extents must be positive to form a ratio")
    return current_extent / target_extent


def apply_action(state: CameraState, alpha: float, direction: str,
                 limits: CameraLimits | None = None) -> tuple[CameraState, bool]:
    """Turn a planned factor into a new exposure/gain pair.

    Blur-reduce divides the exposure and multiplies the gain; noise-reduce
    does the opposite; hold changes nothing. The exposure-gain product is
    preserved except when a bound clips one side, which the returned flag
    reports.
    """
    if alpha < 1.0:
        raise ValueError(f"action magnitude must be >= 1, got {alpha}")
    limits = limits or CameraLimits()
    if direction == "hold":
        exposure, iso = state.exposure_time, state.iso_gain
    elif direction == "blur-reduce":
        exposure, iso = state.exposure_time / alpha, state.iso_gain * alpha
    elif direction == "noise-reduce":
        exposure, iso = state.exposure_time * alpha, state.iso_gain / alpha
    else:
        raise ValueError(f"unknown action direction {direction!r}")
    t_lo, t_hi = limits.exposure_range
    g_lo, g_hi = limits.iso_range
    clipped_exposure = min(max(exposure, t_lo), t_hi)
    clipped_iso = min(max(iso, g_lo), g_hi)
    clipped = clipped_exposure != exposure or clipped_iso != iso
    return CameraState(exposure_time=clipped_exposure, iso_gain=clipped_iso), clipped
