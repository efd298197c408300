"""Accuracy metrics and robust summaries for estimator evaluation."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from camcond.blur import MtfSamples


@dataclass(frozen=True)
class AmaeScore:
    """Absolute contrast-estimation error in percent, per direction and averaged."""

    mae_h: float
    mae_v: float
    amae: float


def amae(estimated: MtfSamples, reference: MtfSamples) -> AmaeScore:
    """Mean absolute error of contrast samples against a reference, in percent.

    Per direction, the eight per-frequency absolute differences are
    averaged; the headline number is the mean of the two directions.
    """
    if estimated.frequencies != reference.frequencies:
        raise ValueError("estimate and reference use different frequency grids")
    mae_h = 100.0 * float(np.mean(np.abs(np.subtract(estimated.h, reference.h))))
    mae_v = 100.0 * float(np.mean(np.abs(np.subtract(estimated.v, reference.v))))
    return AmaeScore(mae_h=mae_h, mae_v=mae_v, amae=0.5 * (mae_h + mae_v))


def expected_amae(component_a: float, component_b: float) -> float:
    """Error level expected when two independent estimate errors combine.

    Treating the two component errors as independent, they add in
    quadrature; the inputs and output are percent values.
    """
    if component_a < 0 or component_b < 0:
        raise ValueError("component errors must be >= 0")
    return math.hypot(component_a, component_b)


@dataclass(frozen=True)
class RobustStats:
    """Spread summary after symmetric tail trimming."""

    minimum: float
    median: float
    maximum: float
    n_used: int
    n_trimmed: int


def robust_stats(values, trim_fraction: float = 0.025) -> RobustStats:
    """Min / median / max after dropping the extreme tails.

    ``floor(trim_fraction * n)`` values are removed from each end of the
    sorted sample before summarizing, which shields the envelope against
    occasional estimator breakdowns.
    """
    arr = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if arr.size == 0:
        raise ValueError("robust_stats needs at least one value")
    if not (0.0 <= trim_fraction < 0.5):
        raise ValueError("trim_fraction must lie in [0, 0.5)")
    k = int(math.floor(trim_fraction * arr.size))
    kept = arr[k : arr.size - k]
    return RobustStats(minimum=float(kept[0]), median=float(np.median(kept)),
                       maximum=float(kept[-1]), n_used=int(kept.size), n_trimmed=2 * k)


def format_number(x) -> str:
    """Stable text for CSV cells: integers stay integral, floats get 6 significant digits."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float) and x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return format(float(x), ".6g")


def write_csv(path: str | Path, header: list[str], rows: list[list]) -> None:
    """Write a small table atomically with deterministic formatting."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([cell if isinstance(cell, str) else format_number(cell) for cell in row])
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    tmp.write_text(buf.getvalue())
    os.replace(tmp, path)
