"""Recovering one blur stage's contrast curve from a combined measurement.

When two blur stages act in sequence their contrast factors multiply, so
dividing a combined measurement by a known stage isolates the other one.
Division is only trustworthy where both curves carry signal; samples where
either side sits at or below a guard level are omitted rather than
amplified into garbage.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from camcond.blur import MTF_FREQUENCIES, MtfSamples


@dataclass(frozen=True)
class DivisionGuard:
    """Lower signal bound below which a ratio is not formed."""

    epsilon: float = 0.1

    def __post_init__(self) -> None:
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")


@dataclass(frozen=True)
class RecoveredMtf:
    """Result of a guarded division; omitted samples hold NaN."""

    h: tuple[float, ...]
    v: tuple[float, ...]
    omitted_h: tuple[int, ...]
    omitted_v: tuple[int, ...]
    clamp_count: int
    frequencies: tuple[float, ...] = MTF_FREQUENCIES

    @property
    def n_valid(self) -> int:
        return 2 * len(self.frequencies) - len(self.omitted_h) - len(self.omitted_v)

    def to_dict(self) -> dict:
        return {
            "frequencies": list(self.frequencies),
            "h": [None if math.isnan(x) else x for x in self.h],
            "v": [None if math.isnan(x) else x for x in self.v],
            "omitted_h": list(self.omitted_h),
            "omitted_v": list(self.omitted_v),
            "clamp_count": self.clamp_count,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "RecoveredMtf":
        return cls(
            h=tuple(math.nan if x is None else float(x) for x in d["h"]),
            v=tuple(math.nan if x is None else float(x) for x in d["v"]),
            omitted_h=tuple(int(i) for i in d["omitted_h"]),
            omitted_v=tuple(int(i) for i in d["omitted_v"]),
            clamp_count=int(d["clamp_count"]),
            frequencies=tuple(float(f) for f in d["frequencies"]),
        )


def _divide_axis(combined, known, eps):
    values = []
    omitted = []
    clamps = 0
    for i, (c, k) in enumerate(zip(combined, known)):
        if c > eps and k > eps:
            ratio = c / k
            if ratio > 1.0:
                ratio = 1.0
                clamps += 1
            values.append(ratio)
        else:
            values.append(math.nan)
            omitted.append(i)
    return tuple(values), tuple(omitted), clamps


def divide_mtf(combined: MtfSamples, known: MtfSamples,
               guard: DivisionGuard = DivisionGuard()) -> RecoveredMtf:
    """Divide a combined contrast curve by a known stage, sample by sample.

    A sample survives only if both inputs exceed the guard level there;
    ratios above 1 (estimation noise) are clamped and counted. Raises if
    nothing survives in either direction.
    """
    if combined.frequencies != known.frequencies:
        raise ValueError("combined and known curves use different frequency grids")
    eps = guard.epsilon
    h, om_h, ch = _divide_axis(combined.h, known.h, eps)
    v, om_v, cv = _divide_axis(combined.v, known.v, eps)
    if len(om_h) == len(h) and len(om_v) == len(v):
        raise ValueError("no recoverable samples: both curves sit below the guard everywhere")
    return RecoveredMtf(h=h, v=v, omitted_h=om_h, omitted_v=om_v,
                        clamp_count=ch + cv, frequencies=combined.frequencies)


def min_envelope_over_time(series: list[MtfSamples]) -> MtfSamples:
    """Per-frequency minimum over a sequence of measurements.

    Useful as a conservative summary of a drifting system: the envelope
    never reports better contrast than the worst observation.
    """
    if not series:
        raise ValueError("min_envelope_over_time needs at least one sample set")
    freqs = series[0].frequencies
    for s in series[1:]:
        if s.frequencies != freqs:
            raise ValueError("mixed frequency grids in series")
    h = tuple(min(s.h[i] for s in series) for i in range(len(freqs)))
    v = tuple(min(s.v[i] for s in series) for i in range(len(freqs)))
    return MtfSamples(h=h, v=v, frequencies=freqs)
