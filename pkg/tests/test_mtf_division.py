import math

import numpy as np
import pytest

from camcond.blur import (
    MTF_FREQUENCIES,
    MtfSamples,
    compose,
    defocus_kernel,
    kernel_mtf,
    linear_motion_kernel,
)
from camcond.mtf_division import (
    DivisionGuard,
    RecoveredMtf,
    divide_mtf,
    min_envelope_over_time,
)


def test_guard_validation():
    DivisionGuard(0.5)
    for bad in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(ValueError, match="epsilon"):
            DivisionGuard(bad)


def test_round_trip_recovers_first_stage():
    # composite measurement divided by the second stage must return the
    # first stage wherever the guard admits the sample
    eps = DivisionGuard().epsilon
    for d1 in (3, 7, 11):
        for d2 in (2, 5):
            k1 = defocus_kernel(d1)
            k2 = linear_motion_kernel(d2)
            m1 = kernel_mtf(k1)
            m2 = kernel_mtf(k2)
            combined = kernel_mtf(compose(k1, k2))
            rec = divide_mtf(combined, m2)
            for i in range(8):
                for axis, ref in (("h", m1.h), ("v", m1.v)):
                    c = getattr(combined, axis)[i]
                    k = getattr(m2, axis)[i]
                    got = getattr(rec, axis)[i]
                    if c > eps and k > eps:
                        assert got == pytest.approx(ref[i], abs=1e-6)
                    else:
                        assert math.isnan(got)
                        assert i in getattr(rec, f"omitted_{axis}")


def test_omission_mask_matches_inputs():
    # low-contrast samples on either side are omitted, never divided
    combined = MtfSamples(h=(0.5, 0.3, 0.2, 0.12, 0.08, 0.05, 0.2, 0.3),
                          v=(0.9,) * 8)
    known = MtfSamples(h=(0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.05, 0.3),
                       v=(0.95,) * 8)
    rec = divide_mtf(combined, known)
    assert rec.omitted_h == (4, 5, 6)
    assert rec.omitted_v == ()
    assert rec.n_valid == 13
    for i in (4, 5, 6):
        assert math.isnan(rec.h[i])
    assert rec.h[0] == pytest.approx(0.5 / 0.9)


def test_ratio_above_one_clamped_and_counted():
    known = MtfSamples(h=(0.5,) * 8, v=(0.5,) * 8)
    combined = MtfSamples(h=(0.52,) * 8, v=(0.4,) * 8)
    rec = divide_mtf(combined, known)
    assert all(x == 1.0 for x in rec.h)
    assert rec.clamp_count == 8
    assert rec.v[0] == pytest.approx(0.8)


def test_all_omitted_raises():
    low = MtfSamples(h=(0.05,) * 8, v=(0.05,) * 8)
    with pytest.raises(ValueError, match="guard"):
        divide_mtf(low, low)


def test_one_direction_alive_is_enough():
    combined = MtfSamples(h=(0.05,) * 8, v=(0.6,) * 8)
    known = MtfSamples(h=(0.05,) * 8, v=(0.8,) * 8)
    rec = divide_mtf(combined, known)
    assert rec.omitted_h == tuple(range(8))
    assert rec.v[0] == pytest.approx(0.75)


def test_grid_mismatch_rejected():
    a = MtfSamples(h=(0.5, 0.4), v=(0.5, 0.4), frequencies=(0.1, 0.2))
    b = MtfSamples(h=(0.5, 0.4), v=(0.5, 0.4), frequencies=(0.1, 0.25))
    with pytest.raises(ValueError, match="frequency grids"):
        divide_mtf(a, b)


def test_wide_motion_drops_high_frequencies():
    # an 11 px sweep pushes the mid band under the guard; the divided
    # curve must omit there instead of reporting a number
    k1 = linear_motion_kernel(11)
    k2 = linear_motion_kernel(7)
    combined = kernel_mtf(compose(k1, k2))
    rec = divide_mtf(combined, kernel_mtf(k2))
    assert 0 not in rec.omitted_h
    assert len(rec.omitted_h) >= 4
    assert rec.omitted_v == ()


def test_serialization_round_trip():
    k1 = linear_motion_kernel(11)
    k2 = linear_motion_kernel(7)
    combined = kernel_mtf(compose(k1, k2))
    rec = divide_mtf(combined, kernel_mtf(k2))
    back = RecoveredMtf.from_dict(rec.to_dict())
    assert back.omitted_h == rec.omitted_h
    assert back.clamp_count == rec.clamp_count
    for a, b in zip(back.h, rec.h):
        assert (math.isnan(a) and math.isnan(b)) or a == b


def test_min_envelope_elementwise():
    a = MtfSamples(h=(0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2),
                   v=(0.5,) * 8)
    b = MtfSamples(h=(0.85, 0.82, 0.6, 0.65, 0.45, 0.45, 0.25, 0.25),
                   v=(0.6,) * 8)
    env = min_envelope_over_time([a, b])
    assert env.h == (0.85, 0.8, 0.6, 0.6, 0.45, 0.4, 0.25, 0.2)
    assert env.v == (0.5,) * 8


def test_min_envelope_single_and_empty():
    a = MtfSamples(h=(0.9,) * 8, v=(0.8,) * 8)
    assert min_envelope_over_time([a]) == a
    with pytest.raises(ValueError):
        min_envelope_over_time([])
