import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diffuse_memory.protocol import (Verdict, check_optimal_bandwidth, classify_regime,
                                     storable_window_nonempty, write_in_map)


def test_desk_scale_window():
    r = classify_regime(4.0, 0.04, 400.0, margin=2.0)
    lo, hi = r.window
    assert lo == pytest.approx(1.6, rel=1e-14)
    assert hi == pytest.approx(8.0, rel=1e-14)
    assert r.verdict is Verdict.STORABLE
    assert r.dispersive_ok and r.loss_ok


def test_boundary_depth_is_inconsistent():
    k = 3.0
    r = classify_regime(1.0, 0.1, k**4, margin=k)
    assert r.verdict is Verdict.INCONSISTENT


def test_too_broad():
    r = classify_regime(100 * 0.04 * 400, 0.04, 400.0, margin=2.0)
    assert r.verdict is Verdict.TOO_BROAD_DISPERSIONLESS
    assert not r.dispersive_ok


def test_too_narrow():
    r = classify_regime(1.0, 0.04, 400.0, margin=2.0)
    assert r.verdict is Verdict.TOO_NARROW_LOSSY
    assert r.dispersive_ok and not r.loss_ok


@pytest.mark.parametrize("args", [(0, 1, 1), (1, -1, 1), (1, 1, 0)])
def test_nonpositive_inputs_rejected(args):
    with pytest.raises(ValueError):
        classify_regime(*args)


def test_margin_must_exceed_one():
    with pytest.raises(ValueError):
        classify_regime(1.0, 1.0, 100.0, margin=1.0)


@pytest.mark.parametrize("width, flag", [(0.5, True), (1.0, True), (3.0, False)])
def test_optimal_bandwidth(width, flag):
    assert check_optimal_bandwidth(width) is flag


def test_optimal_bandwidth_rejects_zero():
    with pytest.raises(ValueError):
        check_optimal_bandwidth(0.0)


@given(width=st.floats(1e-3, 1e3), g=st.floats(1e-3, 10), b1=st.floats(1.0, 1e6), b2=st.floats(1.0, 1e6),
       margin=st.floats(1.5, 20))
def test_more_depth_keeps_dispersion(width, g, b1, b2, margin):
    lo, hi = sorted((b1, b2))
    a = classify_regime(width, g, lo, margin)
    b = classify_regime(width, g, hi, margin)
    if a.verdict is Verdict.STORABLE:
        assert b.dispersive_ok
    if a.dispersive_ok:
        assert b.dispersive_ok


@given(b=st.floats(1e-2, 1e6), margin=st.floats(1.1, 20))
def test_window_nonempty_iff_depth_exceeds_margin(b, margin):
    r = classify_regime(1.0, 0.1, b, margin)
    lo, hi = r.window
    assert storable_window_nonempty(b, margin) == (b > margin**4)
    if b > margin**4 * (1 + 1e-9):
        assert lo < hi
        mid = math.sqrt(lo * hi)
        assert classify_regime(mid, 0.1, b, margin).verdict is Verdict.STORABLE
    elif b < margin**4 * (1 - 1e-9):
        assert lo > hi
        assert r.verdict is Verdict.INCONSISTENT


@given(width=st.floats(1e-3, 1e3), g=st.floats(1e-3, 10), b=st.floats(1e-2, 1e6))
def test_storable_needs_deep_cloud(width, g, b):
    if classify_regime(width, g, b).verdict is Verdict.STORABLE:
        assert b >= 1


def test_report_serializes():
    d = classify_regime(4.0, 0.04, 400.0, margin=2.0).to_dict()
    assert d["verdict"] == "STORABLE"
    assert d["window"] == pytest.approx([1.6, 8.0])


def test_write_in_examples(rng):
    assert write_in_map(7, 1.0, rng) == 7
    assert write_in_map(123, 0.0, rng) == 0
    draws = write_in_map(np.full(10_000, 10_000), 0.8, rng)
    assert abs(draws.mean() - 8000) < 3 * math.sqrt(10_000 * 0.16)


@given(m=st.lists(st.integers(0, 10**6), min_size=1, max_size=50))
def test_ideal_write_in_is_identity(m):
    out = write_in_map(np.array(m), 1.0, np.random.default_rng(0))
    np.testing.assert_array_equal(out, m)


def test_write_in_bounds(rng):
    m = rng.integers(0, 50, size=1000)
    out = write_in_map(m, 0.4, rng)
    assert np.all((out >= 0) & (out <= m))
    with pytest.raises(ValueError):
        write_in_map(3, 1.2, rng)
    with pytest.raises(ValueError):
        write_in_map(-1, 0.5, rng)
