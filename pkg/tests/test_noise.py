import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdslab.noise import NoisePathError, PathEnsemble, WienerPath2S, ensemble
from rdslab.seeding import replica_seeds


def test_bridge_consistency_across_resolutions():
    p = WienerPath2S(12345, dim=2)
    fine = p.increments(0.0, 1.0, 2.0**-10).sum(axis=0)
    coarse = p.increments(0.0, 1.0, 1.0)[0]
    assert np.max(np.abs(fine - coarse)) < 1e-12


def test_deterministic_queries():
    p = WienerPath2S(9)
    assert np.array_equal(p.increments(0.5, 3.0, 2.0**-4), p.increments(0.5, 3.0, 2.0**-4))


def test_negative_time_is_defined():
    p = WienerPath2S(9)
    inc = p.increments(-3.0, -2.0, 2.0**-3)
    assert inc.shape == (8, 1) and np.all(np.isfinite(inc))
    assert np.allclose(p.value(-2.0) - p.value(-3.0), inc.sum(axis=0), atol=1e-12)


def test_value_at_zero_is_zero():
    assert np.array_equal(WienerPath2S(1, 3).value(0.0), np.zeros(3))


def test_shift_identity_and_group_property():
    p = WienerPath2S(4)
    assert p.shift(0.0) == p
    assert p.shift(1.0).shift(-1.0) == p


def test_shift_is_definitional():
    p = WienerPath2S(4)
    assert np.array_equal(p.shift(2.0).increments(0.0, 1.0, 2.0**-5), p.increments(2.0, 3.0, 2.0**-5))


def test_shift_off_grid_rejected():
    with pytest.raises(NoisePathError):
        WienerPath2S(4).shift(0.1)


def test_time_reversal_lists_mirrored_increments_backwards():
    p = WienerPath2S(21)
    r = p.time_reversed()
    assert np.array_equal(r.increments(0.0, 2.0, 0.25), p.increments(-2.0, 0.0, 0.25)[::-1])
    assert r.time_reversed() == p


def test_sub_interval_matches_whole_path():
    p = WienerPath2S(8)
    whole = p.increments(0.0, 4.0, 2.0**-6)
    part = p.increments(1.5, 2.5, 2.0**-6)
    assert np.array_equal(part, whole[96:160])


@settings(max_examples=40, deadline=None)
@given(st.integers(-8, 8), st.integers(1, 8), st.integers(1, 6), st.integers(0, 2**63), st.data())
def test_additivity_over_split_points(a, length, level, seed, data):
    p = WienerPath2S(seed)
    step = 2.0**-level
    b = a + length
    mid = a + step * data.draw(st.integers(1, int(length / step) - 1))
    total = p.increments(a, b, step).sum(axis=0)
    split = p.increments(a, mid, step).sum(axis=0) + p.increments(mid, b, step).sum(axis=0)
    assert np.allclose(total, split, atol=1e-12)


def test_unit_increment_moments():
    ens = ensemble(replica_seeds(0, 10_000))
    x = ens.increments(0.0, 1.0, 1.0)[0, :, 0]
    assert abs(x.var() - 1.0) < 0.05
    assert abs(x.mean()) < 3 / np.sqrt(len(x))


def test_pullback_windows_reuse_increments():
    # windows [-t, 0] for growing t share their overlap exactly
    ens = ensemble([3, 4])
    short = ens.shift(-2.0).increments(0.0, 2.0, 2.0**-4)
    long = ens.shift(-5.0).increments(0.0, 5.0, 2.0**-4)
    assert np.array_equal(short, long[-short.shape[0]:])


def test_ensemble_rejects_empty():
    with pytest.raises(NoisePathError):
        PathEnsemble(())
