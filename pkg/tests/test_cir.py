import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chantwin.errors import ValidationError
from chantwin.ray.cir import (ArrayConfig, ReceiverChain, band_limited_cir, element_phases, los_delay,
                             paths_to_cir)
from chantwin.ray.tracer import PathList

FS = 30.72e6


def make_paths(delays, amps, azimuth=None):
    k = len(delays)
    az = np.full(k, np.pi / 2) if azimuth is None else np.asarray(azimuth, dtype=float)
    return PathList(np.asarray(delays, dtype=float), np.asarray(amps, dtype=complex), az, np.zeros(k),
                    np.zeros((k, 1), np.int8), np.full((k, 1), -1, np.int32), np.full(k, -1, np.int32))


def test_single_broadside_path():
    g = 0.3 - 0.1j
    res = paths_to_cir(make_paths([1e-6], [g]), ArrayConfig(), FS, 16)
    np.testing.assert_allclose(res.cir.taps[:, 0], g, atol=1e-15)
    assert np.all(res.cir.taps[:, 1:] == 0) and res.dropped_fraction == 0.0


def test_adjacent_taps():
    res = paths_to_cir(make_paths([0.0, 1 / FS], [1.0, 0.5]), ArrayConfig(n_tx=1), FS, 16)
    np.testing.assert_allclose(res.cir.taps[0, :3], [1.0, 0.5, 0.0])


def test_reference_delay_and_rounding():
    res = paths_to_cir(make_paths([2e-6 + 2.4 / FS, 2e-6 + 2.6 / FS], [1, 1j]), ArrayConfig(n_tx=1), FS, 16,
                       ref_delay=2e-6)
    np.testing.assert_allclose(res.cir.taps[0, 2:4], [1, 1j])


def test_endfire_phase_progression():
    res = paths_to_cir(make_paths([0.0], [1.0], azimuth=[0.0]), ArrayConfig(n_tx=4), FS, 4)
    np.testing.assert_allclose(res.cir.taps[:, 0], [1, -1, 1, -1], atol=1e-12)


def test_array_azimuth_rotates_axis():
    p = make_paths([0.0], [1.0], azimuth=[np.pi / 2])
    np.testing.assert_allclose(element_phases(p, ArrayConfig(azimuth=90.0))[0], [1, -1, 1, -1], atol=1e-12)


@given(st.integers(1, 40), st.integers(1, 24), st.integers(0, 2**31 - 1))
@settings(max_examples=60, deadline=None)
def test_energy_bookkeeping(n_paths, max_taps, seed):
    rng = np.random.default_rng(seed)
    taps = rng.permutation(64)[:n_paths]  # one path per tap
    amps = rng.normal(size=n_paths) + 1j * rng.normal(size=n_paths)
    az = rng.uniform(-np.pi, np.pi, n_paths)
    res = paths_to_cir(make_paths(taps / FS, amps, az), ArrayConfig(), FS, max_taps, ref_delay=0.0)
    total = np.sum(np.abs(amps) ** 2)
    for t in range(4):
        kept = np.sum(np.abs(res.cir.taps[t]) ** 2)
        assert kept == pytest.approx(total * (1 - res.dropped_fraction), rel=1e-9, abs=1e-12)
    assert res.dropped_fraction == pytest.approx(np.sum(np.abs(amps[taps >= max_taps]) ** 2) / total)


def test_empty_and_validation():
    res = paths_to_cir(PathList.empty(), ArrayConfig(), FS, 8)
    assert res.cir.taps.shape == (4, 8) and not res.cir.taps.any()
    with pytest.raises(ValidationError):
        paths_to_cir(PathList.empty(), ArrayConfig(), FS, 0)
    with pytest.raises(ValidationError):
        ArrayConfig(n_tx=0)


def test_los_delay():
    assert los_delay((0, 0, 0), (3, 4, 0)) == pytest.approx(5 / 299792458.0)


def test_receiver_chain_at_sample_rate_is_shifted_binning():
    p = make_paths(np.array([0, 3, 7]) / FS, [1.0, 0.5j, -0.2], [0.3, 1.0, 2.0])
    plain = paths_to_cir(p, ArrayConfig(), FS, 16, ref_delay=0.0).cir.taps
    shaped = band_limited_cir(p, ArrayConfig(), FS, 16, ReceiverChain(FS, 2), ref_delay=0.0).cir.taps
    np.testing.assert_allclose(shaped[:, 2:], plain[:, :14], atol=1e-12)
    np.testing.assert_allclose(shaped[:, :2], 0, atol=1e-12)


def test_receiver_chain_spreads_fractional_delay():
    p = make_paths([5.5 / FS], [1.0])
    res = band_limited_cir(p, ArrayConfig(n_tx=1), FS, 64, ReceiverChain(FS, 0), ref_delay=0.0)
    taps = res.cir.taps[0]
    assert abs(taps[5]) == pytest.approx(abs(taps[6])) == pytest.approx(2 / np.pi)
    # ideal low-pass at the sample rate keeps the energy (up to the truncated tails)
    assert np.sum(np.abs(taps) ** 2) == pytest.approx(1.0, abs=0.02)


def test_receiver_chain_narrow_band_scales_energy():
    p = make_paths([20.0 / FS], [1.0])
    res = band_limited_cir(p, ArrayConfig(n_tx=1), FS, 128, ReceiverChain(FS / 4, 0), ref_delay=0.0)
    assert np.sum(np.abs(res.cir.taps) ** 2) == pytest.approx(0.25, rel=0.02)


def test_receiver_chain_validation():
    with pytest.raises(ValidationError):
        ReceiverChain(bandwidth=0.0)
    with pytest.raises(ValidationError):
        ReceiverChain(timing_advance=-1)
