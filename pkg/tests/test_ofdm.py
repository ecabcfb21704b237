import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chantwin import ofdm
from chantwin.errors import DimensionError, ValidationError
from chantwin.ofdm import Cir, NoiseConfig, OfdmConfig


def qfunc(x):
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def test_bpsk_mapping():
    np.testing.assert_array_equal(ofdm.map_bits([0, 1], "bpsk"), [1, -1])


def test_qpsk_gray_corners():
    s = ofdm.map_bits([0, 0, 1, 1], "qpsk")
    np.testing.assert_allclose(s, [(1 + 1j) / np.sqrt(2), (-1 - 1j) / np.sqrt(2)], atol=1e-15)


@pytest.mark.parametrize("mod,m", [("qpsk", 4), ("16qam", 16), ("64qam", 64)])
def test_constellation_unit_energy_and_gray(mod, m):
    pts = ofdm.constellation(mod)
    assert len(pts) == m
    assert abs(np.mean(np.abs(pts) ** 2) - 1.0) < 1e-12
    assert len(np.unique(np.round(pts, 12))) == m
    # Gray: nearest neighbours differ in exactly one bit
    bps = int(np.log2(m))
    dmin = np.min([abs(a - b) for a, b in itertools.combinations(pts, 2)])
    for a, b in itertools.combinations(range(m), 2):
        if abs(abs(pts[a] - pts[b]) - dmin) < 1e-9:
            assert bin(a ^ b).count("1") == 1, (a, b)
    assert bps == ofdm.bits_per_symbol(mod)


def test_map_rejects_partial_symbol():
    with pytest.raises(DimensionError):
        ofdm.map_bits([0, 1, 1], "qpsk")


def test_bad_modulation_rejected():
    with pytest.raises(ValidationError):
        ofdm.bits_per_symbol("8qam")


def test_bpsk_pairs_round_trip():
    for pair in itertools.product([0, 1], repeat=2):
        np.testing.assert_array_equal(ofdm.demap_symbols(ofdm.map_bits(pair, "bpsk"), "bpsk"), pair)


def test_qpsk_nearest_point():
    np.testing.assert_array_equal(ofdm.demap_symbols([(0.9 + 0.8j) / np.sqrt(2)], "qpsk"), [0, 0])


def test_16qam_exhaustive_round_trip():
    labels = np.arange(16)
    bits = ((labels[:, None] >> np.arange(3, -1, -1)) & 1).ravel()
    np.testing.assert_array_equal(ofdm.demap_symbols(ofdm.map_bits(bits, "16qam"), "16qam"), bits)


def test_config_invariants():
    with pytest.raises(ValidationError):
        OfdmConfig(subcarriers=100)
    with pytest.raises(ValidationError):
        OfdmConfig(subcarriers=16, cp_length=16)


def test_dc_subcarrier_gives_constant_frame():
    cfg = OfdmConfig(subcarriers=16, cp_length=4)
    grid = np.zeros(16, dtype=complex)
    grid[0] = np.sqrt(16)
    np.testing.assert_allclose(ofdm.ofdm_modulate(grid, cfg), np.ones(20), atol=1e-12)


def test_parseval_and_round_trip():
    cfg = OfdmConfig(subcarriers=64, cp_length=8)
    rng = np.random.default_rng(0)
    s = rng.standard_normal(64) + 1j * rng.standard_normal(64)
    x = ofdm.ofdm_modulate(s, cfg)
    assert abs(np.sum(np.abs(x[8:]) ** 2) - np.sum(np.abs(s) ** 2)) < 1e-10
    np.testing.assert_allclose(x[:8], x[-8:])
    y = ofdm.apply_channel(x[None, :], [[1.0]])
    np.testing.assert_allclose(ofdm.ofdm_demodulate(y, cfg), s, atol=1e-10)


def test_zero_in_zero_out():
    cfg = OfdmConfig(subcarriers=8, cp_length=2)
    assert not np.any(ofdm.ofdm_demodulate(np.zeros(10), cfg))


def test_demodulate_wrong_length():
    with pytest.raises(DimensionError):
        ofdm.ofdm_demodulate(np.zeros(9), OfdmConfig(subcarriers=8, cp_length=2))


def test_identity_channel_is_exact():
    x = np.random.default_rng(1).standard_normal((1, 10)) + 0j
    np.testing.assert_array_equal(ofdm.apply_channel(x, [[1.0]], NoiseConfig(np.inf)), x[0])


def test_one_sample_delay_is_phase_ramp():
    cfg = OfdmConfig(subcarriers=32, cp_length=4)
    rng = np.random.default_rng(2)
    s = rng.standard_normal(32) + 1j * rng.standard_normal(32)
    y = ofdm.apply_channel(ofdm.ofdm_modulate(s, cfg)[None, :], [[0.0, 1.0]])
    k = np.arange(32)
    np.testing.assert_allclose(ofdm.ofdm_demodulate(y, cfg), s * np.exp(-2j * np.pi * k / 32), atol=1e-10)


def test_superposition_of_antennas():
    x = np.random.default_rng(3).standard_normal(12) + 0j
    y = ofdm.apply_channel(np.stack([x, x]), [[1.0], [1.0]])
    np.testing.assert_allclose(y, 2 * x)


def test_antenna_mismatch():
    with pytest.raises(DimensionError):
        ofdm.apply_channel(np.zeros((3, 10)), np.ones((2, 1)))


def test_long_cir_warns():
    with pytest.warns(UserWarning, match="ISI"):
        ofdm.apply_channel(np.zeros((1, 10)), np.ones((1, 5)), cp_length=2)


def test_noise_is_function_of_seed():
    x = np.zeros((1, 64), dtype=complex)
    a = ofdm.apply_channel(x, [[1.0]], NoiseConfig(2.0), rng=5)
    b = ofdm.apply_channel(x, [[1.0]], NoiseConfig(2.0), rng=5)
    c = ofdm.apply_channel(x, [[1.0]], NoiseConfig(2.0), rng=6)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


@given(st.integers(1, 17), st.integers(0, 2 ** 31 - 1))
@settings(max_examples=30, deadline=None)
def test_cp_makes_channel_circular(eta, seed):
    """For eta <= cp + 1 the whole time-domain chain equals Y_k = H_eff,k S_k."""
    cfg = OfdmConfig(subcarriers=64, cp_length=16)
    rng = np.random.default_rng(seed)
    taps = rng.standard_normal((3, eta)) + 1j * rng.standard_normal((3, eta))
    b = rng.standard_normal((64, 3)) + 1j * rng.standard_normal((64, 3))
    s = ofdm.map_bits(rng.integers(0, 2, 128), "qpsk")
    frames = ofdm.ofdm_modulate(s[None, :] * b.T, cfg)
    y = ofdm.ofdm_demodulate(ofdm.apply_channel(frames, taps), cfg)
    h_eff = np.sum(b * ofdm.cir_to_cfr(taps, 64), axis=1)
    np.testing.assert_allclose(y, h_eff * s, atol=1e-9)


def test_zf_noiseless_and_erasure():
    h = np.array([1 + 1j, 0.0, 2.0])
    s = np.array([1j, 1.0, -1.0])
    s_hat, erased = ofdm.zf_equalize(h * s, h)
    np.testing.assert_array_equal(erased, [False, True, False])
    np.testing.assert_allclose(s_hat[[0, 2]], s[[0, 2]], atol=1e-12)


def test_ber_examples():
    bits = np.array([0, 1, 1, 0])
    assert ofdm.ber(bits, bits) == 0.0
    assert ofdm.ber(bits, 1 - bits) == 1.0
    assert ofdm.ber(bits, np.array([1, 0, 1, 0])) == 0.5
    with pytest.raises(DimensionError):
        ofdm.ber(bits, bits[:3])


def test_cfr_examples():
    np.testing.assert_allclose(ofdm.cir_to_cfr([[1.0, 0, 0]], 8)[:, 0], np.ones(8))
    k = np.arange(8)
    np.testing.assert_allclose(ofdm.cir_to_cfr([[0.0, 1.0]], 8)[:, 0], np.exp(-2j * np.pi * k / 8), atol=1e-15)
    with pytest.raises(DimensionError):
        ofdm.cir_to_cfr(np.ones((1, 9)), 8)


def test_cfr_parseval():
    rng = np.random.default_rng(4)
    h = rng.standard_normal((2, 10)) + 1j * rng.standard_normal((2, 10))
    H = ofdm.cir_to_cfr(h, 32)
    assert abs(np.sum(np.abs(H) ** 2) - 32 * np.sum(np.abs(h) ** 2)) < 1e-9


def test_zero_noise_ber_is_zero_for_random_cirs():
    cfg = OfdmConfig()
    rng = np.random.default_rng(8)
    for _ in range(5):
        taps = rng.standard_normal((4, 17)) + 1j * rng.standard_normal((4, 17))
        b = np.conj(ofdm.cir_to_cfr(taps, cfg.subcarriers))
        err, n = ofdm.simulate_link(taps, b, cfg, None, n_frames=20, rng=rng)
        assert err == 0 and n == 20 * 256


@pytest.mark.parametrize("snr_db", [0, 4, 8, 12])
def test_qpsk_awgn_matches_q_function(snr_db):
    cfg = OfdmConfig()
    snr = 10 ** (snr_db / 10)
    frames = 800
    err, n = ofdm.simulate_link([[1.0]], np.ones((128, 1)), cfg, NoiseConfig(snr), frames, rng=100 + snr_db)
    p = qfunc(math.sqrt(snr))
    se = math.sqrt(p * (1 - p) / n)
    assert abs(err / n - p) < 3 * se


def test_ber_decreases_with_snr():
    cfg = OfdmConfig()
    taps = np.array([[1.0, 0.4j, 0.2]])
    rates = []
    for snr_db in (0, 5, 10):
        err, n = ofdm.simulate_link(taps, np.conj(ofdm.cir_to_cfr(taps, 128)), cfg,
                                    NoiseConfig.from_db(snr_db), 400, rng=snr_db)
        rates.append((err / n, n))
    for (p1, n1), (p2, n2) in zip(rates, rates[1:]):
        se = math.sqrt(p1 * (1 - p1) / n1 + p2 * (1 - p2) / n2)
        assert p2 <= p1 + 3 * se


def test_cir_validation():
    with pytest.raises(ValidationError):
        Cir(np.array([[np.nan]]))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert Cir([1.0, 2.0]).taps.shape == (1, 2)
