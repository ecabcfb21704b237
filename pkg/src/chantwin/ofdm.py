"""MISO-OFDM physical layer: mapping, IFFT/CP, multipath channel, FFT, ZF, BER.

Conventions
-----------
* OFDM (de)modulation uses the unitary DFT (``norm="ortho"``).
* The CIR-to-CFR transform is the plain, non-unitary DFT, so ``h = [1]``
  gives ``H_k = 1``. With these two choices the post-FFT relation for an
  ISI-free channel is exactly ``Y_k = H_k X_k``.
* Arrays carry antennas on the second-to-last axis: a frame batch is
  ``(frames, n_tx, n_samples)``; a CFR is ``(n_subcarriers, n_tx)``.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError

ERASURE_FLOOR = 1e-12


@dataclass(frozen=True)
class OfdmConfig:
    subcarriers: int = 128
    cp_length: int = 16
    sample_rate: float = 30.72e6
    modulation: str = "qpsk"

    def __post_init__(self):
        n = self.subcarriers
        if n < 1 or n & (n - 1):
            raise ValidationError("subcarrier count must be a power of two")
        if not 0 <= self.cp_length < n:
            raise ValidationError("cp_length must satisfy 0 <= cp < subcarriers")
        bits_per_symbol(self.modulation)

    @property
    def frame_length(self):
        return self.subcarriers + self.cp_length


@dataclass
class Cir:
    """Per-antenna tap-delay line sampled at ``sample_rate``.

    ``taps`` has shape ``(n_tx, n_taps)``; shorter per-antenna responses are
    zero-padded to the common length.
    """

    taps: np.ndarray
    sample_rate: float = 30.72e6

    def __post_init__(self):
        taps = np.atleast_2d(np.asarray(self.taps, dtype=np.complex128))
        if taps.shape[1] < 1:
            raise ValidationError("a CIR needs at least one tap")
        if not np.all(np.isfinite(taps)):
            raise ValidationError("CIR taps must be finite")
        self.taps = taps

    @property
    def n_tx(self):
        return self.taps.shape[0]

    @property
    def length(self):
        return self.taps.shape[1]


@dataclass(frozen=True)
class NoiseConfig:
    """AWGN level; the SNR is ``1 / noise_variance`` (linear)."""

    snr: float

    def __post_init__(self):
        if not self.snr > 0:
            raise ValidationError("snr must be positive")

    @property
    def noise_variance(self):
        return 1.0 / self.snr if np.isfinite(self.snr) else 0.0

    @classmethod
    def from_db(cls, snr_db):
        return cls(10.0 ** (snr_db / 10.0))


# --------------------------------------------------------------------------
# constellations


def bits_per_symbol(modulation):
    mod = modulation.lower()
    if mod == "bpsk":
        return 1
    if mod == "qpsk":
        return 2
    if mod.endswith("qam"):
        m = int(mod[:-3])
        k = int(round(np.log2(m))) if m > 0 else 0
        if m < 4 or 2 ** k != m or k % 2:
            raise ValidationError(f"{modulation}: M must be a square power of two")
        return k
    raise ValidationError(f"unknown modulation {modulation!r}")


def _gray_to_binary(g):
    b = g.copy()
    shift = g >> 1
    while np.any(shift):
        b ^= shift
        shift >>= 1
    return b


def _pam_levels(bits, k):
    """Gray-labelled PAM amplitude for ``k`` bits per axis (MSB first).

    Label 0...0 maps to the largest positive level.
    """
    weights = 1 << np.arange(k - 1, -1, -1)
    g = bits @ weights
    return (2 ** k - 1) - 2 * _gray_to_binary(g).astype(np.float64)


def _pam_bits(values, k):
    n_levels = 2 ** k
    idx = np.clip(np.rint(((n_levels - 1) - values) / 2.0), 0, n_levels - 1).astype(np.int64)
    g = idx ^ (idx >> 1)
    shifts = np.arange(k - 1, -1, -1)
    return ((g[:, None] >> shifts[None, :]) & 1).astype(np.uint8)


def _qam_scale(bps):
    m = 2 ** bps
    return np.sqrt(2.0 * (m - 1) / 3.0)


def map_bits(bits, modulation="qpsk"):
    """Gray-map a flat bit sequence to unit-average-energy symbols."""
    bits = np.asarray(bits, dtype=np.int64).reshape(-1)
    bps = bits_per_symbol(modulation)
    if bits.size % bps:
        raise DimensionError(f"{bits.size} bits is not a multiple of {bps} bits per symbol")
    groups = bits.reshape(-1, bps)
    if bps == 1:
        return (1.0 - 2.0 * groups[:, 0]).astype(np.complex128)
    k = bps // 2
    i = _pam_levels(groups[:, :k], k)
    q = _pam_levels(groups[:, k:], k)
    return (i + 1j * q) / _qam_scale(bps)


def demap_symbols(symbols, modulation="qpsk"):
    """Minimum-distance hard decisions back to a flat ``uint8`` bit array."""
    symbols = np.asarray(symbols, dtype=np.complex128).reshape(-1)
    bps = bits_per_symbol(modulation)
    if bps == 1:
        return (symbols.real < 0).astype(np.uint8)
    k = bps // 2
    scaled = symbols * _qam_scale(bps)
    out = np.empty((symbols.size, bps), dtype=np.uint8)
    out[:, :k] = _pam_bits(scaled.real, k)
    out[:, k:] = _pam_bits(scaled.imag, k)
    return out.reshape(-1)


def constellation(modulation="qpsk"):
    """All points, indexed by their integer label (MSB-first bits)."""
    bps = bits_per_symbol(modulation)
    labels = np.arange(2 ** bps)
    bits = (labels[:, None] >> np.arange(bps - 1, -1, -1)[None, :]) & 1
    return map_bits(bits.reshape(-1), modulation)


# --------------------------------------------------------------------------
# OFDM chain


def ofdm_modulate(grid, cfg: OfdmConfig):
    """Unitary IFFT of each antenna's subcarrier grid, then prepend the CP.

    ``grid`` has the subcarriers on its last axis.
    """
    grid = np.asarray(grid, dtype=np.complex128)
    if grid.shape[-1] != cfg.subcarriers:
        raise DimensionError(f"grid has {grid.shape[-1]} subcarriers, expected {cfg.subcarriers}")
    x = np.fft.ifft(grid, axis=-1, norm="ortho")
    if cfg.cp_length:
        x = np.concatenate([x[..., -cfg.cp_length:], x], axis=-1)
    return x


def ofdm_demodulate(y, cfg: OfdmConfig):
    """Drop the CP and apply the unitary FFT."""
    y = np.asarray(y, dtype=np.complex128)
    if y.shape[-1] != cfg.frame_length:
        raise DimensionError(f"frame has {y.shape[-1]} samples, expected {cfg.frame_length}")
    return np.fft.fft(y[..., cfg.cp_length:], axis=-1, norm="ortho")


def _as_taps(cir):
    return cir.taps if isinstance(cir, Cir) else np.atleast_2d(np.asarray(cir, dtype=np.complex128))


def apply_channel(frames, cir, noise=None, rng=None, cp_length=None):
    """Sum over antennas of (frame convolved with CIR) plus complex AWGN.

    The linear convolution is truncated to the frame length (the tail that
    would spill into the next frame is dropped).

    Parameters
    ----------
    frames : np.ndarray
        ``(..., n_tx, n_samples)`` transmit frames.
    cir : Cir or array_like
        ``(n_tx, n_taps)`` taps.
    noise : NoiseConfig, optional
        ``None`` means noiseless.
    rng : int or np.random.Generator, optional
        Noise source; an int is used as a seed.
    cp_length : int, optional
        When given, warn if the CIR is longer than ``cp_length + 1`` taps.
    """
    frames = np.asarray(frames, dtype=np.complex128)
    taps = _as_taps(cir)
    if frames.ndim < 2 or frames.shape[-2] != taps.shape[0]:
        raise DimensionError(f"frames carry {frames.shape[-2] if frames.ndim >= 2 else 1} antennas, "
                             f"CIR has {taps.shape[0]}")
    if cp_length is not None and taps.shape[1] > cp_length + 1:
        warnings.warn(f"CIR length {taps.shape[1]} exceeds CP + 1 = {cp_length + 1}; expect ISI", stacklevel=2)
    n = frames.shape[-1]
    y = np.zeros(frames.shape[:-2] + (n,), dtype=np.complex128)
    for d in range(min(taps.shape[1], n)):
        h = taps[:, d]
        if not np.any(h):
            continue
        y[..., d:] += np.einsum("t,...tn->...n", h, frames[..., :, : n - d])
    if noise is not None and noise.noise_variance > 0:
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        sigma = np.sqrt(noise.noise_variance / 2.0)
        y += sigma * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
    return y


def zf_equalize(received, h_eff):
    """Per-subcarrier division by the effective channel.

    Returns
    -------
    s_hat : np.ndarray
        Equalised symbols; zero where the subcarrier is erased.
    erased : np.ndarray of bool
        True where ``|h_eff| < 1e-12``.
    """
    received = np.asarray(received, dtype=np.complex128)
    h_eff = np.asarray(h_eff, dtype=np.complex128)
    erased = np.abs(h_eff) < ERASURE_FLOOR
    safe = np.where(erased, 1.0, h_eff)
    s_hat = np.where(erased, 0.0, received / safe)
    return s_hat, np.broadcast_to(erased, s_hat.shape)


def ber(bits, bits_hat):
    """Fraction of positions where the two bit sequences differ."""
    a = np.asarray(bits).reshape(-1)
    b = np.asarray(bits_hat).reshape(-1)
    if a.size != b.size:
        raise DimensionError(f"bit sequences differ in length: {a.size} vs {b.size}")
    if a.size == 0:
        return 0.0
    return float(np.count_nonzero(a != b) / a.size)


def cir_to_cfr(cir, n_subcarriers):
    """Non-unitary DFT of the zero-padded taps, as an ``(n_subcarriers, n_tx)`` grid."""
    taps = _as_taps(cir)
    if taps.shape[1] > n_subcarriers:
        raise DimensionError(f"CIR length {taps.shape[1]} exceeds {n_subcarriers} subcarriers")
    return np.fft.fft(taps, n=n_subcarriers, axis=-1).T


def simulate_link(true_cir, precoder, cfg: OfdmConfig, noise=None, n_frames=1, rng=None):
    """Run ``n_frames`` random frames through the full precoded chain.

    The receiver equalises with the exact effective channel
    ``sum_t B_k^t H_k^t`` built from the *true* CIR.

    Parameters
    ----------
    true_cir : Cir or array_like
        Channel the frames actually traverse.
    precoder : np.ndarray
        ``(n_subcarriers, n_tx)`` weights ``B_k^t``.

    Returns
    -------
    errors : int
        Bit errors over all frames.
    n_bits : int
        Bits sent.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    taps = _as_taps(true_cir)
    precoder = np.asarray(precoder, dtype=np.complex128)
    if precoder.shape != (cfg.subcarriers, taps.shape[0]):
        raise DimensionError(f"precoder shape {precoder.shape} does not match "
                             f"({cfg.subcarriers}, {taps.shape[0]})")
    bps = bits_per_symbol(cfg.modulation)
    n_bits = n_frames * cfg.subcarriers * bps
    bits = rng.integers(0, 2, size=n_bits, dtype=np.uint8)
    s = map_bits(bits, cfg.modulation).reshape(n_frames, cfg.subcarriers)
    x = s[:, None, :] * precoder.T[None, :, :]
    frames = ofdm_modulate(x, cfg)
    y = apply_channel(frames, taps, noise, rng=rng, cp_length=cfg.cp_length)
    received = ofdm_demodulate(y, cfg)
    h_eff = np.sum(precoder * cir_to_cfr(taps, cfg.subcarriers), axis=1)
    s_hat, _ = zf_equalize(received, h_eff[None, :])
    bits_hat = demap_symbols(s_hat, cfg.modulation)
    return int(np.count_nonzero(bits != bits_hat)), n_bits
