"""Discretize a :class:`PathList` into per-antenna tap-delay lines."""

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..ofdm import Cir
from .physics import C0


@dataclass(frozen=True)
class ArrayConfig:
    """Uniform linear array in the horizontal plane.

    Element ``t`` sits at ``t * spacing * wavelength`` along the axis at
    ``azimuth`` degrees; element 0 is the phase reference.
    """

    n_tx: int = 4
    spacing: float = 0.5  # wavelengths
    azimuth: float = 0.0  # degrees

    def __post_init__(self):
        if self.n_tx < 1:
            raise ValidationError("array needs at least one element")


@dataclass
class CirResult:
    cir: Cir
    dropped_fraction: float  # share of path energy beyond the last tap


def element_phases(paths, array: ArrayConfig):
    """``(paths, n_tx)`` far-field phase factors ``exp(+j 2 pi t spacing cos(angle to axis))``."""
    axis = np.array([np.cos(np.radians(array.azimuth)), np.sin(np.radians(array.azimuth)), 0.0])
    proj = paths.departure() @ axis
    t = np.arange(array.n_tx)
    return np.exp(2j * np.pi * array.spacing * proj[:, None] * t[None, :])


def paths_to_cir(paths, array: ArrayConfig, sample_rate, max_taps, ref_delay=None):
    """Sum each path into tap ``round((delay - ref) * sample_rate)`` on every antenna.

    Parameters
    ----------
    paths : PathList
    array : ArrayConfig
    sample_rate : float
        Hz.
    max_taps : int
        Taps kept per antenna; later paths are dropped and counted.
    ref_delay : float, optional
        Delay mapped to tap 0. Defaults to the earliest path.

    Returns
    -------
    CirResult
    """
    if max_taps < 1:
        raise ValidationError("max_taps must be at least 1")
    taps = np.zeros((array.n_tx, max_taps), dtype=np.complex128)
    if len(paths) == 0:
        return CirResult(Cir(taps, sample_rate), 0.0)
    ref = paths.delay.min() if ref_delay is None else ref_delay
    idx = np.maximum(np.rint((paths.delay - ref) * sample_rate).astype(np.int64), 0)
    keep = idx < max_taps
    energy = np.abs(paths.amplitude) ** 2
    contrib = paths.amplitude[:, None] * element_phases(paths, array)
    for t in range(array.n_tx):
        taps[t] = np.bincount(idx[keep], weights=contrib[keep, t].real, minlength=max_taps) + \
            1j * np.bincount(idx[keep], weights=contrib[keep, t].imag, minlength=max_taps)
    total = energy.sum()
    dropped = float(energy[~keep].sum() / total) if total > 0 else 0.0
    return CirResult(Cir(taps, sample_rate), dropped)


def los_delay(tx, rx):
    return float(np.linalg.norm(np.asarray(rx, dtype=float) - np.asarray(tx, dtype=float)) / C0)


@dataclass(frozen=True)
class ReceiverChain:
    """Band-limited capture of a CIR, as a measuring receiver sees it.

    Each path becomes an ideal low-pass pulse of two-sided width
    ``bandwidth`` centered on its exact delay, sampled at the tap spacing.
    The capture window opens ``timing_advance`` samples before the
    reference delay so pulse precursors are kept.
    """

    bandwidth: float = 10e6
    timing_advance: int = 2

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValidationError("bandwidth must be positive")
        if self.timing_advance < 0:
            raise ValidationError("timing_advance must be non-negative")


def band_limited_cir(paths, array: ArrayConfig, sample_rate, max_taps, chain: ReceiverChain, ref_delay=None):
    """Like :func:`paths_to_cir` but with each path spread by the receiver pulse.

    With ``bandwidth == sample_rate`` and on-grid delays this reduces to
    ``paths_to_cir`` shifted by ``timing_advance`` taps. The dropped
    fraction counts paths whose pulse center falls beyond the last tap.
    """
    if max_taps < 1:
        raise ValidationError("max_taps must be at least 1")
    taps = np.zeros((array.n_tx, max_taps), dtype=np.complex128)
    if len(paths) == 0:
        return CirResult(Cir(taps, sample_rate), 0.0)
    ref = paths.delay.min() if ref_delay is None else ref_delay
    center = (paths.delay - ref) * sample_rate + chain.timing_advance
    ratio = chain.bandwidth / sample_rate
    pulse = ratio * np.sinc(ratio * (np.arange(max_taps)[None, :] - center[:, None]))
    contrib = paths.amplitude[:, None] * element_phases(paths, array)
    taps[:] = contrib.T @ pulse
    energy = np.abs(paths.amplitude) ** 2
    total = energy.sum()
    late = np.rint(center) >= max_taps
    dropped = float(energy[late].sum() / total) if total > 0 else 0.0
    return CirResult(Cir(taps, sample_rate), dropped)
