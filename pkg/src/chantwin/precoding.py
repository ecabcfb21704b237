"""Per-subcarrier linear precoders (MRT and MMSE) for single-user MISO.

Channel grids are ``(n_subcarriers, n_tx)`` complex arrays ``H_k^t``.

``normalization`` selects the power policy:

``"paper_literal"``
    The formulas as written, no power constraint.
``"unit_power"``
    Each subcarrier's weight vector rescaled to unit norm.

MMSE has two forms. ``"regularized"`` (default) divides the conjugate
channel by ``sum_t |H_k^t|^2 + 1/P_t``. ``"as_printed"`` multiplies by
that quantity instead, reproducing the formula without its inverse.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError

NORMALIZATIONS = ("paper_literal", "unit_power")
ZERO_FLOOR = 1e-300


@dataclass
class Precoder:
    weights: np.ndarray
    mode: str
    normalization: str
    zero_columns: np.ndarray  # bool per subcarrier: channel estimate was all-zero there


@dataclass(frozen=True)
class PowerConfig:
    transmit_power: float = 1.0

    def __post_init__(self):
        if not self.transmit_power > 0:
            raise ValidationError("transmit power must be positive")


def _check(cfr):
    cfr = np.atleast_2d(np.asarray(cfr, dtype=np.complex128))
    if not np.all(np.isfinite(cfr)):
        raise ValidationError("channel estimate must be finite")
    return cfr


def _normalize(w, normalization, zero):
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
    if normalization == "unit_power":
        norm = np.sqrt(np.sum(np.abs(w) ** 2, axis=1, keepdims=True))
        w = np.where(zero[:, None], 0.0, w / np.where(zero[:, None], 1.0, norm))
    return w


def mrt(cfr_hat, normalization="paper_literal"):
    """Maximum ratio transmission, ``B_k^t = conj(H_k^t)``."""
    h = _check(cfr_hat)
    energy = np.sum(np.abs(h) ** 2, axis=1)
    zero = energy <= ZERO_FLOOR
    w = _normalize(np.conj(h), normalization, zero)
    return Precoder(w, "mrt", normalization, zero)


def mmse(cfr_hat, power=PowerConfig(), normalization="paper_literal", form="regularized"):
    """MMSE precoder ``conj(H) / (sum_t |H|^2 + 1/P_t)`` per subcarrier."""
    if isinstance(power, (int, float)):
        power = PowerConfig(float(power))
    h = _check(cfr_hat)
    energy = np.sum(np.abs(h) ** 2, axis=1, keepdims=True)
    zero = energy[:, 0] <= ZERO_FLOOR
    reg = energy + 1.0 / power.transmit_power
    if form == "regularized":
        w = np.conj(h) / reg
    elif form == "as_printed":
        w = np.conj(h) * reg
    else:
        raise ValueError("form must be 'regularized' or 'as_printed'")
    w = _normalize(w, normalization, zero)
    return Precoder(w, "mmse" if form == "regularized" else "mmse_as_printed", normalization, zero)


def make_precoder(mode, cfr_hat, normalization="paper_literal", transmit_power=1.0):
    """Dispatch by name: ``"mrt"``, ``"mmse"`` or ``"mmse_as_printed"``."""
    if mode == "mrt":
        return mrt(cfr_hat, normalization)
    if mode == "mmse":
        return mmse(cfr_hat, PowerConfig(transmit_power), normalization)
    if mode == "mmse_as_printed":
        return mmse(cfr_hat, PowerConfig(transmit_power), normalization, form="as_printed")
    raise ValueError(f"unknown precoder {mode!r}")


def effective_channel(precoder, cfr_true):
    """Scalar channel seen by the UE: ``sum_t B_k^t H_k^t``."""
    w = precoder.weights if isinstance(precoder, Precoder) else np.asarray(precoder)
    h = np.atleast_2d(np.asarray(cfr_true, dtype=np.complex128))
    if w.shape != h.shape:
        raise DimensionError(f"precoder shape {w.shape} does not match channel shape {h.shape}")
    return np.sum(w * h, axis=1)
