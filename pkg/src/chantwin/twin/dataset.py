"""Paired (twin, truth) CIR datasets: building, scaling, splitting and the CTWD file format."""

import io
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, replace

import numpy as np

from ..errors import DimensionError, ParseError, ValidationError
from ..ray.cir import ArrayConfig, band_limited_cir, los_delay, paths_to_cir
from ..ray.tracer import TraceConfig, trace_many

log = logging.getLogger(__name__)

MAGIC = b"CTWD"
VERSION = 1
_META = struct.Struct("<QIIQIdddQ")  # S, A, P, R, F, F_s, scale_factor, split, seed


@dataclass(frozen=True)
class DatasetMeta:
    samples: int
    antennas: int
    taps: int
    realizations: int
    sample_rate: float
    features: int = 2
    scale_factor: float = 1.0
    split: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if self.realizations != self.samples * self.antennas:
            raise ValidationError("realizations must equal samples * antennas")
        if self.features != 2:
            raise ValidationError("features must be 2 (real, imaginary)")
        if not 0.0 < self.split < 1.0:
            raise ValidationError("split must lie in (0, 1)")
        if not self.scale_factor > 0:
            raise ValidationError("scale_factor must be positive")
        if self.taps < 1 or self.antennas < 1:
            raise ValidationError("taps and antennas must be positive")


@dataclass
class Dataset:
    """``R = S * A`` realizations; row ``r`` is antenna ``r % A`` of position ``r // A``."""

    meta: DatasetMeta
    h_rt: np.ndarray  # (R, P) complex
    h_real: np.ndarray  # (R, P) complex

    def __post_init__(self):
        shape = (self.meta.realizations, self.meta.taps)
        self.h_rt = np.asarray(self.h_rt, dtype=np.complex128).reshape(shape)
        self.h_real = np.asarray(self.h_real, dtype=np.complex128).reshape(shape)

    def __len__(self):
        return self.meta.realizations

    def train_mask(self):
        """Per-realization training membership, decided per position."""
        per_pos = split_mask(self.meta.seed, self.meta.samples, self.meta.split)
        return np.repeat(per_pos, self.meta.antennas)

    def subset(self, mask):
        """Rows selected by ``mask`` as plain arrays ``(h_rt, h_real)``."""
        return self.h_rt[mask], self.h_real[mask]

    def __eq__(self, other):
        return isinstance(other, Dataset) and dumps(self) == dumps(other)


def to_features(h):
    """``(R, P)`` complex -> ``(R, 2, P)`` real/imaginary channels."""
    h = np.asarray(h)
    return np.stack([h.real, h.imag], axis=1)


def from_features(x):
    x = np.asarray(x, dtype=np.float64)
    return x[:, 0] + 1j * x[:, 1]


def _splitmix64(x):
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    x = ((x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9))
    x = ((x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB))
    return x ^ (x >> np.uint64(31))


def split_mask(seed, count, fraction):
    """Boolean training membership for indices ``0..count-1``.

    Each index is hashed together with ``seed``, so membership of an index
    never depends on ``count`` or on other indices.
    """
    with np.errstate(over="ignore"):
        idx = np.arange(count, dtype=np.uint64)
        key = _splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ _splitmix64(idx))
    u = (key >> np.uint64(11)).astype(np.float64) / float(1 << 53)
    return u < fraction


# --------------------------------------------------------------------------
# file format


def dumps(ds: Dataset) -> bytes:
    m = ds.meta
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(_META.pack(m.samples, m.antennas, m.taps, m.realizations, m.features, m.sample_rate,
                         m.scale_factor, m.split, m.seed))
    rec = np.concatenate([to_features(ds.h_rt).reshape(len(ds), -1),
                          to_features(ds.h_real).reshape(len(ds), -1)], axis=1)
    buf.write(rec.astype("<f8").tobytes())
    return buf.getvalue()


def loads(data: bytes) -> Dataset:
    if data[:4] != MAGIC:
        raise ParseError("not a dataset file (bad magic)")
    if len(data) < 8 + _META.size:
        raise ParseError("truncated dataset header")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise ParseError(f"unsupported dataset version {version}")
    s, a, p, r, f, fs, scale, split, seed = _META.unpack_from(data, 8)
    meta = DatasetMeta(s, a, p, r, fs, f, scale, split, seed)
    body = data[8 + _META.size:]
    if len(body) != r * 4 * p * 8:
        raise ParseError(f"dataset body has {len(body)} bytes, expected {r * 4 * p * 8}")
    rec = np.frombuffer(body, dtype="<f8").reshape(r, 2, 2, p)
    return Dataset(meta, from_features(rec[:, 0]), from_features(rec[:, 1]))


def atomic_write(path, data: bytes):
    """Write ``data`` to ``path`` via a temporary file and rename."""
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(ds, path):
    atomic_write(path, dumps(ds))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())


# --------------------------------------------------------------------------
# building


def trace_cirs(scene, cfg: TraceConfig, positions, array: ArrayConfig, sample_rate, taps, chain=None):
    """Trace ``scene`` to every position and discretize.

    Tap 0 of every CIR sits at the geometric line-of-sight delay, so CIRs from
    different scenes or ray counts share a time reference. With a
    :class:`ReceiverChain` the paths are captured band-limited instead of
    binned to the nearest tap.

    Returns
    -------
    cirs : ndarray, shape (S, A, P)
    path_counts : ndarray, shape (S,)
    dropped : ndarray, shape (S,)
        Dropped energy fraction per position.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    paths = trace_many(scene, cfg, positions)
    out = np.zeros((len(positions), array.n_tx, taps), dtype=np.complex128)
    counts = np.zeros(len(positions), dtype=np.int64)
    dropped = np.zeros(len(positions))
    for i, (pos, p) in enumerate(zip(positions, paths)):
        ref = los_delay(scene.tx, pos)
        if chain is None:
            res = paths_to_cir(p, array, sample_rate, taps, ref_delay=ref)
        else:
            res = band_limited_cir(p, array, sample_rate, taps, chain, ref_delay=ref)
        out[i] = res.cir.taps
        counts[i] = len(p)
        dropped[i] = res.dropped_fraction
    return out, counts, dropped


def position_norm(cirs):
    """RMS per-antenna CIR energy, ``(S,)`` from ``(S, A, P)``."""
    return np.sqrt(np.mean(np.sum(np.abs(cirs) ** 2, axis=2), axis=1))


@dataclass
class BuildResult:
    dataset: Dataset
    kept: np.ndarray  # indices into the requested positions
    norms: np.ndarray  # twin RMS gain used to normalize each kept position


def build_dataset(twin_scene, truth_scene, rx_positions, twin_cfg, truth_cfg, array=ArrayConfig(),
                  sample_rate=30.72e6, taps=16, split=0.7, seed=0, truth_chain=None):
    """Trace both scenes at every position and pair their CIRs.

    Both CIRs of a position are divided by the twin's RMS gain there, which
    the transmitter knows without the truth, so each realization has a
    comparable scale and NMSE is unchanged.

    Parameters
    ----------
    twin_scene, truth_scene : Scene
        Must share transmitter and carrier.
    rx_positions : (S, 3) array
    twin_cfg, truth_cfg : TraceConfig
    truth_chain : ReceiverChain, optional
        Receiver the truth CIRs are captured with. ``None`` bins truth paths
        exactly like the twin's.

    Returns
    -------
    BuildResult
    """
    positions = np.atleast_2d(np.asarray(rx_positions, dtype=np.float64))
    if len(positions) == 0:
        raise ValidationError("no receiver positions")
    if tuple(twin_scene.tx) != tuple(truth_scene.tx) or twin_scene.frequency != truth_scene.frequency:
        raise ValidationError("twin and truth scenes must share transmitter and carrier")
    h_rt, n_rt, _ = trace_cirs(twin_scene, twin_cfg, positions, array, sample_rate, taps)
    h_real, n_real, _ = trace_cirs(truth_scene, truth_cfg, positions, array, sample_rate, taps, truth_chain)
    norms = position_norm(h_rt)
    keep = (n_rt > 0) & (n_real > 0) & (norms > 0) & (position_norm(h_real) > 0)
    for i in np.nonzero(~keep)[0]:
        log.warning("skipping position %d at %s: no usable paths", i, positions[i].tolist())
    kept = np.nonzero(keep)[0]
    scale = norms[kept][:, None, None]
    s = len(kept)
    if s == 0:
        raise ValidationError("no position produced paths in both scenes")
    meta = DatasetMeta(s, array.n_tx, taps, s * array.n_tx, float(sample_rate), split=split, seed=seed)
    ds = Dataset(meta, (h_rt[kept] / scale).reshape(-1, taps), (h_real[kept] / scale).reshape(-1, taps))
    return BuildResult(ds, kept, norms[kept])


def scale_dataset(ds: Dataset):
    """Divide everything by the largest real/imaginary magnitude.

    Returns the scaled dataset (whose ``scale_factor`` accumulates the
    division) and the factor applied in this call.
    """
    if len(ds) == 0:
        raise ValidationError("empty dataset")
    factor = float(max(np.abs(to_features(ds.h_rt)).max(), np.abs(to_features(ds.h_real)).max()))
    if factor == 0.0:
        raise ValidationError("cannot scale an all-zero dataset")
    meta = replace(ds.meta, scale_factor=ds.meta.scale_factor * factor)
    return Dataset(meta, ds.h_rt / factor, ds.h_real / factor), factor


def check_taps(h, taps):
    h = np.atleast_2d(np.asarray(h))
    if h.shape[-1] != taps:
        raise DimensionError(f"expected {taps} taps per realization, got {h.shape[-1]}")
    return h
