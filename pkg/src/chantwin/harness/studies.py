"""Channel sets and BER sweeps for the ray-count, material and corrector studies."""

import logging
import math
import zlib
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..ofdm import NoiseConfig, cir_to_cfr, simulate_link, bits_per_symbol
from ..precoding import make_precoder
from ..ray.scene import load_demo_scene, load_scene, material_choice, perturb_scene
from ..ray.tracer import TraceConfig
from ..twin.corrector import nmse, predict
from ..twin.dataset import build_dataset, position_norm, split_mask, trace_cirs
from .config import ExperimentConfig
from .results import ResultRow

log = logging.getLogger(__name__)


def base_scene(cfg: ExperimentConfig):
    return load_demo_scene() if cfg.scene is None else load_scene(cfg.scene)


def truth_scene(cfg: ExperimentConfig, base=None):
    """The synthetic real world: truth materials, then the configured perturbation."""
    base = base_scene(cfg) if base is None else base
    return perturb_scene(material_choice(base, cfg.material_choice), cfg.perturbation_config())


def trace_config(cfg: ExperimentConfig, rays):
    return TraceConfig(ray_count=int(rays), max_reflections=cfg.max_reflections, seed=cfg.seed)


def dataset_tier(cfg: ExperimentConfig):
    """Tier the corrector is trained on: ``HF`` if present, else the largest."""
    return "HF" if "HF" in cfg.tiers else max(cfg.tiers, key=cfg.tiers.get)


def twin_name(cfg, mc, tier):
    if len(cfg.twin_materials) == 1:
        return f"twin-{tier}"
    if len(cfg.tiers) == 1:
        return f"twin-{mc}"
    return f"twin-{mc}-{tier}"


@dataclass
class Channels:
    """Per-position CIRs ``(S, A, P)`` of the truth and of each channel-knowledge variant."""

    positions: np.ndarray
    truth: np.ndarray
    estimates: OrderedDict

    def nmse_db(self):
        """Mean per-realization NMSE (dB) of every estimate against the truth."""
        ref = self.truth.reshape(-1, self.truth.shape[-1])
        return OrderedDict((name, float(np.mean(nmse(ref, est.reshape(ref.shape)))))
                           for name, est in self.estimates.items())


def build_channels(cfg: ExperimentConfig, positions, correctors=None, base=None):
    """Trace truth and twins at ``positions`` and apply any correctors.

    Parameters
    ----------
    correctors : dict, optional
        ``{variant name: (model, dataset scale factor)}``; each corrects the
        twin at :func:`dataset_tier` after the same per-position
        normalization used when building datasets.
    """
    base = base_scene(cfg) if base is None else base
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    array, fs, taps = cfg.array_config(), cfg.sample_rate, cfg.taps
    truth, counts, _ = trace_cirs(truth_scene(cfg, base), trace_config(cfg, cfg.reference_rays), positions,
                                  array, fs, taps, cfg.chain())
    keep = (counts > 0) & (position_norm(truth) > 0)
    if not keep.all():
        log.warning("dropping %d positions without truth paths", int((~keep).sum()))
    positions, truth = positions[keep], truth[keep]
    est = OrderedDict()
    raw = {}
    for mc in cfg.twin_materials:
        twin = material_choice(base, mc)
        for tier, rays in cfg.tiers.items():
            h, _, _ = trace_cirs(twin, trace_config(cfg, rays), positions, array, fs, taps)
            raw[(mc, tier)] = h
            est[twin_name(cfg, mc, tier)] = h
    for name, (model, scale) in (correctors or {}).items():
        h = raw[(cfg.twin_materials[0], dataset_tier(cfg))]
        g = position_norm(h)
        g = np.where(g > 0, g, 1.0)[:, None, None]
        flat = (h / g).reshape(-1, taps)
        est[name] = predict(model, flat, scale).reshape(h.shape) * g
    return Channels(positions, truth, est)


# --------------------------------------------------------------------------
# corrector datasets


def corrector_positions(cfg: ExperimentConfig, base=None):
    base = base_scene(cfg) if base is None else base
    return base.route_points(cfg.dataset_positions)


def build_corrector_dataset(cfg: ExperimentConfig, base=None):
    """Twin at the dataset tier paired with the oracle truth at every dataset position."""
    base = base_scene(cfg) if base is None else base
    twin = material_choice(base, cfg.twin_materials[0])
    return build_dataset(twin, truth_scene(cfg, base), corrector_positions(cfg, base),
                         trace_config(cfg, cfg.tiers[dataset_tier(cfg)]), trace_config(cfg, cfg.reference_rays),
                         cfg.array_config(), cfg.sample_rate, cfg.taps, cfg.split, cfg.seed, cfg.chain())


def held_out_positions(cfg: ExperimentConfig, kept, base=None):
    """Coordinates of the first ``cfg.positions`` held-out dataset positions."""
    positions = corrector_positions(cfg, base)[np.asarray(kept)]
    test = ~split_mask(cfg.seed, len(positions), cfg.split)
    return positions[test][:cfg.positions]


# --------------------------------------------------------------------------
# BER


def point_seed(base_seed, scenario, variant, snr_db, trial=0):
    """``base_seed XOR crc32(scenario, SNR, variant)``, offset by the trial index."""
    h = zlib.crc32(f"{scenario}|{variant}|{float(snr_db)!r}".encode())
    return ((int(base_seed) ^ h) + trial) & 0xFFFFFFFF


def link_errors(truth, estimate, cfg: ExperimentConfig, precoder, snr_db, n_frames, seed):
    """Bit errors over all positions for one channel-knowledge variant.

    Every position is scaled so the true CIR has unit RMS energy per antenna;
    the estimate gets the same factor, so SNR is the per-antenna receive SNR.
    ``snr_db=None`` runs noiseless.
    """
    ofdm = cfg.ofdm_config()
    errors = bits = 0
    g = position_norm(truth)
    p_t = 10.0 ** (snr_db / 10.0) if snr_db is not None else 1e12
    noise = NoiseConfig.from_db(snr_db) if snr_db is not None else None
    for i in range(len(truth)):
        h_true = truth[i] / g[i]
        cfr_hat = cir_to_cfr(estimate[i] / g[i], ofdm.subcarriers)
        w = make_precoder(precoder, cfr_hat, cfg.normalization, p_t).weights
        rng = np.random.default_rng([seed, i])
        e, n = simulate_link(h_true, w, ofdm, noise, n_frames, rng)
        errors += e
        bits += n
    return errors, bits


def frames_per_position(cfg: ExperimentConfig, n_positions):
    per_frame = cfg.subcarriers * bits_per_symbol(cfg.modulation)
    return max(1, math.ceil(cfg.bits_per_point / (n_positions * per_frame)))


def variants(channels: Channels):
    return ["genie"] + list(channels.estimates)


def run_ber_sweep(cfg: ExperimentConfig, channels: Channels, writer, snr_grid=None, only=None):
    """Append one row per (precoder, variant, SNR, trial) not already in ``writer``.

    Returns the rows computed in this call.
    """
    if len(channels.truth) == 0:
        raise ValidationError("no positions to simulate")
    n_frames = frames_per_position(cfg, len(channels.truth))
    rows = []
    for precoder in cfg.precoders:
        for name in variants(channels):
            if only is not None and name not in only:
                continue
            est = channels.truth if name == "genie" else channels.estimates[name]
            variant = f"{name}/{precoder}"
            for snr in (cfg.snr_db if snr_grid is None else snr_grid):
                for trial in range(cfg.trials):
                    seed = point_seed(cfg.seed, cfg.scenario, variant, snr, trial)
                    if (cfg.scenario, variant, float(snr), seed) in writer.done:
                        continue
                    e, n = link_errors(channels.truth, est, cfg, precoder, float(snr), n_frames, seed)
                    row = ResultRow(cfg.scenario, variant, float(snr), e / n, n, seed)
                    writer.append(row)
                    rows.append(row)
                    log.info("%s %s %.1f dB: BER %.3g over %d bits", cfg.scenario, variant, snr, e / n, n)
    return rows
