"""Training and inference for the CIR corrector (conv encoder-decoder or MLP baseline)."""

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError, ValidationError
from ..nn import AdamState, Model, adam_step, encoder_decoder_specs, mlp_specs, mse_loss
from .dataset import Dataset, check_taps, from_features, split_mask, to_features

log = logging.getLogger(__name__)

KINDS = ("encoder_decoder", "mlp")


@dataclass(frozen=True)
class CorrectorConfig:
    """Architecture and training settings.

    ``epochs`` is U, the epoch cap; ``batches_per_epoch`` is V, where ``None``
    means one full pass over the training rows per epoch.
    """

    encoder_blocks: int = 5
    decoder_blocks: int = 5
    channels: tuple = (16, 32, 64, 128)
    kernel_size: int = 3
    mlp_layers: int = 5
    mlp_width: int = 128
    epochs: int = 200
    batches_per_epoch: int = None
    batch_size: int = 256
    learning_rate: float = 0.0008
    patience: int = 20
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.encoder_blocks < 2 or self.decoder_blocks < 2:
            raise ValidationError("encoder and decoder need at least 2 blocks each")
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be non-negative")
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValidationError("epochs, batch_size and patience must be positive")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValidationError("validation_fraction must lie in [0, 1)")


def build_model(kind, taps, cfg: CorrectorConfig, seed=None):
    """Fresh model for ``(2, taps)`` inputs; ``seed=None`` gives all-zero weights."""
    if kind == "encoder_decoder":
        specs = encoder_decoder_specs(cfg.encoder_blocks, cfg.decoder_blocks, cfg.channels, cfg.kernel_size,
                                      seq_len=taps, out_channels=2)
    elif kind == "mlp":
        specs = mlp_specs(cfg.mlp_layers, cfg.mlp_width, out_features=2 * taps)
    else:
        raise ValidationError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    return Model(specs, (2, taps), seed=seed)


@dataclass
class EpochLog:
    epoch: int
    train_mse: float
    validation_mse: float


@dataclass
class TrainResult:
    model: Model
    history: list = field(default_factory=list)
    best_epoch: int = 0
    stopped: str = "epochs"  # epochs | early_stop | diverged


def _batched_mse(model, x, y, batch=1024):
    if len(x) == 0:
        return float("nan")
    total = 0.0
    for lo in range(0, len(x), batch):
        pred = model.forward(x[lo:lo + batch], "infer")
        total += float(np.sum((pred - y[lo:lo + batch]) ** 2))
    return total / y.size


def train_corrector(ds: Dataset, cfg: CorrectorConfig = CorrectorConfig(), kind="encoder_decoder"):
    """Fit a corrector on the training split of a scaled dataset.

    A validation subset is carved from the training positions (again by a
    pure function of seed and position index) and drives early stopping; the
    parameters of the best validation epoch are returned. The run is
    bit-reproducible for a given dataset and config.
    """
    train = ds.train_mask()
    if not train.any():
        raise ValidationError("training split is empty")
    a = ds.meta.antennas
    pos_val = ~split_mask(ds.meta.seed ^ 0x5EED, ds.meta.samples, 1.0 - cfg.validation_fraction)
    val = np.repeat(pos_val, a) & train
    fit = train & ~val
    if not fit.any():
        fit, val = train, np.zeros_like(train)
    flat = 2 * ds.meta.taps
    x_fit, y_fit = to_features(ds.h_rt[fit]), to_features(ds.h_real[fit]).reshape(-1, flat)
    x_val, y_val = to_features(ds.h_rt[val]), to_features(ds.h_real[val]).reshape(-1, flat)

    model = build_model(kind, ds.meta.taps, cfg, seed=cfg.seed)
    state = AdamState(learning_rate=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult(model)
    best = (np.inf, model.state(), 0)
    n = len(x_fit)
    steps = cfg.batches_per_epoch or max(1, -(-n // cfg.batch_size))
    since_best = 0
    for epoch in range(1, cfg.epochs + 1):
        last_good = model.state()
        order = rng.permutation(n)
        try:
            for b in range(steps):
                lo = (b * cfg.batch_size) % n
                idx = order[lo:lo + cfg.batch_size]
                if len(idx) < 2:  # batchnorm needs at least two rows
                    continue
                pred = model.forward(x_fit[idx], "train")
                loss, grad = mse_loss(pred, y_fit[idx])
                if not np.isfinite(loss):
                    raise NumericError(f"non-finite training loss at epoch {epoch}")
                grads, _ = model.backward(grad)
                adam_step(model, grads, state)
        except NumericError as exc:
            log.warning("training diverged: %s; keeping the last finite parameters", exc)
            model.load_state(last_good)
            result.stopped = "diverged"
            break
        train_mse = _batched_mse(model, x_fit, y_fit)
        val_mse = _batched_mse(model, x_val, y_val) if len(x_val) else train_mse
        if not (np.isfinite(train_mse) and np.isfinite(val_mse)):
            log.warning("non-finite evaluation at epoch %d; keeping the last finite parameters", epoch)
            model.load_state(last_good)
            result.stopped = "diverged"
            break
        result.history.append(EpochLog(epoch, train_mse, val_mse))
        log.info("epoch %d train %.6g validation %.6g", epoch, train_mse, val_mse)
        if val_mse < best[0]:
            best = (val_mse, model.state(), epoch)
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                result.stopped = "early_stop"
                break
    if best[2]:
        model.load_state(best[1])
    result.best_epoch = best[2]
    return result


def predict(model: Model, h_rt, scale_factor=1.0):
    """Corrected CIRs for raw twin realizations ``(R, P)`` (or one ``(P,)``).

    Inputs are divided by ``scale_factor`` before the infer-mode forward pass
    and outputs multiplied back.
    """
    h = np.asarray(h_rt)
    single = h.ndim == 1
    h = check_taps(h, model.input_shape[-1])
    out = model.forward(to_features(h / scale_factor), "infer").reshape(len(h), 2, -1)
    out = from_features(out) * scale_factor
    return out[0] if single else out


def nmse(h_ref, h_hat):
    """``10 log10(|h_ref - h_hat|^2 / |h_ref|^2)`` per row, clamped at -100 dB."""
    h_ref = np.atleast_2d(np.asarray(h_ref))
    h_hat = np.atleast_2d(np.asarray(h_hat))
    if h_ref.shape != h_hat.shape:
        raise ValidationError(f"shape mismatch {h_ref.shape} vs {h_hat.shape}")
    ref = np.sum(np.abs(h_ref) ** 2, axis=-1)
    if np.any(ref == 0):
        raise ValidationError("reference CIR is all zero")
    ratio = np.sum(np.abs(h_ref - h_hat) ** 2, axis=-1) / ref
    with np.errstate(divide="ignore"):
        return np.maximum(10.0 * np.log10(ratio), -100.0)


@dataclass
class CaseReport:
    case1: float  # mean per-realization NMSE of the raw twin, dB
    case2: float  # same for the corrected CIR
    case1_ratio_db: float  # the same comparisons averaged in linear ratio, then dB
    case2_ratio_db: float
    realizations: int


def evaluate_cases(ds: Dataset, model: Model, mask=None):
    """Case 1 / Case 2 NMSE on the held-out rows (``~train_mask`` by default)."""
    mask = ~ds.train_mask() if mask is None else mask
    h_rt, h_real = ds.subset(mask)
    if len(h_rt) == 0:
        raise ValidationError("evaluation split is empty")
    pred = predict(model, h_rt)
    n1, n2 = nmse(h_real, h_rt), nmse(h_real, pred)
    lin = lambda v: float(10 * np.log10(np.mean(10 ** (v / 10))))  # noqa: E731
    return CaseReport(float(n1.mean()), float(n2.mean()), lin(n1), lin(n2), len(h_rt))
