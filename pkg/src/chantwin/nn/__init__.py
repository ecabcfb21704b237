"""Small float64 neural-network engine: layers, reverse-mode gradients, Adam."""

from .checkpoint import load, loads, save, dumps
from .gradcheck import gradcheck
from .layers import LayerSpec
from .model import Model, encoder_decoder_specs, mlp_specs
from .optim import AdamState, adam_step, mse_loss

__all__ = [
    "LayerSpec",
    "Model",
    "AdamState",
    "adam_step",
    "mse_loss",
    "gradcheck",
    "encoder_decoder_specs",
    "mlp_specs",
    "save",
    "load",
    "dumps",
    "loads",
]
