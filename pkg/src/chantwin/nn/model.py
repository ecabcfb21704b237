"""Sequential model: parameter container plus forward/backward passes."""

import numpy as np

from ..errors import DimensionError, StateError
from .layers import LayerSpec, make_layer


class Model:
    """An ordered stack of layers (the ``G`` layers of the predictor).

    Parameters
    ----------
    specs : sequence of LayerSpec
        Layer order from input to output.
    input_shape : tuple of int
        Per-sample input shape, ``(channels, length)`` or ``(features,)``.
    seed : int or None
        Seed for He-normal weight initialisation. ``None`` builds an
        all-zero model (useful as a null predictor).
    """

    def __init__(self, specs, input_shape, seed=None):
        self.input_shape = tuple(int(d) for d in input_shape)
        rng = None if seed is None else np.random.default_rng(seed)
        self.layers = []
        shape = self.input_shape
        for i, spec in enumerate(specs):
            layer = make_layer(spec, shape, rng=rng)
            try:
                shape = layer.output_shape(shape)
            except DimensionError as exc:
                raise DimensionError(f"layer {i} ({spec.kind}): {exc}") from None
            self.layers.append(layer)
        self.output_shape = shape
        self._forward_done = False

    @property
    def specs(self):
        return [layer.spec for layer in self.layers]

    def __len__(self):
        return len(self.layers)

    def forward(self, x, mode="infer"):
        """Run the stack on a batch ``x`` of shape ``(batch, *input_shape)``.

        ``mode="train"`` uses batch statistics in batchnorm layers (and
        updates their running averages); ``mode="infer"`` uses the running
        statistics.
        """
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise DimensionError(f"layer 0: expected per-sample shape {self.input_shape}, got {x.shape[1:]}")
        train = mode == "train"
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x, train)
            except DimensionError as exc:
                raise DimensionError(f"layer {i} ({layer.spec.kind}): {exc}") from None
        self._forward_done = True
        return x

    __call__ = forward

    def backward(self, grad_out):
        """Reverse accumulation through the retained forward pass.

        Returns
        -------
        grads : list of dict
            One ``{name: gradient}`` dict per layer, shaped like ``params``.
        grad_input : np.ndarray
            Gradient with respect to the forward input.
        """
        if not self._forward_done:
            raise StateError("backward called without a prior forward pass")
        grads = [None] * len(self.layers)
        g = np.asarray(grad_out, dtype=np.float64)
        for i in range(len(self.layers) - 1, -1, -1):
            grads[i], g = self.layers[i].backward(g)
        return grads, g

    def parameters(self):
        """Yield ``(layer_index, name, array)`` for every trainable array."""
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params.items():
                yield i, name, arr

    def num_parameters(self):
        return sum(arr.size for _, _, arr in self.parameters())

    def state(self):
        """Deep copy of all parameters and buffers."""
        return [
            ({k: v.copy() for k, v in layer.params.items()}, {k: v.copy() for k, v in layer.buffers.items()})
            for layer in self.layers
        ]

    def load_state(self, state):
        for layer, (params, buffers) in zip(self.layers, state):
            for k, v in params.items():
                layer.params[k] = v.copy()
            for k, v in buffers.items():
                layer.buffers[k] = v.copy()

    def zero_(self):
        """Set every parameter to zero (buffers untouched)."""
        for _, _, arr in self.parameters():
            arr[...] = 0.0


def encoder_decoder_specs(encoder_blocks=5, decoder_blocks=5, channels=(16, 32, 64, 128), kernel_size=3,
                          seq_len=16, out_channels=2):
    """Layer list for the conv encoder-decoder corrector.

    ``encoder_blocks - 1`` hidden blocks of stride-2 conv + batchnorm + ReLU
    compress the sequence; ``decoder_blocks - 1`` blocks of stride-2
    transposed conv + ReLU followed by conv + ReLU expand it back. A 1x1
    conv maps to ``out_channels`` and a dense layer does the final
    regression over the whole ``out_channels * seq_len`` output.
    """
    n_enc = encoder_blocks - 1
    n_dec = decoder_blocks - 1
    if n_enc < 1 or n_dec < 1:
        raise ValueError("need at least two encoder and two decoder blocks")
    chans = list(channels)
    while len(chans) < n_enc:
        chans.append(chans[-1])
    chans = chans[:n_enc]
    specs = []
    for c in chans:
        specs += [LayerSpec("conv1d", c, kernel_size, 2), LayerSpec("batchnorm"), LayerSpec("relu")]
    dec_chans = list(reversed(chans))[1:] + [chans[0]]
    while len(dec_chans) < n_dec:
        dec_chans.append(dec_chans[-1])
    for c in dec_chans[:n_dec]:
        specs += [
            LayerSpec("conv1d_transpose", c, kernel_size, 2),
            LayerSpec("relu"),
            LayerSpec("conv1d", c, kernel_size, 1),
            LayerSpec("relu"),
        ]
    specs.append(LayerSpec("conv1d", out_channels, 1, 1))
    specs.append(LayerSpec("dense", output_width=out_channels * seq_len))
    return specs


def mlp_specs(layers=5, width=128, out_features=32):
    """Fully connected baseline: ``layers - 2`` hidden ReLU layers plus a regression layer."""
    if layers < 3:
        raise ValueError("an MLP needs at least 3 layers (input, hidden, output)")
    specs = []
    for _ in range(layers - 2):
        specs += [LayerSpec("dense", output_width=width), LayerSpec("relu")]
    specs.append(LayerSpec("dense", output_width=out_features))
    return specs
