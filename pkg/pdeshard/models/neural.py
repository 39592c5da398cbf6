"""
pde-shard - sub-domain parallel learning of PDE time stepping

This program is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.

This program is distributed in the hope that it will be useful,
but WITHOUT ANY WARRANTY; without even the implied warranty of
MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
GNU General Public License for more details.

You should have received a copy of the GNU General Public License
along with this program.  If not, see <https://www.gnu.org/licenses/>.
"""

# Dense numpy kernels for the sub-domain networks: 2-d convolution forward and
# backward passes, leaky ReLU, the MAPE loss and the four layer network.
# Convolution is cross-correlation (no kernel flip). Back-propagation is
# written out per layer.

import enum
from dataclasses import dataclass, field, replace
from typing import List

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from pdeshard.data.fields import DTYPE, N_CHANNELS, as_tensor3
from pdeshard.exceptions import ConfigurationError, ShapeMismatchError

# Channels through the network, layer i maps LAYER_CHANNELS[i] to [i + 1].
LAYER_CHANNELS = (N_CHANNELS, 6, 16, 6, N_CHANNELS)
KERNEL_SIZE = 5
LEAKY_SLOPE = 0.01
# Regularises the MAPE denominator, which is exactly 0 where the fluid rests.
MAPE_DELTA = 1e-6


class PadMode(enum.Enum):
    ZERO_SAME = 'zero-same'
    VALID = 'valid'


@dataclass
class ConvLayer:
    """
    One convolution layer with per-output-channel bias.

    Parameters
    ----------
    weights: np.ndarray
        Kernel of shape (out_ch, in_ch, k, k), k odd
    bias: np.ndarray
        Shape (out_ch,)
    pad_mode: PadMode, default ZERO_SAME
        Padding used when no padding strategy overrides it
    """
    weights: np.ndarray
    bias: np.ndarray
    pad_mode: PadMode = PadMode.ZERO_SAME

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=DTYPE)
        self.bias = np.asarray(self.bias, dtype=DTYPE)
        if self.weights.ndim != 4 or \
                self.weights.shape[2] != self.weights.shape[3]:
            raise ShapeMismatchError(
                'Kernel must be (out, in, k, k), got {}'.format(
                    self.weights.shape))
        if self.k % 2 != 1:
            raise ShapeMismatchError(
                'Kernel size must be odd, got {}'.format(self.k))
        if self.bias.shape != (self.out_ch,):
            raise ShapeMismatchError(
                'Bias must have shape ({},), got {}'.format(
                    self.out_ch, self.bias.shape))
        self.pad_mode = PadMode(self.pad_mode)

    @property
    def out_ch(self):
        return self.weights.shape[0]

    @property
    def in_ch(self):
        return self.weights.shape[1]

    @property
    def k(self):
        return self.weights.shape[2]

    @property
    def reach(self):
        """Cells consumed per side by one Valid application."""
        return (self.k - 1) // 2


@dataclass
class ConvNet:
    """
    Stack of convolution layers with leaky ReLU after every layer but the
    last one, which stays linear for regression.

    Parameters
    ----------
    layers: list(ConvLayer)
        Adjacent channel counts must match
    eps_act: float, default LEAKY_SLOPE
        Slope of the leaky ReLU for negative inputs
    """
    layers: List[ConvLayer]
    eps_act: float = LEAKY_SLOPE

    def __post_init__(self):
        if not self.layers:
            raise ShapeMismatchError('A network needs at least one layer')
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_ch != b.in_ch:
                raise ShapeMismatchError(
                    'Layer {} outputs {} channels but layer {} expects {}'
                    .format(i, a.out_ch, i + 1, b.in_ch))

    @property
    def in_ch(self):
        return self.layers[0].in_ch

    @property
    def out_ch(self):
        return self.layers[-1].out_ch

    def parameters(self):
        """Flat list [W0, b0, W1, b1, ...] of the parameter arrays."""
        params = []
        for layer in self.layers:
            params.extend([layer.weights, layer.bias])
        return params

    def with_parameters(self, params):
        """New network with the same layout and the given parameter arrays."""
        if len(params) != 2 * len(self.layers):
            raise ShapeMismatchError(
                'Expected {} parameter arrays, got {}'.format(
                    2 * len(self.layers), len(params)))
        layers = [ConvLayer(np.array(w, dtype=DTYPE), np.array(b, dtype=DTYPE),
                            layer.pad_mode)
                  for layer, w, b in zip(self.layers, params[::2], params[1::2])]
        return replace(self, layers=layers)

    def copy(self):
        return self.with_parameters(self.parameters())

    def equals(self, other):
        """Bit-for-bit comparison of layout and parameters."""
        mine, theirs = self.parameters(), other.parameters()
        return (self.eps_act == other.eps_act and len(mine) == len(theirs)
                and all(a.shape == b.shape and a.tobytes() == b.tobytes()
                        for a, b in zip(mine, theirs)))


@dataclass
class Gradients:
    """Gradients of a scalar loss, in the order of ConvNet.parameters()."""
    weights: List[np.ndarray] = field(default_factory=list)
    biases: List[np.ndarray] = field(default_factory=list)

    def as_list(self):
        flat = []
        for w, b in zip(self.weights, self.biases):
            flat.extend([w, b])
        return flat

    def scaled(self, factor):
        return Gradients([w * factor for w in self.weights],
                         [b * factor for b in self.biases])

    def add(self, other):
        if not self.weights:
            return Gradients([w.copy() for w in other.weights],
                             [b.copy() for b in other.biases])
        return Gradients([a + b for a, b in zip(self.weights, other.weights)],
                         [a + b for a, b in zip(self.biases, other.biases)])

    def is_finite(self):
        return all(np.all(np.isfinite(g)) for g in self.as_list())


def leaky_relu(x, eps_act=LEAKY_SLOPE):
    """x for x >= 0, eps_act * x otherwise; elementwise on arrays."""
    return np.where(x >= 0, x, eps_act * x)


def leaky_relu_grad(x, eps_act=LEAKY_SLOPE):
    """1 for x > 0, eps_act for x <= 0 (the value at 0 is a choice)."""
    return np.where(x > 0, 1.0, eps_act)


def _padded(x, layer, pad_mode):
    if pad_mode is PadMode.ZERO_SAME:
        p = layer.reach
        return np.pad(x, ((0, 0), (p, p), (p, p)))
    return x


def _check_input(x, layer, pad_mode):
    if x.shape[0] != layer.in_ch:
        raise ShapeMismatchError(
            'Layer expects {} input channels, got {}'.format(
                layer.in_ch, x.shape[0]))
    if pad_mode is PadMode.VALID and min(x.shape[1:]) < layer.k:
        raise ShapeMismatchError(
            'Valid convolution with k={} needs at least {}x{} input, got {}'
            .format(layer.k, layer.k, layer.k, x.shape[1:]))


def conv2d_forward(x, layer, pad_mode=None):
    """
    Multi-channel 2-d cross-correlation plus bias.

    Parameters
    ----------
    x: np.ndarray
        Input tensor (in_ch, h, w)
    layer: ConvLayer
    pad_mode: PadMode or None
        Overrides layer.pad_mode. ZERO_SAME pads (k-1)/2 zeros per side and
        keeps h, w; VALID shrinks both by k-1.

    Returns
    -------
    out: np.ndarray
        Tensor (out_ch, h', w')
    """
    x = as_tensor3(x)
    pad_mode = PadMode(pad_mode or layer.pad_mode)
    _check_input(x, layer, pad_mode)
    windows = sliding_window_view(_padded(x, layer, pad_mode),
                                  (layer.k, layer.k), axis=(1, 2))
    out = np.tensordot(layer.weights, windows, axes=([1, 2, 3], [0, 3, 4]))
    return out + layer.bias[:, None, None]


def conv2d_backward(x, layer, grad_out, pad_mode=None):
    """
    Gradients of `conv2d_forward` given the gradient of its output.

    Parameters
    ----------
    x: np.ndarray
        The forward input (in_ch, h, w)
    layer: ConvLayer
    grad_out: np.ndarray
        dL/d(out), shaped like the forward output
    pad_mode: PadMode or None
        Must match the forward call

    Returns
    -------
    grad_x: np.ndarray
        dL/dx, shaped like x
    grad_w: np.ndarray
        dL/dW, shaped like layer.weights
    grad_b: np.ndarray
        dL/db, shaped like layer.bias
    """
    x = as_tensor3(x)
    grad_out = as_tensor3(grad_out)
    pad_mode = PadMode(pad_mode or layer.pad_mode)
    _check_input(x, layer, pad_mode)
    k = layer.k
    xp = _padded(x, layer, pad_mode)
    expected = (layer.out_ch, xp.shape[1] - k + 1, xp.shape[2] - k + 1)
    if grad_out.shape != expected:
        raise ShapeMismatchError(
            'grad_out has shape {}, forward output is {}'.format(
                grad_out.shape, expected))

    windows = sliding_window_view(xp, (k, k), axis=(1, 2))
    grad_w = np.tensordot(grad_out, windows, axes=([1, 2], [1, 2]))
    grad_b = grad_out.sum(axis=(1, 2))

    # full correlation of grad_out with the flipped kernel
    full = np.pad(grad_out, ((0, 0), (k - 1, k - 1), (k - 1, k - 1)))
    full_windows = sliding_window_view(full, (k, k), axis=(1, 2))
    flipped = layer.weights[:, :, ::-1, ::-1]
    grad_xp = np.tensordot(flipped, full_windows, axes=([0, 2, 3], [0, 3, 4]))
    if pad_mode is PadMode.ZERO_SAME:
        p = layer.reach
        grad_xp = grad_xp[:, p:grad_xp.shape[1] - p, p:grad_xp.shape[2] - p]
    return np.ascontiguousarray(grad_xp), grad_w, grad_b


def layer_pad_modes(net, strategy=None):
    """Pad mode of every layer: the layers' own, or the strategy's."""
    if strategy is None:
        return [layer.pad_mode for layer in net.layers]
    return strategy.pad_modes(len(net.layers))


def forward_pass(x, net, pad_modes):
    """Forward pass with explicit pad modes; returns (output, layer cache)."""
    cache = []
    last = len(net.layers) - 1
    for i, (layer, mode) in enumerate(zip(net.layers, pad_modes)):
        z = conv2d_forward(x, layer, mode)
        cache.append((x, z))
        x = z if i == last else leaky_relu(z, net.eps_act)
    return x, cache


def net_forward(x, net, halo_mode=None, core_shape=None):
    """
    Run the network on one sample.

    Parameters
    ----------
    x: np.ndarray
        Input (in_ch, h, w). Under a padding strategy, the core extended by
        strategy.halo_for(net) cells per side.
    net: ConvNet
    halo_mode: PaddingStrategy or None
        None runs every layer with its own pad mode (the monolithic network);
        otherwise the strategy decides which layers are Valid.
    core_shape: tuple(int, int) or None
        Expected output size; checked against the input when given

    Returns
    -------
    out: np.ndarray
        Prediction (out_ch, core_h, core_w)
    """
    x = as_tensor3(x)
    if halo_mode is not None:
        halo = halo_mode.halo_for(net)
        core = (x.shape[1] - 2 * halo, x.shape[2] - 2 * halo)
        if min(core) < 1 or (core_shape is not None
                             and tuple(core_shape) != core):
            raise ShapeMismatchError(
                'Input {} does not fit strategy {} (halo {}) and core {}'
                .format(x.shape, halo_mode.value, halo, core_shape))
    out, _ = forward_pass(x, net, layer_pad_modes(net, halo_mode))
    return out


def mape_loss(pred, target, delta=MAPE_DELTA):
    """
    Mean absolute percentage error with a regularised denominator.

    loss = 100 / m * sum(|pred - target| / (|target| + delta))

    Parameters
    ----------
    pred, target: np.ndarray
        Arrays of equal shape
    delta: float, default MAPE_DELTA
        Added to |target|, must be > 0

    Returns
    -------
    loss: float
        Percent
    grad: np.ndarray
        Subgradient dL/dpred, zero where pred == target
    """
    pred = np.asarray(pred, dtype=DTYPE)
    target = np.asarray(target, dtype=DTYPE)
    if pred.shape != target.shape:
        raise ShapeMismatchError(
            'Prediction {} and target {} differ in shape'.format(
                pred.shape, target.shape))
    if delta <= 0:
        raise ConfigurationError(
            'delta must be positive, got {}'.format(delta))
    scale = 100.0 / pred.size
    denom = np.abs(target) + delta
    diff = pred - target
    loss = scale * float(np.sum(np.abs(diff) / denom))
    grad = scale * np.sign(diff) / denom
    return loss, grad


def loss_and_gradients(x, target, net, halo_mode=None, delta=MAPE_DELTA):
    """
    MAPE loss of one sample and its gradient with respect to every parameter.

    Returns
    -------
    loss: float
    grads: Gradients
    """
    pad_modes = layer_pad_modes(net, halo_mode)
    out, cache = forward_pass(as_tensor3(x), net, pad_modes)
    loss, grad = mape_loss(out, target, delta)

    weights, biases = [], []
    last = len(net.layers) - 1
    for i in range(last, -1, -1):
        layer_in, z = cache[i]
        if i != last:
            grad = grad * leaky_relu_grad(z, net.eps_act)
        grad, grad_w, grad_b = conv2d_backward(
            layer_in, net.layers[i], grad, pad_modes[i])
        weights.append(grad_w)
        biases.append(grad_b)
    return loss, Gradients(weights[::-1], biases[::-1])


def init_network(seed, channels=LAYER_CHANNELS, kernel_size=KERNEL_SIZE,
                 eps_act=LEAKY_SLOPE):
    """
    Glorot-uniform weights and zero biases, deterministic for a seed.

    Weights of a layer are drawn from U(-b, b) with
    b = sqrt(6 / (in_ch * k^2 + out_ch * k^2)).

    Parameters
    ----------
    seed: int
    channels: tuple(int), default LAYER_CHANNELS
        Channel counts from input to output
    kernel_size: int, default KERNEL_SIZE
    eps_act: float, default LEAKY_SLOPE

    Returns
    -------
    net: ConvNet
    """
    rng = np.random.default_rng(seed)
    layers = []
    k = kernel_size
    for in_ch, out_ch in zip(channels, channels[1:]):
        bound = init_bound(in_ch, out_ch, k)
        weights = rng.uniform(-bound, bound, size=(out_ch, in_ch, k, k))
        layers.append(ConvLayer(weights, np.zeros(out_ch, dtype=DTYPE)))
    return ConvNet(layers, eps_act)


def init_bound(in_ch, out_ch, k):
    return float(np.sqrt(6.0 / (in_ch * k * k + out_ch * k * k)))


def zero_network(channels=LAYER_CHANNELS, kernel_size=KERNEL_SIZE):
    """Network whose every weight and bias is 0; predicts zeros."""
    k = kernel_size
    return ConvNet([ConvLayer(np.zeros((o, i, k, k)), np.zeros(o))
                    for i, o in zip(channels, channels[1:])])
