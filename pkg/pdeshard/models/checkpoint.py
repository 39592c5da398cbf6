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

# Network checkpoints. Layout, all little-endian:
#
#   8 bytes magic b'PDSHNET\0', u32 version, u32 layer count L, f64 eps_act
#   L x (u32 out_ch, u32 in_ch, u32 k, u32 pad mode: 0 zero-same, 1 valid)
#   L x (weights f64[out*in*k*k], bias f64[out])
#   u32 flag: 1 when an optimiser state follows, else 0
#   u64 t, f64 rho1, f64 rho2, f64 eta, f64 eps, then m and v arrays in
#   parameter order

import hashlib
import struct

import numpy as np

from pdeshard.exceptions import CheckpointFormatError
from pdeshard.models.neural import ConvLayer, ConvNet, PadMode
from pdeshard.models.optim import AdamState

MAGIC = b'PDSHNET\x00'
VERSION = 1
HEADER = struct.Struct('<8sIId')
LAYER = struct.Struct('<IIII')
FLAG = struct.Struct('<I')
ADAM = struct.Struct('<Qdddd')
F64 = np.dtype('<f8')

_PAD_CODES = {PadMode.ZERO_SAME: 0, PadMode.VALID: 1}
_PAD_MODES = {code: mode for mode, code in _PAD_CODES.items()}


def encode_checkpoint(net, state=None):
    """Bytes of a checkpoint holding `net` and, optionally, its ADAM state."""
    parts = [HEADER.pack(MAGIC, VERSION, len(net.layers), net.eps_act)]
    for layer in net.layers:
        parts.append(LAYER.pack(layer.out_ch, layer.in_ch, layer.k,
                                _PAD_CODES[layer.pad_mode]))
    for param in net.parameters():
        parts.append(param.astype(F64, copy=False).tobytes(order='C'))
    if state is None:
        parts.append(FLAG.pack(0))
    else:
        parts.append(FLAG.pack(1))
        parts.append(ADAM.pack(state.t, state.rho1, state.rho2, state.eta,
                               state.eps))
        for moment in state.m + state.v:
            parts.append(moment.astype(F64, copy=False).tobytes(order='C'))
    return b''.join(parts)


class _Reader:

    def __init__(self, blob, source):
        self.blob = blob
        self.offset = 0
        self.source = source

    def unpack(self, fmt):
        if self.offset + fmt.size > len(self.blob):
            raise CheckpointFormatError(
                '{}: checkpoint ends early'.format(self.source))
        values = fmt.unpack_from(self.blob, self.offset)
        self.offset += fmt.size
        return values

    def array(self, shape):
        count = int(np.prod(shape))
        if self.offset + count * F64.itemsize > len(self.blob):
            raise CheckpointFormatError(
                '{}: checkpoint ends early'.format(self.source))
        values = np.frombuffer(self.blob, dtype=F64, count=count,
                               offset=self.offset)
        self.offset += count * F64.itemsize
        return values.reshape(shape).copy()


def decode_checkpoint(blob, source='<bytes>'):
    """
    Parse checkpoint bytes.

    Returns
    -------
    net: ConvNet
    state: AdamState or None
    """
    reader = _Reader(blob, source)
    magic, version, n_layers, eps_act = reader.unpack(HEADER)
    if magic != MAGIC:
        raise CheckpointFormatError(
            '{}: not a network checkpoint'.format(source))
    if version != VERSION:
        raise CheckpointFormatError(
            '{}: unsupported checkpoint version {}'.format(source, version))
    shapes = [reader.unpack(LAYER) for _ in range(n_layers)]
    layers = []
    for out_ch, in_ch, k, pad_code in shapes:
        if pad_code not in _PAD_MODES:
            raise CheckpointFormatError(
                '{}: unknown pad mode {}'.format(source, pad_code))
        weights = reader.array((out_ch, in_ch, k, k))
        bias = reader.array((out_ch,))
        layers.append(ConvLayer(weights, bias, _PAD_MODES[pad_code]))
    net = ConvNet(layers, eps_act)

    (has_state,) = reader.unpack(FLAG)
    state = None
    if has_state:
        t, rho1, rho2, eta, eps = reader.unpack(ADAM)
        param_shapes = [p.shape for p in net.parameters()]
        m = [reader.array(shape) for shape in param_shapes]
        v = [reader.array(shape) for shape in param_shapes]
        state = AdamState(m, v, t, rho1, rho2, eta, eps)
    if reader.offset != len(blob):
        raise CheckpointFormatError(
            '{}: {} trailing bytes'.format(source, len(blob) - reader.offset))
    return net, state


def save_checkpoint(path, net, state=None):
    blob = encode_checkpoint(net, state)
    with open(path, 'wb') as f:
        f.write(blob)
    return hashlib.sha256(blob).hexdigest()


def load_checkpoint(path):
    with open(path, 'rb') as f:
        blob = f.read()
    return decode_checkpoint(blob, source=str(path))
