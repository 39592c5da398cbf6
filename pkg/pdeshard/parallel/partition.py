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

# Geometry of the px x py decomposition of the global grid: core regions,
# halo widths, the 8-neighbourhood of every sub-domain, and the maps between
# the global tensor and the per-rank tensors.
#
# Ranks are numbered row-major. Direction N is the side of row 0, W the side
# of column 0.

import enum
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from pdeshard.data.fields import DTYPE, OutOfBoundsPolicy, as_tensor3, \
    slice_region
from pdeshard.exceptions import ConfigurationError, ShapeMismatchError
from pdeshard.models.neural import KERNEL_SIZE, LAYER_CHANNELS, PadMode

OFFSETS = {
    'N': (-1, 0), 'S': (1, 0), 'E': (0, 1), 'W': (0, -1),
    'NE': (-1, 1), 'NW': (-1, -1), 'SE': (1, 1), 'SW': (1, -1),
}
DIRECTIONS = tuple(OFFSETS)
MIRROR = {'N': 'S', 'S': 'N', 'E': 'W', 'W': 'E',
          'NE': 'SW', 'SW': 'NE', 'NW': 'SE', 'SE': 'NW'}
# Marks a side that lies on the physical domain edge.
BOUNDARY = None


class PaddingStrategy(enum.Enum):
    """
    How sub-domain inputs are padded.

    ZERO_INNER: inputs overlap the neighbours by the reach of the first layer,
        which runs Valid; the inner layers pad with zeros.
    EXACT_HALO: inputs carry neighbour data for every layer; all layers run
        Valid, so the halo is the summed reach of the whole network.
    """
    ZERO_INNER = 'zero-inner'
    EXACT_HALO = 'exact-halo'

    def pad_modes(self, n_layers):
        if self is PaddingStrategy.ZERO_INNER:
            return [PadMode.VALID] + [PadMode.ZERO_SAME] * (n_layers - 1)
        return [PadMode.VALID] * n_layers

    def halo_for(self, net):
        """Halo width in cells per side for the layers of `net`."""
        reaches = [layer.reach for layer in net.layers]
        if self is PaddingStrategy.ZERO_INNER:
            return reaches[0]
        return sum(reaches)

    @property
    def halo(self):
        """Halo width for the default four layer network."""
        reach = (KERNEL_SIZE - 1) // 2
        if self is PaddingStrategy.ZERO_INNER:
            return reach
        return reach * (len(LAYER_CHANNELS) - 1)


@dataclass(frozen=True)
class SubdomainSpec:
    """
    One rank's share of the grid.

    Parameters
    ----------
    rank: int
    row0, col0: int
        Top-left cell of the core in global coordinates
    rows, cols: int
        Core size
    neighbors: dict(str, int or None)
        Direction to neighbouring rank, BOUNDARY on a domain edge
    """
    rank: int
    row0: int
    col0: int
    rows: int
    cols: int
    neighbors: Dict[str, Optional[int]] = field(hash=False)

    @property
    def core(self):
        return self.row0, self.col0, self.rows, self.cols

    def neighbor_ranks(self):
        """(direction, rank) for every side that is not a domain edge."""
        return [(d, self.neighbors[d]) for d in DIRECTIONS
                if self.neighbors[d] is not BOUNDARY]


@dataclass(frozen=True)
class Partition:
    global_h: int
    global_w: int
    px: int
    py: int
    strategy: PaddingStrategy
    halo: int
    ranks: Tuple[SubdomainSpec, ...]

    @property
    def size(self):
        return len(self.ranks)

    @property
    def core_shape(self):
        return self.global_h // self.py, self.global_w // self.px

    def message_count(self):
        """Directed halo messages per inference step."""
        if self.halo == 0:
            return 0
        return sum(len(spec.neighbor_ranks()) for spec in self.ranks)

    def to_dict(self):
        return {
            'global_h': self.global_h, 'global_w': self.global_w,
            'px': self.px, 'py': self.py, 'strategy': self.strategy.value,
            'halo': self.halo,
            'ranks': [{'rank': s.rank, 'core': list(s.core),
                       'neighbors': dict(s.neighbors)} for s in self.ranks],
        }

    @classmethod
    def from_dict(cls, mapping):
        return make_partition(mapping['global_h'], mapping['global_w'],
                              mapping['px'], mapping['py'],
                              PaddingStrategy(mapping['strategy']),
                              halo=mapping['halo'])


def _divisors(n):
    return [d for d in range(1, n + 1) if n % d == 0]


def make_partition(global_h, global_w, px, py, strategy, halo=None):
    """
    Decompose a global_h x global_w grid into px x py equal cores.

    Parameters
    ----------
    global_h, global_w: int
        Grid rows and columns
    px, py: int
        Sub-domains along columns (x) and rows (y)
    strategy: PaddingStrategy
    halo: int or None
        Cells per side; defaults to strategy.halo

    Returns
    -------
    partition: Partition
    """
    strategy = PaddingStrategy(strategy)
    if px < 1 or py < 1:
        raise ConfigurationError(
            'px and py must be >= 1, got {}x{}'.format(px, py))
    if global_w % px or global_h % py:
        raise ConfigurationError(
            'A {}x{} grid cannot be split into {}x{} equal cores; valid px: '
            '{}, valid py: {}'.format(global_h, global_w, px, py,
                                      _divisors(global_w),
                                      _divisors(global_h)))
    halo = strategy.halo if halo is None else int(halo)
    rows, cols = global_h // py, global_w // px

    specs = []
    for j in range(py):
        for i in range(px):
            neighbors = {}
            for direction, (dj, di) in OFFSETS.items():
                nj, ni = j + dj, i + di
                inside = 0 <= nj < py and 0 <= ni < px
                neighbors[direction] = nj * px + ni if inside else BOUNDARY
            specs.append(SubdomainSpec(j * px + i, j * rows, i * cols, rows,
                                       cols, neighbors))
    return Partition(global_h, global_w, px, py, strategy, halo, tuple(specs))


def _check_global(tensor, spec):
    if tensor.shape[1] < spec.row0 + spec.rows or \
            tensor.shape[2] < spec.col0 + spec.cols:
        raise ShapeMismatchError(
            'Rank {} core {} does not fit a tensor of shape {}'.format(
                spec.rank, spec.core, tensor.shape))


def extract_input(tensor, spec, halo=None, strategy=None):
    """
    Core of `spec` grown by `halo` cells per side, cut from the global tensor.

    Cells past the physical boundary are zero; cells in neighbouring cores are
    copied. This is the training-time view, where the whole frame is in
    memory. Without `halo` the width is `strategy.halo`.
    """
    if halo is None:
        halo = PaddingStrategy(strategy).halo
    tensor = as_tensor3(tensor)
    _check_global(tensor, spec)
    return slice_region(tensor, spec.row0 - halo, spec.col0 - halo,
                        spec.rows + 2 * halo, spec.cols + 2 * halo,
                        OutOfBoundsPolicy.ZERO_FILL)


def core_slice(tensor, spec):
    tensor = as_tensor3(tensor)
    _check_global(tensor, spec)
    return tensor[:, spec.row0:spec.row0 + spec.rows,
                  spec.col0:spec.col0 + spec.cols].copy()


def split(tensor, partition):
    """Core tensor of every rank, keyed by rank."""
    return {spec.rank: core_slice(tensor, spec) for spec in partition.ranks}


def _strip_slices(direction, halo):
    row_slice = {'N': slice(0, halo), 'S': slice(-halo, None)}.get(
        direction[0], slice(None))
    col_slice = {'W': slice(0, halo), 'E': slice(-halo, None)}.get(
        direction[-1], slice(None))
    return row_slice, col_slice


def halo_strips(t_local, halo):
    """
    The eight border strips a rank sends to its neighbours.

    Parameters
    ----------
    t_local: np.ndarray
        Core-sized tensor (c, rows, cols)
    halo: int
        Strip width, at most min(rows, cols)

    Returns
    -------
    strips: dict(str, np.ndarray)
        Edge strips are halo x cols (N, S) or rows x halo (E, W); corner
        strips are halo x halo. Empty when halo is 0.
    """
    t_local = as_tensor3(t_local)
    rows, cols = t_local.shape[1:]
    if halo > min(rows, cols):
        raise ShapeMismatchError(
            'Halo of {} cells exceeds the {}x{} core'.format(halo, rows, cols))
    if halo == 0:
        return {}
    strips = {}
    for direction in DIRECTIONS:
        row_slice, col_slice = _strip_slices(direction, halo)
        strips[direction] = t_local[:, row_slice, col_slice].copy()
    return strips


def halo_slot(direction, rows, cols, halo):
    """Where the halo received from `direction` sits in the extended input."""
    row_slice = {'N': slice(0, halo),
                 'S': slice(halo + rows, rows + 2 * halo)}.get(
        direction[0], slice(halo, halo + rows))
    col_slice = {'W': slice(0, halo),
                 'E': slice(halo + cols, cols + 2 * halo)}.get(
        direction[-1], slice(halo, halo + cols))
    return row_slice, col_slice


def extend_with_halos(core, received, halo):
    """
    Build a rank's halo-extended input from its core and neighbour strips.

    Parameters
    ----------
    core: np.ndarray
        The rank's own tensor (c, rows, cols)
    received: dict(str, np.ndarray)
        Strip from the neighbour lying in each direction; missing directions
        (domain edges) stay zero
    halo: int

    Returns
    -------
    extended: np.ndarray
        Tensor (c, rows + 2 halo, cols + 2 halo)
    """
    core = as_tensor3(core)
    c, rows, cols = core.shape
    extended = np.zeros((c, rows + 2 * halo, cols + 2 * halo), dtype=DTYPE)
    extended[:, halo:halo + rows, halo:halo + cols] = core
    for direction, strip in received.items():
        row_slice, col_slice = halo_slot(direction, rows, cols, halo)
        target = extended[:, row_slice, col_slice]
        if strip.shape != target.shape:
            raise ShapeMismatchError(
                'Halo from {} has shape {}, slot is {}'.format(
                    direction, strip.shape, target.shape))
        extended[:, row_slice, col_slice] = strip
    return extended


def assemble(outputs, partition):
    """
    Place every rank's core tensor into one global tensor.

    Parameters
    ----------
    outputs: dict(int, np.ndarray)
        Core-sized tensor per rank
    partition: Partition

    Returns
    -------
    tensor: np.ndarray
        (c, global_h, global_w)
    """
    missing = [s.rank for s in partition.ranks if s.rank not in outputs]
    if missing:
        raise ShapeMismatchError('No output for ranks {}'.format(missing))
    channels = as_tensor3(outputs[partition.ranks[0].rank]).shape[0]
    result = np.zeros((channels, partition.global_h, partition.global_w),
                      dtype=DTYPE)
    for spec in partition.ranks:
        block = as_tensor3(outputs[spec.rank])
        if block.shape != (channels, spec.rows, spec.cols):
            raise ShapeMismatchError(
                'Rank {} output has shape {}, expected {}'.format(
                    spec.rank, block.shape, (channels, spec.rows, spec.cols)))
        result[:, spec.row0:spec.row0 + spec.rows,
               spec.col0:spec.col0 + spec.cols] = block
    return result
