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

# In-memory data model shared by the solver, the networks and the parallel
# engines. A field tensor is a float64 numpy array shaped (channels, rows,
# cols); a Snapshot is one solver frame and a Dataset an ordered run of them.

import enum
from dataclasses import dataclass, field
from typing import Any, Dict

import numpy as np

from pdeshard.exceptions import (
    NonFiniteStateError, OutOfBoundsError, ShapeMismatchError)

# Fixed channel order of every snapshot, tensor and file in the package.
CHANNELS = ('rho', 'ux', 'uy', 'p')
N_CHANNELS = len(CHANNELS)

DTYPE = np.float64


class OutOfBoundsPolicy(enum.Enum):
    ZERO_FILL = 'zero-fill'
    STRICT = 'strict'


def as_tensor3(data, copy=False):
    """
    Coerce `data` into a C x H x W float64 tensor.

    Parameters
    ----------
    data: array-like
        Three dimensional data
    copy: bool, default False
        Always return a fresh array

    Returns
    -------
    tensor: np.ndarray
        C-contiguous float64 array with three dimensions
    """
    if copy:
        tensor = np.array(data, dtype=DTYPE, order='C')
    else:
        tensor = np.ascontiguousarray(data, dtype=DTYPE)
    if tensor.ndim != 3:
        raise ShapeMismatchError(
            'Expected a 3-d tensor (c, h, w), got shape {}'.format(
                tensor.shape))
    return tensor


def _frozen(array):
    array = np.ascontiguousarray(array, dtype=DTYPE)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Snapshot:
    """
    One solver frame: the perturbations [rho', ux', uy', p'] on an h x w grid.

    Parameters
    ----------
    data: np.ndarray
        Array of shape (4, h, w) in CHANNELS order. Stored read-only.
    """
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=DTYPE)
        if data.ndim != 3 or data.shape[0] != N_CHANNELS:
            raise ShapeMismatchError(
                'A snapshot needs {} channels of equal shape, got {}'.format(
                    N_CHANNELS, data.shape))
        if not np.all(np.isfinite(data)):
            raise NonFiniteStateError('Snapshot contains NaN or Inf values')
        object.__setattr__(self, 'data', _frozen(data))

    @property
    def h(self):
        return self.data.shape[1]

    @property
    def w(self):
        return self.data.shape[2]

    def channel(self, name):
        return self.data[CHANNELS.index(name)]

    @classmethod
    def from_channels(cls, rho, ux, uy, p):
        return cls(np.stack([rho, ux, uy, p]))


@dataclass(frozen=True)
class Dataset:
    """
    Ordered frames of one simulation (or of one rollout).

    Parameters
    ----------
    frames: np.ndarray
        Array of shape (T, 4, h, w), frame t at index t. A C-contiguous
        float64 array is adopted without a copy and made read-only, so the
        caller's array stops being writable; copy it first to keep it so.
    dt: float
        Time between consecutive frames
    meta: dict
        JSON-serialisable provenance, e.g. the solver configuration
    """
    frames: np.ndarray
    dt: float
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        # Frames are adopted without a copy; the array becomes read-only.
        frames = np.ascontiguousarray(self.frames, dtype=DTYPE)
        if frames.ndim != 4 or frames.shape[1] != N_CHANNELS:
            raise ShapeMismatchError(
                'Dataset frames must be shaped (T, {}, h, w), got {}'.format(
                    N_CHANNELS, frames.shape))
        if frames.shape[0] < 1:
            raise ShapeMismatchError('A dataset needs at least one frame')
        frames.setflags(write=False)
        object.__setattr__(self, 'frames', frames)
        object.__setattr__(self, 'dt', float(self.dt))
        object.__setattr__(self, 'meta', dict(self.meta))

    def __len__(self):
        return self.frames.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.frames.shape == other.frames.shape
                and self.frames.tobytes() == other.frames.tobytes()
                and self.dt == other.dt and self.meta == other.meta)

    @property
    def h(self):
        return self.frames.shape[2]

    @property
    def w(self):
        return self.frames.shape[3]

    def snapshot(self, t):
        return Snapshot(self.frames[t])

    def tensor(self, t):
        """Frame `t` as a read-only tensor, without copying."""
        return self.frames[t]

    @property
    def pair_count(self):
        return len(self) - 1

    @classmethod
    def from_snapshots(cls, snapshots, dt, meta=None):
        return cls(np.stack([s.data for s in snapshots]), dt, meta or {})


def snapshot_to_tensor(snapshot):
    """Copy a snapshot into a writable 4 x h x w tensor."""
    return np.array(snapshot.data, dtype=DTYPE, copy=True)


def tensor_to_snapshot(tensor):
    """Inverse of `snapshot_to_tensor`; the tensor must have 4 channels."""
    return Snapshot(as_tensor3(tensor, copy=True))


def slice_region(tensor, row0, col0, rows, cols,
                 fill=OutOfBoundsPolicy.ZERO_FILL):
    """
    Cut a rows x cols window starting at (row0, col0) out of a tensor.

    The window may hang over the grid edges; those cells are 0.0 when `fill`
    is ZERO_FILL and raise OutOfBoundsError when it is STRICT.

    Parameters
    ----------
    tensor: np.ndarray
        c x h x w tensor
    row0, col0: int
        Top-left corner of the window, may be negative
    rows, cols: int
        Window size, at least 1
    fill: OutOfBoundsPolicy
        What to do with cells outside the grid

    Returns
    -------
    window: np.ndarray
        New c x rows x cols tensor
    """
    tensor = as_tensor3(tensor)
    if rows < 1 or cols < 1:
        raise ShapeMismatchError(
            'Region must be at least 1x1, got {}x{}'.format(rows, cols))
    c, h, w = tensor.shape
    r_lo, r_hi = max(row0, 0), min(row0 + rows, h)
    c_lo, c_hi = max(col0, 0), min(col0 + cols, w)
    inside = (r_lo == row0 and c_lo == col0
              and r_hi == row0 + rows and c_hi == col0 + cols)
    if inside:
        return tensor[:, row0:row0 + rows, col0:col0 + cols].copy()
    if OutOfBoundsPolicy(fill) is OutOfBoundsPolicy.STRICT:
        raise OutOfBoundsError(
            'Region rows [{}, {}) cols [{}, {}) leaves the {}x{} grid'.format(
                row0, row0 + rows, col0, col0 + cols, h, w))

    window = np.zeros((c, rows, cols), dtype=DTYPE)
    if r_lo < r_hi and c_lo < c_hi:
        window[:, r_lo - row0:r_hi - row0, c_lo - col0:c_hi - col0] = \
            tensor[:, r_lo:r_hi, c_lo:c_hi]
    return window
