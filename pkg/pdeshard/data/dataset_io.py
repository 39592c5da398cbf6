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

# Binary dataset files. Layout, all little-endian:
#
#   offset  size        field
#   0       8           magic b'PDSHDATA'
#   8       4  u32      format version (1)
#   12      4  u32      T, number of frames
#   16      4  u32      h, grid rows
#   20      4  u32      w, grid cols
#   24      8  f64      dt
#   32      T*4*h*w*8   frames, float64, frame-major then channel, row, col
#   ...     4  u32      length L of the metadata block
#   ...     L           metadata, UTF-8 JSON with sorted keys

import hashlib
import json
import logging
import struct

import numpy as np

from pdeshard.data.fields import N_CHANNELS, Dataset
from pdeshard.exceptions import DatasetFormatError, DatasetTruncatedError

MAGIC = b'PDSHDATA'
VERSION = 1
HEADER = struct.Struct('<8sIIIId')
META_LENGTH = struct.Struct('<I')
PAYLOAD_DTYPE = np.dtype('<f8')


def encode_dataset(dataset):
    """Serialise a dataset into the bytes of a dataset file."""
    n_frames, _, h, w = dataset.frames.shape
    meta = json.dumps(dataset.meta, sort_keys=True).encode('utf-8')
    return b''.join([
        HEADER.pack(MAGIC, VERSION, n_frames, h, w, dataset.dt),
        dataset.frames.astype(PAYLOAD_DTYPE, copy=False).tobytes(order='C'),
        META_LENGTH.pack(len(meta)),
        meta,
    ])


def decode_dataset(blob, source='<bytes>'):
    """
    Parse the bytes of a dataset file.

    Parameters
    ----------
    blob: bytes
        Full file contents
    source: str
        Name used in error messages

    Returns
    -------
    dataset: Dataset
    """
    if len(blob) < HEADER.size:
        raise DatasetTruncatedError(
            '{}: {} bytes is shorter than the {} byte header'.format(
                source, len(blob), HEADER.size))
    magic, version, n_frames, h, w, dt = HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise DatasetFormatError(
            '{}: not a dataset file (magic {!r})'.format(source, magic))
    if version != VERSION:
        raise DatasetFormatError(
            '{}: unsupported dataset version {} (expected {})'.format(
                source, version, VERSION))

    count = n_frames * N_CHANNELS * h * w
    payload_end = HEADER.size + count * PAYLOAD_DTYPE.itemsize
    if len(blob) < payload_end + META_LENGTH.size:
        raise DatasetTruncatedError(
            '{}: payload of {} frames of {}x{} needs {} bytes, file has {}'
            .format(source, n_frames, h, w, payload_end + META_LENGTH.size,
                    len(blob)))
    frames = np.frombuffer(blob, dtype=PAYLOAD_DTYPE, count=count,
                           offset=HEADER.size)
    (meta_length,) = META_LENGTH.unpack_from(blob, payload_end)
    meta_start = payload_end + META_LENGTH.size
    if len(blob) < meta_start + meta_length:
        raise DatasetTruncatedError(
            '{}: metadata block is cut short'.format(source))
    meta = json.loads(blob[meta_start:meta_start + meta_length].decode(
        'utf-8'))

    return Dataset(frames.reshape(n_frames, N_CHANNELS, h, w), dt, meta)


def write_dataset(dataset, path):
    """
    Write a dataset file.

    Parameters
    ----------
    dataset: Dataset
        The frames to store
    path: str
        Destination file, overwritten if it exists

    Returns
    -------
    None
    """
    blob = encode_dataset(dataset)
    with open(path, 'wb') as f:
        f.write(blob)
    logging.info('Wrote {} frames of {}x{} to {} ({} bytes)'.format(
        len(dataset), dataset.h, dataset.w, path, len(blob)))


def read_dataset(path):
    """Read a dataset file written by `write_dataset`."""
    with open(path, 'rb') as f:
        blob = f.read()
    dataset = decode_dataset(blob, source=str(path))
    logging.debug('Read {} frames of {}x{} from {}'.format(
        len(dataset), dataset.h, dataset.w, path))
    return dataset


def dataset_digest(dataset):
    """Hex sha256 of the serialised dataset, used to compare reruns."""
    return hashlib.sha256(encode_dataset(dataset)).hexdigest()
