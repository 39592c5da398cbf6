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

# Every error raised on purpose by pdeshard derives from PdeShardError, so the
# command line can report it in one line and exit with a non-zero status.


class PdeShardError(Exception):
    """Root of all pdeshard errors."""


class ConfigurationError(PdeShardError, ValueError):
    """A run parameter or a decomposition is invalid."""


class ShapeMismatchError(PdeShardError, ValueError):
    """Tensor shapes or channel counts do not fit together."""


class OutOfBoundsError(PdeShardError, IndexError):
    """A strict slice reaches past the edge of the grid."""


class DatasetFormatError(PdeShardError):
    """A dataset file has the wrong magic or version."""


class DatasetTruncatedError(DatasetFormatError):
    """A dataset file ends before the payload announced by its header."""


class CheckpointFormatError(PdeShardError):
    """A network checkpoint cannot be decoded."""


class CFLViolationError(PdeShardError):
    """The requested time step is larger than the stable one."""


class NonFiniteStateError(PdeShardError):
    """NaN or Inf showed up in a field.

    Parameters
    ----------
    message: str
        Diagnostic text
    step: int or None
        Time step at which the state was found to be non-finite
    rank: int or None
        Sub-domain that produced the state, when known
    """

    def __init__(self, message, step=None, rank=None):
        super().__init__(message)
        self.step = step
        self.rank = rank

    def __reduce__(self):
        return type(self), (str(self), self.step, self.rank)


class TrainingError(PdeShardError):
    """Training of a sub-domain network failed.

    Parameters
    ----------
    message: str
        Diagnostic text
    rank: int or None
        Sub-domain whose training failed
    batch: int or None
        Index of the batch that produced a non-finite loss
    """

    def __init__(self, message, rank=None, batch=None):
        super().__init__(message)
        self.rank = rank
        self.batch = batch

    def __reduce__(self):
        return type(self), (str(self), self.rank, self.batch)


class ExchangeTimeoutError(PdeShardError):
    """A halo message did not arrive in time."""

    def __init__(self, receiver, sender, direction, step, timeout):
        super().__init__(
            'Rank {} waited {:.1f}s for the {} halo from rank {} at step {}'
            .format(receiver, timeout, direction, sender, step))
        self.receiver = receiver
        self.sender = sender
        self.direction = direction
        self.step = step
        self.timeout = timeout

    def __reduce__(self):
        return type(self), (self.receiver, self.sender, self.direction,
                            self.step, self.timeout)


class StageError(PdeShardError):
    """An experiment stage failed; artifacts written so far are kept."""

    def __init__(self, stage, message):
        super().__init__('Stage {!r} failed: {}'.format(stage, message))
        self.stage = stage
        self.message = message

    def __reduce__(self):
        return type(self), (self.stage, self.message)
