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

import contextlib
import logging
import time


class PhaseTimer:
    """
    Wall-clock seconds per named phase of a run.

    Examples
    --------
    >>> timer = PhaseTimer()
    >>> with timer.phase('shard'):
    ...     pass
    >>> sorted(timer.seconds)
    ['shard']
    """

    def __init__(self):
        self.seconds = {}

    @contextlib.contextmanager
    def phase(self, name):
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            self.seconds[name] = self.seconds.get(name, 0.0) + elapsed
            logging.debug('Phase {} took {:.3f}s'.format(name, elapsed))

    def __getitem__(self, name):
        return self.seconds[name]
