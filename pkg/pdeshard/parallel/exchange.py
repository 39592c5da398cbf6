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

# Point-to-point halo exchange between ranks. Every rank owns an inbox; a
# sender puts its strip straight into the receiving neighbour's inbox. There
# is no broadcast or reduction here: the only way field data moves between
# ranks is `HaloExchanger.send`, which also counts every message.

import logging
import queue
from collections import namedtuple

import pandas as pd

from pdeshard.exceptions import ExchangeTimeoutError
from pdeshard.parallel.partition import DIRECTIONS, MIRROR

DEFAULT_TIMEOUT = 30.0
LEDGER_COLUMNS = ['step', 'sender', 'receiver', 'direction', 'cells', 'bytes']

HaloMessage = namedtuple('HaloMessage',
                         ['step', 'sender', 'receiver', 'direction', 'strip'])
LedgerEntry = namedtuple('LedgerEntry', LEDGER_COLUMNS)

# Rank-to-rank messages sent from this process.
_messages_sent = 0


def messages_sent():
    """Number of halo messages this process has sent so far."""
    return _messages_sent


class HaloExchanger:
    """
    One rank's end of the halo exchange.

    Parameters
    ----------
    spec: SubdomainSpec
        The rank's geometry and neighbours
    inbox: queue.Queue or multiprocessing.Queue
        Where neighbours deliver strips for this rank
    outboxes: dict(int, queue)
        Inbox of every neighbouring rank
    timeout: float, default DEFAULT_TIMEOUT
        Seconds to wait for one neighbour strip before giving up
    """

    def __init__(self, spec, inbox, outboxes, timeout=DEFAULT_TIMEOUT):
        self.spec = spec
        self.inbox = inbox
        self.outboxes = outboxes
        self.timeout = timeout
        self._early = {}

    @property
    def rank(self):
        return self.spec.rank

    def send(self, step, strips):
        """
        Deliver the strip facing each neighbour.

        Parameters
        ----------
        step: int
            Step the strips belong to
        strips: dict(str, np.ndarray)
            Output of `halo_strips`; empty when there is no halo

        Returns
        -------
        entries: list(LedgerEntry)
        """
        global _messages_sent
        entries = []
        if not strips:
            return entries
        for direction, neighbor in self.spec.neighbor_ranks():
            strip = strips[direction]
            self.outboxes[neighbor].put(
                HaloMessage(step, self.rank, neighbor, direction, strip))
            _messages_sent += 1
            entries.append(LedgerEntry(step, self.rank, neighbor, direction,
                                       strip.shape[1] * strip.shape[2],
                                       strip.nbytes))
        return entries

    def receive(self, step, expect_strips=True):
        """
        Collect this step's strip from every neighbour.

        Returns
        -------
        received: dict(str, np.ndarray)
            Strip keyed by the direction of the neighbour that sent it
        """
        if not expect_strips:
            return {}
        expected = {(neighbor, MIRROR[direction]): direction
                    for direction, neighbor in self.spec.neighbor_ranks()}
        received = {}
        for key in list(expected):
            strip = self._early.pop((step,) + key, None)
            if strip is not None:
                received[expected.pop(key)] = strip

        while expected:
            try:
                message = self.inbox.get(timeout=self.timeout)
            except queue.Empty:
                (sender, _), direction = sorted(expected.items())[0]
                raise ExchangeTimeoutError(self.rank, sender, direction, step,
                                           self.timeout)
            key = (message.sender, message.direction)
            if message.step == step and key in expected:
                received[expected.pop(key)] = message.strip
            else:
                # a neighbour can run at most one step ahead
                self._early[(message.step,) + key] = message.strip
        return received


class ExchangeLedger:
    """Record of every halo message, step by step."""

    def __init__(self, entries=()):
        self.entries = list(entries)

    def record(self, entries):
        self.entries.extend(entries)

    def sorted(self):
        order = {d: i for i, d in enumerate(DIRECTIONS)}
        return ExchangeLedger(sorted(
            self.entries, key=lambda e: (e.step, e.sender, order[e.direction])))

    def __len__(self):
        return len(self.entries)

    def per_step_counts(self):
        counts = {}
        for entry in self.entries:
            counts[entry.step] = counts.get(entry.step, 0) + 1
        return counts

    def bytes_sent(self, sender, receiver, direction):
        return sum(e.bytes for e in self.entries
                   if (e.sender, e.receiver, e.direction)
                   == (sender, receiver, direction))

    def to_frame(self):
        return pd.DataFrame(self.entries, columns=LEDGER_COLUMNS)

    def log_summary(self):
        counts = self.per_step_counts()
        logging.info('Halo exchange: {} messages over {} steps'.format(
            len(self.entries), len(counts)))
