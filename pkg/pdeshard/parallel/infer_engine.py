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

# Parallel rollout. Each rank predicts its core at t + 1 from its core at t
# and the halo strips of its neighbours, then the predictions become the next
# inputs. Steps are bulk-synchronous: a rank computes step s only once it has
# every neighbour strip of step s.
#
# Two backends run the same per-rank code: 'inline' steps all ranks in the
# calling process, 'process' gives every rank its own process with a
# multiprocessing inbox. In both, strips go straight from sender to receiver.
#
# With EXACT_HALO the assembled prediction equals the monolithic network run
# with Valid layers on the zero-padded global field (`predict_exact_reference`).
# The ZeroSame network of `predict_monolithic` only agrees with it away from
# the physical edges: within the summed reach of an edge the first layer sees
# real data in the pad band where ZeroSame feeds zeros to the later layers.
#
# With ZERO_INNER the inner layers pad with zeros at rank seams, so the result
# only approximates the monolithic ZeroSame network there; at 1x1 both
# coincide.

import logging
import queue
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from pdeshard.config import config_from_mapping, config_to_dict
from pdeshard.data.fields import CHANNELS, DTYPE, Dataset, Snapshot, \
    as_tensor3
from pdeshard.exceptions import ConfigurationError, NonFiniteStateError, \
    PdeShardError, ShapeMismatchError
from pdeshard.models.neural import MAPE_DELTA, PadMode, forward_pass, \
    mape_loss, net_forward
from pdeshard.parallel.exchange import DEFAULT_TIMEOUT, ExchangeLedger, \
    HaloExchanger
from pdeshard.parallel.partition import PaddingStrategy, assemble, \
    extend_with_halos, halo_strips, split
from pdeshard.parallel.workers import single_threaded_children, \
    spawn_context

METRIC_COLUMNS = ['step', 'channel', 'mape_percent', 'max_abs_err']
BACKENDS = ('inline', 'process')


@dataclass(frozen=True)
class RolloutConfig:
    """
    Parameters
    ----------
    steps: int, default 10
        Number of predicted steps; 0 returns the initial frame only
    strategy: PaddingStrategy or None
        Defaults to the partition's strategy
    record_every: int, default 1
        Keep every n-th predicted frame
    backend: str, default 'inline'
        'inline' or 'process'
    timeout: float, default DEFAULT_TIMEOUT
        Seconds a rank waits for one neighbour strip
    """
    steps: int = 10
    strategy: Optional[PaddingStrategy] = None
    record_every: int = 1
    backend: str = 'inline'
    timeout: float = DEFAULT_TIMEOUT

    def validate(self):
        if self.steps < 0:
            raise ConfigurationError('steps must be >= 0')
        if self.record_every < 1:
            raise ConfigurationError('record_every must be >= 1')
        if self.backend not in BACKENDS:
            raise ConfigurationError('backend must be one of {}'.format(
                BACKENDS))
        if self.timeout <= 0:
            raise ConfigurationError('timeout must be > 0')
        return self

    def to_dict(self):
        return config_to_dict(self)

    @classmethod
    def from_dict(cls, mapping):
        return config_from_mapping(cls, mapping)


def _strategy(partition, strategy):
    return PaddingStrategy(strategy or partition.strategy)


def _check_nets(nets, partition, strategy):
    for spec in partition.ranks:
        if spec.rank not in nets:
            raise ShapeMismatchError('No network for rank {}'.format(
                spec.rank))
        halo = strategy.halo_for(nets[spec.rank])
        if halo != partition.halo:
            raise ShapeMismatchError(
                'Rank {} network needs a halo of {} under {}, the partition '
                'has {}'.format(spec.rank, halo, strategy.value,
                                partition.halo))


def _predict_rank(spec, core, received, net, strategy, halo):
    extended = extend_with_halos(core, received, halo)
    return net_forward(extended, net, strategy, (spec.rows, spec.cols))


def _check_finite(state, step, rank):
    if not np.all(np.isfinite(state)):
        raise NonFiniteStateError(
            'Rank {} produced NaN/Inf at step {}'.format(rank, step),
            step=step, rank=rank)


def predict_step_parallel(states, nets, partition, strategy=None, step=1,
                          timeout=DEFAULT_TIMEOUT):
    """
    One parallel prediction step of every rank, in this process.

    Every rank sends its border strips to its neighbours' inboxes, collects
    the strips addressed to it, builds its halo-extended input and runs its
    network.

    Parameters
    ----------
    states: dict(int, np.ndarray)
        Core tensor of every rank at time t
    nets: dict(int, ConvNet)
    partition: Partition
    strategy: PaddingStrategy or None
        Defaults to partition.strategy
    step: int, default 1
        Label of the step in the ledger
    timeout: float
        Bounded wait per neighbour strip

    Returns
    -------
    states: dict(int, np.ndarray)
        Core tensor of every rank at time t + 1
    entries: list(LedgerEntry)
        Messages sent during the step
    """
    strategy = _strategy(partition, strategy)
    _check_nets(nets, partition, strategy)
    inboxes = {spec.rank: queue.Queue() for spec in partition.ranks}
    exchangers = {
        spec.rank: HaloExchanger(
            spec, inboxes[spec.rank],
            {nb: inboxes[nb] for _, nb in spec.neighbor_ranks()}, timeout)
        for spec in partition.ranks}

    entries = []
    for spec in partition.ranks:
        entries.extend(exchangers[spec.rank].send(
            step, halo_strips(states[spec.rank], partition.halo)))
    new_states = {}
    for spec in partition.ranks:
        received = exchangers[spec.rank].receive(step, partition.halo > 0)
        new_states[spec.rank] = _predict_rank(
            spec, as_tensor3(states[spec.rank]), received, nets[spec.rank],
            strategy, partition.halo)
        _check_finite(new_states[spec.rank], step, spec.rank)
    return new_states, entries


def _rollout_inline(states, nets, partition, strategy, cfg, ledger):
    recorded = []
    for step in range(1, cfg.steps + 1):
        states, entries = predict_step_parallel(
            states, nets, partition, strategy, step, cfg.timeout)
        ledger.record(entries)
        if step % cfg.record_every == 0:
            recorded.append(assemble(states, partition))
        logging.debug('Rollout step {}/{}'.format(step, cfg.steps))
    return recorded


def _rank_process(spec, core, net, strategy, halo, cfg, inbox, outboxes,
                  results, log_level):
    """Body of one rank's process in the 'process' backend."""
    logging.getLogger().setLevel(log_level)
    exchanger = HaloExchanger(spec, inbox, outboxes, cfg.timeout)
    entries = []
    try:
        for step in range(1, cfg.steps + 1):
            entries.extend(exchanger.send(step, halo_strips(core, halo)))
            received = exchanger.receive(step, halo > 0)
            core = _predict_rank(spec, core, received, net, strategy, halo)
            _check_finite(core, step, spec.rank)
            if step % cfg.record_every == 0:
                results.put(('frame', spec.rank, step, core))
    except PdeShardError as e:
        results.put(('error', spec.rank, e))
        return
    results.put(('done', spec.rank, entries))


def _rollout_processes(states, nets, partition, strategy, cfg, ledger):
    ctx = spawn_context()
    inboxes = {spec.rank: ctx.Queue() for spec in partition.ranks}
    results = ctx.Queue()
    log_level = logging.getLogger().getEffectiveLevel()
    processes = []
    with single_threaded_children():
        for spec in partition.ranks:
            outboxes = {nb: inboxes[nb] for _, nb in spec.neighbor_ranks()}
            process = ctx.Process(
                target=_rank_process,
                args=(spec, states[spec.rank], nets[spec.rank], strategy,
                      partition.halo, cfg, inboxes[spec.rank], outboxes,
                      results, log_level),
                name='rank-{}'.format(spec.rank), daemon=True)
            process.start()
            processes.append(process)

    frames = {}
    done = set()
    wait = cfg.timeout * (cfg.steps + 2)
    try:
        while len(done) < partition.size:
            try:
                message = results.get(timeout=wait)
            except queue.Empty:
                raise PdeShardError(
                    'No word from the rank processes for {} s'.format(wait))
            kind, rank = message[0], message[1]
            if kind == 'frame':
                frames.setdefault(message[2], {})[rank] = message[3]
            elif kind == 'done':
                ledger.record(message[2])
                done.add(rank)
            else:
                raise message[2]
    finally:
        for process in processes:
            if len(done) < partition.size:
                process.terminate()
            process.join()
    return [assemble(frames[step], partition) for step in sorted(frames)]


def rollout(initial, nets, partition, cfg, dt=1.0, meta=None):
    """
    Autoregressive multi-step prediction over the decomposed grid.

    Parameters
    ----------
    initial: Snapshot
        Global state at the first step
    nets: dict(int, ConvNet)
        Network of every rank
    partition: Partition
    cfg: RolloutConfig
    dt: float, default 1.0
        Time between two predicted steps
    meta: dict or None
        Extra provenance stored in the result

    Returns
    -------
    dataset: Dataset
        Frame 0 is `initial`, then every cfg.record_every-th prediction.
        meta['ledger_messages'] counts the halo messages sent.
    ledger: ExchangeLedger
    """
    cfg.validate()
    strategy = _strategy(partition, cfg.strategy)
    _check_nets(nets, partition, strategy)
    tensor = initial.data
    if tensor.shape[1:] != (partition.global_h, partition.global_w):
        raise ShapeMismatchError(
            'Initial state {} does not match the {}x{} partition'.format(
                tensor.shape, partition.global_h, partition.global_w))

    ledger = ExchangeLedger()
    states = split(tensor, partition)
    logging.info('Rolling out {} steps on {} ranks ({} backend)'.format(
        cfg.steps, partition.size, cfg.backend))
    run = _rollout_processes if cfg.backend == 'process' and \
        partition.size > 1 and cfg.steps > 0 else _rollout_inline
    recorded = run(states, nets, partition, strategy, cfg, ledger)

    ledger = ledger.sorted()
    ledger.log_summary()
    info = dict(meta or {})
    info.update({'source': 'rollout', 'steps': cfg.steps,
                 'record_every': cfg.record_every,
                 'strategy': strategy.value,
                 'ledger_messages': len(ledger)})
    frames = np.stack([np.array(tensor, dtype=DTYPE)] + recorded)
    return Dataset(frames, dt * cfg.record_every, info), ledger


def predict_monolithic(x, net):
    """
    Run one network on the whole grid with zero padding in every layer.

    Parameters
    ----------
    x: Snapshot
    net: ConvNet

    Returns
    -------
    snapshot: Snapshot
        Prediction on the same grid
    """
    out, _ = forward_pass(x.data, net, [PadMode.ZERO_SAME] * len(net.layers))
    if out.shape != x.data.shape:
        raise ShapeMismatchError(
            'Network maps {} to {}'.format(x.data.shape, out.shape))
    return Snapshot(out)


def predict_exact_reference(tensor, net):
    """
    Monolithic counterpart of EXACT_HALO: zero-pad the global field by the
    network's summed reach, then run every layer Valid.
    """
    tensor = as_tensor3(tensor)
    halo = PaddingStrategy.EXACT_HALO.halo_for(net)
    padded = np.pad(tensor, ((0, 0), (halo, halo), (halo, halo)))
    return net_forward(padded, net, PaddingStrategy.EXACT_HALO,
                       tensor.shape[1:])


def rollout_truth(truth, start, steps, record_every=1):
    """Frames of `truth` aligned with a rollout started at frame `start`."""
    index = list(range(start, start + steps + 1, record_every))
    if index[-1] >= len(truth):
        raise ConfigurationError(
            'Truth has {} frames, rollout needs frame {}'.format(
                len(truth), index[-1]))
    return Dataset(truth.frames[index], truth.dt * record_every,
                   dict(truth.meta))


def evaluate(pred, truth, delta=MAPE_DELTA):
    """
    Per-frame, per-channel error of a prediction against the truth.

    Parameters
    ----------
    pred, truth: Dataset
        Same frame count and grid
    delta: float, default MAPE_DELTA

    Returns
    -------
    metrics: pd.DataFrame
        Columns METRIC_COLUMNS; `step` counts predicted steps, i.e. frame
        index times pred.meta['record_every'] (1 when absent)
    """
    if pred.frames.shape != truth.frames.shape:
        raise ShapeMismatchError(
            'Prediction {} and truth {} differ in shape'.format(
                pred.frames.shape, truth.frames.shape))
    stride = int(pred.meta.get('record_every', 1))
    rows = []
    for index in range(len(pred)):
        for c, name in enumerate(CHANNELS):
            p, t = pred.frames[index, c], truth.frames[index, c]
            mape, _ = mape_loss(p, t, delta)
            rows.append((index * stride, name, mape,
                         float(np.max(np.abs(p - t)))))
    return pd.DataFrame(rows, columns=METRIC_COLUMNS)
