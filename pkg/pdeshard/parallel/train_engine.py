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

# Communication-free parallel training. Every sub-domain gets its own network,
# optimiser, loss and data shard, and is trained in a worker process without
# talking to any other rank:
#
#   1. split every frame into the ranks' halo-extended windows
#   2. feed each rank's windows to the rank's own network
#   3. train the ranks in a process pool, ranks assigned round-robin
#   4. one MAPE loss and one ADAM optimiser per rank
#   5. each network later predicts only its own core

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from pdeshard.config import config_from_mapping, config_to_dict, \
    resolve_workers
from pdeshard.exceptions import ConfigurationError, PdeShardError, \
    TrainingError
from pdeshard.models.checkpoint import load_checkpoint, save_checkpoint
from pdeshard.models.neural import MAPE_DELTA, Gradients, init_network, \
    loss_and_gradients, mape_loss, net_forward
from pdeshard.models.optim import DEFAULT_EPS, DEFAULT_ETA, DEFAULT_RHO1, \
    DEFAULT_RHO2, AdamState, adam_step
from pdeshard.parallel import exchange
from pdeshard.parallel.partition import PaddingStrategy, Partition, \
    core_slice, extract_input, make_partition
from pdeshard.parallel.workers import oversubscribed, \
    single_threaded_children, spawn_context
from pdeshard.timing import PhaseTimer

LOSS_COLUMNS = ['rank', 'epoch', 'loss']
TIMING_COLUMNS = ['rank', 'worker', 'seconds', 'samples', 'oversubscribed']
VALIDATION_COLUMNS = ['rank', 'untrained_mape', 'trained_mape']


@dataclass(frozen=True)
class TrainConfig:
    """
    Parameters of a training run.

    Parameters
    ----------
    epochs: int, default 50
    batch_size: int, default 32
        Samples per gradient step; the batch gradient is the mean
    train_range, val_range: tuple(int, int) or None
        Half-open ranges [a, b) of input frames; frame t is paired with
        t + 1. None splits the dataset 2:1.
    seed: int, default 0
        Rank r uses seed ^ r for its initial weights and its shuffling
    strategy: PaddingStrategy, default ZERO_INNER
    eta, rho1, rho2, eps: float
        ADAM hyper-parameters
    delta: float, default MAPE_DELTA
        MAPE denominator regulariser
    px, py: int, default 1
        Decomposition along columns and rows
    workers: int or None
        Worker processes, None for one per core (capped by ranks and
        $PDESHARD_WORKERS)
    """
    epochs: int = 50
    batch_size: int = 32
    train_range: Optional[Tuple[int, int]] = None
    val_range: Optional[Tuple[int, int]] = None
    seed: int = 0
    strategy: PaddingStrategy = PaddingStrategy.ZERO_INNER
    eta: float = DEFAULT_ETA
    rho1: float = DEFAULT_RHO1
    rho2: float = DEFAULT_RHO2
    eps: float = DEFAULT_EPS
    delta: float = MAPE_DELTA
    px: int = 1
    py: int = 1
    workers: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, 'strategy', PaddingStrategy(self.strategy))
        for name in ('train_range', 'val_range'):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(int(v) for v in value))

    def validate(self):
        problems = []
        if self.epochs < 0:
            problems.append('epochs must be >= 0')
        if self.batch_size < 1:
            problems.append('batch_size must be >= 1')
        if self.delta <= 0:
            problems.append('delta must be > 0')
        if not (0 <= self.rho1 < 1 and 0 <= self.rho2 < 1):
            problems.append('rho1 and rho2 must lie in [0, 1)')
        if problems:
            raise ConfigurationError('Invalid TrainConfig: {}'.format(
                '; '.join(problems)))
        return self

    def train_span(self, n_frames):
        """Half-open range of training input frames for `n_frames` frames."""
        span = self.train_range or (0, (2 * n_frames) // 3)
        return self._checked('train_range', span, n_frames)

    def val_span(self, n_frames):
        """Half-open range of validation input frames, disjoint from training."""
        span = self.val_range or ((2 * n_frames) // 3, n_frames - 1)
        span = self._checked('val_range', span, n_frames)
        train = self.train_span(n_frames)
        if train[0] < span[1] and span[0] < train[1]:
            raise ConfigurationError(
                'train_range {} and val_range {} overlap'.format(train, span))
        return span

    def has_validation(self, n_frames):
        """
        Whether validation pairs exist for `n_frames` frames.

        An unset val_range that leaves no pairs disjoint from training gives
        False; an explicit val_range that does not fit raises.
        """
        if self.val_range is not None:
            self.val_span(n_frames)
            return True
        try:
            self.val_span(n_frames)
        except ConfigurationError:
            return False
        return True

    @staticmethod
    def _checked(name, span, n_frames):
        a, b = span
        # the target of input frame b - 1 is frame b
        if not 0 <= a < b or b > n_frames - 1:
            raise ConfigurationError(
                '{} [{}, {}) needs frames up to {} but the dataset has {}'
                .format(name, a, b, b, n_frames))
        return a, b

    def rank_seed(self, rank):
        return self.seed ^ rank

    def to_dict(self):
        return config_to_dict(self)

    @classmethod
    def from_dict(cls, mapping):
        return config_from_mapping(cls, mapping)


@dataclass
class RankShard:
    """Input windows and targets of one rank, stacked along axis 0."""
    rank: int
    inputs: np.ndarray
    targets: np.ndarray

    def __len__(self):
        return self.inputs.shape[0]


@dataclass
class ShardedSamples:
    """
    (input at t, target at t + 1) pairs of every rank.

    Parameters
    ----------
    shards: dict(int, RankShard)
    times: tuple(int)
        Input frame index of each pair
    """
    shards: Dict[int, RankShard]
    times: Tuple[int, ...]

    def __getitem__(self, rank):
        return self.shards[rank]


@dataclass
class TrainReport:
    """
    What a training run measured.

    loss_curves: mean training loss per epoch (percent), per rank
    rank_seconds: wall time spent training each rank
    rank_worker: worker slot that trained each rank
    message_count: rank-to-rank messages sent while training, always 0
    phase_seconds: sharding, pool start-up and training wall times
    """
    loss_curves: Dict[int, List[float]] = field(default_factory=dict)
    rank_seconds: Dict[int, float] = field(default_factory=dict)
    rank_worker: Dict[int, int] = field(default_factory=dict)
    rank_samples: Dict[int, int] = field(default_factory=dict)
    message_count: int = 0
    workers: int = 1
    oversubscribed: bool = False
    phase_seconds: Dict[str, float] = field(default_factory=dict)
    optimizer_states: Dict[int, AdamState] = field(default_factory=dict)

    @property
    def train_seconds(self):
        return self.phase_seconds.get('train', 0.0)

    def loss_frame(self):
        rows = [(rank, epoch, loss)
                for rank, curve in sorted(self.loss_curves.items())
                for epoch, loss in enumerate(curve)]
        return pd.DataFrame(rows, columns=LOSS_COLUMNS)

    def timing_frame(self):
        rows = [(rank, self.rank_worker[rank], seconds,
                 self.rank_samples.get(rank, 0), self.oversubscribed)
                for rank, seconds in sorted(self.rank_seconds.items())]
        return pd.DataFrame(rows, columns=TIMING_COLUMNS)


def shard_dataset(dataset, partition, cfg):
    """
    Cut the training pairs of every rank out of the dataset.

    Parameters
    ----------
    dataset: Dataset
    partition: Partition
    cfg: TrainConfig

    Returns
    -------
    samples: ShardedSamples
    """
    start, stop = cfg.train_span(len(dataset))
    if (dataset.h, dataset.w) != (partition.global_h, partition.global_w):
        raise ConfigurationError(
            'Dataset grid {}x{} does not match the {}x{} partition'.format(
                dataset.h, dataset.w, partition.global_h, partition.global_w))
    times = tuple(range(start, stop))
    shards = {}
    for spec in partition.ranks:
        inputs = np.stack([extract_input(dataset.tensor(t), spec,
                                         partition.halo)
                           for t in times])
        targets = np.stack([core_slice(dataset.tensor(t + 1), spec)
                            for t in times])
        shards[spec.rank] = RankShard(spec.rank, inputs, targets)
    logging.debug('Sharded {} pairs over {} ranks (halo {})'.format(
        len(times), partition.size, partition.halo))
    return ShardedSamples(shards, times)


def fit_rank(shard, net, cfg, rank=None):
    """
    Train one rank's network on its shard.

    Every epoch shuffles the pairs with the rank's generator, averages the
    gradients of each batch and takes one ADAM step per batch.

    Parameters
    ----------
    shard: RankShard
    net: ConvNet
        Initial network, not modified
    cfg: TrainConfig
    rank: int or None
        Defaults to shard.rank; selects the shuffling seed

    Returns
    -------
    net: ConvNet
        Trained network
    state: AdamState
        Optimiser state after the last step
    curve: list(float)
        Mean training loss of each epoch, in percent
    """
    rank = shard.rank if rank is None else rank
    if len(shard) == 0:
        raise TrainingError('Rank {} has no samples'.format(rank), rank=rank)
    rng = np.random.default_rng(cfg.rank_seed(rank))
    state = AdamState.for_parameters(net.parameters(), rho1=cfg.rho1,
                                     rho2=cfg.rho2, eta=cfg.eta, eps=cfg.eps)
    net = net.copy()
    curve = []
    batch_index = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(shard))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            total = Gradients()
            batch_losses = []
            for i in batch:
                loss, grads = loss_and_gradients(
                    shard.inputs[i], shard.targets[i], net, cfg.strategy,
                    cfg.delta)
                batch_losses.append(loss)
                total = total.add(grads)
            mean = total.scaled(1.0 / len(batch))
            if not (np.all(np.isfinite(batch_losses)) and mean.is_finite()):
                raise TrainingError(
                    'Rank {}: non-finite loss in batch {} (epoch {})'.format(
                        rank, batch_index, epoch), rank=rank,
                    batch=batch_index)
            params, state = adam_step(net.parameters(), mean.as_list(), state)
            net = net.with_parameters(params)
            losses.extend(batch_losses)
            batch_index += 1
        curve.append(float(np.mean(losses)))
        logging.debug('Rank {} epoch {}: loss {:.4f}%'.format(
            rank, epoch, curve[-1]))
    return net, state, curve


def train_rank(shard, net, cfg, rank=None):
    """Train one rank; returns (trained net, per-epoch loss curve)."""
    net, _, curve = fit_rank(shard, net, cfg, rank)
    return net, curve


def initial_networks(partition, cfg):
    """Seed-initialised network of every rank, before training."""
    return {spec.rank: init_network(cfg.rank_seed(spec.rank))
            for spec in partition.ranks}


def _warm_up():
    time.sleep(0.05)
    return os.getpid()


def _train_bucket(jobs, cfg, worker, log_level):
    """Runs in a worker process: train the ranks assigned to this slot."""
    logging.getLogger().setLevel(log_level)
    results = []
    for rank, shard, net in jobs:
        sent_before = exchange.messages_sent()
        start = time.perf_counter()
        try:
            net, state, curve = fit_rank(shard, net, cfg, rank)
        except TrainingError:
            raise
        except Exception as e:
            raise TrainingError('Rank {} failed on worker {}: {!r}'.format(
                rank, worker, e), rank=rank) from e
        seconds = time.perf_counter() - start
        results.append((rank, net, state, curve, seconds,
                        exchange.messages_sent() - sent_before))
        logging.info('Rank {} trained on worker {} in {:.2f}s, final loss '
                     '{}'.format(rank, worker, seconds,
                                 '{:.4f}%'.format(curve[-1]) if curve
                                 else 'n/a'))
    return results


def train_parallel(dataset, partition, cfg, workers=None, networks=None):
    """
    Train every rank of `partition` independently in a process pool.

    Parameters
    ----------
    dataset: Dataset
    partition: Partition
    cfg: TrainConfig
    workers: int or None
        Overrides cfg.workers
    networks: dict(int, ConvNet) or None
        Starting networks; seed-initialised ones by default

    Returns
    -------
    nets: dict(int, ConvNet)
        Trained network of every rank
    report: TrainReport
    """
    cfg.validate()
    cfg.has_validation(len(dataset))
    timer = PhaseTimer()
    with timer.phase('shard'):
        samples = shard_dataset(dataset, partition, cfg)
    networks = networks or initial_networks(partition, cfg)

    n_workers = resolve_workers(workers or cfg.workers, partition.size)
    buckets = [[] for _ in range(n_workers)]
    for spec in partition.ranks:
        rank = spec.rank
        buckets[rank % n_workers].append((rank, samples[rank],
                                          networks[rank]))
    report = TrainReport(workers=n_workers,
                         oversubscribed=oversubscribed(n_workers))
    logging.info('Training {} ranks on {} workers ({} pairs each, {} epochs)'
                 .format(partition.size, n_workers, len(samples.times),
                         cfg.epochs))

    nets = {}
    log_level = logging.getLogger().getEffectiveLevel()
    with single_threaded_children(), ProcessPoolExecutor(
            max_workers=n_workers, mp_context=spawn_context()) as pool:
        with timer.phase('pool_start'):
            warm = [pool.submit(_warm_up) for _ in range(n_workers)]
            for future in warm:
                future.result()
        with timer.phase('train'):
            futures = {worker: pool.submit(_train_bucket, jobs, cfg, worker,
                                           log_level)
                       for worker, jobs in enumerate(buckets) if jobs}
            for worker, future in futures.items():
                try:
                    results = future.result()
                except TrainingError:
                    raise
                except Exception as e:
                    ranks = [job[0] for job in buckets[worker]]
                    raise TrainingError(
                        'Worker {} (ranks {}) failed: {!r}'.format(
                            worker, ranks, e), rank=ranks[0]) from e
                for rank, net, state, curve, seconds, messages in results:
                    nets[rank] = net
                    report.optimizer_states[rank] = state
                    report.loss_curves[rank] = curve
                    report.rank_seconds[rank] = seconds
                    report.rank_worker[rank] = worker
                    report.rank_samples[rank] = len(samples[rank])
                    report.message_count += messages

    report.phase_seconds = dict(timer.seconds)
    if report.message_count != 0:
        raise PdeShardError(
            'Training sent {} rank-to-rank messages, expected none'.format(
                report.message_count))
    logging.info('Training finished in {:.2f}s'.format(report.train_seconds))
    return nets, report


def validation_mape(dataset, partition, nets, cfg):
    """
    Mean single-step MAPE of every rank's network on the validation pairs.

    Returns
    -------
    mape: dict(int, float)
        Percent, per rank
    """
    start, stop = cfg.val_span(len(dataset))
    totals = {spec.rank: 0.0 for spec in partition.ranks}
    for t in range(start, stop):
        frame, target = dataset.tensor(t), dataset.tensor(t + 1)
        for spec in partition.ranks:
            pred = net_forward(extract_input(frame, spec, partition.halo),
                               nets[spec.rank], cfg.strategy,
                               (spec.rows, spec.cols))
            loss, _ = mape_loss(pred, core_slice(target, spec), cfg.delta)
            totals[spec.rank] += loss
    return {rank: total / (stop - start) for rank, total in totals.items()}


def validate_ranks(dataset, partition, nets, cfg):
    """Validation MAPE of the trained and of the seed-initialised networks."""
    trained = validation_mape(dataset, partition, nets, cfg)
    untrained = validation_mape(dataset, partition,
                                initial_networks(partition, cfg), cfg)
    rows = [(rank, untrained[rank], trained[rank]) for rank in sorted(trained)]
    return pd.DataFrame(rows, columns=VALIDATION_COLUMNS)


def write_validation(run_dir, dataset, partition, nets, cfg):
    """
    Write validation.csv into a run directory.

    Returns the path, or None when the dataset leaves no validation pairs.
    """
    if not cfg.has_validation(len(dataset)):
        logging.warning('No validation pairs left after train_range {} in {} '
                        'frames; skipping validation.csv'.format(
                            cfg.train_span(len(dataset)), len(dataset)))
        return None
    path = os.path.join(run_dir, 'validation.csv')
    validate_ranks(dataset, partition, nets, cfg).to_csv(path, index=False)
    return path


def checkpoint_path(run_dir, rank):
    return os.path.join(run_dir, 'rank_{:04d}.net'.format(rank))


def write_run(run_dir, nets, report, cfg, partition, dataset_meta=None):
    """
    Store a training run: one checkpoint per rank, loss curves, timings and
    the configuration.

    Returns
    -------
    digests: dict(int, str)
        sha256 of every checkpoint
    """
    os.makedirs(run_dir, exist_ok=True)
    digests = {}
    for rank, net in sorted(nets.items()):
        digests[rank] = save_checkpoint(checkpoint_path(run_dir, rank), net,
                                        report.optimizer_states.get(rank))
    report.loss_frame().to_csv(os.path.join(run_dir, 'loss_curves.csv'),
                               index=False)
    report.timing_frame().to_csv(os.path.join(run_dir, 'timing.csv'),
                                 index=False)
    config = {'train': cfg.to_dict(), 'partition': partition.to_dict(),
              'dataset': dataset_meta or {},
              'message_count': report.message_count}
    with open(os.path.join(run_dir, 'config.json'), 'w') as f:
        json.dump(config, f, indent=2, sort_keys=True)
    logging.info('Wrote {} checkpoints to {}'.format(len(nets), run_dir))
    return digests


def read_run(run_dir):
    """
    Load a run written by `write_run`.

    Returns
    -------
    nets: dict(int, ConvNet)
    cfg: TrainConfig
    partition: Partition
    """
    with open(os.path.join(run_dir, 'config.json')) as f:
        config = json.load(f)
    cfg = TrainConfig.from_dict(config['train'])
    partition = Partition.from_dict(config['partition'])
    nets = {spec.rank: load_checkpoint(checkpoint_path(run_dir, spec.rank))[0]
            for spec in partition.ranks}
    return nets, cfg, partition


def partition_for(dataset, cfg):
    return make_partition(dataset.h, dataset.w, cfg.px, cfg.py, cfg.strategy)
