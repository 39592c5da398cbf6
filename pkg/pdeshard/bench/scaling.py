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

# Strong scaling: the same global problem trained with 1, 2, 4, ... workers,
# one rank per worker. Training is always timed; a short inline rollout with
# the trained networks is timed when infer_steps > 0.

import dataclasses
import logging
import math

import pandas as pd

from pdeshard.data.fields import Snapshot
from pdeshard.exceptions import ConfigurationError
from pdeshard.parallel.infer_engine import RolloutConfig, rollout
from pdeshard.parallel.partition import PaddingStrategy, make_partition
from pdeshard.parallel.train_engine import train_parallel
from pdeshard.parallel.workers import oversubscribed
from pdeshard.timing import PhaseTimer

SCALING_COLUMNS = ['worker_count', 'rank_count', 'grid_n',
                   'total_train_seconds', 'per_rank_max_seconds', 'speedup',
                   'efficiency', 'oversubscribed', 'strategy', 'infer_seconds']
DESK_WORKER_COUNTS = (1, 2, 4, 8)


def decomposition_for(workers):
    """
    px x py layout with px * py == workers, square or twice as wide as tall.

    >>> decomposition_for(8)
    (4, 2)
    """
    py = math.isqrt(workers)
    if py * py == workers:
        return py, py
    py = math.isqrt(workers // 2)
    if 2 * py * py == workers:
        return 2 * py, py
    raise ConfigurationError(
        'No square or 2:1 decomposition for {} workers'.format(workers))


def run_scaling(dataset, worker_counts, cfg, strategy=None, infer_steps=0):
    """
    Train the full configuration once per worker count.

    Parameters
    ----------
    dataset: Dataset
        Fixed global problem
    worker_counts: list(int)
        A baseline of 1 worker is added when missing
    cfg: TrainConfig
        Seeds, epochs and ranges shared by every run; px, py and workers are
        set per row
    strategy: PaddingStrategy or None
        Defaults to cfg.strategy
    infer_steps: int, default 0
        Rollout steps timed per row from the first frame; infer_seconds is
        NaN when 0

    Returns
    -------
    result: pd.DataFrame
        Columns SCALING_COLUMNS, one row per worker count.
        speedup = T(1) / T(w), efficiency = speedup / w.
    """
    strategy = PaddingStrategy(strategy or cfg.strategy)
    if infer_steps < 0:
        raise ConfigurationError('infer_steps must be >= 0')
    counts = sorted(set(worker_counts) | {1})
    layouts = {w: decomposition_for(w) for w in counts}

    rows = []
    baseline = None
    for w in counts:
        px, py = layouts[w]
        run_cfg = dataclasses.replace(cfg, px=px, py=py, workers=w,
                                      strategy=strategy)
        partition = make_partition(dataset.h, dataset.w, px, py, strategy)
        nets, report = train_parallel(dataset, partition, run_cfg)
        infer_seconds = float('nan')
        if infer_steps:
            timer = PhaseTimer()
            with timer.phase('infer'):
                rollout(Snapshot(dataset.frames[0]), nets, partition,
                        RolloutConfig(steps=infer_steps, strategy=strategy))
            infer_seconds = timer['infer']
        seconds = report.train_seconds
        if baseline is None:
            baseline = seconds
        speedup = baseline / seconds if seconds > 0 else float('nan')
        flagged = oversubscribed(w) or report.workers < w
        if flagged:
            logging.warning('Row w={} is oversubscribed ({} workers used)'
                            .format(w, report.workers))
        rows.append((w, partition.size, dataset.h, seconds,
                     max(report.rank_seconds.values()), speedup, speedup / w,
                     flagged, strategy.value, infer_seconds))
        logging.info('Scaling w={}: {:.2f}s, speedup {:.2f}'.format(
            w, seconds, speedup))
    return pd.DataFrame(rows, columns=SCALING_COLUMNS)
