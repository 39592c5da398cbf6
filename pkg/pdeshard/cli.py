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

import argparse
import dataclasses
import logging
import sys

import pandas as pd

from pdeshard.bench.experiment import run_experiment
from pdeshard.bench.scaling import DESK_WORKER_COUNTS, run_scaling
from pdeshard.data.dataset_io import read_dataset, write_dataset
from pdeshard.data.euler_sim import SolverConfig, run
from pdeshard.exceptions import PdeShardError
from pdeshard.models.neural import MAPE_DELTA
from pdeshard.parallel.exchange import DEFAULT_TIMEOUT
from pdeshard.parallel.infer_engine import BACKENDS, RolloutConfig, \
    evaluate, rollout, rollout_truth
from pdeshard.parallel.partition import PaddingStrategy
from pdeshard.parallel.train_engine import TrainConfig, partition_for, \
    read_run, train_parallel, write_run, write_validation

STRATEGIES = [s.value for s in PaddingStrategy]


def _add_solver_flags(parser):
    for f in dataclasses.fields(SolverConfig):
        parser.add_argument('--' + f.name.replace('_', '-'), dest=f.name,
                            type=f.type, default=None,
                            help='default {}'.format(f.default))


def _solver_config(args, **overrides):
    values = {f.name: getattr(args, f.name)
              for f in dataclasses.fields(SolverConfig)
              if getattr(args, f.name, None) is not None}
    values.update(overrides)
    return SolverConfig(**values).validate()


def _train_config(args, **overrides):
    values = {'epochs': args.epochs, 'batch_size': args.batch,
              'seed': args.seed, 'strategy': args.strategy,
              'px': args.px, 'py': args.py, 'workers': args.workers,
              'train_range': args.train_range, 'val_range': args.val_range}
    values.update(overrides)
    return TrainConfig(**{k: v for k, v in values.items()
                          if v is not None}).validate()


def generate(args):
    overrides = {'t_steps': args.steps} if args.steps is not None else {}
    dataset = run(_solver_config(args, **overrides))
    write_dataset(dataset, args.out)


def train(args):
    dataset = read_dataset(args.dataset)
    cfg = _train_config(args)
    partition = partition_for(dataset, cfg)
    nets, report = train_parallel(dataset, partition, cfg)
    write_run(args.out, nets, report, cfg, partition, dataset.meta)
    write_validation(args.out, dataset, partition, nets, cfg)


def infer(args):
    truth = read_dataset(args.dataset)
    nets, _, partition = read_run(args.run_dir)
    cfg = RolloutConfig(steps=args.steps, record_every=args.record_every,
                        backend=args.backend, timeout=args.timeout)
    prediction, ledger = rollout(truth.snapshot(args.start), nets, partition,
                                 cfg, dt=truth.dt, meta={'start': args.start})
    write_dataset(prediction, args.out)
    if args.ledger:
        ledger.to_frame().to_csv(args.ledger, index=False)


def compare(args):
    pred = read_dataset(args.pred)
    truth = read_dataset(args.truth)
    meta = pred.meta
    if meta.get('source') == 'rollout':
        truth = rollout_truth(truth, int(meta.get('start', 0)),
                              int(meta['steps']),
                              int(meta.get('record_every', 1)))
    evaluate(pred, truth, args.delta).to_csv(args.out, index=False)


def bench(args):
    if args.dataset:
        dataset = read_dataset(args.dataset)
    else:
        dataset = run(_solver_config(args, n=args.n, t_steps=args.frames))
    strategies = STRATEGIES if args.strategy == 'both' else [args.strategy]
    cfg = _train_config(args, px=1, py=1, workers=None, strategy=None)
    frames = [run_scaling(dataset, args.workers, cfg, strategy,
                          args.infer_steps)
              for strategy in strategies]
    pd.concat(frames, ignore_index=True).to_csv(args.out, index=False)


def run_manifest(args):
    out = run_experiment(args.manifest)
    logging.info('Experiment written to {}'.format(out))


def _add_train_flags(parser):
    parser.add_argument('--epochs', type=int, default=None)
    parser.add_argument('--batch', type=int, default=None)
    parser.add_argument('--seed', type=int, default=None)
    parser.add_argument('--train-range', type=int, nargs=2, default=None,
                        metavar=('START', 'STOP'))
    parser.add_argument('--val-range', type=int, nargs=2, default=None,
                        metavar=('START', 'STOP'))


def build_parser():
    parser = argparse.ArgumentParser(
        prog='pde-shard',
        description='Sub-domain parallel learning of PDE time stepping')
    parser.add_argument('--log-level', default='INFO',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    commands = parser.add_subparsers(dest='command', required=True)

    p = commands.add_parser('generate', help='simulate a dataset')
    _add_solver_flags(p)
    p.add_argument('--steps', type=int, default=None,
                   help='frames to write, same as --t-steps')
    p.add_argument('--out', required=True)
    p.set_defaults(handler=generate)

    p = commands.add_parser('train', help='train one network per rank')
    p.add_argument('--dataset', required=True)
    p.add_argument('--px', type=int, default=1)
    p.add_argument('--py', type=int, default=1)
    p.add_argument('--strategy', choices=STRATEGIES, default=None)
    p.add_argument('--workers', type=int, default=None)
    _add_train_flags(p)
    p.add_argument('--out', required=True)
    p.set_defaults(handler=train)

    p = commands.add_parser('infer', help='parallel rollout')
    p.add_argument('--run-dir', required=True)
    p.add_argument('--dataset', required=True,
                   help='dataset holding the initial frame')
    p.add_argument('--start', type=int, default=0)
    p.add_argument('--steps', type=int, default=10)
    p.add_argument('--record-every', type=int, default=1)
    p.add_argument('--backend', choices=BACKENDS, default='inline')
    p.add_argument('--timeout', type=float, default=DEFAULT_TIMEOUT)
    p.add_argument('--ledger', default=None,
                   help='optional CSV of every halo message')
    p.add_argument('--out', required=True)
    p.set_defaults(handler=infer)

    p = commands.add_parser('compare', help='error of a rollout')
    p.add_argument('--pred', required=True)
    p.add_argument('--truth', required=True)
    p.add_argument('--delta', type=float, default=MAPE_DELTA)
    p.add_argument('--out', required=True)
    p.set_defaults(handler=compare)

    p = commands.add_parser('bench', help='strong scaling of training')
    p.add_argument('--dataset', default=None,
                   help='existing dataset; simulated when omitted')
    p.add_argument('--n', type=int, default=64)
    p.add_argument('--frames', type=int, default=300)
    p.add_argument('--workers', type=int, nargs='+',
                   default=list(DESK_WORKER_COUNTS))
    p.add_argument('--strategy', choices=STRATEGIES + ['both'],
                   default=PaddingStrategy.ZERO_INNER.value)
    p.add_argument('--infer-steps', type=int, default=0,
                   help='rollout steps timed per row; 0 skips the timing')
    _add_train_flags(p)
    p.add_argument('--out', required=True)
    p.set_defaults(handler=bench, px=None, py=None, epochs=20)

    p = commands.add_parser('run', help='run an experiment manifest')
    p.add_argument('manifest')
    p.set_defaults(handler=run_manifest)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level,
                        format='%(asctime)s %(levelname)s %(message)s')
    try:
        args.handler(args)
    except PdeShardError as e:
        print('pde-shard: {}'.format(e), file=sys.stderr)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
