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

# End-to-end experiment driven by an INI manifest:
#
#   [run]       out, workers, dataset (an existing file when there is no
#               [generate] section)
#   [generate]  SolverConfig fields
#   [train]     TrainConfig fields
#   [infer]     steps, record_every, start, backend, timeout
#   [compare]   delta
#
# Stages run in the order generate, train, infer, compare; a stage runs when
# its section is present. stages.csv records the outcome of every stage; when
# one fails the pipeline stops, a FAILED file names it and whatever earlier
# stages wrote stays in place.

import configparser
import hashlib
import logging
import os
import shutil
import time

import pandas as pd

from pdeshard.config import config_from_mapping
from pdeshard.data.dataset_io import dataset_digest, read_dataset, \
    write_dataset
from pdeshard.data.euler_sim import SolverConfig, run
from pdeshard.exceptions import ConfigurationError, PdeShardError, StageError
from pdeshard.models.neural import MAPE_DELTA
from pdeshard.parallel.infer_engine import RolloutConfig, evaluate, \
    rollout, rollout_truth
from pdeshard.parallel.train_engine import TrainConfig, partition_for, \
    read_run, train_parallel, write_run, write_validation

STAGES = ('generate', 'train', 'infer', 'compare')
STAGE_COLUMNS = ['stage', 'status', 'seconds']
RUN_KEYS = ('out', 'workers', 'dataset')
INFER_KEYS = ('steps', 'record_every', 'start', 'backend', 'timeout')

DATASET_FILE = 'dataset.pds'
RUN_DIR = 'run'
PREDICTION_FILE = 'prediction.pds'
METRICS_FILE = 'metrics.csv'


def file_digest(path):
    with open(path, 'rb') as f:
        return hashlib.sha256(f.read()).hexdigest()


def _write_text(path, text):
    with open(path, 'w') as f:
        f.write(text + '\n')


def read_manifest(path):
    """
    Parse an experiment manifest.

    Returns
    -------
    sections: dict(str, dict(str, str))
        Raw values of every known section that is present
    """
    parser = configparser.ConfigParser()
    try:
        with open(path) as f:
            parser.read_file(f)
    except configparser.Error as e:
        raise ConfigurationError('Cannot parse manifest {}: {}'.format(
            path, e)) from e
    unknown = sorted(set(parser.sections()) - set(('run',) + STAGES))
    if unknown:
        raise ConfigurationError('Unknown manifest sections: {}'.format(
            ', '.join(unknown)))
    if not parser.has_section('run') or 'out' not in parser['run']:
        raise ConfigurationError('Manifest needs [run] out = <directory>')
    sections = {name: dict(parser[name]) for name in parser.sections()}
    for name, keys in (('run', RUN_KEYS), ('infer', INFER_KEYS),
                       ('compare', ('delta',))):
        extra = sorted(set(sections.get(name, {})) - set(keys))
        if extra:
            raise ConfigurationError('Unknown [{}] keys: {}'.format(
                name, ', '.join(extra)))
    return sections


class Experiment:
    """
    State shared by the stages of one manifest run.

    Parameters
    ----------
    sections: dict
        Output of `read_manifest`
    base_dir: str
        Directory relative paths in the manifest are resolved against
    """

    def __init__(self, sections, base_dir='.'):
        self.sections = sections
        self.base_dir = base_dir
        self.out = self._path(sections['run']['out'])
        workers = sections['run'].get('workers')
        try:
            self.workers = int(workers) if workers else None
        except ValueError as e:
            raise ConfigurationError(
                '[run] workers must be an integer, got {!r}'.format(workers)
            ) from e
        self.dataset = None
        self.train_cfg = None
        self.prediction = None
        self.start = None

    def _path(self, path):
        return os.path.join(self.base_dir, os.path.expanduser(path))

    def artifact(self, name):
        return os.path.join(self.out, name)

    def _load_dataset(self):
        if self.dataset is None:
            path = self.sections['run'].get('dataset')
            if 'generate' in self.sections or not path:
                path = self.artifact(DATASET_FILE)
            else:
                path = self._path(path)
            self.dataset = read_dataset(path)
        return self.dataset

    def _train_config(self):
        if self.train_cfg is None:
            values = dict(self.sections.get('train', {}))
            if self.workers is not None:
                values['workers'] = self.workers
            self.train_cfg = TrainConfig.from_dict(values).validate()
        return self.train_cfg

    def generate(self):
        cfg = SolverConfig.from_dict(self.sections['generate']).validate()
        self.dataset = run(cfg)
        write_dataset(self.dataset, self.artifact(DATASET_FILE))
        _write_text(self.artifact('dataset.sha256'),
                    dataset_digest(self.dataset))

    def train(self):
        dataset = self._load_dataset()
        cfg = self._train_config()
        partition = partition_for(dataset, cfg)
        nets, report = train_parallel(dataset, partition, cfg)
        run_dir = self.artifact(RUN_DIR)
        write_run(run_dir, nets, report, cfg, partition, dataset.meta)
        write_validation(run_dir, dataset, partition, nets, cfg)

    def infer(self):
        dataset = self._load_dataset()
        nets, cfg, partition = read_run(self.artifact(RUN_DIR))
        values = dict(self.sections['infer'])
        default_start = cfg.train_span(len(dataset))[1]
        self.start = int(values.pop('start', default_start))
        values.setdefault('steps', min(10, len(dataset) - 1 - self.start))
        rollout_cfg = RolloutConfig.from_dict(values).validate()
        self.prediction, ledger = rollout(
            dataset.snapshot(self.start), nets, partition, rollout_cfg,
            dt=dataset.dt, meta={'start': self.start})
        write_dataset(self.prediction, self.artifact(PREDICTION_FILE))
        ledger.to_frame().to_csv(self.artifact('exchange_ledger.csv'),
                                 index=False)

    def compare(self):
        dataset = self._load_dataset()
        if self.prediction is None:
            self.prediction = read_dataset(self.artifact(PREDICTION_FILE))
        meta = self.prediction.meta
        truth = rollout_truth(dataset, int(meta.get('start', 0)),
                              int(meta['steps']),
                              int(meta.get('record_every', 1)))
        delta = float(self.sections['compare'].get('delta', MAPE_DELTA))
        metrics = evaluate(self.prediction, truth, delta)
        metrics.to_csv(self.artifact(METRICS_FILE), index=False)
        last = metrics[metrics.step == metrics.step.max()]
        logging.info('Final step mean MAPE {:.3f}%'.format(
            last.mape_percent.mean()))


def _write_status(out, status):
    pd.DataFrame(status, columns=STAGE_COLUMNS).to_csv(
        os.path.join(out, 'stages.csv'), index=False)


def run_experiment(manifest_path):
    """
    Run every stage named in a manifest.

    Parameters
    ----------
    manifest_path: str
        INI manifest, see the module comment

    Returns
    -------
    out: str
        The run directory. It holds a copy of the manifest, its sha256, the
        stage artifacts and stages.csv.
    """
    sections = read_manifest(manifest_path)
    experiment = Experiment(
        sections, os.path.dirname(os.path.abspath(manifest_path)))
    out = experiment.out
    os.makedirs(out, exist_ok=True)
    failed = os.path.join(out, 'FAILED')
    if os.path.exists(failed):
        os.remove(failed)
    shutil.copyfile(manifest_path, os.path.join(out, 'manifest.ini'))
    _write_text(os.path.join(out, 'manifest.sha256'),
                file_digest(manifest_path))

    stages = [stage for stage in STAGES if stage in sections]
    if not stages:
        raise ConfigurationError('Manifest names no stage')
    status = []
    for stage in stages:
        logging.info('Stage {} started'.format(stage))
        start = time.perf_counter()
        try:
            getattr(experiment, stage)()
        except (PdeShardError, OSError) as e:
            status.append((stage, 'FAILED', time.perf_counter() - start))
            _write_status(out, status)
            _write_text(failed, '{}: {}'.format(stage, e))
            raise StageError(stage, str(e)) from e
        status.append((stage, 'ok', time.perf_counter() - start))
        _write_status(out, status)
        logging.info('Stage {} finished in {:.2f}s'.format(
            stage, status[-1][2]))
    return out
