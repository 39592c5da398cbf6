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

import json
import os
import tempfile
import unittest

import numpy as np
import pandas as pd

from pdeshard.data.fields import Dataset
from pdeshard.exceptions import ConfigurationError, TrainingError
from pdeshard.models.neural import init_network
from pdeshard.parallel.partition import PaddingStrategy, core_slice, \
    extract_input, make_partition
from pdeshard.parallel.train_engine import LOSS_COLUMNS, TIMING_COLUMNS, \
    VALIDATION_COLUMNS, RankShard, TrainConfig, fit_rank, read_run, \
    shard_dataset, train_parallel, train_rank, validate_ranks, \
    write_run, write_validation


def wave_dataset(n=8, frames=6):
    """Travelling waves kept well away from zero, shifted half a cell per
    frame."""
    y, x = np.meshgrid(np.arange(n), np.arange(n), indexing='ij')
    data = []
    for t in range(frames):
        phase = 2 * np.pi * (x + 0.5 * t + 0.25 * y) / n
        data.append(np.stack([2.0 + np.sin(phase + c) for c in range(4)]))
    return Dataset(np.array(data), 0.1, {'source': 'test'})


def small_net(seed=0):
    return init_network(seed, channels=(4, 4), kernel_size=3)


class TestTrainConfig(unittest.TestCase):

    def test_default_split(self):
        cfg = TrainConfig()
        self.assertEqual(cfg.train_span(1500), (0, 1000))
        self.assertEqual(cfg.val_span(1500), (1000, 1499))

    def test_explicit_ranges(self):
        cfg = TrainConfig(train_range=(0, 2))
        self.assertEqual(cfg.train_span(3), (0, 2))
        with self.assertRaises(ConfigurationError):
            cfg.train_span(2)

    def test_overlapping_ranges(self):
        cfg = TrainConfig(train_range=(0, 10), val_range=(5, 15))
        with self.assertRaises(ConfigurationError):
            cfg.val_span(20)

    def test_invalid_values(self):
        with self.assertRaises(ConfigurationError):
            TrainConfig(batch_size=0).validate()
        with self.assertRaises(ConfigurationError):
            TrainConfig(rho2=1.0).validate()

    def test_manifest_values(self):
        cfg = TrainConfig.from_dict({'strategy': 'exact-halo',
                                     'train_range': '0, 10', 'epochs': '3'})
        self.assertEqual(cfg.strategy, PaddingStrategy.EXACT_HALO)
        self.assertEqual(cfg.train_range, (0, 10))
        self.assertEqual(cfg.epochs, 3)
        self.assertEqual(TrainConfig.from_dict(json.loads(json.dumps(
            cfg.to_dict()))), cfg)

    def test_validation_availability(self):
        self.assertFalse(TrainConfig(train_range=(0, 2)).has_validation(3))
        self.assertTrue(TrainConfig().has_validation(6))
        with self.assertRaises(ConfigurationError):
            TrainConfig(val_range=(2, 3)).has_validation(3)

    def test_unknown_key(self):
        with self.assertRaises(ConfigurationError):
            TrainConfig.from_dict({'learning_rate': '0.1'})


class TestShardDataset(unittest.TestCase):

    def setUp(self) -> None:
        self.dataset = wave_dataset(n=8, frames=6)
        self.partition = make_partition(8, 8, 2, 2,
                                        PaddingStrategy.ZERO_INNER)

    def test_three_frames_two_pairs(self):
        dataset = wave_dataset(n=8, frames=3)
        samples = shard_dataset(dataset, self.partition,
                                TrainConfig(train_range=(0, 2)))
        self.assertEqual(samples.times, (0, 1))
        for spec in self.partition.ranks:
            self.assertEqual(len(samples[spec.rank]), 2)

    def test_pairs(self):
        cfg = TrainConfig(train_range=(1, 4))
        samples = shard_dataset(self.dataset, self.partition, cfg)
        spec = self.partition.ranks[3]
        shard = samples[3]
        self.assertEqual(shard.inputs.shape, (3, 4, 8, 8))
        self.assertEqual(shard.targets.shape, (3, 4, 4, 4))
        np.testing.assert_array_equal(
            shard.inputs[0], extract_input(self.dataset.tensor(1), spec, 2))
        np.testing.assert_array_equal(
            shard.targets[2], core_slice(self.dataset.tensor(4), spec))

    def test_grid_mismatch(self):
        partition = make_partition(16, 16, 2, 2, PaddingStrategy.ZERO_INNER)
        with self.assertRaises(ConfigurationError):
            shard_dataset(self.dataset, partition, TrainConfig())


class TestFitRank(unittest.TestCase):

    def setUp(self) -> None:
        dataset = wave_dataset(n=8, frames=6)
        self.partition = make_partition(8, 8, 1, 1,
                                        PaddingStrategy.ZERO_INNER, halo=1)
        self.cfg = TrainConfig(epochs=60, batch_size=1, train_range=(0, 4),
                               seed=3)
        self.shard = shard_dataset(dataset, self.partition, self.cfg)[0]

    def test_loss_decreases(self):
        _, state, curve = fit_rank(self.shard, small_net(), self.cfg)
        self.assertEqual(len(curve), 60)
        self.assertEqual(state.t, 60 * 4)
        self.assertLess(curve[-1], 0.5 * curve[0])

    def test_deterministic(self):
        cfg = TrainConfig(epochs=3, batch_size=2, train_range=(0, 4))
        net_a, _, curve_a = fit_rank(self.shard, small_net(), cfg)
        net_b, _, curve_b = fit_rank(self.shard, small_net(), cfg)
        self.assertTrue(net_a.equals(net_b))
        self.assertEqual(curve_a, curve_b)

    def test_input_network_untouched(self):
        net = small_net()
        before = net.copy()
        fit_rank(self.shard, net, TrainConfig(epochs=1, train_range=(0, 4)))
        self.assertTrue(net.equals(before))

    def test_zero_epochs(self):
        net, state, curve = fit_rank(self.shard, small_net(),
                                     TrainConfig(epochs=0))
        self.assertTrue(net.equals(small_net()))
        self.assertEqual((curve, state.t), ([], 0))

    def test_train_rank_matches_fit_rank(self):
        cfg = TrainConfig(epochs=2, batch_size=2, train_range=(0, 4))
        net_a, curve_a = train_rank(self.shard, small_net(), cfg)
        net_b, _, curve_b = fit_rank(self.shard, small_net(), cfg)
        self.assertTrue(net_a.equals(net_b))
        self.assertEqual(curve_a, curve_b)

    def test_overfits_one_identity_pair(self):
        frame = wave_dataset(n=8, frames=1).tensor(0)
        shard = RankShard(0, frame[None].copy(), frame[None].copy())
        net = init_network(1, channels=(4, 4), kernel_size=1)
        cfg = TrainConfig(epochs=500, batch_size=1)
        _, curve = train_rank(shard, net, cfg)
        self.assertEqual(len(curve), 500)
        self.assertLess(min(curve), 1.0)
        self.assertLess(curve[-1], curve[0])

    def test_nan_batch(self):
        inputs = self.shard.inputs.copy()
        inputs[2, 0, 3, 3] = np.nan
        shard = RankShard(0, inputs, self.shard.targets)
        with self.assertRaises(TrainingError) as ctx:
            fit_rank(shard, small_net(),
                     TrainConfig(epochs=1, batch_size=4))
        self.assertEqual(ctx.exception.batch, 0)
        self.assertEqual(ctx.exception.rank, 0)


class TestTrainParallel(unittest.TestCase):

    def setUp(self) -> None:
        self.dataset = wave_dataset(n=8, frames=5)
        self.partition = make_partition(8, 8, 2, 2,
                                        PaddingStrategy.ZERO_INNER)
        self.cfg = TrainConfig(epochs=2, batch_size=2, seed=5)
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self) -> None:
        self.tmp.cleanup()

    def test_worker_count_does_not_change_results(self):
        nets_1, report_1 = train_parallel(self.dataset, self.partition,
                                          self.cfg, workers=1)
        nets_4, report_4 = train_parallel(self.dataset, self.partition,
                                          self.cfg, workers=4)
        self.assertEqual(report_1.workers, 1)
        for rank in nets_1:
            self.assertTrue(nets_1[rank].equals(nets_4[rank]))
            self.assertEqual(report_1.loss_curves[rank],
                             report_4.loss_curves[rank])
        self.assertEqual(report_1.message_count, 0)
        self.assertEqual(report_4.message_count, 0)

    def test_report(self):
        nets, report = train_parallel(self.dataset, self.partition, self.cfg,
                                      workers=2)
        self.assertEqual(sorted(nets), [0, 1, 2, 3])
        self.assertEqual(set(report.phase_seconds),
                         {'shard', 'pool_start', 'train'})
        self.assertEqual({report.rank_worker[r] for r in range(4)}, {0, 1})
        self.assertEqual(report.rank_worker[2], 0)
        self.assertEqual(list(report.loss_frame().columns), LOSS_COLUMNS)
        self.assertEqual(len(report.loss_frame()), 4 * 2)
        timing = report.timing_frame()
        self.assertEqual(list(timing.columns), TIMING_COLUMNS)
        self.assertEqual(list(timing.samples), [3] * 4)

    def test_run_directory_round_trip(self):
        nets, report = train_parallel(self.dataset, self.partition, self.cfg,
                                      workers=2)
        run_dir = os.path.join(self.tmp.name, 'run')
        digests = write_run(run_dir, nets, report, self.cfg, self.partition,
                            self.dataset.meta)
        self.assertEqual(len(digests), 4)
        loaded, cfg, partition = read_run(run_dir)
        self.assertEqual(cfg, self.cfg)
        self.assertEqual(partition, self.partition)
        for rank, net in nets.items():
            self.assertTrue(loaded[rank].equals(net))
        header = pd.read_csv(os.path.join(run_dir, 'loss_curves.csv')).columns
        self.assertEqual(list(header), LOSS_COLUMNS)
        with open(os.path.join(run_dir, 'config.json')) as f:
            self.assertEqual(json.load(f)['message_count'], 0)

    def test_rank_independence(self):
        frames = np.array(self.dataset.frames)
        # rows and columns 0-1 lie in no other rank's input window
        frames[:, :, :2, :2] += 0.3
        perturbed = Dataset(frames, self.dataset.dt)
        nets, _ = train_parallel(self.dataset, self.partition, self.cfg,
                                 workers=1)
        changed, _ = train_parallel(perturbed, self.partition, self.cfg,
                                    workers=1)
        self.assertFalse(nets[0].equals(changed[0]))
        for rank in (1, 2, 3):
            self.assertTrue(nets[rank].equals(changed[rank]))

    def test_short_dataset_skips_validation(self):
        dataset = wave_dataset(n=8, frames=3)
        cfg = TrainConfig(epochs=1, batch_size=2, train_range=(0, 2))
        nets, _ = train_parallel(dataset, self.partition, cfg, workers=1)
        with self.assertLogs(level='WARNING'):
            path = write_validation(self.tmp.name, dataset, self.partition,
                                    nets, cfg)
        self.assertIsNone(path)
        self.assertFalse(os.path.exists(
            os.path.join(self.tmp.name, 'validation.csv')))

    def test_explicit_val_range_checked_before_training(self):
        cfg = TrainConfig(epochs=1, val_range=(3, 5))
        with self.assertRaises(ConfigurationError):
            train_parallel(self.dataset, self.partition, cfg, workers=1)

    def test_validation_table(self):
        nets, _ = train_parallel(self.dataset, self.partition, self.cfg,
                                 workers=2)
        table = validate_ranks(self.dataset, self.partition, nets, self.cfg)
        self.assertEqual(list(table.columns), VALIDATION_COLUMNS)
        self.assertEqual(list(table['rank']), [0, 1, 2, 3])
        self.assertTrue(np.all(np.isfinite(table[['untrained_mape',
                                                  'trained_mape']])))


if __name__ == '__main__':
    unittest.main()
