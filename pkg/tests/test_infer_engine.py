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

import unittest

import numpy as np

from pdeshard.data.fields import CHANNELS, Dataset, Snapshot
from pdeshard.exceptions import ConfigurationError, NonFiniteStateError, \
    ShapeMismatchError
from pdeshard.models.neural import ConvLayer, ConvNet, init_network
from pdeshard.parallel.infer_engine import METRIC_COLUMNS, RolloutConfig, \
    evaluate, predict_exact_reference, predict_monolithic, \
    predict_step_parallel, rollout, rollout_truth
from pdeshard.parallel.partition import PaddingStrategy, assemble, \
    make_partition, split


def random_snapshot(n, seed=0):
    return Snapshot(np.random.default_rng(seed).normal(size=(4, n, n)))


def shared(net, partition):
    return {spec.rank: net for spec in partition.ranks}


def scaled_net(seed=0, factor=0.5):
    """Network whose rollouts stay bounded for a few steps."""
    net = init_network(seed)
    return net.with_parameters([factor * p for p in net.parameters()])


class TestParallelStep(unittest.TestCase):

    def setUp(self) -> None:
        self.net = init_network(2)
        self.snapshot = random_snapshot(64)

    def _parallel(self, px, py, strategy):
        partition = make_partition(64, 64, px, py, strategy)
        states, entries = predict_step_parallel(
            split(self.snapshot.data, partition),
            shared(self.net, partition), partition)
        return assemble(states, partition), entries, partition

    def test_exact_halo_matches_monolithic(self):
        reference = predict_exact_reference(self.snapshot.data, self.net)
        for px, py in ((2, 2), (4, 4)):
            out, _, _ = self._parallel(px, py, PaddingStrategy.EXACT_HALO)
            np.testing.assert_allclose(out, reference, rtol=0, atol=1e-12)

    def test_exact_reference_differs_from_zero_same_at_edges(self):
        reference = predict_exact_reference(self.snapshot.data, self.net)
        mono = predict_monolithic(self.snapshot, self.net).data
        np.testing.assert_allclose(reference[:, 8:-8, 8:-8],
                                   mono[:, 8:-8, 8:-8], rtol=0, atol=1e-12)
        self.assertGreater(np.max(np.abs(reference[:, :8, :] -
                                         mono[:, :8, :])), 1e-8)

    def test_zero_inner_single_rank(self):
        out, entries, _ = self._parallel(1, 1, PaddingStrategy.ZERO_INNER)
        np.testing.assert_allclose(
            out, predict_monolithic(self.snapshot, self.net).data,
            rtol=0, atol=1e-12)
        self.assertEqual(entries, [])

    def test_zero_inner_differs_only_near_seams(self):
        out, _, _ = self._parallel(2, 2, PaddingStrategy.ZERO_INNER)
        mono = predict_monolithic(self.snapshot, self.net).data
        np.testing.assert_allclose(out[:, :20, :20], mono[:, :20, :20],
                                   rtol=0, atol=1e-12)
        self.assertGreater(np.max(np.abs(out[:, 28:36, :] -
                                         mono[:, 28:36, :])), 1e-8)

    def test_messages_per_step(self):
        _, entries, partition = self._parallel(2, 2,
                                               PaddingStrategy.ZERO_INNER)
        self.assertEqual(len(entries), 12)
        self.assertEqual(len(entries), partition.message_count())
        for entry in entries:
            neighbours = dict(
                partition.ranks[entry.sender].neighbor_ranks()).values()
            self.assertIn(entry.receiver, neighbours)

    def test_wrong_halo_for_network(self):
        partition = make_partition(64, 64, 2, 2, PaddingStrategy.ZERO_INNER)
        with self.assertRaises(ShapeMismatchError):
            predict_step_parallel(split(self.snapshot.data, partition),
                                  shared(self.net, partition), partition,
                                  strategy=PaddingStrategy.EXACT_HALO)


class TestRollout(unittest.TestCase):

    def setUp(self) -> None:
        self.net = scaled_net()
        self.partition = make_partition(16, 16, 2, 2,
                                        PaddingStrategy.ZERO_INNER)
        self.nets = shared(self.net, self.partition)
        self.initial = random_snapshot(16, seed=4)

    def test_recorded_frames(self):
        cfg = RolloutConfig(steps=6, record_every=2)
        prediction, ledger = rollout(self.initial, self.nets, self.partition,
                                     cfg, dt=0.5)
        self.assertEqual(len(prediction), 4)
        np.testing.assert_array_equal(prediction.frames[0],
                                      self.initial.data)
        self.assertEqual(prediction.dt, 1.0)
        self.assertEqual(prediction.meta['record_every'], 2)
        self.assertEqual(prediction.meta['strategy'], 'zero-inner')
        self.assertEqual(len(ledger), 6 * 12)
        self.assertEqual(set(ledger.per_step_counts().values()), {12})

    def test_steps_compose(self):
        cfg = RolloutConfig(steps=2)
        prediction, _ = rollout(self.initial, self.nets, self.partition, cfg)
        one, _ = rollout(self.initial, self.nets, self.partition,
                         RolloutConfig(steps=1))
        two, _ = rollout(one.snapshot(1), self.nets, self.partition,
                         RolloutConfig(steps=1))
        np.testing.assert_array_equal(prediction.frames[2], two.frames[1])

    def test_zero_steps(self):
        prediction, ledger = rollout(self.initial, self.nets, self.partition,
                                     RolloutConfig(steps=0))
        self.assertEqual(len(prediction), 1)
        self.assertEqual(len(ledger), 0)

    def test_process_backend_matches_inline(self):
        inline, inline_ledger = rollout(
            self.initial, self.nets, self.partition, RolloutConfig(steps=3))
        spawned, spawned_ledger = rollout(
            self.initial, self.nets, self.partition,
            RolloutConfig(steps=3, backend='process', timeout=60.0))
        np.testing.assert_allclose(spawned.frames, inline.frames,
                                   rtol=0, atol=1e-12)
        self.assertEqual(len(spawned_ledger), len(inline_ledger))
        self.assertEqual(
            [e[:4] for e in spawned_ledger.entries],
            [e[:4] for e in inline_ledger.entries])

    def test_non_finite_prediction(self):
        params = self.net.parameters()
        params[-1] = np.full_like(params[-1], np.inf)
        nets = shared(self.net.with_parameters(params), self.partition)
        with self.assertRaises(NonFiniteStateError) as ctx:
            rollout(self.initial, nets, self.partition,
                    RolloutConfig(steps=2))
        self.assertEqual(ctx.exception.step, 1)

    def test_grid_mismatch(self):
        with self.assertRaises(ShapeMismatchError):
            rollout(random_snapshot(8), self.nets, self.partition,
                    RolloutConfig(steps=1))

    def test_invalid_config(self):
        with self.assertRaises(ConfigurationError):
            RolloutConfig(steps=-1).validate()
        with self.assertRaises(ConfigurationError):
            RolloutConfig(backend='mpi').validate()


class TestEvaluate(unittest.TestCase):

    def setUp(self) -> None:
        frames = np.random.default_rng(6).normal(size=(7, 4, 6, 6))
        self.truth = Dataset(frames, 0.1)

    def test_perfect_prediction(self):
        metrics = evaluate(self.truth, self.truth)
        self.assertEqual(list(metrics.columns), METRIC_COLUMNS)
        self.assertEqual(len(metrics), 7 * 4)
        self.assertEqual(list(metrics.channel[:4]), list(CHANNELS))
        self.assertFalse(np.any(metrics.mape_percent))
        self.assertFalse(np.any(metrics.max_abs_err))

    def test_steps_follow_record_every(self):
        truth = rollout_truth(self.truth, 1, 4, 2)
        np.testing.assert_array_equal(truth.frames,
                                      self.truth.frames[[1, 3, 5]])
        pred = Dataset(truth.frames + 0.5, truth.dt, {'record_every': 2})
        metrics = evaluate(pred, truth)
        self.assertEqual(sorted(metrics.step.unique()), [0, 2, 4])
        np.testing.assert_allclose(metrics.max_abs_err, 0.5)

    def test_truth_too_short(self):
        with self.assertRaises(ConfigurationError):
            rollout_truth(self.truth, 3, 4)

    def test_shape_mismatch(self):
        short = Dataset(self.truth.frames[:3], 0.1)
        with self.assertRaises(ShapeMismatchError):
            evaluate(short, self.truth)


class TestErrorAccumulation(unittest.TestCase):

    def test_rollout_error_grows_with_steps(self):
        # identity stencil plus a constant bias: every step adds the bias
        weights = np.zeros((4, 4, 3, 3))
        weights[range(4), range(4), 1, 1] = 1.0
        net = ConvNet([ConvLayer(weights, np.full(4, 1e-3))])
        partition = make_partition(8, 8, 2, 2, PaddingStrategy.ZERO_INNER,
                                   halo=1)
        initial = random_snapshot(8, seed=9)
        truth = Dataset(np.repeat(initial.data[None], 11, axis=0), 0.1)
        prediction, ledger = rollout(initial, shared(net, partition),
                                     partition, RolloutConfig(steps=10))
        metrics = evaluate(prediction, truth)
        error = metrics.groupby('step').max_abs_err.max()
        self.assertEqual(error[0], 0.0)
        self.assertGreaterEqual(error[10], error[1])
        np.testing.assert_allclose(error[10], 10 * error[1], rtol=1e-9)
        self.assertEqual(len(ledger), 10 * 12)


if __name__ == '__main__':
    unittest.main()
