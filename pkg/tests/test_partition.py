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

import itertools
import unittest

import numpy as np

from pdeshard.exceptions import ConfigurationError, ShapeMismatchError
from pdeshard.models.neural import KERNEL_SIZE, LAYER_CHANNELS, init_network
from pdeshard.parallel.partition import BOUNDARY, DIRECTIONS, MIRROR, \
    OFFSETS, PaddingStrategy, Partition, assemble, core_slice, \
    extend_with_halos, extract_input, halo_strips, make_partition, split


def random_field(h, w, seed=0):
    return np.random.default_rng(seed).normal(size=(4, h, w))


class TestMakePartition(unittest.TestCase):

    def test_worked_example(self):
        partition = make_partition(10, 10, 2, 2, PaddingStrategy.ZERO_INNER)
        self.assertEqual(partition.size, 4)
        for spec in partition.ranks:
            self.assertEqual(spec.rows * spec.cols, 25)
        self.assertEqual([s.core for s in partition.ranks],
                         [(0, 0, 5, 5), (0, 5, 5, 5), (5, 0, 5, 5),
                          (5, 5, 5, 5)])

    def test_full_scale_layout(self):
        partition = make_partition(256, 256, 8, 8, PaddingStrategy.EXACT_HALO)
        self.assertEqual(partition.size, 64)
        self.assertEqual(partition.core_shape, (32, 32))
        self.assertEqual(partition.halo, 8)

    def test_single_rank(self):
        partition = make_partition(16, 16, 1, 1, PaddingStrategy.ZERO_INNER)
        (spec,) = partition.ranks
        self.assertTrue(all(spec.neighbors[d] is BOUNDARY
                            for d in DIRECTIONS))
        self.assertEqual(partition.message_count(), 0)

    def test_non_divisible_grid(self):
        with self.assertRaises(ConfigurationError) as ctx:
            make_partition(10, 10, 3, 2, PaddingStrategy.ZERO_INNER)
        self.assertIn('1, 2, 5, 10', str(ctx.exception))

    def test_tiling(self):
        partition = make_partition(12, 18, 3, 2, PaddingStrategy.ZERO_INNER)
        cover = np.zeros((12, 18), dtype=int)
        for spec in partition.ranks:
            cover[spec.row0:spec.row0 + spec.rows,
                  spec.col0:spec.col0 + spec.cols] += 1
        np.testing.assert_array_equal(cover, 1)

    def test_neighbour_symmetry(self):
        for px, py in itertools.product((1, 2, 3, 4), repeat=2):
            partition = make_partition(12 * py, 12 * px, px, py,
                                       PaddingStrategy.ZERO_INNER)
            for spec in partition.ranks:
                j, i = divmod(spec.rank, px)
                for direction, (dj, di) in OFFSETS.items():
                    neighbor = spec.neighbors[direction]
                    on_edge = not (0 <= j + dj < py and 0 <= i + di < px)
                    self.assertEqual(neighbor is BOUNDARY, on_edge)
                    if neighbor is not BOUNDARY:
                        back = partition.ranks[neighbor]
                        self.assertEqual(back.neighbors[MIRROR[direction]],
                                         spec.rank)

    def test_message_count(self):
        two = make_partition(8, 8, 2, 2, PaddingStrategy.ZERO_INNER)
        self.assertEqual(two.message_count(), 12)
        four = make_partition(16, 16, 4, 4, PaddingStrategy.ZERO_INNER)
        # 4 corners x 3, 8 edge ranks x 5, 4 interior ranks x 8
        self.assertEqual(four.message_count(), 12 + 40 + 32)

    def test_dict_round_trip(self):
        partition = make_partition(16, 32, 4, 2, PaddingStrategy.EXACT_HALO)
        self.assertEqual(Partition.from_dict(partition.to_dict()), partition)


class TestPaddingStrategy(unittest.TestCase):

    def test_halo_from_layers(self):
        reach = (KERNEL_SIZE - 1) // 2
        self.assertEqual(PaddingStrategy.ZERO_INNER.halo, reach)
        self.assertEqual(PaddingStrategy.EXACT_HALO.halo,
                         reach * (len(LAYER_CHANNELS) - 1))
        self.assertEqual(PaddingStrategy.ZERO_INNER.halo, 2)
        self.assertEqual(PaddingStrategy.EXACT_HALO.halo, 8)

    def test_halo_for_network(self):
        net = init_network(0, channels=(4, 5, 4), kernel_size=3)
        self.assertEqual(PaddingStrategy.ZERO_INNER.halo_for(net), 1)
        self.assertEqual(PaddingStrategy.EXACT_HALO.halo_for(net), 2)


class TestExtractInput(unittest.TestCase):

    def setUp(self) -> None:
        self.field = random_field(12, 12)
        self.partition = make_partition(12, 12, 3, 3,
                                        PaddingStrategy.ZERO_INNER)

    def test_interior_rank(self):
        spec = self.partition.ranks[4]
        window = extract_input(self.field, spec, 2)
        self.assertEqual(window.shape, (4, 8, 8))
        np.testing.assert_array_equal(window, self.field[:, 2:10, 2:10])

    def test_corner_rank(self):
        spec = self.partition.ranks[0]
        window = extract_input(self.field, spec, 2)
        np.testing.assert_array_equal(window[:, :2, :], 0.0)
        np.testing.assert_array_equal(window[:, :, :2], 0.0)
        np.testing.assert_array_equal(window[:, 2:, 2:],
                                      self.field[:, 0:6, 0:6])

    def test_halo_from_strategy(self):
        spec = self.partition.ranks[4]
        np.testing.assert_array_equal(
            extract_input(self.field, spec,
                          strategy=PaddingStrategy.ZERO_INNER),
            extract_input(self.field, spec, 2))

    def test_zero_halo_is_core(self):
        for spec in self.partition.ranks:
            np.testing.assert_array_equal(extract_input(self.field, spec, 0),
                                          core_slice(self.field, spec))

    def test_core_parts_reassemble(self):
        halo = 2
        cores = {spec.rank: extract_input(self.field, spec, halo)[
            :, halo:-halo, halo:-halo] for spec in self.partition.ranks}
        np.testing.assert_array_equal(assemble(cores, self.partition),
                                      self.field)

    def test_tensor_too_small(self):
        with self.assertRaises(ShapeMismatchError):
            extract_input(random_field(8, 8), self.partition.ranks[8], 2)


class TestHaloStrips(unittest.TestCase):

    def test_indexing(self):
        core = np.arange(16, dtype=float).reshape(1, 4, 4)
        strips = halo_strips(core, 1)
        np.testing.assert_array_equal(strips['N'], core[:, 0:1, :])
        np.testing.assert_array_equal(strips['S'], core[:, 3:4, :])
        np.testing.assert_array_equal(strips['W'], core[:, :, 0:1])
        self.assertEqual(strips['NE'].shape, (1, 1, 1))
        self.assertEqual(strips['NE'][0, 0, 0], core[0, 0, 3])
        self.assertEqual(strips['SW'][0, 0, 0], core[0, 3, 0])

    def test_constant_field(self):
        for strip in halo_strips(np.full((4, 6, 6), 2.5), 2).values():
            np.testing.assert_array_equal(strip, 2.5)

    def test_halo_too_wide(self):
        with self.assertRaises(ShapeMismatchError):
            halo_strips(np.zeros((4, 3, 8)), 4)

    def test_no_halo(self):
        self.assertEqual(halo_strips(np.zeros((4, 3, 3)), 0), {})

    def test_exchanged_strips_rebuild_training_view(self):
        field = random_field(16, 24, seed=3)
        for strategy in PaddingStrategy:
            partition = make_partition(16, 24, 3, 2, strategy)
            halo = min(partition.halo, 4)
            cores = split(field, partition)
            for spec in partition.ranks:
                received = {
                    direction: halo_strips(cores[neighbor], halo)[
                        MIRROR[direction]]
                    for direction, neighbor in spec.neighbor_ranks()}
                np.testing.assert_array_equal(
                    extend_with_halos(cores[spec.rank], received, halo),
                    extract_input(field, spec, halo))


class TestAssemble(unittest.TestCase):

    def test_split_inverse(self):
        field = random_field(16, 16, seed=1)
        for px, py in ((1, 1), (2, 2), (4, 2), (1, 4)):
            partition = make_partition(16, 16, px, py,
                                       PaddingStrategy.ZERO_INNER)
            np.testing.assert_array_equal(
                assemble(split(field, partition), partition), field)

    def test_ramp_has_no_seams(self):
        ramp = np.broadcast_to(np.arange(64.0).reshape(8, 8), (4, 8, 8))
        partition = make_partition(8, 8, 2, 2, PaddingStrategy.ZERO_INNER)
        np.testing.assert_array_equal(
            assemble(split(ramp, partition), partition), ramp)

    def test_missing_rank(self):
        partition = make_partition(8, 8, 2, 2, PaddingStrategy.ZERO_INNER)
        outputs = split(random_field(8, 8), partition)
        del outputs[3]
        with self.assertRaises(ShapeMismatchError):
            assemble(outputs, partition)

    def test_wrong_block_shape(self):
        partition = make_partition(8, 8, 2, 2, PaddingStrategy.ZERO_INNER)
        outputs = split(random_field(8, 8), partition)
        outputs[1] = np.zeros((4, 3, 4))
        with self.assertRaises(ShapeMismatchError):
            assemble(outputs, partition)


if __name__ == '__main__':
    unittest.main()
