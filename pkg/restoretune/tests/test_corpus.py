import os
import tempfile
import unittest

import numpy as np
import torch

from restoretune import corpus, maskgen, metrics, network
from restoretune.core import ParameterError, RandomState

SMALL_STROKES = maskgen.FreeFormParams(max_strokes=3, max_vertices=3, brush_width=(2, 4),
                                       max_segment_length=8)
TINY_CORPUS = corpus.CorpusConfig(train_size=6, test_size=3, tile_size=4, grid=(4, 4),
                                  test_mask='rect', rect_sides=(3, 6))
TINY_PRETRAIN = corpus.PretrainConfig(epochs=2, batch_size=2, learning_rate=1e-2,
                                      coverage=(0.02, 0.6), rect_sides=(2, 8),
                                      free_form=SMALL_STROKES, heldout_size=2)
TINY_ARCH = network.ArchConfig(channels=4, depth=1, width_multiplier=1, dilations=(1,))


def tiles(image, size):
    rows, columns = image.shape[0] // size, image.shape[1] // size
    return [image[row * size:(row + 1) * size, column * size:(column + 1) * size]
            for row in range(rows) for column in range(columns)]


def best_match(image, size):
    """Mean over the tiles of an image of their best NCC with another tile"""
    cells = tiles(image, size)
    return np.mean([max(metrics.ncc(cell, other) for j, other in enumerate(cells) if j != i)
                    for i, cell in enumerate(cells)])


class TestSynthesis(unittest.TestCase):
    def test_recurrence_spec(self):
        spec = corpus.RecurrenceSpec(tile_size=16, grid=[2, 3])
        self.assertEqual(spec.grid, (2, 3))
        self.assertEqual(spec.dims, (32, 48))
        invalid = [
            {'brightness_jitter': 0.25},
            {'brightness_jitter': -0.01},
            {'shift_jitter': 1.5},
            {'family': 'noise'},
            {'channels': 2},
            {'grid': (0, 4)},
        ]
        for kwargs in invalid:
            with self.subTest(case=kwargs):
                with self.assertRaises(ParameterError):
                    corpus.RecurrenceSpec(**kwargs)

    def test_synth_recurrent(self):
        for family in corpus.FAMILIES:
            with self.subTest(case=family):
                spec = corpus.RecurrenceSpec(family=family)
                image, tiling = corpus.synth_recurrent(RandomState(1), spec)
                self.assertEqual(image.shape, (128, 128, 3))
                self.assertTrue(np.all((image >= 0) & (image <= 1)))
                self.assertEqual(len(tiling.positions), 16)
                self.assertEqual(tiling.positions[5], (32, 32))
                self.assertTrue(all(abs(offset) <= 0.05 for offset in tiling.brightness_offsets))

    def test_exact_copies_without_jitter(self):
        for family in corpus.FAMILIES:
            with self.subTest(case=family):
                spec = corpus.RecurrenceSpec(brightness_jitter=0, shift_jitter=0, family=family)
                image, tiling = corpus.synth_recurrent(RandomState(2), spec)
                copies = tiles(image, spec.tile_size)
                for copy in copies:
                    np.testing.assert_array_equal(copy, copies[0])
                np.testing.assert_array_equal(copies[0], tiling.base_tile)

    def test_copies_correlate(self):
        for family in ('stripes', 'checker', 'blobs'):
            for seed in range(3):
                with self.subTest(case=(family, seed)):
                    spec = corpus.RecurrenceSpec(family=family)
                    image, _ = corpus.synth_recurrent(RandomState(seed), spec)
                    copies = tiles(image, spec.tile_size)
                    for copy in copies[1:]:
                        self.assertGreaterEqual(metrics.ncc(copies[0], copy), 0.9)

    def test_brightness_only_jitter(self):
        spec = corpus.RecurrenceSpec(shift_jitter=0, family='brick')
        image, _ = corpus.synth_recurrent(RandomState(3), spec)
        copies = tiles(image, spec.tile_size)
        for copy in copies[1:]:
            self.assertGreater(metrics.ncc(copies[0], copy), 0.999)

    def test_synth_control(self):
        image = corpus.synth_control(RandomState(0), (32, 48), 1, sigma=2.0)
        self.assertEqual(image.shape, (32, 48, 1))
        self.assertAlmostEqual(image.min(), 0.05, places=12)
        self.assertAlmostEqual(image.max(), 0.95, places=12)
        with self.assertRaises(ParameterError):
            corpus.synth_control(RandomState(0), (4, 48))
        with self.assertRaises(ParameterError):
            corpus.synth_control(RandomState(0), (32, 48), sigma=0)

    def test_control_lacks_recurrence(self):
        families = sorted(corpus.FAMILIES)
        recurrent, control = [], []
        for seed in range(20):
            spec = corpus.RecurrenceSpec(family=families[seed % len(families)])
            image, _ = corpus.synth_recurrent(RandomState(seed), spec)
            recurrent.append(best_match(image, spec.tile_size))
            control.append(best_match(corpus.synth_control(RandomState(seed), spec.dims),
                                      spec.tile_size))
        self.assertLess(np.mean(control), np.mean(recurrent))

    def test_tile_mask(self):
        mask = corpus.tile_mask(RandomState(4), (64, 96), 32)
        self.assertEqual(np.count_nonzero(mask), 32 * 32)
        top, left = [int(indices.min()) for indices in np.nonzero(mask)]
        self.assertEqual((top % 32, left % 32), (0, 0))
        self.assertTrue(np.all(mask[top:top + 32, left:left + 32] == 1))
        with self.assertRaises(ParameterError):
            corpus.tile_mask(RandomState(4), (16, 16), 32)


class TestCorpus(unittest.TestCase):
    def test_corpus_config(self):
        with self.assertRaises(ParameterError):
            corpus.CorpusConfig(train_size=0)
        with self.assertRaises(ParameterError):
            corpus.CorpusConfig(test_mask='circle')
        config = corpus.CorpusConfig(free_form={'max_strokes': 2}, coverage=[0.1, 0.3])
        self.assertEqual(config.free_form.max_strokes, 2)
        self.assertEqual(config.coverage, (0.1, 0.3))

    def test_item_seeds(self):
        seeds = corpus.item_seeds(RandomState(0), TINY_CORPUS)
        self.assertEqual([len(seeds[name]) for name in corpus.SETS], [6, 3, 3])
        self.assertFalse(set(seeds['train']) & set(seeds['test_recurrent']))
        self.assertFalse(set(seeds['train']) & set(seeds['test_control']))

    def test_generate_corpus(self):
        items = list(corpus.generate_corpus(RandomState(5), TINY_CORPUS))
        again = list(corpus.generate_corpus(RandomState(5), TINY_CORPUS))
        self.assertEqual(len(items), 12)
        for item, other in zip(items, again):
            with self.subTest(case=(item.set, item.id)):
                np.testing.assert_array_equal(item.image, other.image)
                self.assertEqual(item.image.shape, (16, 16, 3))
                if item.set == 'train':
                    self.assertIsNone(item.mask)
                else:
                    np.testing.assert_array_equal(item.mask, other.mask)
                    self.assertTrue(0 < np.count_nonzero(item.mask) <= 36)
        self.assertTrue(all(item.spec.startswith('control/') for item in items
                            if item.set == 'test_control'))
        self.assertFalse(any(item.spec.startswith('control/') for item in items
                             if item.set == 'test_recurrent'))

    def test_write_read_corpus(self):
        first = tempfile.mkdtemp(prefix='restoretune_')
        second = tempfile.mkdtemp(prefix='restoretune_')
        for directory in (first, second):
            corpus.write_corpus(RandomState(6), TINY_CORPUS, directory)
        manifests = []
        for directory in (first, second):
            with open(os.path.join(directory, 'manifest.csv'), 'rb') as manifest_file:
                manifests.append(manifest_file.read())
        self.assertEqual(manifests[0], manifests[1])
        self.assertEqual(len(manifests[0].decode().strip().splitlines()), 1 + 6 + 3 + 3)

        items = corpus.read_corpus(first, 'test_recurrent')
        generated = [item for item in corpus.generate_corpus(RandomState(6), TINY_CORPUS)
                     if item.set == 'test_recurrent']
        self.assertEqual([item.id for item in items], [item.id for item in generated])
        for item, reference in zip(items, generated):
            np.testing.assert_array_equal(item.mask, reference.mask)
            self.assertLessEqual(np.abs(item.image - reference.image).max(), 0.5 / 255 + 1e-12)

        with self.assertRaises(FileNotFoundError):
            corpus.read_corpus(tempfile.mkdtemp(prefix='restoretune_'), 'train')


class TestPretrain(unittest.TestCase):
    def setUp(self):
        self.images = [item.image for item in
                       corpus.generate_corpus(RandomState(7), TINY_CORPUS, sets=('train',))]

    def test_pretrain_config(self):
        invalid = [
            {'corpus_size': 0},
            {'batch_size': 0},
            {'epochs': -1},
            {'epochs': 1.5},
            {'heldout_size': True},
            {'corpus_size': 4.0},
            {'rect_fraction': 1.5},
            {'learning_rate': -1},
        ]
        for kwargs in invalid:
            with self.subTest(case=kwargs):
                with self.assertRaises(ParameterError):
                    corpus.PretrainConfig(**kwargs)

    def test_pretrain_log(self):
        net = network.init_network(RandomState(0), TINY_ARCH, 3)
        net, log = corpus.pretrain(net, TINY_PRETRAIN, self.images, RandomState(1))
        # 6 images, 2 held out, batches of 2
        self.assertEqual(len(log), 2 * 2)
        self.assertEqual([(row.epoch, row.batch) for row in log], [(0, 0), (0, 1), (1, 0), (1, 1)])
        self.assertTrue(all(np.isfinite(row.loss) for row in log))

        path = os.path.join(tempfile.mkdtemp(prefix='restoretune_'), 'log.csv')
        corpus.write_log(log, path)
        with open(path) as log_file:
            lines = log_file.read().splitlines()
        self.assertEqual(lines[0], ','.join(corpus.PRETRAIN_LOG_COLUMNS))
        self.assertEqual(len(lines), 5)

    def test_pretrain_deterministic(self):
        results = []
        for _ in range(2):
            net = network.init_network(RandomState(0), TINY_ARCH, 3)
            net, log = corpus.pretrain(net, TINY_PRETRAIN, self.images, RandomState(1))
            results.append((net, log))
        self.assertEqual(results[0][1], results[1][1])
        for (name, param), other in zip(results[0][0].state_dict().items(),
                                        results[1][0].state_dict().values()):
            with self.subTest(case=name):
                self.assertTrue(torch.equal(param, other))

    def test_pretrain_zero_epochs(self):
        net = network.init_network(RandomState(0), TINY_ARCH, 3)
        before = [param.detach().clone() for param in net.parameters()]
        trained, log = corpus.pretrain(net, TINY_PRETRAIN._replace(epochs=0), self.images,
                                       RandomState(1))
        self.assertEqual(log, [])
        for old, new in zip(before, trained.parameters()):
            self.assertTrue(torch.equal(old, new.detach()))

    def test_pretrain_zero_learning_rate(self):
        net = network.init_network(RandomState(0), TINY_ARCH, 3)
        before = [param.detach().clone() for param in net.parameters()]
        corpus.pretrain(net, TINY_PRETRAIN._replace(learning_rate=0.0), self.images,
                        RandomState(1))
        for old, new in zip(before, net.parameters()):
            self.assertTrue(np.array_equal(old.numpy(), new.detach().numpy()))

    def test_pretrain_adversarial(self):
        net = network.init_network(RandomState(0), TINY_ARCH, 3)
        config = TINY_PRETRAIN._replace(epochs=1, loss_weights=corpus.LossWeights(1.0, 0.1))
        _, log = corpus.pretrain(net, config, self.images, RandomState(1),
                                 network.DiscConfig(channels=2, depth=2))
        self.assertEqual(len(log), 2)

    def test_heldout_psnr_improves_with_training(self):
        images = [item.image for item in corpus.generate_corpus(
            RandomState(8), TINY_CORPUS._replace(train_size=12), sets=('train',))]
        net = network.init_network(RandomState(0), TINY_ARCH, 3)
        config = TINY_PRETRAIN._replace(epochs=10, learning_rate=5e-3)
        _, log = corpus.pretrain(net, config, images, RandomState(2))
        self.assertGreater(log[-1].heldout_psnr, log[0].heldout_psnr)


if __name__ == '__main__':
    unittest.main()
