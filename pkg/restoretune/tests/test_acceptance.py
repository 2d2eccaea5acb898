"""Desk-scale experiments over a full pipeline run

These take several minutes on a laptop and only run when the environment
variable RESTORETUNE_ACCEPTANCE is set to 1.
"""
import os
import statistics
import tempfile
import unittest

import numpy as np
import torch

import restoretune.config
import restoretune.main
from restoretune import core, corpus, metrics, network
from restoretune.adapt import fine_tune, initial_restore
from restoretune.core import RandomState

ACCEPTANCE = os.environ.get('RESTORETUNE_ACCEPTANCE') == '1'
SEED = 2024


def mean_l1(a, b):
    return float(np.mean(np.abs(a - b)))


@unittest.skipUnless(ACCEPTANCE, 'set RESTORETUNE_ACCEPTANCE=1 to run')
class TestAcceptance(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        directory = tempfile.mkdtemp(prefix='restoretune_acceptance_')
        cls.config = restoretune.config.from_dict({
            'seed': SEED,
            'corpus': {'test_size': 20},
            'sweep': {'iterations': [0, 50, 100, 200, 400], 'sets': ['test_recurrent']},
        }, output_dir=directory)
        cls.results = {}
        for command in restoretune.main.COMMANDS:
            if command != 'eval':
                cls.results[command] = restoretune.main.run(command, cls.config)
        checkpoint = os.path.join(directory, 'pretrain', 'checkpoint.pt')
        cls.net, _ = network.load_checkpoint(checkpoint)

    def setUp(self):
        torch.set_num_threads(1)

    def gains(self, set_name, before, after):
        report = self.results['adapt'][set_name]
        return [getattr(row, after) - getattr(row, before) for row in report.rows]

    def test_baseline_beats_copy_zero(self):
        baseline, copy_zero = [], []
        for set_name in ('test_recurrent', 'test_control'):
            items = corpus.read_corpus(os.path.join(self.config.output_dir, 'corpus'), set_name)
            for item in items:
                masked = core.apply_mask(item.image, item.mask)
                restored = initial_restore(self.net, masked, item.mask)
                baseline.append(metrics.region_psnr(restored, item.image, item.mask))
                copy_zero.append(metrics.region_psnr(masked, item.image, item.mask))
        self.assertGreaterEqual(statistics.mean(baseline) - statistics.mean(copy_zero), 3.0)

    def test_recurrent_gain(self):
        psnr_gains = self.gains('test_recurrent', 'psnr_before', 'psnr_after')
        ssim_gains = self.gains('test_recurrent', 'ssim_before', 'ssim_after')
        self.assertEqual(len(psnr_gains), 20)
        self.assertGreaterEqual(statistics.median(psnr_gains), 0.3)
        self.assertGreaterEqual(statistics.median(ssim_gains), 0.0)

    def test_gain_depends_on_recurrence(self):
        recurrent = self.gains('test_recurrent', 'psnr_before', 'psnr_after')
        control = self.gains('test_control', 'psnr_before', 'psnr_after')
        self.assertGreater(statistics.mean(recurrent), statistics.mean(control))

    def test_no_collapse_onto_target(self):
        items = corpus.read_corpus(os.path.join(self.config.output_dir, 'corpus'),
                                   'test_recurrent')
        closer_to_own_baseline = 0
        for index, item in enumerate(items):
            other = items[(index + 1) % len(items)]
            masked = core.apply_mask(item.image, item.mask)
            target = initial_restore(self.net, masked, item.mask)
            adapt_config = self.config.adapt._replace(
                seed=RandomState(SEED).child('anti_collapse', index).seed)
            tuned, _, _ = fine_tune(self.net, masked, item.mask, adapt_config)

            other_masked = core.apply_mask(other.image, other.mask)
            other_baseline = initial_restore(self.net, other_masked, other.mask)
            restored = initial_restore(tuned, other_masked, other.mask)
            if mean_l1(restored, other_baseline) < mean_l1(restored, target):
                closer_to_own_baseline += 1
        self.assertGreaterEqual(closer_to_own_baseline, 0.8 * len(items))

    def test_targeted_and_random_masking(self):
        spec = corpus.RecurrenceSpec(brightness_jitter=0, shift_jitter=0)
        rs = RandomState(SEED).child('exact_tiling')
        gains = {'random': [], 'self_similar': []}
        for index in range(10):
            item_rs = rs.child(index)
            family = corpus.FAMILIES[index % len(corpus.FAMILIES)]
            image, _ = corpus.synth_recurrent(item_rs, spec._replace(family=family))
            mask = corpus.tile_mask(item_rs.child('mask'), spec.dims, spec.tile_size)
            masked = core.apply_mask(image, mask)
            baseline = initial_restore(self.net, masked, mask)
            for masking in gains:
                adapt_config = self.config.adapt._replace(masking=masking,
                                                          seed=item_rs.child('adapt').seed)
                _, adapted, _ = fine_tune(self.net, masked, mask, adapt_config)
                gains[masking].append(metrics.psnr(adapted, image)
                                      - metrics.psnr(baseline, image))
        for masking, values in gains.items():
            with self.subTest(case=masking):
                self.assertGreater(statistics.median(values), 0)

    def test_sweep(self):
        curve = self.results['sweep']['test_recurrent']
        self.assertEqual([row['iterations'] for row in curve], [0, 50, 100, 200, 400])
        best = max(curve, key=lambda row: row['psnr'])
        self.assertGreater(best['iterations'], 0)

        # The adapt command runs the default 200 iterations with the same seeds
        report = self.results['adapt']['test_recurrent']
        self.assertEqual(curve[0]['psnr'], report.means['psnr_before'])
        row_200, = [row for row in curve if row['iterations'] == 200]
        self.assertEqual(row_200['psnr'], report.means['psnr_after'])


if __name__ == '__main__':
    unittest.main()
