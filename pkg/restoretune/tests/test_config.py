import json
import os
import tempfile
import unittest

from restoretune import config
from restoretune.core import ParameterError


class TestConfig(unittest.TestCase):
    def test_seed_is_mandatory(self):
        with self.assertRaises(config.ConfigError):
            config.from_dict({})
        self.assertEqual(config.from_dict({}, seed=3).seed, 3)
        invalid = [-1, 2 ** 64, 1.0, True, '7']
        for seed in invalid:
            with self.subTest(case=seed):
                with self.assertRaises(config.ConfigError):
                    config.from_dict({'seed': seed})

    def test_defaults(self):
        experiment = config.from_dict({'seed': 1})
        self.assertEqual(experiment.output_dir, config.DEFAULT_OUTPUT_DIR)
        self.assertEqual(experiment.threads, 1)
        self.assertEqual(experiment.adapt.iterations, 200)
        self.assertEqual(experiment.sweep.iterations, (0, 50, 100, 200, 400))
        self.assertEqual(experiment.test_sets, ('test_recurrent', 'test_control'))

    def test_sections(self):
        experiment = config.from_dict({
            'seed': 5,
            'corpus': {'train_size': 10, 'grid': [2, 2]},
            'arch': {'dilations': [1, 2], 'gated': True},
            'adapt': {'iterations': 7, 'loss_weights': {'rec': 1.0, 'adv': 0.2}},
            'sweep': {'iterations': [0, 3, 7]},
        })
        self.assertEqual(experiment.corpus.train_size, 10)
        self.assertEqual(experiment.corpus.grid, (2, 2))
        self.assertEqual(experiment.arch.dilations, (1, 2))
        self.assertEqual(experiment.adapt.loss_weights.adv, 0.2)
        self.assertEqual(experiment.sweep.iterations, (0, 3, 7))

    def test_invalid(self):
        cases = [
            {'seed': 1, 'optimizer': {}},
            {'seed': 1, 'adapt': {'momentum': 0.9}},
            {'seed': 1, 'adapt': {'iterations': -5}},
            {'seed': 1, 'adapt': []},
            {'seed': 1, 'sweep': {'iterations': [0, 100, 50]}},
            {'seed': 1, 'test_sets': ['train']},
            {'seed': 1, 'threads': 0},
            {'seed': 1, 'adapt': {'iterations': 2.5}},
            {'seed': 1, 'adapt': {'batch_size': True}},
            {'seed': 1, 'adapt': {'checkpoint_every': 10.0}},
            {'seed': 1, 'adapt': {'patch_size': '32'}},
            {'seed': 1, 'adapt': {'max_mask_tries': 1.5}},
            {'seed': 1, 'corpus': {'train_size': 3.0}},
            {'seed': 1, 'corpus': {'test_size': False}},
            {'seed': 1, 'corpus': {'tile_size': 16.5}},
            {'seed': 1, 'pretrain': {'epochs': 1.5}},
            {'seed': 1, 'pretrain': {'heldout_size': 2.0}},
            {'seed': 1, 'pretrain': {'corpus_size': 8.0}},
            {'seed': 1, 'sweep': {'iterations': [0, 2.5]}},
            {'seed': 1, 'metrics': {'ssim_window': 8.0}},
        ]
        for data in cases:
            with self.subTest(case=data):
                with self.assertRaises(config.ConfigError):
                    config.from_dict(data)
        with self.assertRaises(config.ConfigError):
            config.from_dict([1, 2])

    def test_sweep_config(self):
        with self.assertRaises(ParameterError):
            config.SweepConfig(iterations=(0, 0))
        with self.assertRaises(ParameterError):
            config.SweepConfig(iterations=())
        self.assertEqual(config.SweepConfig(iterations=[0]).iterations, (0,))

    def test_overrides(self):
        experiment = config.from_dict({'seed': 1, 'output_dir': 'a'}, seed=2, output_dir='b')
        self.assertEqual((experiment.seed, experiment.output_dir), (2, 'b'))

    def test_json_round_trip(self):
        experiment = config.from_dict({'seed': 9, 'adapt': {'masking': 'self_similar'}})
        self.assertEqual(config.from_dict(json.loads(config.to_json(experiment))), experiment)

    def test_fingerprint(self):
        experiment = config.from_dict({'seed': 9})
        self.assertEqual(config.fingerprint(experiment), config.fingerprint(
            config.from_dict({'seed': 9})))
        self.assertEqual(config.fingerprint(experiment),
                         config.fingerprint(experiment._replace(output_dir='elsewhere')))
        self.assertNotEqual(config.fingerprint(experiment),
                            config.fingerprint(config.from_dict({'seed': 10})))
        self.assertEqual(len(config.fingerprint(experiment)), 64)

    def test_load_config(self):
        directory = tempfile.mkdtemp(prefix='restoretune_')
        path = os.path.join(directory, 'experiment.json')
        with open(path, 'w') as config_file:
            json.dump({'seed': 4, 'corpus': {'test_size': 2}}, config_file)
        experiment = config.load_config(path, output_dir=directory)
        self.assertEqual(experiment.corpus.test_size, 2)
        self.assertEqual(experiment.output_dir, directory)

        resolved = os.path.join(directory, 'config.json')
        config.write_resolved(experiment, resolved)
        self.assertEqual(config.load_config(resolved), experiment)

        malformed = os.path.join(directory, 'malformed.json')
        with open(malformed, 'w') as config_file:
            config_file.write('{"seed": ')
        with self.assertRaises(config.ConfigError):
            config.load_config(malformed)
        with self.assertRaises(FileNotFoundError):
            config.load_config(os.path.join(directory, 'missing.json'))

    def test_load_without_file(self):
        self.assertEqual(config.load_config(seed=12).seed, 12)
        with self.assertRaises(config.ConfigError):
            config.load_config()


if __name__ == '__main__':
    unittest.main()
