"""Experiment configuration

An experiment is described by a single JSON file mapping section names to
objects of field values, for example:

    {
        "seed": 7,
        "corpus": {"train_size": 64, "test_size": 20},
        "adapt": {"iterations": 100}
    }

Missing fields take the defaults of the section namedtuples. The resolved
configuration is written next to the outputs of every command.
"""
import hashlib
import json
from collections import namedtuple

from restoretune import corpus, metrics
from restoretune.adapt import AdaptConfig
from restoretune.core import ParameterError, check_count
from restoretune.corpus import CorpusConfig, PretrainConfig
from restoretune.network import ArchConfig, DiscConfig

DEFAULT_OUTPUT_DIR = 'restoretune_out'
SEED_LIMIT = 2 ** 64


class ConfigError(ValueError):
    pass


_MetricsConfig = namedtuple('MetricsConfig', ['ssim_window'])
_MetricsConfig.__new__.__defaults__ = (metrics.SSIM_WINDOW,)


class MetricsConfig(_MetricsConfig):
    def __new__(cls, *args, **kwargs):
        self = super().__new__(cls, *args, **kwargs)
        return self._replace(ssim_window=check_count('ssim_window', self.ssim_window, 2))


_SweepConfig = namedtuple('SweepConfig', ['iterations', 'sets'])
_SweepConfig.__new__.__defaults__ = ((0, 50, 100, 200, 400), ('test_recurrent',))


class SweepConfig(_SweepConfig):
    """Iteration counts evaluated by the sweep and the test sets it runs on"""
    def __new__(cls, *args, **kwargs):
        self = super().__new__(cls, *args, **kwargs)
        iterations = tuple(check_count('sweep iterations', count) for count in self.iterations)
        if not iterations:
            raise ParameterError('Sweep needs at least one iteration count')
        if iterations[0] < 0 or any(a >= b for a, b in zip(iterations, iterations[1:])):
            raise ParameterError('Sweep iteration counts must be non-negative and strictly '
                                 'increasing: {}'.format(list(iterations)))
        sets = tuple(self.sets)
        _check_test_sets(sets)
        return self._replace(iterations=iterations, sets=sets)


def _check_test_sets(sets):
    for set_name in sets:
        if set_name not in corpus.SETS or set_name == 'train':
            raise ParameterError('Unknown test set "{}"'.format(set_name))


SECTIONS = {
    'corpus': CorpusConfig,
    'arch': ArchConfig,
    'disc': DiscConfig,
    'pretrain': PretrainConfig,
    'adapt': AdaptConfig,
    'metrics': MetricsConfig,
    'sweep': SweepConfig,
}

_ExperimentConfig = namedtuple('ExperimentConfig', ['seed', 'output_dir', 'threads', 'test_sets']
                               + list(SECTIONS))
_ExperimentConfig.__new__.__defaults__ = (DEFAULT_OUTPUT_DIR, 1,
                                          ('test_recurrent', 'test_control')) + tuple(
                                              section() for section in SECTIONS.values())


class ExperimentConfig(_ExperimentConfig):
    """Configuration of a whole experiment

    seed: global seed every random stream of the experiment derives from
    output_dir: directory holding every artifact of the experiment
    threads: number of torch threads (bit-exact reruns need 1)
    test_sets: test sets adapted and evaluated by the adapt and eval commands
    """
    def __new__(cls, *args, **kwargs):
        self = super().__new__(cls, *args, **kwargs)
        if self.seed is None:
            raise ConfigError('A seed is mandatory')
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) \
                or not 0 <= self.seed < SEED_LIMIT:
            raise ConfigError('Seed must be an unsigned 64-bit integer: {!r}'.format(self.seed))
        if not isinstance(self.threads, int) or self.threads < 1:
            raise ConfigError('threads must be a positive integer: {!r}'.format(self.threads))
        test_sets = tuple(self.test_sets)
        _check_test_sets(test_sets)
        return self._replace(test_sets=test_sets)


def from_dict(data, seed=None, output_dir=None):
    """Build an ExperimentConfig from parsed JSON

    :param data: Mapping from section (or top-level field) name to value
    :param seed: Seed overriding the one of `data`
    :param output_dir: Output directory overriding the one of `data`
    """
    if not isinstance(data, dict):
        raise ConfigError('Configuration must be a JSON object')
    unknown = set(data) - set(ExperimentConfig._fields)
    if unknown:
        raise ConfigError('Unknown configuration keys: {}'.format(', '.join(sorted(unknown))))

    kwargs = {}
    for key, value in data.items():
        if key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError('Section "{}" must be a JSON object'.format(key))
            try:
                kwargs[key] = SECTIONS[key](**value)
            except (TypeError, ValueError) as exc:
                raise ConfigError('Invalid section "{}": {}'.format(key, exc)) from exc
        else:
            kwargs[key] = value
    if seed is not None:
        kwargs['seed'] = seed
    if output_dir is not None:
        kwargs['output_dir'] = output_dir
    kwargs.setdefault('seed', None)
    try:
        return ExperimentConfig(**kwargs)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path=None, seed=None, output_dir=None):
    """Read an ExperimentConfig from a JSON file (or from defaults if `path`
    is None), applying command line overrides"""
    data = {}
    if path is not None:
        with open(path) as config_file:
            try:
                data = json.load(config_file)
            except json.JSONDecodeError as exc:
                raise ConfigError('Malformed configuration file {}: {}'
                                  .format(path, exc)) from exc
    return from_dict(data, seed, output_dir)


def to_plain(value):
    """Convert namedtuples to dicts and tuples to lists, recursively"""
    if isinstance(value, tuple) and hasattr(value, '_asdict'):
        return {key: to_plain(item) for key, item in value._asdict().items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(item) for item in value]
    return value


def to_json(config):
    return json.dumps(to_plain(config), indent=2, sort_keys=True)


def fingerprint(config):
    """SHA-256 of the canonical JSON of the configuration

    The output directory is left out so that reruns of one configuration in
    different directories share their fingerprint.
    """
    plain = to_plain(config)
    del plain['output_dir']
    canonical = json.dumps(plain, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def write_resolved(config, path):
    with open(path, 'w') as config_file:
        config_file.write(to_json(config))
        config_file.write('\n')
