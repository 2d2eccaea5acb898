"""Command line interface of restoretune"""

import argparse
import csv
import importlib.metadata
import logging
import math
import os
import sys

import torch

import restoretune.config
from restoretune import core, corpus, metrics, network, plot
from restoretune.adapt import fine_tune, initial_restore
from restoretune.core import NumericError, RandomState

logger = logging.getLogger('restoretune')

COMMANDS = ('datagen', 'pretrain', 'adapt', 'eval', 'sweep')
CURVE_COLUMNS = ['iterations', 'psnr', 'ssim', 'l1pct']

EXIT_SUCCESS = 0
EXIT_INVALID = 1
EXIT_NUMERIC = 2

USAGE = """restoretune {datagen,pretrain,adapt,eval,sweep} [--config PATH]
                   [--out DIR] [--seed SEED] [--tee-csv] [-h]

Fine-tune an inpainting network on each test image, using its own restoration
of the image as training target
"""
EPILOG = "See also 'restoretune COMMAND --help'"


def seed_validation(seed):
    if seed.isdigit() and int(seed) < restoretune.config.SEED_LIMIT:
        return int(seed)
    raise ValueError('seed must be an unsigned 64-bit integer')


def parse(args):
    """Parse command line arguments

    :param args: Arguments to parse
    :return: Tuple made of the subcommand called and all parsed arguments
    """
    common_parser = argparse.ArgumentParser(add_help=False)
    common_parser.add_argument(
        '-c', '--config',
        help='JSON configuration file of the experiment (default: built-in '
             'defaults, which require --seed)',
        metavar='PATH',
    )
    common_parser.add_argument(
        '-o', '--out',
        help='experiment directory, overriding the output_dir of the '
             'configuration',
        metavar='DIR',
    )
    common_parser.add_argument(
        '-s', '--seed',
        help='global seed, overriding the seed of the configuration',
        type=seed_validation,
        metavar='SEED',
    )
    common_parser.add_argument(
        '--tee-csv',
        help='also write the CSV rows produced by the command to standard output',
        action='store_true',
    )

    parser = argparse.ArgumentParser(prog='restoretune', usage=USAGE, epilog=EPILOG)
    parser.add_argument(
        '-v', '--version',
        action='version',
        version='%(prog)s {}'.format(_version()),
    )
    subparsers = parser.add_subparsers(dest='command', metavar='COMMAND')
    subparsers.required = True
    descriptions = {
        'datagen': 'generate the synthetic corpus',
        'pretrain': 'pre-train the inpainting network on the corpus',
        'adapt': 'fine-tune on every test image and report metrics',
        'eval': 'recompute the report from the images saved by adapt',
        'sweep': 'report metrics against the number of fine-tuning iterations',
    }
    for command in COMMANDS:
        subparsers.add_parser(command, parents=[common_parser],
                              description=descriptions[command],
                              help=descriptions[command])
    parsed = parser.parse_args(args)
    return parsed.command, parsed


def _version():
    try:
        return importlib.metadata.version('restoretune')
    except importlib.metadata.PackageNotFoundError:
        return 'unknown'


def _tee(columns, rows):
    writer = csv.writer(sys.stdout)
    writer.writerow(columns)
    writer.writerows(rows)


def _directory(config, *parts):
    path = os.path.join(config.output_dir, *parts)
    os.makedirs(path, exist_ok=True)
    return path


def _load_pretrained(config):
    path = os.path.join(config.output_dir, 'pretrain', 'checkpoint.pt')
    if not os.path.isfile(path):
        raise FileNotFoundError('Missing checkpoint {}: run "restoretune pretrain" first'
                                .format(path))
    net, _ = network.load_checkpoint(path)
    return net


def _test_items(config, set_name):
    items = corpus.read_corpus(os.path.join(config.output_dir, 'corpus'), set_name)
    if not items:
        raise core.ParameterError('Test set "{}" is empty'.format(set_name))
    return items


def _adapt_seed(config, item):
    """Seed of the fine-tuning of one test image"""
    return RandomState(config.seed).child('adapt', config.adapt.seed, item.set, item.id).seed


def cmd_datagen(config, tee=False):
    """Write the synthetic corpus under <out>/corpus"""
    directory = _directory(config, 'corpus')
    logger.info('Generating corpus in {}'.format(directory))
    manifest_path = corpus.write_corpus(RandomState(config.seed).child('corpus'),
                                        config.corpus, directory)
    if tee:
        with open(manifest_path, newline='') as manifest_file:
            sys.stdout.write(manifest_file.read())
    logger.info('Corpus manifest is {}'.format(manifest_path))
    return manifest_path


def cmd_pretrain(config, tee=False):
    """Pre-train the inpainting network and write <out>/pretrain/checkpoint.pt"""
    items = corpus.read_corpus(os.path.join(config.output_dir, 'corpus'), 'train')
    if not items:
        raise core.ParameterError('Pre-training set is empty')
    directory = _directory(config, 'pretrain')
    if config.pretrain.seed is None:
        rs = RandomState(config.seed).child('pretrain')
    else:
        rs = RandomState(config.pretrain.seed)
    net = network.init_network(rs.child('init'), config.arch, config.corpus.channels)
    logger.info('Pre-training {} parameters on {} images'
                .format(network.parameter_count(config.arch, config.corpus.channels),
                        len(items)))
    net, log = corpus.pretrain(net, config.pretrain, [item.image for item in items],
                               rs.child('train'), config.disc)

    checkpoint_path = os.path.join(directory, 'checkpoint.pt')
    network.save_checkpoint(checkpoint_path, net, rs.seed)
    corpus.write_log(log, os.path.join(directory, 'log.csv'))
    if tee:
        _tee(corpus.PRETRAIN_LOG_COLUMNS, log)
    logger.info('Checkpoint is {}'.format(checkpoint_path))
    return checkpoint_path


def adapt_item(net, item, config, directory=None):
    """Fine-tune on one test image and measure its restorations

    Ground truth is only used by the snapshot callback and the final
    measurement, never by fine_tune itself.

    :return: Tuple made of the MetricsRow and the AdaptTrace
    """
    masked = core.apply_mask(item.image, item.mask)
    window = config.metrics.ssim_window

    def snapshot(iteration, restoration):
        return {'psnr': metrics.psnr(restoration, item.image),
                'ssim': metrics.ssim(restoration, item.image, window)}

    adapt_config = config.adapt._replace(seed=_adapt_seed(config, item))
    baseline = initial_restore(net, masked, item.mask)
    _, adapted, trace = fine_tune(net, masked, item.mask, adapt_config, config.disc,
                                  on_checkpoint=snapshot)
    row = metrics.MetricsRow.measure(item.id, item.image, baseline, adapted, window)
    if directory is not None:
        os.makedirs(directory, exist_ok=True)
        core.save_mask(item.mask, os.path.join(directory, 'mask.png'))
        core.save_image(masked, os.path.join(directory, 'masked.png'))
        core.save_image(baseline, os.path.join(directory, 'baseline.png'))
        core.save_image(adapted, os.path.join(directory, 'adapted.png'))
        trace.write_csv(os.path.join(directory, 'trace.csv'))
    return row, trace


def _write_report(report, directory, config, tee):
    metrics.write_report_csv(report, os.path.join(directory, 'report.csv'))
    metrics.write_report_json(report, os.path.join(directory, 'report.json'),
                              config.metrics.ssim_window)
    if tee:
        _tee(metrics.REPORT_COLUMNS, [[metrics.format_value(value) for value in row]
                                      for row in report.rows])


def cmd_adapt(config, tee=False):
    """Fine-tune on every test image and write <out>/adapt/<set>/report.csv

    :return: Mapping from test set name to MetricsReport
    """
    net = _load_pretrained(config)
    fingerprint = restoretune.config.fingerprint(config)
    reports = {}
    for set_name in config.test_sets:
        items = _test_items(config, set_name)
        directory = _directory(config, 'adapt', set_name)
        logger.info('Fine-tuning on {} images of {}'.format(len(items), set_name))
        rows = []
        for item in items:
            row, _ = adapt_item(net, item, config, os.path.join(directory, item.id))
            logger.info('{}/{}: PSNR {:.2f} dB -> {:.2f} dB'
                        .format(set_name, item.id, row.psnr_before, row.psnr_after))
            rows.append(row)
        report = metrics.build_report(rows, fingerprint)
        _write_report(report, directory, config, tee)
        logger.info('{}: median PSNR {} dB -> {} dB, report is {}'
                    .format(set_name, _format_db(report.medians['psnr_before']),
                            _format_db(report.medians['psnr_after']),
                            os.path.join(directory, 'report.csv')))
        reports[set_name] = report
    return reports


def _format_db(value):
    return 'n/a' if value is None else '{:.2f}'.format(value)


def cmd_eval(config, tee=False):
    """Recompute the reports from the PNG files written by cmd_adapt

    :return: Mapping from test set name to MetricsReport
    """
    fingerprint = restoretune.config.fingerprint(config)
    reports = {}
    for set_name in config.test_sets:
        items = _test_items(config, set_name)
        rows = []
        for item in items:
            item_directory = os.path.join(config.output_dir, 'adapt', set_name, item.id)
            baseline = core.load_image(os.path.join(item_directory, 'baseline.png'))
            adapted = core.load_image(os.path.join(item_directory, 'adapted.png'))
            rows.append(metrics.MetricsRow.measure(item.id, item.image, baseline, adapted,
                                                   config.metrics.ssim_window))
        report = metrics.build_report(rows, fingerprint)
        directory = _directory(config, 'eval', set_name)
        _write_report(report, directory, config, tee)
        logger.info('{}: report is {}'.format(set_name, os.path.join(directory, 'report.csv')))
        reports[set_name] = report
    return reports


def sweep_rows(net, items, config):
    """Aggregate metrics after each iteration count of config.sweep

    Every image is fine-tuned once for the largest iteration count; smaller
    counts are measured at the matching checkpoints of the same run.

    :return: List of mappings with CURVE_COLUMNS keys, one per iteration count
    """
    iterations = config.sweep.iterations
    window = config.metrics.ssim_window
    rows_by_count = {count: [] for count in iterations}
    for item in items:
        masked = core.apply_mask(item.image, item.mask)
        baseline = initial_restore(net, masked, item.mask)

        def snapshot(iteration, restoration, item=item, baseline=baseline):
            row = metrics.MetricsRow.measure(item.id, item.image, baseline, restoration, window)
            if iteration in rows_by_count:
                rows_by_count[iteration].append(row)
            return {'psnr': row.psnr_after, 'ssim': row.ssim_after}

        adapt_config = config.adapt._replace(iterations=iterations[-1],
                                             seed=_adapt_seed(config, item))
        fine_tune(net, masked, item.mask, adapt_config, config.disc, on_checkpoint=snapshot,
                  checkpoints=iterations)

    curve = []
    for count in iterations:
        report = metrics.build_report(rows_by_count[count])
        curve.append({
            'iterations': count,
            'psnr': report.means['psnr_after'],
            'ssim': report.means['ssim_after'],
            'l1pct': report.means['l1pct_after'],
        })
    return curve


def _curve_cell(value):
    if value is None:
        return ''
    if isinstance(value, float):
        return repr(value)
    return str(value)


def cmd_sweep(config, tee=False):
    """Write <out>/sweep/<set>/curve.csv and curve.svg

    :return: Mapping from test set name to the rows of its curve
    """
    net = _load_pretrained(config)
    curves = {}
    for set_name in config.sweep.sets:
        items = _test_items(config, set_name)
        directory = _directory(config, 'sweep', set_name)
        logger.info('Sweeping {} on {} images of {}'
                    .format(list(config.sweep.iterations), len(items), set_name))
        curve = sweep_rows(net, items, config)
        lines = [[_curve_cell(row[column]) for column in CURVE_COLUMNS] for row in curve]
        with open(os.path.join(directory, 'curve.csv'), 'w', newline='') as curve_file:
            writer = csv.writer(curve_file)
            writer.writerow(CURVE_COLUMNS)
            writer.writerows(lines)
        if tee:
            _tee(CURVE_COLUMNS, lines)

        points = plot.curve_points(curve)
        if points:
            plot.write_curve(points, os.path.join(directory, 'curve.svg'), title=set_name)
        for row in curve:
            psnr = row['psnr']
            logger.info('{}: T={} mean PSNR {}'.format(
                set_name, row['iterations'],
                'n/a' if psnr is None or not math.isfinite(psnr) else '{:.2f} dB'.format(psnr)))
        curves[set_name] = curve
    return curves


COMMAND_FUNCTIONS = {
    'datagen': cmd_datagen,
    'pretrain': cmd_pretrain,
    'adapt': cmd_adapt,
    'eval': cmd_eval,
    'sweep': cmd_sweep,
}


def run(command, config, tee=False):
    """Run one command with a resolved ExperimentConfig"""
    torch.set_num_threads(config.threads)
    os.makedirs(config.output_dir, exist_ok=True)
    restoretune.config.write_resolved(config, os.path.join(config.output_dir, 'config.json'))
    logger.info('{} started (seed {}, output in {})'
                .format(command, config.seed, config.output_dir))
    result = COMMAND_FUNCTIONS[command](config, tee)
    logger.info('{} ended'.format(command))
    return result


def main(args=None):
    if args is None:
        args = sys.argv

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(logging.INFO)
    console_formatter = logging.Formatter('%(message)s')
    console_handler.setFormatter(console_formatter)
    logger.handlers = [console_handler]
    logger.setLevel(logging.INFO)

    command, args = parse(args[1:])
    try:
        config = restoretune.config.load_config(args.config, args.seed, args.out)
        run(command, config, args.tee_csv)
        status = EXIT_SUCCESS
    except NumericError as exc:
        logger.error('Numeric failure: {}'.format(exc))
        status = EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        logger.error('Error: {}'.format(exc))
        status = EXIT_INVALID

    for handler in logger.handlers:
        handler.close()
    return status
