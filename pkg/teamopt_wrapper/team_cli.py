import os
import sys
import logging
import argparse
import multiprocessing
import numpy as np
from teamopt_solver.team_model import TeamOptError, validate_problem
from teamopt_wrapper.team_object import ExperimentConfig, ConfigError
from teamopt_wrapper.team_builtins import build_from_config, list_builtins
from teamopt_wrapper.team_simu import TeamSimulation, EXIT_CONVERGED, EXIT_CONFIG, EXIT_NOT_CONVERGED
from teamopt_wrapper.version import __version__

LOGGER = logging.getLogger(__name__)


def setup_logging():
    """ basicConfig with the level named by TEAMOPT_LOG (default WARNING) """
    name = os.environ.get('TEAMOPT_LOG', 'WARNING').upper()
    level = logging.getLevelName(name)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(format='%(levelname)s:%(message)s', level=level)


def load(path, grid_k=None, tol=None, seed=None, out=None):
    return ExperimentConfig.from_file(path).with_overrides(grid_k=grid_k, tol=tol, seed=seed, out=out)


def run_config(path, grid_k=None, tol=None, seed=None, out=None):
    """ run one experiment file

    Returns
    ----------
    exit code: 0 converged, 1 config error, 2 not converged
    """
    try:
        config = load(path, grid_k, tol, seed, out)
        simu = TeamSimulation(config)
    except ConfigError as err:
        LOGGER.error('%s: %s', path, err)
        print('error in {}: {}'.format(path, err), file=sys.stderr)
        return EXIT_CONFIG
    try:
        code = simu.run()
    except TeamOptError as err:
        LOGGER.error('%s: %s', path, err)
        print('error in {}: {}'.format(path, err), file=sys.stderr)
        return EXIT_CONFIG
    print('{}: {} (artifacts in {})'.format(
        path, 'converged' if code == EXIT_CONVERGED else 'not converged', config.outdir))
    return code


def guarded_run(path, args):
    """ run_config that maps any uncaught failure to the config-error exit code """
    try:
        return run_config(*args)
    except Exception as err:
        LOGGER.exception('%s: run failed', path)
        print('error in {}: {}: {}'.format(path, type(err).__name__, err), file=sys.stderr)
        return EXIT_CONFIG


def _run_batch(jobs, j, output_q):
    output_q.put({path: guarded_run(path, args) for path, args in jobs})


def default_jobs(paths):
    """ largest multiprocessing.nproc among the configs (1 for unreadable ones) """
    nproc = [1]
    for path in paths:
        try:
            nproc.append(ExperimentConfig.from_file(path).nproc)
        except ConfigError:
            continue
    return max(nproc)


def run_many(paths, jobs=None, grid_k=None, tol=None, seed=None, out=None):
    """ Run several configs, fanned out over `jobs` processes

    With several configs, --out places each run in out/<config name>.
    jobs=None takes the multiprocessing.nproc of the configs.

    Returns
    ----------
    worst exit code
    """
    tasks = []
    for path in paths:
        outdir = out
        if out is not None and len(paths) > 1:
            outdir = os.path.join(out, os.path.splitext(os.path.basename(path))[0])
        tasks.append((path, (path, grid_k, tol, seed, outdir)))

    jobs = default_jobs(paths) if jobs is None else jobs
    npp = max(1, min(jobs, len(tasks)))
    if npp == 1:
        codes = {path: guarded_run(path, args) for path, args in tasks}
    else:
        batch = np.linspace(0, len(tasks), npp+1, dtype='int')
        result_queue = multiprocessing.Queue()
        for i in range(npp):
            p = multiprocessing.Process(name='Subprocess', target=_run_batch,
                                        args=(tasks[batch[i]:batch[i+1]], i, result_queue))
            p.start()
        codes = {}
        for j in range(npp):
            codes.update(result_queue.get())
        for p in multiprocessing.active_children():
            p.join()
    return max(codes.values())


def validate_config(path, seed=0, samples=20):
    """ sampled assumption checks of the problem of a config (0 clean, 2 violations, 1 error) """
    try:
        config = load(path, seed=seed)
        problem = build_from_config(config).problem
        report = validate_problem(problem, samples=samples, seed=config.options.seed)
    except TeamOptError as err:
        print('error in {}: {}'.format(path, err), file=sys.stderr)
        return EXIT_CONFIG
    if report.is_clean:
        print('{}: no violation detected ({} samples)'.format(path, samples))
        return EXIT_CONVERGED
    for v in report:
        print('{}: {}'.format(path, v))
    return EXIT_NOT_CONVERGED


def parser():
    parse = argparse.ArgumentParser(prog='teamopt',
                                    description='team-optimal and person-by-person strategies of distributed systems')
    parse.add_argument('--version', action='version', version='%(prog)s {}'.format(__version__))
    sub = parse.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help='solve experiment config(s) and write artifacts')
    run.add_argument('configs', nargs='+', help='YAML experiment file(s)')
    run.add_argument('--grid-k', type=int, default=None, help='number of grid steps (grid.K)')
    run.add_argument('--tol', type=float, default=None, help='residual tolerance (solver.tol)')
    run.add_argument('--seed', type=int, default=None, help='sampling seed (solver.seed)')
    run.add_argument('--jobs', type=int, default=None,
                     help='number of configs solved concurrently (default: multiprocessing.nproc of the configs)')
    run.add_argument('--out', default=None, help='output directory (output.directory)')

    sub.add_parser('list', help='list the builtin instances')

    val = sub.add_parser('validate', help='check the standing assumptions of a config problem')
    val.add_argument('config', help='YAML experiment file')
    val.add_argument('--seed', type=int, default=None, help='sampling seed')
    val.add_argument('--samples', type=int, default=20, help='sample points per check')
    return parse


def main(argv=None):
    setup_logging()
    args = parser().parse_args(argv)
    if args.command == 'list':
        print(list_builtins())
        return EXIT_CONVERGED
    if args.command == 'validate':
        return validate_config(args.config, args.seed, args.samples)
    if args.jobs is not None and args.jobs < 1:
        print('--jobs must be >= 1', file=sys.stderr)
        return EXIT_CONFIG
    return run_many(args.configs, args.jobs, args.grid_k, args.tol, args.seed, args.out)


if __name__ == '__main__':
    sys.exit(main())
