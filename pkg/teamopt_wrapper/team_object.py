import copy
import logging
import yaml
from teamopt_solver.team_model import TeamOptError
from teamopt_solver.team_solver import SolverOptions

LOGGER = logging.getLogger(__name__)

PROBLEM_KINDS = ('builtin', 'lq', 'gnf', 'discrete-lq')
SOLVERS = ('team', 'pbp', 'lq-fixed-point', 'discrete-team')
OPTION_KEYS = ('tol', 'cost_tol', 'max_iter', 'inner_iter', 'damping', 'seed', 'certificate_samples',
               'step_init', 'step_max', 'armijo', 'backtrack', 'min_step', 'divergence_window')


class ConfigError(TeamOptError):
    """ Malformed experiment configuration

    Parameters
    ---------------
    field: str
      dotted path of the offending entry (ex: 'grid.K')
    message: str
      diagnostic
    """

    def __init__(self, field, message):
        self.field = field
        self.message = message
        super().__init__('{}: {}'.format(field, message))


def load_config(path):
    """ Read a YAML experiment file

    Parameters
    ---------------
    path: str
      config file

    Returns
    ----------
    dict

    Raises
    ---------
    ConfigError with the line of a YAML syntax error
    """
    try:
        with open(path, encoding='utf-8') as f:
            config = yaml.safe_load(f)
    except OSError as err:
        raise ConfigError('<file>', 'cannot read {}: {}'.format(path, err.strerror))
    except yaml.YAMLError as err:
        mark = getattr(err, 'problem_mark', None)
        where = 'line {}'.format(mark.line+1) if mark is not None else '<yaml>'
        raise ConfigError(where, 'invalid YAML in {}: {}'.format(path, getattr(err, 'problem', err)))
    if not isinstance(config, dict):
        raise ConfigError('<root>', 'config must be a mapping of sections')
    return config


def _section(config, name):
    value = config.get(name, {})
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(name, 'section must be a mapping')
    return value


def _positive_int(value, field):
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ConfigError(field, 'must be a positive integer (got {!r})'.format(value))
    return value


def _number(value, field):
    """ float from a YAML scalar (PyYAML leaves '1e-5' as a string) """
    if isinstance(value, bool):
        raise ConfigError(field, 'must be a number (got {!r})'.format(value))
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(field, 'must be a number (got {!r})'.format(value))


class ExperimentConfig:
    """ Validated experiment configuration

    Sections: problem, grid, solver, info_structures, output, multiprocessing.

    Parameters
    ---------------
    config: dict
      nested config dict (ex: {'problem': {'kind': 'builtin', 'name': 'p1'}, 'grid': {'K': 200},
      'solver': {'name': 'team', 'tol': 1.e-5}, 'output': {'directory': 'out'},
      'multiprocessing': {'nproc': 1}})
    source: str, opt
      file the config was read from (default: None)
    """

    def __init__(self, config, source=None):
        from teamopt_wrapper.team_builtins import BUILTINS

        self._raw = copy.deepcopy(config)
        self._source = source

        problem = _section(config, 'problem')
        kind = problem.get('kind', 'builtin' if 'name' in problem else None)
        if kind not in PROBLEM_KINDS:
            raise ConfigError('problem.kind', 'expected one of {} (got {!r})'.format(PROBLEM_KINDS, kind))
        self._problem_kind = kind
        self._builtin = None
        if kind == 'builtin':
            name = problem.get('name')
            if name not in BUILTINS:
                raise ConfigError('problem.name', 'unknown builtin {!r}; see teamopt list'.format(name))
            self._builtin = BUILTINS[name]
        self._problem = problem

        grid = _section(config, 'grid')
        self._K = None
        if 'K' in grid:
            self._K = _positive_int(grid.get('K'), 'grid.K')

        solver = _section(config, 'solver')
        default_solver = self._builtin.solver if self._builtin is not None else \
            ('discrete-team' if kind == 'discrete-lq' else 'team')
        self._solver = solver.get('name', default_solver)
        if self._solver not in SOLVERS:
            raise ConfigError('solver.name', 'expected one of {} (got {!r})'.format(SOLVERS, self._solver))
        options = {k: v for k, v in solver.items() if k != 'name'}
        for key in options:
            if key not in OPTION_KEYS:
                raise ConfigError('solver.{}'.format(key), 'unknown solver option')
        for key in ('tol', 'cost_tol', 'damping', 'step_init', 'step_max', 'armijo', 'backtrack', 'min_step'):
            if key in options:
                options[key] = _number(options[key], 'solver.{}'.format(key))
        if not options.get('tol', SolverOptions.tol) > 0:
            raise ConfigError('solver.tol', 'must be positive (got {!r})'.format(options['tol']))
        for key in ('max_iter', 'seed', 'divergence_window', 'certificate_samples'):
            if key in options and (isinstance(options[key], bool) or not isinstance(options[key], int)):
                raise ConfigError('solver.{}'.format(key), 'must be an integer (got {!r})'.format(options[key]))
        try:
            self._options = SolverOptions.from_dict(options)
        except (TypeError, ValueError) as err:
            raise ConfigError('solver', str(err))

        infos = config.get('info_structures')
        if infos is not None and not isinstance(infos, list):
            raise ConfigError('info_structures', 'must be a list with one entry per decision maker')
        self._info_structures = infos

        output = _section(config, 'output')
        self._outdir = output.get('directory', 'teamopt_output')
        if not isinstance(self._outdir, str) or not self._outdir:
            raise ConfigError('output.directory', 'must be a non-empty path')

        mproc = _section(config, 'multiprocessing')
        self._nproc = _positive_int(mproc.get('nproc', 1), 'multiprocessing.nproc')

    @classmethod
    def from_file(cls, path):
        return cls(load_config(path), source=path)

    def with_overrides(self, grid_k=None, tol=None, seed=None, out=None):
        """ copy with command-line overrides applied (None: keep) """
        config = copy.deepcopy(self._raw)
        if grid_k is not None:
            config.setdefault('grid', {})['K'] = grid_k
        if tol is not None:
            config.setdefault('solver', {})['tol'] = tol
        if seed is not None:
            config.setdefault('solver', {})['seed'] = seed
        if out is not None:
            config.setdefault('output', {})['directory'] = out
        return ExperimentConfig(config, self._source)

    @property
    def source(self):
        return self._source

    @property
    def problem_kind(self):
        return self._problem_kind

    @property
    def problem(self):
        """ problem section
        """
        return self._problem

    @property
    def builtin(self):
        """ registered Instance for builtin problems (None otherwise)
        """
        return self._builtin

    @property
    def K(self):
        """ grid steps (None: default resolution)
        """
        return self._K

    @property
    def solver(self):
        return self._solver

    @property
    def options(self):
        """ SolverOptions
        """
        return self._options

    @property
    def info_structures(self):
        return self._info_structures

    @property
    def outdir(self):
        return self._outdir

    @property
    def nproc(self):
        return self._nproc

    def to_dict(self):
        """ config echo for reports """
        return copy.deepcopy(self._raw)
