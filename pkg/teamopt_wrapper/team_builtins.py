import logging
from dataclasses import dataclass
import numpy as np
import pandas as pd
from scipy.interpolate import interp1d
from teamopt_solver.team_model import Box, TeamOptError, state_observation, delayed_observation
from teamopt_solver.team_infostruct import InfoSpec, KINDS
from teamopt_solver.team_lq import LQData, GNFData, lq_problem, gnf_problem
from teamopt_solver.team_discrete import discrete_lq_problem
from teamopt_wrapper.team_object import ConfigError

LOGGER = logging.getLogger(__name__)


@dataclass
class Built:
    """ problem ready to solve; lq is set when the decentralized LQ fixed point applies """
    problem: object
    lq: object = None
    discrete: bool = False


class Instance:
    """ Named problem shipped with teamopt

    Parameters
    ---------------
    name: str
      registry key
    description: str
      one-line description
    solver: str
      default solver
    expected_cost: float
      known optimal cost (None if unknown)
    factory: callable
      (info_specs, observations) -> Built; None arguments select the instance defaults
    """

    def __init__(self, name, description, solver, expected_cost, factory):
        self.name = name
        self.description = description
        self.solver = solver
        self.expected_cost = expected_cost
        self._factory = factory

    def build(self, info_specs=None, observations=None):
        return self._factory(info_specs, observations)


def _p1_data():
    return LQData(A=[[0.]], B=[[1.]], R=[[1.]], control_dims=[1], M_T=[[1.]])


def _p1(specs, obs):
    lq = _p1_data()
    return Built(lq_problem(lq, [1.], 1., specs, observations=obs, name='p1'), lq)


def _p1d(specs, obs):
    lq = LQData(A=[[1.]], B=[[1.]], R=[[1.]], control_dims=[1], M_T=[[1.]])
    return Built(discrete_lq_problem(lq, [1.], 1, specs, observations=obs, name='p1d'), lq, discrete=True)


def _own_states(n_dm):
    return [state_observation([i]) for i in range(n_dm)]


def _decoupled_pair(specs, obs):
    lq = LQData(A=np.zeros((2, 2)), B=np.eye(2), R=np.eye(2), control_dims=[1, 1], M_T=np.eye(2))
    obs = obs if obs is not None else _own_states(2)
    return Built(lq_problem(lq, [1., 1.], 1., specs, observations=obs, name='decoupled-pair'), lq)


def _lq2_data():
    return LQData(A=[[-0.5, 0.4], [0.3, -0.2]], B=np.eye(2), R=[[1., 0.25], [0.25, 1.]],
                  control_dims=[1, 1], H=np.diag([1., 0.5]), M_T=np.eye(2))


def _lq2_coupled(specs, obs):
    lq = _lq2_data()
    return Built(lq_problem(lq, [1., -1.], 1., specs, observations=obs, name='lq2-coupled'), lq)


def _lq2_decentralized(specs, obs):
    lq = _lq2_data()
    specs = specs if specs is not None else [InfoSpec.closed_loop_markov(), InfoSpec.closed_loop_markov()]
    obs = obs if obs is not None else _own_states(2)
    return Built(lq_problem(lq, [1., -1.], 1., specs, observations=obs, name='lq2-decentralized'), lq)


def _gnf_pendulum(specs, obs):
    Hw = np.diag([1., 0.1])
    gnf = GNFData(
        drift=lambda t, x: np.array([x[1], -np.sin(x[0])-0.1*x[1]]),
        gain=lambda t, x: np.array([[0., 0.], [1., 0.5]]),
        R=lambda t, x: np.eye(2),
        eta=lambda t, x: np.zeros(2),
        lam=lambda t, x: x @ Hw @ x,
        terminal=lambda x: 0.5*x @ x,
        control_dims=[1, 1],
        terminal_grad=lambda x: np.array(x, dtype=float),
        dynamics_jac_x=lambda t, x, u: np.array([[0., 1.], [-np.cos(x[0]), -0.1]]),
        running_cost_grad_x=lambda t, x, u: Hw @ x)
    return Built(gnf_problem(gnf, [1., 0.], 2., specs, observations=obs, name='gnf-pendulum'))


BUILTINS = {inst.name: inst for inst in [
    Instance('p1', 'scalar dx=u, l=u^2/2, phi=x(1)^2/2, x0=1, T=1', 'team', 0.25, _p1),
    Instance('p1d', 'one-step discrete p1: x1=x0+u0, x0=1', 'discrete-team', 0.25, _p1d),
    Instance('decoupled-pair', 'two independent copies of p1, one per DM', 'lq-fixed-point', 0.5,
             _decoupled_pair),
    Instance('lq2-coupled', 'two coupled subsystems, one DM each, R_12 != 0, open loop', 'team', None,
             _lq2_coupled),
    Instance('lq2-decentralized', 'lq2-coupled with each DM observing only its own subsystem (Markov)',
             'lq-fixed-point', None, _lq2_decentralized),
    Instance('gnf-pendulum', 'damped pendulum in normal form, two torque DMs, T=2', 'team', None, _gnf_pendulum),
]}


def builtins_table():
    """ registry as a DataFrame (name, solver, expected_cost, description) """
    rows = [{'name': inst.name, 'solver': inst.solver,
             'expected_cost': '-' if inst.expected_cost is None else '{:g}'.format(inst.expected_cost),
             'description': inst.description} for inst in BUILTINS.values()]
    return pd.DataFrame(rows, columns=['name', 'solver', 'expected_cost', 'description'])


def list_builtins():
    """ deterministic text table of the shipped instances """
    return builtins_table().to_string(index=False)


def _array(value, field, shape=None):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(field, 'must be numeric (got {!r})'.format(value))
    if shape is not None:
        if arr.size != int(np.prod(shape)):
            raise ConfigError(field, 'expected shape {} (got {})'.format(shape, arr.shape))
        arr = arr.reshape(shape)
    return arr


def _number(value, field, what):
    if isinstance(value, bool):
        raise ConfigError(field, 'must be {} (got {!r})'.format(what, value))
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(field, 'must be {} (got {!r})'.format(what, value))


def _count(value, field, minimum):
    """ integer >= minimum; integral floats and numeric strings are accepted """
    what = 'an integer >= {}'.format(minimum)
    v = _number(value, field, what)
    if not np.isfinite(v) or v != int(v) or v < minimum:
        raise ConfigError(field, 'must be {} (got {!r})'.format(what, value))
    return int(v)


def _delay(value, field):
    v = _number(value, field, 'a non-negative number')
    if not 0. <= v < np.inf:
        raise ConfigError(field, 'must be a non-negative number (got {!r})'.format(value))
    return v


def coefficient(value, field, shape):
    """ constant matrix, or {times, values} table interpolated linearly in t """
    if isinstance(value, dict):
        if 'times' not in value or 'values' not in value:
            raise ConfigError(field, 'a table needs times and values')
        times = _array(value['times'], field+'.times')
        vals = _array(value['values'], field+'.values')
        if times.ndim != 1 or len(times) < 2 or np.any(np.diff(times) <= 0.):
            raise ConfigError(field+'.times', 'must be at least two increasing times')
        if vals.shape[0] != len(times) or vals[0].size != int(np.prod(shape)):
            raise ConfigError(field+'.values', 'expected {} entries of shape {} (got {})'.format(
                len(times), shape, vals.shape))
        vals = vals.reshape((len(times),)+tuple(shape))
        table = interp1d(times, vals, axis=0, bounds_error=False, fill_value=(vals[0], vals[-1]),
                         assume_sorted=True)
        return lambda t: np.asarray(table(t))
    return _array(value, field, shape)


def _boxes(entries, dims):
    if entries is None:
        return None
    if not isinstance(entries, list) or len(entries) != len(dims):
        raise ConfigError('problem.boxes', 'need one {lower, upper} entry per decision maker')
    boxes = []
    for i, (entry, d) in enumerate(zip(entries, dims)):
        field = 'problem.boxes[{}]'.format(i)
        if not isinstance(entry, dict):
            raise ConfigError(field, 'must be a mapping with lower and upper')
        lo = entry.get('lower')
        up = entry.get('upper')
        lo = np.full(d, -np.inf) if lo is None else _array([-np.inf if v is None else v for v in np.atleast_1d(lo)],
                                                          field+'.lower', (d,))
        up = np.full(d, np.inf) if up is None else _array([np.inf if v is None else v for v in np.atleast_1d(up)],
                                                         field+'.upper', (d,))
        if np.any(lo > up):
            raise ConfigError(field, 'lower bound exceeds upper bound')
        boxes.append(Box(lo, up))
    return boxes


def info_from_config(entries, n, horizon):
    """ (info_specs, observations) from the info_structures section

    Entry keys: kind (open_loop, closed_loop_markov, closed_loop_feedback, finite_basis),
    observe (state indices, default all), delay (default 0), basis ({family: polynomial,
    degree} or {family: fourier, harmonics}, finite_basis only).
    """
    specs, observations = [], []
    for i, entry in enumerate(entries):
        field = 'info_structures[{}]'.format(i)
        if not isinstance(entry, dict):
            raise ConfigError(field, 'must be a mapping')
        kind = entry.get('kind', 'open_loop')
        if kind not in KINDS:
            raise ConfigError(field+'.kind', 'expected one of {} (got {!r})'.format(KINDS, kind))
        observe = entry.get('observe', list(range(n)))
        if not isinstance(observe, list) or not observe or \
                any(isinstance(j, bool) or not isinstance(j, int) or not 0 <= j < n for j in observe):
            raise ConfigError(field+'.observe', 'must list state indices in [0, {})'.format(n))
        delay = _delay(entry.get('delay', 0.), field+'.delay')
        if delay:
            observations.append(delayed_observation(observe, delay))
        else:
            observations.append(state_observation(observe))
        if kind == 'open_loop':
            specs.append(InfoSpec.open_loop())
        elif kind == 'closed_loop_markov':
            specs.append(InfoSpec.closed_loop_markov())
        elif kind == 'closed_loop_feedback':
            specs.append(InfoSpec.observation_memory(len(observe)))
        else:
            basis = entry.get('basis', {})
            family = basis.get('family') if isinstance(basis, dict) else None
            if family == 'polynomial':
                specs.append(InfoSpec.polynomial(_count(basis.get('degree', 0), field+'.basis.degree', 0),
                                                 horizon))
            elif family == 'fourier':
                specs.append(InfoSpec.fourier(_count(basis.get('harmonics', 1), field+'.basis.harmonics', 1),
                                              horizon))
            else:
                raise ConfigError(field+'.basis.family', 'expected polynomial or fourier (got {!r})'.format(family))
    return specs, observations


def _lq_from_config(problem):
    x0 = _array(problem.get('x0'), 'problem.x0')
    if x0.ndim != 1 or x0.size < 1:
        raise ConfigError('problem.x0', 'must be a non-empty vector')
    dims = problem.get('control_dims')
    if dims is not None and (not isinstance(dims, list) or not dims or
                             any(isinstance(d, bool) or not isinstance(d, int) or d < 1 for d in dims)):
        raise ConfigError('problem.control_dims', 'must be a list of positive integers')
    n = x0.size
    coefs = problem.get('coefficients')
    if not isinstance(coefs, dict):
        raise ConfigError('problem.coefficients', 'section is required for {} problems'.format(problem.get('kind')))
    if 'B' not in coefs:
        raise ConfigError('problem.coefficients.B', 'is required')
    B = coefs['B']
    sample = _array(B.get('values'), 'problem.coefficients.B.values')[0] if isinstance(B, dict) \
        else _array(B, 'problem.coefficients.B')
    if sample.size == 0 or sample.size % n:
        raise ConfigError('problem.coefficients.B', 'must have {} rows'.format(n))
    d = sample.size//n
    dims = dims if dims is not None else [d]
    if sum(dims) != d:
        raise ConfigError('problem.control_dims', 'sum {} does not match the {} columns of B'.format(sum(dims), d))
    shapes = {'A': (n, n), 'B': (n, d), 'R': (d, d), 'H': (n, n), 'b': (n,), 'E': (d, n), 'F': (n,),
              'm': (d,), 'S': (n, n), 'M_T': (n, n), 'N_T': (n,)}
    for key in coefs:
        if key not in shapes:
            raise ConfigError('problem.coefficients.{}'.format(key), 'unknown coefficient')
    if 'A' not in coefs or 'R' not in coefs:
        raise ConfigError('problem.coefficients.{}'.format('A' if 'A' not in coefs else 'R'), 'is required')
    values = {}
    for key, shape in shapes.items():
        if key in coefs:
            field = 'problem.coefficients.{}'.format(key)
            values[key] = _array(coefs[key], field, shape) if key in ('M_T', 'N_T') else \
                coefficient(coefs[key], field, shape)
    return x0, dims, values


def _horizon(problem):
    horizon = problem.get('horizon', 1.)
    try:
        horizon = float(horizon)
    except (TypeError, ValueError):
        raise ConfigError('problem.horizon', 'must be a number (got {!r})'.format(horizon))
    if not horizon > 0:
        raise ConfigError('problem.horizon', 'must be positive (got {})'.format(horizon))
    return horizon


def build_from_config(cfg):
    """ Built problem for an ExperimentConfig

    Raises
    ---------
    ConfigError for unresolvable references or malformed coefficients
    """
    problem = cfg.problem
    if cfg.problem_kind == 'builtin':
        inst = cfg.builtin
        specs = obs = None
        if cfg.info_structures is not None:
            base = inst.build().problem
            if len(cfg.info_structures) != base.N:
                raise ConfigError('info_structures', '{} has {} decision makers, got {} entries'.format(
                    inst.name, base.N, len(cfg.info_structures)))
            specs, obs = info_from_config(cfg.info_structures, base.n, base.horizon)
        return _checked(lambda: inst.build(specs, obs))

    kind = cfg.problem_kind
    x0, dims, values = _lq_from_config(problem)
    specs = obs = None
    horizon = _horizon(problem) if kind != 'discrete-lq' else None
    if cfg.info_structures is not None:
        if len(cfg.info_structures) != len(dims):
            raise ConfigError('info_structures', 'expected {} entries, got {}'.format(
                len(dims), len(cfg.info_structures)))
        specs, obs = info_from_config(cfg.info_structures, x0.size,
                                      horizon if horizon is not None else float(problem.get('steps', 1)))
    boxes = _boxes(problem.get('boxes'), dims)
    S = values.pop('S', None)

    if kind == 'gnf':
        return _checked(lambda: Built(_gnf_from_values(values, S, dims, x0, horizon, specs, boxes, obs)))

    if S is not None:
        raise ConfigError('problem.coefficients.S', 'only gnf problems take a sine drift')
    lq = _checked(lambda: LQData(control_dims=dims, **values))
    if kind == 'lq':
        return _checked(lambda: Built(lq_problem(lq, x0, horizon, specs, boxes, obs, name='lq'), lq))
    steps = problem.get('steps')
    if isinstance(steps, bool) or not isinstance(steps, int) or steps < 1:
        raise ConfigError('problem.steps', 'must be a positive integer (got {!r})'.format(steps))
    return _checked(lambda: Built(discrete_lq_problem(lq, x0, steps, specs, boxes, obs), lq, discrete=True))


def _gnf_from_values(values, S, dims, x0, horizon, specs, boxes, obs):
    """ drift A x + S sin(x) + b, gain B, eta = E x + m, lam = x'Hx; every coefficient may vary in t """
    n = x0.size
    d = sum(dims)
    values = dict(values, S=S)

    def at(key, t, shape):
        v = values.get(key)
        if v is None:
            return np.zeros(shape)
        return v(t) if callable(v) else v

    M = values.get('M_T', np.zeros((n, n)))
    N = values.get('N_T', np.zeros(n))
    gnf = GNFData(
        drift=lambda t, x: at('A', t, (n, n)) @ x+at('S', t, (n, n)) @ np.sin(x)+at('b', t, (n,)),
        gain=lambda t, x: at('B', t, (n, d)),
        R=lambda t, x: at('R', t, (d, d)),
        eta=lambda t, x: at('E', t, (d, n)) @ x+at('m', t, (d,)),
        lam=lambda t, x: x @ at('H', t, (n, n)) @ x+2.*x @ at('F', t, (n,)),
        terminal=lambda x: 0.5*x @ M @ x+x @ N,
        control_dims=dims,
        terminal_grad=lambda x: 0.5*(M+M.T) @ x+N,
        dynamics_jac_x=lambda t, x, u: at('A', t, (n, n))+at('S', t, (n, n))*np.cos(x)[np.newaxis, :],
        running_cost_grad_x=lambda t, x, u: 0.5*(at('H', t, (n, n))+at('H', t, (n, n)).T) @ x
        + at('F', t, (n,))+at('E', t, (d, n)).T @ u)
    return gnf_problem(gnf, x0, horizon, specs, boxes, obs, name='gnf')


def _checked(build):
    """ run a builder, reporting structural errors as config errors """
    try:
        return build()
    except ConfigError:
        raise
    except TeamOptError as err:
        raise ConfigError('problem', str(err))
