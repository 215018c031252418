import logging
import numpy as np
from scipy.interpolate import interp1d

LOGGER = logging.getLogger(__name__)


class TeamOptError(Exception):
    """Base class of the errors raised by teamopt"""


class ProblemStructureError(TeamOptError, ValueError):
    """A callback or a data field violates a dimension/structure contract"""


class IntegrationDivergenceError(TeamOptError, ArithmeticError):
    """ Non-finite values appeared during a sweep

    Parameters
    ---------------
    node: int
      first grid node with non-finite values
    time: float
      time of this node
    what: str, opt
      name of the swept quantity (default: 'state')
    """

    def __init__(self, node, time, what='state'):
        self.node = node
        self.time = time
        self.what = what
        super().__init__(
            'integration diverged: non-finite {} at node {} (t={})'.format(what, node, time))


class HamiltonianEvaluationError(TeamOptError, ArithmeticError):
    """Non-finite callback output while evaluating the Hamiltonian"""


def _vector(value, size, what):
    """ coerce a callback output to a 1D float array of given size """
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.ndim != 1 or arr.shape[0] != size:
        raise ProblemStructureError(
            '{} dimension: expected ({},), got {}'.format(what, size, arr.shape))
    return arr


def _matrix(value, shape, what):
    arr = np.asarray(value, dtype=float)
    if arr.ndim < 2:
        arr = arr.reshape(shape) if arr.size == shape[0]*shape[1] else arr
    if arr.shape != tuple(shape):
        raise ProblemStructureError(
            '{} dimension: expected {}, got {}'.format(what, tuple(shape), arr.shape))
    return arr


def _scalar(value, what):
    arr = np.asarray(value, dtype=float)
    if arr.size != 1:
        raise ProblemStructureError(
            '{} dimension: expected a scalar, got {}'.format(what, arr.shape))
    return float(arr.reshape(-1)[0])


def fd_steps(z):
    """ central difference steps h_j = max(1e-6, 1e-6*|z_j|) """
    return np.maximum(1.e-6, 1.e-6*np.abs(z))


def fd_jacobian(fun, z):
    """ Jacobian of fun at z by central finite differences

    Parameters
    ---------------
    fun: callable
      z -> array (1D) or float
    z: array
      evaluation point

    Returns
    ----------
    array of shape (len(fun(z)), len(z)); a scalar fun gives a (1, len(z)) array
    """
    z = np.asarray(z, dtype=float)
    steps = fd_steps(z)
    cols = []
    for j in range(z.shape[0]):
        zp = z.copy()
        zm = z.copy()
        zp[j] += steps[j]
        zm[j] -= steps[j]
        diff = np.atleast_1d(np.asarray(fun(zp), dtype=float)) - \
            np.atleast_1d(np.asarray(fun(zm), dtype=float))
        cols.append(diff/(2.*steps[j]))
    return np.column_stack(cols) if cols else np.zeros((0, 0))


class Box:
    """ Action set of a decision maker: product of intervals

    Parameters
    ---------------
    lower: array
      lower bounds (entries may be -inf)
    upper: array
      upper bounds (entries may be +inf)
    """

    def __init__(self, lower, upper):
        self._lower = np.atleast_1d(np.asarray(lower, dtype=float))
        self._upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if self._lower.shape != self._upper.shape or self._lower.ndim != 1:
            raise ProblemStructureError('action set bounds must be 1D arrays of equal length, got {} and {}'.format(
                self._lower.shape, self._upper.shape))

    @classmethod
    def unbounded(cls, dim):
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))

    @property
    def lower(self):
        return self._lower

    @property
    def upper(self):
        return self._upper

    @property
    def dim(self):
        return self._lower.shape[0]

    @property
    def is_bounded(self):
        return bool(np.all(np.isfinite(self._lower)) and np.all(np.isfinite(self._upper)))

    @property
    def is_empty(self):
        return bool(np.any(self._lower > self._upper))

    def clip(self, u):
        """ Euclidean projection onto the box (works on (..., dim) arrays) """
        return np.clip(u, self._lower, self._upper)

    def contains(self, u, tol=0.):
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self._lower-tol) and np.all(u <= self._upper+tol))

    def __repr__(self):
        return 'Box(lower={}, upper={})'.format(self._lower.tolist(), self._upper.tolist())


class Trajectory:
    """ Time-gridded path (state x, adjoint psi, variation Z, controls...)

    Parameters
    ---------------
    grid: array
      strictly increasing time points starting at 0
    values: array
      node values, first axis along the grid; 1D input is read as a scalar path
    horizon: float, opt
      if given, the last grid point must equal it (default: None)
    """

    def __init__(self, grid, values, horizon=None):
        grid = np.array(grid, dtype=float)
        values = np.array(values, dtype=float)
        if values.ndim == 1:
            values = values[:, np.newaxis]
        if grid.ndim != 1 or grid.shape[0] == 0:
            raise ProblemStructureError('trajectory grid must be a non-empty 1D array')
        if values.shape[0] != grid.shape[0]:
            raise ProblemStructureError('trajectory grid has {} points but {} values'.format(
                grid.shape[0], values.shape[0]))
        if np.any(np.diff(grid) <= 0.):
            raise ProblemStructureError('trajectory grid must be strictly increasing')
        if grid[0] != 0.:
            raise ProblemStructureError('trajectory grid must start at 0, got {}'.format(grid[0]))
        if horizon is not None and not np.isclose(grid[-1], horizon, rtol=1.e-12, atol=1.e-12):
            raise ProblemStructureError(
                'trajectory grid must end at T={}, got {}'.format(horizon, grid[-1]))
        if not np.all(np.isfinite(values)):
            raise ProblemStructureError('trajectory values must be finite')
        grid.setflags(write=False)
        values.setflags(write=False)
        self._grid = grid
        self._values = values
        self._interp = None

    @property
    def grid(self):
        return self._grid

    @property
    def values(self):
        return self._values

    @property
    def dim(self):
        """ dimension of one node value (int for vector paths, tuple otherwise) """
        shape = self._values.shape[1:]
        return shape[0] if len(shape) == 1 else shape

    def __len__(self):
        return self._grid.shape[0]

    def at(self, t):
        """ value at time t: node value on grid points, linear interpolation elsewhere """
        k = int(np.searchsorted(self._grid, t))
        if k < len(self._grid) and self._grid[k] == t:
            return self._values[k].copy()
        if len(self._grid) == 1:
            return self._values[0].copy()
        if self._interp is None:
            self._interp = interp1d(self._grid, self._values, axis=0,
                                    bounds_error=False,
                                    fill_value=(self._values[0], self._values[-1]),
                                    assume_sorted=True)
        return np.asarray(self._interp(t))

    def prefix(self, k):
        """ restriction to the nodes 0..k """
        return Trajectory(self._grid[:k+1], self._values[:k+1])


def state_observation(indices):
    """ observation y(t) = selected components of x(t)

    Parameters
    ---------------
    indices: list(int)
      state components seen by the decision maker

    Returns
    ----------
    callback (t, x: Trajectory) -> array
    """
    idx = np.asarray(list(indices), dtype=int)

    def observe(t, x):
        return x.at(t)[idx]

    observe.indices = idx
    return observe


def delayed_observation(indices, delay):
    """ observation y(t) = selected components of x(max(0, t-delay)) """
    idx = np.asarray(list(indices), dtype=int)

    def observe(t, x):
        return x.at(max(0., t-delay))[idx]

    observe.indices = idx
    return observe


class TeamProblem:
    """ Distributed decision problem with N decision makers

        dx/dt = f(t, x, u),  x(0) = x0
        J(u) = int_0^T l(t, x, u) dt + phi(x(T))

    u = (u^1, ..., u^N) stacks the controls of the decision makers.

    Parameters
    ---------------
    x0: array
      initial state (length n)
    horizon: float
      final time T > 0
    control_dims: list(int)
      control dimension d_i of each decision maker
    dynamics: callable
      f(t, x, u) -> n-vector
    running_cost: callable
      l(t, x, u) -> float
    terminal_cost: callable
      phi(x) -> float
    dynamics_jac_x: callable, opt
      (t, x, u) -> n x n matrix (default: finite differences)
    dynamics_jac_u: callable, opt
      (t, x, u) -> n x d matrix (default: finite differences)
    running_cost_grad_x: callable, opt
      (t, x, u) -> n-vector (default: finite differences)
    running_cost_grad_u: callable, opt
      (t, x, u) -> d-vector (default: finite differences)
    terminal_cost_grad: callable, opt
      x -> n-vector (default: finite differences)
    action_sets: list(Box), opt
      one box per decision maker (default: unbounded)
    observations: list(callable), opt
      h^i(t, x: Trajectory) -> k_i-vector, causal in x (default: full state)
    info_structures: list(InfoSpec), opt
      information structure of each decision maker (default: open loop)
    name: str, opt
      label of the instance
    """

    def __init__(self, x0, horizon, control_dims, dynamics, running_cost, terminal_cost,
                 dynamics_jac_x=None, dynamics_jac_u=None,
                 running_cost_grad_x=None, running_cost_grad_u=None,
                 terminal_cost_grad=None, action_sets=None, observations=None,
                 info_structures=None, name='team problem'):
        from teamopt_solver.team_infostruct import InfoSpec

        self._x0 = np.atleast_1d(np.array(x0, dtype=float))
        self._x0.setflags(write=False)
        if self._x0.ndim != 1 or self._x0.shape[0] < 1:
            raise ProblemStructureError('x0 must be a non-empty vector')
        if not horizon > 0:
            raise ProblemStructureError('horizon must be positive, got {}'.format(horizon))
        self._horizon = horizon
        self._control_dims = tuple(int(d) for d in control_dims)
        if len(self._control_dims) < 1 or min(self._control_dims) < 1:
            raise ProblemStructureError(
                'need at least one decision maker with positive control dimension, got {}'.format(control_dims))
        self._offsets = np.concatenate(([0], np.cumsum(self._control_dims)))

        self._f = dynamics
        self._l = running_cost
        self._phi = terminal_cost
        self._f_x = dynamics_jac_x
        self._f_u = dynamics_jac_u
        self._l_x = running_cost_grad_x
        self._l_u = running_cost_grad_u
        self._phi_x = terminal_cost_grad

        N = len(self._control_dims)
        if action_sets is None:
            action_sets = [Box.unbounded(d) for d in self._control_dims]
        if len(action_sets) != N:
            raise ProblemStructureError(
                'expected {} action sets, got {}'.format(N, len(action_sets)))
        for i, (box, d) in enumerate(zip(action_sets, self._control_dims)):
            if box.dim != d:
                raise ProblemStructureError(
                    'action set of DM {} has dimension {}, expected {}'.format(i+1, box.dim, d))
        self._action_sets = tuple(action_sets)

        if observations is None:
            observations = [state_observation(range(self.n))]*N
        if len(observations) != N:
            raise ProblemStructureError(
                'expected {} observations, got {}'.format(N, len(observations)))
        self._observations = tuple(observations)

        if info_structures is None:
            info_structures = [InfoSpec.open_loop() for i in range(N)]
        if len(info_structures) != N:
            raise ProblemStructureError(
                'expected {} information structures, got {}'.format(N, len(info_structures)))
        self._info_structures = tuple(info_structures)
        self.name = name

    @property
    def x0(self):
        return self._x0

    @property
    def horizon(self):
        return self._horizon

    @property
    def n(self):
        return self._x0.shape[0]

    @property
    def N(self):
        return len(self._control_dims)

    @property
    def d(self):
        return int(self._offsets[-1])

    @property
    def control_dims(self):
        return self._control_dims

    @property
    def action_sets(self):
        return self._action_sets

    @property
    def observations(self):
        return self._observations

    @property
    def info_structures(self):
        return self._info_structures

    def block(self, i):
        """ slice of DM i (0-based) in the stacked control vector """
        return slice(int(self._offsets[i]), int(self._offsets[i+1]))

    def split(self, u):
        """ split stacked controls (..., d) into per-DM blocks """
        return [u[..., self.block(i)] for i in range(self.N)]

    def clip(self, u):
        """ project a stacked control vector (or (K+1, d) array) onto the action sets """
        u = np.array(u, dtype=float)
        for i, box in enumerate(self._action_sets):
            u[..., self.block(i)] = box.clip(u[..., self.block(i)])
        return u

    def f(self, t, x, u):
        return _vector(self._f(t, x, u), self.n, 'dynamics')

    def l(self, t, x, u):
        return _scalar(self._l(t, x, u), 'running cost')

    def phi(self, x):
        return _scalar(self._phi(x), 'terminal cost')

    def f_x(self, t, x, u):
        if self._f_x is not None:
            return _matrix(self._f_x(t, x, u), (self.n, self.n), 'dynamics_jac_x')
        return fd_jacobian(lambda z: self.f(t, z, u), x)

    def f_u(self, t, x, u):
        if self._f_u is not None:
            return _matrix(self._f_u(t, x, u), (self.n, self.d), 'dynamics_jac_u')
        return fd_jacobian(lambda v: self.f(t, x, v), u)

    def l_x(self, t, x, u):
        if self._l_x is not None:
            return _vector(self._l_x(t, x, u), self.n, 'running_cost_grad_x')
        return fd_jacobian(lambda z: self.l(t, z, u), x)[0]

    def l_u(self, t, x, u):
        if self._l_u is not None:
            return _vector(self._l_u(t, x, u), self.d, 'running_cost_grad_u')
        return fd_jacobian(lambda v: self.l(t, x, v), u)[0]

    def phi_x(self, x):
        if self._phi_x is not None:
            return _vector(self._phi_x(x), self.n, 'terminal_cost_grad')
        return fd_jacobian(self.phi, x)[0]

    def has_analytic(self, name):
        """ True if the derivative callback `name` (f_x, f_u, l_x, l_u, phi_x) was supplied """
        return getattr(self, '_'+name) is not None

    def finite_difference_copy(self):
        """ same problem with every analytic derivative dropped """
        return TeamProblem(self._x0, self._horizon, self._control_dims, self._f, self._l, self._phi,
                           action_sets=self._action_sets, observations=self._observations,
                           info_structures=self._info_structures, name=self.name)


class Violation:
    """ one failed sampled check of validate_problem """

    def __init__(self, check, subject, detail):
        self.check = check
        self.subject = subject
        self.detail = detail

    def to_dict(self):
        return {'check': self.check, 'subject': self.subject, 'detail': self.detail}

    def __repr__(self):
        return '{}[{}]: {}'.format(self.check, self.subject, self.detail)


class ValidationReport:
    """ list of violated checks; empty means no violation was detected (not a proof) """

    def __init__(self):
        self.violations = []

    def add(self, check, subject, detail):
        LOGGER.info('validation: %s failed for %s (%s)', check, subject, detail)
        self.violations.append(Violation(check, subject, detail))

    @property
    def is_clean(self):
        return len(self.violations) == 0

    def checks(self):
        return sorted(set(v.check for v in self.violations))

    def __len__(self):
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)

    def to_dict(self):
        return [v.to_dict() for v in self.violations]


def _sample_control(rng, p):
    u = rng.normal(size=p.d)
    for i, box in enumerate(p.action_sets):
        lo, up = box.lower, box.upper
        sl = p.block(i)
        finite = np.isfinite(lo) & np.isfinite(up) & (lo <= up)
        blk = u[sl]
        blk[finite] = rng.uniform(lo[finite], up[finite])
        u[sl] = box.clip(blk) if not box.is_empty else blk
    return u


def validate_problem(p, samples=20, seed=0, lipschitz_cap=1.e6):
    """ Sampled evidence for the standing assumptions of a TeamProblem

    Parameters
    ---------------
    p: TeamProblem
      problem to check
    samples: int, opt
      number of random sample points per check (default: 20)
    seed: int, opt
      seed of the sampling generator (default: 0)
    lipschitz_cap: float, opt
      finite-difference Lipschitz ratios (and growth constants) above this are flagged (default: 1e6)

    Returns
    ----------
    ValidationReport (empty: no violation detected)

    Raises
    ---------
    ProblemStructureError if a callback returns an output of the wrong dimension
    """
    if samples < 1:
        raise ProblemStructureError('samples must be >= 1, got {}'.format(samples))
    rng = np.random.default_rng(seed)
    report = ValidationReport()

    # structural pass at the nominal point
    u0 = np.zeros(p.d)
    for box_i, box in enumerate(p.action_sets):
        if not box.is_empty:
            u0[p.block(box_i)] = box.clip(u0[p.block(box_i)])
    x0 = np.array(p.x0)
    p.f(0., x0, u0)
    p.l(0., x0, u0)
    p.phi(x0)
    p.f_x(0., x0, u0)
    p.f_u(0., x0, u0)
    p.l_x(0., x0, u0)
    p.l_u(0., x0, u0)
    p.phi_x(x0)

    for i, box in enumerate(p.action_sets):
        if box.is_empty:
            report.add('action set', 'DM {}'.format(i+1),
                       'lower bound exceeds upper bound: {}'.format(box))

    scale = 1.+np.linalg.norm(x0)
    for s in range(samples):
        t = rng.uniform(0., p.horizon)
        x = x0+scale*rng.normal(size=p.n)
        u = _sample_control(rng, p)
        fx = p.f(t, x, u)
        if not np.all(np.isfinite(fx)):
            report.add('finiteness', 'dynamics', 'non-finite output at t={}'.format(t))
            continue
        dx = rng.normal(size=p.n)
        dx *= 1.e-3/np.linalg.norm(dx)
        ratio = np.linalg.norm(p.f(t, x+dx, u)-fx)/np.linalg.norm(dx)
        if not ratio <= lipschitz_cap:
            report.add('lipschitz', 'dynamics in x',
                       'ratio {:.3e} > {:.1e} at t={}'.format(ratio, lipschitz_cap, t))
        du = rng.normal(size=p.d)
        du *= 1.e-3/np.linalg.norm(du)
        ratio = np.linalg.norm(p.f(t, x, u+du)-fx)/np.linalg.norm(du)
        if not ratio <= lipschitz_cap:
            report.add('lipschitz', 'dynamics in u',
                       'ratio {:.3e} > {:.1e} at t={}'.format(ratio, lipschitz_cap, t))
        growth = np.linalg.norm(fx)/(1.+np.linalg.norm(x)+np.linalg.norm(u))
        if not growth <= lipschitz_cap:
            report.add('growth', 'dynamics',
                       '|f|/(1+|x|+|u|) = {:.3e} > {:.1e}'.format(growth, lipschitz_cap))

    # observations: finite, one output dimension along a path
    nodes = np.linspace(0., p.horizon, 21)
    broken = set()
    for i, h in enumerate(p.observations):
        path = Trajectory(nodes, x0+np.cumsum(rng.normal(size=(len(nodes), p.n)), axis=0)*0.1)
        shape = None
        for k in sorted(rng.integers(0, len(nodes), size=samples)):
            y = np.atleast_1d(np.asarray(h(nodes[k], path), dtype=float))
            if not np.all(np.isfinite(y)):
                report.add('observation', 'observation {}'.format(i+1), 'non-finite output at t={}'.format(nodes[k]))
            elif shape is not None and y.shape != shape:
                report.add('observation', 'observation {}'.format(i+1),
                           'output shape {} at t={} differs from {}'.format(y.shape, nodes[k], shape))
            else:
                shape = y.shape
                continue
            broken.add(i)
            break

    # causality: trajectories agreeing on [0,t] must give the same observation at t
    for i, h in enumerate(p.observations):
        if i in broken:
            continue
        for s in range(samples):
            base = x0+np.cumsum(rng.normal(size=(len(nodes), p.n)), axis=0)*0.1
            k = int(rng.integers(0, len(nodes)-1))
            other = base.copy()
            other[k+1:] += 1.+rng.normal(size=(len(nodes)-k-1, p.n))
            ya = np.asarray(h(nodes[k], Trajectory(nodes, base)), dtype=float)
            yb = np.asarray(h(nodes[k], Trajectory(nodes, other)), dtype=float)
            if ya.shape != yb.shape or np.any(ya != yb):
                report.add('causality', 'observation {}'.format(i+1),
                           'output at t={} depends on the state after t'.format(nodes[k]))
                break

    return report
