import logging
import warnings
import numpy as np
from numpy.polynomial import Legendre
from scipy.linalg import cho_factor, cho_solve, eigvalsh
from scipy.integrate import trapezoid
from teamopt_solver.team_model import TeamOptError, ProblemStructureError, Trajectory

LOGGER = logging.getLogger(__name__)

OPEN_LOOP = 'open_loop'
CLOSED_LOOP_MARKOV = 'closed_loop_markov'
CLOSED_LOOP_FEEDBACK = 'closed_loop_feedback'
FINITE_BASIS = 'finite_basis'
KINDS = (OPEN_LOOP, CLOSED_LOOP_MARKOV, CLOSED_LOOP_FEEDBACK, FINITE_BASIS)

GRAM_REGULARIZATION = 1.e-10
RANK_RTOL = 1.e-10


class InfoStructureError(TeamOptError, ValueError):
    """Invalid information structure (unknown kind, empty basis, bad feature output)"""


class GramRankWarning(UserWarning):
    """Gram matrix of an information subspace is rank deficient"""


class InfoSpec:
    """ Information structure of one decision maker

    Strategies of a non open-loop DM are u_t = sum_j theta_j phi_j(t, y),
    theta constant over the horizon.

    Parameters
    ---------------
    kind: str
      one of open_loop, closed_loop_markov, closed_loop_feedback, finite_basis
    features: list(callable), opt
      closed_loop_feedback: phi_j(t, y_prefix: Trajectory);
      finite_basis: phi_j(t).
      A feature returns a scalar (replicated on every control component)
      or a d_i-vector.
    label: str, opt
      short description used in reports
    """

    def __init__(self, kind, features=None, label=None):
        if kind not in KINDS:
            raise InfoStructureError('unknown information structure kind {}; expected one of {}'.format(kind, KINDS))
        self.kind = kind
        self.features = tuple(features) if features is not None else ()
        if kind in (CLOSED_LOOP_FEEDBACK, FINITE_BASIS) and len(self.features) == 0:
            raise InfoStructureError('{} information structure needs at least one basis function'.format(kind))
        self.label = label if label is not None else kind

    @classmethod
    def open_loop(cls):
        return cls(OPEN_LOOP)

    @classmethod
    def closed_loop_markov(cls):
        """ memoryless affine strategies u_t = theta_0 + theta_1 y(t) """
        return cls(CLOSED_LOOP_MARKOV)

    @classmethod
    def closed_loop_feedback(cls, features, label=None):
        return cls(CLOSED_LOOP_FEEDBACK, features, label)

    @classmethod
    def finite_basis(cls, features, label=None):
        return cls(FINITE_BASIS, features, label)

    @classmethod
    def polynomial(cls, degree, horizon):
        """ Legendre polynomials of degree 0..degree shifted to [0, horizon] """
        polys = [Legendre.basis(j, domain=[0., horizon]) for j in range(degree+1)]
        return cls(FINITE_BASIS, [lambda t, q=q: float(q(t)) for q in polys],
                   'polynomial(degree={})'.format(degree))

    @classmethod
    def fourier(cls, harmonics, horizon):
        """ 1, cos(2 pi j t/T), sin(2 pi j t/T) for j = 1..harmonics """
        feats = [lambda t: 1.]
        for j in range(1, harmonics+1):
            w = 2.*np.pi*j/horizon
            feats.append(lambda t, w=w: np.cos(w*t))
            feats.append(lambda t, w=w: np.sin(w*t))
        return cls(FINITE_BASIS, feats, 'fourier(harmonics={})'.format(harmonics))

    @classmethod
    def observation_memory(cls, obs_dim):
        """ causal feedback on 1, y(t) and the running mean of y over [0, t] """
        feats = [lambda t, y: 1.]
        for j in range(obs_dim):
            feats.append(lambda t, y, j=j: y.values[-1, j])
        for j in range(obs_dim):
            feats.append(lambda t, y, j=j: _running_mean(y, j))
        return cls(CLOSED_LOOP_FEEDBACK, feats, 'observation_memory')

    @property
    def observation_dependent(self):
        return self.kind in (CLOSED_LOOP_MARKOV, CLOSED_LOOP_FEEDBACK)

    def __repr__(self):
        return 'InfoSpec({})'.format(self.label)


def _running_mean(y, j):
    if len(y) == 1:
        return y.values[0, j]
    return trapezoid(y.values[:, j], y.grid)/y.grid[-1]


def _feature_block(value, control_dim, what):
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        return arr[0]*np.eye(control_dim)
    if arr.shape != (control_dim,):
        raise InfoStructureError(
            '{} returned shape {}, expected a scalar or ({},)'.format(what, arr.shape, control_dim))
    return arr[:, np.newaxis]


def _basis_matrix(spec, y, nodes, control_dim):
    """ (K+1, d_i, m) basis evaluated on the nodes """
    K1 = len(nodes)
    if spec.kind == CLOSED_LOOP_MARKOV:
        yv = y.values
        eye = np.eye(control_dim)
        cols = [np.broadcast_to(eye, (K1, control_dim, control_dim))]
        for j in range(yv.shape[1]):
            cols.append(yv[:, j, np.newaxis, np.newaxis]*eye)
        return np.concatenate(cols, axis=2)
    blocks = []
    for k, t in enumerate(nodes):
        row = []
        for j, feat in enumerate(spec.features):
            out = feat(t) if spec.kind == FINITE_BASIS else feat(t, y.prefix(k))
            row.append(_feature_block(out, control_dim, 'basis function {}'.format(j)))
        blocks.append(np.concatenate(row, axis=1))
    Phi = np.array(blocks)
    if not np.all(np.isfinite(Phi)):
        raise InfoStructureError('non-finite basis values in {}'.format(spec.label))
    return Phi


class InfoSubspace:
    """ Finite-dimensional subspace of grid controls of one DM with its L2 projection

    Built by build_subspace; open-loop DMs get the identity subspace,
    whose coefficients are the node values themselves.

    Parameters
    ---------------
    spec: InfoSpec
      information structure
    nodes: array
      grid nodes
    weights: array
      quadrature weights of the grid (trapezoid, or ones on step grids)
    control_dim: int
      d_i
    basis: array, opt
      (K+1, d_i, m) basis values; None for the identity subspace
    """

    def __init__(self, spec, nodes, weights, control_dim, basis=None):
        self._spec = spec
        self._nodes = np.asarray(nodes, dtype=float)
        self._weights = np.asarray(weights, dtype=float)
        self._control_dim = control_dim
        self._basis = basis
        self._gram = None
        self._factor = None
        self._rank = None
        if basis is not None:
            self._factorize()

    def _factorize(self):
        Phi = self._basis
        m = Phi.shape[2]
        if m == 0:
            raise InfoStructureError('zero-length basis')
        self._gram = np.einsum('k,kcm,kcn->mn', self._weights, Phi, Phi)
        self._gram = 0.5*(self._gram+self._gram.T)
        eigs = eigvalsh(self._gram)
        top = max(eigs[-1], 0.)
        self._rank = int(np.sum(eigs > RANK_RTOL*top)) if top > 0. else 0
        if self._rank < m:
            msg = 'Gram matrix of {} is rank deficient: effective rank {} of {}'.format(
                self._spec.label, self._rank, m)
            LOGGER.warning(msg)
            warnings.warn(msg, GramRankWarning)
        trace = np.trace(self._gram)
        lam = GRAM_REGULARIZATION*trace/m if trace > 0. else GRAM_REGULARIZATION
        self._factor = cho_factor(self._gram+lam*np.eye(m))

    @property
    def spec(self):
        return self._spec

    @property
    def kind(self):
        return self._spec.kind

    @property
    def nodes(self):
        return self._nodes

    @property
    def weights(self):
        return self._weights

    @property
    def control_dim(self):
        return self._control_dim

    @property
    def basis(self):
        """ (K+1, d_i, m) basis values (None for the identity subspace) """
        return self._basis

    @property
    def gram(self):
        return self._gram

    @property
    def is_identity(self):
        return self._basis is None

    @property
    def dim(self):
        """ number of coefficients """
        if self.is_identity:
            return len(self._nodes)*self._control_dim
        return self._basis.shape[2]

    @property
    def effective_rank(self):
        return self.dim if self.is_identity else self._rank

    def coefficient_shape(self):
        if self.is_identity:
            return (len(self._nodes), self._control_dim)
        return (self._basis.shape[2],)

    def _values(self, g_fn):
        vals = g_fn.values if isinstance(g_fn, Trajectory) else np.asarray(g_fn, dtype=float)
        if vals.ndim == 1 and self._control_dim == 1:
            vals = vals[:, np.newaxis]
        if vals.shape != (len(self._nodes), self._control_dim):
            raise ProblemStructureError('grid function of shape {} does not match subspace grid ({}, {})'.format(
                vals.shape, len(self._nodes), self._control_dim))
        if isinstance(g_fn, Trajectory) and not np.array_equal(g_fn.grid, self._nodes):
            raise ProblemStructureError('grid function lives on another grid')
        return vals

    def inner(self, a, b):
        """ discrete L2 inner product sum_k w_k <a_k, b_k> """
        return float(np.sum(self._weights[:, np.newaxis]*self._values(a)*self._values(b)))

    def moments(self, g_fn):
        """ basis inner products int Phi' g dt (node-weighted values for the identity) """
        vals = self._values(g_fn)
        if self.is_identity:
            return self._weights[:, np.newaxis]*vals
        return np.einsum('k,kcm,kc->m', self._weights, self._basis, vals)

    def solve_gram(self, rhs):
        """ G^-1 rhs with the regularized factor and two refinement sweeps """
        x = cho_solve(self._factor, rhs)
        for i in range(2):
            x = x+cho_solve(self._factor, rhs-self._gram @ x)
        return x

    def coefficients(self, g_fn):
        """ coefficients of the projection of g_fn """
        vals = self._values(g_fn)
        if self.is_identity:
            return vals.copy()
        return self.solve_gram(self.moments(vals))

    def realize(self, theta):
        """ node values Phi theta, shape (K+1, d_i) """
        if self.is_identity:
            return np.array(theta, dtype=float).reshape(len(self._nodes), self._control_dim)
        return np.einsum('kcm,m->kc', self._basis, np.asarray(theta, dtype=float))

    def project(self, g_fn):
        """ node values of the orthogonal projection of g_fn """
        return self.realize(self.coefficients(g_fn))


def build_subspace(spec, y, grid, control_dim):
    """ Realize an information structure on a grid

    Parameters
    ---------------
    spec: InfoSpec
      information structure of the DM
    y: Trajectory
      observation path of the DM on the grid (unused by open_loop and finite_basis)
    grid: TimeGrid or StepGrid
      grid with nodes and weights
    control_dim: int
      d_i

    Returns
    ----------
    InfoSubspace

    Raises
    ---------
    InfoStructureError for a zero-length basis or bad feature output
    """
    if spec.kind == OPEN_LOOP:
        return InfoSubspace(spec, grid.nodes, grid.weights, control_dim)
    if spec.observation_dependent:
        if y is None or len(y) != len(grid.nodes):
            raise ProblemStructureError('{} needs an observation path on the grid'.format(spec.label))
    Phi = _basis_matrix(spec, y, grid.nodes, control_dim)
    LOGGER.debug('built %s subspace with %d basis columns', spec.label, Phi.shape[2])
    return InfoSubspace(spec, grid.nodes, grid.weights, control_dim, Phi)


def project(S, g_fn):
    """ orthogonal projection of a grid function onto S, as a Trajectory """
    vals = S.project(g_fn)
    return Trajectory(S.nodes, vals)


def observation_path(h, x, nodes):
    """ y(t_k) = h(t_k, x) at every node """
    return Trajectory(nodes, np.array([np.atleast_1d(np.asarray(h(t, x), dtype=float)) for t in nodes]))
