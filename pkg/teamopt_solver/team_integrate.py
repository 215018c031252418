import logging
import numpy as np
from teamopt_solver.team_model import Trajectory, ProblemStructureError, IntegrationDivergenceError
from teamopt_solver.team_hamiltonian import adjoint_coefficients

LOGGER = logging.getLogger(__name__)


class TimeGrid:
    """ Uniform grid t_k = kT/K, k = 0..K, shared by all trajectories of a solve

    Parameters
    ---------------
    K: int
      number of steps (>= 1)
    horizon: float
      final time T
    """

    def __init__(self, K, horizon):
        if int(K) != K or K < 1:
            raise ProblemStructureError('grid.K must be a positive integer, got {}'.format(K))
        if not horizon > 0:
            raise ProblemStructureError('horizon must be positive, got {}'.format(horizon))
        self.K = int(K)
        self.horizon = float(horizon)
        self.nodes = np.linspace(0., self.horizon, self.K+1)
        self.nodes[-1] = self.horizon
        self.h = self.horizon/self.K
        self.weights = np.full(self.K+1, self.h)
        self.weights[0] = self.weights[-1] = 0.5*self.h
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)

    @classmethod
    def default(cls, horizon, per_unit=200):
        """ grid with per_unit steps per unit of horizon (at least one step) """
        return cls(max(1, int(np.ceil(per_unit*horizon))), horizon)

    def __len__(self):
        return self.K+1

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and self.K == other.K and self.horizon == other.horizon

    def __hash__(self):
        return hash((self.K, self.horizon))

    def __repr__(self):
        return 'TimeGrid(K={}, horizon={})'.format(self.K, self.horizon)

    def integral(self, values):
        """ trapezoid quadrature of node values (first axis along the grid) """
        return np.tensordot(self.weights, np.asarray(values, dtype=float), axes=(0, 0))

    def trajectory(self, values):
        return Trajectory(self.nodes, values, horizon=self.horizon)


def control_values(u, g, d=None):
    """ Node values of a control argument as a (K+1, d) array

    Parameters
    ---------------
    u: StrategyProfile, Trajectory or array
      controls on the grid
    g: TimeGrid
      grid
    d: int, opt
      expected control dimension (default: not checked)

    Returns
    ----------
    array of shape (K+1, d)
    """
    if hasattr(u, 'controls'):
        vals = u.controls.values
    elif isinstance(u, Trajectory):
        vals = u.values
    else:
        vals = np.asarray(u, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, np.newaxis]
    if vals.shape[0] != len(g):
        raise ProblemStructureError(
            'control has {} nodes, grid has {}'.format(vals.shape[0], len(g)))
    if d is not None and vals.shape[1] != d:
        raise ProblemStructureError(
            'control dimension: expected {}, got {}'.format(d, vals.shape[1]))
    return vals


def _state_values(x, g):
    vals = x.values if isinstance(x, Trajectory) else np.asarray(x, dtype=float)
    if vals.shape[0] != len(g):
        raise ProblemStructureError('state has {} nodes, grid has {}'.format(vals.shape[0], len(g)))
    return vals


def _finite_or_raise(values, k, g, what):
    if not np.all(np.isfinite(values)):
        LOGGER.warning('%s sweep diverged at node %d (t=%g)', what, k, g.nodes[k])
        raise IntegrationDivergenceError(k, g.nodes[k], what)


def integrate_forward(p, u, g):
    """ Forward RK4 state sweep of dx/dt = f(t, x, u), x(0) = x0

    Stage controls at half steps are the mean of the two node controls.

    Parameters
    ---------------
    p: TeamProblem
      problem
    u: StrategyProfile, Trajectory or array
      controls on g
    g: TimeGrid
      grid

    Returns
    ----------
    Trajectory of states

    Raises
    ---------
    IntegrationDivergenceError at the first node with non-finite values
    """
    uv = control_values(u, g, p.d)
    h = g.h
    x = np.empty((len(g), p.n))
    x[0] = p.x0
    with np.errstate(over='ignore', invalid='ignore'):
        for k in range(g.K):
            t = g.nodes[k]
            um = 0.5*(uv[k]+uv[k+1])
            k1 = p.f(t, x[k], uv[k])
            k2 = p.f(t+0.5*h, x[k]+0.5*h*k1, um)
            k3 = p.f(t+0.5*h, x[k]+0.5*h*k2, um)
            k4 = p.f(g.nodes[k+1], x[k]+h*k3, uv[k+1])
            x[k+1] = x[k]+h/6.*(k1+2.*k2+2.*k3+k4)
            _finite_or_raise(x[k+1], k+1, g, 'state')
    return g.trajectory(x)


def integrate_adjoint(p, u, x, g):
    """ Backward RK4 sweep of dpsi/dt = -(f_x'psi + l_x), psi(T) = phi_x(x(T))

    x and u at half steps are linear interpolations of the node values.
    The right-hand side is -H_x, built from the same coefficients as
    team_hamiltonian.hamiltonian_grad_x.

    Parameters
    ---------------
    p: TeamProblem
      problem
    u: StrategyProfile, Trajectory or array
      controls on g
    x: Trajectory
      state sweep on g
    g: TimeGrid
      grid

    Returns
    ----------
    Trajectory of adjoints
    """
    uv = control_values(u, g, p.d)
    xv = _state_values(x, g)
    h = g.h
    psi = np.empty((len(g), p.n))
    psi[-1] = p.phi_x(xv[-1])
    _finite_or_raise(psi[-1], g.K, g, 'adjoint')

    def rhs(coefs, y):
        f_x, l_x = coefs
        return -(f_x.T @ y + l_x)

    with np.errstate(over='ignore', invalid='ignore'):
        right = adjoint_coefficients(p, g.nodes[-1], xv[-1], uv[-1])
        for k in range(g.K-1, -1, -1):
            tm = g.nodes[k]+0.5*h
            mid = adjoint_coefficients(p, tm, 0.5*(xv[k]+xv[k+1]), 0.5*(uv[k]+uv[k+1]))
            left = adjoint_coefficients(p, g.nodes[k], xv[k], uv[k])
            y = psi[k+1]
            k1 = rhs(right, y)
            k2 = rhs(mid, y-0.5*h*k1)
            k3 = rhs(mid, y-0.5*h*k2)
            k4 = rhs(left, y-h*k3)
            psi[k] = y-h/6.*(k1+2.*k2+2.*k3+k4)
            _finite_or_raise(psi[k], k, g, 'adjoint')
            right = left
    return g.trajectory(psi)


def integrate_variational(p, u_ref, du, x_ref, g):
    """ RK4 solution of dZ/dt = f_x Z + f_u du along (x_ref, u_ref), Z(0) = 0

    The linearization is taken at the RK4 stage states of the reference
    sweep, so Z is the derivative of the discrete forward map in the
    direction du.

    Parameters
    ---------------
    p: TeamProblem
      problem
    u_ref: StrategyProfile, Trajectory or array
      reference controls
    du: StrategyProfile, Trajectory or array
      control direction u - u_ref
    x_ref: Trajectory
      state sweep of u_ref
    g: TimeGrid
      grid

    Returns
    ----------
    Trajectory of variations Z
    """
    uv = control_values(u_ref, g, p.d)
    dv = control_values(du, g, p.d)
    xv = _state_values(x_ref, g)
    h = g.h
    Z = np.zeros((len(g), p.n))
    with np.errstate(over='ignore', invalid='ignore'):
        for k in range(g.K):
            t = g.nodes[k]
            tm = t+0.5*h
            t1 = g.nodes[k+1]
            um = 0.5*(uv[k]+uv[k+1])
            dm = 0.5*(dv[k]+dv[k+1])
            # reference stages
            X1 = xv[k]
            k1 = p.f(t, X1, uv[k])
            X2 = xv[k]+0.5*h*k1
            k2 = p.f(tm, X2, um)
            X3 = xv[k]+0.5*h*k2
            k3 = p.f(tm, X3, um)
            X4 = xv[k]+h*k3
            # linearized stages
            z = Z[k]
            dk1 = p.f_x(t, X1, uv[k]) @ z+p.f_u(t, X1, uv[k]) @ dv[k]
            z2 = z+0.5*h*dk1
            dk2 = p.f_x(tm, X2, um) @ z2+p.f_u(tm, X2, um) @ dm
            z3 = z+0.5*h*dk2
            dk3 = p.f_x(tm, X3, um) @ z3+p.f_u(tm, X3, um) @ dm
            z4 = z+h*dk3
            dk4 = p.f_x(t1, X4, uv[k+1]) @ z4+p.f_u(t1, X4, uv[k+1]) @ dv[k+1]
            Z[k+1] = z+h/6.*(dk1+2.*dk2+2.*dk3+dk4)
            _finite_or_raise(Z[k+1], k+1, g, 'variation')
    return g.trajectory(Z)


def integrate_cost_gradient(p, u, x, g):
    """ Gradient of the discretized pay-off with respect to the node controls

    Reverse sweep of the forward RK4 map (half-step controls are node
    means) and of the trapezoid running cost. The node gradient is
    divided by the trapezoid weights, so the result is a density
    consistent with H_u: for any direction du, dJ = sum_k w_k <G_k, du_k>
    holds exactly on the grid.

    Parameters
    ---------------
    p: TeamProblem
      problem
    u: StrategyProfile, Trajectory or array
      controls on g
    x: Trajectory
      state sweep of u on g
    g: TimeGrid
      grid

    Returns
    ----------
    array of shape (K+1, d)

    Raises
    ---------
    IntegrationDivergenceError at the first node with a non-finite multiplier
    """
    uv = control_values(u, g, p.d)
    xv = _state_values(x, g)
    h = g.h
    w = g.weights
    G = np.zeros((len(g), p.d))
    tK = g.nodes[-1]
    lam = p.phi_x(xv[-1])+w[-1]*p.l_x(tK, xv[-1], uv[-1])
    G[-1] += w[-1]*p.l_u(tK, xv[-1], uv[-1])
    _finite_or_raise(lam, g.K, g, 'adjoint')
    with np.errstate(over='ignore', invalid='ignore'):
        for k in range(g.K-1, -1, -1):
            t = g.nodes[k]
            tm = t+0.5*h
            t1 = g.nodes[k+1]
            um = 0.5*(uv[k]+uv[k+1])
            X1 = xv[k]
            X2 = X1+0.5*h*p.f(t, X1, uv[k])
            X3 = X1+0.5*h*p.f(tm, X2, um)
            X4 = X1+h*p.f(tm, X3, um)
            # stage multipliers, last stage first
            b1, b2, b3, b4 = h/6.*lam, h/3.*lam, h/3.*lam, h/6.*lam
            bx = lam.copy()
            bX = p.f_x(t1, X4, uv[k+1]).T @ b4
            G[k+1] += p.f_u(t1, X4, uv[k+1]).T @ b4
            bx += bX
            b3 = b3+h*bX
            bX = p.f_x(tm, X3, um).T @ b3
            bum = p.f_u(tm, X3, um).T @ b3
            bx += bX
            b2 = b2+0.5*h*bX
            bX = p.f_x(tm, X2, um).T @ b2
            bum = bum+p.f_u(tm, X2, um).T @ b2
            bx += bX
            b1 = b1+0.5*h*bX
            bx += p.f_x(t, X1, uv[k]).T @ b1
            G[k] += p.f_u(t, X1, uv[k]).T @ b1+0.5*bum
            G[k+1] += 0.5*bum
            lam = bx+w[k]*p.l_x(t, X1, uv[k])
            G[k] += w[k]*p.l_u(t, X1, uv[k])
            _finite_or_raise(lam, k, g, 'adjoint')
    return G/w[:, np.newaxis]
