import logging
from dataclasses import dataclass
import numpy as np
from scipy.linalg import solve, eigvalsh, LinAlgError
from teamopt_solver.team_model import TeamOptError, TeamProblem, Trajectory
from teamopt_solver.team_integrate import integrate_forward, integrate_adjoint, control_values
from teamopt_solver.team_solver import (SolverOptions, SolveReport, ContinuousModel,
                                        initial_profile, info_subspaces, stationarity_residual, residual_measure,
                                        attach_certificate, sufficiency_certificate)

LOGGER = logging.getLogger(__name__)


class LQDataError(TeamOptError, ValueError):
    """LQ coefficients violate shape, symmetry or definiteness requirements"""


class LQSingularityError(TeamOptError, ArithmeticError):
    """ Projected R_ii block of a decision maker cannot be inverted

    Parameters
    ---------------
    dm: int
      1-based DM index
    node: int
      grid node (None for a Galerkin solve over the whole horizon)
    """

    def __init__(self, dm, node=None):
        self.dm = dm
        self.node = node
        where = 'node {}'.format(node) if node is not None else 'the Galerkin system'
        super().__init__('singular projected R block of DM {} at {}'.format(dm, where))


def _coefficient(value):
    """ constant array or callable of t, both returned as callables """
    if callable(value):
        return value
    arr = np.array(value, dtype=float)
    arr.setflags(write=False)
    return lambda t: arr


class LQData:
    """ Coefficients of a linear-quadratic team problem

        f = A x + b + B u
        l = 1/2 <u, R u> + 1/2 <x, H x> + <x, F> + <u, E x> + <u, m>
        phi = 1/2 <x, M_T x> + <x, N_T>

    Every coefficient is a constant array or a callable of t.

    Parameters
    ---------------
    A: array or callable
      n x n
    B: array or callable
      n x d, columns grouped per DM
    R: array or callable
      d x d, symmetric positive definite
    control_dims: list(int)
      d_i per DM
    H: array or callable, opt
      n x n symmetric positive semidefinite (default: 0)
    b: array or callable, opt
      n (default: 0)
    E: array or callable, opt
      d x n (default: 0)
    F: array or callable, opt
      n (default: 0)
    m: array or callable, opt
      d (default: 0)
    M_T: array, opt
      n x n symmetric positive semidefinite (default: 0)
    N_T: array, opt
      n (default: 0)
    """

    def __init__(self, A, B, R, control_dims, H=None, b=None, E=None, F=None, m=None,
                 M_T=None, N_T=None):
        self._A = _coefficient(A)
        self._B = _coefficient(B)
        self._R = _coefficient(R)
        A0 = np.atleast_2d(np.asarray(self._A(0.), dtype=float))
        B0 = np.atleast_2d(np.asarray(self._B(0.), dtype=float))
        self.n = A0.shape[0]
        self.control_dims = tuple(int(d) for d in control_dims)
        self.d = sum(self.control_dims)
        n, d = self.n, self.d
        self._H = _coefficient(np.zeros((n, n)) if H is None else H)
        self._b = _coefficient(np.zeros(n) if b is None else b)
        self._E = _coefficient(np.zeros((d, n)) if E is None else E)
        self._F = _coefficient(np.zeros(n) if F is None else F)
        self._m = _coefficient(np.zeros(d) if m is None else m)
        self.M_T = self._fixed(np.zeros((n, n)) if M_T is None else M_T, (n, n), 'M_T')
        self.N_T = self._fixed(np.zeros(n) if N_T is None else N_T, (n,), 'N_T')
        if A0.shape != (n, n):
            raise LQDataError('A must be square, got {}'.format(A0.shape))
        if B0.shape != (n, d):
            raise LQDataError('B has shape {}, expected ({}, {}) from control_dims {}'.format(
                B0.shape, n, d, self.control_dims))
        # shape pass at t = 0
        for name in ('A', 'B', 'R', 'H', 'b', 'E', 'F', 'm'):
            getattr(self, name)(0.)

    @staticmethod
    def _fixed(value, shape, name):
        if np.size(value) != np.prod(shape):
            raise LQDataError('{} must have shape {}, got {}'.format(name, shape, np.shape(value)))
        return np.array(value, dtype=float).reshape(shape)

    def _get(self, name, t, shape):
        arr = np.asarray(getattr(self, '_'+name)(t), dtype=float)
        if arr.size != int(np.prod(shape)):
            raise LQDataError('{}(t={}) has shape {}, expected {}'.format(name, t, arr.shape, shape))
        return arr.reshape(shape)

    def A(self, t):
        return self._get('A', t, (self.n, self.n))

    def B(self, t):
        return self._get('B', t, (self.n, self.d))

    def R(self, t):
        return self._get('R', t, (self.d, self.d))

    def H(self, t):
        return self._get('H', t, (self.n, self.n))

    def b(self, t):
        return self._get('b', t, (self.n,))

    def E(self, t):
        return self._get('E', t, (self.d, self.n))

    def F(self, t):
        return self._get('F', t, (self.n,))

    def m(self, t):
        return self._get('m', t, (self.d,))

    @property
    def offsets(self):
        return np.concatenate(([0], np.cumsum(self.control_dims))).astype(int)

    def check(self, nodes, atol=1.e-10):
        """ R symmetric positive definite, H and M_T symmetric positive semidefinite on the nodes

        Raises
        ---------
        LQDataError naming the coefficient and the time
        """
        def sym_eigs(M, name, t):
            if not np.allclose(M, M.T, rtol=0., atol=atol*(1.+np.max(np.abs(M)))):
                raise LQDataError('{} is not symmetric at t={}'.format(name, t))
            return eigvalsh(0.5*(M+M.T))

        for t in nodes:
            R = self.R(t)
            if sym_eigs(R, 'R', t)[0] <= 0.:
                raise LQDataError('R is not positive definite at t={}'.format(t))
            H = self.H(t)
            if sym_eigs(H, 'H', t)[0] < -atol*(1.+np.max(np.abs(H))):
                raise LQDataError('H is not positive semidefinite at t={}'.format(t))
        if sym_eigs(self.M_T, 'M_T', 'T')[0] < -atol*(1.+np.max(np.abs(self.M_T))):
            raise LQDataError('M_T is not positive semidefinite')


def lq_problem(lq, x0, horizon, info_specs=None, boxes=None, observations=None, name='lq'):
    """ TeamProblem of an LQData with analytic derivatives """
    return TeamProblem(
        x0, horizon, lq.control_dims,
        dynamics=lambda t, x, u: lq.A(t) @ x+lq.b(t)+lq.B(t) @ u,
        running_cost=lambda t, x, u: 0.5*u @ lq.R(t) @ u+0.5*x @ lq.H(t) @ x+x @ lq.F(t)
        + u @ lq.E(t) @ x+u @ lq.m(t),
        terminal_cost=lambda x: 0.5*x @ lq.M_T @ x+x @ lq.N_T,
        dynamics_jac_x=lambda t, x, u: lq.A(t),
        dynamics_jac_u=lambda t, x, u: lq.B(t),
        running_cost_grad_x=lambda t, x, u: lq.H(t) @ x+lq.F(t)+lq.E(t).T @ u,
        running_cost_grad_u=lambda t, x, u: 0.5*(lq.R(t)+lq.R(t).T) @ u+lq.E(t) @ x+lq.m(t),
        terminal_cost_grad=lambda x: 0.5*(lq.M_T+lq.M_T.T) @ x+lq.N_T,
        action_sets=boxes, observations=observations, info_structures=info_specs, name=name)


class GNFData:
    """ Team problem in generalized normal form

        f = drift(t, x) + gain(t, x) u
        l = 1/2 <u, R(t, x) u> + 1/2 lam(t, x) + <u, eta(t, x)>

    Parameters
    ---------------
    drift: callable
      (t, x) -> n-vector
    gain: callable
      (t, x) -> n x d matrix, columns grouped per DM
    R: callable
      (t, x) -> d x d symmetric matrix
    eta: callable
      (t, x) -> d-vector
    lam: callable
      (t, x) -> float
    terminal: callable
      x -> float
    control_dims: list(int)
      d_i per DM
    terminal_grad: callable, opt
      x -> n-vector (default: finite differences)
    dynamics_jac_x: callable, opt
      (t, x, u) -> n x n (default: finite differences)
    running_cost_grad_x: callable, opt
      (t, x, u) -> n-vector (default: finite differences)
    """

    def __init__(self, drift, gain, R, eta, lam, terminal, control_dims, terminal_grad=None,
                 dynamics_jac_x=None, running_cost_grad_x=None):
        self.drift = drift
        self.gain = gain
        self.R = R
        self.eta = eta
        self.lam = lam
        self.terminal = terminal
        self.control_dims = tuple(int(d) for d in control_dims)
        self.terminal_grad = terminal_grad
        self.dynamics_jac_x = dynamics_jac_x
        self.running_cost_grad_x = running_cost_grad_x

    @property
    def offsets(self):
        return np.concatenate(([0], np.cumsum(self.control_dims))).astype(int)


def gnf_problem(gnf, x0, horizon, info_specs=None, boxes=None, observations=None, name='gnf'):
    """ TeamProblem of a GNFData; H_u = gain'psi + R u + eta is analytic """
    return TeamProblem(
        x0, horizon, gnf.control_dims,
        dynamics=lambda t, x, u: np.asarray(gnf.drift(t, x), dtype=float)+np.asarray(gnf.gain(t, x)) @ u,
        running_cost=lambda t, x, u: 0.5*u @ np.asarray(gnf.R(t, x)) @ u+0.5*gnf.lam(t, x)+u @ gnf.eta(t, x),
        terminal_cost=gnf.terminal,
        dynamics_jac_x=gnf.dynamics_jac_x,
        dynamics_jac_u=lambda t, x, u: gnf.gain(t, x),
        running_cost_grad_x=gnf.running_cost_grad_x,
        running_cost_grad_u=lambda t, x, u: np.asarray(gnf.R(t, x)) @ u+gnf.eta(t, x),
        terminal_cost_grad=gnf.terminal_grad,
        action_sets=boxes, observations=observations, info_structures=info_specs, name=name)


def lq_as_gnf(lq):
    """ LQData in normal form: gain = B, eta = E x + m, lam = <x, H x> + 2 <x, F> """
    return GNFData(
        drift=lambda t, x: lq.A(t) @ x+lq.b(t),
        gain=lambda t, x: lq.B(t),
        R=lambda t, x: lq.R(t),
        eta=lambda t, x: lq.E(t) @ x+lq.m(t),
        lam=lambda t, x: x @ lq.H(t) @ x+2.*x @ lq.F(t),
        terminal=lambda x: 0.5*x @ lq.M_T @ x+x @ lq.N_T,
        control_dims=lq.control_dims,
        terminal_grad=lambda x: lq.M_T @ x+lq.N_T,
        dynamics_jac_x=lambda t, x, u: lq.A(t),
        running_cost_grad_x=lambda t, x, u: lq.H(t) @ x+lq.F(t)+lq.E(t).T @ u)


@dataclass
class AdjointRep:
    """ psi = Sigma x + beta along a state path """
    sigma: Trajectory
    beta: Trajectory

    def psi(self, x):
        """ Sigma(t_k) x(t_k) + beta(t_k) at every node """
        xv = x.values if isinstance(x, Trajectory) else np.asarray(x, dtype=float)
        vals = np.einsum('kij,kj->ki', self.sigma.values, xv)+self.beta.values
        return Trajectory(self.beta.grid, vals)


def solve_sigma(lq, g):
    """ Backward RK4 sweep of dSigma/dt = -(A'Sigma + Sigma A + H), Sigma(T) = M_T

    Parameters
    ---------------
    lq: LQData
      coefficients
    g: TimeGrid
      grid

    Returns
    ----------
    Trajectory of n x n matrices
    """
    h = g.h
    S = np.empty((len(g), lq.n, lq.n))
    S[-1] = lq.M_T

    def rhs(t, X):
        A = lq.A(t)
        return -(A.T @ X+X @ A+lq.H(t))

    for k in range(g.K-1, -1, -1):
        t1 = g.nodes[k+1]
        tm = g.nodes[k]+0.5*h
        Y = S[k+1]
        k1 = rhs(t1, Y)
        k2 = rhs(tm, Y-0.5*h*k1)
        k3 = rhs(tm, Y-0.5*h*k2)
        k4 = rhs(g.nodes[k], Y-h*k3)
        S[k] = Y-h/6.*(k1+2.*k2+2.*k3+k4)
    return g.trajectory(S)


def solve_beta(lq, sigma, u, g):
    """ Backward RK4 sweep of dbeta/dt = -(A'beta + Sigma b + F + Sigma B u + E'u), beta(T) = N_T

    Sigma and u at half steps are averages of the node values.

    Parameters
    ---------------
    lq: LQData
      coefficients
    sigma: Trajectory
      Sigma from solve_sigma on g
    u: StrategyProfile, Trajectory or array
      controls
    g: TimeGrid
      grid

    Returns
    ----------
    Trajectory of n-vectors
    """
    uv = control_values(u, g, lq.d)
    Sv = sigma.values
    h = g.h
    beta = np.empty((len(g), lq.n))
    beta[-1] = lq.N_T

    def rhs(t, S, v, y):
        return -(lq.A(t).T @ y+S @ lq.b(t)+lq.F(t)+S @ lq.B(t) @ v+lq.E(t).T @ v)

    for k in range(g.K-1, -1, -1):
        t1 = g.nodes[k+1]
        tm = g.nodes[k]+0.5*h
        Sm = 0.5*(Sv[k]+Sv[k+1])
        um = 0.5*(uv[k]+uv[k+1])
        y = beta[k+1]
        k1 = rhs(t1, Sv[k+1], uv[k+1], y)
        k2 = rhs(tm, Sm, um, y-0.5*h*k1)
        k3 = rhs(tm, Sm, um, y-0.5*h*k2)
        k4 = rhs(g.nodes[k], Sv[k], uv[k], y-h*k3)
        beta[k] = y-h/6.*(k1+2.*k2+2.*k3+k4)
    return g.trajectory(beta)


def gnf_strategy_update(gnf, grid, x, psi, u_prev):
    """ One Gauss-Seidel pass of the explicit normal-form strategy map

    For DM i with the other DMs at their latest values:
    identity subspaces solve R_ii u^i = -(eta^i + sum_{j!=i} R_ij u^j + gain^(i)'psi)
    node by node; finite subspaces solve the Galerkin system
    (int Phi'R_ii Phi dt) theta = -int Phi'(eta^i + ...) dt.

    Parameters
    ---------------
    gnf: GNFData
      normal-form coefficients
    grid: TimeGrid
      grid
    x: Trajectory
      state path
    psi: Trajectory
      adjoint path
    u_prev: StrategyProfile
      current profile (subspaces and boxes are kept)

    Returns
    ----------
    StrategyProfile

    Raises
    ---------
    LQSingularityError if a projected R_ii block is singular
    """
    nodes = grid.nodes
    off = gnf.offsets
    xv, pv = x.values, psi.values
    Rs = [np.asarray(gnf.R(t, xv[k]), dtype=float) for k, t in enumerate(nodes)]
    base = [np.asarray(gnf.eta(t, xv[k]), dtype=float)+np.asarray(gnf.gain(t, xv[k]), dtype=float).T @ pv[k]
            for k, t in enumerate(nodes)]
    u = np.concatenate([u_prev.block_values(i) for i in range(u_prev.N)], axis=1)
    coefs = list(u_prev.coefficients)
    for i, S in enumerate(u_prev.subspaces):
        sl = slice(off[i], off[i+1])
        rest = np.empty((len(nodes), gnf.control_dims[i]))
        for k in range(len(nodes)):
            coupling = Rs[k][sl, :] @ u[k]-Rs[k][sl, sl] @ u[k, sl]
            rest[k] = base[k][sl]+coupling
        if S.is_identity:
            vals = np.empty_like(rest)
            for k in range(len(nodes)):
                Rii = Rs[k][sl, sl]
                if eigvalsh(0.5*(Rii+Rii.T))[0] <= 0.:
                    raise LQSingularityError(i+1, k)
                try:
                    vals[k] = -solve(Rii, rest[k], assume_a='pos')
                except LinAlgError:
                    raise LQSingularityError(i+1, k)
            theta = vals
        else:
            Phi = S.basis
            lhs = np.einsum('k,kcm,kce,ken->mn', S.weights, Phi, np.array([R[sl, sl] for R in Rs]), Phi)
            rhs = -np.einsum('k,kcm,kc->m', S.weights, Phi, rest)
            ridge = 1.e-12*max(np.trace(lhs), 1.e-300)/lhs.shape[0]
            try:
                theta = solve(lhs+ridge*np.eye(lhs.shape[0]), rhs, assume_a='sym')
            except LinAlgError:
                raise LQSingularityError(i+1)
        coefs[i] = theta
        u[:, sl] = u_prev.boxes[i].clip(S.realize(theta))
    return u_prev.with_coefficients(coefs)


def _l2_gap(profile_a, profile_b):
    total = 0.
    for i, S in enumerate(profile_a.subspaces):
        diff = profile_a.block_values(i)-profile_b.block_values(i)
        total += S.inner(diff, diff)
    return np.sqrt(total)


def solve_decentralized_lq(lq, x0, info_specs, g, opts=None, observations=None, boxes=None, init=None):
    """ Damped fixed-point iteration of the decentralized LQ strategy map

    Each iteration sweeps x forward and psi backward for the current
    profile, refreshes observation-dependent subspaces along x, applies
    gnf_strategy_update and damps: u <- (1-gamma) u + gamma update.

    Parameters
    ---------------
    lq: LQData
      coefficients
    x0: array
      initial state
    info_specs: list(InfoSpec)
      one per DM
    g: TimeGrid
      grid
    opts: SolverOptions, opt
      tol (L2 gap between iterates), max_iter, damping, divergence_window
    observations: list(callable), opt
      per-DM observations (default: full state)
    boxes: list(Box), opt
      action sets (default: unbounded)
    init: StrategyProfile or array, opt
      starting controls (default: zero)

    Returns
    ----------
    (StrategyProfile, AdjointRep, SolveReport)
    """
    opts = opts if opts is not None else SolverOptions()
    lq.check(g.nodes)
    p = lq_problem(lq, x0, g.horizon, info_specs, boxes, observations)
    gnf = lq_as_gnf(lq)
    gamma = opts.damping
    model = ContinuousModel(p, g)
    profile = initial_profile(p, g, init)
    report = SolveReport()
    gaps = []
    growth = 0
    report.message = 'iteration cap reached'
    for it in range(1, opts.max_iter+1):
        x = integrate_forward(p, profile, g)
        if any(spec.observation_dependent for spec in p.info_structures):
            profile = profile.with_subspaces(info_subspaces(p, x, g))
            x = integrate_forward(p, profile, g)
        psi = integrate_adjoint(p, profile, x, g)
        update = gnf_strategy_update(gnf, g, x, psi, profile)
        damped = profile.with_coefficients([(1.-gamma)*a+gamma*b for a, b in
                                            zip(profile.coefficients, update.coefficients)])
        gap = _l2_gap(damped, profile)
        profile = damped
        report.iterations = it
        report.cost_history.append(model.cost(profile)[0])
        LOGGER.debug('fixed point iteration %d: gap=%.3e J=%.12g', it, gap, report.cost_history[-1])
        if gap <= opts.tol:
            report.converged = True
            report.message = 'iterate gap {:.3e} <= tol'.format(gap)
            break
        growth = growth+1 if gaps and gap > gaps[-1] else 0
        gaps.append(gap)
        if growth >= opts.divergence_window:
            report.message = 'fixed point diverging: gap grew for {} iterations, try a smaller damping than {}'.format(
                growth, gamma)
            LOGGER.warning(report.message)
            break

    sigma = solve_sigma(lq, g)
    rep = AdjointRep(sigma, solve_beta(lq, sigma, profile, g))
    rho, rs = stationarity_residual(p, profile, g)
    report.cost = model.cost(profile)[0]
    report.residual = rho
    report.dm_residuals = [float(np.max(residual_measure(r.values, profile.block_values(i), profile.boxes[i])))
                           for i, r in enumerate(rs)]
    LOGGER.info('decentralized LQ: J=%.12g residual=%.3e after %d iterations (%s)',
                report.cost, rho, report.iterations, report.message)
    attach_certificate(report, opts, lambda n, seed: sufficiency_certificate(p, profile, g, n, seed))
    return profile, rep, report
