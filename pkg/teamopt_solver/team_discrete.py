import logging
import numpy as np
from teamopt_solver.team_model import TeamProblem, Trajectory, ProblemStructureError, IntegrationDivergenceError
from teamopt_solver.team_integrate import control_values
from teamopt_solver.team_solver import (SolverOptions, StrategyProfile, info_subspaces, dm_residuals_of,
                                        descend_team, attach_certificate, certify)

LOGGER = logging.getLogger(__name__)


class StepGrid:
    """ Step indices k = 0..steps-1 of a discrete-time problem, unit weights

    Parameters
    ---------------
    steps: int
      number of transitions T (>= 1)
    """

    def __init__(self, steps):
        if int(steps) != steps or steps < 1:
            raise ProblemStructureError('steps must be a positive integer, got {}'.format(steps))
        self.steps = int(steps)
        self.nodes = np.arange(self.steps, dtype=float)
        self.weights = np.ones(self.steps)
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)

    def __len__(self):
        return self.steps

    def __repr__(self):
        return 'StepGrid(steps={})'.format(self.steps)

    @property
    def state_nodes(self):
        return np.arange(self.steps+1, dtype=float)


class DiscreteTeamProblem(TeamProblem):
    """ Discrete-time team problem

        x(k+1) = f(k, x(k), u_k),  x(0) = x0
        J(u) = sum_{k<T} l(k, x(k), u_k) + phi(x(T))

    Takes the TeamProblem arguments with an integer number of steps as horizon;
    callbacks receive the step index k in place of t.
    """

    def __init__(self, x0, steps, control_dims, dynamics, running_cost, terminal_cost, **kwargs):
        if int(steps) != steps or steps < 1:
            raise ProblemStructureError('steps must be a positive integer, got {}'.format(steps))
        super().__init__(x0, int(steps), control_dims, dynamics, running_cost, terminal_cost, **kwargs)

    @property
    def steps(self):
        return self.horizon

    @property
    def grid(self):
        return StepGrid(self.steps)


def discrete_forward(p, u):
    """ State recursion x(k+1) = f(k, x(k), u_k)

    Parameters
    ---------------
    p: DiscreteTeamProblem
      problem
    u: StrategyProfile, Trajectory or array
      controls u_0..u_{T-1}

    Returns
    ----------
    Trajectory of x(0..T) on the step indices

    Raises
    ---------
    IntegrationDivergenceError at the first non-finite transition
    """
    g = p.grid
    uv = control_values(u, g, p.d)
    x = np.empty((p.steps+1, p.n))
    x[0] = p.x0
    with np.errstate(over='ignore', invalid='ignore'):
        for k in range(p.steps):
            x[k+1] = p.f(k, x[k], uv[k])
            if not np.all(np.isfinite(x[k+1])):
                LOGGER.warning('transition %d produced a non-finite state', k)
                raise IntegrationDivergenceError(k, k)
    return Trajectory(g.state_nodes, x)


def discrete_adjoint(p, u, x):
    """ Backward recursion psi(k) = f_x(k)'psi(k+1) + l_x(k), psi(T) = phi_x(x(T))

    H at step k pairs f(k, .) with psi(k+1).

    Returns
    ----------
    Trajectory of psi(0..T)
    """
    g = p.grid
    uv = control_values(u, g, p.d)
    xv = x.values if isinstance(x, Trajectory) else np.asarray(x, dtype=float)
    psi = np.empty((p.steps+1, p.n))
    psi[-1] = p.phi_x(xv[-1])
    with np.errstate(over='ignore', invalid='ignore'):
        for k in range(p.steps-1, -1, -1):
            psi[k] = p.f_x(k, xv[k], uv[k]).T @ psi[k+1]+p.l_x(k, xv[k], uv[k])
            if not np.all(np.isfinite(psi[k])):
                raise IntegrationDivergenceError(k, k, 'adjoint')
    return Trajectory(g.state_nodes, psi)


def discrete_cost(p, u):
    """ J = sum_k l(k, x(k), u_k) + phi(x(T)) """
    return DiscreteModel(p).cost(u)[0]


def discrete_gradient(p, u):
    """ dJ/du_k = H_u(k) = f_u(k)'psi(k+1) + l_u(k), shape (T, d) """
    model = DiscreteModel(p)
    J, state = model.cost(u)
    return model.sweep(u, state)


class DiscreteModel:
    """ Cost, exact adjoint gradient and subspace refresh of a DiscreteTeamProblem """

    def __init__(self, p):
        self.p = p
        self.g = p.grid

    def cost(self, u):
        x = discrete_forward(self.p, u)
        uv = control_values(u, self.g, self.p.d)
        running = sum(self.p.l(k, x.values[k], uv[k]) for k in range(self.p.steps))
        return running+self.p.phi(x.values[-1]), {'x': x}

    def sweep(self, u, state):
        if 'grad_u' not in state:
            p = self.p
            x = state['x']
            uv = control_values(u, self.g, p.d)
            psi = discrete_adjoint(p, uv, x)
            state['psi'] = psi
            state['grad_u'] = np.array([p.f_u(k, x.values[k], uv[k]).T @ psi.values[k+1]+p.l_u(k, x.values[k], uv[k])
                                        for k in range(p.steps)])
        return state['grad_u']

    def gradient_blocks(self, u, state):
        return self.p.split(self.sweep(u, state))

    def refresh(self, profile, state):
        if not any(spec.observation_dependent for spec in self.p.info_structures):
            return profile
        return profile.with_subspaces(info_subspaces(self.p, state['x'], self.g))


def discrete_initial_profile(p, init=None):
    """ zero (clipped) controls, subspaces along the zero-control state """
    if isinstance(init, StrategyProfile):
        return init
    g = p.grid
    zero = p.clip(np.zeros((p.steps, p.d)))
    subspaces = info_subspaces(p, discrete_forward(p, zero), g)
    if init is None:
        return StrategyProfile.zeros(g, subspaces, p.action_sets)
    return StrategyProfile.from_controls(g, subspaces, p.action_sets, init)


def discrete_stationarity_residual(p, u):
    """ Violation of the projected stationarity condition on the step indices

    Parameters
    ---------------
    p: DiscreteTeamProblem
      problem
    u: StrategyProfile or array
      profile (arrays are projected on the default subspaces)

    Returns
    ----------
    rho: float
    r: list(Trajectory), projected H_{u^i} per DM
    """
    profile = discrete_initial_profile(p, u) if not isinstance(u, StrategyProfile) else u
    model = DiscreteModel(p)
    J, state = model.cost(profile)
    rhos, rs = dm_residuals_of(profile, model.gradient_blocks(profile, state))
    return max(rhos), [Trajectory(p.grid.nodes, r) for r in rs]


def discrete_solve_team(p, init=None, opts=None):
    """ Projected gradient on the discrete cost with the exact adjoint gradient

    Returns
    ----------
    (StrategyProfile, SolveReport)
    """
    opts = opts if opts is not None else SolverOptions()
    profile, report = descend_team(DiscreteModel(p), p, discrete_initial_profile(p, init), opts)
    attach_certificate(report, opts, lambda n, seed: discrete_sufficiency_certificate(p, profile, n, seed))
    return profile, report


def discrete_sufficiency_certificate(p, u, samples, seed=0):
    """ Sampled convexity of H(k, ., psi(k+1), .) and of phi, then random perturbation costs

    Returns
    ----------
    holds: bool
    evidence: dict
    """
    model = DiscreteModel(p)
    J, state = model.cost(u)
    x = state['x']
    psi = discrete_adjoint(p, u, x)
    return certify(p, model, u, J, p.grid.nodes, x.values[:-1], psi.values[1:], samples, seed)


def euler_transcription(p, steps):
    """ Explicit Euler transcription of a continuous TeamProblem

        x(k+1) = x(k) + h f(kh, x(k), u_k),  l_d = h l(kh, x(k), u_k),  h = T/steps

    Parameters
    ---------------
    p: TeamProblem
      continuous problem
    steps: int
      number of Euler steps

    Returns
    ----------
    DiscreteTeamProblem
    """
    h = p.horizon/steps
    eye = np.eye(p.n)

    def observe_on_steps(obs):
        def observe(k, x):
            return obs(k*h, Trajectory(x.grid*h, x.values))
        return observe

    return DiscreteTeamProblem(
        p.x0, steps, p.control_dims,
        dynamics=lambda k, x, u: x+h*p.f(k*h, x, u),
        running_cost=lambda k, x, u: h*p.l(k*h, x, u),
        terminal_cost=p.phi,
        dynamics_jac_x=lambda k, x, u: eye+h*p.f_x(k*h, x, u),
        dynamics_jac_u=lambda k, x, u: h*p.f_u(k*h, x, u),
        running_cost_grad_x=lambda k, x, u: h*p.l_x(k*h, x, u),
        running_cost_grad_u=lambda k, x, u: h*p.l_u(k*h, x, u),
        terminal_cost_grad=p.phi_x,
        action_sets=p.action_sets,
        observations=[observe_on_steps(obs) for obs in p.observations],
        info_structures=p.info_structures,
        name='{} (euler, {} steps)'.format(p.name, steps))


def discrete_lq_problem(lq, x0, steps, info_specs=None, boxes=None, observations=None, name='discrete lq'):
    """ Discrete LQ problem from LQData, coefficients evaluated at the step index

        x(k+1) = A x + b + B u
        l = 1/2 <u, R u> + 1/2 <x, H x> + <x, F> + <u, E x> + <u, m>
        phi = 1/2 <x, M_T x> + <x, N_T>
    """
    return DiscreteTeamProblem(
        x0, steps, lq.control_dims,
        dynamics=lambda k, x, u: lq.A(k) @ x+lq.b(k)+lq.B(k) @ u,
        running_cost=lambda k, x, u: 0.5*u @ lq.R(k) @ u+0.5*x @ lq.H(k) @ x+x @ lq.F(k)
        + u @ lq.E(k) @ x+u @ lq.m(k),
        terminal_cost=lambda x: 0.5*x @ lq.M_T @ x+x @ lq.N_T,
        dynamics_jac_x=lambda k, x, u: lq.A(k),
        dynamics_jac_u=lambda k, x, u: lq.B(k),
        running_cost_grad_x=lambda k, x, u: 0.5*(lq.H(k)+lq.H(k).T) @ x+lq.F(k)+lq.E(k).T @ u,
        running_cost_grad_u=lambda k, x, u: 0.5*(lq.R(k)+lq.R(k).T) @ u+lq.E(k) @ x+lq.m(k),
        terminal_cost_grad=lambda x: 0.5*(lq.M_T+lq.M_T.T) @ x+lq.N_T,
        action_sets=boxes, observations=observations, info_structures=info_specs, name=name)
