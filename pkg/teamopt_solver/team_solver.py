import logging
from dataclasses import dataclass, field, fields, asdict
import numpy as np
from teamopt_solver.team_model import Trajectory, IntegrationDivergenceError, ProblemStructureError
from teamopt_solver.team_integrate import (integrate_forward, integrate_adjoint, integrate_cost_gradient,
                                           control_values)
from teamopt_solver.team_hamiltonian import hamiltonian_value, grad_u_on_grid
from teamopt_solver.team_infostruct import build_subspace, observation_path

LOGGER = logging.getLogger(__name__)


@dataclass
class SolverOptions:
    """ Tunables shared by the iterative solvers """
    tol: float = 1.e-5
    cost_tol: float = 1.e-8
    max_iter: int = 5000
    inner_iter: int = None
    step_init: float = 1.
    step_max: float = 1.e8
    armijo: float = 1.e-4
    backtrack: float = 0.5
    min_step: float = 1.e-14
    damping: float = 0.5
    divergence_window: int = 50
    seed: int = 0
    certificate_samples: int = 20

    @classmethod
    def from_dict(cls, values):
        """ options from a (possibly partial) dict; unknown keys raise KeyError """
        known = {f.name for f in fields(cls)}
        for key in values:
            if key not in known:
                raise KeyError(key)
        return cls(**{k: v for k, v in values.items() if v is not None})

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError('tol must be positive, got {}'.format(self.tol))
        if int(self.max_iter) != self.max_iter or self.max_iter < 0:
            raise ValueError('max_iter must be a non-negative integer, got {}'.format(self.max_iter))
        if not 0. < self.damping <= 1.:
            raise ValueError('damping must lie in (0, 1], got {}'.format(self.damping))
        if not 0. < self.backtrack < 1.:
            raise ValueError('backtrack must lie in (0, 1), got {}'.format(self.backtrack))
        if self.inner_iter is None:
            self.inner_iter = self.max_iter


@dataclass
class SolveReport:
    """ Outcome of an iterative solve """
    iterations: int = 0
    cost: float = np.nan
    residual: float = np.nan
    cost_history: list = field(default_factory=list)
    converged: bool = False
    message: str = ''
    cycles: int = 0
    dm_residuals: list = field(default_factory=list)
    certificate: dict = None

    def to_dict(self):
        out = asdict(self)
        out['cost'] = float(self.cost)
        out['residual'] = float(self.residual)
        out['cost_history'] = [float(c) for c in self.cost_history]
        out['dm_residuals'] = [float(r) for r in self.dm_residuals]
        return out


class StrategyProfile:
    """ Joint strategy of the N decision makers on a grid

    Realized controls are clip(Phi^i theta^i) per DM; for identity
    (open-loop) subspaces the coefficients are the node values and are
    clipped themselves.

    Parameters
    ---------------
    grid: TimeGrid or StepGrid
      grid of the controls
    subspaces: list(InfoSubspace)
      one per DM
    coefficients: list(array)
      theta^i, one per DM
    boxes: list(Box)
      action sets
    """

    def __init__(self, grid, subspaces, coefficients, boxes):
        if not len(subspaces) == len(coefficients) == len(boxes):
            raise ProblemStructureError('profile needs one subspace, coefficient vector and box per DM')
        self._grid = grid
        self._subspaces = tuple(subspaces)
        self._boxes = tuple(boxes)
        coefs = []
        for S, theta, box in zip(self._subspaces, coefficients, self._boxes):
            theta = np.array(theta, dtype=float).reshape(S.coefficient_shape())
            if S.is_identity:
                theta = box.clip(theta)
            coefs.append(theta)
        self._coefficients = tuple(coefs)
        self._blocks = None
        self._controls = None

    @classmethod
    def zeros(cls, grid, subspaces, boxes):
        return cls(grid, subspaces, [np.zeros(S.coefficient_shape()) for S in subspaces], boxes)

    @classmethod
    def from_controls(cls, grid, subspaces, boxes, u):
        """ profile whose DM coefficients project the given (K+1, d) controls """
        uv = control_values(u, grid)
        offsets = np.concatenate(([0], np.cumsum([S.control_dim for S in subspaces])))
        coefs = [S.coefficients(uv[:, offsets[i]:offsets[i+1]]) for i, S in enumerate(subspaces)]
        return cls(grid, subspaces, coefs, boxes)

    @property
    def grid(self):
        return self._grid

    @property
    def subspaces(self):
        return self._subspaces

    @property
    def coefficients(self):
        return self._coefficients

    @property
    def boxes(self):
        return self._boxes

    @property
    def N(self):
        return len(self._subspaces)

    def raw_values(self, i):
        """ Phi^i theta^i before clipping """
        return self._subspaces[i].realize(self._coefficients[i])

    def block_values(self, i):
        """ realized (clipped) controls of DM i, shape (K+1, d_i) """
        if self._blocks is None:
            self._blocks = [box.clip(self.raw_values(j)) for j, box in enumerate(self._boxes)]
        return self._blocks[i]

    def active_mask(self, i):
        """ True where the box of DM i clips the basis realization """
        raw = self.raw_values(i)
        box = self._boxes[i]
        return (raw < box.lower) | (raw > box.upper)

    @property
    def controls(self):
        """ stacked realized controls as a Trajectory """
        if self._controls is None:
            vals = np.concatenate([self.block_values(i) for i in range(self.N)], axis=1)
            self._controls = Trajectory(self._grid.nodes, vals)
        return self._controls

    def with_coefficients(self, coefficients):
        return StrategyProfile(self._grid, self._subspaces, coefficients, self._boxes)

    def with_subspaces(self, subspaces):
        return StrategyProfile(self._grid, subspaces, self._coefficients, self._boxes)

    def moved(self, directions, alpha):
        """ profile with theta^i + alpha d^i for every DM with a direction (None: frozen) """
        coefs = [theta if d is None else theta+alpha*d
                 for theta, d in zip(self._coefficients, directions)]
        return self.with_coefficients(coefs)


def info_subspaces(p, x, grid):
    """ per-DM subspaces on grid, observations read along the state path x """
    out = []
    for i, spec in enumerate(p.info_structures):
        y = observation_path(p.observations[i], x, grid.nodes) if spec.observation_dependent else None
        out.append(build_subspace(spec, y, grid, p.control_dims[i]))
    return out


def _needs_refresh(p):
    return any(spec.observation_dependent for spec in p.info_structures)


def initial_profile(p, g, init=None):
    """ Default starting profile

    Subspaces are built along the state of the zero (clipped) control;
    coefficients are zero, or project init when controls are given.
    """
    if isinstance(init, StrategyProfile):
        return init
    zero = p.clip(np.zeros((len(g), p.d)))
    x = integrate_forward(p, zero, g)
    subspaces = info_subspaces(p, x, g)
    if init is None:
        return StrategyProfile.zeros(g, subspaces, p.action_sets)
    return StrategyProfile.from_controls(g, subspaces, p.action_sets, init)


def evaluate_cost(p, u, g):
    """ Pay-off J(u) = int l dt + phi(x(T)) with trapezoid quadrature

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
    float
    """
    return ContinuousModel(p, g).cost(u)[0]


def residual_measure(r, u, box):
    """ Per-node violation of the projected variational inequality

    Parameters
    ---------------
    r: array
      projected gradient of one DM, shape (K+1, d_i)
    u: array
      realized controls of the DM, shape (K+1, d_i)
    box: Box
      action set

    Returns
    ----------
    array of K+1 non-negative violations
    """
    lo, up = box.lower, box.upper
    both = np.isfinite(lo) & np.isfinite(up)
    free = ~np.isfinite(lo) & ~np.isfinite(up)
    low_only = np.isfinite(lo) & ~np.isfinite(up)
    up_only = ~np.isfinite(lo) & np.isfinite(up)
    out = np.zeros(r.shape[0])
    if np.any(both):
        # worst box vertex: sum over coordinates of the worst end
        rb = r[:, both]
        ub = u[:, both]
        vertex = np.sum(np.maximum(rb*(ub-lo[both]), rb*(ub-up[both])), axis=1)
        out = np.maximum(out, vertex)
    if np.any(free):
        out = np.maximum(out, np.linalg.norm(r[:, free], axis=1))
    if np.any(low_only):
        rl = r[:, low_only]
        out = np.maximum(out, np.max(np.maximum(rl*(u[:, low_only]-lo[low_only]), -rl), axis=1))
    if np.any(up_only):
        ru = r[:, up_only]
        out = np.maximum(out, np.max(np.maximum(ru, ru*(u[:, up_only]-up[up_only])), axis=1))
    return np.maximum(out, 0.)


class ContinuousModel:
    """ Cost, adjoint gradient and residual of a TeamProblem on a TimeGrid """

    def __init__(self, p, g):
        self.p = p
        self.g = g

    def cost(self, u):
        x = integrate_forward(self.p, u, self.g)
        uv = control_values(u, self.g, self.p.d)
        running = np.array([self.p.l(t, x.values[k], uv[k]) for k, t in enumerate(self.g.nodes)])
        J = float(self.g.integral(running))+self.p.phi(x.values[-1])
        return J, {'x': x}

    def sweep(self, u, state):
        """ H_u density of the discretized cost for the state of u (stored in state) """
        if 'grad_u' not in state:
            state['grad_u'] = integrate_cost_gradient(self.p, u, state['x'], self.g)
        return state['grad_u']

    def gradient_blocks(self, u, state):
        return self.p.split(self.sweep(u, state))

    def refresh(self, profile, state):
        if not _needs_refresh(self.p):
            return profile
        return profile.with_subspaces(info_subspaces(self.p, state['x'], self.g))


def dm_residuals_of(profile, grad_blocks):
    rs, rhos = [], []
    for i, S in enumerate(profile.subspaces):
        r = S.project(grad_blocks[i])
        rs.append(r)
        rhos.append(float(np.max(residual_measure(r, profile.block_values(i), profile.boxes[i]))))
    return rhos, rs


def stationarity_residual(p, u, g):
    """ Grid violation of the projected necessary condition

    Parameters
    ---------------
    p: TeamProblem
      problem
    u: StrategyProfile
      profile (its subspaces define the projections)
    g: TimeGrid
      grid

    Returns
    ----------
    rho: float
      max over DMs and nodes of the violation
    r: list(Trajectory)
      projected Hamiltonian gradient Pi_i(H_{u^i}) per DM
    """
    model = ContinuousModel(p, g)
    J, state = model.cost(u)
    rhos, rs = dm_residuals_of(u, model.gradient_blocks(u, state))
    return max(rhos), [Trajectory(g.nodes, r) for r in rs]


def adjoint_residual(p, u, g):
    """ Projected residual of H_u along the RK4 adjoint of the continuous problem

    Same measure as stationarity_residual, with H_u(t, x, psi, u) from
    integrate_adjoint in place of the gradient of the discretized cost.
    The two agree up to the discretization error of the adjoint sweep.

    Returns
    ----------
    rho: float
    """
    x = integrate_forward(p, u, g)
    psi = integrate_adjoint(p, u, x, g)
    Hu = grad_u_on_grid(p, g.nodes, x.values, psi.values, control_values(u, g, p.d))
    rhos, rs = dm_residuals_of(u, p.split(Hu))
    return max(rhos)


def _masked(profile, i, grad):
    if profile.subspaces[i].is_identity:
        return grad
    return np.where(profile.active_mask(i), 0., grad)


def gradient_coefficients(p, u, g):
    """ dJ/dtheta^i = int Phi^i' H_{u^i} dt for every DM (zero where the box clips) """
    model = ContinuousModel(p, g)
    J, state = model.cost(u)
    blocks = model.gradient_blocks(u, state)
    return [S.moments(_masked(u, i, blocks[i])) for i, S in enumerate(u.subspaces)]


class ProjectedGradient:
    """ Projected-gradient descent with Armijo backtracking over a block of DMs

    The model supplies cost(profile) -> (J, state), gradient_blocks(profile, state)
    and refresh(profile, state).

    Parameters
    ---------------
    model: object
      ContinuousModel or DiscreteModel
    opts: SolverOptions
      tunables
    """

    def __init__(self, model, opts):
        self.model = model
        self.opts = opts

    def evaluate(self, profile):
        J, state = self.model.cost(profile)
        return J, state

    def refresh(self, profile, J, state, history):
        """ re-read observation-dependent subspaces along the current state

        The refreshed subspaces are tried with the current coefficients, then
        with the projection of the current controls; the first candidate that
        does not raise J replaces the profile and the last history entry.

        Returns
        ----------
        (profile, J, state, accepted)
        """
        candidate = self.model.refresh(profile, state)
        if candidate is profile:
            return profile, J, state, False
        projected = StrategyProfile.from_controls(profile.grid, candidate.subspaces, profile.boxes,
                                                  profile.controls)
        for trial in (candidate, projected):
            try:
                Jr, st = self.evaluate(trial)
            except IntegrationDivergenceError:
                continue
            if Jr <= J:
                if history:
                    history[-1] = Jr
                return trial, Jr, st, True
        LOGGER.debug('subspace refresh rejected: J would rise above %.12g', J)
        return profile, J, state, False

    def run(self, profile, blocks, max_iter, J=None, state=None, history=None, refresh=True):
        """ descend on the DMs listed in blocks until their residual is below tol

        With refresh, observation-dependent subspaces are re-read after every
        accepted step (see refresh).

        Returns
        ----------
        (profile, J, state, iterations, converged, message)
        """
        opts = self.opts
        if J is None:
            J, state = self.evaluate(profile)
        history = history if history is not None else [J]
        alpha = opts.step_init
        first = True
        it = 0
        while True:
            grads = self.model.gradient_blocks(profile, state)
            rhos, rs = dm_residuals_of(profile, grads)
            rho = max(rhos[i] for i in blocks)
            if rho <= opts.tol:
                return profile, J, state, it, True, 'residual {:.3e} <= tol'.format(rho)
            if it >= max_iter:
                return profile, J, state, it, False, 'iteration cap reached (residual {:.3e})'.format(rho)

            dirs = [None]*profile.N
            duals = [None]*profile.N
            for i in blocks:
                S = profile.subspaces[i]
                gi = _masked(profile, i, grads[i])
                duals[i] = S.moments(gi)
                dirs[i] = -S.coefficients(gi)

            alpha = opts.step_init if first else min(opts.step_max, 2.*alpha)
            first = False
            accepted = None
            while alpha >= opts.min_step:
                trial = profile.moved(dirs, alpha)
                slope = sum(float(np.sum(duals[i]*(trial.coefficients[i]-profile.coefficients[i])))
                            for i in blocks)
                if slope >= 0.:
                    break
                try:
                    Jt, st = self.evaluate(trial)
                except IntegrationDivergenceError:
                    LOGGER.debug('trial step alpha=%g diverged, backtracking', alpha)
                    alpha *= opts.backtrack
                    continue
                if Jt <= J+opts.armijo*slope:
                    accepted = (trial, Jt, st)
                    break
                alpha *= opts.backtrack
            if accepted is None:
                return profile, J, state, it, False, \
                    'line search stalled (residual {:.3e})'.format(rho)

            it += 1
            profile, J, state = accepted
            history.append(J)
            if refresh:
                profile, J, state, _ = self.refresh(profile, J, state, history)
            LOGGER.debug('iteration %d: J=%.12g residual=%.3e step=%g', it, J, rho, alpha)


def _finish(model, profile, J, state, report):
    grads = model.gradient_blocks(profile, state)
    rhos, rs = dm_residuals_of(profile, grads)
    report.cost = J
    report.dm_residuals = rhos
    report.residual = max(rhos)
    return report


def solve_team(p, init, g, opts=None):
    """ Team solver: projected gradient on all DMs jointly

    Parameters
    ---------------
    p: TeamProblem
      problem
    init: StrategyProfile, array or None
      starting profile (None: zero control)
    g: TimeGrid
      grid
    opts: SolverOptions, opt
      tunables (default: SolverOptions())

    Returns
    ----------
    (StrategyProfile, SolveReport)
    """
    opts = opts if opts is not None else SolverOptions()
    model = ContinuousModel(p, g)
    profile, report = descend_team(model, p, initial_profile(p, g, init), opts)
    attach_certificate(report, opts, lambda n, seed: sufficiency_certificate(p, profile, g, n, seed))
    return profile, report


def attach_certificate(report, opts, certificate):
    """ report.certificate from certificate(samples, seed) unless certificate_samples is 0 """
    if opts.certificate_samples > 0:
        holds, evidence = certificate(opts.certificate_samples, opts.seed)
        report.certificate = dict(evidence, holds=holds)
    return report


def descend_team(model, p, profile, opts):
    engine = ProjectedGradient(model, opts)
    J, state = engine.evaluate(profile)
    history = [J]
    profile, J, state, it, ok, msg = engine.run(profile, list(range(profile.N)), opts.max_iter,
                                                J, state, history)
    report = SolveReport(iterations=it, cost_history=history, converged=ok, message=msg, cycles=1)
    _finish(model, profile, J, state, report)
    LOGGER.info('team solve: J=%.12g residual=%.3e after %d iterations (%s)',
                report.cost, report.residual, it, msg)
    return profile, report


def solve_pbp(p, init, g, opts=None):
    """ Person-by-person solver: cyclic block descent, one DM at a time

    Each DM descends with the others frozen until its own residual is
    below tol; observation-dependent subspaces are re-read once per cycle.
    Cycles repeat until the joint residual is below tol. A cycle stalls when
    no DM moves and no refresh lowers J, or when J drops by less than
    cost_tol without lowering the joint residual.

    Parameters
    ---------------
    p: TeamProblem
      problem
    init: StrategyProfile, array or None
      starting profile
    g: TimeGrid
      grid
    opts: SolverOptions, opt
      tunables

    Returns
    ----------
    (StrategyProfile, SolveReport)
    """
    opts = opts if opts is not None else SolverOptions()
    model = ContinuousModel(p, g)
    profile = initial_profile(p, g, init)
    engine = ProjectedGradient(model, opts)
    J, state = engine.evaluate(profile)
    history = [J]
    report = SolveReport(cost_history=history)
    total = 0
    rho_prev = np.inf
    while True:
        grads = model.gradient_blocks(profile, state)
        rhos, rs = dm_residuals_of(profile, grads)
        if max(rhos) <= opts.tol:
            report.converged = True
            report.message = 'residual {:.3e} <= tol after {} cycles'.format(max(rhos), report.cycles)
            break
        if total >= opts.max_iter:
            report.message = 'iteration cap reached (residual {:.3e})'.format(max(rhos))
            break
        if max(rhos) < rho_prev:
            rho_prev, J_start = max(rhos), J
        elif J_start-J < opts.cost_tol*(1.+abs(J)):
            report.message = 'cycle stalled (residual {:.3e})'.format(max(rhos))
            break
        report.cycles += 1
        J_cycle = J
        moved = False
        for i in range(profile.N):
            budget = min(opts.inner_iter, opts.max_iter-total)
            profile, J, state, it, ok, msg = engine.run(profile, [i], budget, J, state, history, refresh=False)
            total += it
            moved = moved or it > 0
            LOGGER.debug('cycle %d, DM %d: %d steps, J=%.12g (%s)', report.cycles, i+1, it, J, msg)
        profile, J, state, refreshed = engine.refresh(profile, J, state, history)
        if not moved and not (refreshed and J < J_cycle):
            rhos, rs = dm_residuals_of(profile, model.gradient_blocks(profile, state))
            if max(rhos) > opts.tol:
                report.message = 'cycle stalled (residual {:.3e})'.format(max(rhos))
                break
    report.iterations = total
    _finish(model, profile, J, state, report)
    LOGGER.info('pbp solve: J=%.12g residual=%.3e after %d cycles', report.cost, report.residual, report.cycles)
    attach_certificate(report, opts, lambda n, seed: sufficiency_certificate(p, profile, g, n, seed))
    return profile, report


def sufficiency_certificate(p, u, g, samples, seed=0):
    """ Sampled evidence that the necessary conditions are also sufficient at u

    Checks midpoint convexity of H(t, ., psi(t), .) in (x, u) along the
    adjoint of u and of the terminal cost; if both pass, compares J(u)
    with the cost of random admissible perturbations.

    Parameters
    ---------------
    p: TeamProblem
      problem
    u: StrategyProfile
      candidate optimum
    g: TimeGrid
      grid
    samples: int
      number of sample points (and of perturbations)
    seed: int, opt
      sampling seed (default: 0)

    Returns
    ----------
    holds: bool
    evidence: dict
    """
    model = ContinuousModel(p, g)
    J, state = model.cost(u)
    psi = integrate_adjoint(p, u, state['x'], g)
    return certify(p, model, u, J, g.nodes, state['x'].values, psi.values, samples, seed)


def certify(p, model, u, J, nodes, x, psi, samples, seed=0):
    """ Midpoint convexity of H at sampled nodes, then random perturbation costs

    Parameters
    ---------------
    p: TeamProblem
      problem
    model: ContinuousModel or DiscreteModel
      supplies cost(profile)
    u: StrategyProfile
      candidate optimum
    J: float
      cost of u
    nodes: array
      times (or steps) where H is sampled
    x, psi: array
      state and adjoint paired with nodes (one row per node)
    samples: int
      number of sample points (and of perturbations)
    seed: int, opt
      sampling seed (default: 0)

    Returns
    ----------
    holds: bool
    evidence: dict
    """
    rng = np.random.default_rng(seed)
    uv = control_values(u, u.grid, p.d)

    def mid_violation(fa, fb, fm):
        return fm-0.5*(fa+fb) > 1.e-9*(1.+abs(fa)+abs(fb))

    convexity_failures = 0
    for s in range(samples):
        k = int(rng.integers(0, len(nodes)))
        t = nodes[k]
        scale = 1.+np.linalg.norm(x[k])
        xa, xb = x[k]+scale*rng.normal(size=p.n), x[k]+scale*rng.normal(size=p.n)
        ua = p.clip(uv[k]+(1.+np.linalg.norm(uv[k]))*rng.normal(size=p.d))
        ub = p.clip(uv[k]+(1.+np.linalg.norm(uv[k]))*rng.normal(size=p.d))
        Ha = hamiltonian_value(p, t, xa, psi[k], ua)
        Hb = hamiltonian_value(p, t, xb, psi[k], ub)
        Hm = hamiltonian_value(p, t, 0.5*(xa+xb), psi[k], 0.5*(ua+ub))
        if mid_violation(Ha, Hb, Hm):
            convexity_failures += 1
        if mid_violation(p.phi(xa), p.phi(xb), p.phi(0.5*(xa+xb))):
            convexity_failures += 1

    evidence = {'cost': float(J), 'samples': int(samples),
                'convexity_failures': int(convexity_failures),
                'perturbations': 0, 'min_perturbed_cost': None}
    if convexity_failures > 0:
        LOGGER.info('sufficiency: %d midpoint convexity failures', convexity_failures)
        return False, evidence

    costs = []
    for s in range(samples):
        dirs = [rng.normal(size=theta.shape)*0.1*(1.+np.max(np.abs(theta), initial=0.))
                for theta in u.coefficients]
        try:
            costs.append(model.cost(u.moved(dirs, 1.))[0])
        except IntegrationDivergenceError:
            continue
    evidence['perturbations'] = len(costs)
    evidence['min_perturbed_cost'] = float(min(costs)) if costs else None
    holds = all(c >= J-1.e-6*(1.+abs(J)) for c in costs)
    return holds, evidence
