import numpy as np
import unittest
from numpy.testing import assert_allclose, assert_equal
from teamopt_solver.team_model import TeamProblem, ProblemStructureError
from teamopt_solver.team_integrate import TimeGrid
from teamopt_solver.team_hamiltonian import eval_hamiltonian
from teamopt_solver.team_solver import SolverOptions, solve_team
from teamopt_solver.team_lq import LQData
from teamopt_solver.team_discrete import (StepGrid, DiscreteTeamProblem, discrete_forward, discrete_adjoint,
                                          discrete_cost, discrete_gradient, discrete_stationarity_residual,
                                          discrete_solve_team, euler_transcription, discrete_lq_problem)


def p1d():
    """ x(1) = x(0) + u_0, l = u^2/2, phi = x^2/2, x(0) = 1, one step """
    return DiscreteTeamProblem([1.], 1, [1],
                               dynamics=lambda k, x, u: x+u,
                               running_cost=lambda k, x, u: 0.5*u @ u,
                               terminal_cost=lambda x: 0.5*x @ x,
                               dynamics_jac_x=lambda k, x, u: [[1.]],
                               dynamics_jac_u=lambda k, x, u: [[1.]],
                               running_cost_grad_x=lambda k, x, u: [0.],
                               running_cost_grad_u=lambda k, x, u: u,
                               terminal_cost_grad=lambda x: x)


def random_discrete(seed):
    """ nonlinear discrete instance with analytic derivatives, n <= 3, d <= 2 """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    dims = [1]*int(rng.integers(1, 3))
    d = len(dims)
    A = 0.3*rng.normal(size=(n, n))
    B = 0.5*rng.normal(size=(n, d))
    Q = np.diag(rng.uniform(0.1, 1., size=n))

    def f(k, x, u):
        return x+A @ np.tanh(x)+B @ u+0.02*k*np.sin(x)*np.sum(u)

    def f_x(k, x, u):
        return np.eye(n)+A*(1.-np.tanh(x)**2)[np.newaxis, :]+np.diag(0.02*k*np.cos(x)*np.sum(u))

    def f_u(k, x, u):
        return B+0.02*k*np.sin(x)[:, np.newaxis]*np.ones((1, d))

    return DiscreteTeamProblem(rng.normal(size=n), 10, dims, f,
                               running_cost=lambda k, x, u: 0.5*u @ u+0.5*x @ Q @ x+0.2*np.sum(u**4),
                               terminal_cost=lambda x: 0.5*x @ x+0.1*np.sum(np.cos(x)),
                               dynamics_jac_x=f_x, dynamics_jac_u=f_u,
                               running_cost_grad_x=lambda k, x, u: Q @ x,
                               running_cost_grad_u=lambda k, x, u: u+0.8*u**3,
                               terminal_cost_grad=lambda x: x-0.1*np.sin(x))


def linear_growth():
    """ dx = x + u, l = u^2/2, phi = x^2/2 """
    return TeamProblem([1.], 1., [1],
                       dynamics=lambda t, x, u: x+u,
                       running_cost=lambda t, x, u: 0.5*u @ u,
                       terminal_cost=lambda x: 0.5*x @ x,
                       dynamics_jac_x=lambda t, x, u: [[1.]],
                       dynamics_jac_u=lambda t, x, u: [[1.]],
                       running_cost_grad_x=lambda t, x, u: [0.],
                       running_cost_grad_u=lambda t, x, u: u,
                       terminal_cost_grad=lambda x: x)


class TestTeamDiscrete(unittest.TestCase):

    def testForwardExamples(self):
        p = DiscreteTeamProblem([1.], 3, [1], lambda k, x, u: x+u, lambda k, x, u: 0., lambda x: 0.)
        assert_allclose(discrete_forward(p, np.zeros((3, 1))).values[:, 0], [1., 1., 1., 1.])
        p = DiscreteTeamProblem([1.], 4, [1], lambda k, x, u: 2.*x, lambda k, x, u: 0., lambda x: 0.)
        assert_equal(discrete_forward(p, np.zeros((4, 1))).values[-1, 0], 16.)
        x = discrete_forward(p1d(), np.array([[-0.5]]))
        assert_allclose(x.values[:, 0], [1., 0.5])

    def testAdjointExamples(self):
        p = p1d()
        u = np.array([[-0.5]])
        psi = discrete_adjoint(p, u, discrete_forward(p, u))
        assert_allclose(psi.values[:, 0], [0.5, 0.5])

        p = DiscreteTeamProblem([1., 2.], 3, [1], lambda k, x, u: x, lambda k, x, u: 0., lambda x: x[0]-2.*x[1],
                                dynamics_jac_x=lambda k, x, u: np.eye(2), terminal_cost_grad=lambda x: [1., -2.])
        u = np.zeros((3, 1))
        psi = discrete_adjoint(p, u, discrete_forward(p, u))
        assert_allclose(psi.values, np.tile([1., -2.], (4, 1)), atol=1.e-14)

        p = DiscreteTeamProblem([1.], 3, [1], lambda k, x, u: 0.5*x+u, lambda k, x, u: 0., lambda x: 0.)
        psi = discrete_adjoint(p, u, discrete_forward(p, u))
        assert_allclose(psi.values[-1], [0.], atol=0.)

    def testResidualExamples(self):
        p = p1d()
        rho, rs = discrete_stationarity_residual(p, np.array([[-0.5]]))
        assert_equal(rho, 0.)
        rho, rs = discrete_stationarity_residual(p, np.array([[0.]]))
        assert(abs(rho-1.) <= 1.e-14)
        p = DiscreteTeamProblem([1.], 2, [1], lambda k, x, u: 0.5*x, lambda k, x, u: x @ x, lambda x: x @ x)
        rho, rs = discrete_stationarity_residual(p, np.array([[3.], [-1.]]))
        assert_equal(rho, 0.)

    def testSolveExamples(self):
        profile, report = discrete_solve_team(p1d())
        assert(report.converged)
        assert_allclose(profile.controls.values, [[-0.5]], atol=1.e-6)
        assert(abs(report.cost-0.25) <= 1.e-9)
        assert(report.certificate['holds'])
        assert_equal(report.certificate['convexity_failures'], 0)
        assert(report.certificate['min_perturbed_cost'] >= 0.25-1.e-9)

        p = DiscreteTeamProblem([1.], 2, [1], lambda k, x, u: x+u, lambda k, x, u: 0., lambda x: 0.)
        init = np.array([[0.2], [-0.4]])
        profile, report = discrete_solve_team(p, init)
        assert_equal(report.iterations, 0)
        assert_allclose(profile.controls.values, init)

    def testExactGradient(self):
        """ adjoint gradient against central differences of the discrete cost """
        eps = 1.e-5
        for seed in range(20):
            p = random_discrete(seed)
            rng = np.random.default_rng(200+seed)
            u = 0.5*rng.normal(size=(p.steps, p.d))
            grad = discrete_gradient(p, u)
            assert_equal(grad.shape, (p.steps, p.d))
            fd = np.empty_like(grad)
            for k in range(p.steps):
                for c in range(p.d):
                    du = np.zeros_like(u)
                    du[k, c] = eps
                    fd[k, c] = (discrete_cost(p, u+du)-discrete_cost(p, u-du))/(2.*eps)
            assert(np.linalg.norm(fd-grad) <= 1.e-8*(1.+np.linalg.norm(grad)))

    def testOneStepAheadPairing(self):
        """ H at step k only sees psi(k+1) """
        p = random_discrete(3)
        u = np.zeros((p.steps, p.d))
        x = discrete_forward(p, u)
        psi = discrete_adjoint(p, u, x)
        grad = discrete_gradient(p, u)
        for k in range(p.steps):
            H = eval_hamiltonian(p, k, x.values[k], psi.values[k+1], u[k])
            assert_allclose(H.grad_u, grad[k], rtol=1.e-12, atol=1.e-12)

    def testEulerConsistency(self):
        """ Euler transcriptions approach the continuous optimum at first order """
        g = TimeGrid(200, 1.)
        cont, creport = solve_team(linear_growth(), None, g, SolverOptions(tol=1.e-9))
        gaps = []
        for steps in (50, 100):
            profile, report = discrete_solve_team(euler_transcription(linear_growth(), steps), None,
                                                  SolverOptions(tol=1.e-11, max_iter=3000))
            gaps.append(abs(report.cost-creport.cost))
        assert(gaps[1] <= 1.e-2)
        assert(1.5 <= gaps[0]/gaps[1] <= 2.5)

    def testEulerP1(self):
        cont = TeamProblem([1.], 1., [1],
                           dynamics=lambda t, x, u: u,
                           running_cost=lambda t, x, u: 0.5*u @ u,
                           terminal_cost=lambda x: 0.5*x @ x)
        profile, report = discrete_solve_team(euler_transcription(cont, 100), None, SolverOptions(tol=1.e-8))
        assert(abs(report.cost-0.25) <= 1.e-3)

    def testDiscreteLQ(self):
        lq = LQData(A=[[1.]], B=[[1.]], R=[[1.]], control_dims=[1], M_T=[[1.]])
        p = discrete_lq_problem(lq, [1.], 1)
        profile, report = discrete_solve_team(p)
        assert(abs(report.cost-0.25) <= 1.e-9)
        assert_equal(p.steps, 1)

    def testStepGrid(self):
        g = StepGrid(3)
        assert_allclose(g.nodes, [0., 1., 2.])
        assert_allclose(g.weights, 1.)
        assert_allclose(g.state_nodes, [0., 1., 2., 3.])
        with self.assertRaises(ProblemStructureError):
            StepGrid(0)
        with self.assertRaises(ProblemStructureError):
            DiscreteTeamProblem([1.], 1.5, [1], lambda k, x, u: x, lambda k, x, u: 0., lambda x: 0.)


if __name__ == "__main__":
    unittest.main(verbosity=5)
