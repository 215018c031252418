import numpy as np
import unittest
from numpy.testing import assert_allclose
from teamopt_solver.team_model import TeamProblem, IntegrationDivergenceError
from teamopt_solver.team_integrate import (TimeGrid, integrate_forward, integrate_adjoint,
                                           integrate_variational, integrate_cost_gradient)
from teamopt_solver.team_solver import evaluate_cost


def p1():
    return TeamProblem([1.], 1., [1],
                       dynamics=lambda t, x, u: u,
                       running_cost=lambda t, x, u: 0.5*u @ u,
                       terminal_cost=lambda x: 0.5*x @ x,
                       dynamics_jac_x=lambda t, x, u: [[0.]],
                       dynamics_jac_u=lambda t, x, u: [[1.]],
                       running_cost_grad_x=lambda t, x, u: [0.],
                       running_cost_grad_u=lambda t, x, u: u,
                       terminal_cost_grad=lambda x: x)


def growth(x0=1., terminal=lambda x: 0., terminal_grad=lambda x: [0.]):
    """ dx = x, no control effect """
    return TeamProblem([x0], 1., [1],
                       dynamics=lambda t, x, u: x,
                       running_cost=lambda t, x, u: 0.,
                       terminal_cost=terminal,
                       dynamics_jac_x=lambda t, x, u: [[1.]],
                       dynamics_jac_u=lambda t, x, u: [[0.]],
                       running_cost_grad_x=lambda t, x, u: [0.],
                       running_cost_grad_u=lambda t, x, u: [0.],
                       terminal_cost_grad=terminal_grad)


def nonlinear(seed):
    """ two-state, two-control instance with analytic Jacobians """
    rng = np.random.default_rng(seed)
    A = 0.8*rng.normal(size=(2, 2))
    B = rng.normal(size=(2, 2))

    def f(t, x, u):
        return A @ np.tanh(x)+(B @ u)*(1.+0.5*np.sin(x))

    def f_x(t, x, u):
        return A*(1.-np.tanh(x)**2)[np.newaxis, :]+np.diag(0.5*np.cos(x)*(B @ u))

    def f_u(t, x, u):
        return (1.+0.5*np.sin(x))[:, np.newaxis]*B

    return TeamProblem(rng.normal(size=2), 1., [1, 1], f,
                       running_cost=lambda t, x, u: 0.5*u @ u+0.5*x @ x,
                       terminal_cost=lambda x: 0.5*x @ x,
                       dynamics_jac_x=f_x, dynamics_jac_u=f_u,
                       running_cost_grad_x=lambda t, x, u: x,
                       running_cost_grad_u=lambda t, x, u: u,
                       terminal_cost_grad=lambda x: x)


def smooth_controls(g):
    t = g.nodes
    return np.column_stack((np.sin(2.*t), 0.5*np.cos(t)))


class TestTeamIntegrate(unittest.TestCase):

    def testForwardExamples(self):
        g = TimeGrid(100, 1.)
        x = integrate_forward(growth(), np.zeros((101, 1)), g)
        assert(abs(x.values[-1, 0]-np.e) <= 1.e-6)

        p = TeamProblem([0.3, -2.], 1., [1], lambda t, x, u: np.zeros(2),
                        lambda t, x, u: 0., lambda x: 0.)
        x = integrate_forward(p, np.zeros((101, 1)), g)
        assert_allclose(x.values, np.tile([0.3, -2.], (101, 1)), atol=1.e-15)

        p = TeamProblem([0.], 1., [1], lambda t, x, u: u, lambda t, x, u: 0., lambda x: 0.)
        x = integrate_forward(p, np.ones((101, 1)), g)
        assert_allclose(x.values[:, 0], g.nodes, atol=1.e-12)

    def testRefinement(self):
        errs = []
        for K in (10, 20):
            x = integrate_forward(growth(), np.zeros((K+1, 1)), TimeGrid(K, 1.))
            errs.append(abs(x.values[-1, 0]-np.e))
        assert(12. < errs[0]/errs[1] < 20.)

    def testAdjointExamples(self):
        g = TimeGrid(100, 1.)
        p = growth(terminal=lambda x: x[0], terminal_grad=lambda x: [1.])
        u = np.zeros((101, 1))
        psi = integrate_adjoint(p, u, integrate_forward(p, u, g), g)
        assert(abs(psi.values[0, 0]-np.e) <= 1.e-6)

        p = TeamProblem([1.], 1., [1], lambda t, x, u: u, lambda t, x, u: 0., lambda x: 3.*x[0],
                        terminal_cost_grad=lambda x: [3.])
        psi = integrate_adjoint(p, u, integrate_forward(p, u, g), g)
        assert_allclose(psi.values[:, 0], 3., atol=1.e-15)

        p = p1()
        u = np.full((101, 1), -0.5)
        psi = integrate_adjoint(p, u, integrate_forward(p, u, g), g)
        assert_allclose(psi.values[:, 0], 0.5, atol=1.e-9)

    def testVariationalExamples(self):
        g = TimeGrid(50, 1.)
        p = p1()
        u = np.full((51, 1), -0.5)
        x = integrate_forward(p, u, g)
        Z = integrate_variational(p, u, np.ones((51, 1)), x, g)
        assert_allclose(Z.values[:, 0], g.nodes, atol=1.e-12)
        Z = integrate_variational(p, u, np.zeros((51, 1)), x, g)
        assert_allclose(Z.values, 0., atol=0.)

        eps = 1.e-3
        xe = integrate_forward(p, u+eps, g)
        Z = integrate_variational(p, u, np.ones((51, 1)), x, g)
        assert(np.max(np.abs((xe.values-x.values)/eps-Z.values)) <= 1.e-3)

    def testVariationalOrder(self):
        g = TimeGrid(50, 1.)
        for seed in range(5):
            p = nonlinear(seed)
            u = smooth_controls(g)
            du = np.column_stack((np.ones(51), g.nodes))
            x = integrate_forward(p, u, g)
            Z = integrate_variational(p, u, du, x, g)
            errs = []
            for eps in (1.e-2, 1.e-3, 1.e-4):
                xe = integrate_forward(p, u+eps*du, g)
                errs.append(np.max(np.abs((xe.values-x.values)/eps-Z.values)))
            assert(np.log10(errs[0]/errs[1]) >= 0.9)
            assert(np.log10(errs[1]/errs[2]) >= 0.9)

    def testContinuousDependence(self):
        g = TimeGrid(50, 1.)
        p = nonlinear(7)
        u = smooth_controls(g)
        du = np.column_stack((np.cos(3.*g.nodes), np.ones(51)))
        x = integrate_forward(p, u, g)
        devs = [np.max(np.abs(integrate_forward(p, u+a*du, g).values-x.values))
                for a in (1.e-1, 1.e-2, 1.e-3)]
        assert(np.log10(devs[0]/devs[1]) >= 0.8)
        assert(np.log10(devs[1]/devs[2]) >= 0.9)
        slopes = np.array(devs)/np.array([1.e-1, 1.e-2, 1.e-3])
        assert(np.max(slopes) <= 2.*np.min(slopes))

    def testCostGradient(self):
        """ node gradient of the discretized cost against central differences """
        g = TimeGrid(20, 1.)
        for seed in range(3):
            p = nonlinear(seed)
            u = smooth_controls(g)
            G = integrate_cost_gradient(p, u, integrate_forward(p, u, g), g)
            assert(G.shape == (21, 2))
            rng = np.random.default_rng(seed)
            du = rng.normal(size=u.shape)
            eps = 1.e-5
            fd = (evaluate_cost(p, u+eps*du, g)-evaluate_cost(p, u-eps*du, g))/(2.*eps)
            exact = float(np.sum(g.weights[:, np.newaxis]*G*du))
            assert(abs(fd-exact) <= 1.e-7*(1.+abs(exact)))
            for k in (0, 7, 20):
                for j in range(2):
                    e = np.zeros(u.shape)
                    e[k, j] = 1.
                    fd = (evaluate_cost(p, u+eps*e, g)-evaluate_cost(p, u-eps*e, g))/(2.*eps)
                    assert(abs(fd-g.weights[k]*G[k, j]) <= 1.e-8*(1.+abs(fd)))

    def testDivergence(self):
        p = TeamProblem([1.], 2., [1], lambda t, x, u: x**2, lambda t, x, u: 0., lambda x: 0.)
        g = TimeGrid(20, 2.)
        with self.assertRaises(IntegrationDivergenceError) as ctx:
            integrate_forward(p, np.zeros((21, 1)), g)
        assert(ctx.exception.node > 0)
        assert(ctx.exception.what == 'state')

    def testGrid(self):
        g = TimeGrid(4, 2.)
        assert_allclose(g.nodes, [0., 0.5, 1., 1.5, 2.])
        assert_allclose(g.weights, [0.25, 0.5, 0.5, 0.5, 0.25])
        assert(abs(g.integral(g.nodes)-2.) <= 1.e-15)
        assert(len(TimeGrid.default(1.5)) == 301)
        assert(g == TimeGrid(4, 2.))


if __name__ == "__main__":
    unittest.main(verbosity=5)
