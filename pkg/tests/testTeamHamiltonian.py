import numpy as np
import unittest
from numpy.testing import assert_allclose, assert_equal
from teamopt_solver.team_model import TeamProblem, HamiltonianEvaluationError
from teamopt_solver.team_hamiltonian import eval_hamiltonian, adjoint_coefficients, grad_u_on_grid
from teamopt_solver.team_integrate import TimeGrid, integrate_forward, integrate_adjoint
from teamopt_solver.team_solver import evaluate_cost
from teamopt_solver.team_lq import GNFData, gnf_problem


def random_instance(seed):
    """ nonlinear instance, n <= 3 states, N <= 2 DMs, analytic derivatives """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    dims = [int(d) for d in rng.integers(1, 3, size=int(rng.integers(1, 3)))]
    d = sum(dims)
    A = 0.5*rng.normal(size=(n, n))
    B = rng.normal(size=(n, d))
    Q = np.diag(rng.uniform(0.2, 1., size=n))
    R = np.diag(rng.uniform(0.5, 1.5, size=d))

    def f(t, x, u):
        return A @ np.tanh(x)+(B @ u)*(1.+0.2*np.sin(x))

    def f_x(t, x, u):
        return A*(1.-np.tanh(x)**2)[np.newaxis, :]+np.diag(0.2*np.cos(x)*(B @ u))

    def f_u(t, x, u):
        return (1.+0.2*np.sin(x))[:, np.newaxis]*B

    return TeamProblem(rng.normal(size=n), 1., dims, f,
                       running_cost=lambda t, x, u: 0.5*u @ R @ u+0.5*x @ Q @ x+0.1*np.sum(np.cos(x)),
                       terminal_cost=lambda x: 0.5*x @ x+0.1*np.sum(x**3),
                       dynamics_jac_x=f_x, dynamics_jac_u=f_u,
                       running_cost_grad_x=lambda t, x, u: Q @ x-0.1*np.sin(x),
                       running_cost_grad_u=lambda t, x, u: R @ u,
                       terminal_cost_grad=lambda x: x+0.3*x**2)


def p1():
    return TeamProblem([1.], 1., [1],
                       dynamics=lambda t, x, u: u,
                       running_cost=lambda t, x, u: 0.5*u @ u,
                       terminal_cost=lambda x: 0.5*x @ x,
                       dynamics_jac_u=lambda t, x, u: [[1.]],
                       running_cost_grad_u=lambda t, x, u: u,
                       terminal_cost_grad=lambda x: x)


class TestTeamHamiltonian(unittest.TestCase):

    def testExamples(self):
        H = eval_hamiltonian(p1(), 0., [1.], [0.5], [-0.5])
        assert(abs(H.value+0.125) <= 1.e-15)
        assert_allclose(H.grad_u, [0.], atol=1.e-15)
        assert_equal(len(H.blocks), 1)

        p = TeamProblem([1.], 1., [1], lambda t, x, u: np.sin(x)*u, lambda t, x, u: 0., lambda x: 0.)
        H = eval_hamiltonian(p, 0.3, [0.7], [0.], [1.2])
        assert(H.value == 0.)
        assert_allclose(H.grad_x, [0.], atol=1.e-12)
        assert_allclose(H.grad_u, [0.], atol=1.e-12)

        gnf = GNFData(drift=lambda t, x: np.zeros(1), gain=lambda t, x: np.ones((1, 1)),
                      R=lambda t, x: np.eye(1), eta=lambda t, x: np.zeros(1),
                      lam=lambda t, x: 0., terminal=lambda x: 0., control_dims=[1])
        H = eval_hamiltonian(gnf_problem(gnf, [0.], 1.), 0., [0.], [2.], [0.])
        assert_allclose(H.grad_u, [2.], atol=1.e-15)

    def testAnalyticVersusFiniteDifferences(self):
        rng = np.random.default_rng(11)
        for seed in range(5):
            p = random_instance(seed)
            q = p.finite_difference_copy()
            for s in range(5):
                t = rng.uniform(0., 1.)
                x, psi, u = rng.normal(size=p.n), rng.normal(size=p.n), rng.normal(size=p.d)
                Ha = eval_hamiltonian(p, t, x, psi, u)
                Hf = eval_hamiltonian(q, t, x, psi, u)
                assert(abs(Ha.value-Hf.value) <= 1.e-14*(1.+abs(Ha.value)))
                assert_allclose(Hf.grad_x, Ha.grad_x, rtol=1.e-5, atol=1.e-8)
                assert_allclose(Hf.grad_u, Ha.grad_u, rtol=1.e-5, atol=1.e-8)

    def testBlocks(self):
        p = random_instance(4)
        u = np.arange(p.d, dtype=float)
        H = eval_hamiltonian(p, 0.5, np.ones(p.n), np.ones(p.n), u)
        assert_allclose(np.concatenate(H.blocks), H.grad_u)
        assert_equal([len(b) for b in H.blocks], list(p.control_dims))

    def testAdjointConsistency(self):
        """ psi' matches -H_x along the sweep """
        g = TimeGrid(400, 1.)
        p = random_instance(2)
        u = np.column_stack([np.sin((c+1)*g.nodes) for c in range(p.d)])
        x = integrate_forward(p, u, g)
        psi = integrate_adjoint(p, u, x, g)
        for k in range(1, g.K, 37):
            H = eval_hamiltonian(p, g.nodes[k], x.values[k], psi.values[k], u[k])
            f_x, l_x = adjoint_coefficients(p, g.nodes[k], x.values[k], u[k])
            assert_allclose(f_x.T @ psi.values[k]+l_x, H.grad_x, rtol=1.e-12, atol=1.e-12)
            slope = (psi.values[k+1]-psi.values[k-1])/(2.*g.h)
            assert_allclose(slope, -H.grad_x, rtol=1.e-3, atol=1.e-4)

    def testGradientIdentity(self):
        """ adjoint directional derivative against central differences of J """
        g = TimeGrid(400, 1.)
        t = g.nodes
        eps = 1.e-5
        for seed in range(20):
            p = random_instance(seed)
            rng = np.random.default_rng(100+seed)
            a, b, c, w = (rng.normal(size=p.d) for i in range(4))
            u = 0.5*np.cos(t[:, np.newaxis]+c)
            du = a*np.sin(2.*t[:, np.newaxis]+w)+b
            x = integrate_forward(p, u, g)
            psi = integrate_adjoint(p, u, x, g)
            Hu = grad_u_on_grid(p, t, x.values, psi.values, u)
            adjoint = float(np.sum(g.weights[:, np.newaxis]*Hu*du))
            fd = (evaluate_cost(p, u+eps*du, g)-evaluate_cost(p, u-eps*du, g))/(2.*eps)
            assert(abs(fd-adjoint) <= 1.e-4*(1.+abs(adjoint)))

    def testNonFinite(self):
        p = TeamProblem([1.], 1., [1], lambda t, x, u: u, lambda t, x, u: np.log(u[0]), lambda x: 0.)
        with np.errstate(invalid='ignore'):
            with self.assertRaises(HamiltonianEvaluationError):
                eval_hamiltonian(p, 0., [1.], [1.], [-1.])


if __name__ == "__main__":
    unittest.main(verbosity=5)
