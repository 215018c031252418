import numpy as np
import unittest
from numpy.testing import assert_allclose, assert_equal
from teamopt_solver.team_model import Trajectory, state_observation
from teamopt_solver.team_integrate import TimeGrid, integrate_forward, integrate_adjoint
from teamopt_solver.team_hamiltonian import eval_hamiltonian
from teamopt_solver.team_infostruct import InfoSpec
from teamopt_solver.team_solver import SolverOptions, initial_profile, solve_team
from teamopt_solver.team_lq import (LQData, LQDataError, LQSingularityError, GNFData, lq_problem, gnf_problem,
                                    lq_as_gnf, solve_sigma, solve_beta, gnf_strategy_update,
                                    solve_decentralized_lq)


def scalar_lq(A=0., H=0., M=0., N=0.):
    return LQData(A=[[A]], B=[[1.]], R=[[1.]], control_dims=[1], H=[[H]], M_T=[[M]], N_T=[N])


def random_lq(seed):
    """ three states, two DMs, every coefficient populated (A time varying) """
    rng = np.random.default_rng(seed)
    A0, A1 = 0.4*rng.normal(size=(3, 3)), 0.2*rng.normal(size=(3, 3))
    Hh = 0.5*rng.normal(size=(3, 3))
    Mh = 0.5*rng.normal(size=(3, 3))
    return LQData(A=lambda t: A0+A1*np.sin(t), B=0.5*rng.normal(size=(3, 2)), R=np.diag([1., 1.5]),
                  control_dims=[1, 1], H=Hh @ Hh.T, b=0.3*rng.normal(size=3), E=0.2*rng.normal(size=(2, 3)),
                  F=0.3*rng.normal(size=3), m=0.3*rng.normal(size=2), M_T=Mh @ Mh.T, N_T=0.3*rng.normal(size=3))


def coupled_lq():
    return LQData(A=[[-0.5, 0.4], [0.3, -0.2]], B=np.eye(2), R=np.eye(2), control_dims=[1, 1],
                  H=np.diag([1., 0.5]), M_T=np.eye(2))


class TestTeamLQ(unittest.TestCase):

    def testSigmaExamples(self):
        g = TimeGrid(200, 1.)
        assert_allclose(solve_sigma(scalar_lq(M=2.), g).values[:, 0, 0], 2., atol=1.e-14)
        assert_allclose(solve_sigma(scalar_lq(H=1.), g).values[:, 0, 0], 1.-g.nodes, atol=1.e-12)
        a = 0.7
        assert_allclose(solve_sigma(scalar_lq(A=a, M=1.), g).values[:, 0, 0], np.exp(2.*a*(1.-g.nodes)),
                        atol=1.e-6)

    def testSigmaSymmetric(self):
        g = TimeGrid(100, 1.)
        for seed in range(3):
            S = solve_sigma(random_lq(seed), g).values
            assert(np.max(np.abs(S-np.transpose(S, (0, 2, 1)))) <= 1.e-8)

    def testBetaExamples(self):
        g = TimeGrid(100, 1.)
        lq = scalar_lq(A=0.3, H=1., M=1.)
        beta = solve_beta(lq, solve_sigma(lq, g), np.zeros((101, 1)), g)
        assert_allclose(beta.values, 0., atol=0.)
        lq = scalar_lq(M=1.)
        c = 0.7
        beta = solve_beta(lq, solve_sigma(lq, g), np.full((101, 1), c), g)
        assert_allclose(beta.values[:, 0], c*(1.-g.nodes), atol=1.e-12)

    def testAdjointRepresentation(self):
        """ psi = Sigma x + beta along any control """
        g = TimeGrid(2000, 1.)
        t = g.nodes
        for seed in range(10):
            lq = random_lq(seed)
            rng = np.random.default_rng(50+seed)
            a, w = rng.normal(size=2), rng.normal(size=2)
            u = a*np.cos(1.5*t[:, np.newaxis]+w)
            p = lq_problem(lq, rng.normal(size=3), 1.)
            x = integrate_forward(p, u, g)
            psi = integrate_adjoint(p, u, x, g)
            sigma = solve_sigma(lq, g)
            beta = solve_beta(lq, sigma, u, g)
            rep = np.einsum('kij,kj->ki', sigma.values, x.values)+beta.values
            assert(np.max(np.abs(rep-psi.values)) <= 1.e-6)

    def testNormalForm(self):
        lq = random_lq(1)
        p, q = lq_problem(lq, np.zeros(3), 1.), gnf_problem(lq_as_gnf(lq), np.zeros(3), 1.)
        rng = np.random.default_rng(0)
        for s in range(5):
            t, x, psi, u = rng.uniform(), rng.normal(size=3), rng.normal(size=3), rng.normal(size=2)
            Hp, Hq = eval_hamiltonian(p, t, x, psi, u), eval_hamiltonian(q, t, x, psi, u)
            assert(abs(Hp.value-Hq.value) <= 1.e-12*(1.+abs(Hp.value)))
            assert_allclose(Hq.grad_u, Hp.grad_u, rtol=1.e-12, atol=1.e-12)
            assert_allclose(Hq.grad_x, Hp.grad_x, rtol=1.e-12, atol=1.e-12)

    def _gnf(self, R, eta, gain=None, n=1, dims=(1,)):
        return GNFData(drift=lambda t, x: np.zeros(n),
                       gain=gain if gain is not None else (lambda t, x: np.eye(n, sum(dims))),
                       R=R, eta=eta, lam=lambda t, x: 0., terminal=lambda x: 0., control_dims=dims)

    def _update(self, gnf, n, psi, specs=None):
        g = TimeGrid(10, 1.)
        p = gnf_problem(gnf, np.zeros(n), 1., specs)
        profile = initial_profile(p, g)
        x = integrate_forward(p, profile, g)
        return gnf_strategy_update(gnf, g, x, Trajectory(g.nodes, np.tile(psi, (11, 1))), profile)

    def testStrategyUpdate(self):
        gnf = self._gnf(lambda t, x: np.eye(1), lambda t, x: np.zeros(1))
        assert_allclose(self._update(gnf, 1, [2.]).block_values(0), -2., atol=1.e-14)
        assert_allclose(self._update(gnf, 1, [0.]).block_values(0), 0., atol=0.)

        gnf = self._gnf(lambda t, x: np.diag([2., 4.]), lambda t, x: np.array([1., -1.]), n=2, dims=(1, 1))
        u = self._update(gnf, 2, [3., 5.])
        assert_allclose(u.block_values(0), -2., atol=1.e-14)
        assert_allclose(u.block_values(1), -1., atol=1.e-14)

        gnf = self._gnf(lambda t, x: np.eye(1), lambda t, x: np.array([t]))
        u = self._update(gnf, 1, [0.], [InfoSpec.finite_basis([lambda t: 1.])])
        assert_allclose(u.coefficients[0], [-0.5], atol=1.e-10)

    def testSingularBlock(self):
        gnf = self._gnf(lambda t, x: np.diag([1., 0.]), lambda t, x: np.zeros(2), n=2, dims=(1, 1))
        with self.assertRaises(LQSingularityError) as ctx:
            self._update(gnf, 2, [1., 1.])
        assert_equal(ctx.exception.dm, 2)
        assert_equal(ctx.exception.node, 0)

    def testDecoupledFixedPoint(self):
        g = TimeGrid(50, 1.)
        lq = LQData(A=np.zeros((2, 2)), B=np.eye(2), R=np.eye(2), control_dims=[1, 1], M_T=np.eye(2))
        specs = [InfoSpec.open_loop(), InfoSpec.open_loop()]
        profile, rep, report = solve_decentralized_lq(lq, [1., 1.], specs, g)
        assert(report.converged)
        assert_allclose(profile.controls.values, -0.5, atol=1.e-4)
        single, rs = solve_team(lq_problem(scalar_lq(M=1.), [1.], 1.), None, g)
        for i in range(2):
            assert_allclose(profile.block_values(i), single.block_values(0), atol=1.e-4)
        assert(report.residual <= 1.e-4)
        assert(report.certificate['holds'])
        assert_equal(report.certificate['samples'], SolverOptions().certificate_samples)
        profile, rep, report = solve_decentralized_lq(lq, [1., 1.], specs, g, SolverOptions(certificate_samples=0))
        assert(report.certificate is None)

    def testCoupledFixedPoint(self):
        """ diagonal R: the fixed point is the team optimum """
        g = TimeGrid(100, 1.)
        lq = coupled_lq()
        x0 = [1., -1.]
        profile, rep, report = solve_decentralized_lq(lq, x0, [InfoSpec.open_loop()]*2, g,
                                                      SolverOptions(tol=1.e-9))
        assert(report.converged)
        assert(report.residual <= 1.e-4)
        team, treport = solve_team(lq_problem(lq, x0, 1.), None, g, SolverOptions(tol=1.e-7))
        diff = profile.controls.values-team.controls.values
        assert(np.sqrt(g.integral(np.sum(diff**2, axis=1))) <= 1.e-3)
        assert(abs(report.cost-treport.cost) <= 1.e-4)
        x = integrate_forward(lq_problem(lq, x0, 1.), profile, g)
        psi = integrate_adjoint(lq_problem(lq, x0, 1.), profile, x, g)
        assert_allclose(rep.psi(x).values, psi.values, atol=1.e-4)
        history = report.cost_history
        assert(abs(history[-1]-report.cost) <= 1.e-12)

    def testZeroState(self):
        g = TimeGrid(20, 1.)
        profile, rep, report = solve_decentralized_lq(coupled_lq(), [0., 0.], [InfoSpec.open_loop()]*2, g)
        assert(report.converged)
        assert_equal(report.iterations, 1)
        assert_allclose(profile.controls.values, 0., atol=0.)

    def testObservationFeedback(self):
        """ affine feedback on the own state cannot beat the open-loop team optimum """
        g = TimeGrid(50, 1.)
        lq = coupled_lq()
        x0 = [1., -1.]
        obs = [state_observation([0]), state_observation([1])]
        specs = [InfoSpec.closed_loop_markov()]*2
        profile, rep, report = solve_decentralized_lq(lq, x0, specs, g, SolverOptions(max_iter=100),
                                                      observations=obs)
        team, treport = solve_team(lq_problem(lq, x0, 1.), None, g, SolverOptions(tol=1.e-7))
        assert(report.cost >= treport.cost-1.e-6)
        assert_equal(profile.subspaces[0].dim, 2)

    def testDivergenceDetected(self):
        g = TimeGrid(20, 1.)
        lq = scalar_lq(M=10.)
        specs = [InfoSpec.open_loop()]
        opts = SolverOptions(damping=1., divergence_window=5, max_iter=100)
        profile, rep, report = solve_decentralized_lq(lq, [1.], specs, g, opts)
        assert(not report.converged)
        assert('diverging' in report.message)
        assert(report.iterations < 100)

        profile, rep, report = solve_decentralized_lq(lq, [1.], specs, g, SolverOptions(damping=0.05, tol=1.e-8))
        assert(report.converged)
        assert_allclose(profile.controls.values, -10./11., atol=1.e-6)

    def testDataChecks(self):
        g = TimeGrid(10, 1.)
        with self.assertRaises(LQDataError):
            LQData(A=[[0.]], B=[[1., 1.]], R=[[1.]], control_dims=[1])
        with self.assertRaises(LQDataError):
            LQData(A=[[0.]], B=[[1.]], R=[[-1.]], control_dims=[1]).check(g.nodes)
        with self.assertRaises(LQDataError):
            LQData(A=np.zeros((2, 2)), B=np.eye(2), R=np.eye(2), control_dims=[1, 1],
                   H=[[1., 0.5], [0., 1.]]).check(g.nodes)
        with self.assertRaises(LQDataError):
            LQData(A=[[0.]], B=[[1.]], R=[[1.]], control_dims=[1], M_T=[[-1.]]).check(g.nodes)
        with self.assertRaises(LQDataError):
            solve_decentralized_lq(LQData(A=[[0.]], B=[[1.]], R=[[0.]], control_dims=[1]), [1.],
                                   [InfoSpec.open_loop()], g)
        random_lq(0).check(g.nodes)


if __name__ == "__main__":
    unittest.main(verbosity=5)
