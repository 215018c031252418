import logging
from dataclasses import dataclass
import numpy as np
from teamopt_solver.team_model import HamiltonianEvaluationError

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class HamiltonianEval:
    """ Hamiltonian H = <f, psi> + l and its partial derivatives at one point

    Parameters
    ---------------
    value: float
      H
    grad_x: array
      H_x = f_x'psi + l_x (n-vector)
    grad_u: array
      H_u = f_u'psi + l_u (d-vector)
    blocks: tuple(array)
      grad_u split in per-DM blocks H_{u^i}
    """
    value: float
    grad_x: np.ndarray
    grad_u: np.ndarray
    blocks: tuple


def _check(values, what, t, x, u):
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise HamiltonianEvaluationError(
            'non-finite {} at t={}, x={}, u={}'.format(what, t, np.asarray(x).tolist(), np.asarray(u).tolist()))
    return arr


def adjoint_coefficients(p, t, x, u):
    """ (f_x, l_x) at (t, x, u): the coefficients of the adjoint equation """
    return _check(p.f_x(t, x, u), 'dynamics_jac_x', t, x, u), \
        _check(p.l_x(t, x, u), 'running_cost_grad_x', t, x, u)


def hamiltonian_value(p, t, x, psi, u):
    f = _check(p.f(t, x, u), 'dynamics', t, x, u)
    return float(np.dot(f, psi)) + float(_check(p.l(t, x, u), 'running cost', t, x, u))


def hamiltonian_grad_x(p, t, x, psi, u, coefs=None):
    """ H_x = f_x'psi + l_x; coefs can carry precomputed (f_x, l_x) """
    f_x, l_x = adjoint_coefficients(p, t, x, u) if coefs is None else coefs
    return f_x.T @ psi + l_x


def hamiltonian_grad_u(p, t, x, psi, u):
    """ H_u = f_u'psi + l_u """
    f_u = _check(p.f_u(t, x, u), 'dynamics_jac_u', t, x, u)
    l_u = _check(p.l_u(t, x, u), 'running_cost_grad_u', t, x, u)
    return f_u.T @ psi + l_u


def eval_hamiltonian(p, t, x, psi, u):
    """ Evaluate the Hamiltonian of problem p at a point

    Parameters
    ---------------
    p: TeamProblem
      problem
    t: float
      time
    x: array
      state (n-vector)
    psi: array
      adjoint (n-vector)
    u: array
      stacked control (d-vector)

    Returns
    ----------
    HamiltonianEval

    Raises
    ---------
    HamiltonianEvaluationError if a callback returns non-finite values
    """
    x = np.asarray(x, dtype=float)
    psi = np.asarray(psi, dtype=float)
    u = np.asarray(u, dtype=float)
    value = hamiltonian_value(p, t, x, psi, u)
    grad_x = hamiltonian_grad_x(p, t, x, psi, u)
    grad_u = hamiltonian_grad_u(p, t, x, psi, u)
    return HamiltonianEval(value=value, grad_x=grad_x, grad_u=grad_u,
                           blocks=tuple(p.split(grad_u)))


def grad_u_on_grid(p, nodes, x, psi, u):
    """ H_u at every grid node

    Parameters
    ---------------
    p: TeamProblem
      problem
    nodes: array
      time (or step) of each node
    x: array
      state values per node, shape (K+1, n)
    psi: array
      adjoint values per node, shape (K+1, n)
    u: array
      control values per node, shape (K+1, d)

    Returns
    ----------
    array of shape (K+1, d)
    """
    out = np.empty((len(nodes), p.d))
    for k, t in enumerate(nodes):
        out[k] = hamiltonian_grad_u(p, t, x[k], psi[k], u[k])
    return out
