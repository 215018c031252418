import os
import json
import time
import logging
import numpy as np
import pandas as pd
from teamopt_solver.team_model import IntegrationDivergenceError, HamiltonianEvaluationError
from teamopt_solver.team_integrate import TimeGrid, integrate_forward, integrate_adjoint
from teamopt_solver.team_solver import solve_team, solve_pbp, stationarity_residual, adjoint_residual
from teamopt_solver.team_lq import solve_decentralized_lq, LQSingularityError
from teamopt_solver.team_discrete import (discrete_solve_team, discrete_forward, discrete_adjoint,
                                          discrete_stationarity_residual)
from teamopt_wrapper.team_object import ConfigError
from teamopt_wrapper.team_builtins import build_from_config
from teamopt_wrapper.version import __version__

LOGGER = logging.getLogger(__name__)

EXIT_CONVERGED = 0
EXIT_CONFIG = 1
EXIT_NOT_CONVERGED = 2

TRAJECTORIES = 'trajectories.csv'
RESIDUALS = 'residuals.csv'
REPORT = 'report.json'


class TeamSimulation:
    """ Experiment runner: builds the problem of a config, solves it and writes artifacts

    Parameters
    ---------------
    config: ExperimentConfig
      validated configuration

    Raises
    ---------
    ConfigError if the problem cannot be built from the config
    """

    def __init__(self, config):
        self.config = config
        self.outdir = config.outdir
        self.opts = config.options
        self.built = build_from_config(config)
        self.problem = self.built.problem
        if config.solver == 'discrete-team' and not self.built.discrete:
            raise ConfigError('solver.name', 'discrete-team needs a discrete problem')
        if self.built.discrete and config.solver != 'discrete-team':
            raise ConfigError('solver.name', 'discrete problems are solved with discrete-team')
        if config.solver == 'lq-fixed-point' and self.built.lq is None:
            raise ConfigError('solver.name', 'lq-fixed-point needs an lq problem')
        self.grid = None
        if not self.built.discrete:
            self.grid = TimeGrid(config.K, self.problem.horizon) if config.K is not None \
                else TimeGrid.default(self.problem.horizon)

    def run(self):
        """ solve and write trajectories.csv, residuals.csv and report.json

        Returns
        ----------
        exit code: 0 converged, 2 not converged or diverged
        """
        self.prepareSave(self.outdir)
        LOGGER.info('solving %s with %s', self.problem.name, self.config.solver)
        try:
            profile, report, x, psi = self.solve()
        except (IntegrationDivergenceError, HamiltonianEvaluationError, LQSingularityError) as err:
            LOGGER.warning('solve failed: %s', err)
            self.save_report({'converged': False, 'message': 'divergence: {}'.format(err),
                              'cost': None, 'residual': None, 'iterations': None, 'cycles': None,
                              'cost_history': [], 'dm_residuals': [], 'certificate': None})
            return EXIT_NOT_CONVERGED

        self.save_trajectories(profile, x, psi)
        self.save_residuals(profile)
        results = report.to_dict()
        if not self.built.discrete:
            results['adjoint_residual'] = adjoint_residual(self.problem, profile, self.grid)
        self.save_report(results)
        return EXIT_CONVERGED if report.converged else EXIT_NOT_CONVERGED

    def solve(self):
        """ dispatch to the configured solver

        Returns
        ----------
        profile, report, state Trajectory, adjoint Trajectory
        """
        p = self.problem
        solver = self.config.solver
        if solver == 'discrete-team':
            profile, report = discrete_solve_team(p, None, self.opts)
            x = discrete_forward(p, profile)
            return profile, report, x, discrete_adjoint(p, profile, x)
        if solver == 'team':
            profile, report = solve_team(p, None, self.grid, self.opts)
        elif solver == 'pbp':
            profile, report = solve_pbp(p, None, self.grid, self.opts)
        else:
            profile, rep, report = solve_decentralized_lq(self.built.lq, p.x0, p.info_structures, self.grid,
                                                          self.opts, p.observations, p.action_sets)
        x = integrate_forward(p, profile, self.grid)
        return profile, report, x, integrate_adjoint(p, profile, x, self.grid)

    def prepareSave(self, outdir):
        """ Prepare output directory, removing artifacts of a previous run

        Parameters
        --------------
        outdir: str
          output directory
        """
        if not os.path.exists(outdir):
            LOGGER.info('Creating output directory %s', outdir)
            os.makedirs(outdir)
        for name in (TRAJECTORIES, RESIDUALS, REPORT):
            self.check_del(os.path.join(outdir, name))

    def check_del(self, fileName):
        """
        Method to remove a file if already exist

        Parameters
        ----------
        fileName: str
          file to remove (full path)

        """
        if os.path.exists(fileName):
            os.remove(fileName)

    def _control_columns(self, profile):
        cols = {}
        for i in range(profile.N):
            vals = profile.block_values(i)
            for c in range(vals.shape[1]):
                cols['u{}_{}'.format(i+1, c+1)] = vals[:, c]
        return cols

    def save_trajectories(self, profile, x, psi):
        """ t, x_1..x_n, psi_1..psi_n, u<i>_<c> per DM (discrete controls padded at the last step) """
        data = {'t': x.grid}
        for j in range(x.values.shape[1]):
            data['x_{}'.format(j+1)] = x.values[:, j]
        for j in range(psi.values.shape[1]):
            data['psi_{}'.format(j+1)] = psi.values[:, j]
        nrows = len(x.grid)
        for key, vals in self._control_columns(profile).items():
            data[key] = np.concatenate((vals, np.full(nrows-len(vals), np.nan)))
        pd.DataFrame(data).to_csv(os.path.join(self.outdir, TRAJECTORIES), index=False, float_format='%.17g')

    def save_residuals(self, profile):
        """ per-node projected Hamiltonian gradient r<i>_<c> of every DM """
        if self.built.discrete:
            rho, rs = discrete_stationarity_residual(self.problem, profile)
        else:
            rho, rs = stationarity_residual(self.problem, profile, self.grid)
        data = {'t': rs[0].grid}
        for i, r in enumerate(rs):
            for c in range(r.values.shape[1]):
                data['r{}_{}'.format(i+1, c+1)] = r.values[:, c]
        pd.DataFrame(data).to_csv(os.path.join(self.outdir, RESIDUALS), index=False, float_format='%.17g')

    def save_report(self, results):
        """ report.json: solver results, config echo, version and timestamp """
        report = dict(results)
        report['problem'] = self.problem.name
        report['solver'] = self.config.solver
        report['expected_cost'] = self.config.builtin.expected_cost if self.config.builtin is not None else None
        report['grid_K'] = self.grid.K if self.grid is not None else None
        report['config'] = self.config.to_dict()
        report['version'] = __version__
        report['timestamp'] = time.strftime('%Y-%m-%dT%H:%M:%S')
        with open(os.path.join(self.outdir, REPORT), 'w', encoding='utf-8') as f:
            json.dump(report, f, indent=2, sort_keys=True)
