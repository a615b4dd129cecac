#! /usr/bin/env python
"""Machine-readable run reports: one JSON document plus a flat CSV of the
per-iteration history of every run.

History CSV columns, one row per Newton iteration:

    run, n, backend, tau, iteration, residual, u_error, inner_iterations,
    inner_converged, wall_time, min_eigenvalue, spectral_radius,
    probe_iterations, probe_converged

Empty fields mean "not measured".
"""

import math
import time

from . import shared

HISTORY_HEADER = ['run', 'n', 'backend', 'tau', 'iteration', 'residual', 'u_error',
                  'inner_iterations', 'inner_converged', 'wall_time', 'min_eigenvalue',
                  'spectral_radius', 'probe_iterations', 'probe_converged']

SUMMARY_HEADER = ['run', 'n', 'backend', 'tau', 'converged', 'iterations', 'final_residual',
                  'final_u_error', 'mean_inner_iterations', 'convergence_ratio', 'total_time',
                  'mean_spectral_radius', 'max_probe_iterations', 'probes_converged']


def observed_orders(sizes, errors):
    """Observed order log(e_i / e_i+1) / log(n_i+1 / n_i) for successive grids"""
    orders = []
    for (n0, e0), (n1, e1) in zip(zip(sizes, errors), zip(sizes[1:], errors[1:])):
        if e0 is None or e1 is None or e0 <= 0.0 or e1 <= 0.0:
            orders.append(None)
        else:
            orders.append(math.log(e0 / e1) / math.log(n1 / n0))
    return orders


class RunReport:
    """Config echo, per-iteration records of each run and a summary"""

    def __init__(self, command, configEcho):
        self.command = command
        self.config = dict(configEcho)
        self.created = time.strftime('%Y-%m-%dT%H:%M:%S')
        self.runs = []
        self.summary = {}

    def addRun(self, label, n, backend, tau, solveReport, finalError=None, extra=None):
        """Add the outcome of one run_newton call; extra holds finite scalars"""
        records = []
        for rec in solveReport.records:
            records.append({'iteration': rec.iteration,
                            'residual': shared.finiteOrNone(rec.residual),
                            'u_error': shared.finiteOrNone(rec.u_error),
                            'inner_iterations': rec.inner_iterations,
                            'inner_converged': rec.inner_converged,
                            'wall_time': shared.finiteOrNone(rec.wall_time),
                            'min_eigenvalue': shared.finiteOrNone(rec.min_eigenvalue),
                            'spectral_radius': shared.finiteOrNone(rec.extra.get('spectral_radius')),
                            'probe_iterations': rec.extra.get('probe_iterations'),
                            'probe_converged': rec.extra.get('probe_converged'),
                            'diagnostics': list(rec.diagnostics)})
        radii = [r['spectral_radius'] for r in records if r['spectral_radius'] is not None]
        probeIters = [r['probe_iterations'] for r in records if r['probe_iterations'] is not None]
        probeFlags = [r['probe_converged'] for r in records if r['probe_converged'] is not None]
        run = {'label': label,
               'n': n,
               'backend': backend,
               'tau': tau,
               'converged': solveReport.converged,
               'iterations': solveReport.iterations,
               'final_residual': shared.finiteOrNone(solveReport.final_residual),
               'final_u_error': shared.finiteOrNone(finalError),
               'mean_inner_iterations': shared.finiteOrNone(solveReport.mean_inner_iterations()),
               'convergence_ratio': shared.finiteOrNone(solveReport.convergence_ratio()),
               'total_time': shared.finiteOrNone(solveReport.total_time),
               'mean_spectral_radius': sum(radii) / len(radii) if radii else None,
               'max_probe_iterations': max(probeIters) if probeIters else None,
               'probes_converged': all(probeFlags) if probeFlags else None,
               'failure': solveReport.failure,
               'records': records}
        for key, value in (extra or {}).items():
            run[key] = shared.finiteOrNone(value)
        self.runs.append(run)
        return run

    @property
    def allConverged(self):
        return all(run['converged'] for run in self.runs)

    def orderTable(self, backend, tau):
        """Observed orders of the final u error across the grid sweep"""
        runs = sorted((r for r in self.runs
                       if r['backend'] == backend and r['tau'] == tau
                       and r['final_u_error'] is not None),
                      key=lambda r: r['n'])
        sizes = [r['n'] for r in runs]
        return {'n': sizes,
                'u_error': [r['final_u_error'] for r in runs],
                'observed_order': observed_orders(sizes, [r['final_u_error'] for r in runs])}

    def toDict(self):
        return {'command': self.command,
                'created': self.created,
                'config': self.config,
                'summary': dict(self.summary, all_converged=self.allConverged),
                'runs': self.runs}

    def historyRows(self):
        for run in self.runs:
            for rec in run['records']:
                yield [run['label'], run['n'], run['backend'], run['tau'],
                       rec['iteration'], rec['residual'], rec['u_error'],
                       rec['inner_iterations'], rec['inner_converged'], rec['wall_time'],
                       rec['min_eigenvalue'], rec['spectral_radius'], rec['probe_iterations'],
                       rec['probe_converged']]

    def summaryRows(self):
        for run in self.runs:
            yield [run[key] if key != 'run' else run['label'] for key in SUMMARY_HEADER]

    def writeJSON(self, fileOut):
        shared.writeJSON(fileOut, self.toDict())

    def writeHistoryCSV(self, fileOut):
        shared.writeCSV(fileOut, HISTORY_HEADER, self.historyRows())

    def writeSummaryCSV(self, fileOut):
        shared.writeCSV(fileOut, SUMMARY_HEADER, self.summaryRows())
