#! /usr/bin/env python
"""
Mongelab: periodic optimal transport by damped Newton iteration on the
Monge-Ampere equation.

Command line entry points:

    mongelab synthetic   trigonometric benchmark with known solution
    mongelab register    transport one grayscale image density onto another
    mongelab bench       inner-iteration counts, timings and stability probes

Exit codes: 0 all runs converged, 2 some run did not converge, 1 usage,
configuration or I/O error.
"""

import os
import sys
import queue
import argparse
import logging
import logging.handlers
import threading
from dataclasses import asdict

import numpy as np
from lxml import etree

from . import config
from . import shared
from . import grid as gr
from . import imaging
from . import krylov
from . import mongeampere as ma
from . import synthetic
from .report import RunReport

__version__ = '0.1.0'

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NOT_CONVERGED = 2

DEFAULT_OUTDIR = 'mongelab-out'


def toBool(text):
    """Convert 'True'/'False' config text to bool"""
    if text.strip() in ('True', 'true', '1'):
        return True
    if text.strip() in ('False', 'false', '0'):
        return False
    raise ValueError('expected True or False, got ' + repr(text))


def toChoice(*choices):
    """Converter accepting only the listed strings"""
    def convert(text):
        if text.strip() not in choices:
            raise ValueError('expected one of ' + ', '.join(choices) + ', got ' + repr(text))
        return text.strip()
    return convert


# Configuration elements and their converters
CONFIG_ITEMS = [('tau', float),
                ('tol', float),
                ('maxIter', int),
                ('backend', toChoice('fft', 'fd')),
                ('sampleMode', toChoice('nearest', 'bilinear')),
                ('simplifiedLinearization', toBool),
                ('innerTol', float),
                ('innerMax', int),
                ('gmresRestart', int),
                ('densityFloor', float),
                ('synthK', float),
                ('synthGamma', int),
                ('synthAlpha', float),
                ('synthRho', int),
                ('seed', int),
                ('probeTol', float),
                ('probeMaxIter', int),
                ('outDir', str),
                ('singleThread', toBool)]


class ArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting with code 2"""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise shared.UsageError(self.prog + ': error: ' + message)


def findElementText(elt, elementPath):
    """Returns element text if it exists, None otherwise"""
    elementText = elt.findtext(elementPath)
    if elementText is None:
        return None
    return elementText.strip()


def locateConfigFile(configFile=None):
    """Return path of the configuration file that is in effect"""
    packageDir = os.path.dirname(os.path.abspath(__file__))
    explicit = configFile or os.environ.get('MONGELAB_CONFIG')
    if explicit:
        shared.checkFileExists(explicit)
        return explicit
    configFileUser = os.path.join(os.path.expanduser('~'), '.mongelab', 'config.xml')
    if os.path.isfile(configFileUser):
        return configFileUser
    return os.path.join(packageDir, 'conf', 'config.xml')


def getConfiguration(configFile=None):
    """Read configuration file and make all config variables available via
    config.py. Elements missing from the file keep their default value, so
    older configuration files keep working.
    """
    configFile = locateConfigFile(configFile)
    if not os.path.isfile(configFile):
        # Packaged defaults missing: module-level values stay in effect
        logging.debug('no configuration file found, using built-in defaults')
        return
    try:
        root = etree.parse(configFile).getroot()
    except (OSError, etree.XMLSyntaxError) as exc:
        shared.errorExit('error parsing ' + configFile + ': ' + str(exc))

    if root.tag != 'config':
        shared.errorExit('error parsing ' + configFile + ': root element must be <config>')

    for name, convert in CONFIG_ITEMS:
        text = findElementText(root, name)
        if text is None:
            continue
        try:
            setattr(config, name, convert(text))
        except ValueError as exc:
            shared.errorExit('invalid value for ' + name + ' in ' + configFile + ': ' + str(exc))
    config.configFile = configFile


def resolveOutDir(outArg=None):
    """Output directory: flag, then $MONGELAB_OUTDIR, then config, then ./mongelab-out"""
    for candidate in (outArg, os.environ.get('MONGELAB_OUTDIR'), config.outDir):
        if candidate:
            return os.path.normpath(candidate)
    return os.path.normpath(os.path.join(os.getcwd(), DEFAULT_OUTDIR))


def setupLogger(outDir, verbose=False):
    """Set up logging-related settings.

    Records go to mongelab.log in the output directory and, through a queue
    drained by a single listener thread, to the console. Returns the listener
    and the handlers added to the root logger.
    """
    logFile = os.path.join(outDir, 'mongelab.log')

    logger = logging.getLogger()
    logger.setLevel(logging.INFO)
    fileHandler = logging.FileHandler(logFile, 'a', 'utf-8')
    fileHandler.setFormatter(logging.Formatter('%(asctime)s - %(levelname)s - %(message)s'))

    # This sets the console output format (slightly different from the log file!)
    console = logging.StreamHandler()
    console.setFormatter(logging.Formatter('%(levelname)s: %(message)s'))
    console.setLevel(logging.INFO if verbose else logging.WARNING)
    logQueue = queue.Queue(-1)
    listener = logging.handlers.QueueListener(logQueue, console, respect_handler_level=True)
    queueHandler = logging.handlers.QueueHandler(logQueue)

    handlers = [fileHandler, queueHandler]
    for handler in handlers:
        logger.addHandler(handler)
    listener.start()
    return listener, handlers


def closeLogger(listener, handlers):
    """Stop console listener, then close and remove our handlers"""
    if listener is not None:
        listener.stop()
    logger = logging.getLogger()
    for handler in handlers:
        handler.close()
        logger.removeHandler(handler)


def addSolverArgs(parser):
    """Flags shared by all subcommands; None means 'take from configuration'"""
    parser.add_argument('--config', dest='configFile', help='configuration file')
    parser.add_argument('--out', dest='outDir', help='output directory')
    parser.add_argument('--tol', type=float, help='stop when ||f - f~_n|| <= tol')
    parser.add_argument('--max-iter', dest='maxIter', type=int, help='maximum Newton iterations')
    parser.add_argument('--inner-tol', dest='innerTol', type=float,
                        help='relative tolerance of the inner solver')
    parser.add_argument('--inner-max', dest='innerMax', type=int,
                        help='maximum inner iterations per Newton step')
    parser.add_argument('--restart', dest='gmresRestart', type=int, help='GMRES restart length m')
    parser.add_argument('--sample', dest='sampleMode', choices=['nearest', 'bilinear'],
                        help='sampling of the target density at x + grad u')
    parser.add_argument('--simplified', dest='simplifiedLinearization', action='store_true',
                        default=None, help='drop the first order terms of the linearisation')
    parser.add_argument('--single-thread', dest='singleThread', action='store_true',
                        default=None, help='run sweeps serially')
    parser.add_argument('--verbose', '-v', action='store_true', help='log progress to console')


def parseCommandLine(argv=None):
    """Parse command line"""
    parser = ArgumentParser(prog='mongelab',
                            description='Periodic optimal transport by damped Newton iteration')
    parser.add_argument('--version', action='version', version='%(prog)s ' + __version__)
    subparsers = parser.add_subparsers(dest='command')
    subparsers.required = True

    parserSynth = subparsers.add_parser('synthetic', help='trigonometric benchmark')
    addSolverArgs(parserSynth)
    parserSynth.add_argument('--n', dest='sizes', type=int, action='append',
                             help='grid size (repeat for a sweep)')
    parserSynth.add_argument('--tau', dest='taus', type=float, action='append',
                             help='damping parameter (repeat to compare)')
    parserSynth.add_argument('--backend', choices=['fft', 'fd'], help='inner solver')
    parserSynth.add_argument('--k', dest='synthK', type=float, help='potential is (1/k) cos sin')
    parserSynth.add_argument('--gamma', dest='synthGamma', type=int, help='potential wavenumber')
    parserSynth.add_argument('--alpha', dest='synthAlpha', type=float, help='target amplitude')
    parserSynth.add_argument('--rho', dest='synthRho', type=int, help='target wavenumber')
    parserSynth.add_argument('--zero-potential', dest='zeroPotential', action='store_true',
                             help='use u = 0, so that f = g')
    parserSynth.add_argument('--keep-history', dest='keepHistory', action='store_true',
                             help='write u - u_n error maps (.npy)')

    parserReg = subparsers.add_parser('register', help='transport between two images')
    addSolverArgs(parserReg)
    parserReg.add_argument('--source', required=True, help='source image (PGM or PNG)')
    parserReg.add_argument('--target', required=True, help='target image (PGM or PNG)')
    parserReg.add_argument('--n', dest='n', type=int, default=128, help='grid size')
    parserReg.add_argument('--tau', dest='tau', type=float, help='damping parameter')
    parserReg.add_argument('--backend', choices=['fft', 'fd'], help='inner solver')
    parserReg.add_argument('--floor', dest='densityFloor', type=float, help='density floor')
    parserReg.add_argument('--frames', action='store_true', help='write warp frames')
    parserReg.add_argument('--map-format', dest='mapFormat', choices=['png', 'pgm'],
                           default='png', help='format of emitted images')

    parserBench = subparsers.add_parser('bench', help='inner solver benchmark')
    addSolverArgs(parserBench)
    parserBench.add_argument('--n', dest='sizes', type=int, action='append',
                             help='grid size (repeat for a sweep)')
    parserBench.add_argument('--tau', dest='tau', type=float, help='damping parameter')
    parserBench.add_argument('--backend', choices=['fft', 'fd', 'both'], default='both',
                             help='inner solver(s)')
    parserBench.add_argument('--probe-spectral-radius', dest='probe', action='store_true',
                             help='power iteration on the inverse operator at every Newton step')
    parserBench.add_argument('--seed', dest='seed', type=int, help='seed of the probe vector')

    return parser.parse_args(argv)


def settings(args, *names):
    """Flag value if given, configuration value otherwise"""
    out = {}
    for name in names:
        value = getattr(args, name, None)
        out[name] = getattr(config, name) if value is None else value
    return out


def checkSizes(sizes):
    """Grid sizes must be powers of two >= 8"""
    for n in sizes:
        if n < 8 or n & (n - 1):
            shared.errorExit('grid size must be a power of two >= 8, got ' + str(n))
    return sizes


def newtonConfig(opts, tau, backend, keepHistory=False):
    """Build NewtonConfig from resolved settings"""
    try:
        return ma.NewtonConfig(tau=tau,
                               tol=opts['tol'],
                               max_iter=opts['maxIter'],
                               backend=backend,
                               inner_tol=opts['innerTol'],
                               inner_max=opts['innerMax'],
                               gmres_restart=opts['gmresRestart'],
                               sample_mode=opts['sampleMode'],
                               simplified=opts['simplifiedLinearization'],
                               keep_history=keepHistory)
    except ma.NewtonConfigError as exc:
        shared.errorExit(str(exc))


def runJobs(jobs, worker, singleThread):
    """Run worker(job) for every job, in worker threads unless singleThread.

    Results keep the order of jobs.
    """
    results = [None] * len(jobs)
    if singleThread or len(jobs) < 2:
        for i, job in enumerate(jobs):
            results[i] = worker(job)
        return results

    jobQueue = queue.Queue()
    for item in enumerate(jobs):
        jobQueue.put(item)
    errors = []

    def consume():
        while True:
            try:
                i, job = jobQueue.get(block=False)
            except queue.Empty:
                return
            try:
                results[i] = worker(job)
            except Exception as exc:
                errors.append(exc)

    noThreads = min(len(jobs), os.cpu_count() or 2)
    threads = [threading.Thread(target=consume) for _ in range(noThreads)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    return results


def spectralProbe(backend, cfg, tol, maxIter, seed):
    """Return on_linearization hook estimating the inverse operator's spectral radius"""
    if backend == 'fft':
        from .fftsolver import inverse_operator
    else:
        from .fdsolver import inverse_operator

    def probe(iteration, coeffs):
        inverse = inverse_operator(coeffs, cfg)
        estimate = krylov.power_iteration(inverse, tol=tol, max_iter=maxIter, seed=seed)
        if not estimate.converged:
            logging.warning(''.join(['spectral radius probe did not settle at iteration ',
                                     str(iteration), ' (', backend, ')']))
        if inverse.failures:
            logging.warning(''.join([str(inverse.failures), ' of ', str(inverse.solves),
                                     ' inner solves missed tolerance in the spectral radius ',
                                     'probe at iteration ', str(iteration), ' (', backend, ')']))
        return {'spectral_radius': estimate.radius,
                'probe_iterations': estimate.iterations,
                'probe_converged': estimate.converged and inverse.failures == 0,
                'probe_inner_failures': inverse.failures}

    return probe


def synthFamily(opts, zeroPotential=False):
    """Benchmark family from the synth* settings; exits if its source density is not positive"""
    try:
        family = synthetic.TrigFamily(k=opts['synthK'], gamma=opts['synthGamma'],
                                      alpha=opts['synthAlpha'], rho=opts['synthRho'],
                                      zero_potential=zeroPotential)
    except synthetic.SyntheticError as exc:
        shared.errorExit(str(exc))
    fMin = synthetic.source_minimum(family)
    if fMin <= 0.0:
        shared.errorExit(''.join(['benchmark constants give a source density with minimum ',
                                  '{:.4g}'.format(fMin), ' (k=', str(family.k),
                                  '), increase k']))
    return family


def solveSynthetic(job):
    """Worker: run one synthetic problem, return dict with results"""
    try:
        problem = synthetic.build_problem(job['n'], job['family'])
    except ma.DensityError as exc:
        shared.errorExit(str(exc))
    u, report = ma.run_newton(problem.pair, job['cfg'], u_exact=problem.u_exact,
                              on_linearization=job.get('probe'))
    target = problem.pair.target_density(job['cfg'].sample_mode)
    pushforward = ma.evaluate_forward(u, target, job['cfg'].sample_mode)
    return {'u': u,
            'report': report,
            'problem': problem,
            'finalError': gr.l2_norm(u - problem.u_exact),
            'massDefect': abs(gr.simpson_average(pushforward) - 1.0)}


def label(backend, n, tau):
    return backend + '-n' + str(n) + '-tau' + '{:g}'.format(tau)


def cmdSynthetic(args, outDir):
    """Synthetic benchmark: sweep over grid sizes and tau values"""
    opts = settings(args, 'tol', 'maxIter', 'innerTol', 'innerMax', 'gmresRestart', 'sampleMode',
                    'simplifiedLinearization', 'singleThread', 'backend', 'synthK', 'synthGamma',
                    'synthAlpha', 'synthRho')
    sizes = checkSizes(args.sizes or [64])
    taus = args.taus or [config.tau]
    family = synthFamily(opts, args.zeroPotential)
    if family.min_eigenvalue() <= 0.0:
        logging.warning('I + D^2u of the exact potential is not positive definite; '
                        'the solver will not converge to it (increase k)')

    jobs = []
    for tau in taus:
        cfg = newtonConfig(opts, tau, opts['backend'], args.keepHistory)
        for n in sizes:
            jobs.append({'n': n, 'tau': tau, 'cfg': cfg, 'family': family})

    echo = dict(opts, sizes=sizes, taus=taus, family=asdict(family), version=__version__)
    runReport = RunReport('synthetic', echo)
    results = runJobs(jobs, solveSynthetic, opts['singleThread'])

    for job, result in zip(jobs, results):
        name = label(opts['backend'], job['n'], job['tau'])
        runReport.addRun(name, job['n'], opts['backend'], job['tau'], result['report'],
                         finalError=result['finalError'],
                         extra={'mass_defect': result['massDefect']})
        if args.keepHistory:
            iterates = result['report'].final_state.iterates
            errors = np.array([(result['problem'].u_exact - it).values for it in iterates])
            np.save(os.path.join(outDir, 'error_' + name + '.npy'), errors)

    runReport.summary['orders'] = {'{:g}'.format(tau): runReport.orderTable(opts['backend'], tau)
                                   for tau in taus}
    for tau, table in runReport.summary['orders'].items():
        logging.info('tau ' + tau + ': observed orders ' + str(table['observed_order']))
    writeReports(runReport, outDir)
    return runReport


def cmdBench(args, outDir):
    """Benchmark both inner solvers over a grid sweep"""
    opts = settings(args, 'tol', 'maxIter', 'innerTol', 'innerMax', 'gmresRestart', 'sampleMode',
                    'simplifiedLinearization', 'singleThread', 'synthK', 'synthGamma',
                    'synthAlpha', 'synthRho', 'seed', 'probeTol', 'probeMaxIter')
    sizes = checkSizes(args.sizes or [16, 32, 64])
    tau = args.tau if args.tau is not None else config.tau
    backends = ['fft', 'fd'] if args.backend == 'both' else [args.backend]
    family = synthFamily(opts)

    jobs = []
    for backend in backends:
        cfg = newtonConfig(opts, tau, backend)
        probe = None
        if args.probe:
            probe = spectralProbe(backend, cfg, opts['probeTol'], opts['probeMaxIter'],
                                  opts['seed'])
        for n in sizes:
            jobs.append({'n': n, 'tau': tau, 'cfg': cfg, 'family': family,
                         'backend': backend, 'probe': probe})

    echo = dict(opts, sizes=sizes, tau=tau, backends=backends, probe=args.probe,
                family=asdict(family), version=__version__)
    runReport = RunReport('bench', echo)
    results = runJobs(jobs, solveSynthetic, opts['singleThread'])
    for job, result in zip(jobs, results):
        runReport.addRun(label(job['backend'], job['n'], tau), job['n'], job['backend'], tau,
                         result['report'], finalError=result['finalError'])

    for backend in backends:
        runs = sorted((r for r in runReport.runs if r['backend'] == backend),
                      key=lambda r: r['n'])
        counts = [r['mean_inner_iterations'] for r in runs]
        entry = {'n': [r['n'] for r in runs],
                 'mean_inner_iterations': counts,
                 'total_time': [r['total_time'] for r in runs],
                 'increasing': all(b > a for a, b in zip(counts, counts[1:])),
                 'spread': max(counts) / min(counts) if counts and min(counts) > 0 else None}
        if args.probe:
            entry['mean_spectral_radius'] = [r['mean_spectral_radius'] for r in runs]
            entry['max_probe_iterations'] = [r['max_probe_iterations'] for r in runs]
            entry['probes_converged'] = [r['probes_converged'] for r in runs]
        runReport.summary[backend] = entry
        logging.info(backend + ': mean inner iterations ' + str(counts))
    writeReports(runReport, outDir)
    runReport.writeSummaryCSV(os.path.join(outDir, 'bench.csv'))
    return runReport


def cmdRegister(args, outDir):
    """Register source image onto target image"""
    opts = settings(args, 'tol', 'maxIter', 'innerTol', 'innerMax', 'gmresRestart', 'sampleMode',
                    'simplifiedLinearization', 'backend', 'densityFloor')
    checkSizes([args.n])
    tau = args.tau if args.tau is not None else config.tau
    cfg = newtonConfig(opts, tau, opts['backend'], keepHistory=args.frames)

    source = imaging.read_image(args.source)
    target = imaging.read_image(args.target)
    logging.info(''.join(['Registering ', args.source, ' onto ', args.target,
                          ' at n=', str(args.n)]))
    try:
        result = imaging.register(source, target, args.n, cfg, opts['densityFloor'])
    except (ValueError, ma.DensityError) as exc:
        shared.errorExit(str(exc))

    echo = dict(opts, source=args.source, target=args.target, n=args.n, tau=tau,
                version=__version__)
    runReport = RunReport('register', echo)
    runReport.addRun(label(opts['backend'], args.n, tau), args.n, opts['backend'], tau,
                     result.report)
    peak = imaging.localise(result.divergence)
    runReport.summary['transport_distance'] = result.distance
    runReport.summary['divergence_peak'] = list(peak)
    logging.info('transport distance ' + '{:.6e}'.format(result.distance))

    ext = '.' + args.mapFormat
    imaging.write_image(imaging.render(result.divergence), os.path.join(outDir, 'divergence' + ext))
    np.save(os.path.join(outDir, 'divergence.npy'), result.divergence.values)
    if args.frames:
        framesDir = shared.makeDir(os.path.join(outDir, 'frames'))
        images = imaging.warp_sequence(result.report.final_state, result.pair)
        *frames, sourceImg, targetImg = images
        for i, frame in enumerate(frames):
            imaging.write_image(frame, os.path.join(framesDir, 'frame_' + str(i).zfill(3) + ext))
        imaging.write_image(sourceImg, os.path.join(framesDir, 'source' + ext))
        imaging.write_image(targetImg, os.path.join(framesDir, 'target' + ext))
    writeReports(runReport, outDir)
    return runReport


def writeReports(runReport, outDir):
    runReport.writeJSON(os.path.join(outDir, 'report.json'))
    runReport.writeHistoryCSV(os.path.join(outDir, 'history.csv'))


COMMANDS = {'synthetic': cmdSynthetic,
            'register': cmdRegister,
            'bench': cmdBench}


def main(argv=None):
    """Main function, returns exit code"""
    config.version = __version__
    listener, handlers = None, []
    try:
        args = parseCommandLine(argv)
        getConfiguration(args.configFile)
        outDir = shared.makeDir(resolveOutDir(args.outDir))
        listener, handlers = setupLogger(outDir, args.verbose)
        logging.info('mongelab ' + __version__ + ', command ' + args.command)
        runReport = COMMANDS[args.command](args, outDir)
    except (shared.UsageError, imaging.ImageError) as exc:
        if handlers:
            logging.error(str(exc))
        sys.stderr.write('ERROR: ' + str(exc) + '\n')
        return EXIT_USAGE
    finally:
        closeLogger(listener, handlers)

    if runReport.allConverged:
        return EXIT_OK
    return EXIT_NOT_CONVERGED


if __name__ == '__main__':
    sys.exit(main())
