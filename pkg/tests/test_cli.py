"""End-to-end tests of the mongelab command line"""

import csv
import json
import logging
import os

import numpy as np
import pytest

from mongelab import config
from mongelab import configure
from mongelab import grid as gr
from mongelab import imaging as im
from mongelab import mongeampere as ma
from mongelab import mongelab as cli
from mongelab import shared

FAST = ['--tol', '1e-8', '--max-iter', '40', '--single-thread']


def readReport(outDir):
    with open(os.path.join(outDir, 'report.json'), encoding='utf-8') as fIn:
        return json.load(fIn)


def readCSV(fileIn):
    with open(fileIn, encoding='utf-8', newline='') as fIn:
        return list(csv.reader(fIn))


def test_synthetic_sweep(tmp_path):
    out = tmp_path / 'out'
    code = cli.main(['synthetic', '--n', '16', '--n', '32', '--tau', '1', '--tau', '2',
                     '--out', str(out), '--keep-history'] + FAST)
    assert code == cli.EXIT_OK
    report = readReport(out)
    assert report['command'] == 'synthetic'
    assert report['summary']['all_converged'] is True
    assert [run['label'] for run in report['runs']] == ['fft-n16-tau1', 'fft-n32-tau1',
                                                         'fft-n16-tau2', 'fft-n32-tau2']
    assert set(report['summary']['orders']) == {'1', '2'}
    assert report['summary']['orders']['1']['n'] == [16, 32]
    assert report['config']['family']['k'] == 80.0
    for run in report['runs']:
        assert run['final_u_error'] < 1e-3
        assert run['mass_defect'] < 1e-2

    rows = readCSV(out / 'history.csv')
    assert rows[0][:6] == ['run', 'n', 'backend', 'tau', 'iteration', 'residual']
    assert len(rows) - 1 == sum(len(run['records']) for run in report['runs'])

    errors = np.load(out / 'error_fft-n16-tau1.npy')
    assert errors.shape[1:] == (16, 16)
    assert os.path.isfile(out / 'mongelab.log')


def test_synthetic_threaded_sweep_keeps_job_order(tmp_path):
    out = tmp_path / 'out'
    code = cli.main(['synthetic', '--n', '16', '--n', '8', '--out', str(out),
                     '--tol', '1e-8', '--max-iter', '40', '--backend', 'fd'])
    assert code == cli.EXIT_OK
    assert [run['n'] for run in readReport(out)['runs']] == [16, 8]


def test_zero_potential(tmp_path):
    out = tmp_path / 'out'
    assert cli.main(['synthetic', '--n', '16', '--zero-potential', '--out', str(out)]
                    + FAST) == cli.EXIT_OK
    run = readReport(out)['runs'][0]
    assert run['iterations'] <= 1
    assert run['final_u_error'] < 1e-12


def test_non_convergence_exit_code(tmp_path):
    out = tmp_path / 'out'
    code = cli.main(['synthetic', '--n', '16', '--out', str(out), '--max-iter', '1',
                     '--single-thread'])
    assert code == cli.EXIT_NOT_CONVERGED
    assert readReport(out)['summary']['all_converged'] is False


@pytest.mark.parametrize('argv', [[],
                                  ['synthetic', '--backend', 'multigrid'],
                                  ['synthetic', '--n', '12'],
                                  ['synthetic', '--n', '4'],
                                  ['synthetic', '--tau', '0.5'],
                                  ['synthetic', '--k', '-1'],
                                  ['synthetic', '--k', '10'],
                                  ['bench', '--n', 'sixteen'],
                                  ['register', '--source', 'a.png']])
def test_usage_errors(tmp_path, capsys, argv):
    assert cli.main(argv + ['--out', str(tmp_path / 'out')] if argv else argv) == cli.EXIT_USAGE
    assert 'error' in capsys.readouterr().err.lower()


def write_phantom(path, **kwargs):
    im.write_image(im.phantom(32, **kwargs), path)
    return str(path)


def test_register_identical_images(tmp_path):
    out = tmp_path / 'out'
    source = write_phantom(tmp_path / 'scan.pgm')
    code = cli.main(['register', '--source', source, '--target', source, '--n', '16',
                     '--frames', '--out', str(out)])
    assert code == cli.EXIT_OK
    report = readReport(out)
    assert report['summary']['transport_distance'] < 1e-20
    assert report['runs'][0]['converged'] is True
    assert os.path.isfile(out / 'divergence.png')
    assert np.load(out / 'divergence.npy').shape == (16, 16)
    frames = sorted(os.listdir(out / 'frames'))
    assert 'frame_000.png' in frames
    assert 'source.png' in frames and 'target.png' in frames


def test_register_lesion_writes_pgm_maps(tmp_path):
    out = tmp_path / 'out'
    source = write_phantom(tmp_path / 'before.png', smoothing=0.06)
    target = write_phantom(tmp_path / 'after.png', smoothing=0.06,
                           lesions=((0.5, 0.4, 0.1, 0.1),))
    code = cli.main(['register', '--source', source, '--target', target, '--n', '32',
                     '--floor', '0.5', '--map-format', 'pgm', '--tol', '1e-7',
                     '--max-iter', '40', '--inner-tol', '1e-6', '--sample', 'bilinear',
                     '--out', str(out)])
    assert code == cli.EXIT_OK
    report = readReport(out)
    assert report['summary']['transport_distance'] > 0.0
    x1, x2 = report['summary']['divergence_peak']
    assert np.hypot(x1 - 0.5, x2 - 0.4) <= 0.1 + 1.0 / 32
    image = im.read_image(out / 'divergence.pgm')
    assert image.pixels.shape == (32, 32)


def test_register_missing_image(tmp_path, capsys):
    out = tmp_path / 'out'
    code = cli.main(['register', '--source', str(tmp_path / 'nope.png'),
                     '--target', str(tmp_path / 'nope.png'), '--n', '16', '--out', str(out)])
    assert code == cli.EXIT_USAGE
    assert 'nope.png' in capsys.readouterr().err


def test_bench_with_probe(tmp_path):
    out = tmp_path / 'out'
    code = cli.main(['bench', '--n', '8', '--n', '16', '--probe-spectral-radius',
                     '--out', str(out), '--tol', '1e-6', '--max-iter', '40'])
    assert code == cli.EXIT_OK
    report = readReport(out)
    assert len(report['runs']) == 4
    for backend in ('fft', 'fd'):
        entry = report['summary'][backend]
        assert entry['n'] == [8, 16]
        assert all(r is not None and r > 0.0 for r in entry['mean_spectral_radius'])
        assert isinstance(entry['increasing'], bool)
        assert len(entry['probes_converged']) == 2
    rows = readCSV(out / 'bench.csv')
    assert rows[0][0] == 'run' and len(rows) == 5
    history = readCSV(out / 'history.csv')
    assert all(row[11] != '' for row in history[1:])


def test_spectral_radius_estimate_flags_failed_inner_solves(generic, caplog):
    grid = gr.PeriodicGrid(16)
    laplacian = ma.LinearizedCoefficients.constant(grid)
    settled = cli.spectralProbe('fft', ma.NewtonConfig(), 1e-8, 50, 0)(0, laplacian)
    assert settled['probe_converged'] is True
    assert settled['probe_inner_failures'] == 0

    starved = ma.NewtonConfig(inner_max=1, gmres_restart=1)
    with caplog.at_level(logging.WARNING):
        result = cli.spectralProbe('fft', starved, 1e-8, 50, 0)(0, generic(grid))
    assert result['probe_converged'] is False
    assert result['probe_inner_failures'] > 0
    assert 'inner solves missed tolerance' in caplog.text


def test_outdir_from_environment(tmp_path, monkeypatch):
    out = tmp_path / 'from-env'
    monkeypatch.setenv('MONGELAB_OUTDIR', str(out))
    assert cli.main(['synthetic', '--n', '8', '--zero-potential'] + FAST) == cli.EXIT_OK
    assert os.path.isfile(out / 'report.json')


def test_configuration_file_is_applied(tmp_path):
    configFile = tmp_path / 'config.xml'
    configFile.write_text('<config><maxIter>1</maxIter><gmresRestart>5</gmresRestart></config>')
    out = tmp_path / 'out'
    code = cli.main(['synthetic', '--n', '16', '--config', str(configFile), '--out', str(out),
                     '--single-thread'])
    assert code == cli.EXIT_NOT_CONVERGED
    assert config.gmresRestart == 5
    assert readReport(out)['config']['gmresRestart'] == 5


def test_flags_override_configuration(tmp_path, monkeypatch):
    configFile = tmp_path / 'config.xml'
    configFile.write_text('<config><maxIter>1</maxIter></config>')
    monkeypatch.setenv('MONGELAB_CONFIG', str(configFile))
    out = tmp_path / 'out'
    code = cli.main(['synthetic', '--n', '16', '--out', str(out)] + FAST)
    assert code == cli.EXIT_OK
    assert readReport(out)['config']['maxIter'] == 40


@pytest.mark.parametrize('content', ['<config><tau>abc</tau></config>',
                                     '<config><backend>cg</backend></config>',
                                     '<settings><tau>1</tau></settings>',
                                     'this is not XML'])
def test_malformed_configuration(tmp_path, capsys, content):
    configFile = tmp_path / 'config.xml'
    configFile.write_text(content)
    code = cli.main(['synthetic', '--n', '8', '--config', str(configFile),
                     '--out', str(tmp_path / 'out')])
    assert code == cli.EXIT_USAGE
    assert str(configFile) in capsys.readouterr().err


def test_bench_rejects_non_positive_source(tmp_path, capsys):
    configFile = tmp_path / 'config.xml'
    configFile.write_text('<config><synthK>10</synthK></config>')
    code = cli.main(['bench', '--n', '8', '--config', str(configFile),
                     '--out', str(tmp_path / 'out')])
    assert code == cli.EXIT_USAGE
    assert 'increase k' in capsys.readouterr().err


def test_missing_configuration_file(tmp_path):
    with pytest.raises(shared.UsageError):
        cli.getConfiguration(str(tmp_path / 'absent.xml'))


def test_packaged_configuration_matches_defaults():
    defaults = {name: getattr(config, name) for name, _ in cli.CONFIG_ITEMS}
    cli.getConfiguration()
    assert {name: getattr(config, name) for name, _ in cli.CONFIG_ITEMS} == defaults


def test_configure_installs_user_configuration(tmp_path, capsys):
    userConfig = tmp_path / 'home' / '.mongelab' / 'config.xml'
    assert configure.main([]) == 0
    assert userConfig.is_file()
    userConfig.write_text('<config><tau>3</tau></config>')
    assert configure.main([]) == 0
    assert 'already exists' in capsys.readouterr().out
    cli.getConfiguration()
    assert config.tau == 3.0
    assert configure.main(['--force']) == 0
    cli.getConfiguration()
    assert config.tau == 1.0


def test_run_jobs_preserves_order():
    results = cli.runJobs(list(range(10)), lambda x: x * x, singleThread=False)
    assert results == [x * x for x in range(10)]


def test_run_jobs_reraises_worker_errors():
    def worker(job):
        if job == 3:
            raise ValueError('bad job')
        return job

    with pytest.raises(ValueError):
        cli.runJobs(list(range(5)), worker, singleThread=False)
