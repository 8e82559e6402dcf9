'''
Desk-scale runs, mostly with the shipped configs. These take minutes each, run
them with `pytest -m slow`.
'''

import json
import math
import os
import shutil

import pytest

from common.snapshot_io import read_json, read_csv
from experiment_cli import experiment_cli
from experiment_cli.commands import REFERENCE_FILE, FORCING_FILE, BOUNDS_FILE


CONFIGS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'configs')

pytestmark = pytest.mark.slow

# nu = 1 and N = 32 keep a 200 viscous time average affordable
LADDER = {
	"grid": {"n_points": 32},
	"viscosity": 1.0,
	"solver": {"dt": 0.0025, "sample_stride": 4},
	"forcing": {"grashof": 50, "band": [1.0, 3.0]},
	"observation": {"kind": "fourier", "k_squared_cut": 20, "kappa": 0.01, "epsilon": 0.001},
	"nudging": {"beta": 20.0},
	"run": {"duration": 20.0},
	"stats": {"observables": ["energy"], "start": 1.0, "ladder": [50.0, 100.0, 200.0]},
	"sweep": {"axis": "epsilon", "values": [0.001, 0.002, 0.004]},
}


def config_path(name):
	return os.path.join(CONFIGS, name)


def run_cli(command, config, out, *extra):
	return experiment_cli.main([command, '--config', config_path(config), '--out', str(out)] + list(extra))


def write_config(directory, document):
	path = os.path.join(str(directory), 'config.json')
	with open(path, 'w') as f:
		json.dump(document, f)
	return path


@pytest.fixture(scope='module')
def spun_up(tmp_path_factory):
	'''The N=128, G=50 attractor shared by every twin config.'''
	directory = tmp_path_factory.mktemp('attractor')
	assert run_cli('spinup', 'twin_fourier.json', directory) == experiment_cli.EXIT_OK
	return directory


def with_spinup(spun_up, target):
	os.makedirs(str(target), exist_ok=True)
	for name in (REFERENCE_FILE, FORCING_FILE, BOUNDS_FILE):
		shutil.copy(os.path.join(str(spun_up), name), os.path.join(str(target), name))
	return target


def test_observer_bounds(tmp_path):
	assert run_cli('verify-observers', 'verify_observers.json', tmp_path) == experiment_cli.EXIT_OK
	report = read_json(str(tmp_path / 'verify.json'))
	assert report['c0_spread'] < 2
	for result in report['volume_average']:
		assert math.isfinite(result['c0_emp'])
		assert result['l2_violations'] == 0
		assert result['h1_violations'] == 0
	assert report['fourier']['c0_emp'] <= 1
	assert report['fourier']['c1_emp'] <= 1 + 1e-12


def test_attractor_bounds(spun_up):
	bounds = read_json(str(spun_up / BOUNDS_FILE))
	assert bounds['G'] == pytest.approx(50.0)
	assert bounds['M0_emp'] <= 1.05 * bounds['M0']


@pytest.mark.parametrize('config', ['twin_fourier.json', 'twin_volume_average.json'])
def test_noise_free_synchronization(spun_up, tmp_path, config):
	out = with_spinup(spun_up, tmp_path)
	# Snapshots are structure-checked as they're written, a failure exits with EXIT_INVARIANT
	assert run_cli('twin', config, out) == experiment_cli.EXIT_OK

	summary = read_json(str(out / 'summary.json'))
	assert summary['fit']['theta_emp'] < 0.9
	assert summary['fit']['plateau_emp'] <= 1e-6 * summary['initial_error']
	assert summary['final_error'] <= 1e-6 * summary['initial_error']
	assert summary['uniform_bound_ok']
	assert os.listdir(str(out / 'snapshots'))

	_, rows = read_csv(str(out / 'diagnostics.csv'))
	column = 1 if summary['norm'] == 'l2' else 2
	errors = [ float(row[column]) for row in rows if int(row[-1]) ]
	floor = 1e-10 * errors[0]
	for earlier, later in zip(errors[3:], errors[4:]):
		if earlier <= floor:
			break
		assert later <= earlier


def test_noise_plateau_scaling(spun_up, tmp_path):
	out = with_spinup(spun_up, tmp_path)
	assert run_cli('sweep', 'noise_sweep.json', out) == experiment_cli.EXIT_OK

	_, rows = read_csv(str(out / 'sweep.csv'))
	epsilons = [ float(row[0]) for row in rows ]
	assert epsilons == [0.0001, 0.0002, 0.0004]

	summaries = [ read_json(str(out / 'epsilon_{0:g}'.format(e) / 'summary.json')) for e in epsilons ]
	plateaus = [ s['limsup_proxy'] for s in summaries ]
	for lower, higher in zip(plateaus, plateaus[1:]):
		assert 1.5 <= higher / lower <= 3
	for summary in summaries:
		assert summary['limsup_proxy'] <= 100 * summary['E0_measured']


@pytest.fixture(scope='module')
def ladder_spun_up(tmp_path_factory):
	directory = tmp_path_factory.mktemp('ladder')
	config = write_config(directory, LADDER)
	assert experiment_cli.main(['spinup', '--config', config, '--out', str(directory)]) == experiment_cli.EXIT_OK
	return directory


def test_noise_free_averages_converge(ladder_spun_up, tmp_path):
	out = with_spinup(ladder_spun_up, tmp_path)
	config = write_config(out, dict(LADDER, observation=dict(LADDER['observation'], epsilon=0.0)))
	assert experiment_cli.main(['stats', '--config', config, '--out', str(out)]) == experiment_cli.EXIT_OK

	report, = read_json(str(out / 'stats.json'))['reports']
	ladder = report['ladder']
	assert [ rung['T'] for rung in ladder['rungs'] ] == pytest.approx([50.0, 100.0, 200.0])
	assert ladder['decreasing']
	longest = ladder['rungs'][-1]
	assert longest['diff'] <= 1e-3 * abs(longest['mean_u'])


def test_average_error_tracks_the_noise(ladder_spun_up, tmp_path):
	out = with_spinup(ladder_spun_up, tmp_path)
	config = write_config(out, LADDER)
	assert experiment_cli.main(['sweep', '--config', config, '--out', str(out)]) == experiment_cli.EXIT_OK

	sweep = read_json(str(out / 'sweep.json'))
	assert not any( row['diverged'] for row in sweep['rows'] )
	e1 = [ row['E1'] for row in sweep['rows'] ]
	assert e1[1] == pytest.approx(2 * e1[0]) and e1[2] == pytest.approx(4 * e1[0])
	assert 0.5 <= sweep['stats_exponent'] <= 1.5
