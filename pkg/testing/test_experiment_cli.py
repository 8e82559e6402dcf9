import copy
import math
import json
import os
import shutil

import numpy as np
import pytest

from common.snapshot_io import read_json, read_csv, read_snapshot
from common.spectral_core import GridSpec, SpectralField
from common.observer_backend import ObservationStream
from experiment_cli import experiment_cli
from experiment_cli.commands import (InvariantViolation, REFERENCE_FILE, FORCING_FILE, BOUNDS_FILE, check_structure,
	observation_times)
from experiment_cli.config import InvalidConfig, validate_config, load_config


TINY = {
	"grid": {"n_points": 16},
	"viscosity": 1.0,
	"solver": {"dt": 0.005, "sample_stride": 2},
	"forcing": {"grashof": 10, "band": [1.0, 3.0]},
	"spinup": {"duration": 20.0},
	"observation": {"kind": "fourier", "modes": 8, "kappa": 0.02},
	"nudging": {"beta": 10.0},
	"run": {"duration": 0.4},
	"stats": {"observables": ["energy"], "lipschitz_samples": 4},
	"verify": {"cells_per_axis": [4, 8], "fourier_modes": 8, "corpus_size": 8, "noise_draws": 20},
}


def tiny(**sections):
	document = copy.deepcopy(TINY)
	for name, changes in sections.items():
		if isinstance(changes, dict) and isinstance(document.get(name), dict):
			document[name].update(changes)
		else:
			document[name] = changes
	return document


def write_config(directory, document):
	path = os.path.join(str(directory), 'config.json')
	with open(path, 'w') as f:
		json.dump(document, f)
	return path


def run_cli(*argv):
	return experiment_cli.main(list(argv))


@pytest.fixture(scope='module')
def spun_up(tmp_path_factory):
	'''One spin-up of the tiny config, copied into each test's output directory.'''
	directory = tmp_path_factory.mktemp('spinup')
	config = write_config(directory, TINY)
	assert run_cli('spinup', '--config', config, '--out', str(directory)) == experiment_cli.EXIT_OK
	return directory


def with_spinup(spun_up, target):
	os.makedirs(str(target), exist_ok=True)
	for name in (REFERENCE_FILE, FORCING_FILE, BOUNDS_FILE):
		shutil.copy(os.path.join(str(spun_up), name), os.path.join(str(target), name))
	return target


class TestConfig:
	def test_tiny_is_valid(self):
		config = validate_config(TINY)
		assert config.lambda1 == 1.0
		assert config.viscous_time == 1.0
		assert config.spinup_duration == 20.0
		assert config.condition_path == 'fourier'
		assert config.grid_spec() == GridSpec(16)
		assert config.solver_config().scheme == 'imex_cnab2'

	def test_defaults(self):
		document = tiny()
		del document['spinup']
		config = validate_config(document)
		assert config.spinup_duration == 20.0
		assert config.observation.seed == 2
		assert config.stats.lipschitz_samples == 4

	@pytest.mark.parametrize('document', [
		tiny(grid={'n_points': 15}),
		tiny(viscosity=-1.0),
		tiny(solver={'dt': 0.005, 'scheme': 'rk4'}),
		tiny(observation={'kind': 'fourier', 'modes': 8, 'k_squared_cut': 4.0, 'kappa': 0.02}),
		tiny(observation={'kind': 'fourier', 'kappa': 0.02}),
		tiny(observation={'kind': 'volume_average', 'kappa': 0.02}),
		tiny(observation={'kind': 'nodal', 'kappa': 0.02}),
		tiny(forcing={'grashof': 10, 'band': [3.0, 1.0]}),
		tiny(nudging={'beta': 10.0, 'gain': 2}),
		tiny(colour='blue'),
	])
	def test_rejects(self, document):
		with pytest.raises(InvalidConfig):
			validate_config(document)

	def test_general_path(self):
		config = validate_config(tiny(observation={'kind': 'volume_average', 'cells_per_axis': 4, 'kappa': 0.02}))
		assert config.condition_path == 'general'
		assert config.observation.operator_spec() == {'kind': 'volume_average', 'cells_per_axis': 4, 'mollify_width': 0.5}

	def test_with_seed(self):
		config = validate_config(TINY).with_seed(10)
		assert (config.forcing.seed, config.spinup.seed, config.observation.seed, config.nudging.v0_seed, config.verify.seed) == (10, 11, 12, 13, 14)

	def test_updated_revalidates(self):
		config = validate_config(TINY)
		assert config.updated({'nudging': {'beta': 2.0}}).nudging.beta == 2.0
		with pytest.raises(InvalidConfig):
			config.updated({'observation': {'kappa': -1.0}})

	def test_load(self, tmp_path):
		assert load_config(write_config(tmp_path, TINY)) == validate_config(TINY)
		with pytest.raises(InvalidConfig):
			load_config(str(tmp_path / 'missing.json'))
		(tmp_path / 'broken.json').write_text('{"grid": ')
		with pytest.raises(InvalidConfig):
			load_config(str(tmp_path / 'broken.json'))


def test_observation_times():
	assert observation_times(0.25, 1.0) == [0.0, 0.25, 0.5, 0.75, 1.0]
	assert len(observation_times(0.02, 0.4)) == 21


def test_check_structure(grid16):
	c = np.zeros(grid16.shape, dtype=np.complex128)
	c[0, 0, 1] = 1.0
	with pytest.raises(InvariantViolation):
		check_structure(SpectralField(grid16, c), 'lopsided')
	c[0, 0, -1] = 1.0
	check_structure(SpectralField(grid16, c), 'shear')


class TestSpinup:
	def test_artefacts(self, spun_up):
		bounds = read_json(str(spun_up / BOUNDS_FILE))
		assert bounds['G'] == pytest.approx(10.0)
		assert 'within_M0' in bounds
		assert 0 < bounds['M0_emp'] <= 1.05 * bounds['M0']
		assert bounds['config']['grid']['n_points'] == 16
		assert read_snapshot(str(spun_up / REFERENCE_FILE)).grid == GridSpec(16)
		assert read_json(str(spun_up / 'provenance.json'))['command'] == 'spinup'

	def test_rerun_is_identical(self, spun_up, tmp_path):
		config = write_config(tmp_path, TINY)
		assert run_cli('spinup', '--config', config, '--out', str(tmp_path)) == experiment_cli.EXIT_OK
		assert read_json(str(tmp_path / BOUNDS_FILE)) == read_json(str(spun_up / BOUNDS_FILE))
		with open(str(tmp_path / REFERENCE_FILE), 'rb') as a, open(str(spun_up / REFERENCE_FILE), 'rb') as b:
			assert a.read() == b.read()

	def test_unforced(self, tmp_path):
		config = write_config(tmp_path, tiny(forcing={'grashof': 0}))
		assert run_cli('spinup', '--config', config, '--out', str(tmp_path)) == experiment_cli.EXIT_OK
		assert read_json(str(tmp_path / BOUNDS_FILE))['M0_emp'] < 1e-10

	def test_divergence_exit_code(self, tmp_path):
		config = write_config(tmp_path, tiny(solver={'dt': 0.5}, forcing={'grashof': 50, 'band': [1.0, 3.0]}))
		assert run_cli('spinup', '--config', config, '--out', str(tmp_path)) == experiment_cli.EXIT_DIVERGED

	def test_too_short(self, tmp_path):
		config = write_config(tmp_path, tiny(spinup={'duration': 1.0}))
		assert run_cli('spinup', '--config', config, '--out', str(tmp_path)) == experiment_cli.EXIT_BAD_CONFIG


class TestTwin:
	def test_bundle(self, spun_up, tmp_path):
		out = with_spinup(spun_up, tmp_path)
		config = write_config(out, tiny(run={'duration': 0.4, 'snapshot_stride': 5, 'export_stream': True}))
		assert run_cli('twin', '--config', config, '--out', str(out)) == experiment_cli.EXIT_OK

		summary = read_json(str(out / 'summary.json'))
		for key in ('parameters', 'operator', 'bounds', 'conditions', 'fit', 'theta_predicted', 'initial_error', 'final_error', 'limsup_proxy', 'uniform_bound_ok', 'config'):
			assert key in summary
		assert summary['conditions']['path'] == 'fourier'
		assert summary['parameters']['beta_kappa'] == pytest.approx(0.2)
		assert summary['final_error'] < summary['initial_error']
		assert summary['steps'] == 80

		header, rows = read_csv(str(out / 'diagnostics.csv'))
		assert header == ['t', 'w_l2', 'w_h1', 'v_l2', 'v_h1', 'is_observation_time']
		assert sum( int(row[-1]) for row in rows ) == 21
		assert os.path.exists(str(out / 'reference_energy.csv'))
		assert os.path.exists(str(out / 'assimilated_energy.csv'))
		assert 'reports' in read_json(str(out / 'stats.json'))

		assert sorted(os.listdir(str(out / 'snapshots'))) == ['u_00000.ndg2', 'u_00005.ndg2', 'u_00010.ndg2', 'u_00015.ndg2',
			'v_00000.ndg2', 'v_00005.ndg2', 'v_00010.ndg2', 'v_00015.ndg2']
		stream = ObservationStream.load(str(out / 'stream'))
		assert len(stream) == 21
		assert stream.kappa == 0.02
		assert stream.config['grid']['n_points'] == 16
		assert read_json(str(out / 'stream' / 'stream.json'))['config'] == summary['config']

	def test_deterministic(self, spun_up, tmp_path):
		first = with_spinup(spun_up, tmp_path / 'first')
		second = with_spinup(spun_up, tmp_path / 'second')
		for out in (first, second):
			config = write_config(out, TINY)
			assert run_cli('twin', '--config', config, '--out', str(out)) == experiment_cli.EXIT_OK
		assert read_json(str(first / 'summary.json')) == read_json(str(second / 'summary.json'))

	def test_general_path_reports_c0(self, spun_up, tmp_path):
		out = with_spinup(spun_up, tmp_path)
		config = write_config(out, tiny(observation={'kind': 'volume_average', 'cells_per_axis': 4, 'kappa': 0.02, 'epsilon': 0.01}))
		assert run_cli('twin', '--config', config, '--out', str(out)) == experiment_cli.EXIT_OK
		summary = read_json(str(out / 'summary.json'))
		assert summary['conditions']['path'] == 'general'
		assert summary['conditions']['c0_emp'] > 0
		assert summary['norm'] == 'h1'
		assert summary['E0_measured'] > 0

	def test_zero_beta_still_reports(self, spun_up, tmp_path):
		out = with_spinup(spun_up, tmp_path)
		config = write_config(out, tiny(nudging={'beta': 0.0}))
		assert run_cli('twin', '--config', config, '--out', str(out)) == experiment_cli.EXIT_OK
		summary = read_json(str(out / 'summary.json'))
		assert summary['conditions']['overall'] is False
		assert 'error' in summary['conditions']
		assert summary['theta_predicted'] is None

	def test_needs_a_spinup(self, tmp_path):
		config = write_config(tmp_path, TINY)
		assert run_cli('twin', '--config', config, '--out', str(tmp_path)) == experiment_cli.EXIT_BAD_CONFIG

	def test_grid_must_match_the_spinup(self, spun_up, tmp_path):
		out = with_spinup(spun_up, tmp_path)
		config = write_config(out, tiny(grid={'n_points': 32}))
		assert run_cli('twin', '--config', config, '--out', str(out)) == experiment_cli.EXIT_BAD_CONFIG


class TestOtherCommands:
	def test_stats_ladder(self, spun_up, tmp_path):
		out = with_spinup(spun_up, tmp_path)
		config = write_config(out, tiny(stats={'observables': ['energy', 'enstrophy'], 'ladder': [1.0, 10.0], 'start': 0.0, 'lipschitz_samples': 4}))
		assert run_cli('stats', '--config', config, '--out', str(out)) == experiment_cli.EXIT_OK
		reports = read_json(str(out / 'stats.json'))['reports']
		assert [ r['observable'] for r in reports ] == ['energy', 'enstrophy']
		for report in reports:
			assert [ rung['T'] for rung in report['ladder']['rungs'] ] == pytest.approx([1.0, 10.0])
			assert report['diff'] >= 0 and report['bound'] == 0.0
			# noise-free, so the averages converge
			assert report['ladder']['decreasing']

	def test_sweep(self, spun_up, tmp_path):
		out = with_spinup(spun_up, tmp_path)
		config = write_config(out, TINY)
		assert run_cli('sweep', '--config', config, '--out', str(out), '--axis', 'beta', '--values', '0', '10') == experiment_cli.EXIT_OK
		header, rows = read_csv(str(out / 'sweep.csv'))
		assert header == ['value', 'theta_emp', 'plateau_emp', 'E1', 'stats_diff', 'diverged', 'conditions_satisfied']
		assert [ float(row[0]) for row in rows ] == [0.0, 10.0]
		assert all( row[5] == 'False' for row in rows )
		assert all( float(row[3]) == 0.0 and float(row[4]) >= 0 for row in rows )
		assert os.path.exists(str(out / 'beta_10' / 'summary.json'))
		assert read_json(str(out / 'sweep.json'))['stats_exponent'] is None

	def test_noise_sweep_fits_an_exponent(self, spun_up, tmp_path):
		out = with_spinup(spun_up, tmp_path)
		config = write_config(out, TINY)
		assert run_cli('sweep', '--config', config, '--out', str(out), '--axis', 'epsilon', '--values', '0.01', '0.02') == experiment_cli.EXIT_OK
		sweep = read_json(str(out / 'sweep.json'))
		assert [ row['E1'] > 0 for row in sweep['rows'] ] == [True, True]
		assert sweep['rows'][1]['E1'] == pytest.approx(2 * sweep['rows'][0]['E1'])
		assert math.isfinite(sweep['stats_exponent'])

	def test_sweep_needs_values(self, spun_up, tmp_path):
		out = with_spinup(spun_up, tmp_path)
		config = write_config(out, TINY)
		assert run_cli('sweep', '--config', config, '--out', str(out)) == experiment_cli.EXIT_BAD_CONFIG

	def test_verify_observers(self, tmp_path):
		verify = {'cells_per_axis': [8, 16], 'fourier_modes': 8, 'corpus_size': 8, 'corpus_band': [1.0, 2.0], 'noise_draws': 20}
		config = write_config(tmp_path, tiny(grid={'n_points': 64}, verify=verify))
		assert run_cli('verify-observers', '--config', config, '--out', str(tmp_path)) == experiment_cli.EXIT_OK
		report = read_json(str(tmp_path / 'verify.json'))
		assert report['passed'] and report['c0_uniform']
		assert [ r['cells_per_axis'] for r in report['volume_average'] ] == [8, 16]
		for result in report['volume_average']:
			assert result['partition_error'] <= 1e-12
			assert result['l2_violations'] == 0
			assert result['C1'] == 9
		assert report['fourier']['passed']

	def test_seed_override(self, tmp_path):
		config = write_config(tmp_path, tiny(forcing={'grashof': 0}))
		assert run_cli('spinup', '--config', config, '--out', str(tmp_path), '--seed', '40') == experiment_cli.EXIT_OK
		bounds = read_json(str(tmp_path / BOUNDS_FILE))
		assert bounds['config']['forcing']['seed'] == 40
		assert bounds['spinup']['seed'] == 41

	def test_bad_config_file(self, tmp_path):
		assert run_cli('twin', '--config', str(tmp_path / 'nope.json'), '--out', str(tmp_path)) == experiment_cli.EXIT_BAD_CONFIG

	def test_unknown_observable(self, spun_up, tmp_path):
		out = with_spinup(spun_up, tmp_path)
		config = write_config(out, tiny(stats={'observables': ['helicity']}))
		assert run_cli('twin', '--config', config, '--out', str(out)) == experiment_cli.EXIT_BAD_CONFIG

	def test_output_is_a_file(self, tmp_path):
		config = write_config(tmp_path, tiny(forcing={'grashof': 0}))
		(tmp_path / 'taken').write_text('')
		assert run_cli('spinup', '--config', config, '--out', str(tmp_path / 'taken')) == experiment_cli.EXIT_BAD_CONFIG
