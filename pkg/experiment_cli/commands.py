import os
import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from tqdm import tqdm

from common import debuglog
from common.debuglog import debug, mention, red, green, verdict
from common.nse_solver import BlowUp, CFLViolation, integrate, spin_up, make_forcing, grashof, attractor_bounds
from common.nudging import (AttractorBounds, NudgingParams, check_conditions_fourier, check_conditions_general,
	predicted_theta, fit_contraction, run_twin)
from common.observer_backend import get_observer, estimate_c0, estimate_c1, draw_noise, observe_trajectory
from common.snapshot_io import write_snapshot, read_snapshot, write_json, read_json, write_csv
from common.spectral_core import SpectralField, random_field, norms, set_fft_workers
from common.statistics import get_observable, measure_lipschitz, compare_averages, average_ladder, scaling_exponent
from observe.observer import NoiseModel
from experiment_cli.config import InvalidConfig


class InvariantViolation(RuntimeError): pass


REFERENCE_FILE = 'reference.ndg2'
FORCING_FILE   = 'forcing.ndg2'
BOUNDS_FILE    = 'bounds.json'

# Structural checks on stored fields, relative to the field's largest coefficient
STRUCTURE_TOLERANCE = 1e-12

# Random smooth fields used to estimate c0 for the condition report
TWIN_CORPUS_SIZE = 16


def _prepare(out_dir):
	os.makedirs(out_dir, exist_ok=True)
	return out_dir


def check_structure(field, label):
	'''Divergence-free, Hermitian and mean-free, or InvariantViolation.'''
	scale = max(float(np.max(np.abs(field.coefficients))), 1e-300)
	problems = []
	if field.divergence() > STRUCTURE_TOLERANCE * scale * math.sqrt(field.grid.k_squared.max()):
		problems.append("divergence {0:.3e}".format(field.divergence()))
	if not field.is_hermitian(STRUCTURE_TOLERANCE * scale):
		problems.append("not Hermitian")
	if not field.is_mean_free(STRUCTURE_TOLERANCE * scale):
		problems.append("non-zero mean")
	if problems:
		raise InvariantViolation("{0} failed structural checks: {1}".format(label, ', '.join(problems)))


def cmd_spinup(config, out_dir):
	_prepare(out_dir)
	grid = config.grid_spec()
	cfg = config.solver_config()
	nu = config.viscosity

	g = make_forcing(grid, nu, config.forcing.grashof, band=tuple(config.forcing.band), seed=config.forcing.seed)
	G = grashof(g, nu, grid.lambda1)
	mention("lambda1={0:.6g}, G={1:.6g} (target {2})".format(grid.lambda1, G, config.forcing.grashof))

	result = spin_up(g, cfg, config.spinup_duration, config.spinup.seed)
	check_structure(result.state, "Spun-up reference")

	m0, m1 = attractor_bounds(G, nu, grid.lambda1)
	write_snapshot(os.path.join(out_dir, REFERENCE_FILE), result.state)
	write_snapshot(os.path.join(out_dir, FORCING_FILE), g)
	bounds = {
		'M0_emp':  result.m0_emp,
		'M1_emp':  result.m1_emp,
		'G':       G,
		'M0':      m0,
		'M1':      m1,
		'lambda1': grid.lambda1,
		'nu':      nu,
		'spinup':  result.describe(),
		'within_M0': result.m0_emp <= m0,
		'config':  config.model_dump(mode='json'),
	}
	write_json(os.path.join(out_dir, BOUNDS_FILE), bounds)
	mention("Spin-up: M0_emp={0:.6g} (nu G={1:.6g}) M1_emp={2:.6g}".format(result.m0_emp, m0, result.m1_emp))
	return bounds


def load_spinup(config, out_dir):
	paths = [ os.path.join(out_dir, name) for name in (REFERENCE_FILE, FORCING_FILE, BOUNDS_FILE) ]
	missing = [ p for p in paths if not os.path.exists(p) ]
	if missing:
		raise InvalidConfig("Spin-up artefacts missing, run `spinup` first: {0}".format(missing))

	fraction = config.grid.dealias_fraction
	u_ref = read_snapshot(paths[0], dealias_fraction=fraction)
	g = read_snapshot(paths[1], dealias_fraction=fraction)
	if u_ref.grid != config.grid_spec():
		raise InvalidConfig("Spin-up artefacts in {0} were made on a different grid".format(out_dir))
	return u_ref, g, read_json(paths[2])


def observation_times(kappa, duration):
	count = int(math.floor(duration / kappa + 1e-9))
	times = [ n * kappa for n in range(count + 1) ]
	return times


def smooth_corpus(grid, size, seed, band=(1.0, 6.0)):
	return [ random_field(grid, seed * 100003 + i, band=band) for i in range(size) ]


def _conditions(config, params, op, grid):
	nu = config.viscosity
	try:
		if config.condition_path == 'general':
			c0_emp = estimate_c0(op, smooth_corpus(grid, TWIN_CORPUS_SIZE, config.verify.seed))
			return dict(check_conditions_general(params, nu, grid.lambda1, c0_emp).describe(), c0_emp=c0_emp)
		if not hasattr(op, 'next_eigenvalue'):
			raise ValueError("the fourier condition path needs a fourier observer")
		return check_conditions_fourier(params, nu, grid.lambda1, op.next_eigenvalue).describe()
	except ValueError as e:
		# Reports are always written, even when there's nothing to evaluate
		return {'path': config.condition_path, 'overall': False, 'error': str(e), 'conditions': []}


def _initial_guess(config, grid, bounds):
	if config.condition_path == 'fourier':
		return random_field(grid, config.nudging.v0_seed, amplitude=bounds['M0_emp'], norm='l2')
	return random_field(grid, config.nudging.v0_seed, amplitude=bounds['M1_emp'], norm='h1')


def _stats_reports(config, twin, params, lambda1, start, ladder):
	observables = [ get_observable(name, config.viscosity) for name in config.stats.observables ]
	fields = [ f for pair in twin.samples for f in pair ]
	t_end = twin.diagnostics.times[-1]
	reports = []
	for observable in observables:
		observable = measure_lipschitz(observable, fields)
		u_series = twin.reference_series[observable.name]
		v_series = twin.assimilated_series[observable.name]
		report = compare_averages(u_series, v_series, observable, (start, t_end), params.bounds.e1, lambda1, params.safety_c)
		entry = report.describe()
		if ladder:
			entry['ladder'] = average_ladder(u_series, v_series, observable, start, ladder, params.bounds.e1, lambda1, params.safety_c).describe()
		reports.append(entry)
	return reports


def twin_experiment(config, out_dir, reference_dir=None, ladder=None):
	'''The twin run behind both `twin` and `stats`. Returns the summary document.'''
	_prepare(out_dir)
	u_ref, g, bounds = load_spinup(config, reference_dir or out_dir)
	grid = config.grid_spec()
	cfg = config.solver_config()
	nu = config.viscosity
	obs = config.observation

	op = get_observer(grid, obs.operator_spec())
	model = NoiseModel(epsilon=obs.epsilon, seed=obs.seed, distribution=obs.distribution)
	e0_bound, e1_bound = op.noise_bounds(obs.epsilon)
	attractor = AttractorBounds(bounds['M0_emp'], bounds['M1_emp'], e0_bound, e1_bound)
	params = NudgingParams(beta=config.nudging.beta, kappa=obs.kappa, operator=op, safety_c=config.nudging.safety_c, bounds=attractor)

	conditions = _conditions(config, params, op, grid)
	mention("Conditions ({0}): {1}".format(conditions['path'], verdict(conditions['overall'])))

	ladder = list(ladder or [])
	duration = config.run.duration
	start = config.stats.start
	if ladder:
		start = start if start is not None else 0.5 * duration
		duration = max(duration, start + max(ladder))
	elif start is None:
		start = 0.5 * duration

	times = observation_times(obs.kappa, duration)
	v0 = _initial_guess(config, grid, bounds)
	debug("Twin: {0} observations at kappa={1}, |v0|={2:.4g}, |u0|={3:.4g}".format(len(times), obs.kappa, norms(v0).l2, norms(u_ref).l2))
	observables = [ get_observable(name, nu) for name in config.stats.observables ]

	snapshot_hook = None
	if config.run.snapshot_stride:
		snapshot_dir = _prepare(os.path.join(out_dir, 'snapshots'))
		def snapshot_hook(n, t, u, v):
			if n % config.run.snapshot_stride:
				return
			for label, field in (('u', u), ('v', v)):
				check_structure(field, "{0} at t={1}".format(label, t))
				write_snapshot(os.path.join(snapshot_dir, "{0}_{1:05d}.ndg2".format(label, n)), field)

	twin = run_twin(u_ref, v0, g, params, cfg, times, model, duration,
		stride=config.solver.sample_stride, observables=observables,
		lipschitz_samples=config.stats.lipschitz_samples, on_observation=snapshot_hook)
	if config.run.export_stream:
		export_stream(config, out_dir, reference_dir=reference_dir)

	for label, field in (('reference end state', twin.u_end), ('assimilated end state', twin.v_end)):
		check_structure(field, label)

	norm = 'l2' if config.condition_path == 'fourier' else 'h1'
	_, w_obs = twin.diagnostics.at_observations(norm)
	fit = fit_contraction(w_obs).describe() if len(w_obs) >= 10 else None

	uniform_bound = 3 * (bounds['M1_emp'] + e1_bound)
	summary = {
		'parameters': {
			'beta': params.beta, 'kappa': params.kappa, 'beta_kappa': params.beta_kappa,
			'safety_c': params.safety_c, 'epsilon': obs.epsilon, 'nu': nu,
			'lambda1': grid.lambda1, 'h_eff': op.h_eff, 'path': config.condition_path,
		},
		'operator':        op.describe(),
		'bounds':          attractor.describe(),
		'E0_measured':     twin.e0_measured,
		'E1_measured':     twin.e1_measured,
		'conditions':      conditions,
		'fit':             fit,
		'theta_predicted': predicted_theta(params, nu, grid.lambda1, config.condition_path) if params.beta > 0 else None,
		'norm':            norm,
		'initial_error':   w_obs[0],
		'final_error':     w_obs[-1],
		'limsup_proxy':    twin.diagnostics.limsup_proxy(norm),
		'max_v_h1':        twin.diagnostics.max_v_h1,
		'uniform_bound':   uniform_bound,
		'uniform_bound_ok': twin.diagnostics.max_v_h1 <= uniform_bound,
		'steps':           twin.steps,
		'config':          config.model_dump(mode='json'),
	}

	stats = _stats_reports(config, twin, params, grid.lambda1, start, [ T * config.viscous_time for T in ladder ])

	twin.diagnostics.to_csv(os.path.join(out_dir, 'diagnostics.csv'))
	for name, series in twin.reference_series.items():
		series.to_csv(os.path.join(out_dir, 'reference_{0}.csv'.format(name)))
		twin.assimilated_series[name].to_csv(os.path.join(out_dir, 'assimilated_{0}.csv'.format(name)))
	write_json(os.path.join(out_dir, 'summary.json'), summary)
	write_json(os.path.join(out_dir, 'stats.json'), {'reports': stats, 'E1': e1_bound, 'config': config.model_dump(mode='json')})
	write_snapshot(os.path.join(out_dir, 'v_end.ndg2'), twin.v_end)
	write_snapshot(os.path.join(out_dir, 'u_end.ndg2'), twin.u_end)

	if fit is not None:
		mention("theta_emp={0:.4g} plateau_emp={1:.4e} (|w0|={2:.4e})".format(fit['theta_emp'], fit['plateau_emp'], w_obs[0]))
	summary['stats'] = stats
	return summary


def cmd_twin(config, out_dir):
	return twin_experiment(config, out_dir)


def cmd_stats(config, out_dir):
	ladder = config.stats.ladder or [50.0, 100.0, 200.0]
	return twin_experiment(config, out_dir, ladder=ladder)


def export_stream(config, out_dir, reference_dir=None):
	'''Write the observations of the reference for a twin run, without assimilating.'''
	u_ref, g, _ = load_spinup(config, reference_dir or out_dir)
	obs = config.observation
	times = observation_times(obs.kappa, config.run.duration)
	reference = integrate(u_ref, g, times[0], config.run.duration, config.solver_config(), checkpoints=times, stride=config.solver.sample_stride)
	op = get_observer(config.grid_spec(), obs.operator_spec())
	model = NoiseModel(epsilon=obs.epsilon, seed=obs.seed, distribution=obs.distribution)
	stream = observe_trajectory(reference, times, op, model, kappa=obs.kappa, config=config.model_dump(mode='json'))
	stream.export(os.path.join(out_dir, 'stream'))
	return stream


def _sweep_value(config, axis, value):
	if axis == 'beta':
		return config.updated({'nudging': {'beta': value}})
	if axis == 'kappa':
		return config.updated({'observation': {'kappa': value}})
	if axis == 'epsilon':
		return config.updated({'observation': {'epsilon': value}})
	if config.observation.kind == 'fourier':
		return config.updated({'observation': {'modes': int(value), 'k_squared_cut': None}})
	return config.updated({'observation': {'cells_per_axis': int(value)}})


def _sweep_point(job):
	config, axis, value, out_dir, reference_dir = job
	set_fft_workers(1)
	point_dir = os.path.join(out_dir, '{0}_{1:g}'.format(axis, value))
	row = {'value': value, 'theta_emp': '', 'plateau_emp': '', 'E1': '', 'stats_diff': '', 'diverged': False, 'conditions_satisfied': ''}
	try:
		summary = twin_experiment(_sweep_value(config, axis, value), point_dir, reference_dir=reference_dir)
	except (BlowUp, CFLViolation) as e:
		mention(red("{0}={1:g} diverged: {2}".format(axis, value, e)))
		row['diverged'] = True
		return row

	row['conditions_satisfied'] = summary['conditions']['overall']
	row['E1'] = summary['bounds']['E1']
	if summary['stats']:
		# the first configured observable
		row['stats_diff'] = summary['stats'][0]['diff']
	if summary['fit'] is not None:
		row['theta_emp'] = summary['fit']['theta_emp']
		row['plateau_emp'] = summary['fit']['plateau_emp']
	return row


def _noise_exponent(rows):
	'''Power p in stats_diff ~ E1^p over the rows that ran, None if it can't be fitted.'''
	points = [ (row['E1'], row['stats_diff']) for row in rows if not row['diverged'] and row['stats_diff'] != '' ]
	try:
		return scaling_exponent([ p[0] for p in points ], [ p[1] for p in points ])
	except ValueError as e:
		debug("No noise exponent: {0}".format(e))
		return None


def cmd_sweep(config, out_dir, axis=None, values=None, threads=1):
	axis = axis or config.sweep.axis
	values = list(values if values is not None else config.sweep.values)
	if axis is None or not values:
		raise InvalidConfig("A sweep needs an axis and at least one value")

	_prepare(out_dir)
	reference_dir = out_dir
	if not os.path.exists(os.path.join(out_dir, BOUNDS_FILE)):
		cmd_spinup(config, out_dir)

	jobs = [ (config, axis, value, out_dir, reference_dir) for value in values ]
	quiet = not debuglog.DEBUG
	if threads > 1:
		with ProcessPoolExecutor(max_workers=threads) as pool:
			rows = list(tqdm(pool.map(_sweep_point, jobs), total=len(jobs), desc='sweep', disable=quiet))
	else:
		rows = [ _sweep_point(job) for job in tqdm(jobs, desc='sweep', disable=quiet) ]

	columns = ('value', 'theta_emp', 'plateau_emp', 'E1', 'stats_diff', 'diverged', 'conditions_satisfied')
	write_csv(os.path.join(out_dir, 'sweep.csv'), columns, ( [ row[c] for c in columns ] for row in rows ))
	exponent = _noise_exponent(rows) if axis == 'epsilon' else None
	if exponent is not None:
		mention("stats diff ~ E1^{0:.3g}".format(exponent))
	write_json(os.path.join(out_dir, 'sweep.json'), {'axis': axis, 'rows': rows, 'stats_exponent': exponent, 'config': config.model_dump(mode='json')})
	return rows


def _verify_volume_average(grid, cells, settings, corpus):
	op = get_observer(grid, {'kind': 'volume_average', 'cells_per_axis': cells})
	model = NoiseModel(epsilon=settings.epsilon, seed=settings.seed)
	e0_bound, e1_bound = op.noise_bounds(settings.epsilon)
	constant = SpectralField.from_physical(grid, np.stack((np.full(grid.shape[1:], 0.7), np.full(grid.shape[1:], -1.3))))

	l2_violations = h1_violations = 0
	worst = [0.0, 0.0]
	for n in tqdm(range(settings.noise_draws), desc='noise {0}'.format(cells), disable=not debuglog.DEBUG):
		size = norms(draw_noise(model, n, op))
		worst[0] = max(worst[0], size.l2)
		worst[1] = max(worst[1], size.h1)
		l2_violations += size.l2 > e0_bound
		h1_violations += size.h1 > e1_bound

	partition_error = float(np.max(np.abs(op.partition_sum() - 1)))
	constant_error = norms(op.apply(constant) - constant).l2 / norms(constant).l2
	result = {
		'cells_per_axis':  cells,
		'h_eff':           op.h_eff,
		'c0_emp':          estimate_c0(op, corpus),
		'c1_emp':          estimate_c1(op, corpus + [constant]),
		'C0':              op.gradient_constant(),
		'C1':              op.overlap_count,
		'partition_error': partition_error,
		'constant_error':  constant_error,
		'E0_bound':        e0_bound,
		'E1_bound':        e1_bound,
		'max_noise_l2':    worst[0],
		'max_noise_h1':    worst[1],
		'l2_violations':   int(l2_violations),
		'h1_violations':   int(h1_violations),
	}
	result['passed'] = bool(partition_error <= 1e-12 and constant_error <= 1e-12 and l2_violations == 0 and h1_violations == 0 and math.isfinite(result['c0_emp']))
	return result


def cmd_verify_observers(config, out_dir):
	_prepare(out_dir)
	grid = config.grid_spec()
	settings = config.verify
	corpus = smooth_corpus(grid, settings.corpus_size, settings.seed, band=tuple(settings.corpus_band))

	volume = []
	for cells in settings.cells_per_axis:
		result = _verify_volume_average(grid, cells, settings, corpus)
		mention("volume_average cells={0}: c0={1:.4g} c1={2:.4g} {3}".format(cells, result['c0_emp'], result['c1_emp'], verdict(result['passed'])))
		volume.append(result)

	c0_values = [ r['c0_emp'] for r in volume ]
	c0_spread = max(c0_values) / min(c0_values) if min(c0_values) > 0 else math.inf

	fourier_op = get_observer(grid, {'kind': 'fourier', 'modes': settings.fourier_modes})
	fourier = {
		'modes':  settings.fourier_modes,
		'h_eff':  fourier_op.h_eff,
		'c0_emp': estimate_c0(fourier_op, corpus),
		'c1_emp': estimate_c1(fourier_op, corpus),
	}
	fourier['passed'] = bool(fourier['c0_emp'] <= 1 and fourier['c1_emp'] <= 1 + 1e-12)
	mention("fourier m={0}: c0={1:.4g} c1={2:.4g} {3}".format(settings.fourier_modes, fourier['c0_emp'], fourier['c1_emp'], verdict(fourier['passed'])))

	report = {
		'volume_average': volume,
		'c0_spread':      c0_spread,
		'c0_uniform':     c0_spread < 2,
		'fourier':        fourier,
		'config':         config.model_dump(mode='json'),
	}
	report['passed'] = bool(all( r['passed'] for r in volume ) and report['c0_uniform'] and fourier['passed'])
	write_json(os.path.join(out_dir, 'verify.json'), report)

	if not report['passed']:
		raise InvariantViolation("Observer verification failed, see {0}".format(os.path.join(out_dir, 'verify.json')))
	mention(green("All observer checks passed"))
	return report
