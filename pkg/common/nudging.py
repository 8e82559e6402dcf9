"""
Discrete-in-time nudging.

Between observation times t_n and t_{n+1} the assimilating solution v solves
the NSE with the extra forcing

    extra_n = -beta P_sigma( I_h(v(t_n)) - obs_n )

held constant over the interval. The run is a chain of ordinary solves glued
at the observation times, all driven by one Marcher so the step schedule is
exactly the one integrate() would use with the observation times as
checkpoints.

The condition checkers evaluate the hypotheses of the convergence results
with safety_c standing in for every unknown absolute constant. They're
advisory: nothing refuses to run because a condition failed.
"""

import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from common.debuglog import debug, mention
from common.localconfig import LIMSUP_FRACTION
from common.nse_solver import Marcher, Trajectory
from common.observer_backend import ObservationGapExceeded, observe_state
from common.spectral_core import project_leray, norms
from common.snapshot_io import write_csv
from common.statistics import ObservableSeries


class TimeGridMismatch(ValueError): pass


@dataclass(frozen=True)
class AttractorBounds:
	m0: float
	m1: float
	e0: float = 0.0
	e1: float = 0.0

	def describe(self):
		return {'M0': self.m0, 'M1': self.m1, 'E0': self.e0, 'E1': self.e1}


@dataclass(frozen=True)
class NudgingParams:
	beta: float
	kappa: float
	operator: object
	safety_c: float = 1.0
	bounds: AttractorBounds = AttractorBounds(0.0, 0.0)

	def __post_init__(self):
		if not self.beta >= 0:
			raise ValueError("beta must be non-negative, got {0}".format(self.beta))
		if not self.kappa >= 0:
			raise ValueError("kappa must be non-negative, got {0}".format(self.kappa))
		if not self.safety_c > 0:
			raise ValueError("safety_c must be positive, got {0}".format(self.safety_c))

	@property
	def beta_kappa(self):
		return self.beta * self.kappa


@dataclass
class ConditionRecord:
	name: str
	lhs: float
	rhs: float
	satisfied: bool
	terms: dict = dataclass_field(default_factory=dict)

	def describe(self):
		return {'name': self.name, 'lhs': self.lhs, 'rhs': self.rhs, 'satisfied': self.satisfied, 'terms': self.terms}


@dataclass
class ConditionReport:
	path: str
	records: list

	@property
	def overall(self):
		return all( r.satisfied for r in self.records )

	def __getitem__(self, name):
		for record in self.records:
			if record.name == name:
				return record
		raise KeyError(name)

	def describe(self):
		return {'path': self.path, 'overall': self.overall, 'conditions': [ r.describe() for r in self.records ]}


def _ratio(numerator, denominator):
	return numerator / denominator if denominator > 0 else math.inf

def _require_positive(**values):
	for name, value in values.items():
		if not value > 0:
			raise ValueError("{0} must be positive, got {1}".format(name, value))


def _kappa_record(params, terms):
	c, beta = params.safety_c, params.beta
	rhs = (c / beta) * min(terms.values())
	return ConditionRecord('kappa', params.kappa, rhs, params.kappa <= rhs, terms)

def _beta_kappa_record(params):
	return ConditionRecord('beta_kappa', params.beta_kappa, 0.5, params.beta_kappa <= 0.5)


def check_conditions_fourier(params, nu, lambda1, lambda_next):
	'''Hypotheses for the Fourier-mode observer, measured in L2.'''
	_require_positive(beta=params.beta, nu=nu, lambda1=lambda1, lambda_next=lambda_next)
	c, beta = params.safety_c, params.beta
	b = params.bounds
	m0e0 = b.m0 + b.e0
	m0m1 = b.m0 * b.m1
	nl = nu * lambda1

	terms = {
		'one':                     1.0,
		'nu/(M0+E0)':              _ratio(nu, m0e0),
		'nu^2/(M0+E0)^2':          _ratio(nu ** 2, m0e0 ** 2),
		'nu^1.5 beta^0.5/(M0 M1)': _ratio(nu ** 1.5 * math.sqrt(beta), m0m1),
		'nu^2 lambda1^0.5/(M0 M1)': _ratio(nu ** 2 * math.sqrt(lambda1), m0m1),
		'(nu lambda1/beta)^(1/3)': (nl / beta) ** (1.0 / 3),
		'(nu lambda1/beta)^(1/2)': (nl / beta) ** 0.5,
		'(nu lambda1/beta)^2':     (nl / beta) ** 2,
	}

	beta_rhs = c * b.m1 ** 2 / nu
	modes_rhs = 6 * beta / nu
	return ConditionReport('fourier', [
		ConditionRecord('beta', beta, beta_rhs, beta >= beta_rhs),
		ConditionRecord('modes', lambda_next, modes_rhs, lambda_next >= modes_rhs),
		_kappa_record(params, terms),
		_beta_kappa_record(params),
	])


def check_conditions_general(params, nu, lambda1, c0_emp, h=None):
	'''Hypotheses for a general interpolant, measured in H1. h defaults to the operator's h_eff.'''
	_require_positive(beta=params.beta, nu=nu, lambda1=lambda1, c0_emp=c0_emp)
	if h is None:
		h = params.operator.h_eff
	c, beta = params.safety_c, params.beta
	b = params.bounds
	r1 = b.m1 + b.e1
	m0m1 = b.m0 * b.m1
	nl = nu * lambda1

	if r1 > 0:
		log_factor = 1 + math.log(r1 / (nu * math.sqrt(lambda1)))
		beta_rhs = c * (r1 ** 2 / nu) * log_factor
	else:
		log_factor = 1.0
		beta_rhs = 0.0

	terms = {
		'one':                      1.0,
		'nu^1.5 beta^0.5/(M0 M1)':  _ratio(nu ** 1.5 * math.sqrt(beta), m0m1),
		'nu^2 lambda1^0.5/(M0 M1)': _ratio(nu ** 2 * math.sqrt(lambda1), m0m1),
		'nu^2 lambda1/(M1+E1)^2':   _ratio(nu ** 2 * lambda1, r1 ** 2),
		'(nu lambda1/beta)^(1/2)':  (nl / beta) ** 0.5,
		'(nu lambda1/beta)^2':      (nl / beta) ** 2,
	}

	h_rhs = (1.0 / (2 * c0_emp)) * math.sqrt(nu / beta)
	return ConditionReport('general', [
		ConditionRecord('beta', beta, beta_rhs, beta >= beta_rhs, {'log_factor': log_factor}),
		_kappa_record(params, terms),
		ConditionRecord('h', h, h_rhs, h <= h_rhs),
		_beta_kappa_record(params),
	])


def predicted_theta(params, nu, lambda1, path='fourier', R=None):
	'''
	Contraction factor per observation interval implied by the bounds, with
	safety_c for the constant. Values >= 1 mean no contraction is predicted.
	'''
	b = params.bounds
	beta, kappa, c = params.beta, params.kappa, params.safety_c
	if path == 'fourier':
		R = 2 * (b.m0 + b.e0) if R is None else R
		r_term = R ** 2 / nu ** 2
	elif path == 'general':
		R = 2 * b.m1 + 3 * b.e1 if R is None else R
		r_term = R ** 2 / (nu ** 2 * lambda1)
	else:
		raise ValueError("Unknown condition path {0!r}".format(path))

	gamma = c * beta * kappa * (1 + b.m0 * b.m1 / (nu ** 2 * math.sqrt(lambda1)) + r_term + beta ** 2 / (nu * lambda1) ** 2)
	decay = math.exp(-0.5 * beta * kappa)
	return math.sqrt(decay + gamma * (1 - decay))


def nudging_forcing(v, observation, beta, op):
	'''-beta P_sigma(I_h(v) - observation)'''
	return -beta * project_leray(op.apply(v) - observation)


def _check_stream(stream, params, t_end):
	t0 = stream.times[0]
	if not t_end > t0:
		raise ValueError("t_end={0} is not after the first observation at {1}".format(t_end, t0))
	if stream.max_gap > params.kappa * (1 + 1e-12):
		raise ObservationGapExceeded("Stream gap {0} exceeds kappa={1}".format(stream.max_gap, params.kappa))
	if t_end > stream.times[-1] + params.kappa * (1 + 1e-12):
		raise ObservationGapExceeded("Stream ends at {0}, too early to assimilate up to {1} with kappa={2}".format(stream.times[-1], t_end, params.kappa))


def _intervals(times, t_end):
	'''(n, t_n, t_{n+1} or t_end) for every observation before t_end.'''
	times = [ t for t in times if t < t_end ]
	for n, t in enumerate(times):
		yield n, t, (times[n + 1] if n + 1 < len(times) else t_end)


def assimilate(v0, stream, g, params, cfg, t_end, stride=1):
	_check_stream(stream, params, t_end)
	op = params.operator
	observation_times = set(stream.times)

	trajectory = Trajectory(stride=stride)
	trajectory.append(stream.times[0], v0, checkpoint=True)
	marcher = Marcher(cfg, trajectory, stride=stride)

	state = v0
	for n, t_n, t_next in _intervals(stream.times, t_end):
		extra = nudging_forcing(state, stream.observations[n], params.beta, op)
		state = marcher.march(state, g + extra, t_n, t_next, checkpoint=(t_next in observation_times))

	debug("Assimilated over [{0}, {1}] with beta={2} in {3} steps".format(stream.times[0], t_end, params.beta, marcher.steps_taken))
	return trajectory


class DiagnosticSeries(object):
	COLUMNS = ('t', 'w_l2', 'w_h1', 'v_l2', 'v_h1', 'is_observation_time')

	def __init__(self):
		self.times = []
		self.w_l2 = []
		self.w_h1 = []
		self.v_l2 = []
		self.v_h1 = []
		self.is_observation_time = []

	def append(self, t, u, v, observation_time):
		w = norms(v - u)
		size = norms(v)
		self.times.append(t)
		self.w_l2.append(w.l2)
		self.w_h1.append(w.h1)
		self.v_l2.append(size.l2)
		self.v_h1.append(size.h1)
		self.is_observation_time.append(bool(observation_time))

	def __len__(self):
		return len(self.times)

	def rows(self):
		return zip(self.times, self.w_l2, self.w_h1, self.v_l2, self.v_h1, [ int(x) for x in self.is_observation_time ])

	def to_csv(self, path):
		write_csv(path, self.COLUMNS, self.rows())

	def _norm(self, norm):
		if norm not in ('l2', 'h1'):
			raise ValueError("norm must be 'l2' or 'h1', got {0!r}".format(norm))
		return np.asarray(self.w_l2 if norm == 'l2' else self.w_h1)

	def at_observations(self, norm='l2'):
		mask = np.asarray(self.is_observation_time, dtype=bool)
		return np.asarray(self.times)[mask], self._norm(norm)[mask]

	def limsup_proxy(self, norm='l2', fraction=LIMSUP_FRACTION):
		'''max of |w| over the final fraction of the window'''
		times = np.asarray(self.times)
		cutoff = times[-1] - fraction * (times[-1] - times[0])
		return float(self._norm(norm)[times >= cutoff].max())

	@property
	def max_v_h1(self):
		return max(self.v_h1)


def error_series(u, v, observation_times=None):
	'''Diagnostics of w = v - u on the common sample times of two trajectories.'''
	if list(u.times) != list(v.times):
		raise TimeGridMismatch("Trajectories are sampled at different times ({0} vs {1} samples)".format(len(u), len(v)))
	if observation_times is None:
		observation_times = v.checkpoints
	observation_times = set(observation_times)

	series = DiagnosticSeries()
	for (t, u_t), v_t in zip(u, v.states):
		series.append(t, u_t, v_t, t in observation_times)
	return series


@dataclass
class ContractionFit:
	theta_emp: float
	plateau_emp: float
	converged: bool
	samples: int

	def describe(self):
		return {'theta_emp': self.theta_emp, 'plateau_emp': self.plateau_emp, 'converged': self.converged, 'samples': self.samples}


def fit_contraction(values):
	'''Least-squares w_{n+1} = theta w_n + b; plateau is the fixed point b/(1 - theta).'''
	w = np.asarray(values, dtype=float)
	if w.size < 10:
		raise ValueError("Need at least 10 observation-time errors to fit, got {0}".format(w.size))
	if not np.any(w):
		return ContractionFit(theta_emp=math.nan, plateau_emp=0.0, converged=True, samples=int(w.size))

	design = np.column_stack((w[:-1], np.ones(w.size - 1)))
	(theta, offset), *_ = np.linalg.lstsq(design, w[1:], rcond=None)
	theta = float(theta)
	offset = float(offset)
	if theta < 1:
		plateau = max(0.0, offset / (1 - theta))
	else:
		plateau = math.inf
	return ContractionFit(theta_emp=theta, plateau_emp=plateau, converged=theta < 1, samples=int(w.size))


@dataclass
class TwinResult:
	diagnostics: DiagnosticSeries
	reference_series: dict
	assimilated_series: dict
	noise_norms: list
	samples: list
	u_end: object
	v_end: object
	steps: int

	@property
	def e0_measured(self):
		return max((n[0] for n in self.noise_norms), default=0.0)

	@property
	def e1_measured(self):
		return max((n[1] for n in self.noise_norms), default=0.0)


def run_twin(u0, v0, g, params, cfg, times, model, t_end, stride=1, observables=(), lipschitz_samples=32, on_observation=None):
	'''
	Advance the reference u and the assimilating v together, one observation
	interval at a time, observing u as it goes. Only norms, observable values
	and a thinned set of (u, v) samples are kept. on_observation(n, t_n, u, v) is
	called at every observation time before the interval is run.

	v is bit-for-bit what assimilate() gives on observe_trajectory() of the
	same reference.
	'''
	times = [ float(t) for t in times ]
	gaps = np.diff(times)
	if gaps.size and gaps.max() > params.kappa * (1 + 1e-12):
		raise ObservationGapExceeded("Observation gap {0} exceeds kappa={1}".format(gaps.max(), params.kappa))
	if not t_end > times[0] or t_end > times[-1] + params.kappa * (1 + 1e-12):
		raise ObservationGapExceeded("Observations over [{0}, {1}] can't cover t_end={2} with kappa={3}".format(times[0], times[-1], t_end, params.kappa))

	op = params.operator
	observation_times = set(times)
	diagnostics = DiagnosticSeries()
	u_series = { o.name: ObservableSeries(o.name) for o in observables }
	v_series = { o.name: ObservableSeries(o.name) for o in observables }

	def record_pair(t, u, v, observation_time):
		diagnostics.append(t, u, v, observation_time)
		for o in observables:
			u_series[o.name].append(t, o(u))
			v_series[o.name].append(t, o(v))

	buffers = {'u': [], 'v': []}
	u_marcher = Marcher(cfg, lambda t, s, c: buffers['u'].append((t, s)), stride=stride)
	v_marcher = Marcher(cfg, lambda t, s, c: buffers['v'].append((t, s)), stride=stride)

	n_intervals = sum( 1 for t in times if t < t_end )
	keep_every = max(1, n_intervals // max(1, lipschitz_samples))

	u, v = u0, v0
	record_pair(times[0], u, v, True)
	noise_norms = []
	samples = []
	for n, t_n, t_next in _intervals(times, t_end):
		if on_observation is not None:
			on_observation(n, t_n, u, v)
		observation, size = observe_state(u, n, op, model)
		noise_norms.append(size)
		if n % keep_every == 0:
			samples.append((u, v))

		extra = nudging_forcing(v, observation, params.beta, op)
		u = u_marcher.march(u, g, t_n, t_next)
		v = v_marcher.march(v, g + extra, t_n, t_next)

		for (t, u_t), (t_v, v_t) in zip(buffers['u'], buffers['v']):
			if t != t_v:
				raise TimeGridMismatch("Reference and assimilating runs fell out of step at t={0}/{1}".format(t, t_v))
			record_pair(t, u_t, v_t, t == t_next and t_next in observation_times)
		buffers['u'].clear()
		buffers['v'].clear()

		if n % 50 == 0:
			debug("twin: t={0:.5g} |w|={1:.4e}".format(t_next, diagnostics.w_l2[-1]))

	mention("Twin run finished at t={0:.5g}: |w|={1:.4e}, {2} steps per solution".format(t_end, diagnostics.w_l2[-1], u_marcher.steps_taken))
	return TwinResult(
		diagnostics        = diagnostics,
		reference_series   = u_series,
		assimilated_series = v_series,
		noise_norms        = noise_norms,
		samples            = samples,
		u_end              = u,
		v_end              = v,
		steps              = u_marcher.steps_taken,
	)
