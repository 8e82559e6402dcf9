"""
Time averages of scalar observables, and the comparisons between the
averages along the reference and the assimilating solution.

Long-time limits are approximated by finite windows. average_ladder() runs
the comparison over windows of growing length so the trend can be judged,
nothing here claims to compute an actual limit.
"""

import math
import itertools
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import trapezoid

from common.debuglog import debug
from common.spectral_core import norms
from common.snapshot_io import write_csv


class WindowError(ValueError): pass


# Non-monotonicity allowed between consecutive rungs of an average ladder
LADDER_SLACK = 0.10

DEFAULT_MODES = ((1, 0), (0, 1), (1, 1))


@dataclass(frozen=True)
class Observable:
	name: str
	evaluator: object
	lipschitz_emp: float = None

	def __call__(self, u):
		return float(self.evaluator(u))


def _mode_amplitude(k1, k2):
	def evaluate(u):
		return float(np.sqrt(np.sum(np.abs(u.mode(k1, k2)) ** 2)))
	return evaluate


def builtin_observables(nu=1.0, modes=DEFAULT_MODES):
	observables = [
		Observable('energy',      lambda u: norms(u).energy),
		Observable('enstrophy',   lambda u: norms(u).enstrophy),
		Observable('dissipation', lambda u: nu * norms(u).h1 ** 2),
	]
	for k1, k2 in modes:
		observables.append(Observable('mode_{0}_{1}'.format(k1, k2), _mode_amplitude(k1, k2)))
	return observables


def get_observable(name, nu=1.0):
	for observable in builtin_observables(nu):
		if observable.name == name:
			return observable
	raise LookupError("No builtin observable called {0!r}".format(name))


def measure_lipschitz(observable, fields):
	'''
	Largest |Phi(u) - Phi(v)| / |u - v| over all pairs drawn from fields.
	Returns a copy of the observable with lipschitz_emp filled in.
	'''
	fields = list(fields)
	values = [ observable(f) for f in fields ]
	best = 0.0
	for i, j in itertools.combinations(range(len(fields)), 2):
		distance = norms(fields[i] - fields[j]).l2
		if distance == 0:
			continue
		best = max(best, abs(values[i] - values[j]) / distance)
	debug("lipschitz_emp({0}) = {1:.6g} over {2} fields".format(observable.name, best, len(fields)))
	return replace(observable, lipschitz_emp=best)


class ObservableSeries(object):
	'''Scalar samples (t, Phi(u(t))), for when the fields themselves weren't kept.'''

	def __init__(self, name, times=None, values=None):
		self.name = name
		self.times = [] if times is None else [ float(t) for t in times ]
		self.values = [] if values is None else [ float(v) for v in values ]

	def append(self, t, value):
		if self.times and not t > self.times[-1]:
			raise ValueError("Sample at t={0} does not follow t={1}".format(t, self.times[-1]))
		self.times.append(float(t))
		self.values.append(float(value))

	def __len__(self):
		return len(self.times)

	@classmethod
	def from_trajectory(klass, trajectory, observable):
		return klass(observable.name, trajectory.times, [ observable(state) for state in trajectory.states ])

	def to_csv(self, path):
		write_csv(path, ('t', self.name), zip(self.times, self.values))


def _as_series(source, observable):
	if isinstance(source, ObservableSeries):
		return source
	if observable is None:
		raise ValueError("Need an observable to average a trajectory")
	return ObservableSeries.from_trajectory(source, observable)


def time_average(source, observable=None, window=None):
	'''
	(1/T) int_{T0}^{T1} Phi dt by the trapezoidal rule on the stored samples.
	Window ends that fall between samples are linearly interpolated.
	'''
	series = _as_series(source, observable)
	if not len(series):
		raise WindowError("Nothing to average, the series is empty")
	times = np.asarray(series.times)
	values = np.asarray(series.values)

	t0, t1 = (times[0], times[-1]) if window is None else window
	span_tolerance = 1e-12 * max(1.0, abs(times[-1]))
	if not t1 > t0:
		raise WindowError("Window [{0}, {1}] is empty".format(t0, t1))
	if t0 < times[0] - span_tolerance or t1 > times[-1] + span_tolerance:
		raise WindowError("Window [{0}, {1}] lies outside the samples [{2}, {3}]".format(t0, t1, times[0], times[-1]))

	inside = (times >= t0) & (times <= t1)
	if not np.any(inside):
		raise WindowError("No samples inside window [{0}, {1}]".format(t0, t1))

	t0 = max(t0, times[0])
	t1 = min(t1, times[-1])
	grid = np.concatenate(([t0], times[inside], [t1]))
	samples = np.interp(grid, times, values)
	return float(trapezoid(samples, grid) / (t1 - t0))


@dataclass
class AverageReport:
	observable: str
	window: tuple
	mean_u: float
	mean_v: float
	diff: float
	bound: float
	lipschitz_emp: float
	e1: float

	@property
	def T(self):
		return self.window[1] - self.window[0]

	@property
	def within_bound(self):
		return self.diff <= self.bound

	def describe(self):
		return {
			'observable':    self.observable,
			'window':        list(self.window),
			'T':             self.T,
			'mean_u':        self.mean_u,
			'mean_v':        self.mean_v,
			'diff':          self.diff,
			'bound':         self.bound,
			'lipschitz_emp': self.lipschitz_emp,
			'E1':            self.e1,
			'within_bound':  self.within_bound,
		}


def compare_averages(u, v, observable, window, e1, lambda1, safety_c=1.0, lipschitz=None):
	'''u and v are trajectories or ObservableSeries over the same window.'''
	if lipschitz is None:
		lipschitz = observable.lipschitz_emp
	if lipschitz is None:
		if e1 != 0:
			raise ValueError("{0} has no lipschitz_emp, run measure_lipschitz() first".format(observable.name))
		lipschitz = 0.0

	mean_u = time_average(u, observable, window)
	mean_v = time_average(v, observable, window)
	return AverageReport(
		observable    = observable.name,
		window        = tuple(window),
		mean_u        = mean_u,
		mean_v        = mean_v,
		diff          = abs(mean_v - mean_u),
		bound         = safety_c * lipschitz * e1 / math.sqrt(lambda1),
		lipschitz_emp = lipschitz,
		e1            = e1,
	)


@dataclass
class LadderReport:
	reports: list

	@property
	def diffs(self):
		return [ r.diff for r in self.reports ]

	@property
	def decreasing(self):
		'''Each rung at most LADDER_SLACK above the previous one.'''
		d = self.diffs
		return all( later <= (1 + LADDER_SLACK) * earlier for earlier, later in zip(d, d[1:]) )

	def describe(self):
		return {
			'rungs':      [ r.describe() for r in self.reports ],
			'diffs':      self.diffs,
			'decreasing': self.decreasing,
		}


def average_ladder(u, v, observable, start, durations, e1, lambda1, safety_c=1.0):
	'''compare_averages over [start, start + T] for each T in durations.'''
	reports = [ compare_averages(u, v, observable, (start, start + T), e1, lambda1, safety_c) for T in sorted(durations) ]
	return LadderReport(reports)


def scaling_exponent(xs, ys):
	'''Slope of log y against log x, the exponent p in y ~ x^p.'''
	xs = np.asarray(xs, dtype=float)
	ys = np.asarray(ys, dtype=float)
	if xs.size < 2 or np.any(xs <= 0) or np.any(ys <= 0):
		raise ValueError("Need at least two positive points to fit a power law")
	slope, _ = np.polyfit(np.log(xs), np.log(ys), 1)
	return float(slope)
