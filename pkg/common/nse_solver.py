"""
Time integration of du/dt + nu A u + B(u,u) = g + extra on a GridSpec.

The Stokes part is handled exactly or implicitly (it's diagonal), the
advective part explicitly. The forcing g + extra is held constant within a
step and enters at its current value, never extrapolated, so a forcing that
switches at an observation time switches exactly there.

The Marcher splits every stretch between consecutive target times into
equal steps no longer than cfg.dt, so targets are hit exactly rather than
interpolated. integrate() and the assimilation loop in common.nudging both
drive a Marcher, which is what makes a beta=0 assimilation reproduce a
plain integration bit for bit.
"""

import os
import math
from dataclasses import dataclass

import numpy as np

from common.debuglog import debug, mention
from common.localconfig import CFL_LIMIT, SPINUP_MIN_VISCOUS_TIMES, SPINUP_SEED_FRACTION
from common.spectral_core import GridSpec, SpectralField, advect, project_leray, norms, random_field
from common.snapshot_io import write_csv, write_snapshot


class CFLViolation(RuntimeError): pass
class BlowUp(RuntimeError): pass
class MissingCheckpoint(LookupError): pass


SCHEMES = ('imex_cnab2', 'imex_euler', 'ifab2')


@dataclass(frozen=True)
class SolverConfig:
	viscosity: float
	dt: float
	grid: GridSpec
	scheme: str = 'imex_cnab2'

	def __post_init__(self):
		if not self.viscosity > 0:
			raise ValueError("viscosity must be positive, got {0}".format(self.viscosity))
		if not self.dt > 0:
			raise ValueError("dt must be positive, got {0}".format(self.dt))
		if self.scheme not in SCHEMES:
			raise ValueError("Unknown scheme {0!r}, pick one of {1}".format(self.scheme, SCHEMES))


@dataclass
class StepHistory:
	'''What AB2 needs from the previous step. Empty means "bootstrap".'''
	nonlinear: np.ndarray = None
	dt: float = None


def _check_grid(cfg, *fields):
	for f in fields:
		if f.grid != cfg.grid:
			raise ValueError("Field on {0} handed to a solver configured for {1}".format(f.grid, cfg.grid))


def _nonlinear(state, h):
	'''-B(u,u), after checking the step against the advective CFL limit.'''
	grid = state.grid
	coefficients, u_phys = advect(state, state)

	speed = float(np.sqrt(np.max(u_phys[0] ** 2 + u_phys[1] ** 2)))
	if not np.isfinite(speed):
		raise BlowUp("Non-finite velocity in the state being stepped")
	if speed > 0 and h > CFL_LIMIT * grid.dx / speed:
		raise CFLViolation("dt={0:.3e} exceeds the CFL limit {1:.3e} (max|u|={2:.3e})".format(h, CFL_LIMIT * grid.dx / speed, speed))

	return -project_leray(SpectralField(grid, coefficients)).coefficients


def step(state, g, extra, cfg, history=None, dt=None):
	'''
	One step of size dt (default cfg.dt). Pass the same StepHistory to
	consecutive calls to get the two-step schemes, leave it out to take a
	single self-starting step.
	'''
	_check_grid(cfg, state, g, extra)
	if history is None:
		history = StepHistory()
	h = cfg.dt if dt is None else dt
	if not h > 0:
		raise ValueError("Step size must be positive, got {0}".format(h))

	grid = cfg.grid
	c = state.coefficients
	forcing = g.coefficients + extra.coefficients
	stiffness = cfg.viscosity * grid.k_squared

	nonlinear = _nonlinear(state, h)
	if history.nonlinear is None or cfg.scheme == 'imex_euler':
		extrapolated = nonlinear
	else:
		r = h / history.dt
		extrapolated = (1 + 0.5 * r) * nonlinear - 0.5 * r * history.nonlinear

	if cfg.scheme == 'imex_cnab2':
		new = ((1 - 0.5 * h * stiffness) * c + h * (extrapolated + forcing)) / (1 + 0.5 * h * stiffness)
	elif cfg.scheme == 'imex_euler':
		new = (c + h * (extrapolated + forcing)) / (1 + h * stiffness)
	else:
		decay = np.exp(-h * stiffness)
		phi1 = np.where(stiffness > 0, -np.expm1(-h * stiffness) / np.where(stiffness > 0, stiffness, 1.0), h)
		new = decay * c + phi1 * (extrapolated + forcing)

	history.nonlinear = nonlinear
	history.dt = h

	result = project_leray(SpectralField(grid, new))
	if not result.is_finite():
		raise BlowUp("Solution went non-finite")
	return result


class Stepper(object):
	def __init__(self, cfg):
		self.cfg = cfg
		self.history = StepHistory()

	def advance(self, state, forcing, dt=None):
		'''forcing is the full right-hand side g + extra.'''
		return step(state, forcing, SpectralField.zeros(self.cfg.grid), self.cfg, history=self.history, dt=dt)


class Marcher(object):
	'''
	Steps from target to target. record(t, state, checkpoint) is called at
	every stride-th step (counted over the whole run) and at every target.
	'''

	def __init__(self, cfg, record, stride=1):
		if int(stride) != stride or stride < 1:
			raise ValueError("Sample stride must be a positive integer, got {0}".format(stride))
		self.cfg = cfg
		self.record = record
		self.stride = int(stride)
		self.stepper = Stepper(cfg)
		self.steps_taken = 0

	def march(self, state, forcing, t_start, t_target, checkpoint=True):
		span = t_target - t_start
		if not span > 0:
			raise ValueError("Target time {0} is not after {1}".format(t_target, t_start))

		n_steps = max(1, int(math.ceil(span / self.cfg.dt - 1e-9)))
		h = span / n_steps
		for k in range(1, n_steps + 1):
			state = self.stepper.advance(state, forcing, h)
			self.steps_taken += 1
			if k == n_steps:
				self.record(t_target, state, checkpoint)
			elif self.steps_taken % self.stride == 0:
				self.record(t_start + k * h, state, False)
		return state


class Trajectory(object):
	'''Samples (t, field) with strictly increasing t, plus the set of checkpoint times.'''

	def __init__(self, stride=1):
		self.stride = stride
		self.times = []
		self.states = []
		self.checkpoints = set()
		self._index = {}

	def append(self, t, state, checkpoint=False):
		if self.times and not t > self.times[-1]:
			raise ValueError("Sample at t={0} does not follow t={1}".format(t, self.times[-1]))
		self._index[t] = len(self.times)
		self.times.append(t)
		self.states.append(state)
		if checkpoint:
			self.checkpoints.add(t)

	# Marcher callback signature
	__call__ = append

	def __len__(self):
		return len(self.times)

	def __iter__(self):
		return iter(zip(self.times, self.states))

	@property
	def grid(self):
		return self.states[0].grid

	@property
	def end_state(self):
		return self.states[-1]

	def state_at(self, t):
		'''Exact lookup, there's no interpolation between samples.'''
		try:
			return self.states[self._index[t]]
		except KeyError:
			raise MissingCheckpoint("No sample at t={0}".format(t))

	def norm_rows(self):
		for t, state in self:
			report = norms(state)
			yield (t, report.l2, report.h1, report.energy, report.enstrophy)

	def to_csv(self, path):
		write_csv(path, ('t', 'l2', 'h1', 'energy', 'enstrophy'), self.norm_rows())

	def export_snapshots(self, directory, prefix='u'):
		written = []
		for i, t in enumerate(sorted(self.checkpoints)):
			path = os.path.join(directory, "{0}_{1:05d}.ndg2".format(prefix, i))
			write_snapshot(path, self.state_at(t))
			written.append(path)
		return written


def _targets(t0, t1, checkpoints):
	targets = sorted({ t for t in checkpoints if t0 < t < t1 } | { t1 })
	return targets


def integrate(u0, g, t0, t1, cfg, checkpoints=(), stride=1):
	if not t1 > t0:
		raise ValueError("Integration window [{0}, {1}] is empty".format(t0, t1))
	outside = [ t for t in checkpoints if not t0 <= t <= t1 ]
	if outside:
		raise ValueError("Checkpoints outside [{0}, {1}]: {2}".format(t0, t1, outside))
	_check_grid(cfg, u0, g)

	trajectory = Trajectory(stride=stride)
	trajectory.append(t0, u0, checkpoint=(t0 in checkpoints))
	marcher = Marcher(cfg, trajectory, stride=stride)

	wanted = set(checkpoints)
	state, t = u0, t0
	for target in _targets(t0, t1, checkpoints):
		state = marcher.march(state, g, t, target, checkpoint=(target in wanted or target == t1))
		t = target

	debug("Integrated [{0}, {1}] in {2} steps, {3} samples".format(t0, t1, marcher.steps_taken, len(trajectory)))
	return trajectory


def grashof(g, nu, lambda1):
	if not (nu > 0 and lambda1 > 0):
		raise ValueError("nu and lambda1 must be positive, got {0} and {1}".format(nu, lambda1))
	return norms(g).l2 / (nu * nu * lambda1)


def attractor_bounds(G, nu, lambda1):
	'''(M0, M1) for the periodic case: |u| <= nu G, ||u|| <= nu lambda1^(1/2) G.'''
	return nu * G, nu * math.sqrt(lambda1) * G


def make_forcing(grid, nu, grashof_target, band=(2.0, 4.0), seed=0):
	'''Time-independent, mean-free, band-limited forcing with |g| = nu^2 lambda1 G.'''
	if grashof_target < 0:
		raise ValueError("Grashof target must be non-negative, got {0}".format(grashof_target))
	return random_field(grid, seed, band=band, amplitude=nu * nu * grid.lambda1 * grashof_target)


def taylor_green(amplitude, t, nu, grid):
	'''(a sin x cos y, -a cos x sin y) exp(-2 nu t), only defined on L = 2 pi.'''
	if not np.isclose(grid.domain_side, 2 * np.pi, rtol=0, atol=1e-12):
		raise ValueError("Taylor-Green needs domain_side = 2 pi, got {0}".format(grid.domain_side))

	n = grid.n_points_per_axis
	c = np.zeros(grid.shape, dtype=np.complex128)
	a = amplitude * math.exp(-2 * nu * t) / 4
	for s1 in (1, -1):
		for s2 in (1, -1):
			c[0, s1 % n, s2 % n] = -1j * s1 * a
			c[1, s1 % n, s2 % n] =  1j * s2 * a
	return SpectralField(grid, c)


@dataclass
class SpinUpResult:
	state: SpectralField
	m0_emp: float
	m1_emp: float
	grashof: float
	duration: float
	seed: int
	steps: int = 0
	tracked: int = 0

	def describe(self):
		return {
			'M0_emp':   self.m0_emp,
			'M1_emp':   self.m1_emp,
			'G':        self.grashof,
			'duration': self.duration,
			'seed':     self.seed,
			'steps':    self.steps,
		}


def spin_up(g, cfg, duration, seed, min_viscous_times=SPINUP_MIN_VISCOUS_TIMES):
	'''
	Run from a small random field until the flow has forgotten it. M0_emp and
	M1_emp are the largest L2 and H1 norms seen over the second half.
	'''
	grid = cfg.grid
	nu = cfg.viscosity
	viscous_time = 1.0 / (nu * grid.lambda1)
	if duration < min_viscous_times * viscous_time:
		raise ValueError("Spin-up of {0} is shorter than {1} viscous times ({2})".format(duration, min_viscous_times, min_viscous_times * viscous_time))

	G = grashof(g, nu, grid.lambda1)
	u0 = random_field(grid, seed, amplitude=SPINUP_SEED_FRACTION * nu * G)
	mention("Spinning up N={0} nu={1} G={2:.4g} for {3:.4g} time units".format(grid.n_points_per_axis, nu, G, duration))

	tracker = {'m0': 0.0, 'm1': 0.0, 'count': 0}
	half = 0.5 * duration
	def track(t, state, checkpoint):
		if t >= half:
			report = norms(state)
			tracker['m0'] = max(tracker['m0'], report.l2)
			tracker['m1'] = max(tracker['m1'], report.h1)
			tracker['count'] += 1

	marcher = Marcher(cfg, track)
	state = marcher.march(u0, g, 0.0, duration)

	debug("Spin-up done: M0_emp={0:.6g} M1_emp={1:.6g} over {2} samples".format(tracker['m0'], tracker['m1'], tracker['count']))
	return SpinUpResult(
		state    = state,
		m0_emp   = tracker['m0'],
		m1_emp   = tracker['m1'],
		grashof  = G,
		duration = duration,
		seed     = seed,
		steps    = marcher.steps_taken,
		tracked  = tracker['count'],
	)
