import os
import math

import numpy as np

from common.debuglog import debug
from common.nse_solver import MissingCheckpoint
from common.snapshot_io import write_json, read_json, write_snapshot, read_snapshot
from common.spectral_core import norms

import inspect
import observe
from observe.observer import ObservationOperator, NoiseModel

# Every operator class exported from observe/__init__.py. Ordering is
# alphabetical, which doesn't matter as long as each kind is claimed once.
observers = [ x[1] for x in inspect.getmembers(observe, inspect.isclass) if issubclass(x[1], ObservationOperator) and x[1].kind ]

KNOWN_KINDS = { o.kind for o in observers }


class ObservationGapExceeded(ValueError): pass


def get_observer(grid, spec):
	'''Return an operator suitable for the spec provided'''

	for observer in observers:
		if observer.will_handle(spec):
			return observer(grid, spec)

	raise LookupError("We don't have an operator that can handle that spec: {0}".format(spec))


def draw_noise(model, n, op):
	return op.noise(model, n)


def _ratios(corpus, ratio):
	if not corpus:
		raise ValueError("Can't estimate a constant from an empty corpus")
	values = [ r for r in (ratio(phi) for phi in corpus) if r is not None ]
	return max(values) if values else 0.0


def estimate_c0(op, corpus):
	'''max |phi - I_h phi| / (h_eff ||phi||) over the corpus'''
	h = op.h_eff

	def ratio(phi):
		residual = norms(phi - op.apply(phi)).l2
		size = norms(phi)
		if size.h1 == 0 or h == 0:
			# Constants and full-rank operators: fine as long as nothing is lost
			return None if residual <= 1e-12 * size.l2 else math.inf
		return residual / (h * size.h1)

	return _ratios(corpus, ratio)


def estimate_c1(op, corpus):
	'''max |I_h phi| / |phi| over the corpus, zero members skipped'''
	def ratio(phi):
		size = norms(phi).l2
		if size == 0:
			return None
		return norms(op.apply(phi)).l2 / size

	return _ratios(corpus, ratio)


class ObservationStream(object):
	'''
	Observation times t_n and the observed fields I_h(u(t_n)) + eta_n. The
	observations are kept as the operator produced them, the Leray projection
	happens in the nudging forcing.
	'''

	def __init__(self, times, observations, kappa, operator_spec, noise=None, noise_norms=None, config=None):
		times = [ float(t) for t in times ]
		if not times:
			raise ValueError("An observation stream needs at least one observation")
		if len(times) != len(observations):
			raise ValueError("Got {0} times but {1} observations".format(len(times), len(observations)))
		gaps = np.diff(times)
		if np.any(gaps <= 0):
			raise ValueError("Observation times must be strictly increasing")
		if gaps.size and gaps.max() > kappa * (1 + 1e-12):
			raise ObservationGapExceeded("Largest observation gap {0} exceeds kappa={1}".format(gaps.max(), kappa))

		self.times = times
		self.observations = list(observations)
		self.kappa = float(kappa)
		self.operator_spec = dict(operator_spec)
		self.noise = noise if noise is not None else NoiseModel()
		self.noise_norms = list(noise_norms) if noise_norms is not None else []
		# the experiment config the stream was made under, if any
		self.config = config

	def __len__(self):
		return len(self.times)

	def __iter__(self):
		return iter(zip(self.times, self.observations))

	@property
	def grid(self):
		return self.observations[0].grid

	@property
	def max_gap(self):
		return float(np.max(np.diff(self.times))) if len(self.times) > 1 else 0.0

	@property
	def e0_measured(self):
		return max((n[0] for n in self.noise_norms), default=0.0)

	@property
	def e1_measured(self):
		return max((n[1] for n in self.noise_norms), default=0.0)

	def manifest(self):
		return {
			'times':      self.times,
			'kappa':      self.kappa,
			'epsilon':    self.noise.epsilon,
			'seed':       self.noise.seed,
			'distribution': self.noise.distribution,
			'operator':   self.operator_spec,
			'grid':       self.grid.describe(),
			'noise_norms': [ list(n) for n in self.noise_norms ],
			'snapshots':  [ "obs_{0:05d}.ndg2".format(i) for i in range(len(self.times)) ],
			'config':     self.config,
		}

	def export(self, directory):
		os.makedirs(directory, exist_ok=True)
		manifest = self.manifest()
		for name, observation in zip(manifest['snapshots'], self.observations):
			write_snapshot(os.path.join(directory, name), observation)
		write_json(os.path.join(directory, 'stream.json'), manifest)
		debug("Exported {0} observations to {1}".format(len(self.times), directory))

	@classmethod
	def load(klass, directory):
		manifest = read_json(os.path.join(directory, 'stream.json'))
		dealias = manifest['grid'].get('dealias_fraction')
		observations = [ read_snapshot(os.path.join(directory, name), dealias_fraction=dealias) for name in manifest['snapshots'] ]
		noise = NoiseModel(epsilon=manifest['epsilon'], seed=manifest['seed'], distribution=manifest['distribution'])
		return klass(manifest['times'], observations, manifest['kappa'], manifest['operator'], noise=noise, noise_norms=manifest['noise_norms'], config=manifest.get('config'))


def observe_state(u, n, op, model):
	'''I_h(u) + eta_n, plus the (L2, H1) size of eta_n.'''
	eta = draw_noise(model, n, op)
	size = norms(eta)
	return op.apply(u) + eta, (size.l2, size.h1)


def observe_trajectory(u, times, op, model, kappa=None, config=None):
	'''
	kappa defaults to the largest gap in times (0 for a single observation).
	Every time has to be a checkpoint of u.
	config, a plain dict, rides along into the exported manifest.
	'''
	times = list(times)
	missing = [ t for t in times if t not in u.checkpoints ]
	if missing:
		raise MissingCheckpoint("Trajectory has no checkpoints at {0}".format(missing))

	if kappa is None:
		kappa = float(np.max(np.diff(times))) if len(times) > 1 else 0.0

	observations = []
	noise_norms = []
	for n, t in enumerate(times):
		observed, size = observe_state(u.state_at(t), n, op, model)
		observations.append(observed)
		noise_norms.append(size)

	return ObservationStream(times, observations, kappa, op.spec, noise=model, noise_norms=noise_norms, config=config)
