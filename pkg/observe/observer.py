import math
from dataclasses import dataclass

import numpy as np

from common.localconfig import NOISE_STREAM_TAG


class IncompatibleGrid(ValueError): pass


NOISE_DISTRIBUTIONS = ('uniform_box', 'uniform_disc')


@dataclass(frozen=True)
class NoiseModel:
	'''Bounded measurement error: every drawn vector has Euclidean length <= epsilon.'''
	epsilon: float = 0.0
	seed: int = 0
	distribution: str = 'uniform_box'

	def __post_init__(self):
		if not self.epsilon >= 0:
			raise ValueError("epsilon must be non-negative, got {0}".format(self.epsilon))
		if int(self.seed) != self.seed or self.seed < 0:
			raise ValueError("Noise seed must be a non-negative integer, got {0}".format(self.seed))
		if self.distribution not in NOISE_DISTRIBUTIONS:
			raise ValueError("Unknown noise distribution {0!r}, pick one of {1}".format(self.distribution, NOISE_DISTRIBUTIONS))

	def generator(self, n):
		'''Counter-based stream for observation n; slot j is the j-th draw.'''
		if n < 0:
			raise ValueError("Observation index must be non-negative, got {0}".format(n))
		sequence = np.random.SeedSequence([int(self.seed), int(n), NOISE_STREAM_TAG])
		return np.random.Generator(np.random.Philox(sequence))

	def draw(self, n, count, dims):
		'''count vectors in R^dims for observation n, shape (count, dims).'''
		if self.epsilon == 0:
			return np.zeros((count, dims))
		rng = self.generator(n)
		if self.distribution == 'uniform_box':
			half_side = self.epsilon / math.sqrt(dims)
			return rng.uniform(-half_side, half_side, size=(count, dims))

		directions = rng.standard_normal((count, dims))
		directions /= np.linalg.norm(directions, axis=1, keepdims=True)
		radii = self.epsilon * rng.random(count) ** (1.0 / dims)
		return directions * radii[:, None]

	def describe(self):
		return {'epsilon': self.epsilon, 'seed': self.seed, 'distribution': self.distribution}


class ObservationOperator(object):
	'''
	Base class for the observation operators I_h. Subclasses set `kind`,
	and the registry in common.observer_backend picks them up by asking
	will_handle() about an observation spec (a dict with at least 'kind').
	'''

	kind = None

	def __init__(self, grid, spec):
		self.grid = grid
		self.spec = dict(spec)

	@classmethod
	def will_handle(klass, spec):
		return klass.kind is not None and spec.get('kind') == klass.kind

	def apply(self, u):
		raise NotImplementedError("Observation operators must implement apply()")

	def noise(self, model, n):
		'''eta_n for observation n, on self.grid.'''
		raise NotImplementedError("Observation operators must implement noise()")

	@property
	def h_eff(self):
		raise NotImplementedError("Observation operators must report h_eff")

	def noise_bounds(self, epsilon):
		'''A-priori (E0, E1) bounds on |eta_n| and ||eta_n|| for noise of size epsilon.'''
		raise NotImplementedError("Observation operators must implement noise_bounds()")

	def describe(self):
		description = dict(self.spec)
		description['h_eff'] = self.h_eff
		return description

	def _check_grid(self, u):
		if u.grid != self.grid:
			raise IncompatibleGrid("Operator built for {0} applied to a field on {1}".format(self.grid, u.grid))
