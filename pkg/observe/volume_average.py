"""
Local volume averages recombined through a smooth partition of unity.

The domain is cut into cells_per_axis^2 square cells of side s. Each cell
gets a tensor-product bump psi_j = b_a(x) b_b(y) that is 1 well inside the
cell and falls to 0 through a smoothstep over a band of half-width
delta = mollify_width * s / 2 around the cell edge. Since the smoothstep
satisfies S(t) + S(1-t) = 1 the bumps already sum to one; they're still
divided by their column sum so the identity is exact on the collocation grid.

I_h(phi) = sum_j mean_j(phi) psi_j
eta_n    = sum_j eps_{n,j} psi_j
"""

import math

import numpy as np

from observe.observer import ObservationOperator, IncompatibleGrid
from common.localconfig import MOLLIFY_WIDTH
from common.spectral_core import SpectralField


# Each enlarged cell meets the 3x3 block around it, itself included.
OVERLAP_COUNT = 9

# Samples across one transition band when measuring max|grad psi|.
GRADIENT_SAMPLES = 801


def smoothstep(t):
	t = np.clip(t, 0.0, 1.0)
	return t * t * (3 - 2 * t)

def smoothstep_slope(t):
	t = np.clip(t, 0.0, 1.0)
	return 6 * t * (1 - t)


def _bump(distance, half_side, delta):
	'''b(d) for d = distance from the cell centre.'''
	return smoothstep((half_side + delta - np.abs(distance)) / (2 * delta))


class VolumeAverageObserver(ObservationOperator):
	kind = 'volume_average'

	def __init__(self, grid, spec):
		super().__init__(grid, spec)
		self.cells_per_axis = int(spec['cells_per_axis'])
		self.mollify_width = float(spec.get('mollify_width', MOLLIFY_WIDTH))
		n = grid.n_points_per_axis

		if self.cells_per_axis < 2:
			raise IncompatibleGrid("Need at least 2 cells per axis, got {0}".format(self.cells_per_axis))
		if n % self.cells_per_axis:
			raise IncompatibleGrid("{0} cells per axis don't divide a {1}-point grid".format(self.cells_per_axis, n))
		if not 0 < self.mollify_width < 1:
			raise ValueError("mollify_width must lie in (0,1), got {0}".format(self.mollify_width))

		self.points_per_cell = n // self.cells_per_axis
		self.cell_side = grid.domain_side / self.cells_per_axis
		self.delta = 0.5 * self.mollify_width * self.cell_side
		self.partition = self._build_partition()

	def _build_partition(self):
		'''(cells, N) matrix of 1D bumps sampled on the collocation points.'''
		grid = self.grid
		x = np.arange(grid.n_points_per_axis) * grid.dx
		centres = (np.arange(self.cells_per_axis) + 0.5) * self.cell_side

		side = grid.domain_side
		offset = x[None, :] - centres[:, None]
		offset = (offset + 0.5 * side) % side - 0.5 * side

		bumps = _bump(offset, 0.5 * self.cell_side, self.delta)
		return bumps / bumps.sum(axis=0, keepdims=True)

	@property
	def h_eff(self):
		'''Cell diameter.'''
		return math.sqrt(2) * self.cell_side

	@property
	def overlap_count(self):
		return OVERLAP_COUNT

	def partition_sum(self):
		'''sum_j psi_j at every collocation point, should be all ones.'''
		return np.einsum('ai,bj->ij', self.partition, self.partition)

	def cell_means(self, u):
		self._check_grid(u)
		c, p = self.cells_per_axis, self.points_per_cell
		return u.to_physical().reshape(2, c, p, c, p).mean(axis=(2, 4))

	def _recombine(self, weights):
		values = np.einsum('dab,ai,bj->dij', weights, self.partition, self.partition)
		return SpectralField.from_physical(self.grid, values)

	def apply(self, u):
		return self._recombine(self.cell_means(u))

	def noise(self, model, n):
		c = self.cells_per_axis
		if model.epsilon == 0:
			return SpectralField.zeros(self.grid)
		# Cell j = (a, b) takes draw slot a*c + b
		draws = model.draw(n, c * c, 2)
		weights = draws.T.reshape(2, c, c)
		return self._recombine(weights)

	def gradient_constant(self):
		'''
		C0 with max|grad psi_j| <= C0/h, measured by sampling the analytic
		bump and its slope densely through the transition band.
		'''
		half_side = 0.5 * self.cell_side
		delta = self.delta
		distance = np.linspace(half_side - delta, half_side + delta, GRADIENT_SAMPLES)
		t = (half_side + delta - distance) / (2 * delta)
		value = smoothstep(t)
		slope = smoothstep_slope(t) / (2 * delta)

		# Add the plateau, where the bump is flat at 1
		value = np.append(value, 1.0)
		slope = np.append(slope, 0.0)

		gradient = np.sqrt(np.outer(slope, value) ** 2 + np.outer(value, slope) ** 2)
		return self.h_eff * float(gradient.max())

	def noise_bounds(self, epsilon):
		root_area = math.sqrt(self.grid.area)
		e0 = epsilon * root_area
		e1 = self.gradient_constant() * math.sqrt(2 * self.overlap_count) * epsilon / self.h_eff * root_area
		return e0, e1

	def describe(self):
		description = super().describe()
		description['cells_per_axis'] = self.cells_per_axis
		description['mollify_width'] = self.mollify_width
		description['C0'] = self.gradient_constant()
		description['C1'] = self.overlap_count
		return description
