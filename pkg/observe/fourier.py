import math

import numpy as np

from observe.observer import ObservationOperator, IncompatibleGrid
from common.spectral_core import SpectralField, low_mode_project


class FourierObserver(ObservationOperator):
	'''
	Observe the m lowest conjugate pairs, I_h = P_m. Configured with either
	'modes' (m directly) or 'k_squared_cut', a cut on |k|^2 in units of
	lambda1, in which case m counts the pairs inside it.
	'''

	kind = 'fourier'

	def __init__(self, grid, spec):
		super().__init__(grid, spec)
		if ('modes' in spec) == ('k_squared_cut' in spec):
			raise ValueError("A fourier observer needs exactly one of 'modes' or 'k_squared_cut': {0}".format(spec))

		if 'modes' in spec:
			self.modes = int(spec['modes'])
		else:
			self.modes = grid.modes_within(float(spec['k_squared_cut']) * grid.lambda1)

		if self.modes < 0:
			raise ValueError("Mode count must be non-negative, got {0}".format(self.modes))
		if self.modes > grid.mode_count:
			raise IncompatibleGrid("Asked for {0} mode pairs, the grid only resolves {1}".format(self.modes, grid.mode_count))

	@property
	def next_eigenvalue(self):
		'''lambda_{m+1}, +inf when every resolved pair is observed.'''
		return self.grid.eigenvalue_of_rank(self.modes + 1)

	@property
	def h_eff(self):
		return 1.0 / math.sqrt(self.next_eigenvalue)

	def apply(self, u):
		self._check_grid(u)
		return low_mode_project(u, self.modes)

	def noise(self, model, n):
		# One complex 2-vector per retained pair, i.e. a point in R^4 with
		# |zeta| <= epsilon, mirrored onto -k so eta_n stays real.
		grid = self.grid
		size = grid.n_points_per_axis
		coefficients = np.zeros(grid.shape, dtype=np.complex128)
		if self.modes == 0 or model.epsilon == 0:
			return SpectralField(grid, coefficients)

		zeta = model.draw(n, self.modes, 4)
		rows, cols = grid.pair_positions
		rows, cols = rows[:self.modes], cols[:self.modes]
		coefficients[0, rows, cols] = zeta[:, 0] + 1j * zeta[:, 1]
		coefficients[1, rows, cols] = zeta[:, 2] + 1j * zeta[:, 3]
		coefficients[:, (-rows) % size, (-cols) % size] = np.conj(coefficients[:, rows, cols])
		return SpectralField(grid, coefficients)

	def noise_bounds(self, epsilon):
		grid = self.grid
		rows, cols = grid.pair_positions
		retained_k_squared = grid.k_squared[rows[:self.modes], cols[:self.modes]]
		root_area = math.sqrt(grid.area)
		e0 = epsilon * math.sqrt(2 * self.modes) * root_area
		e1 = epsilon * math.sqrt(2 * float(np.sum(retained_k_squared))) * root_area
		return e0, e1

	def describe(self):
		description = super().describe()
		description['modes'] = self.modes
		description['next_eigenvalue'] = self.next_eigenvalue
		return description
