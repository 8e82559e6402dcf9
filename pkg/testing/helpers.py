import numpy as np

from common.spectral_core import SpectralField, random_field


def shear_mode(grid, amplitude, k=1):
	'''u = (a cos(k y), 0): a single conjugate pair with B(u,u) = 0.'''
	n = grid.n_points_per_axis
	c = np.zeros(grid.shape, dtype=np.complex128)
	c[0, 0, k % n] = amplitude / 2
	c[0, 0, -k % n] = amplitude / 2
	return SpectralField(grid, c)


def smooth_fields(grid, count, seed=0, band=(1.0, 4.0)):
	return [ random_field(grid, seed * 1000 + i, band=band) for i in range(count) ]


def relative_error(a, b):
	return float(np.linalg.norm(a.coefficients - b.coefficients) / np.linalg.norm(b.coefficients))
