"""
Fourier-Galerkin representation of periodic 2D vector fields.

Fields live on the square (0,L)^2 and are stored as the coefficients of

    u(x) = sum_k u_hat(k) exp(i k.x),    k = (2 pi / L) (k1, k2)

in full (not half) FFT layout, shape (2, N, N), axis 1 running along x and
axis 2 along y. With that normalisation the continuum norms are Parseval
sums times |Omega| = L^2, and the coefficients have velocity units.

The Nyquist row and column (k1 or k2 equal to -N/2) have no Hermitian
partner, so they sit outside the resolved set. The Leray projector and the
low-mode projector zero them, and so does dealiasing.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft

from common import localconfig
from common.localconfig import DEALIAS_FRACTION, SOLENOIDAL_TOLERANCE


class GridMismatch(ValueError): pass


def set_fft_workers(count):
	localconfig.FFT_WORKERS = max(1, int(count))


def forward_transform(values):
	return scipy.fft.fft2(values, axes=(-2, -1), norm='forward', workers=localconfig.FFT_WORKERS)

def inverse_transform(coefficients):
	return scipy.fft.ifft2(coefficients, axes=(-2, -1), norm='forward', workers=localconfig.FFT_WORKERS).real


def hermitian_part(coefficients):
	'''Symmetrise so that c(-k) == conj(c(k)) holds bit-for-bit.'''
	reflected = np.conj(np.roll(np.flip(coefficients, axis=(-2, -1)), 1, axis=(-2, -1)))
	return 0.5 * (coefficients + reflected)


@dataclass(frozen=True)
class GridSpec:
	n_points_per_axis: int
	domain_side: float = 2 * np.pi
	dealias_fraction: float = DEALIAS_FRACTION

	def __post_init__(self):
		n = self.n_points_per_axis
		if int(n) != n or n < 4 or n % 2:
			raise ValueError("n_points_per_axis must be an even integer >= 4, got {0}".format(n))
		if not self.domain_side > 0:
			raise ValueError("domain_side must be positive, got {0}".format(self.domain_side))
		if not 0 < self.dealias_fraction <= 1:
			raise ValueError("dealias_fraction must lie in (0,1], got {0}".format(self.dealias_fraction))

	@property
	def shape(self):
		return (2, self.n_points_per_axis, self.n_points_per_axis)

	@property
	def scale(self):
		return 2 * np.pi / self.domain_side

	@property
	def lambda1(self):
		return self.scale ** 2

	@property
	def area(self):
		return self.domain_side ** 2

	@property
	def dx(self):
		return self.domain_side / self.n_points_per_axis

	@cached_property
	def k_index(self):
		n = self.n_points_per_axis
		k = np.rint(np.fft.fftfreq(n, 1.0 / n)).astype(np.int64)
		return tuple(np.meshgrid(k, k, indexing='ij'))

	@cached_property
	def wavevector(self):
		k1, k2 = self.k_index
		return (self.scale * k1, self.scale * k2)

	@cached_property
	def k_squared(self):
		kx, ky = self.wavevector
		return kx * kx + ky * ky

	@cached_property
	def inverse_k_squared(self):
		ksq = self.k_squared
		return np.where(ksq > 0, 1.0 / np.where(ksq > 0, ksq, 1.0), 0.0)

	@cached_property
	def resolved_mask(self):
		k1, k2 = self.k_index
		half = self.n_points_per_axis // 2
		return (np.abs(k1) < half) & (np.abs(k2) < half)

	@cached_property
	def dealias_mask(self):
		k1, k2 = self.k_index
		kmax = self.dealias_fraction * (self.n_points_per_axis // 2)
		return self.resolved_mask & (np.abs(k1) <= kmax) & (np.abs(k2) <= kmax)

	@cached_property
	def coordinates(self):
		x = np.arange(self.n_points_per_axis) * self.dx
		return tuple(np.meshgrid(x, x, indexing='ij'))

	@cached_property
	def _pair_table(self):
		# One representative per conjugate pair: k1 > 0, or k1 == 0 and k2 > 0.
		# Pairs are ranked by |k|^2, ties broken lexicographically on (k1, k2).
		n = self.n_points_per_axis
		k1, k2 = self.k_index
		representative = self.resolved_mask & ((k1 > 0) | ((k1 == 0) & (k2 > 0)))
		rows, cols = np.nonzero(representative)
		r1, r2 = k1[rows, cols], k2[rows, cols]
		shell = r1 * r1 + r2 * r2
		order = np.lexsort((r2, r1, shell))
		rows, cols = rows[order], cols[order]
		rank = np.zeros((n, n), dtype=np.int64)
		ranks = np.arange(1, len(order) + 1)
		rank[rows, cols] = ranks
		rank[(-rows) % n, (-cols) % n] = ranks
		eigenvalues = self.k_squared[rows, cols]
		return rank, rows, cols, eigenvalues

	@property
	def mode_rank(self):
		'''Rank of each coefficient's conjugate pair; 0 for the mean and Nyquist.'''
		return self._pair_table[0]

	@property
	def pair_positions(self):
		'''Array indices of the pair representatives, in rank order.'''
		return self._pair_table[1], self._pair_table[2]

	@property
	def mode_count(self):
		return len(self._pair_table[3])

	def eigenvalue_of_rank(self, rank):
		'''lambda_r for the r-th conjugate pair; +inf past the last resolved pair.'''
		if rank < 1:
			raise ValueError("Pair ranks start at 1, got {0}".format(rank))
		eigenvalues = self._pair_table[3]
		if rank > len(eigenvalues):
			return np.inf
		return float(eigenvalues[rank - 1])

	def modes_within(self, k_squared_cut):
		'''Number of conjugate pairs with |k|^2 <= k_squared_cut.'''
		return int(np.searchsorted(self._pair_table[3], k_squared_cut * (1 + 1e-12), side='right'))

	def describe(self):
		return {
			'n_points_per_axis': self.n_points_per_axis,
			'domain_side':       self.domain_side,
			'dealias_fraction':  self.dealias_fraction,
			'lambda1':           self.lambda1,
		}


@dataclass(frozen=True)
class NormReport:
	l2: float
	h1: float
	h2: float

	@property
	def energy(self):
		return 0.5 * self.l2 ** 2

	@property
	def enstrophy(self):
		return 0.5 * self.h1 ** 2


class SpectralField(object):
	'''
	Immutable set of Fourier coefficients on a GridSpec.

	Velocity fields are mean-free, Hermitian and divergence-free once they've
	been through project_leray(). Raw fields (observations, noise, constants)
	are allowed to carry anything.
	'''

	def __init__(self, grid, coefficients):
		coefficients = np.array(coefficients, dtype=np.complex128)
		if coefficients.shape != grid.shape:
			raise ValueError("Coefficients have shape {0}, grid wants {1}".format(coefficients.shape, grid.shape))
		coefficients.flags.writeable = False
		self._grid = grid
		self._coefficients = coefficients

	@property
	def grid(self):
		return self._grid

	@property
	def coefficients(self):
		return self._coefficients

	@classmethod
	def zeros(klass, grid):
		return klass(grid, np.zeros(grid.shape, dtype=np.complex128))

	@classmethod
	def from_physical(klass, grid, values):
		values = np.asarray(values, dtype=np.float64)
		if values.shape != grid.shape:
			raise ValueError("Physical values have shape {0}, grid wants {1}".format(values.shape, grid.shape))
		return klass(grid, hermitian_part(forward_transform(values)))

	def to_physical(self):
		return inverse_transform(self._coefficients)

	def _check_grid(self, other):
		if other.grid != self._grid:
			raise GridMismatch("Fields live on different grids: {0} vs {1}".format(self._grid, other.grid))

	def __add__(self, other):
		self._check_grid(other)
		return SpectralField(self._grid, self._coefficients + other.coefficients)

	def __sub__(self, other):
		self._check_grid(other)
		return SpectralField(self._grid, self._coefficients - other.coefficients)

	def __neg__(self):
		return SpectralField(self._grid, -self._coefficients)

	def __mul__(self, scalar):
		if isinstance(scalar, SpectralField):
			return NotImplemented
		return SpectralField(self._grid, self._coefficients * scalar)

	__rmul__ = __mul__

	def __truediv__(self, scalar):
		return SpectralField(self._grid, self._coefficients / scalar)

	def inner(self, other):
		'''The real L2 inner product (u, v).'''
		self._check_grid(other)
		return float(self._grid.area * np.sum((np.conj(self._coefficients) * other.coefficients).real))

	def mode(self, k1, k2):
		n = self._grid.n_points_per_axis
		return self._coefficients[:, k1 % n, k2 % n].copy()

	def divergence(self):
		'''max_k |k . u_hat(k)|'''
		kx, ky = self._grid.wavevector
		return float(np.max(np.abs(kx * self._coefficients[0] + ky * self._coefficients[1])))

	def is_hermitian(self, tolerance=0.0):
		c = self._coefficients
		reflected = np.conj(np.roll(np.flip(c, axis=(-2, -1)), 1, axis=(-2, -1)))
		return bool(np.max(np.abs(c - reflected)) <= tolerance)

	def is_mean_free(self, tolerance=0.0):
		return bool(np.max(np.abs(self._coefficients[:, 0, 0])) <= tolerance)

	def is_finite(self):
		return bool(np.all(np.isfinite(self._coefficients)))

	def __repr__(self):
		return "<SpectralField N={0} L={1:g}>".format(self._grid.n_points_per_axis, self._grid.domain_side)


def _coefficients_of(raw):
	if isinstance(raw, SpectralField):
		return raw.grid, raw.coefficients
	raise TypeError("Expected a SpectralField, got {0}".format(type(raw)))


def project_leray(raw):
	'''P_sigma: drop the gradient part, the mean and the Nyquist modes.'''
	grid, c = _coefficients_of(raw)
	kx, ky = grid.wavevector
	k_dot_u = kx * c[0] + ky * c[1]
	projected = np.empty_like(c)
	projected[0] = c[0] - kx * k_dot_u * grid.inverse_k_squared
	projected[1] = c[1] - ky * k_dot_u * grid.inverse_k_squared

	# Already-solenoidal modes pass straight through, so P(P(u)) == P(u) exactly
	scale = np.sqrt(grid.k_squared) * np.sqrt(np.abs(c[0]) ** 2 + np.abs(c[1]) ** 2)
	solenoidal = np.abs(k_dot_u) <= SOLENOIDAL_TOLERANCE * scale
	projected = np.where(solenoidal, c, projected)

	keep = grid.resolved_mask & (grid.k_squared > 0)
	return SpectralField(grid, np.where(keep, projected, 0))


def stokes_apply(u):
	'''A u = -P_sigma Laplacian u, diagonal with eigenvalues |k|^2.'''
	grid, c = _coefficients_of(u)
	return SpectralField(grid, c * grid.k_squared)


def low_mode_project(u, m):
	'''P_m: keep the m lowest conjugate pairs (see GridSpec._pair_table).'''
	if m < 0:
		raise ValueError("Mode count must be non-negative, got {0}".format(m))
	grid, c = _coefficients_of(u)
	rank = grid.mode_rank
	keep = (rank >= 1) & (rank <= m)
	return SpectralField(grid, np.where(keep, c, 0))


def advect(u, v):
	'''
	Dealiased (u.grad)v before projection. Returns the coefficients and the
	physical-space u, the solver wants the latter for its CFL check.
	'''
	u._check_grid(v)
	grid = u.grid
	mask = grid.dealias_mask
	uc = np.where(mask, u.coefficients, 0)
	vc = np.where(mask, v.coefficients, 0)
	kx, ky = grid.wavevector

	u_phys = inverse_transform(uc)
	dv_dx = inverse_transform(1j * kx * vc)
	dv_dy = inverse_transform(1j * ky * vc)
	product = u_phys[0] * dv_dx + u_phys[1] * dv_dy

	coefficients = np.where(mask, hermitian_part(forward_transform(product)), 0)
	return coefficients, u_phys


def bilinear(u, v):
	'''B(u,v) = P_sigma((u.grad)v), computed pseudo-spectrally.'''
	coefficients, _ = advect(u, v)
	return project_leray(SpectralField(u.grid, coefficients))


def norms(u):
	grid, c = _coefficients_of(u)
	power = np.sum(np.abs(c) ** 2, axis=0)
	ksq = grid.k_squared
	return NormReport(
		l2 = float(np.sqrt(grid.area * np.sum(power))),
		h1 = float(np.sqrt(grid.area * np.sum(ksq * power))),
		h2 = float(np.sqrt(grid.area * np.sum(ksq * ksq * power))),
	)


def random_field(grid, seed, band=(1.0, 4.0), amplitude=1.0, norm='l2'):
	'''
	Random divergence-free field with content only where band[0] <= |k| <= band[1]
	(in units of 2 pi / L), rescaled so that the chosen norm equals amplitude.
	'''
	rng = np.random.default_rng(seed)
	raw = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
	shell = np.sqrt(grid.k_squared) / grid.scale
	inside = (shell >= band[0]) & (shell <= band[1])
	field = project_leray(SpectralField(grid, hermitian_part(np.where(inside, raw, 0))))
	size = getattr(norms(field), norm)
	if size == 0 or amplitude == 0:
		return SpectralField.zeros(grid)
	return field * (amplitude / size)
