"""
Experiment configuration, read from a JSON document.

Every section rejects unknown keys. Derived quantities such as lambda1 and
the Grashof number are recomputed from the primary ones and logged, they
are never read from the file.
"""

import json
import math
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from common.localconfig import DEALIAS_FRACTION, MOLLIFY_WIDTH, SPINUP_MIN_VISCOUS_TIMES
from common.nse_solver import SolverConfig
from common.spectral_core import GridSpec


class InvalidConfig(ValueError): pass


class Section(BaseModel):
	model_config = ConfigDict(extra='forbid', frozen=True)


class GridSection(Section):
	n_points: int = Field(ge=4, description="Collocation points per axis")
	domain_side: float = Field(default=2 * math.pi, gt=0.0, description="Side L of the periodic square")
	dealias_fraction: float = Field(default=DEALIAS_FRACTION, gt=0.0, le=1.0)

	@field_validator('n_points')
	@classmethod
	def even_points(cls, v):
		if v % 2:
			raise ValueError("n_points must be even, got {0}".format(v))
		return v


class SolverSection(Section):
	dt: float = Field(gt=0.0)
	scheme: Literal['imex_cnab2', 'imex_euler', 'ifab2'] = 'imex_cnab2'
	sample_stride: int = Field(default=10, ge=1, description="Keep every n-th step, plus every observation time")


class ForcingSection(Section):
	grashof: float = Field(ge=0.0, description="Target Grashof number")
	band: Tuple[float, float] = Field(default=(2.0, 4.0), description="|k| band in units of 2 pi / L")
	seed: int = Field(default=0, ge=0)

	@field_validator('band')
	@classmethod
	def ordered_band(cls, v):
		if not 0 < v[0] <= v[1]:
			raise ValueError("Forcing band must satisfy 0 < low <= high, got {0}".format(v))
		return v


class SpinupSection(Section):
	duration: Optional[float] = Field(default=None, gt=0.0, description="Defaults to the minimum number of viscous times")
	seed: int = Field(default=1, ge=0)


class ObservationSection(Section):
	kind: Literal['fourier', 'volume_average']
	modes: Optional[int] = Field(default=None, ge=0)
	k_squared_cut: Optional[float] = Field(default=None, ge=0.0)
	cells_per_axis: Optional[int] = Field(default=None, ge=2)
	mollify_width: float = Field(default=MOLLIFY_WIDTH, gt=0.0, lt=1.0)
	kappa: float = Field(gt=0.0, description="Gap between observations")
	epsilon: float = Field(default=0.0, ge=0.0)
	seed: int = Field(default=2, ge=0)
	distribution: Literal['uniform_box', 'uniform_disc'] = 'uniform_box'

	@model_validator(mode='after')
	def kind_parameters(self):
		if self.kind == 'fourier':
			if (self.modes is None) == (self.k_squared_cut is None):
				raise ValueError("A fourier observation needs exactly one of modes or k_squared_cut")
		elif self.cells_per_axis is None:
			raise ValueError("A volume_average observation needs cells_per_axis")
		return self

	def operator_spec(self):
		if self.kind == 'fourier':
			if self.modes is not None:
				return {'kind': 'fourier', 'modes': self.modes}
			return {'kind': 'fourier', 'k_squared_cut': self.k_squared_cut}
		return {'kind': 'volume_average', 'cells_per_axis': self.cells_per_axis, 'mollify_width': self.mollify_width}


class NudgingSection(Section):
	beta: float = Field(ge=0.0)
	safety_c: float = Field(default=1.0, gt=0.0)
	path: Literal['auto', 'fourier', 'general'] = 'auto'
	v0_seed: int = Field(default=3, ge=0)


class RunSection(Section):
	duration: float = Field(gt=0.0, description="Length of the twin run after the spin-up")
	snapshot_stride: int = Field(default=0, ge=0, description="Write NDG2 snapshots every n-th observation, 0 for none")
	export_stream: bool = False


class StatsSection(Section):
	observables: List[str] = ['energy', 'enstrophy', 'dissipation']
	ladder: List[float] = Field(default_factory=list, description="Averaging windows, in viscous times")
	start: Optional[float] = Field(default=None, ge=0.0, description="Start of the averaging windows; defaults to the run midpoint")
	lipschitz_samples: int = Field(default=32, ge=2)


class VerifySection(Section):
	cells_per_axis: List[int] = [8, 16, 32]
	fourier_modes: int = Field(default=20, ge=1)
	corpus_size: int = Field(default=100, ge=1)
	corpus_band: Tuple[float, float] = (1.0, 6.0)
	noise_draws: int = Field(default=1000, ge=1)
	epsilon: float = Field(default=1e-3, gt=0.0)
	seed: int = Field(default=4, ge=0)


class SweepSection(Section):
	axis: Optional[Literal['beta', 'kappa', 'epsilon', 'm_or_h']] = None
	values: List[float] = Field(default_factory=list)


class ExperimentConfig(Section):
	grid: GridSection
	viscosity: float = Field(gt=0.0)
	solver: SolverSection
	forcing: ForcingSection
	spinup: SpinupSection = SpinupSection()
	observation: ObservationSection
	nudging: NudgingSection
	run: RunSection
	stats: StatsSection = StatsSection()
	verify: VerifySection = VerifySection()
	sweep: SweepSection = SweepSection()
	output_dir: str = 'out'

	def grid_spec(self):
		return GridSpec(self.grid.n_points, self.grid.domain_side, self.grid.dealias_fraction)

	def solver_config(self):
		return SolverConfig(viscosity=self.viscosity, dt=self.solver.dt, grid=self.grid_spec(), scheme=self.solver.scheme)

	@property
	def lambda1(self):
		return (2 * math.pi / self.grid.domain_side) ** 2

	@property
	def viscous_time(self):
		return 1.0 / (self.viscosity * self.lambda1)

	@property
	def spinup_duration(self):
		if self.spinup.duration is not None:
			return self.spinup.duration
		return SPINUP_MIN_VISCOUS_TIMES * self.viscous_time

	@property
	def condition_path(self):
		if self.nudging.path != 'auto':
			return self.nudging.path
		return 'fourier' if self.observation.kind == 'fourier' else 'general'

	def with_seed(self, seed):
		'''Replace every seed, deriving one stream per consumer from the base seed.'''
		return self.updated({
			'forcing':     {'seed': seed},
			'spinup':      {'seed': seed + 1},
			'observation': {'seed': seed + 2},
			'nudging':     {'v0_seed': seed + 3},
			'verify':      {'seed': seed + 4},
		})

	def updated(self, changes):
		'''Copy with per-section changes applied, revalidated.'''
		document = self.model_dump(mode='json')
		for key, value in changes.items():
			if isinstance(value, dict):
				document[key].update(value)
			else:
				document[key] = value
		return validate_config(document)


def validate_config(document):
	try:
		return ExperimentConfig.model_validate(document)
	except ValidationError as e:
		raise InvalidConfig("Config failed validation:\n{0}".format(e))


def load_config(path):
	try:
		with open(path, 'r', encoding='utf-8') as f:
			document = json.load(f)
	except (OSError, ValueError) as e:
		raise InvalidConfig("Couldn't read config {0}: {1}".format(path, e))
	return validate_config(document)
