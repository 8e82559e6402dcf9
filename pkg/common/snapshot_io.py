import os
import csv
import sys
import json
import datetime
from dateutil.tz import tzutc

import numpy as np

from common.spectral_core import GridSpec, SpectralField


# Snapshot layout, all little-endian:
#   b"NDG2" | version u32 | n_points u32 | L f64 | N*N*(re u1, im u1, re u2, im u2) f64
# Coefficients are written in storage order, k1 index major.
MAGIC = b"NDG2"
FORMAT_VERSION = 1

HEADER = np.dtype([
	('magic',    'S4'),
	('version',  '<u4'),
	('n_points', '<u4'),
	('side',     '<f8'),
])


class SnapshotFormatError(ValueError): pass


def encode_snapshot(field):
	grid = field.grid
	n = grid.n_points_per_axis

	header = np.zeros(1, dtype=HEADER)
	header['magic']    = MAGIC
	header['version']  = FORMAT_VERSION
	header['n_points'] = n
	header['side']     = grid.domain_side

	c = field.coefficients
	payload = np.empty((n, n, 4), dtype='<f8')
	payload[..., 0] = c[0].real
	payload[..., 1] = c[0].imag
	payload[..., 2] = c[1].real
	payload[..., 3] = c[1].imag

	return header.tobytes() + payload.tobytes()


def decode_snapshot(blob, dealias_fraction=None):
	if len(blob) < HEADER.itemsize:
		raise SnapshotFormatError("Snapshot is only {0} bytes, too short for a header".format(len(blob)))

	header = np.frombuffer(blob, dtype=HEADER, count=1)[0]
	if header['magic'] != MAGIC:
		raise SnapshotFormatError("Bad magic {0!r}, expected {1!r}".format(bytes(header['magic']), MAGIC))
	if header['version'] != FORMAT_VERSION:
		raise SnapshotFormatError("Unsupported snapshot version {0}".format(int(header['version'])))

	n = int(header['n_points'])
	expected = HEADER.itemsize + n * n * 4 * 8
	if len(blob) != expected:
		raise SnapshotFormatError("Snapshot for N={0} should be {1} bytes, got {2}".format(n, expected, len(blob)))

	grid_kwargs = {'n_points_per_axis': n, 'domain_side': float(header['side'])}
	if dealias_fraction is not None:
		grid_kwargs['dealias_fraction'] = dealias_fraction
	try:
		grid = GridSpec(**grid_kwargs)
	except ValueError as e:
		raise SnapshotFormatError("Snapshot header describes an invalid grid: {0}".format(e))

	payload = np.frombuffer(blob, dtype='<f8', offset=HEADER.itemsize).reshape(n, n, 4)
	coefficients = np.empty(grid.shape, dtype=np.complex128)
	coefficients[0] = payload[..., 0] + 1j * payload[..., 1]
	coefficients[1] = payload[..., 2] + 1j * payload[..., 3]
	return SpectralField(grid, coefficients)


def write_snapshot(path, field):
	with open(path, 'wb') as f:
		f.write(encode_snapshot(field))

def read_snapshot(path, dealias_fraction=None):
	with open(path, 'rb') as f:
		return decode_snapshot(f.read(), dealias_fraction=dealias_fraction)


def write_csv(path, header, rows):
	with open(path, 'w', encoding='utf-8', newline='') as f:
		writer = csv.writer(f)
		writer.writerow(header)
		for row in rows:
			writer.writerow(row)

def read_csv(path):
	with open(path, 'r', encoding='utf-8', newline='') as f:
		reader = csv.reader(f)
		header = next(reader)
		return header, [ row for row in reader ]


def _jsonable(value):
	if isinstance(value, dict):
		return { str(k): _jsonable(v) for k,v in value.items() }
	if isinstance(value, (list, tuple)):
		return [ _jsonable(v) for v in value ]
	if isinstance(value, np.ndarray):
		return _jsonable(value.tolist())
	if isinstance(value, (np.bool_, bool)):
		return bool(value)
	if isinstance(value, np.integer):
		return int(value)
	if isinstance(value, (np.floating, float)):
		value = float(value)
		# JSON has no inf/nan, keep them readable
		if not np.isfinite(value):
			return repr(value)
		return value
	return value

def write_json(path, document):
	'''Deterministic output: sorted keys, no wall-clock data.'''
	with open(path, 'w', encoding='utf-8') as f:
		json.dump(_jsonable(document), f, indent=2, sort_keys=True)
		f.write('\n')

def read_json(path):
	with open(path, 'r', encoding='utf-8') as f:
		return json.load(f)


def write_provenance(directory, argv=None, extra=None):
	'''The one artefact that's allowed to change between identical reruns.'''
	document = {
		'argv': list(sys.argv if argv is None else argv),
		'written_at': datetime.datetime.now(tzutc()).isoformat(),
		'pid': os.getpid(),
	}
	if extra:
		document.update(extra)
	write_json(os.path.join(directory, 'provenance.json'), document)
