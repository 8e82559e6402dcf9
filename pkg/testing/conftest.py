import pytest

from common.spectral_core import GridSpec


@pytest.fixture
def grid16():
	return GridSpec(16)

@pytest.fixture
def grid32():
	return GridSpec(32)

@pytest.fixture
def grid64():
	return GridSpec(64)
