"""Tests for the numeric guards."""

import math

import pytest

from sis_tools.errors import NonFiniteError, SimulationError
from sis_tools.numbers import require_finite, require_open_interval, strictly_between


def test_strictly_between_either_order():
    assert strictly_between(1.0, (0.0, 2.0))
    assert strictly_between(1.0, (2.0, 0.0))
    assert not strictly_between(0.0, (0.0, 2.0))
    assert not strictly_between(math.nan, (0.0, 2.0))


def test_require_open_interval():
    require_open_interval("i", 1.0, 0.0, 2.0)
    with pytest.raises(ValueError, match="i=2.0"):
        require_open_interval("i", 2.0, 0.0, 2.0)


def test_require_finite_reports_first_bad_node():
    require_finite("y", [0.0, 1.0])
    with pytest.raises(NonFiniteError) as info:
        require_finite("y", [0.0, math.inf, math.nan])
    assert info.value.index == 1
    assert isinstance(info.value, SimulationError)
