"""Parsing of dimensioned quantities from config files and CLI arguments.

All internal computation uses SI base units (meters, seconds, watts, hertz).
Config values may be bare numbers (interpreted as SI) or strings with a unit
suffix, e.g. "614 uW", "524.59 nm", "0.3 ns", "1.5 h".
"""

from __future__ import annotations

import re

from .errors import ConfigError

# Multipliers to SI for every accepted suffix.  Micro accepts both "u" and
# the Unicode mu so that values copied from lab notes parse unchanged.
_UNITS = {
    # length -> m
    "m": 1.0, "cm": 1e-2, "mm": 1e-3, "um": 1e-6, "µm": 1e-6, "μm": 1e-6, "nm": 1e-9, "pm": 1e-12,
    # time -> s
    "s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6, "μs": 1e-6, "ns": 1e-9, "ps": 1e-12,
    "min": 60.0, "h": 3600.0,
    # power -> W
    "W": 1.0, "mW": 1e-3, "uW": 1e-6, "µW": 1e-6, "μW": 1e-6, "nW": 1e-9, "kW": 1e3,
    # rate -> Hz
    "Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9,
    # wave-vector mismatch -> rad/m
    "rad/m": 1.0, "/m": 1.0, "1/m": 1.0, "/mm": 1e3, "1/mm": 1e3,
}

_QUANTITY_RE = re.compile(r"^\s*([+-]?[0-9.eE+-]+)\s*([^\s]*)\s*$")


def parse_quantity(value, name="value"):
    """Convert a config value to a float in SI units.

    Bare ints/floats pass through unchanged; strings may carry a unit suffix.
    """
    if isinstance(value, bool):
        raise ConfigError(f"{name}: expected a quantity, got a boolean")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{name}: expected number or 'number unit' string, got {type(value).__name__}")
    m = _QUANTITY_RE.match(value)
    if not m:
        raise ConfigError(f"{name}: cannot parse quantity {value!r}")
    num, unit = m.group(1), m.group(2)
    try:
        mag = float(num)
    except ValueError as exc:
        raise ConfigError(f"{name}: bad numeric part in {value!r}") from exc
    if not unit:
        return mag
    if unit not in _UNITS:
        raise ConfigError(f"{name}: unknown unit {unit!r} in {value!r}")
    return mag * _UNITS[unit]
