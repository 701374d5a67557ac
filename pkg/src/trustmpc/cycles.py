"""Preceding-traffic speed profiles.

Cycles are two-column CSV files::

    time_s,speed_mph
    0,0
    1,0.5
    ...

The header names the speed unit (``speed_mph`` or ``speed_mps``). Samples
that are not on a 1 Hz grid are linearly interpolated onto integer seconds.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Union

import numpy as np

from .core import ContractError

MPH = 0.44704

_UNITS = {"speed_mph": MPH, "speed_mps": 1.0}

PRESET_FILES = {"us06": "us06.csv", "nycc": "nycc.csv"}


class CycleParseError(ValueError):
    """A drive-cycle file could not be parsed."""


@dataclass(frozen=True, eq=False)
class DriveCycle:
    name: str
    speeds: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        speeds = np.asarray(self.speeds, dtype=float)
        if speeds.ndim != 1 or speeds.size == 0:
            raise ContractError("a drive cycle needs at least one speed sample")
        if not np.all(np.isfinite(speeds)) or np.any(speeds < 0):
            raise ContractError("drive-cycle speeds must be finite and non-negative")
        speeds.setflags(write=False)
        object.__setattr__(self, "speeds", speeds)

    def __len__(self) -> int:
        return self.speeds.size

    @property
    def duration(self) -> float:
        return len(self) * self.dt

    @classmethod
    def constant(cls, speed: float, length: int, name: str = "constant") -> "DriveCycle":
        return cls(name, np.full(length, float(speed)))


def _parse(text: str, origin: str) -> tuple[np.ndarray, np.ndarray]:
    lines = text.splitlines()
    if not lines:
        raise CycleParseError(f"{origin}: empty file")
    header = [h.strip() for h in lines[0].lstrip("﻿").split(",")]
    if len(header) != 2 or header[0] != "time_s" or header[1] not in _UNITS:
        raise CycleParseError(
            f"{origin}:1: header must be 'time_s,speed_mph' or 'time_s,speed_mps', got {lines[0]!r}"
        )
    scale = _UNITS[header[1]]
    times, speeds = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise CycleParseError(f"{origin}:{lineno}: expected 2 columns, got {len(parts)}: {line!r}")
        try:
            t, v = float(parts[0]), float(parts[1])
        except ValueError:
            raise CycleParseError(f"{origin}:{lineno}: non-numeric value in {line!r}") from None
        if not (np.isfinite(t) and np.isfinite(v)):
            raise CycleParseError(f"{origin}:{lineno}: non-finite value in {line!r}")
        if v < 0:
            raise CycleParseError(f"{origin}:{lineno}: negative speed {v}")
        if times and t <= times[-1]:
            raise CycleParseError(f"{origin}:{lineno}: time {t} does not increase")
        times.append(t)
        speeds.append(v * scale)
    if not times:
        raise CycleParseError(f"{origin}: no samples")
    return np.array(times), np.array(speeds)


def _to_1hz(times: np.ndarray, speeds: np.ndarray) -> np.ndarray:
    grid = np.arange(np.ceil(times[0]), np.floor(times[-1]) + 1.0)
    if grid.size == times.size and np.array_equal(grid, times):
        return speeds
    return np.interp(grid, times, speeds)


def parse_cycle(text: str, name: str = "cycle") -> DriveCycle:
    """Parse CSV text into a 1 Hz :class:`DriveCycle`."""
    times, speeds = _parse(text, name)
    return DriveCycle(name, _to_1hz(times, speeds))


def load_cycle(source: Union[str, os.PathLike]) -> DriveCycle:
    """Load a cycle from a CSV path or a bundled preset name (``us06``, ``nycc``)."""
    key = str(source).lower()
    if key in PRESET_FILES:
        res = resources.files("trustmpc") / "data" / PRESET_FILES[key]
        if not res.is_file():
            raise FileNotFoundError(
                f"preset {key!r} is not bundled; place the EPA schedule as "
                f"{PRESET_FILES[key]} (time_s,speed_mph) in the trustmpc/data directory "
                "or pass a file path instead"
            )
        return parse_cycle(res.read_text(encoding="utf-8"), key)
    path = Path(source)
    if not path.is_file():
        raise FileNotFoundError(f"drive-cycle file not found: {path}")
    return parse_cycle(path.read_text(encoding="utf-8"), path.stem)


def dump_cycle(cycle: DriveCycle, unit: str = "mps") -> str:
    """Serialize a cycle as 1 Hz CSV text in the given unit (``mps`` or ``mph``)."""
    scale = _UNITS[f"speed_{unit}"]
    buf = io.StringIO()
    buf.write(f"time_s,speed_{unit}\n")
    for t, v in enumerate(cycle.speeds):
        buf.write(f"{t},{float(v) / scale!r}\n")
    return buf.getvalue()


def preview(cycle: DriveCycle, t: int, N: int) -> np.ndarray:
    """Speeds at steps t+1..t+N, padded with the final speed past the end."""
    if not 0 <= t < len(cycle):
        raise ContractError(f"step {t} outside cycle of length {len(cycle)}")
    idx = np.minimum(np.arange(t + 1, t + N + 1), len(cycle) - 1)
    return cycle.speeds[idx]
