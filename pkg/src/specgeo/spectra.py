"""Gridded IR spectra: Lorentzian broadening, similarity scores and patches."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

EPS = 1e-10
FUNCTIONAL_GROUP_START = 1350.0


class DegenerateSpectrumError(ValueError):
    pass


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class WavenumberGrid:
    start: float = 400.0
    count: int = 3200
    spacing: float = 1.125

    def __post_init__(self):
        if self.spacing <= 0 or self.count < 1:
            raise ValueError("grid needs positive spacing and count")

    @property
    def points(self) -> np.ndarray:
        return self.start + self.spacing * np.arange(self.count)

    def nearest(self, wavenumber: float) -> int:
        return int(np.clip(np.rint((wavenumber - self.start) / self.spacing), 0, self.count - 1))


DEFAULT_GRID = WavenumberGrid()


@dataclass(frozen=True)
class Spectrum:
    intensities: np.ndarray
    grid: WavenumberGrid = DEFAULT_GRID

    def __post_init__(self):
        y = np.asarray(self.intensities, dtype=np.float64)
        if y.shape != (self.grid.count,):
            raise ValueError(f"expected {self.grid.count} intensities, got shape {y.shape}")
        if not np.isfinite(y).all() or (y < 0).any():
            raise ValueError("intensities must be finite and non-negative")
        object.__setattr__(self, "intensities", y)

    def scaled(self, c: float) -> "Spectrum":
        return Spectrum(self.intensities * c, self.grid)


@dataclass(frozen=True)
class ModeList:
    wavenumbers: np.ndarray
    intensities: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.wavenumbers, dtype=np.float64).reshape(-1)
        y = np.asarray(self.intensities, dtype=np.float64).reshape(-1)
        if x.shape != y.shape:
            raise ValueError("wavenumbers and intensities differ in length")
        if (x <= 0).any() or (y < 0).any():
            raise ValueError("modes need positive wavenumbers and non-negative intensities")
        object.__setattr__(self, "wavenumbers", x)
        object.__setattr__(self, "intensities", y)

    @classmethod
    def from_pairs(cls, pairs) -> "ModeList":
        arr = np.asarray(list(pairs), dtype=np.float64).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1])

    def __add__(self, other: "ModeList") -> "ModeList":
        return ModeList(np.concatenate([self.wavenumbers, other.wavenumbers]),
                        np.concatenate([self.intensities, other.intensities]))

    def __len__(self) -> int:
        return len(self.wavenumbers)


def lorentzian(x, center, height, half_width):
    return (half_width / (2 * np.pi)) * height / ((x - center) ** 2 + 0.25 * half_width**2)


def broaden(modes: ModeList, grid: WavenumberGrid = DEFAULT_GRID,
            half_width: float = 15.0, scale: float = 0.965) -> Spectrum:
    """Sum of Lorentzians centred at ``scale * x_n``, sampled on the grid."""
    if half_width <= 0:
        raise ValueError("half_width must be positive")
    x = grid.points[:, None]
    y = lorentzian(x, scale * modes.wavenumbers[None, :], modes.intensities[None, :], half_width)
    return Spectrum(y.sum(axis=1) if len(modes) else np.zeros(grid.count), grid)


def normalize(spec: Spectrum) -> Spectrum:
    total = spec.intensities.sum()
    if not total > 0:
        raise DegenerateSpectrumError("cannot normalise an all-zero spectrum")
    return Spectrum(spec.intensities / total, spec.grid)


def _prepared(y: np.ndarray) -> np.ndarray:
    total = y.sum()
    if not total > 0:
        raise DegenerateSpectrumError("cannot normalise an all-zero spectrum")
    return np.maximum(y / total, EPS)


def sid_arrays(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric KL divergence between two non-negative vectors after normalisation."""
    if a.shape != b.shape:
        raise GridMismatchError(f"shapes {a.shape} and {b.shape} differ")
    p, q = _prepared(a), _prepared(b)
    return float(np.sum(p * np.log(p / q) + q * np.log(q / p)))


def _check_grids(a: Spectrum, b: Spectrum) -> None:
    if a.grid != b.grid:
        raise GridMismatchError(f"{a.grid} vs {b.grid}")


def sid(a: Spectrum, b: Spectrum) -> float:
    _check_grids(a, b)
    return sid_arrays(a.intensities, b.intensities)


def sis(a: Spectrum, b: Spectrum) -> float:
    return 1.0 / (1.0 + sid(a, b))


def window_mask(grid: WavenumberGrid, low: float = FUNCTIONAL_GROUP_START) -> np.ndarray:
    return grid.points >= low


def sis_star(a: Spectrum, b: Spectrum, low: float = FUNCTIONAL_GROUP_START) -> float:
    """SIS over the functional-group window, normalised within the window."""
    _check_grids(a, b)
    m = window_mask(a.grid, low)
    return 1.0 / (1.0 + sid_arrays(a.intensities[m], b.intensities[m]))


def patchify(spec: Spectrum, patch_size: int = 64) -> np.ndarray:
    n = spec.grid.count
    if patch_size < 1 or n % patch_size:
        raise ValueError(f"{n} points do not split into patches of {patch_size}")
    return spec.intensities.reshape(n // patch_size, patch_size).copy()


# --- one-record-per-line spectrum files ------------------------------------------

@dataclass(frozen=True)
class SpectrumRecord:
    id: str
    modes: ModeList | None = None
    intensities: np.ndarray | None = None

    def spectrum(self, grid: WavenumberGrid = DEFAULT_GRID) -> Spectrum:
        if self.intensities is not None:
            return Spectrum(self.intensities, grid)
        if self.modes is None:
            raise ValueError(f"record {self.id} has neither modes nor intensities")
        return broaden(self.modes, grid)

    def to_json(self) -> str:
        d: dict = {"id": self.id}
        if self.modes is not None:
            d["modes"] = [[float(x), float(y)] for x, y in zip(self.modes.wavenumbers, self.modes.intensities)]
        if self.intensities is not None:
            d["intensities"] = [float(v) for v in self.intensities]
        return json.dumps(d)


def parse_spectrum_record(line: str) -> SpectrumRecord:
    d = json.loads(line)
    if "id" not in d:
        raise ValueError("spectrum record without id")
    modes = ModeList.from_pairs(d["modes"]) if "modes" in d else None
    inten = np.asarray(d["intensities"], dtype=np.float64) if "intensities" in d else None
    return SpectrumRecord(str(d["id"]), modes, inten)


def read_spectrum_file(path: str | Path) -> Iterator[SpectrumRecord]:
    with open(path) as fh:
        for line in fh:
            if line.strip():
                yield parse_spectrum_record(line)


def write_spectrum_file(path: str | Path, records: Iterable[SpectrumRecord]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")
