"""
Curve data model - discretized positive curves on a common grid
Normalization to mean one, CSV ingestion and monotone interpolation
"""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import (
    AllZero,
    DimensionMismatch,
    EmptySet,
    NegativeValue,
    ParseError,
    ShapeError,
    TooFewKnots,
)

logger = logging.getLogger(__name__)

# Curves closer than this to mean one are accepted as they are
MEAN_TOLERANCE = 1e-9


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Grid:
    """Ordered knots t_1 < ... < t_d in [0, 1] shared by every curve of a set"""

    knots: np.ndarray

    def __post_init__(self):
        knots = _frozen(np.ravel(self.knots))
        if knots.size < 2:
            raise TooFewKnots(f"a grid needs at least 2 knots, got {knots.size}")
        if not np.all(np.isfinite(knots)):
            raise ParseError("grid knots must be finite")
        if np.any(np.diff(knots) <= 0):
            raise ShapeError("grid knots must be strictly increasing")
        if knots[0] < 0 or knots[-1] > 1:
            raise ShapeError("grid knots must lie in [0, 1]")
        object.__setattr__(self, "knots", knots)

    @classmethod
    def equispaced(cls, d: int) -> "Grid":
        return cls(np.linspace(0.0, 1.0, d))

    @property
    def d(self) -> int:
        return int(self.knots.size)

    def __len__(self) -> int:
        return self.d

    def __eq__(self, other) -> bool:
        return isinstance(other, Grid) and np.array_equal(self.knots, other.knots)

    def __hash__(self) -> int:
        return hash(self.knots.tobytes())


@dataclass(frozen=True, eq=False)
class Curve:
    """
    Nonnegative discretized curve with component mean one
    A point of the mean-one hyperplane, i.e. of the simplex scaled by d
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(np.ravel(self.values))
        if values.size != self.grid.d:
            raise DimensionMismatch(f"curve has {values.size} values for a grid of {self.grid.d} knots")
        if not np.all(np.isfinite(values)):
            raise ParseError("curve values must be finite")
        if np.any(values < 0):
            raise NegativeValue(f"curve has a negative value ({values.min():.6g})")
        if abs(values.mean() - 1.0) > MEAN_TOLERANCE:
            raise ShapeError(f"curve mean is {values.mean():.12g}, expected 1 (use normalize)")
        object.__setattr__(self, "values", values)

    @property
    def d(self) -> int:
        return self.grid.d

    def __eq__(self, other) -> bool:
        return (isinstance(other, Curve) and self.grid == other.grid
                and np.array_equal(self.values, other.values))

    def __hash__(self) -> int:
        return hash((self.grid, self.values.tobytes()))


@dataclass(frozen=True)
class CurveSet:
    """Historical curves on one grid, optionally with observed outputs"""

    grid: Grid
    curves: tuple
    outputs: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        curves = tuple(self.curves)
        if not curves:
            raise EmptySet("a curve set needs at least one curve")
        for curve in curves:
            if curve.grid != self.grid:
                raise DimensionMismatch("all curves of a set must share its grid")
        object.__setattr__(self, "curves", curves)
        if self.outputs is not None:
            outputs = _frozen(np.ravel(self.outputs))
            if outputs.size != len(curves):
                raise ShapeError(f"{outputs.size} outputs for {len(curves)} curves")
            object.__setattr__(self, "outputs", outputs)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, grid: Optional[Grid] = None,
                    outputs: Optional[Sequence[float]] = None) -> "CurveSet":
        """Build a set from an n x d array, normalizing every row"""
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        grid = grid or Grid.equispaced(matrix.shape[1])
        curves = tuple(normalize(row, grid) for row in matrix)
        return cls(grid, curves, None if outputs is None else np.asarray(outputs, dtype=float))

    @property
    def n(self) -> int:
        return len(self.curves)

    @property
    def d(self) -> int:
        return self.grid.d

    def __len__(self) -> int:
        return self.n

    def matrix(self) -> np.ndarray:
        """Curves stacked as an n x d array"""
        return np.vstack([curve.values for curve in self.curves])

    def subset(self, indices: Iterable[int]) -> "CurveSet":
        indices = list(indices)
        outputs = None if self.outputs is None else self.outputs[indices]
        return CurveSet(self.grid, tuple(self.curves[i] for i in indices), outputs)


def normalize(values: Union[Sequence[float], np.ndarray], grid: Optional[Grid] = None) -> Curve:
    """
    Divide a nonnegative vector by its mean

    Args:
        values: d >= 2 nonnegative reals, not all zero
        grid: Grid the values live on (equispaced on [0, 1] when omitted)

    Returns:
        Curve proportional to the input with mean one
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size < 2:
        raise TooFewKnots(f"a curve needs at least 2 values, got {values.size}")
    if not np.all(np.isfinite(values)):
        raise ParseError("curve values must be finite")
    if np.any(values < 0):
        raise NegativeValue(f"curve has a negative value ({values.min():.6g})")
    mean = values.mean()
    if mean <= 0:
        raise AllZero("cannot normalize a curve whose values are all zero")
    grid = grid or Grid.equispaced(values.size)
    if abs(mean - 1.0) > MEAN_TOLERANCE:
        logger.debug(f"Renormalizing curve with mean {mean:.12g}")
        values = values / mean
    return Curve(grid, values)


def load_curveset(path: Union[str, Path]) -> CurveSet:
    """
    Read one curve per CSV row

    A first row running strictly upward from exactly 0 to exactly 1 is taken as
    the grid knots; otherwise every row is a curve on equispaced knots.
    Blank lines are ignored. Curves off mean one are renormalized.
    """
    path = Path(path)
    rows: List[List[float]] = []
    with open(path, newline="", encoding="utf-8") as handle:
        for line_number, row in enumerate(csv.reader(handle), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                rows.append([float(cell) for cell in row])
            except ValueError as e:
                raise ParseError(f"{path}:{line_number}: {e}") from None

    if not rows:
        raise ShapeError(f"{path}: no curves found")
    widths = {len(row) for row in rows}
    if len(widths) != 1:
        raise ShapeError(f"{path}: ragged rows (widths {sorted(widths)})")

    table = np.array(rows, dtype=float)
    if np.any(np.isnan(table)):
        raise ParseError(f"{path}: NaN entry")

    grid = None
    if table.shape[0] > 1 and _looks_like_knots(table[0]):
        grid = Grid(table[0])
        table = table[1:]
        logger.info(f"Using the first row of {path.name} as a grid of {grid.d} knots")
    if np.any(table < 0):
        raise NegativeValue(f"{path}: negative entry ({table.min():.6g})")

    renormalized = int(np.sum(np.abs(table.mean(axis=1) - 1.0) > MEAN_TOLERANCE))
    if renormalized:
        logger.info(f"Renormalized {renormalized} of {table.shape[0]} curves from {path.name}")
    curveset = CurveSet.from_matrix(table, grid)
    logger.info(f"Loaded {curveset.n} curves on a grid of {curveset.d} knots from {path}")
    return curveset


def _looks_like_knots(row: np.ndarray) -> bool:
    return bool(row[0] == 0.0 and row[-1] == 1.0 and np.all(np.diff(row) > 0))


def save_curveset(curveset: CurveSet, path: Union[str, Path]) -> Path:
    """Write the knot header and one row per curve

    Round-trippable by load_curveset when the grid runs from 0 to 1.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow([repr(float(t)) for t in curveset.grid.knots])
        for curve in curveset.curves:
            writer.writerow([repr(float(v)) for v in curve.values])
    return path


class CurveInterpolant:
    """Monotonicity-preserving C1 interpolant of a curve, constant outside [t_1, t_d]"""

    def __init__(self, curve: Curve):
        knots = curve.grid.knots
        self.breakpoints = knots
        self._lo = float(knots[0])
        self._hi = float(knots[-1])
        self._pchip = PchipInterpolator(knots, curve.values, extrapolate=True)

    def __call__(self, t):
        t = np.clip(np.asarray(t, dtype=float), self._lo, self._hi)
        return self._pchip(t)


def interpolate(curve: Curve) -> CurveInterpolant:
    """Fritsch-Carlson cubic Hermite interpolant through the knot values"""
    if curve.d < 3:
        raise TooFewKnots(f"interpolation needs at least 3 knots, got {curve.d}")
    return CurveInterpolant(curve)
