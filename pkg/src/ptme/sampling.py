"""Search-domain definition and design-matrix generation.

A :class:`DesignSpace` keeps per-variable bounds; a variable is *fixed*
when its lower and upper bound coincide (fixed variables are excluded
from sampling and always carry their fixed value).  Two samplers are
provided: uniform random sampling and Latin hypercube sampling, the
latter stratifying every free dimension into ``n`` equal intervals with
exactly one sample per stratum.

Design matrices are plain ``(n, dim)`` numpy arrays.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "ConfigurationError",
    "DesignSpace",
    "Dataset",
    "uniform_random_sample",
    "latin_hypercube_sample",
    "quantize",
    "matrix_to_csv",
    "matrix_from_csv",
    "dataset_to_csv",
    "dataset_from_csv",
]


class ConfigurationError(ValueError):
    """Invalid search-space or sampler configuration."""


@dataclass(frozen=True)
class DesignSpace:
    """Box-bounded search domain with an optional integer grid.

    ``lower[j] == upper[j]`` marks variable ``j`` as fixed at that value.
    """

    lower: np.ndarray
    upper: np.ndarray
    integer_valued: bool = True

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise ConfigurationError("lower/upper must be 1-D arrays of equal length")
        if lo.shape[0] == 0:
            raise ConfigurationError("design space needs at least one variable")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ConfigurationError("bounds must be finite")
        if np.any(lo > hi):
            raise ConfigurationError("every lower bound must be <= its upper bound")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def free_mask(self) -> np.ndarray:
        return self.upper > self.lower

    @property
    def n_free(self) -> int:
        return int(np.count_nonzero(self.free_mask))

    @classmethod
    def signal_timing(cls, dim: int, low: float = 4.0, high: float = 60.0,
                      fixed_mask: np.ndarray | None = None,
                      fixed_value: float = 4.0) -> "DesignSpace":
        """Default phase-duration domain: free variables in [low, high].

        By default every second variable (positions 1, 3, 5, ...) is fixed
        at ``fixed_value``; pass an explicit boolean ``fixed_mask`` to
        override that convention.
        """
        if dim < 1:
            raise ConfigurationError("dim must be >= 1")
        if fixed_mask is None:
            fixed_mask = np.zeros(dim, dtype=bool)
            fixed_mask[1::2] = True
        else:
            fixed_mask = np.asarray(fixed_mask, dtype=bool)
            if fixed_mask.shape != (dim,):
                raise ConfigurationError("fixed_mask length must equal dim")
        lo = np.full(dim, low)
        hi = np.full(dim, high)
        lo[fixed_mask] = fixed_value
        hi[fixed_mask] = fixed_value
        return cls(lo, hi, integer_valued=True)


@dataclass
class Dataset:
    """Design matrix plus the true objective value of each row."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.ndim != 2:
            raise ConfigurationError("x must be a 2-D design matrix")
        if self.y.shape != (self.x.shape[0],):
            raise ConfigurationError("y length must match the number of rows")
        if not np.all(np.isfinite(self.y)):
            raise ConfigurationError("objective values must be finite")

    def __len__(self) -> int:
        return self.x.shape[0]


def _check_n(n: int):
    if n < 1:
        raise ConfigurationError("sample count must be >= 1")


def uniform_random_sample(space: DesignSpace, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` samples, each free entry independent uniform in its bounds."""
    _check_n(n)
    rng = np.random.default_rng(seed)
    out = np.tile(space.lower, (n, 1))
    free = space.free_mask
    if free.any():
        out[:, free] = rng.uniform(space.lower[free], space.upper[free],
                                   size=(n, space.n_free))
    return out


def _open_unit(rng: np.random.Generator, shape) -> np.ndarray:
    """Uniform draws from the open interval (0, 1); exact zeros are redrawn."""
    u = rng.random(shape)
    while True:
        zero = u == 0.0
        if not zero.any():
            return u
        u[zero] = rng.random(int(zero.sum()))


def latin_hypercube_sample(space: DesignSpace, n: int, seed: int) -> np.ndarray:
    """Latin hypercube design: one sample per stratum in every free dimension.

    For free dimension j and a random permutation pi of 1..n,
    ``x[i, j] = a + (b - a) * (pi(i) - u) / n`` with u drawn from (0, 1),
    so every sample lands strictly inside its stratum.
    """
    _check_n(n)
    rng = np.random.default_rng(seed)
    out = np.tile(space.lower, (n, 1))
    for j in np.flatnonzero(space.free_mask):
        rank = rng.permutation(n) + 1
        u = _open_unit(rng, n)
        a, b = space.lower[j], space.upper[j]
        out[:, j] = a + (b - a) * (rank - u) / n
    return out


def quantize(matrix: np.ndarray, space: DesignSpace) -> np.ndarray:
    """Map a continuous design matrix onto the integer grid of the space.

    Each free interval [a, b] is split into b - a + 1 equal-width cells and
    a value is assigned the integer of its cell, then clamped to [a, b];
    out-of-bound inputs clamp to the nearest bound.  Unlike plain rounding
    this keeps equal continuous mass per integer, so an LHS design with one
    stratum per integer hits every grid point exactly once.
    """
    if not space.integer_valued:
        raise ConfigurationError("quantize requires an integer-valued space")
    x = np.asarray(matrix, dtype=float)
    out = np.empty_like(x, dtype=np.int64)
    free = space.free_mask
    lo, hi = space.lower, space.upper
    for j in range(space.dim):
        col = x[:, j]
        if free[j]:
            t = (col - lo[j]) / (hi[j] - lo[j])
            grid = np.floor(lo[j] + t * (hi[j] - lo[j] + 1.0))
            out[:, j] = np.clip(grid, lo[j], hi[j]).astype(np.int64)
        else:
            out[:, j] = np.int64(lo[j])
    return out


def matrix_to_csv(matrix: np.ndarray, path: str | Path):
    """Write a design matrix as CSV with header ``x0,...,x{D-1}``."""
    x = np.asarray(matrix)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j}" for j in range(x.shape[1])])
        for row in x:
            writer.writerow([_fmt(v) for v in row])


def dataset_to_csv(data: Dataset, path: str | Path):
    """Design matrix plus a final ``y`` column of true objective values."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j}" for j in range(data.x.shape[1])] + ["y"])
        for row, value in zip(data.x, data.y):
            writer.writerow([_fmt(v) for v in row] + [_fmt(value)])


def dataset_from_csv(path: str | Path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "y":
            raise ConfigurationError(f"{path}: expected a trailing 'y' column")
        rows = [[float(v) for v in row] for row in reader]
    arr = np.array(rows, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != len(header):
        raise ConfigurationError(f"{path}: row width does not match header")
    return Dataset(arr[:, :-1], arr[:, -1])


def matrix_from_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    out = np.array(rows, dtype=float)
    if out.size and out.shape[1] != len(header):
        raise ConfigurationError(f"{path}: row width does not match header")
    return out


def _fmt(v) -> str:
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))
