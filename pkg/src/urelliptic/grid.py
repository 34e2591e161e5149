"""Uniform Cartesian grids and fields living on their cells.

Values are stored at cell centers: cell ``i`` of a grid with origin ``lo``
and spacing ``h`` is the box ``[lo + i*h, lo + (i+1)*h]`` with center
``lo + (i + 1/2)*h``.  Every other module refers to these centers as
"nodes".
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_MAGIC = b"URGF"


@dataclass(frozen=True)
class Grid:
    lo: tuple[float, ...]
    h: float
    shape: tuple[int, ...]

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("grid spacing must be positive")
        if len(self.lo) != len(self.shape):
            raise ValueError("origin and shape dimensions differ")
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "shape", tuple(int(v) for v in self.shape))

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def hi(self) -> tuple[float, ...]:
        return tuple(l + n * self.h for l, n in zip(self.lo, self.shape))

    def axis(self, k: int) -> np.ndarray:
        """Center coordinates along axis ``k``."""
        return self.lo[k] + (np.arange(self.shape[k]) + 0.5) * self.h

    def centers(self) -> list[np.ndarray]:
        """Dense coordinate arrays (``indexing='ij'``), one per axis."""
        return np.meshgrid(*[self.axis(k) for k in range(self.dim)], indexing="ij")

    def points(self, index) -> np.ndarray:
        index = np.asarray(index)
        return np.asarray(self.lo) + (index + 0.5) * self.h

    def index_of(self, point) -> tuple[int, ...]:
        """Index of the cell whose center is nearest to ``point`` (clipped)."""
        p = np.asarray(point, dtype=float)
        idx = np.floor((p - np.asarray(self.lo)) / self.h).astype(int)
        idx = np.clip(idx, 0, np.asarray(self.shape) - 1)
        return tuple(int(i) for i in idx)

    def indices_of(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        idx = np.floor((p - np.asarray(self.lo)) / self.h).astype(np.int64)
        return np.clip(idx, 0, np.asarray(self.shape) - 1)

    def ravel(self, index) -> np.ndarray:
        index = np.atleast_2d(np.asarray(index))
        return np.ravel_multi_index(tuple(index.T), self.shape)

    def unravel(self, flat) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(flat), self.shape), axis=-1)

    def distance_from(self, point) -> np.ndarray:
        c = self.centers()
        return np.sqrt(sum((ck - pk) ** 2 for ck, pk in zip(c, point)))

    @classmethod
    def box(cls, lo, hi, h) -> "Grid":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        shape = np.maximum(np.round((hi - lo) / h).astype(int), 1)
        return cls(tuple(lo), float(h), tuple(shape))


@dataclass
class GridField:
    """Scalar (or matrix-valued, trailing axes) data on the cells of a grid."""

    grid: Grid
    values: np.ndarray
    mask: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[: self.grid.dim] != self.grid.shape:
            raise ValueError(
                f"values shape {self.values.shape} does not match grid {self.grid.shape}"
            )

    def __mul__(self, c: float) -> "GridField":
        return GridField(self.grid, self.values * c, self.mask)

    __rmul__ = __mul__

    def at(self, point) -> float:
        return float(self.values[self.grid.index_of(point)])

    def sup_norm(self, region: np.ndarray | None = None) -> float:
        v = self.values if region is None else self.values[region]
        return float(np.max(np.abs(v))) if v.size else 0.0

    @classmethod
    def sample(cls, grid: Grid, fn, mask=None) -> "GridField":
        return cls(grid, fn(*grid.centers()), mask)


def write_field(path, f: GridField) -> None:
    """Binary grid format: magic, ndim, shape, h, origin, float64 payload (C order, little endian)."""
    vals = np.ascontiguousarray(f.values, dtype="<f8")
    g = f.grid
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", g.dim))
        fh.write(struct.pack(f"<{g.dim}Q", *g.shape))
        fh.write(struct.pack("<d", g.h))
        fh.write(struct.pack(f"<{g.dim}d", *g.lo))
        extra = vals.shape[g.dim:]
        fh.write(struct.pack("<I", len(extra)))
        if extra:
            fh.write(struct.pack(f"<{len(extra)}Q", *extra))
        fh.write(vals.tobytes(order="C"))


def read_field(path) -> GridField:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not a grid field file")
    off = 4
    (dim,) = struct.unpack_from("<I", data, off)
    off += 4
    shape = struct.unpack_from(f"<{dim}Q", data, off)
    off += 8 * dim
    (h,) = struct.unpack_from("<d", data, off)
    off += 8
    lo = struct.unpack_from(f"<{dim}d", data, off)
    off += 8 * dim
    (nextra,) = struct.unpack_from("<I", data, off)
    off += 4
    extra = struct.unpack_from(f"<{nextra}Q", data, off) if nextra else ()
    off += 8 * nextra
    vals = np.frombuffer(data, dtype="<f8", offset=off).reshape(tuple(shape) + tuple(extra))
    return GridField(Grid(lo, h, shape), vals.copy())
