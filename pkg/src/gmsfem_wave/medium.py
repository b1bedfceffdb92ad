"""Coefficients and sources.

``kappa`` multiplies the velocity time derivative (inverse bulk modulus in the
first-order system), ``rho`` multiplies the pressure time derivative.  Both
are constant on every fine triangle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import FineMesh

__all__ = [
    "MediumField",
    "RasterGrid",
    "SourceConfig",
    "constant_medium",
    "layered_random_medium",
    "sample_raster",
    "read_raster",
    "write_raster",
    "ricker",
    "ricker_time",
    "ricker_space",
    "load_vector",
]


@dataclass(frozen=True, eq=False)
class MediumField:
    kappa: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        for name in ("kappa", "rho"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.ndim != 1:
                raise ValueError(f"{name} must be one value per fine element")
            if not np.all(np.isfinite(a)) or np.any(a <= 0):
                raise ValueError(f"{name} must be positive and finite")
            object.__setattr__(self, name, a)
        if len(self.kappa) != len(self.rho):
            raise ValueError("kappa and rho lengths differ")

    def scaled(self, s_kappa: float = 1.0, s_rho: float = 1.0) -> "MediumField":
        return MediumField(self.kappa * s_kappa, self.rho * s_rho)


def constant_medium(f: FineMesh, k: float = 1.0, r: float = 1.0) -> MediumField:
    if not (k > 0 and r > 0):
        raise ValueError("coefficients must be positive")
    nt = f.n_triangles
    return MediumField(np.full(nt, float(k)), np.full(nt, float(r)))


def layered_random_medium(f: FineMesh, seed: int = 7, layers: int = 16,
                          contrast: float = 10.0) -> MediumField:
    """Horizontal bands of equal height over the unit square.

    The random field is the bulk modulus ``1/kappa``: band values are i.i.d.
    uniform on ``[1, contrast]`` drawn from a PCG64 generator, and elements
    are assigned by the height of their centroid.  ``rho = 1``.
    """
    if layers < 1:
        raise ValueError("layers must be at least 1")
    if contrast < 1:
        raise ValueError("contrast must be at least 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    modulus = 1.0 + (contrast - 1.0) * rng.random(layers)
    y = f.centroids[:, 1]
    band = np.clip(np.floor(y * layers).astype(np.int64), 0, layers - 1)
    return MediumField(1.0 / modulus[band], np.ones(f.n_triangles))


@dataclass(frozen=True, eq=False)
class RasterGrid:
    """Cell-centred raster over ``[x0, x1] x [y0, y1]``.

    ``values[iy * nx + ix]`` is the cell in column ``ix`` and row ``iy``, rows
    counted from ``y0`` upward.
    """

    nx: int
    ny: int
    values: np.ndarray
    extent: tuple = (0.0, 0.0, 1.0, 1.0)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if self.nx < 1 or self.ny < 1 or v.size != self.nx * self.ny:
            raise ValueError(f"raster needs {self.nx}*{self.ny} values, got {v.size}")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ValueError("raster values must be positive and finite")
        x0, y0, x1, y1 = (float(a) for a in self.extent)
        if not (x1 > x0 and y1 > y0):
            raise ValueError("raster extent is empty")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "extent", (x0, y0, x1, y1))

    def lookup(self, points: np.ndarray) -> np.ndarray:
        x0, y0, x1, y1 = self.extent
        pts = np.atleast_2d(points)
        ix = np.floor((pts[:, 0] - x0) / (x1 - x0) * self.nx).astype(np.int64)
        iy = np.floor((pts[:, 1] - y0) / (y1 - y0) * self.ny).astype(np.int64)
        ix = np.clip(ix, 0, self.nx - 1)
        iy = np.clip(iy, 0, self.ny - 1)
        return self.values[iy * self.nx + ix]


def sample_raster(f: FineMesh, g: RasterGrid, rho: RasterGrid | None = None) -> MediumField:
    """Nearest-cell sampling at fine-element centroids."""
    lo = f.vertices.min(axis=0)
    hi = f.vertices.max(axis=0)
    for grid in (g, rho):
        if grid is None:
            continue
        x0, y0, x1, y1 = grid.extent
        tol = 1e-12 * max(1.0, float(np.abs(hi).max()))
        if x0 > lo[0] + tol or y0 > lo[1] + tol or x1 < hi[0] - tol or y1 < hi[1] - tol:
            raise ValueError("raster extent does not cover the domain")
    c = f.centroids
    kappa = g.lookup(c)
    r = rho.lookup(c) if rho is not None else np.ones(f.n_triangles)
    return MediumField(kappa, r)


def read_raster(path) -> RasterGrid:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 6:
            raise ValueError(f"{path}: header must be 'nx ny x0 y0 x1 y1'")
        nx, ny = int(header[0]), int(header[1])
        extent = tuple(float(a) for a in header[2:])
        values = np.array(fh.read().split(), dtype=float)
    return RasterGrid(nx, ny, values, extent)


def write_raster(g: RasterGrid, path, per_line: int | None = None) -> None:
    per_line = per_line or g.nx
    x0, y0, x1, y1 = g.extent
    with open(path, "w") as fh:
        fh.write(f"{g.nx} {g.ny} {x0!r} {y0!r} {x1!r} {y1!r}\n")
        for i in range(0, g.values.size, per_line):
            fh.write(" ".join(repr(float(v)) for v in g.values[i:i + per_line]) + "\n")


@dataclass(frozen=True)
class SourceConfig:
    f0: float = 20.0
    delta: float = 1.0 / 32.0
    center: tuple = (0.5, 0.5)

    def __post_init__(self):
        if not self.f0 > 0:
            raise ValueError("f0 must be positive")
        if not self.delta > 0:
            raise ValueError("delta must be positive")


def ricker_time(t, f0: float):
    """Temporal factor ``(t - 2/f0) exp(-pi^2 f0^2 (t - 2/f0)^2)``."""
    s = np.asarray(t, dtype=float) - 2.0 / f0
    return s * np.exp(-(np.pi * f0 * s) ** 2)


def ricker_space(x, s: SourceConfig):
    """Gaussian bump ``delta^-2 exp(-|x - center|^2 / delta^2)``."""
    x = np.asarray(x, dtype=float)
    d2 = np.sum((x - np.asarray(s.center)) ** 2, axis=-1)
    return np.exp(-d2 / s.delta**2) / s.delta**2


def ricker(t, x, s: SourceConfig):
    return ricker_space(x, s) * ricker_time(t, s.f0)


def load_vector(f: FineMesh, s: SourceConfig) -> np.ndarray:
    """Spatial part of the pressure load, ``g(centroid) |tau|`` per fine element.

    The full load at time ``t`` is this vector times ``ricker_time(t, f0)``.
    """
    return ricker_space(f.centroids, s) * f.areas
