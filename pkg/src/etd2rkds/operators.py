"""Grids, directional finite-difference operators and their eigensystems.

A ``d``-dimensional Dirichlet Laplacian-plus-potential on a box is a
Kronecker sum of one tridiagonal Toeplitz matrix per axis.  Each of these
matrices is symmetric with a closed-form eigensystem, which is what every
solver backend builds on.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np


class Axis(enum.IntEnum):
    X = 0
    Y = 1
    Z = 2

    @classmethod
    def parse(cls, value) -> "Axis":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            return cls[value.upper()]
        return cls(int(value))


@dataclass(frozen=True)
class Grid:
    """Uniform grid on a box; only interior nodes carry unknowns."""

    dim: int
    bounds: Tuple[Tuple[float, float], ...]
    m: Tuple[int, ...]

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if len(self.bounds) != self.dim or len(self.m) != self.dim:
            raise ValueError("bounds and m must have one entry per axis")
        for ax, ((lo, hi), m) in enumerate(zip(self.bounds, self.m)):
            if int(m) != m or m < 2:
                raise ValueError(f"axis {Axis(ax).name}: need m >= 2 subintervals, got {m}")
            if not hi > lo:
                raise ValueError(f"axis {Axis(ax).name}: non-positive extent ({lo}, {hi})")

    @property
    def h(self) -> Tuple[float, ...]:
        return tuple((hi - lo) / m for (lo, hi), m in zip(self.bounds, self.m))

    @property
    def shape(self) -> Tuple[int, ...]:
        """Interior node counts, ``m - 1`` per axis."""
        return tuple(m - 1 for m in self.m)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def axes(self) -> Tuple[Axis, ...]:
        return tuple(Axis(i) for i in range(self.dim))

    def coords(self, axis) -> np.ndarray:
        """Interior node coordinates along one axis."""
        ax = Axis.parse(axis)
        (lo, _), m, h = self.bounds[ax], self.m[ax], self.h[ax]
        return lo + h * np.arange(1, m)

    def mesh(self) -> Tuple[np.ndarray, ...]:
        """Coordinate arrays of shape ``self.shape`` (``ij`` indexing)."""
        return tuple(np.meshgrid(*(self.coords(a) for a in self.axes()), indexing="ij"))


def build_grid(dim: int, bounds: Sequence[Sequence[float]], m_per_axis: Sequence[int]) -> Grid:
    if isinstance(m_per_axis, (int, np.integer)):
        m_per_axis = (int(m_per_axis),) * dim
    return Grid(
        dim=int(dim),
        bounds=tuple((float(lo), float(hi)) for lo, hi in bounds),
        m=tuple(int(m) for m in m_per_axis),
    )


@dataclass(frozen=True)
class ToeplitzTridiagOperator:
    """``(1/h^2) tridiag(-kappa, 2 kappa + (q/dim_share) h^2, -kappa)`` of order ``n``."""

    n: int
    kappa: float
    q: float
    h: float
    dim_share: int
    diag: float = field(init=False)
    off: float = field(init=False)

    def __post_init__(self):
        h2 = self.h * self.h
        object.__setattr__(self, "diag", (2.0 * self.kappa + (self.q / self.dim_share) * h2) / h2)
        object.__setattr__(self, "off", -self.kappa / h2)

    def dense(self) -> np.ndarray:
        A = np.diag(np.full(self.n, self.diag))
        if self.n > 1:
            idx = np.arange(self.n - 1)
            A[idx, idx + 1] = self.off
            A[idx + 1, idx] = self.off
        return A

    def sparse(self):
        import scipy.sparse as sp

        return sp.diags(
            [np.full(self.n - 1, self.off), np.full(self.n, self.diag), np.full(self.n - 1, self.off)],
            [-1, 0, 1],
            format="csr",
        )

    def scaled(self, c: float) -> "ToeplitzTridiagOperator":
        """The operator ``c * self`` (used for per-component diffusivities)."""
        return ToeplitzTridiagOperator(self.n, self.kappa * c, self.q * c, self.h, self.dim_share)


def build_operator(grid: Grid, axis, kappa: float, q: float) -> ToeplitzTridiagOperator:
    ax = Axis.parse(axis)
    if ax >= grid.dim:
        raise ValueError(f"axis {ax.name} not valid for a {grid.dim}D grid")
    if not kappa > 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    if q < 0:
        raise ValueError(f"q must be non-negative, got {q}")
    return ToeplitzTridiagOperator(
        n=grid.shape[ax], kappa=float(kappa), q=float(q), h=grid.h[ax], dim_share=grid.dim
    )


@dataclass(frozen=True)
class SpectralFactor:
    """``A = P diag(eigvals) P^T`` with ``P`` orthogonal, eigenvalues ascending."""

    n: int
    eigvals: np.ndarray
    P: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.P * self.eigvals) @ self.P.T


def spectral_factor(op: ToeplitzTridiagOperator) -> SpectralFactor:
    n = op.n
    k = np.arange(1, n + 1)
    theta = k * np.pi / (n + 1)
    # off < 0, so diag + 2 off cos(theta_k) increases with k
    eigvals = op.diag + 2.0 * op.off * np.cos(theta)
    if op.off > 0:
        order = np.argsort(eigvals)
        eigvals, k = eigvals[order], k[order]
    i = np.arange(1, n + 1)
    P = np.sqrt(2.0 / (n + 1)) * np.sin(np.outer(i, k) * np.pi / (n + 1))
    # first row sin(k pi/(n+1)) > 0 for 1 <= k <= n, so the sign convention holds already
    eigvals.setflags(write=False)
    P.setflags(write=False)
    return SpectralFactor(n=n, eigvals=eigvals, P=P)
