"""Grids, degenerate diffusion coefficients, derivative stencils, weighted norms.

Everything downstream works on a cell-centered grid: the diffusion a(x)
vanishes at x = 0 (and usually x = 1), and keeping every spatial node strictly
inside (0, 1) means weights like 1/a(x) are only ever evaluated where they are
finite.  Norms are midpoint-rule quadratures over the cells.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

__all__ = [
    "SpaceTimeGrid",
    "DegenerateCoefficient",
    "SpaceTimeField",
    "NormKind",
    "build_grid",
    "eval_coefficient",
    "spatial_derivatives",
    "time_derivative",
    "weighted_norm",
    "static_field",
]


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform tensor grid on (0,1) x [0,T].

    Spatial nodes are the cell centers x_i = (i + 1/2) h with h = 1/n_x, so no
    node touches the degeneracy points x = 0, 1.  Time levels are t_k = k T/n_t
    for k = 0..n_t; trajectories therefore hold n_t + 1 columns.
    """

    n_x: int
    n_t: int
    T: float

    def __post_init__(self):
        if self.n_x < 4:
            raise ValueError(f"n_x must be >= 4, got {self.n_x}")
        if self.n_t < 2:
            raise ValueError(f"n_t must be >= 2, got {self.n_t}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")

    @property
    def h(self) -> float:
        return 1.0 / self.n_x

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @cached_property
    def x(self) -> np.ndarray:
        x = (np.arange(self.n_x) + 0.5) / self.n_x
        x.setflags(write=False)
        return x

    @cached_property
    def t(self) -> np.ndarray:
        t = np.linspace(0.0, self.T, self.n_t + 1)
        t.setflags(write=False)
        return t

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_x, self.n_t + 1)


def build_grid(n_x: int, n_t: int, T: float) -> SpaceTimeGrid:
    """Validated constructor for :class:`SpaceTimeGrid`."""
    return SpaceTimeGrid(int(n_x), int(n_t), float(T))


_FAMILIES = ("power", "wright_fischer", "quadratic_oil")


@dataclass(frozen=True)
class DegenerateCoefficient:
    """Diffusion coefficient a(x) that vanishes at one or both endpoints.

    Families:
        power:          a(x) = x^beta (1-x)^delta,  beta, delta >= 2
        wright_fischer: a(x) = x (1-x)
        quadratic_oil:  a(x) = (gamma^2 / 2) x^2

    a, a_x and a_xx are closed forms; endpoint values are the one-sided
    limits.  ``log_derivative`` returns a_x/a in closed form and must only be
    evaluated at interior points (it blows up at the degeneracy, while
    products like c1 * a_x/a with |c1| <= C sqrt(a) stay bounded).
    """

    family: str
    beta: float = 2.0
    delta: float = 2.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown coefficient family '{self.family}'")
        if self.family == "power" and (self.beta < 2.0 or self.delta < 2.0):
            raise ValueError("power family requires beta >= 2 and delta >= 2")
        if self.family == "quadratic_oil" and not self.gamma > 0:
            raise ValueError("quadratic_oil family requires gamma > 0")

    @classmethod
    def power(cls, beta: float = 2.0, delta: float = 2.0) -> "DegenerateCoefficient":
        return cls("power", beta=float(beta), delta=float(delta))

    @classmethod
    def wright_fischer(cls) -> "DegenerateCoefficient":
        return cls("wright_fischer")

    @classmethod
    def quadratic_oil(cls, gamma: float = 1.0) -> "DegenerateCoefficient":
        return cls("quadratic_oil", gamma=float(gamma))

    def a(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "power":
            return x**self.beta * (1.0 - x) ** self.delta
        if self.family == "wright_fischer":
            return x * (1.0 - x)
        return 0.5 * self.gamma**2 * x**2

    def a_x(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "power":
            b, d = self.beta, self.delta
            return x ** (b - 1.0) * (1.0 - x) ** (d - 1.0) * (b * (1.0 - x) - d * x)
        if self.family == "wright_fischer":
            return 1.0 - 2.0 * x
        return self.gamma**2 * x

    def a_xx(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "power":
            b, d = self.beta, self.delta
            return (
                b * (b - 1.0) * x ** (b - 2.0) * (1.0 - x) ** d
                - 2.0 * b * d * x ** (b - 1.0) * (1.0 - x) ** (d - 1.0)
                + d * (d - 1.0) * x**b * (1.0 - x) ** (d - 2.0)
            )
        if self.family == "wright_fischer":
            return np.full_like(x, -2.0)
        return np.full_like(x, self.gamma**2)

    def sqrt_a(self, x):
        return np.sqrt(self.a(x))

    def log_derivative(self, x):
        """a_x(x) / a(x) in closed form, finite only for interior x."""
        x = np.asarray(x, dtype=float)
        if self.family == "power":
            return self.beta / x - self.delta / (1.0 - x)
        if self.family == "wright_fischer":
            return 1.0 / x - 1.0 / (1.0 - x)
        return 2.0 / x


def eval_coefficient(coeff: DegenerateCoefficient, x) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate (a, a_x) at points x in [0, 1]."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("coefficient evaluation points must lie in [0, 1]")
    return coeff.a(x), coeff.a_x(x)


@dataclass
class SpaceTimeField:
    """Scalar samples on the tensor grid, shape (n_x, n_t + 1).

    The array is copied and frozen at construction; fields are values, not
    buffers, everywhere in the package.
    """

    values: np.ndarray
    grid: SpaceTimeGrid

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(
                f"field shape {v.shape} does not match grid shape {self.grid.shape}"
            )
        v.setflags(write=False)
        self.values = v

    @classmethod
    def zeros(cls, grid: SpaceTimeGrid) -> "SpaceTimeField":
        return cls(np.zeros(grid.shape), grid)

    @classmethod
    def from_function(cls, grid: SpaceTimeGrid, fn: Callable) -> "SpaceTimeField":
        """Sample fn(x, t) with x broadcast down columns and t across rows."""
        vals = np.broadcast_to(
            np.asarray(fn(grid.x[:, None], grid.t[None, :]), dtype=float), grid.shape
        )
        return cls(vals, grid)

    def at_time(self, k: int) -> np.ndarray:
        return self.values[:, k]


def static_field(grid: SpaceTimeGrid, profile) -> SpaceTimeField:
    """Replicate a spatial profile across all time levels."""
    p = np.asarray(profile, dtype=float)
    if p.shape != (grid.n_x,):
        raise ValueError(f"profile shape {p.shape} does not match n_x={grid.n_x}")
    return SpaceTimeField(np.repeat(p[:, None], grid.n_t + 1, axis=1), grid)


# ---------------------------------------------------------------------------
# stencils
#
# Interior nodes use standard central differences.  At the two cells next to
# the boundary there are two closures:
#   * "dirichlet": the field extends by the homogeneous boundary value 0 at
#     x = 0 and x = 1 (valid for u and for a*m).  First derivative uses the
#     3-point one-sided stencil through the boundary point (second order);
#     second derivative uses the 4-point one-sided stencil through the
#     boundary point (second order).
#   * "free": no boundary information, plain one-sided second-order stencils.
# ---------------------------------------------------------------------------


def _dx_array(f: np.ndarray, h: float, closure: str) -> np.ndarray:
    out = np.empty_like(f, dtype=float)
    out[1:-1] = (f[2:] - f[:-2]) / (2.0 * h)
    if closure == "dirichlet":
        out[0] = f[0] / h + f[1] / (3.0 * h)
        out[-1] = -(f[-1] / h + f[-2] / (3.0 * h))
    elif closure == "free":
        out[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h)
        out[-1] = (3.0 * f[-1] - 4.0 * f[-2] + f[-3]) / (2.0 * h)
    else:
        raise ValueError(f"unknown closure '{closure}'")
    return out


def _dxx_array(f: np.ndarray, h: float, closure: str) -> np.ndarray:
    out = np.empty_like(f, dtype=float)
    h2 = h * h
    out[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / h2
    if closure == "dirichlet":
        out[0] = (-5.0 * f[0] + 2.0 * f[1] - 0.2 * f[2]) / h2
        out[-1] = (-5.0 * f[-1] + 2.0 * f[-2] - 0.2 * f[-3]) / h2
    elif closure == "free":
        out[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / h2
        out[-1] = (2.0 * f[-1] - 5.0 * f[-2] + 4.0 * f[-3] - f[-4]) / h2
    else:
        raise ValueError(f"unknown closure '{closure}'")
    return out


def spatial_derivatives(
    field: SpaceTimeField, closure: str = "dirichlet"
) -> tuple[SpaceTimeField, SpaceTimeField]:
    """(f_x, f_xx) of a trajectory, second order including the closures."""
    g = field.grid
    fx = _dx_array(field.values, g.h, closure)
    fxx = _dxx_array(field.values, g.h, closure)
    return SpaceTimeField(fx, g), SpaceTimeField(fxx, g)


_D3_FWD = np.array([-2.5, 9.0, -12.0, 7.0, -1.5])


def time_derivative(field: SpaceTimeField, order: int = 1) -> SpaceTimeField:
    """k-th time derivative along rows, second order everywhere.

    Central stencils at interior time levels, one-sided second-order stencils
    at t = 0 and t = T.  Requires n_t >= order + 2.
    """
    if order not in (1, 2, 3):
        raise ValueError(f"order must be 1, 2 or 3, got {order}")
    g = field.grid
    if g.n_t < order + 2:
        raise ValueError(f"n_t={g.n_t} too coarse for order-{order} time derivative")
    v = field.values
    tau = g.dt
    out = np.empty_like(v)
    if order == 1:
        out[:, 1:-1] = (v[:, 2:] - v[:, :-2]) / (2.0 * tau)
        out[:, 0] = (-3.0 * v[:, 0] + 4.0 * v[:, 1] - v[:, 2]) / (2.0 * tau)
        out[:, -1] = (3.0 * v[:, -1] - 4.0 * v[:, -2] + v[:, -3]) / (2.0 * tau)
    elif order == 2:
        t2 = tau * tau
        out[:, 1:-1] = (v[:, 2:] - 2.0 * v[:, 1:-1] + v[:, :-2]) / t2
        out[:, 0] = (2.0 * v[:, 0] - 5.0 * v[:, 1] + 4.0 * v[:, 2] - v[:, 3]) / t2
        out[:, -1] = (2.0 * v[:, -1] - 5.0 * v[:, -2] + 4.0 * v[:, -3] - v[:, -4]) / t2
    else:
        t3 = tau**3
        out[:, 2:-2] = (
            -v[:, :-4] + 2.0 * v[:, 1:-3] - 2.0 * v[:, 3:-1] + v[:, 4:]
        ) / (2.0 * t3)
        w = _D3_FWD / t3
        for j in (0, 1):
            out[:, j] = v[:, j : j + 5] @ w
        wb = -_D3_FWD / t3  # mirrored stencil, odd order flips sign
        nc = v.shape[1]
        for j in (nc - 2, nc - 1):
            out[:, j] = v[:, j - 4 : j + 1] @ wb[::-1]
    return SpaceTimeField(out, g)


class NormKind(enum.Enum):
    """Weighted norms used throughout; values are the JSON/CSV tags."""

    L2_INV_A = "L2_inv_a"
    H1_INV_A = "H1_inv_a"
    H2_INV_A = "H2_inv_a"
    L2_A = "L2_a"
    H1A_DIV = "H1a_div"
    L2_PLAIN = "L2_plain"


def weighted_norm(
    values, kind: NormKind, coeff: DegenerateCoefficient, grid: SpaceTimeGrid
) -> float:
    """Midpoint-rule weighted norm of a spatial slice.

    Kinds:
        L2_INV_A:  ( int f^2 / a )^(1/2)
        H1_INV_A:  ( int f^2 / a + int f_x^2 )^(1/2)          f = 0 on boundary
        H2_INV_A:  ( int a f_xx^2 )^(1/2)                      seminorm
        L2_A:      ( int a f^2 )^(1/2)
        H1A_DIV:   ( int a f^2 + int ((a f)_x)^2 )^(1/2)       a f = 0 on boundary
        L2_PLAIN:  ( int f^2 )^(1/2)
    """
    v = np.asarray(values, dtype=float)
    if v.shape != (grid.n_x,):
        raise ValueError(f"expected spatial slice of shape ({grid.n_x},), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("weighted_norm input contains non-finite values")
    h = grid.h
    a = coeff.a(grid.x)
    if kind is NormKind.L2_INV_A:
        sq = h * np.sum(v * v / a)
    elif kind is NormKind.H1_INV_A:
        fx = _dx_array(v, h, "dirichlet")
        sq = h * np.sum(v * v / a) + h * np.sum(fx * fx)
    elif kind is NormKind.H2_INV_A:
        fxx = _dxx_array(v, h, "dirichlet")
        sq = h * np.sum(a * fxx * fxx)
    elif kind is NormKind.L2_A:
        sq = h * np.sum(a * v * v)
    elif kind is NormKind.H1A_DIV:
        avx = _dx_array(a * v, h, "dirichlet")
        sq = h * np.sum(a * v * v) + h * np.sum(avx * avx)
    elif kind is NormKind.L2_PLAIN:
        sq = h * np.sum(v * v)
    else:
        raise ValueError(f"unknown norm kind {kind!r}")
    return float(np.sqrt(sq))
