"""
Uniform grid geometry on an axis-aligned rectangle.

Interior nodes are ``x_i = x_min + i*h`` for ``i = 1..n`` (same in ``y``);
indices ``0`` and ``n+1`` sit on the boundary. Unknowns are ordered
lexicographically, ``index(i, j) = n*(i-1) + (j-1)``, which is the C-order
flattening of an ``(n, n)`` array indexed ``[i-1, j-1]``.

Besides the scalar helpers used by tests and diagnostics, the module exposes
vectorised versions (``locate_many``, ``ray_exit_many``) that the
discretisation calls with one entry per grid point.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigurationError, DegenerateStencilError, OutOfDomainError

#: Absolute distance (domain units) under which a point is snapped onto the boundary.
SNAP_TOL = 1e-12

#: Relative tolerance used when checking that cells are square.
_SQUARE_RTOL = 1e-12


@dataclass(frozen=True)
class Domain:
    """Closed rectangle ``[x_min, x_max] x [y_min, y_max]``."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ConfigurationError(
                f"degenerate domain [{self.x_min}, {self.x_max}] x [{self.y_min}, {self.y_max}]"
            )

    @classmethod
    def square(cls, lo: float, hi: float) -> Domain:
        return cls(lo, hi, lo, hi)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def max_radius(self) -> float:
        """Largest distance from the origin to a point of the rectangle."""
        xs = max(abs(self.x_min), abs(self.x_max))
        ys = max(abs(self.y_min), abs(self.y_max))
        return float(np.hypot(xs, ys))

    def snap(self, x, y):
        """Pull coordinates within ``SNAP_TOL`` of an edge exactly onto it."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        x = np.where(np.abs(x - self.x_min) <= SNAP_TOL, self.x_min, x)
        x = np.where(np.abs(x - self.x_max) <= SNAP_TOL, self.x_max, x)
        y = np.where(np.abs(y - self.y_min) <= SNAP_TOL, self.y_min, y)
        y = np.where(np.abs(y - self.y_max) <= SNAP_TOL, self.y_max, y)
        return x, y

    def contains(self, x, y):
        """Membership in the closed rectangle, after snapping."""
        x, y = self.snap(x, y)
        return (x >= self.x_min) & (x <= self.x_max) & (y >= self.y_min) & (y <= self.y_max)

    def on_boundary(self, x, y):
        x, y = self.snap(x, y)
        inside = self.contains(x, y)
        edge = (x == self.x_min) | (x == self.x_max) | (y == self.y_min) | (y == self.y_max)
        return inside & edge

    def boundary_samples(self, per_side: int = 1024):
        """Points distributed along the four edges (corners included)."""
        t = np.linspace(0.0, 1.0, per_side + 1)
        xs = self.x_min + t * self.width
        ys = self.y_min + t * self.height
        x = np.concatenate([xs, xs, np.full_like(ys, self.x_min), np.full_like(ys, self.x_max)])
        y = np.concatenate([np.full_like(xs, self.y_min), np.full_like(xs, self.y_max), ys, ys])
        return x, y


@dataclass(frozen=True)
class Grid:
    """``n x n`` interior nodes with square cells of side ``h``."""

    domain: Domain
    n: int
    h: float

    @property
    def size(self) -> int:
        return self.n * self.n

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    @cached_property
    def x_nodes(self) -> np.ndarray:
        """All ``n + 2`` node abscissae, boundary included."""
        x = self.domain.x_min + self.h * np.arange(self.n + 2)
        x[-1] = self.domain.x_max
        return x

    @cached_property
    def y_nodes(self) -> np.ndarray:
        y = self.domain.y_min + self.h * np.arange(self.n + 2)
        y[-1] = self.domain.y_max
        return y

    @property
    def x(self) -> np.ndarray:
        return self.x_nodes[1:-1]

    @property
    def y(self) -> np.ndarray:
        return self.y_nodes[1:-1]

    def index(self, i: int, j: int) -> int:
        """Lexicographic unknown index of interior node ``(i, j)``, 1-based."""
        if not (1 <= i <= self.n and 1 <= j <= self.n):
            raise IndexError(f"({i}, {j}) is not an interior node of an n={self.n} grid")
        return self.n * (i - 1) + (j - 1)

    def point(self, i: int, j: int) -> tuple[float, float]:
        return float(self.x_nodes[i]), float(self.y_nodes[j])

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Interior coordinates as ``(n, n)`` arrays indexed ``[i-1, j-1]``."""
        return np.meshgrid(self.x, self.y, indexing="ij")

    def full_mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates including the boundary ring, ``(n+2, n+2)``."""
        return np.meshgrid(self.x_nodes, self.y_nodes, indexing="ij")

    def boundary_mask(self) -> np.ndarray:
        """Boolean ``(n+2, n+2)`` mask of boundary nodes."""
        mask = np.zeros((self.n + 2, self.n + 2), dtype=bool)
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
        return mask

    def with_boundary(self, interior: np.ndarray, g) -> np.ndarray:
        """Embed interior values into the full node array, filling the ring with ``g``."""
        X, Y = self.full_mesh()
        full = np.empty((self.n + 2, self.n + 2))
        mask = self.boundary_mask()
        full[mask] = np.broadcast_to(np.asarray(g(X[mask], Y[mask]), dtype=float), X[mask].shape)
        full[1:-1, 1:-1] = np.asarray(interior, dtype=float).reshape(self.n, self.n)
        return full


def make_grid(domain: Domain, n: int) -> Grid:
    """Build the ``n x n`` interior grid on ``domain``.

    Raises ``ConfigurationError`` if ``n < 2`` or the cells are not square.
    """
    if int(n) != n or n < 2:
        raise ConfigurationError(f"grid needs n >= 2 interior points per axis, got {n!r}")
    n = int(n)
    hx = domain.width / (n + 1)
    hy = domain.height / (n + 1)
    if abs(hx - hy) > _SQUARE_RTOL * max(hx, hy):
        raise ConfigurationError(f"non-square cells: hx={hx} differs from hy={hy}")
    return Grid(domain=domain, n=n, h=hx)


def grid_for_resolution(domain: Domain, resolution: int) -> Grid:
    """Grid with ``resolution`` cells per axis, i.e. ``h = width / resolution``.

    This is the convention of the benchmark tables, where ``N = 32`` means
    ``h = width / 32`` and ``N - 1`` interior unknowns per axis.
    """
    if int(resolution) != resolution or resolution < 3:
        raise ConfigurationError(f"resolution must be an integer >= 3, got {resolution!r}")
    return make_grid(domain, int(resolution) - 1)


@dataclass(frozen=True)
class InterpolationStencil:
    """Four cell corners (node indices, boundary allowed) and bilinear weights."""

    nodes: tuple[tuple[int, int], ...]
    weights: tuple[float, ...]

    def apply(self, full_values: np.ndarray) -> float:
        return float(sum(w * full_values[i, j] for (i, j), w in zip(self.nodes, self.weights)))


def locate_many(grid: Grid, x, y):
    """Vectorised bilinear stencils.

    Returns ``(I, J, W)`` with shape ``x.shape + (4,)``: node indices into the
    ``(n+2, n+2)`` full array and the matching weights, corner order
    ``(r, s), (r+1, s), (r, s+1), (r+1, s+1)``.
    """
    d = grid.domain
    x, y = d.snap(x, y)
    if not np.all(d.contains(x, y)):
        raise OutOfDomainError("interpolation point outside the closed domain")
    n1 = grid.n + 1
    sx = (x - d.x_min) / grid.h
    sy = (y - d.y_min) / grid.h
    # snap node-space coordinates that are integers up to roundoff
    sx = np.where(np.abs(sx - np.rint(sx)) <= 1e-10, np.rint(sx), sx)
    sy = np.where(np.abs(sy - np.rint(sy)) <= 1e-10, np.rint(sy), sy)
    r = np.clip(np.floor(sx).astype(np.int64), 0, n1 - 1)
    s = np.clip(np.floor(sy).astype(np.int64), 0, n1 - 1)
    fx = np.clip(sx - r, 0.0, 1.0)
    fy = np.clip(sy - s, 0.0, 1.0)
    I = np.stack([r, r + 1, r, r + 1], axis=-1)
    J = np.stack([s, s, s + 1, s + 1], axis=-1)
    W = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=-1)
    return I, J, W


def locate(grid: Grid, p) -> InterpolationStencil:
    """Bilinear interpolation stencil of the cell containing ``p``."""
    I, J, W = locate_many(grid, np.asarray(p[0], dtype=float), np.asarray(p[1], dtype=float))
    nodes = tuple((int(i), int(j)) for i, j in zip(I, J))
    return InterpolationStencil(nodes=nodes, weights=tuple(float(w) for w in W))


def ray_exit_many(domain: Domain, x0, y0, dx, dy, length):
    """Vectorised :func:`ray_exit`.

    Returns ``(eta, ex, ey, truncated)``; truncated endpoints are placed
    exactly on the edge that was hit.
    """
    x0, y0 = domain.snap(x0, y0)
    dx = np.asarray(dx, dtype=float)
    dy = np.asarray(dy, dtype=float)
    length = np.asarray(length, dtype=float)
    shape = np.broadcast(x0, y0, dx, dy, length).shape
    x0, y0, dx, dy, length = (np.broadcast_to(a, shape) for a in (x0, y0, dx, dy, length))

    px = x0 + length * dx
    py = y0 + length * dy
    inside = domain.contains(px, py)

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        tx = np.where(dx > 0, (domain.x_max - x0) / dx, np.where(dx < 0, (domain.x_min - x0) / dx, np.inf))
        ty = np.where(dy > 0, (domain.y_max - y0) / dy, np.where(dy < 0, (domain.y_min - y0) / dy, np.inf))
    eta = np.where(inside, length, np.minimum(np.minimum(tx, ty), length))
    truncated = ~inside
    if np.any(truncated & (eta <= SNAP_TOL)):
        raise DegenerateStencilError("ray leaves the domain immediately (zero-length arm)")

    ex = x0 + eta * dx
    ey = y0 + eta * dy
    hit_x = truncated & (tx <= ty)
    hit_y = truncated & (ty <= tx)
    ex = np.where(hit_x, np.where(dx > 0, domain.x_max, domain.x_min), ex)
    ey = np.where(hit_y, np.where(dy > 0, domain.y_max, domain.y_min), ey)
    ex, ey = domain.snap(ex, ey)
    return eta, ex, ey, truncated


def ray_exit(grid_or_domain, origin, direction, length: float):
    """Walk ``length`` along a unit ``direction`` from ``origin``, stopping at the boundary.

    Returns ``(eta, endpoint, truncated)``. ``eta == length`` and
    ``truncated is False`` when the full step stays in the closed domain.
    """
    domain = grid_or_domain.domain if isinstance(grid_or_domain, Grid) else grid_or_domain
    if length <= 0:
        raise ConfigurationError("ray length must be positive")
    if not domain.contains(origin[0], origin[1]):
        raise OutOfDomainError(f"ray origin {tuple(origin)} outside the domain")
    eta, ex, ey, trunc = ray_exit_many(domain, origin[0], origin[1], direction[0], direction[1], length)
    return float(eta), (float(ex), float(ey)), bool(trunc)
