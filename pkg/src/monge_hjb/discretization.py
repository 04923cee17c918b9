"""
Finite difference stencils and sparse assembly.

Narrow stencils are the usual central second differences plus two one-sided
seven-point cross differences (``dxy1`` uses the main diagonal, ``dxy2`` the
anti-diagonal). The wide stencil differentiates along the rotated axes

    e_z = (cos t, -sin t),  e_w = (sin t, cos t)

with arms of length ``sqrt(h)``. Arm endpoints inside the domain are
interpolated bilinearly; arms that would leave the domain are cut at the
boundary and take the Dirichlet value there, with the unequal-spacing
three-point formula.

Rows are assembled so that ``(A u - F)_k`` equals the discrete HJB operator
``L`` at point ``k``: positive diagonal, nonpositive off-diagonals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order

from .controls import Mode, OptimizerResult, SecondDerivativeSamples, coefficient_arrays, theta_samples
from .errors import DegenerateStencilError
from .grid import Grid, InterpolationStencil, locate_many, ray_exit_many

#: Off-diagonals no larger than this (relative to the diagonal) are treated as roundoff and clipped to zero.
CLIP_RTOL = 1e-10


@dataclass
class GridFunction:
    """Interior values of a grid function plus the boundary data that completes it."""

    grid: Grid
    values: np.ndarray
    g: object

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function has non-finite values")

    def full(self) -> np.ndarray:
        """``(n+2, n+2)`` node values, boundary ring filled from ``g``."""
        return self.grid.with_boundary(self.values, self.g)


def boundary_ring(grid: Grid, g) -> np.ndarray:
    """Full node array that is zero inside and holds ``g`` on the boundary ring."""
    return grid.with_boundary(np.zeros(grid.shape), g)


# ---------------------------------------------------------------------------
# narrow differences


def narrow_diffs(full: np.ndarray, h: float):
    """``(dxx, dyy, dxy1, dxy2)`` at every interior node of a full node array."""
    c = full[1:-1, 1:-1]
    e, w = full[2:, 1:-1], full[:-2, 1:-1]
    nn, s = full[1:-1, 2:], full[1:-1, :-2]
    ne, sw = full[2:, 2:], full[:-2, :-2]
    se, nw = full[2:, :-2], full[:-2, 2:]
    h2 = h * h
    axis = e + w + nn + s
    dxx = (e - 2 * c + w) / h2
    dyy = (nn - 2 * c + s) / h2
    dxy1 = (2 * c + ne + sw - axis) / (2 * h2)
    dxy2 = -(2 * c + se + nw - axis) / (2 * h2)
    return dxx, dyy, dxy1, dxy2


def second_diffs(u: GridFunction, i: int, j: int, f_val: float = 0.0) -> SecondDerivativeSamples:
    """Narrow differences at interior node ``(i, j)`` (1-based)."""
    u.grid.index(i, j)
    full = u.full()
    block = full[i - 1 : i + 2, j - 1 : j + 2]
    d = narrow_diffs(block, u.grid.h)
    return SecondDerivativeSamples(*(float(v[0, 0]) for v in d), f_val=float(f_val))


# ---------------------------------------------------------------------------
# wide stencil geometry


def arm_length(grid: Grid) -> float:
    return math.sqrt(grid.h)


def rotated_axes(theta):
    """Unit vectors ``e_z`` and ``e_w`` for rotation ``theta`` (array-friendly)."""
    c, s = np.cos(theta), np.sin(theta)
    return (c, -s), (s, c)


@dataclass(frozen=True)
class ArmGeometry:
    length: float
    endpoint: tuple[float, float]
    truncated: bool
    stencil: InterpolationStencil | None


@dataclass(frozen=True)
class WideStencilGeometry:
    theta: float
    arms: tuple[ArmGeometry, ArmGeometry, ArmGeometry, ArmGeometry]  # z+, z-, w+, w-


def unequal_weights(eta_p, eta_m):
    """Weights ``(plus, minus, centre)`` of the three-point second difference."""
    s = eta_p + eta_m
    return 2.0 / (eta_p * s), 2.0 / (eta_m * s), -2.0 / (eta_p * eta_m)


@dataclass
class _Arms:
    """Per-point data for the four arms of a batch of wide stencils."""

    eta: np.ndarray  # (4, P)
    trunc: np.ndarray  # (4, P) bool
    ex: np.ndarray
    ey: np.ndarray
    I: np.ndarray  # (4, P, 4), meaningful where not truncated
    J: np.ndarray
    W: np.ndarray


def _arm_directions(theta):
    (zx, zy), (wx, wy) = rotated_axes(theta)
    return [(zx, zy), (-zx, -zy), (wx, wy), (-wx, -wy)]


def _arms(grid: Grid, x0, y0, theta) -> _Arms:
    length = arm_length(grid)
    etas, truncs, exs, eys, Is, Js, Ws = [], [], [], [], [], [], []
    for dx, dy in _arm_directions(theta):
        eta, ex, ey, tr = ray_exit_many(grid.domain, x0, y0, dx, dy, length)
        I, J, W = locate_many(grid, ex, ey)
        for lst, v in zip((etas, truncs, exs, eys, Is, Js, Ws), (eta, tr, ex, ey, I, J, W)):
            lst.append(v)
    return _Arms(*(np.stack(v) for v in (etas, truncs, exs, eys, Is, Js, Ws)))


def wide_diffs(u: GridFunction, i: int, j: int, theta: float):
    """Rotated second differences ``(dzz, dww, geometry)`` at interior node ``(i, j)``."""
    grid = u.grid
    grid.index(i, j)
    x0, y0 = grid.point(i, j)
    arms = _arms(grid, np.array([x0]), np.array([y0]), theta)
    full = u.full()
    values = _arm_values(arms, full, u.g)[:, 0]
    centre = full[i, j]
    out = []
    for k in (0, 2):
        wp, wm, wc = unequal_weights(arms.eta[k, 0], arms.eta[k + 1, 0])
        out.append(float(wp * values[k] + wm * values[k + 1] + wc * centre))
    geo = []
    for k in range(4):
        tr = bool(arms.trunc[k, 0])
        stencil = None
        if not tr:
            nodes = tuple((int(a), int(b)) for a, b in zip(arms.I[k, 0], arms.J[k, 0]))
            stencil = InterpolationStencil(nodes, tuple(float(w) for w in arms.W[k, 0]))
        geo.append(ArmGeometry(float(arms.eta[k, 0]), (float(arms.ex[k, 0]), float(arms.ey[k, 0])), tr, stencil))
    return out[0], out[1], WideStencilGeometry(float(theta), tuple(geo))


def _arm_values(arms: _Arms, full: np.ndarray, g) -> np.ndarray:
    interp = np.sum(arms.W * full[arms.I, arms.J], axis=-1)
    if not np.any(arms.trunc):
        return interp
    gvals = np.broadcast_to(np.asarray(g(arms.ex[arms.trunc], arms.ey[arms.trunc]), dtype=float), (arms.trunc.sum(),))
    out = interp.copy()
    out[arms.trunc] = gvals
    return out


@dataclass
class _ThetaTable:
    shifts: list  # per arm: list of (di, dj, weight) in node units
    band: list  # per arm: (flat point indices, eta, g at endpoint) for truncated arms


@dataclass
class WideStencilCache:
    """Precomputed wide-stencil geometry for the sampled angles of one grid.

    Arms that stay inside the domain have the same offset for every node, so
    their interpolated values come from shifted slices of the node array. Only
    arms cut by the boundary are stored per point.
    """

    grid: Grid
    g: object
    M: int
    thetas: np.ndarray = field(init=False)
    _tables: dict = field(init=False, default_factory=dict)

    def __post_init__(self):
        self.thetas = theta_samples(self.M)
        self._index = {float(t): k for k, t in enumerate(self.thetas)}
        grid = self.grid
        length = arm_length(grid)
        self._pad = int(math.ceil(length / grid.h)) + 2
        X, Y = grid.mesh()
        d = grid.domain
        dist = np.minimum.reduce([X - d.x_min, d.x_max - X, Y - d.y_min, d.y_max - Y]).ravel()
        self._band = np.flatnonzero(dist < length + 1e-9)
        self._bx = X.ravel()[self._band]
        self._by = Y.ravel()[self._band]

    def _table(self, k: int) -> _ThetaTable:
        tab = self._tables.get(k)
        if tab is not None:
            return tab
        grid = self.grid
        theta = float(self.thetas[k])
        length = arm_length(grid)
        shifts, band = [], []
        for dx, dy in _arm_directions(theta):
            shifts.append(_node_shift(length * dx / grid.h, length * dy / grid.h))
            eta, ex, ey, tr = ray_exit_many(grid.domain, self._bx, self._by, dx, dy, length)
            gv = np.broadcast_to(np.asarray(self.g(ex[tr], ey[tr]), dtype=float), (int(tr.sum()),))
            band.append((self._band[tr], eta[tr], np.array(gv)))
        tab = _ThetaTable(shifts, band)
        self._tables[k] = tab
        return tab

    def evaluator(self, full: np.ndarray):
        """``wide_eval(theta)`` over all interior points (flat arrays) for a frozen iterate."""
        n = self.grid.n
        K = self._pad
        padded = np.pad(full, K)
        centre = full[1:-1, 1:-1].ravel()
        length = arm_length(self.grid)

        def wide_eval(theta):
            k = self._index.get(float(theta))
            if k is None:
                return _general_eval(self.grid, self.g, full, theta)
            tab = self._table(k)
            vals, etas = [], []
            for (shift, (idx, eta, gv)) in zip(tab.shifts, tab.band):
                v = np.zeros((n, n))
                for di, dj, w in shift:
                    v += w * padded[K + 1 + di : K + 1 + di + n, K + 1 + dj : K + 1 + dj + n]
                v = v.ravel()
                v[idx] = gv
                e = np.full(n * n, length)
                e[idx] = eta
                vals.append(v)
                etas.append(e)
            out = []
            for a in (0, 2):
                wp, wm, wc = unequal_weights(etas[a], etas[a + 1])
                out.append(wp * vals[a] + wm * vals[a + 1] + wc * centre)
            return out[0], out[1]

        return wide_eval


def _node_shift(p: float, q: float):
    """Bilinear corners ``(di, dj, weight)`` for an offset of ``(p, q)`` node spacings."""
    corners = []
    rp, rq = round(p), round(q)
    p = rp if abs(p - rp) <= 1e-10 else p
    q = rq if abs(q - rq) <= 1e-10 else q
    r, s = math.floor(p), math.floor(q)
    fx, fy = p - r, q - s
    for di, dj, w in ((r, s, (1 - fx) * (1 - fy)), (r + 1, s, fx * (1 - fy)), (r, s + 1, (1 - fx) * fy), (r + 1, s + 1, fx * fy)):
        if w != 0.0:
            corners.append((di, dj, w))
    return corners


def _general_eval(grid: Grid, g, full: np.ndarray, theta):
    X, Y = grid.mesh()
    arms = _arms(grid, X.ravel(), Y.ravel(), theta)
    vals = _arm_values(arms, full, g)
    centre = full[1:-1, 1:-1].ravel()
    out = []
    for a in (0, 2):
        wp, wm, wc = unequal_weights(arms.eta[a], arms.eta[a + 1])
        out.append(wp * vals[a] + wm * vals[a + 1] + wc * centre)
    return out[0], out[1]


# ---------------------------------------------------------------------------
# assembly


@dataclass(frozen=True)
class SparseRow:
    diagonal: float
    off_diagonal: tuple[tuple[int, float], ...]
    rhs: float

    @property
    def nnz(self) -> int:
        return 1 + len(self.off_diagonal)


@dataclass
class AssembledSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    modes: np.ndarray | None = None

    def row(self, k: int) -> SparseRow:
        start, stop = self.matrix.indptr[k], self.matrix.indptr[k + 1]
        cols = self.matrix.indices[start:stop]
        vals = self.matrix.data[start:stop]
        diag = float(vals[cols == k].sum())
        off = tuple((int(c), float(v)) for c, v in zip(cols, vals) if c != k)
        return SparseRow(diag, off, float(self.rhs[k]))

    def residual(self, u: np.ndarray) -> np.ndarray:
        """``A u - F``, i.e. the discrete operator applied to ``u``."""
        return self.matrix @ np.ravel(u) - self.rhs


class _Triplets:
    """Accumulates row entries; boundary columns are folded into the right-hand side."""

    def __init__(self, grid: Grid, ring: np.ndarray):
        self.grid = grid
        self.ring = ring
        self.rows, self.cols, self.vals = [], [], []
        self.rhs = np.zeros(grid.size)

    def add(self, rows, I, J, coef):
        """Entry ``coef`` at full node ``(I, J)`` for unknown rows ``rows``."""
        n = self.grid.n
        rows, I, J, coef = np.broadcast_arrays(rows, I, J, coef)
        keep = coef != 0
        rows, I, J, coef = rows[keep], I[keep], J[keep], coef[keep]
        inner = (I >= 1) & (I <= n) & (J >= 1) & (J <= n)
        self.rows.append(rows[inner])
        self.cols.append(n * (I[inner] - 1) + (J[inner] - 1))
        self.vals.append(coef[inner])
        out = ~inner
        np.add.at(self.rhs, rows[out], -coef[out] * self.ring[I[out], J[out]])

    def add_rhs(self, rows, values):
        np.add.at(self.rhs, rows, values)

    def build(self) -> tuple[sp.csr_matrix, np.ndarray]:
        size = self.grid.size
        if self.rows:
            r, c, v = (np.concatenate(x) for x in (self.rows, self.cols, self.vals))
        else:
            r = c = np.zeros(0, dtype=np.int64)
            v = np.zeros(0)
        A = sp.coo_matrix((v, (r, c)), shape=(size, size)).tocsr()
        A.sum_duplicates()
        A.eliminate_zeros()
        return A, self.rhs


def _clip_offdiag(coef, diag):
    """Zero off-diagonal coefficients that are positive only by roundoff."""
    bad = coef > CLIP_RTOL * diag
    if np.any(bad):
        raise AssertionError("monotonicity violated: positive off-diagonal in a narrow-stencil row")
    return np.minimum(coef, 0.0)


def _seven_point_rows(tr: _Triplets, pts, a, theta, mode):
    grid = tr.grid
    h2 = grid.h**2
    I, J = np.unravel_index(pts, grid.shape)
    I, J = I + 1, J + 1
    a11, a12, a22 = coefficient_arrays(a, theta)
    second = mode == Mode.SEVEN_POINT_2
    sgn = np.where(second, -1.0, 1.0)
    # narrow rows: L = -a11 dxx - 2 a12 dxy - a22 dyy with the cross difference picked by the mode
    diag = 2.0 * (a11 + a22 - sgn * a12) / h2
    ax = _clip_offdiag(-(a11 - sgn * a12) / h2, diag)
    ay = _clip_offdiag(-(a22 - sgn * a12) / h2, diag)
    cross = _clip_offdiag(-sgn * a12 / h2, diag)
    tr.add(pts, I, J, diag)
    for di, dj, c in ((1, 0, ax), (-1, 0, ax), (0, 1, ay), (0, -1, ay)):
        tr.add(pts, I + di, J + dj, c)
    # main diagonal for the first mode, anti-diagonal for the second
    dj = np.where(second, -1, 1)
    tr.add(pts, I + 1, J + dj, cross)
    tr.add(pts, I - 1, J - dj, cross)


def _wide_rows(tr: _Triplets, pts, a, theta, g):
    grid = tr.grid
    X, Y = grid.mesh()
    x0, y0 = X.ravel()[pts], Y.ravel()[pts]
    arms = _arms(grid, x0, y0, theta)
    I0, J0 = np.unravel_index(pts, grid.shape)
    weight = (a, 1.0 - a)
    for axis in range(2):
        kp, km = 2 * axis, 2 * axis + 1
        wp, wm, wc = unequal_weights(arms.eta[kp], arms.eta[km])
        tr.add(pts, I0 + 1, J0 + 1, -weight[axis] * wc)
        for k, w in ((kp, wp), (km, wm)):
            coef = -weight[axis] * w
            trunc = arms.trunc[k]
            keep = ~trunc
            tr.add(pts[keep, None], arms.I[k][keep], arms.J[k][keep], coef[keep, None] * arms.W[k][keep])
            if np.any(trunc):
                gv = np.asarray(g(arms.ex[k][trunc], arms.ey[k][trunc]), dtype=float)
                tr.add_rhs(pts[trunc], -coef[trunc] * gv)


def assemble_system(grid: Grid, g, f_samples, a, theta, modes) -> AssembledSystem:
    """Assemble ``A`` and ``F`` for frozen controls (flat arrays in unknown order)."""
    a, theta, f_samples = (np.asarray(v, dtype=float).ravel() for v in (a, theta, f_samples))
    modes = np.asarray(modes).ravel()
    ring = boundary_ring(grid, g)
    tr = _Triplets(grid, ring)
    narrow = np.flatnonzero(modes != Mode.WIDE)
    if narrow.size:
        _seven_point_rows(tr, narrow, a[narrow], theta[narrow], modes[narrow])
    wide = np.flatnonzero(modes == Mode.WIDE)
    if wide.size:
        _wide_rows(tr, wide, a[wide], theta[wide], g)
    tr.add_rhs(np.arange(grid.size), -2.0 * np.sqrt(np.clip(a * (1 - a), 0, None) * f_samples))
    A, F = tr.build()
    return AssembledSystem(A, F, modes.copy())


def assemble_row(grid: Grid, i: int, j: int, result: OptimizerResult, g, f_val: float = 0.0) -> SparseRow:
    """Single row of the system for interior node ``(i, j)``.

    Columns are global unknown indices; boundary contributions and the source
    term are folded into ``rhs``.
    """
    k = grid.index(i, j)
    tr = _Triplets(grid, boundary_ring(grid, g))
    pts = np.array([k])
    a = np.array([result.control.a])
    theta = np.array([result.control.theta])
    if result.mode == Mode.WIDE:
        _wide_rows(tr, pts, a, theta, g)
    else:
        _seven_point_rows(tr, pts, a, theta, np.array([result.mode]))
    tr.add_rhs(pts, -2.0 * np.sqrt(max(result.control.a * (1 - result.control.a), 0.0) * f_val))
    A, F = tr.build()
    return AssembledSystem(A, F).row(k)


# ---------------------------------------------------------------------------
# M-matrix check


@dataclass(frozen=True)
class MMatrixReport:
    l_matrix: bool
    weak_diag_dom: bool
    connectivity: bool
    strictly_dominant_rows: int

    @property
    def ok(self) -> bool:
        return self.l_matrix and self.weak_diag_dom and self.connectivity and self.strictly_dominant_rows > 0


def verify_m_matrix(A, rtol: float = 1e-10) -> MMatrixReport:
    """Check the sufficient M-matrix conditions for a square sparse matrix.

    Positive diagonal and nonpositive off-diagonals (L-matrix), weak row
    diagonal dominance, at least one strictly dominant row, and every row
    connected through the nonzero pattern to a strictly dominant one.
    """
    if isinstance(A, AssembledSystem):
        A = A.matrix
    A = sp.csr_matrix(A)
    size = A.shape[0]
    diag = A.diagonal()
    off = A - sp.diags(diag)
    off = sp.csr_matrix(off)
    off.eliminate_zeros()
    scale = np.maximum(np.abs(diag), np.finfo(float).tiny)
    off_max = np.full(size, -np.inf)
    if off.nnz:
        rows = np.repeat(np.arange(size), np.diff(off.indptr))
        np.maximum.at(off_max, rows, off.data)
    l_matrix = bool(np.all(diag > 0) and np.all(off_max <= 0))
    excess = diag - np.asarray(abs(off).sum(axis=1)).ravel()
    weak = bool(np.all(excess >= -rtol * scale))
    strict = excess > rtol * scale
    n_strict = int(strict.sum())

    # reverse reachability: from the strictly dominant rows, walk edges j -> i whenever a_ij != 0
    pattern = sp.csr_matrix((np.ones(off.nnz), off.indices, off.indptr), shape=(size, size)).T.tocsr()
    hub = sp.csr_matrix((np.ones(n_strict), (np.full(n_strict, size), np.flatnonzero(strict))), shape=(size + 1, size + 1))
    graph = sp.bmat([[pattern, None], [None, sp.csr_matrix((1, 1))]]).tocsr() + hub
    reached = breadth_first_order(graph, size, directed=True, return_predecessors=False)
    connected = n_strict > 0 and reached.size == size + 1
    return MMatrixReport(l_matrix, weak, bool(connected), n_strict)
