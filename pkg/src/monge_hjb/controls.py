"""
Control algebra for the HJB form of the Monge-Ampère operator.

A control is a pair ``(a, theta)`` in ``[0, 1] x [-pi/4, pi/4)`` describing the
trace-one PSD matrix ``R(theta) diag(a, 1-a) R(theta)^T``. At a grid point the
discrete operator is

    L(a, theta) = -a11*dxx - 2*a12*dxy - a22*dyy + 2*sqrt(a*(1-a)*f)

with the cross difference ``dxy`` chosen by the region of the control set,
or ``-a*dzz - (1-a)*dww + 2*sqrt(a*(1-a)*f)`` with rotated wide-stencil
differences where no narrow stencil is monotone.

The control set splits into six regions (``Region``). Each has its own
maximiser: closed forms everywhere except ``G3``, which needs a 1-D search
over sampled angles. ``optimize_controls`` runs all six vectorised over many
grid points and keeps the best candidate per point.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

QUARTER_PI = math.pi / 4
_SQRT2 = math.sqrt(2.0)

#: Absolute tolerance on ``min(a11, a22) - |a12|`` for "on the boundary curve".
CLASSIFY_TOL = 1e-12

#: Relative tolerance under which two candidate objectives count as tied.
TIE_TOL = 1e-12


class Region(enum.IntEnum):
    """Regions of the control set, numbered in tie-break priority order."""

    B0 = 0  # the line theta = 0
    G1 = 1  # narrow stencil with the "+" cross difference is monotone
    G2 = 2  # narrow stencil with the "-" cross difference is monotone
    B13 = 3  # curve separating G1 from G3
    B23 = 4  # curve separating G2 from G3
    G3 = 5  # neither narrow stencil is monotone: wide stencil


class Mode(enum.IntEnum):
    """Discretisation applied at a grid point."""

    SEVEN_POINT_1 = 1
    SEVEN_POINT_2 = 2
    WIDE = 3


_MODE_OF_REGION = np.array(
    [Mode.SEVEN_POINT_1, Mode.SEVEN_POINT_1, Mode.SEVEN_POINT_2, Mode.SEVEN_POINT_1, Mode.SEVEN_POINT_2, Mode.WIDE],
    dtype=np.int8,
)


def mode_of(region):
    """Discretisation mandated by a region (array-friendly)."""
    out = _MODE_OF_REGION[np.asarray(region, dtype=np.int64)]
    return Mode(int(out)) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ControlPair:
    a: float
    theta: float

    def __post_init__(self):
        if not (0.0 <= self.a <= 1.0):
            raise ValueError(f"a={self.a} outside [0, 1]")
        if not (-QUARTER_PI <= self.theta < QUARTER_PI):
            raise ValueError(f"theta={self.theta} outside [-pi/4, pi/4)")


@dataclass(frozen=True)
class Coefficients:
    a11: float
    a12: float
    a22: float


@dataclass(frozen=True)
class SecondDerivativeSamples:
    """Narrow finite differences at one grid point together with ``f`` there."""

    dxx: float
    dyy: float
    dxy1: float
    dxy2: float
    f_val: float

    def __post_init__(self):
        if not self.f_val >= 0:
            raise ValueError(f"f_val must be nonnegative, got {self.f_val}")


@dataclass(frozen=True)
class Candidate:
    control: ControlPair
    objective: float


@dataclass(frozen=True)
class OptimizerResult:
    control: ControlPair
    objective: float
    region: Region

    @property
    def mode(self) -> Mode:
        return mode_of(self.region)


# ---------------------------------------------------------------------------
# array kernels


def coefficient_arrays(a, theta):
    """``(a11, a12, a22)`` for arrays of controls."""
    a = np.asarray(a, dtype=float)
    theta = np.asarray(theta, dtype=float)
    t = 1.0 - 2.0 * a
    c = np.cos(2.0 * theta)
    s = np.sin(2.0 * theta)
    return 0.5 * (1.0 - t * c), 0.5 * t * s, 0.5 * (1.0 + t * c)


def classify_arrays(a, theta, tol: float = CLASSIFY_TOL):
    """Region codes (``Region`` values, int8) for arrays of controls."""
    a11, a12, a22 = coefficient_arrays(a, theta)
    margin = np.minimum(a11, a22) - np.abs(a12)
    theta = np.asarray(theta, dtype=float)
    region = np.where(a12 >= 0, Region.G1, Region.G2).astype(np.int8)
    on_curve = np.abs(margin) <= tol
    region = np.where(on_curve, np.where(a12 >= 0, Region.B13, Region.B23), region)
    region = np.where(margin < -tol, Region.G3, region)
    region = np.where(theta == 0.0, Region.B0, region)
    return region.astype(np.int8)


def _sqrt_term(a, f):
    return 2.0 * np.sqrt(np.clip(a * (1.0 - a), 0.0, None) * f)


def seven_point_objective(a, theta, dxx, dyy, dxy, f):
    a11, a12, a22 = coefficient_arrays(a, theta)
    return -a11 * dxx - 2.0 * a12 * dxy - a22 * dyy + _sqrt_term(a, f)


def wide_objective(a, dzz, dww, f):
    return -a * dzz - (1.0 - a) * dww + _sqrt_term(a, f)


def stationary_a(lam, f):
    """Maximiser in ``a`` of ``a*(-lam) + 2 sqrt(a(1-a) f)`` (up to constants); 0/0 gives 1/2."""
    lam = np.asarray(lam, dtype=float)
    root = np.sqrt(4.0 * f + lam * lam)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(root > 0, 0.5 * (1.0 - lam / root), 0.5)
    return np.clip(a, 0.0, 1.0)


def curve_bounds(theta):
    """``(C-, C+)``: the ``a`` values where the narrow-stencil conditions become equalities."""
    half_width = 0.5 / (_SQRT2 * np.sin(2.0 * np.abs(theta) + QUARTER_PI))
    return 0.5 - half_width, 0.5 + half_width


def _wrap_theta(theta):
    theta = np.where(theta >= QUARTER_PI, theta - 2 * QUARTER_PI, theta)
    return np.where(theta < -QUARTER_PI, theta + 2 * QUARTER_PI, theta)


def interior_kernel(dxx, dyy, dxy, f, region: Region):
    """Stationary point of the narrow objective; ``valid`` where it lies in the closure of ``region``.

    The stationary angle solves ``tan(2 theta) = 2 dxy / (dyy - dxx)``. The
    two-argument arctangent picks a branch; wrapping by ``pi/2`` stays on the
    same operator because ``lambda`` (hence ``a``) is recomputed at the
    wrapped angle.
    """
    dxx, dyy, dxy = (np.asarray(v, dtype=float) for v in (dxx, dyy, dxy))
    theta = _wrap_theta(0.5 * np.arctan2(2.0 * dxy, dyy - dxx))
    lam = (dxx - dyy) * np.cos(2.0 * theta) - 2.0 * dxy * np.sin(2.0 * theta)
    a = stationary_a(lam, f)
    obj = seven_point_objective(a, theta, dxx, dyy, dxy, f)
    found = classify_arrays(a, theta)
    curve = Region.B13 if region == Region.G1 else Region.B23
    valid = (found == region) | (found == Region.B0) | (found == curve)
    return a, theta, obj, valid


def b0_kernel(dxx, dyy, f):
    d = np.asarray(dxx, dtype=float) - np.asarray(dyy, dtype=float)
    a = stationary_a(d, f)
    theta = np.zeros_like(a)
    return a, theta, seven_point_objective(a, theta, dxx, dyy, 0.0, f)


B13_SECTIONS = ((1, -1), (-1, 1))
B23_SECTIONS = ((1, 1), (-1, -1))


def boundary_kernel(dxx, dyy, dxy, f, s_a: int, s_theta: int):
    """Maximiser along one section of a G1/G3 or G2/G3 boundary curve.

    For ``f == 0`` the objective is linear along the curve, so the maximum sits
    at an end: either on ``theta = 0`` (covered by B0) or at the rank-one
    diagonal control ``theta = s_theta * pi/4``, which is returned here.
    Angles reaching ``pi/4`` are mapped to ``-pi/4`` with ``a -> 1 - a``
    (the same operator).
    """
    dxx, dyy, dxy, f = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (dxx, dyy, dxy, f)))
    positive = f > 0
    sqrt_f = np.sqrt(np.where(positive, f, 1.0))
    # tiny f sends gamma to +-inf, whose limits (theta -> 0 or +-pi/4) are the right ones
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        gamma = s_a / (2.0 * sqrt_f) * (dyy - dxx - 2.0 * s_theta * dxy)
        root = np.sqrt(2.0 + gamma * gamma)
        # 1 + g^2 - g*sqrt(2+g^2) cancels badly for large g > 0; use the conjugate form there
        arg = np.where(gamma >= 0, 1.0 / (1.0 + gamma * gamma + gamma * root), 1.0 + gamma * gamma - gamma * root)
    theta = np.where(positive, 0.5 * s_theta * np.arctan(arg), s_theta * QUARTER_PI)
    a = np.clip(0.5 * (1.0 + s_a / (_SQRT2 * np.sin(2.0 * np.abs(theta) + QUARTER_PI))), 0.0, 1.0)
    wrap = theta >= QUARTER_PI
    theta = np.where(wrap, theta - 2 * QUARTER_PI, theta)
    a = np.where(wrap, 1.0 - a, a)
    obj = seven_point_objective(a, theta, dxx, dyy, dxy, f)
    return a, theta, obj


def theta_samples(M: int) -> np.ndarray:
    """Cell midpoints of ``M`` equal slices of ``[-pi/4, pi/4)``."""
    if int(M) != M or M < 1:
        raise ConfigurationError(f"number of angle samples must be >= 1, got {M!r}")
    return -QUARTER_PI + (np.arange(int(M)) + 0.5) * (2 * QUARTER_PI / int(M))


class G3Rule(enum.Enum):
    """How the wide-stencil search treats angles whose best ``a`` is not inside G3.

    ``STRICT`` drops such angles: their clamped control lies on a G1/G3 or
    G2/G3 curve, where the 7-point stencil applies and the boundary-curve
    optimisers already cover it. ``CLAMP`` evaluates the wide objective on
    the curve instead. ``FREE`` uses the unconstrained stationary ``a`` and is
    the rule for the wide-only scheme.
    """

    STRICT = "strict"
    CLAMP = "clamp"
    FREE = "free"


def curve_a(dzz, dww, f, theta, rule: G3Rule = G3Rule.CLAMP):
    """Best ``a`` at a fixed angle for the wide objective, and whether it is usable.

    Returns ``(a, ok)``. Under ``CLAMP`` and ``STRICT`` the stationary value is
    pulled onto the nearer of ``C-``/``C+`` when it falls between them;
    ``STRICT`` then marks those samples as not usable.
    """
    c_lam = stationary_a(np.asarray(dzz) - np.asarray(dww), f)
    if rule is G3Rule.FREE:
        return c_lam, np.ones(c_lam.shape, dtype=bool)
    c_minus, c_plus = curve_bounds(theta)
    outside = (c_lam < c_minus) | (c_lam > c_plus)
    a = np.where(outside, c_lam, np.where(c_lam <= 0.5, c_minus, c_plus))
    ok = outside if rule is G3Rule.STRICT else np.ones(a.shape, dtype=bool)
    return a, ok


def g3_search(wide_eval: Callable, f, M: int, rule: G3Rule = G3Rule.STRICT):
    """Linear search over ``M`` sampled angles for the wide-stencil region.

    ``wide_eval(theta)`` returns ``(dzz, dww)`` broadcastable with ``f``.
    Returns ``(a, theta, objective)`` arrays; the first best sample wins ties
    and points without a usable sample get objective ``-inf``.
    """
    rule = G3Rule(rule)
    thetas = theta_samples(M)
    f = np.asarray(f, dtype=float)
    best_obj = np.full(f.shape, -np.inf)
    best_a = np.full(f.shape, 0.5)
    best_theta = np.full(f.shape, thetas[0])
    for theta in thetas:
        dzz, dww = wide_eval(theta)
        a, ok = curve_a(dzz, dww, f, theta, rule)
        obj = np.where(ok, wide_objective(a, dzz, dww, f), -np.inf)
        better = obj > best_obj
        best_obj = np.where(better, obj, best_obj)
        best_a = np.where(better, a, best_a)
        best_theta = np.where(better, theta, best_theta)
    return best_a, best_theta, best_obj


@dataclass
class ControlArrays:
    """Per-point optimiser output, flat arrays in unknown order."""

    a: np.ndarray
    theta: np.ndarray
    objective: np.ndarray
    region: np.ndarray

    @property
    def mode(self) -> np.ndarray:
        return mode_of(self.region)


def optimize_controls(
    dxx,
    dyy,
    dxy1,
    dxy2,
    f,
    wide_eval: Callable | None,
    M: int,
    pure_wide: bool = False,
    g3_rule: G3Rule = G3Rule.STRICT,
):
    """Six-region maximisation, vectorised over points.

    Candidates are visited in ``Region`` priority order; a later one replaces
    the incumbent only when strictly better beyond ``TIE_TOL``. With
    ``pure_wide`` only the unconstrained wide-stencil search runs.
    """
    f = np.asarray(f, dtype=float)
    if pure_wide:
        a, theta, obj = g3_search(wide_eval, f, M, G3Rule.FREE)
        return ControlArrays(a, theta, obj, np.full(f.shape, Region.G3, dtype=np.int8))

    a, theta, obj = b0_kernel(dxx, dyy, f)
    a, theta, obj = np.broadcast_arrays(a, theta, obj)
    a, theta, obj = a.copy(), theta.copy(), obj.copy()
    region = np.full(obj.shape, Region.B0, dtype=np.int8)

    def offer(cand_a, cand_theta, cand_obj, tag, valid=None):
        nonlocal a, theta, obj, region
        margin = TIE_TOL * np.maximum(1.0, np.abs(obj))
        better = cand_obj > obj + margin
        if valid is not None:
            better &= valid
        a = np.where(better, cand_a, a)
        theta = np.where(better, cand_theta, theta)
        obj = np.where(better, cand_obj, obj)
        region = np.where(better, np.int8(tag), region).astype(np.int8)

    ga, gt, go, gv = interior_kernel(dxx, dyy, dxy1, f, Region.G1)
    offer(ga, gt, go, Region.G1, gv)
    ga, gt, go, gv = interior_kernel(dxx, dyy, dxy2, f, Region.G2)
    offer(ga, gt, go, Region.G2, gv)
    for s_a, s_t in B13_SECTIONS:
        offer(*boundary_kernel(dxx, dyy, dxy1, f, s_a, s_t), Region.B13)
    for s_a, s_t in B23_SECTIONS:
        offer(*boundary_kernel(dxx, dyy, dxy2, f, s_a, s_t), Region.B23)
    if wide_eval is not None:
        offer(*g3_search(wide_eval, f, M, g3_rule), Region.G3)
    return ControlArrays(a, theta, obj, region)


# ---------------------------------------------------------------------------
# scalar API


def coefficients(c: ControlPair) -> Coefficients:
    a11, a12, a22 = coefficient_arrays(c.a, c.theta)
    return Coefficients(float(a11), float(a12), float(a22))


def classify(c: ControlPair) -> Region:
    return Region(int(classify_arrays(c.a, c.theta)))


def _candidate(a, theta, obj) -> Candidate:
    return Candidate(ControlPair(float(a), float(theta)), float(obj))


def optimize_g1(s: SecondDerivativeSamples) -> Candidate | None:
    """Stationary point in G1 (closure), or ``None`` if it falls outside."""
    a, theta, obj, valid = interior_kernel(s.dxx, s.dyy, s.dxy1, s.f_val, Region.G1)
    return _candidate(a, theta, obj) if bool(valid) else None


def optimize_g2(s: SecondDerivativeSamples) -> Candidate | None:
    a, theta, obj, valid = interior_kernel(s.dxx, s.dyy, s.dxy2, s.f_val, Region.G2)
    return _candidate(a, theta, obj) if bool(valid) else None


def optimize_b0(s: SecondDerivativeSamples) -> Candidate:
    return _candidate(*b0_kernel(s.dxx, s.dyy, s.f_val))


def _boundary_candidates(s, dxy, sections):
    return [_candidate(*boundary_kernel(s.dxx, s.dyy, dxy, s.f_val, s_a, s_t)) for s_a, s_t in sections]


def optimize_b13(s: SecondDerivativeSamples) -> list[Candidate]:
    """One candidate per section of the G1/G3 curve."""
    return _boundary_candidates(s, s.dxy1, B13_SECTIONS)


def optimize_b23(s: SecondDerivativeSamples) -> list[Candidate]:
    return _boundary_candidates(s, s.dxy2, B23_SECTIONS)


def optimize_g3(wide_eval: Callable, f_val: float, M: int, rule: G3Rule = G3Rule.STRICT) -> Candidate | None:
    """Best sampled wide-stencil control, or ``None`` if no angle gives a usable one."""
    a, theta, obj = g3_search(wide_eval, f_val, M, rule)
    if not np.isfinite(obj):
        return None
    return _candidate(a, theta, obj)


def optimize_control(
    s: SecondDerivativeSamples, wide_eval: Callable | None, M: int, g3_rule: G3Rule = G3Rule.STRICT
) -> OptimizerResult:
    """Best control at one point over all six regions."""
    out = optimize_controls(s.dxx, s.dyy, s.dxy1, s.dxy2, s.f_val, wide_eval, M, g3_rule=g3_rule)
    return OptimizerResult(
        ControlPair(float(out.a), float(out.theta)), float(out.objective), Region(int(out.region))
    )


def brute_force(objective: Callable, M: int) -> Candidate:
    """Exhaustive search over an ``M x M`` tensor grid of controls.

    ``a`` takes ``M`` equispaced values in ``[0, 1]`` (endpoints included) and
    ``theta`` the same midpoints used by :func:`g3_search`. ``objective`` must
    broadcast over arrays. Ties go to the first sample in ``(a, theta)``
    row-major order.
    """
    a_vals = np.linspace(0.0, 1.0, int(M)) if M > 1 else np.array([0.5])
    t_vals = theta_samples(M)
    A, T = np.meshgrid(a_vals, t_vals, indexing="ij")
    values = np.broadcast_to(np.asarray(objective(A, T), dtype=float), A.shape)
    k = int(np.argmax(values))
    return _candidate(A.flat[k], T.flat[k], values.flat[k])


def discrete_objective(s: SecondDerivativeSamples, wide_eval: Callable | None = None) -> Callable:
    """The piecewise pointwise objective: narrow stencils where monotone, wide elsewhere.

    Intended as the reference objective for :func:`brute_force`. Points in G3
    evaluate to ``-inf`` when ``wide_eval`` is not supplied.
    """

    def evaluate(a, theta):
        a, theta = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(theta, dtype=float))
        region = classify_arrays(a, theta)
        dxy = np.where((region == Region.G2) | (region == Region.B23), s.dxy2, s.dxy1)
        out = seven_point_objective(a, theta, s.dxx, s.dyy, dxy, s.f_val)
        wide = region == Region.G3
        if not np.any(wide):
            return out
        if wide_eval is None:
            return np.where(wide, -np.inf, out)
        out = out.copy()
        angles, which = np.unique(theta[wide], return_inverse=True)
        pairs = np.array([wide_eval(float(t)) for t in angles], dtype=float).reshape(len(angles), 2)
        out[wide] = wide_objective(a[wide], pairs[which, 0], pairs[which, 1], s.f_val)
        return out

    return evaluate
