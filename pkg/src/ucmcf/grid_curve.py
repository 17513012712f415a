"""Discrete closed curves on a uniform periodic parameter grid.

A curve is a closed polyline of n points in R^d, viewed as samples of a map
from the unit circle (parameter s in [0,1), grid spacing h = 1/n).  All
index arithmetic is periodic, integrals are h-weighted sums, and derivative
stencils are second-order centered differences.

The module provides the initial-data catalog, geometric functionals
(length, L2 mass, squared curvature), the L2 projection onto the manifold
of round circles in the first coordinate plane, and arclength resampling
(the constraint-maintenance primitive used after every flow step).
"""

import json
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


class CurveError(ValueError):
    """Raised for invalid curve descriptors or degenerate geometry."""


@dataclass(frozen=True)
class GridCurve:
    """Closed polyline: n points in R^d on the uniform parameter grid."""

    points: np.ndarray
    n: int
    dim: int
    h: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2:
            raise CurveError("points must be a 2-D array")
        if self.n != pts.shape[0] or self.dim != pts.shape[1]:
            raise CurveError("n/dim inconsistent with points shape")
        if self.n < 8:
            raise CurveError("need at least 8 grid points")
        if self.dim < 2:
            raise CurveError("ambient dimension must be >= 2")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_points(cls, points, recenter=True):
        pts = np.array(points, dtype=float)
        if recenter:
            pts = pts - pts.mean(axis=0)
        return cls(pts, pts.shape[0], pts.shape[1], 1.0 / pts.shape[0])

    def with_points(self, points, recenter=True):
        return GridCurve.from_points(points, recenter=recenter)


@dataclass(frozen=True)
class CircleFit:
    """Best L2 approximation of a curve by c * w0(s + theta).

    w0 is the reference circle of radius 1/(2 pi) in the first coordinate
    plane.  `degenerate` flags vanishing first-harmonic energy, where the
    phase is undefined and fixed to 0 by convention.
    """

    c: float
    theta: float
    residual: float
    degenerate: bool = False


def w0_samples(n, dim, theta=0.0, amplitude=1.0):
    """Samples of amplitude * w0(s + theta) on the n-point grid."""
    s = np.arange(n) / n + theta
    pts = np.zeros((n, dim))
    pts[:, 0] = np.cos(TWO_PI * s)
    pts[:, 1] = np.sin(TWO_PI * s)
    return amplitude / TWO_PI * pts


# ---------------------------------------------------------------------------
# differential operators and functionals
# ---------------------------------------------------------------------------

def d1(curve):
    """Centered first derivative, periodic: (p[i+1] - p[i-1]) / (2h)."""
    p = curve.points
    return (np.roll(p, -1, axis=0) - np.roll(p, 1, axis=0)) / (2.0 * curve.h)


def d2(curve):
    """Centered second derivative, periodic: (p[i+1] - 2p[i] + p[i-1]) / h^2."""
    p = curve.points
    return (np.roll(p, -1, axis=0) - 2.0 * p + np.roll(p, 1, axis=0)) / curve.h**2


def edge_lengths(curve):
    p = curve.points
    return np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1)


def edge_cv(curve):
    """Coefficient of variation of the edge lengths (density uniformity)."""
    ell = edge_lengths(curve)
    m = ell.mean()
    if m == 0.0:
        return 0.0
    return ell.std() / m


def length(curve):
    """Polyline length: sum of edge lengths."""
    return float(edge_lengths(curve).sum())


def arc_corrected_length(curve):
    """Chord-to-arc corrected length, exact for regular inscribed polygons.

    Equal chords of length ell on a circle subtend arcs of length
    ell * (pi h) / sin(pi h); applying that factor to the chord sum gives a
    length estimate with O(h^4) error on circles and O(h^2) in general.
    """
    h = curve.h
    return length(curve) * (np.pi * h) / np.sin(np.pi * h)


def l2_mass(curve):
    """Half the h-weighted sum of squared point norms."""
    p = curve.points
    return float(0.5 * curve.h * np.sum(p * p))


def curvature_sq(curve):
    """Pointwise squared magnitude of the second derivative."""
    dd = d2(curve)
    return np.sum(dd * dd, axis=1)


def mean_abs(curve):
    return float(np.linalg.norm(curve.points.mean(axis=0)))


def turning_number(curve):
    """Total turning of the tangent in the first coordinate plane / 2 pi."""
    t = d1(curve)[:, :2]
    ang = np.arctan2(t[:, 1], t[:, 0])
    dang = np.diff(ang, append=ang[:1])
    dang = (dang + np.pi) % TWO_PI - np.pi
    return float(dang.sum() / TWO_PI)


# ---------------------------------------------------------------------------
# projection onto the circle manifold
# ---------------------------------------------------------------------------

def project_to_circle_manifold(curve):
    """Global minimizer of the L2 distance to {c * w0(. + theta)}.

    Only the first two ambient coordinates carry the circle; remaining
    coordinates contribute to the residual.  The optimum is the first
    discrete Fourier mode of (x, y): with a_x = h sum x_i cos(2 pi s_i) etc.,
    the minimizing phase and amplitude come from A = a_x + b_y,
    B = a_y - b_x, c = 2 pi sqrt(A^2 + B^2), theta = atan2(B, A) / 2 pi.
    """
    p = curve.points
    n, h = curve.n, curve.h
    s = np.arange(n) / n
    cosv = np.cos(TWO_PI * s)
    sinv = np.sin(TWO_PI * s)
    x, y = p[:, 0], p[:, 1]
    a_x = h * np.dot(x, cosv)
    b_x = h * np.dot(x, sinv)
    a_y = h * np.dot(y, cosv)
    b_y = h * np.dot(y, sinv)
    A = a_x + b_y
    B = a_y - b_x
    amp = float(np.hypot(A, B))
    c = TWO_PI * amp
    if c < 1e-14:
        res = float(np.sqrt(h * np.sum(p * p)))
        return CircleFit(0.0, 0.0, res, degenerate=True)
    theta = float(np.arctan2(B, A) / TWO_PI % 1.0)
    diff = p - w0_samples(n, curve.dim, theta=theta, amplitude=c)
    res = float(np.sqrt(h * np.sum(diff * diff)))
    return CircleFit(c, theta, res, degenerate=False)


def circle_deviation(curve, fit=None):
    """Pointwise remainder after removing the fitted circle component."""
    if fit is None:
        fit = project_to_circle_manifold(curve)
    return curve.points - w0_samples(curve.n, curve.dim, fit.theta, fit.c)


# ---------------------------------------------------------------------------
# arclength resampling
# ---------------------------------------------------------------------------

def _hermite_eval(p, tangents, ell, seg, theta):
    """Evaluate the periodic cubic at local parameter theta of segment seg."""
    n = p.shape[0]
    p0 = p[seg]
    p1 = p[(seg + 1) % n]
    m0 = tangents[seg] * ell[seg][:, None]
    m1 = tangents[(seg + 1) % n] * ell[seg][:, None]
    t = theta[:, None]
    t2 = t * t
    t3 = t2 * t
    h00 = 2 * t3 - 3 * t2 + 1
    h10 = t3 - 2 * t2 + t
    h01 = -2 * t3 + 3 * t2
    h11 = t3 - t2
    return h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1


def resample_to_arclength(curve, max_sweeps=60, cv_target=None):
    """Redistribute the n points to equal edge lengths along the curve.

    The input polyline is interpolated by a periodic cubic (Catmull-Rom with
    chord-length tangent scaling); new nodes are placed on the interpolant so
    that the output polyline has equal edges.  Total polyline length is
    preserved exactly by a final uniform rescale, and the mean is recentered
    to zero.  Already-uniform input is returned unchanged.
    """
    p = curve.points
    n, dd = curve.n, curve.dim
    ell = np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1)
    total = ell.sum()
    if total == 0.0 or np.min(ell) < 1e-14 * total / n:
        raise CurveError("cannot resample a curve with a zero-length edge")
    if cv_target is None:
        # roundoff floor of the edge CV: edges are O(total/n) differences of
        # O(max|p|) coordinates
        scale = float(np.max(np.abs(p)))
        cv_target = max(1e-14, 8.0 * np.finfo(float).eps * n * scale / total)
    input_cv = ell.std() / ell.mean()
    if input_cv <= cv_target:
        return curve

    # chordal Catmull-Rom tangents: dP/ds at nodes, s = chord arclength
    chord_prev = np.roll(ell, 1)
    tangents = (np.roll(p, -1, axis=0) - np.roll(p, 1, axis=0)) / (
        (chord_prev + ell)[:, None]
    )

    if input_cv < 1e-3:
        # near-uniform input (the per-step reparametrization path): the
        # node parameters themselves seed the equalization sweeps
        u = np.arange(n, dtype=float)
    else:
        # fine arclength table on the interpolant for the initial placement
        m_sub = 16
        theta_f = np.arange(m_sub) / m_sub
        segs = np.repeat(np.arange(n), m_sub)
        thetas = np.tile(theta_f, n)
        fine = _hermite_eval(p, tangents, ell, segs, thetas)
        fine_closed = np.vstack([fine, fine[:1]])
        fine_chord = np.linalg.norm(np.diff(fine_closed, axis=0), axis=1)
        s_tab = np.concatenate([[0.0], np.cumsum(fine_chord)])
        u_tab = np.concatenate([segs + thetas, [float(n)]])
        targets = np.arange(n) * (s_tab[-1] / n)
        u = np.interp(targets, s_tab, u_tab)

    q = None
    prev_cv = np.inf
    for _ in range(max_sweeps):
        seg = np.floor(u).astype(int) % n
        loc = u - np.floor(u)
        q = _hermite_eval(p, tangents, ell, seg, loc)
        out_edges = np.linalg.norm(np.roll(q, -1, axis=0) - q, axis=1)
        mean_edge = out_edges.mean()
        cv = out_edges.std() / mean_edge
        if cv <= cv_target or cv >= 0.7 * prev_cv:
            break
        prev_cv = cv
        # re-invert the (parameter -> cumulative output chord) map
        c_tab = np.concatenate([[0.0], np.cumsum(out_edges)])
        u_grid = np.concatenate([u, [float(n)]])
        tgt = np.arange(n) * (c_tab[-1] / n)
        u = np.interp(tgt, c_tab, u_grid)
        u[0] = 0.0

    q = q * (total / np.linalg.norm(np.roll(q, -1, axis=0) - q, axis=1).sum())
    q = q - q.mean(axis=0)
    return GridCurve.from_points(q, recenter=False)


# ---------------------------------------------------------------------------
# initial-data catalog
# ---------------------------------------------------------------------------

def _equal_arc_from_samples(fine_pts, n):
    """Pick n points at equal cumulative chord length from a fine sampling."""
    closed = np.vstack([fine_pts, fine_pts[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    s_tab = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.arange(n) * (s_tab[-1] / n)
    idx = np.searchsorted(s_tab, targets, side="right") - 1
    idx = np.clip(idx, 0, len(seg) - 1)
    frac = (targets - s_tab[idx]) / seg[idx]
    return closed[idx] + frac[:, None] * (closed[idx + 1] - closed[idx])


def _embed(xy, dim):
    pts = np.zeros((xy.shape[0], dim))
    pts[:, :2] = xy
    return pts


def _parse_args(spec):
    if not spec:
        return []
    return spec.split(",")


def make_curve(kind, n, dim=2, seed=0):
    """Build a catalog curve, resampled to uniform edges and zero mean.

    Descriptors (string form, parameters after a colon):

    - ``circle[:R]``          circle of radius R (default 1/(2 pi): unit length)
    - ``mcircle:m[,R]``       m-times covered circle (default total length 1)
    - ``ellipse:a,b[,raw]``   ellipse with semi-axes a, b; scaled to unit
                              length unless ``raw`` is given
    - ``perturbed:amp,mode``  unit circle with a radial harmonic perturbation,
                              rescaled to unit length; phase drawn from seed
    - ``square[:scale]``      axis-aligned square of perimeter scale
                              (default 0.999), sampled exactly on the polygon
    - ``polygon:path.json``   polyline from a curve JSON file, resampled

    The square is the Lipschitz datum for the relaxed-constraint flow: its
    nodes sit exactly on the polygon, so edges never exceed the grid spacing
    (corner-spanning chords are shorter).  It is the one catalog entry that
    is not edge-uniform.
    """
    if n < 8:
        raise CurveError("need n >= 8")
    if dim < 2:
        raise CurveError("need dim >= 2")
    name, _, argspec = kind.partition(":")
    args = _parse_args(argspec)

    if name == "circle":
        radius = float(args[0]) if args else 1.0 / TWO_PI
        if radius <= 0:
            raise CurveError("circle radius must be positive")
        s = np.arange(n) / n
        xy = radius * np.column_stack([np.cos(TWO_PI * s), np.sin(TWO_PI * s)])
        return GridCurve.from_points(_embed(xy, dim))

    if name == "mcircle":
        if not args:
            raise CurveError("mcircle needs a covering number, e.g. mcircle:2")
        m = int(args[0])
        if m < 1:
            raise CurveError("covering number must be >= 1")
        if n % m != 0:
            raise CurveError("grid size must be divisible by the covering number")
        radius = float(args[1]) if len(args) > 1 else 1.0 / (TWO_PI * m)
        s = np.arange(n) / n
        xy = radius * np.column_stack(
            [np.cos(TWO_PI * m * s), np.sin(TWO_PI * m * s)]
        )
        return GridCurve.from_points(_embed(xy, dim))

    if name == "ellipse":
        if len(args) < 2:
            raise CurveError("ellipse needs two semi-axes, e.g. ellipse:2,1")
        a, b = float(args[0]), float(args[1])
        raw = len(args) > 2 and args[2] == "raw"
        if a <= 0 or b <= 0:
            raise CurveError("ellipse semi-axes must be positive")
        u = np.arange(64 * n) / (64 * n)
        fine = np.column_stack([a * np.cos(TWO_PI * u), b * np.sin(TWO_PI * u)])
        if not raw:
            closed = np.vstack([fine, fine[:1]])
            perim = np.linalg.norm(np.diff(closed, axis=0), axis=1).sum()
            fine = fine / perim
        pts = _equal_arc_from_samples(fine, n)
        curve = GridCurve.from_points(_embed(pts, dim))
        return resample_to_arclength(curve)

    if name == "perturbed":
        if len(args) < 2:
            raise CurveError("perturbed needs amplitude and mode, e.g. perturbed:0.01,3")
        amp, mode = float(args[0]), int(args[1])
        if mode < 2:
            raise CurveError("perturbation mode must be >= 2")
        phase = 0.0
        if seed:
            phase = float(np.random.default_rng(seed).uniform(0.0, 1.0))
        u = np.arange(64 * n) / (64 * n)
        rad = 1.0 / TWO_PI + amp * np.cos(TWO_PI * mode * u + TWO_PI * phase)
        if np.min(rad) <= 0:
            raise CurveError("perturbation amplitude destroys immersion")
        fine = np.column_stack([rad * np.cos(TWO_PI * u), rad * np.sin(TWO_PI * u)])
        closed = np.vstack([fine, fine[:1]])
        perim = np.linalg.norm(np.diff(closed, axis=0), axis=1).sum()
        pts = _equal_arc_from_samples(fine / perim, n)
        curve = GridCurve.from_points(_embed(pts, dim))
        return resample_to_arclength(curve)

    if name == "square":
        scale = float(args[0]) if args else 0.999
        if scale <= 0:
            raise CurveError("square scale must be positive")
        side = scale / 4.0
        r = side / 2.0
        corners = np.array([[r, r], [-r, r], [-r, -r], [r, -r], [r, r]])
        seg = np.linalg.norm(np.diff(corners, axis=0), axis=1)
        s_tab = np.concatenate([[0.0], np.cumsum(seg)])
        targets = np.arange(n) * (s_tab[-1] / n)
        idx = np.clip(np.searchsorted(s_tab, targets, side="right") - 1, 0, 3)
        frac = (targets - s_tab[idx]) / seg[idx]
        pts = corners[idx] + frac[:, None] * (corners[idx + 1] - corners[idx])
        return GridCurve.from_points(_embed(pts, dim))

    if name == "polygon":
        if not args:
            raise CurveError("polygon needs a file path, e.g. polygon:curve.json")
        loaded = load_curve(argspec)
        pts = loaded.points
        if pts.shape[1] < dim:
            pts = np.hstack([pts, np.zeros((pts.shape[0], dim - pts.shape[1]))])
        fine = _equal_arc_from_samples(pts, max(n, 8 * pts.shape[0]))
        coarse = _equal_arc_from_samples(fine, n)
        curve = GridCurve.from_points(coarse[:, :dim])
        return resample_to_arclength(curve)

    raise CurveError(f"unknown curve kind: {name!r}")


# ---------------------------------------------------------------------------
# curve file format
# ---------------------------------------------------------------------------

def curve_to_dict(curve):
    return {"n": curve.n, "dim": curve.dim, "points": curve.points.tolist()}


def curve_from_dict(data):
    pts = np.asarray(data["points"], dtype=float)
    if pts.shape != (data["n"], data["dim"]):
        raise CurveError("curve file shape mismatch")
    return GridCurve.from_points(pts, recenter=False)


def save_curve(curve, path):
    with open(path, "w") as fh:
        json.dump(curve_to_dict(curve), fh)


def load_curve(path):
    with open(path) as fh:
        return curve_from_dict(json.load(fh))
