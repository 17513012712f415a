"""Time integration of the compressing curve flows.

Four steppers share the grid_curve/tension machinery:

* ``step_original``     dt eta = L^-2 (sigma_t eta')' with unit-mean tension;
                        semi-implicit in the diffusion, tension lagged.
* ``step_normalized``   dt xi = (sigma xi')' + xi on unit-speed loops; the
                        reaction term is folded into the implicit matrix.
* ``step_regularized``  explicit relaxed-constraint flow
                        dt xi = (G_eps(xi'))' + xi with the monotone
                        regularization map G_eps.
* ``step_classical``    explicit curve-shortening baseline (no tangential
                        correction), kept to exhibit grid-density distortion.

The uniform-speed constraint is maintained by resampling every step (drift
is measured before correction and reported) and, for the normalized flow,
by rescaling to unit chord-to-arc corrected length.  That projection kills
the dilation mode, which the +xi reaction term otherwise amplifies
exponentially at the discrete level.

The original-flow stepper defaults to a Richardson pass (one full step and
two half steps of the pinned semi-implicit update, recombined to second
order): the lagged-coefficient first-order update alone leaves an O(dt/L^2)
bias in the per-step mass slope that is visible against the tight slope
tolerances near extinction.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .grid_curve import (
    GridCurve,
    arc_corrected_length,
    d1,
    edge_lengths,
    l2_mass,
    length,
    make_curve,
    resample_to_arclength,
)
from .tension import (
    TensionField,
    solve_normalized_tension,
    solve_original_tension,
)
from .cyclic import solve_cyclic_tridiagonal
from . import diagnostics


class StepRejected(RuntimeError):
    """Step cannot be taken at this dt; retry with `suggested_dt`."""

    def __init__(self, message, suggested_dt):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class ExtinctionReached(RuntimeError):
    """Original flow has shrunk below the configured length floor."""


@dataclass(frozen=True)
class FlowState:
    curve: GridCurve
    time: float
    kind: str  # original | normalized | regularized | classical
    drift: float = 0.0
    eps: Optional[float] = None


@dataclass(frozen=True)
class StepReport:
    dt_used: float
    tension: Optional[TensionField]
    pre_reparam_drift: float
    dissipation_lhs: Optional[float] = None
    dissipation_rhs: Optional[float] = None


def max_edge_deviation(points):
    """Max relative deviation of edge lengths from their mean."""
    ell = np.linalg.norm(np.roll(points, -1, axis=0) - points, axis=1)
    m = ell.mean()
    if m == 0.0:
        return 0.0
    return float(np.max(np.abs(ell - m)) / m)


def _implicit_solve(points, sigma, coef, shift, h):
    """Solve (I - shift*I - coef*A_sigma) x = points, one system per column.

    A_sigma is the conservative flux form with edge coefficients
    sigma_{i+1/2} = (sigma_i + sigma_{i+1}) / 2.
    """
    sh = 0.5 * (sigma + np.roll(sigma, -1))
    w = coef * sh / (h * h)
    diag = (1.0 - shift) + w + np.roll(w, 1)
    off = -w
    return solve_cyclic_tridiagonal(off, diag, off, off[-1], off[-1], points)


# ---------------------------------------------------------------------------
# normalized flow
# ---------------------------------------------------------------------------

def _restore_unit_speed(curve):
    scale = 1.0 / arc_corrected_length(curve)
    return GridCurve.from_points(curve.points * scale, recenter=False)


def _normalized_raw(curve, dt, tension=None):
    if tension is None:
        tension = solve_normalized_tension(curve)
    pts = _implicit_solve(curve.points, tension.values, dt, dt, curve.h)
    pts = pts - pts.mean(axis=0)
    return pts, tension


def step_normalized(state, dt, *, order=1, reparam=True, drift_ceiling=1e-3):
    """One semi-implicit step of the normalized flow."""
    if state.kind != "normalized":
        raise ValueError("state is not a normalized-flow state")
    if dt == 0.0:
        return state, StepReport(0.0, solve_normalized_tension(state.curve), state.drift)
    if not 0.0 < dt < 1.0:
        raise StepRejected("normalized step needs 0 < dt < 1", min(dt / 2, 0.5))
    curve = state.curve
    tension = solve_normalized_tension(curve)
    if order == 1:
        raw, _ = _normalized_raw(curve, dt, tension)
    else:
        full, _ = _normalized_raw(curve, dt, tension)
        half, _ = _normalized_raw(curve, dt / 2, tension)
        mid = _restore_unit_speed(resample_to_arclength(GridCurve.from_points(half)))
        raw2, _ = _normalized_raw(mid, dt / 2)
        raw = 2.0 * raw2 - full
        raw = raw - raw.mean(axis=0)
    drift = max_edge_deviation(raw)
    if drift > drift_ceiling:
        raise StepRejected(
            f"pre-reparametrization drift {drift:.2e} above ceiling", dt / 2
        )
    new_curve = GridCurve.from_points(raw, recenter=False)
    if reparam:
        new_curve = resample_to_arclength(new_curve)
    new_curve = _restore_unit_speed(new_curve)
    new_state = FlowState(new_curve, state.time + dt, "normalized",
                          max_edge_deviation(new_curve.points))
    return new_state, StepReport(dt, tension, drift)


# ---------------------------------------------------------------------------
# original flow
# ---------------------------------------------------------------------------

def _original_raw(curve, dt, tension=None):
    if tension is None:
        tension = solve_original_tension(curve)
    coef = dt / length(curve) ** 2
    pts = _implicit_solve(curve.points, tension.values, coef, 0.0, curve.h)
    pts = pts - pts.mean(axis=0)
    return pts, tension


def step_original(state, dt, *, order=2, reparam=True, drift_ceiling=1e-3,
                  length_floor=1e-3):
    """One step of the original flow; refuses to step past extinction."""
    if state.kind != "original":
        raise ValueError("state is not an original-flow state")
    curve = state.curve
    if length(curve) < length_floor:
        raise ExtinctionReached(f"length below floor {length_floor:g}")
    if l2_mass(curve) - dt <= 0.0:
        raise StepRejected("dt would step past the extinction time", dt / 2)
    tension = solve_original_tension(curve)
    if order == 1:
        raw, _ = _original_raw(curve, dt, tension)
    else:
        full, _ = _original_raw(curve, dt, tension)
        half, _ = _original_raw(curve, dt / 2, tension)
        mid = resample_to_arclength(GridCurve.from_points(half))
        raw2, _ = _original_raw(mid, dt / 2)
        raw = 2.0 * raw2 - full
        raw = raw - raw.mean(axis=0)
    drift = max_edge_deviation(raw)
    if drift > drift_ceiling:
        raise StepRejected(
            f"pre-reparametrization drift {drift:.2e} above ceiling", dt / 2
        )
    new_curve = GridCurve.from_points(raw, recenter=False)
    if reparam:
        new_curve = resample_to_arclength(new_curve)
    new_state = FlowState(new_curve, state.time + dt, "original",
                          max_edge_deviation(new_curve.points))
    return new_state, StepReport(dt, tension, drift)


# ---------------------------------------------------------------------------
# regularized flow
# ---------------------------------------------------------------------------

def f_eps(kappa, eps):
    """Monotone regularization map F_eps(k) = eps*k + k / sqrt(eps + |k|^2)."""
    kappa = np.asarray(kappa, dtype=float)
    mag2 = np.sum(kappa * kappa, axis=-1, keepdims=True)
    return eps * kappa + kappa / np.sqrt(eps + mag2)


def _g_eps_radial(t, eps, r0=None, tol=1e-13, max_iter=100):
    """Invert the scalar radial map f(r) = eps*r + r/sqrt(eps + r^2) = t.

    f is strictly increasing and concave on r >= 0, so Newton iterates
    started at (or clipped to) a point below the root increase monotonically
    to it; a warm start above the root overshoots once and then converges
    from below.
    """
    t = np.asarray(t, dtype=float)
    if r0 is None:
        r = t / (eps + 1.0 / math.sqrt(eps))
        burst = 6
    else:
        r = np.maximum(np.asarray(r0, dtype=float), 0.0)
        burst = 2
    ceiling = tol * (1.0 + float(t.max()))
    for _ in range(max_iter):
        # a burst of unchecked Newton updates, then one residual check
        for _ in range(burst):
            root = np.sqrt(eps + r * r)
            resid = eps * r + r / root - t
            r -= resid / (eps + eps / root**3)
            np.maximum(r, 0.0, out=r)
        root = np.sqrt(eps + r * r)
        resid = eps * r + r / root - t
        if np.max(np.abs(resid)) <= ceiling:
            break
        burst = 2
    return r


def g_eps(tau_vec, eps):
    """Inverse of F_eps: returns kappa with F_eps(kappa) = tau_vec."""
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    tau = np.asarray(tau_vec, dtype=float)
    single = tau.ndim == 1
    tv = tau.reshape(-1, tau.shape[-1])
    mag = np.linalg.norm(tv, axis=1)
    r = _g_eps_radial(mag, eps)
    scale = np.where(mag > 0.0, r / np.where(mag > 0.0, mag, 1.0), 0.0)
    out = tv * scale[:, None]
    return out[0] if single else out.reshape(tau.shape)


def step_regularized(state, dt, eps, *, warm_radii=None):
    """One explicit step of the relaxed-constraint flow; no reparametrization.

    Also returns the edge radii |kappa| so the caller can warm-start the
    next inversion: (state, report, radii).
    """
    if state.kind != "regularized":
        raise ValueError("state is not a regularized-flow state")
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    curve = state.curve
    h = curve.h
    limit = 0.25 * h * h * eps
    if dt > limit:
        raise StepRejected(
            f"dt {dt:.2e} above explicit stability bound {limit:.2e}", limit
        )
    p = curve.points
    tau = np.empty_like(p)  # forward-difference gradient per edge
    tau[:-1] = p[1:]
    tau[-1] = p[0]
    tau -= p
    tau /= h
    mag = np.sqrt(np.einsum("ij,ij->i", tau, tau))
    r = _g_eps_radial(mag, eps, r0=warm_radii)
    safe = np.where(mag > 0.0, mag, 1.0)
    kappa = tau * (np.where(mag > 0.0, r, 0.0) / safe)[:, None]
    v = np.empty_like(kappa)
    v[0] = kappa[0] - kappa[-1]
    v[1:] = kappa[1:] - kappa[:-1]
    v /= h
    v += p
    new_pts = p + dt * v
    lhs = float(h * np.einsum("ij,ij->", v, v))
    rhs = float(h * np.einsum("ij,ij->", p, v))
    ne = np.empty_like(new_pts)
    ne[:-1] = new_pts[1:]
    ne[-1] = new_pts[0]
    ne -= new_pts
    edges = np.sqrt(np.einsum("ij,ij->i", ne, ne))
    mean_edge = float(edges.mean())
    drift = float(np.max(np.abs(edges - mean_edge))) / mean_edge if mean_edge else 0.0
    new_curve = GridCurve.from_points(new_pts, recenter=False)
    new_state = FlowState(new_curve, state.time + dt, "regularized",
                          drift, eps=eps)
    return new_state, StepReport(dt, None, drift, lhs, rhs), r


def max_gradient_norm(curve):
    """Largest forward-difference gradient magnitude |xi'| over the edges."""
    return float(np.max(edge_lengths(curve)) / curve.h)


# ---------------------------------------------------------------------------
# classical baseline
# ---------------------------------------------------------------------------

def step_classical(state, dt):
    """Explicit curve-shortening step for non-uniform parametrizations."""
    if state.kind != "classical":
        raise ValueError("state is not a classical-flow state")
    curve = state.curve
    t1 = d1(curve)
    speed = np.linalg.norm(t1, axis=1)
    if np.min(speed) <= 1e-14:
        raise StepRejected("degenerate parametrization (vanishing speed)", dt / 2)
    limit = 0.25 * curve.h**2 * float(np.min(speed) ** 2)
    if dt > limit:
        raise StepRejected(
            f"dt {dt:.2e} above explicit stability bound {limit:.2e}", limit
        )
    unit = t1 / speed[:, None]
    dT = (np.roll(unit, -1, axis=0) - np.roll(unit, 1, axis=0)) / (2.0 * curve.h)
    H = dT / speed[:, None]
    pts = curve.points + dt * H
    pts = pts - pts.mean(axis=0)
    new_curve = GridCurve.from_points(pts, recenter=False)
    return FlowState(new_curve, state.time + dt, "classical",
                     max_edge_deviation(pts))


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    series: object
    events: list
    final_state: FlowState
    snapshots: list
    extras: dict
    status: str


def initial_state(config):
    curve = make_curve(config.init, config.n, config.dim, config.seed)
    return FlowState(curve, 0.0, config.flow_kind,
                     max_edge_deviation(curve.points),
                     eps=config.epsilon if config.flow_kind == "regularized" else None)


def run(config, state=None):
    """Execute one experiment: step loop, per-step diagnostics, snapshots."""
    if state is None:
        state = initial_state(config)
    series = diagnostics.TimeSeries(config.flow_kind, config.config_hash())
    events = []
    snapshots = []
    extras = {}

    order = config.order
    if order is None:
        order = 2 if config.flow_kind == "original" else 1

    if config.flow_kind == "normalized":
        ten0 = solve_normalized_tension(state.curve)
        extras["eps0"] = diagnostics.initial_smallness(state.curve, ten0)

    diagnostics.record(state, None, series)
    if config.snapshot_every:
        snapshots.append((state.time, state.curve))

    dt = config.dt
    warm = None
    halvings = 0
    step_index = 0
    last_report = None
    status = "t_end"
    # stop short of t_end by a sliver rather than taking a roundoff-sized step
    min_step = 1e-9 * min(config.dt, config.t_end)
    while config.t_end - state.time > min_step:
        dt_step = min(dt, config.t_end - state.time)
        reparam = config.reparam_every > 0 and (step_index + 1) % config.reparam_every == 0
        try:
            if config.flow_kind == "normalized":
                new_state, report = step_normalized(
                    state, dt_step, order=order, reparam=reparam,
                    drift_ceiling=config.drift_ceiling)
            elif config.flow_kind == "original":
                new_state, report = step_original(
                    state, dt_step, order=order, reparam=reparam,
                    drift_ceiling=config.drift_ceiling,
                    length_floor=config.length_floor)
            elif config.flow_kind == "regularized":
                new_state, report, warm = step_regularized(
                    state, dt_step, config.epsilon, warm_radii=warm)
            elif config.flow_kind == "classical":
                new_state = step_classical(state, dt_step)
                report = StepReport(dt_step, None, new_state.drift)
            else:
                raise ValueError(f"unknown flow kind {config.flow_kind!r}")
        except StepRejected as exc:
            halvings += 1
            if halvings > 20:
                raise RuntimeError(
                    f"step rejected after 20 dt halvings: {exc}") from exc
            dt = min(dt / 2.0, exc.suggested_dt)
            continue
        except ExtinctionReached:
            status = "extinct"
            break

        step_index += 1
        last_report = report
        if step_index % config.record_every == 0:
            diagnostics.record(new_state, report, series)
        if report.dissipation_lhs is not None:
            gap = report.dissipation_rhs - report.dissipation_lhs
            if gap < -1e-8:
                events.append({"step": step_index, "check": "dissipation",
                               "magnitude": float(-gap)})
        if config.snapshot_every and step_index % config.snapshot_every == 0:
            snapshots.append((new_state.time, new_state.curve))

        if config.conv_tol > 0.0:
            delta = new_state.curve.points - state.curve.points
            rate = math.sqrt(state.curve.h * float(np.sum(delta * delta))) / dt_step
            state = new_state
            if rate < config.conv_tol:
                status = "converged"
                break
        else:
            state = new_state

    if config.snapshot_every and (not snapshots or snapshots[-1][0] != state.time):
        snapshots.append((state.time, state.curve))
    if len(series) and series.rows[-1]["time"] < state.time:
        diagnostics.record(state, last_report, series)

    events.extend(diagnostics.verify_monotone(series))
    if config.flow_kind == "normalized":
        extras["sigma_osc"] = list(series.extras.get("sigma_osc", []))
        events.extend(diagnostics.oscillation_events(
            extras["sigma_osc"], extras["eps0"]))
    if config.flow_kind == "original":
        events.extend(diagnostics.extinction_bounds_check(series))

    return RunResult(series, events, state, snapshots, extras, status)
