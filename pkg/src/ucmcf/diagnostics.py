"""Per-step functional tracking and verification of the flow laws.

Every run produces a TimeSeries with the fixed column schema

    time,M,L,sigma_bar,c,theta,xi_tilde_l2,dxi_tilde_l2,edge_cv,dissipation_gap,drift

Columns that do not apply to a flow kind are left empty.  Verification is
data, not exceptions: checks return lists of event dicts
``{"step": int, "check": str, "magnitude": float}`` and a run with zero
events is the pass condition.

Column notes:

* M is the L2 mass (half the h-weighted sum of |point|^2); it decays with
  slope exactly -1 along the original flow and is nondecreasing along the
  normalized flow.
* sigma_bar is the h-weighted mean of the normalized-flow multiplier.  For
  original-flow runs the recorded value is 1/lambda with
  lambda = -L dL/dt = L^-2 h sum sigma_t k^2: under the change of variables
  between the two flows the normalized multiplier is sigma_t / lambda, so
  1/lambda is its mean and the monotonicity statements for the two columns
  coincide.
* c, theta, xi_tilde_l2, dxi_tilde_l2 describe the orthogonal decomposition
  of a normalized state into its circle-manifold projection and remainder.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .grid_curve import (
    circle_deviation,
    edge_cv,
    l2_mass,
    length,
    project_to_circle_manifold,
)
from .tension import lambda_speed, solve_normalized_tension, solve_original_tension

FOUR_PI_SQ = 4.0 * np.pi**2

CSV_COLUMNS = [
    "time", "M", "L", "sigma_bar", "c", "theta",
    "xi_tilde_l2", "dxi_tilde_l2", "edge_cv", "dissipation_gap", "drift",
]

# admissible smallness for the multiplier-oscillation bound
OSCILLATION_EPS_CEILING = 1.0 / (32.0 * np.pi**2) ** 2


class TimeSeries:
    """Append-only per-step record of one run."""

    def __init__(self, flow_kind, config_hash=""):
        self.flow_kind = flow_kind
        self.config_hash = config_hash
        self.rows = []
        self.extras = {}

    def append(self, **fields):
        row = {name: fields.get(name) for name in CSV_COLUMNS}
        if self.rows and row["time"] <= self.rows[-1]["time"]:
            raise ValueError("time column must be strictly increasing")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        """Column as float array; absent entries become NaN."""
        return np.array(
            [math.nan if r[name] is None else float(r[name]) for r in self.rows]
        )

    def to_csv(self):
        lines = [",".join(CSV_COLUMNS)]
        for row in self.rows:
            cells = []
            for name in CSV_COLUMNS:
                v = row[name]
                cells.append("" if v is None else f"{v:.17g}")
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def to_json(self):
        return json.dumps({
            "flow_kind": self.flow_kind,
            "config_hash": self.config_hash,
            "columns": CSV_COLUMNS,
            "rows": [[row[c] for c in CSV_COLUMNS] for row in self.rows],
        })


def _deriv_norm(values, h):
    d = (np.roll(values, -1, axis=0) - np.roll(values, 1, axis=0)) / (2.0 * h)
    return float(np.sqrt(h * np.sum(d * d)))


def initial_smallness(curve, tension):
    """Smallness quantity gating the multiplier-oscillation bound:
    (1/4pi^2 - sigma_bar) + |xi_tilde|^2 + |d_s xi_tilde|^2 at the start."""
    fit = project_to_circle_manifold(curve)
    dev = circle_deviation(curve, fit)
    h = curve.h
    xt2 = float(h * np.sum(dev * dev))
    dxt2 = _deriv_norm(dev, h) ** 2
    return float(1.0 / FOUR_PI_SQ - tension.mean) + xt2 + dxt2


def record(state, report, series):
    """Append one row for `state`; tensions are reused from the step report
    when available and solved fresh otherwise."""
    curve = state.curve
    h = curve.h
    fields = {
        "time": state.time,
        "M": l2_mass(curve),
        "L": length(curve),
        "edge_cv": edge_cv(curve),
    }
    kind = series.flow_kind
    if kind in ("original", "normalized"):
        fields["drift"] = report.pre_reparam_drift if report else state.drift
    if kind == "normalized":
        tension = report.tension if report and report.tension else \
            solve_normalized_tension(curve)
        fields["sigma_bar"] = tension.mean
        fit = project_to_circle_manifold(curve)
        dev = circle_deviation(curve, fit)
        fields["c"] = fit.c
        fields["theta"] = fit.theta
        fields["xi_tilde_l2"] = float(np.sqrt(h * np.sum(dev * dev)))
        fields["dxi_tilde_l2"] = _deriv_norm(dev, h)
        osc = float(np.max(np.abs(tension.values - tension.mean)))
        series.extras.setdefault("sigma_osc", []).append(osc)
        series.extras.setdefault("sigma_min", []).append(tension.min)
        series.extras.setdefault("sigma_max", []).append(
            float(tension.values.max()))
    elif kind == "original":
        tension = report.tension if report and report.tension else \
            solve_original_tension(curve)
        lam = lambda_speed(curve, tension)
        fields["sigma_bar"] = 1.0 / lam
        series.extras.setdefault("sigma_t_min", []).append(tension.min)
    elif kind == "regularized":
        if report and report.dissipation_lhs is not None:
            fields["dissipation_gap"] = report.dissipation_rhs - report.dissipation_lhs
    series.append(**fields)


# ---------------------------------------------------------------------------
# monotonicity verification
# ---------------------------------------------------------------------------

def _tolerance(column):
    scale = float(np.nanmax(np.abs(column))) if len(column) else 1.0
    return 1e-10 * max(1.0, scale)


def _monotone_events(values, direction, check, tol):
    events = []
    for i in range(1, len(values)):
        if direction > 0:
            gap = values[i - 1] - values[i]
        else:
            gap = values[i] - values[i - 1]
        if gap > tol:
            events.append({"step": i, "check": check, "magnitude": float(gap)})
    return events


def verify_monotone(series, m_slope_tol=1e-4):
    """Check every per-step monotonicity law recorded for this flow kind."""
    events = []
    if len(series) < 2:
        return events
    t = series.column("time")
    if series.flow_kind == "normalized":
        m = series.column("M")
        sb = series.column("sigma_bar")
        events += _monotone_events(m, +1, "mass_nondecreasing", _tolerance(m))
        events += _monotone_events(sb, +1, "sigma_bar_nondecreasing", _tolerance(sb))
        c = series.column("c")
        gates = sb[0] >= (2.0 / 3.0) / FOUR_PI_SQ and c[0] ** 2 >= 0.5
        if gates:
            xt = series.column("xi_tilde_l2")
            dxt = series.column("dxi_tilde_l2")
            events += _monotone_events(xt, -1, "xi_tilde_nonincreasing",
                                       _tolerance(xt))
            events += _monotone_events(dxt, -1, "dxi_tilde_nonincreasing",
                                       _tolerance(dxt))
    elif series.flow_kind == "original":
        lam = 1.0 / series.column("sigma_bar")
        events += _monotone_events(lam, -1, "lambda_nonincreasing", _tolerance(lam))
        m = series.column("M")
        slopes = np.diff(m) / np.diff(t)
        for i, s in enumerate(slopes, start=1):
            if abs(s + 1.0) > m_slope_tol:
                events.append({"step": i, "check": "mass_slope",
                               "magnitude": float(abs(s + 1.0))})
    return events


def sigma_bar_mass_events(series, slack=1e-8):
    """Rows where the mean multiplier exceeds the mass integral h sum |xi|^2.

    The continuum law is sigma_bar <= integral |xi|^2; discretely the
    centered-difference curvature biases sigma_bar upward by
    ~(2/3)(pi h)^2 / (4 pi^2), so near convergence the recorded gap tends to
    that positive constant rather than to zero.  Callers comparing against
    `slack` alone should do so on grids fine enough for the bias to be
    subdominant.
    """
    events = []
    m = series.column("M")
    sb = series.column("sigma_bar")
    for i in range(len(series)):
        if sb[i] > 2.0 * m[i] + slack:
            events.append({"step": i, "check": "sigma_bar_below_mass",
                           "magnitude": float(sb[i] - 2.0 * m[i])})
    return events


# ---------------------------------------------------------------------------
# decay-rate estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    rate: float
    r_squared: float
    window: tuple


def fit_decay(series, column, window):
    """Least-squares exponential rate of `column` over the time window."""
    t = series.column("time")
    v = series.column(column) if isinstance(column, str) else np.asarray(column)
    lo, hi = window
    mask = (t >= lo) & (t <= hi) & ~np.isnan(v)
    if mask.sum() < 10:
        raise ValueError("decay fit needs at least 10 samples in the window")
    if np.any(v[mask] <= 0.0):
        raise ValueError("decay fit needs positive values in the window")
    x = t[mask]
    y = np.log(v[mask])
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
    return DecayFit(rate=float(-slope), r_squared=r2, window=(lo, hi))


# ---------------------------------------------------------------------------
# multiplier oscillation
# ---------------------------------------------------------------------------

def oscillation_check(state, eps0=None, tension=None):
    """Check the pointwise multiplier-oscillation band for one state.

    Returns None on pass, an event dict on violation, and a not-applicable
    marker when the initial smallness exceeds the admissible ceiling.
    """
    if tension is None:
        tension = solve_normalized_tension(state.curve)
    if eps0 is None:
        eps0 = initial_smallness(state.curve, tension)
    if eps0 > OSCILLATION_EPS_CEILING:
        return {"check": "oscillation", "status": "not-applicable",
                "eps0": float(eps0)}
    root = math.sqrt(max(eps0, 0.0))
    osc = float(np.max(np.abs(tension.values - tension.mean)))
    lo = 1.0 / FOUR_PI_SQ - 4.0 * root - 1e-6
    hi = 1.0 / FOUR_PI_SQ + 3.0 * root + 1e-6
    if osc > 3.0 * root + 1e-6:
        return {"check": "oscillation", "magnitude": osc - 3.0 * root}
    if tension.min < lo or float(tension.values.max()) > hi:
        return {"check": "oscillation_band",
                "magnitude": max(lo - tension.min,
                                 float(tension.values.max()) - hi)}
    return None


def oscillation_events(sigma_osc, eps0):
    """Per-step oscillation events for a whole run (gated on smallness)."""
    if eps0 > OSCILLATION_EPS_CEILING:
        return []
    bound = 3.0 * math.sqrt(max(eps0, 0.0)) + 1e-6
    return [
        {"step": i, "check": "oscillation", "magnitude": float(osc - bound)}
        for i, osc in enumerate(sigma_osc) if osc > bound
    ]


# ---------------------------------------------------------------------------
# extinction bounds
# ---------------------------------------------------------------------------

def extinction_bounds_check(series, rel_tol=1e-3):
    """Length brackets and decay-rate floor for an original-flow series.

    With t* = M(0) + t(0): 2*sqrt(2)*pi*sqrt(t*-t) <= L <= L0*sqrt((t*-t)/t*)
    and lambda = -L dL/dt >= 4 pi^2, all up to `rel_tol` relative slack.
    """
    events = []
    if series.flow_kind != "original" or len(series) == 0:
        return events
    t = series.column("time")
    m = series.column("M")
    ell = series.column("L")
    lam = 1.0 / series.column("sigma_bar")
    t_star = t[0] + m[0]
    l0 = ell[0]
    for i in range(len(series)):
        remaining = t_star - t[i]
        if remaining <= 0.0:
            continue
        lower = 2.0 * math.sqrt(2.0) * math.pi * math.sqrt(remaining)
        upper = l0 * math.sqrt(remaining / t_star)
        if ell[i] < lower * (1.0 - rel_tol):
            events.append({"step": i, "check": "extinction_lower",
                           "magnitude": float(lower - ell[i])})
        if ell[i] > upper * (1.0 + rel_tol):
            events.append({"step": i, "check": "extinction_upper",
                           "magnitude": float(ell[i] - upper)})
        if lam[i] < FOUR_PI_SQ * (1.0 - rel_tol):
            events.append({"step": i, "check": "lambda_floor",
                           "magnitude": float(FOUR_PI_SQ - lam[i])})
    return events


def theta_total_variation(series, t_start=5.0):
    """Total variation of the fitted phase over [t_start, end], mod 1."""
    t = series.column("time")
    theta = series.column("theta")
    mask = (t >= t_start) & ~np.isnan(theta)
    th = theta[mask]
    if len(th) < 2:
        return 0.0
    d = np.diff(th)
    d = (d + 0.5) % 1.0 - 0.5
    return float(np.sum(np.abs(d)))


def events_to_jsonl(events):
    lines = []
    for ev in events:
        out = {"step": int(ev.get("step", -1)),
               "check": str(ev["check"]),
               "magnitude": float(ev.get("magnitude", 0.0))}
        lines.append(json.dumps(out))
    return "\n".join(lines) + ("\n" if lines else "")
