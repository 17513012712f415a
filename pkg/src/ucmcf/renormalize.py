"""Change of variables between the original and normalized flows.

The slow time is tau = -ln L(t) and the normalized curve is the original
one divided by its length.  The map is exercised end to end by
``roundtrip_compare``: evolve the original flow, push every snapshot
through the change of variables, and compare against an independent
normalized-flow run sampled at the same slow times.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .flow import FlowState, run
from .grid_curve import GridCurve, arc_corrected_length, length

TAU_DT_FACTOR = 4.0 * np.pi**2  # minimal length-decay rate; links the two step sizes


class RenormError(RuntimeError):
    pass


@dataclass(frozen=True)
class RenormMap:
    """Monotone sample table between physical time and slow time."""

    ts: np.ndarray
    taus: np.ndarray

    @classmethod
    def from_series(cls, series):
        t = series.column("time")
        ell = series.column("L")
        taus = -np.log(ell)
        if np.any(np.diff(taus) <= 0.0):
            raise RenormError("slow time is not strictly increasing")
        return cls(np.asarray(t), np.asarray(taus))

    def tau_of_t(self, t):
        return float(np.interp(t, self.ts, self.taus))

    def t_of_tau(self, tau):
        return float(np.interp(tau, self.taus, self.ts))

    def l_of_tau(self, tau):
        # inverse of tau = -ln L, exact by construction
        return math.exp(-tau)


def normalize_state(state, length_floor=1e-12):
    """Map an original-flow state to the corresponding normalized state.

    Divides by the chord-to-arc corrected length, the same unit-length
    convention the normalized stepper restores after every step; using the
    raw chord sum here would leave a systematic O(h^2) mismatch between the
    mapped states and a direct normalized-flow run.
    """
    ell = arc_corrected_length(state.curve)
    if ell <= length_floor:
        raise RenormError(f"length {ell:.3e} at or below floor")
    pts = state.curve.points / ell
    curve = GridCurve.from_points(pts, recenter=False)
    return FlowState(curve, -math.log(ell), "normalized", state.drift)


def _l2_distance(a, b):
    h = 1.0 / a.shape[0]
    d = a - b
    return float(np.sqrt(h * np.sum(d * d)))


def roundtrip_compare(config, skip_initial=1):
    """Max L2 distance between the mapped original flow and a direct
    normalized-flow run at matched slow times.

    Returns (discrepancy, report).  The normalized comparison run uses
    dt_norm = dt * 4 pi^2, so refining the original step refines both.
    """
    cfg = replace(config, flow_kind="original", snapshot_every=max(
        1, config.snapshot_every or 1))
    cfg.validate()
    original = run(cfg)
    mapped = []
    for t, curve in original.snapshots:
        st = FlowState(curve, t, "original")
        mapped.append(normalize_state(st))
    if len(mapped) <= skip_initial:
        return 0.0, {"taus": [], "distances": [], "max": 0.0}

    norm_start = normalize_state(FlowState(original.snapshots[0][1], 0.0, "original"))
    tau0 = norm_start.time
    dt_norm = config.dt * TAU_DT_FACTOR
    norm_cfg = replace(
        cfg,
        flow_kind="normalized",
        dt=dt_norm,
        t_end=(mapped[-1].time - tau0) + 2.0 * dt_norm,
        t_end_frac=None,
        snapshot_every=1,
        epsilon=None,
    ).validate()
    normalized = run(norm_cfg, state=replace(norm_start, time=0.0))

    # snapshots of the normalized run indexed by the slow time offset
    taus_n = np.array([tau0 + t for t, _ in normalized.snapshots])
    curves_n = [c for _, c in normalized.snapshots]

    taus, dists = [], []
    for st in mapped[skip_initial:]:
        tau = st.time
        if tau > taus_n[-1] + 1e-12:
            continue
        j = int(np.searchsorted(taus_n, tau))
        j = min(max(j, 1), len(taus_n) - 1)
        w = (tau - taus_n[j - 1]) / (taus_n[j] - taus_n[j - 1])
        interp = (1.0 - w) * curves_n[j - 1].points + w * curves_n[j].points
        dists.append(_l2_distance(st.curve.points, interp))
        taus.append(tau)
    disc = max(dists) if dists else 0.0
    return disc, {"taus": taus, "distances": dists, "max": disc}
