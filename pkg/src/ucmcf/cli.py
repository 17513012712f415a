"""Command-line entry point.

Subcommands: run-original, run-normalized, run-regularized, run-classical,
stationary-check, roundtrip, preset <name>, list-presets, self-test.

Exit codes: 0 success with zero verification events, 1 when the simulation
ran but at least one claim check failed, 2 on usage or runtime errors.
"""

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import diagnostics
from .config import (
    ConfigError,
    PRESETS,
    RunConfig,
    config_from_mapping,
    load_config_file,
    preset,
)
from .flow import initial_state, run
from .grid_curve import l2_mass, make_curve, save_curve
from .renormalize import roundtrip_compare
from .stationary import stationary_report


def _default_outdir():
    return os.environ.get("UCMCF_OUT", "ucmcf-out")


def _add_run_flags(p, regularized=False):
    p.add_argument("--init", help="initial-datum descriptor, e.g. perturbed:0.01,3")
    p.add_argument("--n", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-end", dest="t_end", type=float)
    p.add_argument("--t-end-frac", dest="t_end_frac", type=float,
                   help="t_end as a fraction of the extinction time M(0)")
    p.add_argument("--reparam-every", dest="reparam_every", type=int)
    if regularized:
        p.add_argument("--epsilon", type=float)
    p.add_argument("--drift-ceiling", dest="drift_ceiling", type=float)
    p.add_argument("--out", dest="output_dir")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--snapshot-every", dest="snapshot_every", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--order", type=int)
    p.add_argument("--conv-tol", dest="conv_tol", type=float)
    p.add_argument("--config", help="TOML or JSON config file; flags override")


def _build_parser():
    parser = argparse.ArgumentParser(prog="ucmcf")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in ("original", "normalized", "regularized", "classical"):
        p = sub.add_parser(f"run-{kind}", help=f"run the {kind} flow")
        _add_run_flags(p, regularized=(kind == "regularized"))
    p = sub.add_parser("stationary-check", help="stationary-state suite for a curve")
    p.add_argument("--init", required=True)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--out", dest="output_dir")
    p = sub.add_parser("roundtrip", help="original vs normalized change of variables")
    p.add_argument("--init", default="ellipse:2,1")
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--dt", type=float, default=1e-4)
    p.add_argument("--t-end-frac", dest="t_end_frac", type=float, default=0.3)
    p.add_argument("--out", dest="output_dir")
    p = sub.add_parser("preset", help="run one or more experiment presets")
    p.add_argument("names", nargs="+", metavar="name")
    p.add_argument("--out", dest="output_dir")
    p.add_argument("--jobs", type=int, default=1,
                   help="run multiple presets as independent parallel processes")
    sub.add_parser("list-presets", help="list available presets")
    sub.add_parser("self-test", help="verification-harness self test "
                                     "(a corrupted series must raise one event)")
    return parser


def _config_from_args(args, flow_kind):
    data = {}
    if args.config:
        data.update(load_config_file(args.config))
    for key in ("init", "n", "dim", "dt", "t_end", "t_end_frac",
                "reparam_every", "epsilon", "drift_ceiling", "output_dir",
                "format", "snapshot_every", "seed", "order", "conv_tol"):
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    if "init" not in data:
        raise ConfigError("--init (or a config file with init) is required")
    return config_from_mapping(data, flow_kind=flow_kind)


def _resolve_t_end(config):
    if config.t_end_frac is None:
        return config
    if config.flow_kind != "original":
        raise ConfigError("--t-end-frac applies to the original flow only")
    state = initial_state(config)
    t_star = l2_mass(state.curve)
    return replace(config, t_end=config.t_end_frac * t_star, t_end_frac=None)


def write_outputs(outdir, config, result):
    os.makedirs(outdir, exist_ok=True)
    if config.format == "json":
        with open(os.path.join(outdir, "series.json"), "w") as fh:
            fh.write(result.series.to_json())
    else:
        with open(os.path.join(outdir, "series.csv"), "w") as fh:
            fh.write(result.series.to_csv())
    with open(os.path.join(outdir, "events.jsonl"), "w") as fh:
        fh.write(diagnostics.events_to_jsonl(result.events))
    if result.snapshots:
        snapdir = os.path.join(outdir, "snapshots")
        os.makedirs(snapdir, exist_ok=True)
        for i, (_, curve) in enumerate(result.snapshots):
            save_curve(curve, os.path.join(snapdir, f"curve_{i:06d}.json"))
    summary = {
        "config": json.loads(config.canonical_json()),
        "config_hash": config.config_hash(),
        "rows": len(result.series),
        "status": result.status,
        "event_count": len(result.events),
        "extras": {k: v for k, v in result.extras.items()
                   if isinstance(v, (int, float, str))},
    }
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def _cmd_run(args, kind):
    config = _config_from_args(args, kind)
    config = _resolve_t_end(config)
    result = run(config)
    outdir = config.output_dir or _default_outdir()
    write_outputs(outdir, config, result)
    n_events = len(result.events)
    print(f"{kind} flow: {len(result.series)} rows, status={result.status}, "
          f"{n_events} verification events -> {outdir}")
    return 0 if n_events == 0 else 1


def _cmd_stationary(args):
    curve = make_curve(args.init, args.n, args.dim)
    report = stationary_report(curve)
    outdir = args.output_dir or _default_outdir()
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "stationary.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=float)
    print(json.dumps({k: v for k, v in report.items() if k != "rigidity"},
                     default=float))
    events = report.get("rigidity", {}).get("events", [])
    return 0 if not events else 1


def _cmd_roundtrip(args):
    config = RunConfig(flow_kind="original", init=args.init, n=args.n,
                       dt=args.dt, t_end=1.0, t_end_frac=args.t_end_frac,
                       snapshot_every=1).validate()
    config = _resolve_t_end(config)
    disc, report = roundtrip_compare(config)
    outdir = args.output_dir or _default_outdir()
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "roundtrip.json"), "w") as fh:
        json.dump(report, fh, indent=2, default=float)
    print(f"roundtrip discrepancy: {disc:.3e}")
    return 0 if disc < 5e-3 else 1


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def _preset_circle_stability_extra_events(result):
    events = []
    series = result.series
    try:
        fit_x = diagnostics.fit_decay(series, "xi_tilde_l2", (1.0, 8.0))
        if fit_x.rate < 1.0 / 3.0 - 0.02:
            events.append({"step": -1, "check": "decay_xi_tilde",
                           "magnitude": 1.0 / 3.0 - fit_x.rate})
    except ValueError as exc:
        events.append({"step": -1, "check": "decay_xi_tilde", "magnitude": 0.0,
                       "error": str(exc)})
    c = series.column("c")
    col = np.maximum(np.abs(c**2 - 1.0), 1e-18)
    try:
        fit_c = diagnostics.fit_decay(series, col, (1.0, 8.0))
        if fit_c.rate < 1.0 / 8.0 - 0.02:
            events.append({"step": -1, "check": "decay_c",
                           "magnitude": 1.0 / 8.0 - fit_c.rate})
    except ValueError as exc:
        events.append({"step": -1, "check": "decay_c", "magnitude": 0.0,
                       "error": str(exc)})
    return events


def _run_preset_eps_limit(outdir):
    """Self-convergence of the relaxed flow toward the normalized flow."""
    n, t_end = 20, 0.5
    ref_cfg = RunConfig(flow_kind="normalized", init="ellipse:2,1", n=n,
                        dt=1e-3, t_end=t_end).validate()
    ref = run(ref_cfg)
    ref_pts = ref.final_state.curve.points
    events = []
    dists = []
    for eps in (1e-2, 3e-3, 1e-3):
        cfg = RunConfig(flow_kind="regularized", init="ellipse:2,1", n=n,
                        dt=0.24 * (1.0 / n) ** 2 * eps, t_end=t_end,
                        epsilon=eps, record_every=10000).validate()
        result = run(cfg)
        d = ref_pts - result.final_state.curve.points
        dists.append(float(np.sqrt((1.0 / n) * np.sum(d * d))))
    for a, b in zip(dists, dists[1:]):
        if b >= a:
            events.append({"step": -1, "check": "eps_monotone_convergence",
                           "magnitude": float(b - a)})
    rng = np.random.default_rng(7)
    from .flow import f_eps, g_eps
    worst = 0.0
    for eps in (1e-1, 1e-2, 1e-3):
        tau = rng.normal(size=(200, 2)) * rng.uniform(0.1, 3.0, size=(200, 1))
        err = np.linalg.norm(f_eps(g_eps(tau, eps), eps) - tau, axis=1)
        worst = max(worst, float(np.max(err / (1.0 + np.linalg.norm(tau, axis=1)))))
    if worst > 1e-10:
        events.append({"step": -1, "check": "fg_identity", "magnitude": worst})
    report = {"distances": dists, "fg_identity_worst": worst}
    with open(os.path.join(outdir, "eps-limit.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    return events


def _run_preset_stationary_rigidity(cfg, outdir):
    result = run(cfg)
    report = stationary_report(result.final_state.curve)
    with open(os.path.join(outdir, "stationary.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=float)
    events = []
    if report["residual"] >= 1e-2:
        events.append({"step": -1, "check": "stationary_residual",
                       "magnitude": report["residual"]})
    if report["sigma_sq_curvature_cv"] >= 1e-3:
        events.append({"step": -1, "check": "sigma_sq_curvature",
                       "magnitude": report["sigma_sq_curvature_cv"]})
    fi = report.get("first_integral")
    if fi is None:
        events.append({"step": -1, "check": "first_integral", "magnitude": 0.0})
    else:
        if not (-2.0 * fi["tau_bar"] ** 3 - 1e-6 <= fi["lambda"] < 0.0):
            events.append({"step": -1, "check": "first_integral",
                           "magnitude": abs(fi["lambda"])})
    events.extend(report.get("rigidity", {}).get("events", []))
    return events


def _run_preset_density_contrast(cfgs, outdir):
    events = []
    ucmcf_cfg, classical_cfg = cfgs
    res_u = run(ucmcf_cfg)
    drift = res_u.series.column("drift")
    worst = float(np.nanmax(drift[1:])) if len(drift) > 1 else 0.0
    if worst > 1e-3:
        events.append({"step": -1, "check": "ucmcf_drift", "magnitude": worst})
    res_c = run(classical_cfg)
    cv = res_c.series.column("edge_cv")
    cv0 = max(cv[0], 1e-15)
    if cv[-1] <= 10.0 * cv0:
        events.append({"step": -1, "check": "classical_cv_growth",
                       "magnitude": float(cv[-1] / cv0)})
    report = {"ucmcf_max_drift": worst, "classical_cv_initial": float(cv[0]),
              "classical_cv_final": float(cv[-1])}
    with open(os.path.join(outdir, "density-contrast.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    return events


def _run_one_preset(name, outdir):
    spec = preset(name)
    os.makedirs(outdir, exist_ok=True)
    events = []
    if spec.special == "eps-limit":
        events = _run_preset_eps_limit(outdir)
    elif spec.special == "roundtrip":
        cfg = RunConfig(flow_kind="original", init="ellipse:2,1", n=256,
                        dt=1e-4, t_end=1.0, t_end_frac=0.3,
                        snapshot_every=1).validate()
        cfg = _resolve_t_end(cfg)
        disc, report = roundtrip_compare(cfg)
        with open(os.path.join(outdir, "roundtrip.json"), "w") as fh:
            json.dump(report, fh, indent=2, default=float)
        if disc >= 5e-3:
            events.append({"step": -1, "check": "roundtrip_discrepancy",
                           "magnitude": disc})
    elif spec.special == "stationary-rigidity":
        events = _run_preset_stationary_rigidity(
            _resolve_t_end(spec.configs[0]), outdir)
    elif spec.name == "density-contrast":
        events = _run_preset_density_contrast(spec.configs, outdir)
    else:
        for i, cfg in enumerate(spec.configs):
            cfg = _resolve_t_end(replace(cfg, output_dir=None))
            result = run(cfg)
            sub = os.path.join(outdir, f"{spec.name}-{i}")
            write_outputs(sub, cfg, result)
            events.extend(ev for ev in result.events
                          if ev["check"] in spec.checks)
            if spec.name == "circle-stability":
                events.extend(_preset_circle_stability_extra_events(result))
    with open(os.path.join(outdir, "preset-events.jsonl"), "w") as fh:
        fh.write(diagnostics.events_to_jsonl(events))
    print(f"preset {spec.name}: {len(events)} verification events -> {outdir}")
    return 0 if not events else 1


def _preset_worker(item):
    name, outdir = item
    try:
        return _run_one_preset(name, outdir)
    except Exception as exc:
        print(f"preset {name}: runtime error: {exc}", file=sys.stderr)
        return 2


def _cmd_preset(args):
    base = args.output_dir or _default_outdir()
    names = args.names
    for name in names:
        preset(name)  # validate before launching anything
    if len(names) == 1:
        return _run_one_preset(names[0], base)
    items = [(name, os.path.join(base, name)) for name in names]
    if args.jobs > 1:
        import multiprocessing

        with multiprocessing.Pool(min(args.jobs, len(items))) as pool:
            codes = pool.map(_preset_worker, items)
    else:
        codes = [_preset_worker(item) for item in items]
    return max(codes)


def _cmd_self_test():
    """Corrupt a tiny series and require the harness to flag exactly it."""
    series = diagnostics.TimeSeries("normalized", "self-test")
    for i in range(6):
        series.append(time=float(i), M=0.01 + 1e-4 * i,
                      sigma_bar=0.02 + 1e-4 * i, c=1.0, theta=0.0,
                      xi_tilde_l2=1e-3, dxi_tilde_l2=1e-3, L=1.0,
                      edge_cv=0.0, drift=0.0)
    series.rows[3]["sigma_bar"] = series.rows[2]["sigma_bar"] - 1e-3
    events = diagnostics.verify_monotone(series)
    print(diagnostics.events_to_jsonl(events), end="")
    return 1 if len(events) == 1 else 2


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        if args.command.startswith("run-"):
            return _cmd_run(args, args.command[4:])
        if args.command == "stationary-check":
            return _cmd_stationary(args)
        if args.command == "roundtrip":
            return _cmd_roundtrip(args)
        if args.command == "preset":
            return _cmd_preset(args)
        if args.command == "list-presets":
            for name in sorted(PRESETS):
                print(f"{name}: {PRESETS[name].description}")
            return 0
        if args.command == "self-test":
            return _cmd_self_test()
        return 2
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure, not a claim violation
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
