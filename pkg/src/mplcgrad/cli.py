"""Command-line experiment harness.

Every subcommand writes CSV series plus a JSON sidecar holding the full
configuration, seed and package version; reruns with the same seed produce
byte-identical files.
"""

import argparse
import csv
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import CalibrationError, CorrectionTable, PhaseResponse, build_correction, sweep_and_fit
from .device import Detection, forward
from .gradients import EstimatorConfig, NoisyCostProbe, Scheme, estimate_gradient
from .metrics import Metric, fit_sinusoid, normalized_cost
from .optimizer import DeviceSpec, OptimizerOptions, run_trials, summarize, trial_problem

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

DEFAULT_STEPS = {
    Scheme.CENTRAL_SINC: [math.pi / 2, 1.0, 0.1],
    Scheme.CENTRAL_PLAIN: [math.pi / 2],
    Scheme.FORWARD: [2.0 ** -6, 2.0 ** -18],
    Scheme.BACKWARD: [2.0 ** -18],
    Scheme.ANALYTIC: [math.pi / 2],
}
DEFAULT_SIGMAS = [0.0, 2.0 ** -16, 2.0 ** -8, 2.0 ** -4]
DEFAULTS = {
    "ports": 8,
    "layers": None,  # ports + 1
    "trials": 64,
    "seed": 0,
    "metric": None,  # follows detection
    "detection": "coherent",
    "scheme": None,
    "step": None,
    "sigma": None,
    "out": "results",
    "jobs": None,
    "max_iterations": 1000,
    "gradient_tolerance": 1e-12,
    "c2": 0.1,
    "c3": 0.0,
    "knots": 64,
}


class ConfigError(ValueError):
    pass


def _num(x):
    return repr(float(x))


def _label(x):
    return f"{float(x):.6g}"


class Run:
    """Resolved configuration plus output helpers for one subcommand."""

    def __init__(self, command, cfg):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg["out"])

    @property
    def spec(self):
        return DeviceSpec(self.cfg["ports"], self.cfg["layers"], self.cfg["detection"])

    @property
    def options(self):
        return OptimizerOptions(
            gradient_tolerance=self.cfg["gradient_tolerance"],
            max_iterations=self.cfg["max_iterations"],
        )

    def metadata(self, **extra):
        # output location and worker count do not affect results
        config = {k: v for k, v in self.cfg.items() if k not in ("out", "jobs")}
        meta = {"command": self.command, "version": __version__, "config": config}
        meta.update(extra)
        return meta

    def write_csv(self, name, header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / name).write_text(buf.getvalue())

    def write_json(self, name, data):
        self.out.mkdir(parents=True, exist_ok=True)
        text = json.dumps(_jsonable(data), indent=2, sort_keys=True, allow_nan=True)
        (self.out / name).write_text(text + "\n")

    def trials(self, spec, est, metric):
        return run_trials(spec, est, metric, self.cfg["trials"], self.cfg["seed"], self.options,
                          jobs=self.cfg["jobs"])

    def write_quantiles(self, stem, traces, **extra):
        table = summarize(traces)
        self.write_csv(stem + ".csv", table.COLUMNS, table.rows())
        finals = [t.final_cost for t in traces]
        self.write_json(stem + ".json", self.metadata(
            series=stem,
            median_final_cost=float(np.median(finals)),
            trials=[t.to_dict() for t in traces],
            **extra,
        ))
        return table


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if hasattr(x, "value"):
        return x.value
    return x


def _metric_for(cfg, detection):
    if cfg.get("metric"):
        return Metric(cfg["metric"])
    return Metric.FROBENIUS_SQ if Detection(detection) is Detection.COHERENT else Metric.D_PRIME


def _estimators(cfg, default_pairs):
    """(scheme, step) grid from flags, or the subcommand's defaults."""
    if cfg["scheme"] is None and cfg["step"] is None:
        return default_pairs
    schemes = [Scheme(s) for s in (cfg["scheme"] or [s.value for s, _ in default_pairs])]
    pairs = []
    for s in schemes:
        for h in cfg["step"] or DEFAULT_STEPS[s]:
            pairs.append((s, float(h)))
    return pairs


# --- subcommands -------------------------------------------------------------

def cmd_sine_sweep(run):
    cfg = run.cfg
    spec = run.spec
    metric = _metric_for(cfg, spec.detection)
    device, target, p0, rng = trial_problem(spec, cfg["seed"])
    shifter = int(rng.integers(device.n_params))
    phi = np.linspace(0.0, 2 * np.pi, 256, endpoint=False)
    points = np.tile(p0, (phi.size, 1))
    points[:, shifter] = phi
    cost = normalized_cost(target, forward(device, points), metric)
    fit = fit_sinusoid(phi, cost)
    run.write_csv("sine_sweep.csv", ("phi", "cost"), zip(phi, cost))
    run.write_json("sine_sweep.json", run.metadata(
        metric=metric.value, shifter=shifter,
        fit={"amplitude": fit.amplitude, "phase": fit.phase, "offset": fit.offset},
        residual=fit.residual,
    ))
    return EXIT_OK


def cmd_metric_compare(run):
    cfg = run.cfg
    spec = DeviceSpec(cfg["ports"], cfg["layers"], cfg.get("detection") or "intensity")
    device, target, p0, rng = trial_problem(spec, cfg["seed"])
    shifter = int(rng.integers(device.n_params))
    phi = np.linspace(0.0, 2 * np.pi, 256, endpoint=False)
    points = np.tile(p0, (phi.size, 1))
    points[:, shifter] = phi
    x = forward(device, points)
    d = normalized_cost(target, x, Metric.D)
    dp = normalized_cost(target, x, Metric.D_PRIME)
    fits = {name: fit_sinusoid(phi, v) for name, v in (("d", d), ("dprime", dp))}
    run.write_csv("metric_compare.csv", ("phi", "d", "dprime"), zip(phi, d, dp))
    run.write_json("metric_compare.json", run.metadata(
        shifter=shifter,
        fits={k: {"amplitude": f.amplitude, "phase": f.phase, "offset": f.offset, "residual": f.residual}
              for k, f in fits.items()},
    ))
    return EXIT_OK


def cmd_convergence(run):
    spec = run.spec
    metric = _metric_for(run.cfg, spec.detection)
    pairs = _estimators(run.cfg, [(Scheme.CENTRAL_SINC, h) for h in DEFAULT_STEPS[Scheme.CENTRAL_SINC]]
                        + [(Scheme.FORWARD, h) for h in DEFAULT_STEPS[Scheme.FORWARD]])
    summary = []
    for scheme, h in pairs:
        est = EstimatorConfig(scheme, h)
        traces = run.trials(spec, est, metric)
        stem = f"convergence_{scheme.value}_h{_label(h)}"
        run.write_quantiles(stem, traces, estimator=est.to_dict(), metric=metric.value)
        summary.append((scheme.value, h, float(np.median([t.final_cost for t in traces]))))
    run.write_csv("convergence_summary.csv", ("scheme", "step", "median_final_cost"), summary)
    return EXIT_OK


def cmd_noise_bench(run):
    spec = run.spec
    metric = _metric_for(run.cfg, spec.detection)
    pairs = _estimators(run.cfg, [(Scheme.CENTRAL_SINC, math.pi / 2), (Scheme.FORWARD, 2.0 ** -18)])
    sigmas = run.cfg["sigma"] if run.cfg["sigma"] is not None else DEFAULT_SIGMAS
    summary = []
    for scheme, h in pairs:
        for sigma in sigmas:
            est = EstimatorConfig(scheme, h, float(sigma))
            traces = run.trials(spec, est, metric)
            stem = f"noise_{scheme.value}_h{_label(h)}_s{_label(sigma)}"
            run.write_quantiles(stem, traces, estimator=est.to_dict(), metric=metric.value)
            summary.append((scheme.value, h, float(sigma), float(np.median([t.final_cost for t in traces]))))
    run.write_csv("noise_summary.csv", ("scheme", "step", "sigma", "median_final_cost"), summary)
    return EXIT_OK


def cmd_detection_compare(run):
    cfg = run.cfg
    est = EstimatorConfig(*_estimators(cfg, [(Scheme.CENTRAL_SINC, math.pi / 2)])[0])
    summary = {}
    for detection, metric in ((Detection.COHERENT, Metric.FROBENIUS_SQ), (Detection.INTENSITY, Metric.D_PRIME)):
        spec = DeviceSpec(cfg["ports"], cfg["layers"], detection)
        traces = run.trials(spec, est, metric)
        hits = [t.iterations_to(1e-6) for t in traces]
        summary[detection.value] = {
            "metric": metric.value,
            "n_params": traces[0].final["n_params"],
            "reached_1e-10": sum(t.final_cost <= 1e-10 for t in traces),
            "median_iterations_to_1e-6": float(np.median([np.inf if h is None else h for h in hits])),
        }
        run.write_quantiles(f"detection_{detection.value}", traces, estimator=est.to_dict(),
                            metric=metric.value, n_params=summary[detection.value]["n_params"])
    run.write_json("detection_summary.json", run.metadata(estimator=est.to_dict(), summary=summary))
    return EXIT_OK


def cmd_distance_relation(run):
    cfg = run.cfg
    spec = DeviceSpec(cfg["ports"], cfg["layers"], Detection.INTENSITY)
    est = EstimatorConfig(*_estimators(cfg, [(Scheme.CENTRAL_SINC, math.pi / 2)])[0])
    traces = run.trials(spec, est, Metric.D_PRIME)
    dp = np.array([t.final["dprime"] for t in traces])
    d = np.array([t.final["d"] for t in traces])
    used = dp > 1e-14
    slope = float(dp[used] @ d[used] / (d[used] @ d[used])) if used.any() else float("nan")
    run.write_csv("distance_relation.csv", ("seed", "dprime", "d", "used_in_fit"),
                  ((t.seed, a, b, int(u)) for t, a, b, u in zip(traces, dp, d, used)))
    run.write_json("distance_relation.json", run.metadata(
        estimator=est.to_dict(), slope=slope, n_used=int(used.sum()),
        trials=[t.to_dict() for t in traces],
    ))
    return EXIT_OK


def calibrate_device(probe, knots=64):
    """Build corrections for every shifter; returns (table, {shifter: error message})."""
    table = CorrectionTable()
    failures = {}
    for k in range(probe.device.n_params):
        try:
            table = build_correction(probe, k, knots=knots, table=table)
        except CalibrationError as e:
            failures[k] = str(e)
    return table, failures


def cmd_calibrate(run):
    cfg = run.cfg
    spec = run.spec
    metric = _metric_for(cfg, spec.detection)
    device, target, p0, _ = trial_problem(spec, cfg["seed"])
    response = PhaseResponse((1.0, cfg["c2"], cfg["c3"]))
    device = device.with_response(response)
    probe = NoisyCostProbe(device, target, metric)
    table, failures = calibrate_device(probe, cfg["knots"])
    corrected = NoisyCostProbe(device, target, metric, correction=table)
    sweep = np.linspace(0.0, 2 * np.pi, 32, endpoint=False)
    rows = []
    for k in range(device.n_params):
        _, pre = sweep_and_fit(probe, k, sweep)
        post = sweep_and_fit(corrected, k, sweep)[1] if k in table.knots else float("nan")
        rows.append((k, pre, post, post / pre if pre > 0 else float("nan"), failures.get(k, "")))
    oracle = device.ideal()
    est = EstimatorConfig(Scheme.CENTRAL_SINC, math.pi / 2)
    ref = NoisyCostProbe(oracle, target, metric).oracle_gradient(p0)
    err_pre = float(np.max(np.abs(estimate_gradient(probe, p0, est) - ref)))
    err_post = float(np.max(np.abs(estimate_gradient(corrected, p0, est) - ref)))
    run.write_csv("calibration_residuals.csv", ("shifter", "pre_residual", "post_residual", "ratio", "error"), rows)
    run.write_json("correction_tables.json", table.to_dict())
    run.write_json("calibration.json", run.metadata(
        response=response.to_dict(), metric=metric.value,
        failures={str(k): v for k, v in failures.items()},
        gradient_error_before=err_pre, gradient_error_after=err_post,
    ))
    return EXIT_RUNTIME if failures else EXIT_OK


COMMANDS = {
    "sine-sweep": cmd_sine_sweep,
    "convergence": cmd_convergence,
    "noise-bench": cmd_noise_bench,
    "metric-compare": cmd_metric_compare,
    "detection-compare": cmd_detection_compare,
    "distance-relation": cmd_distance_relation,
    "calibrate": cmd_calibrate,
}

COMMAND_DEFAULTS = {
    "distance-relation": {"trials": 128, "gradient_tolerance": 1e-7},
    "metric-compare": {"detection": "intensity"},
}


def build_parser():
    parser = argparse.ArgumentParser(prog="mplcgrad", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file supplying any option; flags override it")
        p.add_argument("--ports", type=int)
        p.add_argument("--layers", type=int, help="default: ports + 1")
        p.add_argument("--trials", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--metric", choices=[m.value for m in Metric])
        p.add_argument("--detection", choices=[d.value for d in Detection])
        p.add_argument("--scheme", nargs="+", choices=[s.value for s in Scheme])
        p.add_argument("--step", nargs="+", type=float)
        p.add_argument("--sigma", nargs="+", type=float)
        p.add_argument("--out")
        p.add_argument("--jobs", type=int)
        p.add_argument("--max-iterations", type=int)
        p.add_argument("--gradient-tolerance", type=float)
        p.add_argument("--c2", type=float, help="quadratic drive nonlinearity (calibrate)")
        p.add_argument("--c3", type=float, help="cubic drive nonlinearity (calibrate)")
        p.add_argument("--knots", type=int)
    return parser


def resolve_config(command, args):
    """defaults < subcommand defaults < config file < flags."""
    cfg = dict(DEFAULTS)
    cfg.update(COMMAND_DEFAULTS.get(command, {}))
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config file {args.config}: {e}") from e
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(k.replace("-", "_") for k in file_cfg) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update({k.replace("-", "_"): v for k, v in file_cfg.items()})
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if cfg["layers"] is None:
        cfg["layers"] = cfg["ports"] + 1
    for key in ("scheme", "step", "sigma"):
        if cfg[key] is not None and not isinstance(cfg[key], list):
            cfg[key] = [cfg[key]]
    _validate(cfg)
    return cfg


def _validate(cfg):
    try:
        if cfg["ports"] < 1 or cfg["layers"] < 1:
            raise ConfigError("ports and layers must be >= 1")
        if cfg["trials"] < 1:
            raise ConfigError("trials must be >= 1")
        Detection(cfg["detection"])
        if cfg["metric"] is not None:
            Metric(cfg["metric"])
        for s in cfg["scheme"] or []:
            Scheme(s)
        for s in cfg["scheme"] or [Scheme.CENTRAL_SINC]:
            for h in cfg["step"] or DEFAULT_STEPS[Scheme(s)]:
                EstimatorConfig(s, h)
        if any(s < 0 for s in cfg["sigma"] or []):
            raise ConfigError("sigma must be >= 0")
        OptimizerOptions(gradient_tolerance=cfg["gradient_tolerance"], max_iterations=cfg["max_iterations"])
        if cfg["knots"] < 8:
            raise ConfigError("knots must be >= 8")
    except ConfigError:
        raise
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    try:
        cfg = resolve_config(args.command, args)
    except ConfigError as e:
        print(f"mplcgrad: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    run = Run(args.command, cfg)
    try:
        return COMMANDS[args.command](run)
    except OSError as e:
        print(f"mplcgrad: I/O error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, FloatingPointError) as e:
        print(f"mplcgrad: {args.command} failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
