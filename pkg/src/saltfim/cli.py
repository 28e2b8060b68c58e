"""Command-line entry point: ``saltfim run | compare | list-models``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .estimation import FitConfig, monte_carlo_crlb
from .exceptions import NumericalError, SaltfimError, ValidationError
from .hybrid import HybridArc, HybridSystemSpec, IntegratorConfig, simulate
from .information import (
    NoiseModel,
    OutputMap,
    arc_hpe_windows,
    fisher_information,
    hpe_certificate,
    sample_output_sensitivities,
    select_outputs,
    state_output,
)
from .sensitivity import PropagationMode, propagate
from .systems import (
    BuckParams,
    buck_averaged_spec,
    buck_dcm_spec,
    case_saltation,
    disk_images,
    fig3_case,
    fig3_spec,
)
from .systems.wtg import WtgParams, wtg_output_map, wtg_spec

SCHEMA_VERSION = "saltfim.experiment/1"
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


@dataclass
class Model:
    spec: HybridSystemSpec
    theta: np.ndarray
    outputs: OutputMap


def _state_outputs(spec: HybridSystemSpec) -> OutputMap:
    return state_output(range(spec.n_states), spec.n_states, spec.n_params, spec.state_names)


def _buck_params(params: dict) -> BuckParams:
    known = {f.name for f in dataclasses.fields(BuckParams)}
    unknown = set(params) - known
    if unknown:
        raise ValidationError(f"unknown buck parameters: {sorted(unknown)}")
    data = {k: tuple(v) if isinstance(v, list) else v for k, v in params.items()}
    return BuckParams(**data)


def _build_buck(params, averaged):
    p = _buck_params(params)
    spec = buck_averaged_spec(p) if averaged else buck_dcm_spec(p)
    return Model(spec, p.theta, _state_outputs(spec))


def _build_wtg(params, guard_kind):
    p = WtgParams.from_dict(params)
    return Model(wtg_spec(p, guard_kind), p.theta, wtg_output_map(p))


def _build_fig3(params):
    unknown = set(params) - {"drift"}
    if unknown:
        raise ValidationError(f"unknown fig3 parameters: {sorted(unknown)}")
    spec = fig3_spec()
    return Model(spec, np.array([float(params.get("drift", 1.0))]), _state_outputs(spec))


MODELS: dict[str, Callable[[dict], Model]] = {
    "buck_dcm": lambda params: _build_buck(params, averaged=False),
    "buck_averaged": lambda params: _build_buck(params, averaged=True),
    "wtg_z_guard": lambda params: _build_wtg(params, "rotor_speed"),
    "wtg_power_guard": lambda params: _build_wtg(params, "power"),
    "fig3": _build_fig3,
}


@dataclass
class ExperimentConfig:
    """Validated experiment description (JSON schema ``saltfim.experiment/1``)."""

    model: str
    T: float
    noise: dict
    params: dict = field(default_factory=dict)
    outputs: list[str] | None = None
    propagation: list[str] = field(default_factory=lambda: ["saltation"])
    hpe: dict | None = None
    montecarlo: dict | None = None
    integrator: dict | None = None
    emit: str | None = None
    schema: str = SCHEMA_VERSION

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ValidationError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        for key in ("model", "T", "noise"):
            if key not in data:
                raise ValidationError(f"config is missing '{key}'")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self):
        if self.schema != SCHEMA_VERSION:
            raise ValidationError(f"unsupported schema {self.schema!r}; expected {SCHEMA_VERSION!r}")
        if self.model not in MODELS:
            raise ValidationError(f"unknown model {self.model!r}; available: {sorted(MODELS)}")
        if not isinstance(self.T, (int, float)) or not np.isfinite(self.T) or self.T <= 0:
            raise ValidationError("T must be a positive number")
        if isinstance(self.propagation, str):
            self.propagation = [self.propagation]
        self.propagation = [PropagationMode.parse(m).value for m in self.propagation]
        if not isinstance(self.noise, dict) or "V" not in self.noise:
            raise ValidationError("noise must be an object with a 'V' entry")

    def integrator_config(self) -> IntegratorConfig | None:
        return IntegratorConfig(**self.integrator) if self.integrator else None


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(data)


def _covariance(value, m: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(m, float(arr))
    if arr.ndim == 1:
        arr = np.diag(arr)
    if arr.shape != (m, m):
        raise ValidationError(f"{name} must be a scalar, a length-{m} diagonal or an {m}x{m} matrix")
    return arr


def build_noise(noise: dict, m: int) -> NoiseModel:
    """``V`` plus ``V_events``: ``"same"``, ``null``, ``{"scale": s}``, one covariance or a list."""
    V = _covariance(noise["V"], m, "noise.V")
    ve = noise.get("V_events", "same")
    if ve == "same":
        return NoiseModel(V)
    if ve is None:
        return NoiseModel(V, V_events=None)
    if isinstance(ve, dict):
        if set(ve) != {"scale"}:
            raise ValidationError("noise.V_events object must be {'scale': s}")
        return NoiseModel(V, V_events=float(ve["scale"]) * V)
    if isinstance(ve, list) and ve and isinstance(ve[0], list) and np.asarray(ve[0]).ndim == 2:
        return NoiseModel(V, V_events=[_covariance(v, m, "noise.V_events[j]") for v in ve])
    return NoiseModel(V, V_events=_covariance(ve, m, "noise.V_events"))


def build_model(cfg: ExperimentConfig) -> Model:
    model = MODELS[cfg.model](dict(cfg.params))
    if cfg.outputs is not None:
        model.outputs = select_outputs(model.outputs, list(cfg.outputs))
    return model


# --------------------------------------------------------------------------- #
# formatting


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def _dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def arc_csv(arc: HybridArc, spec: HybridSystemSpec) -> str:
    rows = []
    for seg in arc.segments:
        for t, x in zip(seg.grid, seg.states):
            rows.append([float(t), seg.mode, *map(float, x)])
    return _csv(["t", "mode", *spec.state_names], rows)


def events_csv(arc: HybridArc, sens, report, spec: HybridSystemSpec) -> str:
    traces = {inc.index: inc.trace for inc in report.event_increments} if report is not None else {}
    rows = []
    for ev, jump in zip(arc.events, sens.jumps):
        tr = traces.get(ev.index, float("nan"))
        rows.append([ev.index, ev.time, ev.source, ev.target, tr, *map(float, jump.event_time_gradient)])
    header = ["j", "tau", "source", "target", "trace_delta_I"] + [f"dtau_d{n}" for n in spec.param_names]
    return _csv(header, rows)


# --------------------------------------------------------------------------- #
# pipelines


def _metrics_row(report) -> dict:
    return {"rank": report.rank, "lambda_min": report.lambda_min, "sigma": report.sigma,
            "logdet": report.logdet_regularized}


def _fig3_artifacts() -> tuple[str, dict]:
    case = fig3_case()
    Xi = case_saltation(case)
    disk, by_reset, by_salt = disk_images(case, Xi)
    rows = [[*d, *r, *s] for d, r, s in zip(disk, by_reset, by_salt)]
    text = _csv(["x1", "x2", "reset_x1", "reset_x2", "saltation_x1", "saltation_x2"], rows)
    info = {"saltation_matrix": Xi, "reset_jacobian": case.reset_jacobian, "radius": case.radius,
            "max_image_distance": float(np.max(np.linalg.norm(by_reset - by_salt, axis=1)))}
    return text, info


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path, seed: int | None = None,
                   modes: list[str] | None = None, compare_only: bool = False) -> dict:
    """Run the configured pipeline and write its artifacts; returns the report payload."""
    out_dir = Path(out_dir)
    model = build_model(cfg)
    spec, theta, out = model.spec, model.theta, model.outputs
    noise = build_noise(cfg.noise, out.n_outputs)
    icfg = cfg.integrator_config()
    modes = modes or cfg.propagation
    arc = simulate(spec, theta, T=float(cfg.T), config=icfg)

    files: dict[str, str] = {}
    reports, table = {}, {}
    sens_by_mode = {}
    for mode in modes:
        sens = propagate(arc, spec, theta, mode=mode, config=icfg)
        report, series = fisher_information(arc, sens, out, noise, spec, record_series=True)
        sens_by_mode[mode] = sens
        reports[mode] = report
        table[mode] = _metrics_row(report)
        if not compare_only:
            files[f"fim_timeseries_{mode}.csv"] = series.to_csv()

    payload = {
        "schema": SCHEMA_VERSION,
        "model": cfg.model,
        "param_names": list(spec.param_names),
        "theta": theta,
        "horizon": float(cfg.T),
        "n_events": len(arc.events),
        "mode_sequence": [str(q) for q in arc.mode_sequence],
        "metrics": table,
    }
    if not compare_only:
        salt = sens_by_mode.get("saltation") or propagate(arc, spec, theta, config=icfg)
        salt_report = reports.get("saltation")
        if salt_report is None:
            salt_report = fisher_information(arc, salt, out, noise, spec)
        files["arc.csv"] = arc_csv(arc, spec)
        files["events.csv"] = events_csv(arc, salt, salt_report, spec)
        payload["reports"] = {m: r.to_dict() for m, r in reports.items()}
        hpe = cfg.hpe or {}
        samples = sample_output_sensitivities(arc, salt, out, spec)
        windows = arc_hpe_windows(samples, noise, hpe.get("mu_t"), hpe.get("mu_j"))
        cert = hpe_certificate(windows, noise, len(arc.events))
        payload["hpe"] = {"certificate": cert.to_dict(), "windows": len(windows),
                          "mu_t": hpe.get("mu_t"), "mu_j": hpe.get("mu_j")}
        if cfg.model == "fig3":
            files["fig3_disks.csv"], payload["fig3"] = _fig3_artifacts()
        if cfg.montecarlo:
            mc = dict(cfg.montecarlo)
            runs = int(mc.get("runs", 50))
            mc_seed = int(seed if seed is not None else mc.get("seed", 0))
            times = np.linspace(0.0, float(cfg.T), int(mc.get("samples", 201)))
            summary = monte_carlo_crlb(spec, theta, out, noise, times, runs, mc_seed,
                                       sampling=mc.get("sampling", "density"),
                                       fit_config=FitConfig(integrator=icfg))
            payload["montecarlo"] = summary.to_dict()
    files["report.json"] = _dump_json(payload)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out_dir / name).write_text(text)
    return payload


# --------------------------------------------------------------------------- #
# entry point


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="saltfim", description="Hybrid sensitivity and Fisher information runs.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment config and write CSV/JSON artifacts")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (default: config 'emit' or ./out)")
    run.add_argument("--seed", type=int, help="Monte-Carlo seed override")
    cmp_ = sub.add_parser("compare", help="per-mode information metrics on one arc")
    cmp_.add_argument("config")
    cmp_.add_argument("--modes", default="saltation,reset_jacobian,smooth")
    cmp_.add_argument("--out", help="output directory (default: config 'emit' or ./out)")
    sub.add_parser("list-models", help="print the built-in model names")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list-models":
        for name in sorted(MODELS):
            print(name)
        return EXIT_OK
    try:
        cfg = load_config(args.config)
        out_dir = args.out or cfg.emit or "out"
        if args.command == "run":
            payload = run_experiment(cfg, out_dir, seed=args.seed)
        else:
            modes = [PropagationMode.parse(m.strip()).value for m in args.modes.split(",") if m.strip()]
            if not modes:
                raise ValidationError("--modes is empty")
            payload = run_experiment(cfg, out_dir, modes=modes, compare_only=True)
    except ValidationError as exc:
        print(f"saltfim: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"saltfim: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SaltfimError as exc:
        print(f"saltfim: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(_dump_json(payload["metrics"]), end="")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
