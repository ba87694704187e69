"""Batch front end: ``ringlab <command> [options]``.

Every run writes CSV datasets and a JSON manifest (parameter snapshot,
resolved configuration, invariant summary) into ``--out``. Files are written
to a temporary name and renamed into place.

Exit codes: 0 ok, 1 configuration error, 2 convergence failure,
3 singularity or other runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .numerics import (
    ConvergenceError,
    DomainError,
    IntegratorSpec,
    QuadratureSpec,
    SingularityError,
)
from .oscillation import OscillationSpec
from .ring_dynamics import ModelParams

SCHEMA_VERSION = "1"
COMMANDS = ("equilibria", "portrait", "rings", "stagnation", "melnikov", "poincare")
H_DRIFT_LIMIT = 1e-6
LEVEL_SPREAD_LIMIT = 1e-6
LONG_RUN = {"step": 1e-5, "iterations": 5000, "seeds": 30}


class ConfigError(DomainError):
    """Invalid command line or preset."""


@dataclass
class RunConfig:
    command: str
    model: ModelParams = field(default_factory=ModelParams)
    type_tag: str = "I"
    oscillation: OscillationSpec = field(default_factory=OscillationSpec)
    quad: QuadratureSpec = field(default_factory=QuadratureSpec)
    integrator: IntegratorSpec = field(default_factory=IntegratorSpec)
    output_dir: str = "ringlab-out"
    n_seeds: int | None = None
    iterations: int = 200
    n_tau: int = 32
    periods: float = 2.0
    name: str = ""

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.type_tag not in ("I", "II", "III", "IV"):
            raise ConfigError(f"unknown type {self.type_tag!r}")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.n_seeds is not None and self.n_seeds < 1:
            raise ConfigError("seeds must be >= 1")


# -- presets --------------------------------------------------------------

def preset_case(name: str) -> RunConfig:
    """Parameter sets of the numerical experiments and figures."""
    case1 = {"1a": 0.0, "1b": 0.001, "1c": 0.01}
    case2 = {"2a": 0.0, "2b": 4e-5, "2c": 4e-4}
    if name in case1:
        return RunConfig("poincare", ModelParams(alpha=5.0, kappa=1.5, chi=1000.0),
                         oscillation=OscillationSpec(case1[name]), integrator=IntegratorSpec(2.5e-5),
                         n_seeds=15, iterations=200, name=name)
    if name in case2:
        return RunConfig("poincare", ModelParams(alpha=20.0, kappa=1.5, chi=1000.0),
                         oscillation=OscillationSpec(case2[name]), integrator=IntegratorSpec(1e-6),
                         n_seeds=15, iterations=100, name=name)
    figs = {
        "fig1": ("portrait", 5.0, "I", 0.0),
        "fig2": ("portrait", 5.0, "II", 0.0),
        "fig3": ("portrait", 5.0, "III", 0.0),
        "fig4": ("portrait", 5.0, "IV", 0.0),
        "fig5": ("portrait", 0.1, "I", 0.0),
        "fig6": ("rings", 5.0, "I", 0.01),
        "fig6-right": ("rings", 20.0, "I", 4e-3),
        "fig7": ("stagnation", 5.0, "I", 0.01),
        "fig7-right": ("stagnation", 20.0, "I", 4e-3),
    }
    if name not in figs:
        raise ConfigError(f"unknown preset {name!r}")
    cmd, alpha, tag, mu = figs[name]
    return RunConfig(cmd, ModelParams(alpha=alpha, kappa=1.5, chi=1000.0), type_tag=tag,
                     oscillation=OscillationSpec(mu), name=name)


# -- output helpers -------------------------------------------------------

def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: Path, header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    _atomic_write(path, buf.getvalue())
    return path.name


def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {k: _jsonable(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_json(path: Path, payload: dict) -> str:
    _atomic_write(path, json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return path.name


def _snapshot(cfg: RunConfig) -> dict:
    return {"command": cfg.command, "preset": cfg.name, "model": cfg.model, "type": cfg.type_tag,
            "oscillation": cfg.oscillation, "quadrature": cfg.quad, "integrator": cfg.integrator,
            "seeds": cfg.n_seeds, "iterations": cfg.iterations}


# -- commands -------------------------------------------------------------

def _config(cfg: RunConfig):
    from .equilibria import solve_equilibrium

    return solve_equilibrium(cfg.model, cfg.type_tag)


def _cmd_equilibria(cfg, out):
    from .equilibria import classify_fixed_points, ring_jacobian

    conf = _config(cfg)
    fps = classify_fixed_points(conf, cfg.model)
    rows = [(k, v) for k, v in conf.to_dict().items() if k != "type_tag"]
    files = [write_csv(out / "equilibrium.csv", ["quantity", "value"], rows)]
    fp_rows = [(f.name, f.s, f.x, f.kind, f.rate) for f in fps.values()]
    files.append(write_csv(out / "fixed_points.csv", ["name", "s", "x", "kind", "rate"], fp_rows))
    ev = ring_jacobian(conf, cfg.model).eigenvalues
    inv = {"radii_residual": conf.residual, "ring_eigenvalues": [complex(e) for e in ev]}
    return conf, files, inv, False


def _cmd_portrait(cfg, out):
    from .kinematics import streamline_portrait

    conf = _config(cfg)
    n = cfg.n_seeds or 20
    bundle = streamline_portrait(conf, cfg.model, n_grid=n)
    rows = []
    for c in bundle.curves:
        rows.extend((c["seed_id"], t, s, x) for t, s, x in zip(c["t"], c["s"], c["x"]))
    files = [write_csv(out / "streamlines.csv", ["curve_id", "t", "s", "x"], rows)]
    srows = []
    for name, tr in bundle.separatrices.items():
        srows.extend((name, t, s, x) for t, s, x in zip(tr.t, tr.s, tr.x))
    files.append(write_csv(out / "separatrices.csv", ["branch", "t", "s", "x"], srows))
    files.append(write_csv(out / "fixed_points.csv", ["name", "s", "x", "kind"],
                           [(f.name, f.s, f.x, f.kind) for f in bundle.fixed_points]))
    spreads = {k: v.level_spread for k, v in bundle.separatrices.items()}
    degraded = any(np.isfinite(v) and v > LEVEL_SPREAD_LIMIT for v in spreads.values()) or bool(bundle.failures)
    inv = {"separatrix_level_spread": spreads, "failures": bundle.failures}
    return conf, files, inv, degraded


def _cmd_rings(cfg, out):
    from .oscillation import center_manifold_seed, ring_motion
    from .ring_dynamics import integrate_rings

    conf = _config(cfg)
    mu = cfg.oscillation.mu
    T = 2 * np.pi / conf.nu
    t_end = cfg.periods * T
    if mu == 0:
        seed = np.array([conf.s1_hat, conf.s2_hat, conf.xi_hat, conf.xi_hat])
        orbit_info = {}
    else:
        orbit = center_manifold_seed(conf, cfg.model, mu, step=cfg.integrator.step)
        seed = orbit.seed.as_array()
        orbit_info = {"period": orbit.period, "psi_ratio": orbit.psi_ratio, "closure": orbit.closure,
                      "axial_drift_per_period": orbit.drift}
    every = max(1, int(round(T / 200 / cfg.integrator.step)))
    tr = integrate_rings(seed, cfg.model, (0.0, t_end), cfg.integrator, sample_every=every)
    files = [write_csv(out / "rings_integrated.csv", ["t", "s1", "s2", "x1", "x2"],
                       [(t, *y) for t, y in zip(tr.t, tr.states)])]
    ana = ring_motion(tr.t, conf, cfg.model, replace(cfg.oscillation, mode="analytic"))
    files.append(write_csv(out / "rings_analytic.csv", ["t", "s1", "s2", "x1", "x2"],
                           [(t, *y) for t, y in zip(tr.t, ana)]))
    h_inv = cfg.model.mutual_sign == 1
    inv = {"H_drift": tr.H_drift, "G_drift": tr.G_drift, "H_is_invariant": h_inv, **orbit_info}
    degraded = tr.G_drift > 1e-12 or (h_inv and tr.H_drift > H_DRIFT_LIMIT) or tr.aborted
    return conf, files, inv, degraded


def _cmd_stagnation(cfg, out):
    from .oscillation import stagnation_trace

    conf = _config(cfg)
    T = 2 * np.pi / conf.nu
    t = np.linspace(0.0, cfg.periods * T, 401)
    st = stagnation_trace(conf, cfg.model, cfg.oscillation, t)
    files = [write_csv(out / "stagnation.csv", ["t", "x_minus", "x_plus"], zip(st.t, st.x_minus, st.x_plus))]
    inv = {"max_asymmetry": float(st.asymmetry.max())}
    return conf, files, inv, False


def _cmd_melnikov(cfg, out):
    from .melnikov import melnikov_sweep

    conf = _config(cfg)
    res = melnikov_sweep(conf, cfg.model, n_tau=cfg.n_tau)
    files = [write_csv(out / "melnikov.csv", ["tau", "M"], zip(res.tau_grid, res.values))]
    summary = {"C": res.C, "phase": res.phase, "residual": res.rms_residual,
               "relative_residual": res.rms_residual / abs(res.C), "zeros": res.zeros,
               "truncation_T": res.truncation_T, "tail_estimate": res.tail_estimate,
               "half_line_C": res.half_line_C, "form_gap": res.form_gap, "decay_rate": res.decay_rate}
    files.append(write_json(out / "melnikov_summary.json", summary))
    degraded = res.rms_residual > 0.05 * abs(res.C) or res.C <= 0
    return conf, files, summary, degraded


def _cmd_poincare(cfg, out):
    from .poincare import default_seeds, section

    conf = _config(cfg)
    seeds = default_seeds(conf, cfg.model, cfg.n_seeds or 30)
    cloud = section(seeds, cfg.iterations, conf, cfg.model, cfg.oscillation, cfg.integrator)
    files = [write_csv(out / "section.csv", ["seed_id", "iterate_index", "s", "x", "escaped"],
                       ((i, k, s, x, int(e)) for i, k, s, x, e in cloud.rows()))]
    spread = cloud.level_spread(conf, cfg.model)
    inv = {"level_spread": spread, "escaped": cloud.escaped, "escape_index": cloud.escape_index,
           "omega": cloud.params_snapshot["omega"]}
    degraded = cfg.oscillation.mu == 0 and bool(np.nanmax(spread) > LEVEL_SPREAD_LIMIT)
    return conf, files, inv, degraded


_DISPATCH = {"equilibria": _cmd_equilibria, "portrait": _cmd_portrait, "rings": _cmd_rings,
             "stagnation": _cmd_stagnation, "melnikov": _cmd_melnikov, "poincare": _cmd_poincare}


def run(cfg: RunConfig) -> int:
    """Execute one command; returns the exit status and writes outputs."""
    out = Path(cfg.output_dir)
    t0 = time.perf_counter()
    try:
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise ConfigError(f"output directory {out} is not writable")
        conf, files, inv, degraded = _DISPATCH[cfg.command](cfg, out)
    except (ConfigError, DomainError) as exc:
        return _fail(out, cfg, 1, exc)
    except ConvergenceError as exc:
        return _fail(out, cfg, 2, exc)
    except (SingularityError, ArithmeticError, RuntimeError, ValueError) as exc:
        return _fail(out, cfg, 3, exc)
    manifest = {"schema_version": SCHEMA_VERSION, "status": "ok", "parameters": _snapshot(cfg),
                "equilibrium": conf, "invariants": inv, "degraded": bool(degraded),
                "outputs": files, "runtime_seconds": time.perf_counter() - t0}
    write_json(out / "manifest.json", manifest)
    print(json.dumps({"status": "ok", "degraded": bool(degraded), "out": str(out)}))
    return 0


def _fail(out: Path, cfg: RunConfig, code: int, exc: Exception) -> int:
    record = {"schema_version": SCHEMA_VERSION, "status": "error", "exit_code": code,
              "error_type": type(exc).__name__, "message": str(exc), "parameters": _snapshot(cfg)}
    try:
        write_json(out / "error.json", record)
    except OSError:
        pass
    print(json.dumps(_jsonable({k: record[k] for k in ("status", "exit_code", "error_type", "message")})),
          file=sys.stderr)
    return code


# -- argument parsing -----------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(json.dumps({"status": "error", "exit_code": 1, "error_type": "ConfigError",
                          "message": message}), file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ringlab", description="Coaxial vortex rings in swirl: equilibria, "
                "streamlines, ring oscillations, Melnikov function and Poincare sections.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--case", help="preset: 1a,1b,1c,2a,2b,2c,fig1..fig7 (fig6-right, fig7-right)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--kappa", type=float)
    p.add_argument("--chi", type=float)
    p.add_argument("--type", dest="type_tag", choices=("I", "II", "III", "IV"))
    p.add_argument("--mu", type=float)
    p.add_argument("--omega", type=float, help="swirl rate Omega (default: nu of the configuration)")
    p.add_argument("--step", type=float)
    p.add_argument("--quad-order", type=int)
    p.add_argument("--seeds", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--n-tau", type=int)
    p.add_argument("--periods", type=float)
    p.add_argument("--mutual-sign", type=int, choices=(-1, 1))
    p.add_argument("--s-scale", choices=("unit", "linear"))
    p.add_argument("--long-run", action="store_true",
                   help="full-length section settings: step 1e-5, 5000 iterations, 30 seeds")
    p.add_argument("--out", default="ringlab-out")
    return p


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    if ns.case:
        cfg = preset_case(ns.case)
        if cfg.command != ns.command:
            raise ConfigError(f"preset {ns.case} belongs to command {cfg.command!r}")
    else:
        cfg = RunConfig(ns.command)
    model_kw = {k: getattr(ns, k) for k in ("alpha", "kappa", "chi") if getattr(ns, k) is not None}
    if ns.omega is not None:
        model_kw["Omega"] = ns.omega
    if ns.mutual_sign is not None:
        model_kw["mutual_sign"] = ns.mutual_sign
    quad = cfg.quad if ns.quad_order is None else replace(cfg.quad, order=ns.quad_order)
    model = replace(cfg.model, quad=quad, **model_kw)
    osc = cfg.oscillation
    if ns.mu is not None:
        osc = replace(osc, mu=ns.mu)
    if ns.s_scale is not None:
        osc = replace(osc, s_scale=ns.s_scale)
    integ = cfg.integrator
    iterations, seeds = cfg.iterations, cfg.n_seeds
    if ns.long_run:
        integ = IntegratorSpec(LONG_RUN["step"], integ.max_time)
        iterations, seeds = LONG_RUN["iterations"], LONG_RUN["seeds"]
    if ns.step is not None:
        integ = IntegratorSpec(ns.step, integ.max_time)
    return replace(cfg, model=model, quad=quad, oscillation=osc, integrator=integ,
                   type_tag=ns.type_tag or cfg.type_tag, output_dir=ns.out,
                   iterations=ns.iterations or iterations, n_seeds=ns.seeds or seeds,
                   n_tau=ns.n_tau or cfg.n_tau, periods=ns.periods or cfg.periods)


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(ns)
    except (DomainError, ValueError, TypeError) as exc:
        out = Path(ns.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError:
            pass
        return _fail(out, RunConfig(ns.command, output_dir=ns.out), 1, exc)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
