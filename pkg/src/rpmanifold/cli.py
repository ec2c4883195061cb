"""Command-line front end.

Subcommands read CSV paths and JSON descriptions, write traces and reports to
``--out`` and print a JSON report on stdout. Exit codes: 0 success, 1 a check
failed, 2 parse error, 3 validation failure, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .atlas import atlas_from_json_obj
from .calculus import ExprField
from .errors import NumericError, ParseError, RoughError, ValidationError
from .expr import names
from .integral import almost_increment, sew, sewing_band
from .lift import ControlEstimate, extend, format_float, load_path_csv, p_variation, signature
from .mpath import ManifoldRoughPath, from_curve
from .mrde import Connection, solve_manifold_rde, sphere_transport, verify_solution
from .rde import fixed_point_residual, solve_rde

EXIT_OK, EXIT_FAILED, EXIT_PARSE, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2, 3, 4
GAMMA0 = 3.0


# ----------------------------------------------------------------- JSON output

def _num(x) -> str:
    x = float(x)
    if not math.isfinite(x):
        return "null"
    return format_float(x)


def dumps(obj, indent: int = 2, _depth: int = 0) -> str:
    """Deterministic JSON: sorted keys, floats at 17 significant digits."""
    pad, inner = " " * (indent * _depth), " " * (indent * (_depth + 1))
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {dumps(obj[k], indent, _depth + 1)}"
                 for k in sorted(obj, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + dumps(v, indent, _depth + 1) for v in obj) + "\n" + pad + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


# ------------------------------------------------------------------ run config

@dataclass
class RunConfig:
    command: str
    inputs: dict = field(default_factory=dict)
    p: float = 2.5
    gamma: float = 3.0
    level: int | None = None
    tol: float | None = None
    out: str = "."
    seed: int = 0
    emit_gnuplot: bool = False
    options: dict = field(default_factory=dict)

    def validate(self, gamma0: float = GAMMA0) -> "RunConfig":
        if not self.p >= 1.0:
            raise ValidationError("p must be at least 1")
        if not self.p < self.gamma <= gamma0:
            raise ValidationError(f"need p < gamma <= {gamma0:g}, got p={self.p:g}, gamma={self.gamma:g}")
        if self.level is not None and self.level < math.floor(self.p):
            raise ValidationError("level below floor(p)")
        if self.tol is not None and not self.tol > 0:
            raise ValidationError("tolerance must be positive")
        return self

    @property
    def n(self) -> int:
        return math.floor(self.p)


# ------------------------------------------------------------------- inputs

def _read_text(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc


def _read_json(path: str):
    try:
        return json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from exc


def _matrix_arg(text: str, what: str):
    """Expression matrix given inline as JSON rows or as a file holding them."""
    if os.path.exists(text):
        obj = _read_json(text)
    else:
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{what}: not a file and not JSON rows ({exc.msg})") from exc
    if isinstance(obj, dict):
        obj = obj.get("rows", obj.get("form", obj.get("field")))
    if (not isinstance(obj, list) or not obj
            or not all(isinstance(r, list) and r for r in obj)):
        raise ParseError(f"{what}: expected a non-empty list of rows")
    return [[str(c) for c in row] for row in obj]


def _vector_arg(text: str, what: str) -> np.ndarray:
    try:
        v = np.array([float(c) for c in text.replace(" ", "").split(",") if c], dtype=float)
    except ValueError as exc:
        raise ParseError(f"{what}: {exc}") from exc
    if v.size == 0:
        raise ParseError(f"{what}: empty vector")
    return v


def _lift(cfg: RunConfig, path):
    """Lift at level floor(p); a higher ``--level`` goes through the extension map."""
    X = signature(path, max(cfg.n, 1), p=cfg.p)
    if cfg.level is not None and cfg.level > X.level:
        X = extend(X, cfg.level)
    return X


# ------------------------------------------------------------------- outputs

def _ensure_out(cfg: RunConfig) -> str:
    try:
        os.makedirs(cfg.out, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create output directory {cfg.out}: {exc}") from exc
    return cfg.out


def _write(cfg: RunConfig, name: str, text: str) -> str:
    path = os.path.join(_ensure_out(cfg), name)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


def _trace_csv(times, values, header) -> str:
    lines = [",".join(["t"] + list(header))]
    for t, row in zip(times, np.atleast_2d(values)):
        lines.append(",".join([format_float(t)] + [format_float(v) for v in row]))
    return "\n".join(lines) + "\n"


def _emit_trace(cfg: RunConfig, stem: str, times, values, header) -> dict:
    files = {"csv": _write(cfg, stem + ".csv", _trace_csv(times, values, header))}
    if cfg.emit_gnuplot:
        rows = [" ".join(format_float(v) for v in [t, *row])
                for t, row in zip(times, np.atleast_2d(values))]
        files["dat"] = _write(cfg, stem + ".dat", "# " + " ".join(["t", *header]) + "\n"
                              + "\n".join(rows) + "\n")
        plots = ", ".join(f"'{stem}.dat' using 1:{k + 2} with lines title '{h}'"
                          for k, h in enumerate(header))
        files["gp"] = _write(cfg, stem + ".gp", f"set xlabel 't'\nplot {plots}\npause -1\n")
    return files


def _finish(cfg: RunConfig, name: str, report: dict) -> dict:
    report["files"] = dict(report.get("files", {}), report=os.path.join(cfg.out, name))
    _write(cfg, name, dumps(report) + "\n")
    return report


# ------------------------------------------------------------------ commands

def cmd_sig(cfg: RunConfig) -> tuple[int, dict]:
    path = load_path_csv(cfg.inputs["path"])
    X = _lift(cfg, path)
    S = X.total()
    d = X.dim
    grades = [np.asarray(S.grade(g)).reshape((d,) * g).tolist() for g in range(X.level + 1)]
    report = {"command": "sig", "dim": d, "level": X.level, "p": cfg.p, "samples": int(path.times.size),
              "segments": X.m, "signature": grades,
              "p_variation": {"total": p_variation(X), "per_grade": p_variation(X, per_grade=True)},
              "control": ControlEstimate(X).total()}
    if cfg.options.get("emit_trace"):
        report["files"] = _emit_trace(cfg, "sig_trace", X.times, X.trace(), names("x", d))
    return EXIT_OK, _finish(cfg, "sig.json", report)


def cmd_integrate(cfg: RunConfig) -> tuple[int, dict]:
    path = load_path_csv(cfg.inputs["path"])
    X = _lift(cfg, path)
    alpha = ExprField.parse(_matrix_arg(cfg.inputs["form"], "form"), names("x", X.dim))
    if alpha.cols != X.dim:
        raise ValidationError(f"form has {alpha.cols} columns, path has dimension {X.dim}")
    almost = almost_increment(alpha, X, gamma=cfg.gamma)
    start = cfg.options.get("start")
    if start is not None and start.size != alpha.rows:
        raise ValidationError("start point does not match the form's output dimension")
    Z, info = sew(almost, cfg.tol or 1e-10, start=start)
    band = sewing_band(almost, Z)
    files = _emit_trace(cfg, "integral", Z.times, Z.trace(), names("z", alpha.rows))
    report = {"command": "integrate", "dim_in": X.dim, "dim_out": alpha.rows, "p": cfg.p,
              "gamma": cfg.gamma, "end": Z.end, "theta_predicted": almost.theta(),
              "sewing": {"residual": info.residual, "theta_estimate": info.theta_estimate,
                         "evaluations": info.evaluations},
              "band": band, "files": files}
    return EXIT_OK, _finish(cfg, "integrate.json", report)


def cmd_rde(cfg: RunConfig) -> tuple[int, dict]:
    path = load_path_csv(cfg.inputs["path"])
    X = _lift(cfg, path)
    y0 = _vector_arg(cfg.inputs["y0"], "y0")
    g = ExprField.parse(_matrix_arg(cfg.inputs["field"], "field"), names("y", y0.size))
    if g.rows != y0.size or g.cols != X.dim:
        raise ValidationError(f"field must be {y0.size}x{X.dim}, got {g.rows}x{g.cols}")
    sol = solve_rde(g, X, y0, tol=cfg.tol or 1e-9, existence_only=cfg.options.get("existence_only", False))
    residual = fixed_point_residual(g, sol)
    files = _emit_trace(cfg, "rde", sol.times, sol.trace(), names("y", y0.size))
    report = {"command": "rde", "dim_signal": X.dim, "dim_response": y0.size, "p": cfg.p,
              "end": sol.end, "unique": sol.unique, "fixed_point_residual": residual,
              "max_window_residual": sol.max_residual(), "windows": len(sol.windows), "files": files}
    return EXIT_OK, _finish(cfg, "rde.json", report)


def _load_signal(cfg: RunConfig, N):
    src = cfg.inputs["signal"]
    if src.lower().endswith(".csv"):
        path = load_path_csv(src)
        if path.dim != N.ambient:
            raise ValidationError(f"signal samples have dimension {path.dim}, atlas ambient is {N.ambient}")
        return from_curve(N, path.times, path.points)
    return ManifoldRoughPath.from_json_obj(_read_json(src), N)


def cmd_manifold_rde(cfg: RunConfig) -> tuple[int, dict]:
    N = atlas_from_json_obj(_read_json(cfg.inputs["atlas"]))
    M = atlas_from_json_obj(_read_json(cfg.inputs["response_atlas"])) if cfg.inputs.get("response_atlas") else N
    cfg.validate(min(N.gamma0, M.gamma0))
    X = _load_signal(cfg, N)
    y0 = _vector_arg(cfg.inputs["y0"], "y0")
    spec = cfg.inputs["connection"]
    if spec == "sphere-transport":
        conn = sphere_transport(N, M)
    else:
        conn = Connection.from_json_obj(_read_json(spec), N, M)
    sol = solve_manifold_rde(conn, X, y0, tol=cfg.tol or 1e-9)
    ver = verify_solution(sol, X, tol=cfg.options.get("verify_tol", 1e-6))
    _write(cfg, "manifold_rde_solution.json", dumps(sol.Z.to_json_obj()) + "\n")
    times, pts = [sol.Z.start_time], [sol.Z.x0]
    for seg in sol.Z.segments:
        times.extend(seg.Z.times[1:])
        pts.append(sol.Z.chart_of(seg).inv(seg.Z.trace()[1:]))
    files = _emit_trace(cfg, "manifold_rde_support", times, np.vstack([p.reshape(-1, sol.Z.atlas.ambient)
                                                                      for p in pts]),
                        names("x", N.ambient) + names("y", M.ambient))
    files["solution"] = os.path.join(cfg.out, "manifold_rde_solution.json")
    report = {"command": "manifold-rde", "segments": sol.Z.N, "end": sol.Z.end_point(),
              "response_end": sol.response_end(), "solver": sol.report, "verify": ver, "files": files}
    code = EXIT_OK if ver["ok"] else EXIT_FAILED
    return code, _finish(cfg, "manifold_rde.json", report)


def cmd_check(cfg: RunConfig) -> tuple[int, dict]:
    from . import suite
    numbers = cfg.options.get("only") or None
    results = suite.run(numbers, cfg.seed)
    verdict = {"command": "check", "seed": cfg.seed, "passed": all(r.passed for r in results),
               "criteria": [r.to_json_obj() for r in results]}
    for r in results:
        print(r.line(), file=sys.stderr)
    if cfg.options.get("write", True):
        _finish(cfg, "check.json", verdict)
    return (EXIT_OK if verdict["passed"] else EXIT_FAILED), verdict


COMMANDS = {"sig": cmd_sig, "integrate": cmd_integrate, "rde": cmd_rde,
            "manifold-rde": cmd_manifold_rde, "check": cmd_check}


def run(cfg: RunConfig) -> tuple[int, dict]:
    """Execute ``cfg``; library errors become exit codes with a structured message."""
    try:
        if cfg.command != "manifold-rde":
            cfg.validate()
        return COMMANDS[cfg.command](cfg)
    except ParseError as exc:
        return EXIT_PARSE, _error("parse", exc)
    except ValidationError as exc:
        return EXIT_VALIDATION, _error("validation", exc)
    except NumericError as exc:
        return EXIT_NUMERIC, _error("numeric", exc)
    except RoughError as exc:
        return EXIT_NUMERIC, _error("numeric", exc)


def _error(kind: str, exc: Exception) -> dict:
    return {"error": {"kind": kind, "type": type(exc).__name__, "message": str(exc)}}


# ---------------------------------------------------------------------- argv

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--p", type=float, default=2.5, help="variation exponent (default 2.5)")
    common.add_argument("--gamma", type=float, default=3.0, help="Lipschitz exponent (default 3)")
    common.add_argument("--level", type=int, default=None, help="truncation level (default floor(p))")
    common.add_argument("--tol", type=float, default=None, help="solver tolerance")
    common.add_argument("--out", default=".", help="output directory (default .)")
    common.add_argument("--seed", type=int, default=0, help="seed for randomised checks")
    common.add_argument("--emit-gnuplot", action="store_true", help="also write .dat data and a .gp script")

    ap = argparse.ArgumentParser(prog="rpmanifold", description="Rough paths on vector spaces and manifolds.")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sig", parents=[common], help="signature and p-variation of a CSV path")
    s.add_argument("path")
    s.add_argument("--emit-trace", action="store_true", help="write the level-one trace as CSV")

    s = sub.add_parser("integrate", parents=[common], help="rough integral of a one-form along a CSV path")
    s.add_argument("path")
    s.add_argument("form", help="JSON rows over x1..xd, or a file holding them")
    s.add_argument("--start", default=None, help="comma-separated start point of the integral")

    s = sub.add_parser("rde", parents=[common], help="solve dY = g(Y) dX along a CSV path")
    s.add_argument("path")
    s.add_argument("field", help="JSON rows over y1..ye, or a file holding them")
    s.add_argument("--y0", required=True, help="comma-separated initial value")
    s.add_argument("--existence-only", action="store_true", help="accept non-contracting windows")

    s = sub.add_parser("manifold-rde", parents=[common], help="solve a manifold RDE and verify it")
    s.add_argument("atlas", help="atlas JSON of the signal manifold")
    s.add_argument("signal", help="manifold rough path JSON, or CSV of ambient samples")
    s.add_argument("connection", help="connection JSON, or 'sphere-transport'")
    s.add_argument("--y0", required=True, help="comma-separated initial response (ambient)")
    s.add_argument("--response-atlas", default=None, help="atlas JSON of the response manifold")
    s.add_argument("--verify-tol", type=float, default=1e-6)

    s = sub.add_parser("check", parents=[common], help="run the invariant suite")
    s.add_argument("--only", type=int, nargs="*", default=None, help="criterion numbers to run")
    return ap


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    inputs, options = {}, {}
    for key in ("path", "form", "field", "atlas", "signal", "connection", "y0", "response_atlas"):
        if getattr(ns, key, None) is not None:
            inputs[key] = getattr(ns, key)
    if getattr(ns, "start", None) is not None:
        options["start"] = _vector_arg(ns.start, "start")
    for key in ("emit_trace", "existence_only", "verify_tol", "only"):
        if getattr(ns, key, None) is not None:
            options[key] = getattr(ns, key)
    return RunConfig(ns.command, inputs, ns.p, ns.gamma, ns.level, ns.tol, ns.out, ns.seed,
                     ns.emit_gnuplot, options)


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(ns)
    except ParseError as exc:
        code, report = EXIT_PARSE, _error("parse", exc)
    else:
        code, report = run(cfg)
    print(dumps(report))
    return code


if __name__ == "__main__":
    sys.exit(main())
