"""Scenario-driven command line front end (``ensctl``).

Each subcommand loads a JSON scenario config, dispatches to the owning
module, and writes its artifacts (JSON reports, CSV tables) plus a run
manifest with the echoed config, the effective seed, and sha256 digests of
every output file.  Identical config and seed produce byte-identical
outputs; only the manifest's wall_time_s field varies between runs.

Exit codes: 0 success, 2 scientific failure (an asserted verdict or bound
did not hold; the report names the failing stage), 1 operational error
(bad config, unreadable file, divergent integration).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__, lieext, moments, odesim, rigidbody
from .exprdsl import parse as parse_expr
from .exprdsl import taylor_coeffs
from .polyfield import Poly, PolyField
from .signals import Polynomial, Sampled, Sinusoid, Sum

KINDS = (
    "rigid-check",
    "rigid-generic",
    "model-synthesize",
    "lieext-reduce",
    "lieext-converge",
    "flow-verify",
    "rank-check",
)


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class ScientificFailure(RuntimeError):
    pass


# -- config loading ----------------------------------------------------------------


def _require(cfg: dict, path: str, key: str, types, default=None, required=True):
    if key not in cfg:
        if required and default is None:
            raise ConfigError(f"{path}.{key}", "missing required key")
        return default
    val = cfg[key]
    if types is not None and not isinstance(val, types):
        raise ConfigError(
            f"{path}.{key}", f"expected {types}, got {type(val).__name__}"
        )
    return val


def _reject_unknown(cfg: dict, path: str, allowed: set):
    for key in cfg:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}", "unknown key")


def _positive(val, path):
    if not isinstance(val, (int, float)) or val <= 0:
        raise ConfigError(path, f"must be a positive number, got {val!r}")
    return float(val)


_SCHEMAS = {
    "rigid-check": {
        "inertia", "torque_axis", "tau", "tau0", "expect_verdict", "outputs",
    },
    "rigid-generic": {
        "N", "samples", "seed", "box", "tau", "tau0",
        "fixed_torque_axis", "fixed_inertia", "min_fraction", "outputs",
    },
    "model-synthesize": {
        "f_theta", "target", "grid", "eps1", "rho", "mu_f", "R", "taylor_order",
        "T", "control_sample_rate", "outputs",
    },
    "lieext-reduce": {
        "T", "n", "u_e", "v_e", "w_e", "sample_rate", "outputs",
    },
    "lieext-converge": {
        "ensemble", "grid", "u_e", "v_e", "w_e", "x0", "T", "n_list",
        "h_ref", "osc_divisor", "slope_range", "outputs",
    },
    "flow-verify": {
        "f", "g", "u", "x0", "T", "h", "max_gap", "outputs",
    },
    "rank-check": {
        "systems", "ensemble", "grid", "points", "depth", "rank_tol",
        "expect_full", "outputs",
    },
}


def load_config(path: str | Path, kind: str) -> dict:
    """Parse and validate a scenario config; defaults are filled in place."""
    if kind not in KINDS:
        raise ConfigError("kind", f"unknown scenario kind {kind!r}")
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(str(path), f"cannot read config: {err}")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(
            str(path), f"JSON parse error at line {err.lineno}, column {err.colno}: {err.msg}"
        )
    if not isinstance(cfg, dict):
        raise ConfigError(str(path), "top-level config must be an object")
    _reject_unknown(cfg, kind, _SCHEMAS[kind])
    validator = globals()[f"_validate_{kind.replace('-', '_')}"]
    return validator(cfg)


def _validate_grid(cfg, path) -> dict:
    allowed = {"kind", "interval", "n"}
    _reject_unknown(cfg, path, allowed)
    kind = _require(cfg, path, "kind", str, default="gauss", required=False)
    if kind not in ("gauss", "uniform"):
        raise ConfigError(f"{path}.kind", f"expected 'gauss' or 'uniform', got {kind!r}")
    interval = _require(cfg, path, "interval", list, default=[0.0, 1.0], required=False)
    if len(interval) != 2 or interval[1] <= interval[0]:
        raise ConfigError(f"{path}.interval", f"need [a, b] with a < b, got {interval}")
    n = _require(cfg, path, "n", int)
    if n < 1:
        raise ConfigError(f"{path}.n", f"need n >= 1, got {n}")
    return {"kind": kind, "interval": [float(interval[0]), float(interval[1])], "n": n}


def _build_grid(spec: dict) -> odesim.ThetaGrid:
    return odesim.make_grid(spec["kind"], tuple(spec["interval"]), spec["n"])


def _validate_inertia_triple(val, path) -> list:
    if not isinstance(val, list) or len(val) != 3:
        raise ConfigError(path, f"expected [J1, J2, J3], got {val!r}")
    try:
        rigidbody.InertiaSpec(*[float(v) for v in val])
    except rigidbody.ValidationError as err:
        raise ConfigError(path, str(err))
    return [float(v) for v in val]


def _validate_rigid_check(cfg) -> dict:
    path = "rigid-check"
    inertia = _require(cfg, path, "inertia", list)
    if not inertia:
        raise ConfigError(f"{path}.inertia", "need at least one body")
    inertia = [
        _validate_inertia_triple(j, f"{path}.inertia[{i}]") for i, j in enumerate(inertia)
    ]
    axis = _require(cfg, path, "torque_axis", list)
    if len(axis) != 3 or all(v == 0 for v in axis):
        raise ConfigError(f"{path}.torque_axis", f"need a nonzero 3-vector, got {axis}")
    out = {
        "inertia": inertia,
        "torque_axis": [float(v) for v in axis],
        "tau": _require(cfg, path, "tau", (int, float), default=rigidbody.DEFAULT_TAU, required=False),
        "tau0": _require(cfg, path, "tau0", (int, float), default=rigidbody.DEFAULT_TAU_0, required=False),
        "expect_verdict": _require(cfg, path, "expect_verdict", str, default="", required=False),
        "outputs": _require(cfg, path, "outputs", dict, default={"report": "rigid_check.json"}, required=False),
    }
    if out["expect_verdict"] not in ("", "generating", "singular", "borderline"):
        raise ConfigError(f"{path}.expect_verdict", f"unknown verdict {out['expect_verdict']!r}")
    return out


def _validate_rigid_generic(cfg) -> dict:
    path = "rigid-generic"
    N = _require(cfg, path, "N", int)
    if N < 1:
        raise ConfigError(f"{path}.N", f"need N >= 1, got {N}")
    samples = _require(cfg, path, "samples", int)
    if samples < 1:
        raise ConfigError(f"{path}.samples", f"need samples >= 1, got {samples}")
    box = _require(cfg, path, "box", list, default=[0.5, 3.0], required=False)
    if len(box) != 2 or not 0 < box[0] < box[1]:
        raise ConfigError(f"{path}.box", f"need [lo, hi] with 0 < lo < hi, got {box}")
    out = {
        "N": N,
        "samples": samples,
        "seed": _require(cfg, path, "seed", int, default=0, required=False),
        "box": [float(box[0]), float(box[1])],
        "tau": _require(cfg, path, "tau", (int, float), default=rigidbody.DEFAULT_TAU, required=False),
        "tau0": _require(cfg, path, "tau0", (int, float), default=rigidbody.DEFAULT_TAU_0, required=False),
        "min_fraction": _require(cfg, path, "min_fraction", (int, float), default=0.0, required=False),
        "outputs": _require(
            cfg, path, "outputs", dict,
            default={"report": "rigid_generic.json", "samples_csv": "rigid_generic_samples.csv"},
            required=False,
        ),
    }
    fixed_axis = cfg.get("fixed_torque_axis")
    if fixed_axis is not None:
        if not isinstance(fixed_axis, list) or len(fixed_axis) != 3:
            raise ConfigError(f"{path}.fixed_torque_axis", "need a 3-vector")
        out["fixed_torque_axis"] = [float(v) for v in fixed_axis]
    fixed_inertia = cfg.get("fixed_inertia")
    if fixed_inertia is not None:
        out["fixed_inertia"] = [
            _validate_inertia_triple(j, f"{path}.fixed_inertia[{i}]")
            for i, j in enumerate(fixed_inertia)
        ]
        if len(out["fixed_inertia"]) != N:
            raise ConfigError(f"{path}.fixed_inertia", f"need exactly N={N} triples")
    return out


def _validate_model_synthesize(cfg) -> dict:
    path = "model-synthesize"
    out = {
        "f_theta": _require(cfg, path, "f_theta", str),
        "target": _require(cfg, path, "target", str),
        "grid": _validate_grid(_require(cfg, path, "grid", dict), f"{path}.grid"),
        "eps1": _positive(_require(cfg, path, "eps1", (int, float)), f"{path}.eps1"),
        "rho": _positive(_require(cfg, path, "rho", (int, float)), f"{path}.rho"),
        "mu_f": _positive(_require(cfg, path, "mu_f", (int, float)), f"{path}.mu_f"),
        "R": _require(cfg, path, "R", int, default=0, required=False),
        "taylor_order": _require(cfg, path, "taylor_order", int, default=36, required=False),
        "T": _positive(
            _require(cfg, path, "T", (int, float), default=1.0, required=False), f"{path}.T"
        ),
        "control_sample_rate": _require(
            cfg, path, "control_sample_rate", int, default=201, required=False
        ),
        "outputs": _require(
            cfg, path, "outputs", dict,
            default={
                "report": "synthesis.json",
                "terminal_csv": "synthesis_terminal.csv",
                "controls_csv": "synthesis_controls.csv",
            },
            required=False,
        ),
    }
    for key in ("f_theta", "target"):
        try:
            parse_expr(out[key])
        except ValueError as err:
            raise ConfigError(f"{path}.{key}", str(err))
    return out


def _validate_signal(spec, path):
    if isinstance(spec, (int, float)):
        return {"poly": [float(spec)]}
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigError(path, "signal must be a number or a one-key object")
    key = next(iter(spec))
    val = spec[key]
    if key == "poly":
        if not isinstance(val, list) or not val:
            raise ConfigError(f"{path}.poly", "need a nonempty coefficient list")
        return {"poly": [float(c) for c in val]}
    if key == "sinusoid":
        allowed = {"gain", "inv_freq_sq", "phase", "envelope"}
        _reject_unknown(val, f"{path}.sinusoid", allowed)
        env = val.get("envelope", 1.0)
        return {
            "sinusoid": {
                "gain": float(_require(val, f"{path}.sinusoid", "gain", (int, float))),
                "inv_freq_sq": _positive(
                    _require(val, f"{path}.sinusoid", "inv_freq_sq", (int, float)),
                    f"{path}.sinusoid.inv_freq_sq",
                ),
                "phase": float(val.get("phase", 0.0)),
                "envelope": _validate_signal(env, f"{path}.sinusoid.envelope"),
            }
        }
    if key == "sum":
        if not isinstance(val, list) or not val:
            raise ConfigError(f"{path}.sum", "need a nonempty list of signals")
        return {"sum": [_validate_signal(s, f"{path}.sum[{i}]") for i, s in enumerate(val)]}
    if key == "sampled":
        allowed = {"times", "values"}
        _reject_unknown(val, f"{path}.sampled", allowed)
        times = _require(val, f"{path}.sampled", "times", list)
        values = _require(val, f"{path}.sampled", "values", list)
        try:
            Sampled(times, values)
        except ValueError as err:
            raise ConfigError(f"{path}.sampled", str(err))
        return {"sampled": {"times": [float(t) for t in times], "values": [float(v) for v in values]}}
    raise ConfigError(path, f"unknown signal kind {key!r}")


def _build_signal(spec: dict):
    key = next(iter(spec))
    val = spec[key]
    if key == "poly":
        return Polynomial(val)
    if key == "sinusoid":
        return Sinusoid(
            val["gain"], val["inv_freq_sq"], _build_signal(val["envelope"]), val["phase"]
        )
    if key == "sum":
        return Sum([_build_signal(s) for s in val])
    return Sampled(val["times"], val["values"])


def _validate_lieext_reduce(cfg) -> dict:
    path = "lieext-reduce"
    n = _require(cfg, path, "n", int)
    if n < 1:
        raise ConfigError(f"{path}.n", f"need n >= 1, got {n}")
    return {
        "T": _positive(_require(cfg, path, "T", (int, float), default=1.0, required=False), f"{path}.T"),
        "n": n,
        "u_e": _validate_signal(cfg.get("u_e", 0.0), f"{path}.u_e"),
        "v_e": _validate_signal(cfg.get("v_e", 0.0), f"{path}.v_e"),
        "w_e": _validate_signal(cfg.get("w_e", 1.0), f"{path}.w_e"),
        "sample_rate": _require(cfg, path, "sample_rate", int, default=2001, required=False),
        "outputs": _require(
            cfg, path, "outputs", dict,
            default={"controls_csv": "reduced_controls.csv", "report": "reduction.json"},
            required=False,
        ),
    }


def _validate_ensemble(cfg, path) -> dict:
    """Triangular family built from a Taylor truncation of f_theta."""
    allowed = {"f_theta", "truncation"}
    _reject_unknown(cfg, path, allowed)
    src = _require(cfg, path, "f_theta", str)
    try:
        parse_expr(src)
    except ValueError as err:
        raise ConfigError(f"{path}.f_theta", str(err))
    trunc = _require(cfg, path, "truncation", int, default=1, required=False)
    if trunc < 1:
        raise ConfigError(f"{path}.truncation", f"need truncation >= 1, got {trunc}")
    return {"f_theta": src, "truncation": trunc}


def _build_ensemble_pairs(spec: dict, grid: odesim.ThetaGrid):
    """(X, Y^theta) per node: X = d/dx, Y = d/dy + (truncated f)(x, theta) d/dz."""
    expr = parse_expr(spec["f_theta"])
    M = spec["truncation"]
    pairs = []
    X = PolyField.coordinate(3, 0)
    for theta in grid.nodes:
        jet = taylor_coeffs(expr, float(theta), M).coeffs
        terms = {}
        for m, c in enumerate(jet):
            if m >= 1 and c != 0:
                terms[(m, 0, 0)] = Fraction(c)
        Y = PolyField([Poly.zero(3), Poly.constant(3, 1), Poly(3, terms)])
        pairs.append((X, Y))
    return pairs


def _validate_lieext_converge(cfg) -> dict:
    path = "lieext-converge"
    n_list = _require(cfg, path, "n_list", list)
    if not n_list or any(not isinstance(n, int) or n < 1 for n in n_list):
        raise ConfigError(f"{path}.n_list", f"need positive integers, got {n_list}")
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ConfigError(f"{path}.n_list", "must be strictly increasing")
    x0 = _require(cfg, path, "x0", list, default=[0.0, 0.0, 0.0], required=False)
    slope_range = _require(cfg, path, "slope_range", list, default=[], required=False)
    if slope_range and len(slope_range) != 2:
        raise ConfigError(f"{path}.slope_range", "need [lo, hi]")
    return {
        "ensemble": _validate_ensemble(_require(cfg, path, "ensemble", dict), f"{path}.ensemble"),
        "grid": _validate_grid(_require(cfg, path, "grid", dict), f"{path}.grid"),
        "u_e": _validate_signal(cfg.get("u_e", 0.0), f"{path}.u_e"),
        "v_e": _validate_signal(cfg.get("v_e", 0.0), f"{path}.v_e"),
        "w_e": _validate_signal(cfg.get("w_e", 1.0), f"{path}.w_e"),
        "x0": [float(v) for v in x0],
        "T": _positive(_require(cfg, path, "T", (int, float), default=1.0, required=False), f"{path}.T"),
        "n_list": n_list,
        "h_ref": _positive(_require(cfg, path, "h_ref", (int, float), default=1e-3, required=False), f"{path}.h_ref"),
        "osc_divisor": _positive(_require(cfg, path, "osc_divisor", (int, float), default=40.0, required=False), f"{path}.osc_divisor"),
        "slope_range": [float(v) for v in slope_range],
        "outputs": _require(
            cfg, path, "outputs", dict,
            default={"report": "convergence.json", "errors_csv": "convergence_errors.csv"},
            required=False,
        ),
    }


def _validate_polyfield(spec, path) -> dict:
    allowed = {"dim", "components"}
    if not isinstance(spec, dict):
        raise ConfigError(path, "expected an object with dim and components")
    _reject_unknown(spec, path, allowed)
    dim = _require(spec, path, "dim", int)
    comps = _require(spec, path, "components", list)
    if len(comps) != dim:
        raise ConfigError(f"{path}.components", f"need {dim} components, got {len(comps)}")
    norm = []
    for i, comp in enumerate(comps):
        if not isinstance(comp, list):
            raise ConfigError(f"{path}.components[{i}]", "expected a list of [exponents, coeff] terms")
        terms = []
        for j, term in enumerate(comp):
            tpath = f"{path}.components[{i}][{j}]"
            if not isinstance(term, list) or len(term) != 2:
                raise ConfigError(tpath, "expected [exponents, coeff]")
            exps, coeff = term
            if not isinstance(exps, list) or len(exps) != dim or any(
                not isinstance(e, int) or e < 0 for e in exps
            ):
                raise ConfigError(tpath, f"bad exponent vector {exps!r} for dim {dim}")
            if isinstance(coeff, str):
                try:
                    Fraction(coeff)
                except ValueError:
                    raise ConfigError(tpath, f"bad rational coefficient {coeff!r}")
            elif not isinstance(coeff, (int, float)):
                raise ConfigError(tpath, f"bad coefficient {coeff!r}")
            terms.append([list(exps), coeff])
        norm.append(terms)
    return {"dim": dim, "components": norm}


def _build_polyfield(spec: dict) -> PolyField:
    dim = spec["dim"]
    comps = []
    for terms in spec["components"]:
        d = {}
        for exps, coeff in terms:
            c = Fraction(coeff) if isinstance(coeff, str) else Fraction(coeff)
            d[tuple(exps)] = d.get(tuple(exps), Fraction(0)) + c
        comps.append(Poly(dim, d))
    return PolyField(comps)


def _validate_flow_verify(cfg) -> dict:
    path = "flow-verify"
    f = _validate_polyfield(_require(cfg, path, "f", dict), f"{path}.f")
    g = _validate_polyfield(_require(cfg, path, "g", dict), f"{path}.g")
    x0 = _require(cfg, path, "x0", list)
    if len(x0) != f["dim"]:
        raise ConfigError(f"{path}.x0", f"need dim {f['dim']} start point")
    return {
        "f": f,
        "g": g,
        "u": _validate_signal(cfg.get("u", 0.0), f"{path}.u"),
        "x0": [float(v) for v in x0],
        "T": _positive(_require(cfg, path, "T", (int, float), default=1.0, required=False), f"{path}.T"),
        "h": _positive(_require(cfg, path, "h", (int, float), default=1e-3, required=False), f"{path}.h"),
        "max_gap": _require(cfg, path, "max_gap", (int, float), default=0.0, required=False),
        "outputs": _require(cfg, path, "outputs", dict, default={"report": "flow_verify.json"}, required=False),
    }


def _validate_rank_check(cfg) -> dict:
    path = "rank-check"
    out = {
        "depth": _require(cfg, path, "depth", int),
        "rank_tol": _require(cfg, path, "rank_tol", (int, float), default=1e-10, required=False),
        "expect_full": bool(cfg.get("expect_full", False)),
        "outputs": _require(cfg, path, "outputs", dict, default={"report": "rank_check.json"}, required=False),
    }
    if out["depth"] < 1:
        raise ConfigError(f"{path}.depth", f"need depth >= 1, got {out['depth']}")
    if "systems" in cfg:
        systems = cfg["systems"]
        if not isinstance(systems, list) or not systems:
            raise ConfigError(f"{path}.systems", "need a nonempty list")
        out["systems"] = [
            {
                "fields": [
                    _validate_polyfield(fs, f"{path}.systems[{i}].fields[{j}]")
                    for j, fs in enumerate(_require(s, f"{path}.systems[{i}]", "fields", list))
                ]
            }
            for i, s in enumerate(systems)
        ]
        points = _require(cfg, path, "points", list)
        if len(points) != len(systems):
            raise ConfigError(f"{path}.points", "need one base point per system")
        out["points"] = [[float(v) for v in p] for p in points]
    elif "ensemble" in cfg:
        out["ensemble"] = _validate_ensemble(cfg["ensemble"], f"{path}.ensemble")
        out["grid"] = _validate_grid(_require(cfg, path, "grid", dict), f"{path}.grid")
        points = cfg.get("points")
        out["points"] = [[float(v) for v in p] for p in points] if points else None
    else:
        raise ConfigError(path, "need either 'systems' or 'ensemble'")
    return out


# -- output helpers -----------------------------------------------------------------


def _fmt(val) -> str:
    if isinstance(val, float):
        return repr(val)
    return str(val)


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_json_safe(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        obj = obj.item()
    if isinstance(obj, float):
        if obj != obj:
            return "nan"
        if obj in (float("inf"), float("-inf")):
            return "inf" if obj > 0 else "-inf"
    if isinstance(obj, Fraction):
        return str(obj)
    return obj


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(_json_safe(obj), indent=2) + "\n")


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# -- subcommand runners ---------------------------------------------------------------


def _run_rigid_check(cfg: dict, out_dir: Path) -> tuple[int, dict]:
    Js = [rigidbody.InertiaSpec(*j) for j in cfg["inertia"]]
    L = rigidbody.TorqueAxis(tuple(cfg["torque_axis"]))
    report = rigidbody.build_RN(Js, L, tau=cfg["tau"], tau0=cfg["tau0"])
    exact = rigidbody.build_RN_exact(Js, L) if report.N <= 3 else None
    payload = {
        "N": report.N,
        "det": report.det,
        "scale": report.scale,
        "cond": report.cond,
        "verdict": report.verdict,
        "det_exact": str(exact) if exact is not None else None,
        "inertia": cfg["inertia"],
        "torque_axis": cfg["torque_axis"],
    }
    out = {cfg["outputs"]["report"]: payload}
    code = 0
    if cfg["expect_verdict"] and report.verdict != cfg["expect_verdict"]:
        payload["failure"] = (
            f"expected verdict {cfg['expect_verdict']!r}, got {report.verdict!r}"
        )
        code = 2
    files = {}
    for name, obj in out.items():
        p = out_dir / name
        _write_json(p, obj)
        files[name] = p
    return code, files


def _run_rigid_generic(cfg: dict, out_dir: Path) -> tuple[int, dict]:
    kwargs = {}
    if "fixed_torque_axis" in cfg:
        kwargs["fixed_L"] = cfg["fixed_torque_axis"]
    if "fixed_inertia" in cfg:
        kwargs["fixed_Js"] = [rigidbody.InertiaSpec(*j) for j in cfg["fixed_inertia"]]
    result = rigidbody.genericity_mc(
        cfg["N"], cfg["samples"], cfg["seed"], tuple(cfg["box"]),
        tau=cfg["tau"], tau0=cfg["tau0"], **kwargs,
    )
    records = result.pop("records")
    code = 0
    if cfg["min_fraction"] and result["fraction_generating"] < cfg["min_fraction"]:
        result["failure"] = (
            f"fraction_generating {result['fraction_generating']} below "
            f"asserted minimum {cfg['min_fraction']}"
        )
        code = 2
    files = {}
    rep_name = cfg["outputs"]["report"]
    p = out_dir / rep_name
    _write_json(p, result)
    files[rep_name] = p
    csv_name = cfg["outputs"].get("samples_csv")
    if csv_name:
        p = out_dir / csv_name
        _write_csv(
            p, ["index", "det", "scaled_det", "verdict"],
            ([r["index"], r["det"], r["scaled_det"], r["verdict"]] for r in records),
        )
        files[csv_name] = p
    return code, files


def _run_model_synthesize(cfg: dict, out_dir: Path) -> tuple[int, dict]:
    grid = _build_grid(cfg["grid"])
    scenario = moments.SynthesisScenario(
        f_theta=cfg["f_theta"],
        target=cfg["target"],
        grid=grid,
        eps1=cfg["eps1"],
        rho=cfg["rho"],
        mu_f=cfg["mu_f"],
        R_fixed=cfg["R"] or None,
        taylor_order=cfg["taylor_order"],
        T=cfg["T"],
    )
    report = moments.verify_model(scenario)
    payload = {
        "stage": report.stage,
        "ok": report.ok,
        "message": report.message,
        "R": report.R,
        "eps1": report.eps1,
        "eps": report.eps,
        "c": list(report.c),
        "y": list(report.y),
        "projection_residual": report.projection_residual,
        "terminal_error": report.terminal_error,
        "bound_2eps1": report.bound_2eps1,
        "perturbation_bound": report.perturbation_bound,
        "ode_agreement": report.ode_agreement,
        "x1": report.x1,
        "y1": report.y1,
    }
    files = {}
    p = out_dir / cfg["outputs"]["report"]
    _write_json(p, payload)
    files[cfg["outputs"]["report"]] = p
    if report.stage == "complete":
        name = cfg["outputs"].get("terminal_csv")
        if name:
            p = out_dir / name
            _write_csv(
                p, ["theta", "target", "achieved"],
                (
                    [grid.nodes[i], report.target_values[i], report.z_terminal[i]]
                    for i in range(grid.size)
                ),
            )
            files[name] = p
        name = cfg["outputs"].get("controls_csv")
        if name:
            u01, v01 = report.controls
            T = cfg["T"]
            u = moments.rescale_to_horizon(u01, T) if T != 1.0 else u01
            v = moments.rescale_to_horizon(v01, T) if T != 1.0 else v01
            ts = np.linspace(0.0, T, cfg["control_sample_rate"])
            p = out_dir / name
            _write_csv(
                p, ["t", "u", "v"],
                ([float(t), float(u.eval(float(t))), float(v.eval(float(t)))] for t in ts),
            )
            files[name] = p
    return (0 if report.ok else 2), files


def _run_lieext_reduce(cfg: dict, out_dir: Path) -> tuple[int, dict]:
    plan = lieext.reduce_controls(
        _build_signal(cfg["u_e"]), _build_signal(cfg["v_e"]), _build_signal(cfg["w_e"]),
        cfg["T"], cfg["n"],
    )
    ts = np.linspace(0.0, cfg["T"], cfg["sample_rate"])
    files = {}
    name = cfg["outputs"]["controls_csv"]
    p = out_dir / name
    _write_csv(
        p, ["t", "u_eps", "v_eps"],
        ([float(t), float(plan.u_eps.eval(float(t))), float(plan.v_eps.eval(float(t)))] for t in ts),
    )
    files[name] = p
    name = cfg["outputs"].get("report")
    if name:
        p = out_dir / name
        _write_json(
            p,
            {
                "T": plan.T,
                "n": plan.n,
                "eps": plan.eps,
                "U_envelope_at_T": float(plan.U_envelope.eval(cfg["T"])),
            },
        )
        files[name] = p
    return 0, files


def _run_lieext_converge(cfg: dict, out_dir: Path) -> tuple[int, dict]:
    grid = _build_grid(cfg["grid"])
    pairs = _build_ensemble_pairs(cfg["ensemble"], grid)
    result = lieext.convergence_study(
        pairs, grid,
        _build_signal(cfg["u_e"]), _build_signal(cfg["v_e"]), _build_signal(cfg["w_e"]),
        cfg["x0"], cfg["T"], cfg["n_list"],
        h_ref=cfg["h_ref"], osc_divisor=cfg["osc_divisor"],
    )
    payload = {
        "n": result["n"],
        "eps": result["eps"],
        "errors": result["errors"],
        "slope": result["slope"],
        "U_envelope_at_T": result["U_envelope_at_T"],
        "run_meta": odesim.run_metadata(cfg["h_ref"], cfg["T"], grid),
    }
    code = 0
    if cfg["slope_range"]:
        lo, hi = cfg["slope_range"]
        if not lo <= result["slope"] <= hi:
            payload["failure"] = f"slope {result['slope']} outside [{lo}, {hi}]"
            code = 2
    files = {}
    name = cfg["outputs"]["report"]
    p = out_dir / name
    _write_json(p, payload)
    files[name] = p
    name = cfg["outputs"].get("errors_csv")
    if name:
        p = out_dir / name
        _write_csv(
            p, ["n", "eps_n", "e_n"],
            ([n, e, err] for n, e, err in zip(result["n"], result["eps"], result["errors"])),
        )
        files[name] = p
    name = cfg["outputs"].get("trajectory_csv")
    if name:
        p = out_dir / name
        dim = result["reference_record"].states.shape[2]
        _write_csv(
            p, ["t", "theta"] + [f"x{d + 1}" for d in range(dim)],
            odesim.trajectory_csv_rows(result["reference_record"], grid),
        )
        files[name] = p
    return code, files


def _run_flow_verify(cfg: dict, out_dir: Path) -> tuple[int, dict]:
    result = lieext.flow_decomposition_check(
        _build_polyfield(cfg["f"]), _build_polyfield(cfg["g"]),
        _build_signal(cfg["u"]), cfg["x0"], cfg["T"], cfg["h"],
    )
    payload = {
        "lhs_endpoint": result["lhs_endpoint"],
        "rhs_endpoint": result["rhs_endpoint"],
        "gap": result["gap"],
        "h": cfg["h"],
        "T": cfg["T"],
    }
    code = 0
    if cfg["max_gap"] and result["gap"] > cfg["max_gap"]:
        payload["failure"] = f"gap {result['gap']} above asserted maximum {cfg['max_gap']}"
        code = 2
    files = {}
    name = cfg["outputs"]["report"]
    p = out_dir / name
    _write_json(p, payload)
    files[name] = p
    return code, files


def _run_rank_check(cfg: dict, out_dir: Path) -> tuple[int, dict]:
    if "systems" in cfg:
        ensemble = [
            tuple(_build_polyfield(fs) for fs in s["fields"]) for s in cfg["systems"]
        ]
        points = cfg["points"]
    else:
        grid = _build_grid(cfg["grid"])
        ensemble = _build_ensemble_pairs(cfg["ensemble"], grid)
        points = cfg["points"] or [[0.0] * 3 for _ in range(grid.size)]
    result = rigidbody.product_bracket_rank(
        ensemble, points, cfg["depth"], rank_tol=cfg["rank_tol"]
    )
    payload = dict(result)
    payload["depth"] = cfg["depth"]
    code = 0
    if cfg["expect_full"] and not result["full"]:
        payload["failure"] = "bracket span does not reach full rank"
        code = 2
    files = {}
    name = cfg["outputs"]["report"]
    p = out_dir / name
    _write_json(p, payload)
    files[name] = p
    return code, files


_RUNNERS = {
    "rigid-check": _run_rigid_check,
    "rigid-generic": _run_rigid_generic,
    "model-synthesize": _run_model_synthesize,
    "lieext-reduce": _run_lieext_reduce,
    "lieext-converge": _run_lieext_converge,
    "flow-verify": _run_flow_verify,
    "rank-check": _run_rank_check,
}


def run(kind: str, cfg: dict, out_dir: str | Path = ".", seed_override: int | None = None,
        threads: int = 1) -> int:
    """Execute a validated scenario; writes artifacts and the run manifest."""
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    if seed_override is not None and "seed" in cfg:
        cfg = dict(cfg, seed=int(seed_override))
    t0 = time.perf_counter()
    code, files = _RUNNERS[kind](cfg, out_path)
    wall = time.perf_counter() - t0
    manifest = {
        "kind": kind,
        "artifact_version": __version__,
        "seed": cfg.get("seed"),
        "threads": threads,
        "config": cfg,
        "wall_time_s": wall,
        "outputs": {name: _digest(p) for name, p in sorted(files.items())},
    }
    _write_json(out_path / "run_manifest.json", manifest)
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ensctl",
        description="Ensemble controllability scenarios: rigid-body determinant "
        "tests, moment-method synthesis, fast-oscillation reductions.",
    )
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind)
        sp.add_argument("--config", required=True, help="path to the JSON scenario config")
        sp.add_argument("--out-dir", default=".", help="directory for output artifacts")
        sp.add_argument("--seed-override", type=int, default=None)
        sp.add_argument("--threads", type=int, default=1)
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.kind)
        return run(args.kind, cfg, args.out_dir, args.seed_override, args.threads)
    except (ConfigError, ValueError, OSError, RuntimeError) as err:
        sys.stderr.write(
            json.dumps({"error": type(err).__name__, "message": str(err)}) + "\n"
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
