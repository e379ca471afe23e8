"""Command line entry point: ``cgolab {weights,cgo,recover,homotopy,verify}``.

Exit status: 0 when everything ran and every check passed, 1 when a check
failed or a computation broke down, 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
import time

import jsonschema
import numpy as np

from . import __version__

log = logging.getLogger("cgolab")

_NUM = {"type": "number"}
_POINT = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_POTENTIAL = {"oneOf": [_NUM, {"type": "object", "properties": {
    "preset": {"enum": ["zero", "gaussian_bump", "sum"]},
    "amplitude": _NUM, "center": _POINT, "radius": {"type": "number", "exclusiveMinimum": 0},
    "margin": {"type": "number", "minimum": 0}, "width": {"type": "number", "exclusiveMinimum": 0},
    "terms": {"type": "array"}}, "additionalProperties": False}, {"type": "null"}]}
_TERM = {"oneOf": [{"type": "null"}, {"type": "object", "properties": {
    "preset": {"enum": ["zero", "cubic", "polynomial"]}, "c": _NUM,
    "coeffs": {"type": "array", "items": _NUM}}, "required": ["preset"],
    "additionalProperties": False}]}
_POS = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "properties": {
        "domain": {"type": "object", "properties": {
            "shape": {"enum": ["halfdisk", "disk"]},
            "resolution": {"type": "integer", "minimum": 16},
            "radius": _POS}, "additionalProperties": False},
        "seed": {"type": "integer", "minimum": 0},
        "target": _POINT,
        "taus": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        "tau_max": _POS,
        "q1": _POTENTIAL,
        "q2": _POTENTIAL,
        "f1": _TERM,
        "f2": _TERM,
        "cutoff": {"type": "object", "properties": {"r_bd": _POS, "r_cp": _POS},
                   "additionalProperties": False},
        "scan": {"type": "object", "properties": {
            "points": {"type": "array", "items": _POINT, "minItems": 1},
            "n_taus": {"type": "integer", "minimum": 6},
            "tau_min": _POS,
            "max_condition": _POS}, "additionalProperties": False},
        "homotopy": {"type": "object", "properties": {
            "n_t": {"type": "integer", "minimum": 2},
            "amplitude": _POS,
            "max_newton": {"type": "integer", "minimum": 1},
            "tolerance": _POS,
            "query_stride": {"type": "integer", "minimum": 1}}, "additionalProperties": False},
        "tolerances": {"type": "object", "properties": {"newton": _POS, "solver": _POS},
                       "additionalProperties": False},
        "verify": {"type": "object", "properties": {
            "criteria": {"type": "array", "items": {"type": "integer", "minimum": 1, "maximum": 8},
                         "uniqueItems": True},
            "overrides": {"type": "object",
                          "patternProperties": {"^[1-8]$": {"type": "object"}},
                          "additionalProperties": False}}, "additionalProperties": False},
    },
    "additionalProperties": False,
}

DEFAULTS = {
    "domain": {"shape": "halfdisk", "resolution": 64, "radius": 1.0},
    "seed": 0,
    "target": [0.0, 0.5],
    "q1": {"preset": "gaussian_bump", "amplitude": 0.5, "center": [0.0, 0.5], "radius": 0.2},
    "q2": 0.0,
    "f1": None,
    "f2": None,
    "cutoff": {"r_bd": 0.12, "r_cp": 0.12},
    "scan": {"points": [[0.0, 0.5], [0.2, 0.5], [-0.2, 0.5], [0.6, 0.35]], "n_taus": 8,
             "tau_min": 8.0, "max_condition": 1e4},
    "homotopy": {"n_t": 11, "amplitude": 2.0, "max_newton": 5, "tolerance": 1e-9, "query_stride": 5},
    "tolerances": {"newton": 1e-9, "solver": 1e-9},
    "verify": {"criteria": [1, 2, 3, 4, 5, 6, 7, 8], "overrides": {}},
}


class ConfigError(ValueError):
    pass


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("q1", "q2", "f1", "f2"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None, resolution=None, seed=None, tau_max=None):
    """Read, validate and complete a configuration; CLI values take precedence."""
    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"config schema violation at {where}: {exc.message}") from exc
    cfg = _merge(DEFAULTS, raw)
    if resolution is not None:
        if resolution < 16:
            raise ConfigError("--resolution must be >= 16")
        cfg["domain"]["resolution"] = int(resolution)
    if seed is not None:
        if seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg["seed"] = int(seed)
    if tau_max is not None:
        if tau_max <= 0:
            raise ConfigError("--tau-max must be positive")
        cfg["tau_max"] = float(tau_max)
    return cfg


# ---------------------------------------------------------------------------
# builders from config


def _domain(cfg):
    from .mesh import DomainError, build_domain

    d = cfg["domain"]
    try:
        return build_domain(d["shape"], d["resolution"], d["radius"],
                            allow_empty_gamma0=d["shape"] == "disk")
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc


def _term(spec):
    from .solvers import cubic_term, polynomial_term, zero_term

    if spec is None or spec["preset"] == "zero":
        return zero_term()
    if spec["preset"] == "cubic":
        return cubic_term(spec.get("c", 1.0))
    try:
        return polynomial_term(spec.get("coeffs", []))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _potential(domain, spec):
    from .recovery import RecoveryError, potential_from_spec

    try:
        return potential_from_spec(domain, spec)
    except (RecoveryError, TypeError) as exc:
        raise ConfigError(f"bad potential: {exc}") from exc


def _weight(domain, cfg, target=None):
    from .weights import WeightError, make_weight

    try:
        return make_weight(domain, tuple(target or cfg["target"]))
    except WeightError as exc:
        raise ConfigError(f"weight: {exc}") from exc


def _taus(domain, weight, cfg):
    """Config tau list (default 8, 16, 32, ...) trimmed by --tau-max and checked against the cap."""
    from .weights import tau_cap

    cap = tau_cap(domain, weight)
    tmax = cfg.get("tau_max", np.inf)
    if "taus" in cfg:
        taus = sorted(float(t) for t in cfg["taus"] if t <= tmax)
    else:
        taus = [t for t in (8.0, 16.0, 32.0, 64.0, 128.0) if t <= min(cap, tmax)]
    if not taus:
        raise ConfigError(f"no tau in the grid is admissible (resolution cap {cap:.3g})")
    if max(taus) > cap:
        need = int(np.ceil(domain.shape_info["resolution"] * max(taus) / cap))
        raise ConfigError(f"tau={max(taus):g} exceeds the resolution cap {cap:.3g}; "
                          f"use --resolution >= {need}")
    return taus


def _write_json(path, obj):
    from .checks import _jsonable

    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _write_text(path, text):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)
    return path


def _excitation_csv(domain, g, path):
    rows = ["s,x1,x2,g"]
    for s, (x, y), v in zip(domain.arclength, domain.nodes[domain.bidx], g):
        rows.append(f"{s:.12e},{x:.12e},{y:.12e},{v:.12e}")
    return _write_text(path, "\n".join(rows) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_weights(cfg, out):
    from . import plotting
    from .weights import hessian_psi, partition_of_unity, tau_cap

    d = _domain(cfg)
    w = _weight(d, cfg)
    cut = partition_of_unity(d, w, **cfg["cutoff"])
    _, det = hessian_psi(w, w.target)
    rec = {"weight": w.to_dict(), "tau_cap": tau_cap(d, w), "max_phi": float(w.phi(d.z).max()),
           "psi_target": w.psi_target, "det_hessian_psi_target": det,
           "domain": {**d.shape_info, "h": d.h, "n_nodes": int(d.n),
                      "n_boundary": int(len(d.bidx)), "n_gamma0": int(d.gamma0.sum()),
                      "area": float(d.weights.sum())},
           "cutoff": {**cfg["cutoff"], "e1_min": float(cut.e1.min()), "e2_max": float(cut.e2.max())}}
    _write_json(os.path.join(out, "weights.json"), rec)
    plotting.weight_plot(d, w, os.path.join(out, "weights.png"))
    return 0, {"tau_cap": rec["tau_cap"], "target": w.target}


def cmd_cgo(cfg, out):
    from . import plotting
    from .amplitudes import build_pack
    from .cgo import build_linear_cgo, residual_tables, semilinear_correct
    from .solvers import cauchy_data

    d = _domain(cfg)
    w = _weight(d, cfg)
    q = _potential(d, cfg["q1"])
    f = _term(cfg["f1"])
    taus = _taus(d, w, cfg)
    from .weights import partition_of_unity

    cut = partition_of_unity(d, w, **cfg["cutoff"])
    pack = build_pack(d, w, q, sign=1, cut=cut)
    _write_json(os.path.join(out, "pack_summary.json"), pack.summary())
    sols = []
    for t in taus:
        c = build_linear_cgo(d, q, w, t, pack=pack)
        if not f.is_zero:
            semilinear_correct(c, f, tol=cfg["tolerances"]["newton"])
        sols.append(c)
        tag = f"tau_{t:g}"
        u = c.u_total
        _excitation_csv(d, u[d.bidx], os.path.join(out, f"excitation_{tag}.csv"))
        cauchy_data(d, u, q, f, method="flux").to_csv(os.path.join(out, f"cauchy_{tag}.csv"))
        plotting.field_plot(d, c.conjugated, os.path.join(out, f"cgo_{tag}.png"),
                            title=f"exp(-tau phi) u, tau={t:g}")
    _write_json(os.path.join(out, "cgo_breakdown.json"), [s.breakdown for s in sols])
    ti, tb = residual_tables(sols)
    _write_text(os.path.join(out, "decay_interior.csv"), ti.to_csv())
    _write_text(os.path.join(out, "decay_boundary.csv"), tb.to_csv())
    plotting.decay_plot({"interior": ti, "boundary": tb}, os.path.join(out, "decay.png"))
    return 0, {"taus": taus}


def cmd_recover(cfg, out):
    from . import plotting
    from .recovery import experiment_config_json, scan_recovery, simulate_partial_cauchy
    from .weights import tau_cap

    d = _domain(cfg)
    q1, q2 = _potential(d, cfg["q1"]), _potential(d, cfg["q2"])
    f1, f2 = _term(cfg["f1"]), _term(cfg["f2"])
    sc = cfg["scan"]
    # grid from the first point's weight unless given; checked against every point's cap in the scan
    w0 = _weight(d, cfg, sc["points"][0])
    if "taus" in cfg:
        taus = np.array(_taus(d, w0, cfg))
    else:
        hi = min(tau_cap(d, w0), cfg.get("tau_max", np.inf))
        if hi <= sc["tau_min"]:
            raise ConfigError(f"tau range [{sc['tau_min']:g}, {hi:.3g}] is empty; raise --resolution")
        taus = np.linspace(sc["tau_min"], hi, sc["n_taus"])
    if len(taus) < 6:
        raise ConfigError("recovery needs at least 6 tau values")
    experiment_config_json({**cfg, "taus_used": list(map(float, taus))},
                           os.path.join(out, "experiment_config.json"))
    truth = q1 - q2
    scan = scan_recovery(d, [tuple(p) for p in sc["points"]], q1, q2, taus, f1, f2, truth=truth,
                         max_condition=sc["max_condition"], **cfg["cutoff"])
    scan.to_csv(os.path.join(out, "scan.csv"))
    _write_json(os.path.join(out, "scan_details.json"), scan.to_dict())
    plotting.scan_plot(d, scan, os.path.join(out, "scan.png"))
    # a smooth sample excitation and its partial Cauchy data for both media
    xb = d.nodes[d.bidx]
    rng = np.random.default_rng(cfg["seed"])
    k = rng.uniform(-2, 2, 2)
    g = np.cos(k[0] * xb[:, 0] + k[1] * xb[:, 1])
    _excitation_csv(d, g, os.path.join(out, "excitation_sample.csv"))
    for tag, q, f in (("1", q1, f1), ("2", q2, f2)):
        cd = simulate_partial_cauchy(d, q, f, [g], tag=tag)
        cd.to_csv(os.path.join(out, f"cauchy_data_{tag}.csv"))
    status = 0 if not scan.failures else 1
    return status, {"points": len(scan.estimates), "failures": scan.failures}


def cmd_homotopy(cfg, out):
    from . import plotting
    from .homotopy import (integrate_f_difference, recover_df_along_path, solution_path,
                           stability_certificate)

    d = _domain(cfg)
    q = _potential(d, cfg["q1"])
    if cfg["f1"] is None and cfg["f2"] is None:
        # demo pair: cubic against cubic plus a planted 0.05 y^2
        f1, f2 = _term({"preset": "polynomial", "coeffs": [0, 0, 0.05, 1.0]}), _term({"preset": "cubic"})
    else:
        f1, f2 = _term(cfg["f1"]), _term(cfg["f2"])
    h = cfg["homotopy"]
    xb = d.nodes[d.bidx]
    rng = np.random.default_rng(cfg["seed"])
    k = rng.uniform(-1, 1, 2)
    g = h["amplitude"] * (1 + 0.5 * np.cos(k[0] * xb[:, 0] + k[1] * xb[:, 1]))
    _excitation_csv(d, g, os.path.join(out, "excitation_base.csv"))
    path = solution_path(d, q, f1, f2, g, n_t=h["n_t"], tol=h["tolerance"], max_newton=h["max_newton"])
    cert = stability_certificate(d, path)
    path.to_archive(os.path.join(out, "path_archive"), d,
                    extra={"stability_certificate": cert, "seed": cfg["seed"]})
    dfm = recover_df_along_path(d, path, q, f1, f2)
    S = np.array([u[dfm.node_index] for u in path.u1])
    stride = h["query_stride"]
    queries = [(j, S[kk, j]) for j in range(0, len(dfm.node_index), stride) for kk in range(len(path.t))]
    queries += [(j, 2 * np.abs(S[:, j]).max() + 0.1) for j in range(0, len(dfm.node_index), 10 * stride)]

    def truth(x, y):
        return f1.f(x, y) - f2.f(x, y)

    rec = integrate_f_difference(d, path, dfm, queries, truth=truth)
    rec.to_csv(os.path.join(out, "reachable_set.csv"))
    plotting.reachable_plot(rec, os.path.join(out, "reachable_set.png"))
    summary = {"K": path.K, "truncated": path.truncated, "diagnostic": path.diagnostic,
               "max_difference_l2": path.max_difference_l2(d), "excluded": rec.excluded,
               "queries": len(queries), "max_error": rec.max_error,
               "within_tolerance": rec.within_tolerance}
    _write_json(os.path.join(out, "homotopy_summary.json"), summary)
    return (1 if path.truncated else 0), summary


def cmd_verify(cfg, out):
    from .checks import run_checks

    v = cfg["verify"]
    overrides = {int(k): val for k, val in v.get("overrides", {}).items()}
    if 8 in v["criteria"]:
        overrides.setdefault(8, {}).setdefault("seed", cfg["seed"])
    results = run_checks(v["criteria"], out=out, overrides=overrides)
    for r in results:
        print(r.line())
    _write_json(os.path.join(out, "report.json"), {"results": [r.to_dict() for r in results],
                                                   "all_passed": all(r.passed for r in results)})
    with open(os.path.join(out, "report.txt"), "w") as fh:
        fh.write("\n".join(r.line() for r in results) + "\n")
    return (0 if all(r.passed for r in results) else 1), {"passed": sum(r.passed for r in results),
                                                          "total": len(results)}


COMMANDS = {"weights": cmd_weights, "cgo": cmd_cgo, "recover": cmd_recover,
            "homotopy": cmd_homotopy, "verify": cmd_verify}


def build_parser():
    p = argparse.ArgumentParser(prog="cgolab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", metavar="PATH")
    p.add_argument("--out", metavar="DIR", default="cgolab_out")
    p.add_argument("--seed", type=int, metavar="N")
    p.add_argument("--tau-max", type=float, metavar="X")
    p.add_argument("--resolution", type=int, metavar="N")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.resolution, args.seed, args.tau_max)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = os.path.join(args.out, args.command)
    os.makedirs(out, exist_ok=True)
    t0 = time.time()
    try:
        status, info = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # partial artifacts stay on disk
        log.exception("%s failed", args.command)
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        return 1
    _write_json(os.path.join(out, "manifest.json"),
                {"command": args.command, "config": cfg, "version": __version__,
                 "status": status, "summary": info,
                 "files": sorted(os.path.relpath(os.path.join(r, f), out)
                                 for r, _, fs in os.walk(out) for f in fs if f != "manifest.json")})
    log.info("%s finished in %.1fs with status %d", args.command, time.time() - t0, status)
    return status


if __name__ == "__main__":
    sys.exit(main())
