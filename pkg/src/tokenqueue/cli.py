"""Command-line front end: tokenqueue {validate,solve,measure,oracle,simulate,compare} MODEL."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from importlib import resources

import numpy as np

from . import __version__
from .errors import (ConfigurationError, Divergence, DomainError, NotStable, OrderAssumptionViolated, SingularSystem,
                     TokenQueueError, UnsupportedG, ValidationFailed)
from .model import enumerate_states
from .modelfile import ModelFileError, load, to_document
from .performance import DedicatedIndicator, DisjointIndicator, RedundancyCOSUniform, lst_S, moments
from .product_form import StationaryMeasure
from .simulation import (SimConfig, compare_occupancy, compare_stats, occupancy_vs_measure,
                         simulate_matching_native, simulate_redundancy_native, simulate_token_queue)
from .transitions import global_balance_residual, oracle_distance, oracle_solve, partial_balance_residuals
from .validation import check_stability, validate

SCHEMA_VERSION = 1
EXIT_OK, EXIT_PARSE, EXIT_INVALID, EXIT_UNSTABLE, EXIT_NUMERIC = 0, 2, 3, 4, 5

G_CHOICES = {"auto": None, "dedicated": DedicatedIndicator, "disjoint": DisjointIndicator,
             "cos_uniform": RedundancyCOSUniform}


class _Exit(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def bundled_model(name: str):
    """Path of a model shipped with the package, e.g. 'mm1'."""
    fname = name if name.endswith(".model") else name + ".model"
    return resources.files("tokenqueue") / "models" / fname


def _resolve(path: str):
    if os.path.exists(path):
        return path
    p = bundled_model(path)
    if p.is_file():
        return p
    raise _Exit(EXIT_PARSE, f"no such model file: {path}")


def _finite(obj):
    """Replace non-finite floats by None so the document stays valid JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, (np.floating,)):
        return _finite(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def _model_echo(spec):
    try:
        return to_document(spec)
    except ConfigurationError:
        return {"name": spec.name}


def _base(cmd, spec):
    return {"schema_version": SCHEMA_VERSION, "tool_version": __version__, "command": cmd,
            "model": _model_echo(spec)}


def _load(args):
    try:
        return load(_resolve(args.model))
    except (ModelFileError, ConfigurationError) as exc:
        raise _Exit(EXIT_PARSE, f"cannot parse model: {exc}") from exc


def _checked(spec, doc):
    """Attach validation and stability; raise _Exit for failures."""
    rep = validate(spec)
    doc["validation"] = rep.to_dict()
    if not rep.passed:
        raise _Exit(EXIT_INVALID, rep.render())
    verdict = check_stability(spec)
    doc["stability"] = verdict.to_dict()
    if not verdict.stable:
        raise _Exit(EXIT_UNSTABLE, str(verdict))


def _grid(text, default):
    if not text:
        return list(default)
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise _Exit(EXIT_PARSE, f"bad grid {text!r}") from exc


def _g_provider(spec, name):
    cls = G_CHOICES[name]
    return None if cls is None else cls()


# ---------------------------------------------------------------------------


def cmd_validate(args):
    spec = _load(args)
    doc = _base("validate", spec)
    try:
        _checked(spec, doc)
    except _Exit as exc:
        exc.doc = doc
        raise
    return doc, None


def cmd_solve(args):
    spec = _load(args)
    doc = _base("solve", spec)
    _checked(spec, doc)
    m = StationaryMeasure(spec, tol=args.tol)
    doc["solution"] = {"mode": m.mode, "pi0": m.pi0, "normalizer": m.normalizer,
                       "normalizer_error": m.normalizer_error}
    table = None
    if args.bound is not None:
        rows = [(str(x), x.key(), m(x)) for x in enumerate_states(spec, args.bound)]
        doc["solution"]["bound"] = args.bound
        doc["solution"]["tail_mass_bound"] = m.tail_mass_bound(args.bound)
        doc["solution"]["table"] = [{"state": s, "key": k, "prob": p} for s, k, p in rows]
        table = (["state", "key", "prob"], rows)
    return doc, table


def cmd_measure(args):
    spec = _load(args)
    doc = _base("measure", spec)
    _checked(spec, doc)
    m = StationaryMeasure(spec, tol=args.tol)
    s_grid = _grid(args.grid, (0.1, 0.25, 0.5, 1.0, 2.0))
    z_grid = [i / 20 for i in range(21)]
    g = _g_provider(spec, args.g)
    rep = moments(m, g=g, s_grid=s_grid, z_grid=z_grid)
    _add_sojourn_grid(m, rep, s_grid, g)
    doc["measures"] = rep.to_dict()
    rows = []
    for pc_i, pc in enumerate(rep.per_class):
        for k, v in pc.to_dict().items():
            rows.append((f"class{pc_i}", k, v))
    for k in ("mean_N", "mean_M", "prob_wait"):
        rows.append(("all", k, getattr(rep, k)))
    return doc, (["scope", "quantity", "value"], rows)


def _add_sojourn_grid(m, rep, s_grid, g):
    spec = m.spec
    if not spec.fifo_classes:
        return
    out = []
    for s in s_grid:
        row = {"s": s}
        for c in sorted(spec.fifo_classes):
            try:
                row[f"S_{c}"] = lst_S(m, c, s, g)
            except (DomainError, OrderAssumptionViolated, UnsupportedG):
                row[f"S_{c}"] = None
        out.append(row)
    rep.grids["lst_S"] = out


def cmd_oracle(args):
    spec = _load(args)
    doc = _base("oracle", spec)
    _checked(spec, doc)
    bound = args.bound if args.bound is not None else 12
    m = StationaryMeasure(spec, tol=args.tol)
    t0 = time.perf_counter()
    orc = oracle_solve(spec, bound)
    dist = oracle_distance(orc, m)
    res_bound = min(bound, 8)
    worst_g = worst_p = 0.0
    for x in enumerate_states(spec, res_bound):
        worst_g = max(worst_g, global_balance_residual(spec, x, m))
        worst_p = max(worst_p, partial_balance_residuals(spec, x, m).worst)
    doc["oracle"] = dict(dist, bound=bound, method=orc.method, solve_residual=orc.residual,
                         tail_mass_bound=m.tail_mass_bound(bound), seconds=time.perf_counter() - t0,
                         max_global_residual=worst_g, max_partial_residual=worst_p, residual_bound=res_bound)
    rows = [(str(x), x.key(), p, m(x)) for x, p in sorted(orc.probs.items(), key=lambda kv: kv[0].key())]
    return doc, (["state", "key", "oracle", "product_form"], rows)


def _native(spec, cfg):
    src = spec.source or {}
    app = src.get("application")
    if app in ("redundancy_cos", "redundancy_coc"):
        mode = "COS" if app == "redundancy_cos" else "COC"
        return simulate_redundancy_native(src["K"], src["d"], src["lambda"], src["mu"], mode, cfg)
    if app == "matching":
        eta = spec.eta
        return simulate_matching_native(src["rates"], src["compat"], eta, cfg)
    return None


def _sim_config(args):
    return SimConfig(seed=args.seed, events=args.events, replications=args.replications)


def cmd_simulate(args):
    spec = _load(args)
    doc = _base("simulate", spec)
    _checked(spec, doc)
    cfg = _sim_config(args)
    st = _native(spec, cfg) if args.native else simulate_token_queue(spec, cfg)
    if st is None:
        raise _Exit(EXIT_PARSE, "no native simulator for this model")
    doc["simulation"] = st.to_dict()
    rows = [(k, v.mean, v.se) for k, v in sorted(st.estimates.items())]
    return doc, (["quantity", "mean", "se"], rows)


def cmd_compare(args):
    spec = _load(args)
    doc = _base("compare", spec)
    _checked(spec, doc)
    cfg = _sim_config(args)
    bound = args.bound if args.bound is not None else 12
    m = StationaryMeasure(spec, tol=args.tol)
    g = _g_provider(spec, args.g)
    rep = moments(m, g=g, s_grid=cfg.s_grid)
    _add_sojourn_grid(m, rep, cfg.s_grid, g)
    orc = oracle_solve(spec, bound)
    dist = oracle_distance(orc, m)
    sim = simulate_token_queue(spec, cfg)
    table = compare_stats(rep, sim)
    occ, crit = occupancy_vs_measure(sim, m.safe)
    out = {
        "analytic": rep.to_dict(),
        "oracle": dict(dist, bound=bound, tail_mass_bound=m.tail_mass_bound(bound)),
        "simulation": [{"quantity": r.quantity, "analytic": r.analytic, "simulated": r.simulated,
                        "se": r.se, "z": r.z, "flagged": r.flagged} for r in table],
        "occupancy": {"critical_z": crit, "failures": sum(not r[4] for r in occ), "states": len(occ)},
    }
    rows = [("token", r.quantity, r.analytic, r.simulated, r.se, r.z) for r in table]
    nat = _native(spec, cfg)
    if nat is not None:
        ntab = compare_stats(rep, nat)
        out["native"] = [{"quantity": r.quantity, "analytic": r.analytic, "simulated": r.simulated,
                          "se": r.se, "z": r.z, "flagged": r.flagged} for r in ntab]
        pairs, crit2 = compare_occupancy(nat, sim)
        out["native_vs_token"] = {"critical_z": crit2, "states": len(pairs),
                                  "failures": sum(not p[4] for p in pairs),
                                  "max_abs_z": max((abs(p[3]) for p in pairs), default=0.0)}
        rows += [("native", r.quantity, r.analytic, r.simulated, r.se, r.z) for r in ntab]
    zs = [abs(r[5]) for r in rows]
    out["max_abs_z"] = max(zs, default=0.0)
    out["flags"] = sum(z > 3 for z in zs)
    doc["comparison"] = out
    return doc, (["simulator", "quantity", "analytic", "simulated", "se", "z"], rows)


COMMANDS = {"validate": cmd_validate, "solve": cmd_solve, "measure": cmd_measure, "oracle": cmd_oracle,
            "simulate": cmd_simulate, "compare": cmd_compare}


def build_parser():
    p = argparse.ArgumentParser(prog="tokenqueue", description="Token-based central queue analysis.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("model", help="model file, or the name of a bundled model (e.g. mm1)")
        sp.add_argument("--bound", type=int, default=None, help="population bound for tables and the oracle")
        sp.add_argument("--tol", type=float, default=1e-14, help="series tolerance")
        sp.add_argument("--seed", type=int, default=12345)
        sp.add_argument("--events", type=int, default=200_000, help="measured events per replication")
        sp.add_argument("--replications", type=int, default=8)
        sp.add_argument("--grid", default=None, help="comma-separated s values for transform grids")
        sp.add_argument("--g", choices=sorted(G_CHOICES), default="auto", help="holder-class law")
        sp.add_argument("--native", action="store_true", help="use the native simulator (simulate only)")
        sp.add_argument("--format", choices=("doc", "csv"), default="doc")
        sp.add_argument("--output", "-o", default=None, help="write to a file instead of stdout")
    return p


def _emit(args, doc, table, stream):
    if args.format == "csv":
        if table is None:
            raise _Exit(EXIT_PARSE, "this command has no table for CSV output; use --format doc")
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(table[0])
        for r in table[1]:
            w.writerow(r)
        text = buf.getvalue()
    else:
        text = json.dumps(_finite(doc), indent=2, allow_nan=False) + "\n"
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        stream.write(text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        doc, table = COMMANDS[args.command](args)
    except _Exit as exc:
        print(str(exc), file=sys.stderr)
        if getattr(exc, "doc", None) is not None and args.format == "doc":
            _emit(args, exc.doc, None, sys.stdout)
        return exc.code
    except ValidationFailed as exc:
        print(exc.report.render(), file=sys.stderr)
        return EXIT_INVALID
    except NotStable as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_UNSTABLE
    except (Divergence, SingularSystem, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except TokenQueueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    _emit(args, doc, table, sys.stdout)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
