"""Declarative model files (YAML).

Two forms are accepted.  The shortcut names an application builder::

    name: mm1
    application:
      name: mmk_hetero
      params: {mu: [1.0], lam: 0.5}

The explicit form lists tokens, classes, an assignment rule and the rates::

    name: two_servers
    tokens: [s1, s2]
    classes:
      - {name: c1, rate: 1.0, tokens: [s1, s2]}
    assignment: {rule: uniform}
    rates:
      k: {s1: 1.0, s2: 2.0, s1+s2: 3.0}
    eta: 1.0

Subset keys are token names joined by "+" in token order.  Unknown keys are
rejected everywhere.
"""

from __future__ import annotations

import math
from pathlib import Path

import yaml

from . import applications as apps
from .assignment import DedicatedRule, PriorityRule, RedundancyCOSRule, TableRule, UniformRule
from .errors import ConfigurationError, TokenQueueError
from .model import CustomerClass, Eta, ModelSpec, PrefixRates, SetFunctionRates, tokens_of

SCHEMA = 1
TOP_KEYS = {"schema", "name", "application", "tokens", "labels", "classes", "assignment", "rates", "eta",
            "fifo_classes", "g"}


class ModelFileError(TokenQueueError, ValueError):
    """The document cannot be turned into a model."""


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ModelFileError(f"{where}: expected a mapping, got {type(d).__name__}")
    extra = set(d) - set(allowed)
    if extra:
        raise ModelFileError(f"{where}: unknown key(s) {sorted(extra)}")


def _parse_eta(v, where="eta") -> Eta:
    if v is None:
        return Eta.constant(1.0)
    if isinstance(v, (int, float)):
        return Eta.constant(float(v))
    _check_keys(v, {"values", "tail"}, where)
    return Eta([float(x) for x in v.get("values", [])], float(v.get("tail", 1.0)))


# ---------------------------------------------------------------------------
# application shortcut


def _app_matching(p):
    _check_keys(p, {"rates", "compat", "A"}, "application.params")
    A = p.get("A", 1.0)
    eta = _parse_eta(A, "application.params.A")
    return apps.build_matching(p["rates"], p["compat"], eta)


def _app_oi(p):
    _check_keys(p, {"kind", "params", "caps"}, "application.params")
    kind = p.get("kind")
    sub = p.get("params", {})
    if kind == "msccc":
        oi = apps.msccc_oi(int(sub["k_servers"]), sub["rates"], float(sub["mu"]))
    elif kind == "erlang_c":
        oi = apps.erlang_c_oi(int(sub["K"]), float(sub["lam"]), float(sub["mu"]))
    else:
        raise ModelFileError(f"unknown OI kind {kind!r}")
    spec = apps.build_from_oi(oi, [float(c) for c in p["caps"]])
    if not isinstance(spec, ModelSpec):
        raise ModelFileError("infinite caps give an OI queue, not a token model")
    return spec


APPLICATIONS = {
    "mmk_hetero": (apps.build_mmk_hetero, {"mu", "lam"}),
    "msccc": (apps.build_msccc, {"k_servers", "rates", "mu"}),
    "redundancy_cos": (apps.build_redundancy_cos, {"K", "d", "lam", "mu", "rule"}),
    "redundancy_coc": (apps.build_redundancy_coc, {"K", "d", "lam", "mu"}),
    "matching": (_app_matching, None),
    "oi": (_app_oi, None),
}


def _from_application(doc):
    app = doc["application"]
    _check_keys(app, {"name", "params"}, "application")
    name = app.get("name")
    if name not in APPLICATIONS:
        raise ModelFileError(f"unknown application {name!r}; known: {sorted(APPLICATIONS)}")
    fn, allowed = APPLICATIONS[name]
    params = app.get("params", {}) or {}
    if allowed is not None:
        _check_keys(params, allowed, "application.params")
        return fn(**params)
    return fn(params)


# ---------------------------------------------------------------------------
# explicit form


def _names_to_mask(names, index, where):
    m = 0
    for n in names:
        if str(n) not in index:
            raise ModelFileError(f"{where}: unknown token {n!r}")
        m |= 1 << index[str(n)]
    return m


def _key_to_mask(key, index, where):
    key = str(key).strip()
    if not key:
        return 0
    return _names_to_mask(key.split("+"), index, where)


def _from_explicit(doc):
    for req in ("tokens", "classes", "assignment", "rates"):
        if req not in doc:
            raise ModelFileError(f"missing section {req!r}")
    names = [str(t) for t in doc["tokens"]]
    if len(set(names)) != len(names):
        raise ModelFileError("duplicate token names")
    index = {n: i for i, n in enumerate(names)}
    K = len(names)

    classes = []
    cnames = []
    for j, cl in enumerate(doc["classes"]):
        _check_keys(cl, {"name", "rate", "tokens"}, f"classes[{j}]")
        m = _names_to_mask(cl["tokens"], index, f"classes[{j}]")
        cname = str(cl.get("name", f"c{j + 1}"))
        cnames.append(cname)
        classes.append(CustomerClass(float(cl["rate"]), frozenset(tokens_of(m)), cname))

    a = doc["assignment"]
    _check_keys(a, {"rule", "order", "K", "d", "lambda", "table"}, "assignment")
    rule = a.get("rule")
    if rule == "uniform":
        assignment = UniformRule()
    elif rule == "dedicated":
        assignment = DedicatedRule()
    elif rule == "priority":
        assignment = PriorityRule([index[str(t)] for t in a["order"]])
    elif rule == "redundancy_cos":
        assignment = RedundancyCOSRule(int(a["K"]), int(a["d"]), float(a["lambda"]))
    elif rule == "table":
        table = {}
        for key, row in (a.get("table") or {}).items():
            m = _key_to_mask(key, index, "assignment.table")
            for t, v in row.items():
                table[(m, index[str(t)])] = float(v)
        assignment = TableRule(table)
    else:
        raise ModelFileError(f"unknown assignment rule {rule!r}")

    r = doc["rates"]
    _check_keys(r, {"k", "prefix", "family"}, "rates")
    if sum(x in r for x in ("k", "prefix", "family")) != 1:
        raise ModelFileError("rates: give exactly one of k, prefix, family")
    if "k" in r:
        table = {}
        for key, v in r["k"].items():
            table[_key_to_mask(key, index, "rates.k")] = float(v)
        missing = [m for m in range(1, 1 << K) if m not in table]
        if missing:
            raise ModelFileError(f"rates.k: {len(missing)} nonempty subset(s) missing, e.g. "
                                 + "+".join(names[t] for t in tokens_of(missing[0])))
        rates = SetFunctionRates(table)
    elif "prefix" in r:
        table = {}
        for key, v in r["prefix"].items():
            order = tuple(index[p.strip()] for p in str(key).split(","))
            table[order] = float(v)
        rates = PrefixRates(table)
    else:
        rates = _family(r["family"], names, index)

    fifo = frozenset(cnames.index(str(c)) for c in doc.get("fifo_classes", []) or [])
    labels = doc.get("labels")
    return ModelSpec(
        n_tokens=K,
        classes=tuple(classes),
        assignment=assignment,
        rates=rates,
        eta=_parse_eta(doc.get("eta")),
        token_labels=tuple(labels) if labels is not None else None,
        fifo_classes=fifo,
        g_kind=doc.get("g"),
        name=str(doc.get("name", "model")),
        token_names=tuple(names),
    )


def _family(f, names, index):
    _check_keys(f, {"name", "mu", "per", "cap", "sets", "scale"}, "rates.family")
    kind = f.get("name")
    if kind == "additive":
        mu = [float(v) for v in f["mu"]]
        if len(mu) != len(names):
            raise ModelFileError("rates.family.mu: one rate per token")
        return SetFunctionRates(lambda m: math.fsum(mu[t] for t in tokens_of(m)))
    if kind == "capped":
        per, cap = float(f["per"]), int(f["cap"])
        return SetFunctionRates(lambda m: min(bin(m).count("1"), cap) * per)
    if kind == "coverage":
        sets = [frozenset(s) for s in f["sets"]]
        return SetFunctionRates(apps.FjEvaluator(sets, float(f.get("scale", 1.0))))
    raise ModelFileError(f"unknown rate family {kind!r}")


# ---------------------------------------------------------------------------


def parse_document(doc) -> ModelSpec:
    _check_keys(doc, TOP_KEYS, "model")
    if doc.get("schema", SCHEMA) != SCHEMA:
        raise ModelFileError(f"unsupported schema {doc.get('schema')!r}")
    try:
        if "application" in doc:
            others = set(doc) - {"schema", "name", "application"}
            if others:
                raise ModelFileError(f"an application shortcut cannot be combined with {sorted(others)}")
            spec = _from_application(doc)
            if "name" in doc:
                object.__setattr__(spec, "name", str(doc["name"]))
            return spec
        return _from_explicit(doc)
    except ModelFileError:
        raise
    except ConfigurationError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"malformed model: {exc!r}") from exc


def loads(text: str) -> ModelSpec:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ModelFileError(f"not valid YAML: {exc}") from exc
    return parse_document(doc)


def load(path) -> ModelSpec:
    return loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# export


def to_document(spec: ModelSpec) -> dict:
    """A document that parses back to an equivalent spec.

    Application-built specs are written as shortcuts when their parameters are
    known; anything else is tabulated in the explicit form.
    """
    src = spec.source
    if src and src.get("application") in ("mmk_hetero", "msccc", "redundancy_cos", "redundancy_coc"):
        app = src["application"]
        if app == "mmk_hetero":
            params = {"mu": list(src["mu"]), "lam": src["lambda"]}
        elif app == "msccc":
            params = {"k_servers": src["k"], "rates": list(src["rates"]), "mu": src["mu"]}
        else:
            params = {"K": src["K"], "d": src["d"], "lam": src["lambda"], "mu": src["mu"]}
        return {"schema": SCHEMA, "name": spec.name, "application": {"name": app, "params": params}}
    return _explicit_document(spec)


def _explicit_document(spec):
    K = spec.n_tokens
    names = list(spec.token_names) if spec.token_names else [f"t{t + 1}" for t in range(K)]

    def key(m):
        return "+".join(names[t] for t in tokens_of(m))

    a = spec.assignment
    if isinstance(a, DedicatedRule):
        adoc = {"rule": "dedicated"}
    elif isinstance(a, UniformRule):
        adoc = {"rule": "uniform"}
    elif isinstance(a, PriorityRule):
        adoc = {"rule": "priority", "order": [names[t] for t in a.order]}
    elif isinstance(a, RedundancyCOSRule):
        adoc = {"rule": "redundancy_cos", "K": a.K, "d": a.d, "lambda": a.lam}
    else:
        tab = TableRule.from_spec(spec)
        rows = {}
        for (m, t), v in sorted(tab.table.items()):
            rows.setdefault(key(m), {})[names[t]] = v
        adoc = {"rule": "table", "table": rows}
    if isinstance(spec.rates, PrefixRates):
        rdoc = {"prefix": {",".join(names[t] for t in p): v for p, v in spec.rates.table.items()}}
    else:
        rdoc = {"k": {key(m): spec.k_total(m) for m in range(1, 1 << K)}}
    eta = spec.eta
    if eta.func is not None:
        raise ConfigurationError("a functional eta cannot be written to a model file")
    doc = {
        "schema": SCHEMA,
        "name": spec.name,
        "tokens": names,
        "classes": [{"name": cl.name or f"c{c + 1}", "rate": cl.rate, "tokens": [names[t] for t in sorted(cl.tokens)]}
                    for c, cl in enumerate(spec.classes)],
        "assignment": adoc,
        "rates": rdoc,
        "eta": {"values": list(eta.values), "tail": eta.tail} if eta.values else eta.tail,
    }
    if spec.token_labels is not None:
        doc["labels"] = list(spec.token_labels)
    if spec.fifo_classes:
        doc["fifo_classes"] = [spec.classes[c].name or f"c{c + 1}" for c in sorted(spec.fifo_classes)]
    if spec.g_kind:
        doc["g"] = spec.g_kind
    return doc


def dumps(spec: ModelSpec) -> str:
    return yaml.safe_dump(to_document(spec), sort_keys=False)


__all__ = ["ModelFileError", "parse_document", "loads", "load", "to_document", "dumps", "SCHEMA"]
