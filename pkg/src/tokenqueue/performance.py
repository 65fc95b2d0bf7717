"""Transforms of the stationary law: numbers waiting and present, time till
token and sojourn time, plus moments derived from them.

All evaluators sum, over ordered token tuples, a tuple prefactor times a
sum over inactive-customer vectors whose geometric bases depend on the
transform argument.  With a constant eta that inner sum is a closed product.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

from .errors import DomainError, OrderAssumptionViolated, UnsupportedG
from .model import ModelSpec, tokens_of
from .product_form import StationaryMeasure, inactive_series

FD_STEP = 1e-5


# ---------------------------------------------------------------------------
# holder-class laws


class GProvider:
    """Law of the classes holding T_1..T_i given the active tokens.

    Providers here depend on the token tuple only, not on the inactive counts.
    """

    name = "abstract"

    def weights(self, spec: ModelSpec, tokens: tuple) -> dict:
        raise NotImplementedError

    def marginal(self, spec, tokens, c) -> float:
        """Expected number of active tokens held by class c."""
        return math.fsum(w * sum(1 for g in cls if g == c) for cls, w in self.weights(spec, tokens).items())


class DisjointIndicator(GProvider):
    """Each token is compatible with exactly one class, which must hold it."""

    name = "disjoint"

    def _owners(self, spec):
        owners = []
        for t in range(spec.n_tokens):
            cs = spec.compatible_classes(t)
            if len(cs) != 1:
                raise UnsupportedG(f"token {t} serves {len(cs)} classes; supply a Custom G table")
            owners.append(cs[0])
        return owners

    def weights(self, spec, tokens):
        owners = self._owners(spec)
        return {tuple(owners[t] for t in tokens): 1.0}


class DedicatedIndicator(DisjointIndicator):
    name = "dedicated"

    def weights(self, spec, tokens):
        if any(len(cl.tokens) != 1 for cl in spec.classes):
            raise UnsupportedG("dedicated G needs one token per class")
        return super().weights(spec, tokens)


class RedundancyCOSUniform(GProvider):
    """Every token independently held by a uniformly chosen compatible class.

    Not the exact conditional law of the holders, but server symmetry makes
    the per-class mean counts exact.
    """

    name = "cos_uniform"

    def weights(self, spec, tokens):
        per = [spec.compatible_classes(t) for t in tokens]
        out = {}
        for combo in itertools.product(*per):
            w = 1.0
            for cs in per:
                w /= len(cs)
            out[combo] = out.get(combo, 0.0) + w
        return out


class CustomG(GProvider):
    name = "custom"

    def __init__(self, table: dict):
        self.table = {tuple(k): {tuple(c): float(p) for c, p in v.items()} for k, v in table.items()}

    def weights(self, spec, tokens):
        try:
            return self.table[tuple(tokens)]
        except KeyError:
            raise UnsupportedG(f"no G entry for token tuple {tokens}") from None


def g_for(spec: ModelSpec) -> GProvider:
    kind = spec.g_kind
    if kind == "dedicated":
        return DedicatedIndicator()
    if kind == "cos_uniform":
        return RedundancyCOSUniform()
    if kind in ("disjoint", "single", None):
        g = DisjointIndicator()
        g._owners(spec)  # raises for overlapping token sets
        return g
    raise UnsupportedG(f"no built-in G for kind {kind!r}")


def check_g_normalization(spec: ModelSpec, g: GProvider, tuples) -> float:
    """Largest deviation of sum G from one over the given token tuples."""
    return max(abs(math.fsum(g.weights(spec, tup).values()) - 1.0) for tup in tuples)


# ---------------------------------------------------------------------------
# core summation


def _inner(measure: StationaryMeasure, bases, i: int) -> float:
    if measure.mode == "closed":
        return measure.closed_inner(bases)
    return inactive_series(bases, i, measure.spec.eta, measure.tol * 1e-3).value


def _sum(measure: StationaryMeasure, term) -> float:
    """pi0 * sum over tuples of prefactor * factor * inner(bases); term(tt) -> (factor, bases)."""
    parts = []
    for tt in measure.tuples:
        factor, bases = term(tt)
        if factor == 0.0:
            continue
        parts.append(tt.prefactor * factor * _inner(measure, bases, tt.length))
    return measure.pi0 * math.fsum(parts)


def theta(spec: ModelSpec, c: int, prefix_mask: int) -> float:
    lu = spec.lambda_u(prefix_mask)
    if lu <= 0:
        return 0.0
    inside = spec.class_masks[c] & ~prefix_mask == 0
    return spec.classes[c].rate / lu if inside else 0.0


def _mixed_bases(measure, tt, z):
    spec = measure.spec
    out = []
    for a, m in zip(tt.alphas, tt.masks):
        out.append(a * math.fsum(theta(spec, c, m) * z[c] for c in range(spec.n_classes)))
    return out


def _check_z(measure, zs):
    if measure.mode == "truncated":
        for v in zs:
            if abs(v) > 1.0 + 1e-15:
                raise DomainError(f"|z| = {abs(v)} > 1 outside the truncated-mode domain")


def pgf_N_joint(measure: StationaryMeasure, z: Sequence[float]) -> float:
    """E[prod_c z_c^{N^(c)}] over the inactive customers of each class."""
    z = [float(v) for v in z]
    if len(z) != measure.spec.n_classes:
        raise ValueError("one z per class")
    _check_z(measure, z)
    return _sum(measure, lambda tt: (1.0, _mixed_bases(measure, tt, z)))


def pgf_N(measure: StationaryMeasure, z: float) -> float:
    _check_z(measure, [z])
    return _sum(measure, lambda tt: (1.0, [a * z for a in tt.alphas]))


def pgf_M(measure: StationaryMeasure, z: float) -> float:
    _check_z(measure, [z])
    return _sum(measure, lambda tt: (z ** tt.length, [a * z for a in tt.alphas]))


def pgf_M_joint(measure: StationaryMeasure, z: Sequence[float], g: GProvider | None = None) -> float:
    spec = measure.spec
    g = g or g_for(spec)
    z = [float(v) for v in z]
    _check_z(measure, z)

    def term(tt):
        f = math.fsum(w * math.prod(z[c] for c in cls) for cls, w in g.weights(spec, tt.tokens).items())
        return f, _mixed_bases(measure, tt, z)

    return _sum(measure, term)


def little_point(spec: ModelSpec, c: int, s: float) -> list:
    z = [1.0] * spec.n_classes
    z[c] = 1.0 - s / spec.classes[c].rate
    return z


def _lst_domain(measure, c, s):
    if s < 0:
        raise DomainError("s must be nonnegative")
    if measure.mode == "truncated":
        lam = measure.spec.classes[c].rate
        if abs(1.0 - s / lam) > 1.0:
            raise DomainError(f"s = {s} > 2 lambda_c = {2 * lam}: outside the truncated-mode domain")


def lst_W(measure: StationaryMeasure, c: int, s: float) -> float:
    """E[exp(-s W_c)], the joint PGF of waiting counts at the Little point.

    Exact when eta is constant.  With a population-dependent eta a later
    arrival changes the speed seen by earlier customers, the transform
    identity no longer holds, and only the mean it implies is exact.
    """
    _lst_domain(measure, c, s)
    z = little_point(measure.spec, c, s)
    return _sum(measure, lambda tt: (1.0, _mixed_bases(measure, tt, z)))


def lst_W_direct(measure: StationaryMeasure, c: int, s: float) -> float:
    """Same transform with the bases written out: alpha_j (1 - s 1{c in U_j} / lambda_U_j)."""
    _lst_domain(measure, c, s)
    return _sum(measure, lambda tt: (1.0, _direct_bases(measure.spec, tt, c, s)))


def _direct_bases(spec, tt, c, s):
    cm = spec.class_masks[c]
    out = []
    for a, m in zip(tt.alphas, tt.masks):
        if cm & ~m == 0:
            out.append(a * (1.0 - s / spec.lambda_u(m)))
        else:
            out.append(a)
    return out


def lst_W_overall(measure: StationaryMeasure, s: float) -> float:
    spec = measure.spec
    lam = spec.total_rate
    return math.fsum(cl.rate / lam * lst_W(measure, c, s) for c, cl in enumerate(spec.classes))


def _require_fifo(spec, c):
    if c not in spec.fifo_classes:
        raise OrderAssumptionViolated(
            f"class {c} customers are not certified to leave in arrival order; no sojourn transform")


def lst_S(measure: StationaryMeasure, c: int, s: float, g: GProvider | None = None) -> float:
    """E[exp(-s S_c)] for a class whose customers leave in arrival order.

    Same caveat as lst_W for a population-dependent eta.
    """
    spec = measure.spec
    _require_fifo(spec, c)
    _lst_domain(measure, c, s)
    return _lst_S_eval(measure, c, s, g or g_for(spec))


def _lst_S_eval(measure, c, s, g):
    spec = measure.spec
    zc = 1.0 - s / spec.classes[c].rate

    def term(tt):
        f = math.fsum(w * zc ** sum(1 for h in cls if h == c) for cls, w in g.weights(spec, tt.tokens).items())
        return f, _direct_bases(spec, tt, c, s)

    return _sum(measure, term)


def lst_S_dedicated(measure: StationaryMeasure, c: int, s: float) -> float:
    """Fast path when class c owns a single token that only it can claim."""
    spec = measure.spec
    _require_fifo(spec, c)
    _lst_domain(measure, c, s)
    cm = spec.class_masks[c]
    if cm & (cm - 1) or spec.compatible_classes(tokens_of(cm)[0]) != (c,):
        raise UnsupportedG(f"class {c} does not own a dedicated token")
    lam = spec.classes[c].rate

    def term(tt):
        held = bool(tt.masks and tt.masks[-1] & cm)
        return (lam - s * held) / lam, _direct_bases(spec, tt, c, s)

    return _sum(measure, term)


def prob_wait(measure: StationaryMeasure, c: int) -> float:
    """P(W_c > 0): every token of class c is taken when it arrives."""
    spec = measure.spec
    cm = spec.class_masks[c]
    return _sum(measure, lambda tt: (1.0 if tt.length and cm & ~tt.masks[-1] == 0 else 0.0, tt.alphas))


def prob_wait_overall(measure: StationaryMeasure) -> float:
    spec = measure.spec
    lam = spec.total_rate
    return math.fsum(cl.rate / lam * prob_wait(measure, c) for c, cl in enumerate(spec.classes))


# ---------------------------------------------------------------------------
# moments


def derivative(f, x0: float, h: float = FD_STEP) -> tuple:
    """Central difference with one Richardson step; returns (value, error estimate)."""
    d1 = (f(x0 + h) - f(x0 - h)) / (2 * h)
    d2 = (f(x0 + h / 2) - f(x0 - h / 2)) / h
    rich = d2 + (d2 - d1) / 3.0
    return rich, abs(rich - d2)


def _raw_inner(measure, bases, i):
    # no domain checks: used for derivatives just around z = 1 or s = 0
    if measure.mode == "closed":
        return measure.closed_inner(bases)
    return inactive_series(bases, i, measure.spec.eta, measure.tol * 1e-3).value


def _raw_sum(measure, term):
    parts = []
    for tt in measure.tuples:
        factor, bases = term(tt)
        if factor:
            parts.append(tt.prefactor * factor * _raw_inner(measure, bases, tt.length))
    return measure.pi0 * math.fsum(parts)


def mean_N_class(measure: StationaryMeasure, c: int, method: str = "auto") -> float:
    spec = measure.spec
    if method == "auto":
        method = "closed" if measure.mode == "closed" else "numeric"
    if method == "closed":
        e = spec.eta.limit

        def term(tt):
            d = math.fsum(a * theta(spec, c, m) / e / (1.0 - a / e) for a, m in zip(tt.alphas, tt.masks))
            return d, tt.alphas

        return _raw_sum(measure, term)

    def f(zc):
        z = [1.0] * spec.n_classes
        z[c] = zc
        return _raw_sum(measure, lambda tt: (1.0, _mixed_bases(measure, tt, z)))

    return derivative(f, 1.0)[0]


def mean_W_class(measure: StationaryMeasure, c: int, method: str = "auto") -> float:
    spec = measure.spec
    if method == "auto":
        method = "closed" if measure.mode == "closed" else "numeric"
    cm = spec.class_masks[c]
    if method == "closed":
        e = spec.eta.limit

        def term(tt):
            d = math.fsum(a / spec.lambda_u(m) / e / (1.0 - a / e)
                          for a, m in zip(tt.alphas, tt.masks) if cm & ~m == 0)
            return d, tt.alphas

        return _raw_sum(measure, term)
    f = lambda s: _raw_sum(measure, lambda tt: (1.0, _direct_bases(spec, tt, c, s)))  # noqa: E731
    return -derivative(f, 0.0)[0]


def mean_active(measure: StationaryMeasure) -> float:
    return _raw_sum(measure, lambda tt: (float(tt.length), tt.alphas))


def mean_active_class(measure: StationaryMeasure, c: int, g: GProvider) -> float:
    spec = measure.spec
    return _raw_sum(measure, lambda tt: (g.marginal(spec, tt.tokens, c), tt.alphas))


def mean_S_class(measure: StationaryMeasure, c: int, g: GProvider, method: str = "auto") -> float:
    spec = measure.spec
    _require_fifo(spec, c)
    if method == "auto":
        method = "closed" if measure.mode == "closed" else "numeric"
    if method == "closed":
        return mean_W_class(measure, c, "closed") + mean_active_class(measure, c, g) / spec.classes[c].rate
    return -derivative(lambda s: _lst_S_eval(measure, c, s, g), 0.0)[0]


@dataclass
class ClassMeasures:
    mean_N: float
    mean_W: float
    prob_wait: float
    mean_M: float | None = None
    mean_S: float | None = None
    little_gap: float = 0.0

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class MeasureReport:
    provenance: str
    per_class: list
    mean_N: float
    mean_M: float
    prob_wait: float
    grids: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "provenance": self.provenance,
            "mean_N": self.mean_N,
            "mean_M": self.mean_M,
            "prob_wait": self.prob_wait,
            "per_class": [pc.to_dict() for pc in self.per_class],
            "grids": self.grids,
            "notes": list(self.notes),
        }


def moments(measure: StationaryMeasure, g: GProvider | None = None,
            s_grid: Sequence[float] = (), z_grid: Sequence[float] = ()) -> MeasureReport:
    spec = measure.spec
    notes = []
    if g is None:
        try:
            g = g_for(spec)
        except UnsupportedG as exc:
            g = None
            notes.append(f"per-class present counts unavailable: {exc}")
    if not spec.eta.is_constant:
        notes.append("eta depends on the population: means are exact, W and S transforms are not")
    per = []
    for c, cl in enumerate(spec.classes):
        en = mean_N_class(measure, c)
        ew = mean_W_class(measure, c)
        em = es = None
        if g is not None:
            em = en + mean_active_class(measure, c, g)
            if c in spec.fifo_classes:
                es = mean_S_class(measure, c, g)
        gap = abs(en - cl.rate * ew) / en if en > 0 else abs(cl.rate * ew)
        per.append(ClassMeasures(en, ew, prob_wait(measure, c), em, es, gap))
    mean_n = math.fsum(p.mean_N for p in per)
    mean_m = mean_n + mean_active(measure)
    grids = {}
    if z_grid:
        grids["pgf_N"] = [[z, pgf_N(measure, z)] for z in z_grid]
        grids["pgf_M"] = [[z, pgf_M(measure, z)] for z in z_grid]
    if s_grid:
        lam = spec.total_rate
        rows = []
        for s in s_grid:
            row = {"s": s}
            ok = True
            vals = []
            for c in range(spec.n_classes):
                try:
                    v = lst_W(measure, c, s)
                except DomainError:
                    ok = False
                    v = None
                row[f"W_{c}"] = v
                vals.append(v)
            row["W"] = math.fsum(spec.classes[c].rate / lam * v for c, v in enumerate(vals)) if ok else None
            rows.append(row)
        grids["lst_W"] = rows
    prov = "analytic-closed" if measure.mode == "closed" else "analytic-truncated"
    return MeasureReport(prov, per, mean_n, mean_m, prob_wait_overall(measure), grids, notes)


__all__ = [
    "GProvider", "DisjointIndicator", "DedicatedIndicator", "RedundancyCOSUniform", "CustomG", "g_for",
    "theta", "pgf_N_joint", "pgf_N", "pgf_M", "pgf_M_joint", "lst_W", "lst_W_direct", "lst_W_overall",
    "lst_S", "lst_S_dedicated", "prob_wait", "prob_wait_overall", "moments", "MeasureReport",
    "mean_N_class", "mean_W_class", "mean_S_class", "derivative", "check_g_normalization",
]
