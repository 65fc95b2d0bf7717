"""Structural checks on a model: assignment condition, rate consistency,
order independence of the service rates, and the stability ratio test."""

from __future__ import annotations

import itertools
import math
import weakref
from dataclasses import dataclass, field

import numpy as np

from .errors import NotStable, ValidationFailed
from .model import PrefixRates, ModelSpec, mask_of, subset_key, tokens_of

EXHAUSTIVE_LIMIT = 10
SAMPLE_SEED = 20240611
SAMPLE_COUNT = 2000
REL_TOL = 1e-10


def _differ(a: float, b: float, rel: float = REL_TOL) -> bool:
    return abs(a - b) > rel * max(abs(a), abs(b))


@dataclass(frozen=True)
class Violation:
    check: str
    witness: str
    lhs: float
    rhs: float
    detail: str = ""

    def __str__(self):
        s = f"[{self.check}] witness {self.witness}: {self.lhs!r} != {self.rhs!r}"
        return s + (f" ({self.detail})" if self.detail else "")


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)
    sampled: bool = False
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def __add__(self, other: "ValidationReport") -> "ValidationReport":
        return ValidationReport(self.violations + other.violations,
                                self.sampled or other.sampled, self.notes + other.notes)

    def render(self) -> str:
        if self.passed:
            head = "all checks passed"
        else:
            head = f"{len(self.violations)} violation(s)"
        lines = [head] + [f"  {v}" for v in self.violations] + [f"  note: {n}" for n in self.notes]
        if self.sampled:
            lines.append("  note: some checks were sampled rather than exhaustive")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "sampled": self.sampled,
            "violations": [
                {"check": v.check, "witness": v.witness, "lhs": v.lhs, "rhs": v.rhs, "detail": v.detail}
                for v in self.violations
            ],
            "notes": list(self.notes),
        }


def _fmt_tuple(spec, tup) -> str:
    return "(" + ", ".join(spec.token_name(t) for t in tup) + ")"


def claim_product(spec: ModelSpec, order) -> float:
    p = 1.0
    m = 0
    for t in order:
        p *= spec.lambda_t(m, t)
        m |= 1 << t
    return p


def reachable_masks(spec: ModelSpec) -> list[int]:
    """Token sets that can be the active set: grown one positive claim at a time."""
    K = spec.n_tokens
    reach = bytearray(1 << K)
    reach[0] = 1
    for m in sorted(range(1 << K), key=lambda m: bin(m).count("1")):
        if not reach[m]:
            continue
        for t in range(K):
            if not m >> t & 1 and spec.lambda_t(m, t) > 0:
                reach[m | 1 << t] = 1
    return [m for m in range(1 << K) if reach[m]]


# ---------------------------------------------------------------------------


def check_assignment_condition(spec: ModelSpec, strategy: str = "adjacent",
                               limit: int = EXHAUSTIVE_LIMIT) -> ValidationReport:
    """Claim-rate products must not depend on the order of activation.

    strategy "full" compares every permutation of every subset with the
    sorted order; "adjacent" compares lambda_a(P) lambda_b(P+a) with
    lambda_b(P) lambda_a(P+b) for every reachable P, which is equivalent.
    """
    K = spec.n_tokens
    rep = ValidationReport()
    if K > limit:
        return _sampled_assignment(spec, rep)
    if strategy == "full":
        for m in range(1, 1 << K):
            toks = tokens_of(m)
            ref = claim_product(spec, toks)
            for perm in itertools.permutations(toks):
                p = claim_product(spec, perm)
                if _differ(p, ref):
                    rep.violations.append(Violation(
                        "assignment", f"{_fmt_tuple(spec, toks)} vs {_fmt_tuple(spec, perm)}", ref, p))
                    break
        return rep
    if strategy != "adjacent":
        raise ValueError(f"unknown strategy {strategy!r}")
    for m in reachable_masks(spec):
        free = [t for t in range(K) if not m >> t & 1]
        for a, b in itertools.combinations(free, 2):
            lhs = spec.lambda_t(m, a) * spec.lambda_t(m | 1 << a, b)
            rhs = spec.lambda_t(m, b) * spec.lambda_t(m | 1 << b, a)
            if _differ(lhs, rhs):
                pre = tokens_of(m)
                rep.violations.append(Violation(
                    "assignment",
                    f"{_fmt_tuple(spec, pre + (a, b))} vs {_fmt_tuple(spec, pre + (b, a))}",
                    lhs, rhs, "adjacent transposition"))
    return rep


def _sampled_assignment(spec, rep):
    rng = np.random.default_rng(SAMPLE_SEED)
    K = spec.n_tokens
    for _ in range(SAMPLE_COUNT):
        order = [int(t) for t in rng.permutation(K)]
        i = int(rng.integers(2, K + 1))
        order = order[:i]
        p = int(rng.integers(0, i - 1))
        swapped = order[:p] + [order[p + 1], order[p]] + order[p + 2:]
        a, b = claim_product(spec, order), claim_product(spec, swapped)
        if _differ(a, b):
            rep.violations.append(Violation(
                "assignment", f"{_fmt_tuple(spec, order)} vs {_fmt_tuple(spec, swapped)}", a, b))
            break
    rep.sampled = True
    return rep


def check_rate_consistency(spec: ModelSpec, limit: int = 16) -> ValidationReport:
    """Claim rates of the available tokens add up to the rate of arrivals that can claim one."""
    K = spec.n_tokens
    rep = ValidationReport()
    masks = range(1 << K)
    if K > limit:
        rng = np.random.default_rng(SAMPLE_SEED)
        masks = [int(m) for m in rng.integers(0, 1 << K, SAMPLE_COUNT)]
        rep.sampled = True
    lam = spec.total_rate
    for m in masks:
        lhs = math.fsum(spec.lambda_t(m, t) for t in range(K) if not m >> t & 1)
        rhs = lam - spec.lambda_u(m)
        if abs(lhs - rhs) > REL_TOL * lam:
            rep.violations.append(Violation("rate_consistency", "{" + subset_key(m) + "}", lhs, rhs))
    return rep


def check_oi_condition(spec: ModelSpec, bound: int = 64, limit: int = EXHAUSTIVE_LIMIT) -> ValidationReport:
    """Service rates: nonnegative increments, order-free totals, positive eta."""
    K = spec.n_tokens
    rep = ValidationReport()
    rates = spec.rates
    if isinstance(rates, PrefixRates):
        if K > limit:
            rep.sampled = True
            rep.notes.append("prefix-table order independence checked on sorted orders only")
        for m in range(1, 1 << K):
            toks = tokens_of(m)
            perms = itertools.permutations(toks) if K <= limit else [toks]
            ref = None
            for perm in perms:
                k = 0.0
                for j in range(len(perm)):
                    s = rates.table.get(perm[: j + 1])
                    if s is None:
                        rep.violations.append(Violation("oi", _fmt_tuple(spec, perm[: j + 1]), float("nan"), 0.0,
                                                        "missing prefix rate"))
                        return rep
                    if s < 0 and m == mask_of(perm[: j + 1]):
                        rep.violations.append(Violation("oi", _fmt_tuple(spec, perm[: j + 1]), s, 0.0,
                                                        "negative rate"))
                    k += s
                if ref is None:
                    ref = (perm, k)
                elif _differ(k, ref[1]):
                    rep.violations.append(Violation(
                        "oi", f"{_fmt_tuple(spec, ref[0])} vs {_fmt_tuple(spec, perm)}", ref[1], k,
                        "k depends on the order"))
                    break
    else:
        for m in range(1 << K):
            km = spec.k_total(m)
            if m and km <= 0 and spec.lambda_u(m) > 0:
                rep.violations.append(Violation("oi", "{" + subset_key(m) + "}", km, 0.0,
                                                "k must be positive where customers can wait"))
            for t in range(K):
                if not m >> t & 1:
                    k2 = spec.k_total(m | 1 << t)
                    if k2 < km - REL_TOL * max(1.0, abs(km)):
                        rep.violations.append(Violation(
                            "oi", "{" + subset_key(m) + "} + " + spec.token_name(t), k2, km,
                            "k is not monotone, a rate increment is negative"))
    for j in range(1, bound + 1):
        v = spec.eta(j)
        if not v > 0:
            rep.violations.append(Violation("oi", f"eta({j})", v, 0.0, "eta must be positive"))
            break
    return rep


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StabilityVerdict:
    status: str  # "stable" | "unstable" | "indeterminate"
    ratio: float
    witness: tuple
    eta_limit: float

    @property
    def stable(self) -> bool:
        return self.status == "stable"

    def __str__(self):
        return (f"{self.status}: max lambda_U(S)/k(S) = {self.ratio:.12g} at S = {self.witness} "
                f"vs eta limit {self.eta_limit:.12g}")

    def to_dict(self):
        return {"status": self.status, "ratio": self.ratio,
                "witness": [int(t) for t in self.witness], "eta_limit": self.eta_limit}


def check_stability(spec: ModelSpec, tie_tol: float = 1e-12) -> StabilityVerdict:
    eta = spec.eta.limit
    best, witness = -1.0, ()
    for m in reachable_masks(spec):
        if m == 0:
            continue
        lu = spec.lambda_u(m)
        k = spec.k_total(m)
        if k <= 0:
            r = math.inf if lu > 0 else 0.0
        else:
            r = lu / k
        if r > best:
            best, witness = r, tokens_of(m)
    if math.isinf(best):
        return StabilityVerdict("unstable", best, witness, eta)
    if math.isinf(eta):
        return StabilityVerdict("stable", best, witness, eta)
    if abs(best - eta) <= tie_tol * max(1.0, eta):
        status = "indeterminate"
    elif best < eta:
        status = "stable"
    else:
        status = "unstable"
    return StabilityVerdict(status, best, witness, eta)


# ---------------------------------------------------------------------------

_cache: "weakref.WeakKeyDictionary[ModelSpec, ValidationReport]" = weakref.WeakKeyDictionary()


def validate(spec: ModelSpec) -> ValidationReport:
    rep = _cache.get(spec)
    if rep is None:
        rep = check_assignment_condition(spec) + check_rate_consistency(spec) + check_oi_condition(spec)
        _cache[spec] = rep
    return rep


def require_valid(spec: ModelSpec, stable: bool = True) -> None:
    rep = validate(spec)
    if not rep.passed:
        raise ValidationFailed(rep)
    if stable:
        verdict = check_stability(spec)
        if not verdict.stable:
            raise NotStable(verdict)
