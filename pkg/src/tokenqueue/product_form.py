"""Product-form stationary law and its normalizing constant."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations

from .errors import Divergence, NotIndistinguishable, UnreachableState
from .model import LabeledQState, ModelSpec, QState, mask_of, token_tuples, tokens_of
from .validation import require_valid

MAX_SERIES_TERMS = 1_000_000


@dataclass(frozen=True)
class TupleTerm:
    """Per-tuple constants: prefactor Pi_lambda/Pi_k * prod_{m<=i} 1/eta(m), and alpha_j."""

    tokens: tuple
    prefactor: float
    alphas: tuple
    masks: tuple  # prefix masks P_1..P_i

    @property
    def length(self) -> int:
        return len(self.tokens)


@dataclass
class Series:
    terms: list
    remainder: float  # certified bound on sum of |terms| beyond the list

    @property
    def value(self) -> float:
        return math.fsum(self.terms)


def inactive_series(bases, i: int, eta, tol: float, min_terms: int = 0) -> Series:
    """sum_N h_N(bases) prod_{m=i+1}^{i+N} 1/eta(m), h_N the complete homogeneous polynomial.

    Terms are produced until a certified bound on the remainder drops below
    `tol` (absolute).
    """
    b = [float(v) for v in bases]
    if i == 0 or not b:
        return Series([1.0], 0.0)
    bmax = max(abs(v) for v in b)
    e = [0.0] * (len(b) + 1)  # e[j] = h_N(b_1..b_j) at current N
    terms = []
    d = 1.0
    for N in range(MAX_SERIES_TERMS):
        if N == 0:
            e = [1.0] * (len(b) + 1)
        else:
            d /= eta(i + N)
            prev = e
            e = [0.0] * (len(b) + 1)
            for j in range(1, len(b) + 1):
                e[j] = e[j - 1] + b[j - 1] * prev[j]
        terms.append(e[-1] * d)
        if bmax == 0.0:
            return Series(terms, 0.0)
        if N + 1 < min_terms:
            continue
        M = N
        eta_f = eta.floor_beyond(i + M)
        r = bmax / eta_f
        q = (M + 1 + i) / (M + 2) * r
        if q < 1.0:
            first = math.comb(M + i, i - 1) * bmax ** (M + 1) * d / eta_f
            bound = first / (1.0 - q)
            if bound < tol:
                return Series(terms, bound)
    raise Divergence("inactive-customer series did not converge")


class StationaryMeasure:
    """Normalized product-form law for a validated, stable spec.

    mode "closed" uses the product formula for the inner sums and needs a
    constant eta; "truncated" sums the series with a certified remainder.
    """

    def __init__(self, spec: ModelSpec, mode: str = "auto", tol: float = 1e-14, validate: bool = True):
        if validate:
            require_valid(spec)
        if mode == "auto":
            mode = "closed" if spec.eta.is_constant else "truncated"
        if mode not in ("closed", "truncated"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "closed" and not spec.eta.is_constant:
            raise ValueError("closed mode needs a constant eta")
        self.spec = spec
        self.mode = mode
        self.tol = tol
        self.tuples = self._tuple_terms()
        z, err = 0.0, 0.0
        parts = []
        for tt in self.tuples:
            if self.mode == "closed":
                parts.append(tt.prefactor * self.closed_inner(tt.alphas))
            else:
                s = inactive_series(tt.alphas, tt.length, spec.eta, tol * 1e-3)
                parts.append(tt.prefactor * s.value)
                err += tt.prefactor * s.remainder
        z = math.fsum(parts)
        self.normalizer = z
        self.normalizer_error = err
        self.pi0 = 1.0 / z

    def _tuple_terms(self) -> list:
        spec = self.spec
        out = []
        for tup in token_tuples(spec.n_tokens):
            pref = 1.0
            alphas, masks = [], []
            m = 0
            for j, t in enumerate(tup, start=1):
                pref *= spec.lambda_t(m, t)
                m |= 1 << t
                k = spec.k_total(m)
                pref /= k * spec.eta(j)
                alphas.append(spec.lambda_u(m) / k)
                masks.append(m)
                if pref == 0.0:
                    break
            if pref > 0.0:
                out.append(TupleTerm(tup, pref, tuple(alphas), tuple(masks)))
        return out

    def closed_inner(self, bases) -> float:
        e = self.spec.eta.limit
        out = 1.0
        for b in bases:
            r = b / e
            if r >= 1.0:
                raise Divergence(f"base {b} reaches eta = {e}")
            out /= 1.0 - r
        return out

    def inner(self, bases, i: int) -> float:
        """sum over n-vectors of prod b_j^{n_j} prod 1/eta(i+m), in the measure's mode."""
        if self.mode == "closed":
            return self.closed_inner(bases)
        return inactive_series(bases, i, self.spec.eta, self.tol * 1e-3).value

    # -- point evaluation ---------------------------------------------------

    def unnormalized_weight(self, x: QState) -> float:
        return unnormalized_weight(self.spec, x)

    def __call__(self, x: QState) -> float:
        return self.pi0 * unnormalized_weight(self.spec, x)

    stationary_prob = __call__

    def safe(self, x: QState) -> float:
        """Like calling the measure but returns 0 for unreachable states."""
        try:
            return self(x)
        except UnreachableState:
            return 0.0

    def tail_mass_bound(self, bound: int) -> float:
        """Certified upper bound on P(population > bound)."""
        spec = self.spec
        tail = []
        for tt in self.tuples:
            i = tt.length
            if i > bound:
                s = inactive_series(tt.alphas, i, spec.eta, 1e-18)
                tail.append(tt.prefactor * (s.value + s.remainder))
                continue
            s = inactive_series(tt.alphas, i, spec.eta, 1e-18, min_terms=bound - i + 2)
            beyond = math.fsum(s.terms[bound - i + 1:])
            tail.append(tt.prefactor * (beyond + s.remainder))
        return math.fsum(tail) / self.normalizer * (1.0 + 1e-12)

    def population_law(self, bound: int) -> list:
        """P(population = n) for n = 0..bound."""
        spec = self.spec
        out = [0.0] * (bound + 1)
        for tt in self.tuples:
            i = tt.length
            if i > bound:
                continue
            s = inactive_series(tt.alphas, i, spec.eta, 1e-18, min_terms=bound - i + 1)
            # short series mean the remaining terms vanish
            for N in range(min(bound - i + 1, len(s.terms))):
                out[i + N] += self.pi0 * tt.prefactor * s.terms[N]
        return out

    # -- labels -------------------------------------------------------------

    def aggregate_by_labels(self, xl: LabeledQState, method: str = "formula") -> float:
        spec = self.spec
        labels = spec.token_labels
        if labels is None:
            labels = tuple(range(spec.n_tokens))
        check_indistinguishable(spec, labels)
        if method == "sum":
            return math.fsum(self.safe(QState(tup, xl.counts)) for tup in _realizations(labels, xl.labels))
        if method != "formula":
            raise ValueError(f"unknown method {method!r}")
        # a single representative realization gives every label-level quantity
        pool = {}
        for t, l in enumerate(labels):
            pool.setdefault(l, []).append(t)
        used = 0
        prod = 1.0
        phi = xl.population
        for j, (l, n) in enumerate(zip(xl.labels, xl.counts), start=1):
            free = [t for t in pool.get(l, []) if not used >> t & 1]
            if not free:
                return 0.0
            lam_l = math.fsum(spec.lambda_t(used, t) for t in free)
            used |= 1 << free[0]
            k = spec.k_total(used)
            lu = spec.lambda_u(used)
            if n > 0 and lu <= 0:
                return 0.0
            prod *= lam_l / k * (lu / k) ** n
        for m in range(1, phi + 1):
            prod /= spec.eta(m)
        return self.pi0 * prod


def unnormalized_weight(spec: ModelSpec, x: QState) -> float:
    spec.check_state(x)
    w = 1.0
    m = 0
    for t, n in zip(x.tokens, x.counts):
        w *= spec.lambda_t(m, t)
        m |= 1 << t
        k = spec.k_total(m)
        w *= (spec.lambda_u(m) / k) ** n / k
    for j in range(1, x.population + 1):
        w /= spec.eta(j)
    return w


def _realizations(labels, seq):
    K = len(labels)
    for tup in permutations(range(K), len(seq)):
        if all(labels[t] == l for t, l in zip(tup, seq)):
            yield tup


def check_indistinguishable(spec: ModelSpec, labels, rel: float = 1e-10) -> None:
    """Tokens sharing a label must be interchangeable in every rate; raise otherwise."""
    K = spec.n_tokens
    full = (1 << K) - 1

    def differ(a, b):
        return abs(a - b) > rel * max(abs(a), abs(b), 1e-300)

    for s in range(K):
        for t in range(s + 1, K):
            if labels[s] != labels[t]:
                continue
            if spec.compatible_classes(s) != spec.compatible_classes(t):
                raise NotIndistinguishable(f"tokens {s} and {t} serve different classes", (s, t))
            others = full & ~(1 << s) & ~(1 << t)
            sub = others
            while True:
                if differ(spec.lambda_t(sub, s), spec.lambda_t(sub, t)):
                    raise NotIndistinguishable(f"claim rates of {s} and {t} differ", (s, t, tokens_of(sub)))
                if differ(spec.k_total(sub | 1 << s), spec.k_total(sub | 1 << t)):
                    raise NotIndistinguishable(f"k differs when adding {s} or {t}", (s, t, tokens_of(sub)))
                for u in tokens_of(others & ~sub):
                    if differ(spec.lambda_t(sub | 1 << s, u), spec.lambda_t(sub | 1 << t, u)):
                        raise NotIndistinguishable(
                            f"claim rate of {u} depends on whether {s} or {t} is taken", (s, t, u))
                if sub == 0:
                    break
                sub = (sub - 1) & others


def measure_for(spec: ModelSpec, **kw) -> StationaryMeasure:
    return StationaryMeasure(spec, **kw)


def permutation_ratio(spec: ModelSpec, order_a, order_b) -> float:
    """Predicted pi(x_a)/pi(x_b) for states differing only in active-token order."""
    def pl(order):
        p, m = 1.0, 0
        for t in order:
            p *= spec.lambda_t(m, t)
            m |= 1 << t
        return p

    def pk(order):
        p, m = 1.0, 0
        for t in order:
            m |= 1 << t
            p *= spec.k_total(m)
        return p

    return pl(order_a) / pl(order_b) * pk(order_b) / pk(order_a)


__all__ = [
    "StationaryMeasure", "TupleTerm", "Series", "inactive_series", "unnormalized_weight",
    "check_indistinguishable", "permutation_ratio", "mask_of",
]
