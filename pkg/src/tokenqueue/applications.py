"""Builders for the standard application models and the order-independent
(OI) queue embedding."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

from .assignment import DedicatedRule, RedundancyCOSRule, UniformRule
from .errors import ConfigurationError, Divergence
from .model import (CustomerClass, Eta, LabeledQState, ModelSpec, SetFunctionRates,
                    popcount, tokens_of)


class FjEvaluator:
    """Coverage count: size of the union of the sets attached to the selected tokens."""

    def __init__(self, sets: Sequence[frozenset], scale: float = 1.0):
        self.sets = [frozenset(s) for s in sets]
        self.scale = float(scale)
        self._cache = {}

    def count(self, mask: int) -> int:
        v = self._cache.get(mask)
        if v is None:
            cover = set()
            for t in tokens_of(mask):
                cover |= self.sets[t]
            v = len(cover)
            self._cache[mask] = v
        return v

    def __call__(self, mask: int) -> float:
        return self.scale * self.count(mask)


def build_mmk_hetero(mu: Sequence[float], lam: float) -> ModelSpec:
    """Single class, K servers with rates mu, uniform choice among idle servers."""
    mu = tuple(float(m) for m in mu)
    K = len(mu)
    if K < 1 or any(m <= 0 for m in mu):
        raise ConfigurationError("need at least one server with positive rate")
    rates = SetFunctionRates(lambda m: math.fsum(mu[t] for t in tokens_of(m)))
    return ModelSpec(
        n_tokens=K,
        classes=(CustomerClass(float(lam), frozenset(range(K)), "c1"),),
        assignment=UniformRule(),
        rates=rates,
        eta=Eta.constant(1.0),
        token_labels=_labels_from_values(mu),
        fifo_classes=frozenset(),
        g_kind="single",
        name=f"mmk_hetero(K={K})",
        source={"application": "mmk_hetero", "mu": list(mu), "lambda": float(lam)},
    )


def _labels_from_values(values):
    seen = {}
    return tuple(seen.setdefault(v, len(seen)) for v in values)


def build_msccc(k_servers: int, rates: Sequence[float], mu: float) -> ModelSpec:
    """At most one customer per class in service, k identical servers."""
    if k_servers < 1:
        raise ConfigurationError("need at least one server")
    n = len(rates)
    ksv = SetFunctionRates(lambda m: min(popcount(m), k_servers) * float(mu))
    return ModelSpec(
        n_tokens=n,
        classes=tuple(CustomerClass(float(r), frozenset({c}), f"c{c + 1}") for c, r in enumerate(rates)),
        assignment=DedicatedRule(),
        rates=ksv,
        eta=Eta.constant(1.0),
        fifo_classes=frozenset(range(n)),
        g_kind="dedicated",
        name=f"msccc(k={k_servers})",
        source={"application": "msccc", "k": k_servers, "rates": [float(r) for r in rates], "mu": float(mu)},
    )


def redundancy_classes(K: int, d: int) -> list:
    if not 1 <= d <= K:
        raise ConfigurationError("need 1 <= d <= K")
    return [frozenset(c) for c in itertools.combinations(range(K), d)]


def build_redundancy_cos(K: int, d: int, lam: float, mu: float, rule: str = "formula") -> ModelSpec:
    """Redundancy-d cancel-on-start: token per server, class per d-subset."""
    subsets = redundancy_classes(K, d)
    per = float(lam) / len(subsets)
    assignment = RedundancyCOSRule(K, d, lam) if rule == "formula" else UniformRule()
    return ModelSpec(
        n_tokens=K,
        classes=tuple(CustomerClass(per, s, "c" + "".join(str(t + 1) for t in sorted(s))) for s in subsets),
        assignment=assignment,
        rates=SetFunctionRates(lambda m: popcount(m) * float(mu)),
        eta=Eta.constant(1.0),
        token_labels=(0,) * K,
        fifo_classes=frozenset(),
        g_kind="cos_uniform",
        name=f"redundancy_cos(K={K},d={d})",
        source={"application": "redundancy_cos", "K": K, "d": d, "lambda": float(lam), "mu": float(mu)},
    )


def build_redundancy_coc(K: int, d: int, lam: float, mu: float) -> ModelSpec:
    """Redundancy-d cancel-on-completion: token per class, k = mu * servers covered."""
    subsets = redundancy_classes(K, d)
    per = float(lam) / len(subsets)
    fj = FjEvaluator(subsets, scale=mu)
    n = len(subsets)
    return ModelSpec(
        n_tokens=n,
        classes=tuple(CustomerClass(per, frozenset({c}), "c" + "".join(str(t + 1) for t in sorted(s)))
                      for c, s in enumerate(subsets)),
        assignment=DedicatedRule(),
        rates=SetFunctionRates(fj),
        eta=Eta.constant(1.0),
        fifo_classes=frozenset(range(n)),
        g_kind="dedicated",
        name=f"redundancy_coc(K={K},d={d})",
        source={"application": "redundancy_coc", "K": K, "d": d, "lambda": float(lam), "mu": float(mu)},
    )


def matching_eta(A: Callable[[int], float] | Sequence[float] | float, tail_from: int | None = None) -> Eta:
    if isinstance(A, Eta):
        return A
    if isinstance(A, (int, float)):
        return Eta.constant(float(A))
    if callable(A):
        if tail_from is None:
            raise ConfigurationError("a server-rate function needs the point where it turns constant")
        return Eta.from_function(A, tail_from)
    vals = [float(v) for v in A]
    return Eta(vals, vals[-1])


def build_matching(rates: Sequence[float], compat: Sequence[Sequence[int]], A,
                   tail_from: int | None = None) -> ModelSpec:
    """FCFS matching: class c can be matched by the server types in compat[c].

    Each server type arrives at rate A(n) with n customers present.
    """
    if len(rates) != len(compat):
        raise ConfigurationError("one compatibility set per class")
    sets = [frozenset(int(v) for v in s) for s in compat]
    if any(not s for s in sets):
        raise ConfigurationError("every class needs a compatible server type")
    n = len(rates)
    eta = matching_eta(A, tail_from)
    return ModelSpec(
        n_tokens=n,
        classes=tuple(CustomerClass(float(r), frozenset({c}), f"c{c + 1}") for c, r in enumerate(rates)),
        assignment=DedicatedRule(),
        rates=SetFunctionRates(FjEvaluator(sets)),
        eta=eta,
        fifo_classes=frozenset(range(n)),
        g_kind="dedicated",
        name="matching",
        source={"application": "matching", "rates": [float(r) for r in rates],
                "compat": [sorted(s) for s in sets]},
    )


def coc_as_matching(K: int, d: int, lam: float, mu: float) -> ModelSpec:
    """The matching model with one class per d-subset whose path equals redundancy COC."""
    subsets = redundancy_classes(K, d)
    per = float(lam) / len(subsets)
    return build_matching([per] * len(subsets), [sorted(s) for s in subsets], float(mu))


# ---------------------------------------------------------------------------
# OI queues


@dataclass(frozen=True, eq=False)
class OIQueueSpec:
    """Order-independent queue: k_oi maps a per-class count vector to the total rate."""

    rates: tuple
    k_oi: Callable[[tuple], float]
    eta: Eta = Eta.constant(1.0)
    name: str = "oi"

    @property
    def n_classes(self) -> int:
        return len(self.rates)

    def k(self, counts) -> float:
        return float(self.k_oi(tuple(counts)))


def msccc_oi(k_servers: int, rates, mu: float) -> OIQueueSpec:
    return OIQueueSpec(tuple(float(r) for r in rates),
                       lambda n: min(sum(1 for v in n if v > 0), k_servers) * float(mu), name="msccc_oi")


def erlang_c_oi(K: int, lam: float, mu: float) -> OIQueueSpec:
    return OIQueueSpec((float(lam),), lambda n: min(n[0], K) * float(mu), name="erlang_c_oi")


class OIMeasure:
    """Normalized OI stationary law, normalizer by dynamic programming over count vectors.

    The level masses satisfy L_{n+1} <= rho_n L_n with
    rho_n = max_m sum_c lambda_c / (eta k(m + e_c)) over level-n vectors m;
    rho_n is nonincreasing in n because k is monotone, so once it drops below
    one the remaining mass is bounded geometrically.
    """

    def __init__(self, oi: OIQueueSpec, tol: float = 1e-16, max_level: int = 5000):
        self.oi = oi
        C = oi.n_classes
        lam = oi.rates
        level = {(0,) * C: 1.0}
        masses = [1.0]
        total = [1.0]
        self.tail_bound = math.inf
        for n in range(1, max_level + 1):
            nxt = {}
            eta = oi.eta(n)
            for m, f in level.items():
                for c in range(C):
                    m2 = m[:c] + (m[c] + 1,) + m[c + 1:]
                    nxt[m2] = nxt.get(m2, 0.0) + f * lam[c]
            for m2 in nxt:
                nxt[m2] /= eta * oi.k(m2)
            level = nxt
            L = math.fsum(level.values())
            masses.append(L)
            total.append(L)
            eta_f = oi.eta.floor_beyond(n)
            rho = max(math.fsum(lam[c] / oi.k(m[:c] + (m[c] + 1,) + m[c + 1:]) for c in range(C))
                      for m in level) / eta_f
            if rho < 1.0:
                tail = L * rho / (1.0 - rho)
                if tail < tol * math.fsum(total):
                    self.tail_bound = tail
                    break
        else:
            raise Divergence("OI normalizer did not converge; the queue may be unstable")
        self.level_mass = masses
        self.normalizer = math.fsum(total)
        self.pi0 = 1.0 / self.normalizer

    def weight(self, seq: Sequence[int]) -> float:
        oi = self.oi
        counts = [0] * oi.n_classes
        w = 1.0
        for i, c in enumerate(seq, start=1):
            counts[c] += 1
            w *= oi.rates[c] / (oi.eta(i) * oi.k(counts))
        return w

    def __call__(self, seq: Sequence[int]) -> float:
        return self.pi0 * self.weight(seq)

    def population_law(self, bound: int) -> list:
        return [self.pi0 * m for m in self.level_mass[: bound + 1]] + \
            [0.0] * max(0, bound + 1 - len(self.level_mass))


_oi_cache: dict = {}


def oi_stationary(oi: OIQueueSpec, seq: Sequence[int]) -> float:
    meas = _oi_cache.get(id(oi))
    if meas is None or meas.oi is not oi:
        meas = OIMeasure(oi)
        _oi_cache[id(oi)] = meas
    return meas(seq)


def tau(seq: Sequence[int], caps: Sequence[float]) -> LabeledQState:
    """Map an OI class sequence to the label state: the first caps[c] of class c hold tokens."""
    active = {}
    labels, counts = [], []
    for c in seq:
        if active.get(c, 0) < caps[c]:
            active[c] = active.get(c, 0) + 1
            labels.append(c)
            counts.append(0)
        else:
            if not counts:
                raise ValueError("an inactive customer cannot precede every active one")
            counts[-1] += 1
    return LabeledQState(tuple(labels), tuple(counts))


def build_from_oi(oi: OIQueueSpec, caps: Sequence[float]):
    """Token model for an OI queue with caps[c] indistinguishable tokens per class.

    With all caps finite this yields a ModelSpec whose token labels are the
    classes.  Infinite caps give back an OIMeasure: that embedding has
    infinitely many tokens and is evaluated through the OI formula directly.
    """
    if len(caps) != oi.n_classes:
        raise ConfigurationError("one cap per class")
    if any(math.isinf(c) for c in caps):
        return OIMeasure(oi)
    caps = [int(c) for c in caps]
    if any(c < 1 for c in caps):
        raise ConfigurationError("caps must be positive")
    owner = [c for c, n in enumerate(caps) for _ in range(n)]
    K = len(owner)
    classes = tuple(CustomerClass(oi.rates[c], frozenset(t for t in range(K) if owner[t] == c), f"c{c + 1}")
                    for c in range(oi.n_classes))

    def k(mask):
        counts = [0] * oi.n_classes
        for t in tokens_of(mask):
            counts[owner[t]] += 1
        return oi.k(counts)

    # customers beyond the cap must not add service rate, otherwise tokens do not capture the queue
    for c in range(oi.n_classes):
        full = list(caps)
        over = list(caps)
        over[c] += 1
        if abs(oi.k(over) - oi.k(full)) > 1e-12 * max(1.0, oi.k(full)):
            raise ConfigurationError(f"class {c} gains service beyond its cap of {caps[c]} tokens")
    return ModelSpec(
        n_tokens=K,
        classes=classes,
        assignment=UniformRule(),
        rates=SetFunctionRates(k),
        eta=oi.eta,
        token_labels=tuple(owner),
        fifo_classes=frozenset(range(oi.n_classes)),
        g_kind="disjoint",
        name=f"{oi.name}_tokens",
    )


# ---------------------------------------------------------------------------
# reference parameters used by the bundled models and the acceptance suite

REFERENCE = {
    "mmk_hetero": dict(mu=(1.0, 2.0, 3.0), lam=4.0),
    "msccc": dict(k_servers=2, rates=(0.5, 0.4, 0.3), mu=1.0),
    "redundancy_cos": dict(K=3, d=2, lam=1.5, mu=1.0),
    "redundancy_coc": dict(K=3, d=2, lam=1.5, mu=1.0),
    "matching": dict(rates=(1.0, 0.8), compat=((0, 1), (1, 2)), A=lambda n: 1.0 + n / 10.0, tail_from=20),
}


def reference_models() -> dict:
    r = REFERENCE
    return {
        "mmk_hetero": build_mmk_hetero(**r["mmk_hetero"]),
        "msccc": build_msccc(**r["msccc"]),
        "redundancy_cos": build_redundancy_cos(**r["redundancy_cos"]),
        "redundancy_coc": build_redundancy_coc(**r["redundancy_coc"]),
        "matching": build_matching(**r["matching"]),
    }
