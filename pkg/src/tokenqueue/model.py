"""Core data types: model specification, state descriptor and state enumeration.

Token subsets are represented as integer bitmasks throughout (bit t set means
token t is in the subset).  Ordered token tuples are plain tuples of ints.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Mapping, Sequence

from .errors import ConfigurationError, NegativeRate, UnreachableState

MAX_TOKENS = 20
REL_TOL = 1e-10


# ---------------------------------------------------------------------------
# subset helpers


def mask_of(tokens: Iterable[int]) -> int:
    m = 0
    for t in tokens:
        m |= 1 << t
    return m


def tokens_of(mask: int) -> tuple[int, ...]:
    out = []
    t = 0
    while mask:
        if mask & 1:
            out.append(t)
        mask >>= 1
        t += 1
    return tuple(out)


def popcount(mask: int) -> int:
    return bin(mask).count("1")


def subset_key(mask: int) -> str:
    """Canonical text key: sorted token ids joined by '+'; the empty set is ''."""
    return "+".join(str(t) for t in tokens_of(mask))


def parse_subset_key(key: str) -> int:
    key = key.strip()
    if not key:
        return 0
    try:
        return mask_of(int(p) for p in key.split("+"))
    except ValueError as exc:
        raise ConfigurationError(f"bad subset key {key!r}") from exc


def close(a: float, b: float, rel: float = REL_TOL, scale: float = 1.0) -> bool:
    return abs(a - b) <= rel * max(abs(a), abs(b), 1e-3 * scale)


# ---------------------------------------------------------------------------
# eta


class Eta:
    """Population-dependent speed factor eta(j), j >= 1.

    ``values[j-1]`` gives eta(j) for j <= len(values); beyond that eta equals
    ``tail``.  Alternatively a nondecreasing callable can be supplied together
    with its limit (possibly ``math.inf``).
    """

    def __init__(self, values: Sequence[float] = (), tail: float | None = 1.0,
                 func: Callable[[int], float] | None = None, limit: float | None = None):
        self.values = tuple(float(v) for v in values)
        self.func = func
        if func is not None:
            if limit is None:
                raise ConfigurationError("a functional eta needs a declared limit")
            self.tail = None
            self.limit = float(limit)
        else:
            if tail is None:
                raise ConfigurationError("eta needs a tail constant")
            self.tail = float(tail)
            self.limit = self.tail
        for j, v in enumerate(self.values, start=1):
            if not v > 0:
                raise ConfigurationError(f"eta({j}) = {v} is not positive")
        if self.tail is not None and not self.tail > 0:
            raise ConfigurationError("eta tail must be positive")

    @classmethod
    def constant(cls, value: float = 1.0) -> "Eta":
        return cls((), value)

    @classmethod
    def from_function(cls, f: Callable[[int], float], upto: int, tail: float | None = None) -> "Eta":
        """Tabulate f(1..upto); the tail defaults to f(upto)."""
        vals = [f(j) for j in range(1, upto + 1)]
        return cls(vals, vals[-1] if tail is None else tail)

    def __call__(self, j: int) -> float:
        if j <= len(self.values):
            return self.values[j - 1]
        if self.func is not None:
            v = float(self.func(j))
            if not v > 0:
                raise ConfigurationError(f"eta({j}) = {v} is not positive")
            return v
        return self.tail

    @property
    def is_constant(self) -> bool:
        return self.func is None and all(v == self.tail for v in self.values)

    def floor_beyond(self, m: int) -> float:
        """A lower bound on eta(j) for all j > m."""
        if self.func is not None:
            # nondecreasing by contract
            return self(m + 1)
        rest = self.values[m:]
        return min(min(rest), self.tail) if rest else self.tail

    def inv_cumprod(self, start: int, count: int) -> list[float]:
        """[prod_{m=start+1}^{start+r} 1/eta(m) for r = 0..count]."""
        out = [1.0]
        acc = 1.0
        for m in range(start + 1, start + count + 1):
            acc /= self(m)
            out.append(acc)
        return out

    def to_dict(self) -> dict:
        if self.func is not None:
            raise ConfigurationError("functional eta cannot be serialized")
        return {"values": list(self.values), "tail": self.tail}

    def __repr__(self) -> str:
        if self.func is not None:
            return f"Eta(func={self.func!r}, limit={self.limit})"
        return f"Eta(values={self.values}, tail={self.tail})"


# ---------------------------------------------------------------------------
# service-rate families


class SetFunctionRates:
    """Rates given by a set function k over token subsets (k(empty) = 0)."""

    kind = "set_function"

    def __init__(self, k: Callable[[int], float] | Mapping[int, float]):
        self._source = k
        if isinstance(k, Mapping):
            table = dict(k)
            self._fn = lambda m: table.get(m, 0.0) if m else 0.0
            self.table = table
        else:
            self._fn = k
            self.table = None
        self._cache: dict[int, float] = {}

    def k(self, mask: int) -> float:
        if mask == 0:
            return 0.0
        v = self._cache.get(mask)
        if v is None:
            v = float(self._fn(mask))
            self._cache[mask] = v
        return v

    def s(self, prefix: Sequence[int]) -> float:
        full = mask_of(prefix)
        return self.k(full) - self.k(full & ~(1 << prefix[-1]))


class PrefixRates:
    """Rates given explicitly as s_j(T_1..T_j) on ordered prefixes.

    k(S) is taken along the sorted order of S; whether that is order-free is
    for the validator to decide.
    """

    kind = "prefix_table"

    def __init__(self, table: Mapping[tuple[int, ...], float]):
        self.table = {tuple(p): float(v) for p, v in table.items()}

    def s(self, prefix: Sequence[int]) -> float:
        p = tuple(prefix)
        if p not in self.table:
            raise ConfigurationError(f"no rate given for prefix {p}")
        v = self.table[p]
        if v < 0:
            raise NegativeRate(f"s rate {v} < 0 for prefix {p}")
        return v

    def k_along(self, order: Sequence[int]) -> float:
        return sum(self.s(order[: j + 1]) for j in range(len(order)))

    def k(self, mask: int) -> float:
        return self.k_along(tokens_of(mask))


# ---------------------------------------------------------------------------
# classes, spec


@dataclass(frozen=True)
class CustomerClass:
    rate: float
    tokens: frozenset
    name: str = ""

    @property
    def mask(self) -> int:
        return mask_of(self.tokens)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    n_tokens: int
    classes: tuple
    assignment: object
    rates: object
    eta: Eta = field(default_factory=Eta.constant)
    token_labels: tuple | None = None
    fifo_classes: frozenset = frozenset()
    g_kind: str | None = None
    name: str = "model"
    token_names: tuple | None = None
    source: dict | None = None

    def __post_init__(self):
        K = self.n_tokens
        if K < 1:
            raise ConfigurationError("need at least one token")
        if K > MAX_TOKENS:
            raise ConfigurationError(f"{K} tokens exceeds the limit of {MAX_TOKENS}")
        if not self.classes:
            raise ConfigurationError("need at least one customer class")
        object.__setattr__(self, "classes", tuple(self.classes))
        used = 0
        for c, cl in enumerate(self.classes):
            if not cl.rate > 0 or not math.isfinite(cl.rate):
                raise ConfigurationError(f"class {c} has non-positive rate {cl.rate}")
            if not cl.tokens:
                raise ConfigurationError(f"class {c} has an empty token set")
            if any(not (0 <= t < K) for t in cl.tokens):
                raise ConfigurationError(f"class {c} refers to an unknown token")
            used |= cl.mask
        if used != (1 << K) - 1:
            missing = tokens_of(((1 << K) - 1) & ~used)
            raise ConfigurationError(f"tokens {missing} are compatible with no class")
        if self.token_labels is not None and len(self.token_labels) != K:
            raise ConfigurationError("token_labels must give one label per token")
        object.__setattr__(self, "_lam_t", {})
        object.__setattr__(self, "_lam_u", {})

    # -- basic quantities -------------------------------------------------

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def full_mask(self) -> int:
        return (1 << self.n_tokens) - 1

    @cached_property
    def total_rate(self) -> float:
        return sum(cl.rate for cl in self.classes)

    @cached_property
    def class_masks(self) -> tuple:
        return tuple(cl.mask for cl in self.classes)

    @cached_property
    def class_rates(self) -> tuple:
        return tuple(cl.rate for cl in self.classes)

    def token_name(self, t: int) -> str:
        return self.token_names[t] if self.token_names else f"t{t + 1}"

    def compatible_classes(self, t: int) -> tuple:
        return tuple(c for c, m in enumerate(self.class_masks) if m >> t & 1)

    def u_set(self, mask: int) -> frozenset:
        return frozenset(c for c, m in enumerate(self.class_masks) if m & ~mask == 0)

    def lambda_u(self, mask: int) -> float:
        v = self._lam_u.get(mask)
        if v is None:
            v = sum(self.classes[c].rate for c in sorted(self.u_set(mask)))
            self._lam_u[mask] = v
        return v

    def lambda_t(self, mask: int, t: int) -> float:
        """Aggregate claim rate of available token t when `mask` is unavailable."""
        if mask >> t & 1:
            raise ValueError(f"token {t} is not available")
        row = self._lam_t.get(mask)
        if row is None:
            row = {}
            self._lam_t[mask] = row
        v = row.get(t)
        if v is None:
            v = float(self.assignment.rate(self, mask, t))
            if v < 0:
                raise NegativeRate(f"lambda_{t}({subset_key(mask)}) = {v}")
            row[t] = v
        return v

    def k_total(self, mask: int) -> float:
        return self.rates.k(mask)

    def s_rate(self, prefix: Sequence[int]) -> float:
        v = self.rates.s(tuple(prefix))
        if v < -REL_TOL * max(1.0, self.k_total(mask_of(prefix))):
            raise NegativeRate(f"s rate {v} < 0 for prefix {tuple(prefix)}")
        return max(v, 0.0)

    def mu_token(self, x: "QState", j: int) -> float:
        """Departure rate of the holder of the j-th active token (0-based j)."""
        return self.eta(x.population) * self.s_rate(x.tokens[: j + 1])

    def mu_total(self, x: "QState") -> float:
        if not x.tokens:
            return 0.0
        return self.eta(x.population) * self.k_total(mask_of(x.tokens))

    def alpha(self, prefix: Sequence[int]) -> float:
        m = mask_of(prefix)
        return self.lambda_u(m) / self.k_total(m)

    def is_reachable(self, x: "QState") -> bool:
        m = 0
        for t, n in zip(x.tokens, x.counts):
            m |= 1 << t
            if n > 0 and self.lambda_u(m) <= 0:
                return False
        return True

    def check_state(self, x: "QState") -> None:
        if len(set(x.tokens)) != len(x.tokens):
            raise UnreachableState(f"repeated token in {x}")
        if any(not 0 <= t < self.n_tokens for t in x.tokens):
            raise UnreachableState(f"unknown token in {x}")
        if any(n < 0 for n in x.counts):
            raise UnreachableState(f"negative count in {x}")
        if not self.is_reachable(x):
            raise UnreachableState(f"{x} has inactive customers that no class can supply")

    def with_rates(self, scale: float) -> "ModelSpec":
        """Copy with every arrival rate multiplied by `scale`."""
        classes = tuple(CustomerClass(cl.rate * scale, cl.tokens, cl.name) for cl in self.classes)
        assignment = self.assignment.scaled(scale)
        return ModelSpec(self.n_tokens, classes, assignment, self.rates, self.eta,
                         self.token_labels, self.fifo_classes, self.g_kind,
                         self.name, self.token_names, None)


# ---------------------------------------------------------------------------
# states


@dataclass(frozen=True, slots=True)
class QState:
    tokens: tuple = ()
    counts: tuple = ()

    def __post_init__(self):
        if len(self.tokens) != len(self.counts):
            raise ValueError("tokens and counts differ in length")

    @classmethod
    def of(cls, *pairs) -> "QState":
        """QState.of(t1, n1, t2, n2, ...)."""
        if len(pairs) % 2:
            raise ValueError("expected alternating token, count arguments")
        return cls(tuple(pairs[0::2]), tuple(pairs[1::2]))

    @property
    def length(self) -> int:
        return len(self.tokens)

    @property
    def population(self) -> int:
        return len(self.tokens) + sum(self.counts)

    @property
    def inactive(self) -> int:
        return sum(self.counts)

    @property
    def mask(self) -> int:
        return mask_of(self.tokens)

    def __str__(self) -> str:
        if not self.tokens:
            return "(0)"
        return "(" + ", ".join(f"t{t + 1}, {n}" for t, n in zip(self.tokens, self.counts)) + ")"

    def key(self) -> str:
        """Compact machine key, e.g. '0:2|1:0'."""
        return "|".join(f"{t}:{n}" for t, n in zip(self.tokens, self.counts))

    @classmethod
    def from_key(cls, key: str) -> "QState":
        if not key:
            return cls()
        toks, cnts = [], []
        for part in key.split("|"):
            t, n = part.split(":")
            toks.append(int(t))
            cnts.append(int(n))
        return cls(tuple(toks), tuple(cnts))


@dataclass(frozen=True, slots=True)
class LabeledQState:
    labels: tuple = ()
    counts: tuple = ()

    @property
    def population(self) -> int:
        return len(self.labels) + sum(self.counts)

    def __str__(self) -> str:
        if not self.labels:
            return "(0)"
        return "(" + ", ".join(f"L{l}, {n}" for l, n in zip(self.labels, self.counts)) + ")"


def compositions(total: int, parts: int, allowed: Sequence[bool]):
    """Vectors of `parts` nonnegative ints summing to at most `total`.

    Entry j is forced to zero when allowed[j] is False.  Yields in
    lexicographic order.
    """
    if parts == 0:
        yield ()
        return
    if not allowed[0]:
        for rest in compositions(total, parts - 1, allowed[1:]):
            yield (0,) + rest
        return
    for first in range(total + 1):
        for rest in compositions(total - first, parts - 1, allowed[1:]):
            yield (first,) + rest


def token_tuples(n_tokens: int, max_len: int | None = None):
    """All ordered tuples of distinct tokens, sorted lexicographically."""
    K = n_tokens
    L = K if max_len is None else min(K, max_len)
    tuples = [()]
    for i in range(1, L + 1):
        tuples.extend(itertools.permutations(range(K), i))
    tuples.sort()
    return tuples


def enumerate_states(spec: ModelSpec, bound: int) -> list[QState]:
    """Every reachable state with population at most `bound`, each once."""
    if bound < 0:
        raise ValueError("bound must be nonnegative")
    out = []
    for tup in token_tuples(spec.n_tokens, bound):
        i = len(tup)
        allowed = []
        m = 0
        for t in tup:
            m |= 1 << t
            allowed.append(spec.lambda_u(m) > 0)
        for n in compositions(bound - i, i, allowed):
            out.append(QState(tup, n))
    return out
