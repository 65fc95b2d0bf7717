"""Assignment rules: which available token an arriving customer claims.

A rule provides the aggregate claim rate lambda_t(S) of every available
token and, where it is defined, the class-conditional choice law that the
simulator needs.  Only the aggregate rates enter the product form.
"""

from __future__ import annotations

from math import comb

from .errors import ConfigurationError
from .model import parse_subset_key, subset_key, tokens_of


class AssignmentRule:
    name = "abstract"

    def rate(self, spec, mask: int, t: int) -> float:
        """lambda_t(S) summed over classes, from the class-conditional law."""
        total = 0.0
        for c, cm in enumerate(spec.class_masks):
            if cm >> t & 1 and cm & ~mask:
                for tok, p in self.choice(spec, c, mask):
                    if tok == t:
                        total += spec.classes[c].rate * p
        return total

    def choice(self, spec, c: int, mask: int) -> list:
        """[(token, probability)] for an arriving class-c customer, S = mask."""
        raise ConfigurationError(f"assignment rule {self.name!r} has no class-conditional law")

    @property
    def has_choice(self) -> bool:
        return True

    def scaled(self, factor: float) -> "AssignmentRule":
        return self

    def to_dict(self) -> dict:
        return {"rule": self.name}


class UniformRule(AssignmentRule):
    """Claim any available compatible token with equal probability."""

    name = "uniform"

    def choice(self, spec, c, mask):
        avail = tokens_of(spec.class_masks[c] & ~mask)
        if not avail:
            return []
        p = 1.0 / len(avail)
        return [(t, p) for t in avail]


class DedicatedRule(UniformRule):
    """Every class owns exactly one token."""

    name = "dedicated"

    def choice(self, spec, c, mask):
        cm = spec.class_masks[c]
        if cm & (cm - 1):
            raise ConfigurationError(f"class {c} has more than one token under a dedicated rule")
        return [] if cm & mask else [(tokens_of(cm)[0], 1.0)]


class PriorityRule(AssignmentRule):
    """Claim the available compatible token that comes first in `order`."""

    name = "priority"

    def __init__(self, order):
        self.order = tuple(order)

    def choice(self, spec, c, mask):
        cm = spec.class_masks[c] & ~mask
        for t in self.order:
            if cm >> t & 1:
                return [(t, 1.0)]
        return []

    def to_dict(self):
        return {"rule": self.name, "order": list(self.order)}


class RedundancyCOSRule(AssignmentRule):
    """Closed-form claim rates for redundancy-d with uniform tie-breaking.

    Depends on |S| only: a tagged available token is claimed by classes that
    see it among `a` available compatible tokens, counted binomially.
    """

    name = "redundancy_cos"

    def __init__(self, K: int, d: int, lam: float):
        self.K, self.d, self.lam = K, d, float(lam)

    def rate(self, spec, mask, t):
        K, d = self.K, self.d
        j = bin(mask).count("1") + 1
        total = 0.0
        for a in range(1, min(K - j + 1, d) + 1):
            total += self.lam / comb(K, d) / a * comb(K - j, a - 1) * comb(j - 1, d - a)
        return total

    def choice(self, spec, c, mask):
        return UniformRule.choice(self, spec, c, mask)

    def scaled(self, factor):
        return RedundancyCOSRule(self.K, self.d, self.lam * factor)

    def to_dict(self):
        return {"rule": self.name, "K": self.K, "d": self.d, "lambda": self.lam}


class TableRule(AssignmentRule):
    """Explicit lambda_t(S) table keyed by (subset mask, token).

    Missing entries are zero.  There is no class-conditional law, so such a
    model can be solved but not simulated.
    """

    name = "table"

    def __init__(self, table):
        self.table = {(int(m), int(t)): float(v) for (m, t), v in table.items()}

    def rate(self, spec, mask, t):
        return self.table.get((mask, t), 0.0)

    @property
    def has_choice(self):
        return False

    def scaled(self, factor):
        return TableRule({k: v * factor for k, v in self.table.items()})

    def to_dict(self):
        rows = {}
        for (m, t), v in sorted(self.table.items()):
            rows.setdefault(subset_key(m), {})[str(t)] = v
        return {"rule": self.name, "table": rows}

    @classmethod
    def from_rows(cls, rows: dict) -> "TableRule":
        table = {}
        for key, entries in rows.items():
            m = parse_subset_key(str(key))
            for t, v in entries.items():
                table[(m, int(t))] = float(v)
        return cls(table)

    @classmethod
    def from_spec(cls, spec) -> "TableRule":
        """Tabulate the aggregate rates of an existing spec."""
        table = {}
        for m in range(1 << spec.n_tokens):
            for t in range(spec.n_tokens):
                if not m >> t & 1:
                    v = spec.lambda_t(m, t)
                    if v:
                        table[(m, t)] = v
        return cls(table)


RULES = {
    "uniform": UniformRule,
    "dedicated": DedicatedRule,
    "priority": PriorityRule,
    "redundancy_cos": RedundancyCOSRule,
    "table": TableRule,
}
