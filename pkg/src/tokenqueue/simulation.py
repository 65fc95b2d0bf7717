"""Discrete-event simulators.

`simulate_token_queue` runs the token dynamics of any spec whose assignment
rule has a class-conditional law.  The native simulators implement the
redundancy and matching systems in their own terms (server queues, copies,
cancellation) and only translate to token states for observation.

All simulators share one observation scheme: customers are kept in arrival
order, each encoded as class * (K + 1) + token + 1 with token -1 when the
customer holds none.  Time spent in each encoded configuration is accumulated
per batch and decoded afterwards.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import ConfigurationError
from .model import ModelSpec, QState
from .validation import require_valid

CHUNK = 1 << 15


@dataclass(frozen=True)
class SimConfig:
    seed: int = 12345
    events: int = 200_000  # measured events per replication
    replications: int = 8
    batches: int = 32
    warmup: float | None = None  # time units; None picks ten relaxation times
    s_grid: tuple = (0.5, 1.0, 2.0)

    def __post_init__(self):
        if self.events <= 0 or self.replications < 1 or self.batches < 2:
            raise ConfigurationError("need events > 0, replications >= 1 and at least two batches")
        if self.events < self.batches:
            raise ConfigurationError("fewer events than batches")


@dataclass
class Estimate:
    mean: float
    se: float

    @property
    def half_width(self) -> float:
        return 1.96 * self.se


@dataclass
class SimStats:
    name: str
    n_tokens: int
    n_classes: int
    estimates: dict  # quantity name -> Estimate
    occupancy: dict  # QState key -> Estimate
    batches: int
    config: SimConfig
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "batches": self.batches,
            "estimates": {k: {"mean": v.mean, "se": v.se, "half_width": v.half_width}
                          for k, v in self.estimates.items()},
            "occupancy": {k: {"mean": v.mean, "se": v.se} for k, v in self.occupancy.items()},
        }


class _Rng:
    """Chunked draws from a Philox stream; exponentials with mean one and uniforms."""

    def __init__(self, seed_seq):
        self.gen = np.random.Generator(np.random.Philox(seed_seq))
        self._e, self._u = [], []

    def exp(self):
        if not self._e:
            self._e = self.gen.standard_exponential(CHUNK).tolist()
        return self._e.pop()

    def unif(self):
        if not self._u:
            self._u = self.gen.random(CHUNK).tolist()
        return self._u.pop()


# ---------------------------------------------------------------------------
# batch bookkeeping


class _Batch:
    __slots__ = ("occ", "waits", "sojourns", "duration")

    def __init__(self):
        self.occ = {}
        self.waits = []  # (class, W)
        self.sojourns = []  # (class, S)
        self.duration = 0.0


def _decode(key, K):
    base = K + 1
    tokens, counts = [], []
    for code in key:
        t = code % base - 1
        if t >= 0:
            tokens.append(t)
            counts.append(0)
        else:
            if not counts:
                raise RuntimeError("inactive customer ahead of every active one")
            counts[-1] += 1
    return QState(tuple(tokens), tuple(counts))


def _summarize(name, K, class_masks, batches_per_rep, cfg, fifo):
    """Turn raw batches into pooled estimates with batch-means standard errors."""
    C = len(class_masks)
    base = K + 1
    rows = []
    occ_rows = []
    decoded = {}
    for batch in (b for rep in batches_per_rep for b in rep):
        row = {}
        dur = batch.duration
        nq = [0.0] * C
        mq = [0.0] * C
        blocked = [0.0] * C
        occ = {}
        for key, tm in batch.occ.items():
            info = decoded.get(key)
            if info is None:
                x = _decode(key, K)
                n_c = [0] * C
                m_c = [0] * C
                for code in key:
                    c = code // base
                    m_c[c] += 1
                    if code % base == 0:
                        n_c[c] += 1
                mask = x.mask
                blk = [1 if cm & ~mask == 0 else 0 for cm in class_masks]
                info = (x.key(), n_c, m_c, blk)
                decoded[key] = info
            sk, n_c, m_c, blk = info
            f = tm / dur
            occ[sk] = occ.get(sk, 0.0) + f
            for c in range(C):
                nq[c] += n_c[c] * f
                mq[c] += m_c[c] * f
                blocked[c] += blk[c] * f
        for c in range(C):
            row[f"E[N^({c})]"] = nq[c]
            row[f"E[M^({c})]"] = mq[c]
            row[f"P_time(W_{c}>0)"] = blocked[c]
        row["E[N]"] = math.fsum(nq)
        row["E[M]"] = math.fsum(mq)
        w = np.array(batch.waits, dtype=float).reshape(-1, 2)
        s = np.array(batch.sojourns, dtype=float).reshape(-1, 2)
        for c in range(C):
            wc = w[w[:, 0] == c, 1]
            if len(wc):
                row[f"E[W_{c}]"] = wc.mean()
                row[f"P(W_{c}>0)"] = float((wc > 0).mean())
                for sv in cfg.s_grid:
                    row[f"LST_W_{c}({sv:g})"] = float(np.exp(-sv * wc).mean())
            if c in fifo:
                sc = s[s[:, 0] == c, 1]
                if len(sc):
                    row[f"E[S_{c}]"] = sc.mean()
                    for sv in cfg.s_grid:
                        row[f"LST_S_{c}({sv:g})"] = float(np.exp(-sv * sc).mean())
        if len(w):
            row["P(W>0)"] = float((w[:, 1] > 0).mean())
            row["E[W]"] = float(w[:, 1].mean())
        rows.append(row)
        occ_rows.append(occ)
    nb = len(rows)
    est = {}
    for q in sorted({k for r in rows for k in r}):
        vals = np.array([r[q] for r in rows if q in r])
        if len(vals) < 2:
            continue
        est[q] = Estimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals))))
    occupancy = {}
    for sk in {k for o in occ_rows for k in o}:
        vals = np.array([o.get(sk, 0.0) for o in occ_rows])
        occupancy[sk] = Estimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(nb)))
    return SimStats(name, K, C, est, occupancy, nb, cfg)


def _streams(cfg):
    return [_Rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(cfg.replications)]


def _batch_edges(cfg):
    per = cfg.events // cfg.batches
    return [per * (b + 1) for b in range(cfg.batches - 1)] + [cfg.events]


# ---------------------------------------------------------------------------
# generic token queue


def _warmup_time(spec: ModelSpec) -> float:
    drift = spec.eta.limit * spec.k_total(spec.full_mask) - spec.total_rate
    return 10.0 / max(drift, 1e-3)


def simulate_token_queue(spec: ModelSpec, cfg: SimConfig = SimConfig()) -> SimStats:
    require_valid(spec)
    if not spec.assignment.has_choice:
        raise ConfigurationError(
            "the assignment rule gives aggregate claim rates only; simulation needs a class-conditional rule")
    K = spec.n_tokens
    C = spec.n_classes
    lam = spec.total_rate
    class_cum = np.cumsum([cl.rate for cl in spec.classes]).tolist()
    class_masks = spec.class_masks
    warm = cfg.warmup if cfg.warmup is not None else _warmup_time(spec)
    edges = _batch_edges(cfg)
    base = K + 1

    choice_cache = {}

    def choose(c, mask, u):
        opts = choice_cache.get((c, mask))
        if opts is None:
            opts = [(t, p) for t, p in spec.assignment.choice(spec, c, mask) if p > 0]
            choice_cache[(c, mask)] = opts
        acc = 0.0
        for t, p in opts:
            acc += p
            if u < acc:
                return t
        return opts[-1][0] if opts else -1

    cumk_cache = {}

    def cumk(order):
        v = cumk_cache.get(order)
        if v is None:
            v, m = [], 0
            for t in order:
                m |= 1 << t
                v.append(spec.k_total(m))
            cumk_cache[order] = v
        return v

    eta_vals = []

    def eta(n):
        while len(eta_vals) <= n:
            eta_vals.append(spec.eta(len(eta_vals)) if eta_vals else 0.0)
        return eta_vals[n]

    out = []
    for rng in _streams(cfg):
        codes = []  # per customer code, arrival order
        arr = []  # arrival times
        mask = 0
        t = 0.0
        measuring = False
        n_ev = 0
        batches = []
        cur = None
        edge_i = 0
        while True:
            phi = len(codes)
            order = tuple(cd % base - 1 for cd in codes if cd % base)
            ck = cumk(order) if order else ()
            dep = eta(phi) * ck[-1] if order else 0.0
            total = lam + dep
            dt = rng.exp() / total
            if measuring:
                key = tuple(codes)
                cur.occ[key] = cur.occ.get(key, 0.0) + dt
                cur.duration += dt
            t += dt
            if not measuring and t >= warm:
                measuring = True
                cur = _Batch()
                batches.append(cur)
            u = rng.unif() * total
            if u < lam:
                c = 0
                while class_cum[c] <= u and c < C - 1:
                    c += 1
                tok = -1
                if class_masks[c] & ~mask:
                    tok = choose(c, mask, rng.unif())
                if tok >= 0:
                    mask |= 1 << tok
                    if measuring:
                        cur.waits.append((c, 0.0))
                codes.append(c * base + tok + 1)
                arr.append(t)
            else:
                v = (u - lam) / eta(phi)
                j = 0
                while j < len(ck) - 1 and ck[j] <= v:
                    j += 1
                # position of the j-th active customer
                idx = -1
                seen = -1
                for p, cd in enumerate(codes):
                    if cd % base:
                        seen += 1
                        if seen == j:
                            idx = p
                            break
                cd = codes.pop(idx)
                a = arr.pop(idx)
                c = cd // base
                tok = cd % base - 1
                if measuring:
                    cur.sojourns.append((c, t - a))
                bit = 1 << tok
                for p in range(len(codes)):
                    q = codes[p]
                    if q % base == 0 and class_masks[q // base] & bit:
                        codes[p] = q + tok + 1
                        if measuring:
                            cur.waits.append((q // base, t - arr[p]))
                        break
                else:
                    mask &= ~bit
            if measuring:
                n_ev += 1
                if n_ev >= edges[edge_i]:
                    edge_i += 1
                    if edge_i == len(edges):
                        break
                    cur = _Batch()
                    batches.append(cur)
        out.append(batches)
    return _summarize(spec.name, K, class_masks, out, cfg, spec.fifo_classes)


# ---------------------------------------------------------------------------
# native redundancy-d


def simulate_redundancy_native(K: int, d: int, lam: float, mu: float, mode: str,
                               cfg: SimConfig = SimConfig()) -> SimStats:
    """K parallel FCFS servers; each arrival copies itself to a uniform d-subset.

    COS: the first copy to start service cancels the others; an arrival that
    finds several of its servers idle picks one of them uniformly.
    COC: every server works on the oldest copy in its queue; the first copy
    to finish cancels the rest.

    Token observation: COS tokens are servers held by customers in service;
    COC tokens are classes, held by the oldest customer of each class.
    """
    from .applications import redundancy_classes

    mode = mode.upper()
    if mode not in ("COS", "COC"):
        raise ConfigurationError("mode must be COS or COC")
    if not 1 <= d <= K:
        raise ConfigurationError("need 1 <= d <= K")
    subsets = [tuple(sorted(s)) for s in redundancy_classes(K, d)]
    C = len(subsets)
    n_tok = K if mode == "COS" else C
    base = n_tok + 1
    warm = cfg.warmup if cfg.warmup is not None else 10.0 / max(K * mu - lam, 1e-3)
    edges = _batch_edges(cfg)
    cos = mode == "COS"
    if cos:
        class_masks = tuple(sum(1 << s for s in sub) for sub in subsets)
    else:
        class_masks = tuple(1 << c for c in range(C))

    out = []
    for rng in _streams(cfg):
        queues = [deque() for _ in range(K)]  # customer ids with copies at each server
        serving = [None] * K  # customer id in service (COS), head (COC) is derived
        cust = {}  # id -> [class, arrival, started_or_token_time, alive]
        order = []  # ids in arrival order
        next_id = 0
        t = 0.0
        measuring = False
        n_ev = 0
        batches, cur, edge_i = [], None, 0
        while True:
            if cos:
                busy = [s for s in range(K) if serving[s] is not None]
            else:
                busy = [s for s in range(K) if queues[s]]
            total = lam + mu * len(busy)
            dt = rng.exp() / total
            if measuring:
                key = _native_key(order, cust, base, cos, serving)
                cur.occ[key] = cur.occ.get(key, 0.0) + dt
                cur.duration += dt
            t += dt
            if not measuring and t >= warm:
                measuring = True
                cur = _Batch()
                batches.append(cur)
            u = rng.unif() * total
            if u < lam:
                c = min(int(u / lam * C), C - 1)
                cid = next_id
                next_id += 1
                rec = [c, t, None]
                cust[cid] = rec
                order.append(cid)
                if cos:
                    idle = [s for s in subsets[c] if serving[s] is None]
                    if idle:
                        s = idle[min(int(rng.unif() * len(idle)), len(idle) - 1)]
                        serving[s] = cid
                        rec[2] = s
                        if measuring:
                            cur.waits.append((c, 0.0))
                    else:
                        for s in subsets[c]:
                            queues[s].append(cid)
                else:
                    for s in subsets[c]:
                        queues[s].append(cid)
                    if not any(cust[o][0] == c for o in order[:-1]):
                        if measuring:
                            cur.waits.append((c, 0.0))
            else:
                s = busy[min(int((u - lam) / mu), len(busy) - 1)]
                if cos:
                    cid = serving[s]
                    serving[s] = None
                    rec = cust.pop(cid)
                    order.remove(cid)
                    if measuring:
                        cur.sojourns.append((rec[0], t - rec[1]))
                    q = queues[s]
                    while q:
                        nxt = q.popleft()
                        r2 = cust.get(nxt)
                        if r2 is not None and r2[2] is None:
                            serving[s] = nxt
                            r2[2] = s
                            for s2 in subsets[r2[0]]:
                                if s2 != s:
                                    queues[s2].remove(nxt)
                            if measuring:
                                cur.waits.append((r2[0], t - r2[1]))
                            break
                else:
                    cid = queues[s][0]
                    rec = cust.pop(cid)
                    c = rec[0]
                    for s2 in subsets[c]:
                        queues[s2].remove(cid)
                    order.remove(cid)
                    if measuring:
                        cur.sojourns.append((c, t - rec[1]))
                        for o in order:
                            if cust[o][0] == c:
                                cur.waits.append((c, t - cust[o][1]))
                                break
            if measuring:
                n_ev += 1
                if n_ev >= edges[edge_i]:
                    edge_i += 1
                    if edge_i == len(edges):
                        break
                    cur = _Batch()
                    batches.append(cur)
        out.append(batches)
    name = f"native_redundancy_{mode.lower()}(K={K},d={d})"
    fifo = frozenset() if cos else frozenset(range(C))
    return _summarize(name, n_tok, class_masks, out, cfg, fifo)


def _native_key(order, cust, base, cos, serving):
    codes = []
    if cos:
        for cid in order:
            rec = cust[cid]
            tok = rec[2] if rec[2] is not None else -1
            codes.append(rec[0] * base + tok + 1)
    else:
        seen = set()
        for cid in order:
            c = cust[cid][0]
            if c in seen:
                codes.append(c * base)
            else:
                seen.add(c)
                codes.append(c * base + c + 1)
    return tuple(codes)


# ---------------------------------------------------------------------------
# native FCFS matching


def simulate_matching_native(rates, compat, A, cfg: SimConfig = SimConfig(), warmup: float | None = None) -> SimStats:
    """Customers queue in arrival order; every server type arrives at rate A(n)
    with n customers present and takes the longest-waiting compatible customer,
    leaving at once if there is none.

    A is constant between events, so the server clock is sampled exactly at
    the current rate; unmatched server arrivals are self-loops of the token
    state.
    """
    rates = [float(r) for r in rates]
    C = len(rates)
    compat = [frozenset(int(v) for v in s) for s in compat]
    n_types = max(max(s) for s in compat) + 1
    serves = [[c for c in range(C) if j in compat[c]] for j in range(n_types)]
    lam = sum(rates)
    cum = np.cumsum(rates).tolist()
    Af = A if callable(A) else (lambda n, v=float(A): v)
    base = C + 1
    class_masks = tuple(1 << c for c in range(C))
    if warmup is None:
        warmup = cfg.warmup if cfg.warmup is not None else 10.0 / max(n_types * Af(10 ** 6) - lam, 1e-3)
    edges = _batch_edges(cfg)

    out = []
    for rng in _streams(cfg):
        cls, arr = [], []
        t = 0.0
        measuring = False
        n_ev = 0
        batches, cur, edge_i = [], None, 0
        while True:
            n = len(cls)
            a = Af(n) if n else 0.0  # server arrivals to an empty queue leave unseen
            total = lam + n_types * a
            dt = rng.exp() / total
            if measuring:
                seen, codes = set(), []
                for c in cls:
                    if c in seen:
                        codes.append(c * base)
                    else:
                        seen.add(c)
                        codes.append(c * base + c + 1)
                key = tuple(codes)
                cur.occ[key] = cur.occ.get(key, 0.0) + dt
                cur.duration += dt
            t += dt
            if not measuring and t >= warmup:
                measuring = True
                cur = _Batch()
                batches.append(cur)
            u = rng.unif() * total
            if u < lam:
                c = 0
                while cum[c] <= u and c < C - 1:
                    c += 1
                if measuring and c not in cls:
                    cur.waits.append((c, 0.0))
                cls.append(c)
                arr.append(t)
            else:
                j = min(int((u - lam) / a), n_types - 1)
                ok = serves[j]
                for p, c in enumerate(cls):
                    if c in ok:
                        cls.pop(p)
                        a0 = arr.pop(p)
                        if measuring:
                            cur.sojourns.append((c, t - a0))
                            # the next customer of this class becomes the oldest
                            for p2 in range(p, len(cls)):
                                if cls[p2] == c:
                                    cur.waits.append((c, t - arr[p2]))
                                    break
                        break
            if measuring:
                n_ev += 1
                if n_ev >= edges[edge_i]:
                    edge_i += 1
                    if edge_i == len(edges):
                        break
                    cur = _Batch()
                    batches.append(cur)
        out.append(batches)
    return _summarize("native_matching", C, class_masks, out, cfg, frozenset(range(C)))


# ---------------------------------------------------------------------------
# comparison


@dataclass
class ComparisonRow:
    quantity: str
    analytic: float
    simulated: float
    se: float
    z: float

    @property
    def flagged(self) -> bool:
        return abs(self.z) > 3.0


def _z(a, est):
    diff = est.mean - a
    if est.se > 0:
        return diff / est.se
    return 0.0 if diff == 0 else math.copysign(math.inf, diff)


def analytic_targets(report, spec: ModelSpec | None = None) -> dict:
    """Quantity name -> analytic value, in the simulator's naming."""
    out = {"E[N]": report.mean_N, "E[M]": report.mean_M, "P(W>0)": report.prob_wait}
    for c, pc in enumerate(report.per_class):
        out[f"E[N^({c})]"] = pc.mean_N
        out[f"E[W_{c}]"] = pc.mean_W
        out[f"P(W_{c}>0)"] = pc.prob_wait
        out[f"P_time(W_{c}>0)"] = pc.prob_wait
        if pc.mean_M is not None:
            out[f"E[M^({c})]"] = pc.mean_M
        if pc.mean_S is not None:
            out[f"E[S_{c}]"] = pc.mean_S
    for row in report.grids.get("lst_W", []):
        for k, v in row.items():
            if k.startswith("W_") and v is not None:
                out[f"LST_{k}({row['s']:g})"] = v
    for row in report.grids.get("lst_S", []):
        for k, v in row.items():
            if k.startswith("S_") and v is not None:
                out[f"LST_{k}({row['s']:g})"] = v
    return out


def compare_stats(analytic, sim: SimStats) -> list:
    """z-scores of the simulated estimates against analytic values.

    `analytic` is a MeasureReport or a plain {quantity: value} mapping.
    """
    targets = analytic if isinstance(analytic, dict) else analytic_targets(analytic)
    rows = []
    for q in sorted(targets):
        if q in sim.estimates:
            est = sim.estimates[q]
            rows.append(ComparisonRow(q, targets[q], est.mean, est.se, _z(targets[q], est)))
    return rows


def compare_occupancy(a: SimStats, b: SimStats, min_mass: float = 1e-3, level: float = 0.95) -> list:
    """Two-sample z-scores per state with mass above min_mass in either run,
    and the Bonferroni critical value for a simultaneous test."""
    states = [k for k in set(a.occupancy) | set(b.occupancy)
              if max(a.occupancy.get(k, Estimate(0, 0)).mean, b.occupancy.get(k, Estimate(0, 0)).mean) > min_mass]
    crit = float(norm.ppf(1 - (1 - level) / 2 / max(len(states), 1)))
    rows = []
    for k in sorted(states):
        ea = a.occupancy.get(k, Estimate(0.0, 0.0))
        eb = b.occupancy.get(k, Estimate(0.0, 0.0))
        se = math.hypot(ea.se, eb.se)
        z = (ea.mean - eb.mean) / se if se > 0 else 0.0
        rows.append((k, ea.mean, eb.mean, z, abs(z) <= crit))
    return rows, crit


def occupancy_vs_measure(sim: SimStats, prob, min_mass: float = 1e-3, level: float = 0.95):
    """Simulated occupancy against exact state probabilities, Bonferroni-corrected."""
    keys = [k for k, e in sim.occupancy.items() if e.mean > min_mass]
    crit = float(norm.ppf(1 - (1 - level) / 2 / max(len(keys), 1)))
    rows = []
    for k in sorted(keys):
        e = sim.occupancy[k]
        p = prob(QState.from_key(k))
        z = (e.mean - p) / e.se if e.se > 0 else 0.0
        rows.append((k, p, e.mean, z, abs(z) <= crit))
    return rows, crit


__all__ = [
    "SimConfig", "SimStats", "Estimate", "simulate_token_queue", "simulate_redundancy_native",
    "simulate_matching_native", "compare_stats", "compare_occupancy", "occupancy_vs_measure",
    "analytic_targets", "ComparisonRow",
]
