"""The Markov chain on the token state: transitions in both directions,
balance residuals, and the truncated linear-solve oracle.

Indices in this module are 0-based: ``x.tokens[j]`` is held by the (j+1)-th
active customer and ``x.counts[j]`` inactive customers wait right behind it.
"""

from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SingularSystem, TokenQueueError
from .model import ModelSpec, QState, enumerate_states, mask_of

DIRECT_SOLVE_LIMIT = 6000  # beyond this LU fill-in dominates; ILU-preconditioned GMRES is faster


@dataclass(frozen=True)
class Transition:
    state: QState
    rate: float
    kind: str  # arrival_inactive | arrival_active | release | reassign
    detail: tuple = ()


def beta(spec: ModelSpec, prefix, T: int) -> float:
    """Chance that an inactive customer behind `prefix` cannot use token T."""
    if not prefix:
        return 0.0
    m = mask_of(prefix)
    den = spec.lambda_u(m | 1 << T)
    if den <= 0:
        return 0.0
    return spec.lambda_u(m) / den


def _miss(spec, mask_with_T: int, T: int) -> float:
    # same ratio as beta, keyed by the set that already contains T
    den = spec.lambda_u(mask_with_T)
    if den <= 0:
        return 0.0
    return spec.lambda_u(mask_with_T & ~(1 << T)) / den


# ---------------------------------------------------------------------------
# outgoing


def out_transitions(spec: ModelSpec, x: QState) -> list[Transition]:
    toks, cnts = x.tokens, x.counts
    i = len(toks)
    m = mask_of(toks)
    out = []
    lu = spec.lambda_u(m)
    if lu > 0:
        out.append(Transition(QState(toks, cnts[:-1] + (cnts[-1] + 1,)), lu, "arrival_inactive"))
    for t in range(spec.n_tokens):
        if not m >> t & 1:
            r = spec.lambda_t(m, t)
            if r > 0:
                out.append(Transition(QState(toks + (t,), cnts + (0,)), r, "arrival_active", (t,)))
    if i == 0:
        return out
    eta = spec.eta(x.population)
    prefix_masks = []
    pm = 0
    for t in toks:
        pm |= 1 << t
        prefix_masks.append(pm)
    for j in range(i):
        T = toks[j]
        rate = eta * spec.s_rate(toks[: j + 1])
        if rate <= 0:
            continue
        before = cnts[j - 1] if j > 0 else 0
        # state with holder j removed, segments j-1 and j merged
        rest_t = toks[:j] + toks[j + 1:]
        if j > 0:
            rest_c = cnts[: j - 1] + (before + cnts[j],) + cnts[j + 1:]
        else:
            rest_c = cnts[1:]
        prob_none = 1.0
        for mseg in range(j, i):
            q = _miss(spec, prefix_masks[mseg], T)
            n = cnts[mseg]
            for p in range(n):
                pr = prob_none * q ** p * (1.0 - q)
                if pr <= 0:
                    continue
                if mseg == j:
                    nt = toks
                    head = cnts[: j - 1] + (before + p,) if j > 0 else ()
                    nc = head + (n - p - 1,) + cnts[j + 1:]
                else:
                    # positions in rest: token T_mseg sits at index mseg-1
                    nt = rest_t[:mseg] + (T,) + rest_t[mseg:]
                    nc = rest_c[: mseg - 1] + (p, n - p - 1) + rest_c[mseg:]
                out.append(Transition(QState(nt, nc), rate * pr, "reassign", (j, mseg, p)))
            prob_none *= q ** n
            if prob_none == 0.0:
                break
        if prob_none > 0:
            out.append(Transition(QState(rest_t, rest_c), rate * prob_none, "release", (j,)))
    return out


# ---------------------------------------------------------------------------
# incoming


def in_transitions(spec: ModelSpec, x: QState) -> list[Transition]:
    toks, cnts = x.tokens, x.counts
    i = len(toks)
    m = mask_of(toks)
    phi = x.population
    out = []
    # arrivals
    if i > 0:
        if cnts[-1] > 0:
            out.append(Transition(QState(toks, cnts[:-1] + (cnts[-1] - 1,)), spec.lambda_u(m), "arrival_inactive"))
        else:
            prev = mask_of(toks[:-1])
            r = spec.lambda_t(prev, toks[-1])
            if r > 0:
                out.append(Transition(QState(toks[:-1], cnts[:-1]), r, "arrival_active", (toks[-1],)))
    eta_up = spec.eta(phi + 1)
    prefix_masks = [0]
    for t in toks:
        prefix_masks.append(prefix_masks[-1] | 1 << t)
    # releases of an available token T (held at slot k in the predecessor)
    for T in range(spec.n_tokens):
        if m >> T & 1:
            continue
        for k in range(i + 1):
            s = spec.s_rate(toks[:k] + (T,))
            if s <= 0:
                continue
            tail = 1.0
            for l in range(k + 1, i + 1):
                tail *= _miss(spec, prefix_masks[l] | 1 << T, T) ** cnts[l - 1]
            nk = cnts[k - 1] if k > 0 else 0
            q = _miss(spec, prefix_masks[k] | 1 << T, T)
            for n in range(nk + 1):
                after = nk - n
                pr = tail * q ** after
                if pr <= 0:
                    continue
                if k > 0:
                    y = QState(toks[:k] + (T,) + toks[k:], cnts[: k - 1] + (n, after) + cnts[k:])
                else:
                    y = QState((T,) + toks, (0,) + cnts)
                if not spec.is_reachable(y):
                    continue
                out.append(Transition(y, eta_up * s * pr, "release", (T, k, n)))
    # reassignments: T_j was held at slot k < j and passed to the customer now holding it
    for j in range(1, i + 1):
        T = toks[j - 1]
        q_last = _miss(spec, prefix_masks[j], T)
        claim = 1.0 - q_last
        if claim <= 0:
            continue
        for k in range(j):
            s = spec.s_rate(toks[:k] + (T,))
            if s <= 0:
                continue
            nk = cnts[k - 1] if k > 0 else 0
            mid = 1.0
            for l in range(k + 1, j - 1):
                mid *= _miss(spec, prefix_masks[l] | 1 << T, T) ** cnts[l - 1]
            for n in range(nk + 1):
                if k < j - 1:
                    pr = (_miss(spec, prefix_masks[k] | 1 << T, T) ** (nk - n) * mid
                          * q_last ** cnts[j - 2] * claim)
                    nt = toks[:k] + (T,) + toks[k:j - 1] + toks[j:]
                    # segments: ..., T_k:n, T:nk-n, T_{k+1}:n_{k+1}, ..., T_{j-1}:n_{j-1}+1+n_j, ...
                    nc = (cnts[: k - 1] + (n,) if k > 0 else ()) + (nk - n,) + cnts[k:j - 2] \
                        + (cnts[j - 2] + 1 + cnts[j - 1],) + cnts[j:]
                    if k == 0:
                        nc = (0,) + cnts[:j - 2] + (cnts[j - 2] + 1 + cnts[j - 1],) + cnts[j:]
                else:
                    pr = q_last ** (nk - n) * claim
                    nt = toks
                    nc = (cnts[: k - 1] + (n,) if k > 0 else ()) + (nk - n + 1 + cnts[j - 1],) + cnts[j:]
                if pr <= 0:
                    continue
                y = QState(nt, nc)
                if not spec.is_reachable(y):
                    continue
                out.append(Transition(y, eta_up * s * pr, "reassign", (j - 1, k, n)))
    return out


# ---------------------------------------------------------------------------
# balance


def _rel(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0 else abs(a - b) / scale


def global_balance_residual(spec: ModelSpec, x: QState, pi) -> float:
    outflow = pi(x) * math.fsum(tr.rate for tr in out_transitions(spec, x))
    inflow = math.fsum(pi(tr.state) * tr.rate for tr in in_transitions(spec, x))
    return _rel(inflow, outflow)


@dataclass
class PartialResiduals:
    arrival: float
    release: dict = field(default_factory=dict)
    shift: float = 0.0

    @property
    def worst(self) -> float:
        return max([self.arrival, self.shift, *self.release.values()])


def partial_balance_residuals(spec: ModelSpec, x: QState, pi) -> PartialResiduals:
    """Residuals of the arrival, per-token release and shift balance identities."""
    toks, cnts = x.tokens, x.counts
    m = mask_of(toks)
    px = pi(x)
    ins = in_transitions(spec, x)
    arr_rhs = math.fsum(pi(tr.state) * tr.rate for tr in ins if tr.kind.startswith("arrival"))
    arrival = _rel(spec.mu_total(x) * px, arr_rhs)
    release = {}
    for T in range(spec.n_tokens):
        if m >> T & 1:
            continue
        rhs = math.fsum(pi(tr.state) * tr.rate for tr in ins if tr.kind == "release" and tr.detail[0] == T)
        release[T] = _rel(spec.lambda_t(m, T) * px, rhs)
    rhs = math.fsum(pi(tr.state) * tr.rate for tr in ins if tr.kind == "reassign")
    shift = _rel(spec.lambda_u(m) * px, rhs)
    return PartialResiduals(arrival, release, shift)


def telescoping_identity(spec: ModelSpec, prefix, T: int, counts) -> float:
    """Evaluate the release-probability identity; equals one for a valid spec."""
    i = len(prefix)
    masks = [0]
    for t in prefix:
        masks.append(masks[-1] | 1 << t)
    r = []
    for k in range(i + 1):
        kt = spec.k_total(masks[k] | 1 << T)
        r.append(spec.k_total(masks[k]) / kt)
    n = (0,) + tuple(counts)
    terms = []
    for k in range(i + 1):
        prod = 1.0
        for j in range(k + 1, i + 1):
            prod *= r[j] ** (n[j] + 1)
        inner = math.fsum(r[k] ** e for e in range(n[k] + 1))
        terms.append((1.0 - r[k]) * prod * inner)
    return math.fsum(terms)


# ---------------------------------------------------------------------------
# oracle


@dataclass
class OracleDistribution:
    probs: dict
    bound: int
    leaked_mass: float
    method: str = "direct"
    residual: float = 0.0

    def __getitem__(self, x: QState) -> float:
        return self.probs.get(x, 0.0)

    def population_law(self) -> np.ndarray:
        out = np.zeros(self.bound + 1)
        for x, p in self.probs.items():
            out[x.population] += p
        return out


def generator(spec: ModelSpec, states: list[QState], bound: int) -> sp.csr_matrix:
    """Generator restricted to `states`; transitions leaving the set are dropped."""
    index = {x: n for n, x in enumerate(states)}
    rows, cols, vals = [], [], []
    diag = np.zeros(len(states))
    for a, x in enumerate(states):
        for tr in out_transitions(spec, x):
            b = index.get(tr.state)
            if b is None:
                if tr.state.population <= bound:
                    raise SingularSystem(f"transition to unenumerated state {tr.state}", [tr.state])
                continue
            rows.append(a)
            cols.append(b)
            vals.append(tr.rate)
            diag[a] += tr.rate
    n = len(states)
    q = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return q - sp.diags(diag)


def _communicating_with_root(q: sp.csr_matrix) -> np.ndarray:
    n = q.shape[0]
    adj = (q - sp.diags(q.diagonal())).tocsr()
    adj.eliminate_zeros()
    fwd = _bfs(adj, 0)
    bwd = _bfs(adj.T.tocsr(), 0)
    return fwd & bwd


def _bfs(adj, root):
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[root] = True
    queue = deque([root])
    while queue:
        a = queue.popleft()
        for b in adj.indices[adj.indptr[a]:adj.indptr[a + 1]]:
            if not seen[b]:
                seen[b] = True
                queue.append(b)
    return seen


def oracle_solve(spec: ModelSpec, bound: int, tail_bound: bool = True) -> OracleDistribution:
    """Stationary law of the chain truncated at population `bound` (arrivals beyond are dropped)."""
    if bound < 1:
        raise ValueError("bound must be at least 1")
    states = enumerate_states(spec, bound)
    q = generator(spec, states, bound)
    ok = _communicating_with_root(q)
    if not ok.all():
        bad = [states[a] for a in np.flatnonzero(~ok)]
        raise SingularSystem(f"{len(bad)} state(s) do not communicate with (0)", bad)
    n = len(states)
    # pin x[0] = 1 and drop its balance equation; keeps the system sparse
    qt = q.T.tocsc()
    a = qt[1:, 1:]
    b = -qt[1:, 0].toarray().ravel()
    if n == 1:
        x = np.ones(1)
        method = "direct"
    elif n < DIRECT_SOLVE_LIMIT:
        x = np.concatenate([[1.0], spla.spsolve(a.tocsc(), b)])
        method = "direct"
    else:
        ilu = spla.spilu(a.tocsc(), drop_tol=1e-8)
        pre = spla.LinearOperator(a.shape, ilu.solve)
        y, info = spla.gmres(a, b, M=pre, rtol=1e-13, restart=60, maxiter=2000)
        if info != 0:
            raise SingularSystem(f"iterative solve did not converge (info={info})")
        x = np.concatenate([[1.0], y])
        method = "gmres"
    if not np.all(np.isfinite(x)):
        raise SingularSystem("linear solve produced non-finite values")
    x = np.clip(x, 0.0, None)
    x /= x.sum()
    resid = float(np.abs(q.T @ x).max())
    leaked = math.nan
    if tail_bound:
        from .product_form import StationaryMeasure
        try:
            leaked = StationaryMeasure(spec).tail_mass_bound(bound)
        except (TokenQueueError, ArithmeticError):  # the tail estimate is metadata only
            leaked = math.nan
    return OracleDistribution(dict(zip(states, x.tolist())), bound, leaked, method, resid)


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * math.fsum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def edge_rates(transitions, source=None) -> dict:
    """Aggregate a transition list into {target: total rate} (or {(source, target): rate})."""
    out = defaultdict(float)
    for tr in transitions:
        out[tr.state if source is None else (source, tr.state)] += tr.rate
    return dict(out)


def oracle_distance(oracle: OracleDistribution, prob) -> dict:
    """Distances between a truncated solve and an untruncated law `prob`.

    "tv" counts the law's mass beyond the bound as disagreement; "tv_conditional"
    compares against the law conditioned on population <= bound.
    """
    exact = {x: prob(x) for x in oracle.probs}
    inside = math.fsum(exact.values())
    diffs = [abs(oracle.probs[x] - exact[x]) for x in exact]
    tv = 0.5 * (math.fsum(diffs) + max(0.0, 1.0 - inside))
    tv_cond = 0.5 * math.fsum(abs(oracle.probs[x] - exact[x] / inside) for x in exact)
    return {"tv": tv, "tv_conditional": tv_cond, "outside_mass": max(0.0, 1.0 - inside), "states": len(exact)}
