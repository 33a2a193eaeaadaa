"""Independent brute-force and closed-form references for tests.

These are deliberately slow but simple: exhaustive search over groupings and
capacity vectors, the classical M/M/c closed form, and a dense stationary
solve of the dispatch Markov chain.  Every oracle refuses inputs beyond its
enumeration limits instead of degrading silently.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .analysis import ChainRates, transition_rates
from .errors import OracleLimitError, UnstableError
from .model import TAIL_ID, BlockPlacement, ServerChain, ServerSpec, ServiceSpec, cache_slots
from .placement import reservation_profile


@dataclass(frozen=True)
class OracleLimits:
    max_servers: int = 8
    max_blocks: int = 12
    max_capacity_enum: int = 6
    ctmc_truncation: int = 200


DEFAULT_LIMITS = OracleLimits()


@dataclass(frozen=True)
class GroupingResult:
    feasible: bool
    group_count: int | None
    groups: tuple[tuple[str, ...], ...]
    achieved_scaled_rate: float


def brute_force_min_chain_groups(
    servers: Sequence[ServerSpec],
    service: ServiceSpec,
    capacity: int,
    arrival_rate: float,
    load_target: float,
    limits: OracleLimits = DEFAULT_LIMITS,
) -> GroupingResult:
    """Minimum number of disjoint server groups meeting the scaled rate target.

    A group is usable when its members' block limits under ``capacity`` sum to
    at least the service length; exhaustive subset DP over all disjoint
    selections (unused servers allowed).
    """
    J = len(servers)
    if J > limits.max_servers:
        raise OracleLimitError(f"{J} servers exceeds oracle limit {limits.max_servers}")
    if service.block_count > limits.max_blocks:
        raise OracleLimitError(
            f"{service.block_count} blocks exceeds oracle limit {limits.max_blocks}"
        )
    profile = reservation_profile(servers, service, capacity)
    target = arrival_rate / (load_target * capacity)
    if target <= 0:
        return GroupingResult(True, 0, (), 0.0)

    size = 1 << J
    m_sum = [0] * size
    t_sum = [0.0] * size
    for mask in range(1, size):
        low = mask & -mask
        i = low.bit_length() - 1
        m_sum[mask] = m_sum[mask ^ low] + profile.max_blocks[i]
        t_sum[mask] = t_sum[mask ^ low] + profile.bound_time_s[i]
    group_rate = [
        (1.0 / t_sum[mask] if t_sum[mask] > 0 else math.inf)
        if mask and m_sum[mask] >= service.block_count
        else -math.inf
        for mask in range(size)
    ]
    usable = [mask for mask in range(1, size) if group_rate[mask] >= 0]
    if not usable:
        return GroupingResult(False, None, (), 0.0)

    neg_inf = -math.inf
    best = [neg_inf] * size  # best[mask]: max rate with groups partitioning mask
    best[0] = 0.0
    parent: dict[tuple[int, int], int] = {}
    best_overall = 0.0
    for k in range(1, J + 1):
        nxt = [neg_inf] * size
        for mask in range(1, size):
            sub = mask
            while sub:
                if group_rate[sub] >= 0 and best[mask ^ sub] > neg_inf:
                    cand = best[mask ^ sub] + group_rate[sub]
                    if cand > nxt[mask]:
                        nxt[mask] = cand
                        parent[(k, mask)] = sub
                sub = (sub - 1) & mask
        best = nxt
        top = max(best)
        best_overall = max(best_overall, top)
        if top >= target:
            mask = best.index(top)
            groups = []
            for kk in range(k, 0, -1):
                sub = parent[(kk, mask)]
                groups.append(
                    tuple(servers[i].id for i in range(J) if sub & (1 << i))
                )
                mask ^= sub
            return GroupingResult(True, k, tuple(reversed(groups)), top)
    return GroupingResult(False, None, (), best_overall)


@dataclass(frozen=True)
class CapacityResult:
    feasible: bool
    total_capacity: int | None
    capacities: tuple[int, ...]


def brute_force_min_capacity(
    placement: BlockPlacement,
    chains: Sequence[ServerChain],
    required_rate: float,
    limits: OracleLimits = DEFAULT_LIMITS,
) -> CapacityResult:
    """Minimum total capacity over the given chains meeting rate and memory.

    Enumerates capacity vectors by increasing total, so the first feasible
    total is the optimum.
    """
    K = len(chains)
    if K > limits.max_servers:
        raise OracleLimitError(f"{K} chains exceeds oracle limit {limits.max_servers}")
    budget = {sid: cache_slots(placement, sid) for sid in placement.used_ids()}
    usage_coeff: list[dict[str, int]] = []
    for ch in chains:
        coeff: dict[str, int] = {}
        for e in ch.edges:
            if e.dst != TAIL_ID:
                coeff[e.dst] = e.blocks_at_dst
        usage_coeff.append(coeff)
    rates = [ch.rate for ch in chains]
    cap_max = limits.max_capacity_enum

    def feasible_vector(vec: tuple[int, ...]) -> bool:
        if sum(c * r for c, r in zip(vec, rates)) < required_rate:
            return False
        used: dict[str, int] = {}
        for c, coeff in zip(vec, usage_coeff):
            for sid, m in coeff.items():
                used[sid] = used.get(sid, 0) + m * c
        return all(v <= budget[sid] for sid, v in used.items())

    for total in range(0, cap_max * K + 1):
        for vec in _compositions(total, K, cap_max):
            if feasible_vector(vec):
                return CapacityResult(True, total, vec)
    return CapacityResult(False, None, ())


def _compositions(total: int, parts: int, cap: int):
    """All length-``parts`` tuples of ints in [0, cap] summing to ``total``."""
    if parts == 0:
        if total == 0:
            yield ()
        return
    for head in range(min(total, cap), -1, -1):
        for rest in _compositions(total - head, parts - 1, cap):
            yield (head,) + rest


def mmc_mean_occupancy(c: int, mu: float, lam: float) -> float:
    """Mean number in system for an M/M/c queue (Erlang-C closed form)."""
    if c < 1 or mu <= 0 or lam < 0:
        raise ValueError("require c >= 1, mu > 0, lam >= 0")
    if lam == 0:
        return 0.0
    if lam >= c * mu:
        raise UnstableError(f"arrival rate {lam:.6g} >= c*mu {c * mu:.6g}")
    a = lam / mu
    rho = a / c
    log_terms = [n * math.log(a) - math.lgamma(n + 1) for n in range(c)]
    log_full = c * math.log(a) - math.lgamma(c + 1) - math.log(1 - rho)
    log_norm = _logsumexp(log_terms + [log_full])
    p_wait = math.exp(log_full - log_norm)
    return p_wait * rho / (1 - rho) + a


def _logsumexp(values: Sequence[float]) -> float:
    top = max(values)
    return top + math.log(sum(math.exp(v - top) for v in values))


@dataclass(frozen=True)
class StationaryResult:
    states: tuple[tuple[int, ...], ...]
    probabilities: np.ndarray
    mean_occupancy: float
    tail_mass: float


def ctmc_stationary(
    rates: ChainRates,
    arrival_rate: float,
    truncation: int | None = None,
    limits: OracleLimits = DEFAULT_LIMITS,
) -> StationaryResult:
    """Dense stationary solve of the dispatch chain with a truncated queue.

    The queue is truncated at ``truncation`` jobs (arrivals there are
    dropped); ``tail_mass`` estimates the probability mass beyond the
    truncation from the geometric tail ratio.
    """
    lam = float(arrival_rate)
    nu = rates.total_rate
    if lam >= nu:
        raise UnstableError(f"arrival rate {lam:.6g} >= total service rate {nu:.6g}")
    trunc = limits.ctmc_truncation if truncation is None else truncation
    caps = rates.capacities
    base = [
        (0, *z) for z in itertools.product(*(range(c + 1) for c in caps))
    ]
    queued = [(n, *caps) for n in range(1, trunc + 1)]
    states = tuple(base + queued)
    if len(states) > 10**6:
        raise OracleLimitError(f"{len(states)} states exceeds the 1e6 solver limit")
    index = {z: i for i, z in enumerate(states)}

    n = len(states)
    Q = np.zeros((n, n))
    for i, z in enumerate(states):
        for nxt, rate in transition_rates(rates, z, lam):
            if nxt not in index:  # reflected at the truncation boundary
                continue
            Q[i, index[nxt]] += rate
            Q[i, i] -= rate
    A = np.vstack([Q.T, np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    occ = np.array([sum(z) for z in states], dtype=float)
    rho = lam / nu
    tail = float(pi[index[(trunc, *caps)]] * rho / (1 - rho)) if trunc >= 1 else math.inf
    return StationaryResult(states, pi, float(pi @ occ), tail)
