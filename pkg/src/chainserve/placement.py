"""Greedy block placement with per-block cache reservation, plus capacity tuning.

Given a required per-chain concurrency ``c``, each server can host at most
``m_j(c) = min(floor(M_j / (s_m + s_c * c)), L)`` blocks while still reserving
``c`` cache slots per hosted block.  Servers are chained greedily in
increasing amortized time per block until the scaled rate target
``lambda / (load_target * c)`` is met, which yields disjoint chains that can
each run ``c`` jobs concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import InfeasibleError
from .model import BlockPlacement, ServerSpec, ServiceSpec


@dataclass(frozen=True)
class ReservationProfile:
    """Per-server block limits and time bounds under a required capacity."""

    capacity: int
    max_blocks: tuple[int, ...]
    bound_time_s: tuple[float, ...]

    def amortized_time_s(self, index: int) -> float:
        m = self.max_blocks[index]
        if m == 0:
            raise ValueError("amortized time undefined for a server hosting no blocks")
        return self.bound_time_s[index] / m


def reservation_profile(
    servers: Sequence[ServerSpec], service: ServiceSpec, capacity: int
) -> ReservationProfile:
    """Compute ``m_j(c)`` and the per-server time bound ``t_j(c)`` exactly."""
    if capacity < 1:
        raise ValueError("capacity must be >= 1")
    per_block = service.block_bytes + service.cache_slot_bytes * capacity
    max_blocks = []
    bound_time = []
    for srv in servers:
        m = min(srv.memory_bytes // per_block, service.block_count)
        max_blocks.append(m)
        bound_time.append(srv.comm_time_s + srv.per_block_compute_s * m)
    return ReservationProfile(capacity, tuple(max_blocks), tuple(bound_time))


@dataclass(frozen=True)
class PlacementResult:
    """Outcome of the greedy placement pass for one capacity value."""

    placement: BlockPlacement
    chains: tuple[tuple[str, ...], ...]
    scaled_rate: float
    rate_satisfied: bool
    capacity: int
    profile: ReservationProfile

    @property
    def chain_count(self) -> int:
        return len(self.chains)


def greedy_block_placement(
    servers: Sequence[ServerSpec],
    service: ServiceSpec,
    capacity: int,
    arrival_rate: float,
    load_target: float,
) -> PlacementResult:
    """Chain servers in increasing amortized time until the rate target is met.

    Within a chain every server hosts its full ``m_j(c)`` blocks starting at
    the running frontier; the closing server is clamped to end exactly at the
    last block, which may duplicate blocks already hosted upstream (the hop
    accounting charges each block to the first server hosting it).  A trailing
    chain left incomplete when servers run out is cleared entirely.
    """
    if arrival_rate < 0:
        raise ValueError("arrival_rate must be >= 0")
    if not 0 < load_target < 1:
        raise ValueError("load_target must lie in (0, 1)")
    profile = reservation_profile(servers, service, capacity)
    order = sorted(
        (i for i in range(len(servers)) if profile.max_blocks[i] > 0),
        key=lambda i: (profile.amortized_time_s(i), servers[i].id),
    )
    if not order:
        raise InfeasibleError(
            f"required capacity {capacity} infeasible: no server can host a single block"
        )

    L = service.block_count
    target = arrival_rate / (load_target * capacity)
    first = [0] * len(servers)
    count = [0] * len(servers)
    chains: list[tuple[str, ...]] = []
    current: list[int] = []
    frontier = 1
    chain_time = 0.0
    scaled_rate = 0.0
    for i in order:
        m = profile.max_blocks[i]
        first[i] = min(frontier, L - m + 1)
        count[i] = m
        current.append(i)
        chain_time += profile.bound_time_s[i]
        frontier = min(frontier + m - 1, L) + 1
        if frontier > L:
            scaled_rate += 1.0 / chain_time
            chains.append(tuple(servers[j].id for j in current))
            current = []
            if scaled_rate >= target:
                break
            frontier = 1
            chain_time = 0.0
    for i in current:  # incomplete trailing chain cannot serve jobs
        first[i] = 0
        count[i] = 0

    placement = BlockPlacement(service, tuple(servers), tuple(first), tuple(count))
    return PlacementResult(
        placement=placement,
        chains=tuple(chains),
        scaled_rate=scaled_rate,
        rate_satisfied=scaled_rate >= target,
        capacity=capacity,
        profile=profile,
    )


def capacity_upper_bound(servers: Sequence[ServerSpec], service: ServiceSpec) -> int:
    """Largest concurrency any single server could support next to one block."""
    if not servers:
        raise InfeasibleError("no servers given")
    best = max(srv.memory_bytes for srv in servers)
    c_max = (best - service.block_bytes) // service.cache_slot_bytes
    if c_max < 1:
        raise InfeasibleError("no server can host one block plus one cache slot")
    return c_max


@dataclass(frozen=True)
class TuningRow:
    capacity: int
    chain_count: int | None
    scaled_cost: int | None
    rate_satisfied: bool
    achieved_rate: float


@dataclass(frozen=True)
class CapacityTuning:
    c_star: int
    rows: tuple[TuningRow, ...]


def tune_capacity_surrogate(
    servers: Sequence[ServerSpec],
    service: ServiceSpec,
    arrival_rate: float,
    load_target: float,
) -> CapacityTuning:
    """Pick the capacity minimizing ``c * K(c)`` over all rate-feasible ``c``.

    ``K(c)`` is the number of chains the greedy placement needs to reach the
    scaled rate target under capacity ``c``.  Ties go to the smaller capacity.
    """
    c_max = capacity_upper_bound(servers, service)
    rows: list[TuningRow] = []
    best_c: int | None = None
    best_cost: int | None = None
    best_rate = 0.0
    for c in range(1, c_max + 1):
        try:
            result = greedy_block_placement(servers, service, c, arrival_rate, load_target)
        except InfeasibleError:
            rows.append(TuningRow(c, None, None, False, 0.0))
            continue
        achieved = c * result.scaled_rate
        best_rate = max(best_rate, achieved)
        if result.rate_satisfied:
            cost = c * result.chain_count
            rows.append(TuningRow(c, result.chain_count, cost, True, achieved))
            if best_cost is None or cost < best_cost:
                best_cost = cost
                best_c = c
        else:
            rows.append(TuningRow(c, result.chain_count, None, False, achieved))
    if best_c is None:
        raise InfeasibleError(
            f"no capacity in [1, {c_max}] meets the rate target "
            f"{arrival_rate / load_target:.6g}/s; best achievable total rate "
            f"is {best_rate:.6g}/s",
            best_rate=best_rate,
        )
    return CapacityTuning(best_c, tuple(rows))
