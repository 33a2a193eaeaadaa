"""Greedy cache allocation: extract fastest chains by shortest-path routing.

Under a fixed block placement, every head-to-tail path in the routing graph
is a usable server chain.  Capacity is allocated chain by chain: find the
fastest admissible chain (every hop's destination still has enough free cache
slots for one job), saturate it, update residual slots, and repeat until the
head disconnects from the tail.  The resulting chain set is exactly what a
fastest-free-chain dispatcher can ever use, so capping concurrency per chain
at the allocated capacities loses nothing.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Mapping

from .model import (
    HEAD_ID,
    TAIL_ID,
    BlockPlacement,
    ChainEdge,
    ComposedSystem,
    ServerChain,
    build_chain,
    cache_slots,
    feasible_edges,
)


def _node_order(placement: BlockPlacement) -> dict[str, int]:
    # Order for lexicographic path tie-breaking: head, servers by id, tail.
    order = {HEAD_ID: 0}
    for i, sid in enumerate(sorted(placement.used_ids()), start=1):
        order[sid] = i
    order[TAIL_ID] = len(order)
    return order


def _shortest_path(
    order: Mapping[str, int],
    adjacency: Mapping[str, list[tuple[str, float]]],
) -> tuple[float, tuple[str, ...]] | None:
    """Min-cost head-to-tail path; equal costs break to the smallest id sequence."""
    heap: list[tuple[float, tuple[int, ...], tuple[str, ...]]] = [
        (0.0, (order[HEAD_ID],), (HEAD_ID,))
    ]
    settled: set[str] = set()
    while heap:
        cost, _, path = heapq.heappop(heap)
        node = path[-1]
        if node in settled:
            continue
        settled.add(node)
        if node == TAIL_ID:
            return cost, path
        for dst, edge_cost in adjacency.get(node, ()):
            if dst not in settled:
                new_path = path + (dst,)
                idx = tuple(order[n] for n in new_path)
                heapq.heappush(heap, (cost + edge_cost, idx, new_path))
    return None


def greedy_cache_allocation(
    placement: BlockPlacement,
    residual_slots: Mapping[str, int] | None = None,
) -> ComposedSystem:
    """Allocate residual cache slots to successively fastest chains.

    ``residual_slots`` defaults to the full post-placement budget of every
    used server; smaller values model partially occupied systems.
    """
    used = placement.used_ids()
    budget = {sid: cache_slots(placement, sid) for sid in used}
    if residual_slots is None:
        resid = dict(budget)
    else:
        resid = {}
        for sid in used:
            r = residual_slots[sid]
            if not 0 <= r <= budget[sid]:
                raise ValueError(
                    f"server {sid}: residual {r} outside [0, {budget[sid]}]"
                )
            resid[sid] = r

    edge_info: dict[tuple[str, str], ChainEdge] = {
        (e.src, e.dst): e for e in feasible_edges(placement)
    }
    srv = {sid: placement.server(sid) for sid in used}

    def admissible(e: ChainEdge) -> bool:
        return e.dst == TAIL_ID or resid[e.dst] >= e.blocks_at_dst

    def cost_of(e: ChainEdge) -> float:
        if e.dst == TAIL_ID:
            return 0.0
        s = srv[e.dst]
        return s.comm_time_s + s.per_block_compute_s * e.blocks_at_dst

    live = {key for key, e in edge_info.items() if admissible(e)}
    order = _node_order(placement)

    chains: list[ServerChain] = []
    capacities: list[int] = []
    max_iterations = len(edge_info) + 1
    for _ in range(max_iterations):
        adjacency: dict[str, list[tuple[str, float]]] = {}
        for src, dst in live:
            adjacency.setdefault(src, []).append((dst, cost_of(edge_info[(src, dst)])))
        found = _shortest_path(order, adjacency)
        if found is None:
            break
        _, path = found
        hop_edges = [edge_info[(s, d)] for s, d in zip(path, path[1:])]
        real_hops = [e for e in hop_edges if e.dst != TAIL_ID]
        cap = min(resid[e.dst] // e.blocks_at_dst for e in real_hops)
        assert cap >= 1, "admissible hops must support at least one job"
        for e in real_hops:
            resid[e.dst] -= e.blocks_at_dst * cap
        # Re-filter every edge into the touched servers so the admissibility
        # invariant holds globally, not just along the allocated chain.
        touched = {e.dst for e in real_hops}
        live = {
            key
            for key in live
            if edge_info[key].dst not in touched or admissible(edge_info[key])
        }
        chains.append(build_chain(placement, path[1:-1]))
        capacities.append(cap)
    else:
        raise AssertionError("allocation failed to terminate within the edge budget")

    return ComposedSystem(placement, tuple(chains), tuple(capacities))


def enumerate_feasible_chains(
    placement: BlockPlacement, max_servers: int = 8
) -> list[ServerChain]:
    """Every head-to-tail chain under the placement (small instances only)."""
    used = placement.used_ids()
    if len(used) > max_servers:
        raise ValueError(
            f"{len(used)} used servers exceeds the enumeration limit {max_servers}"
        )
    succ: dict[str, list[str]] = {}
    for e in feasible_edges(placement):
        succ.setdefault(e.src, []).append(e.dst)
    chains: list[ServerChain] = []

    def visit(path: list[str]):
        node = path[-1]
        if node == TAIL_ID:
            chains.append(build_chain(placement, path[1:-1]))
            return
        for nxt in succ.get(node, ()):
            visit(path + [nxt])

    visit([HEAD_ID])
    return chains


@dataclass(frozen=True)
class SufficiencyReport:
    """Result of probing whether allocated chains dominate all alternatives."""

    status: str  # "pass", "fail", or "skipped"
    probes: int
    counterexample: tuple[int, tuple[str, ...], float, float] | None = None
    reason: str | None = None


def verify_fastest_chain_sufficiency(
    placement: BlockPlacement,
    system: ComposedSystem,
    probe_count: int | None = None,
    max_servers: int = 8,
) -> SufficiencyReport:
    """Check that no unallocated chain beats the next allocated one.

    Probe ``l`` saturates the fastest ``l - 1`` allocated chains, then
    enumerates every chain that still has capacity for one job and asserts
    none is strictly faster than allocated chain ``l``.
    """
    used = placement.used_ids()
    if len(used) > max_servers:
        return SufficiencyReport(
            status="skipped",
            probes=0,
            reason=f"{len(used)} used servers exceeds the enumeration limit {max_servers}",
        )
    all_chains = enumerate_feasible_chains(placement, max_servers)
    probes = len(system.chains) if probe_count is None else min(probe_count, len(system.chains))
    for l in range(1, probes + 1):
        resid = {sid: cache_slots(placement, sid) for sid in used}
        for chain, cap in zip(system.chains[: l - 1], system.capacities[: l - 1]):
            for e in chain.edges:
                if e.dst != TAIL_ID:
                    resid[e.dst] -= e.blocks_at_dst * cap
        available = [
            ch
            for ch in all_chains
            if all(
                e.dst == TAIL_ID or resid[e.dst] >= e.blocks_at_dst for e in ch.edges
            )
        ]
        threshold = system.chains[l - 1].service_time_s
        for ch in available:
            if ch.service_time_s < threshold:
                return SufficiencyReport(
                    status="fail",
                    probes=l,
                    counterexample=(l, ch.server_ids, ch.service_time_s, threshold),
                )
    return SufficiencyReport(status="pass", probes=probes)
