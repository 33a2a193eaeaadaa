"""Domain types and pure evaluators for chain-structured job serving.

A service of ``L`` ordered blocks is placed on physical servers; a chain of
servers that jointly covers blocks ``1..L`` in order forms one "server chain"
that can serve jobs end to end.  All memory quantities are integer bytes so
that slot budgets and placement bounds are exact; times are float seconds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

GB = 10**9
"""Bytes per GB used when converting published GB figures (decimal convention)."""

HEAD_ID = "__head__"
"""Dummy entry node: hosts dummy block 0, costs nothing."""

TAIL_ID = "__tail__"
"""Dummy exit node: hosts dummy block L+1, costs nothing, memory unbounded."""


def _require_int(name: str, value: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"{name} must be an integer number of bytes, got {value!r}")
    return value


@dataclass(frozen=True)
class ServiceSpec:
    """The chain-structured service: block count and per-block memory sizes."""

    block_count: int
    block_bytes: int
    cache_slot_bytes: int

    def __post_init__(self):
        _require_int("block_count", self.block_count)
        _require_int("block_bytes", self.block_bytes)
        _require_int("cache_slot_bytes", self.cache_slot_bytes)
        if self.block_count < 1:
            raise ValueError("block_count must be >= 1")
        if self.block_bytes < 1 or self.cache_slot_bytes < 1:
            raise ValueError("block_bytes and cache_slot_bytes must be >= 1")


@dataclass(frozen=True)
class ServerSpec:
    """One physical server: memory plus per-visit and per-block mean times."""

    id: str
    memory_bytes: int
    comm_time_s: float
    per_block_compute_s: float

    def __post_init__(self):
        _require_int("memory_bytes", self.memory_bytes)
        if self.memory_bytes < 0:
            raise ValueError(f"server {self.id}: memory_bytes must be >= 0")
        if self.comm_time_s < 0 or self.per_block_compute_s < 0:
            raise ValueError(f"server {self.id}: times must be >= 0")
        if self.id in (HEAD_ID, TAIL_ID):
            raise ValueError(f"server id {self.id!r} is reserved")


@dataclass(frozen=True)
class BlockPlacement:
    """Per-server contiguous block ranges.

    ``block_count[i] == 0`` means server ``i`` is unused and its
    ``first_block`` entry is ignored.  Used servers host blocks
    ``first_block .. first_block + block_count - 1``.
    """

    service: ServiceSpec
    servers: tuple[ServerSpec, ...]
    first_block: tuple[int, ...]
    block_count: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.servers) == len(self.first_block) == len(self.block_count)):
            raise ValueError("placement arrays must align with the server list")
        seen: set[str] = set()
        for srv in self.servers:
            if srv.id in seen:
                raise ValueError(f"duplicate server id {srv.id!r}")
            seen.add(srv.id)
        L = self.service.block_count
        for srv, a, m in zip(self.servers, self.first_block, self.block_count):
            _require_int("first_block", a)
            _require_int("block_count", m)
            if m == 0:
                continue
            if not 0 <= m <= L:
                raise ValueError(f"server {srv.id}: block count {m} outside [0, {L}]")
            if not 1 <= a <= L or a + m - 1 > L:
                raise ValueError(f"server {srv.id}: range [{a}, {a + m - 1}] outside [1, {L}]")
            if self.service.block_bytes * m > srv.memory_bytes:
                raise ValueError(
                    f"server {srv.id}: {m} blocks need "
                    f"{self.service.block_bytes * m} bytes > {srv.memory_bytes}"
                )

    def index_of(self, server_id: str) -> int:
        for i, srv in enumerate(self.servers):
            if srv.id == server_id:
                return i
        raise KeyError(server_id)

    def server(self, server_id: str) -> ServerSpec:
        return self.servers[self.index_of(server_id)]

    def blocks_at(self, server_id: str) -> int:
        return self.block_count[self.index_of(server_id)]

    def first_block_at(self, server_id: str) -> int:
        i = self.index_of(server_id)
        if self.block_count[i] == 0:
            raise ValueError(f"server {server_id} is unused")
        return self.first_block[i]

    def used_ids(self) -> tuple[str, ...]:
        return tuple(s.id for s, m in zip(self.servers, self.block_count) if m > 0)

    def unused_ids(self) -> tuple[str, ...]:
        """Servers left without blocks (e.g. spare pool after placement)."""
        return tuple(s.id for s, m in zip(self.servers, self.block_count) if m == 0)

    def frontier(self, node_id: str) -> int:
        """First block index *after* the node's range (``a + m``); 1 for the head."""
        if node_id == HEAD_ID:
            return 1
        if node_id == TAIL_ID:
            return self.service.block_count + 2
        i = self.index_of(node_id)
        if self.block_count[i] == 0:
            raise ValueError(f"server {node_id} is unused")
        return self.first_block[i] + self.block_count[i]

    def range_of(self, node_id: str) -> tuple[int, int]:
        """Inclusive hosted block range ``(a, a + m - 1)``; dummies host their dummy block."""
        L = self.service.block_count
        if node_id == HEAD_ID:
            return (0, 0)
        if node_id == TAIL_ID:
            return (L + 1, L + 1)
        i = self.index_of(node_id)
        if self.block_count[i] == 0:
            raise ValueError(f"server {node_id} is unused")
        return (self.first_block[i], self.first_block[i] + self.block_count[i] - 1)


@dataclass(frozen=True)
class ChainEdge:
    """A feasible consecutive hop ``src -> dst`` processing ``blocks_at_dst`` blocks at dst."""

    src: str
    dst: str
    blocks_at_dst: int


def edge_feasible(placement: BlockPlacement, src: str, dst: str) -> bool:
    """True iff ``dst`` can directly continue ``src``'s block range."""
    if dst == HEAD_ID or src == TAIL_ID:
        return False
    f = placement.frontier(src)
    a, b = placement.range_of(dst)
    return a <= f <= b


def make_edge(placement: BlockPlacement, src: str, dst: str) -> ChainEdge:
    if not edge_feasible(placement, src, dst):
        raise ValueError(f"edge ({src}, {dst}) is not feasible under this placement")
    a, b = placement.range_of(dst)
    return ChainEdge(src, dst, b + 1 - placement.frontier(src))


def feasible_edges(placement: BlockPlacement) -> tuple[ChainEdge, ...]:
    """All consecutive-hop pairs over the extended node set (dummies included)."""
    nodes = [HEAD_ID, *placement.used_ids(), TAIL_ID]
    edges = []
    for src in nodes:
        for dst in nodes:
            if src != dst and edge_feasible(placement, src, dst):
                edges.append(make_edge(placement, src, dst))
    return tuple(edges)


def edge_cost(placement: BlockPlacement, edge: ChainEdge) -> float:
    """Time added by traversing ``edge``: comm plus per-block compute at dst."""
    if edge.dst == TAIL_ID:
        return 0.0
    srv = placement.server(edge.dst)
    return srv.comm_time_s + srv.per_block_compute_s * edge.blocks_at_dst


@dataclass(frozen=True)
class ServerChain:
    """An ordered head-to-tail traversal covering all blocks exactly once."""

    server_ids: tuple[str, ...]
    edges: tuple[ChainEdge, ...]
    service_time_s: float

    @property
    def rate(self) -> float:
        return 1.0 / self.service_time_s


def build_chain(placement: BlockPlacement, server_ids: Sequence[str]) -> ServerChain:
    """Validate and assemble the chain visiting ``server_ids`` in order."""
    if not server_ids:
        raise ValueError("a chain needs at least one real server")
    nodes = [HEAD_ID, *server_ids, TAIL_ID]
    edges = []
    for src, dst in zip(nodes, nodes[1:]):
        edges.append(make_edge(placement, src, dst))
    total = sum(e.blocks_at_dst for e in edges)
    if total != placement.service.block_count + 1:
        raise ValueError(
            f"chain covers {total} blocks, expected {placement.service.block_count + 1} "
            "(all service blocks plus the dummy exit block)"
        )
    t = chain_service_time(placement, edges)
    return ServerChain(tuple(server_ids), tuple(edges), t)


def chain_service_time(placement: BlockPlacement, edges: Iterable[ChainEdge]) -> float:
    """Mean service time of a chain: sum of per-hop comm and compute times."""
    return sum(edge_cost(placement, e) for e in edges)


def processed_blocks(placement: BlockPlacement, chain: ServerChain) -> list[tuple[str, int, int]]:
    """Per hop, the inclusive block range processed at the hop's destination."""
    out = []
    start = 1
    for e in chain.edges:
        out.append((e.dst, start, start + e.blocks_at_dst - 1))
        start += e.blocks_at_dst
    return out


def memory_consumption(
    placement: BlockPlacement,
    server_id: str,
    jobs_per_edge: Mapping[tuple[str, str], int] | None = None,
) -> int:
    """Exact bytes consumed at a server: hosted blocks plus per-job cache slots.

    ``jobs_per_edge`` maps ``(src, dst)`` to the number of concurrent jobs on
    that hop; only hops into ``server_id`` are relevant and each must be
    feasible under the placement.
    """
    i = placement.index_of(server_id)
    m_j = placement.block_count[i]
    svc = placement.service
    total = svc.block_bytes * m_j
    for (src, dst), jobs in (jobs_per_edge or {}).items():
        if dst != server_id:
            continue
        _require_int("jobs", jobs)
        if not edge_feasible(placement, src, dst):
            raise ValueError(f"edge ({src}, {dst}) is not feasible under this placement")
        total += svc.cache_slot_bytes * jobs * make_edge(placement, src, dst).blocks_at_dst
    return total


def cache_slots(placement: BlockPlacement, server_id: str) -> int:
    """Cache slots left at a server after hosting its blocks (floor division)."""
    i = placement.index_of(server_id)
    srv = placement.servers[i]
    residual = srv.memory_bytes - placement.service.block_bytes * placement.block_count[i]
    if residual < 0:
        raise ValueError(f"server {server_id}: placed blocks exceed memory")
    return residual // placement.service.cache_slot_bytes


@dataclass(frozen=True)
class ComposedSystem:
    """Chains plus per-chain concurrency capacities: the system's job servers."""

    placement: BlockPlacement
    chains: tuple[ServerChain, ...]
    capacities: tuple[int, ...]

    def __post_init__(self):
        if len(self.chains) != len(self.capacities):
            raise ValueError("one capacity per chain required")
        for c in self.capacities:
            _require_int("capacity", c)
            if c < 1:
                raise ValueError("chain capacities must be >= 1")
        times = [ch.service_time_s for ch in self.chains]
        if any(t2 < t1 for t1, t2 in zip(times, times[1:])):
            raise ValueError("chains must be sorted by nondecreasing service time")
        usage: dict[str, int] = {}
        for ch, c in zip(self.chains, self.capacities):
            for e in ch.edges:
                if e.dst != TAIL_ID:
                    usage[e.dst] = usage.get(e.dst, 0) + e.blocks_at_dst * c
        for sid, used in usage.items():
            budget = cache_slots(self.placement, sid)
            if used > budget:
                raise ValueError(
                    f"server {sid}: {used} cache slots allocated > budget {budget}"
                )

    @property
    def rates(self) -> tuple[float, ...]:
        return tuple(ch.rate for ch in self.chains)

    @property
    def total_rate(self) -> float:
        return sum(c * ch.rate for c, ch in zip(self.capacities, self.chains))


@dataclass(frozen=True)
class CompositionReport:
    """Feasibility report for a (placement, chains, capacities) composition."""

    objective: int
    rate_ok: bool
    memory_ok: bool
    total_rate: float
    required_rate: float
    slot_usage: dict[str, int]
    violations: tuple[str, ...]


def evaluate_composition(
    placement: BlockPlacement,
    chains: Sequence[ServerChain],
    capacities: Sequence[int],
    arrival_rate: float,
    load_target: float,
) -> CompositionReport:
    """Check the capacity-minimization objective and both constraint families.

    Reports rather than raises: ``rate_ok`` is whether the summed chain
    throughput meets ``arrival_rate / load_target``; ``memory_ok`` is whether
    every server's allocated cache slots fit its residual slot budget.
    """
    if len(chains) != len(capacities):
        raise ValueError("one capacity per chain required")
    if not 0 < load_target < 1:
        raise ValueError("load_target must lie in (0, 1)")
    required = arrival_rate / load_target
    total_rate = sum(c / ch.service_time_s for c, ch in zip(capacities, chains))

    usage: dict[str, int] = {sid: 0 for sid in placement.used_ids()}
    violations: list[str] = []
    for ch, c in zip(chains, capacities):
        for e in ch.edges:
            if e.dst == TAIL_ID:
                continue
            usage[e.dst] += e.blocks_at_dst * c
    memory_ok = True
    for sid, used in usage.items():
        budget = cache_slots(placement, sid)
        if used > budget:
            memory_ok = False
            violations.append(f"server {sid}: {used} slots allocated > budget {budget}")
    rate_ok = total_rate >= required
    if not rate_ok:
        violations.append(f"total rate {total_rate:.6g} < required {required:.6g}")
    return CompositionReport(
        objective=sum(capacities),
        rate_ok=rate_ok,
        memory_ok=memory_ok,
        total_rate=total_rate,
        required_rate=required,
        slot_usage=usage,
        violations=tuple(violations),
    )
