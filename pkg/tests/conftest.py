"""Shared fixtures: canonical small instances and random-instance helpers."""

import numpy as np
import pytest


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print one PASS/FAIL line per acceptance criterion after the run."""
    try:
        from test_acceptance import CRITERION_RESULTS
    except Exception:
        return
    if CRITERION_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in CRITERION_RESULTS:
            terminalreporter.write_line(line)

from chainserve import (
    GB,
    BlockPlacement,
    ChainRates,
    GpuProfile,
    RttMatrix,
    ServerSpec,
    ServiceSpec,
    ServiceTimeModel,
    greedy_block_placement,
)

EPS = 0.01


def philox(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


@pytest.fixture
def five_server_instance():
    """Five servers, three blocks, one slow well-provisioned middle server.

    Memory is in tenths of the nominal unit so slot arithmetic stays integral
    (block 10, slot 1).  Greedy placement at capacity 1 yields two disjoint
    chains while the residual memory supports three overlapping chains of
    capacity 5 each.
    """
    service = ServiceSpec(block_count=3, block_bytes=10, cache_slot_bytes=1)
    servers = tuple(
        ServerSpec(
            id=f"j{l}",
            memory_bytes=30 if l == 2 else 20,
            comm_time_s=2.0 if l == 2 else 1.0,
            per_block_compute_s=l * EPS,
        )
        for l in range(1, 6)
    )
    return service, servers


@pytest.fixture
def five_server_placement(five_server_instance):
    service, servers = five_server_instance
    return greedy_block_placement(servers, service, 1, 1.0, 0.7)


def uniform_tradeoff_instance(L: int = 10, tau_c: float = 1.0, tau_p: float = 0.1):
    """L identical servers that can each hold all L blocks at capacity 1.

    Block size is L slot sizes and memory is (L+1) blocks, so capacity 1
    gives L single-server chains while capacity L^2 forces one L-server
    chain of capacity L^2.
    """
    s_c = 1
    s_m = L * s_c
    service = ServiceSpec(block_count=L, block_bytes=s_m, cache_slot_bytes=s_c)
    servers = tuple(
        ServerSpec(f"s{i:02d}", (L + 1) * s_m, tau_c, tau_p) for i in range(L)
    )
    return service, servers


def wan_gpu_fixture(J: int = 20, eta: float = 0.2, seed: int = 101):
    """Geo-distributed GPU fleet: 70-block service, two GPU tiers, WAN RTTs."""
    rng = philox(seed)
    hi = GpuProfile(flops_tflops=120, mem_bandwidth_gb_per_ms=1.02, memory_bytes=40 * GB)
    lo = GpuProfile(flops_tflops=80, mem_bandwidth_gb_per_ms=0.51, memory_bytes=20 * GB)
    n_hi = int(eta * J)
    nodes = ["orch"] + [f"n{i:02d}" for i in range(J)]
    rtt_ms = np.zeros((J + 1, J + 1))
    for i in range(J + 1):
        for j in range(i + 1, J + 1):
            rtt_ms[i, j] = rtt_ms[j, i] = round(float(rng.uniform(5, 60)), 3)
    rtt = RttMatrix(nodes, rtt_ms, overhead_ms=18.0)
    service = ServiceSpec(block_count=70, block_bytes=int(1.32 * GB),
                          cache_slot_bytes=int(0.11 * GB))
    profiles = {f"n{i:02d}": (hi if i < n_hi else lo) for i in range(J)}
    model = ServiceTimeModel(service, profiles, rtt, "orch")
    return service, model.server_specs(2000, 20), model


@pytest.fixture(scope="session")
def wan_fixture():
    return wan_gpu_fixture()


def tiered_instance(memory_bytes: int = 99):
    """Six servers in three speed tiers, each able to host the whole service."""
    service = ServiceSpec(block_count=8, block_bytes=10, cache_slot_bytes=1)
    servers = (
        ServerSpec("a1", memory_bytes, 0.05, 0.02),
        ServerSpec("a2", memory_bytes, 0.05, 0.02),
        ServerSpec("b1", memory_bytes, 0.10, 0.08),
        ServerSpec("b2", memory_bytes, 0.10, 0.08),
        ServerSpec("c1", memory_bytes, 0.20, 0.15),
        ServerSpec("c2", memory_bytes, 0.20, 0.15),
    )
    return service, servers


@pytest.fixture(scope="session")
def tiered_composed_system():
    from chainserve import greedy_block_placement, greedy_cache_allocation

    service, servers = tiered_instance()
    placed = greedy_block_placement(servers, service, 1, 1e9, 0.7)
    return greedy_cache_allocation(placed.placement)


def random_servers(rng: np.random.Generator, J: int, service: ServiceSpec,
                   homogeneous_memory: bool = False) -> tuple[ServerSpec, ...]:
    per_block = service.block_bytes + service.cache_slot_bytes
    if homogeneous_memory:
        M = int(rng.integers(per_block, per_block * (service.block_count + 2)))
        memories = [M] * J
    else:
        memories = [
            int(rng.integers(per_block, per_block * (service.block_count + 2)))
            for _ in range(J)
        ]
    return tuple(
        ServerSpec(
            id=f"s{i}",
            memory_bytes=memories[i],
            comm_time_s=float(np.round(rng.uniform(0.1, 3.0), 6)),
            per_block_compute_s=float(np.round(rng.uniform(0.01, 0.5), 6)),
        )
        for i in range(J)
    )


def random_service(rng: np.random.Generator, max_blocks: int = 12) -> ServiceSpec:
    return ServiceSpec(
        block_count=int(rng.integers(1, max_blocks + 1)),
        block_bytes=int(rng.integers(1, 50)),
        cache_slot_bytes=int(rng.integers(1, 20)),
    )


def random_placement(rng: np.random.Generator, service: ServiceSpec,
                     servers: tuple[ServerSpec, ...]) -> BlockPlacement:
    """A valid (possibly sparse, possibly gappy) random placement."""
    L = service.block_count
    first, count = [], []
    for srv in servers:
        cap = min(srv.memory_bytes // service.block_bytes, L)
        m = int(rng.integers(0, cap + 1))
        if m == 0:
            first.append(0)
            count.append(0)
        else:
            first.append(int(rng.integers(1, L - m + 2)))
            count.append(m)
    return BlockPlacement(service, servers, tuple(first), tuple(count))


def random_chain_rates(rng: np.random.Generator, max_chains: int = 4,
                       max_total_capacity: int = 12,
                       spread: float = 1.2, min_chains: int = 1) -> ChainRates:
    """Random descending rates (ratio >= spread apart) with bounded capacity."""
    K = int(rng.integers(min_chains, max_chains + 1))
    caps = []
    remaining = max_total_capacity - K
    for _ in range(K):
        extra = int(rng.integers(0, remaining + 1))
        caps.append(1 + extra)
        remaining -= extra
    mu = float(rng.uniform(0.5, 4.0))
    rates = []
    for _ in range(K):
        rates.append(mu)
        mu /= float(rng.uniform(spread, 2.5))
    return ChainRates(tuple(rates), tuple(caps))
