"""Workload construction and the token-level service-time model.

Per-visit communication time scales with the round-trips of autoregressive
decoding (one relay per generated token), and per-block compute splits into a
compute-bound prefill pass over the input tokens plus a memory-bound decode
pass per generated token.  Calibrating these at mean token counts yields the
per-server times used by composition; evaluating them at a request's actual
token counts yields trace-driven service durations.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .model import GB, ServerChain, ServerSpec, ServiceSpec, TAIL_ID


@dataclass(frozen=True)
class GpuProfile:
    """Hardware figures sufficient to derive per-block times."""

    flops_tflops: float
    mem_bandwidth_gb_per_ms: float
    memory_bytes: int
    per_block_overhead_ms: float = 1.0
    per_block_flops_gflop: float = 5.0

    def __post_init__(self):
        if min(self.flops_tflops, self.mem_bandwidth_gb_per_ms, self.memory_bytes,
               self.per_block_overhead_ms, self.per_block_flops_gflop) <= 0:
            raise ValueError("profile figures must all be positive")


def derive_tau_p(
    profile: GpuProfile,
    block_bytes: int,
    mean_input_tokens: float,
    mean_output_tokens: float,
) -> float:
    """Per-block compute time in seconds at the given token counts.

    Prefill is compute-bound (GFLOP per block per token over the device
    FLOPS); decode is memory-bound (block bytes over the device bandwidth
    per generated token after the first).
    """
    if mean_input_tokens < 0:
        raise ValueError("mean_input_tokens must be >= 0")
    if mean_output_tokens < 1:
        raise ValueError("mean_output_tokens must be >= 1")
    prefill_ms = profile.per_block_flops_gflop / profile.flops_tflops
    decode_ms = (block_bytes / GB) / profile.mem_bandwidth_gb_per_ms
    total_ms = (
        profile.per_block_overhead_ms
        + prefill_ms * mean_input_tokens
        + decode_ms * (mean_output_tokens - 1)
    )
    return total_ms / 1000.0


class RttMatrix:
    """Symmetric node-to-node round-trip times in milliseconds."""

    def __init__(self, nodes: Sequence[str], rtt_ms, overhead_ms: float = 18.0):
        self.nodes = tuple(nodes)
        self.values_ms = np.asarray(rtt_ms, dtype=float)
        self.overhead_ms = float(overhead_ms)
        n = len(self.nodes)
        if self.values_ms.shape != (n, n):
            raise ValueError(f"matrix shape {self.values_ms.shape} does not match {n} nodes")
        if len(set(self.nodes)) != n:
            raise ValueError("duplicate node ids")
        if np.any(self.values_ms < 0):
            raise ValueError("RTT values must be >= 0")
        if np.any(np.diag(self.values_ms) != 0):
            raise ValueError("RTT diagonal must be zero")
        if not np.array_equal(self.values_ms, self.values_ms.T):
            raise ValueError("RTT matrix must be symmetric")
        if self.overhead_ms < 0:
            raise ValueError("overhead_ms must be >= 0")
        self._index = {node: i for i, node in enumerate(self.nodes)}

    def rtt_ms(self, a: str, b: str) -> float:
        try:
            return float(self.values_ms[self._index[a], self._index[b]])
        except KeyError as exc:
            raise KeyError(f"node {exc.args[0]!r} not in RTT matrix") from None

    @classmethod
    def from_csv(cls, path, overhead_ms: float = 18.0) -> "RttMatrix":
        """Square CSV with a node-id header row and leading id column."""
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty RTT file")
        nodes = [c.strip() for c in rows[0][1:]]
        values = []
        for lineno, row in enumerate(rows[1:], start=2):
            if row[0].strip() != nodes[len(values)]:
                raise ValueError(f"{path}:{lineno}: row order must match the header")
            values.append([float(c) for c in row[1:]])
        return cls(nodes, values, overhead_ms)


def derive_tau_c(
    rtt: RttMatrix, orchestrator: str, node: str, mean_output_tokens: float
) -> float:
    """Total relay communication time in seconds for one request at a server.

    The orchestrator relays activations once per generated token, so the
    round trip (plus per-message overhead) is paid ``mean_output_tokens``
    times.
    """
    if mean_output_tokens < 0:
        raise ValueError("mean_output_tokens must be >= 0")
    per_token_ms = rtt.rtt_ms(orchestrator, node) + rtt.overhead_ms
    return mean_output_tokens * per_token_ms / 1000.0


@dataclass(frozen=True)
class ServiceTimeModel:
    """Token-level timing model for a set of profiled servers."""

    service: ServiceSpec
    profiles: Mapping[str, GpuProfile]
    rtt: RttMatrix
    orchestrator: str

    def tau_p_s(self, server_id: str, input_tokens: float, output_tokens: float) -> float:
        return derive_tau_p(
            self.profiles[server_id], self.service.block_bytes, input_tokens, output_tokens
        )

    def tau_c_s(self, server_id: str, output_tokens: float) -> float:
        return derive_tau_c(self.rtt, self.orchestrator, server_id, output_tokens)

    def server_specs(
        self, mean_input_tokens: float, mean_output_tokens: float
    ) -> tuple[ServerSpec, ...]:
        """Server list calibrated at mean token counts, ready for composition."""
        return tuple(
            ServerSpec(
                id=sid,
                memory_bytes=profile.memory_bytes,
                comm_time_s=self.tau_c_s(sid, mean_output_tokens),
                per_block_compute_s=self.tau_p_s(sid, mean_input_tokens, mean_output_tokens),
            )
            for sid, profile in self.profiles.items()
        )

    def request_service_time(
        self, chain: ServerChain, input_tokens: int, output_tokens: int
    ) -> float:
        """Service time of one request on a chain at its actual token counts."""
        if input_tokens <= 0 or output_tokens <= 0:
            raise ValueError("token counts must be positive")
        total = 0.0
        for e in chain.edges:
            if e.dst == TAIL_ID:
                continue
            total += self.tau_c_s(e.dst, output_tokens)
            total += self.tau_p_s(e.dst, input_tokens, output_tokens) * e.blocks_at_dst
        return total


@dataclass(frozen=True)
class TraceRecord:
    arrival_s: float
    input_tokens: int
    output_tokens: int


@dataclass(frozen=True)
class PoissonWorkload:
    """Stochastic workload: the simulator draws arrivals and sizes itself."""

    rate: float

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("rate must be positive")


@dataclass(frozen=True)
class SampledWorkload:
    """Materialized arrivals with abstract job sizes (mean-1 scale)."""

    arrivals_s: tuple[float, ...]
    sizes: tuple[float, ...]

    def __post_init__(self):
        if len(self.arrivals_s) != len(self.sizes):
            raise ValueError("arrivals and sizes must align")
        if any(b < a for a, b in zip(self.arrivals_s, self.arrivals_s[1:])):
            raise ValueError("arrival times must be nondecreasing")


@dataclass(frozen=True)
class TraceWorkload:
    """Materialized arrivals with per-request token counts."""

    records: tuple[TraceRecord, ...]

    @property
    def arrivals_s(self) -> tuple[float, ...]:
        return tuple(r.arrival_s for r in self.records)


TRACE_HEADER = ["arrival_s", "input_tokens", "output_tokens"]


def ingest_trace(path) -> TraceWorkload:
    """Read a request trace CSV, validating types and arrival monotonicity."""
    records: list[TraceRecord] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: missing header row") from None
        if [c.strip() for c in header] != TRACE_HEADER:
            raise ValueError(f"{path}:1: header must be {','.join(TRACE_HEADER)}")
        prev = -math.inf
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                arrival = float(row[0])
                tin = int(row[1])
                tout = int(row[2])
            except (ValueError, IndexError):
                raise ValueError(f"{path}:{lineno}: malformed row {row!r}") from None
            if tin <= 0 or tout <= 0:
                raise ValueError(f"{path}:{lineno}: token counts must be positive")
            if arrival < prev:
                raise ValueError(f"{path}:{lineno}: arrival times must be nondecreasing")
            prev = arrival
            records.append(TraceRecord(arrival, tin, tout))
    return TraceWorkload(tuple(records))


def write_trace(workload: TraceWorkload, path) -> None:
    """Canonical serialization: shortest round-trip floats, one row per record."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for r in workload.records:
            writer.writerow([repr(r.arrival_s), r.input_tokens, r.output_tokens])


def synth_poisson(rate: float, jobs: int, seed: int) -> SampledWorkload:
    """Draw a Poisson arrival stream with unit-mean exponential job sizes."""
    if rate <= 0:
        raise ValueError("rate must be positive")
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    arrivals = np.cumsum(rng.exponential(1.0 / rate, jobs))
    sizes = rng.exponential(1.0, jobs)
    return SampledWorkload(tuple(arrivals.tolist()), tuple(sizes.tolist()))


@dataclass(frozen=True)
class DistributionReport:
    """Empirical vs. same-mean exponential comparison for a workload."""

    interarrival_mean_s: float
    interarrival_std_ratio: float
    service_mean: float
    service_std_ratio: float
    interarrival_cdf: tuple[tuple[float, float, float], ...]
    service_cdf: tuple[tuple[float, float, float], ...]

    def to_dict(self) -> dict:
        return {
            "interarrival_mean_s": self.interarrival_mean_s,
            "interarrival_std_ratio": self.interarrival_std_ratio,
            "service_mean": self.service_mean,
            "service_std_ratio": self.service_std_ratio,
            "interarrival_cdf": [list(p) for p in self.interarrival_cdf],
            "service_cdf": [list(p) for p in self.service_cdf],
        }


def _cdf_points(values: np.ndarray, max_points: int = 256):
    ordered = np.sort(values)
    n = ordered.size
    mean = float(ordered.mean())
    idx = np.unique(np.linspace(0, n - 1, min(n, max_points)).astype(int))
    points = []
    for i in idx:
        x = float(ordered[i])
        empirical = (i + 1) / n
        exponential = 1.0 - math.exp(-x / mean) if mean > 0 else 1.0
        points.append((x, empirical, exponential))
    return tuple(points)


def distribution_report(
    workload: SampledWorkload | TraceWorkload,
    service_values: Sequence[float] | None = None,
) -> DistributionReport:
    """Compare interarrival and service distributions against exponentials.

    The std ratio is the sample-std over the std of an exponential with the
    same mean (i.e. the coefficient of variation); 1 means exponential-like.
    For token traces, pass the per-request service durations explicitly.
    """
    arrivals = np.asarray(workload.arrivals_s, dtype=float)
    if arrivals.size < 100:
        raise ValueError(f"need >= 100 records, got {arrivals.size}")
    if service_values is not None:
        services = np.asarray(service_values, dtype=float)
    elif isinstance(workload, SampledWorkload):
        services = np.asarray(workload.sizes, dtype=float)
    else:
        raise ValueError("token traces need explicit service durations")
    if services.size != arrivals.size:
        raise ValueError("one service value per record required")

    inter = np.diff(arrivals)

    def ratio(x: np.ndarray) -> float:
        mean = float(x.mean())
        return float(x.std(ddof=1)) / mean if mean > 0 else 0.0

    return DistributionReport(
        interarrival_mean_s=float(inter.mean()),
        interarrival_std_ratio=ratio(inter),
        service_mean=float(services.mean()),
        service_std_ratio=ratio(services),
        interarrival_cdf=_cdf_points(inter),
        service_cdf=_cdf_points(services),
    )
