"""JSON/CSV loading and saving for CLI artifacts.

The system file carries the service definition plus the server list; the
chains file written by composition is self-contained (service, servers,
placement, chains, capacities) so analysis and simulation need nothing else.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Sequence

from .model import BlockPlacement, ComposedSystem, ServerSpec, ServiceSpec, build_chain
from .workload import GpuProfile, RttMatrix, ServiceTimeModel

ARTIFACT_VERSION = "0.1.0"


def sha256_of(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def provenance(inputs: dict[str, str | Path], **parameters) -> dict:
    return {
        "artifact": "chainserve",
        "version": ARTIFACT_VERSION,
        "inputs": {name: sha256_of(p) for name, p in inputs.items()},
        "parameters": parameters,
    }


def save_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _server_from_dict(d: dict) -> ServerSpec:
    return ServerSpec(
        id=str(d["id"]),
        memory_bytes=int(d["memory_bytes"]),
        comm_time_s=float(d["comm_time_s"]),
        per_block_compute_s=float(d["per_block_compute_s"]),
    )


def load_system(path) -> tuple[ServiceSpec, tuple[ServerSpec, ...]]:
    """Read a system file: block_count/block_bytes/cache_slot_bytes + servers."""
    data = json.loads(Path(path).read_text())
    service = ServiceSpec(
        block_count=int(data["block_count"]),
        block_bytes=int(data["block_bytes"]),
        cache_slot_bytes=int(data["cache_slot_bytes"]),
    )
    servers = tuple(_server_from_dict(s) for s in data.get("servers", []))
    return service, servers


def load_servers(path) -> tuple[ServerSpec, ...]:
    """Read a standalone server list (bare array or {"servers": [...]})."""
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = data["servers"]
    return tuple(_server_from_dict(s) for s in data)


def service_to_dict(service: ServiceSpec) -> dict:
    return {
        "block_count": service.block_count,
        "block_bytes": service.block_bytes,
        "cache_slot_bytes": service.cache_slot_bytes,
    }


def servers_to_list(servers: Sequence[ServerSpec]) -> list[dict]:
    return [
        {
            "id": s.id,
            "memory_bytes": s.memory_bytes,
            "comm_time_s": s.comm_time_s,
            "per_block_compute_s": s.per_block_compute_s,
        }
        for s in servers
    ]


def placement_to_dict(placement: BlockPlacement) -> dict:
    return {
        s.id: {"first_block": a, "block_count": m}
        for s, a, m in zip(placement.servers, placement.first_block, placement.block_count)
        if m > 0
    }


def system_to_dict(system: ComposedSystem, capacity_parameter: int | None = None) -> dict:
    placement = system.placement
    return {
        "capacity_parameter": capacity_parameter,
        "service": service_to_dict(placement.service),
        "servers": servers_to_list(placement.servers),
        "placement": placement_to_dict(placement),
        "chains": [
            {
                "servers": list(ch.server_ids),
                "service_time_s": ch.service_time_s,
                "service_rate_per_s": ch.rate,
                "capacity": cap,
            }
            for ch, cap in zip(system.chains, system.capacities)
        ],
        "total_service_rate_per_s": system.total_rate,
    }


def load_composed(path) -> tuple[ComposedSystem, dict]:
    """Rebuild a composed system from a chains file; returns it plus raw data."""
    data = json.loads(Path(path).read_text())
    service = ServiceSpec(
        block_count=int(data["service"]["block_count"]),
        block_bytes=int(data["service"]["block_bytes"]),
        cache_slot_bytes=int(data["service"]["cache_slot_bytes"]),
    )
    servers = tuple(_server_from_dict(s) for s in data["servers"])
    by_id = {s.id: i for i, s in enumerate(servers)}
    first = [0] * len(servers)
    count = [0] * len(servers)
    for sid, entry in data["placement"].items():
        first[by_id[sid]] = int(entry["first_block"])
        count[by_id[sid]] = int(entry["block_count"])
    placement = BlockPlacement(service, servers, tuple(first), tuple(count))
    chains = tuple(build_chain(placement, c["servers"]) for c in data["chains"])
    capacities = tuple(int(c["capacity"]) for c in data["chains"])
    return ComposedSystem(placement, chains, capacities), data


def load_profiles(path) -> dict:
    """Read profiles: orchestrator node, mean token counts, per-server GPUs."""
    data = json.loads(Path(path).read_text())
    profiles = {
        sid: GpuProfile(
            flops_tflops=float(p["flops_tflops"]),
            mem_bandwidth_gb_per_ms=float(p["mem_bandwidth_gb_per_ms"]),
            memory_bytes=int(p["memory_bytes"]),
            per_block_overhead_ms=float(p.get("per_block_overhead_ms", 1.0)),
            per_block_flops_gflop=float(p.get("per_block_flops_gflop", 5.0)),
        )
        for sid, p in data["profiles"].items()
    }
    return {
        "orchestrator": str(data["orchestrator"]),
        "mean_input_tokens": float(data.get("mean_input_tokens", 2000)),
        "mean_output_tokens": float(data.get("mean_output_tokens", 20)),
        "profiles": profiles,
        "rtt_overhead_ms": float(data.get("rtt_overhead_ms", 18.0)),
    }


def build_service_time_model(service: ServiceSpec, profiles_path, rtt_path) -> ServiceTimeModel:
    info = load_profiles(profiles_path)
    rtt = RttMatrix.from_csv(rtt_path, overhead_ms=info["rtt_overhead_ms"])
    return ServiceTimeModel(
        service=service,
        profiles=info["profiles"],
        rtt=rtt,
        orchestrator=info["orchestrator"],
    )
