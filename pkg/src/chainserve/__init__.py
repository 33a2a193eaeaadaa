"""Server-chain composition and load balancing for memory-bound chained services."""

from .analysis import (
    ChainRates,
    OccupancyBounds,
    birth_death_mean_occupancy,
    bound_curve,
    death_rate_bounds,
    exact_two_chain_occupancy,
    occupancy_bounds,
    transition_rates,
    tune_capacity_bound,
)
from .cache_alloc import (
    SufficiencyReport,
    enumerate_feasible_chains,
    greedy_cache_allocation,
    verify_fastest_chain_sufficiency,
)
from .errors import ChainserveError, InfeasibleError, OracleLimitError, UnstableError
from .model import (
    GB,
    HEAD_ID,
    TAIL_ID,
    BlockPlacement,
    ChainEdge,
    ComposedSystem,
    CompositionReport,
    ServerChain,
    ServerSpec,
    ServiceSpec,
    build_chain,
    cache_slots,
    chain_service_time,
    evaluate_composition,
    feasible_edges,
    memory_consumption,
    processed_blocks,
)
from .placement import (
    CapacityTuning,
    PlacementResult,
    ReservationProfile,
    capacity_upper_bound,
    greedy_block_placement,
    reservation_profile,
    tune_capacity_surrogate,
)
from .sim import POLICIES, SimConfig, SimStats, policy_step, run_sim
from .workload import (
    DistributionReport,
    GpuProfile,
    PoissonWorkload,
    RttMatrix,
    SampledWorkload,
    ServiceTimeModel,
    TraceRecord,
    TraceWorkload,
    derive_tau_c,
    derive_tau_p,
    distribution_report,
    ingest_trace,
    synth_poisson,
    write_trace,
)

__version__ = "0.1.0"
