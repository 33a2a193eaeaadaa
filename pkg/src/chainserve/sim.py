"""Discrete-event simulation of composed chains under dispatch policies.

The fastest-free-chain policy keeps one central FCFS queue; the baseline
policies (shortest-queue and friends) keep a dedicated FIFO queue per chain,
treating each chain as a pool of ``c_k`` parallel job slots.  A replication
is strictly sequential and deterministic given its substream; replications
use independent counter-based substreams and aggregate order-independently.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats as _scipy_stats

from .model import ServerChain
from .workload import PoissonWorkload, SampledWorkload, ServiceTimeModel, TraceWorkload

POLICIES = ("jffc", "jsq", "jiq", "sed", "sa-jsq")

CENTRAL_QUEUE = None
"""Sentinel decision meaning "hold the job in the central queue"."""


@dataclass(frozen=True)
class SimConfig:
    rates: tuple[float, ...]
    capacities: tuple[int, ...]
    workload: PoissonWorkload | SampledWorkload | TraceWorkload
    policy: str = "jffc"
    horizon_jobs: int = 100_000
    horizon_time_s: float | None = None  # when set, arrivals stop at this time
    warmup_fraction: float = 0.1
    seed: int = 1
    replications: int = 1
    chains: tuple[ServerChain, ...] | None = None
    service_model: ServiceTimeModel | None = None
    collect_jobs: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; choose from {POLICIES}")
        if not self.rates or len(self.rates) != len(self.capacities):
            raise ValueError("rates and capacities must align and be nonempty")
        if any(b > a for a, b in zip(self.rates, self.rates[1:])):
            raise ValueError("rates must be sorted in descending order")
        if any(c < 1 for c in self.capacities):
            raise ValueError("capacities must be >= 1")
        if self.horizon_jobs < 1:
            raise ValueError("horizon_jobs must be >= 1")
        if self.horizon_time_s is not None and self.horizon_time_s <= 0:
            raise ValueError("horizon_time_s must be positive")
        if not 0.0 <= self.warmup_fraction <= 0.5:
            raise ValueError("warmup_fraction must lie in [0, 0.5]")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if isinstance(self.workload, TraceWorkload):
            if self.chains is None or self.service_model is None:
                raise ValueError("trace workloads need chains and a service-time model")
            if len(self.chains) != len(self.rates):
                raise ValueError("one chain object per rate required")

    @property
    def total_rate(self) -> float:
        return sum(r * c for r, c in zip(self.rates, self.capacities))


def policy_step(
    policy: str,
    rates: Sequence[float],
    capacities: Sequence[int],
    in_service: Sequence[int],
    queue_lengths: Sequence[int],
    event: tuple,
) -> int | None:
    """Pure dispatch decision for one event against a state snapshot.

    ``event`` is ``("arrival",)`` or ``("completion", chain_index)``.  Returns
    the chain index to hand a job to, or ``CENTRAL_QUEUE`` (None) to leave it
    queued.  Ties always break toward the smaller chain index, i.e. the
    faster chain under the descending-rate ordering.
    """
    K = len(rates)
    if event[0] == "completion":
        k = event[1]
        if policy == "jffc":
            return k if queue_lengths[0] > 0 else CENTRAL_QUEUE
        return k if queue_lengths[k] > 0 else CENTRAL_QUEUE
    if event[0] != "arrival":
        raise ValueError(f"unknown event {event!r}")

    if policy == "jffc":
        for k in range(K):
            if in_service[k] < capacities[k]:
                return k
        return CENTRAL_QUEUE
    totals = [in_service[k] + queue_lengths[k] for k in range(K)]
    if policy in ("jsq", "sa-jsq"):
        # With index-ascending tie-breaks over descending rates, plain
        # shortest-queue already prefers the fastest among equals, which is
        # exactly the speed-aware variant; the two coincide here.
        return min(range(K), key=lambda k: (totals[k], k))
    if policy == "jiq":
        idle = [k for k in range(K) if totals[k] < capacities[k]]
        if idle:
            return idle[0]
        return min(range(K), key=lambda k: (totals[k], k))
    if policy == "sed":
        return min(range(K), key=lambda k: ((totals[k] + 1) / rates[k], k))
    raise ValueError(f"unknown policy {policy!r}")


@dataclass
class RepResult:
    responses: np.ndarray
    wait_sum: float
    service_sum: float
    counted: int
    window_s: float
    mean_occupancy: float
    occ_first_half: float
    occ_second_half: float
    busy_time_s: tuple[float, ...]
    lambda_effective: float
    end_queue_len: int
    jobs: list[tuple[float, float, float, int]] | None


def _materialize(cfg: SimConfig, rep: int):
    """Arrival times plus either size array (rate-scaled jobs) or token pairs."""
    n = cfg.horizon_jobs
    t_end = cfg.horizon_time_s
    if isinstance(cfg.workload, PoissonWorkload):
        rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(rep,)))
        )
        if t_end is None:
            arrivals = np.cumsum(rng.exponential(1.0 / cfg.workload.rate, n))
        else:
            chunks = []
            total = 0.0
            count = 0
            while total < t_end and count < n:
                block = np.cumsum(rng.exponential(1.0 / cfg.workload.rate, 4096)) + total
                chunks.append(block)
                total = block[-1]
                count += block.size
            arrivals = np.concatenate(chunks)
            arrivals = arrivals[arrivals <= t_end][:n]
            if arrivals.size == 0:
                raise ValueError("no arrivals fall inside the time horizon")
        sizes = rng.exponential(1.0, arrivals.size)
        return arrivals, sizes, None
    if isinstance(cfg.workload, SampledWorkload):
        arrivals = np.asarray(cfg.workload.arrivals_s, dtype=float)
        sizes = np.asarray(cfg.workload.sizes, dtype=float)
        if t_end is not None:
            keep = arrivals <= t_end
            arrivals, sizes = arrivals[keep], sizes[keep]
        arrivals, sizes = arrivals[:n], sizes[:n]
        if arrivals.size == 0:
            raise ValueError("sampled workload is empty")
        return arrivals, sizes, None
    records = [
        r for r in cfg.workload.records if t_end is None or r.arrival_s <= t_end
    ][:n]
    if not records:
        raise ValueError("trace workload is empty")
    arrivals = np.asarray([r.arrival_s for r in records], dtype=float)
    tokens = [(r.input_tokens, r.output_tokens) for r in records]
    return arrivals, None, tokens


def _simulate_once(cfg: SimConfig, rep: int) -> RepResult:
    arrivals, sizes, tokens = _materialize(cfg, rep)
    n = len(arrivals)
    if cfg.horizon_time_s is None:
        warm = int(cfg.warmup_fraction * n)
    else:
        cut = cfg.warmup_fraction * cfg.horizon_time_s
        warm = int(np.searchsorted(arrivals, cut, side="left"))
        if warm >= n:
            raise ValueError("warmup consumed every arrival in the time horizon")
    mid = warm + (n - warm) // 2
    K = len(cfg.rates)
    caps = cfg.capacities
    inv_mu = [1.0 / r for r in cfg.rates]
    model = cfg.service_model
    chains = cfg.chains
    central = cfg.policy == "jffc"

    def duration(j: int, k: int) -> float:
        if sizes is not None:
            return sizes[j] * inv_mu[k]
        tin, tout = tokens[j]
        return model.request_service_time(chains[k], tin, tout)

    z = [0] * K
    queues = [deque()] if central else [deque() for _ in range(K)]
    heap: list[tuple[float, int, int]] = []  # (finish time, chain, job)
    n_sys = 0
    started = False
    last_t = 0.0
    area = 0.0
    busy = [0.0] * K
    w_start = math.nan
    snap_mid = (math.nan, math.nan)
    snap_end = (math.nan, math.nan, tuple())
    end_queue = 0  # central/dedicated backlog at the final arrival
    responses = np.empty(n - warm)
    n_resp = 0
    wait_sum = 0.0
    service_sum = 0.0
    jobs = [(0.0, 0.0, 0.0, -1)] * n if cfg.collect_jobs else None
    start_times = np.empty(n)

    def advance(t: float):
        nonlocal area, last_t
        dt = t - last_t
        if dt > 0.0:
            area += n_sys * dt
            for k in range(K):
                busy[k] += z[k] * dt
            last_t = t

    def start_job(j: int, k: int, t: float):
        nonlocal wait_sum, service_sum
        z[k] += 1
        assert z[k] <= caps[k], "chain capacity exceeded"
        d = duration(j, k)
        start_times[j] = t
        if j >= warm:
            wait_sum += t - arrivals[j]
            service_sum += d
        heapq.heappush(heap, (t + d, k, j))

    def finish_job(j: int, k: int, t: float):
        nonlocal n_sys, n_resp
        z[k] -= 1
        n_sys -= 1
        if j >= warm:
            responses[n_resp] = t - arrivals[j]
            n_resp += 1
        if jobs is not None:
            jobs[j] = (float(arrivals[j]), float(start_times[j]), float(t), k)

    i = 0
    while i < n or heap:
        t_arr = arrivals[i] if i < n else math.inf
        # Completions first at simultaneous timestamps (heap orders ties by
        # chain index), so capacity freed "now" serves this instant's arrival.
        if heap and heap[0][0] <= t_arr:
            t, k, j = heapq.heappop(heap)
            advance(t)
            finish_job(j, k, t)
            q = queues[0] if central else queues[k]
            if q:
                start_job(q.popleft(), k, t)
            continue
        t = t_arr
        advance(t)
        if i == warm and not started:
            started = True
            w_start = t
            last_t = t
            area = 0.0
            for k in range(K):
                busy[k] = 0.0
        n_sys += 1
        if central:
            target = next((k for k in range(K) if z[k] < caps[k]), CENTRAL_QUEUE)
        else:
            qlens = [len(queues[k]) for k in range(K)]
            target = policy_step(cfg.policy, cfg.rates, caps, z, qlens, ("arrival",))
            if target is not None and z[target] >= caps[target]:
                queues[target].append(i)
                target = CENTRAL_QUEUE  # parked in its dedicated queue
            elif target is None:
                raise AssertionError("dedicated-queue policies always pick a chain")
        if target is not CENTRAL_QUEUE:
            start_job(i, target, t)
        elif central:
            queues[0].append(i)
        if i == mid:
            snap_mid = (t, area)
        if i == n - 1:
            snap_end = (t, area, tuple(busy))
            end_queue = sum(len(q) for q in queues)
        i += 1

    t_end, area_end, busy_end = snap_end
    window = t_end - w_start
    if window > 0:
        mean_occ = area_end / window
        lam_eff = (n - warm) / window
    else:
        mean_occ = math.nan
        lam_eff = math.nan
    t_mid, area_mid = snap_mid
    occ_first = area_mid / (t_mid - w_start) if t_mid > w_start else math.nan
    occ_second = (
        (area_end - area_mid) / (t_end - t_mid) if t_end > t_mid else math.nan
    )
    return RepResult(
        responses=responses[:n_resp],
        wait_sum=wait_sum,
        service_sum=service_sum,
        counted=n_resp,
        window_s=window,
        mean_occupancy=mean_occ,
        occ_first_half=occ_first,
        occ_second_half=occ_second,
        busy_time_s=busy_end if busy_end else tuple([math.nan] * K),
        lambda_effective=lam_eff,
        end_queue_len=end_queue,
        jobs=jobs,
    )


@dataclass(frozen=True)
class SimStats:
    """Aggregated steady-state statistics over all replications."""

    policy: str
    jobs_counted: int
    mean_response_s: float
    median_response_s: float
    p95_response_s: float
    p99_response_s: float
    mean_waiting_s: float
    mean_service_s: float
    mean_occupancy: float
    response_ci_half_width_s: float
    occupancy_ci_half_width: float
    per_chain_utilization: tuple[float, ...]
    lambda_effective: float
    little_law_gap: float
    unstable: bool
    seed: int
    replications: int
    rep_mean_response_s: tuple[float, ...]
    rep_mean_occupancy: tuple[float, ...]
    occ_first_half: float
    occ_second_half: float
    end_queue_len: int
    job_records: tuple | None = None

    def to_dict(self) -> dict:
        d = {
            "policy": self.policy,
            "jobs_counted": self.jobs_counted,
            "mean_response_s": self.mean_response_s,
            "median_response_s": self.median_response_s,
            "p95_response_s": self.p95_response_s,
            "p99_response_s": self.p99_response_s,
            "mean_waiting_s": self.mean_waiting_s,
            "mean_service_s": self.mean_service_s,
            "mean_occupancy": self.mean_occupancy,
            "response_ci_half_width_s": self.response_ci_half_width_s,
            "occupancy_ci_half_width": self.occupancy_ci_half_width,
            "per_chain_utilization": list(self.per_chain_utilization),
            "lambda_effective": self.lambda_effective,
            "little_law_gap": self.little_law_gap,
            "unstable": self.unstable,
            "seed": self.seed,
            "replications": self.replications,
            "rep_mean_response_s": list(self.rep_mean_response_s),
            "rep_mean_occupancy": list(self.rep_mean_occupancy),
            "occ_first_half": self.occ_first_half,
            "occ_second_half": self.occ_second_half,
            "end_queue_len": self.end_queue_len,
        }
        return d


def _ci_half_width(values: Sequence[float]) -> float:
    x = np.asarray(values, dtype=float)
    if x.size < 2 or np.any(np.isnan(x)):
        return math.nan
    t = _scipy_stats.t.ppf(0.975, x.size - 1)
    return float(t * x.std(ddof=1) / math.sqrt(x.size))


def _nanmean(values) -> float:
    x = np.asarray(values, dtype=float)
    finite = x[~np.isnan(x)]
    return float(finite.mean()) if finite.size else math.nan


def run_sim(config: SimConfig) -> SimStats:
    """Run all replications and aggregate; see ``SimConfig`` for knobs."""
    reps = list(range(config.replications))
    if config.workers > 1 and config.replications > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_simulate_once, [config] * len(reps), reps))
    else:
        results = [_simulate_once(config, r) for r in reps]

    merged = np.sort(np.concatenate([r.responses for r in results]))
    rep_means = tuple(float(r.responses.mean()) for r in results)
    rep_occ = tuple(r.mean_occupancy for r in results)
    counted = int(sum(r.counted for r in results))
    total_wait = sum(r.wait_sum for r in results)
    total_service = sum(r.service_sum for r in results)
    mean_occ = _nanmean(rep_occ)
    lam_eff = _nanmean([r.lambda_effective for r in results])
    mean_resp = float(merged.mean())
    caps = config.capacities
    util = tuple(
        _nanmean([r.busy_time_s[k] / (caps[k] * r.window_s) if r.window_s > 0 else math.nan
                  for r in results])
        for k in range(len(caps))
    )
    little_gap = (
        abs(mean_occ - lam_eff * mean_resp) / mean_occ
        if mean_occ and not math.isnan(mean_occ)
        else math.nan
    )
    offered = config.workload.rate if isinstance(config.workload, PoissonWorkload) else lam_eff
    job_records = None
    if config.collect_jobs:
        job_records = tuple(
            (rep, *rec) for rep, r in enumerate(results) for rec in (r.jobs or ())
        )
    return SimStats(
        policy=config.policy,
        jobs_counted=counted,
        mean_response_s=mean_resp,
        median_response_s=float(np.quantile(merged, 0.5)),
        p95_response_s=float(np.quantile(merged, 0.95)),
        p99_response_s=float(np.quantile(merged, 0.99)),
        mean_waiting_s=total_wait / counted,
        mean_service_s=total_service / counted,
        mean_occupancy=mean_occ,
        response_ci_half_width_s=_ci_half_width(rep_means),
        occupancy_ci_half_width=_ci_half_width(rep_occ),
        per_chain_utilization=util,
        lambda_effective=lam_eff,
        little_law_gap=little_gap,
        unstable=bool(offered >= config.total_rate) if not math.isnan(offered) else False,
        seed=config.seed,
        replications=config.replications,
        rep_mean_response_s=rep_means,
        rep_mean_occupancy=rep_occ,
        occ_first_half=_nanmean([r.occ_first_half for r in results]),
        occ_second_half=_nanmean([r.occ_second_half for r in results]),
        end_queue_len=max(r.end_queue_len for r in results),
        job_records=job_records,
    )
