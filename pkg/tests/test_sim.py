"""Discrete-event simulator: policies, statistics, invariants."""

import math

import numpy as np
import pytest

from chainserve import (
    ChainRates,
    PoissonWorkload,
    SampledWorkload,
    SimConfig,
    TraceRecord,
    TraceWorkload,
    occupancy_bounds,
    policy_step,
    run_sim,
)
from chainserve.sim import CENTRAL_QUEUE
from conftest import philox, wan_gpu_fixture


def mk_config(**kw):
    base = dict(
        rates=(1.0,),
        capacities=(1,),
        workload=PoissonWorkload(0.5),
        horizon_jobs=20_000,
        warmup_fraction=0.1,
        seed=5,
        replications=2,
    )
    base.update(kw)
    return SimConfig(**base)


class TestPolicyStep:
    RATES = (2.0, 1.0, 0.5)
    CAPS = (1, 2, 2)

    def test_fastest_free_prefers_first(self):
        assert policy_step("jffc", self.RATES, self.CAPS, [0, 0, 0], [0], ("arrival",)) == 0

    def test_fastest_free_skips_full(self):
        assert policy_step("jffc", self.RATES, self.CAPS, [1, 2, 0], [0], ("arrival",)) == 2

    def test_fastest_free_queues_when_saturated(self):
        decision = policy_step("jffc", self.RATES, self.CAPS, [1, 2, 2], [0], ("arrival",))
        assert decision is CENTRAL_QUEUE

    def test_completion_pulls_from_central_queue(self):
        assert policy_step("jffc", self.RATES, self.CAPS, [1, 2, 1], [3], ("completion", 2)) == 2
        assert policy_step("jffc", self.RATES, self.CAPS, [1, 2, 1], [0], ("completion", 2)) is CENTRAL_QUEUE

    def test_sed_tie_prefers_lower_index(self):
        # expected delays (3+1)/2 = 2 and (1+1)/1 = 2: tie, index wins
        rates, caps = (2.0, 1.0), (5, 5)
        decision = policy_step("sed", rates, caps, [3, 1], [0, 0], ("arrival",))
        assert decision == 0

    def test_jsq_counts_waiting_jobs(self):
        rates, caps = (2.0, 1.0), (1, 1)
        assert policy_step("jsq", rates, caps, [1, 1], [2, 0], ("arrival",)) == 1

    def test_jiq_prefers_idle_then_falls_back(self):
        rates, caps = (2.0, 1.0, 0.5), (1, 1, 1)
        assert policy_step("jiq", rates, caps, [1, 0, 1], [0, 0, 0], ("arrival",)) == 1
        assert policy_step("jiq", rates, caps, [1, 1, 1], [4, 0, 1], ("arrival",)) == 1

    def test_sa_jsq_matches_jsq_with_index_ties(self):
        rng = philox(8)
        for _ in range(200):
            K = int(rng.integers(1, 5))
            caps = tuple(int(rng.integers(1, 4)) for _ in range(K))
            rates = tuple(sorted((float(rng.uniform(0.1, 3)) for _ in range(K)), reverse=True))
            z = [int(rng.integers(0, caps[k] + 1)) for k in range(K)]
            q = [int(rng.integers(0, 4)) if z[k] == caps[k] else 0 for k in range(K)]
            assert policy_step("jsq", rates, caps, z, q, ("arrival",)) == policy_step(
                "sa-jsq", rates, caps, z, q, ("arrival",)
            )

    def test_matches_inline_dispatch(self):
        # The simulator inlines the fastest-free scan; it must agree with the
        # public decision function on arbitrary snapshots.
        rng = philox(9)
        for _ in range(300):
            K = int(rng.integers(1, 6))
            caps = tuple(int(rng.integers(1, 4)) for _ in range(K))
            rates = tuple(sorted((float(rng.uniform(0.1, 3)) for _ in range(K)), reverse=True))
            z = [int(rng.integers(0, caps[k] + 1)) for k in range(K)]
            inline = next((k for k in range(K) if z[k] < caps[k]), CENTRAL_QUEUE)
            assert inline == policy_step("jffc", rates, caps, z, [0], ("arrival",))


class TestSingleJob:
    def test_deterministic_response(self):
        wl = SampledWorkload((0.0,), (5.0,))
        stats = run_sim(mk_config(rates=(2.0,), capacities=(1,), workload=wl,
                                  horizon_jobs=1, warmup_fraction=0.0, replications=1))
        assert stats.mean_response_s == 2.5
        assert stats.mean_waiting_s == 0.0
        assert stats.mean_service_s == 2.5


class TestAgainstClosedForms:
    def test_mm1_mean_response(self):
        stats = run_sim(mk_config(
            rates=(1.0,), capacities=(1,), workload=PoissonWorkload(0.5),
            horizon_jobs=1_000_000, replications=1, seed=7,
        ))
        assert stats.mean_response_s == pytest.approx(2.0, rel=0.03)

    def test_mm2_mean_occupancy(self):
        stats = run_sim(mk_config(
            rates=(1.0,), capacities=(2,), workload=PoissonWorkload(1.0),
            horizon_jobs=150_000, replications=4, seed=11,
        ))
        hw = stats.occupancy_ci_half_width
        assert abs(stats.mean_occupancy - 4 / 3) <= max(3 * hw, 0.02)

    def test_occupancy_within_bounds_quick(self):
        rates = ChainRates((2.0, 0.7, 0.3), (2, 3, 2))
        lam = 0.6 * rates.total_rate
        bounds = occupancy_bounds(rates, lam)
        stats = run_sim(mk_config(
            rates=rates.rates, capacities=rates.capacities,
            workload=PoissonWorkload(lam), horizon_jobs=80_000,
            replications=6, seed=13, workers=2,
        ))
        hw = stats.occupancy_ci_half_width
        assert stats.mean_occupancy + hw >= bounds.lower_mean_occupancy
        assert stats.mean_occupancy - hw <= bounds.upper_mean_occupancy

    def test_little_law_self_check(self):
        stats = run_sim(mk_config(horizon_jobs=100_000, replications=2))
        assert stats.little_law_gap < 0.02
        assert stats.mean_response_s == pytest.approx(
            stats.mean_waiting_s + stats.mean_service_s, rel=1e-9
        )


class TestDeterminism:
    def test_bit_identical_repeat(self):
        cfg = mk_config(collect_jobs=True, replications=2, horizon_jobs=15_000)
        a, b = run_sim(cfg), run_sim(cfg)
        assert a.to_dict() == b.to_dict()
        assert a.job_records == b.job_records

    def test_seed_changes_results(self):
        a = run_sim(mk_config(seed=1))
        b = run_sim(mk_config(seed=2))
        assert a.mean_response_s != b.mean_response_s

    def test_workers_do_not_change_results(self):
        a = run_sim(mk_config(replications=3, workers=1, horizon_jobs=10_000))
        b = run_sim(mk_config(replications=3, workers=2, horizon_jobs=10_000))
        assert a.to_dict() == b.to_dict()


def _chain_events(records, chain):
    events = []
    for _, arrival, start, finish, k in records:
        if k == chain:
            events.append((start, 1))
            events.append((finish, -1))
    events.sort()
    peak, cur = 0, 0
    for _, delta in events:
        cur += delta
        peak = max(peak, cur)
    return peak


@pytest.fixture(scope="module")
def jffc_log():
    cfg = mk_config(
        rates=(1.5, 0.6), capacities=(1, 2), workload=PoissonWorkload(1.3),
        horizon_jobs=8_000, warmup_fraction=0.0, replications=1,
        collect_jobs=True, seed=29,
    )
    stats = run_sim(cfg)
    return cfg, stats.job_records


class TestInvariantsFromJobLog:

    def test_capacity_never_exceeded(self, jffc_log):
        cfg, records = jffc_log
        for k, cap in enumerate(cfg.capacities):
            assert _chain_events(records, k) <= cap

    def test_queued_jobs_start_in_arrival_order(self, jffc_log):
        _, records = jffc_log
        waited = [(arrival, start) for _, arrival, start, _, _ in records if start > arrival]
        starts = [s for _, s in sorted(waited)]
        assert starts == sorted(starts)

    def test_work_conserving_waits(self, jffc_log):
        cfg, records = jffc_log
        # any job that waited must have arrived while every chain was full
        intervals = [(start, finish, k) for _, _, start, finish, k in records]
        for _, arrival, start, _, _ in records:
            if start <= arrival:
                continue
            busy = [0] * len(cfg.capacities)
            for s, f, k in intervals:
                if s <= arrival < f:
                    busy[k] += 1
            assert busy == list(cfg.capacities)

    def test_response_decomposition(self, jffc_log):
        _, records = jffc_log
        for _, arrival, start, finish, _ in records:
            assert arrival <= start <= finish


class TestStability:
    def test_unstable_flag_and_growth(self):
        rates, caps = (1.0, 0.5), (1, 1)
        nu = 1.5
        hot = run_sim(mk_config(
            rates=rates, capacities=caps, workload=PoissonWorkload(1.05 * nu),
            horizon_jobs=120_000, replications=2, seed=3,
        ))
        assert hot.unstable
        assert hot.occ_second_half > 1.5 * hot.occ_first_half
        assert hot.end_queue_len > 1000
        cool = run_sim(mk_config(
            rates=rates, capacities=caps, workload=PoissonWorkload(0.9 * nu),
            horizon_jobs=120_000, replications=2, seed=3,
        ))
        assert not cool.unstable
        assert all(math.isfinite(m) for m in cool.rep_mean_response_s)
        assert cool.end_queue_len < 1000


class TestPolicies:
    def test_all_policies_run_and_jffc_wins(self, tiered_composed_system):
        # Composed chains have comparable-but-distinct rates; central-queue
        # fastest-free dispatch then beats every dedicated-queue baseline.
        system = tiered_composed_system
        nu = system.total_rate
        results = {}
        for policy in ("jffc", "jsq", "jiq", "sed", "sa-jsq"):
            results[policy] = run_sim(mk_config(
                rates=system.rates, capacities=system.capacities,
                workload=PoissonWorkload(0.7 * nu),
                policy=policy, horizon_jobs=20_000, replications=4, seed=17, workers=2,
            ))
        for policy, stats in results.items():
            assert stats.jobs_counted == 4 * 18_000
            if policy != "jffc":
                assert results["jffc"].mean_response_s <= stats.mean_response_s

    def test_dedicated_queue_fcfs_within_chain(self):
        stats = run_sim(mk_config(
            rates=(1.0, 0.5), capacities=(1, 1), workload=PoissonWorkload(1.2),
            policy="jsq", horizon_jobs=5_000, warmup_fraction=0.0,
            replications=1, collect_jobs=True, seed=2,
        ))
        per_chain = {}
        for _, arrival, start, _, k in stats.job_records:
            per_chain.setdefault(k, []).append((arrival, start))
        for entries in per_chain.values():
            starts = [s for _, s in sorted(entries)]
            assert starts == sorted(starts)


class TestTraceMode:
    def test_trace_durations_follow_model(self):
        service, servers, model = wan_gpu_fixture(J=20, eta=0.2, seed=101)
        from chainserve import greedy_block_placement, greedy_cache_allocation

        placed = greedy_block_placement(servers, service, 3, 0.05, 0.7)
        system = greedy_cache_allocation(placed.placement)
        records = tuple(
            TraceRecord(arrival_s=float(i) * 200.0, input_tokens=1500 + i, output_tokens=10 + i)
            for i in range(40)
        )
        cfg = SimConfig(
            rates=system.rates,
            capacities=system.capacities,
            workload=TraceWorkload(records),
            horizon_jobs=40,
            warmup_fraction=0.0,
            replications=1,
            chains=system.chains,
            service_model=model,
            collect_jobs=True,
        )
        stats = run_sim(cfg)
        # arrivals are far apart: every job runs alone on the fastest chain
        for (_, arrival, start, finish, k), record in zip(stats.job_records, records):
            assert k == 0 and start == arrival
            expect = model.request_service_time(
                system.chains[0], record.input_tokens, record.output_tokens
            )
            assert finish - start == pytest.approx(expect, rel=1e-12)

    def test_trace_requires_model(self):
        records = (TraceRecord(0.0, 10, 5),)
        with pytest.raises(ValueError):
            SimConfig(rates=(1.0,), capacities=(1,), workload=TraceWorkload(records))

    def test_empty_trace_rejected(self):
        cfg = mk_config(workload=SampledWorkload((), ()), replications=1)
        with pytest.raises(ValueError):
            run_sim(cfg)


class TestTimeHorizon:
    def test_poisson_time_horizon_controls_span(self):
        stats = run_sim(mk_config(
            workload=PoissonWorkload(2.0), horizon_jobs=10**9 // 2,
            horizon_time_s=5000.0, replications=2, seed=4,
        ))
        # ~10000 arrivals expected, 10% time warmup
        assert 0.85 * 9000 <= stats.jobs_counted / 2 <= 1.15 * 9000
        assert stats.lambda_effective == pytest.approx(2.0, rel=0.05)

    def test_sampled_workload_truncated_by_time(self):
        wl = SampledWorkload(tuple(float(i) for i in range(100)), (1.0,) * 100)
        stats = run_sim(mk_config(
            rates=(10.0,), capacities=(1,), workload=wl, horizon_time_s=49.5,
            warmup_fraction=0.0, replications=1,
        ))
        assert stats.jobs_counted == 50

    def test_empty_time_window_rejected(self):
        with pytest.raises(ValueError, match="time horizon"):
            run_sim(mk_config(workload=PoissonWorkload(1e-9), horizon_time_s=1.0,
                              replications=1))


class TestValidation:
    def test_bad_policy(self):
        with pytest.raises(ValueError):
            mk_config(policy="round-robin")

    def test_bad_warmup(self):
        with pytest.raises(ValueError):
            mk_config(warmup_fraction=0.6)

    def test_unsorted_rates(self):
        with pytest.raises(ValueError):
            mk_config(rates=(1.0, 2.0), capacities=(1, 1))
