"""Command-line front end: compose, tune, analyze, simulate, report.

Exit codes: 0 success, 2 infeasible composition, 3 unstable system, 1 other
errors.  All outputs are JSON or CSV with a provenance header (input hashes,
seed, version) so identical inputs produce identical artifacts.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import analysis, placement as placement_mod, sim
from .cache_alloc import greedy_cache_allocation
from .config import (
    build_service_time_model,
    load_composed,
    load_servers,
    load_system,
    placement_to_dict,
    provenance,
    save_json,
    system_to_dict,
)
from .errors import InfeasibleError, UnstableError
from .model import evaluate_composition
from .workload import PoissonWorkload, ingest_trace


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--out", required=True, help="output directory")


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _compose(args) -> tuple:
    service, servers = load_system(args.service)
    if args.servers:
        servers = load_servers(args.servers)
    if not servers:
        raise InfeasibleError("server list is empty")
    if args.c is not None:
        c = args.c
    elif args.tune == "surrogate" or args.tune is None:
        c = placement_mod.tune_capacity_surrogate(
            servers, service, args.lam, args.rho_bar
        ).c_star
    else:
        c = analysis.tune_capacity_bound(
            servers, service, args.lam, args.rho_bar, which=args.tune
        ).c_star
    placed = placement_mod.greedy_block_placement(servers, service, c, args.lam, args.rho_bar)
    system = greedy_cache_allocation(placed.placement)
    return service, servers, c, placed, system


def cmd_compose(args) -> int:
    out = _outdir(args)
    service, servers, c, placed, system = _compose(args)
    report = evaluate_composition(
        placed.placement, system.chains, system.capacities, args.lam, args.rho_bar
    )
    prov = provenance(
        {"service": args.service, **({"servers": args.servers} if args.servers else {})},
        command="compose",
        capacity=c,
        arrival_rate=args.lam,
        load_target=args.rho_bar,
    )
    save_json(out / "placement.json", {"provenance": prov, "placement": placement_to_dict(placed.placement)})
    payload = {"provenance": prov, **system_to_dict(system, capacity_parameter=c)}
    payload["evaluation"] = {
        "objective_total_capacity": report.objective,
        "rate_ok": report.rate_ok,
        "memory_ok": report.memory_ok,
        "total_rate_per_s": report.total_rate,
        "required_rate_per_s": report.required_rate,
        "violations": list(report.violations),
    }
    save_json(out / "chains.json", payload)
    print(
        f"composed {len(system.chains)} chains (c={c}), total rate "
        f"{system.total_rate:.6g}/s, rate_ok={report.rate_ok}, memory_ok={report.memory_ok}"
    )
    return 0


def cmd_tune(args) -> int:
    out = _outdir(args)
    service, servers = load_system(args.service)
    if args.servers:
        servers = load_servers(args.servers)
    surrogate = placement_mod.tune_capacity_surrogate(servers, service, args.lam, args.rho_bar)
    rows = analysis.bound_curve(servers, service, args.lam, args.rho_bar)
    bounds_by_c = {r.capacity: r for r in rows}

    def argmin(which: str) -> int | None:
        best_c, best = None, float("inf")
        for r in rows:
            val = getattr(r, f"{which}_response_s")
            if r.stable and val is not None and val < best:
                best_c, best = r.capacity, val
        return best_c

    c_lower, c_upper = argmin("lower"), argmin("upper")
    prov = provenance(
        {"service": args.service, **({"servers": args.servers} if args.servers else {})},
        command="tune",
        arrival_rate=args.lam,
        load_target=args.rho_bar,
        c_star_surrogate=surrogate.c_star,
        c_star_lower=c_lower,
        c_star_upper=c_upper,
    )
    with open(out / "tuning.csv", "w", newline="") as fh:
        fh.write(f"# {json.dumps(prov, sort_keys=True)}\n")
        writer = csv.writer(fh)
        writer.writerow(
            ["c", "chains_surrogate", "c_times_k", "rate_satisfied",
             "chains_allocated", "lower_response_s", "upper_response_s", "stable"]
        )
        for row in surrogate.rows:
            b = bounds_by_c.get(row.capacity)
            writer.writerow([
                row.capacity,
                row.chain_count if row.chain_count is not None else "",
                row.scaled_cost if row.scaled_cost is not None else "",
                int(row.rate_satisfied),
                b.chain_count if b else "",
                b.lower_response_s if b and b.stable else "",
                b.upper_response_s if b and b.stable else "",
                int(b.stable) if b else 0,
            ])
    save_json(out / "tuning.json", {
        "provenance": prov,
        "c_star_surrogate": surrogate.c_star,
        "c_star_lower": c_lower,
        "c_star_upper": c_upper,
    })
    print(f"c* surrogate={surrogate.c_star} lower={c_lower} upper={c_upper}")
    return 0


def cmd_analyze(args) -> int:
    out = _outdir(args)
    system, _ = load_composed(args.chains)
    rates = analysis.ChainRates.from_system(system)
    bounds = analysis.occupancy_bounds(rates, args.lam)
    payload = {
        "provenance": provenance({"chains": args.chains}, command="analyze", arrival_rate=args.lam),
        "arrival_rate": args.lam,
        "total_service_rate_per_s": rates.total_rate,
        "lower_mean_occupancy": bounds.lower_mean_occupancy,
        "upper_mean_occupancy": bounds.upper_mean_occupancy,
        "lower_mean_response_s": bounds.lower_mean_response_s,
        "upper_mean_response_s": bounds.upper_mean_response_s,
    }
    if rates.chain_count == 2:
        occ = analysis.exact_two_chain_occupancy(
            rates.rates[0], rates.rates[1], rates.capacities[0], rates.capacities[1], args.lam
        )
        payload["exact_mean_occupancy"] = occ
        payload["exact_mean_response_s"] = occ / args.lam
    save_json(out / "bounds.json", payload)
    print(
        f"response time in [{bounds.lower_mean_response_s:.6g}, "
        f"{bounds.upper_mean_response_s:.6g}] s"
    )
    return 0


def cmd_simulate(args) -> int:
    out = _outdir(args)
    system, _ = load_composed(args.chains)
    rates = analysis.ChainRates.from_system(system)
    inputs = {"chains": args.chains}
    horizon = args.jobs
    if args.trace:
        workload = ingest_trace(args.trace)
        model = build_service_time_model(system.placement.service, args.profiles, args.rtt)
        chains = system.chains
        inputs.update({"trace": args.trace, "profiles": args.profiles, "rtt": args.rtt})
    else:
        if args.lam is None:
            raise ValueError("either --trace or --lambda is required")
        if args.lam >= rates.total_rate:
            capped = min(horizon, 100_000)
            print(
                f"warning: arrival rate {args.lam:.6g} >= total rate "
                f"{rates.total_rate:.6g}; capping horizon at {capped} jobs",
                file=sys.stderr,
            )
            horizon = capped
        workload = PoissonWorkload(args.lam)
        model = None
        chains = None
    config = sim.SimConfig(
        rates=rates.rates,
        capacities=rates.capacities,
        workload=workload,
        policy=args.policy,
        horizon_jobs=horizon,
        warmup_fraction=args.warmup,
        seed=args.seed,
        replications=args.reps,
        chains=chains,
        service_model=model,
        collect_jobs=args.jobs_csv is not None,
        workers=args.workers,
    )
    stats = sim.run_sim(config)
    payload = {
        "provenance": provenance(
            inputs,
            command="simulate",
            policy=args.policy,
            arrival_rate=args.lam,
            horizon_jobs=horizon,
            seed=args.seed,
            replications=args.reps,
            warmup_fraction=args.warmup,
        ),
        **stats.to_dict(),
    }
    save_json(out / "stats.json", payload)
    if args.jobs_csv:
        with open(args.jobs_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["replication", "arrival_s", "start_s", "finish_s", "chain_id"])
            for rec in stats.job_records:
                writer.writerow(rec)
    print(
        f"{args.policy}: mean response {stats.mean_response_s:.6g} s "
        f"(+/- {stats.response_ci_half_width_s:.2g}), occupancy {stats.mean_occupancy:.6g}"
    )
    return 0


def cmd_report(args) -> int:
    out = _outdir(args)
    rows = []
    for path in sorted(Path(args.runs).glob("*.json")):
        data = json.loads(path.read_text())
        if "mean_response_s" not in data:
            continue
        rows.append({
            "run": path.stem,
            "policy": data.get("policy", ""),
            "mean_response_s": data["mean_response_s"],
            "median_response_s": data["median_response_s"],
            "p95_response_s": data["p95_response_s"],
            "p99_response_s": data["p99_response_s"],
            "mean_waiting_s": data["mean_waiting_s"],
            "mean_service_s": data["mean_service_s"],
        })
    if not rows:
        raise ValueError(f"no simulation stats found under {args.runs}")
    fields = list(rows[0].keys())
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    widths = {f: max(len(f), *(len(f"{r[f]:.4g}" if isinstance(r[f], float) else str(r[f]))
                               for r in rows)) for f in fields}
    print("  ".join(f.ljust(widths[f]) for f in fields))
    for r in rows:
        print("  ".join(
            (f"{r[f]:.4g}" if isinstance(r[f], float) else str(r[f])).ljust(widths[f])
            for f in fields
        ))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chainserve")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compose", help="place blocks and allocate cache capacity")
    p.add_argument("--service", required=True, help="system JSON (service + servers)")
    p.add_argument("--servers", help="optional separate server list JSON")
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--rho-bar", dest="rho_bar", type=float, default=0.7)
    p.add_argument("--c", type=int, help="required per-chain capacity (skips tuning)")
    p.add_argument("--tune", choices=["surrogate", "lower", "upper"])
    _add_common(p)
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("tune", help="scan the capacity parameter")
    p.add_argument("--service", required=True)
    p.add_argument("--servers")
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--rho-bar", dest="rho_bar", type=float, default=0.7)
    _add_common(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("analyze", help="closed-form response-time bounds")
    p.add_argument("--chains", required=True, help="chains.json from compose")
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="discrete-event simulation")
    p.add_argument("--chains", required=True)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--trace", help="request trace CSV (token mode)")
    p.add_argument("--profiles", help="GPU profiles JSON (token mode)")
    p.add_argument("--rtt", help="RTT matrix CSV (token mode)")
    p.add_argument("--policy", default="jffc", choices=list(sim.POLICIES))
    p.add_argument("--jobs", type=int, default=100_000)
    p.add_argument("--warmup", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--jobs-csv", help="also write per-job records to this CSV")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="collate simulation stats into one table")
    p.add_argument("--runs", required=True, help="directory of stats JSON files")
    _add_common(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 2
    except UnstableError as exc:
        print(f"unstable: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # argparse handles its own exits
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
