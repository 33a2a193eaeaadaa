"""Steady-state analysis of fastest-free-chain dispatch.

With Poisson arrivals and exponential unit-mean job sizes, the system state
(queue length plus per-chain occupancies) is a continuous-time Markov chain.
Collapsing states by total job count gives a birth-death process whose death
rates can be bracketed by packing jobs onto the fastest or slowest chains;
the two bracketing processes yield closed-form lower/upper bounds on mean
occupancy, and Little's law converts them to response-time bounds.  For two
chains the stationary distribution also admits an exact recursive solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .cache_alloc import greedy_cache_allocation
from .errors import InfeasibleError, UnstableError
from .model import ComposedSystem, ServerSpec, ServiceSpec
from .placement import capacity_upper_bound, greedy_block_placement


@dataclass(frozen=True)
class ChainRates:
    """Chain service rates in descending order with aligned capacities."""

    rates: tuple[float, ...]
    capacities: tuple[int, ...]

    def __post_init__(self):
        if len(self.rates) != len(self.capacities):
            raise ValueError("one capacity per rate required")
        if any(r <= 0 for r in self.rates):
            raise ValueError("rates must be positive")
        if any(c < 1 or not isinstance(c, int) for c in self.capacities):
            raise ValueError("capacities must be positive integers")
        if any(a < b for a, b in zip(self.rates, self.rates[1:])):
            raise ValueError("rates must be sorted in descending order")

    @classmethod
    def from_system(cls, system: ComposedSystem) -> "ChainRates":
        return cls(system.rates, system.capacities)

    @classmethod
    def from_unsorted(cls, rates: Sequence[float], capacities: Sequence[int]) -> "ChainRates":
        # Stable sort: equal rates keep their given (emission) order.
        order = sorted(range(len(rates)), key=lambda i: -rates[i])
        return cls(tuple(rates[i] for i in order), tuple(capacities[i] for i in order))

    @property
    def chain_count(self) -> int:
        return len(self.rates)

    @property
    def total_rate(self) -> float:
        return sum(r * c for r, c in zip(self.rates, self.capacities))

    @property
    def total_capacity(self) -> int:
        return sum(self.capacities)


def death_rate_bounds(rates: ChainRates, n: int) -> tuple[float, float]:
    """Envelope of the aggregate departure rate with ``n`` jobs in the system.

    Returns ``(upper, lower)``: the departure rate when the jobs occupy the
    fastest possible chains and when they occupy the slowest; both saturate
    at the total rate once ``n`` reaches the total capacity.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    upper = 0.0
    lower = 0.0
    ahead = 0  # capacity of faster chains
    for mu, c in zip(rates.rates, rates.capacities):
        upper += mu * min(c, max(n - ahead, 0))
        ahead += c
    behind = rates.total_capacity
    for mu, c in zip(rates.rates, rates.capacities):
        behind -= c
        lower += mu * min(c, max(n - behind, 0))
    return upper, lower


def birth_death_mean_occupancy(
    arrival_rate: float, death_rates: Sequence[float], total_rate: float
) -> float:
    """Mean occupancy of a birth-death process with a geometric tail.

    ``death_rates[n-1]`` applies with ``n`` jobs for ``n = 1..C``; beyond
    ``C`` the death rate is ``total_rate``.  Computed in log space so large
    capacities do not overflow the state-weight products.
    """
    lam = float(arrival_rate)
    nu = float(total_rate)
    if lam <= 0:
        raise ValueError("arrival_rate must be positive")
    if lam >= nu:
        raise UnstableError(f"arrival rate {lam:.6g} >= total service rate {nu:.6g}")
    d = np.asarray(death_rates, dtype=float)
    if d.size == 0 or np.any(d <= 0):
        raise ValueError("death rates must be positive")
    C = d.size
    rho = lam / nu
    # log of (lambda^n / prod_{i<=n} d_i) for n = 0..C
    log_w = np.concatenate(([0.0], np.cumsum(np.log(lam) - np.log(d))))
    tail = log_w[C] + math.log(nu) - math.log(nu - lam)
    log_z = logsumexp(np.concatenate((log_w[:C], [tail])))
    n = np.arange(1, C)
    head = float(np.sum(n * np.exp(log_w[1:C] - log_z))) if C > 1 else 0.0
    queued = math.exp(log_w[C] - log_z) * (rho / (1 - rho) ** 2 + C / (1 - rho))
    return head + queued


@dataclass(frozen=True)
class OccupancyBounds:
    """Bracketing mean occupancy (jobs) and mean response time (seconds)."""

    lower_mean_occupancy: float
    upper_mean_occupancy: float
    lower_mean_response_s: float
    upper_mean_response_s: float


def occupancy_bounds(rates: ChainRates, arrival_rate: float) -> OccupancyBounds:
    """Theoretical bracket on steady-state mean occupancy and response time."""
    lam = float(arrival_rate)
    if lam <= 0:
        raise ValueError("arrival_rate must be positive")
    nu = rates.total_rate
    if lam >= nu:
        raise UnstableError(f"arrival rate {lam:.6g} >= total service rate {nu:.6g}")
    C = rates.total_capacity
    uppers = [death_rate_bounds(rates, n)[0] for n in range(1, C + 1)]
    lowers = [death_rate_bounds(rates, n)[1] for n in range(1, C + 1)]
    lower_occ = birth_death_mean_occupancy(lam, uppers, nu)
    upper_occ = birth_death_mean_occupancy(lam, lowers, nu)
    return OccupancyBounds(
        lower_mean_occupancy=lower_occ,
        upper_mean_occupancy=upper_occ,
        lower_mean_response_s=lower_occ / lam,
        upper_mean_response_s=upper_occ / lam,
    )


def transition_rates(
    rates: ChainRates, state: Sequence[int], arrival_rate: float
) -> list[tuple[tuple[int, ...], float]]:
    """Outgoing transitions of the dispatch Markov chain from ``state``.

    ``state[0]`` is the queue length and ``state[l]`` the jobs on the l-th
    fastest chain.  A positive queue requires every chain to be full.
    """
    z = tuple(int(v) for v in state)
    K = rates.chain_count
    caps = rates.capacities
    if len(z) != K + 1:
        raise ValueError(f"state must have {K + 1} entries")
    if arrival_rate < 0:
        raise ValueError("arrival_rate must be >= 0")
    if z[0] < 0 or any(not 0 <= z[l + 1] <= caps[l] for l in range(K)):
        raise ValueError(f"state {z} outside the state space")
    if z[0] > 0 and any(z[l + 1] != caps[l] for l in range(K)):
        raise ValueError(f"state {z} has queued jobs but idle capacity")

    out: list[tuple[tuple[int, ...], float]] = []
    # Arrival: fastest chain with spare capacity, else the queue grows.
    free = next((l for l in range(K) if z[l + 1] < caps[l]), None)
    if free is None:
        out.append(((z[0] + 1,) + z[1:], arrival_rate))
    else:
        nxt = list(z)
        nxt[free + 1] += 1
        out.append((tuple(nxt), arrival_rate))
    # Departures.
    if z[0] == 0:
        for l in range(K):
            if z[l + 1] > 0:
                nxt = list(z)
                nxt[l + 1] -= 1
                out.append((tuple(nxt), z[l + 1] * rates.rates[l]))
    else:
        out.append(((z[0] - 1,) + z[1:], rates.total_rate))
    return out


def exact_two_chain_occupancy(
    mu1: float, mu2: float, c1: int, c2: int, arrival_rate: float
) -> float:
    """Exact steady-state mean occupancy for two chains under fastest-free dispatch.

    Solves the stationary distribution by a backward recursion over the slow
    chain's occupancy, expressing each row affinely in its first unknown, with
    the queued states handled analytically as a geometric tail.
    """
    lam = float(arrival_rate)
    if not (mu1 >= mu2 > 0):
        raise ValueError("chain 1 must be the fastest: require mu1 >= mu2 > 0")
    if c1 < 1 or c2 < 1:
        raise ValueError("capacities must be >= 1")
    if lam <= 0:
        raise ValueError("arrival_rate must be positive")
    nu = c1 * mu1 + c2 * mu2
    if lam >= nu:
        raise UnstableError(f"arrival rate {lam:.6g} >= total service rate {nu:.6g}")

    # alpha[z1][z2] = pi(0, z1, z2) / pi(0, 0, c2)
    alpha = [[0.0] * (c2 + 1) for _ in range(c1 + 1)]
    alpha[0][c2] = 1.0
    for n in range(1, c1 + 1):
        acc = sum(alpha[i][c2] for i in range(n))
        alpha[n][c2] = (c2 * mu2 * acc + lam * alpha[n - 1][c2]) / (n * mu1)

    for z2 in range(c2 - 1, -1, -1):
        above = [alpha[i][z2 + 1] for i in range(c1 + 1)]
        alpha[c1][z2] = (z2 + 1) * mu2 / lam * sum(above)
        beta = [0.0] * (c1 + 1)
        gamma = [0.0] * (c1 + 1)
        beta[0] = 1.0
        for n in range(1, c1 + 1):
            beta_acc = sum(beta[:n])
            gamma_acc = sum(gamma[:n])
            above_acc = sum(above[:n])
            beta[n] = (z2 * mu2 * beta_acc + lam * beta[n - 1]) / (n * mu1)
            gamma[n] = (
                z2 * mu2 * gamma_acc + lam * gamma[n - 1] - (z2 + 1) * mu2 * above_acc
            ) / (n * mu1)
        if beta[c1] == 0.0:
            raise ArithmeticError(
                f"degenerate recursion (beta={beta[c1]}) for "
                f"mu=({mu1}, {mu2}), c=({c1}, {c2}), lambda={lam}"
            )
        alpha[0][z2] = (alpha[c1][z2] - gamma[c1]) / beta[c1]
        for n in range(1, c1):
            alpha[n][z2] = beta[n] * alpha[0][z2] + gamma[n]

    mass = sum(alpha[z1][z2] for z1 in range(c1 + 1) for z2 in range(c2 + 1))
    weighted = sum(
        alpha[z1][z2] * (z1 + z2) for z1 in range(c1 + 1) for z2 in range(c2 + 1)
    )
    queue_mass = lam * alpha[c1][c2] / (nu - lam)
    queue_weighted = queue_mass * (nu / (nu - lam) + c1 + c2)
    return (weighted + queue_weighted) / (mass + queue_mass)


@dataclass(frozen=True)
class BoundCurveRow:
    capacity: int
    chain_count: int
    total_capacity: int
    total_rate: float
    lower_response_s: float | None
    upper_response_s: float | None
    stable: bool


def bound_curve(
    servers: Sequence[ServerSpec],
    service: ServiceSpec,
    arrival_rate: float,
    load_target: float,
) -> list[BoundCurveRow]:
    """Response-time bounds of the composed system for every workable capacity."""
    rows: list[BoundCurveRow] = []
    c_max = capacity_upper_bound(servers, service)
    for c in range(1, c_max + 1):
        try:
            placed = greedy_block_placement(servers, service, c, arrival_rate, load_target)
        except InfeasibleError:
            continue
        system = greedy_cache_allocation(placed.placement)
        if not system.chains:
            continue
        rates = ChainRates.from_system(system)
        if arrival_rate >= rates.total_rate:
            rows.append(
                BoundCurveRow(c, rates.chain_count, rates.total_capacity,
                              rates.total_rate, None, None, stable=False)
            )
            continue
        b = occupancy_bounds(rates, arrival_rate)
        rows.append(
            BoundCurveRow(
                capacity=c,
                chain_count=rates.chain_count,
                total_capacity=rates.total_capacity,
                total_rate=rates.total_rate,
                lower_response_s=b.lower_mean_response_s,
                upper_response_s=b.upper_mean_response_s,
                stable=True,
            )
        )
    return rows


@dataclass(frozen=True)
class BoundTuning:
    c_star: int
    which: str
    rows: tuple[BoundCurveRow, ...]


def tune_capacity_bound(
    servers: Sequence[ServerSpec],
    service: ServiceSpec,
    arrival_rate: float,
    load_target: float,
    which: str = "lower",
) -> BoundTuning:
    """Pick the capacity minimizing the chosen response-time bound.

    ``which`` selects the lower or upper bound as the tuning objective;
    unstable or unplaceable capacities are excluded, ties go to the smaller
    capacity.
    """
    if which not in ("lower", "upper"):
        raise ValueError("which must be 'lower' or 'upper'")
    rows = bound_curve(servers, service, arrival_rate, load_target)
    best_c: int | None = None
    best_val = math.inf
    for row in rows:
        if not row.stable:
            continue
        val = row.lower_response_s if which == "lower" else row.upper_response_s
        if val < best_val:
            best_val = val
            best_c = row.capacity
    if best_c is None:
        raise UnstableError(
            f"no capacity yields a stable system at arrival rate {arrival_rate:.6g}"
        )
    return BoundTuning(best_c, which, tuple(rows))
