"""Slot-by-slot user scheduling over a window: the greedy QoS-aware scheduler
(strict and relaxed admission) and the semiorthogonal and random baselines.

Every scheduled set is precoded with RZF and, by default, served with the
equal power split ``P / |K|``. With ``power_mode="alloc"`` the scheduled set of
each slot is handed to :func:`beamsched.poweralloc.allocate_power` afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel import UserTerminal, channel_matrix, generate_users
from .config import ScenarioConfig
from .poweralloc import InfeasibleQoS, allocate_power
from .precoding import (
    LinkGains,
    PrecoderDimensionError,
    SlotAllocation,
    fixed_powers,
    link_gain_matrix,
    rate_mbps,
    rzf_batch,
    sinr_vector,
)

METHODS = ("alg1-strict", "alg1-relax", "alg2-strict", "alg2-relax", "sus", "random")
QOS_TOL = 1e-6  # Mbps


class SchedulingAbort(RuntimeError):
    """Strict-mode power allocation hit an infeasible slot; the run cannot continue."""


@dataclass(frozen=True)
class QoSProfile:
    slots: np.ndarray  # T_k
    demand_mb: np.ndarray  # xi_k
    target_mbps: np.ndarray  # xi_k / T_k, 0 where T_k = 0
    nu: np.ndarray  # SINR target, 0 where T_k = 0

    @property
    def active(self) -> np.ndarray:
        """Users that ask for service at all."""
        return self.slots > 0


def sinr_target(xi_mb: float, slots: int, bandwidth_mhz: float, ignore_bandwidth: bool = False) -> float:
    """SINR needed to carry ``xi / T`` Mbps, ``2^(xi / (B T)) - 1``.

    ``ignore_bandwidth`` drops the bandwidth, giving ``2^(xi / T) - 1``.
    """
    if slots <= 0:
        return 0.0
    exponent = xi_mb / slots if ignore_bandwidth else xi_mb / (bandwidth_mhz * slots)
    if exponent > 1023:
        return math.inf
    return 2.0**exponent - 1.0


def generate_qos(config: ScenarioConfig, rng: np.random.Generator) -> QoSProfile:
    lo, hi = config.qos_slots_range
    T = rng.integers(lo, hi + 1, size=config.num_users)
    xi = T * config.qos_rate_per_slot_mbps
    target = np.where(T > 0, xi / np.maximum(T, 1), 0.0)
    nu = np.array(
        [sinr_target(x, t, config.bandwidth_mhz, config.nu_ignores_bandwidth) for x, t in zip(xi, T)], dtype=float
    )
    return QoSProfile(T.astype(int), xi.astype(float), target, nu)


def sort_by_channel_gain(H: np.ndarray, user_ids: Sequence[int] | None = None) -> list[int]:
    """User ids by descending ``||h_k||^2`` (columns of ``H``), ties to the lower id."""
    gains = np.sum(np.abs(H) ** 2, axis=0)
    ids = np.arange(H.shape[1]) if user_ids is None else np.asarray(user_ids)
    order = np.lexsort((ids, -gains))
    return [int(ids[i]) for i in order]


def search_space_size(N: int, M: int) -> int:
    """Number of non-empty user groups of size at most ``M`` out of ``N``."""
    if not 1 <= M <= N:
        raise ValueError("need 1 <= M <= N")
    return sum(math.comb(N, k) for k in range(1, M + 1))


@dataclass
class SlotResult:
    t: int
    allocation: SlotAllocation
    throughput: dict[int, float]  # Mbps
    sum_throughput: float
    alpha_trace: list[float] = field(default_factory=list)  # inner-loop sum throughput
    dropped: tuple[int, ...] = ()  # removed by the stage-2 infeasibility fallback
    sca_iterations: int = 0


@dataclass
class ScheduleState:
    t: int
    available: set[int]
    scheduled: tuple[int, ...]
    served: np.ndarray  # Mb per user
    satisfied: set[int]
    log: list[SlotResult] = field(default_factory=list)


@dataclass
class Scenario:
    """Everything a window run needs: users, demands and the full channel matrix."""

    config: ScenarioConfig
    users: list[UserTerminal]
    qos: QoSProfile
    H: np.ndarray  # M x N, column k is user k
    rng: np.random.Generator  # drives the random baseline only
    alloc_cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, config: ScenarioConfig, seed: int | None = None) -> "Scenario":
        seed = config.rng_seed if seed is None else seed
        user_ss, qos_ss, sched_ss = np.random.SeedSequence(seed).spawn(3)
        users = generate_users(config, np.random.default_rng(user_ss))
        qos = generate_qos(config, np.random.default_rng(qos_ss))
        if users:
            H = channel_matrix(users, config).H
        else:
            H = np.zeros((config.num_beams, 0), dtype=complex)
        return cls(config, users, qos, H, np.random.default_rng(sched_ss))


def _powers(config: ScenarioConfig, k: int) -> np.ndarray:
    return fixed_powers(k, config.max_power_w, config.num_beams, config.fixed_power_rule)


def set_gains(sc: Scenario, ids: Sequence[int]) -> LinkGains:
    Hs = sc.H[:, list(ids)]
    W = rzf_batch(Hs, sc.config.max_power_w, sc.config.noise_variance_w)
    return LinkGains(link_gain_matrix(Hs, W), sc.config.noise_variance_w, tuple(int(i) for i in ids))


def set_rates(sc: Scenario, ids: Sequence[int], powers: np.ndarray | None = None) -> np.ndarray:
    """Per-user Mbps of scheduled set ``ids`` (fixed power rule unless ``powers`` given)."""
    if len(ids) == 0:
        return np.zeros(0)
    g = set_gains(sc, ids)
    p = _powers(sc.config, len(ids)) if powers is None else powers
    return rate_mbps(sinr_vector(g.z, p, g.noise), sc.config.bandwidth_mhz)


def greedy_candidate(sc: Scenario, current: Sequence[int], candidates: Sequence[int]):
    """Best user to append to ``current`` by trial sum throughput.

    Returns ``(k*, trial_set, trial_sum, trial_rates)`` or ``None`` when there are no
    candidates. Ties go to the lowest id.
    """
    cands = sorted(candidates)
    if not cands:
        return None
    cfg = sc.config
    n = len(current) + 1
    if n > cfg.num_beams:
        raise PrecoderDimensionError(f"trial set of {n} users exceeds {cfg.num_beams} beams")
    cols = np.array([list(current) + [k] for k in cands])
    Hs = np.transpose(sc.H[:, cols], (1, 0, 2))  # (candidates, M, n)
    W = rzf_batch(Hs, cfg.max_power_w, cfg.noise_variance_w)
    z = link_gain_matrix(Hs, W)
    rates = rate_mbps(sinr_vector(z, _powers(cfg, n), cfg.noise_variance_w), cfg.bandwidth_mhz)
    sums = rates.sum(axis=1)
    best = int(np.argmax(sums))  # first maximum = lowest id
    return cands[best], tuple(int(c) for c in cols[best]), float(sums[best]), rates[best]


def admission_test(
    trial_ids: Sequence[int],
    trial_rates: np.ndarray,
    trial_sum: float,
    previous_sum: float,
    qos: QoSProfile,
    mode: str,
) -> bool:
    if trial_sum < previous_sum:
        return False
    if mode == "relax":
        return True
    targets = qos.target_mbps[list(trial_ids)]
    return bool(np.all(trial_rates >= targets))


def _strict_guard(sc: Scenario, carried: list[int], available: set[int]) -> list[int]:
    """Return carried users to the pool, worst shortfall first, until the rest meet their targets."""
    while carried:
        rates = set_rates(sc, carried)
        ratio = rates / sc.qos.target_mbps[carried]
        if np.all(rates >= sc.qos.target_mbps[carried]):
            break
        worst = min(range(len(carried)), key=lambda i: (ratio[i], carried[i]))
        available.add(carried.pop(worst))
    return carried


def schedule_slot(sc: Scenario, state: ScheduleState, mode: str) -> tuple[tuple[int, ...], list[float]]:
    """Stage 1 for one slot: grow the carried set greedily. Returns (K(t), alpha trace)."""
    M = sc.config.num_beams
    current = list(state.scheduled)
    if mode == "strict":
        current = _strict_guard(sc, current, state.available)
    prev_sum = float(set_rates(sc, current).sum())
    alpha = [prev_sum]
    for _m in range(len(current), M + 1):
        if len(current) >= M or not state.available:
            alpha.append(prev_sum)
            continue
        k, trial, s, rates = greedy_candidate(sc, current, state.available)
        if admission_test(trial, rates, s, prev_sum, sc.qos, mode):
            state.available.discard(k)
            current = list(trial)
            prev_sum = s
        alpha.append(prev_sum)
    return tuple(current), alpha


def sus_schedule(sc: Scenario, pool: Sequence[int]) -> tuple[int, ...]:
    """Semiorthogonal user selection over ``pool`` (no QoS test)."""
    M = sc.config.num_beams
    alpha = sc.config.sus_alpha
    remaining = sorted(pool)
    chosen: list[int] = []
    basis: list[np.ndarray] = []
    while remaining and len(chosen) < M:
        Hr = sc.H[:, remaining]
        G = Hr.copy()
        for g in basis:
            G = G - np.outer(g, (g.conj() @ G) / (g.conj() @ g))
        norms = np.linalg.norm(G, axis=0)
        i = int(np.argmax(norms))  # ties -> lowest id
        if norms[i] <= 0:
            break
        k = remaining[i]
        gk = G[:, i]
        chosen.append(k)
        basis.append(gk)
        corr = np.abs(gk.conj() @ Hr) / (np.linalg.norm(Hr, axis=0) * np.linalg.norm(gk))
        remaining = [u for j, u in enumerate(remaining) if j != i and corr[j] < alpha]
    return tuple(chosen)


def random_schedule(sc: Scenario, pool: Sequence[int]) -> tuple[int, ...]:
    pool = sorted(pool)
    M = sc.config.num_beams
    if len(pool) <= M:
        return tuple(pool)
    pick = sc.rng.choice(len(pool), size=M, replace=False)
    return tuple(sorted(pool[i] for i in pick))


def _allocate(sc: Scenario, ids: tuple[int, ...], strict: bool):
    """Stage 2 with the relax-mode fallback: drop the user furthest below its SINR target.

    Channels are static over the window, so a repeated scheduled set reuses its result.
    """
    key = (tuple(ids), strict)
    if key not in sc.alloc_cache:
        sc.alloc_cache[key] = _allocate_uncached(sc, ids, strict)
    return sc.alloc_cache[key]


def _allocate_uncached(sc: Scenario, ids: tuple[int, ...], strict: bool):
    cfg = sc.config
    dropped: list[int] = []
    ids = list(ids)
    while ids:
        g = set_gains(sc, ids)
        nu = sc.qos.nu[ids]
        try:
            alloc, st = allocate_power(
                ids,
                g,
                nu,
                cfg.max_power_w,
                cfg.bandwidth_mhz,
                eps_rel=cfg.sca_eps_rel,
                max_iter=cfg.sca_max_iter,
                power_tol=cfg.sca_power_tol,
            )
            return alloc, g, st.iteration, tuple(dropped)
        except InfeasibleQoS as exc:
            if strict:
                raise SchedulingAbort(f"slot power allocation infeasible for users {exc.user_ids}") from exc
            s = sinr_vector(g.z, _powers(cfg, len(ids)), g.noise)
            ratio = s / np.where(nu > 0, nu, np.inf)
            worst = min(range(len(ids)), key=lambda i: (ratio[i], ids[i]))
            dropped.append(ids.pop(worst))
    return SlotAllocation((), np.zeros(0)), None, 0, tuple(dropped)


def _mode(method: str) -> str:
    return "strict" if method.endswith("strict") else "relax"


def run_window(
    config: ScenarioConfig,
    method: str,
    power_mode: str = "fixed",
    seed: int | None = None,
    scenario: Scenario | None = None,
) -> tuple[Scenario, ScheduleState]:
    """Schedule every slot of the window; returns the scenario and the final state."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if power_mode not in ("fixed", "alloc"):
        raise ValueError("power_mode must be 'fixed' or 'alloc'")
    if method.startswith("alg2"):
        power_mode = "alloc"
    sc = scenario or Scenario.build(config, seed)
    cfg = sc.config
    N = cfg.num_users
    active = [k for k in range(N) if sc.qos.active[k]]
    state = ScheduleState(
        t=0,
        available=set(active),
        scheduled=(),
        served=np.zeros(N),
        satisfied={k for k in range(N) if not sc.qos.active[k]},
    )
    greedy = method.startswith("alg")
    if greedy and active:
        first = sort_by_channel_gain(sc.H[:, active], active)[0]
        state.available.discard(first)
        state.scheduled = (first,)

    for t in range(1, cfg.window_slots + 1):
        state.t = t
        alpha: list[float] = []
        if greedy:
            ids, alpha = schedule_slot(sc, state, _mode(method))
        else:
            pool = sorted(state.available)
            ids = sus_schedule(sc, pool) if method == "sus" else random_schedule(sc, pool)

        dropped: tuple[int, ...] = ()
        iters = 0
        if not ids:
            alloc, rates = SlotAllocation((), np.zeros(0)), np.zeros(0)
        elif power_mode == "alloc":
            alloc, g, iters, dropped = _allocate(sc, ids, strict=method == "alg2-strict")
            if greedy:
                state.available.update(dropped)
            rates = np.zeros(0)
            if alloc.scheduled:
                rates = rate_mbps(sinr_vector(g.z, alloc.powers, g.noise), cfg.bandwidth_mhz)
        else:
            alloc = SlotAllocation(tuple(ids), _powers(cfg, len(ids)))
            rates = set_rates(sc, ids)

        scheduled = alloc.scheduled
        tp = {int(k): float(r) for k, r in zip(scheduled, rates)}
        for k, r in tp.items():
            state.served[k] += r
        done = {k for k in scheduled if state.served[k] >= sc.qos.demand_mb[k]}
        state.satisfied |= done
        if greedy:
            state.scheduled = tuple(k for k in scheduled if k not in done)
        else:
            state.available -= done
        state.log.append(
            SlotResult(t, alloc, tp, float(sum(tp.values())), alpha, dropped, iters)
        )
    return sc, state
