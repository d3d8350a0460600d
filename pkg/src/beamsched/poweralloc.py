"""Per-slot power allocation by successive geometric-program condensation.

For a fixed scheduled set the sum rate ``sum_k log2(1 + SINR_k)`` is maximised
subject to per-user SINR targets and the total power budget. The epigraph
variables ``gamma_k <= 1 + SINR_k`` turn the objective into a monomial; each
rate constraint is then made posynomial by replacing ``g_k = sum_j p_j z_kj + noise``
with its weighted geometric-mean lower bound at the previous iterate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .gpcore import GPProblem, Monomial, Posynomial, SolverOptions, compile_gp, condense_with_weights, solve_gp
from .precoding import LinkGains, SlotAllocation, rate_mbps, sinr_vector


class InfeasibleQoS(RuntimeError):
    """No power vector meets every SINR target within the budget."""

    def __init__(self, user_ids: Sequence[int], deficits: Sequence[float]):
        self.user_ids = tuple(user_ids)
        self.deficits = tuple(deficits)
        super().__init__(f"SINR targets unreachable; violating users {self.user_ids}")


WARM_PULL = 1e-3  # warm starts move this far towards the interior point
WARM_SLACK = 1e-3  # relative slack left on gamma_k <= 1 + SINR_k at a warm start
INEXACT_SHARE = 1e-2  # duality gap allowed per SCA step, as a share of the previous step's gain
INEXACT_MAX_GAP = 1e-4
ANDERSON_DEPTH = 2  # past differences used by the SCA extrapolation
ACCEL_FEAS_TOL = 1e-10  # relative slack on an extrapolated expansion point
ACCEL_SHRINK = 0.1  # largest per-step decrease of a power under extrapolation
ACCEL_DAMPING = (1.0, 0.5, 0.25)  # shares of the extrapolation step tried in turn
ACCEL_ACTIVE = 1e-7  # relative slack below which a linear constraint counts as active
OVER_RELAXATION = (2.0, 4.0, 8.0, 16.0, 32.0)  # multiples of the last SCA step tried along a ridge
POWER_FLOOR = 1e-6  # share of p_max below which a power counts as switched off


def _pvar(i: int) -> str:
    return f"p{i}"


def _gvar(i: int) -> str:
    return f"g{i}"


@dataclass(frozen=True)
class EpigraphProblem:
    user_ids: tuple[int, ...]
    z: np.ndarray
    noise: float
    nu: np.ndarray
    p_max: float

    @property
    def K(self) -> int:
        return len(self.user_ids)

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(_pvar(i) for i in range(self.K)) + tuple(_gvar(i) for i in range(self.K))

    def sinr(self, p: np.ndarray) -> np.ndarray:
        return sinr_vector(self.z, np.asarray(p, dtype=float), self.noise)

    def signal_terms(self, k: int) -> list[Monomial]:
        """Terms of ``g_k = sum_j p_j z_kj + noise`` (zero gains omitted), noise first."""
        terms = [Monomial(self.noise)]
        terms += [Monomial(self.z[k, j], {_pvar(j): 1}) for j in range(self.K) if self.z[k, j] > 0]
        return terms

    def interference_plus_noise(self, k: int) -> Posynomial:
        terms = [Monomial(self.noise)]
        terms += [Monomial(self.z[k, j], {_pvar(j): 1}) for j in range(self.K) if j != k and self.z[k, j] > 0]
        return Posynomial(terms)

    def rate_constraint(self, k: int) -> list[Monomial]:
        """``gamma_k (I_k + noise) - g_k <= 0`` as signed terms; this is not a posynomial."""
        g = Monomial.var(_gvar(k))
        terms = [t * g for t in self.interference_plus_noise(k).terms]
        terms += [-t for t in self.signal_terms(k)]
        return terms

    def qos_constraint(self, k: int) -> Posynomial | None:
        if self.nu[k] <= 0:
            return None
        if self.z[k, k] <= 0:
            raise InfeasibleQoS([self.user_ids[k]], [self.nu[k]])
        own = Monomial(self.z[k, k], {_pvar(k): 1})
        return self.nu[k] * self.interference_plus_noise(k) / own

    def power_constraint(self) -> Posynomial:
        return Posynomial([Monomial(1.0 / self.p_max, {_pvar(j): 1}) for j in range(self.K)])

    def constraint_count(self) -> int:
        return self.K + sum(1 for v in self.nu if v > 0) + 1

    def linear_constraints(self) -> tuple[np.ndarray, np.ndarray]:
        """QoS targets and the budget as ``A p <= b``; both are linear in the powers."""
        rows = [k for k in range(self.K) if self.nu[k] > 0]
        A = self.nu[rows, None] * self.z[rows]
        A[np.arange(len(rows)), rows] = -self.z[rows, rows]
        b = -self.nu[rows] * self.noise
        return np.vstack([A, np.ones(self.K)]), np.append(b, self.p_max)

    def feasible(self, p: np.ndarray, gamma: np.ndarray | None = None, rtol: float = 1e-9) -> bool:
        p = np.asarray(p, dtype=float)
        if np.any(p < 0) or p.sum() > self.p_max * (1 + rtol):
            return False
        s = self.sinr(p)
        if np.any(s < self.nu * (1 - rtol)):
            return False
        if gamma is not None and np.any(np.asarray(gamma) > (1 + s) * (1 + rtol)):
            return False
        return True


def build_epigraph(user_ids: Sequence[int], gains: LinkGains, nu: Sequence[float], p_max: float) -> EpigraphProblem:
    if len(user_ids) == 0:
        raise ValueError("need at least one scheduled user")
    idx = [gains.index(u) for u in user_ids]
    z = gains.z[np.ix_(idx, idx)]
    nu = np.asarray(nu, dtype=float)
    if np.any(~np.isfinite(nu)) or np.any(nu < 0):
        raise ValueError("SINR targets must be finite and non-negative")
    return EpigraphProblem(tuple(int(u) for u in user_ids), z, float(gains.noise), nu, float(p_max))


def update_weights(p: np.ndarray, z: np.ndarray, noise: float) -> tuple[np.ndarray, np.ndarray]:
    """Condensation weights at powers ``p``: ``mu0[k]`` for noise, ``mu[k, j]`` for ``p_j z_kj``."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        raise ValueError("powers must be non-negative")
    rx = z * p[None, :]
    den = rx.sum(axis=1) + noise
    return noise / den, rx / den[:, None]


def condense_to_gp(epi: EpigraphProblem, weights: tuple[np.ndarray, np.ndarray]) -> GPProblem:
    mu0, mu = weights
    K = epi.K
    ineq = []
    for k in range(K):
        w = [mu0[k]] + [mu[k, j] for j in range(K) if epi.z[k, j] > 0]
        g_tilde = condense_with_weights(epi.signal_terms(k), w)
        ineq.append(Monomial.var(_gvar(k)) * epi.interference_plus_noise(k) / g_tilde)
    for k in range(K):
        q = epi.qos_constraint(k)
        if q is not None:
            ineq.append(q)
    ineq.append(epi.power_constraint())
    objective = Monomial(1.0, {_gvar(k): 1 for k in range(K)})
    return GPProblem.maximize(objective, ineq, variables=epi.variables)


class CondensedProgram:
    """The condensed GP of one epigraph problem, compiled once.

    Only the monomial bounds ``g~_k`` change between iterations, and they enter
    the ``k``-th rate constraint as the same divisor of every term, so an update
    rewrites those rows of the compiled term matrix directly.
    """

    def __init__(self, epi: EpigraphProblem, weights: tuple[np.ndarray, np.ndarray]):
        self.epi = epi
        self.compiled = compile_gp(condense_to_gp(epi, weights))
        K = epi.K
        starts = self.compiled.terms.starts
        self.rows = [(int(starts[k + 1]), int(starts[k + 2])) for k in range(K)]
        self.base_F, self.base_b = [], []
        for k in range(K):
            terms = epi.interference_plus_noise(k).terms
            F = np.zeros((len(terms), 2 * K))
            F[:, K + k] = 1.0
            for r, t in enumerate(terms):
                for name, a in t.exps.items():
                    F[r, int(name[1:])] += a
            self.base_F.append(F)
            self.base_b.append(np.array([math.log(t.coef) for t in terms]))
        self.log_z = np.log(np.where(epi.z > 0, epi.z, 1.0))

    def update(self, weights: tuple[np.ndarray, np.ndarray]) -> None:
        mu0, mu = weights
        K = self.epi.K
        stack = self.compiled.terms
        stack.forget()
        use = (mu > 0) & (self.epi.z > 0)
        safe = np.where(use, mu, 1.0)
        log_coef = mu0 * (math.log(self.epi.noise) - np.log(mu0)) + np.where(use, mu * (self.log_z - np.log(safe)), 0.0).sum(axis=1)
        exps = np.where(use, mu, 0.0)
        for k, (lo, hi) in enumerate(self.rows):
            stack.F[lo:hi] = self.base_F[k]
            stack.F[lo:hi, :K] -= exps[k]
            stack.b[lo:hi] = self.base_b[k] - log_coef[k]


def minimum_power_point(epi: EpigraphProblem) -> np.ndarray:
    """Strictly feasible powers (every SINR above target, budget slack), or raise.

    Uses the closed-form minimal-power solution of the linear SINR system and
    pushes it inward along ``(I - F)^-1 1``.
    """
    K = epi.K
    zd = np.diag(epi.z)
    if np.any((zd <= 0) & (epi.nu > 0)):
        bad = [epi.user_ids[k] for k in range(K) if zd[k] <= 0 and epi.nu[k] > 0]
        raise InfeasibleQoS(bad, [math.inf] * len(bad))
    safe = np.where(zd > 0, zd, 1.0)
    F = (epi.nu / safe)[:, None] * epi.z
    np.fill_diagonal(F, 0.0)
    u = epi.nu * epi.noise / safe
    rho = max(abs(np.linalg.eigvals(F))) if K > 1 else 0.0
    if rho < 1:
        IminusF = np.eye(K) - F
        p_min = np.linalg.solve(IminusF, u)
        if p_min.sum() < epi.p_max:
            v = np.linalg.solve(IminusF, np.ones(K))
            return p_min + 0.5 * (epi.p_max - p_min.sum()) / v.sum() * v
    p_eq = np.full(K, epi.p_max / K)
    s = epi.sinr(p_eq)
    bad = [k for k in range(K) if s[k] < epi.nu[k]]
    if not bad:  # numerically marginal; report the tightest user
        bad = [int(np.argmin(s / np.where(epi.nu > 0, epi.nu, np.inf)))]
    raise InfeasibleQoS([epi.user_ids[k] for k in bad], [float(epi.nu[k] - s[k]) for k in bad])


@dataclass
class SCAState:
    iteration: int = 0
    powers: np.ndarray | None = None
    weights: tuple[np.ndarray, np.ndarray] | None = None
    objective_trace: list[float] = field(default_factory=list)  # prod gamma* per iteration
    sum_rate_trace: list[float] = field(default_factory=list)  # Mbps, index 0 is the start point
    power_trace: list[np.ndarray] = field(default_factory=list)
    gamma_trace: list[np.ndarray] = field(default_factory=list)
    eps: float = 0.0
    converged: bool = False
    multipliers: np.ndarray | None = None
    kkt_residual: float = math.nan


def _strict_start(epi: EpigraphProblem, p: np.ndarray) -> dict[str, float] | None:
    """Solver warm start at powers ``p`` if they are strictly feasible for the QoS/budget part."""
    p = p * (1 - 1e-9)
    s = epi.sinr(p)
    if p.sum() >= epi.p_max or np.any(s <= epi.nu) or np.any(p <= 0):
        return None
    gamma = (1 - WARM_SLACK) * (1 + s)
    x = {_pvar(i): float(p[i]) for i in range(epi.K)}
    x.update({_gvar(i): float(gamma[i]) for i in range(epi.K)})
    return x


def allocate_power(
    user_ids: Sequence[int],
    gains: LinkGains,
    nu: Sequence[float],
    p_max: float,
    bandwidth_mhz: float,
    eps_rel: float = 1e-3,
    max_iter: int = 50,
    power_tol: float = 1e-6,
    solver: SolverOptions | None = None,
) -> tuple[SlotAllocation, SCAState]:
    """Successive GP power allocation for one slot.

    Starts from the equal split ``p_max / K`` (or a strictly feasible point when the
    equal split misses a target), then alternates weight updates and GP solves
    until the sum rate moves by at most ``eps_rel`` times its current value and
    no power moves by more than ``power_tol`` relative. The rate test alone stops
    early on the flat top of the sum-rate surface, well before the powers settle.
    Raises :class:`InfeasibleQoS` when the targets cannot be met at all.
    """
    epi = build_epigraph(user_ids, gains, nu, p_max)
    K = epi.K
    p_inner = minimum_power_point(epi)  # raises InfeasibleQoS
    p_prev = np.full(K, p_max / K)
    if not epi.feasible(p_prev):
        p_prev = p_inner

    state = SCAState(eps=eps_rel)
    r_prev = float(rate_mbps(epi.sinr(p_prev), bandwidth_mhz).sum())
    state.sum_rate_trace.append(r_prev)
    state.power_trace.append(p_prev.copy())
    sol = None
    program: CondensedProgram | None = None
    base = solver or SolverOptions()
    gain = math.inf
    x, r_x = p_prev, r_prev  # expansion point of the next condensation and its sum rate
    history: list[tuple[np.ndarray, np.ndarray]] = []  # (x, p_new) pairs for acceleration
    for i in range(1, max_iter + 1):
        weights = update_weights(x, epi.z, epi.noise)
        if program is None:
            program = CondensedProgram(epi, weights)
        else:
            program.update(weights)
        x0 = _strict_start(epi, x if sol is None else (1 - WARM_PULL) * x + WARM_PULL * p_inner)
        # early iterates only feed the next condensation: solve them to a fraction of the last gain
        opts = replace(base, gap_tol=min(INEXACT_MAX_GAP, max(base.gap_tol, INEXACT_SHARE * gain)))
        sol = solve_gp(program.compiled, x0=x0, options=opts)
        if sol.status == "infeasible":
            raise InfeasibleQoS(epi.user_ids, [0.0] * K)
        p_new, gamma, r_new = _read_solution(sol, epi, bandwidth_mhz)
        worse = r_new < r_x or (state.objective_trace and np.prod(gamma) < state.objective_trace[-1])
        if opts.gap_tol > base.gap_tol and worse:
            # the inexact solve gave back more than it gained: redo it at full accuracy
            sol = solve_gp(program.compiled, x0=x0, options=base)
            p_new, gamma, r_new = _read_solution(sol, epi, bandwidth_mhz)
        state.iteration = i
        state.weights = weights
        state.objective_trace.append(float(np.prod(gamma)))
        state.sum_rate_trace.append(r_new)
        state.power_trace.append(p_new)
        state.gamma_trace.append(gamma)
        state.multipliers = sol.ineq_multipliers
        gain = abs(r_new - r_x) * math.log(2) / bandwidth_mhz  # in units of the GP's log objective
        settled = abs(r_prev - r_new) <= eps_rel * r_new and powers_settled(x, p_new, p_max, power_tol)
        done = settled and opts.gap_tol <= base.gap_tol
        if settled and not done:
            gain = 0.0  # confirm the fixed point with a full-accuracy solve
        p_prev, r_prev = p_new, r_new
        if done:
            state.converged = True
            break
        history.append((x, p_new))
        x, r_x = _accelerate(epi, history, p_new, r_new, bandwidth_mhz)
    state.powers = p_prev
    state.kkt_residual = kkt_residual(epi, p_prev, state.gamma_trace[-1], state.multipliers)
    return SlotAllocation(epi.user_ids, p_prev), state


def _read_solution(sol, epi: EpigraphProblem, bandwidth_mhz: float) -> tuple[np.ndarray, np.ndarray, float]:
    p = np.array([sol.x[_pvar(k)] for k in range(epi.K)])
    gamma = np.array([sol.x[_gvar(k)] for k in range(epi.K)])
    return p, gamma, float(rate_mbps(epi.sinr(p), bandwidth_mhz).sum())


def _accelerate(
    epi: EpigraphProblem, history: list[tuple[np.ndarray, np.ndarray]], p_new: np.ndarray, r_new: float, bandwidth_mhz: float
) -> tuple[np.ndarray, float]:
    """Next expansion point for the SCA map ``x -> p_new``.

    The SCA map contracts only linearly, so plain iteration can need many steps to pin
    the powers down. The first choice is an Anderson extrapolation, an affine
    combination of past GP solutions, which stays on the budget and QoS faces they
    share (both are linear in p). When the steps grow instead of shrinking that points
    backwards, so an over-relaxed step along the last move is tried next. A candidate
    is used only if it is feasible and has at least the sum rate of ``p_new``; the
    condensed problem at it then still has an optimum no worse than ``p_new``, which
    keeps the objective trace monotone. Otherwise the plain iterate ``p_new`` is
    returned and the history restarts.
    """
    del history[: -ANDERSON_DEPTH - 1]
    xs = np.array([h[0] for h in history])
    gs = np.array([h[1] for h in history])
    fs = gs - xs
    best = (p_new, r_new)
    if len(history) >= 2:
        coef = np.linalg.lstsq(np.diff(fs, axis=0).T, fs[-1], rcond=None)[0]
        found = _first_gain(epi, gs[-1] - np.diff(gs, axis=0).T @ coef, p_new, r_new, bandwidth_mhz)
        if found is not None:
            best = found
    # along a ridge the SCA steps grow rather than shrink and tend to zig-zag: walk out
    # along the last step and along the move since the oldest iterate while that pays
    directions = [fs[-1]] + ([p_new - gs[0]] if len(history) >= 3 else [])
    for d in directions:
        for beta in OVER_RELAXATION:
            found = _first_gain(epi, p_new + beta * d, p_new, best[1], bandwidth_mhz, damping=(1.0,))
            if found is None:
                break
            best = found
    if best[0] is p_new:
        del history[:-1]
    return best


def _first_gain(
    epi: EpigraphProblem,
    cand: np.ndarray,
    p_new: np.ndarray,
    r_floor: float,
    bandwidth_mhz: float,
    damping: Sequence[float] = ACCEL_DAMPING,
) -> tuple[np.ndarray, float] | None:
    """First damped step towards ``cand`` that is feasible with sum rate at least ``r_floor``.

    The QoS and budget constraints are linear in p. The step drops its outward part on
    constraints active at ``p_new`` and is cut at the first inactive one it would cross,
    so extrapolation slides along the faces the SCA iterates sit on.
    """
    d = cand - p_new
    if not np.all(np.isfinite(d)):
        return None
    A, b = epi.linear_constraints()
    slack = b - A @ p_new
    active = slack <= ACCEL_ACTIVE * (np.abs(A) @ p_new + np.abs(b))
    for _ in range(len(b)):
        out = active & (A @ d > 0)
        if not out.any():
            break
        d = d - A[out].T @ np.linalg.lstsq(A[out].T, d, rcond=None)[0]
    rise = A @ d
    cut = ~active & (rise > 0)
    limits = [1.0, *(slack[cut] / rise[cut])]
    # a power sent below zero is heading for zero: shrink it quickly, but never to
    # exactly zero, where its condensation weight would vanish for good
    down = d < 0
    limits += list((1 - ACCEL_SHRINK) * p_new[down] / -d[down])
    theta_max = min(limits)
    if theta_max <= 1e-12:
        return None
    for theta in damping:
        trial = p_new + theta * theta_max * d
        if not epi.feasible(trial, rtol=ACCEL_FEAS_TOL):
            continue
        r = float(rate_mbps(epi.sinr(trial), bandwidth_mhz).sum())
        if r >= r_floor:
            return trial, r
    return None


def powers_settled(p_old: np.ndarray, p_new: np.ndarray, p_max: float, tol: float) -> bool:
    """Every power moved by at most ``tol`` relative, ignoring users switched off in both.

    A user the optimum switches off sees its power shrink towards zero without ever
    reaching it (GP variables are logarithmic), and the exact tiny value is solver noise.
    Powers below ``POWER_FLOOR * p_max`` in both iterates therefore count as settled.
    """
    off = np.maximum(p_old, p_new) <= POWER_FLOOR * p_max
    return bool(np.all(off | (np.abs(p_new - p_old) <= tol * p_new)))


def kkt_residual(epi: EpigraphProblem, p: np.ndarray, gamma: np.ndarray, lam: np.ndarray) -> float:
    """Stationarity and complementary-slackness residual of the exact (uncondensed)
    epigraph problem in log variables, using the GP's multipliers.

    Multipliers are ordered as the GP constraints: rate constraints, active QoS
    constraints, power budget.
    """
    K = epi.K
    z, noise = epi.z, epi.noise
    rx = z * p[None, :]
    g = rx.sum(axis=1) + noise
    D = g - np.diag(rx)
    # gradients w.r.t. (log p, log gamma)
    grads = []
    values = []
    for k in range(K):
        d = np.zeros(2 * K)
        dD = rx[k] / D[k]
        dD[k] = 0.0
        d[:K] = dD - rx[k] / g[k]
        d[K + k] = 1.0
        grads.append(d)
        values.append(math.log(gamma[k]) + math.log(D[k]) - math.log(g[k]))
    for k in range(K):
        if epi.nu[k] <= 0:
            continue
        d = np.zeros(2 * K)
        d[:K] = rx[k] / D[k]
        d[k] = -1.0
        grads.append(d)
        values.append(math.log(epi.nu[k] * D[k] / rx[k, k]))
    d = np.zeros(2 * K)
    d[:K] = p / p.sum()
    grads.append(d)
    values.append(math.log(p.sum() / epi.p_max))

    grad_obj = np.concatenate([np.zeros(K), -np.ones(K)])
    r = grad_obj + np.array(grads).T @ lam
    slack = np.abs(lam * np.array(values))
    return float(max(np.abs(r).max(), slack.max()))


def sum_rate_grid(epi: EpigraphProblem, bandwidth_mhz: float, n: int = 1414) -> tuple[float, np.ndarray]:
    """Brute-force two-user optimum on the triangular grid ``p1 + p2 <= p_max``."""
    if epi.K != 2:
        raise ValueError("grid oracle is for two users")
    i, j = np.triu_indices(n + 1)
    a = (n - j).astype(float)  # i <= j  ->  a + b = n - j + i <= n
    b = i.astype(float)
    P = np.stack([a, b], axis=1) * (epi.p_max / n)
    rx = P[:, None, :] * epi.z[None, :, :]
    desired = np.stack([rx[:, 0, 0], rx[:, 1, 1]], axis=1)
    interf = np.stack([rx[:, 0, 1], rx[:, 1, 0]], axis=1)
    s = desired / (interf + epi.noise)
    ok = np.all(s >= epi.nu[None, :], axis=1)
    if not ok.any():
        raise InfeasibleQoS(epi.user_ids, [0.0, 0.0])
    r = (bandwidth_mhz * np.log2(1 + s)).sum(axis=1)
    r = np.where(ok, r, -np.inf)
    best = int(np.argmax(r))
    return float(r[best]), P[best]
