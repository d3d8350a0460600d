"""Posynomial algebra, AM-GM condensation and a log-space barrier solver for geometric programs.

Expressions are built from :class:`Monomial` terms over named variables::

    x, y = Monomial.var("x"), Monomial.var("y")
    prob = GPProblem.maximize(x * y, [x + 2 * y], variables=["x", "y"])   # x + 2y <= 1
    sol = solve_gp(prob)

The solver substitutes ``x = exp(u)`` so monomials become affine and posynomials
log-sum-exp, then runs a primal barrier method with Newton centering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np
from scipy.linalg.lapack import dposv as _dposv
from scipy.optimize import lsq_linear


class GPDomainError(ValueError):
    pass


class GPFormError(ValueError):
    pass


class Monomial:
    """``coef * prod(x_j ** exps[j])``. A negative coefficient marks a signomial term."""

    __slots__ = ("coef", "exps")

    def __init__(self, coef: float, exps: Mapping[str, float] | None = None):
        coef = float(coef)
        if coef == 0 or not math.isfinite(coef):
            raise GPFormError(f"monomial coefficient must be finite and non-zero, got {coef}")
        self.coef = coef
        self.exps = {k: float(v) for k, v in (exps or {}).items() if v != 0}

    @classmethod
    def var(cls, name: str) -> "Monomial":
        return cls(1.0, {name: 1.0})

    @property
    def is_proper(self) -> bool:
        return self.coef > 0

    @property
    def variables(self) -> set[str]:
        return set(self.exps)

    def __call__(self, x: Mapping[str, float]) -> float:
        return eval_expr(self, x)

    def __mul__(self, other):
        if isinstance(other, Monomial):
            exps = dict(self.exps)
            for k, v in other.exps.items():
                exps[k] = exps.get(k, 0.0) + v
            return Monomial(self.coef * other.coef, exps)
        if isinstance(other, Posynomial):
            return other * self
        if isinstance(other, (int, float)):
            return Monomial(self.coef * other, self.exps)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Monomial):
            return self * other**-1
        if isinstance(other, (int, float)):
            return Monomial(self.coef / other, self.exps)
        return NotImplemented

    def __rtruediv__(self, other):
        if isinstance(other, (int, float)):
            return other * self**-1
        return NotImplemented

    def __pow__(self, a: float) -> "Monomial":
        if self.coef < 0 and not float(a).is_integer():
            raise GPFormError("non-integer power of a negative term")
        return Monomial(self.coef**a, {k: v * a for k, v in self.exps.items()})

    def __add__(self, other):
        return Posynomial([self]) + other

    __radd__ = __add__

    def __neg__(self) -> "Monomial":
        return Monomial(-self.coef, self.exps)

    def __repr__(self) -> str:
        body = " * ".join(f"{k}^{v:g}" for k, v in sorted(self.exps.items()))
        return f"{self.coef:g}" + (f" * {body}" if body else "")


class Posynomial:
    """Sum of monomials with strictly positive coefficients."""

    __slots__ = ("terms",)

    def __init__(self, terms: Iterable[Monomial]):
        terms = tuple(terms)
        if not terms:
            raise GPFormError("a posynomial needs at least one term")
        bad = [t for t in terms if t.coef <= 0]
        if bad:
            raise GPFormError(f"posynomial terms must have positive coefficients, got {bad[0]!r}")
        self.terms = terms

    @property
    def variables(self) -> set[str]:
        return set().union(*(t.variables for t in self.terms))

    def __call__(self, x: Mapping[str, float]) -> float:
        return eval_expr(self, x)

    def __add__(self, other):
        if isinstance(other, Posynomial):
            return Posynomial(self.terms + other.terms)
        if isinstance(other, Monomial):
            return Posynomial(self.terms + (other,))
        if isinstance(other, (int, float)):
            return Posynomial(self.terms + (Monomial(other),))
        return NotImplemented

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, (Monomial, int, float)):
            return Posynomial([t * other for t in self.terms])
        if isinstance(other, Posynomial):
            return Posynomial([a * b for a in self.terms for b in other.terms])
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (Monomial, int, float)):
            return Posynomial([t / other for t in self.terms])
        return NotImplemented

    def __len__(self) -> int:
        return len(self.terms)

    def __repr__(self) -> str:
        return " + ".join(repr(t) for t in self.terms)


Expr = Union[Monomial, Posynomial]


def _terms(expr) -> tuple[Monomial, ...]:
    if isinstance(expr, Monomial):
        return (expr,)
    if isinstance(expr, Posynomial):
        return expr.terms
    return tuple(expr)


def eval_expr(expr, x: Mapping[str, float]) -> float:
    """Evaluate a monomial, posynomial or iterable of signed terms at positive ``x``."""
    total = 0.0
    for t in _terms(expr):
        v = t.coef
        for name, a in t.exps.items():
            xv = x[name]
            if not xv > 0:
                raise GPDomainError(f"variable {name} must be positive, got {xv}")
            v *= xv**a
        total += v
    return total


def classify(expr) -> str:
    """``'monomial'``, ``'posynomial'`` or ``'signomial'`` from the signs of the terms."""
    terms = _terms(expr)
    if any(t.coef < 0 for t in terms):
        return "signomial"
    return "monomial" if len(terms) == 1 else "posynomial"


def amgm_weights(f: Posynomial, x0: Mapping[str, float]) -> np.ndarray:
    vals = np.array([eval_expr(t, x0) for t in f.terms])
    return vals / vals.sum()


def condense_with_weights(terms: Sequence[Monomial], weights: Sequence[float]) -> Monomial:
    """Weighted geometric-mean lower bound ``prod (u_i / w_i) ** w_i``.

    Terms with weight exactly 0 drop out (their factor tends to 1).
    """
    coef_log = 0.0
    exps: dict[str, float] = {}
    for t, w in zip(terms, weights):
        if w < 0:
            raise GPFormError("condensation weights must be non-negative")
        if w == 0:
            continue
        coef_log += w * (math.log(t.coef) - math.log(w))
        for k, a in t.exps.items():
            exps[k] = exps.get(k, 0.0) + w * a
    return Monomial(math.exp(coef_log), exps)


def amgm_condense(f: Posynomial, x0: Mapping[str, float]) -> Monomial:
    """Monomial approximation of ``f`` that is tangent at ``x0`` and below ``f`` everywhere."""
    for name in f.variables:
        if not x0[name] > 0:
            raise GPDomainError(f"expansion point must be positive, {name}={x0[name]}")
    return condense_with_weights(f.terms, amgm_weights(f, x0))


@dataclass
class GPProblem:
    """Standard-form GP: minimise a posynomial (or maximise a monomial) subject to
    posynomial <= 1 and monomial == 1 constraints."""

    objective: Expr
    sense: str = "min"
    inequalities: list[Posynomial] = field(default_factory=list)
    equalities: list[Monomial] = field(default_factory=list)
    variables: tuple[str, ...] = ()

    @classmethod
    def minimize(cls, objective, inequalities=(), equalities=(), variables=None):
        return cls._build(objective, "min", inequalities, equalities, variables)

    @classmethod
    def maximize(cls, objective, inequalities=(), equalities=(), variables=None):
        return cls._build(objective, "max", inequalities, equalities, variables)

    @classmethod
    def _build(cls, objective, sense, inequalities, equalities, variables):
        ineq = [c if isinstance(c, Posynomial) else Posynomial(_terms(c)) for c in inequalities]
        if variables is None:
            names = set(_all_vars(objective))
            for c in list(ineq) + list(equalities):
                names |= _all_vars(c)
            variables = tuple(sorted(names))
        prob = cls(objective, sense, ineq, list(equalities), tuple(variables))
        prob.validate()
        return prob

    def validate(self) -> None:
        kind = classify(self.objective)
        if self.sense == "max" and kind != "monomial":
            raise GPFormError("maximisation objective must be a monomial")
        if self.sense == "min" and kind == "signomial":
            raise GPFormError("minimisation objective must be a posynomial")
        if self.sense not in ("min", "max"):
            raise GPFormError(f"unknown sense {self.sense!r}")
        for i, c in enumerate(self.inequalities):
            if not isinstance(c, Posynomial):
                raise GPFormError(f"inequality {i} is not a posynomial")
        for i, h in enumerate(self.equalities):
            if not (isinstance(h, Monomial) and h.is_proper):
                raise GPFormError(f"equality {i} is not a monomial")
        known = set(self.variables)
        for expr in [self.objective, *self.inequalities, *self.equalities]:
            missing = _all_vars(expr) - known
            if missing:
                raise GPFormError(f"undeclared variables {sorted(missing)}")

    def min_objective(self) -> Expr:
        return self.objective if self.sense == "min" else self.objective**-1

    def dump(self) -> str:
        lines = [f"{'maximize' if self.sense == 'max' else 'minimize'} {self.objective!r}"]
        lines += [f"  s.t. {c!r} <= 1" for c in self.inequalities]
        lines += [f"  s.t. {h!r} == 1" for h in self.equalities]
        lines.append(f"  vars {', '.join(self.variables)}")
        return "\n".join(lines)


def _all_vars(expr) -> set[str]:
    return set().union(*(t.variables for t in _terms(expr)))


@dataclass
class GPSolution:
    x: dict[str, float]
    objective: float
    status: str  # "optimal" | "infeasible" | "max-iter"
    kkt_residual: float
    ineq_multipliers: np.ndarray
    eq_multipliers: np.ndarray
    newton_steps: int = 0
    decrement_traces: list[list[float]] = field(default_factory=list)


@dataclass(frozen=True)
class SolverOptions:
    t0: float = 1.0
    mu: float = 10.0
    gap_tol: float = 1e-8
    newton_tol: float = 1e-10  # centring tolerance on lambda^2 / 2 for the final stage
    inner_newton_tol: float = 1e-5  # looser centring for intermediate stages
    max_newton: int = 80
    max_outer: int = 60
    alpha: float = 0.01
    beta: float = 0.5
    phase1_margin: float = 1e-3
    warm_t0: bool = True  # with a caller-supplied start, begin at the best-centring t >= t0
    predictor: bool = True  # start each stage from the central-path tangent extrapolation


PHASE1_BOX = 30.0
ACTIVE_TOL = -1e-6  # constraint values above this count as active for multiplier refinement
QUADRATIC_REGION = 0.1  # squared Newton decrement below which full steps converge quadratically


class _Stacked:
    """Several log-sum-exp functions stored as one term matrix with segment starts."""

    def __init__(self, F: np.ndarray, b: np.ndarray, starts: np.ndarray):
        self.F = F
        self.b = b
        self.starts = starts
        self.m = len(starts)
        counts = np.diff(np.append(starts, len(b)))
        self.seg = np.repeat(np.arange(self.m), counts)
        self.S = (self.seg[None, :] == np.arange(self.m)[:, None]).astype(float)  # segment indicator
        self._last = None  # (y, shifts, shifted exponentials, sums) of the latest evaluation

    def forget(self) -> None:
        """Drop the cached evaluation; needed after ``F`` or ``b`` change in place."""
        self._last = None

    def _eval(self, y: np.ndarray):
        # a line search ends where the next Newton step starts, so reuse that evaluation
        last = self._last
        if last is not None and last[0] is y:
            return last[1:]
        a = self.F @ y + self.b
        amax = np.maximum.reduceat(a, self.starts)
        e = np.exp(a - amax[self.seg])
        s = self.S @ e
        self._last = (y, amax, e, s)  # callers never modify y in place
        return amax, e, s

    def values(self, y: np.ndarray) -> np.ndarray:
        amax, _, s = self._eval(y)
        return amax + np.log(s)

    def derivs(self, y: np.ndarray):
        """Values, per-function gradients (m x n) and the term weights."""
        amax, e, s = self._eval(y)
        w = e / s[self.seg]
        return amax + np.log(s), (self.S * w) @ self.F, w


def _compile_terms(exprs: Sequence, index: Mapping[str, int]):
    rows, logc, starts = [], [], []
    n = len(index)
    for expr in exprs:
        starts.append(len(rows))
        for t in _terms(expr):
            r = np.zeros(n)
            for k, a in t.exps.items():
                r[index[k]] = a
            rows.append(r)
            logc.append(math.log(t.coef))
    F = np.array(rows, dtype=float).reshape(len(rows), n)
    return F, np.array(logc, dtype=float), np.array(starts, dtype=int)


@dataclass
class _Compiled:
    """Objective (segment 0) and inequality constraints stacked together."""

    stack: _Stacked
    A: np.ndarray
    g: np.ndarray
    n: int

    @property
    def m(self) -> int:
        return self.stack.m - 1

    def constraint_values(self, y: np.ndarray) -> np.ndarray:
        return self.stack.values(y)[1:]


def _compile(prob: GPProblem) -> _Compiled:
    index = {v: i for i, v in enumerate(prob.variables)}
    n = len(index)
    stack = _Stacked(*_compile_terms([prob.min_objective(), *prob.inequalities], index))
    if prob.equalities:
        Fe, be, _ = _compile_terms(prob.equalities, index)
        A, g = Fe, -be
    else:
        A, g = np.zeros((0, n)), np.zeros(0)
    return _Compiled(stack, A, g, n)


def _newton_system(c: _Compiled, y: np.ndarray, t: float):
    """Gradient and Hessian of t f0 - sum log(-f_i), plus the constraint values."""
    f, G, w = c.stack.derivs(y)
    a = np.empty_like(f)
    a[0] = t
    a[1:] = -1.0 / f[1:]
    grad = a @ G
    b = a * a - a
    b[0] = -t
    F = c.stack.F
    H = (F.T * (w * a[c.stack.seg])) @ F + (G.T * b) @ G
    return grad, H, f, G[0]


def _initial_t(c: _Compiled, y: np.ndarray, floor: float) -> float:
    """Barrier weight that best centres ``y``: argmin_t |t grad f0 + grad barrier|."""
    f, G, _ = c.stack.derivs(y)
    g0 = G[0]
    gb = G[1:].T @ (-1.0 / f[1:])
    if c.A.shape[0]:  # only the component tangent to the equality set matters
        Q = np.linalg.qr(c.A.T)[0]
        g0 = g0 - Q @ (Q.T @ g0)
        gb = gb - Q @ (Q.T @ gb)
    den = float(g0 @ g0)
    if den <= 0:
        return floor
    return max(floor, -float(g0 @ gb) / den)


def _barrier(c: _Compiled, y0: np.ndarray, opts: SolverOptions, t0: float | None = None, stop_below: float | None = None):
    """Barrier method on a compiled log-space problem from a strictly feasible ``y0``.

    ``stop_below`` ends the run as soon as the objective drops under it (phase I).
    Returns (y, t, status, newton_steps, decrement_traces).
    """
    y = y0.copy()
    m = c.m
    p = c.A.shape[0]
    t = opts.t0 if t0 is None else t0
    steps = 0
    traces: list[list[float]] = []

    def phi(yv: np.ndarray) -> float:
        v = c.stack.values(yv)
        fi = v[1:]
        if fi.max(initial=-1.0) >= 0:
            return math.inf
        return t * v[0] - np.log(-fi).sum()

    def solve(H: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        """Newton direction with the equality constraints kept satisfied."""
        if p:
            KKT = np.block([[H, c.A.T], [c.A, np.zeros((p, p))]])
            full = np.concatenate([rhs, np.zeros(p)])
            try:
                return np.linalg.solve(KKT, full)[: c.n]
            except np.linalg.LinAlgError:
                return np.linalg.lstsq(KKT, full, rcond=None)[0][: c.n]
        _, d, info = _dposv(H, rhs)
        if info != 0:  # not positive definite: fall back to least squares
            d = np.linalg.lstsq(H, rhs, rcond=None)[0]
        return d

    H = g0 = None
    for _ in range(opts.max_outer):
        trace: list[float] = []
        centred = False
        last = m == 0 or m / t < opts.gap_tol
        tol = opts.newton_tol if last else opts.inner_newton_tol
        if H is not None and opts.predictor:
            # slacks on the central path scale like 1/t, so extrapolate linearly in 1/t
            t_prev = t / opts.mu
            y = _predict(c, y, phi, solve(H, -g0) * (t_prev - t_prev / opts.mu), opts.beta)
        for _ in range(opts.max_newton):
            grad, H, f, g0 = _newton_system(c, y, t)
            dy = solve(H, -grad)
            slope = float(grad @ dy)
            dec2 = -slope
            if dec2 / 2 <= tol:
                trace.append(dec2)
                centred = True
                break
            if len(trace) >= 2 and dec2 > 0.5 * trace[-1] and dec2 < QUADRATIC_REGION:
                trace.append(dec2)
                centred = True
                break  # rounding floor: t * f0 swamps the remaining decrease
            trace.append(dec2)
            s = 1.0
            trial = y + dy
            if dec2 < QUADRATIC_REGION:
                # pure Newton region of a self-concordant barrier; only keep strict feasibility
                while c.constraint_values(trial).max(initial=-1.0) >= 0:
                    s *= opts.beta
                    trial = y + s * dy
            else:
                base = t * f[0] - np.log(-f[1:]).sum()
                while phi(trial) > base + opts.alpha * s * slope:
                    s *= opts.beta
                    trial = y + s * dy
                    if s < 1e-14:
                        break
            y = trial  # the same array object, so the next evaluation is a cache hit
            steps += 1
            if stop_below is not None and c.stack.values(y)[0] < stop_below:
                traces.append(trace)
                return y, t, "stopped", steps, traces
            if s < 1e-14:
                break
        traces.append(trace)
        if not centred:
            return y, t, "max-iter", steps, traces
        if last:
            return y, t, "optimal", steps, traces
        t *= opts.mu
    return y, t, "max-iter", steps, traces


def _predict(c: _Compiled, y: np.ndarray, phi, dy: np.ndarray, beta: float) -> np.ndarray:
    """Step along the central-path tangent after ``t`` grows, if it lowers the new barrier objective."""
    base = phi(y)
    s = 1.0
    while s > 1e-3:
        trial = y + s * dy
        if phi(trial) < base:
            return trial
        s *= beta
    return y


def _phase1(c: _Compiled, y0: np.ndarray, opts: SolverOptions):
    """Find a strictly feasible point by minimising the worst constraint slack s."""
    cons = c.constraint_values(y0)
    s0 = max(cons.max(), 0.0) + 1.0
    n1 = c.n + 1
    k0 = c.stack.starts[1]  # first constraint term
    Fcons, bcons = c.stack.F[k0:], c.stack.b[k0:]
    # f_i(y) - s <= 0, plus s >= -1 and a log-space box around y0 to keep phase I bounded
    box = PHASE1_BOX + np.abs(y0)
    F_box = np.vstack([np.hstack([np.eye(c.n), np.zeros((c.n, 1))]), np.hstack([-np.eye(c.n), np.zeros((c.n, 1))])])
    F = np.vstack(
        [
            np.eye(1, n1, c.n),  # objective: s
            np.hstack([Fcons, -np.ones((len(bcons), 1))]),
            np.eye(1, n1, c.n) * -1.0,
            F_box,
        ]
    )
    b = np.concatenate([[0.0], bcons, [-1.0], -np.concatenate([box, box])])
    starts = np.concatenate([[0], 1 + c.stack.starts[1:] - k0, 1 + len(bcons) + np.arange(1 + 2 * c.n)])
    aug = _Compiled(_Stacked(F, b, starts), np.hstack([c.A, np.zeros((c.A.shape[0], 1))]), c.g, n1)
    z, _, _, steps, _ = _barrier(aug, np.append(y0, s0), opts, stop_below=-opts.phase1_margin)
    y = z[: c.n]
    if c.constraint_values(y).max() < 0:
        return y, steps
    return None, steps


def _kkt(c: _Compiled, y: np.ndarray, lam: np.ndarray, nu: np.ndarray) -> float:
    """Stationarity, complementary slackness, equality and feasibility residual (inf-norms)."""
    f, G, _ = c.stack.derivs(y)
    fi = f[1:]
    r = G[0] + G[1:].T @ lam + c.A.T @ nu
    parts = [float(np.abs(r).max())]
    if c.m:
        parts += [float(np.abs(lam * fi).max()), max(float(fi.max()), 0.0)]
    if c.A.shape[0]:
        parts.append(float(np.abs(c.A @ y - c.g).max()))
    return max(parts)


def _multipliers(c: _Compiled, y: np.ndarray, t: float):
    """Dual estimates at the final iterate and their KKT residual.

    The central-path estimate ``-1/(t f_i)`` is refined by a sign-constrained least
    squares fit of the stationarity condition over the near-active constraints;
    whichever estimate has the smaller residual is returned.
    """
    m, p = c.m, c.A.shape[0]
    f, G, _ = c.stack.derivs(y)
    fi = f[1:]
    lam = -1.0 / (t * fi) if m else np.zeros(0)
    nu = np.zeros(p)
    if p:
        nu = np.linalg.lstsq(c.A.T, -(G[0] + G[1:].T @ lam), rcond=None)[0]
    best = (lam, nu, _kkt(c, y, lam, nu))
    active = np.flatnonzero(fi > ACTIVE_TOL) if m else np.zeros(0, dtype=int)
    if len(active) + p:
        M = np.hstack([G[1:][active].T, c.A.T])
        lo = np.concatenate([np.zeros(len(active)), np.full(p, -np.inf)])
        fit = lsq_linear(M, -G[0], bounds=(lo, np.inf), method="bvls", tol=1e-14)
        lam2 = np.zeros(m)
        lam2[active] = fit.x[: len(active)]
        nu2 = fit.x[len(active):]
        k2 = _kkt(c, y, lam2, nu2)
        if k2 < best[2]:
            best = (lam2, nu2, k2)
    return best


@dataclass
class CompiledGP:
    """A validated GP lowered to log-space term matrices.

    Callers that re-solve one problem structure with new coefficients (successive
    condensation) may update the rows of ``terms`` in place and pass this object
    to :func:`solve_gp` instead of rebuilding expressions.
    """

    problem: GPProblem
    lowered: _Compiled

    @property
    def variables(self) -> tuple[str, ...]:
        return self.problem.variables

    @property
    def terms(self) -> _Stacked:
        """Objective (segment 0) then inequality constraints, as ``F y + b`` rows."""
        return self.lowered.stack


def compile_gp(prob: GPProblem) -> CompiledGP:
    prob.validate()
    return CompiledGP(prob, _compile(prob))


def solve_gp(
    prob: GPProblem | CompiledGP,
    x0: Mapping[str, float] | None = None,
    options: SolverOptions | None = None,
) -> GPSolution:
    """Solve a standard-form GP.

    ``x0`` may supply a strictly feasible starting point, which skips phase I.
    """
    opts = options or SolverOptions()
    if not isinstance(prob, CompiledGP):
        prob = compile_gp(prob)
    c = prob.lowered
    c.stack.forget()
    names = prob.variables
    m = c.m

    if x0 is not None:
        y = np.log(np.array([x0[v] for v in names], dtype=float))
    else:
        y = np.zeros(c.n)
    if c.A.shape[0]:
        # project onto the equality affine set
        y = y + np.linalg.lstsq(c.A, c.g - c.A @ y, rcond=None)[0]
    steps = 0
    t0 = opts.t0
    if m and not np.all(c.constraint_values(y) < 0):
        y, steps = _phase1(c, y, opts)
        if y is None:
            return GPSolution({}, math.nan, "infeasible", math.inf, np.zeros(m), np.zeros(c.A.shape[0]), steps)
    elif m and x0 is not None and opts.warm_t0:
        t0 = _initial_t(c, y, opts.t0)

    y, t, status, more, traces = _barrier(c, y, opts, t0=t0)
    steps += more

    lam, nu, kkt = _multipliers(c, y, t)

    x = dict(zip(names, np.exp(y).tolist()))
    return GPSolution(
        x=x,
        objective=eval_expr(prob.problem.objective, x),
        status=status,
        kkt_residual=kkt,
        ineq_multipliers=lam,
        eq_multipliers=nu,
        newton_steps=steps,
        decrement_traces=traces,
    )


def max_violation(prob: GPProblem, x: Mapping[str, float]) -> float:
    """Largest constraint violation of ``x`` in the original (non-log) form."""
    v = 0.0
    for c in prob.inequalities:
        v = max(v, eval_expr(c, x) - 1.0)
    for h in prob.equalities:
        v = max(v, abs(eval_expr(h, x) - 1.0))
    return v
