"""Spectral threshold checks and budget-constrained rate allocation.

The allocation problem picks node infection rates ``beta_i`` and recovery
rates ``delta_i`` inside boxes so that ``lambda_max(diag(beta) A - D)`` is as
small as possible while total spending stays within a budget.  With the
substitution ``dt_i = phi - delta_i`` (``phi`` above every ``delta_i``) the
matrix ``diag(beta) A + diag(dt)`` is nonnegative and its Perron root is
captured by the posynomial constraints

    sum_j a_ij beta_i u_j + dt_i u_i <= lam u_i,

which turns the whole problem into a geometric program.  It is solved in
log coordinates with a barrier interior-point method written here, and
checked against an exhaustive grid search.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import nnls

from .graph import Graph, lambda_max
from .meanfield import RateModel


class InfeasibleError(ValueError):
    """The zero-spend allocation already exceeds the budget."""


class SolverError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Threshold checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThresholdVerdict:
    stable: bool
    margin: float
    lambda_max_BD: float
    strongly_connected: bool
    tau: float | None = None
    inv_lambda_max_A: float | None = None

    @property
    def verdict(self) -> str:
        return "stable_disease_free" if self.stable else "endemic"


def homogeneous_parameters(g: Graph, rates: RateModel) -> tuple[float, float] | None:
    """``(beta, delta)`` when ``rates`` is ``beta * A`` with a single ``delta``, else ``None``."""
    if not np.allclose(rates.delta, rates.delta[0], rtol=0, atol=0):
        return None
    A = g.adjacency
    mask = A > 0
    if not mask.any():
        return (0.0, float(rates.delta[0])) if not rates.B.any() else None
    ratio = rates.B[mask] / A[mask]
    if np.any(rates.B[~mask] != 0) or not np.allclose(ratio, ratio[0], rtol=1e-14, atol=0):
        return None
    return float(ratio[0]), float(rates.delta[0])


def check_threshold(g: Graph, rates: RateModel) -> ThresholdVerdict:
    """Stability of the disease-free state.

    Homogeneous models compare ``tau = beta / delta`` with ``1 / lambda_max(A)``
    (margin ``1/lambda_max - tau``); otherwise the margin is
    ``-lambda_max(B - D)``.  The verdict is an iff only on strongly connected
    graphs, which is reported alongside.
    """
    lam_bd = rates.threshold_margin()
    sc = g.is_strongly_connected()
    hom = homogeneous_parameters(g, rates)
    if hom is not None:
        beta, delta = hom
        lam_a = lambda_max(g.adjacency).lambda_max
        tau = beta / delta
        inv = math.inf if lam_a <= 0 else 1.0 / lam_a
        # equality is stable; allow for roundoff in lambda_max
        return ThresholdVerdict(tau <= inv * (1 + 1e-12), inv - tau, lam_bd, sc, tau, inv)
    scale = max(1.0, float(np.max(rates.delta)))
    return ThresholdVerdict(lam_bd <= 1e-12 * scale, -lam_bd, lam_bd, sc)


# ---------------------------------------------------------------------------
# Posynomials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Posynomial:
    """``sum_k c_k prod_i x_i^{a_ki}`` with ``c_k > 0``."""

    coeffs: np.ndarray
    exponents: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=float))
        E = np.asarray(self.exponents, dtype=float)
        if E.ndim == 1:
            E = E[None, :]
        if E.shape[0] != c.shape[0]:
            raise ValueError("one exponent row per coefficient")
        if c.size == 0 or np.any(c <= 0):
            raise ValueError("posynomial coefficients must be strictly positive")
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "exponents", E)

    @property
    def arity(self) -> int:
        return self.exponents.shape[1]

    @property
    def is_monomial(self) -> bool:
        return self.coeffs.size == 1

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(self.coeffs @ np.prod(x[None, :] ** self.exponents, axis=1))

    def log_transformed(self, y):
        """``log q(exp y)`` with gradient and Hessian (log-sum-exp form)."""
        z = np.log(self.coeffs) + self.exponents @ y
        zmax = z.max()
        w = np.exp(z - zmax)
        s = w.sum()
        value = zmax + math.log(s)
        w /= s
        grad = w @ self.exponents
        hess = (self.exponents.T * w) @ self.exponents - np.outer(grad, grad)
        return value, grad, hess


# ---------------------------------------------------------------------------
# Allocation problem
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CostCurve:
    """Spend as ``sum_k c_k x^{a_k} + offset`` in one variable.

    For ``beta`` the variable is ``beta_i`` itself; for recovery it is
    ``dt_i = phi - delta_i``.  Built-ins are normalised so that the zero-spend
    end of the box costs nothing.
    """

    terms: tuple[tuple[float, float], ...]
    offset: float = 0.0
    kind: str = "posynomial"
    params: tuple = ()

    def __call__(self, x: float) -> float:
        return sum(c * x ** a for c, a in self.terms) + self.offset

    @classmethod
    def zero(cls) -> "CostCurve":
        return cls((), 0.0, "zero")

    @classmethod
    def power(cls, c: float, a: float, ref: float) -> "CostCurve":
        """``c (x^{-a} - ref^{-a})``; decreasing in ``x``, zero at ``x = ref``."""
        if c <= 0 or a <= 0 or ref <= 0:
            raise ValueError("power cost needs c > 0, a > 0 and ref > 0")
        return cls(((float(c), -float(a)),), -float(c) * ref ** (-a), "power", (c, a))

    @classmethod
    def inverse_linear(cls, c: float, ref: float) -> "CostCurve":
        """``c (1/x - 1/ref)``."""
        curve = cls.power(c, 1.0, ref)
        return cls(curve.terms, curve.offset, "inverse_linear", (c,))


@dataclass(frozen=True)
class AllocationProblem:
    graph: Graph
    beta_lo: np.ndarray
    beta_hi: np.ndarray
    delta_lo: np.ndarray
    delta_hi: np.ndarray
    beta_cost: tuple[CostCurve, ...]
    delta_cost: tuple[CostCurve, ...]
    budget: float

    def __post_init__(self):
        n = self.graph.n
        for name in ("beta_lo", "beta_hi", "delta_lo", "delta_hi"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (n,)).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.beta_lo <= 0) or np.any(self.beta_lo > self.beta_hi):
            raise ValueError("need 0 < beta_lo <= beta_hi")
        if np.any(self.delta_lo <= 0) or np.any(self.delta_lo > self.delta_hi):
            raise ValueError("need 0 < delta_lo <= delta_hi")
        if len(self.beta_cost) != n or len(self.delta_cost) != n:
            raise ValueError("one cost curve per node required")
        if not self.budget >= 0:
            raise ValueError("budget must be nonnegative")

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def phi(self) -> float:
        return float(self.delta_hi.max()) + 1.0

    @classmethod
    def with_default_costs(cls, graph: Graph, beta_lo, beta_hi, delta_lo, delta_hi, budget: float,
                           beta_weight=1.0, delta_weight=1.0, delta_power: float = 1.0) -> "AllocationProblem":
        """Inverse-linear infection costs and power-law recovery costs."""
        n = graph.n
        b_hi = np.broadcast_to(np.asarray(beta_hi, dtype=float), (n,))
        d_lo = np.broadcast_to(np.asarray(delta_lo, dtype=float), (n,))
        d_hi = np.broadcast_to(np.asarray(delta_hi, dtype=float), (n,))
        phi = float(d_hi.max()) + 1.0
        bw = np.broadcast_to(np.asarray(beta_weight, dtype=float), (n,))
        dw = np.broadcast_to(np.asarray(delta_weight, dtype=float), (n,))
        beta_cost = tuple(CostCurve.inverse_linear(bw[i], b_hi[i]) for i in range(n))
        delta_cost = tuple(CostCurve.power(dw[i], delta_power, phi - d_lo[i]) for i in range(n))
        return cls(graph, beta_lo, beta_hi, delta_lo, delta_hi, beta_cost, delta_cost, budget)

    def spend(self, beta, delta) -> float:
        phi = self.phi
        return float(sum(self.beta_cost[i](beta[i]) + self.delta_cost[i](phi - delta[i])
                         for i in range(self.n)))

    def zero_spend(self) -> tuple[np.ndarray, np.ndarray]:
        return self.beta_hi.copy(), self.delta_lo.copy()

    def rates(self, beta, delta) -> RateModel:
        return RateModel.node_rates(self.graph, beta, delta)

    def decay_matrix(self, beta, delta) -> np.ndarray:
        return np.asarray(beta)[:, None] * self.graph.adjacency - np.diag(delta)

    # JSON ------------------------------------------------------------------

    def to_dict(self, graph_ref=None) -> dict:
        def curve(c: CostCurve):
            if c.kind == "inverse_linear":
                return {"kind": "inverse_linear", "c": c.params[0]}
            if c.kind == "power":
                return {"kind": "power", "c": c.params[0], "a": c.params[1]}
            if c.kind == "zero":
                return {"kind": "zero"}
            return {"kind": "posynomial", "terms": [list(t) for t in c.terms], "offset": c.offset}

        return {
            "graph": graph_ref if graph_ref is not None else {"n": self.n, "edges": [list(e) for e in self.graph.edges]},
            "beta_lo": self.beta_lo.tolist(), "beta_hi": self.beta_hi.tolist(),
            "delta_lo": self.delta_lo.tolist(), "delta_hi": self.delta_hi.tolist(),
            "beta_cost": [curve(c) for c in self.beta_cost],
            "delta_cost": [curve(c) for c in self.delta_cost],
            "budget": self.budget,
        }

    @classmethod
    def from_dict(cls, doc: dict, graph: Graph | None = None) -> "AllocationProblem":
        if graph is None:
            g = doc["graph"]
            graph = Graph(int(g["n"]), tuple(tuple(e) if len(e) == 3 else (e[0], e[1], 1.0) for e in g["edges"]))
        n = graph.n
        b_hi = np.broadcast_to(np.asarray(doc["beta_hi"], dtype=float), (n,))
        d_lo = np.broadcast_to(np.asarray(doc["delta_lo"], dtype=float), (n,))
        d_hi = np.broadcast_to(np.asarray(doc["delta_hi"], dtype=float), (n,))
        phi = float(d_hi.max()) + 1.0

        def curve(spec, ref):
            kind = spec.get("kind")
            if kind == "inverse_linear":
                return CostCurve.inverse_linear(float(spec["c"]), ref)
            if kind == "power":
                return CostCurve.power(float(spec["c"]), float(spec["a"]), ref)
            if kind == "zero":
                return CostCurve.zero()
            if kind == "posynomial":
                terms = tuple((float(c), float(a)) for c, a in spec["terms"])
                if any(c <= 0 for c, _ in terms):
                    raise ValueError("posynomial cost terms need positive coefficients")
                return CostCurve(terms, float(spec.get("offset", 0.0)))
            raise ValueError(f"cost curve kind {kind!r} is not expressible as posynomial plus constant")

        def curves(key, refs):
            specs = doc[key]
            if isinstance(specs, dict):
                specs = [specs] * n
            if len(specs) != n:
                raise ValueError(f"{key}: expected {n} cost curves")
            return tuple(curve(s, refs[i]) for i, s in enumerate(specs))

        return cls(graph, doc["beta_lo"], doc["beta_hi"], doc["delta_lo"], doc["delta_hi"],
                   curves("beta_cost", b_hi), curves("delta_cost", phi - d_lo), float(doc["budget"]))


# ---------------------------------------------------------------------------
# Geometric program
# ---------------------------------------------------------------------------


@dataclass
class GeometricProgram:
    """``minimize lam`` subject to ``posy_k(x) <= 1`` over positive ``x``.

    ``names`` lists the free variables.  Fixed quantities (degenerate boxes
    and the normalisation ``u_0 = 1``) are folded into coefficients and kept
    in ``fixed``.
    """

    problem: AllocationProblem
    phi: float
    names: list[str]
    constraints: list[Posynomial]
    labels: list[str]
    fixed: dict[str, float]
    budget_rhs: float
    x0: np.ndarray = field(repr=False)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def value(self, name: str, x) -> float:
        if name in self.fixed:
            return self.fixed[name]
        return float(x[self.names.index(name)])

    def count(self, kind: str) -> int:
        return sum(1 for lab in self.labels if lab.startswith(kind))

    def residuals(self, x) -> np.ndarray:
        """Constraint values ``posy_k(x)``; feasible means all ``<= 1``."""
        return np.array([c(x) for c in self.constraints])


class _Builder:
    def __init__(self, names, fixed):
        self.names = names
        self.fixed = fixed
        self.index = {nm: k for k, nm in enumerate(names)}

    def monomial(self, coeff: float, powers: dict[str, float]):
        row = np.zeros(len(self.names))
        for nm, a in powers.items():
            if nm in self.fixed:
                coeff *= self.fixed[nm] ** a
            else:
                row[self.index[nm]] += a
        return coeff, row

    def posy(self, monomials) -> Posynomial | None:
        coeffs, rows = zip(*(self.monomial(c, p) for c, p in monomials))
        return Posynomial(np.array(coeffs), np.array(rows))


def _is_fixed(lo: float, hi: float) -> bool:
    return hi - lo <= 1e-12 * max(1.0, abs(hi))


def build_gp(problem: AllocationProblem) -> GeometricProgram:
    """Assemble the allocation GP with every constraint as ``posynomial <= 1``."""
    g = problem.graph
    if not g.is_strongly_connected():
        raise ValueError("allocation GP requires a strongly connected graph")
    n = problem.n
    phi = problem.phi
    A = g.adjacency
    dt_lo = phi - problem.delta_hi
    dt_hi = phi - problem.delta_lo

    fixed: dict[str, float] = {"u0": 1.0}
    for i in range(n):
        if _is_fixed(problem.beta_lo[i], problem.beta_hi[i]):
            fixed[f"beta{i}"] = float(problem.beta_hi[i])
        if _is_fixed(dt_lo[i], dt_hi[i]):
            fixed[f"dt{i}"] = float(dt_hi[i])
    names = ["lam"] + [f"beta{i}" for i in range(n)] + [f"dt{i}" for i in range(n)] + [f"u{i}" for i in range(n)]
    names = [nm for nm in names if nm not in fixed]
    b = _Builder(names, fixed)

    constraints, labels = [], []
    for i in range(n):
        terms = [(A[i, j], {f"beta{i}": 1, f"u{j}": 1, f"u{i}": -1, "lam": -1}) for j in range(n) if A[i, j] > 0]
        terms.append((1.0, {f"dt{i}": 1, "lam": -1}))
        constraints.append(b.posy(terms))
        labels.append(f"eigen[{i}]")

    offset = sum(c.offset for c in problem.beta_cost) + sum(c.offset for c in problem.delta_cost)
    rhs = problem.budget - offset
    budget_terms = []
    const_spend = 0.0
    for i in range(n):
        for prefix, curve in ((f"beta{i}", problem.beta_cost[i]), (f"dt{i}", problem.delta_cost[i])):
            for c, a in curve.terms:
                if prefix in fixed:
                    const_spend += c * fixed[prefix] ** a
                else:
                    budget_terms.append((c, {prefix: a}))
    rhs -= const_spend
    zero_beta, zero_delta = problem.zero_spend()
    zero_cost = problem.spend(zero_beta, zero_delta)
    if zero_cost > problem.budget + 1e-12 * max(1.0, abs(problem.budget)):
        raise InfeasibleError(f"zero-spend allocation costs {zero_cost:.6g} > budget {problem.budget:.6g}")
    if budget_terms:
        if rhs <= 0:
            raise InfeasibleError(f"budget leaves no room for posynomial spend (rhs {rhs:.3g})")
        constraints.append(b.posy([(c / rhs, p) for c, p in budget_terms]))
        labels.append("budget")

    for i in range(n):
        if f"beta{i}" not in fixed:
            constraints.append(b.posy([(1.0 / problem.beta_hi[i], {f"beta{i}": 1})]))
            labels.append(f"box[beta{i}<=hi]")
            constraints.append(b.posy([(problem.beta_lo[i], {f"beta{i}": -1})]))
            labels.append(f"box[beta{i}>=lo]")
        if f"dt{i}" not in fixed:
            constraints.append(b.posy([(1.0 / dt_hi[i], {f"dt{i}": 1})]))
            labels.append(f"box[dt{i}<=hi]")
            constraints.append(b.posy([(dt_lo[i], {f"dt{i}": -1})]))
            labels.append(f"box[dt{i}>=lo]")

    gp = GeometricProgram(problem, phi, names, constraints, labels, fixed, rhs, np.zeros(0))
    gp.x0 = _initial_point(gp) if zero_cost < problem.budget - 1e-12 * max(1.0, problem.budget) else np.zeros(0)
    return gp


def _initial_point(gp: GeometricProgram) -> np.ndarray:
    """Strictly feasible start: a point just inside the zero-spend corner.

    ``u`` is the Perron vector of ``diag(beta) A + diag(dt)`` at that point and
    ``lam`` is 5% above its Perron root.
    """
    p = gp.problem
    n, phi = p.n, gp.phi
    dt_lo, dt_hi = phi - p.delta_hi, phi - p.delta_lo
    budget_idx = gp.labels.index("budget") if "budget" in gp.labels else None
    s = 0.5
    for _ in range(200):
        beta = p.beta_hi ** (1 - s) * p.beta_lo ** s
        dt = dt_hi ** (1 - s) * dt_lo ** s
        M = beta[:, None] * p.graph.adjacency + np.diag(dt)
        spec = lambda_max(M, name="initial GP matrix")
        u = spec.right_vector / spec.right_vector[0]
        values = {"lam": 1.05 * spec.lambda_max}
        for i in range(n):
            values[f"beta{i}"] = beta[i]
            values[f"dt{i}"] = dt[i]
            values[f"u{i}"] = u[i]
        x = np.array([values[nm] for nm in gp.names])
        res = gp.residuals(x)
        if budget_idx is None or res[budget_idx] < 1.0:
            if np.all(res < 1.0):
                return x
        s *= 0.5
    raise SolverError("could not find a strictly feasible starting point")


# ---------------------------------------------------------------------------
# Barrier interior-point solver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GPSolution:
    x: np.ndarray
    objective: float
    iterations: int
    outer_iterations: int
    kkt_residual: float
    gap: float


def _barrier_terms(gp: GeometricProgram, y: np.ndarray):
    m = len(gp.constraints)
    vals = np.empty(m)
    grads = np.empty((m, y.size))
    hess = np.zeros((y.size, y.size))
    for k, c in enumerate(gp.constraints):
        v, gr, H = c.log_transformed(y)
        vals[k], grads[k] = v, gr
        hess += H / (-v) if v < 0 else H * np.inf
    return vals, grads, hess


def _centering_objective(gp, t, obj_row, y):
    vals = np.array([c.log_transformed(y)[0] for c in gp.constraints])
    if np.any(vals >= 0):
        return math.inf
    return t * float(obj_row @ y) - float(np.sum(np.log(-vals)))


def solve_gp(gp: GeometricProgram, *, mu0: float = 1.0, mu_factor: float = 10.0,
             gap_tol: float = 1e-9, newton_tol: float = 1e-10, stall_tol: float = 1e-6,
             max_newton: int = 200) -> GPSolution:
    """Minimise ``log lam`` over ``y = log x`` with a log barrier.

    Each centring step runs damped Newton (backtracking that keeps every
    constraint strictly negative) until the Newton decrement is below
    ``newton_tol``.  The barrier weight ``mu = 1/t`` starts at ``mu0`` and is
    divided by ``mu_factor`` until ``m * mu <= gap_tol`` (the last step is
    cut short to land exactly on the target).  Near the end the barrier is
    badly conditioned, so a damped step taken with decrement already below
    ``stall_tol`` counts as centred.
    """
    if gp.x0.size == 0:
        raise SolverError("no strictly feasible interior; use allocate() for the no-slack case")
    y = np.log(gp.x0)
    m = len(gp.constraints)
    obj = np.zeros(y.size)
    obj[gp.index("lam")] = 1.0
    t = 1.0 / mu0
    total_newton = 0
    outer = 0
    while True:
        outer += 1
        for _ in range(max_newton):
            vals, grads, hess = _barrier_terms(gp, y)
            inv = 1.0 / (-vals)
            grad = t * obj + grads.T @ inv
            H = hess + (grads.T * inv ** 2) @ grads
            try:
                step = np.linalg.solve(H, -grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(H, -grad, rcond=None)[0]
            decrement = float(-grad @ step)
            total_newton += 1
            if decrement / 2 <= newton_tol:
                break
            f0 = _centering_objective(gp, t, obj, y)
            alpha = 1.0
            while alpha >= 1e-12:
                cand = y + alpha * step
                if _centering_objective(gp, t, obj, cand) <= f0 - 0.25 * alpha * decrement:
                    break
                alpha *= 0.5
            else:
                alpha = 0.0
            if alpha < 1.0 and decrement / 2 <= stall_tol:
                # inside the quadratic region a damped step only happens on roundoff
                if alpha > 0:
                    y = cand
                break
            if alpha == 0.0:
                raise SolverError(f"line search failed at t={t:.3g} (decrement {decrement:.3g})")
            y = cand
        else:
            raise SolverError(f"Newton did not converge at t={t:.3g}")
        if m / t <= gap_tol * (1 + 1e-12):
            break
        t = min(t * mu_factor, m / gap_tol)
    x = np.exp(y)
    return GPSolution(x, float(x[gp.index("lam")]), total_newton, outer, _kkt_residual(gp, y, obj), m / t)


def _kkt_residual(gp: GeometricProgram, y: np.ndarray, obj: np.ndarray, active_tol: float = 1e-6) -> float:
    """Largest of stationarity, complementarity and primal violation.

    Multipliers are fitted by nonnegative least squares on the nearly active
    constraints, which is sharper than the barrier estimate ``1/(t |g_k|)``.
    """
    vals = np.empty(len(gp.constraints))
    grads = np.empty((len(gp.constraints), y.size))
    for k, c in enumerate(gp.constraints):
        vals[k], grads[k], _ = c.log_transformed(y)
    act = vals > -active_tol
    if not act.any():
        return float(np.abs(obj).max())
    mult, stationarity = nnls(grads[act].T, -obj)
    complementarity = float(np.max(mult * np.abs(vals[act])))
    return max(float(stationarity), complementarity, float(max(vals.max(), 0.0)))


# ---------------------------------------------------------------------------
# High-level allocation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AllocationResult:
    beta: np.ndarray
    delta: np.ndarray
    lambda_max_BD: float
    gp_objective: float
    phi: float
    spend: float
    u: np.ndarray
    diagnostics: dict

    def to_dict(self) -> dict:
        return {
            "beta": self.beta.tolist(), "delta": self.delta.tolist(),
            "lambda_max_BD": self.lambda_max_BD, "gp_objective": self.gp_objective,
            "phi": self.phi, "spend": self.spend, "u": self.u.tolist(),
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def allocate(problem: AllocationProblem, **solver_kw) -> AllocationResult:
    """Solve the allocation GP and map the optimum back to ``(beta, delta)``."""
    gp = build_gp(problem)
    n, phi = problem.n, gp.phi
    if gp.x0.size == 0:
        # no budget slack: the zero-spend corner is the only feasible point
        beta, delta = problem.zero_spend()
        spec = lambda_max(problem.decay_matrix(beta, delta), name="B - D")
        u = spec.right_vector * n / spec.right_vector.sum()
        return AllocationResult(beta, delta, spec.lambda_max, spec.lambda_max + phi, phi,
                                problem.spend(beta, delta), u,
                                {"iterations": 0, "outer_iterations": 0, "kkt_residual": 0.0,
                                 "gap": 0.0, "note": "no budget slack"})
    sol = solve_gp(gp, **solver_kw)
    beta = np.array([gp.value(f"beta{i}", sol.x) for i in range(n)])
    dt = np.array([gp.value(f"dt{i}", sol.x) for i in range(n)])
    u = np.array([gp.value(f"u{i}", sol.x) for i in range(n)])
    beta = np.clip(beta, problem.beta_lo, problem.beta_hi)
    delta = np.clip(phi - dt, problem.delta_lo, problem.delta_hi)
    lam_bd = lambda_max(problem.decay_matrix(beta, delta), name="B* - D*").lambda_max
    res = gp.residuals(sol.x)
    diag = {
        "iterations": sol.iterations, "outer_iterations": sol.outer_iterations,
        "kkt_residual": sol.kkt_residual, "gap": sol.gap,
        "max_constraint": float(res.max()),
    }
    return AllocationResult(beta, delta, lam_bd, sol.objective, phi, problem.spend(beta, delta),
                            u * n / u.sum(), diag)


def decay_rate(result: AllocationResult, problem: AllocationProblem, tol: float = 1e-6) -> float:
    """Recompute ``lambda_max(B* - D*)`` and confirm it does not exceed ``lam* - phi``."""
    lam = lambda_max(problem.decay_matrix(result.beta, result.delta), name="B* - D*").lambda_max
    if lam > result.gp_objective - result.phi + tol:
        raise SolverError(f"decay rate {lam:.9g} exceeds GP bound {result.gp_objective - result.phi:.9g}")
    return lam


def equal_split(problem: AllocationProblem, steps: int = 60) -> tuple[np.ndarray, np.ndarray, float]:
    """Baseline: move every node the same fraction of its box toward full spend.

    The fraction is the largest that fits the budget (bisection).
    """
    def at(s):
        beta = problem.beta_hi + s * (problem.beta_lo - problem.beta_hi)
        delta = problem.delta_lo + s * (problem.delta_hi - problem.delta_lo)
        return beta, delta

    lo, hi = 0.0, 1.0
    if problem.spend(*at(1.0)) <= problem.budget:
        lo = 1.0
    else:
        for _ in range(steps):
            mid = 0.5 * (lo + hi)
            if problem.spend(*at(mid)) <= problem.budget:
                lo = mid
            else:
                hi = mid
    beta, delta = at(lo)
    return beta, delta, lambda_max(problem.decay_matrix(beta, delta)).lambda_max


# ---------------------------------------------------------------------------
# Grid-search oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridResult:
    beta: np.ndarray
    delta: np.ndarray
    lambda_max_BD: float
    evaluated: int


def _batched_abscissa(mats: np.ndarray) -> np.ndarray:
    return np.linalg.eigvals(mats).real.max(axis=1)


def _monotone_axis(problem: AllocationProblem, k: int) -> bool:
    """True when spending on variable ``k`` strictly rises toward its full-spend end."""
    n = problem.n
    curve = problem.beta_cost[k] if k < n else problem.delta_cost[k - n]
    return bool(curve.terms) and all(c > 0 and a < 0 for c, a in curve.terms)


def brute_force_allocation(problem: AllocationProblem, grid_density: int = 40,
                           refinements: int = 2, window: float = 1.0, max_candidates: int = 3_000_000,
                           chunk: int = 200_000, project: bool = True) -> GridResult:
    """Exhaustive grid over every free ``beta_i``/``delta_i``, budget-filtered.

    Each candidate is scored with a dense eigensolver.  Every refinement pass
    re-grids the box spanned by the incumbent's neighbouring cells.

    With ``project`` set, the last free variable whose cost is monotone is
    not gridded: ``lambda_max`` is monotone in every rate, so for each grid
    point of the other variables that one is pushed toward full spend until
    the budget binds (vectorised bisection).  If it reaches its bound with
    budget left over, the remaining monotone variables are pushed in turn.
    Pushing never raises ``lambda_max``, so every candidate is at least as good
    as the grid point it came from and lies on the budget surface instead of
    up to one grid cell inside it.
    """
    n = problem.n
    if n > 4:
        raise ValueError("grid oracle is limited to n <= 4")
    if grid_density > 50 or grid_density < 2:
        raise ValueError("grid_density must be in [2, 50]")
    A = problem.graph.adjacency
    lo = np.concatenate([problem.beta_lo, problem.delta_lo])
    hi = np.concatenate([problem.beta_hi, problem.delta_hi])
    zero = np.concatenate(problem.zero_spend())
    full = np.concatenate([problem.beta_lo, problem.delta_hi])
    free = [k for k in range(2 * n) if not _is_fixed(lo[k], hi[k])]
    proj, chain = None, []
    if project:
        mono = [k for k in free if _monotone_axis(problem, k)]
        if mono:
            proj = mono[-1]
            free.remove(proj)
            chain = mono[::-1]
    if grid_density ** len(free) > max_candidates:
        raise ValueError(f"{grid_density}^{len(free)} candidates exceed {max_candidates}")
    phi = problem.phi
    budget_cap = problem.budget * (1 + 1e-12) + 1e-15
    best_val, best_x, evaluated = math.inf, zero.copy(), 0

    def spend_batch(X):
        total = np.zeros(X.shape[0])
        for i in range(n):
            total += sum(c * X[:, i] ** a for c, a in problem.beta_cost[i].terms) + problem.beta_cost[i].offset
            dt = phi - X[:, n + i]
            total += sum(c * dt ** a for c, a in problem.delta_cost[i].terms) + problem.delta_cost[i].offset
        return total

    def push_to_budget(X):
        # walk the monotone axes, projected one first: saturate an axis while the
        # budget allows, otherwise bisect it onto the budget surface and stop
        active = spend_batch(X) <= budget_cap
        for k in chain:
            if not active.any():
                break
            rows = X[active]
            start = rows[:, k].copy()
            rows[:, k] = full[k]
            saturated = spend_batch(rows) <= budget_cap
            a, b = start, np.full(rows.shape[0], full[k])
            for _ in range(80):
                mid = 0.5 * (a + b)
                rows[:, k] = mid
                ok = spend_batch(rows) <= budget_cap
                a = np.where(ok, mid, a)
                b = np.where(ok, b, mid)
            rows[:, k] = np.where(saturated, full[k], a)
            X[active] = rows
            idx = np.nonzero(active)[0]
            active[idx[~saturated]] = False
        return X

    box_lo, box_hi = lo.copy(), hi.copy()
    for _ in range(refinements + 1):
        axes = [np.linspace(box_lo[k], box_hi[k], grid_density) for k in free]
        steps = [(box_hi[k] - box_lo[k]) / (grid_density - 1) for k in free]
        combos = itertools.product(*axes)
        while True:
            block = list(itertools.islice(combos, chunk))
            if not block:
                break
            X = np.tile(zero, (len(block), 1))  # the projected axis starts at zero spend
            if free:
                X[:, free] = np.array(block)
            if proj is not None:
                X = push_to_budget(X)
            X = X[spend_batch(X) <= budget_cap]
            if X.shape[0]:
                mats = X[:, :n, None] * A[None] - X[:, n:, None] * np.eye(n)[None]
                vals = _batched_abscissa(mats)
                evaluated += X.shape[0]
                k = int(np.argmin(vals))
                if vals[k] < best_val:
                    best_val, best_x = float(vals[k]), X[k].copy()
        if not free:
            break
        for k, step in zip(free, steps):
            box_lo[k] = max(lo[k], best_x[k] - window * step)
            box_hi[k] = min(hi[k], best_x[k] + window * step)
    return GridResult(best_x[:n], best_x[n:], best_val, evaluated)
