"""Optimal control of epidemic models by forward-backward sweeps.

Three problems are covered:

* population SIS with treatment ``u in [0, 1]`` raising recovery from
  ``delta1`` to ``delta2`` at linear cost, where the optimum is bang-bang
  with at most one switch;
* networked SIR with patch propagation, where each node's optimal patch rate
  is ``u_max`` up to a node-specific time and zero afterwards;
* networked SIS with time-varying curing rates.  No optimality result is
  known for this one, so :func:`fbs_sis_network` is a heuristic and is
  labelled as such everywhere it reports.

Costates follow the sign convention used by the switching laws: for the
population problem ``psi`` is the negative of the usual Hamiltonian
multiplier, so treatment is applied where ``psi p (delta2 - delta1) + d < 0``.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .graph import Graph
from .meanfield import Trajectory, integrate, node_columns, time_grid

OMEGA = 0.3
CONTROL_TOL = 1e-6
MAX_SWEEPS = 5000
DEAD_BAND = 1e-8
SNAP_RTOL = 1e-4
STALL_PATIENCE = 20
MIN_OMEGA = 1e-3

TREAT_THEN_STOP = "treat_then_stop"
NEVER_TREAT = "never_treat"


class ConvergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolicySchedule:
    """Piecewise-constant controls on ``[0, T]``.

    ``values[k]`` holds on ``[breakpoints[k-1], breakpoints[k])`` with
    ``breakpoints[-1] = 0`` and ``breakpoints[len] = T`` implied; the last
    piece is closed at ``T``.
    """

    T: float
    breakpoints: np.ndarray
    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    signals: tuple[str, ...] = ("u",)

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float).reshape(-1)
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        k = vals.shape[1]
        lo = np.broadcast_to(np.asarray(self.lower, dtype=float), (k,)).copy()
        hi = np.broadcast_to(np.asarray(self.upper, dtype=float), (k,)).copy()
        if not self.T > 0:
            raise ValueError("horizon must be positive")
        if vals.shape[0] != bp.size + 1:
            raise ValueError("need one value row per piece (len(breakpoints) + 1)")
        if len(self.signals) != k:
            raise ValueError("one signal name per control column required")
        if bp.size and (np.any(np.diff(bp) <= 0) or bp[0] <= 0 or bp[-1] >= self.T):
            raise ValueError("breakpoints must be strictly increasing inside (0, T)")
        if np.any(vals < lo - 1e-12) or np.any(vals > hi + 1e-12):
            raise ValueError("control values outside their bounds")
        vals = np.clip(vals, lo, hi)
        for arr in (bp, vals, lo, hi):
            arr.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "signals", tuple(self.signals))

    @classmethod
    def constant(cls, T: float, value, lower, upper, signals=("u",)) -> "PolicySchedule":
        v = np.broadcast_to(np.asarray(value, dtype=float), (len(signals),))
        return cls(T, np.empty(0), v[None, :].copy(), lower, upper, signals)

    @classmethod
    def from_grid(cls, times, interval_values, lower, upper, signals=("u",)) -> "PolicySchedule":
        """Build from per-interval values on a grid, merging equal neighbours."""
        times = np.asarray(times, dtype=float)
        v = np.asarray(interval_values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != times.size - 1:
            raise ValueError("one value row per grid interval required")
        change = np.any(v[1:] != v[:-1], axis=1)
        keep = np.concatenate([[True], change])
        return cls(float(times[-1]), times[1:-1][change], v[keep], lower, upper, signals)

    @classmethod
    def single_switch(cls, T: float, switch_times, on_values, off_values, lower, upper,
                      signals=("u",)) -> "PolicySchedule":
        """Each signal takes ``on`` before its switch time and ``off`` after."""
        k = len(signals)
        tau = np.broadcast_to(np.asarray(switch_times, dtype=float), (k,))
        on = np.broadcast_to(np.asarray(on_values, dtype=float), (k,))
        off = np.broadcast_to(np.asarray(off_values, dtype=float), (k,))
        inner = sorted({float(t) for t in tau if 0 < t < T})
        bps = np.array(inner)
        rows = []
        for start in [0.0, *inner]:
            rows.append(np.where(start < tau, on, off))
        return cls(T, bps, np.array(rows), lower, upper, signals)

    @property
    def n_signals(self) -> int:
        return self.values.shape[1]

    def value(self, t: float) -> np.ndarray:
        """Right-continuous control at ``t``."""
        return self.values[int(np.searchsorted(self.breakpoints, t, side="right"))]

    def scalar(self, t: float) -> float:
        return float(self.value(t)[0])

    def on_grid(self, times) -> np.ndarray:
        """Per-interval values (taken at interval midpoints) on a grid."""
        times = np.asarray(times, dtype=float)
        mids = 0.5 * (times[1:] + times[:-1])
        return self.values[np.searchsorted(self.breakpoints, mids, side="right")]

    def switch_counts(self) -> np.ndarray:
        return np.sum(self.values[1:] != self.values[:-1], axis=0)

    def switch_times(self, signal: int = 0) -> np.ndarray:
        col = self.values[:, signal]
        return self.breakpoints[col[1:] != col[:-1]]

    def to_dict(self) -> dict:
        return {"T": self.T, "signals": list(self.signals), "breakpoints": self.breakpoints.tolist(),
                "values": self.values.tolist(), "lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "PolicySchedule":
        return cls(float(doc["T"]), doc["breakpoints"], doc["values"], doc["lower"], doc["upper"],
                   tuple(doc["signals"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        """Step-function CSV: each piece contributes its start and end rows."""
        buf = io.StringIO()
        buf.write("t," + ",".join(self.signals) + "\n")
        edges = [0.0, *self.breakpoints.tolist(), self.T]
        for k, row in enumerate(self.values):
            vals = ",".join(f"{x:.12g}" for x in row)
            buf.write(f"{edges[k]:.12g},{vals}\n")
            buf.write(f"{edges[k + 1]:.12g},{vals}\n")
        return buf.getvalue()


@dataclass(frozen=True)
class CostateTrajectory:
    times: np.ndarray
    costates: np.ndarray
    switching: np.ndarray

    @property
    def terminal_error(self) -> float:
        return float(np.abs(self.costates[-1]).max())


# ---------------------------------------------------------------------------
# Problems
# ---------------------------------------------------------------------------


def _positive(name, value, strict=True):
    arr = np.asarray(value, dtype=float)
    if np.any(arr < 0) or (strict and np.any(arr <= 0)) or not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be {'positive' if strict else 'nonnegative'}")


@dataclass(frozen=True)
class PopulationControlProblem:
    """Treatment of a well-mixed SIS population.

    Minimises ``int_0^T (c p + d u) dt`` subject to
    ``p' = beta p (1 - p) - ((1 - u) delta1 + u delta2) p``.
    """

    beta: float
    delta1: float
    delta2: float
    c: float
    d: float
    T: float
    model: str = field(default="population_sis", init=False)

    def __post_init__(self):
        _positive("beta", self.beta, strict=False)
        _positive("delta1", self.delta1)
        _positive("c", self.c)
        _positive("d", self.d)
        _positive("T", self.T)
        if not self.delta2 > self.delta1:
            raise ValueError("delta2 must exceed delta1")

    def rate(self, u: float) -> float:
        return (1 - u) * self.delta1 + u * self.delta2

    def to_dict(self) -> dict:
        return {"model": self.model, "beta": self.beta, "delta1": self.delta1, "delta2": self.delta2,
                "c": self.c, "d": self.d, "T": self.T}


@dataclass(frozen=True)
class SIRPatchingProblem:
    """Patch propagation on a networked SIR model with per-node rates ``u_i``.

    Running cost ``sum_i -ell_i R_i + c_i I_i + h1_i R_i u_i + h2_i R_i (S_i + I_i) u_i``.
    """

    B: np.ndarray
    pi: np.ndarray
    ell: np.ndarray
    c: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    u_max: np.ndarray
    T: float
    model: str = field(default="sir_patching", init=False)

    def __post_init__(self):
        B = np.array(self.B, dtype=float)
        n = B.shape[0]
        if B.shape != (n, n) or np.any(B < 0) or np.any(np.diag(B) != 0):
            raise ValueError("B must be a nonnegative square matrix with zero diagonal")
        object.__setattr__(self, "B", B)
        for name in ("pi", "ell", "c", "h1", "h2", "u_max"):
            object.__setattr__(self, name, np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (n,)).copy())
        _positive("u_max", self.u_max)
        _positive("c", self.c)
        _positive("h1", self.h1, strict=False)
        _positive("h2", self.h2, strict=False)
        _positive("ell", self.ell, strict=False)
        _positive("T", self.T)
        if np.any(self.pi < 0) or np.any(self.pi > 1):
            raise ValueError("pi must lie in [0, 1]")

    @classmethod
    def on_graph(cls, g: Graph, beta, **kw) -> "SIRPatchingProblem":
        beta = np.broadcast_to(np.asarray(beta, dtype=float), (g.n,))
        return cls(B=beta[:, None] * g.adjacency, **kw)

    @property
    def n(self) -> int:
        return self.B.shape[0]

    def to_dict(self) -> dict:
        return {"model": self.model, "B": self.B.tolist(), "pi": self.pi.tolist(), "ell": self.ell.tolist(),
                "c": self.c.tolist(), "h1": self.h1.tolist(), "h2": self.h2.tolist(),
                "u_max": self.u_max.tolist(), "T": self.T}


@dataclass(frozen=True)
class SISNetworkControlProblem:
    """Time-varying curing rates ``delta_i(t) in [delta_lo, delta_hi]`` on networked SIS.

    Minimises ``int_0^T sum_i (c_i p_i + d_i delta_i) dt``.
    """

    B: np.ndarray
    c: np.ndarray
    d: np.ndarray
    delta_lo: float
    delta_hi: float
    T: float
    model: str = field(default="sis_network", init=False)

    def __post_init__(self):
        B = np.array(self.B, dtype=float)
        n = B.shape[0]
        if B.shape != (n, n) or np.any(B < 0) or np.any(np.diag(B) != 0):
            raise ValueError("B must be a nonnegative square matrix with zero diagonal")
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "c", np.broadcast_to(np.asarray(self.c, dtype=float), (n,)).copy())
        object.__setattr__(self, "d", np.broadcast_to(np.asarray(self.d, dtype=float), (n,)).copy())
        _positive("c", self.c, strict=False)
        _positive("d", self.d, strict=False)
        _positive("T", self.T)
        if not 0 < self.delta_lo < self.delta_hi:
            raise ValueError("need 0 < delta_lo < delta_hi")

    @classmethod
    def on_graph(cls, g: Graph, beta, **kw) -> "SISNetworkControlProblem":
        beta = np.broadcast_to(np.asarray(beta, dtype=float), (g.n,))
        return cls(B=beta[:, None] * g.adjacency, **kw)

    @property
    def n(self) -> int:
        return self.B.shape[0]

    def to_dict(self) -> dict:
        return {"model": self.model, "B": self.B.tolist(), "c": self.c.tolist(), "d": self.d.tolist(),
                "delta_lo": self.delta_lo, "delta_hi": self.delta_hi, "T": self.T}


def problem_from_dict(doc: dict):
    kind = doc.get("model")
    body = {k: v for k, v in doc.items() if k != "model"}
    if kind == "population_sis":
        return PopulationControlProblem(**body)
    if kind == "sir_patching":
        return SIRPatchingProblem(**body)
    if kind == "sis_network":
        return SISNetworkControlProblem(**body)
    raise ValueError(f"unknown control problem model {kind!r}")


# ---------------------------------------------------------------------------
# Simulation and objective
# ---------------------------------------------------------------------------


def simulate_controlled_population(beta: float, delta1: float, delta2: float, schedule: PolicySchedule,
                                   p0: float, T: float, dt: float = 1e-3) -> Trajectory:
    """RK4 with steps aligned to the schedule's breakpoints."""
    if abs(schedule.T - T) > 1e-12 * max(1.0, T):
        raise ValueError(f"schedule horizon {schedule.T} does not match T={T}")

    def rhs(t, x, u):
        p = x[0]
        return np.array([beta * p * (1 - p) - ((1 - u) * delta1 + u * delta2) * p])

    return integrate(rhs, [p0], T, dt, breakpoints=schedule.breakpoints, control=schedule.scalar,
                     columns=("p_I",), model="population_sis_control")


def _sir_rhs(problem: SIRPatchingProblem):
    n, B, pi = problem.n, problem.B, problem.pi

    def rhs(t, x, u):
        s, i, r = x[:n], x[n:2 * n], x[2 * n:]
        inf = s * (B @ i)
        ps = s * r * u
        pi_ = pi * i * r * u
        return np.concatenate([-inf - ps, inf - pi_, ps + pi_])

    return rhs


def _sis_rhs(problem: SISNetworkControlProblem):
    B = problem.B

    def rhs(t, p, delta):
        return (1 - p) * (B @ p) - delta * p

    return rhs


def simulate_sir_patching(problem: SIRPatchingProblem, schedule: PolicySchedule, x0,
                          dt: float = 1e-2) -> Trajectory:
    return integrate(_sir_rhs(problem), x0, problem.T, dt, breakpoints=schedule.breakpoints,
                     control=schedule.value, groups=3, columns=node_columns("SIR", problem.n),
                     model="sir_patching")


def simulate_sis_network_control(problem: SISNetworkControlProblem, schedule: PolicySchedule, p0,
                                 dt: float = 1e-2) -> Trajectory:
    return integrate(_sis_rhs(problem), p0, problem.T, dt, breakpoints=schedule.breakpoints,
                     control=schedule.value, columns=tuple(f"p_{i}" for i in range(problem.n)),
                     model="sis_network_control")


def running_cost(problem) -> Callable:
    """Integrand ``L(x, u)`` as a function of state and control rows."""
    if isinstance(problem, PopulationControlProblem):
        return lambda x, u: problem.c * x[..., 0] + problem.d * u[..., 0]
    if isinstance(problem, SIRPatchingProblem):
        n = problem.n

        def cost(x, u):
            s, i, r = x[..., :n], x[..., n:2 * n], x[..., 2 * n:]
            per = -problem.ell * r + problem.c * i + problem.h1 * r * u + problem.h2 * r * (s + i) * u
            return per.sum(axis=-1)

        return cost
    if isinstance(problem, SISNetworkControlProblem):
        return lambda x, u: (problem.c * x + problem.d * u).sum(axis=-1)
    raise TypeError(f"unsupported problem type {type(problem).__name__}")


def evaluate_objective(problem, schedule: PolicySchedule, trajectory: Trajectory) -> float:
    """Composite trapezoid of the running cost on the trajectory grid.

    Each interval uses its own control value at both ends, so jumps in the
    control never get averaged across a breakpoint.
    """
    times = trajectory.times
    if abs(times[-1] - schedule.T) > 1e-12 * max(1.0, schedule.T):
        raise ValueError("trajectory horizon does not match the schedule")
    if schedule.breakpoints.size:
        idx = np.searchsorted(times, schedule.breakpoints)
        ok = (idx < times.size) & (np.abs(times[np.minimum(idx, times.size - 1)] - schedule.breakpoints) <= 1e-9)
        if not np.all(ok):
            raise ValueError("schedule breakpoints are not nodes of the trajectory grid")
    u = schedule.on_grid(times)
    L = running_cost(problem)
    x = trajectory.states
    left = L(x[:-1], u)
    right = L(x[1:], u)
    return float(np.sum(0.5 * np.diff(times) * (left + right)))


# ---------------------------------------------------------------------------
# Population SIS
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolicyClass:
    verdict: str
    ratio: float
    cost_ratio: float
    degenerate: bool


def classify_population_policy(problem: PopulationControlProblem) -> PolicyClass:
    """Compare ``beta / (delta2 - delta1)`` with ``c / d``.

    Equality is reported as ``never_treat`` with the degeneracy flag set.
    """
    ratio = problem.beta / (problem.delta2 - problem.delta1)
    cost_ratio = problem.c / problem.d
    verdict = TREAT_THEN_STOP if ratio < cost_ratio else NEVER_TREAT
    return PolicyClass(verdict, ratio, cost_ratio, ratio == cost_ratio)


def _population_forward(pr: PopulationControlProblem, times, u, p0):
    beta, d1, d2 = pr.beta, pr.delta1, pr.delta2
    p = [0.0] * len(times)
    p[0] = x = float(p0)
    for k in range(len(times) - 1):
        h = times[k + 1] - times[k]
        dl = d1 + u[k] * (d2 - d1)
        k1 = beta * x * (1 - x) - dl * x
        y = x + 0.5 * h * k1
        k2 = beta * y * (1 - y) - dl * y
        y = x + 0.5 * h * k2
        k3 = beta * y * (1 - y) - dl * y
        y = x + h * k3
        k4 = beta * y * (1 - y) - dl * y
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        p[k + 1] = x
    return p


def _population_backward(pr: PopulationControlProblem, times, u, p):
    beta, d1, d2, c = pr.beta, pr.delta1, pr.delta2, pr.c
    m = len(times)
    psi = [0.0] * m
    z = 0.0
    for k in range(m - 2, -1, -1):
        h = times[k + 1] - times[k]
        dl = d1 + u[k] * (d2 - d1)
        pa, pb = p[k + 1], p[k]
        fa = beta * pa * (1 - pa) - dl * pa
        fb = beta * pb * (1 - pb) - dl * pb
        pm = 0.5 * (pa + pb) + h * (fb - fa) / 8.0  # cubic Hermite midpoint
        # integrate psi' = c - psi (beta (1 - 2p) - dl) from t_{k+1} down to t_k
        g = lambda q, s: c - s * (beta * (1 - 2 * q) - dl)  # noqa: E731
        k1 = g(pa, z)
        k2 = g(pm, z - 0.5 * h * k1)
        k3 = g(pm, z - 0.5 * h * k2)
        k4 = g(pb, z - h * k3)
        z = z - h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        psi[k] = z
    return psi


def _population_switching(pr, p, psi):
    return np.asarray(psi) * np.asarray(p) * (pr.delta2 - pr.delta1) + pr.d


def _negative_fraction(f: np.ndarray) -> np.ndarray:
    """Share of each grid interval on which the linear interpolant of ``f`` is negative.

    This is the interval average of the bang-bang law, so a switch can fall
    inside an interval without the sweep chattering on it.  Intervals where
    ``f`` stays inside the dead-band count as non-negative.
    """
    fa, fb = f[:-1], f[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        down = np.where(fa < 0, fa / (fa - fb), -fb / (fa - fb))
    out = np.where((fa < 0) & (fb < 0), 1.0, np.where((fa >= 0) & (fb >= 0), 0.0, down))
    out = np.where((np.abs(fa) <= DEAD_BAND) & (np.abs(fb) <= DEAD_BAND), 0.0, out)
    out[out < 1e-12] = 0.0
    out[out > 1 - 1e-12] = 1.0
    return out


def _zero_crossings(times, f):
    """Linear-interpolated sign changes of ``f`` (dead-band counts as positive)."""
    neg = f < -DEAD_BAND
    out = []
    for k in np.flatnonzero(neg[1:] != neg[:-1]):
        a, b = f[k], f[k + 1]
        t = times[k] + (times[k + 1] - times[k]) * (a / (a - b) if a != b else 0.5)
        out.append((float(t), bool(neg[k])))
    return out


@dataclass(frozen=True)
class PopulationSolution:
    schedule: PolicySchedule
    J: float
    costate: CostateTrajectory
    trajectory: Trajectory
    switches: int
    sweeps: int
    classification: PolicyClass


def _bang_schedule(T, times, f):
    """Bang-bang schedule from sign changes of the switching function."""
    neg0 = bool(f[0] < -DEAD_BAND)
    cross = [t for t, _ in _zero_crossings(times, f) if 0 < t < T]
    vals = [1.0 if neg0 else 0.0]
    for _ in cross:
        vals.append(1.0 - vals[-1])
    return PolicySchedule(T, np.array(cross), np.array(vals)[:, None], 0.0, 1.0)


def fbs_population_sis(problem: PopulationControlProblem, p0: float, *, dt: float = 1e-3,
                       omega: float = OMEGA, tol: float = CONTROL_TOL,
                       max_sweeps: int = MAX_SWEEPS) -> PopulationSolution:
    """Forward-backward sweep for the treated SIS population, snapped to bang-bang.

    The sweep relaxes ``u <- (1 - omega) u + omega u_new`` where ``u_new`` is
    the share of each interval on which the switching function is negative.
    If the residual ``|u_new - u|`` stops shrinking for ``STALL_PATIENCE``
    sweeps, ``omega`` is halved (down to ``MIN_OMEGA``); convergence is still
    ``omega_nominal * |u_new - u| <= tol``.  After
    convergence the sign changes of the switching function define the
    bang-bang schedule.  A lone switch time is then refined by secant steps
    until it sits on the zero of the switching function recomputed under the
    snapped schedule.
    """
    if not 0 < p0 <= 1:
        raise ValueError("p0 must lie in (0, 1]")
    T = problem.T
    times = time_grid(T, dt).tolist()
    m = len(times)
    u = [0.0] * (m - 1)
    # convergence is judged at the nominal weight, so damping cannot fake it
    nominal, best, stall = omega, math.inf, 0
    for sweep in range(1, max_sweeps + 1):
        p = _population_forward(problem, times, u, p0)
        psi = _population_backward(problem, times, u, p)
        f = _population_switching(problem, p, psi)
        target = _negative_fraction(f)
        residual = float(np.abs(target - np.asarray(u)).max())
        if nominal * residual <= tol:
            break
        u = ((1 - omega) * np.asarray(u) + omega * target).tolist()
        if residual < 0.999 * best:
            best, stall = residual, 0
        else:
            stall += 1
            if stall >= STALL_PATIENCE and omega > MIN_OMEGA:
                # the switch time is cycling between competing stationary points
                omega, best, stall = max(0.5 * omega, MIN_OMEGA), math.inf, 0
    else:
        raise ConvergenceError(f"population sweep did not converge in {max_sweeps} sweeps")

    schedule = _bang_schedule(T, np.asarray(times), f)

    def evaluate(sched):
        grid = time_grid(T, dt, sched.breakpoints)
        tl = grid.tolist()
        uu = sched.on_grid(grid)[:, 0].tolist()
        p = _population_forward(problem, tl, uu, p0)
        psi = _population_backward(problem, tl, uu, p)
        f = _population_switching(problem, p, psi)
        resid = f[np.searchsorted(grid, sched.breakpoints)] if sched.breakpoints.size else np.zeros(0)
        return grid, p, psi, f, resid

    grid, p, psi, f, resid = evaluate(schedule)
    if resid.size == 1 and abs(resid[0]) > DEAD_BAND:
        # secant on the switch time so it sits on the zero of its own switching function
        on = schedule.values[:, 0]
        s0, g0 = float(schedule.breakpoints[0]), float(resid[0])
        s1 = s0 + (1e-6 if s0 + 1e-6 < T else -1e-6)
        best = (abs(g0), schedule, (grid, p, psi, f))
        for _ in range(30):
            cand = PolicySchedule(T, [s1], on, 0.0, 1.0)
            out = evaluate(cand)
            g1 = float(out[4][0])
            if abs(g1) < best[0]:
                best = (abs(g1), cand, out[:4])
            if abs(g1) <= DEAD_BAND or g1 == g0:
                break
            s0, s1, g0 = s1, s1 - g1 * (s1 - s0) / (g1 - g0), g1
            s1 = min(max(s1, dt * 1e-3), T - dt * 1e-3)
        _, schedule, (grid, p, psi, f) = best
    traj = Trajectory(grid, np.asarray(p)[:, None], ("p_I",), "population_sis_control")
    J = evaluate_objective(problem, schedule, traj)
    costate = CostateTrajectory(grid, np.asarray(psi)[:, None], f[:, None])
    return PopulationSolution(schedule, J, costate, traj, int(schedule.switch_counts()[0]), sweep,
                              classify_population_policy(problem))


def population_cost(problem: PopulationControlProblem, schedule: PolicySchedule, p0: float,
                    dt: float = 1e-3) -> float:
    grid = time_grid(problem.T, dt, schedule.breakpoints)
    u = schedule.on_grid(grid)[:, 0].tolist()
    p = _population_forward(problem, grid.tolist(), u, p0)
    traj = Trajectory(grid, np.asarray(p)[:, None], ("p_I",))
    return evaluate_objective(problem, schedule, traj)


# ---------------------------------------------------------------------------
# Network sweeps (shared machinery)
# ---------------------------------------------------------------------------


def _rk4_forward(rhs, x0, times, u):
    x = np.array(x0, dtype=float)
    out = np.empty((len(times), x.size))
    out[0] = x
    for k in range(len(times) - 1):
        h = times[k + 1] - times[k]
        uk = u[k]
        k1 = rhs(x, uk)
        k2 = rhs(x + 0.5 * h * k1, uk)
        k3 = rhs(x + 0.5 * h * k2, uk)
        k4 = rhs(x + h * k3, uk)
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k + 1] = x
    return out


def _rk4_backward(costate_rhs, state_rhs, times, u, X):
    """Integrate ``lam' = costate_rhs(x, lam, u)`` from ``lam(T) = 0`` backward."""
    m = len(times)
    lam = np.zeros(X.shape[1])
    out = np.empty_like(X)
    out[-1] = lam
    for k in range(m - 2, -1, -1):
        h = times[k + 1] - times[k]
        uk = u[k]
        xa, xb = X[k + 1], X[k]
        xm = 0.5 * (xa + xb) + h * (state_rhs(xb, uk) - state_rhs(xa, uk)) / 8.0
        k1 = costate_rhs(xa, lam, uk)
        k2 = costate_rhs(xm, lam - 0.5 * h * k1, uk)
        k3 = costate_rhs(xm, lam - 0.5 * h * k2, uk)
        k4 = costate_rhs(xb, lam - h * k3, uk)
        lam = lam - h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k] = lam
    return out


@dataclass(frozen=True)
class _SweepResult:
    u: np.ndarray
    X: np.ndarray
    Lam: np.ndarray
    switching: np.ndarray
    sweeps: int
    omega: float
    converged: bool


def _sweep(state_rhs, costate_rhs, switching, x0, times, lo, hi, u0, omega, tol, max_sweeps,
           cost=None, adaptive: bool = False, patience: int = 3) -> _SweepResult:
    """Generic relaxed forward-backward sweep for controls linear in the Hamiltonian.

    ``switching(X, Lam)`` returns the coefficient of ``u`` in the Hamiltonian
    at each grid node; each interval targets ``hi`` on the share of it where
    the coefficient is negative and ``lo`` elsewhere.

    With ``adaptive`` set, ``omega`` is halved whenever the largest control
    change has not improved for ``patience`` sweeps, which damps limit cycles
    near singular arcs.  Once targets barely move, a jump straight to the
    target is tried and kept if it shrinks the fixed-point residual.  If the
    sweep budget runs out, the cheapest iterate seen (by ``cost(X, u)``) is
    returned unconverged.
    """
    def evaluate(u):
        X = _rk4_forward(state_rhs, x0, times, u)
        Lam = _rk4_backward(costate_rhs, state_rhs, times, u, X)
        sw = switching(X, Lam)
        return X, Lam, sw, lo + (hi - lo) * _negative_fraction(sw)

    u = np.array(u0, dtype=float)
    best, stall = math.inf, 0
    cheapest = (math.inf, None)
    prev_target = None
    X, Lam, sw, target = evaluate(u)
    for sweep in range(1, max_sweeps + 1):
        if cost is not None:
            J = cost(X, u)
            if J < cheapest[0]:
                cheapest = (J, u.copy())
        residual = float(np.abs(target - u).max())
        if adaptive and prev_target is not None and float(np.abs(target - prev_target).max()) <= 1e-3:
            jX, jLam, jsw, jt = evaluate(target)
            if float(np.abs(jt - target).max()) < residual:
                prev_target = None
                u, X, Lam, sw, target = target, jX, jLam, jsw, jt
                if float(np.abs(target - u).max()) * omega <= tol:
                    return _SweepResult(u, X, Lam, sw, sweep, omega, True)
                continue
        prev_target = target
        change = omega * residual
        u = u + omega * (target - u)
        X, Lam, sw, target = evaluate(u)
        if change <= tol:
            return _SweepResult(u, X, Lam, sw, sweep, omega, True)
        if adaptive:
            if change < 0.999 * best:
                best, stall = change, 0
            else:
                stall += 1
                if stall >= patience:
                    omega, best, stall = 0.5 * omega, math.inf, 0
    if adaptive and cheapest[1] is not None:
        u = cheapest[1]
        X, Lam, sw, _ = evaluate(u)
        return _SweepResult(u, X, Lam, sw, max_sweeps, omega, False)
    raise ConvergenceError(f"sweep did not converge in {max_sweeps} sweeps")


def _grid_cost(problem, times):
    L = running_cost(problem)
    h = np.diff(times)
    return lambda X, u: float(np.sum(0.5 * h * (L(X[:-1], u) + L(X[1:], u))))


@dataclass(frozen=True)
class NetworkSolution:
    schedule: PolicySchedule
    J: float
    raw_schedule: PolicySchedule
    raw_J: float
    snapped: bool
    switch_times: np.ndarray
    costate: CostateTrajectory
    sweeps: int
    baselines: dict
    heuristic: bool = False
    note: str = ""


# ---------------------------------------------------------------------------
# SIR patching
# ---------------------------------------------------------------------------


def _sir_costate(problem: SIRPatchingProblem):
    n, B, pi = problem.n, problem.B, problem.pi
    ell, c, h1, h2 = problem.ell, problem.c, problem.h1, problem.h2

    def rhs(x, lam, u):
        s, i, r = x[:n], x[n:2 * n], x[2 * n:]
        ls, li, lr = lam[:n], lam[n:2 * n], lam[2 * n:]
        force = B @ i
        dH_ds = h2 * r * u + ls * (-force - r * u) + li * force + lr * r * u
        dH_di = (c + h2 * r * u + B.T @ (s * (li - ls)) + pi * r * u * (lr - li))
        dH_dr = (-ell + h1 * u + h2 * (s + i) * u + u * s * (lr - ls) + pi * i * u * (lr - li))
        return -np.concatenate([dH_ds, dH_di, dH_dr])

    return rhs


def _sir_switching(problem: SIRPatchingProblem):
    n, pi, h1, h2 = problem.n, problem.pi, problem.h1, problem.h2

    def sw(X, Lam):
        s, i, r = X[:, :n], X[:, n:2 * n], X[:, 2 * n:]
        ls, li, lr = Lam[:, :n], Lam[:, n:2 * n], Lam[:, 2 * n:]
        return r * (h1 + h2 * (s + i) + s * (lr - ls) + pi * i * (lr - li))

    return sw


def _network_cost(problem, rhs, x0, schedule: PolicySchedule, dt: float) -> tuple[float, Trajectory]:
    grid = time_grid(problem.T, dt, schedule.breakpoints)
    u = schedule.on_grid(grid)
    X = _rk4_forward(lambda x, uk: rhs(0.0, x, uk), x0, grid, u)
    traj = Trajectory(grid, X, tuple(f"x{k}" for k in range(X.shape[1])))
    return evaluate_objective(problem, schedule, traj), traj


def fbs_sir_network(problem: SIRPatchingProblem, x0, *, dt: float = 2e-2, omega: float = OMEGA,
                    tol: float = CONTROL_TOL, max_sweeps: int = MAX_SWEEPS,
                    snap_rtol: float = SNAP_RTOL) -> NetworkSolution:
    """Sweep with three costates per node, then snap to one switch per node.

    ``x0`` stacks ``[S, I, R]`` blocks.  Node ``i``'s switch time is where its
    raw control last drops below ``u_max_i / 2``.  The snapped schedule is
    kept only if its re-integrated cost is within ``snap_rtol`` (relative)
    of the raw schedule's; otherwise the raw schedule is returned and
    ``snapped`` is false.
    """
    n = problem.n
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (3 * n,):
        raise ValueError(f"x0 must have length {3 * n}")
    T = problem.T
    times = time_grid(T, dt)
    rhs = _sir_rhs(problem)
    state = lambda x, u: rhs(0.0, x, u)  # noqa: E731
    signals = tuple(f"u_{i}" for i in range(n))
    res = _sweep(state, _sir_costate(problem), _sir_switching(problem), x0, times,
                 np.zeros(n), problem.u_max, np.zeros((times.size - 1, n)), omega, tol, max_sweeps)
    u, Lam, sw, sweeps = res.u, res.Lam, res.switching, res.sweeps
    raw = PolicySchedule.from_grid(times, u, 0.0, problem.u_max, signals)
    raw_J, _ = _network_cost(problem, rhs, x0, raw, dt)

    tau = np.zeros(n)
    for i in range(n):
        on = np.flatnonzero(u[:, i] > 0.5 * problem.u_max[i])
        tau[i] = times[on[-1] + 1] if on.size else 0.0
    snapped = PolicySchedule.single_switch(T, tau, problem.u_max, 0.0, 0.0, problem.u_max, signals)
    snap_J, _ = _network_cost(problem, rhs, x0, snapped, dt)
    ok = abs(snap_J - raw_J) <= snap_rtol * max(abs(raw_J), 1e-300)
    chosen, J = (snapped, snap_J) if ok else (raw, raw_J)

    baselines = {}
    for label, val in (("u=0", 0.0), ("u=u_max", problem.u_max)):
        sched = PolicySchedule.constant(T, val, 0.0, problem.u_max, signals)
        baselines[label] = _network_cost(problem, rhs, x0, sched, dt)[0]
    costate = CostateTrajectory(times, Lam, sw)
    return NetworkSolution(chosen, J, raw, raw_J, ok, tau, costate, sweeps, baselines,
                           note="" if ok else "snap to one-switch form failed validation")


# ---------------------------------------------------------------------------
# SIS network (heuristic)
# ---------------------------------------------------------------------------


def _sis_costate(problem: SISNetworkControlProblem):
    B, c = problem.B, problem.c

    def rhs(p, lam, delta):
        dH_dp = c - lam * (B @ p) - lam * delta + B.T @ (lam * (1 - p))
        return -dH_dp

    return rhs


def _sis_switching(problem: SISNetworkControlProblem):
    d = problem.d
    return lambda P, Lam: d - Lam * P


def fbs_sis_network(problem: SISNetworkControlProblem, p0, *, dt: float = 5e-2, omega: float = OMEGA,
                    tol: float = CONTROL_TOL, max_sweeps: int = MAX_SWEEPS) -> NetworkSolution:
    """Heuristic sweep for time-varying curing rates on networked SIS.

    No optimality is claimed.  The relaxation weight adapts (see
    :func:`_sweep`) because this problem can chatter where the switching
    coefficient hovers near zero.  The sweep is started from both constant
    extremes; the cheaper fixed point is kept, and if a constant extreme is
    cheaper still, that constant is returned instead (noted in ``note``).
    """
    n = problem.n
    p0 = np.asarray(p0, dtype=float)
    if p0.shape != (n,):
        raise ValueError(f"p0 must have length {n}")
    T = problem.T
    times = time_grid(T, dt)
    rhs = _sis_rhs(problem)
    state = lambda x, u: rhs(0.0, x, u)  # noqa: E731
    cost = _grid_cost(problem, times)
    signals = tuple(f"delta_{i}" for i in range(n))
    lo, hi = problem.delta_lo, problem.delta_hi
    lo_v, hi_v = np.full(n, lo), np.full(n, hi)

    baselines = {}
    for label, val in (("delta=delta_lo", lo), ("delta=delta_hi", hi)):
        sched = PolicySchedule.constant(T, val, lo, hi, signals)
        baselines[label] = _network_cost(problem, rhs, p0, sched, dt)[0]

    best = None
    total_sweeps = 0
    for start in (lo, hi):
        res = _sweep(state, _sis_costate(problem), _sis_switching(problem), p0, times, lo_v, hi_v,
                     np.full((times.size - 1, n), start), omega, tol, max_sweeps,
                     cost=cost, adaptive=True)
        total_sweeps += res.sweeps
        sched = PolicySchedule.from_grid(times, res.u, lo, hi, signals)
        J, _ = _network_cost(problem, rhs, p0, sched, dt)
        if best is None or J < best[1]:
            best = (sched, J, CostateTrajectory(times, res.Lam, res.switching), res.converged)
    sched, J, costate, converged = best
    note = "heuristic: no optimality claim"
    if not converged:
        note += "; sweep budget exhausted, cheapest iterate kept"
    label, base_J = min(baselines.items(), key=lambda kv: kv[1])
    if base_J < J:
        sched = PolicySchedule.constant(T, lo if label == "delta=delta_lo" else hi, lo, hi, signals)
        J = base_J
        note += f"; sweep fixed point beaten by constant policy {label}"
    tau = np.array([sched.switch_times(i)[0] if sched.switch_counts()[i] else math.nan for i in range(n)])
    return NetworkSolution(sched, J, sched, J, False, tau, costate, total_sweeps, baselines,
                           heuristic=True, note=note)
