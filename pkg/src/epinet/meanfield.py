"""Deterministic epidemic models and a fixed-step RK4 integrator.

State conventions
-----------------
Population models work on flat vectors: SIS uses ``[p_I]``, SIR uses
``[p_S, p_I]`` (``p_R`` implied) and SPIS uses ``[p_S, p_I, p_P]``.
Network models use compartment-major flat vectors of length ``k * n``:
``[p_S(0..n-1), p_I(0..n-1), ...]``.  The single-compartment network SIS
state is just ``p``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .graph import Graph, lambda_max

CLAMP_TOL = 1e-12
SUM_TOL = 1e-9


class InvariantError(RuntimeError):
    """Integration left the probability simplex by more than the clamp tolerance."""


# ---------------------------------------------------------------------------
# Rate model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RateModel:
    """Per-node recovery rates ``delta`` and infection matrix ``B``.

    ``B[i, j]`` is the rate at which infected node ``j`` infects node ``i``.
    Optional fields carry the extras of the SPIS, bi-virus and patching
    models.
    """

    delta: np.ndarray
    B: np.ndarray
    beta0: float | None = None
    delta2: np.ndarray | None = None
    B2: np.ndarray | None = None
    pi: np.ndarray | None = None

    def __post_init__(self):
        delta = np.atleast_1d(np.asarray(self.delta, dtype=float))
        B = np.asarray(self.B, dtype=float)
        n = delta.shape[0]
        if B.shape != (n, n):
            raise ValueError(f"B has shape {B.shape}, expected ({n}, {n})")
        if (delta <= 0).any():
            raise ValueError("delta must be strictly positive")
        if (B < 0).any():
            raise ValueError("B must be nonnegative")
        if np.any(np.diag(B) != 0):
            raise ValueError("B must have a zero diagonal")
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "B", B)
        if self.delta2 is not None or self.B2 is not None:
            if self.delta2 is None or self.B2 is None:
                raise ValueError("second-virus model needs both delta2 and B2")
            d2 = np.atleast_1d(np.asarray(self.delta2, dtype=float))
            B2 = np.asarray(self.B2, dtype=float)
            if d2.shape != (n,) or B2.shape != (n, n):
                raise ValueError("second-virus rates have the wrong shape")
            if (d2 <= 0).any() or (B2 < 0).any():
                raise ValueError("second-virus rates must be positive / nonnegative")
            object.__setattr__(self, "delta2", d2)
            object.__setattr__(self, "B2", B2)
        if self.pi is not None:
            pi = np.broadcast_to(np.asarray(self.pi, dtype=float), (n,)).copy()
            if (pi < 0).any() or (pi > 1).any():
                raise ValueError("patching efficiency pi must lie in [0, 1]")
            object.__setattr__(self, "pi", pi)
        if self.beta0 is not None and self.beta0 < 0:
            raise ValueError("beta0 must be nonnegative")

    @property
    def n(self) -> int:
        return self.delta.shape[0]

    @classmethod
    def homogeneous(cls, g: Graph, beta: float, delta: float, **extra) -> "RateModel":
        return cls(np.full(g.n, float(delta)), beta * g.adjacency, **extra)

    @classmethod
    def node_rates(cls, g: Graph, beta: Sequence[float], delta: Sequence[float], **extra) -> "RateModel":
        """``B[i, j] = beta[i] * A[i, j]``: node-dependent susceptibility."""
        beta = np.asarray(beta, dtype=float)
        return cls(np.asarray(delta, dtype=float), beta[:, None] * g.adjacency, **extra)

    def growth_matrix(self) -> np.ndarray:
        """``B - D``, the linearisation of network SIS at the origin."""
        return self.B - np.diag(self.delta)

    def threshold_margin(self) -> float:
        """``lambda_max(B - D)``; the disease dies out iff this is <= 0."""
        return lambda_max(self.growth_matrix(), name="B - D").lambda_max


# ---------------------------------------------------------------------------
# Trajectories and integration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    columns: tuple[str, ...]
    model: str = ""

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2 or states.shape[0] != times.shape[0]:
            raise ValueError("states must be (len(times), dim)")
        if len(self.columns) != states.shape[1]:
            raise ValueError("one column label per state component required")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        times.setflags(write=False)
        states.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def column(self, name: str) -> np.ndarray:
        return self.states[:, self.columns.index(name)]

    def at(self, t: float) -> np.ndarray:
        """Linear interpolation of the state at time ``t``."""
        return np.array([np.interp(t, self.times, self.states[:, k]) for k in range(self.states.shape[1])])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t," + ",".join(self.columns) + "\n")
        for t, row in zip(self.times, self.states):
            buf.write(f"{t:.12g}," + ",".join(f"{x:.12g}" for x in row) + "\n")
        return buf.getvalue()


def time_grid(T: float, dt: float, breakpoints: Sequence[float] = ()) -> np.ndarray:
    """Uniform-ish grid on ``[0, T]`` with every breakpoint as a node.

    Each segment between consecutive breakpoints is split into
    ``ceil(length / dt)`` equal steps, so no step exceeds ``dt``.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if T <= 0:
        raise ValueError(f"horizon must be positive, got {T}")
    for b in breakpoints:
        if not 0.0 <= b <= T:
            raise ValueError(f"breakpoint {b} outside [0, {T}]")
    knots = sorted({0.0, float(T), *map(float, breakpoints)})
    pieces = []
    for a, b in zip(knots[:-1], knots[1:]):
        m = max(1, math.ceil((b - a) / dt - 1e-9))
        pieces.append(np.linspace(a, b, m + 1)[:-1])
    pieces.append(np.array([float(T)]))
    return np.concatenate(pieces)


def _check_state(x: np.ndarray, t: float, box: bool, groups, totals) -> np.ndarray:
    if box:
        lo, hi = x.min(), x.max()
        if lo < 0.0 or hi > 1.0:
            if lo < -CLAMP_TOL or hi > 1 + CLAMP_TOL:
                raise InvariantError(f"state left [0, 1] at t={t:.6g} (min {lo:.3e}, max {hi:.3e})")
            x = np.clip(x, 0.0, 1.0)
    if groups is not None:
        sums = x.reshape(groups, -1).sum(axis=0)
        if np.abs(sums - totals).max() > SUM_TOL:
            raise InvariantError(f"compartment sums drifted at t={t:.6g}")
    return x


def integrate(rhs: Callable, x0, T: float, dt: float = 1e-3, *,
              breakpoints: Sequence[float] = (), control: Callable | None = None,
              box: bool = True, groups: int | None = None,
              columns: Sequence[str] | None = None, model: str = "") -> Trajectory:
    """Classical RK4 on ``[0, T]``.

    ``rhs(t, x)`` returns the derivative; with ``control`` given it is called as
    ``rhs(t, x, u)`` where ``u = control(step_midpoint)`` is held fixed over
    each step.  ``breakpoints`` become grid nodes so piecewise-constant
    controls never switch inside a step.

    With ``box`` set, samples must stay in ``[0, 1]``: overshoot up to
    ``1e-12`` is clamped, anything larger raises :class:`InvariantError`.
    With ``groups = k`` the state is read as ``k`` compartments and each
    node's compartment sum must stay at its initial value within ``1e-9``.
    """
    x = np.array(x0, dtype=float, ndmin=1)
    grid = time_grid(T, dt, breakpoints)
    totals = x.reshape(groups, -1).sum(axis=0) if groups is not None else None
    x = _check_state(x, 0.0, box, groups, totals)
    out = np.empty((grid.size, x.size))
    out[0] = x
    for k in range(grid.size - 1):
        t, h = grid[k], grid[k + 1] - grid[k]
        if control is None:
            f = rhs
        else:
            u = control(t + 0.5 * h)
            f = lambda tt, xx, u=u: rhs(tt, xx, u)  # noqa: E731
        k1 = f(t, x)
        k2 = f(t + 0.5 * h, x + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, x + 0.5 * h * k2)
        k4 = f(t + h, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        x = _check_state(x, grid[k + 1], box, groups, totals)
        out[k + 1] = x
    if columns is None:
        columns = tuple(f"x{k}" for k in range(x.size))
    return Trajectory(grid, out, tuple(columns), model)


def node_columns(prefixes: Sequence[str], n: int) -> tuple[str, ...]:
    return tuple(f"{c}_{i}" for c in prefixes for i in range(n))


# ---------------------------------------------------------------------------
# Population models
# ---------------------------------------------------------------------------


def closed_form_population_sis(beta: float, delta: float, p0: float, t):
    """Exact solution of ``p' = beta p (1 - p) - delta p``."""
    t = np.asarray(t, dtype=float)
    if p0 == 0:
        return np.zeros_like(t) if t.ndim else 0.0
    if not 0 < p0 <= 1:
        raise ValueError(f"p0 must lie in [0, 1], got {p0}")
    r = beta - delta
    if abs(r) <= 1e-12:
        out = 1.0 / (beta * t + 1.0 / p0)
    else:
        # divide through by e^{rt} so large |r t| neither overflows nor cancels
        e = np.exp(-r * t)
        out = 1.0 / (beta * (1.0 - e) / r + e / p0)
    return out if t.ndim else float(out)


def rhs_population_sis(state, beta: float, delta: float) -> np.ndarray:
    """Reduced SIS: ``[p_I] -> [p_I']``."""
    p = np.asarray(state, dtype=float)
    return beta * p * (1.0 - p) - delta * p


def rhs_population_sis_full(state, beta: float, delta: float) -> np.ndarray:
    """Two-compartment SIS: ``[p_S, p_I] -> [p_S', p_I']``."""
    s, i = state
    flow = beta * i * s
    return np.array([-flow + delta * i, flow - delta * i])


def rhs_population_sir(state, beta: float, delta: float) -> np.ndarray:
    """``[p_S, p_I] -> [p_S', p_I']``; ``p_R' = delta p_I`` is implied."""
    s, i = state
    flow = beta * i * s
    return np.array([-flow, flow - delta * i])


# Feedback functions for SPIS are named built-ins so scenarios stay declarative.


@dataclass(frozen=True)
class Feedback:
    """``kind`` in ``constant`` (``a``), ``linear`` (``a * p_I``) or
    ``saturating`` (``a * p_I / (b + p_I)``)."""

    kind: str = "constant"
    a: float = 0.0
    b: float = 1.0
    name: str = "f"

    def __post_init__(self):
        if self.kind not in ("constant", "linear", "saturating"):
            raise ValueError(f"unknown feedback kind {self.kind!r}")
        if self.kind == "saturating" and self.b <= 0:
            raise ValueError("saturating feedback needs b > 0")

    def __call__(self, s, i, p):
        if self.kind == "constant":
            val = self.a * np.ones_like(np.asarray(i, dtype=float))
        elif self.kind == "linear":
            val = self.a * np.asarray(i, dtype=float)
        else:
            i = np.asarray(i, dtype=float)
            val = self.a * i / (self.b + i)
        if np.any(val < 0):
            raise ValueError(f"feedback function {self.name!r} returned a negative value")
        return val


def _eval_feedback(fn, name, s, i, p):
    val = np.asarray(fn(s, i, p), dtype=float)
    if np.any(val < 0):
        raise ValueError(f"feedback function {name!r} returned a negative value")
    return val


def rhs_spis_population(state, beta: float, delta: float, f, g) -> np.ndarray:
    """``[p_S, p_I, p_P]`` with protection rate ``f`` and back-flow rate ``g``."""
    s, i, p = state
    fv = float(_eval_feedback(f, "f", s, i, p))
    gv = float(_eval_feedback(g, "g", s, i, p))
    flow = beta * i * s
    protect = s * fv - p * gv
    return np.array([-flow + delta * i - protect, flow - delta * i, protect])


# ---------------------------------------------------------------------------
# Network models
# ---------------------------------------------------------------------------


def _rates(g: Graph | None, rates: RateModel, n: int) -> RateModel:
    if rates.n != n or (g is not None and g.n != n):
        raise ValueError(f"dimension mismatch: state has {n} nodes, rates {rates.n}"
                         + (f", graph {g.n}" if g is not None else ""))
    return rates


def rhs_network_sis(state, g: Graph | None, rates: RateModel) -> np.ndarray:
    """``p_i' = -delta_i p_i + sum_j B_ij p_j (1 - p_i)``.

    ``g`` is only used for a dimension check; the infection structure lives
    in ``rates.B``.
    """
    p = np.asarray(state, dtype=float)
    _rates(g, rates, p.size)
    return -rates.delta * p + (rates.B @ p) * (1.0 - p)


def rhs_network_sis_matrix_form(state, rates: RateModel) -> np.ndarray:
    """Same vector field written as ``(B - D) p + h`` with ``h_i = -p_i (B p)_i``."""
    p = np.asarray(state, dtype=float)
    h = -p * (rates.B @ p)
    return rates.growth_matrix() @ p + h


def rhs_network_spis(state, g: Graph, rates: RateModel, feedback) -> np.ndarray:
    """Network SPIS/SAIS on ``[p_S, p_I, p_P]`` blocks.

    Susceptible nodes are infected at ``(B @ p_I)_i`` and protected nodes at
    ``beta0 * (A @ p_I)_i``.  ``feedback(p_S, p_I, p_P)`` returns per-node
    protection rates.  There is no protected-to-susceptible back-flow.
    """
    x = np.asarray(state, dtype=float)
    n = x.size // 3
    _rates(g, rates, n)
    s, i, p = x[:n], x[n:2 * n], x[2 * n:]
    A = g.adjacency
    beta0 = rates.beta0 or 0.0
    if beta0 > 0:
        edge_beta = rates.B[A > 0] / A[A > 0]
        if edge_beta.size and beta0 >= edge_beta.min():
            raise ValueError(f"protected infection rate beta0={beta0} must be below beta={edge_beta.min()}")
    pressure = rates.B @ i
    protected_pressure = beta0 * (A @ i)
    f = np.broadcast_to(_eval_feedback(feedback, "f", s, i, p), (n,))
    ds = -s * pressure + rates.delta * i - s * f
    di = s * pressure + p * protected_pressure - rates.delta * i
    dp = s * f - p * protected_pressure
    return np.concatenate([ds, di, dp])


def rhs_bivirus(state, g1: Graph, g2: Graph, beta1, delta1, beta2, delta2) -> np.ndarray:
    """Competing SI1SI2S on two layers; state ``[p_S, p_I1, p_I2]`` blocks.

    ``beta1``/``beta2`` are per-node susceptibilities (scalars broadcast) and
    layer ``k`` infects through ``diag(beta_k) A_k``.
    """
    x = np.asarray(state, dtype=float)
    n = x.size // 3
    if g1.n != n or g2.n != n:
        raise ValueError(f"dimension mismatch: state has {n} nodes, layers {g1.n} and {g2.n}")
    beta1, beta2, delta1, delta2 = (np.broadcast_to(np.asarray(v, dtype=float), (n,))
                                    for v in (beta1, beta2, delta1, delta2))
    s, i1, i2 = x[:n], x[n:2 * n], x[2 * n:]
    inf1 = s * beta1 * (g1.adjacency @ i1)
    inf2 = s * beta2 * (g2.adjacency @ i2)
    rec1 = delta1 * i1
    rec2 = delta2 * i2
    return np.concatenate([-inf1 - inf2 + rec1 + rec2, inf1 - rec1, inf2 - rec2])


def rhs_bivirus_rates(state, rates: RateModel) -> np.ndarray:
    """Bi-virus with general infection matrices ``rates.B`` and ``rates.B2``."""
    x = np.asarray(state, dtype=float)
    n = x.size // 3
    _rates(None, rates, n)
    if rates.B2 is None:
        raise ValueError("bi-virus model needs B2/delta2 in the rate model")
    s, i1, i2 = x[:n], x[n:2 * n], x[2 * n:]
    inf1 = s * (rates.B @ i1)
    inf2 = s * (rates.B2 @ i2)
    rec1 = rates.delta * i1
    rec2 = rates.delta2 * i2
    return np.concatenate([-inf1 - inf2 + rec1 + rec2, inf1 - rec1, inf2 - rec2])


def rhs_sir_patching(state, g: Graph | None, rates: RateModel, u, u_max=None) -> np.ndarray:
    """Networked SIR with patch propagation on ``[p_S, p_I, p_R]`` blocks.

    Patched (removed) nodes pass the patch on at rate ``u_i``: susceptibles
    at ``p_S p_R u`` and infected at ``pi p_I p_R u``.
    """
    x = np.asarray(state, dtype=float)
    n = x.size // 3
    _rates(g, rates, n)
    u = np.broadcast_to(np.asarray(u, dtype=float), (n,))
    if np.any(u < 0) or (u_max is not None and np.any(u > np.asarray(u_max) + 1e-15)):
        raise ValueError("control out of bounds")
    pi = rates.pi if rates.pi is not None else np.ones(n)
    s, i, r = x[:n], x[n:2 * n], x[2 * n:]
    inf = s * (rates.B @ i)
    patch_s = s * r * u
    patch_i = i * pi * r * u
    return np.concatenate([-inf - patch_s, inf - patch_i, patch_s + patch_i])


def rhs_network_sir(state, g: Graph | None, rates: RateModel) -> np.ndarray:
    """Networked SIR with natural removal at ``delta_i``; ``[p_S, p_I, p_R]`` blocks."""
    x = np.asarray(state, dtype=float)
    n = x.size // 3
    _rates(g, rates, n)
    s, i = x[:n], x[n:2 * n]
    inf = s * (rates.B @ i)
    rec = rates.delta * i
    return np.concatenate([-inf, inf - rec, rec])


@dataclass(frozen=True)
class MetaPopulation:
    """Heterogeneous SIS read as coupled well-mixed subpopulations.

    ``sizes`` is bookkeeping only; it does not enter the dynamics.
    """

    rates: RateModel
    sizes: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def rhs(self, t, x):
        return rhs_network_sis(x, None, self.rates)

    def infected_counts(self, x) -> np.ndarray:
        return np.asarray(x) * self.sizes


# ---------------------------------------------------------------------------
# Endemic equilibrium
# ---------------------------------------------------------------------------


class EquilibriumError(RuntimeError):
    pass


DISEASE_FREE = "disease-free"


def endemic_equilibrium(g: Graph | None, rates: RateModel, *, damping: float = 0.5,
                        tol: float = 1e-12, max_iter: int = 100_000):
    """Positive fixed point of network SIS, or ``DISEASE_FREE``.

    Iterates ``p <- (1 - damping) p + damping * F(p)`` with
    ``F_i(p) = (B p)_i / (delta_i + (B p)_i)`` starting from ``p = 0.5``.
    """
    if g is not None and not g.is_strongly_connected():
        raise ValueError("endemic equilibrium requires a strongly connected graph")
    if rates.threshold_margin() <= 0:
        return DISEASE_FREE
    p = np.full(rates.n, 0.5)
    for _ in range(max_iter):
        bp = rates.B @ p
        new = (1 - damping) * p + damping * bp / (rates.delta + bp)
        change = np.abs(new - p).max()
        p = new
        if change <= tol:
            res = np.abs(rhs_network_sis(p, None, rates)).max()
            if res <= 1e-10:
                return p
    raise EquilibriumError(f"fixed-point iteration did not converge in {max_iter} iterations")
