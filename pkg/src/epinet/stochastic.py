"""Exact continuous-time Markov chain simulation of SIS/SIR spreading.

Simulation uses the direct method: from state ``X`` with total event rate
``R`` the waiting time is ``Exp(R)`` and an event is chosen with
probability ``rate / R``.  Every run owns a ``numpy.random.Generator`` on a
``PCG64`` bit generator seeded with its own integer seed, so a run is fully
determined by ``(inputs, seed)``.  Monte Carlo drivers use seed
``master_seed + k`` for run ``k``.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .graph import Graph, lambda_max
from .meanfield import RateModel

S, I, R = "S", "I", "R"
_TWO53 = float(2 ** 53)
MAX_EXACT_NODES = 12


@dataclass(frozen=True)
class Event:
    time: float
    node: int
    source: str
    target: str


@dataclass
class SimOutcome:
    """Result of one stochastic run.

    ``absorbed_at`` is the extinction time, or ``None`` when the run hit
    ``t_cap`` first (``censored``).  Population runs use ``node = -1`` in the
    event log and additionally keep ``history`` rows ``(t, N_S, N_I, N_R)``.
    """

    events: list[Event]
    absorbed_at: float | None
    censored: bool
    final_state: list[str]
    seed: int
    history: np.ndarray | None = None

    def events_csv(self) -> str:
        buf = io.StringIO()
        buf.write("time,node,from,to\n")
        for e in self.events:
            buf.write(f"{e.time:.12g},{e.node},{e.source},{e.target}\n")
        return buf.getvalue()


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def _open_uniform(rng: np.random.Generator) -> float:
    """Uniform on the open interval (0, 1)."""
    return (float(rng.integers(0, 2 ** 53)) + 0.5) / _TWO53


def _exponential(rng: np.random.Generator, rate: float) -> float:
    return -math.log(_open_uniform(rng)) / rate


def _parse_state(x0, n: int) -> list[str]:
    if len(x0) != n:
        raise ValueError(f"initial state has {len(x0)} entries, graph has {n} nodes")
    out = []
    for v in x0:
        if v in (S, I, R):
            out.append(v)
        elif v in (0, 1, False, True):
            out.append(I if v else S)
        else:
            raise ValueError(f"unknown node state {v!r}")
    return out


def default_t_cap(n: int, delta) -> float:
    """``10 (ln N + 1) / mean(delta)``."""
    return 10.0 * (math.log(max(n, 1)) + 1.0) / float(np.mean(delta))


# ---------------------------------------------------------------------------
# Network simulation
# ---------------------------------------------------------------------------


def ssa_network(g: Graph | None, rates: RateModel, x0, seed: int, t_cap: float,
                model: str = "SIS") -> SimOutcome:
    """Simulate network SIS (``I -> S``) or SIR (``I -> R``) until extinction or ``t_cap``.

    A susceptible node ``i`` is infected at rate ``sum_j B_ij [X_j = I]``;
    an infected node recovers at ``delta_i``.
    """
    if t_cap <= 0:
        raise ValueError("t_cap must be positive")
    if model not in ("SIS", "SIR"):
        raise ValueError(f"model must be SIS or SIR, got {model!r}")
    n = rates.n
    if g is not None and g.n != n:
        raise ValueError("graph and rate model disagree on node count")
    state = _parse_state(x0, n)
    recovered_to = S if model == "SIS" else R
    rng = make_rng(seed)

    # out-lists of (target, rate) per source node
    B = rates.B
    spread = [[(int(i), float(B[i, j])) for i in np.nonzero(B[:, j])[0]] for j in range(n)]
    delta = [float(d) for d in rates.delta]
    pressure = [0.0] * n
    n_inf = 0
    for j, st in enumerate(state):
        if st == I:
            n_inf += 1
            for i, w in spread[j]:
                pressure[i] += w

    events: list[Event] = []
    t = 0.0
    while n_inf > 0:
        node_rates = [
            delta[k] if st == I else (pressure[k] if st == S else 0.0)
            for k, st in enumerate(state)
        ]
        total = math.fsum(node_rates)
        assert total > 0, "non-absorbing state with zero total rate"
        t_next = t + _exponential(rng, total)
        if t_next > t_cap:
            return SimOutcome(events, None, True, state, seed)
        t = t_next
        target = _open_uniform(rng) * total
        acc = 0.0
        k = n - 1
        for idx, r in enumerate(node_rates):
            acc += r
            if target < acc and r > 0:
                k = idx
                break
        else:
            while node_rates[k] <= 0:
                k -= 1
        if state[k] == I:
            state[k] = recovered_to
            n_inf -= 1
            for i, w in spread[k]:
                pressure[i] -= w
                if pressure[i] < 1e-12:
                    pressure[i] = 0.0
            events.append(Event(t, k, I, recovered_to))
        else:
            state[k] = I
            n_inf += 1
            for i, w in spread[k]:
                pressure[i] += w
            events.append(Event(t, k, S, I))
    return SimOutcome(events, t, False, state, seed)


def ssa_network_sis(g: Graph | None, rates: RateModel, x0, seed: int, t_cap: float) -> SimOutcome:
    return ssa_network(g, rates, x0, seed, t_cap, model="SIS")


# ---------------------------------------------------------------------------
# Population simulation
# ---------------------------------------------------------------------------


def ssa_population(model: str, N: int, beta: float, delta: float, counts0, seed: int,
                   t_cap: float) -> SimOutcome:
    """Well-mixed count chain: infection at ``beta N_I N_S``, recovery at ``delta N_I``.

    ``counts0`` is ``N_I`` for SIS or ``(N_I, N_R)`` for SIR.
    """
    if model not in ("SIS", "SIR"):
        raise ValueError(f"model must be SIS or SIR, got {model!r}")
    if t_cap <= 0:
        raise ValueError("t_cap must be positive")
    if model == "SIS":
        n_i, n_r = int(np.atleast_1d(counts0)[0]), 0
    else:
        n_i, n_r = (int(c) for c in counts0)
    if n_i < 0 or n_r < 0 or n_i + n_r > N:
        raise ValueError(f"counts {counts0} inconsistent with N={N}")
    recovered_to = S if model == "SIS" else R
    rng = make_rng(seed)
    t = 0.0
    events: list[Event] = []
    history = [(0.0, N - n_i - n_r, n_i, n_r)]
    censored = False
    while n_i > 0:
        n_s = N - n_i - n_r
        up = beta * n_i * n_s
        down = delta * n_i
        total = up + down
        t_next = t + _exponential(rng, total)
        if t_next > t_cap:
            censored = True
            break
        t = t_next
        if _open_uniform(rng) * total < up:
            n_i += 1
            events.append(Event(t, -1, S, I))
        else:
            n_i -= 1
            if model == "SIR":
                n_r += 1
            events.append(Event(t, -1, I, recovered_to))
        history.append((t, N - n_i - n_r, n_i, n_r))
    final = [R] * n_r + [I] * n_i + [S] * (N - n_i - n_r)
    return SimOutcome(events, None if censored else t, censored, final, seed, np.array(history))


def jump_up_probability(N: int, n_infected: int, beta: float, delta: float) -> float:
    """Embedded-chain probability that the next SIS event is an infection.

    The count rates ``beta N_I N_S`` and ``delta N_I`` share the factor
    ``N_I``, which cancels.
    """
    return beta * (N - n_infected) / (beta * (N - n_infected) + delta)


# ---------------------------------------------------------------------------
# Monte Carlo drivers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExtinctionEstimate:
    mean: float | None
    std_error: float | None
    censored: int
    runs: int
    master_seed: int
    times: tuple[float, ...] = field(repr=False, default=())

    def to_json(self) -> str:
        return json.dumps({
            "mean": self.mean, "std_error": self.std_error, "censored": self.censored,
            "runs": self.runs, "master_seed": self.master_seed,
        }, indent=2, sort_keys=True)


def estimate_extinction_time(g: Graph | None, rates: RateModel, x0, runs: int, master_seed: int,
                             t_cap: float | None = None, model: str = "SIS") -> ExtinctionEstimate:
    """Mean extinction time over uncensored runs.

    ``mean`` is ``None`` when every run was censored; ``std_error`` is
    ``None`` with fewer than two uncensored runs.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if t_cap is None:
        t_cap = default_t_cap(rates.n, rates.delta)
    times = []
    censored = 0
    for k in range(runs):
        out = ssa_network(g, rates, x0, master_seed + k, t_cap, model)
        if out.censored:
            censored += 1
        else:
            times.append(out.absorbed_at)
    if not times:
        return ExtinctionEstimate(None, None, censored, runs, master_seed)
    arr = np.array(times)
    se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else None
    return ExtinctionEstimate(float(arr.mean()), se, censored, runs, master_seed, tuple(times))


INAPPLICABLE = "inapplicable"


def extinction_time_bound(g: Graph, beta: float, delta: float):
    """``(ln N + 1) / (delta - beta lambda_max(A))`` when ``beta/delta < 1/lambda_max``.

    Returns ``INAPPLICABLE`` at or above the threshold.
    """
    lam = lambda_max(g.adjacency).lambda_max
    # lambda_max carries roundoff, so tau = 1/lambda_max must not slip below
    if beta * lam >= delta * (1.0 - 1e-12):
        return INAPPLICABLE
    return (math.log(g.n) + 1.0) / (delta - beta * lam)


@dataclass(frozen=True)
class MarginalEstimate:
    times: np.ndarray
    mean: np.ndarray        # (len(times), n) empirical P(X_i = I)
    std_error: np.ndarray
    runs: int
    master_seed: int


def infected_at(out: SimOutcome, x0: Sequence[str], times: Sequence[float]) -> np.ndarray:
    """Indicator matrix ``(len(times), n)`` of infection, read off the event log."""
    state = [1.0 if v == I else 0.0 for v in x0]
    rows = np.empty((len(times), len(state)))
    order = np.argsort(times)
    ev = iter(out.events)
    nxt = next(ev, None)
    for idx in order:
        t = times[idx]
        while nxt is not None and nxt.time <= t:
            state[nxt.node] = 1.0 if nxt.target == I else 0.0
            nxt = next(ev, None)
        rows[idx] = state
    return rows


def estimate_marginals(g: Graph | None, rates: RateModel, x0, sample_times, runs: int,
                       master_seed: int, model: str = "SIS") -> MarginalEstimate:
    sample_times = np.asarray(sample_times, dtype=float)
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if np.any(sample_times < 0):
        raise ValueError("sample times must be nonnegative")
    state0 = _parse_state(x0, rates.n)
    t_cap = float(sample_times.max()) if sample_times.size else 0.0
    total = np.zeros((sample_times.size, rates.n))
    total_sq = np.zeros_like(total)
    for k in range(runs):
        if t_cap > 0:
            out = ssa_network(g, rates, state0, master_seed + k, t_cap, model)
        else:
            out = SimOutcome([], None, True, list(state0), master_seed + k)
        ind = infected_at(out, state0, sample_times)
        total += ind
        total_sq += ind * ind
    mean = total / runs
    if runs > 1:
        var = (total_sq - runs * mean ** 2) / (runs - 1)
        se = np.sqrt(np.maximum(var, 0.0) / runs)
    else:
        se = np.full_like(mean, np.nan)
    return MarginalEstimate(sample_times, mean, se, runs, master_seed)


# ---------------------------------------------------------------------------
# Exact master equation
# ---------------------------------------------------------------------------


def sis_generator(rates: RateModel) -> scipy.sparse.csr_matrix:
    """Generator ``Q`` of network SIS on the ``2^N`` configurations.

    Configuration ``x`` is an integer whose bit ``i`` is node ``i``'s
    infection.  ``Q[x, y]`` is the rate ``x -> y``; rows sum to zero.
    """
    n = rates.n
    if n > MAX_EXACT_NODES:
        raise ValueError(f"master equation has 2^{n} states; refusing N > {MAX_EXACT_NODES}")
    size = 1 << n
    configs = np.arange(size)
    bits = (configs[:, None] >> np.arange(n)) & 1           # (size, n)
    pressure = bits @ rates.B.T                              # (size, n): sum_j B_ij x_j
    rows, cols, vals = [], [], []
    for i in range(n):
        flip = configs ^ (1 << i)
        rate = np.where(bits[:, i] == 1, rates.delta[i], pressure[:, i])
        mask = rate > 0
        rows.append(configs[mask])
        cols.append(flip[mask])
        vals.append(rate[mask])
    rows, cols, vals = map(np.concatenate, (rows, cols, vals))
    Q = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(size, size)).tocsr()
    Q = Q - scipy.sparse.diags(np.asarray(Q.sum(axis=1)).ravel())
    return Q.tocsr()


@dataclass(frozen=True)
class MasterSolution:
    times: np.ndarray
    distributions: np.ndarray   # (len(times), 2^N)
    marginals: np.ndarray       # (len(times), N): P(X_i = 1)


def _distribution_from(x0_distribution, n: int) -> np.ndarray:
    size = 1 << n
    if len(x0_distribution) == size:
        dist = np.asarray(x0_distribution, dtype=float)
    else:
        state = _parse_state(list(x0_distribution), n)
        dist = np.zeros(size)
        dist[sum(1 << i for i, v in enumerate(state) if v == I)] = 1.0
    if abs(dist.sum() - 1.0) > 1e-12 or (dist < 0).any():
        raise ValueError("initial distribution must be a probability vector")
    return dist


def exact_master_equation(g: Graph | None, rates: RateModel, x0_distribution, times) -> MasterSolution:
    """Solve the forward Kolmogorov equation ``dP/dt = P Q`` at ``times``.

    ``x0_distribution`` is either a node-state vector (a point mass) or a
    length ``2^N`` probability vector indexed by configuration bits.
    """
    n = rates.n
    if g is not None and g.n != n:
        raise ValueError("graph and rate model disagree on node count")
    Q = sis_generator(rates)
    dist = _distribution_from(x0_distribution, n)
    times = np.asarray(times, dtype=float)
    order = np.argsort(times)
    out = np.empty((times.size, dist.size))
    QT = Q.T.tocsc()
    dense = n <= 10
    QTd = QT.toarray() if dense else None
    t_prev, cur = 0.0, dist
    for idx in order:
        h = times[idx] - t_prev
        if h < 0:
            raise ValueError("times must be nonnegative")
        if h > 0:
            if dense:
                cur = scipy.linalg.expm(QTd * h) @ cur
            else:
                cur = scipy.sparse.linalg.expm_multiply(QT * h, cur)
        cur = np.maximum(cur, 0.0)
        cur = cur / cur.sum()
        out[idx] = cur
        t_prev = times[idx]
    bits = (np.arange(dist.size)[:, None] >> np.arange(n)) & 1
    return MasterSolution(times, out, out @ bits)


def exact_extinction_time(rates: RateModel, x0) -> float:
    """Expected absorption time from a point mass by a linear solve on transient states."""
    Q = sis_generator(rates).toarray()
    dist = _distribution_from(x0, rates.n)
    transient = np.arange(1, Q.shape[0])
    Qtt = Q[np.ix_(transient, transient)]
    tau = np.linalg.solve(-Qtt, np.ones(transient.size))
    return float(dist[1:] @ tau)
