"""Command-line front end: one JSON scenario in, a directory of artifacts out.

Usage::

    epinet <command> --scenario scenario.json --out results/ [--seed N] [--quiet]

with ``<command>`` one of ``threshold``, ``simulate``, ``meanfield``,
``allocate``, ``optctrl`` or ``compare``.  Every run writes ``report.json``
(resolved scenario, headline numbers, output manifest) next to its other
artifacts.  Exit codes: 0 success, 1 invalid scenario, 2 solver failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .allocation import (AllocationProblem, InfeasibleError, SolverError, allocate, check_threshold,
                         decay_rate, equal_split)
from .graph import Graph, GraphFormatError, SpectralError, generate, lambda_max, load_edge_list, \
    random_strongly_connected
from .meanfield import (DISEASE_FREE, EquilibriumError, InvariantError, RateModel, endemic_equilibrium,
                        integrate, node_columns, rhs_network_sir, rhs_network_sis)
from .optctrl import (ConvergenceError, PolicySchedule, PopulationControlProblem, SIRPatchingProblem,
                      SISNetworkControlProblem, classify_population_policy, fbs_population_sis,
                      fbs_sir_network, fbs_sis_network, population_cost, simulate_controlled_population,
                      simulate_sir_patching, simulate_sis_network_control)
from .stochastic import (INAPPLICABLE, MAX_EXACT_NODES, default_t_cap, estimate_extinction_time, estimate_marginals,
                         exact_master_equation, extinction_time_bound, ssa_network)
from .svgplot import line_plot

COMMANDS = ("threshold", "simulate", "meanfield", "allocate", "optctrl", "compare")

EXIT_OK, EXIT_INVALID, EXIT_FAILURE = 0, 1, 2


class ScenarioError(ValueError):
    """Invalid scenario; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


_MISSING = object()


class Reader:
    """Typed field access on a JSON object that records every resolved value."""

    def __init__(self, doc: Any, path: str, echo: dict):
        if not isinstance(doc, dict):
            raise ScenarioError(path or "<root>", "expected a JSON object")
        self.doc = doc
        self.path = path
        self.echo = echo

    def _where(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def has(self, key: str) -> bool:
        return key in self.doc

    def raw(self, key: str, default=_MISSING):
        if key not in self.doc:
            if default is _MISSING:
                raise ScenarioError(self._where(key), "required field is missing")
            return default
        return self.doc[key]

    def sub(self, key: str, default=_MISSING) -> "Reader":
        val = self.raw(key, {} if default is not _MISSING else _MISSING)
        echo = self.echo.setdefault(key, {})
        return Reader(val, self._where(key), echo)

    def number(self, key: str, default=_MISSING, *, positive=False, nonneg=False, lo=None, hi=None) -> float:
        val = self.raw(key, default)
        where = self._where(key)
        if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
            raise ScenarioError(where, f"expected a finite number, got {val!r}")
        val = float(val)
        _check_range(where, np.array([val]), positive, nonneg, lo, hi)
        self.echo[key] = val
        return val

    def integer(self, key: str, default=_MISSING, *, minimum=None) -> int:
        val = self.raw(key, default)
        where = self._where(key)
        if isinstance(val, bool) or not isinstance(val, int):
            raise ScenarioError(where, f"expected an integer, got {val!r}")
        if minimum is not None and val < minimum:
            raise ScenarioError(where, f"must be >= {minimum}, got {val}")
        self.echo[key] = val
        return val

    def string(self, key: str, default=_MISSING, choices=None) -> str:
        val = self.raw(key, default)
        where = self._where(key)
        if not isinstance(val, str):
            raise ScenarioError(where, f"expected a string, got {val!r}")
        if choices is not None and val not in choices:
            raise ScenarioError(where, f"must be one of {', '.join(choices)}; got {val!r}")
        self.echo[key] = val
        return val

    def vector(self, key: str, n: int, default=_MISSING, *, positive=False, nonneg=False,
               lo=None, hi=None) -> np.ndarray:
        """Scalar (broadcast) or length-``n`` list of numbers."""
        val = self.raw(key, default)
        where = self._where(key)
        if isinstance(val, (int, float)) and not isinstance(val, bool):
            arr = np.full(n, float(val))
        elif isinstance(val, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in val):
            if len(val) != n:
                raise ScenarioError(where, f"expected {n} entries, got {len(val)}")
            arr = np.array(val, dtype=float)
        else:
            raise ScenarioError(where, f"expected a number or a list of {n} numbers")
        if not np.all(np.isfinite(arr)):
            raise ScenarioError(where, "entries must be finite")
        _check_range(where, arr, positive, nonneg, lo, hi)
        self.echo[key] = val if not isinstance(val, list) else [float(v) for v in val]
        return arr

    def number_list(self, key: str, default=_MISSING, *, nonneg=False) -> list[float]:
        val = self.raw(key, default)
        where = self._where(key)
        if not isinstance(val, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in val):
            raise ScenarioError(where, "expected a list of numbers")
        arr = np.array(val, dtype=float)
        _check_range(where, arr, False, nonneg, None, None)
        self.echo[key] = [float(v) for v in val]
        return [float(v) for v in val]


def _check_range(where, arr, positive, nonneg, lo, hi):
    if positive and np.any(arr <= 0):
        raise ScenarioError(where, "must be positive")
    if nonneg and np.any(arr < 0):
        raise ScenarioError(where, "must be nonnegative")
    if lo is not None and np.any(arr < lo):
        raise ScenarioError(where, f"must be >= {lo}")
    if hi is not None and np.any(arr > hi):
        raise ScenarioError(where, f"must be <= {hi}")


# ---------------------------------------------------------------------------
# Shared scenario pieces
# ---------------------------------------------------------------------------


def read_graph(r: Reader, base: Path) -> Graph:
    g = r.sub("graph")
    try:
        if g.has("generator"):
            kind = g.string("generator", choices=("complete", "star", "path", "cycle", "grid",
                                                  "erdos_renyi", "strongly_connected"))
            n = g.integer("n", minimum=1)
            if kind == "strongly_connected":
                return random_strongly_connected(n, g.number("p", 0.3, lo=0, hi=1), g.integer("seed", 0))
            kw = {}
            if kind == "erdos_renyi":
                kw = dict(p=g.number("p", lo=0, hi=1), seed=g.integer("seed", 0))
            if kind == "grid":
                kw = dict(rows=g.integer("rows", minimum=1), cols=g.integer("cols", minimum=1))
            return generate(kind, n, **kw)
        if g.has("edge_list"):
            rel = g.string("edge_list")
            path = (base / rel) if not Path(rel).is_absolute() else Path(rel)
            if not path.is_file():
                raise ScenarioError(g._where("edge_list"), f"file not found: {path}")
            return load_edge_list(path.read_text(), g.integer("n", minimum=1) if g.has("n") else None)
        if g.has("edges"):
            n = g.integer("n", minimum=1)
            edges = g.raw("edges")
            if not isinstance(edges, list):
                raise ScenarioError(g._where("edges"), "expected a list of [src, dst] or [src, dst, w]")
            parsed = []
            for k, e in enumerate(edges):
                if not isinstance(e, list) or len(e) not in (2, 3):
                    raise ScenarioError(f"{g._where('edges')}[{k}]", "expected [src, dst] or [src, dst, w]")
                parsed.append((e[0], e[1], e[2] if len(e) == 3 else 1.0))
            g.echo["edges"] = [list(e) for e in parsed]
            return Graph(n, tuple(parsed))
    except (ValueError, GraphFormatError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(g.path, str(exc)) from None
    raise ScenarioError(g.path, "needs one of: generator, edge_list, edges")


def read_rates(r: Reader, g: Graph) -> tuple[RateModel, dict]:
    """``beta`` (per-node infection rate, ``B = diag(beta) A``) and ``delta``."""
    m = r.sub("model")
    beta = m.vector("beta", g.n, nonneg=True)
    delta = m.vector("delta", g.n, positive=True)
    rates = RateModel.node_rates(g, beta, delta)
    homog = bool(np.all(beta == beta[0]) and np.all(delta == delta[0]))
    return rates, {"beta": beta, "delta": delta, "homogeneous": homog}


def read_initial(r: Reader, n: int, model: str) -> np.ndarray:
    """Infection probabilities per node from ``initial.infected`` or ``initial.p0``."""
    init = r.sub("initial")
    if init.has("infected"):
        nodes = init.raw("infected")
        if not isinstance(nodes, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in nodes):
            raise ScenarioError(init._where("infected"), "expected a list of node indices")
        if any(not 0 <= v < n for v in nodes):
            raise ScenarioError(init._where("infected"), f"node index outside 0..{n - 1}")
        init.echo["infected"] = list(nodes)
        p = np.zeros(n)
        p[nodes] = 1.0
        return p
    return init.vector("p0", n, lo=0.0, hi=1.0)


def _binary_state(p: np.ndarray, where: str) -> list[str]:
    if not np.all((p == 0) | (p == 1)):
        raise ScenarioError(where, "stochastic runs need a deterministic initial state (use 'infected')")
    return ["I" if v else "S" for v in p]


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, float) and not math.isfinite(x):
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


@dataclass
class RunReport:
    command: str
    scenario: dict
    results: dict
    outputs: list = field(default_factory=list)
    wall_clock: float = 0.0

    def document(self) -> dict:
        # wall-clock stays out of the file so reruns are byte-identical
        return {"command": self.command, "version": __version__, "scenario": self.scenario,
                "results": self.results, "outputs": self.outputs}


class Outputs:
    def __init__(self, out_dir: Path):
        self.dir = out_dir
        self.manifest: list[dict] = []

    def write(self, name: str, text: str) -> None:
        data = text.encode()
        if not data:
            raise RuntimeError(f"refusing to write empty artifact {name}")
        (self.dir / name).write_bytes(data)
        self.manifest.append({"file": name, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()})


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_threshold(r: Reader, base: Path, out: Outputs, seed: int) -> dict:
    g = read_graph(r, base)
    rates, info = read_rates(r, g)
    verdict = check_threshold(g, rates)
    lam_a = lambda_max(g.adjacency).lambda_max if g.n else 0.0
    res = {
        "n": g.n, "edges": g.num_edges, "lambda_max_A": lam_a,
        "lambda_max_B_minus_D": verdict.lambda_max_BD, "verdict": verdict.verdict,
        "margin": verdict.margin, "strongly_connected": verdict.strongly_connected,
    }
    if info["homogeneous"]:
        beta, delta = float(info["beta"][0]), float(info["delta"][0])
        res["tau"] = beta / delta
        res["inv_lambda_max"] = verdict.inv_lambda_max_A
        bound = extinction_time_bound(g, beta, delta)
        res["extinction_time_bound"] = bound
    else:
        res["extinction_time_bound"] = INAPPLICABLE
    out.write("threshold.json", dump_json(res))
    return res


def cmd_simulate(r: Reader, base: Path, out: Outputs, seed: int) -> dict:
    g = read_graph(r, base)
    rates, info = read_rates(r, g)
    model = r.string("process", "SIS", choices=("SIS", "SIR"))
    p0 = read_initial(r, g.n, model)
    state = _binary_state(p0, "initial")
    runs = r.integer("runs", 100, minimum=1)
    t_cap = r.number("t_cap", positive=True) if r.has("t_cap") else None
    sample_times = r.number_list("sample_times", [], nonneg=True)
    est = estimate_extinction_time(g, rates, state, runs, seed, t_cap, model)
    out.write("extinction.json", est.to_json() + "\n")
    first = ssa_network(g, rates, state, seed, t_cap if t_cap is not None else default_t_cap(g.n, rates.delta), model)
    out.write("events_run0.csv", first.events_csv())
    res = {"runs": runs, "master_seed": seed, "mean_extinction_time": est.mean,
           "std_error": est.std_error, "censored": est.censored}
    if info["homogeneous"] and model == "SIS":
        res["extinction_time_bound"] = extinction_time_bound(g, float(info["beta"][0]), float(info["delta"][0]))
    if sample_times:
        marg = estimate_marginals(g, rates, state, sample_times, runs, seed, model)
        lines = ["t," + ",".join(f"mean_{i}" for i in range(g.n)) + "," + ",".join(f"se_{i}" for i in range(g.n))]
        for t, m, s in zip(marg.times, marg.mean, marg.std_error):
            lines.append(f"{t:.12g}," + ",".join(f"{v:.12g}" for v in m) + "," + ",".join(f"{v:.12g}" for v in s))
        out.write("marginals.csv", "\n".join(lines) + "\n")
    return res


def cmd_meanfield(r: Reader, base: Path, out: Outputs, seed: int) -> dict:
    g = read_graph(r, base)
    rates, info = read_rates(r, g)
    model = r.string("process", "SIS", choices=("SIS", "SIR"))
    p0 = read_initial(r, g.n, model)
    T = r.number("horizon", positive=True)
    dt = r.number("dt", 1e-2, positive=True)
    if model == "SIS":
        traj = integrate(lambda t, x: rhs_network_sis(x, g, rates), p0, T, dt,
                         columns=tuple(f"p_{i}" for i in range(g.n)), model="network_sis")
        infected = traj.states
    else:
        x0 = np.concatenate([1 - p0, p0, np.zeros(g.n)])
        traj = integrate(lambda t, x: rhs_network_sir(x, g, rates), x0, T, dt, groups=3,
                         columns=node_columns("SIR", g.n), model="network_sir")
        infected = traj.states[:, g.n:2 * g.n]
    out.write("trajectory.csv", traj.to_csv())
    series = [(f"node {i}", traj.times, infected[:, i]) for i in range(min(g.n, 10))]
    series.append(("mean", traj.times, infected.mean(axis=1)))
    out.write("trajectory.svg", line_plot(series, title=f"mean-field {model}", ylabel="P(infected)",
                                          dashed=[False] * (len(series) - 1) + [True]))
    res = {"process": model, "final_mean_infected": float(infected[-1].mean()),
           "lambda_max_B_minus_D": rates.threshold_margin()}
    if model == "SIS" and g.is_strongly_connected():
        eq = endemic_equilibrium(g, rates)
        res["endemic_equilibrium"] = eq if isinstance(eq, str) else eq.tolist()
    return res


def cmd_allocate(r: Reader, base: Path, out: Outputs, seed: int) -> dict:
    g = read_graph(r, base)
    a = r.sub("allocation")
    n = g.n
    beta_lo = a.vector("beta_lo", n, positive=True)
    beta_hi = a.vector("beta_hi", n, positive=True)
    delta_lo = a.vector("delta_lo", n, positive=True)
    delta_hi = a.vector("delta_hi", n, positive=True)
    if np.any(beta_lo > beta_hi):
        raise ScenarioError(a._where("beta_lo"), "must not exceed beta_hi")
    if np.any(delta_lo > delta_hi):
        raise ScenarioError(a._where("delta_lo"), "must not exceed delta_hi")
    budget = a.number("budget", nonneg=True)
    beta_w = a.vector("beta_cost", n, 1.0, positive=True)
    delta_w = a.vector("delta_cost", n, 1.0, positive=True)
    power = a.number("delta_cost_power", 1.0, positive=True)
    if not g.is_strongly_connected():
        raise ScenarioError("graph", "allocation needs a strongly connected graph")
    problem = AllocationProblem.with_default_costs(g, beta_lo, beta_hi, delta_lo, delta_hi, budget,
                                                   beta_w, delta_w, power)
    try:
        result = allocate(problem)
    except InfeasibleError as exc:
        raise ScenarioError(a._where("budget"), str(exc)) from None
    decay = decay_rate(result, problem)
    z_beta, z_delta = problem.zero_spend()
    before = lambda_max(problem.decay_matrix(z_beta, z_delta)).lambda_max
    eq_beta, eq_delta, eq_lam = equal_split(problem)
    out.write("problem.json", dump_json(problem.to_dict()))
    out.write("allocation.json", dump_json(result.to_dict()))
    return {"lambda_max_before": before, "lambda_max_after": decay, "gp_objective": result.gp_objective,
            "phi": result.phi, "spend": result.spend, "budget": budget,
            "equal_split_lambda_max": eq_lam, "diagnostics": result.diagnostics}


def cmd_optctrl(r: Reader, base: Path, out: Outputs, seed: int) -> dict:
    c = r.sub("control")
    kind = c.string("problem", choices=("population_sis", "sir_patching", "sis_network"))
    T = c.number("horizon", positive=True)
    if kind == "population_sis":
        beta = c.number("beta", nonneg=True)
        d1 = c.number("delta1", positive=True)
        d2 = c.number("delta2", positive=True)
        if d2 <= d1:
            raise ScenarioError(c._where("delta2"), "must exceed delta1")
        pr = PopulationControlProblem(beta, d1, d2, c.number("c", positive=True), c.number("d", positive=True), T)
        p0 = c.number("p0", lo=0.0, hi=1.0)
        if p0 <= 0:
            raise ScenarioError(c._where("p0"), "must be positive")
        dt = c.number("dt", 1e-3, positive=True)
        sol = fbs_population_sis(pr, p0, dt=dt)
        traj = simulate_controlled_population(pr.beta, pr.delta1, pr.delta2, sol.schedule, p0, T, dt)
        out.write("schedule.json", dump_json(sol.schedule.to_dict()))
        out.write("schedule.csv", sol.schedule.to_csv())
        out.write("trajectory.csv", traj.to_csv())
        grid_u = [sol.schedule.scalar(t) for t in traj.times]
        out.write("trajectory.svg", line_plot([("p_I", traj.times, traj.states[:, 0]), ("u", traj.times, grid_u)],
                                              title="treated SIS population", dashed=[False, True]))
        baselines = {f"u={u:g}": population_cost(pr, PolicySchedule.constant(T, u, 0.0, 1.0), p0, dt)
                     for u in (0.0, 1.0)}
        cls = classify_population_policy(pr)
        return {"problem": kind, "J_T": sol.J, "switches": sol.switches,
                "switch_times": sol.schedule.breakpoints.tolist(), "classification": cls.verdict,
                "degenerate": cls.degenerate, "baselines": baselines, "sweeps": sol.sweeps}

    g = read_graph(r, base)
    n = g.n
    beta = c.vector("beta", n, nonneg=True)
    if kind == "sir_patching":
        pr = SIRPatchingProblem.on_graph(
            g, beta, pi=c.vector("pi", n, 1.0, lo=0.0, hi=1.0), ell=c.vector("ell", n, 0.0, nonneg=True),
            c=c.vector("c", n, positive=True), h1=c.vector("h1", n, 0.0, nonneg=True),
            h2=c.vector("h2", n, 0.0, nonneg=True), u_max=c.vector("u_max", n, positive=True), T=T)
        s0 = c.vector("S0", n, lo=0.0, hi=1.0)
        i0 = c.vector("I0", n, lo=0.0, hi=1.0)
        r0 = c.vector("R0", n, lo=0.0, hi=1.0)
        if np.any(np.abs(s0 + i0 + r0 - 1) > 1e-9):
            raise ScenarioError(c._where("S0"), "S0 + I0 + R0 must equal 1 at every node")
        x0 = np.concatenate([s0, i0, r0])
        dt = c.number("dt", 2e-2, positive=True)
        sol = fbs_sir_network(pr, x0, dt=dt)
        traj = simulate_sir_patching(pr, sol.schedule, x0, dt)
        infected = traj.states[:, n:2 * n]
    else:
        pr = SISNetworkControlProblem.on_graph(
            g, beta, c=c.vector("c", n, nonneg=True), d=c.vector("d", n, nonneg=True),
            delta_lo=c.number("delta_lo", positive=True), delta_hi=c.number("delta_hi", positive=True), T=T)
        if pr.delta_hi <= pr.delta_lo:
            raise ScenarioError(c._where("delta_hi"), "must exceed delta_lo")
        p0 = c.vector("p0", n, lo=0.0, hi=1.0)
        dt = c.number("dt", 5e-2, positive=True)
        sol = fbs_sis_network(pr, p0, dt=dt)
        traj = simulate_sis_network_control(pr, sol.schedule, p0, dt)
        infected = traj.states
    out.write("schedule.json", dump_json(sol.schedule.to_dict()))
    out.write("schedule.csv", sol.schedule.to_csv())
    out.write("trajectory.csv", traj.to_csv())
    out.write("trajectory.svg", line_plot([(f"node {i}", traj.times, infected[:, i]) for i in range(min(n, 10))],
                                          title=kind, ylabel="P(infected)"))
    res = {"problem": kind, "J_T": sol.J, "baselines": sol.baselines, "sweeps": sol.sweeps,
           "switch_counts": sol.schedule.switch_counts().tolist(), "note": sol.note}
    if kind == "sir_patching":
        res.update(snapped=sol.snapped, switch_times=sol.switch_times.tolist(), raw_J_T=sol.raw_J)
    else:
        res["heuristic"] = True
    return res


def cmd_compare(r: Reader, base: Path, out: Outputs, seed: int) -> dict:
    g = read_graph(r, base)
    if g.n > MAX_EXACT_NODES:
        raise ScenarioError("graph.n", f"exact master equation limited to {MAX_EXACT_NODES} nodes")
    rates, _ = read_rates(r, g)
    p0 = read_initial(r, g.n, "SIS")
    state = _binary_state(p0, "initial")
    times = r.number_list("sample_times", nonneg=True)
    if not times:
        raise ScenarioError("sample_times", "need at least one sample time")
    runs = r.integer("runs", 0, minimum=0)
    dt = r.number("dt", 1e-3, positive=True)
    T = max(times)
    exact = exact_master_equation(g, rates, state, times)
    if T > 0:
        bps = [t for t in times if 0 < t < T]
        traj = integrate(lambda t, x: rhs_network_sis(x, g, rates), p0, T, dt, breakpoints=bps,
                         columns=tuple(f"p_{i}" for i in range(g.n)))
        mf = np.array([traj.states[int(np.argmin(np.abs(traj.times - t)))] for t in times])
    else:
        mf = np.tile(p0, (len(times), 1))
    ssa = estimate_marginals(g, rates, state, times, runs, seed) if runs > 0 else None
    header = "t,node,meanfield,exact" + (",ssa,ssa_se" if ssa is not None else "")
    lines = [header]
    for k, t in enumerate(times):
        for i in range(g.n):
            row = f"{t:.12g},{i},{mf[k, i]:.12g},{exact.marginals[k, i]:.12g}"
            if ssa is not None:
                row += f",{ssa.mean[k, i]:.12g},{ssa.std_error[k, i]:.12g}"
            lines.append(row)
    out.write("compare.csv", "\n".join(lines) + "\n")
    series = [("mean-field", times, mf.mean(axis=1)), ("exact", times, exact.marginals.mean(axis=1))]
    if ssa is not None:
        series.append(("SSA", times, ssa.mean.mean(axis=1)))
    out.write("compare.svg", line_plot(series, title="average infection probability", ylabel="P(infected)"))
    gap = mf - exact.marginals
    return {"n": g.n, "min_meanfield_minus_exact": float(gap.min()),
            "max_meanfield_minus_exact": float(gap.max()), "upper_bound_holds": bool(gap.min() >= -1e-9),
            "ssa_runs": runs}


HANDLERS: dict[str, Callable] = {
    "threshold": cmd_threshold, "simulate": cmd_simulate, "meanfield": cmd_meanfield,
    "allocate": cmd_allocate, "optctrl": cmd_optctrl, "compare": cmd_compare,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def run(command: str, scenario_path: Path, out_dir: Path, seed: int | None = None) -> RunReport:
    """Parse, validate and execute one scenario; raises on failure."""
    try:
        doc = json.loads(Path(scenario_path).read_text())
    except FileNotFoundError:
        raise ScenarioError("--scenario", f"file not found: {scenario_path}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError("<root>", f"invalid JSON: {exc}") from None
    echo: dict = {}
    r = Reader(doc, "", echo)
    if r.has("command") and r.string("command") != command:
        raise ScenarioError("command", f"scenario is for {doc['command']!r}, not {command!r}")
    echo["command"] = command
    scenario_seed = r.integer("seed", 0)
    if seed is not None:
        scenario_seed = echo["seed"] = seed
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = Outputs(out_dir)
    start = time.perf_counter()
    results = HANDLERS[command](r, Path(scenario_path).parent, outputs, scenario_seed)
    report = RunReport(command, echo, results, outputs.manifest)
    doc_text = dump_json(report.document())
    (out_dir / "report.json").write_text(doc_text)
    report.wall_clock = time.perf_counter() - start
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epinet", description="Epidemic spreading on networks: "
                                     "thresholds, simulation, allocation and optimal control.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HANDLERS[name].__name__.replace("cmd_", "") + " scenario")
        p.add_argument("--scenario", required=True, type=Path, help="scenario JSON file")
        p.add_argument("--out", required=True, type=Path, help="output directory")
        p.add_argument("--seed", type=int, help="override the scenario's seed")
        p.add_argument("--quiet", action="store_true", help="suppress the summary on stdout")
    return parser


SOLVER_ERRORS = (SpectralError, InvariantError, EquilibriumError, ConvergenceError, SolverError,
                 RuntimeError, ArithmeticError)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        report = run(args.command, args.scenario, args.out, args.seed)
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SOLVER_ERRORS as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    if not args.quiet:
        print(json.dumps(_jsonable(report.results), indent=2, sort_keys=True))
        files = ", ".join(m["file"] for m in report.outputs) or "none"
        print(f"wrote report.json and {files} to {args.out} in {report.wall_clock:.2f}s")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
