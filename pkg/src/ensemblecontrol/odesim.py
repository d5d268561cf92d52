"""Ensemble ODE integration over a parameter grid, plus L_p(Theta) norms.

Every member of the ensemble sees the same controls but its own vector
fields; integration is classical fixed-step RK4, node by node.  The step is
fixed (not adaptive) on purpose: oscillatory controls need their resolution
tied to the oscillation scale by the caller, and an adaptive scheme would
hide that contract.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .polyfield import PolyField
from .signals import ControlSignal


class GridError(ValueError):
    pass


class DivergenceError(RuntimeError):
    """A trajectory produced a non-finite state."""

    def __init__(self, time: float, node: int):
        super().__init__(f"non-finite state at t={time:.6g} on grid node {node}")
        self.time = time
        self.node = node


@dataclass(frozen=True)
class ThetaGrid:
    """Discretization of the parameter interval with quadrature weights."""

    nodes: np.ndarray
    weights: np.ndarray
    interval: tuple[float, float]

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        a, b = self.interval
        if nodes.ndim != 1 or weights.shape != nodes.shape or nodes.size < 1:
            raise GridError("nodes and weights must be matching 1-d arrays")
        if np.any(np.diff(nodes) <= 0):
            raise GridError("nodes must be strictly increasing")
        if np.any(weights <= 0):
            raise GridError("weights must be positive")
        if nodes[0] < a - 1e-12 or nodes[-1] > b + 1e-12:
            raise GridError(f"nodes leave the interval [{a}, {b}]")
        if abs(weights.sum() - (b - a)) > 1e-12 * max(1.0, abs(b - a)):
            raise GridError("weights must sum to the interval length")

    @property
    def size(self) -> int:
        return self.nodes.size

    def integrate(self, values: np.ndarray) -> float:
        """Quadrature of nodewise values."""
        return float(np.dot(self.weights, np.asarray(values, dtype=float)))


def make_grid(kind: str, interval: tuple[float, float], n: int) -> ThetaGrid:
    """Gauss-Legendre nodes/weights mapped to the interval, or uniform
    nodes with trapezoid weights."""
    if n < 1:
        raise GridError(f"grid size must be >= 1, got {n}")
    a, b = float(interval[0]), float(interval[1])
    if not b > a:
        raise GridError(f"empty interval [{a}, {b}]")
    if kind == "gauss":
        x, w = np.polynomial.legendre.leggauss(n)
        nodes = 0.5 * (b - a) * x + 0.5 * (a + b)
        weights = 0.5 * (b - a) * w
    elif kind == "uniform":
        if n == 1:
            nodes = np.array([0.5 * (a + b)])
            weights = np.array([b - a])
        else:
            nodes = np.linspace(a, b, n)
            h = (b - a) / (n - 1)
            weights = np.full(n, h)
            weights[0] = weights[-1] = h / 2.0
    else:
        raise GridError(f"unknown grid kind {kind!r} (expected 'gauss' or 'uniform')")
    return ThetaGrid(nodes, weights, (a, b))


@dataclass(frozen=True)
class TrajectoryRecord:
    """States of every ensemble member at the recorded times."""

    times: np.ndarray           # (n_times,)
    states: np.ndarray          # (n_times, n_nodes, dim)
    controls_sampled: np.ndarray | None = None  # (n_times, n_controls)

    def __post_init__(self):
        if self.times.ndim != 1 or self.states.ndim != 3:
            raise ValueError("times must be 1-d, states (time, node, dim)")
        if self.states.shape[0] != self.times.size:
            raise ValueError("states and times disagree on the number of samples")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("states contain non-finite entries")

    @property
    def terminal(self) -> np.ndarray:
        """(n_nodes, dim) states at the final time."""
        return self.states[-1]


def _compile_field(field: PolyField):
    """Flatten a PolyField into per-component term lists for fast float eval."""
    comps = []
    for c in field.components:
        comps.append([(float(coef), exp) for exp, coef in c.terms.items()])
    return comps


def _eval_compiled(comps, x):
    out = np.zeros(len(comps))
    for i, terms in enumerate(comps):
        acc = 0.0
        for coef, exp in terms:
            v = coef
            for xj, e in zip(x, exp):
                if e == 1:
                    v *= xj
                elif e:
                    v *= xj**e
            acc += v
        out[i] = acc
    return out


def integrate_ensemble(
    fields: Sequence[Sequence[PolyField]],
    controls: Sequence[ControlSignal],
    x0: Sequence[float],
    T: float,
    h: float,
    record_every: int = 1,
) -> TrajectoryRecord:
    """Integrate dx/dt = sum_j f_j^theta(x) u_j(t) per node with fixed-step RK4.

    fields: one tuple of PolyFields per grid node, all of arity
    len(controls); the same initial state is shared by every node.  The last
    step is shortened to land exactly on T.  Any non-finite state aborts the
    run with a DivergenceError naming the time and node.
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    if T <= 0:
        raise ValueError(f"horizon must be positive, got {T}")
    n_nodes = len(fields)
    if n_nodes < 1:
        raise ValueError("need at least one grid node")
    arity = len(controls)
    compiled = []
    for tup in fields:
        if len(tup) != arity:
            raise ValueError(
                f"node supplies {len(tup)} fields but there are {arity} controls"
            )
        compiled.append([_compile_field(f) for f in tup])
    dim = fields[0][0].dim
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (dim,):
        raise ValueError(f"x0 has shape {x0.shape}, expected ({dim},)")

    n_steps = int(np.ceil(T / h - 1e-12))
    times = [0.0]
    states = [np.tile(x0, (n_nodes, 1))]
    ctrl_samples = [np.array([float(c.eval(0.0)) for c in controls])]

    def rhs(tuples, x, u):
        acc = np.zeros(dim)
        for f, uj in zip(tuples, u):
            if uj != 0.0:
                acc += uj * _eval_compiled(f, x)
        return acc

    cur = states[0].copy()
    for step in range(n_steps):
        # step times come from the index, not accumulation: a drifting time
        # base shears the control phases by O(n_steps * eps_mach)
        t = step * h
        t_end = min((step + 1) * h, T)
        hh = t_end - t
        if hh <= 0.0:
            break
        t_mid = t + hh / 2.0
        u0 = [float(c.eval(t)) for c in controls]
        um = [float(c.eval(t_mid)) for c in controls]
        u1 = [float(c.eval(t_end)) for c in controls]

        for node in range(n_nodes):
            tuples = compiled[node]
            y = cur[node]
            k1 = rhs(tuples, y, u0)
            k2 = rhs(tuples, y + 0.5 * hh * k1, um)
            k3 = rhs(tuples, y + 0.5 * hh * k2, um)
            k4 = rhs(tuples, y + hh * k3, u1)
            y = y + (hh / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(y)):
                raise DivergenceError(t_end, node)
            cur[node] = y
        if (step + 1) % record_every == 0 or step == n_steps - 1:
            times.append(t_end)
            states.append(cur.copy())
            ctrl_samples.append(np.array(u1))

    return TrajectoryRecord(
        times=np.array(times),
        states=np.array(states),
        controls_sampled=np.array(ctrl_samples),
    )


def trajectory_csv_rows(record: TrajectoryRecord, grid: ThetaGrid):
    """Rows (t, theta, x_1 ... x_dim), one per recorded time and node."""
    n_times, n_nodes, dim = record.states.shape
    if n_nodes != grid.size:
        raise ValueError("trajectory and grid disagree on the number of nodes")
    for k in range(n_times):
        for i in range(n_nodes):
            yield [float(record.times[k]), float(grid.nodes[i])] + [
                float(v) for v in record.states[k, i]
            ]


def run_metadata(h: float, T: float, grid: ThetaGrid, wall_time_s: float | None = None) -> dict:
    """Reproducibility metadata for a run; wall time is optional so that
    deterministic reports can omit it (the run manifest carries it)."""
    meta = {
        "h": h,
        "T": T,
        "grid": {
            "n": grid.size,
            "interval": [float(grid.interval[0]), float(grid.interval[1])],
        },
    }
    if wall_time_s is not None:
        meta["wall_time_s"] = wall_time_s
    return meta


def lp_distance(
    states: np.ndarray, target: np.ndarray, grid: ThetaGrid, p: int
) -> float:
    """(sum_i w_i ||states_i - target_i||^p)^(1/p), Euclidean norm per node."""
    states = np.asarray(states, dtype=float)
    target = np.asarray(target, dtype=float)
    if states.shape != target.shape or states.shape[0] != grid.size:
        raise ValueError(
            f"shape mismatch: states {states.shape}, target {target.shape}, "
            f"grid size {grid.size}"
        )
    if p not in (1, 2):
        raise ValueError(f"p must be 1 or 2, got {p}")
    norms = np.sqrt(np.sum((states - target) ** 2, axis=-1))
    total = 0.0
    for w, v in zip(grid.weights, norms):
        total += w * v**p
    return float(total ** (1.0 / p))
