"""Closed-loop double-integrator agents under the constrained control law.

Per agent and step::

    x(k+1) = x(k) + T v(k)
    v(k+1) = u(k) = S_V[ v(k) - p(k) v(k) T + pi(k) ]
    pi(k)  = sum_j a_ij(k) (x_j(k - tau_ij(k)) - x_i(k)) T

``S_V`` is the radial constraint operator of the agent's velocity set, ``e``
its scaling factor, ``b = (1 - e (1 - p T)) / T`` the effective damping and
``p(k+1)`` is chosen by a gain policy inside ``[b(k), 1/T)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import _kernels
from .constraints import ConstraintSet
from .errors import (
    BufferUnderflow,
    FloorConflict,
    GainOutOfRange,
    PolicyViolation,
    StepError,
)
from .graphs import GraphSnapshot

log = logging.getLogger(__name__)

DEFAULT_SAFETY_MARGIN = 0.02
FEASIBILITY_TOL = 1e-9

GainPolicy = Callable[[float, float, float], float]


# --------------------------------------------------------------------------
# gains
# --------------------------------------------------------------------------

def previous_b(p: float, b: float, T: float) -> float:
    return b


def blend(weight: float) -> GainPolicy:
    """``p(k+1) = b + weight * (1/T - b)`` for ``0 <= weight < 1``."""
    if not 0.0 <= weight < 1.0:
        raise ValueError(f"blend weight must lie in [0, 1), got {weight}")

    def policy(p, b, T):
        return b + weight * (1.0 / T - b)

    policy.__name__ = f"blend({weight})"
    return policy


def resolve_policy(spec) -> GainPolicy:
    if callable(spec):
        return spec
    if spec is None or spec == "previous_b":
        return previous_b
    if isinstance(spec, dict) and spec.get("name") == "blend":
        return blend(float(spec["weight"]))
    raise ValueError(f"unknown gain policy {spec!r}")


def design_initial_gains(T: float, requested_p0: ArrayLike,
                         safety_margin: float = DEFAULT_SAFETY_MARGIN) -> tuple[NDArray, NDArray]:
    """Initial damping gains and Laplacian-diagonal caps.

    Returns ``p0`` unchanged and ``d = p0**2 / 4 * (1 - safety_margin)``.
    """
    p0 = np.atleast_1d(np.asarray(requested_p0, dtype=float))
    bad = ~((p0 * T > 0) & (p0 * T < 1))
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise GainOutOfRange(f"agent {i}: p0*T = {p0[i] * T} not in (0, 1)")
    if not 0.0 < safety_margin < 1.0:
        raise GainOutOfRange(f"safety margin {safety_margin} not in (0, 1)")
    return p0.copy(), p0**2 / 4.0 * (1.0 - safety_margin)


def normalize_weights(g: GraphSnapshot, d: ArrayLike, mu_c: float = 0.0) -> GraphSnapshot:
    """Scale every row whose weight sum exceeds ``d_i`` down to ``d_i``."""
    d = np.asarray(d, dtype=float)
    row = g.weights.sum(axis=1)
    over = row > d
    if not np.any(over):
        return g
    w = np.array(g.weights)
    w[over] *= (d[over] / row[over])[:, None]
    nz = w > 0
    if np.any(w[nz] < mu_c):
        i, j = np.argwhere(nz & (w < mu_c))[0]
        raise FloorConflict(f"edge {j}->{i} scaled to {w[i, j]:.6g} < mu_c={mu_c}")
    return GraphSnapshot(w, g.delays)


def update_gain(p_current: float, b_current: float, T: float,
                policy: GainPolicy = previous_b) -> float:
    p_next = float(policy(p_current, b_current, T))
    if not (b_current <= p_next and p_next * T < 1.0):
        raise PolicyViolation(
            f"policy returned p={p_next} outside [{b_current}, {1.0 / T})"
        )
    return p_next


# --------------------------------------------------------------------------
# delayed positions
# --------------------------------------------------------------------------

class DelayBuffer:
    """Last ``M + 1`` position arrays; age 0 is the current one.

    Before time 0 every agent is taken to have sat still at its initial
    position, so the buffer starts filled with ``x(0)``.
    """

    def __init__(self, depth: int, x0: NDArray):
        x0 = np.asarray(x0, dtype=float)
        self.depth = int(depth)
        self.data = np.repeat(x0[None, :, :], self.depth + 1, axis=0)

    def push(self, x: NDArray) -> None:
        self.data = np.concatenate([np.asarray(x, float)[None], self.data[:-1]], axis=0)

    def at(self, age: int) -> NDArray:
        if not 0 <= age <= self.depth:
            raise BufferUnderflow(f"age {age} outside buffer depth {self.depth}")
        return self.data[age]

    def delayed(self, agent: int, age: int) -> NDArray:
        return self.at(age)[agent]

    def copy(self) -> "DelayBuffer":
        out = DelayBuffer.__new__(DelayBuffer)
        out.depth = self.depth
        out.data = self.data.copy()
        return out


def consensus_term(i: int, g: GraphSnapshot, buffer: DelayBuffer, T: float) -> NDArray:
    """``pi_i`` for a single agent, evaluated term by term."""
    x_i = buffer.at(0)[i]
    acc = np.zeros_like(x_i)
    for j in np.flatnonzero(g.weights[i] > 0):
        acc += g.weights[i, j] * (buffer.delayed(j, int(g.delays[i, j])) - x_i)
    return acc * T


def consensus_terms(g: GraphSnapshot, buffer: DelayBuffer, T: float) -> NDArray:
    if g.delays.size and g.delays.max() > buffer.depth:
        raise BufferUnderflow(f"delay {g.delays.max()} exceeds buffer depth {buffer.depth}")
    return _kernels.consensus_terms(buffer.data, g.weights, g.delays, float(T))


def control_input(v: NDArray, p: float, pi: NDArray, cset: ConstraintSet,
                  T: float) -> tuple[NDArray, float, float]:
    """Constrained input, its scaling factor ``e`` and the gain ``b``.

    ``b`` is evaluated as ``p + (1 - e)(1 - pT)/T``, algebraically equal to
    ``(1 - e(1 - pT))/T`` but exactly ``p`` when ``e == 1``.
    """
    w = v - p * v * T + pi
    cv = cset.scale(w)
    b = p + (1.0 - cv.e) * (1.0 - p * T) / T
    return cv.output, cv.e, b


# --------------------------------------------------------------------------
# world stepping
# --------------------------------------------------------------------------

@dataclass
class World:
    k: int
    x: NDArray  # (n, r)
    v: NDArray  # (n, r)
    p: NDArray  # (n,)
    buffer: DelayBuffer


@dataclass
class AgentState:
    x: NDArray
    v: NDArray
    p: float
    b: float
    e: float
    d: float
    set_id: int


def controls(world: World, g: GraphSnapshot, sets: Sequence[ConstraintSet],
             T: float) -> tuple[NDArray, NDArray, NDArray]:
    """``(u, e, b)`` for every agent from the frozen time-k world."""
    pi = consensus_terms(g, world.buffer, T)
    n = world.x.shape[0]
    u = np.empty_like(world.v)
    e = np.empty(n)
    b = np.empty(n)
    for i in range(n):
        u[i], e[i], b[i] = control_input(world.v[i], world.p[i], pi[i], sets[i], T)
    return u, e, b


def step(world: World, g: GraphSnapshot, sets: Sequence[ConstraintSet], T: float,
         policy: GainPolicy = previous_b) -> tuple[World, NDArray, NDArray]:
    """Advance every agent one sampling period; returns ``(world', e, b)``."""
    u, e, b = controls(world, g, sets, T)
    x_next = world.x + world.v * T
    p_next = np.array([update_gain(world.p[i], b[i], T, policy) for i in range(len(b))])
    buffer = world.buffer.copy()
    buffer.push(x_next)
    return World(world.k + 1, x_next, u, p_next, buffer), e, b


def initial_world(positions: NDArray, velocities: NDArray, sets: Sequence[ConstraintSet],
                  p0: NDArray, max_delay: int) -> World:
    x = np.array(positions, dtype=float)
    v = np.array([sets[i].scale(vi).output for i, vi in enumerate(np.asarray(velocities, float))])
    v = v.reshape(x.shape)
    return World(0, x, v, np.array(p0, dtype=float), DelayBuffer(max_delay, x))


def consensus_diameter(x: NDArray) -> NDArray | float:
    """Largest distance from an agent to the agents' centroid.

    ``x`` is ``(n, r)`` or ``(K, n, r)``.
    """
    centroid = x.mean(axis=-2, keepdims=True)
    return np.linalg.norm(x - centroid, axis=-1).max(axis=-1)


@dataclass
class Trajectory:
    x: NDArray  # (K+1, n, r)
    v: NDArray  # (K+1, n, r)
    p: NDArray  # (K+1, n)
    b: NDArray  # (K+1, n)
    e: NDArray  # (K+1, n)
    diameter: NDArray  # (K+1,)
    snapshots: list  # normalised GraphSnapshot used at each k
    d: NDArray
    T: float
    max_delay: int
    config_hash: str = ""
    feasibility_violations: int = 0
    gain_violations: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.x.shape[0] - 1

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def r(self) -> int:
        return self.x.shape[2]

    def agent_state(self, k: int, i: int, set_id: int = 0) -> AgentState:
        return AgentState(self.x[k, i], self.v[k, i], float(self.p[k, i]),
                          float(self.b[k, i]), float(self.e[k, i]), float(self.d[i]), set_id)


def simulate(positions, velocities, sets: Sequence[ConstraintSet], p0, schedule, T: float,
             horizon: int, policy: GainPolicy = previous_b,
             safety_margin: float = DEFAULT_SAFETY_MARGIN, config_hash: str = "") -> Trajectory:
    """Run the closed loop for ``horizon`` steps and record every state.

    Row ``k`` of the returned arrays holds ``x(k), v(k), p(k)`` together with
    ``e(k), b(k)`` from the control evaluated at ``k`` (including the final
    step, whose control is evaluated but not applied).
    """
    n_agents = np.shape(positions)[0]
    p0 = np.broadcast_to(np.asarray(p0, dtype=float), (n_agents,))
    p0, d = design_initial_gains(T, p0, safety_margin)
    world = initial_world(positions, velocities, sets, p0, schedule.max_delay)
    n, r = world.x.shape
    K = int(horizon)
    xs = np.empty((K + 1, n, r))
    vs = np.empty((K + 1, n, r))
    ps = np.empty((K + 1, n))
    bs = np.empty((K + 1, n))
    es = np.empty((K + 1, n))
    snaps = []
    infeasible = 0
    gain_bad = 0
    for k in range(K + 1):
        try:
            g = normalize_weights(schedule.snapshot(k), d, schedule.mu_c)
            u, e, b = controls(world, g, sets, T)
            xs[k], vs[k], ps[k], bs[k], es[k] = world.x, world.v, world.p, b, e
            snaps.append(g)
            for i in range(n):
                if not sets[i].contains(world.v[i]):
                    infeasible += 1
            p = world.p
            gain_bad += int(np.sum(~((p * T > 0) & (p <= b) & (b * T < 1) & (p**2 > 4 * d))))
            if k == K:
                break
            p_next = np.array([update_gain(p[i], b[i], T, policy) for i in range(n)])
            x_next = world.x + world.v * T
            world.buffer.push(x_next)
            world = World(k + 1, x_next, u, p_next, world.buffer)
        except StepError:
            raise
        except Exception as exc:
            raise StepError(k, exc) from exc
    if infeasible or gain_bad:
        log.warning("run finished with %d infeasible velocities, %d gain-chain violations",
                    infeasible, gain_bad)
    return Trajectory(xs, vs, ps, bs, es, consensus_diameter(xs), snaps, d, float(T),
                      schedule.max_delay, config_hash, infeasible, gain_bad)


def run(config) -> Trajectory:
    """Simulate a validated :class:`~vcconsensus.config.ScenarioConfig`."""
    return simulate(
        config.positions, config.velocities, config.agent_sets, config.p0,
        config.schedule, config.T, config.horizon, resolve_policy(config.gain_policy),
        config.safety_margin, config.config_hash,
    )
