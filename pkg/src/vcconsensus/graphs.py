"""Switching directed graphs with per-edge delays.

Convention: ``weights[i, j] = a_ij > 0`` means agent ``i`` receives agent
``j``'s position, i.e. the directed edge ``j -> i``. ``delays[i, j]`` is the
age (in steps) of that position when it is used.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.sparse.csgraph import connected_components

from .errors import GraphError, InconsistentDimensions, WindowBoundViolation


@dataclass(frozen=True, eq=False)
class GraphSnapshot:
    weights: NDArray
    delays: NDArray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        d = np.array(self.delays, dtype=np.int64)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or d.shape != w.shape:
            raise InconsistentDimensions(f"weights {w.shape} / delays {d.shape}")
        if np.any(w < 0) or np.any(np.diag(w) != 0):
            raise GraphError("weights must be nonnegative with a zero diagonal")
        if np.any(d < 0):
            raise GraphError("delays must be nonnegative")
        d[w == 0] = 0
        w.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "delays", d)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def empty(cls, n: int) -> "GraphSnapshot":
        return cls(np.zeros((n, n)), np.zeros((n, n), dtype=np.int64))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Sequence]) -> "GraphSnapshot":
        """Build from ``(src, dst, weight, delay_steps)`` tuples (0-based)."""
        w = np.zeros((n, n))
        d = np.zeros((n, n), dtype=np.int64)
        for src, dst, weight, delay in edges:
            if not (0 <= src < n and 0 <= dst < n) or src == dst:
                raise GraphError(f"bad edge {src}->{dst} for n={n}")
            w[dst, src] = weight
            d[dst, src] = delay
        return cls(w, d)

    def edges(self) -> list[tuple[int, int, float, int]]:
        dst, src = np.nonzero(self.weights)
        return [
            (int(j), int(i), float(self.weights[i, j]), int(self.delays[i, j]))
            for i, j in sorted(zip(dst, src), key=lambda e: (e[1], e[0]))
        ]

    def edge_set(self) -> frozenset[tuple[int, int]]:
        return frozenset((s, t) for s, t, _, _ in self.edges())

    def check(self, mu_c: float, max_delay: int) -> None:
        nz = self.weights > 0
        if np.any(self.weights[nz] < mu_c):
            raise GraphError(f"edge weight {self.weights[nz].min()} below floor {mu_c}")
        if np.any(self.delays > max_delay):
            raise GraphError(f"delay {self.delays.max()} exceeds bound {max_delay}")


def laplacian(g: GraphSnapshot) -> NDArray:
    L = -np.array(g.weights)
    L[np.diag_indices(g.n)] = g.weights.sum(axis=1)
    return L


def union_graph(snapshots: Sequence[GraphSnapshot]) -> GraphSnapshot:
    """Edge-set union; weights are the per-edge maximum, delays are dropped."""
    if not snapshots:
        raise GraphError("union of an empty collection")
    n = snapshots[0].n
    if any(s.n != n for s in snapshots):
        raise InconsistentDimensions(f"snapshot sizes {sorted({s.n for s in snapshots})}")
    w = np.max(np.stack([s.weights for s in snapshots]), axis=0)
    return GraphSnapshot(w, np.zeros((n, n), dtype=np.int64))


def has_directed_spanning_tree(g: GraphSnapshot) -> tuple[bool, frozenset[int]]:
    """Whether some node reaches every other node; also returns all such roots.

    A spanning tree exists exactly when the condensation (strongly connected
    components) has a single source component; its members are the roots.
    """
    n = g.n
    flow = (g.weights.T > 0).astype(np.int8)  # flow[j, i]: edge j -> i
    ncomp, labels = connected_components(flow, directed=True, connection="strong")
    src, dst = np.nonzero(flow)
    has_incoming = np.zeros(ncomp, dtype=bool)
    cross = labels[src] != labels[dst]
    has_incoming[labels[dst[cross]]] = True
    sources = np.flatnonzero(~has_incoming)
    if len(sources) != 1:
        return False, frozenset()
    return True, frozenset(int(i) for i in np.flatnonzero(labels == sources[0]))


# --------------------------------------------------------------------------
# schedules
# --------------------------------------------------------------------------

class GraphSchedule:
    """Time-indexed graph sequence with a joint-connectivity window structure.

    Subclasses implement :meth:`snapshot`. Windows are either of fixed length
    (``window_length``) or, when that is ``None``, found greedily: each window
    is the shortest run of snapshots, starting where the previous one ended,
    whose union has a directed spanning tree.
    """

    def __init__(self, n: int, eta: int, mu_c: float, max_delay: int,
                 window_length: int | None = None):
        if eta < 1:
            raise GraphError("window bound eta must be a positive integer")
        if not mu_c > 0:
            raise GraphError("weight floor mu_c must be positive")
        self.n = int(n)
        self.eta = int(eta)
        self.mu_c = float(mu_c)
        self.max_delay = int(max_delay)
        self.window_length = window_length

    def snapshot(self, k: int) -> GraphSnapshot:
        raise NotImplementedError

    def window_starts(self, horizon: int) -> list[int] | None:
        """``k_0 = 0, k_1, ...`` of all windows ending at or before ``horizon``.

        The list ends with the end of the last full window. ``None`` means the
        greedy search found no admissible window.
        """
        if self.window_length is not None:
            L = int(self.window_length)
            if L > self.eta or L < 1:
                raise WindowBoundViolation(f"window length {L} outside (0, {self.eta}]")
            return list(range(0, horizon + 1, L))
        starts = [0]
        while True:
            k0 = starts[-1]
            found = None
            for length in range(1, self.eta + 1):
                if k0 + length > horizon:
                    return starts
                ok, _ = has_directed_spanning_tree(
                    union_graph([self.snapshot(k) for k in range(k0, k0 + length)])
                )
                if ok:
                    found = k0 + length
                    break
            if found is None:
                return None
            starts.append(found)


class PeriodicSchedule(GraphSchedule):
    def __init__(self, snapshots: Sequence[GraphSnapshot], eta: int, mu_c: float,
                 max_delay: int, window_length: int | None = None):
        if not snapshots:
            raise GraphError("periodic schedule needs at least one snapshot")
        n = snapshots[0].n
        if any(s.n != n for s in snapshots):
            raise InconsistentDimensions("snapshots disagree on n")
        super().__init__(n, eta, mu_c, max_delay, window_length)
        self.snapshots = list(snapshots)

    def snapshot(self, k: int) -> GraphSnapshot:
        return self.snapshots[k % len(self.snapshots)]


class RandomSchedule(GraphSchedule):
    """Seeded switching process with a spanning tree inside every window.

    Each window of ``eta`` steps receives the edges of a random spanning
    tree scattered over its steps, plus independent extra edges with
    probability ``extra_edge_prob`` per ordered pair. Snapshots are generated
    per window from ``(seed, window index)`` so random access is cheap and
    deterministic.
    """

    def __init__(self, n: int, eta: int, mu_c: float, max_delay: int, seed: int,
                 weight_range: tuple[float, float] = (0.1, 0.5),
                 extra_edge_prob: float = 0.05, time_varying_delays: bool = False):
        super().__init__(n, eta, mu_c, max_delay, window_length=eta)
        lo, hi = weight_range
        if lo < mu_c or hi < lo:
            raise GraphError(f"weight range {weight_range} incompatible with floor {mu_c}")
        self.seed = int(seed)
        self.weight_range = (float(lo), float(hi))
        self.extra_edge_prob = float(extra_edge_prob)
        self.time_varying_delays = bool(time_varying_delays)
        rng = np.random.default_rng([self.seed, 0x5EED])
        self._edge_delays = rng.integers(0, self.max_delay + 1, size=(n, n))
        self._window = lru_cache(maxsize=256)(self._make_window)

    def _make_window(self, m: int) -> tuple[GraphSnapshot, ...]:
        n, L = self.n, self.eta
        rng = np.random.default_rng([self.seed, m])
        w = np.zeros((L, n, n))
        perm = rng.permutation(n)
        for idx in range(1, n):
            parent = perm[rng.integers(0, idx)]
            w[rng.integers(0, L), perm[idx], parent] = rng.uniform(*self.weight_range)
        extra = rng.random((L, n, n)) < self.extra_edge_prob
        extra[:, np.arange(n), np.arange(n)] = False
        fresh = extra & (w == 0)
        w[fresh] = rng.uniform(*self.weight_range, size=int(fresh.sum()))
        if self.time_varying_delays:
            delays = rng.integers(0, self.max_delay + 1, size=(L, n, n))
        else:
            delays = np.broadcast_to(self._edge_delays, (L, n, n))
        return tuple(GraphSnapshot(w[s], delays[s]) for s in range(L))

    def snapshot(self, k: int) -> GraphSnapshot:
        return self._window(k // self.eta)[k % self.eta]


def first_disconnected_window(schedule: GraphSchedule, horizon: int) -> tuple[int, int] | None:
    """``(k_m, k_{m+1})`` of the first window whose union lacks a spanning tree.

    ``(0, horizon)`` is returned when the greedy window search fails outright.
    """
    starts = schedule.window_starts(horizon)
    if starts is None:
        return 0, horizon
    if len(starts) < 2:
        raise GraphError(f"horizon {horizon} does not cover a full window")
    for k0, k1 in zip(starts[:-1], starts[1:]):
        if not 0 < k1 - k0 <= schedule.eta:
            raise WindowBoundViolation(f"window [{k0}, {k1}) longer than eta={schedule.eta}")
        ok, _ = has_directed_spanning_tree(union_graph([schedule.snapshot(k) for k in range(k0, k1)]))
        if not ok:
            return k0, k1
    return None


def verify_joint_connectivity(schedule: GraphSchedule, horizon: int) -> bool:
    """Every full window inside ``[0, horizon)`` has a spanning-tree union."""
    return first_disconnected_window(schedule, horizon) is None


def ring_schedule(weight: float = 0.5) -> PeriodicSchedule:
    """Rotating single edges 0->1, 1->2, 2->3, 3->0 with delays 1, 2, 3, 3."""
    ring = [(0, 1, 1), (1, 2, 2), (2, 3, 3), (3, 0, 3)]
    snaps = [GraphSnapshot.from_edges(4, [(s, t, weight, tau)]) for s, t, tau in ring]
    return PeriodicSchedule(snaps, eta=4, mu_c=weight, max_delay=3, window_length=4)
