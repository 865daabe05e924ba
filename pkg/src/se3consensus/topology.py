"""Directed interaction graphs and per-agent switching schedules.

Edge ``(i, j)`` means agent ``i`` receives information from agent ``j``
(``j`` is in the neighborhood of ``i``). Every graph carries all self-loops.
"""

from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigInvalid, NotStronglyConnected, OutOfHorizon


@dataclass(frozen=True, eq=False)
class Digraph:
    """Weighted digraph stored as its adjacency matrix ``A = [a_ij]``.

    ``a_ij > 0`` iff ``(i, j)`` is an edge. The diagonal is strictly positive.
    """

    adjacency: np.ndarray

    def __post_init__(self):
        A = np.array(self.adjacency, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {A.shape}")
        if np.any(A < 0) or not np.all(np.isfinite(A)):
            raise ValueError("adjacency weights must be finite and nonnegative")
        if np.any(np.diag(A) <= 0):
            raise ValueError("every node needs a positively weighted self-loop")
        A.setflags(write=False)
        object.__setattr__(self, "adjacency", A)

    @classmethod
    def from_edges(
        cls,
        n: int,
        edges: Iterable[tuple[int, int]],
        weights: Mapping[tuple[int, int], float] | None = None,
        self_weight: float = 1.0,
    ) -> "Digraph":
        A = np.zeros((n, n))
        np.fill_diagonal(A, self_weight)
        for i, j in edges:
            A[i, j] = 1.0 if weights is None else weights.get((i, j), 1.0)
        if weights:
            for (i, j), w in weights.items():
                if A[i, j] == 0 and i != j:
                    raise ValueError(f"weight given for non-edge {(i, j)}")
                A[i, j] = w
        return cls(A)

    @classmethod
    def complete(cls, n: int, weight: float = 1.0) -> "Digraph":
        return cls(np.full((n, n), weight))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def edges(self) -> frozenset[tuple[int, int]]:
        return frozenset(zip(*map(lambda a: a.tolist(), np.nonzero(self.adjacency))))

    @property
    def weights(self) -> dict[tuple[int, int], float]:
        return {e: float(self.adjacency[e]) for e in self.edges}

    def neighbors(self, i: int) -> list[int]:
        return np.flatnonzero(self.adjacency[i]).tolist()

    def __eq__(self, other) -> bool:
        return isinstance(other, Digraph) and np.array_equal(self.adjacency, other.adjacency)

    def __repr__(self) -> str:
        off = sorted(e for e in self.edges if e[0] != e[1])
        return f"Digraph(n={self.n}, edges={off})"


def neighborhood_index(i: int, neighbors: Iterable[int], n: int) -> int:
    """Bitmask code of a neighborhood over the non-self nodes in ascending order."""
    others = [j for j in range(n) if j != i]
    nb = set(neighbors)
    return sum(1 << k for k, j in enumerate(others) if j in nb)


def _reach_from(succ: list[list[int]], start: int) -> set[int]:
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for w in succ[u]:
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return seen


def is_strongly_connected(g: Digraph) -> bool:
    n = g.n
    succ = [g.neighbors(i) for i in range(n)]
    pred = [np.flatnonzero(g.adjacency[:, j]).tolist() for j in range(n)]
    return len(_reach_from(succ, 0)) == n and len(_reach_from(pred, 0)) == n


def centers(g: Digraph) -> list[int]:
    """Nodes reachable by a directed path from every node."""
    n = g.n
    pred = [np.flatnonzero(g.adjacency[:, j]).tolist() for j in range(n)]
    return [c for c in range(n) if len(_reach_from(pred, c)) == n]


def is_quasi_strongly_connected(g: Digraph) -> bool:
    return bool(centers(g))


def laplacian(g: Digraph) -> np.ndarray:
    """``L = D - A`` with ``D = diag(row sums of A)``; self-loop weights cancel."""
    A = g.adjacency
    return np.diag(A.sum(axis=1)) - A


def left_perron_weights(L: np.ndarray) -> np.ndarray:
    """Positive ``xi`` with ``xi^T L = 0``, normalized to sum to one.

    For a strongly connected digraph ``diag(xi) L`` has zero row and column sums,
    so its symmetric part is an undirected Laplacian and hence positive semidefinite.

    Raises:
        NotStronglyConnected: if the graph encoded by ``L`` is not strongly connected.
    """
    L = np.asarray(L, dtype=float)
    A = np.where(-L > 0, -L, 0.0)
    np.fill_diagonal(A, 1.0)
    if not is_strongly_connected(Digraph(A)):
        raise NotStronglyConnected("left Perron weights require a strongly connected graph")
    _, _, Vt = np.linalg.svd(L.T)
    xi = Vt[-1]
    xi = xi / xi.sum()
    if np.any(xi <= 0):
        raise NotStronglyConnected("null vector of L^T is not positive")
    return xi


def random_qsc_graph(n: int, rng: np.random.Generator) -> Digraph:
    """Random tree adjacency plus an independent uniform {0,1} mask.

    The tree points every node toward a random root, so the root is a center and
    the result is quasi-strongly connected. Off-diagonal entries lie in {0, 1, 2};
    the self-loop weight is fixed at 1.
    """
    if n < 2:
        raise ValueError("need at least two agents")
    order = rng.permutation(n)
    tree = np.zeros((n, n))
    for k in range(1, n):
        child = order[k]
        parent = order[rng.integers(0, k)]
        tree[child, parent] = 1.0
    mask = rng.integers(0, 2, size=(n, n)).astype(float)
    A = tree + mask
    np.fill_diagonal(A, 1.0)
    return Digraph(A)


Signal = tuple[tuple[float, frozenset[int]], ...]


@dataclass(frozen=True, eq=False)
class SwitchingSchedule:
    """Per-agent piecewise-constant, right-continuous neighborhood signals.

    Attributes:
        signals: for each agent, ``(switch_time, neighbors)`` pairs in increasing time.
            The first entry fixes the neighborhood at the horizon start.
        weights: master positive weight table ``A'`` of the complete graph.
        dwell_floor: every per-agent gap between consecutive switches must exceed it.
        horizon: end of the time window on which the schedule is defined.
    """

    signals: tuple[Signal, ...]
    weights: np.ndarray
    dwell_floor: float = 0.0
    horizon: float = np.inf

    def __post_init__(self):
        sig = tuple(
            tuple((float(t), frozenset(int(j) for j in nb) | {i}) for t, nb in s)
            for i, s in enumerate(self.signals)
        )
        object.__setattr__(self, "signals", sig)
        W = np.array(self.weights, dtype=float)
        n = len(sig)
        if W.shape != (n, n) or np.any(W <= 0):
            raise ConfigInvalid(f"weight table must be a positive {n}x{n} matrix", key="weights")
        W.setflags(write=False)
        object.__setattr__(self, "weights", W)
        starts = {s[0][0] for s in sig if s}
        if any(not s for s in sig) or len(starts) != 1:
            raise ConfigInvalid("every agent needs an initial neighborhood at a common start time", key="records")
        for i, s in enumerate(sig):
            times = [t for t, _ in s]
            for a, b in zip(times, times[1:]):
                if not b - a > self.dwell_floor:
                    raise ConfigInvalid(
                        f"agent {i} switches at {a} and {b}, gap not above dwell floor {self.dwell_floor}",
                        key="dwell_floor",
                    )
            for _, nb in s:
                if any(j < 0 or j >= n for j in nb):
                    raise ConfigInvalid(f"agent {i} has a neighbor outside 0..{n - 1}", key="records")
        object.__setattr__(self, "_times", tuple([t for t, _ in s] for s in sig))

    @property
    def n(self) -> int:
        return len(self.signals)

    @property
    def start(self) -> float:
        return self.signals[0][0][0]

    @classmethod
    def constant(cls, g: Digraph, horizon: float = np.inf, start: float = 0.0) -> "SwitchingSchedule":
        W = np.where(g.adjacency > 0, g.adjacency, 1.0)
        sig = [((start, frozenset(g.neighbors(i))),) for i in range(g.n)]
        return cls(tuple(sig), W, 0.0, horizon)

    @classmethod
    def from_graph_sequence(
        cls,
        times: Sequence[float],
        graphs: Sequence[Digraph],
        weights: np.ndarray | None = None,
        dwell_floor: float = 0.0,
        horizon: float = np.inf,
    ) -> "SwitchingSchedule":
        """System-wide switches: graph ``graphs[k]`` is active on ``[times[k], times[k+1])``.

        An agent whose neighborhood does not change at a switch time records no switch.
        Without ``weights`` the table is taken from the graphs, which must agree on shared edges.
        """
        n = graphs[0].n
        if weights is None:
            W = np.ones((n, n))
            for g in graphs:
                A = g.adjacency
                clash = (A > 0) & (W != 1.0) & (W != A)
                if np.any(clash):
                    raise ConfigInvalid("graphs disagree on a shared edge weight", key="weights")
                W = np.where(A > 0, A, W)
            weights = W
        sig: list[list[tuple[float, frozenset[int]]]] = [[] for _ in range(n)]
        for t, g in zip(times, graphs):
            for i in range(n):
                nb = frozenset(g.neighbors(i))
                if not sig[i] or sig[i][-1][1] != nb:
                    sig[i].append((t, nb))
        return cls(tuple(tuple(s) for s in sig), weights, dwell_floor, horizon)

    @classmethod
    def periodic(
        cls,
        graphs: Sequence[Digraph],
        dwell: float,
        horizon: float,
        start: float = 0.0,
        weights: np.ndarray | None = None,
        dwell_floor: float | None = None,
    ) -> "SwitchingSchedule":
        """Cycle through ``graphs``, each active for ``dwell`` seconds."""
        count = int(np.ceil((horizon - start) / dwell - 1e-9))
        times = [start + k * dwell for k in range(count)]
        seq = [graphs[k % len(graphs)] for k in range(count)]
        floor = 0.5 * dwell if dwell_floor is None else dwell_floor
        return cls.from_graph_sequence(times, seq, weights, floor, horizon)

    @classmethod
    def from_records(
        cls,
        n: int,
        records: Iterable[Mapping],
        weights: np.ndarray,
        dwell_floor: float = 0.0,
        horizon: float = np.inf,
    ) -> "SwitchingSchedule":
        """Build from ``{agent, time, neighbors}`` records (the schedule-file format)."""
        sig: list[list[tuple[float, frozenset[int]]]] = [[] for _ in range(n)]
        for rec in sorted(records, key=lambda r: (int(r["agent"]), float(r["time"]))):
            a = int(rec["agent"])
            if not 0 <= a < n:
                raise ConfigInvalid(f"record agent {a} outside 0..{n - 1}", key="records")
            sig[a].append((float(rec["time"]), frozenset(int(j) for j in rec["neighbors"])))
        return cls(tuple(tuple(s) for s in sig), weights, dwell_floor, horizon)

    def to_records(self) -> list[dict]:
        return [
            {"agent": i, "time": t, "neighbors": sorted(nb - {i})}
            for i, s in enumerate(self.signals)
            for t, nb in s
        ]

    def _check_time(self, t: float) -> None:
        if t < self.start or t > self.horizon:
            raise OutOfHorizon(f"time {t} outside schedule horizon [{self.start}, {self.horizon}]")

    def neighborhood(self, i: int, t: float) -> frozenset[int]:
        self._check_time(t)
        k = bisect.bisect_right(self._times[i], t) - 1
        return self.signals[i][k][1]

    def graph_at(self, t: float) -> Digraph:
        """System graph: row ``i`` carries the current neighborhood of agent ``i``."""
        self._check_time(t)
        A = np.zeros((self.n, self.n))
        for i in range(self.n):
            nb = sorted(self.signals[i][bisect.bisect_right(self._times[i], t) - 1][1])
            A[i, nb] = self.weights[i, nb]
        return Digraph(A)

    def switch_times(self, agent: int | None = None) -> list[float]:
        """Switch times of one agent, or of the system (union over agents)."""
        if agent is not None:
            return self._times[agent][1:]
        return sorted({t for ts in self._times for t in ts[1:]})

    def union_graph(self, t1: float, t2: float) -> Digraph:
        """Union of the graphs active on ``[t1, t2)``."""
        if not t1 < t2:
            raise ValueError("union window needs t1 < t2")
        probes = [t1] + [t for t in self.switch_times() if t1 < t < t2]
        A = np.zeros((self.n, self.n))
        for t in probes:
            A = np.maximum(A, self.graph_at(t).adjacency)
        return Digraph(A)

    def is_uniformly_connected(self, window: float, mode: str = "strong") -> bool:
        """Whether every window union ``[t, t + window)`` inside the horizon is connected.

        The union over ``[t, t + window)`` only grows as ``t`` moves from one switch
        time to the next, so anchoring windows at the start and at switch times is exact.
        """
        if window <= 0:
            raise ValueError("window must be positive")
        check = {"strong": is_strongly_connected, "quasi": is_quasi_strongly_connected}[mode]
        anchors = [self.start] + self.switch_times()
        anchors = [a for a in anchors if a + window <= self.horizon + 1e-12]
        if not anchors:
            end = self.horizon if np.isfinite(self.horizon) else self.start + window
            return check(self.union_graph(self.start, end))
        return all(check(self.union_graph(a, a + window)) for a in anchors)

    def shifted(self, dt: float) -> "SwitchingSchedule":
        sig = tuple(tuple((t + dt, nb) for t, nb in s) for s in self.signals)
        return SwitchingSchedule(sig, self.weights, self.dwell_floor, self.horizon + dt)


def is_uniformly_connected(s: SwitchingSchedule, window: float, mode: str = "strong") -> bool:
    return s.is_uniformly_connected(window, mode)


def union_graph(s: SwitchingSchedule, t1: float, t2: float) -> Digraph:
    return s.union_graph(t1, t2)


def graph_at(s: SwitchingSchedule, t: float) -> Digraph:
    return s.graph_at(t)
