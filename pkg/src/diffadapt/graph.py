"""Network topologies and combination-matrix construction.

Weight matrices are indexed ``W[l, k]``: the weight node ``k`` assigns to
information arriving from neighbor ``l``.  Combination matrices for the
estimates (``A``, ``P1``, ``P2``) therefore have unit column sums, while the
gradient-combination matrix ``S`` (``C``) has unit row sums.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

STOCHASTIC_TOL = 1e-12


class TopologyError(RuntimeError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Network:
    """Undirected graph with self-loops; ``adjacency[k, k]`` is always true."""

    adjacency: np.ndarray
    positions: np.ndarray | None = None

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or adj.shape[0] < 1:
            raise ValueError(f"adjacency must be a non-empty square matrix, got {adj.shape}")
        if not np.array_equal(adj, adj.T):
            raise ValueError("adjacency must be symmetric")
        adj = adj.copy()
        np.fill_diagonal(adj, True)
        object.__setattr__(self, "adjacency", _frozen(adj))
        if self.positions is not None:
            pos = np.asarray(self.positions, dtype=float)
            if pos.shape != (adj.shape[0], 2):
                raise ValueError(f"positions must have shape ({adj.shape[0]}, 2), got {pos.shape}")
            object.__setattr__(self, "positions", _frozen(pos))

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        """Neighborhood sizes ``|N_k|``, counting the node itself."""
        return self.adjacency.sum(axis=0)

    def neighbors(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[:, k])

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adjacency, k=1))
        return [(int(a), int(b)) for a, b in zip(i, j)]

    def is_connected(self) -> bool:
        seen = np.zeros(self.n_nodes, dtype=bool)
        seen[0] = True
        queue = deque([0])
        while queue:
            k = queue.popleft()
            for l in self.neighbors(k):
                if not seen[l]:
                    seen[l] = True
                    queue.append(l)
        return bool(seen.all())

    @classmethod
    def from_edges(cls, n_nodes: int, edges: Iterable[Sequence[int]], positions=None) -> "Network":
        adj = np.eye(n_nodes, dtype=bool)
        for i, j in edges:
            if not (0 <= i < n_nodes and 0 <= j < n_nodes):
                raise ValueError(f"edge ({i}, {j}) out of range for {n_nodes} nodes")
            adj[i, j] = adj[j, i] = True
        return cls(adj, positions)

    def to_dict(self) -> dict:
        doc = {"n_nodes": self.n_nodes, "edges": [list(e) for e in self.edges()]}
        if self.positions is not None:
            doc["positions"] = self.positions.tolist()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "Network":
        unknown = set(doc) - {"n_nodes", "edges", "positions"}
        if unknown:
            raise ValueError(f"unknown network keys: {sorted(unknown)}")
        return cls.from_edges(int(doc["n_nodes"]), doc.get("edges", []), doc.get("positions"))


def complete_graph(n_nodes: int) -> Network:
    return Network(np.ones((n_nodes, n_nodes), dtype=bool))


def path_graph(n_nodes: int) -> Network:
    return Network.from_edges(n_nodes, [(k, k + 1) for k in range(n_nodes - 1)])


def geometric_topology(n_nodes: int, radius: float, seed: int, max_retries: int = 100) -> Network:
    """Random geometric graph on the unit square, redrawn until connected.

    Nodes are linked when their Euclidean distance is at most ``radius``.
    """
    if n_nodes < 1:
        raise ValueError("n_nodes must be >= 1")
    if radius <= 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        pos = rng.uniform(0.0, 1.0, size=(n_nodes, 2))
        dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        net = Network(dist <= radius, pos)
        if net.is_connected():
            return net
    raise TopologyError(
        f"no connected geometric graph with n_nodes={n_nodes}, radius={radius} "
        f"after {max_retries} draws"
    )


def averaging_weights(net: Network) -> np.ndarray:
    """``a[l, k] = 1/|N_k|`` on the neighborhood of ``k``; columns sum to one."""
    adj = net.adjacency.astype(float)
    return adj / net.degrees[None, :]


def metropolis_weights(net: Network) -> np.ndarray:
    """Symmetric, doubly stochastic Metropolis rule with self-inclusive degrees."""
    deg = net.degrees
    w = np.where(net.adjacency, 1.0 / np.maximum(deg[:, None], deg[None, :]), 0.0)
    np.fill_diagonal(w, 0.0)
    np.fill_diagonal(w, 1.0 - w.sum(axis=0))
    return w


@dataclass(frozen=True)
class CombinationMatrices:
    """The triple ``(P1, P2, S)`` and optional per-node step sizes ``mu``."""

    p1: np.ndarray
    p2: np.ndarray
    s: np.ndarray
    mu: np.ndarray | None = field(default=None)

    def __post_init__(self):
        for name in ("p1", "p2", "s"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError(f"{name} must be square, got shape {m.shape}")
            object.__setattr__(self, name, _frozen(m))
        if not (self.p1.shape == self.p2.shape == self.s.shape):
            raise ValueError("p1, p2 and s must share a shape")
        if self.mu is not None:
            mu = np.broadcast_to(np.asarray(self.mu, dtype=float), (self.n_nodes,))
            object.__setattr__(self, "mu", _frozen(mu))

    @property
    def n_nodes(self) -> int:
        return self.p1.shape[0]

    def with_mu(self, mu) -> "CombinationMatrices":
        return CombinationMatrices(self.p1, self.p2, self.s, mu)


@dataclass(frozen=True)
class Violation:
    matrix: str
    index: tuple[int, ...]
    kind: str
    residual: float

    def __str__(self) -> str:
        return f"{self.matrix}{list(self.index)}: {self.kind} (residual {self.residual:.3g})"


def _stochastic_violations(name, m, axis, tol):
    # axis=0: columns must sum to one; axis=1: rows must.
    out = []
    sums = m.sum(axis=axis)
    label = "column-sum" if axis == 0 else "row-sum"
    for idx in np.flatnonzero(np.abs(sums - 1.0) > tol):
        out.append(Violation(name, (int(idx),), label, float(abs(sums[idx] - 1.0))))
    return out


def validate(cm: CombinationMatrices, net: Network, tol: float = STOCHASTIC_TOL) -> list[Violation]:
    """Check nonnegativity, stochasticity and sparsity of ``cm`` against ``net``."""
    if cm.n_nodes != net.n_nodes:
        raise ValueError(f"matrices are {cm.n_nodes}x{cm.n_nodes} but network has {net.n_nodes} nodes")
    out: list[Violation] = []
    for name, m, axis in (("p1", cm.p1, 0), ("p2", cm.p2, 0), ("s", cm.s, 1)):
        for l, k in zip(*np.nonzero(m < -tol)):
            out.append(Violation(name, (int(l), int(k)), "negative", float(-m[l, k])))
        out.extend(_stochastic_violations(name, m, axis, tol))
        for l, k in zip(*np.nonzero((m != 0) & ~net.adjacency)):
            out.append(Violation(name, (int(l), int(k)), "non-edge", float(abs(m[l, k]))))
    if cm.mu is not None:
        for k in np.flatnonzero(~(cm.mu > 0)):
            out.append(Violation("mu", (int(k),), "non-positive", float(cm.mu[k])))
    return out


def check_column_stochastic(a: np.ndarray, name: str = "A", tol: float = STOCHASTIC_TOL) -> None:
    a = np.asarray(a, dtype=float)
    bad = _stochastic_violations(name, a, 0, tol)
    if (a < -tol).any() or bad:
        raise ValueError(f"{name} is not a nonnegative column-stochastic matrix: {[str(v) for v in bad]}")


def check_row_stochastic(c: np.ndarray, name: str = "C", tol: float = STOCHASTIC_TOL) -> None:
    c = np.asarray(c, dtype=float)
    bad = _stochastic_violations(name, c, 1, tol)
    if (c < -tol).any() or bad:
        raise ValueError(f"{name} is not a nonnegative row-stochastic matrix: {[str(v) for v in bad]}")


STRATEGY_KINDS = ("atc", "cta", "noncooperative")


def strategy_matrices(kind: str, a: np.ndarray | None = None, c: np.ndarray | None = None) -> CombinationMatrices:
    """Map a named cooperation mode onto ``(P1, P2, S)``.

    ATC is ``(I, A, C)``, CTA is ``(A, I, C)`` and the non-cooperative mode
    ignores ``a`` and ``c`` entirely.
    """
    if kind in ("noncooperative", "noncoop"):
        if a is None and c is None:
            raise ValueError("noncooperative needs a or c to infer the network size")
        n = np.asarray(a if a is not None else c).shape[0]
        eye = np.eye(n)
        return CombinationMatrices(eye, eye, eye)
    if kind not in STRATEGY_KINDS:
        raise ValueError(f"unknown strategy kind {kind!r}")
    if a is None or c is None:
        raise ValueError(f"{kind} requires both a and c")
    check_column_stochastic(a, "A")
    check_row_stochastic(c, "C")
    eye = np.eye(np.asarray(a).shape[0])
    if kind == "atc":
        return CombinationMatrices(eye, a, c)
    return CombinationMatrices(a, eye, c)
