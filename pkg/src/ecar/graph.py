"""Areal adjacency structures, the Leroux CAR distribution and its graph
Fourier representation.

All Gaussian computations on a graph go through :class:`SpectralBasis`: the
Leroux precision ``((1 - lam) I + lam R) / sigma2`` is diagonal in the
eigenbasis of the neighborhood matrix ``R``, so densities and draws cost
O(n) once the basis is known.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from ._errors import NumericalError

__all__ = [
    "AdjacencyGraph",
    "SpectralBasis",
    "LerouxParams",
    "build_lattice_adjacency",
    "build_adjacency_from_edges",
    "neighborhood_matrix",
    "spectral_decompose",
    "spectral_basis",
    "graph_fourier",
    "inverse_graph_fourier",
    "car_log_density",
    "car_sample",
]

_ZERO_TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class AdjacencyGraph:
    """Undirected graph on ``n`` regions with 0-based, sorted edge pairs."""

    n: int
    edges: tuple[tuple[int, int], ...]
    neighbor_counts: tuple[int, ...] = field(init=False, compare=False)

    def __post_init__(self):
        counts = [0] * self.n
        for i, j in self.edges:
            if not (0 <= i < j < self.n):
                raise ValueError(f"edge ({i}, {j}) is not a canonical pair for n={self.n}")
            counts[i] += 1
            counts[j] += 1
        object.__setattr__(self, "neighbor_counts", tuple(counts))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def adjacency(self) -> np.ndarray:
        """Dense 0/1 adjacency matrix."""
        a = np.zeros((self.n, self.n))
        if self.edges:
            ij = np.asarray(self.edges)
            a[ij[:, 0], ij[:, 1]] = 1.0
            a[ij[:, 1], ij[:, 0]] = 1.0
        return a

    def neighbors(self) -> list[np.ndarray]:
        nb: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in self.edges:
            nb[i].append(j)
            nb[j].append(i)
        return [np.asarray(sorted(v), dtype=int) for v in nb]

    def n_components(self) -> int:
        if self.n == 0:
            return 0
        if not self.edges:
            return self.n
        ij = np.asarray(self.edges)
        m = csr_matrix((np.ones(len(ij)), (ij[:, 0], ij[:, 1])), shape=(self.n, self.n))
        return int(connected_components(m, directed=False)[0])

    def is_connected(self) -> bool:
        return self.n_components() == 1

    def coloring(self) -> list[np.ndarray]:
        """Greedy proper vertex coloring; sites sharing a color are non-adjacent."""
        color = -np.ones(self.n, dtype=int)
        nbrs = self.neighbors()
        for i in np.argsort(-np.asarray(self.neighbor_counts), kind="stable"):
            used = {color[j] for j in nbrs[i]}
            c = 0
            while c in used:
                c += 1
            color[i] = c
        return [np.flatnonzero(color == c) for c in range(color.max() + 1)]


def build_lattice_adjacency(rows: int, cols: int) -> AdjacencyGraph:
    """Rook adjacency on a ``rows x cols`` grid, sites numbered row-major."""
    if rows < 1 or cols < 1:
        raise ValueError(f"lattice dimensions must be positive, got {rows}x{cols}")
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                edges.append((i, i + 1))
            if r + 1 < rows:
                edges.append((i, i + cols))
    return AdjacencyGraph(rows * cols, tuple(sorted(edges)))


def build_adjacency_from_edges(n: int, edge_list: Iterable[tuple[int, int]]) -> AdjacencyGraph:
    """Graph from 1-based index pairs; duplicates and reversed pairs collapse."""
    if n < 1:
        raise ValueError("n must be positive")
    edges = set()
    for i, j in edge_list:
        i, j = int(i), int(j)
        if not (1 <= i <= n and 1 <= j <= n):
            raise ValueError(f"edge ({i}, {j}) has an index outside [1, {n}]")
        if i == j:
            raise ValueError(f"self-edge at region {i}")
        edges.add((min(i, j) - 1, max(i, j) - 1))
    return AdjacencyGraph(n, tuple(sorted(edges)))


def neighborhood_matrix(graph: AdjacencyGraph) -> np.ndarray:
    """R with diagonal m_i and off-diagonal -a_ij."""
    a = graph.adjacency()
    return np.diag(a.sum(axis=1)) - a


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """Eigendecomposition R = gamma diag(omega) gamma^T with ascending omega."""

    gamma: np.ndarray
    omega: np.ndarray
    col_sums: np.ndarray

    @property
    def n(self) -> int:
        return self.omega.shape[0]

    @property
    def n_zero(self) -> int:
        return int(np.sum(self.omega == 0.0))

    def apply(self, g) -> np.ndarray:
        """Dense ``gamma diag(g(omega)) gamma^T``."""
        d = g(self.omega) if callable(g) else np.asarray(g)
        return (self.gamma * d) @ self.gamma.T


def _fix_signs(gamma: np.ndarray) -> np.ndarray:
    # largest-magnitude entry positive; argmax returns the lowest index on ties
    idx = np.argmax(np.abs(np.round(gamma, 12)), axis=0)
    signs = np.sign(gamma[idx, np.arange(gamma.shape[1])])
    signs[signs == 0] = 1.0
    return gamma * signs


def spectral_decompose(R: np.ndarray) -> SpectralBasis:
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ValueError("neighborhood matrix must be square")
    if not np.allclose(R, R.T, atol=1e-12):
        raise ValueError("neighborhood matrix must be symmetric")
    if not np.allclose(R.sum(axis=1), 0.0, atol=1e-9):
        raise ValueError("neighborhood matrix rows must sum to zero")
    try:
        omega, gamma = np.linalg.eigh(R)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    scale = max(1.0, float(np.abs(omega).max(initial=0.0)))
    omega = np.where(np.abs(omega) < _ZERO_TOL * scale, 0.0, omega)
    if np.any(omega < 0):
        raise ValueError("neighborhood matrix is not positive semi-definite")
    gamma = _fix_signs(gamma)
    return SpectralBasis(_frozen(gamma), _frozen(omega), _frozen(gamma.sum(axis=0)))


@functools.lru_cache(maxsize=16)
def spectral_basis(graph: AdjacencyGraph) -> SpectralBasis:
    """Cached decomposition, shared by every fit on ``graph``."""
    return spectral_decompose(neighborhood_matrix(graph))


def graph_fourier(basis: SpectralBasis, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[0] != basis.n:
        raise ValueError(f"expected leading length {basis.n}, got {v.shape[0]}")
    return basis.gamma.T @ v


def inverse_graph_fourier(basis: SpectralBasis, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[0] != basis.n:
        raise ValueError(f"expected leading length {basis.n}, got {v.shape[0]}")
    return basis.gamma @ v


@dataclass(frozen=True)
class LerouxParams:
    sigma2: float
    lam: float
    mu: np.ndarray | float = 0.0

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")


def leroux_eigen_precision(lam: float, omega: np.ndarray) -> np.ndarray:
    """Per-frequency precision factor 1 - lam + lam * omega."""
    q = 1.0 - lam + lam * omega
    if np.any(q <= 0):
        raise ValueError("Leroux precision is singular (lambda = 1 with a zero eigenvalue)")
    return q


def car_log_density(params: LerouxParams, basis: SpectralBasis, z) -> float:
    z = np.asarray(z, dtype=float)
    if z.shape != (basis.n,):
        raise ValueError(f"z must have length {basis.n}")
    q = leroux_eigen_precision(params.lam, basis.omega) / params.sigma2
    e = basis.gamma.T @ (z - params.mu)
    n = basis.n
    return float(-0.5 * n * np.log(2 * np.pi) + 0.5 * np.log(q).sum() - 0.5 * np.dot(q, e * e))


def car_sample(params: LerouxParams, basis: SpectralBasis, rng_seed=None, size: int | None = None) -> np.ndarray:
    """Draw(s) with covariance sigma2 * gamma [(1-lam) I + lam W]^-1 gamma^T.

    ``rng_seed`` may be an int, a SeedSequence or a Generator.
    """
    rng = np.random.default_rng(rng_seed)
    sd = np.sqrt(params.sigma2 / leroux_eigen_precision(params.lam, basis.omega))
    if size is None:
        return np.asarray(params.mu) + basis.gamma @ (sd * rng.standard_normal(basis.n))
    eps = rng.standard_normal((size, basis.n)) * sd
    return np.asarray(params.mu) + eps @ basis.gamma.T
