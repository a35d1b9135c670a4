"""Weighted undirected graphs, their combinatorial Laplacian and spectrum.

Also hosts the Chebyshev machinery used to apply spectral graph filters
without an eigendecomposition.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh
from scipy.spatial import cKDTree

from .errors import SolverError, ValidationError

EIGEN_GROUP_TOL = 1e-9
LAMBDA_MAX_INFLATION = 1.01


@dataclass(frozen=True)
class GraphTopology:
    """Undirected weighted graph stored as a canonical (i < j) edge list."""

    num_vertices: int
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.num_vertices < 1:
            raise ValidationError("num_vertices must be positive")
        for name in ("rows", "cols", "weights"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_edges(cls, num_vertices: int, edges) -> "GraphTopology":
        """Build from an iterable of ``(i, j, weight)``.

        Both orientations of an edge may be listed as long as the weights
        agree; anything else is rejected.
        """
        seen: dict[tuple[int, int], float] = {}
        for i, j, w in edges:
            i, j, w = int(i), int(j), float(w)
            if i == j:
                raise ValidationError(f"self-loop at vertex {i}")
            if not (0 <= i < num_vertices and 0 <= j < num_vertices):
                raise ValidationError(f"edge ({i}, {j}) out of range for N={num_vertices}")
            if not np.isfinite(w) or w <= 0:
                raise ValidationError(f"edge ({i}, {j}) has non-positive weight {w}")
            key = (min(i, j), max(i, j))
            if key in seen and seen[key] != w:
                raise ValidationError(f"asymmetric weights on edge {key}: {seen[key]} vs {w}")
            seen[key] = w
        keys = sorted(seen)
        rows = np.array([a for a, _ in keys], dtype=np.int64)
        cols = np.array([b for _, b in keys], dtype=np.int64)
        weights = np.array([seen[key] for key in keys], dtype=float)
        return cls(num_vertices, rows, cols, weights)

    @classmethod
    def from_adjacency(cls, W) -> "GraphTopology":
        """Build from a dense or sparse weighted adjacency matrix."""
        W = sp.csr_matrix(W, dtype=float)
        if W.shape[0] != W.shape[1]:
            raise ValidationError(f"adjacency must be square, got {W.shape}")
        if W.nnz and W.data.min() < 0:
            raise ValidationError("adjacency has negative weights")
        asym = abs(W - W.T)
        if asym.nnz and asym.max() > 0:
            raise ValidationError("adjacency is not symmetric")
        if W.diagonal().any():
            raise ValidationError("adjacency has self-loops")
        upper = sp.triu(W, k=1).tocoo()
        keep = upper.data > 0
        return cls(W.shape[0], upper.row[keep].astype(np.int64),
                   upper.col[keep].astype(np.int64), upper.data[keep])

    @property
    def num_edges(self) -> int:
        return int(self.weights.size)

    def adjacency(self) -> sp.csr_matrix:
        n = self.num_vertices
        W = sp.coo_matrix((self.weights, (self.rows, self.cols)), shape=(n, n))
        return (W + W.T).tocsr()

    def edges(self):
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.weights.tolist()))

    def average_degree(self) -> float:
        return 2.0 * self.num_edges / self.num_vertices


@dataclass(frozen=True)
class GraphSpectrum:
    """Eigenpairs of a combinatorial Laplacian, eigenvalues ascending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    lambda_max: float
    n_components: int = 1
    _groups: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        for name in ("eigenvalues", "eigenvectors"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "_groups", tuple(_group_indices(self.eigenvalues)))

    @property
    def num_vertices(self) -> int:
        return self.eigenvalues.size

    @property
    def is_connected(self) -> bool:
        return self.n_components == 1

    def groups(self) -> tuple:
        """Index arrays of eigenvalues equal to within ``EIGEN_GROUP_TOL``."""
        return self._groups

    def group_average(self, values: np.ndarray) -> np.ndarray:
        """Average ``values`` (indexed by eigenvalue on axis 0) within groups."""
        out = np.array(values, dtype=float, copy=True)
        for idx in self._groups:
            if idx.size > 1:
                out[idx] = out[idx].mean(axis=0)
        return out

    def filter_matrix(self, response_values: np.ndarray) -> np.ndarray:
        """Dense ``U diag(r) U^T`` for sampled response values ``r``."""
        U = self.eigenvectors
        return (U * np.asarray(response_values)) @ U.T


def _group_indices(eigenvalues, tol=EIGEN_GROUP_TOL):
    if eigenvalues.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(eigenvalues) > tol) + 1
    return [np.asarray(chunk) for chunk in np.split(np.arange(eigenvalues.size), breaks)]


def build_laplacian(g) -> sp.csr_matrix:
    """Combinatorial Laplacian ``diag(W 1) - W`` as a sparse CSR matrix.

    ``g`` may be a :class:`GraphTopology` or a (dense or sparse) adjacency
    matrix; the latter is validated for symmetry and non-negativity.
    """
    if not isinstance(g, GraphTopology):
        g = GraphTopology.from_adjacency(g)
    W = sp.csr_matrix(g.adjacency())
    W.sort_indices()
    n = W.shape[0]
    indptr = W.indptr + np.arange(n + 1)
    indices = np.empty(W.nnz + n, dtype=np.int64)
    data = np.empty(W.nnz + n)
    for i in range(n):
        lo, hi = W.indptr[i], W.indptr[i + 1]
        out = slice(indptr[i], indptr[i + 1] - 1)
        indices[out] = W.indices[lo:hi]
        data[out] = -W.data[lo:hi]
        # diagonal stored last and summed in storage order, so the CSR
        # product with the ones vector cancels exactly
        indices[indptr[i + 1] - 1] = i
        data[indptr[i + 1] - 1] = np.cumsum(W.data[lo:hi])[-1] if hi > lo else 0.0
    return sp.csr_matrix((data, indices, indptr), shape=(n, n))


def eigendecompose(L) -> GraphSpectrum:
    """Full eigendecomposition of a Laplacian with a reconstruction check."""
    Ld = L.toarray() if sp.issparse(L) else np.asarray(L, dtype=float)
    if Ld.ndim != 2 or Ld.shape[0] != Ld.shape[1]:
        raise ValidationError(f"Laplacian must be square, got {Ld.shape}")
    if not np.allclose(Ld, Ld.T, atol=1e-12 * max(1.0, np.abs(Ld).max(initial=0.0))):
        raise ValidationError("Laplacian is not symmetric")
    try:
        evals, evecs = scipy.linalg.eigh(Ld)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"eigensolver failed: {exc}", residual=np.inf) from exc
    norm = np.linalg.norm(Ld)
    if norm > 0:
        resid = np.linalg.norm((evecs * evals) @ evecs.T - Ld) / norm
        if resid > 1e-8:
            raise SolverError(f"eigendecomposition residual {resid:.3e} above 1e-8", residual=resid)
    evals = np.clip(evals, 0.0, None)
    n_comp = connected_components(sp.csr_matrix(Ld != 0), directed=False)[0]
    # the kernel dimension is the number of components; zero it exactly
    evals[:n_comp] = 0.0
    return GraphSpectrum(evals, evecs, float(evals[-1]) if evals.size else 0.0, int(n_comp))


def gershgorin_bound(L) -> float:
    L = sp.csr_matrix(L)
    return float(np.asarray(abs(L).sum(axis=1)).max(initial=0.0))


def estimate_lambda_max(L, iters: int = 50, seed: int = 0) -> float:
    """Upper bound on the largest Laplacian eigenvalue.

    A Lanczos estimate inflated by 1%, capped by the Gershgorin bound
    ``2 * max degree`` which always holds.
    """
    if iters < 1:
        raise ValidationError("iters must be >= 1")
    L = sp.csr_matrix(L, dtype=float)
    n = L.shape[0]
    upper = gershgorin_bound(L)
    if upper == 0.0:
        return 0.0
    if n <= 3:
        return min(LAMBDA_MAX_INFLATION * float(np.linalg.eigvalsh(L.toarray())[-1]), upper)
    v0 = np.random.default_rng(seed).standard_normal(n)
    try:
        lmax = eigsh(L, k=1, which="LA", v0=v0, tol=1e-6,
                     maxiter=max(iters, 10) * n, return_eigenvectors=False)[0]
    except (ArpackNoConvergence, ArpackError):
        return upper
    return float(min(LAMBDA_MAX_INFLATION * lmax, upper))


def chebyshev_nodes(order: int, lambda_max: float) -> np.ndarray:
    """Chebyshev-Gauss nodes of degree ``order`` mapped to ``[0, lambda_max]``."""
    m = order + 1
    x = np.cos(np.pi * (np.arange(m) + 0.5) / m)
    return 0.5 * lambda_max * (x + 1.0)


def chebyshev_coefficients(values_at_nodes: np.ndarray) -> np.ndarray:
    """Chebyshev coefficients from values sampled at :func:`chebyshev_nodes`.

    ``values_at_nodes`` has the node index on axis 0; any trailing axes are
    treated as independent responses.
    """
    vals = np.asarray(values_at_nodes)
    m = vals.shape[0]
    k = np.arange(m)
    basis = np.cos(np.pi * np.outer(k, np.arange(m) + 0.5) / m)
    coeffs = (2.0 / m) * np.tensordot(basis, vals, axes=(1, 0))
    coeffs[0] /= 2.0
    scale = np.abs(coeffs).max(initial=0.0)
    coeffs[np.abs(coeffs) < 1e-15 * scale] = 0.0
    return coeffs


def chebyshev_recurrence(L, x, lambda_max, num_terms):
    """Yield ``T_k(L~) x`` for ``k < num_terms`` with ``L~ = 2L/lmax - I``."""
    L = sp.csr_matrix(L)
    a = 2.0 / lambda_max

    def shifted(v):
        return a * (L @ v) - v

    t_prev = x
    yield t_prev
    if num_terms == 1:
        return
    t_cur = shifted(x)
    yield t_cur
    for _ in range(2, num_terms):
        t_prev, t_cur = t_cur, 2.0 * shifted(t_cur) - t_prev
        yield t_cur


def chebyshev_apply(L, response, order: int, x, lambda_max: float | None = None) -> np.ndarray:
    """Approximate ``U diag(response(lambda)) U^T x`` by a Chebyshev expansion.

    Costs ``order`` sparse products. ``x`` may be a vector or an ``N x M``
    block of column vectors.
    """
    if order < 1:
        raise ValidationError("order must be >= 1")
    if lambda_max is None:
        lambda_max = estimate_lambda_max(L)
    x = np.asarray(x)
    if lambda_max <= 0:
        return np.asarray(response(np.zeros(1)))[0] * x
    vals = np.asarray(response(chebyshev_nodes(order, lambda_max)), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValidationError("response is not finite on the Chebyshev grid")
    coeffs = chebyshev_coefficients(vals)
    out = np.zeros_like(x, dtype=np.result_type(x, float))
    for c, tk in zip(coeffs, chebyshev_recurrence(L, x, lambda_max, coeffs.size)):
        if c != 0.0:
            out += c * tk
    return out


def radius_for_degree(n: int, degree: float) -> float:
    """Connection radius giving the expected ``degree`` in the unit square.

    Uses the exact mean-overlap area of a disc with the square, so the
    boundary deficit is accounted for.
    """
    def expected(r):
        return (n - 1) * (np.pi * r**2 - 8.0 * r**3 / 3.0 + r**4 / 2.0) - degree

    if expected(1.0) <= 0:
        # the target needs (almost) every pair joined: use the square's diagonal
        return float(np.sqrt(2.0))
    return float(brentq(expected, 1e-9, 1.0))


def random_geometric_graph(n: int, radius: float | None = None, k: float | None = None,
                           seed: int = 0, degree: float = 7.2,
                           connect: bool = True) -> GraphTopology:
    """Random geometric graph on uniform points in the unit square.

    Points within ``radius`` are joined with weight ``exp(-k d^2)``.
    ``radius`` defaults to the value giving an expected ``degree``;
    ``k`` defaults to ``1 / radius^2``. Isolated vertices are linked to
    their nearest neighbour. With ``connect`` the remaining components
    are bridged, smallest first, by their shortest link to the rest.
    """
    if n < 2:
        raise ValidationError("n must be >= 2")
    if radius is None:
        radius = radius_for_degree(n, degree)
    if k is None:
        k = 1.0 / radius**2
    pts = np.random.default_rng(seed).random((n, 2))
    tree = cKDTree(pts)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    pair_set = {(int(i), int(j)) for i, j in pairs}
    connected = np.zeros(n, dtype=bool)
    if pairs.size:
        connected[pairs.ravel()] = True
    for i in np.flatnonzero(~connected):
        _, nn = tree.query(pts[i], k=2)
        j = int(nn[1])
        pair_set.add((min(i, j), max(i, j)))
    if connect:
        _bridge_components(pts, pair_set)
    keys = sorted(pair_set)
    rows = np.array([a for a, _ in keys], dtype=np.int64)
    cols = np.array([b for _, b in keys], dtype=np.int64)
    d2 = np.sum((pts[rows] - pts[cols]) ** 2, axis=1)
    return GraphTopology(n, rows, cols, np.exp(-k * d2))


def _bridge_components(pts, pair_set) -> None:
    n = len(pts)
    while True:
        idx = np.array(sorted(pair_set), dtype=np.int64).reshape(-1, 2)
        A = sp.coo_matrix((np.ones(len(idx)), (idx[:, 0], idx[:, 1])), shape=(n, n))
        ncomp, labels = connected_components(A, directed=False)
        if ncomp == 1:
            return
        sizes = np.bincount(labels)
        inside = labels == np.argmin(sizes)
        ins, outs = np.flatnonzero(inside), np.flatnonzero(~inside)
        d, nn = cKDTree(pts[outs]).query(pts[ins])
        a = int(ins[np.argmin(d)])
        b = int(outs[nn[np.argmin(d)]])
        pair_set.add((min(a, b), max(a, b)))


def ring_graph(n: int, weight: float = 1.0) -> GraphTopology:
    return GraphTopology.from_edges(n, [(i, (i + 1) % n, weight) for i in range(n)] if n > 2
                                    else [(0, 1, weight)])


def path_graph(n: int, weight: float = 1.0) -> GraphTopology:
    return GraphTopology.from_edges(n, [(i, i + 1, weight) for i in range(n - 1)])


def perturb_weights(g: GraphTopology, snr_db: float, seed: int = 0) -> GraphTopology:
    """Add symmetric Gaussian noise to every off-diagonal adjacency entry.

    The noise level gives ``10 log10(|W|_F^2 / |noise|_F^2) = snr_db``;
    negative weights are clipped to zero.
    """
    n = g.num_vertices
    W = g.adjacency().toarray()
    rng = np.random.default_rng(seed)
    noise = np.triu(rng.standard_normal((n, n)), k=1)
    noise = noise + noise.T
    target = np.linalg.norm(W) ** 2 / 10 ** (snr_db / 10.0)
    noise *= np.sqrt(target) / np.linalg.norm(noise)
    Wn = np.clip(W + noise, 0.0, None)
    np.fill_diagonal(Wn, 0.0)
    return GraphTopology.from_adjacency(Wn)


def write_edgelist(g: GraphTopology, path) -> None:
    """Write ``N=<n>`` then one ``i j weight`` line per edge (17 digits)."""
    with open(path, "w") as fh:
        fh.write(f"N={g.num_vertices}\n")
        for i, j, w in zip(g.rows, g.cols, g.weights):
            fh.write(f"{i} {j} {w:.17g}\n")


def read_edgelist(path: str | os.PathLike) -> GraphTopology:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("N="):
            raise ValidationError(f"{path}: missing 'N=<n>' header")
        n = int(header[2:])
        edges = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValidationError(f"{path}:{lineno}: expected 'i j weight'")
            edges.append((int(parts[0]), int(parts[1]), float(parts[2])))
    return GraphTopology.from_edges(n, edges)
