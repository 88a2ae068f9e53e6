"""Global DoF numbering, assembly, Dirichlet elimination, solvers, errors and spectra."""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cell import Cell
from .macrodiv import MacroDivSpace
from .mesh.core import PolygonalMesh
from .poly import dim_p
from .vem import (ElementDofLayout, ElementOperators, element_operators, interpolate_local,
                  local_matrices_sf, local_matrices_standard, macro_mode_for)

METHODS = {"SFNCVEM": ("NC", "SF"), "SFCVEM": ("C", "SF"),
           "NCVEM": ("NC", "standard"), "CVEM": ("C", "standard")}
DIRECT_LIMIT = 2000
DEFAULT_ZERO_THRESHOLD = 1e-8


class SolverError(RuntimeError):
    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals or []


class SpectrumError(ValueError):
    pass


def default_exactness(k: int) -> int:
    return 2 * k + 4


class GlobalDofMap:
    """Global numbering: (C only) vertices, then per-edge blocks, then per-cell
    interior blocks. Edge moments use the lower->higher vertex direction."""

    def __init__(self, mesh: PolygonalMesh, family: str, k: int):
        self.mesh = mesh
        self.family = family
        self.k = k
        self.edge_block = k if family == "NC" else k - 1
        self.n_interior = dim_p(k - 2)
        self.n_vertex = mesh.n_vertices if family == "C" else 0
        self.edge_start = self.n_vertex
        self.interior_start = self.edge_start + mesh.n_edges * self.edge_block
        self.n_dofs = self.interior_start + mesh.n_cells * self.n_interior
        self._cells = [self._cell_dofs(c) for c in range(mesh.n_cells)]
        bd = np.zeros(self.n_dofs, dtype=bool)
        for e in np.flatnonzero(mesh.boundary_edges):
            bd[self.edge_start + e * self.edge_block + np.arange(self.edge_block)] = True
        if family == "C":
            bd[: self.n_vertex] = mesh.boundary_vertices
        self.boundary = bd

    def _cell_dofs(self, c: int):
        m = self.mesh
        idx, sgn = [], []
        if self.family == "C":
            idx.extend(int(v) for v in m.cells[c])
            sgn.extend([1.0] * len(m.cells[c]))
        j = np.arange(self.edge_block)
        for e, s in zip(m.cell_edges[c], m.cell_edge_signs[c]):
            idx.extend(self.edge_start + e * self.edge_block + j)
            sgn.extend(float(s) ** j)
        idx.extend(self.interior_start + c * self.n_interior + np.arange(self.n_interior))
        sgn.extend([1.0] * self.n_interior)
        return np.array(idx, dtype=int), np.array(sgn)

    def cell_dofs(self, c: int):
        """Global indices and orientation signs of the local DoFs of cell c."""
        return self._cells[c]

    @property
    def boundary_dofs(self) -> np.ndarray:
        return np.flatnonzero(self.boundary)

    @property
    def free_dofs(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)


class Discretization:
    """Element operators of one method on one mesh.

    Operators are built in coordinates relative to each cell's first vertex
    and cached by shape, so translated copies of a cell share them.
    """

    def __init__(self, mesh: PolygonalMesh, method: str, k: int, exactness: int | None = None,
                 interior_basis: str = "monomial", strategy: str = "inball-fan",
                 reduced: bool = False, cache: bool = True, macro_for_standard: bool = False,
                 threads: int = 1):
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}; choose from {sorted(METHODS)}")
        if not 1 <= k <= 10:
            raise ValueError("k must be between 1 and 10")
        self.mesh = mesh
        self.method = method
        self.family, self.kind = METHODS[method]
        self.k = k
        self.exactness = exactness or default_exactness(k)
        self.interior_basis = interior_basis
        self.strategy = strategy
        self.reduced = reduced
        self.dofmap = GlobalDofMap(mesh, self.family, k)
        self.need_macro = self.kind == "SF" or macro_for_standard
        self.threads = max(int(threads), 1)
        self.ops = self._build_all(cache)

    def _key(self, c: int):
        local = self.mesh.cell_points(c) - self.mesh.cell_points(c)[0]
        h = float(np.ptp(local, axis=0).max())
        return np.round(local / h * 1e12).astype(np.int64).tobytes() + bytes([len(local)])

    def _build_all(self, cache: bool) -> list:
        keys = [self._key(c) if cache else c for c in range(self.mesh.n_cells)]
        first = {}
        for c, key in enumerate(keys):
            first.setdefault(key, c)
        todo = list(first.values())
        if self.threads > 1 and len(todo) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                built = list(pool.map(self._build, todo))
        else:
            built = [self._build(c) for c in todo]
        table = dict(zip(first.keys(), built))
        return [table[key] for key in keys]

    def _build(self, c: int) -> ElementOperators:
        poly = self.mesh.cell_points(c)
        local = poly - poly[0]
        cell = Cell(local, self.k, self.exactness, self.strategy)
        lay = ElementDofLayout(self.family, self.k, len(local))
        macro = None
        if self.need_macro:
            macro = MacroDivSpace(cell, self.k, macro_mode_for(self.family, self.reduced))
        return element_operators(cell, lay, macro, self.interior_basis)

    def offset(self, c: int) -> np.ndarray:
        return self.mesh.cell_points(c)[0]

    def local_matrices(self, c: int, alpha: float = 0.0, f=None):
        ops = self.ops[c]
        fn = local_matrices_sf if self.kind == "SF" else local_matrices_standard
        return fn(ops, alpha, f, self.offset(c))

    def interpolate(self, u) -> np.ndarray:
        """Global DoFs of a function u evaluated at physical points."""
        out = np.zeros(self.dofmap.n_dofs)
        for c, ops in enumerate(self.ops):
            d = interpolate_local(u, ops.cell, ops.layout, self.interior_basis, self.offset(c))
            idx, sgn = self.dofmap.cell_dofs(c)
            out[idx] = sgn * d
        return out

    def local_values(self, c: int, u: np.ndarray) -> np.ndarray:
        idx, sgn = self.dofmap.cell_dofs(c)
        return sgn * u[idx]


@dataclass
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    free: np.ndarray
    boundary: np.ndarray
    boundary_values: np.ndarray
    full_matrix: sp.csr_matrix
    full_rhs: np.ndarray
    seconds_local: float = 0.0
    info: dict = field(default_factory=dict)

    def expand(self, u_free: np.ndarray) -> np.ndarray:
        u = np.zeros(self.full_matrix.shape[0])
        u[self.free] = u_free
        u[self.boundary] = self.boundary_values
        return u


def assemble_matrices(disc: Discretization, alpha: float = 0.0, f=None):
    """Global matrix and load vector (before boundary conditions)."""
    dm = disc.dofmap
    rows, cols, vals = [], [], []
    rhs = np.zeros(dm.n_dofs)
    t0 = time.perf_counter()
    for c in range(disc.mesh.n_cells):
        lm = disc.local_matrices(c, alpha, f)
        idx, sgn = dm.cell_dofs(c)
        A = lm.matrix * np.outer(sgn, sgn)
        rows.append(np.repeat(idx, len(idx)))
        cols.append(np.tile(idx, len(idx)))
        vals.append(A.ravel())
        rhs[idx] += sgn * lm.load
    secs = time.perf_counter() - t0
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(dm.n_dofs, dm.n_dofs))
    A.sum_duplicates()
    return A, rhs, secs


def assemble_global(disc: Discretization, alpha: float = 0.0, f=None, g=None) -> SparseSystem:
    """Assemble and eliminate Dirichlet DoFs symmetrically.

    ``g`` is the boundary datum (None for homogeneous conditions); boundary
    DoFs take its interpolated values."""
    A, rhs, secs = assemble_matrices(disc, alpha, f)
    dm = disc.dofmap
    free, bnd = dm.free_dofs, dm.boundary_dofs
    ub = np.zeros(len(bnd))
    if g is not None:
        ub = disc.interpolate(g)[bnd]
    Aff = A[free][:, free].tocsr()
    b = rhs[free] - A[free][:, bnd] @ ub
    return SparseSystem(Aff, b, free, bnd, ub, A, rhs, secs)


def solve_system(system: SparseSystem, method: str = "auto", rtol: float = 1e-12,
                 direct_limit: int = DIRECT_LIMIT) -> np.ndarray:
    """Solve the eliminated system; returns the full DoF vector.

    ``auto`` uses a dense Cholesky factorization below ``direct_limit``
    unknowns and Jacobi-preconditioned CG otherwise; ``direct`` forces a sparse
    LU factorization and ``cg`` forces the iterative path."""
    A = system.matrix
    n = A.shape[0]
    if n == 0:
        return system.expand(np.zeros(0))
    if method == "auto":
        method = "dense" if n < direct_limit else "cg"
    if method == "dense":
        x = sla.cho_solve(sla.cho_factor(A.toarray()), system.rhs)
    elif method == "direct":
        x = spla.splu(A.tocsc()).solve(system.rhs)
    elif method == "cg":
        x = conjugate_gradient(A, system.rhs, rtol=rtol, maxiter=20 * n)
    else:
        raise ValueError(f"unknown solver {method!r}")
    return system.expand(x)


def conjugate_gradient(A, b, rtol=1e-12, maxiter=None):
    d = A.diagonal()
    if np.any(d <= 0):
        raise SolverError("matrix diagonal is not positive")
    M = sp.diags(1.0 / d)
    bn = np.linalg.norm(b)
    if bn == 0:
        return np.zeros_like(b)
    history = []
    count = [0]

    def record(xk):
        # sampled residual history for diagnostics
        count[0] += 1
        if count[0] % 50 == 0:
            history.append(float(np.linalg.norm(b - A @ xk) / bn))

    x, info = spla.cg(A, b, rtol=rtol, atol=0.0, maxiter=maxiter, M=M, callback=record)
    res = float(np.linalg.norm(b - A @ x) / bn)
    if info != 0 or res > 10 * rtol:
        raise SolverError(f"CG did not converge (info={info}, relative residual {res:.3e})", history)
    return x


def compute_errors(disc: Discretization, u: np.ndarray, u_exact, grad_exact) -> dict:
    """L2 error of the Q-lifted solution and error of the projected gradient.

    The gradient is the macro projection for the stabilization-free methods
    and the Ritz projection gradient for the standard ones."""
    e0 = e1 = 0.0
    for c, ops in enumerate(disc.ops):
        d = disc.local_values(c, u)
        cell = ops.cell
        off = disc.offset(c)
        pts = cell.qpoints.reshape(-1, 2)
        w = cell.qweights.ravel()
        nP = dim_p(ops.layout.k)
        P = cell.basis.values(pts)[:, :nP]
        uq = P @ (ops.Q @ d)
        e0 += w @ (u_exact(pts + off) - uq) ** 2
        if ops.macro is not None and disc.kind == "SF":
            coeffs = np.linalg.solve(ops.macro.gram, ops.B @ d)
            gh = np.concatenate([np.einsum("pnc,n->pc", ops.macro.values_on_triangle(t, cell.qpoints[t]), coeffs)
                                 for t in range(cell.subtri.n_triangles)])
        else:
            gh = np.einsum("pnc,n->pc", cell.basis.gradients(pts)[:, :nP, :], ops.PiStar @ d)
        e1 += w @ ((np.asarray(grad_exact(pts + off)) - gh) ** 2).sum(axis=1)
    return {"l2_error": float(np.sqrt(e0)), "grad_error": float(np.sqrt(e1))}


@dataclass(frozen=True)
class SpectrumStats:
    lam_max: float
    lam_min_nz: float
    n_zero: int
    cond: float
    zero_threshold: float


def spectrum_stats(matrix, zero_threshold: float = DEFAULT_ZERO_THRESHOLD, deflate=None) -> SpectrumStats:
    """Eigenvalue summary of a dense symmetric matrix.

    Eigenvalues at or below ``zero_threshold * lam_max`` count as zero. When
    ``deflate`` (a vector or matrix of columns) is given, the spectrum is taken
    on its orthogonal complement and the deflated directions are counted as
    zero eigenvalues."""
    if sp.issparse(matrix) and matrix.shape[0] > DIRECT_LIMIT and deflate is None:
        return _sparse_spectrum_stats(matrix, zero_threshold)
    A = np.asarray(matrix.toarray() if sp.issparse(matrix) else matrix, dtype=float)
    A = 0.5 * (A + A.T)
    extra = 0
    if deflate is not None:
        Z = np.asarray(deflate, float).reshape(A.shape[0], -1)
        Qz, _ = np.linalg.qr(Z, mode="complete")
        Y = Qz[:, Z.shape[1]:]
        A = Y.T @ A @ Y
        extra = Z.shape[1]
    ev = np.linalg.eigvalsh(A) if A.size else np.zeros(0)
    lam_max = float(ev[-1]) if ev.size else 0.0
    if lam_max <= 0:
        raise SpectrumError("matrix has no positive eigenvalue")
    zero = ev <= zero_threshold * lam_max
    nz = ev[~zero]
    if nz.size == 0:
        raise SpectrumError("no eigenvalue above the zero threshold")
    return SpectrumStats(lam_max, float(nz[0]), int(zero.sum()) + extra,
                         lam_max / float(nz[0]), zero_threshold)


def _sparse_spectrum_stats(A, zero_threshold: float) -> SpectrumStats:
    """Extreme eigenvalues of a large sparse SPD matrix (Lanczos, shift-invert
    at zero for the smallest one). Zero eigenvalues make the factorization
    fail, which is reported as a diagnostic."""
    A = sp.csc_matrix(0.5 * (A + A.T))
    # fixed random start: a constant vector can be orthogonal to the extreme modes
    v0 = np.random.default_rng(0).standard_normal(A.shape[0])
    lam_max = float(spla.eigsh(A, k=1, which="LA", v0=v0, return_eigenvectors=False)[0])
    if lam_max <= 0:
        raise SpectrumError("matrix has no positive eigenvalue")
    try:
        lam_min = float(spla.eigsh(A, k=1, sigma=0.0, which="LM", v0=v0,
                                   return_eigenvectors=False)[0])
    except RuntimeError as exc:
        raise SpectrumError(f"shift-invert at zero failed: {exc}") from exc
    if lam_min <= zero_threshold * lam_max:
        raise SpectrumError("singular matrix; use the dense path to count zero eigenvalues")
    return SpectrumStats(lam_max, lam_min, 0, lam_max / lam_min, zero_threshold)
