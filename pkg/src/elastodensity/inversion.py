"""Linearised density inversion from transverse-transform data.

The unknown f = log sqrt(rho) - log sqrt(rho_0) lives on an n^3 node lattice
over the bounding box of the ball.  Nodes outside the ball or within one
spacing of its boundary are pinned to zero; only the remaining free nodes
are unknowns.

The forward operator maps lattice values to measurements: central-difference
stencils give grad f and hess f on the lattice, trilinear interpolation
carries them to the quadrature nodes of each ray, and the quadrature weights
of the ray transform sum the contracted integrand.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import AlignmentError, ConfigError
from .geometry import ChordSet
from .medium import Ball, MediumModel, ScalarField
from .quadrature import quadrature_weights
from .tensors import LinearCoefficients
from .transforms import traced_rays

log = logging.getLogger(__name__)

# (i, j) index pairs of the stored second-derivative operators
_SECOND = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


@dataclass(frozen=True)
class Grid:
    n: int
    domain: Ball = field(default_factory=Ball)

    def __post_init__(self):
        if self.n < 5:
            raise ConfigError("lattice needs n >= 5 for the derivative stencils")

    @property
    def spacing(self) -> float:
        return 2 * self.domain.radius / (self.n - 1)

    @property
    def origin(self) -> np.ndarray:
        return self.domain.c - self.domain.radius

    def axis(self, d):
        return self.origin[d] + self.spacing * np.arange(self.n)

    def nodes(self) -> np.ndarray:
        ax = [self.axis(d) for d in range(3)]
        return np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1)

    @property
    def pinned(self) -> np.ndarray:
        dist = self.domain.distance(self.nodes())
        return dist > self.domain.radius - self.spacing * (1 + 1e-9)

    @property
    def free(self) -> np.ndarray:
        """Flat indices of the unknown nodes, in C order."""
        return np.flatnonzero(~self.pinned.ravel())

    def sample(self, f: ScalarField) -> "GridField":
        """Lattice values of ``f`` with pinned nodes set to zero."""
        vals = np.where(self.pinned, 0.0, f.value(self.nodes()))
        return GridField(self, vals)

    def scatter(self, free_values) -> np.ndarray:
        out = np.zeros(self.n**3)
        out[self.free] = free_values
        return out.reshape((self.n,) * 3)


@dataclass
class GridField:
    grid: Grid
    values: np.ndarray

    @property
    def free_values(self):
        return self.values.ravel()[self.grid.free]

    def rows(self):
        """(x, y, z, value) rows in C order."""
        pts = self.grid.nodes().reshape(-1, 3)
        return np.column_stack([pts, self.values.ravel()])


def _stencils_1d(n, h):
    inner = np.ones(n)
    inner[[0, -1]] = 0
    E = sp.diags(inner)
    d1 = sp.diags([-inner[1:], inner[:-1]], [-1, 1]) / (2 * h)
    d2 = sp.diags([inner[1:], -2 * inner, inner[:-1]], [-1, 0, 1]) / h**2
    return E.tocsr(), d1.tocsr(), d2.tocsr()


def derivative_operators(grid: Grid):
    """Sparse central-difference operators on the full lattice.

    Returns (first, second): three gradient components and the six second
    derivatives in ``_SECOND`` order.  Rows of lattice-face nodes are zero,
    so no stencil reads outside the lattice.
    """
    E, d1, d2 = _stencils_1d(grid.n, grid.spacing)

    def k3(a, b, c):
        return sp.kron(sp.kron(a, b), c, format="csr")

    first = [k3(*[d1 if d == i else E for d in range(3)]) for i in range(3)]
    second = []
    for i, j in _SECOND:
        if i == j:
            second.append(k3(*[d2 if d == i else E for d in range(3)]))
        else:
            second.append(k3(*[d1 if d in (i, j) else E for d in range(3)]))
    return first, second


def laplacian_operator(grid: Grid):
    """7-point Laplacian restricted to free rows and columns (Dirichlet zero)."""
    n, h = grid.n, grid.spacing
    I = sp.identity(n, format="csr")
    d2 = sp.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1]) / h**2
    L = (sp.kron(sp.kron(d2, I), I) + sp.kron(sp.kron(I, d2), I) + sp.kron(sp.kron(I, I), d2)).tocsr()
    free = grid.free
    return L[free][:, free]


def trilinear(grid: Grid, x):
    """Corner flat indices (m, 8) and weights (m, 8) for points ``x`` (m, 3)."""
    u = (np.asarray(x) - grid.origin) / grid.spacing
    i0 = np.clip(np.floor(u).astype(int), 0, grid.n - 2)
    t = u - i0
    idx, wts = [], []
    n = grid.n
    for cx in (0, 1):
        for cy in (0, 1):
            for cz in (0, 1):
                c = i0 + np.array([cx, cy, cz])
                idx.append((c[:, 0] * n + c[:, 1]) * n + c[:, 2])
                wx = t[:, 0] if cx else 1 - t[:, 0]
                wy = t[:, 1] if cy else 1 - t[:, 1]
                wz = t[:, 2] if cz else 1 - t[:, 2]
                wts.append(wx * wy * wz)
    return np.stack(idx, axis=1), np.stack(wts, axis=1)


@dataclass
class ForwardOperator:
    matrix: sp.csr_matrix  # (measurements, free nodes)
    grid: Grid
    keys: list  # (ray_id, pol) per row
    step: float = 0.0

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, f_free):
        return self.matrix @ f_free

    def rmatvec(self, y):
        return self.matrix.T @ y

    def forward(self, gf: GridField):
        return self.matrix @ gf.free_values

    def align(self, measurements) -> np.ndarray:
        """Data vector in row order from measurements keyed by (ray_id, pol)."""
        lookup = {(m.ray_id, m.pol): m.value for m in measurements}
        missing = [k for k in self.keys if k not in lookup]
        if missing:
            raise AlignmentError(f"{len(missing)} operator rows have no measurement, e.g. {missing[0]}")
        return np.array([lookup[k] for k in self.keys])


def build_forward(grid: Grid, chords: ChordSet, background: MediumModel, step: float = 0.02,
                  rays=None, chunk: int = 400) -> ForwardOperator:
    """Assemble the sparse linearised forward operator, two rows per usable ray."""
    if rays is None:
        rays = traced_rays(background, chords, step)
    first, second = derivative_operators(grid)
    free = grid.free
    # stacked map from free values to the nine derivative fields on the full lattice
    D = sp.vstack(second + first, format="csr")[:, free]
    coef = LinearCoefficients(background)
    n3 = grid.n**3
    blocks, keys = [], []
    for start in range(0, len(rays), chunk):
        part = rays[start:start + chunk]
        x = np.concatenate([p.x for _, p in part])
        frame = np.concatenate([p.frame for _, p in part])
        w = np.concatenate([quadrature_weights(p.ds) for _, p in part])
        owner = np.repeat(np.arange(len(part)), [len(p.x) for _, p in part])
        cidx, cw = trilinear(grid, x)
        rows, cols, vals = [], [], []
        for pol in (1, 2):
            A, b = coef.contraction(x, frame[:, pol - 1])
            # weights of the six stored second derivatives (off-diagonals count twice) and gradient
            c = np.stack([A[:, 0, 0], A[:, 1, 1], A[:, 2, 2], 2 * A[:, 0, 1], 2 * A[:, 0, 2],
                          2 * A[:, 1, 2], b[:, 0], b[:, 1], b[:, 2]], axis=1) * w[:, None]
            ent = c[:, :, None] * cw[:, None, :]  # (samples, 9, 8)
            col = np.arange(9)[None, :, None] * n3 + cidx[:, None, :]
            cols.append(col.ravel())
            vals.append(ent.ravel())
            rows.append(np.repeat(2 * owner + (pol - 1), 72))
        keys.extend((rid, pol) for rid, _ in part for pol in (1, 2))
        W = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(2 * len(part), 9 * n3))
        W.sum_duplicates()
        blocks.append((W @ D).tocsr())
    M = sp.vstack(blocks, format="csr") if blocks else sp.csr_matrix((0, len(free)))
    M.eliminate_zeros()
    return ForwardOperator(M, grid, keys, step)


def adjoint_check(op, n_probes: int = 10, seed: int = 0) -> float:
    """Largest |<Ax, y> - <x, A^T y>| / (|Ax| |y|) over random probes."""
    rng = np.random.default_rng(seed)
    m, n = op.shape
    worst = 0.0
    for _ in range(n_probes):
        x, y = rng.standard_normal(n), rng.standard_normal(m)
        Ax = op @ x
        denom = np.linalg.norm(Ax) * np.linalg.norm(y)
        if denom == 0:
            continue
        worst = max(worst, abs(Ax @ y - x @ op.rmatvec(y)) / denom)
    return worst


@dataclass(frozen=True)
class SolverConfig:
    alpha: float = 1e-6
    max_iter: int = 500
    tol: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")


@dataclass
class SolveResult:
    f_hat: GridField
    history: np.ndarray  # normal-equation residual norms, one per iterate
    converged: bool
    iterations: int
    alpha: float


def solve(op: ForwardOperator, data, config: SolverConfig = SolverConfig(), callback=None) -> SolveResult:
    """Conjugate-residual iteration on (A^T A + alpha L^T L) f = A^T d.

    Conjugate residual minimises the residual norm over the Krylov space, so
    the recorded normal-equation residual never increases.  On budget
    exhaustion the last (best) iterate is returned with ``converged=False``.
    """
    data = np.asarray(data, dtype=float)
    if data.shape != (op.shape[0],):
        raise ValueError(f"data has length {data.shape}, operator has {op.shape[0]} rows")
    A = op.matrix
    L = laplacian_operator(op.grid)
    alpha = config.alpha

    def normal(z):
        out = A.T @ (A @ z)
        if alpha:
            out += alpha * (L.T @ (L @ z))
        return out

    x = np.zeros(A.shape[1])
    r = A.T @ data
    b_norm = np.linalg.norm(r)
    history = [b_norm]
    if b_norm == 0:
        return SolveResult(GridField(op.grid, op.grid.scatter(x)), np.array(history), True, 0, alpha)
    Ar = normal(r)
    p, Ap = r.copy(), Ar.copy()
    rAr = r @ Ar
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        a = rAr / (Ap @ Ap)
        x += a * p
        r -= a * Ap
        history.append(np.linalg.norm(r))
        if callback is not None:
            callback(x)
        if history[-1] <= config.tol * b_norm:
            converged = True
            break
        Ar = normal(r)
        rAr_new = r @ Ar
        beta = rAr_new / rAr
        rAr = rAr_new
        p = r + beta * p
        Ap = Ar + beta * Ap
    if not converged:
        log.warning("solver stopped after %d iterations, residual ratio %.3g", it, history[-1] / b_norm)
    return SolveResult(GridField(op.grid, op.grid.scatter(x)), np.array(history), converged, it, alpha)


def normal_residual(op: ForwardOperator, data, f_free, alpha):
    L = laplacian_operator(op.grid)
    r = op.rmatvec(op @ f_free - data) + alpha * (L.T @ (L @ f_free))
    return float(np.linalg.norm(r))


@dataclass
class LCurve:
    alphas: np.ndarray
    residual: np.ndarray  # |A f - d|
    seminorm: np.ndarray  # |L f|
    results: list

    @property
    def corner(self) -> int:
        """Index of maximum curvature of the log-log curve (Menger curvature)."""
        if len(self.alphas) < 3:
            return int(np.argmin(self.residual))
        P = np.column_stack([np.log(self.residual), np.log(self.seminorm)])
        best, kbest = -np.inf, 1
        for k in range(1, len(P) - 1):
            a, b, c = P[k - 1], P[k], P[k + 1]
            area2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            denom = np.linalg.norm(b - a) * np.linalg.norm(c - b) * np.linalg.norm(c - a)
            # alphas ascend: residual grows, seminorm shrinks; the corner is a counter-clockwise turn
            kappa = 2 * area2 / denom if denom > 0 else 0.0
            if kappa > best:
                best, kbest = kappa, k
        return kbest

    @property
    def best(self) -> SolveResult:
        return self.results[self.corner]


def lcurve_sweep(op: ForwardOperator, data, alphas, config: SolverConfig = SolverConfig()) -> LCurve:
    alphas = np.sort(np.asarray(alphas, dtype=float))
    L = laplacian_operator(op.grid)
    res, semi, results = [], [], []
    for a in alphas:
        out = solve(op, data, SolverConfig(float(a), config.max_iter, config.tol, config.seed))
        fv = out.f_hat.free_values
        res.append(np.linalg.norm(op @ fv - data))
        semi.append(np.linalg.norm(L @ fv))
        results.append(out)
    return LCurve(alphas, np.array(res), np.array(semi), results)


def recover_density(f_hat: GridField, rho0: float) -> GridField:
    return GridField(f_hat.grid, rho0 * np.exp(2 * f_hat.values))


def interior_relative_error(estimate: GridField, truth: GridField) -> float:
    """Relative L2 error over the free nodes."""
    e, t = estimate.free_values, truth.free_values
    return float(np.linalg.norm(e - t) / np.linalg.norm(t))
