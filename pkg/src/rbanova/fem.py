"""Bilinear finite elements for -div(a grad u) = f on the unit square.

Nodes are numbered row-major over the full grid, ``node = iy * (n + 1) + ix``
with ``x = ix * h`` and ``y = iy * h``.  Homogeneous Dirichlet conditions are
imposed by eliminating boundary nodes, so every matrix and snapshot in this
module lives on the interior nodes only (same row-major order).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import ConfigurationError, DomainError

_GAUSS = 0.5 + np.array([-0.5, 0.5]) / np.sqrt(3.0)
# local corner order: (0,0), (1,0), (0,1), (1,1)
_CORNERS = np.array([[0, 0], [1, 0], [0, 1], [1, 1]])


def _shape(px, py):
    """Bilinear shape values and reference gradients at a point of [0,1]^2."""
    cx, cy = _CORNERS[:, 0], _CORNERS[:, 1]
    fx = np.where(cx == 1, px, 1.0 - px)
    fy = np.where(cy == 1, py, 1.0 - py)
    dfx = np.where(cx == 1, 1.0, -1.0)
    dfy = np.where(cy == 1, 1.0, -1.0)
    return fx * fy, np.stack([dfx * fy, fx * dfy], axis=1)


def _reference_tables():
    values, stiff = [], []
    for py in _GAUSS:
        for px in _GAUSS:
            n, g = _shape(px, py)
            values.append(n)
            # weight 1/4 per point; the h scaling of gradients and area cancels
            stiff.append(0.25 * (g @ g.T))
    return np.array(values), np.array(stiff)


_N_AT_GAUSS, _K_AT_GAUSS = _reference_tables()  # (4 points, 4 corners), (4, 4, 4)
_PAIR_A, _PAIR_B = np.triu_indices(4)
# element stiffness is linear in the nodal coefficient: K_e[pair] = coef_e @ _COEF_TO_PAIR
_COEF_TO_PAIR = np.einsum("qc,qab->cab", _N_AT_GAUSS, _K_AT_GAUSS)[:, _PAIR_A, _PAIR_B]


@dataclass(frozen=True)
class UniformGrid:
    """Uniform grid of ``n_cells`` x ``n_cells`` square cells on (0, 1)^2."""

    n_cells: int

    def __post_init__(self):
        if int(self.n_cells) != self.n_cells or self.n_cells < 2:
            raise ConfigurationError(f"n_cells must be an integer >= 2, got {self.n_cells}")

    @classmethod
    def from_nodes(cls, nodes_per_side: int) -> "UniformGrid":
        return cls(int(nodes_per_side) - 1)

    @property
    def h(self) -> float:
        return 1.0 / self.n_cells

    @property
    def nodes_per_side(self) -> int:
        return self.n_cells + 1

    @property
    def n_nodes(self) -> int:
        return (self.n_cells + 1) ** 2

    @property
    def n_interior(self) -> int:
        return (self.n_cells - 1) ** 2

    @cached_property
    def coordinates(self) -> np.ndarray:
        """(n_nodes, 2) array of node coordinates."""
        t = np.arange(self.n_cells + 1) * self.h
        xx, yy = np.meshgrid(t, t)
        return np.column_stack([xx.ravel(), yy.ravel()])

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        """Global ids of interior nodes, in interior-unknown order."""
        i = np.arange(1, self.n_cells)
        iy, ix = np.meshgrid(i, i, indexing="ij")
        return (iy * (self.n_cells + 1) + ix).ravel()

    @cached_property
    def interior_lookup(self) -> np.ndarray:
        """Map global node id -> interior unknown id, or -1 on the boundary."""
        lookup = np.full(self.n_nodes, -1, dtype=np.int64)
        lookup[self.interior_nodes] = np.arange(self.n_interior)
        return lookup

    @cached_property
    def element_nodes(self) -> np.ndarray:
        """(n_elements, 4) global corner ids in local corner order."""
        n = self.n_cells
        i = np.arange(n)
        ey, ex = np.meshgrid(i, i, indexing="ij")
        base = (ey * (n + 1) + ex).ravel()
        return np.stack([base, base + 1, base + n + 1, base + n + 2], axis=1)

    @cached_property
    def trapezoid_weights(self) -> np.ndarray:
        """Tensor trapezoid weights over all nodes (sum to 1)."""
        w = np.full(self.n_cells + 1, self.h)
        w[[0, -1]] = 0.5 * self.h
        return np.outer(w, w).ravel()

    def to_full(self, interior_values: np.ndarray) -> np.ndarray:
        """Extend an interior vector by zero boundary values."""
        full = np.zeros(self.n_nodes)
        full[self.interior_nodes] = interior_values
        return full

    def transpose_permutation(self) -> np.ndarray:
        """Interior permutation realizing the reflection x <-> y."""
        m = self.n_cells - 1
        return np.arange(m * m).reshape(m, m).T.ravel()


class _StiffnessPattern:
    """Fixed CSR pattern of the interior stiffness matrix plus scatter maps.

    Each element contribution to an off-diagonal pair is scattered to both
    (i, j) and (j, i) in the same position of the accumulation order, which
    makes every assembled matrix exactly symmetric.
    """

    def __init__(self, grid: UniformGrid):
        loc = grid.interior_lookup[grid.element_nodes]
        rows = loc[:, _PAIR_A]
        cols = loc[:, _PAIR_B]
        keep = (rows >= 0) & (cols >= 0)
        diag = np.broadcast_to(_PAIR_A == _PAIR_B, rows.shape)

        # interleave (i, j) and (j, i) per contribution; diagonal pairs once
        r2 = np.stack([rows, cols], axis=-1)
        c2 = np.stack([cols, rows], axis=-1)
        use = np.stack([keep, keep & ~diag], axis=-1)
        self._source = np.broadcast_to(
            np.arange(rows.size).reshape(rows.shape)[..., None], use.shape
        )[use]
        r_all, c_all = r2[use], c2[use]

        n = grid.n_interior
        keys = r_all * n + c_all
        uniq, self._position = np.unique(keys, return_inverse=True)
        self.indices = (uniq % n).astype(np.int32)
        self.indptr = np.searchsorted(uniq // n, np.arange(n + 1)).astype(np.int32)
        self.shape = (n, n)
        self.nnz = uniq.size

    def assemble(self, element_pair_values: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(
            self._position,
            weights=element_pair_values.ravel()[self._source],
            minlength=self.nnz,
        )
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=self.shape)


def assemble_stiffness(grid: UniformGrid, coefficient: np.ndarray, pattern=None) -> sp.csr_matrix:
    """Interior stiffness matrix for a nodal coefficient field (all nodes).

    The coefficient is interpolated bilinearly to 2x2 Gauss points, so the
    matrix depends linearly on the nodal values.
    """
    coefficient = np.asarray(coefficient, dtype=float)
    if coefficient.shape != (grid.n_nodes,):
        raise ConfigurationError(
            f"coefficient has shape {coefficient.shape}, grid needs ({grid.n_nodes},)"
        )
    pattern = pattern or _StiffnessPattern(grid)
    return pattern.assemble(coefficient[grid.element_nodes] @ _COEF_TO_PAIR)


def assemble_load(grid: UniformGrid, source: Callable | float = 1.0) -> np.ndarray:
    """Interior load vector (source, v) with 3x3 Gauss quadrature per cell."""
    if np.isscalar(source):
        # hat functions integrate to h^2
        return np.full(grid.n_interior, float(source) * grid.h**2)
    pts, wts = np.polynomial.legendre.leggauss(3)
    pts, wts = 0.5 * (pts + 1.0), 0.5 * wts
    corners = grid.coordinates[grid.element_nodes[:, 0]]
    contrib = np.zeros(grid.element_nodes.shape)
    for py, wy in zip(pts, wts):
        for px, wx in zip(pts, wts):
            n, _ = _shape(px, py)
            fx = source(corners[:, 0] + px * grid.h, corners[:, 1] + py * grid.h)
            contrib += (wx * wy * grid.h**2) * np.outer(fx, n)
    loc = grid.interior_lookup[grid.element_nodes]
    keep = loc >= 0
    return np.bincount(loc[keep], weights=contrib[keep], minlength=grid.n_interior)


def _upper_band(matrix: sp.csr_matrix, bandwidth: int) -> np.ndarray:
    coo = matrix.tocoo()
    upper = coo.row <= coo.col
    band = np.zeros((bandwidth + 1, matrix.shape[0]))
    band[bandwidth + coo.row[upper] - coo.col[upper], coo.col[upper]] = coo.data[upper]
    return band


@dataclass
class AffineOperatorFamily:
    """Stiffness ``A(xi) = base + sum_k xi_k * modes[k]`` and load vector."""

    grid: UniformGrid
    base: sp.csr_matrix
    modes: list
    load: np.ndarray
    bandwidth: int = field(init=False)

    def __post_init__(self):
        self.bandwidth = self.grid.n_cells  # row-major interior stencil reach

    @property
    def n_params(self) -> int:
        return len(self.modes)

    @cached_property
    def _bands(self):
        base = _upper_band(self.base, self.bandwidth)
        if self.modes:
            modes = np.stack([_upper_band(a, self.bandwidth) for a in self.modes])
        else:
            modes = np.zeros((0,) + base.shape)
        return base, modes

    def matrix(self, xi: Sequence[float]) -> sp.csr_matrix:
        xi = self._check_xi(xi)
        out = self.base.copy()
        for x, a in zip(xi, self.modes):
            out = out + x * a
        return out

    def banded(self, xi) -> np.ndarray:
        """Upper banded storage of A(xi) for ``scipy.linalg.solveh_banded``."""
        base, modes = self._bands
        xi = self._check_xi(xi)
        return base + np.tensordot(xi, modes, axes=1) if len(xi) else base.copy()

    def _check_xi(self, xi):
        xi = np.asarray(xi, dtype=float).reshape(-1)
        if xi.size != self.n_params:
            raise ConfigurationError(f"xi has length {xi.size}, expected {self.n_params}")
        return xi


def assemble_affine(grid: UniformGrid, kl, source: float = 1.0) -> AffineOperatorFamily:
    """Affine stiffness family for the permeability ``a(x, xi)`` of a KL expansion.

    ``A_0`` uses the mean field and ``A_k`` uses ``sqrt(lambda_k) * a_k``.
    """
    mean = np.asarray(kl.mean)
    modes = np.asarray(kl.modes)
    if mean.shape != (grid.n_nodes,) or modes.shape[0] != grid.n_nodes:
        raise ConfigurationError(
            f"KL nodal vectors have {mean.shape[0]} entries, grid has {grid.n_nodes} nodes"
        )
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(modes))):
        raise ConfigurationError("KL mean or modes contain non-finite values")
    pattern = _StiffnessPattern(grid)
    base = assemble_stiffness(grid, mean, pattern)
    scaled = modes * np.sqrt(kl.eigenvalues)[None, :]
    mode_mats = [assemble_stiffness(grid, scaled[:, k], pattern) for k in range(modes.shape[1])]
    return AffineOperatorFamily(grid, base, mode_mats, assemble_load(grid, source))


def solve_banded_spd(band: np.ndarray, rhs: np.ndarray, xi=None) -> np.ndarray:
    try:
        return scipy.linalg.solveh_banded(band, rhs, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise DomainError(
            f"stiffness matrix is not positive definite ({exc}); permeability is nonpositive", xi
        ) from exc


def solve_full(ops: AffineOperatorFamily, xi) -> np.ndarray:
    """Finite-element snapshot at ``xi`` by banded Cholesky."""
    xi = np.asarray(xi, dtype=float)
    return solve_banded_spd(ops.banded(xi), ops.load, xi)


class SensorSet:
    """Point sensors with a precomputed bilinear observation matrix.

    Sensors coinciding with grid nodes read the nodal value directly.
    """

    def __init__(self, grid: UniformGrid, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != 2:
            raise ConfigurationError("sensor points must be (n, 2)")
        eps = 1e-12
        if np.any((points <= eps) | (points >= 1.0 - eps)):
            raise ConfigurationError("sensors must lie strictly inside the domain")
        self.grid = grid
        self.points = points
        self.node_indices = np.full(len(points), -1, dtype=np.int64)

        rows, cols, vals = [], [], []
        s = points / grid.h
        for k, (sx, sy) in enumerate(s):
            rx, ry = np.rint(sx), np.rint(sy)
            if abs(sx - rx) < 1e-9 and abs(sy - ry) < 1e-9:
                node = int(ry) * grid.nodes_per_side + int(rx)
                self.node_indices[k] = node
                corner_ids, weights = [node], [1.0]
            else:
                ix = min(int(np.floor(sx)), grid.n_cells - 1)
                iy = min(int(np.floor(sy)), grid.n_cells - 1)
                px, py = sx - ix, sy - iy
                weights, _ = _shape(px, py)
                corner_ids = grid.element_nodes[iy * grid.n_cells + ix]
            for node, w in zip(corner_ids, weights):
                j = grid.interior_lookup[node]
                if j >= 0 and w != 0.0:
                    rows.append(k)
                    cols.append(j)
                    vals.append(w)
        self.matrix = sp.csr_matrix((vals, (rows, cols)), shape=(len(points), grid.n_interior))

    @classmethod
    def tensor_layout(cls, grid: UniformGrid, per_side: int) -> "SensorSet":
        """Sensors at ``(i/(per_side+1), j/(per_side+1))``; per_side=7 gives 0.125*i."""
        t = np.arange(1, per_side + 1) / (per_side + 1)
        xx, yy = np.meshgrid(t, t)
        return cls(grid, np.column_stack([xx.ravel(), yy.ravel()]))

    def __len__(self):
        return len(self.points)

    @property
    def on_nodes(self) -> bool:
        return bool(np.all(self.node_indices >= 0))


def observe(u: np.ndarray, sensors: SensorSet) -> np.ndarray:
    """Sensor readings of an interior snapshot."""
    return sensors.matrix @ u
