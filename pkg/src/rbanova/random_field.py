"""Exponential-covariance random fields and their truncated KL expansion."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError
from .fem import UniformGrid

# minimum 1D eigen-grid size; the truncation counts are converged here
MIN_EIGEN_NODES = 257


@dataclass(frozen=True)
class ExponentialCovariance:
    """``sigma^2 exp(-|x1-y1|/alpha - |x2-y2|/alpha)`` on the unit square."""

    sigma: float
    alpha: float

    def __post_init__(self):
        if not self.sigma > 0 or not self.alpha > 0:
            raise ConfigurationError("sigma and alpha must be positive")


def _trapezoid(n_nodes: int) -> np.ndarray:
    w = np.full(n_nodes, 1.0 / (n_nodes - 1))
    w[[0, -1]] *= 0.5
    return w


def eigenpairs_1d(cov: ExponentialCovariance, n_nodes: int):
    """Nystrom eigenpairs of the unit-variance kernel ``exp(-|x-y|/alpha)`` on [0, 1].

    Uses trapezoid quadrature on ``n_nodes`` equispaced nodes. Returns
    ``(mu, phi)`` with ``mu`` descending and the columns of ``phi`` nodal
    eigenfunctions, orthonormal under the same quadrature and signed so that
    ``phi(0) > 0``.
    """
    if n_nodes < 3:
        raise ConfigurationError("need at least 3 nodes")
    x = np.linspace(0.0, 1.0, n_nodes)
    w = _trapezoid(n_nodes)
    sw = np.sqrt(w)
    kernel = np.exp(-np.abs(x[:, None] - x[None, :]) / cov.alpha)
    mu, vec = np.linalg.eigh(sw[:, None] * kernel * sw[None, :])
    mu, vec = np.clip(mu[::-1], 0.0, None), vec[:, ::-1]
    phi = vec / sw[:, None]
    lead = np.argmax(np.abs(phi) > 1e-8 * np.abs(phi).max(axis=0), axis=0)
    phi *= np.sign(phi[lead, np.arange(n_nodes)])
    return mu, phi


def _lowdin(phi: np.ndarray, w: np.ndarray) -> np.ndarray:
    gram = phi.T @ (w[:, None] * phi)
    g, u = np.linalg.eigh(gram)
    if g.min() < 0.5:
        raise ConfigurationError("grid too coarse to resolve the retained KL modes")
    return phi @ (u @ np.diag(g**-0.5) @ u.T)


@dataclass(frozen=True)
class KlExpansion:
    """Truncated KL expansion ``a(x, xi) = a0(x) + sum_k sqrt(lambda_k) a_k(x) xi_k``.

    ``modes`` is ``(n_nodes, M)`` over all grid nodes; ``index_pairs[k]`` holds
    the 1D eigenfunction indices ``(i, j)`` of mode k, ``a_k = phi_i(x1) phi_j(x2)``.
    """

    grid: UniformGrid
    cov: ExponentialCovariance
    mean: np.ndarray
    eigenvalues: np.ndarray
    modes: np.ndarray
    index_pairs: np.ndarray
    variance_fraction_captured: float

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.size

    @property
    def scaled_modes(self) -> np.ndarray:
        return self.modes * np.sqrt(self.eigenvalues)[None, :]


def default_eigen_nodes(grid: UniformGrid) -> int:
    refine = math.ceil((MIN_EIGEN_NODES - 1) / grid.n_cells)
    return grid.n_cells * refine + 1


def build_kl(
    cov: ExponentialCovariance,
    grid: UniformGrid,
    fraction: float = 0.95,
    mean=1.0,
    eigen_nodes: int | None = None,
) -> KlExpansion:
    """Tensor-product KL expansion truncated at a captured-variance fraction.

    The 1D eigenproblem is solved on a grid nested in ``grid`` (every grid
    node is an eigen-grid node) with at least ``MIN_EIGEN_NODES`` nodes unless
    ``eigen_nodes`` is given. The retained 1D eigenfunctions are restricted to
    the grid nodes and symmetrically re-orthonormalized under the grid
    trapezoid rule, so the 2D modes are exactly orthonormal there.
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigurationError(f"fraction must lie in (0, 1], got {fraction}")
    n_fine = eigen_nodes or default_eigen_nodes(grid)
    if (n_fine - 1) % grid.n_cells:
        raise ConfigurationError(
            f"eigen grid with {n_fine} nodes is not nested in a {grid.n_cells}-cell grid"
        )
    step = (n_fine - 1) // grid.n_cells

    mu, phi = eigenpairs_1d(cov, n_fine)
    n1 = mu.size
    ii, jj = np.meshgrid(np.arange(n1), np.arange(n1), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    lam = cov.sigma**2 * (mu[ii] * mu[jj])
    order = np.lexsort((jj, ii, -lam))
    lam, ii, jj = lam[order], ii[order], jj[order]

    total = cov.sigma**2
    cumulative = np.cumsum(lam)
    if fraction >= 1.0:
        m = lam.size
    else:
        m = min(int(np.searchsorted(cumulative, fraction * total, side="left")) + 1, lam.size)

    needed = int(max(ii[:m].max(), jj[:m].max())) + 1
    if needed > grid.n_cells + 1:
        raise ConfigurationError(
            f"{m} KL modes need {needed} 1D eigenfunctions; grid has {grid.n_cells + 1} nodes per side"
        )
    phi_grid = phi[::step, :needed]
    if step > 1:
        phi_grid = _lowdin(phi_grid, _trapezoid(grid.n_cells + 1))

    # node = iy * (n + 1) + ix, so the y factor varies slowest
    modes = np.stack(
        [np.outer(phi_grid[:, j], phi_grid[:, i]).ravel() for i, j in zip(ii[:m], jj[:m])],
        axis=1,
    )
    mean_field = np.broadcast_to(np.asarray(mean, dtype=float), (grid.n_nodes,)).copy()
    return KlExpansion(
        grid=grid,
        cov=cov,
        mean=mean_field,
        eigenvalues=lam[:m].copy(),
        modes=modes,
        index_pairs=np.column_stack([ii[:m], jj[:m]]),
        variance_fraction_captured=float(cumulative[m - 1] / total),
    )


def evaluate_field(kl: KlExpansion, xi, check: bool = True) -> np.ndarray:
    """Nodal permeability ``a(x, xi)``; raises DomainError if not positive."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (kl.n_modes,):
        raise ConfigurationError(f"xi has shape {xi.shape}, expected ({kl.n_modes},)")
    field = kl.mean + kl.modes @ (np.sqrt(kl.eigenvalues) * xi)
    if check:
        k = int(np.argmin(field))
        if field[k] <= 0.0:
            x, y = kl.grid.coordinates[k]
            raise DomainError(
                f"minimum permeability {field[k]:.3g} <= 0 at node {k} ({x:.4f}, {y:.4f})", xi
            )
    return field


def evaluate_fields(kl: KlExpansion, xis: np.ndarray) -> np.ndarray:
    """Batched nodal fields, one row per parameter vector (no positivity check)."""
    return kl.mean[None, :] + (np.asarray(xis) * np.sqrt(kl.eigenvalues)) @ kl.modes.T
