"""Reduced bases for anchored local problems: POD, Galerkin projection, greedy updates."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .anova import Index, embed
from .errors import DegenerateError, NumericalError
from .fem import AffineOperatorFamily, solve_banded_spd

log = logging.getLogger(__name__)


def pod(snapshots, tol_pod: float) -> np.ndarray:
    """Left singular vectors with ``sigma_k / sigma_1 > tol_pod``.

    ``snapshots`` is an (N_h, n) matrix of column snapshots or a list of
    vectors.
    """
    mat = np.asarray(snapshots, dtype=float)
    if mat.ndim == 1:
        mat = mat[:, None]
    elif isinstance(snapshots, (list, tuple)):
        mat = mat.T
    if mat.size == 0:
        raise DegenerateError("POD needs at least one snapshot")
    u, s, _ = np.linalg.svd(mat, full_matrices=False)
    if not s[0] > 0.0:
        raise DegenerateError("all snapshots are zero")
    k = int(np.count_nonzero(s / s[0] > tol_pod))
    return np.ascontiguousarray(u[:, :k])


def augment(basis: np.ndarray, snapshot, rel_tol: float = 1e-10):
    """Append ``snapshot`` after modified Gram-Schmidt with one re-orthogonalization.

    Returns ``(basis, added)``; a snapshot already in the span leaves the basis
    unchanged.
    """
    v = np.array(snapshot, dtype=float)
    scale = np.abs(v).max() if v.size else 0.0
    if scale == 0.0:
        return basis, False
    v /= scale  # keeps the squared norm clear of underflow
    norm0 = np.linalg.norm(v)
    for _ in range(2):
        for k in range(basis.shape[1]):
            q = basis[:, k]
            v -= (q @ v) * q
    norm = np.linalg.norm(v)
    if norm <= rel_tol * norm0:
        log.debug("snapshot lies in the reduced space; basis unchanged")
        return basis, False
    return np.column_stack([basis, v / norm]), True


class LocalProblem:
    """The full system with dimensions outside t frozen at the anchor.

    ``A_t(xi_t) = base + sum_{k in t} xi_k A_k`` where ``base`` folds the
    anchor values ``c_k`` for ``k not in t`` into ``A_0``.
    """

    def __init__(self, ops: AffineOperatorFamily, anchor, t: Index):
        self.ops = ops
        self.anchor = np.asarray(anchor, dtype=float)
        self.t = tuple(t)
        frozen = embed(self.anchor, self.t, np.zeros(len(self.t)))
        self.base = ops.base.copy()
        for k, c in enumerate(frozen):
            if c != 0.0:
                self.base = self.base + c * ops.modes[k]
        self.modes = [ops.modes[k] for k in self.t]
        self.load = ops.load
        self.load_norm = float(np.linalg.norm(ops.load))
        self._frozen = frozen

    def apply(self, xi_t, u: np.ndarray) -> np.ndarray:
        out = self.base @ u
        for x, a in zip(xi_t, self.modes):
            out += x * (a @ u)
        return out

    def matrix(self, xi_t) -> sp.csr_matrix:
        out = self.base
        for x, a in zip(xi_t, self.modes):
            out = out + x * a
        return out

    def full_point(self, xi_t) -> np.ndarray:
        return embed(self.anchor, self.t, xi_t)

    def solve_full(self, xi_t) -> np.ndarray:
        xi = self.full_point(xi_t)
        return solve_banded_spd(self.ops.banded(xi), self.load, xi)


@dataclass
class ReducedLocalSystem:
    """Offline Galerkin projection of a local problem onto span(basis)."""

    t: Index
    basis: np.ndarray
    base: np.ndarray
    modes: np.ndarray
    load: np.ndarray

    def __post_init__(self):
        # one memory layout so BLAS rounding does not depend on provenance
        for name in ("basis", "base", "modes", "load"):
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=float))

    @property
    def size(self) -> int:
        return self.basis.shape[1]

    def matrix(self, xi_t) -> np.ndarray:
        if len(self.t) == 0:
            return self.base
        return self.base + np.tensordot(np.asarray(xi_t, dtype=float), self.modes, axes=1)


def _project(a: sp.spmatrix, q: np.ndarray) -> np.ndarray:
    m = q.T @ (a @ q)
    return 0.5 * (m + m.T)


def project_local(local: LocalProblem, basis: np.ndarray) -> ReducedLocalSystem:
    basis = np.ascontiguousarray(basis)
    modes = (
        np.stack([_project(a, basis) for a in local.modes])
        if local.modes
        else np.zeros((0, basis.shape[1], basis.shape[1]))
    )
    return ReducedLocalSystem(
        t=local.t,
        basis=basis,
        base=_project(local.base, basis),
        modes=modes,
        load=basis.T @ local.load,
    )


def reduced_solve(system: ReducedLocalSystem, xi_t):
    """Solve the projected system; returns ``(coefficients, lifted snapshot)``."""
    mat = system.matrix(xi_t)
    try:
        coef = np.linalg.solve(mat, system.load)
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(mat)
        raise NumericalError(
            f"reduced system for index {system.t} is singular (condition {cond:.3g})"
        ) from exc
    return coef, system.basis @ coef


def residual_indicator(local: LocalProblem, basis: np.ndarray, coef, xi_t) -> float:
    """``||A_t(xi_t) Q coef - f||_2 / ||f||_2``."""
    r = local.apply(xi_t, basis @ coef) - local.load
    return float(np.linalg.norm(r) / local.load_norm)
