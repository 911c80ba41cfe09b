"""Cost accounting and posterior field statistics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateError
from .fem import UniformGrid
from .random_field import KlExpansion, evaluate_fields


@dataclass
class CostLedger:
    """Work in cost units: one full solve is 1, a reduced solve of size N_r is N_r / N_h.

    ``n_h`` counts all grid nodes (boundary included).
    """

    n_h: int
    full_solves: int = 0
    reduced_cost: float = 0.0

    @property
    def total(self) -> float:
        return self.full_solves + self.reduced_cost

    def add_full(self, count: int = 1) -> None:
        self.full_solves += count

    def add_reduced(self, size: int) -> None:
        self.reduced_cost += size / self.n_h

    def __add__(self, other: "CostLedger") -> "CostLedger":
        if other.n_h != self.n_h:
            raise ValueError("ledgers use different normalizations")
        return CostLedger(self.n_h, self.full_solves + other.full_solves,
                          self.reduced_cost + other.reduced_cost)

    def copy(self) -> "CostLedger":
        return CostLedger(self.n_h, self.full_solves, self.reduced_cost)


def l2_norm(grid: UniformGrid, values) -> float:
    """Discrete L2(D) norm of a nodal field with trapezoid weights.

    Accepts interior vectors (zero boundary implied, so the weight is h^2
    per node) or full nodal vectors.
    """
    values = np.asarray(values, dtype=float)
    if values.shape == (grid.n_interior,):
        return float(np.sqrt(np.sum(values**2)) * grid.h)
    return float(np.sqrt(np.sum(grid.trapezoid_weights * values**2)))


def relative_l2_error(grid: UniformGrid, estimate, reference) -> float:
    denom = l2_norm(grid, reference)
    if not denom > 0.0:
        raise DegenerateError("reference field has zero norm")
    return l2_norm(grid, np.asarray(estimate) - np.asarray(reference)) / denom


@dataclass
class FieldEstimate:
    mean: np.ndarray
    variance: np.ndarray
    count: int


@dataclass
class FieldAccumulator:
    """Streaming nodal mean/variance of ``a(x, xi)`` (chunked Welford / Chan merge)."""

    kl: KlExpansion
    count: int = 0
    mean: np.ndarray = field(init=False)
    m2: np.ndarray = field(init=False)

    def __post_init__(self):
        self.mean = np.zeros(self.kl.grid.n_nodes)
        self.m2 = np.zeros(self.kl.grid.n_nodes)

    def update(self, states) -> None:
        fields = evaluate_fields(self.kl, np.atleast_2d(states))
        n_b = fields.shape[0]
        if n_b == 0:
            return
        mean_b = fields.mean(axis=0)
        m2_b = ((fields - mean_b) ** 2).sum(axis=0)
        n = self.count + n_b
        delta = mean_b - self.mean
        self.mean = self.mean + delta * (n_b / n)
        self.m2 = self.m2 + m2_b + delta**2 * (self.count * n_b / n)
        self.count = n

    def estimate(self) -> FieldEstimate:
        if self.count == 0:
            raise ValueError("no states accumulated")
        return FieldEstimate(self.mean.copy(), self.m2 / self.count, self.count)


def field_statistics(states, kl: KlExpansion, chunk: int = 4096, two_pass: bool = False) -> FieldEstimate:
    """Nodal mean and population variance of the permeability over chain states."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[0] == 0:
        raise ValueError("empty chain")
    if two_pass:
        total = np.zeros(kl.grid.n_nodes)
        for k in range(0, len(states), chunk):
            total += evaluate_fields(kl, states[k:k + chunk]).sum(axis=0)
        mean = total / len(states)
        sq = np.zeros(kl.grid.n_nodes)
        for k in range(0, len(states), chunk):
            sq += ((evaluate_fields(kl, states[k:k + chunk]) - mean) ** 2).sum(axis=0)
        return FieldEstimate(mean, sq / len(states), len(states))
    acc = FieldAccumulator(kl)
    for k in range(0, len(states), chunk):
        acc.update(states[k:k + chunk])
    return acc.estimate()


def mean_field(states, kl: KlExpansion) -> np.ndarray:
    return field_statistics(states, kl).mean


def variance_field(states, kl: KlExpansion) -> np.ndarray:
    return field_statistics(states, kl).variance


def error_vs_actual(estimate_mean, a_actual, grid: UniformGrid) -> float:
    return relative_l2_error(grid, estimate_mean, a_actual)


def error_vs_reference(estimate: FieldEstimate, reference: FieldEstimate, grid: UniformGrid):
    """Relative L2 errors ``(eps_mean, eps_var)`` against a reference estimate."""
    return (
        relative_l2_error(grid, estimate.mean, reference.mean),
        relative_l2_error(grid, estimate.variance, reference.variance),
    )


def acceptance_rate(accepted) -> float:
    accepted = np.asarray(accepted, dtype=bool)
    if accepted.size == 0:
        raise ValueError("empty chain")
    return float(accepted.mean())
