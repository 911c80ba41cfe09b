"""Anchored ANOVA index algebra and term arithmetic.

An index is a strictly ascending tuple of 0-based parameter dimensions; the
empty tuple is the zeroth-order index. The plain-text index-set format
writes dimensions 1-based, one index per line (``1,3``), under ``[order i]``
headers, with ``-`` standing for the empty index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import ConfigurationError, DegenerateError, StructuralError

Index = tuple


def as_index(dims: Iterable[int], n_params: int | None = None) -> Index:
    t = tuple(int(d) for d in dims)
    if any(b <= a for a, b in zip(t, t[1:])):
        raise ConfigurationError(f"index {t} is not strictly ascending")
    if t and (t[0] < 0 or (n_params is not None and t[-1] >= n_params)):
        raise ConfigurationError(f"index {t} out of range for {n_params} parameters")
    return t


def strict_subsets(t: Index):
    """All proper subsets of t (including the empty index), by order then lexicographic."""
    for r in range(len(t)):
        yield from combinations(t, r)


def sort_indices(indices: Iterable[Index]) -> list:
    return sorted(set(indices), key=lambda t: (len(t), t))


def embed(anchor, t: Index, xi_t) -> np.ndarray:
    """The point that takes ``xi_t`` on the dimensions of t and the anchor elsewhere."""
    out = np.array(anchor, dtype=float)
    xi_t = np.asarray(xi_t, dtype=float).reshape(-1)
    if xi_t.size != len(t):
        raise ConfigurationError(f"xi_t has {xi_t.size} entries for index of order {len(t)}")
    if t and (t[0] < 0 or t[-1] >= out.size):
        raise IndexError(f"index {t} out of range for {out.size} parameters")
    out[list(t)] = xi_t
    return out


def project_samples(samples, t: Index) -> np.ndarray:
    """Columns of t from a (n_samples, M) sample array, keeping sample order."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    return samples[:, list(t)]


def term_value(
    t: Index,
    local_eval: Callable,
    child_terms: Mapping[Index, Callable],
    xi_t,
):
    """``u_t(xi_t) = u(c, xi_t) - sum_{s strictly in t} u_s(xi_s)``.

    ``local_eval(t, xi_t)`` evaluates the anchored local solution and
    ``child_terms[s](xi_s)`` the term of each strict subset s.
    """
    xi_t = np.asarray(xi_t, dtype=float).reshape(-1)
    pos = {d: k for k, d in enumerate(t)}
    value = np.array(local_eval(t, xi_t), dtype=float)
    for s in strict_subsets(t):
        if s not in child_terms:
            raise StructuralError(f"missing child term {s} of index {t}")
        value -= child_terms[s](xi_t[[pos[d] for d in s]])
    return value


def anova_terms(local_eval: Callable, indices: Iterable[Index], xi) -> dict:
    """All terms ``u_t(xi_t)`` for a downward-closed index set, memoized by index."""
    xi = np.asarray(xi, dtype=float)
    terms = {}
    for t in sort_indices(indices):
        if t not in terms:
            value = np.array(local_eval(t, xi[list(t)]), dtype=float)
            for s in strict_subsets(t):
                if s not in terms:
                    raise StructuralError(f"missing child term {s} of index {t}")
                value -= terms[s]
            terms[t] = value
    return terms


def mc_mean(term_samples) -> np.ndarray:
    samples = np.asarray(term_samples, dtype=float)
    if samples.ndim == 0 or samples.shape[0] == 0:
        raise ValueError("mc_mean needs at least one sample")
    return samples.mean(axis=0)


def relative_mean(term_mean, lower_order_means, weights) -> float:
    """``||E(u_t)|| / ||sum of lower-order means||`` in the weighted L2 norm."""
    weights = np.asarray(weights)
    denom_field = np.sum(np.asarray(list(lower_order_means), dtype=float), axis=0)
    denom = np.sqrt(np.sum(weights * denom_field**2))
    if not denom > 0.0:
        raise DegenerateError("all lower-order ANOVA means vanish; relative mean undefined")
    return float(np.sqrt(np.sum(weights * np.asarray(term_mean) ** 2)) / denom)


def select_important(gammas: Mapping[Index, float], tol_anova: float) -> list:
    return sort_indices(t for t, g in gammas.items() if g >= tol_anova)


def next_order_indices(important: Iterable[Index], order: int, n_params: int) -> list:
    """Order ``order+1`` indices whose every order-``order`` subset is important."""
    important = set(important)
    if not important:
        return []
    if order == 0:
        return [(k,) for k in range(n_params)] if () in important else []
    out = set()
    # join indices that share their first order-1 entries
    by_prefix = {}
    for t in important:
        by_prefix.setdefault(t[:-1], []).append(t[-1])
    for prefix, lasts in by_prefix.items():
        for a, b in combinations(sorted(lasts), 2):
            cand = prefix + (a, b)
            if all(s in important for s in combinations(cand, order)):
                out.add(cand)
    return sort_indices(out)


@dataclass
class IndexSets:
    """Per-order candidate sets, important sets and relative means."""

    n_params: int
    candidates: dict = field(default_factory=dict)
    important: dict = field(default_factory=dict)
    gammas: dict = field(default_factory=dict)

    @property
    def active(self) -> list:
        """The cumulative active set, sorted by order then lexicographically."""
        return sort_indices(t for ts in self.candidates.values() for t in ts)

    def active_up_to(self, order: int) -> list:
        return sort_indices(t for i, ts in self.candidates.items() if i <= order for t in ts)

    def to_text(self) -> str:
        return format_index_sets(self.candidates)


def format_index_sets(by_order: Mapping[int, Iterable[Index]]) -> str:
    lines = []
    for order in sorted(by_order):
        lines.append(f"[order {order}]")
        for t in sort_indices(by_order[order]):
            lines.append(",".join(str(d + 1) for d in t) if t else "-")
    return "\n".join(lines) + "\n"


def parse_index_sets(text: str) -> dict:
    by_order, order = {}, None
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("[order"):
            order = int(line[len("[order"):].rstrip("]"))
            by_order[order] = []
        elif order is None:
            raise ValueError(f"index line before any order header: {line!r}")
        else:
            t = () if line == "-" else as_index(int(d) - 1 for d in line.split(","))
            if len(t) != order:
                raise ValueError(f"index {line!r} listed under order {order}")
            by_order[order].append(t)
    return by_order
