"""Reduced-basis anchored-ANOVA surrogate: construction, prediction, storage.

The model data are the anchor ``c``, the anchor snapshot ``u_h(c)``, the
active index set and one reduced basis per nonempty active index. Each basis
is stored together with its offline-projected local system, so prediction
never touches full-size operators.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats
from .analysis import CostLedger
from .anova import (
    IndexSets,
    format_index_sets,
    next_order_indices,
    parse_index_sets,
    project_samples,
    relative_mean,
    select_important,
    sort_indices,
    strict_subsets,
)
from .errors import ConfigurationError, ModelFormatError
from .fem import AffineOperatorFamily, SensorSet, solve_full
from .reduced_basis import (
    LocalProblem,
    ReducedLocalSystem,
    augment,
    pod,
    project_local,
    reduced_solve,
    residual_indicator,
)

log = logging.getLogger(__name__)

FORMAT_NAME = "rbanova-surrogate"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Tolerances:
    anova: float = 1e-4
    rb: float = 1e-4
    pod: float = 1e-4

    def __post_init__(self):
        if min(self.anova, self.rb, self.pod) <= 0:
            raise ConfigurationError("tolerances must be positive")


@dataclass
class TermReport:
    """Greedy statistics of one ANOVA term during construction."""

    initial_size: int
    final_size: int
    full_solves: int
    gamma: float


@dataclass
class SurrogateModel:
    anchor: np.ndarray
    anchor_snapshot: np.ndarray
    index_sets: IndexSets
    systems: dict
    tolerances: Tolerances
    order_cap: int
    grid_cells: int
    n_h: int
    reports: dict = field(default_factory=dict)

    @property
    def n_params(self) -> int:
        return self.anchor.size

    @property
    def active(self) -> list:
        return self.index_sets.active

    @property
    def online_size(self) -> int:
        """Sum of basis sizes over nonempty active indices (cost of one prediction * N_h)."""
        return sum(self.systems[t].size for t in self.active if t)

    def terms(self, xi, ledger: CostLedger | None = None) -> dict:
        """ANOVA terms ``u^r_t(xi_t)`` for every active index, memoized per call."""
        xi = np.asarray(xi, dtype=float)
        if xi.shape != self.anchor.shape:
            raise ConfigurationError(f"xi has shape {xi.shape}, expected {self.anchor.shape}")
        terms = {(): self.anchor_snapshot}
        for t in self.active:
            if not t:
                continue
            system = self.systems[t]
            _, value = reduced_solve(system, xi[list(t)])
            if ledger is not None:
                ledger.add_reduced(system.size)
            for s in strict_subsets(t):
                value = value - terms[s]
            terms[t] = value
        return terms

    def predict_field(self, xi, ledger: CostLedger | None = None) -> np.ndarray:
        terms = self.terms(xi, ledger)
        total = self.anchor_snapshot.copy()
        for t in self.active:
            if t:
                total += terms[t]
        return total

    def predict(self, xi, sensors: SensorSet, ledger: CostLedger | None = None,
                return_field: bool = False):
        u = self.predict_field(xi, ledger)
        obs = sensors.matrix @ u
        return (obs, u) if return_field else obs

    def same_index_set(self, other: "SurrogateModel") -> bool:
        return set(self.active) == set(other.active)


def build(
    samples,
    ops: AffineOperatorFamily,
    tolerances: Tolerances = Tolerances(),
    order_cap: int = 3,
    ledger: CostLedger | None = None,
) -> SurrogateModel:
    """Construct the surrogate from a sample set (anchor = sample mean).

    Per order, each candidate index gets a basis initialized by POD of its
    parents' bases, then a single greedy pass over the projected samples:
    a reduced solve everywhere, and a full solve plus basis augmentation
    wherever the residual indicator reaches ``tolerances.rb``. The values
    produced by that pass give the Monte Carlo term means; the relative
    means select the important indices, and the next order keeps indices
    whose parents are all important.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n_samples, n_params = samples.shape
    if n_samples < 2:
        raise ConfigurationError("need at least two samples to build a surrogate")
    if n_params != ops.n_params:
        raise ConfigurationError(f"samples have {n_params} parameters, operator {ops.n_params}")
    if np.any(np.abs(samples) > 1.0):
        raise ConfigurationError("samples must lie in [-1, 1]^M")
    if order_cap < 1:
        raise ConfigurationError("order_cap must be >= 1")
    grid = ops.grid
    ledger = ledger if ledger is not None else CostLedger(grid.n_nodes)

    anchor = samples.mean(axis=0)
    u0 = solve_full(ops, anchor)
    ledger.add_full()

    sets = IndexSets(n_params)
    sets.candidates[0] = [()]
    sets.important[0] = [()]
    bases = {(): (u0 / np.linalg.norm(u0))[:, None]}
    local_means = {(): u0}  # MC mean of the anchored local solution per index
    term_means = {(): u0}
    systems, reports = {}, {}

    candidates = next_order_indices([()], 0, n_params)
    order = 1
    while candidates and order <= order_cap:
        sets.candidates[order] = candidates
        lower = sum(term_means[s] for s in sets.active_up_to(order - 1))
        for t in candidates:
            parents = [s for s in sets.candidates[order - 1] if set(s) <= set(t)]
            basis = pod(np.column_stack([bases[s] for s in parents]), tolerances.pod)
            initial = basis.shape[1]
            local = LocalProblem(ops, anchor, t)
            system = project_local(local, basis)
            values = np.empty((n_samples, grid.n_interior))
            n_full = 0
            for j, x in enumerate(project_samples(samples, t)):
                coef, u_r = reduced_solve(system, x)
                ledger.add_reduced(system.size)
                if residual_indicator(local, system.basis, coef, x) < tolerances.rb:
                    values[j] = u_r
                else:
                    u_h = local.solve_full(x)
                    ledger.add_full()
                    n_full += 1
                    values[j] = u_h
                    new_basis, added = augment(system.basis, u_h)
                    if added:
                        system = project_local(local, new_basis)
            systems[t] = system
            bases[t] = system.basis
            local_means[t] = values.mean(axis=0)
            # E(u_t) = sum over s subset of t of (-1)^{|t|-|s|} E(u(c, xi_s))
            mean_t = local_means[t].copy()
            for s in strict_subsets(t):
                sign = -1.0 if (len(t) - len(s)) % 2 else 1.0
                mean_t += sign * local_means[s]
            term_means[t] = mean_t
            gamma = relative_mean(mean_t, [lower], grid.h**2)
            sets.gammas[t] = gamma
            reports[t] = TermReport(initial, system.size, n_full, gamma)
        sets.important[order] = select_important(
            {t: sets.gammas[t] for t in candidates}, tolerances.anova
        )
        candidates = (
            next_order_indices(sets.important[order], order, n_params) if order < order_cap else []
        )
        order += 1

    log.info("built surrogate: %d active indices, online size %d",
             len(sets.active), sum(s.size for s in systems.values()))
    return SurrogateModel(
        anchor=anchor,
        anchor_snapshot=u0,
        index_sets=sets,
        systems=systems,
        tolerances=tolerances,
        order_cap=order_cap,
        grid_cells=grid.n_cells,
        n_h=grid.n_nodes,
        reports=reports,
    )


def training_residuals(model: SurrogateModel, ops: AffineOperatorFamily, samples) -> dict:
    """Residual indicators of the final bases at every projected training sample."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    out = {}
    for t in model.active:
        if not t:
            continue
        local = LocalProblem(ops, model.anchor, t)
        system = model.systems[t]
        taus = []
        for x in project_samples(samples, t):
            coef, _ = reduced_solve(system, x)
            taus.append(residual_indicator(local, system.basis, coef, x))
        out[t] = np.array(taus)
    return out


# ---------------------------------------------------------------- storage


def _term_name(t) -> str:
    return "term_" + "_".join(str(d + 1) for d in t)


def _sha256(buf: bytes) -> str:
    return hashlib.sha256(buf).hexdigest()


def save(model: SurrogateModel, path) -> None:
    """Write the model container directory (manifest plus float64 block files)."""
    path = Path(path)
    if not str(path):
        raise OSError("empty model path")
    path.mkdir(parents=True, exist_ok=True)
    files = {"anchor_snapshot.bin": formats.vector_bytes(model.anchor_snapshot)}
    for t in model.active:
        if not t:
            continue
        s = model.systems[t]
        name = _term_name(t)
        files[f"{name}.basis.bin"] = formats.matrix_bytes(s.basis)
        blocks = [formats.matrix_bytes(s.base)]
        blocks += [formats.matrix_bytes(m) for m in s.modes]
        blocks.append(formats.vector_bytes(s.load))
        files[f"{name}.reduced.bin"] = b"".join(blocks)

    sets = model.index_sets
    lines = [
        f"format = {FORMAT_NAME}",
        f"version = {FORMAT_VERSION}",
        f"n_params = {model.n_params}",
        f"grid_cells = {model.grid_cells}",
        f"n_h = {model.n_h}",
        f"tol_anova = {model.tolerances.anova!r}",
        f"tol_rb = {model.tolerances.rb!r}",
        f"tol_pod = {model.tolerances.pod!r}",
        f"order_cap = {model.order_cap}",
        f"anchor = {formats.format_floats(model.anchor)}",
    ]
    for t in model.active:
        if t:
            lines.append(f"gamma {','.join(str(d + 1) for d in t)} = {sets.gammas[t].hex()}")
    for name in sorted(files):
        lines.append(f"file {name} = {_sha256(files[name])}")
    lines.append("[candidates]")
    lines.append(format_index_sets(sets.candidates).rstrip("\n"))
    lines.append("[important]")
    lines.append(format_index_sets(sets.important).rstrip("\n"))

    for name, buf in files.items():
        (path / name).write_bytes(buf)
    (path / "manifest.txt").write_text("\n".join(lines) + "\n")


def load(path) -> SurrogateModel:
    path = Path(path)
    if not str(path) or str(path) == ".":
        raise OSError("empty model path")
    try:
        text = (path / "manifest.txt").read_text()
    except UnicodeDecodeError as exc:
        raise ModelFormatError(f"{path}: manifest is not text") from exc

    head, _, rest = text.partition("[candidates]\n")
    cand_text, _, imp_text = rest.partition("[important]\n")
    meta, gammas, checksums = {}, {}, {}
    for line in head.splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition(" = ")
        if not sep:
            raise ModelFormatError(f"malformed manifest line: {line!r}")
        if key.startswith("gamma "):
            gammas[key[6:]] = float.fromhex(value)
        elif key.startswith("file "):
            checksums[key[5:]] = value.strip()
        else:
            meta[key] = value.strip()
    try:
        if meta["format"] != FORMAT_NAME:
            raise ModelFormatError(f"not a surrogate container: {meta['format']!r}")
        if int(meta["version"]) != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported format version {meta['version']}")
        n_params = int(meta["n_params"])
        anchor = formats.parse_floats(meta["anchor"])
        tol = Tolerances(float(meta["tol_anova"]), float(meta["tol_rb"]), float(meta["tol_pod"]))
        candidates = parse_index_sets(cand_text)
        important = parse_index_sets(imp_text)
        grid_cells, n_h, order_cap = int(meta["grid_cells"]), int(meta["n_h"]), int(meta["order_cap"])
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"{path}: corrupted manifest ({exc})") from exc
    if anchor.size != n_params:
        raise ModelFormatError("anchor length does not match n_params")

    blobs = {}
    for name, digest in checksums.items():
        try:
            buf = (path / name).read_bytes()
        except FileNotFoundError as exc:
            raise ModelFormatError(f"missing model file {name}") from exc
        if _sha256(buf) != digest:
            raise ModelFormatError(f"checksum mismatch for {name}")
        blobs[name] = buf

    sets = IndexSets(n_params, candidates, important)
    systems = {}
    try:
        snapshot, _ = formats.parse_vector(blobs["anchor_snapshot.bin"])
        for t in sets.active:
            if not t:
                continue
            name = _term_name(t)
            basis, _ = formats.parse_matrix(blobs[f"{name}.basis.bin"])
            buf = blobs[f"{name}.reduced.bin"]
            base, off = formats.parse_matrix(buf)
            modes = []
            for _ in t:
                m, off = formats.parse_matrix(buf, off)
                modes.append(m)
            load_r, off = formats.parse_vector(buf, off)
            modes = np.stack(modes) if modes else np.zeros((0,) + base.shape)
            systems[t] = ReducedLocalSystem(t, basis, base, modes, load_r)
            sets.gammas[t] = gammas[",".join(str(d + 1) for d in t)]
    except KeyError as exc:
        raise ModelFormatError(f"model data missing for {exc}") from exc

    return SurrogateModel(
        anchor=anchor,
        anchor_snapshot=snapshot,
        index_sets=sets,
        systems=systems,
        tolerances=tol,
        order_cap=order_cap,
        grid_cells=grid_cells,
        n_h=n_h,
    )
