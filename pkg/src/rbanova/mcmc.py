"""Random-walk Metropolis-Hastings driven by the full model or the surrogate.

Random streams are derived from one seed: stream 0 draws the initial state,
stream 1 drives proposals and accept/reject draws, stream 2 draws the prior
samples for the initial surrogate. Every step consumes the same random
numbers whatever the forward model, so runs of different modes with one
seed are coupled.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .analysis import CostLedger, acceptance_rate
from .errors import ConfigurationError, RbAnovaError
from .fem import AffineOperatorFamily, SensorSet, solve_full
from .surrogate import SurrogateModel, Tolerances, build

log = logging.getLogger(__name__)

INIT_STREAM, CHAIN_STREAM, PRIOR_STREAM = 0, 1, 2


def make_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(stream,))))


@dataclass
class InverseProblem:
    """Data ``d = G(xi) + noise`` with i.i.d. Gaussian noise and a uniform prior on [-1, 1]^M."""

    data: np.ndarray
    noise_sigma: float
    n_params: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if not self.noise_sigma > 0:
            raise ConfigurationError("noise_sigma must be positive")


def in_prior_support(xi) -> bool:
    return bool(np.all(np.abs(xi) <= 1.0))


def log_posterior(problem: InverseProblem, xi, forward_output) -> float:
    """Unnormalized log posterior; ``-inf`` outside the prior box."""
    if not in_prior_support(xi):
        return -np.inf
    g = np.asarray(forward_output, dtype=float)
    if g.shape != problem.data.shape:
        raise ConfigurationError("forward output length differs from the data length")
    r = problem.data - g
    return -0.5 * float(r @ r) / problem.noise_sigma**2


class FullForward:
    """Finite-element forward map; one cost unit per evaluation."""

    def __init__(self, ops: AffineOperatorFamily, sensors: SensorSet):
        self.ops = ops
        self.sensors = sensors

    def __call__(self, xi, ledger: CostLedger):
        u = solve_full(self.ops, xi)
        ledger.add_full()
        return self.sensors.matrix @ u


class SurrogateForward:
    def __init__(self, model: SurrogateModel, sensors: SensorSet):
        self.model = model
        self.sensors = sensors

    def __call__(self, xi, ledger: CostLedger):
        return self.model.predict(xi, self.sensors, ledger)


def acceptance_probability(log_post_new: float, log_post_old: float) -> float:
    # symmetric proposal: the Hastings factor is 1
    if log_post_new >= log_post_old:
        return 1.0
    return float(np.exp(log_post_new - log_post_old))


def mh_step(problem, xi, log_post, step_sigma, forward, rng, ledger):
    """One Metropolis step. Returns ``(next_xi, next_log_post, accepted)``.

    Proposals outside the prior box are rejected before any forward solve.
    """
    z = rng.standard_normal(problem.n_params)
    rho = rng.random()
    proposal = xi + step_sigma * z
    if not in_prior_support(proposal):
        return xi, log_post, False
    try:
        output = forward(proposal, ledger)
    except RbAnovaError as exc:
        log.warning("forward evaluation failed at %s: %s; proposal rejected", proposal, exc)
        return xi, log_post, False
    lp = log_posterior(problem, proposal, output)
    if rho < acceptance_probability(lp, log_post):
        return proposal, lp, True
    return xi, log_post, False


@dataclass
class RebuildRecord:
    iteration: int
    before: list
    after: list
    cost: float

    @property
    def unchanged(self) -> bool:
        return set(self.before) == set(self.after)


@dataclass
class Chain:
    states: np.ndarray
    accepted: np.ndarray
    cost: np.ndarray
    log_post: np.ndarray
    seed: int
    ledger: CostLedger
    mode: str = "full"
    model: SurrogateModel | None = None
    rebuilds: list = field(default_factory=list)
    build_cost: float = 0.0
    aborted: str | None = None

    def __len__(self):
        return len(self.states)

    @property
    def acceptance_rate(self) -> float:
        return acceptance_rate(self.accepted)

    @property
    def updates_stopped(self) -> bool:
        return bool(self.rebuilds) and self.rebuilds[-1].unchanged


def _check_run(problem: InverseProblem, step_sigma: float, n: int):
    if n < 1:
        raise ConfigurationError("chain length must be >= 1")
    if not step_sigma > 0:
        raise ConfigurationError("proposal step must be positive")


def _sample(problem, forward, step_sigma, n, seed, ledger, mode, on_step=None):
    init_rng = make_rng(seed, INIT_STREAM)
    rng = make_rng(seed, CHAIN_STREAM)
    m = problem.n_params
    states = np.empty((n, m))
    accepted = np.zeros(n, dtype=bool)
    cost = np.empty(n)
    log_post = np.empty(n)

    xi = init_rng.uniform(-1.0, 1.0, m)
    lp = log_posterior(problem, xi, forward(xi, ledger))
    states[0], log_post[0], cost[0] = xi, lp, ledger.total
    chain = Chain(states, accepted, cost, log_post, seed, ledger, mode)
    for j in range(1, n):
        xi, lp, acc = mh_step(problem, xi, lp, step_sigma, forward, rng, ledger)
        states[j], accepted[j], log_post[j] = xi, acc, lp
        if on_step is not None:
            # j is the 1-based index of the previous state
            new_lp = on_step(j, chain)
            if chain.aborted:
                cost[j] = ledger.total
                chain.states, chain.accepted = states[: j + 1], accepted[: j + 1]
                chain.cost, chain.log_post = cost[: j + 1], log_post[: j + 1]
                return chain
            if new_lp is not None:
                lp = log_post[j] = new_lp
        cost[j] = ledger.total
    return chain


def sample_chain(problem, forward, step_sigma, n, seed, n_h=1, mode="custom") -> Chain:
    """Metropolis chain for any forward map ``forward(xi, ledger) -> observations``."""
    _check_run(problem, step_sigma, n)
    return _sample(problem, forward, step_sigma, n, seed, CostLedger(n_h), mode)


def run_full_mcmc(problem, ops, sensors, step_sigma, n, seed) -> Chain:
    _check_run(problem, step_sigma, n)
    ledger = CostLedger(ops.grid.n_nodes)
    return _sample(problem, FullForward(ops, sensors), step_sigma, n, seed, ledger, "full")


def prior_samples(seed: int, n_model: int, n_params: int) -> np.ndarray:
    return make_rng(seed, PRIOR_STREAM).uniform(-1.0, 1.0, (n_model, n_params))


def run_prior_rb_mcmc(problem, ops, sensors, step_sigma, n, n_model, seed,
                      tolerances=Tolerances(), order_cap=3) -> Chain:
    """Build the surrogate once from prior draws, then sample with it."""
    _check_run(problem, step_sigma, n)
    ledger = CostLedger(ops.grid.n_nodes)
    model = build(prior_samples(seed, n_model, problem.n_params), ops, tolerances, order_cap, ledger)
    build_cost = ledger.total
    chain = _sample(problem, SurrogateForward(model, sensors), step_sigma, n, seed, ledger, "prior")
    chain.model, chain.build_cost = model, build_cost
    return chain


def run_adaptive_mcmc(problem, ops, sensors, step_sigma, n, n_model, seed,
                      tolerances=Tolerances(), order_cap=3) -> Chain:
    """Sample with a surrogate rebuilt from the last ``n_model`` states every ``n_model`` steps.

    Rebuilding stops for good once a rebuild reproduces the previous active
    index set. After each rebuild the current state's log posterior is
    re-evaluated with the new surrogate.
    """
    _check_run(problem, step_sigma, n)
    if n_model < 2:
        raise ConfigurationError("n_model must be >= 2")
    ledger = CostLedger(ops.grid.n_nodes)
    model = build(prior_samples(seed, n_model, problem.n_params), ops, tolerances, order_cap, ledger)
    build_cost = ledger.total
    forward = SurrogateForward(model, sensors)
    state = {"active": True}

    def on_step(j, chain):
        if not state["active"] or j % n_model:
            return None
        before = forward.model.active
        start = ledger.total
        try:
            new_model = build(chain.states[j - n_model:j], ops, tolerances, order_cap, ledger)
            forward.model = new_model
            current = chain.states[j]
            new_lp = log_posterior(problem, current, forward(current, ledger))
        except RbAnovaError as exc:
            log.error("surrogate rebuild at iteration %d failed: %s", j, exc)
            chain.aborted = f"rebuild at iteration {j} failed: {exc}"
            return None
        record = RebuildRecord(j, before, new_model.active, ledger.total - start)
        chain.rebuilds.append(record)
        chain.model = new_model
        if record.unchanged:
            state["active"] = False
        log.info("rebuild at %d: %d -> %d active indices%s", j, len(before),
                 len(new_model.active), " (stopped)" if record.unchanged else "")
        return new_lp

    chain = _sample(problem, forward, step_sigma, n, seed, ledger, "adaptive", on_step)
    chain.build_cost = build_cost
    if chain.model is None:
        chain.model = forward.model
    return chain


def run_chain(mode, problem, ops, sensors, step_sigma, n, seed, n_model=500,
              tolerances=Tolerances(), order_cap=3) -> Chain:
    if mode == "full":
        return run_full_mcmc(problem, ops, sensors, step_sigma, n, seed)
    if mode == "prior":
        return run_prior_rb_mcmc(problem, ops, sensors, step_sigma, n, n_model, seed,
                                 tolerances, order_cap)
    if mode == "adaptive":
        return run_adaptive_mcmc(problem, ops, sensors, step_sigma, n, n_model, seed,
                                 tolerances, order_cap)
    raise ConfigurationError(f"unknown mcmc mode {mode!r}")


def write_chain_csv(path, chain: Chain, header_comment: str | None = None) -> None:
    """``iter,accepted,cost_cum,xi_1..xi_M`` with 17 significant digits."""
    m = chain.states.shape[1]
    lines = []
    if header_comment:
        lines.extend(f"# {line}" for line in header_comment.splitlines())
    lines.append(",".join(["iter", "accepted", "cost_cum"] + [f"xi_{k + 1}" for k in range(m)]))
    fmt = "{:.17g}".format
    for j in range(len(chain)):
        row = [str(j + 1), "1" if chain.accepted[j] else "0", fmt(chain.cost[j])]
        row.extend(fmt(v) for v in chain.states[j])
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_chain_csv(path):
    """Returns ``(states, accepted, cost)`` arrays from a chain CSV."""
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0].strip().split(",")[:3] != ["iter", "accepted", "cost_cum"]:
        raise ValueError(f"{path}: not a chain CSV")
    body = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
    return body[:, 3:], body[:, 1].astype(bool), body[:, 2]
