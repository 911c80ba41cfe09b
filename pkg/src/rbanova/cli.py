"""Command-line experiment driver."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import surrogate
from .analysis import (
    FieldAccumulator,
    FieldEstimate,
    acceptance_rate,
    error_vs_actual,
    error_vs_reference,
    field_statistics,
)
from .config import ExperimentConfig, load_config
from .errors import ConfigurationError, DomainError, RbAnovaError
from .fem import AffineOperatorFamily, SensorSet, UniformGrid, assemble_affine, observe, solve_full
from .formats import write_matrix
from .mcmc import Chain, InverseProblem, make_rng, prior_samples, read_chain_csv, run_chain, write_chain_csv
from .random_field import ExponentialCovariance, KlExpansion, build_kl, evaluate_field

log = logging.getLogger("rbanova")

MAX_TRUTH_RETRIES = 100


@dataclass
class Setup:
    grid: UniformGrid
    kl: KlExpansion
    ops: AffineOperatorFamily
    sensors: SensorSet


def make_setup(cfg: ExperimentConfig, refine: int = 1) -> Setup:
    grid = UniformGrid((cfg["grid.n"] - 1) * refine)
    cov = ExponentialCovariance(cfg["kl.sigma"], cfg["kl.alpha"])
    eigen_nodes = cfg["kl.eigen_nodes"] or None
    kl = build_kl(cov, grid, cfg["kl.fraction"], cfg["kl.mean"], eigen_nodes)
    ops = assemble_affine(grid, kl)
    return Setup(grid, kl, ops, SensorSet.tensor_layout(grid, cfg["sensors.per_side"]))


def _floats(values) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(values).reshape(-1))


def _write_kv(path: Path, items) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{k} = {v}\n" for k, v in items))


def _read_kv(path: Path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out


def _field_grid(grid: UniformGrid, values) -> np.ndarray:
    # row iy, column ix
    n = grid.nodes_per_side
    return np.asarray(values, dtype=float).reshape(n, n)


# --- gen-data ---------------------------------------------------------------

@dataclass
class SyntheticData:
    data: np.ndarray
    xi_true: np.ndarray
    truth_seed: int
    noise_seed: int
    a_true: np.ndarray  # truth field on the inversion grid


def generate_data(cfg: ExperimentConfig) -> SyntheticData:
    setup = make_setup(cfg)
    gen = setup if cfg["data.refine"] == 1 else make_setup(cfg, cfg["data.refine"])
    if gen.kl.n_modes != setup.kl.n_modes:
        raise ConfigurationError(
            f"refined grid keeps {gen.kl.n_modes} KL modes, inversion grid keeps {setup.kl.n_modes}"
        )
    seed = cfg["data.truth_seed"]
    for _ in range(MAX_TRUTH_RETRIES):
        xi = make_rng(seed, 0).uniform(-1.0, 1.0, setup.kl.n_modes)
        try:
            evaluate_field(gen.kl, xi)
            u = solve_full(gen.ops, xi)
            break
        except DomainError as exc:
            log.warning("truth seed %d rejected (%s); trying %d", seed, exc, seed + 1)
            seed += 1
    else:
        raise DomainError(f"no admissible truth field within {MAX_TRUTH_RETRIES} seeds")
    clean = observe(u, gen.sensors)
    noise = cfg["noise.sigma"] * make_rng(cfg["data.noise_seed"], 0).standard_normal(clean.size)
    return SyntheticData(clean + noise, xi, seed, cfg["data.noise_seed"], evaluate_field(setup.kl, xi))


def write_data(cfg: ExperimentConfig, syn: SyntheticData) -> Path:
    path = cfg.path("paths.data", "data.txt")
    _write_kv(path, [
        ("config_hash", cfg.hash()),
        ("truth_seed", syn.truth_seed),
        ("noise_seed", syn.noise_seed),
        ("noise_sigma", repr(cfg["noise.sigma"])),
        ("refine", cfg["data.refine"]),
        ("n_params", syn.xi_true.size),
        ("n_data", syn.data.size),
        ("data", _floats(syn.data)),
        ("xi_true", _floats(syn.xi_true)),
    ])
    write_matrix(path.with_name(path.stem + "_truth_field.bin"), _field_grid(make_setup(cfg).grid, syn.a_true))
    return path


def read_data(cfg: ExperimentConfig):
    path = cfg.path("paths.data", "data.txt")
    if not path.exists():
        raise ConfigurationError(f"data file {path} not found; run gen-data first")
    kv = _read_kv(path)
    try:
        data = np.array([float(v) for v in kv["data"].split()])
        xi_true = np.array([float(v) for v in kv["xi_true"].split()])
    except (KeyError, ValueError) as exc:
        raise ConfigurationError(f"{path}: malformed data file ({exc})") from exc
    return data, xi_true, kv


# --- run / analyze ----------------------------------------------------------

def _estimate(states, kl, burn):
    return field_statistics(states[burn:], kl)


def _reference_estimate(cfg, kl) -> FieldEstimate | None:
    ref = cfg["paths.reference"]
    if not ref:
        return None
    states, _, _ = read_chain_csv(ref)
    return _estimate(states, kl, cfg["mcmc.burn"])


def metrics_items(cfg, setup, states, accepted, cost, seed, xi_true, reference, mode=None):
    est = _estimate(states, setup.kl, cfg["mcmc.burn"])
    a_true = evaluate_field(setup.kl, xi_true)
    eps_mean = eps_var = float("nan")
    if reference is not None:
        eps_mean, eps_var = error_vs_reference(est, reference, setup.grid)
    rate = acceptance_rate(accepted)
    items = [
        ("config_hash", cfg.hash()),
        ("seed", seed),
        ("mode", mode or cfg["mcmc.mode"]),
        ("chain_length", len(states)),
        ("burn", cfg["mcmc.burn"]),
        ("acceptance_rate", repr(rate)),
        ("cost_total", repr(float(cost[-1]))),
        ("eps_actual", repr(error_vs_actual(est.mean, a_true, setup.grid))),
        ("eps_mean", repr(float(eps_mean))),
        ("eps_var", repr(float(eps_var))),
    ]
    return items, est


def _write_fields(prefix: Path, grid, est: FieldEstimate) -> None:
    write_matrix(prefix.with_name(prefix.name + "_mean.bin"), _field_grid(grid, est.mean))
    write_matrix(prefix.with_name(prefix.name + "_var.bin"), _field_grid(grid, est.variance))


def run_experiment(cfg: ExperimentConfig) -> Chain:
    setup = make_setup(cfg)
    data, xi_true, _ = read_data(cfg)
    if xi_true.size != setup.kl.n_modes:
        raise ConfigurationError("data file was generated with a different KL truncation")
    problem = InverseProblem(data, cfg["noise.sigma"], setup.kl.n_modes)
    tol = surrogate.Tolerances(cfg["surrogate.tol_anova"], cfg["surrogate.tol_rb"], cfg["surrogate.tol_pod"])
    mode, seed = cfg["mcmc.mode"], cfg["mcmc.seed"]
    chain = run_chain(mode, problem, setup.ops, setup.sensors, cfg["proposal.step"], cfg["mcmc.n"], seed,
                      cfg["surrogate.n_model"], tol, cfg["surrogate.order_cap"])

    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    tag = f"config_hash={cfg.hash()} seed={seed} mode={mode}"
    write_chain_csv(out / f"chain_{mode}.csv", chain, tag)
    meta = [
        ("config_hash", cfg.hash()),
        ("seed", seed),
        ("mode", mode),
        ("chain_length", len(chain)),
        ("requested_length", cfg["mcmc.n"]),
        ("n_params", setup.kl.n_modes),
        ("full_solves", chain.ledger.full_solves),
        ("reduced_cost", repr(chain.ledger.reduced_cost)),
        ("build_cost", repr(float(chain.build_cost))),
        ("rebuilds", len(chain.rebuilds)),
        ("updates_stopped", int(chain.updates_stopped)),
        ("aborted", chain.aborted or ""),
    ]
    for k, r in enumerate(chain.rebuilds, 1):
        meta.append((f"rebuild_{k}", f"iteration={r.iteration} before={len(r.before)} "
                                      f"after={len(r.after)} cost={r.cost!r} unchanged={int(r.unchanged)}"))
    if chain.model is not None:
        meta.append(("active_indices", len(chain.model.active)))
        meta.append(("online_size", chain.model.online_size))
    _write_kv(out / f"chain_{mode}.meta.txt", meta)

    items, est = metrics_items(cfg, setup, chain.states, chain.accepted, chain.cost, seed, xi_true,
                               _reference_estimate(cfg, setup.kl))
    _write_kv(out / f"metrics_{mode}.txt", items)
    _write_fields(out / f"field_{mode}", setup.grid, est)
    if chain.aborted:
        raise RbAnovaError(f"chain aborted after {len(chain)} states: {chain.aborted}")
    return chain


def _chain_tags(path) -> dict:
    with open(path) as fh:
        first = fh.readline()
    if not first.startswith("#"):
        return {}
    return dict(tok.split("=", 1) for tok in first[1:].split() if "=" in tok)


def analyze_chain(cfg: ExperimentConfig, chain_path: Path, out_prefix: Path) -> dict:
    setup = make_setup(cfg)
    _, xi_true, _ = read_data(cfg)
    states, accepted, cost = read_chain_csv(chain_path)
    tags = _chain_tags(chain_path)
    seed = int(tags.get("seed", cfg["mcmc.seed"]))
    items, est = metrics_items(cfg, setup, states, accepted, cost, seed, xi_true,
                               _reference_estimate(cfg, setup.kl), tags.get("mode"))
    _write_kv(out_prefix.with_name(out_prefix.name + "_metrics.txt"), items)
    _write_fields(out_prefix.with_name(out_prefix.name + "_field"), setup.grid, est)
    return dict(items)


# --- reproduce --------------------------------------------------------------

DESK_ALPHAS = (5.0, 2.5)
FULL_SCALE_ALPHAS = (1.25, 0.625)
MODES = ("full", "prior", "adaptive")


def desk_config(alpha: float, out: Path, n: int = 50000) -> ExperimentConfig:
    return ExperimentConfig().with_updates({
        "grid.n": "17", "kl.alpha": repr(alpha), "sensors.per_side": "3", "mcmc.n": str(n),
        "surrogate.n_model": "500", "paths.out": str(out),
    })


def full_scale_config(alpha: float, out: Path) -> ExperimentConfig:
    return ExperimentConfig().with_updates({
        "grid.n": "65", "kl.alpha": repr(alpha), "sensors.per_side": "7", "mcmc.n": "1000000",
        "surrogate.n_model": "1000", "paths.out": str(out),
    })


def _checkpoints(n: int) -> list:
    marks = [m * 10**e for e in range(2, 8) for m in (1, 2, 5)]
    return [m for m in marks if m < n] + [n]


def _running_errors(states, kl, grid, reference, marks):
    acc, prev, rows = FieldAccumulator(kl), 0, []
    for m in marks:
        acc.update(states[prev:m])
        prev = m
        rows.append(error_vs_reference(acc.estimate(), reference, grid))
    return rows


def reproduce_desk(out: Path, alphas=DESK_ALPHAS, n: int = 50000) -> dict:
    summary = {}
    for alpha in alphas:
        cfg = desk_config(alpha, out / f"alpha_{alpha:g}", n)
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        (cfg.out_dir / "config.txt").write_text(cfg.to_text())
        write_data(cfg, generate_data(cfg))
        setup = make_setup(cfg)
        chains = {}
        for mode in MODES:
            log.info("alpha=%g: running %s chain", alpha, mode)
            chains[mode] = run_experiment(cfg.with_updates({"mcmc.mode": mode}))
        reference = field_statistics(chains["full"].states, setup.kl)
        marks = _checkpoints(min(len(c) for c in chains.values()))
        header = f"# config_hash={cfg.hash()} seed={cfg['mcmc.seed']}\n"

        lines = [header + "N " + " ".join(f"cost_{m}" for m in MODES)]
        for mk in marks:
            lines.append(f"{mk} " + " ".join(repr(float(chains[m].cost[mk - 1])) for m in MODES))
        (cfg.out_dir / "cost_vs_n.txt").write_text("\n".join(lines) + "\n")

        lines = [header + "mode N cost eps_mean eps_var"]
        for mode in MODES:
            errs = _running_errors(chains[mode].states, setup.kl, setup.grid, reference, marks)
            for mk, (em, ev) in zip(marks, errs):
                lines.append(f"{mode} {mk} {float(chains[mode].cost[mk - 1])!r} {em!r} {ev!r}")
        (cfg.out_dir / "eps_vs_cost.txt").write_text("\n".join(lines) + "\n")

        rates = {m: chains[m].acceptance_rate for m in MODES}
        costs = {m: float(chains[m].cost[-1]) for m in MODES}
        eps = {m: error_vs_reference(field_statistics(chains[m].states, setup.kl), reference, setup.grid)
               for m in ("prior", "adaptive")}
        items = [("config_hash", cfg.hash()), ("seed", cfg["mcmc.seed"]), ("n_params", setup.kl.n_modes)]
        items += [(f"acceptance_{m}", repr(rates[m])) for m in MODES]
        items += [(f"cost_{m}", repr(costs[m])) for m in MODES]
        for m, (em, ev) in eps.items():
            items += [(f"eps_mean_{m}", repr(em)), (f"eps_var_{m}", repr(ev))]
        items.append(("cost_order_ok", int(costs["adaptive"] < costs["prior"] < costs["full"])))
        spread = max(rates.values()) - min(rates.values())
        items.append(("acceptance_spread", repr(spread)))
        _write_kv(cfg.out_dir / "summary.txt", items)
        summary[alpha] = dict(items)
    return summary


def reproduce_full_scale(out: Path) -> list:
    paths = []
    out.mkdir(parents=True, exist_ok=True)
    for alpha in FULL_SCALE_ALPHAS:
        cfg = full_scale_config(alpha, out / f"alpha_{alpha:g}")
        path = out / f"full_scale_alpha_{alpha:g}.cfg"
        path.write_text(f"# config_hash={cfg.hash()}\n" + cfg.to_text())
        paths.append(path)
    return paths


# --- entry point ------------------------------------------------------------

def _overrides(pairs) -> dict:
    out = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects key=value, got {pair!r}")
        out[key.strip()] = value.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rbanova", description="Reduced-basis ANOVA accelerated MCMC.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="flat 'key = value' configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a configuration key")

    common(sub.add_parser("gen-data", help="draw a truth field and write synthetic data"))
    common(sub.add_parser("build-surrogate", help="build a surrogate from prior samples and save it"))
    common(sub.add_parser("run", help="run one MCMC chain"))
    p = sub.add_parser("analyze", help="field estimates and metrics for a chain CSV")
    common(p)
    p.add_argument("chain", type=Path)
    p.add_argument("--out", type=Path, help="output prefix (default: next to the chain)")
    p = sub.add_parser("reproduce", help="desk-scale experiments or full-scale configs")
    p.add_argument("--profile", choices=("desk", "paper"), default="desk")
    p.add_argument("--out", type=Path, default=Path("reproduce"))
    p.add_argument("--n", type=int, default=50000, help="chain length for the desk profile")
    p.add_argument("--alpha", type=float, action="append", help="restrict to these correlation lengths")
    return parser


def _dispatch(args) -> str:
    if args.command == "reproduce":
        if args.profile == "paper":
            paths = reproduce_full_scale(args.out)
            return "wrote " + ", ".join(str(p) for p in paths)
        summary = reproduce_desk(args.out, tuple(args.alpha or DESK_ALPHAS), args.n)
        return "; ".join(f"alpha={a:g}: cost_order_ok={s['cost_order_ok']}" for a, s in summary.items())

    cfg = load_config(args.config, _overrides(args.set))
    if args.command == "gen-data":
        syn = generate_data(cfg)
        return f"wrote {write_data(cfg, syn)} (truth seed {syn.truth_seed})"
    if args.command == "build-surrogate":
        setup = make_setup(cfg)
        tol = surrogate.Tolerances(cfg["surrogate.tol_anova"], cfg["surrogate.tol_rb"],
                                   cfg["surrogate.tol_pod"])
        samples = prior_samples(cfg["mcmc.seed"], cfg["surrogate.n_model"], setup.kl.n_modes)
        model = surrogate.build(samples, setup.ops, tol, cfg["surrogate.order_cap"])
        path = cfg.path("paths.model", "model")
        surrogate.save(model, path)
        return f"wrote {path} ({len(model.active)} active indices)"
    if args.command == "run":
        chain = run_experiment(cfg)
        return f"{cfg['mcmc.mode']} chain of {len(chain)} states, cost {chain.ledger.total:.6g}"
    if args.command == "analyze":
        prefix = args.out or args.chain.with_suffix("")
        items = analyze_chain(cfg, args.chain, prefix)
        return f"acceptance_rate={items['acceptance_rate']} eps_actual={items['eps_actual']}"
    raise ConfigurationError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        message = _dispatch(args)
    except (RbAnovaError, OSError, ValueError, KeyError) as exc:
        print(f"rbanova: error: {exc}", file=sys.stderr)
        return 1
    print(message)
    return 0


if __name__ == "__main__":
    sys.exit(main())
