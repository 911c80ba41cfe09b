import numpy as np
import pytest

from rbanova import cli
from rbanova.config import ExperimentConfig, load_config, parse_config_text
from rbanova.errors import ConfigurationError
from rbanova.fem import observe, solve_full
from rbanova.formats import read_matrix
from rbanova.mcmc import make_rng, read_chain_csv
from rbanova.random_field import evaluate_field
from rbanova.surrogate import load

SMALL = ("grid.n=9", "surrogate.n_model=50")


def args(out, *pairs):
    res = []
    for p in (f"paths.out={out}",) + SMALL + pairs:
        res += ["--set", p]
    return res


def kv(path):
    return cli._read_kv(path)


# --- configuration ----------------------------------------------------------

def test_hash_ignores_layout_and_order(tmp_path):
    a = tmp_path / "a.cfg"
    b = tmp_path / "b.cfg"
    a.write_text("kl.alpha = 2.5\nmcmc.n = 1000\n")
    b.write_text("# comment\n\n   mcmc.n=1000   \nkl.alpha=2.50  # trailing\n")
    assert load_config(a).hash() == load_config(b).hash()
    assert load_config(a).hash() != load_config(a, {"kl.alpha": "2.4"}).hash()


def test_hash_ignores_paths():
    cfg = ExperimentConfig()
    assert cfg.hash() == cfg.with_updates({"paths.out": "elsewhere"}).hash()


def test_numeric_spellings_are_equivalent():
    cfg = ExperimentConfig()
    assert cfg.with_updates({"mcmc.n": "5e4"}).hash() == cfg.with_updates({"mcmc.n": "50000"}).hash()
    assert cfg.with_updates({"kl.alpha": "5"}).hash() == cfg.hash()


@pytest.mark.parametrize("key,value", [
    ("mcmc.mode", "sideways"),
    ("surrogate.tol_rb", "0"),
    ("surrogate.tol_anova", "-1e-4"),
    ("proposal.step", "0"),
    ("kl.fraction", "1.2"),
    ("noise.sigma", "-0.1"),
    ("grid.n", "two"),
    ("nonexistent.key", "1"),
])
def test_invalid_configurations(key, value):
    with pytest.raises(ConfigurationError):
        ExperimentConfig().with_updates({key: value})


def test_malformed_line():
    with pytest.raises(ConfigurationError, match="line 2"):
        parse_config_text("mcmc.n = 3\nnot a pair\n")


def test_text_round_trip():
    cfg = ExperimentConfig().with_updates({"kl.alpha": "0.625", "paths.out": "x"})
    again = ExperimentConfig().with_updates(parse_config_text(cfg.to_text()))
    assert again == cfg


# --- gen-data ---------------------------------------------------------------

def test_gen_data_writes_data_and_truth(tmp_path, capsys):
    assert cli.main(["gen-data"] + args(tmp_path)) == 0
    data = kv(tmp_path / "data.txt")
    assert len(data["data"].split()) == 9
    assert data["config_hash"] == load_config(None, dict(p.split("=") for p in [f"paths.out={tmp_path}", *SMALL])).hash()
    assert (tmp_path / "data_truth_field.bin").exists()
    assert read_matrix(tmp_path / "data_truth_field.bin").shape == (9, 9)
    assert "wrote" in capsys.readouterr().out


def test_noiseless_data_equals_observations(tmp_path):
    cfg = load_config(None, {"paths.out": str(tmp_path), "grid.n": "9", "noise.sigma": "0"})
    syn = cli.generate_data(cfg)
    setup = cli.make_setup(cfg)
    assert np.array_equal(syn.data, observe(solve_full(setup.ops, syn.xi_true), setup.sensors))


def test_gen_data_is_bit_identical(tmp_path):
    for name in ("a", "b"):
        assert cli.main(["gen-data"] + args(tmp_path / name)) == 0
    for f in ("data.txt", "data_truth_field.bin"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_nonpositive_truth_field_moves_to_next_seed(tmp_path, caplog):
    cfg = load_config(None, {"paths.out": str(tmp_path), "grid.n": "9", "kl.mean": "0.3"})
    kl = cli.make_setup(cfg).kl
    bad = next(s for s in range(1000)
               if evaluate_field(kl, make_rng(s, 0).uniform(-1, 1, kl.n_modes), check=False).min() <= 0)
    syn = cli.generate_data(cfg.with_updates({"data.truth_seed": str(bad)}))
    assert syn.truth_seed > bad
    assert evaluate_field(kl, syn.xi_true).min() > 0
    assert "rejected" in caplog.text


def test_refined_data_generation(tmp_path):
    cfg = load_config(None, {"paths.out": str(tmp_path), "grid.n": "9", "data.refine": "2"})
    syn = cli.generate_data(cfg)
    same = cli.generate_data(cfg.with_updates({"data.refine": "1"}))
    assert np.array_equal(syn.xi_true, same.xi_true)
    assert 0 < np.abs(syn.data - same.data).max() < 1e-2


# --- run / analyze / build-surrogate ----------------------------------------

def test_full_run_small(tmp_path):
    assert cli.main(["gen-data"] + args(tmp_path)) == 0
    assert cli.main(["run"] + args(tmp_path, "mcmc.n=10", "mcmc.mode=full")) == 0
    states, accepted, cost = read_chain_csv(tmp_path / "chain_full.csv")
    assert states.shape[0] == 10 and cost[-1] <= 10
    metrics = kv(tmp_path / "metrics_full.txt")
    for key in ("acceptance_rate", "cost_total", "eps_actual", "eps_mean", "eps_var", "chain_length", "seed"):
        assert key in metrics
    assert metrics["chain_length"] == "10" and metrics["seed"] == "7"
    header = (tmp_path / "chain_full.csv").read_text().splitlines()[0]
    assert f"config_hash={metrics['config_hash']}" in header and "seed=7" in header
    assert read_matrix(tmp_path / "field_full_mean.bin").shape == (9, 9)


def test_adaptive_run_shorter_than_block(tmp_path):
    cli.main(["gen-data"] + args(tmp_path))
    assert cli.main(["run"] + args(tmp_path, "mcmc.n=40", "mcmc.mode=adaptive")) == 0
    meta = kv(tmp_path / "chain_adaptive.meta.txt")
    assert meta["rebuilds"] == "0" and meta["seed"] == "7"


def test_runs_are_byte_identical(tmp_path):
    for name in ("a", "b"):
        out = tmp_path / name
        cli.main(["gen-data"] + args(out))
        assert cli.main(["run"] + args(out, "mcmc.n=300", "mcmc.mode=adaptive", "surrogate.n_model=100")) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "chain_adaptive.csv" in files and "metrics_adaptive.txt" in files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_run_without_data_fails_cleanly(tmp_path, capsys):
    assert cli.main(["run"] + args(tmp_path)) == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("rbanova: error:") and "\n" not in err


def test_invalid_mode_fails_cleanly(tmp_path, capsys):
    assert cli.main(["run"] + args(tmp_path, "mcmc.mode=both")) == 1
    assert "mcmc.mode" in capsys.readouterr().err


def test_zero_noise_cannot_be_sampled(tmp_path, capsys):
    cli.main(["gen-data"] + args(tmp_path, "noise.sigma=0"))
    assert cli.main(["run"] + args(tmp_path, "noise.sigma=0", "mcmc.n=5")) == 1
    assert "noise_sigma" in capsys.readouterr().err


def test_analyze_against_reference(tmp_path):
    cli.main(["gen-data"] + args(tmp_path))
    cli.main(["run"] + args(tmp_path, "mcmc.n=200", "mcmc.mode=full"))
    cli.main(["run"] + args(tmp_path, "mcmc.n=200", "mcmc.mode=prior"))
    ref = tmp_path / "chain_full.csv"
    assert cli.main(["analyze", str(tmp_path / "chain_prior.csv"), "--out", str(tmp_path / "an")]
                    + args(tmp_path, f"paths.reference={ref}")) == 0
    metrics = kv(tmp_path / "an_metrics.txt")
    assert metrics["mode"] == "prior"
    assert 0 <= float(metrics["eps_mean"]) < 0.05
    assert metrics["acceptance_rate"] == kv(tmp_path / "metrics_prior.txt")["acceptance_rate"]
    assert (tmp_path / "an_field_var.bin").exists()
    cli.main(["analyze", str(ref), "--out", str(tmp_path / "self")] + args(tmp_path, f"paths.reference={ref}"))
    assert float(kv(tmp_path / "self_metrics.txt")["eps_mean"]) == 0.0


def test_build_surrogate_command(tmp_path):
    assert cli.main(["build-surrogate"] + args(tmp_path)) == 0
    model = load(tmp_path / "model")
    assert model.n_params == 4 and () in model.active


# --- reproduce --------------------------------------------------------------

def test_full_scale_profile_emits_configs(tmp_path):
    assert cli.main(["reproduce", "--profile", "paper", "--out", str(tmp_path)]) == 0
    cfgs = sorted(tmp_path.glob("*.cfg"))
    assert len(cfgs) == 2
    for path in cfgs:
        cfg = load_config(path)
        assert cfg["grid.n"] == 65 and cfg["sensors.per_side"] == 7
        assert cfg["mcmc.n"] == 1_000_000 and cfg["surrogate.n_model"] == 1000
        assert path.read_text().startswith(f"# config_hash={cfg.hash()}")
    assert not list(tmp_path.glob("**/*.csv"))


def test_desk_profile_smoke(tmp_path):
    assert cli.main(["reproduce", "--out", str(tmp_path), "--n", "1200", "--alpha", "5"]) == 0
    run = tmp_path / "alpha_5"
    for mode in ("full", "prior", "adaptive"):
        assert (run / f"chain_{mode}.csv").exists()
    table = (run / "cost_vs_n.txt").read_text().splitlines()
    assert table[1] == "N cost_full cost_prior cost_adaptive"
    assert table[-1].split()[0] == "1200"
    eps = (run / "eps_vs_cost.txt").read_text().splitlines()
    assert eps[1] == "mode N cost eps_mean eps_var"
    summary = kv(run / "summary.txt")
    assert float(summary["eps_mean_adaptive"]) >= 0
