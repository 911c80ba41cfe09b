import numpy as np
import pytest

from rbanova.analysis import CostLedger
from rbanova.errors import ConfigurationError, ModelFormatError
from rbanova.fem import AffineOperatorFamily, SensorSet, UniformGrid, assemble_affine, observe, solve_full
from rbanova.random_field import ExponentialCovariance, build_kl
from rbanova.surrogate import Tolerances, build, load, save, training_residuals


def restrict(ops, m, scale=1.0):
    return AffineOperatorFamily(ops.grid, ops.base, [scale * a for a in ops.modes[:m]], ops.load)


@pytest.fixture(scope="module")
def desk_model(desk):
    samples = np.random.default_rng(21).uniform(-1, 1, (300, desk.kl.n_modes))
    ledger = CostLedger(desk.grid.n_nodes)
    model = build(samples, desk.ops, Tolerances(), 3, ledger)
    return model, samples, ledger


def test_single_parameter_structure(desk):
    samples = np.random.default_rng(1).uniform(-1, 1, (10, 1))
    model = build(samples, restrict(desk.ops, 1), Tolerances())
    assert model.active == [(), (0,)]
    np.testing.assert_allclose(model.anchor, samples.mean(axis=0))


def test_nearly_affine_map_has_no_interactions(desk):
    # with the anchor at the sample mean, first-order means of an affine map
    # vanish; the O(eps^2) curvature stays below the screening tolerance
    ops = restrict(desk.ops, 4, scale=1e-3)
    samples = np.random.default_rng(2).uniform(-1, 1, (100, 4))
    model = build(samples, ops, Tolerances())
    assert max(len(t) for t in model.active) == 1
    assert model.index_sets.important[1] == []
    assert max(model.index_sets.gammas.values()) < 1e-4


def test_build_preconditions(desk):
    with pytest.raises(ConfigurationError):
        build(np.zeros((1, 4)), desk.ops)
    with pytest.raises(ConfigurationError):
        build(np.full((5, 4), 1.5), desk.ops)
    with pytest.raises(ConfigurationError):
        build(np.zeros((5, 3)), desk.ops)
    with pytest.raises(ConfigurationError):
        build(np.zeros((5, 4)), desk.ops, order_cap=0)
    with pytest.raises(ConfigurationError):
        Tolerances(rb=0.0)


def test_prediction_at_anchor_is_anchor_snapshot(desk, desk_model):
    model, _, _ = desk_model
    obs, u = model.predict(model.anchor, desk.sensors, return_field=True)
    np.testing.assert_allclose(u, model.anchor_snapshot, rtol=0, atol=1e-12 * np.abs(u).max())
    for t, v in model.terms(model.anchor).items():
        if t:
            assert np.abs(v).max() <= 1e-12


def test_prediction_deterministic_and_consistent(desk, desk_model, rng):
    model, _, _ = desk_model
    xi = rng.uniform(-1, 1, 4)
    a, u = model.predict(xi, desk.sensors, return_field=True)
    b = model.predict(xi, desk.sensors)
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() == observe(u, desk.sensors).tobytes()


def test_prediction_cost(desk, desk_model, rng):
    model, _, _ = desk_model
    ledger = CostLedger(desk.grid.n_nodes)
    model.predict(rng.uniform(-1, 1, 4), desk.sensors, ledger)
    assert ledger.full_solves == 0
    assert ledger.total == pytest.approx(model.online_size / desk.grid.n_nodes)


def test_prior_model_accuracy(desk, desk_model, rng):
    model, _, _ = desk_model
    errs = []
    for xi in rng.uniform(-1, 1, (50, 4)):
        ref = observe(solve_full(desk.ops, xi), desk.sensors)
        errs.append(np.linalg.norm(model.predict(xi, desk.sensors) - ref) / np.linalg.norm(ref))
    assert max(errs) <= 1e-2


def test_training_certification(desk, desk_model):
    model, samples, _ = desk_model
    for t, taus in training_residuals(model, desk.ops, samples).items():
        assert taus.max() <= model.tolerances.rb, t


def test_build_ledger_accounting(desk, desk_model):
    model, samples, ledger = desk_model
    assert ledger.full_solves == 1 + sum(r.full_solves for r in model.reports.values())
    n_h, n = desk.grid.n_nodes, len(samples)
    lo = n * sum(r.initial_size for r in model.reports.values()) / n_h
    hi = n * sum(r.final_size for r in model.reports.values()) / n_h
    assert lo <= ledger.reduced_cost <= hi + 1e-9
    assert all(model.systems[t].size >= 1 for t in model.active if t)


def test_exhaustive_bases_reproduce_full_model():
    g = UniformGrid(6)
    kl = build_kl(ExponentialCovariance(0.25, 5.0), g)
    ops = restrict(assemble_affine(g, kl), 2)
    samples = np.random.default_rng(4).uniform(-1, 1, (80, 2))
    model = build(samples, ops, Tolerances(1e-14, 1e-14, 1e-14))
    assert model.active == [(), (0,), (1,), (0, 1)]
    sensors = SensorSet.tensor_layout(g, 2)
    for xi in np.random.default_rng(5).uniform(-1, 1, (10, 2)):
        ref = observe(solve_full(ops, xi), sensors)
        np.testing.assert_allclose(model.predict(xi, sensors), ref, rtol=1e-10)


def test_save_load_round_trip(tmp_path, desk, desk_model, rng):
    model, _, _ = desk_model
    save(model, tmp_path / "m")
    back = load(tmp_path / "m")
    assert back.active == model.active
    assert back.index_sets.candidates == model.index_sets.candidates
    assert back.index_sets.important == model.index_sets.important
    assert back.anchor.tobytes() == model.anchor.tobytes()
    assert back.anchor_snapshot.tobytes() == model.anchor_snapshot.tobytes()
    for t in model.active:
        if t:
            a, b = model.systems[t], back.systems[t]
            for x, y in [(a.basis, b.basis), (a.base, b.base), (a.modes, b.modes), (a.load, b.load)]:
                assert x.tobytes() == y.tobytes()
            assert back.index_sets.gammas[t] == model.index_sets.gammas[t]
    assert back.tolerances == model.tolerances and back.same_index_set(model)
    for xi in rng.uniform(-1, 1, (20, 4)):
        assert back.predict(xi, desk.sensors).tobytes() == model.predict(xi, desk.sensors).tobytes()


def test_saving_twice_gives_identical_files(tmp_path, desk_model):
    model, _, _ = desk_model
    save(model, tmp_path / "a")
    save(load(tmp_path / "a"), tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


@pytest.fixture
def saved(tmp_path, desk_model):
    save(desk_model[0], tmp_path / "m")
    return tmp_path / "m"


def test_corrupted_header(saved):
    manifest = saved / "manifest.txt"
    manifest.write_text(manifest.read_text().replace("format = rbanova-surrogate", "format = other"))
    with pytest.raises(ModelFormatError):
        load(saved)


def test_version_mismatch(saved):
    manifest = saved / "manifest.txt"
    manifest.write_text(manifest.read_text().replace("version = 1", "version = 99"))
    with pytest.raises(ModelFormatError, match="version"):
        load(saved)


def test_truncated_block(saved):
    f = saved / "term_1.basis.bin"
    f.write_bytes(f.read_bytes()[:-8])
    with pytest.raises(ModelFormatError, match="checksum"):
        load(saved)


def test_garbled_manifest(saved):
    (saved / "manifest.txt").write_text("format = rbanova-surrogate\nnonsense\n")
    with pytest.raises(ModelFormatError):
        load(saved)


def test_empty_path():
    with pytest.raises(OSError):
        load("")
    with pytest.raises(OSError):
        load("/nonexistent/model")
