import math

import numpy as np
import pytest

import hlvae

SMALL_MODEL = {
    "kernel": "se(time) + ca(id)*se(time) + ca(group)*se(time)",
    "latent_dim": 2,
    "hidden_width": 8,
    "slot_width": 3,
    "inducing": 6,
}


@pytest.fixture(scope="module")
def data():
    table, latents = hlvae.generate({"instances": 6, "visits": 4}, seed=3)
    return table, latents


def test_generate_shapes(data):
    table, latents = data
    assert len(table) == 24
    assert table.num_instances == 6
    assert latents.shape == (24, 2)
    assert table.values.shape == (24, len(table.schema.feature_names))
    assert table.covariates.shape == (24, 3)
    assert table.schema.covariate_names == ["id", "time", "group"]
    assert set(table.schema.likelihoods) >= {"gaussian", "poisson", "categorical", "ordinal"}
    again, _ = hlvae.generate({"instances": 6, "visits": 4}, seed=3)
    assert again.to_csv() == table.to_csv()


def test_table_round_trip(data):
    table, _ = data
    back = hlvae.Table.from_csv(table.to_csv(), table.schema)
    np.testing.assert_array_equal(back.values, table.values)
    np.testing.assert_array_equal(back.observed, table.observed)
    schema = hlvae.Schema.from_json(table.schema.to_json())
    assert schema == table.schema


def test_mcar_and_split(data):
    table, _ = data
    holed, cells = hlvae.inject_mcar(table, 0.25, seed=1)
    assert holed.observed_count() == table.observed_count() - len(cells)
    for row, feature, value in cells:
        assert not holed.observed[row, feature]
        assert table.values[row, feature] == value
    parts = hlvae.split_longitudinal(table, 0.5, 0.0, 0.5, seed=2, disclose=1)
    assert len(parts["train"]) + len(parts["test"]) == len(table)
    with pytest.raises(hlvae.TooFewVisits):
        hlvae.split_longitudinal(table, 0.5, 0.0, 0.5, seed=2, disclose=4)


def test_train_impute_predict(data, tmp_path):
    table, _ = data
    holed, cells = hlvae.inject_mcar(table, 0.2, seed=4)
    model = hlvae.create_model(holed, SMALL_MODEL, seed=1)
    objective, recon, kl = model.elbo("exact", seed=0)
    assert math.isclose(objective, recon - kl, rel_tol=1e-12)

    history = hlvae.train(model, {"epochs": 5, "learning_rate": 0.01, "kl": "bound", "batch_instances": 2})
    assert [h["epoch"] for h in history] == [1, 2, 3, 4, 5]
    assert all(math.isfinite(h["elbo"]) for h in history)

    filled, nll = hlvae.impute(model, holed, samples=10, seed=2)
    observed = holed.observed.astype(bool)
    np.testing.assert_array_equal(filled.values[observed], holed.values[observed])
    assert filled.observed.all()
    assert len(nll) == holed.observed_count()

    report = hlvae.error_report(filled, cells, model)
    assert {r["metric"] for r in report} >= {"nrmse", "accuracy_error"}

    means, variances = model.latent_predict(table.covariates[:3])
    assert means.shape == (3, 2) and (variances > 0).all()
    future, _ = hlvae.predict_future(model, table.subset([0, 1]), samples=5)
    assert len(future) == 2

    path = str(tmp_path / "model.json")
    model.save(path)
    loaded = hlvae.Model.load(path)
    assert loaded.elbo("bound", 3) == model.elbo("bound", 3)


def test_errors(data):
    table, _ = data
    with pytest.raises(hlvae.UnknownCovariate):
        hlvae.create_model(table, {"kernel": "se(age)"})
    with pytest.raises(hlvae.ParseError):
        hlvae.create_model(table, {"kernel": "se(time) +"})
    with pytest.raises(hlvae.EmptyHoldout):
        hlvae.accuracy_error([], [])
    assert issubclass(hlvae.NonFiniteLoss, hlvae.NumericalError)
    assert issubclass(hlvae.NumericalError, hlvae.Error)


def test_metrics():
    assert math.isclose(hlvae.nrmse([0, 0], [0, 10], 0, 10), math.sqrt(50) / 10)
    assert hlvae.accuracy_error([0, 1, 2, 2], [0, 1, 2, 1]) == 0.25
    assert hlvae.displacement_error([0, 4], [4, 0], 5) == 1.0


def test_cli(tmp_path):
    out = str(tmp_path / "synth")
    assert hlvae.run_cli(["synth", "--out", out, "--instances", "3", "--visits", "2", "--quiet"]) == 0
    assert (tmp_path / "synth" / "data.csv").exists()
    assert hlvae.run_cli(["nonsense"]) == 1
