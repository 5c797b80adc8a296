import numpy as np
import pytest
from sklearn.base import clone

from zigmhmm import MixtureZigHMM, RawSeries, adjusted_rand_index
from zigmhmm.exceptions import ZigHmmError
from zigmhmm.simulate import ScenarioSpec, simulate


@pytest.fixture(scope="module")
def data():
    return simulate(ScenarioSpec("easy", n=30, T=150, missingness="mcar1", seed=3))


@pytest.fixture(scope="module")
def model(data):
    return MixtureZigHMM(n_init=3).fit(data.values)


def test_params_and_clone():
    m = MixtureZigHMM(n_components=3, n_init=2)
    assert m.get_params()["n_components"] == 3
    c = clone(m).set_params(n_states=4)
    assert c.n_states == 4 and m.n_states == 2


def test_fit_recovers_classes(model, data):
    assert adjusted_rand_index(model.labels_, data.z) == 1.0
    assert model.params_.K == 2 and model.gap_report_.status in ("PASS", "FAIL")


def test_predict_consistent(model, data):
    proba = model.predict_proba(data.values)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    np.testing.assert_array_equal(model.predict(data.values), model.labels_)
    np.testing.assert_array_equal(model.transform(data.values), proba)
    assert model.score(data.values) == pytest.approx(model.loglik_, rel=1e-10)
    assert model.icl(data.values) <= model.bic(data.values)


def test_mixed_inputs(model, data):
    ragged = [row[: 50 + i] for i, row in enumerate(data.values[:3])]
    series = [RawSeries.from_values("x", data.values[3])]
    assert model.predict(ragged).shape == (3,)
    assert model.predict(series).shape == (1,)
    dec = model.decode(data.values[:2])
    assert len(dec) == 2 and dec[0].map_class == model.labels_[0]


def test_unfitted():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        MixtureZigHMM().predict(np.ones((2, 5)))


@pytest.mark.parametrize(
    "X",
    [np.ones((2, 2, 2)), [np.array([1.0, -1.0])], [np.array([np.nan, np.nan])], [], 5],
)
def test_bad_input(X):
    with pytest.raises(ZigHmmError):
        MixtureZigHMM(n_components=1, n_init=1).fit(X)


@pytest.mark.parametrize("kw", [{"n_components": 0}, {"n_init": 1.5}, {"random_state": "x"}])
def test_bad_hyperparameters(kw, data):
    with pytest.raises(ZigHmmError):
        MixtureZigHMM(**kw).fit(data.values)
