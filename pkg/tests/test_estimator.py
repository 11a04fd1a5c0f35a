import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from suda import SudaVerifier
from suda.errors import ShapeError, UtteranceTooShortError


def toy_data(rng, n_per=4, lengths=(9, 11)):
    """Four (speaker, phrase) cells whose features differ by a constant offset."""
    X, y = [], []
    for s, spk in enumerate(["ann", "bob"]):
        for p, phr in enumerate(["one", "two"]):
            for i in range(n_per):
                X.append(rng.normal(size=(lengths[i % 2], 60)) + s - p)
                y.append([spk, phr])
    return X, np.array(y)


def small(**kw):
    settings = dict(shared_hidden=6, branch_hidden=6, conv_channels=5, optimizer="adam",
                    learning_rate=1e-2, epochs=3, batch_size=8)
    return SudaVerifier(**{**settings, **kw})


def test_get_set_params_and_clone():
    est = small(seed=7)
    params = est.get_params()
    assert params["seed"] == 7 and params["conv_channels"] == 5 and params["masks_enabled"] is True
    twin = clone(est).set_params(masks_enabled=False)
    assert twin.masks_enabled is False and est.masks_enabled is True


def test_defaults_follow_reference_setup():
    p = SudaVerifier().get_params()
    assert (p["optimizer"], p["learning_rate"], p["momentum"], p["batch_size"], p["seed"]) == \
        ("sgd", 1e-3, 0.9, 128, 2020)
    assert (p["shared_hidden"], p["branch_hidden"], p["conv_channels"]) == (256, 256, 512)


def test_fit_transform_predict(rng):
    X, y = toy_data(rng)
    est = small().fit(X, y)
    assert list(est.speaker_classes_) == ["ann", "bob"]
    assert est.transform(X).shape == (len(X), 10)
    assert est.embed(X, "utterance").shape == (len(X), 5)
    np.testing.assert_array_equal(est.transform(X)[:, :5], est.embed(X, "speaker"))
    pred = est.predict(X)
    assert pred.shape == (len(X), 2)
    assert set(pred[:, 0]) <= {"ann", "bob"} and set(pred[:, 1]) <= {"one", "two"}
    assert len(est.train_log_.steps) == 3 * 2


def test_fit_is_deterministic(rng):
    X, y = toy_data(rng)
    a, b = small().fit(X, y), small().fit(X, y)
    assert a.train_log_.loss_column() == b.train_log_.loss_column()
    np.testing.assert_array_equal(a.transform(X), b.transform(X))


def test_epoch_callback_sees_usable_model(rng):
    X, y = toy_data(rng)
    seen = []
    est = small()
    est.fit(X, y, epoch_callback=lambda epoch, model: seen.append(model.transform(X[:1]).shape) or 1.5)
    assert seen == [(1, 10)] * 3
    assert [e["dev_eer"] for e in est.train_log_.epochs] == [1.5] * 3


def test_not_fitted():
    with pytest.raises(NotFittedError):
        SudaVerifier().transform([np.zeros((10, 60))])


@pytest.mark.parametrize("X, y, err", [
    ([np.zeros((10, 13))], [["a", "b"]], ShapeError),
    ([np.zeros((4, 60))], [["a", "b"]], UtteranceTooShortError),
    ([np.zeros((10, 60))], [["a", "b"], ["a", "c"]], ShapeError),
    ([np.zeros((10, 60))], ["a"], ShapeError),
    ([np.full((10, 60), np.nan)], [["a", "b"]], ValueError),
    ([], np.zeros((0, 2)), ValueError),
])
def test_input_validation(X, y, err):
    with pytest.raises(err):
        small().fit(X, y)


def test_bad_branch(rng):
    X, y = toy_data(rng, n_per=2)
    est = small(epochs=1).fit(X, y)
    with pytest.raises(ValueError, match="branch"):
        est.embed(X, "phrase")
