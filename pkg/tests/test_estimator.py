import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from tsan.data import degrade, synthetic_image
from tsan.estimator import TSANSuperResolver, check_image, check_image_list, check_pairs


def corpus(n=2, size=32):
    rng = np.random.default_rng(1)
    hrs = [synthetic_image(size, size, rng) for _ in range(n)]
    return [degrade(h, 2) for h in hrs], hrs


def small(**kw):
    params = dict(variant="micro", iters=2, batch=2, patch=8, lr0=1e-3)
    return TSANSuperResolver(**{**params, **kw})


def test_get_params_and_clone():
    est = small(seed=3)
    params = est.get_params()
    assert params["variant"] == "micro" and params["seed"] == 3 and params["rgb_mean"] is None
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    assert est.set_params(iters=5).iters == 5


def test_fit_predict_shapes():
    X, y = corpus()
    est = small().fit(X, y)
    assert est.n_iter_ == 2 and len(est.loss_curve_) == 2
    out = est.predict(X)
    assert [o.shape for o in out] == [(32, 32, 3)] * 2 and out[0].dtype == np.uint8
    coarse = est.predict(X[0], stage="sr1")
    assert len(coarse) == 1 and coarse[0].shape == (32, 32, 3)
    assert np.isfinite(est.score(X, y))


def test_fit_is_deterministic():
    X, y = corpus()
    a, b = small().fit(X, y), small().fit(X, y)
    assert a.loss_curve_ == b.loss_curve_
    np.testing.assert_array_equal(a.predict(X)[0], b.predict(X)[0])


def test_default_mean_is_hr_pixel_mean():
    X, y = corpus()
    est = small().fit(X, y)
    expected = np.concatenate([h.reshape(-1, 3) for h in y]).mean(axis=0)
    np.testing.assert_allclose(est.model_.cfg.rgb_mean, expected)


def test_predict_before_fit_raises():
    with pytest.raises(NotFittedError):
        small().predict(corpus()[0])


def test_bad_stage_and_variant():
    X, y = corpus()
    est = small().fit(X, y)
    with pytest.raises(ValueError):
        est.predict(X, stage="sr3")
    with pytest.raises(ValueError):
        TSANSuperResolver(variant="nope", iters=0).fit(X, y)


def test_image_validation():
    assert check_image(np.full((2, 2, 3), 7.0)).dtype == np.uint8
    for bad in (np.zeros((2, 2)), np.zeros((2, 2, 4)), np.full((2, 2, 3), 300.0), np.full((2, 2, 3), np.nan),
                np.zeros((0, 2, 3))):
        with pytest.raises(ValueError):
            check_image(bad)
    with pytest.raises(ValueError):
        check_image_list([])


def test_pair_validation():
    X, y = corpus()
    with pytest.raises(ValueError):
        check_pairs(X, y[:1], 2)
    with pytest.raises(ValueError):
        check_pairs(X, X, 2)
    with pytest.raises(ValueError):
        small(iters=-1).fit(X, y)
