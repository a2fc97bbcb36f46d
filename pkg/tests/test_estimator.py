import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from streamdiff.estimator import StreamingMotionDiffuser
from streamdiff.synthgen import SynthConfig, generate_dataset

TINY = dict(h=2, f=3, steps=5, batch_size=4, width=16, n_blocks=1, heads=2)


@pytest.fixture(scope="module")
def data():
    syn = SynthConfig(n_frames=40)
    return syn, generate_dataset(syn, 4), generate_dataset(syn, 2, offset=100)


@pytest.fixture(scope="module")
def fitted(data):
    syn, train, _ = data
    return StreamingMotionDiffuser(synth=syn, **TINY).fit(train)


def test_params_round_trip():
    est = StreamingMotionDiffuser(h=2, f=3, stab_n=1)
    params = est.get_params()
    assert params["h"] == 2 and params["stab_n"] == 1
    other = clone(est).set_params(stab_n=0)
    assert other.stab_n == 0 and est.stab_n == 1


def test_predict_before_fit(data):
    with pytest.raises(NotFittedError):
        StreamingMotionDiffuser(**TINY).predict(data[2][0])


def test_predict_shapes(fitted, data):
    _, _, test = data
    single = fitted.predict(test[0])
    assert single.shape == test[0].poses_world.shape
    many = fitted.predict(test)
    assert len(many) == 2 and np.array_equal(many[0], single)
    from_obs = fitted.predict(test[0].observations())
    assert np.array_equal(from_obs, single)


def test_score_is_negative_error(fitted, data):
    s = fitted.score(data[2])
    assert np.isfinite(s) and s < 0


def test_save_load_reproduces_predictions(fitted, data, tmp_path):
    path = fitted.save(tmp_path / "m.ckpt")
    loaded = StreamingMotionDiffuser.load(path)
    assert loaded.get_params()["h"] == 2
    assert np.array_equal(loaded.predict(data[2][0]), fitted.predict(data[2][0]))


def test_invalid_inputs(data):
    est = StreamingMotionDiffuser(**TINY)
    with pytest.raises(ValueError, match="at least one"):
        est.fit([])
    with pytest.raises(TypeError):
        est.fit([np.zeros((40, 21))])
    with pytest.raises(ValueError, match="invalid horizon"):
        StreamingMotionDiffuser(h=2, f=6).fit(data[1])
    short = SynthConfig(n_frames=4)
    with pytest.raises(ValueError, match="at least"):
        est.fit(generate_dataset(short, 2))
