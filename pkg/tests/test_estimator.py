import numpy as np
import pytest
from sklearn.base import clone

from shinemeg.dataset import SynthConfig, synth_session
from shinemeg.estimator import ShineDecoder, ThresholdCalibrator
from shinemeg.exceptions import EmptyInput, InvalidConfig, NonBinaryLabels, ShapeMismatch
from shinemeg.inference import select_threshold
from shinemeg.validation import check_binary, check_meg, check_scores, check_sessions


def test_get_params_and_clone():
    est = ShineDecoder(d_init=16, random_state=3)
    params = est.get_params()
    assert params["d_init"] == 16 and params["random_state"] == 3 and params["lr"] == 1e-3
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    assert est.set_params(n_blocks=2).n_blocks == 2


def test_calibrator_matches_threshold_selection():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, 500)
    s = y + 0.8 * rng.standard_normal(500)
    cal = ThresholdCalibrator().fit(s, y)
    assert cal.threshold_ == select_threshold(s, y) and cal.polarity_ == 1
    np.testing.assert_array_equal(cal.predict(s), (s >= cal.threshold_).astype(np.uint8))
    assert 0.5 < cal.score(s, y) <= 1.0


def test_calibrator_inversion():
    y = np.repeat([0, 1], 50)
    s = -y.astype(float)
    plain = ThresholdCalibrator().fit(s, y)
    flipped = ThresholdCalibrator(allow_inversion=True).fit(s, y)
    assert flipped.polarity_ == -1 and flipped.f1_ == 1.0 > plain.f1_
    np.testing.assert_array_equal(flipped.predict(s), y)


def test_calibrator_input_checks():
    with pytest.raises(NonBinaryLabels):
        ThresholdCalibrator().fit([0.1, 0.2], [0, 2])
    with pytest.raises(EmptyInput):
        ThresholdCalibrator().fit([], [])
    with pytest.raises(InvalidConfig):
        check_scores([0.0, np.nan])


def test_validation_helpers():
    s = synth_session(SynthConfig(duration_s=30, n_channels=4), 0)
    assert check_sessions(s)[0] is s
    assert check_sessions([(s.meg, s.labels)])[0].session_id == "session-000"
    with pytest.raises(ShapeMismatch):
        check_sessions([s], n_channels=5)
    with pytest.raises(InvalidConfig):
        check_sessions([s, s])
    with pytest.raises(InvalidConfig):
        check_sessions([42])
    with pytest.raises(ShapeMismatch):
        check_meg(np.zeros(10))
    assert check_binary([[0, 1]]).dtype == np.uint8


def test_decoder_fit_predict():
    cfg = SynthConfig(duration_s=30, n_channels=8, snr=2.0)
    sessions = [synth_session(cfg, i, f"s{i}") for i in range(4)]
    est = ShineDecoder(
        d_init=8, n_blocks=2, block_width=8, lstm_hidden=8, max_epochs=2, batch_size=4,
        n_val_sessions=1, window_seconds=5.0, stride_seconds=5.0, infer_stride_seconds=3.0, trim_seconds=1.0,
    )
    est.fit(sessions[:3])
    assert est.n_channels_in_ == 8 and np.isfinite(est.threshold_)
    scores = est.decision_function(sessions[3:])
    assert scores[0].shape == sessions[3].labels.shape
    labels = est.predict(sessions[3:])
    assert set(np.unique(labels[0])) <= {0, 1}
    assert 0.0 <= est.score(sessions[3:]) <= 1.0
    with pytest.raises(ShapeMismatch):
        est.predict([synth_session(SynthConfig(duration_s=30, n_channels=4), 9)])
