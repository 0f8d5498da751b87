import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_session
from shinemeg.dataset import (
    SynthConfig,
    head_model,
    leave_session_out_split,
    load_session,
    make_windows,
    synth_session,
    window_starts,
    write_session,
)
from shinemeg.exceptions import CorruptFile, InvalidConfig, MissingField, SessionTooShort, TooFewSessions


def test_round_trip_bit_exact(tmp_path):
    s = make_session(n_channels=8, n_samples=5000)
    write_session(s, tmp_path / "s0")
    r = load_session(tmp_path / "s0")
    assert r.session_id == s.session_id and r.rate_hz == s.rate_hz
    assert r.meg.tobytes() == s.meg.tobytes()
    np.testing.assert_array_equal(r.labels, s.labels)
    assert r.envelope.tobytes() == s.envelope.tobytes()
    assert r.mel.tobytes() == s.mel.tobytes()


def test_meta_layout(tmp_path):
    write_session(make_session(aux=False), tmp_path / "s0")
    meta = json.loads((tmp_path / "s0" / "meta.json").read_text())
    assert meta == {"session_id": "s0", "rate_hz": 250.0, "n_channels": 8, "n_samples": 5000, "rows": ["meg", "labels"]}
    assert (tmp_path / "s0" / "meg.f32").stat().st_size == 8 * 5000 * 4


def test_corrupt_and_missing(tmp_path):
    d = write_session(make_session(), tmp_path / "s0")
    (d / "meg.f32").write_bytes((d / "meg.f32").read_bytes()[:-4])
    with pytest.raises(CorruptFile):
        load_session(d)
    d = write_session(make_session(), tmp_path / "s1")
    (d / "labels.u8").unlink()
    with pytest.raises(MissingField):
        load_session(d)
    d = write_session(make_session(), tmp_path / "s2")
    meta = json.loads((d / "meta.json").read_text())
    del meta["rate_hz"]
    (d / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(MissingField):
        load_session(d)


def test_load_normalized(tmp_path):
    s = make_session()
    s.meg[:] = s.meg * 7 + 3
    d = write_session(s, tmp_path / "s0")
    n = load_session(d, normalize=True)
    np.testing.assert_allclose(n.meg.mean(axis=1), 0, atol=1e-5)
    np.testing.assert_allclose(n.meg.std(axis=1), 1, atol=1e-4)


@pytest.mark.parametrize(
    "seconds, starts",
    [
        (100, [0, 30, 60, 70]),
        (30, [0]),
        (90, [0, 30, 60]),
    ],
)
def test_window_starts(seconds, starts):
    s = make_session(n_samples=int(seconds * 250), n_channels=2)
    wins = make_windows(s, 30, 30, "standard")
    assert [w.start_sample / 250 for w in wins] == starts
    assert all(w.meg.shape == (2, 7500) and w.target.shape == (1, 7500) for w in wins)


def test_session_too_short():
    with pytest.raises(SessionTooShort):
        make_windows(make_session(n_samples=5000), 30, 30)


def test_extended_windows():
    s = make_session(n_samples=7500, n_channels=2)
    (w,) = make_windows(s, 30, 30, "extended")
    assert w.target.shape == (12, 7500)
    np.testing.assert_array_equal(w.target[-1], s.labels)
    assert w.session_id == s.session_id


@given(st.integers(10, 3000), st.integers(1, 500), st.integers(1, 500))
def test_windows_cover_every_sample(n, window, stride):
    if stride > window or n < window:
        return
    covered = np.zeros(n, dtype=bool)
    for a in window_starts(n, window, stride):
        covered[a:a + window] = True
    assert covered.all()


def test_split_examples():
    ids = [f"s{i:02d}" for i in range(92)]
    plan = leave_session_out_split(ids, 8, seed=3)
    assert len(plan.train_sessions) == 84 and len(plan.val_sessions) == 8
    assert not set(plan.train_sessions) & set(plan.val_sessions)
    assert plan == leave_session_out_split(ids, 8, seed=3)
    with pytest.raises(TooFewSessions):
        leave_session_out_split(ids[:5], 8, seed=0)


def test_split_properties_over_seeds():
    ids = [f"s{i:02d}" for i in range(92)]
    for seed in range(100):
        plan = leave_session_out_split(ids, 8, seed)
        assert len(plan.val_sessions) == 8
        assert not set(plan.train_sessions) & set(plan.val_sessions)
        assert set(plan.train_sessions) | set(plan.val_sessions) == set(ids)


def test_synth_shape_and_determinism():
    cfg = SynthConfig(duration_s=120, n_channels=32)
    a = synth_session(cfg, seed=5)
    assert a.meg.shape == (32, 30000) and a.labels.shape == (30000,)
    assert a.envelope.shape == (30000,) and a.mel.shape == (10, 30000)
    b = synth_session(cfg, seed=5)
    assert a.meg.tobytes() == b.meg.tobytes()
    np.testing.assert_array_equal(a.labels, b.labels)


def test_synth_speech_fraction():
    cfg = SynthConfig()
    for seed in range(10):
        frac = synth_session(cfg, seed).labels.mean()
        assert 0.3 <= frac <= 0.9


def test_synth_noise_free_linear_decode():
    """Least-squares decode through the known head model recovers the labels."""
    cfg = SynthConfig(duration_s=60, n_channels=32, snr=float("inf"))
    s = synth_session(cfg, seed=1)
    _, lags = head_model(cfg, 12)
    n = s.n_samples
    pad = int(lags.max())
    # undo each channel's lag so every row sees the latents at time t
    aligned = np.stack([s.meg[c, lags[c]:n - pad + lags[c]] for c in range(cfg.n_channels)]).astype(np.float64)
    target = s.labels[: n - pad].astype(np.float64)
    design = np.vstack([aligned, np.ones(aligned.shape[1])]).T
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    r = np.corrcoef(design @ coef, target)[0, 1]
    assert r > 0.99


def test_synth_aux_noise_keeps_meg():
    a = synth_session(SynthConfig(duration_s=30), seed=2)
    b = synth_session(SynthConfig(duration_s=30, aux_informative=False), seed=2)
    assert a.meg.tobytes() == b.meg.tobytes()
    assert not np.array_equal(a.envelope, b.envelope)


@pytest.mark.parametrize("kw", [{"n_channels": 0}, {"duration_s": 10}, {"snr": 0.0}])
def test_synth_invalid(kw):
    with pytest.raises(InvalidConfig):
        synth_session(SynthConfig(**kw), seed=0)
