"""Synthetic benchmark shared by the acceptance tests.

Ten 120 s sessions at 32 channels. Sessions 000-008 go through the
leave-session-out split (2 validation sessions); sess-009 is never seen in
training or calibration and provides the held-out F1.
"""
import time
from dataclasses import dataclass
from pathlib import Path

from shinemeg.dataset import SynthConfig, leave_session_out_split, load_corpus, synth_corpus
from shinemeg.inference import evaluate_traces, predict_session
from shinemeg.model import ModelConfig, load_checkpoint
from shinemeg.training import TrainConfig, train

N_SESSIONS = 10
HELD_OUT = "sess-009"
SYNTH = dict(duration_s=120.0, n_channels=32, snr=1.0)
MODEL = dict(in_channels=32, d_init=16, n_blocks=2, block_width=16, lstm_hidden=16)
TRAIN = dict(max_epochs=6, batch_size=2, patience=4, n_val_sessions=2)


def make_corpus(root: Path, aux_informative=True) -> Path:
    synth_corpus(root, N_SESSIONS, SynthConfig(**SYNTH, aux_informative=aux_informative), seed=0)
    return root


def split_plan():
    ids = [f"sess-{i:03d}" for i in range(N_SESSIONS) if f"sess-{i:03d}" != HELD_OUT]
    return leave_session_out_split(ids, TRAIN["n_val_sessions"], seed=0)


@dataclass
class BenchRun:
    report: object
    traces: dict
    threshold: float
    test_f1: float
    seconds: float


def run(corpus: Path, run_dir: Path, mode="standard", seed=0) -> BenchRun:
    """Train, predict on validation and held-out sessions, calibrate, score."""
    t0 = time.perf_counter()
    plan = split_plan()
    out = 12 if mode == "extended" else 1
    report = train(
        ModelConfig(**MODEL, out_channels=out, seed=seed),
        TrainConfig(**TRAIN, mode=mode, seed=seed),
        corpus,
        run_dir=run_dir,
        split=plan,
    )
    model, _ = load_checkpoint(report.checkpoint_path)
    sessions = load_corpus(corpus, normalize=True)
    ids = list(plan.val_sessions) + [HELD_OUT]
    traces = {sid: predict_session(model, sessions[sid], model_id=f"{mode}-{seed}") for sid in ids}
    labels = {sid: sessions[sid].labels for sid in ids}
    threshold, rows = evaluate_traces(traces, labels, plan.val_sessions, [HELD_OUT])
    return BenchRun(report, traces, threshold, rows[-1]["f1_macro"], time.perf_counter() - t0)
