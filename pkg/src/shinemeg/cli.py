"""Command line entry point: ``shinemeg <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure. Errors are printed to stderr as one JSON line naming the error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .dataset import SplitPlan, SynthConfig, leave_session_out_split, list_sessions, load_session, synth_corpus
from .ensemble import EnsembleSpec, ensemble_evaluate, read_manifest
from .exceptions import EXIT_CODES, ConfigParse, EmptyInput, MissingField, ShineError
from .inference import evaluate_traces, list_traces, predict_sessions, read_trace, write_metrics_csv, write_trace
from .model import ModelConfig, load_checkpoint, parameter_digest
from .training import TrainConfig, train

log = logging.getLogger("shinemeg")


def _digest_paths(paths) -> str:
    h = hashlib.sha256()
    for p in sorted(Path(x) for x in paths):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def _digest_dir(root) -> str:
    return _digest_paths(p for p in Path(root).rglob("*") if p.is_file())


def write_run_manifest(out_dir, command, config, seeds, inputs, started):
    manifest = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "input_digests": inputs,
        "tool_version": __version__,
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    (Path(out_dir) / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _emit(summary: dict):
    print(json.dumps(summary, sort_keys=True))


def _now():
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise MissingField(f"{path} not found") from exc
    except ValueError as exc:
        raise ConfigParse(f"{path}: invalid JSON ({exc})") from exc


# -- commands --------------------------------------------------------------


def cmd_synth(args):
    started = _now()
    cfg = SynthConfig(
        duration_s=args.duration,
        n_channels=args.channels,
        snr=args.snr,
        aux_informative=not args.aux_noise,
        head_seed=args.head_seed,
    )
    cfg.validate()
    paths = synth_corpus(args.out, args.sessions, cfg, seed=args.seed)
    write_run_manifest(args.out, "synth", vars_of(args), {"seed": args.seed, "head_seed": args.head_seed}, {}, started)
    _emit({"command": "synth", "sessions": [p.name for p in paths], "out": str(args.out)})


def cmd_split(args):
    ids = [load_session(p).session_id for p in list_sessions(args.data)]
    plan = leave_session_out_split(ids, args.n_val, args.seed)
    out = Path(args.out) if args.out else Path(args.data) / "split.json"
    out.write_text(json.dumps(plan.to_dict(), indent=2, sort_keys=True))
    _emit({"command": "split", "out": str(out), "n_train": len(plan.train_sessions), "n_val": len(plan.val_sessions)})


TRAIN_OVERRIDES = {
    "lr": "lr",
    "weight_decay": "weight_decay",
    "max_epochs": "max_epochs",
    "batch_size": "batch_size",
    "patience": "patience",
    "n_val": "n_val_sessions",
    "window": "window_seconds",
    "stride": "stride_seconds",
    "seed": "seed",
    "mode": "mode",
}
MODEL_OVERRIDES = {
    "d_init": "d_init",
    "n_blocks": "n_blocks",
    "block_width": "block_width",
    "lstm_hidden": "lstm_hidden",
    "context_kernel": "context_kernel",
}


def resolve_train_configs(args, n_channels):
    """File values first, then command-line flags that were given."""
    file_cfg = _load_json(args.config) if args.config else {}
    if not isinstance(file_cfg, dict) or set(file_cfg) - {"model", "train"}:
        raise ConfigParse("config file must be an object with optional 'model' and 'train' sections")
    train_d = dict(file_cfg.get("train", {}))
    model_d = dict(file_cfg.get("model", {}))
    for flag, key in TRAIN_OVERRIDES.items():
        if getattr(args, flag) is not None:
            train_d[key] = getattr(args, flag)
    for flag, key in MODEL_OVERRIDES.items():
        if getattr(args, flag) is not None:
            model_d[key] = getattr(args, flag)
    try:
        train_cfg = TrainConfig.from_dict(train_d)
        model_d.setdefault("in_channels", n_channels)
        model_d.setdefault("seed", train_cfg.seed)
        model_d["out_channels"] = train_cfg.out_channels
        model_cfg = ModelConfig.from_dict(model_d)
    except TypeError as exc:
        raise ConfigParse(str(exc)) from exc
    return model_cfg, train_cfg


def cmd_train(args):
    started = _now()
    session_dirs = list_sessions(args.data)
    if not session_dirs:
        raise EmptyInput(f"no sessions under {args.data}")
    n_channels = load_session(session_dirs[0]).n_channels
    model_cfg, train_cfg = resolve_train_configs(args, n_channels)
    split = SplitPlan.from_dict(_load_json(args.split)) if args.split else None
    report = train(model_cfg, train_cfg, args.data, run_dir=args.out, split=split)
    inputs = {"data": _digest_dir(args.data)}
    if args.split:
        inputs["split"] = _digest_paths([args.split])
    if args.config:
        inputs["config"] = _digest_paths([args.config])
    config = {"model": model_cfg.to_dict(), "train": train_cfg.to_dict()}
    write_run_manifest(args.out, "train", config, {"seed": train_cfg.seed}, inputs, started)
    _emit({
        "command": "train",
        "best_epoch": report.best_epoch,
        "best_val_pearson": report.best_val_pearson,
        "checkpoint": report.checkpoint_path,
    })


def cmd_predict(args):
    started = _now()
    model, extra = load_checkpoint(args.ckpt)
    model_id = args.model_id or "m" + parameter_digest(model)[:10]
    wanted = set(args.sessions) if args.sessions else None
    sessions = []
    for p in list_sessions(args.data):
        s = load_session(p, normalize=True)
        if wanted is None or s.session_id in wanted:
            sessions.append(s)
    if not sessions:
        raise EmptyInput(f"no sessions to predict under {args.data}")
    traces = predict_sessions(
        model,
        sessions,
        jobs=args.jobs,
        window_seconds=args.window,
        stride_seconds=args.stride,
        trim_seconds=args.trim,
        model_id=model_id,
    )
    for t in traces:
        write_trace(t, args.out)
    inputs = {"ckpt": _digest_paths([args.ckpt]), "data": _digest_dir(args.data)}
    config = {"window": args.window, "stride": args.stride, "trim": args.trim, "model_id": model_id}
    write_run_manifest(args.out, "predict", config, {}, inputs, started)
    _emit({"command": "predict", "model_id": model_id, "sessions": [t.session_id for t in traces]})


def _calibration_ids(spec):
    if spec is None:
        return None
    p = Path(spec)
    if p.exists():
        return list(SplitPlan.from_dict(_load_json(p)).val_sessions)
    return [x for x in spec.split(",") if x]


def cmd_eval(args):
    paths = list_traces(args.traces)
    traces = [read_trace(p) for p in paths]
    if args.model_id:
        traces = [t for t in traces if t.model_id == args.model_id]
    if not traces:
        raise EmptyInput(f"no traces in {args.traces}")
    models = sorted({t.model_id for t in traces})
    if len(models) > 1:
        raise ConfigParse(f"traces from several models {models}; pick one with --model-id or use 'ensemble'")
    by_session = {t.session_id: t for t in traces}
    labels = {s.session_id: s.labels for s in (load_session(p) for p in list_sessions(args.data))}
    cal = _calibration_ids(args.calibrate_on) or []
    eval_ids = args.evaluate_on.split(",") if args.evaluate_on else sorted(set(by_session) - set(cal))
    threshold, rows = evaluate_traces(by_session, labels, cal, eval_ids, threshold=args.threshold)
    out = Path(args.out) if args.out else Path(args.traces) / "metrics.csv"
    write_metrics_csv(rows, out)
    _emit({"command": "eval", "model_id": models[0], "threshold": threshold, "f1_macro": rows[-1]["f1_macro"], "out": str(out)})


def cmd_ensemble(args):
    started = _now()
    m = read_manifest(args.manifest)
    spec = EnsembleSpec(m["traces"], m.get("weights"), m.get("normalization", "zscore-per-trace"))
    data = args.data or m.get("data")
    if data is None:
        raise MissingField("labels root: pass --data or set 'data' in the manifest")
    data = Path(data) if Path(data).is_absolute() or args.data else Path(args.manifest).parent / data
    threshold, rows, averaged = ensemble_evaluate(spec, data, m.get("calibrate_on") or [], m.get("evaluate_on"))
    out = Path(args.out)
    for t in averaged.values():
        write_trace(t, out / "traces")
    write_metrics_csv(rows, out / "metrics.csv")
    model_id = next(iter(averaged.values())).model_id
    resolved = {**spec.to_dict(), "digest": model_id, "threshold": threshold}
    (out / "ensemble.json").write_text(json.dumps(resolved, indent=2, sort_keys=True))
    write_run_manifest(out, "ensemble", resolved, {}, {"traces": _digest_paths(spec.trace_paths)}, started)
    _emit({"command": "ensemble", "model_id": model_id, "threshold": threshold, "f1_macro": rows[-1]["f1_macro"]})


def vars_of(args):
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="shinemeg", description="MEG speech/silence decoding with SHINE.", formatter_class=fmt)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic corpus", formatter_class=fmt)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--sessions", type=int, default=10)
    s.add_argument("--duration", type=float, default=120.0, help="seconds per session")
    s.add_argument("--channels", type=int, default=32)
    s.add_argument("--snr", type=float, default=1.0, help="signal/noise power ratio per channel")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--head-seed", type=int, default=0, help="seed of the shared mixing model")
    s.add_argument("--aux-noise", action="store_true", help="replace envelope/mel rows with noise")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("split", help="draw a leave-session-out split", formatter_class=fmt)
    s.add_argument("--data", required=True, type=Path)
    s.add_argument("--n-val", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path, default=None, help="split file (default: DATA/split.json)")
    s.set_defaults(func=cmd_split)

    # train flags default to None so config-file values survive; help shows the effective defaults
    d = TrainConfig()
    s = sub.add_parser("train", help="train a model", formatter_class=argparse.HelpFormatter)
    s.add_argument("--data", required=True, type=Path)
    s.add_argument("--split", type=Path, help="split JSON from 'split' (default: draw one)")
    s.add_argument("--mode", choices=("standard", "extended"), help=f"target layout (default: {d.mode})")
    s.add_argument("--config", type=Path, help="JSON with 'model' and 'train' sections")
    s.add_argument("--out", required=True, type=Path, help="run directory")
    s.add_argument("--lr", type=float, help=f"AdamW learning rate (default: {d.lr:g})")
    s.add_argument("--weight-decay", type=float, help=f"AdamW weight decay (default: {d.weight_decay:g})")
    s.add_argument("--max-epochs", type=int, help=f"epoch cap (default: {d.max_epochs})")
    s.add_argument("--batch-size", type=int, help=f"windows per batch (default: {d.batch_size})")
    s.add_argument("--patience", type=int, help=f"early-stopping patience (default: {d.patience})")
    s.add_argument("--n-val", type=int, help=f"validation sessions when no split is given (default: {d.n_val_sessions})")
    s.add_argument("--window", type=float, help=f"window length in seconds (default: {d.window_seconds:g})")
    s.add_argument("--stride", type=float, help=f"training window stride in seconds (default: {d.stride_seconds:g})")
    s.add_argument("--seed", type=int, help=f"run seed (default: {d.seed})")
    m = ModelConfig()
    s.add_argument("--d-init", type=int, help=f"initial feature width (default: {m.d_init})")
    s.add_argument("--n-blocks", type=int, help=f"number of blocks (default: {m.n_blocks})")
    s.add_argument("--block-width", type=int, help=f"block width (default: {m.block_width})")
    s.add_argument("--lstm-hidden", type=int, help=f"LSTM hidden size per direction (default: {m.lstm_hidden})")
    s.add_argument("--context-kernel", type=int, help=f"output context kernel (default: {m.context_kernel})")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="write prediction traces", formatter_class=fmt)
    s.add_argument("--ckpt", required=True, type=Path)
    s.add_argument("--data", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path, help="trace directory")
    s.add_argument("--window", type=float, default=30.0, help="window seconds")
    s.add_argument("--stride", type=float, default=20.0, help="inference stride seconds")
    s.add_argument("--trim", type=float, default=5.0, help="seconds trimmed per window edge")
    s.add_argument("--model-id", default=None, help="trace model id (default: parameter digest)")
    s.add_argument("--sessions", nargs="*", default=None, help="restrict to these session ids")
    s.add_argument("--jobs", type=int, default=1, help="parallel sessions")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("eval", help="calibrate a threshold and score traces", formatter_class=fmt)
    s.add_argument("--traces", required=True, type=Path)
    s.add_argument("--data", required=True, type=Path)
    s.add_argument("--calibrate-on", default=None, help="split JSON (its val sessions) or comma-separated ids")
    s.add_argument("--evaluate-on", default=None, help="comma-separated ids (default: all others)")
    s.add_argument("--threshold", type=float, default=None, help="fixed threshold; skips calibration")
    s.add_argument("--model-id", default=None)
    s.add_argument("--out", type=Path, default=None, help="metrics CSV (default: TRACES/metrics.csv)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ensemble", help="average traces, calibrate, score", formatter_class=fmt)
    s.add_argument("--manifest", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--data", type=Path, default=None, help="labels root (overrides the manifest)")
    s.set_defaults(func=cmd_ensemble)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        args.func(args)
    except ShineError as exc:
        print(json.dumps({"error": exc.name, "message": str(exc)}), file=sys.stderr)
        return EXIT_CODES[exc.category]
    except OSError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_CODES["data"]
    return 0


if __name__ == "__main__":
    sys.exit(main())
