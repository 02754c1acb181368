"""Command-line driver: ``ecgfusion <command> [flags]``.

Exit status: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .estimator import EcgIdentifier
from .fiducial import DetectionError, delineate, detect_r_peaks, write_fiducial_table
from .fusion import parse_grid
from .ingest import (IngestError, load_manifest, load_records, read_records_jsonl, synthetic_cohort,
                     write_records_jsonl, write_wfdb_record)
from .nn.checkpoint import CheckpointError
from .nn.tensor import NumericalError
from .preprocess import SavGolConfig, savgol_filter
from .protocol import (FoldError, ProtocolError, SessionProtocol, compute_metrics, holdout_split, run_cv,
                       run_session_protocol)
from .report import (ReportError, emit_report, write_alpha_csv, write_confusion_csv, write_history_csv,
                     write_metrics_csv, write_roc_csv, write_sweep_csv)
from .repro import __version__, canonical_json, config_hash, header_lines, stage_seed
from .scalogram import CwtSupportWarning, save_png
from .segment import (SegmentationError, SegmentStrategy, read_segment_store, segment_records,
                      segments_to_arrays, write_segment_store)

logger = logging.getLogger("ecgfusion")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
DATA_ERRORS = (IngestError, SegmentationError, DetectionError, ProtocolError, ReportError,
               CheckpointError, OSError, ValueError)
# flags that never influence artifact contents
_NOT_HASHED = {"out", "config", "jobs", "verbose", "func", "command"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="global seed, fanned out per stage")
    p.add_argument("--config", type=Path, help="key=value file mirroring the long flags")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for scalograms")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _sg() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--sg-window", type=int, default=11, help="Savitzky-Golay window length (odd)")
    p.add_argument("--sg-order", type=int, default=3, help="Savitzky-Golay polynomial order")
    return p


def _cwt() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--fmin", type=float, default=0.5)
    p.add_argument("--fmax", type=float, default=100.0)
    p.add_argument("--scales", type=int, default=64)
    p.add_argument("--img-size", type=int, default=64)
    p.add_argument("--log-power", action="store_true")
    return p


def _data() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--segments", type=Path, required=True, help="segment store CSV")
    p.add_argument("--scalograms", type=Path, help="precomputed scalograms (.npz); else cached compute")
    return p


def _model() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--fusion", default="attention",
                   help="temporal, spectral, feature, score or attention")
    p.add_argument("--lam", type=float, default=0.9, help="score-fusion weight on the temporal head")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--channels-1d", type=int, default=8)
    p.add_argument("--channels-2d", type=int, default=8)
    p.add_argument("--embedding-1d", type=int, default=512)
    p.add_argument("--embedding-2d", type=int, default=512)
    p.add_argument("--latent-dim", type=int, default=256)
    p.add_argument("--attention-dim", type=int, default=128)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ecgfusion", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ecgfusion {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common, sg, cwt, data, model = _common(), _sg(), _cwt(), _data(), _model()

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort (WFDB + manifest)")
    p.add_argument("--subjects", type=int, default=10)
    p.add_argument("--sessions", default="S1", help="comma-separated session names")
    p.add_argument("--duration", type=float, default=30.0)
    p.add_argument("--fs", type=float, default=360.0)
    p.add_argument("--noise", type=float, default=0.01, help="noise std (mV)")
    p.add_argument("--warp", type=float, default=0.0, help="per-session morphology time warp")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[common], help="read a manifest into a record store")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--max-duration", type=float, help="keep only the first N seconds of each record")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("preprocess", parents=[common, sg], help="Savitzky-Golay smoothing")
    p.add_argument("--records", type=Path, required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("segment", parents=[common, sg], help="detect, delineate and segment beats")
    p.add_argument("--records", type=Path, required=True)
    p.add_argument("--strategy", default="pt", help="pt, qrs, rr or random")
    p.add_argument("--target-len", type=int, default=256)
    p.add_argument("--max-instances", type=int, default=20, help="segments kept per subject")
    p.add_argument("--no-smooth", action="store_true", help="skip smoothing of unsmoothed records")
    p.add_argument("--dump-fiducials", action="store_true", help="write per-record fiducial tables")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("scalogram", parents=[common, cwt], help="CWT scalograms of a segment store")
    p.add_argument("--segments", type=Path, required=True)
    p.add_argument("--png", type=int, default=0, help="also export the first N images as PNG")
    p.set_defaults(func=cmd_scalogram)

    p = sub.add_parser("train", parents=[common, cwt, data, model], help="k-fold cross-validated training")
    p.add_argument("--folds", type=int, default=5, help="0 skips cross-validation")
    p.add_argument("--save-model", action="store_true", help="also fit on all data and save model.ckpt")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common, data], help="score a saved model on a segment store")
    p.add_argument("--model", type=Path, required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-lambda", parents=[common, cwt, data, model], help="score-fusion weight sweep")
    p.add_argument("--grid", default="0.1:0.9:0.1", help="start:stop:step or comma list")
    p.add_argument("--model", type=Path, help="saved score-fusion model; else trained on a holdout split")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("session", parents=[common, cwt, data, model], help="same/mixed/cross-session protocol")
    p.add_argument("--protocol", required=True, help="same, mixed or cross")
    p.add_argument("--train-sessions", required=True, help="comma-separated")
    p.add_argument("--test-sessions", default="", help="comma-separated (cross only)")
    p.set_defaults(func=cmd_session)

    p = sub.add_parser("report", parents=[common], help="render SVG figures and a summary from run CSVs")
    p.add_argument("--run", type=Path, required=True)
    p.set_defaults(func=cmd_report)
    return parser


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------

def read_config_file(path: Path) -> dict[str, str]:
    """``key = value`` lines; keys are long flag names with or without ``--``."""
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    out = {}
    for n, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value, got {line!r}")
        key, value = (t.strip() for t in line.split("=", 1))
        out[key.lstrip("-").replace("_", "-")] = value
    return out


def _apply_config(subparser: argparse.ArgumentParser, values: dict[str, str]) -> None:
    actions = {a.option_strings[-1].lstrip("-"): a for a in subparser._actions
               if a.option_strings and a.option_strings[-1].startswith("--")}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            raise UsageError(f"config: unknown field {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise UsageError(f"config: field {key!r} expects true/false, got {raw!r}")
            value = raw.lower() in ("true", "1", "yes")
        else:
            try:
                value = action.type(raw) if action.type else raw
            except (TypeError, ValueError):
                raise UsageError(f"config: field {key!r} has invalid value {raw!r}") from None
        defaults[action.dest] = value
        action.required = False
    subparser.set_defaults(**defaults)


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_known_args(argv)[0] if "--config" in " ".join(argv) else None
    if args is not None and getattr(args, "config", None):
        sub = parser._subparsers._group_actions[0].choices[args.command]
        _apply_config(sub, read_config_file(args.config))
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _effective(args: argparse.Namespace) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
            if k not in ("func",)}


def _hashed(args: argparse.Namespace) -> dict:
    return {k: v for k, v in _effective(args).items() if k not in _NOT_HASHED} | {"command": args.command}


def _headers(args) -> list[str]:
    return header_lines(args.seed, _hashed(args))


def _echo_config(args, extra: dict | None = None) -> None:
    echo = {"tool": f"ecgfusion {__version__}", "command": args.command, "seed": args.seed,
            "config_hash": config_hash(_hashed(args)), "params": _effective(args)}
    if extra:
        echo["results"] = extra
    (args.out / "config.json").write_text(json.dumps(json.loads(canonical_json(echo)), indent=2) + "\n")


def _csv_list(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _savgol(args) -> SavGolConfig:
    try:
        return SavGolConfig.from_window(args.sg_window, args.sg_order)
    except ValueError as exc:
        raise UsageError(f"sg-window/sg-order: {exc}") from None


def _load_segments(args):
    segments = read_segment_store(args.segments)
    X, y, sessions = segments_to_arrays(segments)
    return segments, X, y, sessions


def _estimator(args, fs: float) -> EcgIdentifier:
    est = EcgIdentifier(
        fusion=args.fusion, fs=fs, f_min=args.fmin, f_max=args.fmax, n_scales=args.scales,
        img_size=args.img_size, log_power=args.log_power, channels_1d=args.channels_1d,
        bottleneck_1d=args.channels_1d, embedding_1d=args.embedding_1d, channels_2d=args.channels_2d,
        embedding_2d=args.embedding_2d, latent_dim=args.latent_dim, attention_dim=args.attention_dim,
        lam=args.lam, learning_rate=args.lr, batch_size=args.batch_size, max_epochs=args.epochs,
        patience=args.patience, dropout=args.dropout, validation_fraction=args.val_fraction,
        random_state=stage_seed(args.seed, "model"), n_jobs=args.jobs)
    try:
        est._validate_params()
        est.train_config(0)
        est.cwt_plan()
        est._branch_configs(8)
    except ValueError as exc:
        raise UsageError(f"invalid configuration: {exc}") from None
    return est


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def _scalograms(args, est: EcgIdentifier, X: np.ndarray) -> np.ndarray | None:
    """Load ``--scalograms`` or compute them, caching next to the segment store."""
    if est.fusion == "temporal":
        return None
    if getattr(args, "scalograms", None):
        with np.load(args.scalograms) as z:
            images = z["images"]
        if images.shape != (len(X), est.img_size, est.img_size):
            raise ValueError(f"{args.scalograms}: scalograms of shape {images.shape} do not match "
                             f"{len(X)} segments at img-size {est.img_size}")
        return images
    key = config_hash({"segments": _file_digest(args.segments), "fs": est.fs, "fmin": est.f_min,
                       "fmax": est.f_max, "scales": est.n_scales, "img": est.img_size,
                       "log": est.log_power})
    cache = args.segments.parent / ".cache" / f"scalograms-{key}.npy"
    if cache.exists():
        logger.info("using cached scalograms %s", cache)
        return np.load(cache)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CwtSupportWarning)
        images = est.compute_scalograms(X)
    cache.parent.mkdir(exist_ok=True)
    np.save(cache, images)
    return images


def _write_eval_bundle(args, reports, labels, alphas, headers) -> None:
    write_metrics_csv(args.out / "metrics.csv", reports, headers)
    confusion = sum(r.confusion for r in reports)
    write_confusion_csv(args.out / "confusion.csv", confusion, labels, headers)
    write_roc_csv(args.out / "roc.csv", reports, labels, headers)
    if alphas is not None and len(alphas):
        write_alpha_csv(args.out / "alpha_hist.csv", np.concatenate(alphas), header_lines=headers)


def _write_histories(out: Path, tag: str, history: dict, headers) -> None:
    for mode, hist in (history or {}).items():
        suffix = f"_{mode}" if len(history) > 1 else ""
        write_history_csv(out / f"learning_curve_{tag}{suffix}.csv", hist, headers)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> dict:
    sessions = _csv_list(args.sessions)
    if not sessions:
        raise UsageError("sessions: at least one session name is required")
    records = synthetic_cohort(args.subjects, args.duration, args.fs, args.noise,
                               stage_seed(args.seed, "synth"), sessions, args.warp)
    rec_dir = args.out / "records"
    rec_dir.mkdir(exist_ok=True)
    lines = [f"# {h}" for h in _headers(args)] + [f"fs={args.fs:g}"]
    for r in records:
        name = f"{r.subject_id}_{r.session_id}"
        write_wfdb_record(rec_dir, name, r.samples, r.fs, lead_names=["synthetic"])
        lines.append(f"records/{name}.hea,{r.subject_id},{r.session_id}")
    (args.out / "manifest.txt").write_text("\n".join(lines) + "\n")
    write_records_jsonl(records, args.out / "records.jsonl", _headers(args))
    return {"records": len(records)}


def cmd_ingest(args) -> dict:
    manifest = load_manifest(args.manifest)
    records = load_records(manifest, args.max_duration)
    write_records_jsonl(records, args.out / "records.jsonl", _headers(args))
    return {"records": len(records), "subjects": len(manifest.subjects)}


def cmd_preprocess(args) -> dict:
    cfg = _savgol(args)
    records, _ = read_records_jsonl(args.records)
    smoothed = [replace(r, samples=savgol_filter(r.samples, cfg)) for r in records]
    write_records_jsonl(smoothed, args.out / "records.jsonl",
                        _headers(args) + [f"smoothed={cfg.window_length},{cfg.poly_order}"])
    return {"records": len(smoothed)}


def cmd_segment(args) -> dict:
    try:
        strategy = SegmentStrategy.parse(args.strategy)
    except SegmentationError as exc:
        raise UsageError(f"strategy: {exc}") from None
    records, comments = read_records_jsonl(args.records)
    already = any(c.startswith("smoothed=") for c in comments)
    cfg = None if (already or args.no_smooth) else _savgol(args)
    segments, report = segment_records(records, strategy, args.target_len, cfg, args.max_instances,
                                       stage_seed(args.seed, "segment"))
    if args.dump_fiducials:
        fid_dir = args.out / "fiducials"
        fid_dir.mkdir(exist_ok=True)
        for r in records:
            rr = replace(r, samples=savgol_filter(r.samples, cfg)) if cfg else r
            write_fiducial_table(delineate(rr, detect_r_peaks(rr)),
                                 fid_dir / f"{r.subject_id}_{r.session_id}.csv")
    write_segment_store(segments, args.out / "segments.csv", _headers(args))
    return {"segments": report.n_segments, "beats": report.n_beats, "valid_beats": report.n_valid,
            "exclusion_rate": round(report.exclusion_rate, 6), "skipped_records": report.skipped_records}


def cmd_scalogram(args) -> dict:
    segments, X, _, _ = _load_segments(args)
    est = EcgIdentifier(fs=segments[0].fs, f_min=args.fmin, f_max=args.fmax, n_scales=args.scales,
                        img_size=args.img_size, log_power=args.log_power, n_jobs=args.jobs)
    try:
        est.cwt_plan()
    except ValueError as exc:
        raise UsageError(f"invalid CWT configuration: {exc}") from None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", CwtSupportWarning)
        images = est.compute_scalograms(X)
    for w in caught:
        logger.warning("%s", w.message)
    np.savez(args.out / "scalograms.npz", images=images, header=np.array(_headers(args)),
             subject=np.array([s.subject_id for s in segments]),
             session=np.array([s.session_id for s in segments]))
    if args.png:
        png_dir = args.out / "png"
        png_dir.mkdir(exist_ok=True)
        text = {"header": "; ".join(_headers(args))}
        for i, (seg, img) in enumerate(zip(segments[: args.png], images)):
            save_png(img, png_dir / f"{i:05d}_{seg.subject_id}_{seg.session_id}.png", text)
    return {"scalograms": len(images)}


def cmd_train(args) -> dict:
    segments, X, y, _ = _load_segments(args)
    est = _estimator(args, segments[0].fs)
    if args.folds == 1 or args.folds < 0:
        raise UsageError("folds: must be 0 or >= 2")
    S = _scalograms(args, est, X)
    headers = _headers(args)
    results = {}
    if args.folds:
        cv = run_cv(est, X, y, k=args.folds, seed=stage_seed(args.seed, "cv"), scalograms=S)
        _write_eval_bundle(args, cv.folds, cv.labels, cv.alphas, headers)
        for i, hist in enumerate(cv.histories):
            _write_histories(args.out, f"fold{i}", hist, headers)
        results = {f"{m}_mean": cv.mean(m) for m in ("accuracy", "precision", "recall", "f1")}
        results.update({f"{m}_std": cv.std(m) for m in ("accuracy", "precision", "recall", "f1")})
        results["dropped_subjects"] = cv.assignment.dropped_subjects
    if args.save_model or not args.folds:
        est.fit(X, y, scalograms=S)
        est.save(args.out / "model.ckpt")
        _write_histories(args.out, "final", est.history_, headers)
    return results


def cmd_evaluate(args) -> dict:
    est = EcgIdentifier.load(args.model)
    segments, X, y, _ = _load_segments(args)
    args.fusion, args.img_size = est.fusion, est.img_size
    S = _scalograms(args, est, X)
    labels = list(est.classes_)
    y_idx = est.encode_labels(y)
    proba = est.predict_proba(X, scalograms=S)
    report = compute_metrics(y_idx, proba.argmax(axis=1), proba, len(labels), labels)
    alphas = [est.predict_alpha(X, scalograms=S)] if est.fusion == "attention" else None
    _write_eval_bundle(args, [report], labels, alphas, _headers(args))
    return {"accuracy": report.accuracy}


def cmd_sweep(args) -> dict:
    try:
        grid = parse_grid(args.grid)
    except ValueError as exc:
        raise UsageError(f"grid: {exc}") from None
    if not grid or any(not 0.0 <= g <= 1.0 for g in grid):
        raise UsageError(f"grid: values must lie in [0, 1], got {grid}")
    segments, X, y, _ = _load_segments(args)
    if args.model:
        est = EcgIdentifier.load(args.model)
        if est.fusion != "score":
            raise UsageError("model: sweep-lambda needs a score-fusion model")
        args.img_size = est.img_size
        S = _scalograms(args, est, X)
        test = np.arange(len(y))
    else:
        args.fusion = "score"
        est = _estimator(args, segments[0].fs)
        S = _scalograms(args, est, X)
        train, test = holdout_split(y, args.test_fraction, stage_seed(args.seed, "sweep-split"))
        est.fit(X[train], y[train], scalograms=S[train])
        _write_histories(args.out, "sweep", est.history_, _headers(args))
    sweep = est.sweep_lambda(X[test], y[test], grid, scalograms=S[test])
    write_sweep_csv(args.out / "sweep.csv", sweep, _headers(args))
    return {"best_lambda": sweep.best_lambda, "best_accuracy": sweep.best_accuracy}


def cmd_session(args) -> dict:
    try:
        protocol = SessionProtocol(args.protocol, _csv_list(args.train_sessions),
                                   _csv_list(args.test_sessions))
    except ProtocolError as exc:
        raise UsageError(f"protocol: {exc}") from None
    segments, X, y, sessions = _load_segments(args)
    est = _estimator(args, segments[0].fs)
    S = _scalograms(args, est, X)
    result = run_session_protocol(est, X, y, sessions, protocol, stage_seed(args.seed, "session"), S)
    headers = _headers(args) + [f"protocol={protocol.kind}",
                                f"excluded_subjects={','.join(map(str, result.excluded_subjects))}"]
    _write_eval_bundle(args, [result.report], result.report.labels, None, headers)
    return {"accuracy": result.report.accuracy, "n_train": result.n_train, "n_test": result.n_test,
            "excluded_subjects": result.excluded_subjects}


def cmd_report(args) -> dict:
    written = emit_report(args.run)
    return {"written": [p.name for p in written]}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _root_cause(exc: BaseException) -> BaseException:
    while isinstance(exc, FoldError) and exc.__cause__ is not None:
        exc = exc.__cause__
    return exc


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"ecgfusion: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        results = args.func(args)
        _echo_config(args, results)
    except UsageError as exc:
        print(f"ecgfusion: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        cause = _root_cause(exc)
        if isinstance(cause, (NumericalError, FloatingPointError)):
            print(f"ecgfusion: numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERICAL
        if isinstance(cause, DATA_ERRORS):
            print(f"ecgfusion: data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        raise
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
