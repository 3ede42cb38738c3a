"""Operator command line: run sessions headless, generate synthetic
recordings, manage weight containers, run the offline analysis, and
benchmark the real-time pipeline.

Exit codes: 0 success, 1 user/input error, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis, model, recording
from .errors import MbciError
from .feedback import SessionMode
from .ingest import StreamConfig, SynthControl, open_source, iter_windows, synth_generate
from .session import SessionDescriptor, run_headless_session

EXIT_OK = 0
EXIT_USER = 1
EXIT_INTERNAL = 2


def parse_duration(text: str) -> float:
    """'120s', '5m', '1.5h', or plain seconds."""
    text = text.strip().lower()
    factor = 1.0
    if text.endswith("s"):
        text = text[:-1]
    elif text.endswith("m"):
        text, factor = text[:-1], 60.0
    elif text.endswith("h"):
        text, factor = text[:-1], 3600.0
    value = float(text) * factor
    if value <= 0:
        raise ValueError(f"duration must be positive, got {value}")
    return value


def _parse_latent(text: str):
    """Constant ('0.8') or piecewise 't:v,t:v' trajectory."""
    if ":" not in text:
        return float(text)
    points = []
    for part in text.split(","):
        t, v = part.split(":")
        points.append((float(t), float(v)))
    return points


def _load_weights_arg(path: str | None) -> model.ModelWeights:
    if path is None or path == "fixture":
        return model.fixture_weights()
    if path == "zero":
        return model.zero_weights()
    return model.load_weights(path)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    duration = parse_duration(args.duration) if args.duration else None
    weights = _load_weights_arg(args.weights)
    source = StreamConfig(sampling_rate=args.rate, source_kind=args.source,
                          source_locator=args.input or "")
    descriptor = SessionDescriptor(
        session_id=args.session_id,
        mode=SessionMode(args.mode.upper()),
        subject_id=args.subject,
        source=source,
        weights_ref=args.weights or "<fixture>",
        seed=args.seed,
        synth_control=SynthControl(latent_mindfulness=_parse_latent(args.latent)),
        duration_seconds=duration,
    )
    out = run_headless_session(descriptor, weights, args.out)
    log_path = out / "events.log"
    n_scores = sum(1 for line in log_path.read_text().splitlines()
                   if '"score_update"' in line)
    print(f"session {descriptor.session_id}: {n_scores} score events -> {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    duration = parse_duration(args.duration)
    control = SynthControl(latent_mindfulness=_parse_latent(args.latent),
                           noise_exponent=args.noise_exponent)
    samples = synth_generate(control, duration, args.rate, seed=args.seed)
    recording.write_recording(args.out, samples, args.rate)
    print(f"wrote {len(samples)} samples at {args.rate} Hz -> {args.out}")
    return EXIT_OK


def cmd_weights(args) -> int:
    if args.action == "init":
        if args.kind == "random":
            weights = model.init_random_weights(args.seed)
        elif args.kind == "zero":
            weights = model.zero_weights()
        else:
            weights = model.fixture_weights()
        model.save_weights(weights, args.path)
        print(f"initialized {args.kind} weights -> {args.path}")
        return EXIT_OK
    if args.action == "inspect":
        weights = model.load_weights(args.path)
        total = 0
        print(f"{'layer':28s} {'shape':>18s} {'params':>10s}")
        for name, tensor in weights.tensors.items():
            total += tensor.size
            print(f"{name:28s} {str(tuple(tensor.shape)):>18s} {tensor.size:>10d}")
        print(f"{'total':28s} {'':>18s} {total:>10d}")
        trace = " -> ".join("x".join(map(str, s)) for s in model.shape_trace())
        print(f"shape trace: {trace}")
        return EXIT_OK
    # verify
    model.load_weights(args.path)
    print(f"weights verified: {args.path}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    out_dir = Path(args.out)
    rows: list[dict] = []
    if args.cohort:
        cohort = analysis.load_cohort(args.cohort)
        summaries = [s for states in cohort.values() for s in states.values()]
        if not args.resample:
            analysis.check_uniform_rate(summaries)
        if args.test:
            rows = analysis.run_paired_tests(cohort, args.test, alpha=args.alpha)
    else:
        if not args.sessions:
            raise MbciError("give session directories or --cohort")
        summaries = [analysis.summarize_session(p) for p in args.sessions]
        if not args.resample:
            analysis.check_uniform_rate(summaries)
        if args.test:
            raise MbciError("statistical tests need --cohort pairing information")
    out_dir.mkdir(parents=True, exist_ok=True)
    analysis.write_summary_csv(summaries, out_dir / "summaries.csv")
    print(f"wrote {len(summaries)} session summaries -> {out_dir / 'summaries.csv'}")
    if rows:
        analysis.write_tests_csv(rows, out_dir / "tests.csv")
        print(f"wrote {len(rows)} test rows -> {out_dir / 'tests.csv'}")
    elif args.cohort:
        print("stats section empty (no tests requested)")
    else:
        print("stats section empty (summary-only run)")
    return EXIT_OK


def cmd_bench(args) -> int:
    duration = parse_duration(args.duration)
    weights = _load_weights_arg(args.weights)
    config = StreamConfig(sampling_rate=args.rate, source_kind="synthetic")
    stream = open_source(config, duration=duration, seed=args.seed)
    pipeline = model.ScoringPipeline(weights, args.rate,
                                     deadline_seconds=config.hop_seconds)
    n = 0
    for window in iter_windows(stream):
        pipeline.score_window(window)
        n += 1
    if n == 0:
        raise MbciError("stream too short to form a single window")
    report = {"windows": n, "deadline_misses": pipeline.overruns}
    for stage in ("filter_bank", "envelope", "cnn", "total"):
        values = np.array([s[stage] for s in pipeline.stage_ms])
        report[stage] = {
            "p50_ms": round(float(np.percentile(values, 50)), 3),
            "p95_ms": round(float(np.percentile(values, 95)), 3),
            "max_ms": round(float(values.max()), 3),
        }
    print(json.dumps(report, indent=2))
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2) + "\n")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    app = create_app(args.data_dir, weights_path=args.weights)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument wiring
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mbci",
                                     description="mindfulness neurofeedback toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a headless session")
    run.add_argument("--mode", required=True, choices=["rms", "pms", "rs"])
    run.add_argument("--source", default="synth",
                     choices=["synth", "synthetic", "replay", "device"])
    run.add_argument("--input", help="recording path (replay) or device address")
    run.add_argument("--rate", type=float, default=250.0)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--duration", help="e.g. 120s, 90m (default: full schedule)")
    run.add_argument("--latent", default="0.5", help="synthetic latent, const or t:v,...")
    run.add_argument("--weights", help="weight container, or 'fixture'/'zero'")
    run.add_argument("--subject", default="anon")
    run.add_argument("--session-id", default=None)
    run.add_argument("--out", required=True, help="data directory root")
    run.set_defaults(func=cmd_run)

    synth = sub.add_parser("synth", help="generate a synthetic recording")
    synth.add_argument("--duration", required=True)
    synth.add_argument("--rate", type=float, default=250.0)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--latent", default="0.5")
    synth.add_argument("--noise-exponent", type=float, default=1.0)
    synth.add_argument("--out", required=True)
    synth.set_defaults(func=cmd_synth)

    weights = sub.add_parser("weights", help="weight container tools")
    weights.add_argument("action", choices=["init", "inspect", "verify"])
    weights.add_argument("path")
    weights.add_argument("--seed", type=int, default=0)
    weights.add_argument("--kind", default="random",
                         choices=["random", "zero", "fixture"])
    weights.set_defaults(func=cmd_weights)

    an = sub.add_parser("analyze", help="offline summaries and statistics")
    an.add_argument("sessions", nargs="*", help="session directories")
    an.add_argument("--cohort", help="cohort manifest json")
    an.add_argument("--test", action="append",
                    help="paired:<metric>:<stateA>:<stateB> (repeatable)")
    an.add_argument("--alpha", type=float, default=0.05)
    an.add_argument("--resample", type=float, default=None,
                    help="accept mixed rates by resampling (not applied to raw files)")
    an.add_argument("--out", required=True)
    an.set_defaults(func=cmd_analyze)

    bench = sub.add_parser("bench", help="real-time pipeline latency report")
    bench.add_argument("--duration", required=True)
    bench.add_argument("--rate", type=float, default=250.0)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--weights")
    bench.add_argument("--out")
    bench.set_defaults(func=cmd_bench)

    serve = sub.add_parser("serve", help="start the session service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8799)
    serve.add_argument("--data-dir", default="./sessions")
    serve.add_argument("--weights")
    serve.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run" and args.source == "synthetic":
            args.source = "synth"
        if args.command == "run":
            args.source = {"synth": "synthetic"}.get(args.source, args.source)
        return args.func(args)
    except MbciError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001 - last-resort operator reporting
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
