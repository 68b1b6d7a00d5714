"""Command-line front end.

Subcommands mirror the pipeline stages plus session simulation and config
generation.  Exit codes: 0 full success, 2 when some sessions failed but
the run itself completed, 1 for configuration or input errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .errors import ConfigurationError, MeetpipeError
from .meeting import build_synthetic_pool, load_utterance_pool
from .pipeline import (
    PipelineConfig,
    load_config,
    read_manifest,
    run_pipeline,
    score_external,
    simulate_sessions,
    stage_diarize,
    stage_separate,
    write_config,
)
from .report import CONDITIONS, PipelineReport, render_figures
from .rir import ArrayGeometry, RoomSpec


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage errors map to exit code 1."""

    def error(self, message):
        raise ConfigurationError(message)


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    parser.add_argument("--outdir", type=Path, default=Path("out"), help="output directory")
    parser.add_argument("--workers", type=int, default=1, help="concurrent sessions")


def _parse_room(text: str) -> tuple[float, float, float]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise ConfigurationError(f"room must look like 6x5x3, got {text!r}")
    try:
        dims = tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigurationError(f"room must look like 6x5x3, got {text!r}") from None
    return dims


def _load_pipeline_config(args) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        config.seed = args.seed
    sep, dia, asr, scoring = {}, {}, {}, {}
    if getattr(args, "separation", None) is not None:
        sep["enabled"] = args.separation == "on"
    for field, box, key in (
        ("estimator", sep, "estimator"),
        ("num_streams", sep, "num_streams"),
        ("ref_channel", sep, "ref_channel"),
        ("clusterer", dia, "clusterer"),
        ("max_speakers", dia, "max_speakers"),
        ("ahc_threshold", dia, "ahc_threshold"),
        ("asr_mode", asr, "mode"),
        ("sub_rate", asr, "sub_rate"),
        ("del_rate", asr, "del_rate"),
        ("ins_rate", asr, "ins_rate"),
        ("routing", asr, "routing"),
        ("hypothesis_dir", asr, "hypothesis_dir"),
        ("collar", scoring, "collar"),
    ):
        value = getattr(args, field, None)
        if value is not None:
            box[key] = value
    if getattr(args, "enclosed_filter", None) is not None:
        dia["enclosed_filter"] = args.enclosed_filter == "on"
    if sep:
        config.separation = dataclasses.replace(config.separation, **sep)
    if dia:
        config.diarization = dataclasses.replace(config.diarization, **dia)
    if asr:
        config.asr = dataclasses.replace(config.asr, **asr)
    if scoring:
        config.scoring = dataclasses.replace(config.scoring, **scoring)
    return config


def _add_config_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="INI config file")
    parser.add_argument("--separation", choices=("on", "off"), default=None)
    parser.add_argument("--estimator", choices=("oracle", "uniform"), default=None)
    parser.add_argument("--num-streams", dest="num_streams", type=int, default=None)
    parser.add_argument("--ref-channel", dest="ref_channel", default=None)
    parser.add_argument("--clusterer", choices=("spectral", "ahc"), default=None)
    parser.add_argument("--max-speakers", dest="max_speakers", type=int, default=None)
    parser.add_argument("--ahc-threshold", dest="ahc_threshold", type=float, default=None)
    parser.add_argument("--enclosed-filter", dest="enclosed_filter", choices=("on", "off"), default=None)
    parser.add_argument("--asr-mode", dest="asr_mode", choices=("simulate", "external"), default=None)
    parser.add_argument("--sub-rate", dest="sub_rate", type=float, default=None)
    parser.add_argument("--del-rate", dest="del_rate", type=float, default=None)
    parser.add_argument("--ins-rate", dest="ins_rate", type=float, default=None)
    parser.add_argument("--routing", choices=("best", "all"), default=None)
    parser.add_argument("--hypothesis-dir", dest="hypothesis_dir", default=None)
    parser.add_argument("--collar", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="meetpipe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="render meeting sessions and a manifest")
    _common(p_sim)
    pool = p_sim.add_mutually_exclusive_group()
    pool.add_argument("--pool", type=Path, default=None, help="utterance pool directory")
    pool.add_argument(
        "--synth-pool",
        action="store_true",
        help="build a synthetic talker pool instead of loading one",
    )
    p_sim.add_argument("--pool-speakers", type=int, default=4)
    p_sim.add_argument("--pool-utterances", type=int, default=40)
    p_sim.add_argument(
        "--conditions",
        default=",".join(CONDITIONS),
        help="comma-separated subset of " + ",".join(CONDITIONS),
    )
    p_sim.add_argument("--sessions-per-condition", type=int, default=1)
    p_sim.add_argument("--session-length", type=float, default=60.0)
    p_sim.add_argument("--num-speakers", type=int, default=2)
    p_sim.add_argument("--room", default="6x5x3", help="dimensions LxWxH in metres")
    p_sim.add_argument("--absorption", type=float, default=0.5)
    p_sim.add_argument("--reflection-order", type=int, default=3)
    p_sim.add_argument("--noise-snr-db", type=float, default=40.0)
    p_sim.set_defaults(func=_cmd_simulate)

    for name, help_text, func in (
        ("separate", "run only the separation stage over a manifest", _cmd_separate),
        ("diarize", "run only the diarization stage over a manifest", _cmd_diarize),
    ):
        p = sub.add_parser(name, help=help_text)
        _common(p)
        _add_config_overrides(p)
        p.add_argument("--manifest", type=Path, required=True)
        p.set_defaults(func=func)

    p_score = sub.add_parser("score", help="score external diarization + transcripts")
    _common(p_score)
    p_score.add_argument("--reference-rttm", type=Path, required=True)
    p_score.add_argument("--reference-transcript", type=Path, required=True)
    p_score.add_argument("--hypothesis-rttm", type=Path, required=True)
    p_score.add_argument("--hypothesis-transcript", type=Path, required=True)
    p_score.add_argument("--collar", type=float, default=0.0)
    p_score.add_argument("--condition", choices=CONDITIONS, default="0L")
    p_score.set_defaults(func=_cmd_score)

    p_pipe = sub.add_parser("pipeline", help="run all stages over a manifest")
    _common(p_pipe)
    _add_config_overrides(p_pipe)
    p_pipe.add_argument("--manifest", type=Path, required=True)
    p_pipe.set_defaults(func=_cmd_pipeline)

    p_gen = sub.add_parser("gen-config", help="write the reference config file")
    _common(p_gen)
    p_gen.add_argument("--output", type=Path, default=None, help="default: <outdir>/pipeline.ini")
    p_gen.set_defaults(func=_cmd_gen_config)
    return parser


def _cmd_simulate(args) -> int:
    seed = args.seed if args.seed is not None else 0
    if args.pool is not None:
        pool = load_utterance_pool(args.pool)
    else:
        pool = build_synthetic_pool(
            args.pool_speakers, args.pool_utterances, seed=seed
        )
    conditions = [c.strip() for c in args.conditions.split(",") if c.strip()]
    room = RoomSpec(
        dimensions=_parse_room(args.room),
        absorption=args.absorption,
        max_reflection_order=args.reflection_order,
    )
    mics = ArrayGeometry.circular(
        (room.dimensions[0] / 2.0, room.dimensions[1] / 2.0, min(1.0, room.dimensions[2] / 2.0))
    )
    manifest_path, entries = simulate_sessions(
        args.outdir,
        pool,
        conditions,
        sessions_per_condition=args.sessions_per_condition,
        session_length=args.session_length,
        num_speakers=args.num_speakers,
        seed=seed,
        room=room,
        mics=mics,
        noise_snr_db=args.noise_snr_db,
    )
    print(f"wrote {len(entries)} sessions, manifest at {manifest_path}")
    return 0


def _run_single_stage(args, stage) -> int:
    config = _load_pipeline_config(args)
    manifests = read_manifest(args.manifest)
    outdir = Path(args.outdir)
    failures = []

    def worker(manifest):
        session_dir = outdir / manifest.session
        session_dir.mkdir(parents=True, exist_ok=True)
        try:
            stage(session_dir, manifest, config)
            return None
        except Exception as exc:
            return f"{manifest.session}: {type(exc).__name__}: {exc}"

    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(worker, manifests))
    else:
        results = [worker(m) for m in manifests]
    failures = [r for r in results if r is not None]
    for failure in failures:
        print(f"failed {failure}", file=sys.stderr)
    print(f"{len(manifests) - len(failures)}/{len(manifests)} sessions done")
    return 2 if failures else 0


def _cmd_separate(args) -> int:
    return _run_single_stage(args, stage_separate)


def _cmd_diarize(args) -> int:
    return _run_single_stage(args, stage_diarize)


def _print_report(report: PipelineReport) -> None:
    for condition, row in list(report.conditions.items()) + [("ALL", report.overall)]:
        if not row:
            continue
        parts = [f"{condition}: {row['sessions']} sessions"]
        if "der" in row:
            parts.append(f"DER {row['der']:.3f}")
        if "cpwer" in row:
            parts.append(f"cpWER {row['cpwer']:.3f}")
        if "mean_si_sdr" in row:
            parts.append(f"SI-SDR {row['mean_si_sdr']:.1f} dB")
        print("  ".join(parts))
    for score in report.sessions:
        if score.failed:
            print(f"failed {score.session}: {score.error}", file=sys.stderr)


def _cmd_pipeline(args) -> int:
    config = _load_pipeline_config(args)
    manifests = read_manifest(args.manifest)
    report = run_pipeline(config, manifests, args.outdir, workers=args.workers)
    _print_report(report)
    print(f"report written to {Path(args.outdir) / 'report.json'}")
    return 2 if report.num_failed else 0


def _cmd_score(args) -> int:
    report = score_external(
        args.reference_rttm,
        args.reference_transcript,
        args.hypothesis_rttm,
        args.hypothesis_transcript,
        collar=args.collar,
        condition=args.condition,
    )
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "report.json").write_text(report.to_json())
    (outdir / "report.csv").write_text(report.to_csv())
    figures = outdir / "figures"
    figures.mkdir(exist_ok=True)
    render_figures(report, figures)
    _print_report(report)
    return 0


def _cmd_gen_config(args) -> int:
    target = args.output if args.output is not None else Path(args.outdir) / "pipeline.ini"
    target.parent.mkdir(parents=True, exist_ok=True)
    write_config(target)
    print(f"wrote {target}")
    return 0


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except MeetpipeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
