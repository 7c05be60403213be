"""Command line entry point.

Exit codes: 0 when every scenario is resilient (or mitigated), 2 when an
unmitigated finding remains or a replayed fuzz case fails, 1 on errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__, anomaly
from . import fuzzer as fz
from .bb84.session import SessionConfig, run_session, telemetry_csv
from .campaign import (
    ConfigError,
    load_config,
    parse_report,
    render_report,
    run_campaign,
    write_report,
)
from .qubit_core import ChannelParams, InvalidParameter
from .rng import make_rng, split

log = logging.getLogger("qrt")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FINDING = 2


def _emit(data: bytes, out: str | None) -> None:
    if out:
        write_report(data, out)
        log.info("wrote %s", out)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()


def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    sink = [] if args.telemetry else None
    report = run_campaign(config, telemetry_sink=sink)
    _emit(render_report(report, args.format, include_timing=args.timing), args.out or config.output_path)
    if args.telemetry:
        Path(args.telemetry).write_text(telemetry_csv(sink))
    log.info("overall verdict: %s", report.overall_verdict)
    return report.exit_code()


def cmd_replay(args: argparse.Namespace) -> int:
    replay = fz.ReplayFile.from_bytes(Path(args.case).read_bytes())
    verdict = replay.replay()
    detail = f" ({verdict.detail})" if verdict.detail else ""
    print(f"case {replay.case.case_id} seed {replay.case.seed}: {verdict.label()}{detail}")
    return EXIT_FINDING if verdict.is_failure else EXIT_OK


def cmd_fuzz(args: argparse.Namespace) -> int:
    target = fz.ReconciliationTarget(frozenset(args.bug or ()))
    ctx = fz.build_context(args.context_seed, args.context_rounds)
    results = fz.fuzz_post_processing(target, args.cases, args.seed, args.step_budget, ctx)
    counts: dict[str, int] = {}
    for _, v in results:
        counts[v.label()] = counts.get(v.label(), 0) + 1
    for label in sorted(counts):
        print(f"{label}: {counts[label]}")
    failures = [(c, v) for c, v in results if v.is_failure]
    if args.save_dir and failures:
        out = Path(args.save_dir)
        out.mkdir(parents=True, exist_ok=True)
        for case, v in failures:
            small = fz.minimize(case, target, ctx, args.step_budget)
            rf = fz.ReplayFile(small, target.bugs, args.step_budget, args.context_seed, args.context_rounds,
                               ctx.depolarize_prob)
            path = out / f"case-{case.case_id:06d}-{v.label()}.qrtf"
            path.write_bytes(rf.to_bytes())
        print(f"saved {len(failures)} minimized cases to {out}")
    return EXIT_FINDING if failures else EXIT_OK


def cmd_baseline(args: argparse.Namespace) -> int:
    cfg = SessionConfig(n_rounds=args.n_rounds)
    channel = ChannelParams(
        transmittance=args.transmittance, depolarize_prob=args.depolarize,
        dark_count_prob=args.dark_count, detector_efficiency=args.efficiency,
    )
    vectors = [
        anomaly.FeatureVector.from_telemetry(run_session(cfg, channel, seed=split(args.seed, "baseline", j))[1])
        for j in range(args.sessions)
    ]
    model = anomaly.fit(vectors, args.kind, make_rng(args.seed, "detector"))
    Path(args.out).write_bytes(anomaly.to_blob(model))
    print(f"{args.kind} detector {anomaly.model_digest(model)} written to {args.out}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    report = parse_report(Path(args.input).read_bytes())
    _emit(render_report(report, args.format, include_timing=True), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qrt", description="BB84 red-teaming workbench")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a campaign from a YAML config")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, default=None, help="override master_seed")
    run.add_argument("--out", default=None, help="report path (default: config output_path or stdout)")
    run.add_argument("--format", choices=["json", "text"], default="json")
    run.add_argument("--telemetry", default=None, help="also write per-session telemetry CSV here")
    run.add_argument("--timing", action="store_true", help="include wall-clock time in the report")
    run.set_defaults(func=cmd_run)

    rp = sub.add_parser("replay", help="re-execute one fuzz case from a replay file")
    rp.add_argument("--case", required=True)
    rp.set_defaults(func=cmd_replay)

    fzp = sub.add_parser("fuzz", help="fuzz the reconciliation target directly")
    fzp.add_argument("--cases", type=int, default=1000)
    fzp.add_argument("--seed", type=int, default=0)
    fzp.add_argument("--bug", action="append", choices=[b.value for b in fz.Bug])
    fzp.add_argument("--step-budget", type=int, default=fz.DEFAULT_STEP_BUDGET)
    fzp.add_argument("--context-seed", type=int, default=0)
    fzp.add_argument("--context-rounds", type=int, default=1024)
    fzp.add_argument("--save-dir", default=None, help="write minimized failing cases as replay files")
    fzp.set_defaults(func=cmd_fuzz)

    bl = sub.add_parser("baseline", help="fit a detector on benign sessions and save it")
    bl.add_argument("--sessions", type=int, required=True)
    bl.add_argument("--out", required=True)
    bl.add_argument("--seed", type=int, default=0)
    bl.add_argument("--kind", choices=["forest", "pca"], default="forest")
    bl.add_argument("--n-rounds", type=int, default=10000)
    bl.add_argument("--transmittance", type=float, default=0.5)
    bl.add_argument("--depolarize", type=float, default=0.02)
    bl.add_argument("--dark-count", type=float, default=1e-4)
    bl.add_argument("--efficiency", type=float, default=0.9)
    bl.set_defaults(func=cmd_baseline)

    rep = sub.add_parser("report", help="render a saved Json report")
    rep.add_argument("--in", dest="input", required=True)
    rep.add_argument("--format", choices=["json", "text"], default="text")
    rep.add_argument("--out", default=None)
    rep.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidParameter, anomaly.InsufficientBaseline, ValueError, OSError) as exc:
        print(f"qrt: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
