"""CLI entry point: load .env and config, open a RunLogger, dispatch the subcommand, print the JSON summary.
Exit codes: 0 ok, 1 some items failed, 2 usage/config/data error, 3 every item failed, 130 Ctrl+C."""
from __future__ import annotations

import argparse
import json
import shlex
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from dotenv import load_dotenv
from joblib import Parallel, delayed

from . import corpus, p808, rtcheck
from .activity import screen_manifest
from .audio import read_wav, write_wav
from .config import config_to_dict, load_config
from .errors import ArgumentError, PipelineError
from .fixtures import FIXTURES, fixture_command
from .manifests import (
    read_assignments,
    read_chapter_ratings,
    read_clip_list,
    read_comparison_checks,
    read_condition_map,
    read_entries,
    read_manifest,
    read_pool,
    read_ratings,
    read_recipes,
    read_reference_mos,
    read_speech_probabilities,
    write_assignments,
    write_manifest,
    write_plan,
    write_ranking,
    write_recipes,
    write_results_manifest,
    write_summaries,
)
from .models import ClipRecord, MixRecipe, PipelineConfig
from .processors import FrameProcessor, SubprocessProcessor
from .run_logging import RunLogger
from .synth import ClipResolver, mix, resolve_recipe

_project_root = Path(__file__).resolve().parent.parent
_env_path = _project_root / ".env"

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2
EXIT_ALL_FAILED = 3
EXIT_INTERRUPTED = 130


def _exit_code(failures: int, total: int) -> int:
    if failures == 0:
        return EXIT_OK
    return EXIT_ALL_FAILED if failures >= total else EXIT_PARTIAL


def _guard_outputs(paths: Sequence[Path], force: bool) -> None:
    existing = [str(p) for p in paths if p.exists()]
    if existing and not force:
        raise ArgumentError(f"outputs already exist ({', '.join(existing)}); pass --force to overwrite")


def _require(path: Optional[str], what: str) -> str:
    if not path:
        raise ArgumentError(f"{what} is not configured")
    return path


def _load_records(config: PipelineConfig) -> List[ClipRecord]:
    records: List[ClipRecord] = []
    for path in (config.clean_manifest, config.noise_manifest, config.rir_manifest):
        if path:
            records.extend(read_manifest(path))
    return records


def _synthesize_one(
    recipe: MixRecipe,
    records: Sequence[ClipRecord],
    config: PipelineConfig,
    audio_dir: Path,
) -> Tuple[str, Optional[Dict[str, Any]], Optional[str]]:
    paths = {kind: audio_dir / f"{recipe.recipe_id}.{kind}.wav" for kind in ("noisy", "clean", "noise")}
    try:
        resolver = ClipResolver(records, config.sample_rate)
        clean, noise, rir = resolve_recipe(recipe, resolver)
        result = mix(
            recipe,
            clean,
            noise,
            rir,
            frame_ms=config.frame_ms,
            gap_ms=config.gap_ms,
            loop_speech=config.loop_speech,
            headroom_peak=config.headroom_peak,
        )
        write_wav(result.mixture, paths["noisy"])
        write_wav(result.clean_ref, paths["clean"])
        write_wav(result.noise_ref, paths["noise"])
    except (PipelineError, OSError) as exc:
        for path in paths.values():
            path.unlink(missing_ok=True)
        return recipe.recipe_id, None, str(exc)
    row = {
        "recipe_id": recipe.recipe_id,
        "noisy_path": paths["noisy"].name,
        "clean_path": paths["clean"].name,
        "noise_path": paths["noise"].name,
        "target_snr": f"{recipe.target_snr:.6f}",
        "achieved_snr": f"{result.achieved_snr:.6f}",
        "target_rms": f"{recipe.target_rms:.6f}",
        "achieved_rms": f"{result.achieved_rms:.6f}",
        "clipped": int(result.clipped_flag),
    }
    return recipe.recipe_id, row, None


def synthesize_recipes(
    recipes: Sequence[MixRecipe],
    config: PipelineConfig,
    out_dir: Path,
    jobs: int,
    logger: RunLogger,
) -> Tuple[int, Dict[str, Any]]:
    """Write a WAV triple per recipe and results.csv; failed recipes leave no partial files."""
    records = _load_records(config)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    logger.log_event(f"[synth] start recipes={len(recipes)} jobs={jobs} out={out_dir}")
    outcomes = Parallel(n_jobs=jobs)(
        delayed(_synthesize_one)(recipe, records, config, audio_dir) for recipe in recipes
    )
    rows = [row for _, row, _ in outcomes if row is not None]
    errors = {recipe_id: err for recipe_id, _, err in outcomes if err is not None}
    for recipe_id, err in errors.items():
        logger.log_event(f"[synth] failed recipe_id={recipe_id} error={err}")
    write_results_manifest(rows, out_dir / "results.csv")
    clipped = sum(int(r["clipped"]) for r in rows)
    logger.log_event(f"[synth] done ok={len(rows)} failed={len(errors)} clipped={clipped}")
    summary = {"recipes": len(recipes), "written": len(rows), "clipped": clipped, "failed": errors}
    return _exit_code(len(errors), len(recipes)), summary


def cmd_plan_training(args: argparse.Namespace, config: PipelineConfig, logger: RunLogger) -> Tuple[int, Dict[str, Any]]:
    out = Path(config.output_root) / "training.recipes.jsonl"
    _guard_outputs([out], args.force)
    recipes = corpus.build_training_recipes(
        read_manifest(_require(config.clean_manifest, "clean_manifest")),
        read_manifest(_require(config.noise_manifest, "noise_manifest")),
        count=args.count if args.count is not None else config.training_count,
        master_seed=config.master_seed,
        snr_range=config.snr_range,
        rms_range=config.rms_range,
        duration=config.duration_s,
        gap_ms=config.gap_ms,
    )
    write_recipes(recipes, out)
    logger.log_event(f"[corpus] training recipes={len(recipes)} path={out}")
    return EXIT_OK, {"recipes": len(recipes), "path": str(out)}


def cmd_synthesize(args: argparse.Namespace, config: PipelineConfig, logger: RunLogger) -> Tuple[int, Dict[str, Any]]:
    out_dir = Path(config.output_root)
    _guard_outputs([out_dir / "results.csv"], args.force)
    recipes = read_recipes(args.recipes)
    if not recipes:
        raise ArgumentError(f"{args.recipes}: no recipes")
    return synthesize_recipes(recipes, config, out_dir, args.jobs, logger)


def cmd_build_testset(args: argparse.Namespace, config: PipelineConfig, logger: RunLogger) -> Tuple[int, Dict[str, Any]]:
    out_dir = Path(config.output_root)
    reverb = args.reverb or config.reverb
    category = "synthetic_reverb" if reverb else "synthetic_no_reverb"
    _guard_outputs([out_dir / f"{category}.recipes.jsonl", out_dir / category / "results.csv"], args.force)
    rir_records = read_manifest(config.rir_manifest) if config.rir_manifest else []
    plan = corpus.build_test_plan(
        read_manifest(_require(config.noise_manifest, "noise_manifest")),
        read_manifest(_require(config.clean_manifest, "clean_manifest")),
        master_seed=config.master_seed,
        priority_categories=config.priority_categories,
        rir_records=rir_records,
        reverb=reverb,
        per_category=config.per_category_count,
        random_count=config.random_count,
        snr_range=config.test_snr_range,
        rms_range=config.test_rms_range,
        duration=config.test_duration_s,
        rt60_range=config.rt60_range,
        gap_ms=config.gap_ms,
    )
    recipes_path, plan_path = write_plan(plan, out_dir)
    logger.log_event(f"[corpus] test plan category={plan.category} recipes={len(plan.recipes)} path={recipes_path}")
    summary: Dict[str, Any] = {"category": plan.category, "recipes": len(plan.recipes), "composition": plan.composition}
    summary["blind"] = sum(1 for s in plan.splits.values() if s == "blind")
    if args.real_manifest:
        real = corpus.build_real_reference_set(
            read_manifest(args.real_manifest), args.real_category, args.real_count, master_seed=config.master_seed
        )
        write_plan(real, out_dir)
        summary["real_references"] = {real.category: len(real.references)}
    if not args.synthesize:
        return EXIT_OK, summary
    code, synth_summary = synthesize_recipes(plan.recipes, config, out_dir / plan.category, args.jobs, logger)
    summary["synthesis"] = synth_summary
    return code, summary


def cmd_filter_corpus(args: argparse.Namespace, config: PipelineConfig, logger: RunLogger) -> Tuple[int, Dict[str, Any]]:
    out_dir = Path(config.output_root)
    manifest_out = out_dir / "clean.filtered.csv"
    _guard_outputs([manifest_out], args.force)
    records = [r for r in read_manifest(_require(config.clean_manifest, "clean_manifest")) if r.kind == "clean"]
    chapters = corpus.chapter_scores_from_ratings(read_chapter_ratings(args.chapter_ratings))
    selection = corpus.select_upper_quartile(chapters)
    logger.log_event(
        f"[corpus] chapters={len(chapters)} selected={len(selection.selected_ids)} threshold_mos={selection.threshold_mos:.3f}"
    )
    chosen = set(selection.selected_ids)
    kept = corpus.prune_speakers((r for r in records if r.chapter_id in chosen), config.min_speaker_seconds)
    logger.log_event(f"[corpus] clips in selected chapters={sum(r.chapter_id in chosen for r in records)} after speaker pruning={len(kept)}")

    segments: List[ClipRecord] = []
    failures = 0
    for record in kept:
        try:
            clip = read_wav(record.path, config.sample_rate)
        except (PipelineError, OSError) as exc:
            failures += 1
            logger.log_event(f"[corpus] unreadable clip_id={record.clip_id} error={exc}")
            continue
        for k, piece in enumerate(corpus.segment_clip(clip, config.segment_seconds)):
            seg_id = f"{record.clip_id}_{k:03d}"
            path = out_dir / "segments" / f"{seg_id}.wav"
            write_wav(piece, path)
            segments.append(
                ClipRecord(seg_id, str(path.resolve()), "clean", piece.duration_seconds,
                           speaker_id=record.speaker_id, chapter_id=record.chapter_id)
            )
    write_manifest(segments, manifest_out)
    with (out_dir / "chapters.json").open("w", encoding="utf-8") as handle:
        json.dump(
            {
                "threshold_mos": selection.threshold_mos,
                "selected": list(selection.selected_ids),
                "chapters": [{"chapter_id": c.chapter_id, "mos": c.mos, "ci95": c.ci95} for c in chapters],
            },
            handle,
            indent=2,
        )
    summary = {
        "chapters": len(chapters),
        "selected_chapters": len(selection.selected_ids),
        "threshold_mos": selection.threshold_mos,
        "clips_kept": len(kept),
        "segments": len(segments),
        "unreadable": failures,
    }
    return _exit_code(failures, max(len(kept), 1)), summary


def cmd_balance_noise(args: argparse.Namespace, config: PipelineConfig, logger: RunLogger) -> Tuple[int, Dict[str, Any]]:
    out_dir = Path(config.output_root)
    manifest_out = out_dir / "noise.balanced.csv"
    _guard_outputs([manifest_out], args.force)
    records = [r for r in read_manifest(_require(config.noise_manifest, "noise_manifest")) if r.kind == "noise"]
    screen_report: Dict[str, List[str]] = {"dropped": [], "unscreened": [r.clip_id for r in records]}
    if args.speech_probs:
        records, screen_report = screen_manifest(records, read_speech_probabilities(args.speech_probs), config.speech_threshold)
    logger.log_event(f"[corpus] screened kept={len(records)} dropped={len(screen_report['dropped'])}")
    result = corpus.balance_classes(records, config.min_per_class, config.master_seed)
    by_id = {r.clip_id: r for r in records}
    write_manifest([by_id[c] for c in result.selected_ids], manifest_out)
    report = {
        "selected": len(result.selected_ids),
        "class_counts": result.class_counts,
        "under_quota": result.under_quota,
        "speech_dropped": screen_report["dropped"],
        "unscreened": len(screen_report["unscreened"]),
    }
    (out_dir / "balance_report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    logger.log_event(f"[corpus] balanced selected={len(result.selected_ids)} under_quota={len(result.under_quota)}")
    return EXIT_OK, {k: v for k, v in report.items() if k != "class_counts"}


def cmd_build_groups(args: argparse.Namespace, config: PipelineConfig, logger: RunLogger) -> Tuple[int, Dict[str, Any]]:
    out = Path(config.output_root) / "assignments.jsonl"
    _guard_outputs([out], args.force)
    groups = p808.build_groups(
        read_clip_list(args.clips),
        read_pool(args.gold, "expected"),
        read_pool(args.trap, "expected"),
        ratings_per_clip=config.ratings_per_clip,
        group_size=config.group_size,
        seed=config.master_seed,
    )
    write_assignments(groups, out)
    logger.log_event(f"[p808] groups={len(groups)} path={out}")
    return EXIT_OK, {"groups": len(groups), "path": str(out)}


def cmd_aggregate(args: argparse.Namespace, config: PipelineConfig, logger: RunLogger) -> Tuple[int, Dict[str, Any]]:
    out_dir = Path(config.output_root)
    _guard_outputs([out_dir / "condition_mos.csv"], args.force)
    records = read_ratings(args.ratings)
    if not records:
        raise ArgumentError(f"{args.ratings}: no ratings")
    report = p808.filter_ratings(records, read_assignments(args.assignments), config.gold_tolerance)
    accepted = report.accepted
    logger.log_event(
        f"[p808] ratings={len(records)} accepted={len(accepted)} groups_ok={report.accepted_groups} "
        f"groups_rejected={report.rejected_groups}"
    )
    dropped: Dict[str, Dict[str, int]] = {}
    if config.max_ratings_per_rater_per_day:
        accepted, dropped["rate_limit"] = p808.apply_rate_limit(accepted, config.max_ratings_per_rater_per_day)
    if args.comparisons:
        accepted, dropped["comparison"] = p808.apply_comparison_checks(
            accepted, read_comparison_checks(args.comparisons), config.comparison_window_s
        )
    if not accepted:
        raise ArgumentError("no ratings survived filtering")
    clips = p808.clip_mos(accepted)
    conditions = p808.condition_mos(accepted, read_condition_map(args.conditions))
    summary: Dict[str, Any] = {"conditions": [asdict(s) for s in conditions], "accepted_ratings": len(accepted)}
    if args.reference:
        rho, shared = p808.correlate_with_reference(conditions, read_reference_mos(args.reference))
        summary["spearman"] = {"rho": rho, "conditions": shared}
        logger.log_event(f"[p808] spearman rho={rho:.4f} conditions={shared}")
    write_summaries(clips, out_dir / "clip_mos.csv")
    write_summaries(conditions, out_dir / "condition_mos.csv")
    rejection = {
        "accepted_groups": report.accepted_groups,
        "rejected_groups": report.rejected_groups,
        "rejections": {rater: [list(item) for item in items] for rater, items in sorted(report.rejections.items())},
        "dropped": dropped,
    }
    (out_dir / "rejections.json").write_text(json.dumps(rejection, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK, summary


def _processor_for(args: argparse.Namespace, config: PipelineConfig) -> FrameProcessor:
    if args.fixture:
        return SubprocessProcessor(fixture_command(args.fixture), config.sample_rate)
    if args.command_line:
        return SubprocessProcessor(shlex.split(args.command_line), config.sample_rate)
    raise ArgumentError("verify-rt needs --fixture or --command")


def cmd_verify(args: argparse.Namespace, config: PipelineConfig, logger: RunLogger) -> Tuple[int, Dict[str, Any]]:
    out = Path(config.output_root) / "verify.json"
    _guard_outputs([out], args.force)
    proc = _processor_for(args, config)
    try:
        report = rtcheck.verify(
            proc,
            lookahead_limit_ms=config.lookahead_ms,
            trials=config.probe_trials,
            signal_seconds=config.probe_signal_s,
            timing_frames=config.timing_frames,
            warmup_frames=config.warmup_frames,
            seed=config.master_seed,
            logger=logger,
        )
    finally:
        proc.close()
    payload = asdict(report)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return (EXIT_OK if report.probe.passed else EXIT_PARTIAL), payload


def cmd_rank(args: argparse.Namespace, config: PipelineConfig, logger: RunLogger) -> Tuple[int, Dict[str, Any]]:
    out = Path(config.output_root) / "ranking.csv"
    _guard_outputs([out], args.force)
    ranked = rtcheck.rank(read_entries(args.entries))
    write_ranking(ranked, out)
    logger.log_event(f"[rtcheck] ranked entries={len(ranked)} path={out}")
    return EXIT_OK, {"ranking": [e.entry_id for e in ranked]}


COMMANDS = {
    "plan-training": cmd_plan_training,
    "synthesize": cmd_synthesize,
    "build-testset": cmd_build_testset,
    "filter-corpus": cmd_filter_corpus,
    "balance-noise": cmd_balance_noise,
    "build-groups": cmd_build_groups,
    "aggregate-ratings": cmd_aggregate,
    "verify-rt": cmd_verify,
    "rank": cmd_rank,
}


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="key=value config file (default: $DNS_CONFIG)")
    common.add_argument("--seed", type=int, default=None, help="Master seed (unsigned 64-bit)")
    common.add_argument("--out", type=str, default=None, help="Output directory")
    common.add_argument("--force", action="store_true", help="Overwrite existing outputs")
    common.add_argument("--jobs", type=int, default=1, help="Parallel workers for per-item work")
    common.add_argument("--quiet", action="store_true", help="No console logs")
    common.add_argument("--runs-dir", type=str, default="runs", help="Where per-run logs go")

    p = argparse.ArgumentParser(description="Noisy-speech corpus synthesis, P.808 scoring, and real-time checks")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("plan-training", parents=[common], help="Emit seeded training recipes")
    s.add_argument("--count", type=int, default=None, help="Number of recipes (default: training_count)")

    s = sub.add_parser("synthesize", parents=[common], help="Synthesize WAV triples from a recipes file")
    s.add_argument("recipes", type=str, help="Recipes JSON Lines file")

    s = sub.add_parser("build-testset", parents=[common], help="Build a 300-clip synthetic test plan")
    s.add_argument("--reverb", action="store_true", help="Pair every recipe with an RIR")
    s.add_argument("--synthesize", action="store_true", help="Synthesize the plan right away")
    s.add_argument("--real-manifest", type=str, default=None, help="Manifest of real recordings to list as references")
    s.add_argument("--real-category", type=str, default="real_internal", help="Category of the real recordings")
    s.add_argument("--real-count", type=int, default=300, help="References per real category")

    s = sub.add_parser("filter-corpus", parents=[common], help="Upper-quartile chapters, speaker pruning, 10 s segments")
    s.add_argument("--chapter-ratings", type=str, required=True, help="CSV chapter_id,clip_id,score")

    s = sub.add_parser("balance-noise", parents=[common], help="Speech screening and class balancing of noise clips")
    s.add_argument("--speech-probs", type=str, default=None, help="Sidecar CSV clip_id,speech_prob")

    s = sub.add_parser("build-groups", parents=[common], help="Assemble rating groups with gold and trap clips")
    s.add_argument("--clips", type=str, required=True, help="CSV with a clip_id column")
    s.add_argument("--gold", type=str, required=True, help="CSV clip_id,expected")
    s.add_argument("--trap", type=str, required=True, help="CSV clip_id,expected")

    s = sub.add_parser("aggregate-ratings", parents=[common], help="Filter raters and compute MOS per clip and condition")
    s.add_argument("--ratings", type=str, required=True)
    s.add_argument("--assignments", type=str, required=True)
    s.add_argument("--conditions", type=str, required=True, help="CSV clip_id,condition")
    s.add_argument("--reference", type=str, default=None, help="CSV condition,mos for Spearman validation")
    s.add_argument("--comparisons", type=str, default=None, help="CSV rater_id,timestamp,passed")

    s = sub.add_parser("verify-rt", parents=[common], help="Causality probe, compute budget and track")
    s.add_argument("--fixture", type=str, choices=sorted(FIXTURES), default=None)
    s.add_argument("--command", dest="command_line", type=str, default=None, help="Processor command line")

    s = sub.add_parser("rank", parents=[common], help="Rank entries with the 0.1 MOS complexity tiebreak")
    s.add_argument("--entries", type=str, required=True, help="CSV entry_id,mos,param_count,per_frame_ms,track")

    args = p.parse_args(argv)
    return args


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv(_env_path)
    args = parse_args(argv)
    try:
        config = load_config(args.config, {"master_seed": args.seed, "output_root": args.out})
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    logger = RunLogger(base_dir=args.runs_dir, print_to_console=not args.quiet, command=args.command)
    logger.log_event(f"[cli] command={args.command} run_dir={logger.run_dir}")
    logger.log_config(config_to_dict(config))
    try:
        code, summary = COMMANDS[args.command](args, config, logger)
    except KeyboardInterrupt:
        logger.stop()
        print("\nCtrl+C, exiting.")
        return EXIT_INTERRUPTED
    except (PipelineError, OSError) as exc:
        logger.log_event(f"[cli] error {type(exc).__name__}: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logger.log_result({"command": args.command, "exit_code": code, **summary})
    print(json.dumps(summary, indent=2, default=str))
    return code


if __name__ == "__main__":
    sys.exit(main())
