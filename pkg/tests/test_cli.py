from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Dict, List

import pytest

from conftest import write_config, write_csv
from dns_pipeline.cli import main
from dns_pipeline.manifests import read_assignments, read_manifest, write_ratings
from dns_pipeline.models import RatingRecord


@pytest.fixture(autouse=True)
def _no_env_config(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv("DNS_CONFIG", raising=False)


def run(tmp_path: Path, command: str, *args: str, out: str = "out") -> int:
    argv = [command, *args, "--out", str(tmp_path / out), "--runs-dir", str(tmp_path / "runs"), "--quiet"]
    return main(argv)


def rows(path: Path) -> List[Dict[str, str]]:
    with path.open(newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def corpus_config(tmp_path: Path, corpus_dir, **extra) -> str:
    values = {
        "clean_manifest": corpus_dir["clean"],
        "noise_manifest": corpus_dir["noise"],
        "duration_s": 3,
        "training_count": 3,
        **extra,
    }
    return str(write_config(tmp_path / "run.env", values))


def test_rank_writes_ordered_csv_and_run_log(tmp_path: Path) -> None:
    entries = write_csv(
        tmp_path / "entries.csv",
        ["entry_id", "mos", "param_count", "per_frame_ms", "track"],
        [["big", "3.40", "9000000", "4.0", "1"], ["tiny", "3.35", "50000", "0.5", "1"], ["low", "2.9", "10", "0.1", "1"]],
    )
    assert run(tmp_path, "rank", "--entries", str(entries)) == 0
    assert [r["entry_id"] for r in rows(tmp_path / "out" / "ranking.csv")] == ["tiny", "big", "low"]
    assert [r["rank"] for r in rows(tmp_path / "out" / "ranking.csv")] == ["1", "2", "3"]

    (run_dir,) = list((tmp_path / "runs").iterdir())
    assert run_dir.name.endswith("-rank")
    assert {p.name for p in run_dir.iterdir()} == {"events.log", "config.json", "result.json"}
    assert json.loads((run_dir / "result.json").read_text())["exit_code"] == 0

    assert run(tmp_path, "rank", "--entries", str(entries)) == 2
    assert run(tmp_path, "rank", "--entries", str(entries), "--force") == 0


def test_plan_then_synthesize_is_reproducible(tmp_path: Path, corpus_dir) -> None:
    config = corpus_config(tmp_path, corpus_dir)
    assert run(tmp_path, "plan-training", "--config", config, "--seed", "42", out="plan") == 0
    recipes = tmp_path / "plan" / "training.recipes.jsonl"
    assert len(recipes.read_text().splitlines()) == 3

    assert run(tmp_path, "synthesize", str(recipes), "--config", config, out="a") == 0
    assert run(tmp_path, "synthesize", str(recipes), "--config", config, "--jobs", "2", out="b") == 0
    results = rows(tmp_path / "a" / "results.csv")
    assert [r["recipe_id"] for r in results] == ["train_000000", "train_000001", "train_000002"]
    for r in results:
        assert abs(float(r["achieved_snr"]) - float(r["target_snr"])) < 1e-3
    produced = sorted(p.name for p in (tmp_path / "a" / "audio").iterdir())
    assert len(produced) == 9
    for name in produced:
        assert (tmp_path / "a" / "audio" / name).read_bytes() == (tmp_path / "b" / "audio" / name).read_bytes()
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()


def _recipe(recipe_id: str, clean: List[str]) -> str:
    record = {
        "format_version": 1,
        "recipe_id": recipe_id,
        "clean_clip_ids": clean,
        "noise_clip_ids": ["n0"],
        "target_snr": 10.0,
        "target_rms": -25.0,
        "duration": 2.0,
        "rir_id": None,
        "seed": 0,
    }
    return json.dumps(record) + "\n"


def test_synthesize_partial_and_total_failure(tmp_path: Path, corpus_dir) -> None:
    config = corpus_config(tmp_path, corpus_dir)
    mixed = tmp_path / "mixed.jsonl"
    mixed.write_text(_recipe("good", ["c0"]) + _recipe("broken", ["missing"]))
    assert run(tmp_path, "synthesize", str(mixed), "--config", config, out="m") == 1
    audio = tmp_path / "m" / "audio"
    assert sorted(p.name for p in audio.iterdir()) == ["good.clean.wav", "good.noise.wav", "good.noisy.wav"]
    assert [r["recipe_id"] for r in rows(tmp_path / "m" / "results.csv")] == ["good"]

    dead = tmp_path / "dead.jsonl"
    dead.write_text(_recipe("broken", ["missing"]))
    assert run(tmp_path, "synthesize", str(dead), "--config", config, out="d") == 3


def test_filter_corpus_selects_top_chapter(tmp_path: Path, corpus_dir) -> None:
    config = corpus_config(tmp_path, corpus_dir, min_speaker_seconds=0, segment_seconds=1)
    ratings = write_csv(
        tmp_path / "chapters.csv",
        ["chapter_id", "clip_id", "score"],
        [["ch0", "x", 3], ["ch1", "y", 2], ["ch2", "z", 5], ["ch2", "w", 4], ["ch3", "v", 1]],
    )
    assert run(tmp_path, "filter-corpus", "--config", config, "--chapter-ratings", str(ratings)) == 0
    segments = read_manifest(tmp_path / "out" / "clean.filtered.csv")
    assert [s.clip_id for s in segments] == ["c2_000", "c2_001"]
    assert all(s.chapter_id == "ch2" and s.duration == 1.0 for s in segments)
    assert json.loads((tmp_path / "out" / "chapters.json").read_text())["selected"] == ["ch2"]


def test_balance_noise_with_speech_screen(tmp_path: Path, corpus_dir) -> None:
    config = corpus_config(tmp_path, corpus_dir, min_per_class=1)
    probs = write_csv(tmp_path / "probs.csv", ["clip_id", "speech_prob"], [["n0", "0.1"], ["n1", "0.9"]])
    assert run(tmp_path, "balance-noise", "--config", config, "--speech-probs", str(probs)) == 0
    kept = [r.clip_id for r in read_manifest(tmp_path / "out" / "noise.balanced.csv")]
    assert kept == ["n0", "n2"]
    report = json.loads((tmp_path / "out" / "balance_report.json").read_text())
    assert report["speech_dropped"] == ["n1"] and report["unscreened"] == 1


def test_groups_then_aggregate(tmp_path: Path) -> None:
    clips = write_csv(tmp_path / "clips.csv", ["clip_id"], [[f"clip{i}"] for i in range(16)])
    gold = write_csv(tmp_path / "gold.csv", ["clip_id", "expected"], [["gold_a", 5]])
    trap = write_csv(tmp_path / "trap.csv", ["clip_id", "expected"], [["trap_a", 3]])
    assert run(tmp_path, "build-groups", "--clips", str(clips), "--gold", str(gold), "--trap", str(trap), out="g") == 0
    groups = read_assignments(tmp_path / "g" / "assignments.jsonl")
    assert len(groups) == 6

    ratings: List[RatingRecord] = []
    for g in groups:
        for rater, honest in (("honest", True), ("spammer", False)):
            for pos, clip in enumerate(g.clip_ids):
                if pos == g.gold_position:
                    score = 5 if honest else 1
                elif pos == g.trap_position:
                    score = 3 if honest else 1
                else:
                    score = 4 if int(clip[4:]) < 8 else 2
                ratings.append(RatingRecord(rater, clip, g.group_id, score, "2020-05-01T10:00:00Z"))
    write_ratings(ratings, tmp_path / "ratings.csv")
    conditions = write_csv(
        tmp_path / "conditions.csv", ["clip_id", "condition"], [[f"clip{i}", "good" if i < 8 else "poor"] for i in range(16)]
    )
    reference = write_csv(tmp_path / "ref.csv", ["condition", "mos"], [["good", 4.2], ["poor", 2.5]])
    code = run(
        tmp_path,
        "aggregate-ratings",
        "--ratings", str(tmp_path / "ratings.csv"),
        "--assignments", str(tmp_path / "g" / "assignments.jsonl"),
        "--conditions", str(conditions),
        "--reference", str(reference),
        out="agg",
    )
    assert code == 0
    summary = {r["subject_id"]: r for r in rows(tmp_path / "agg" / "condition_mos.csv")}
    assert float(summary["good"]["mos"]) == 4.0 and summary["good"]["n"] == "24"
    assert float(summary["poor"]["mos"]) == 2.0
    rejections = json.loads((tmp_path / "agg" / "rejections.json").read_text())
    assert rejections["rejected_groups"] == 6 and set(rejections["rejections"]) == {"spammer"}

    flat = write_csv(tmp_path / "flat.csv", ["condition", "mos"], [["good", 3.0], ["poor", 3.0]])
    lonely = write_csv(tmp_path / "lonely.csv", ["condition", "mos"], [["good", 3.0], ["other", 2.0]])
    for name, ref in (("flat", flat), ("lonely", lonely)):
        code = run(
            tmp_path,
            "aggregate-ratings",
            "--ratings", str(tmp_path / "ratings.csv"),
            "--assignments", str(tmp_path / "g" / "assignments.jsonl"),
            "--conditions", str(conditions),
            "--reference", str(ref),
            out=name,
        )
        assert code == 2
        assert not (tmp_path / name).exists()


def test_verify_rt_fixtures(tmp_path: Path) -> None:
    config = str(write_config(tmp_path / "rt.env", {"probe_trials": 2, "probe_signal_s": 0.5, "timing_frames": 100}))
    assert run(tmp_path, "verify-rt", "--fixture", "passthrough", "--config", config, out="ok") == 0
    report = json.loads((tmp_path / "ok" / "verify.json").read_text())
    assert report["probe"]["passed"] and report["track"] == 1
    assert run(tmp_path, "verify-rt", "--fixture", "lookahead60", "--config", config, out="late") == 1
    assert json.loads((tmp_path / "late" / "verify.json").read_text())["probe"]["violations"] == 2
    assert run(tmp_path, "verify-rt", "--fixture", "sleep15", "--config", config, out="slow") == 0
    slow = json.loads((tmp_path / "slow" / "verify.json").read_text())
    assert slow["probe"]["passed"] and not slow["timing"]["passed"] and slow["track"] == 2


def test_usage_errors_exit_2(tmp_path: Path, corpus_dir) -> None:
    bad = str(write_config(tmp_path / "bad.env", {"not_a_key": 1}))
    assert run(tmp_path, "rank", "--entries", "x.csv", "--config", bad) == 2
    assert run(tmp_path, "rank", "--entries", str(tmp_path / "absent.csv")) == 2
    assert run(tmp_path, "verify-rt") == 2
    small = corpus_config(tmp_path, corpus_dir)
    assert run(tmp_path, "build-testset", "--config", small) == 2


def _plan_manifests(tmp_path: Path) -> str:
    header = ["clip_id", "path", "kind", "duration_s", "labels", "speaker_id", "chapter_id", "category"]
    noise_rows = []
    for category in ("fan", "air_conditioner", "typing", "door_shutting", "clatter", "car",
                     "munching", "creaking_chair", "breathing", "copy_machine", "baby_crying", "barking"):
        noise_rows += [[f"{category}_{i:02d}", f"{category}_{i:02d}.wav", "noise", "8.0", category, "", "", category] for i in range(16)]
    noise_rows += [[f"misc_{i:03d}", f"misc_{i:03d}.wav", "noise", "8.0", "rain|wind", "", "", ""] for i in range(130)]
    clean_rows = [[f"c{i}", f"c{i}.wav", "clean", "6.0", "", f"s{i}", f"ch{i}", ""] for i in range(5)]
    write_csv(tmp_path / "noise.csv", header, noise_rows)
    write_csv(tmp_path / "clean.csv", header, clean_rows)
    write_csv(tmp_path / "rir.csv", header + ["rt60_ms"], [["r0", "r0.wav", "rir", "0.5", "", "", "", "", "150"]])
    return str(
        write_config(
            tmp_path / "plan.env",
            {"clean_manifest": tmp_path / "clean.csv", "noise_manifest": tmp_path / "noise.csv", "rir_manifest": tmp_path / "rir.csv"},
        )
    )


def test_build_testset_is_byte_identical(tmp_path: Path) -> None:
    config = _plan_manifests(tmp_path)
    assert run(tmp_path, "build-testset", "--config", config, "--seed", "3", out="one") == 0
    assert run(tmp_path, "build-testset", "--config", config, "--seed", "3", out="two") == 0
    for name in ("synthetic_no_reverb.recipes.jsonl", "synthetic_no_reverb.plan.json"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()
    plan = json.loads((tmp_path / "one" / "synthetic_no_reverb.plan.json").read_text())
    assert plan["recipe_count"] == 300 and plan["composition"]["fan"] == 15
    assert plan["split_counts"] == {"dev": 150, "blind": 150}
    assert not set(plan["splits"]["dev"]) & set(plan["splits"]["blind"])
    assert run(tmp_path, "build-testset", "--config", config, "--reverb", out="rev") == 2


def test_build_testset_synthesize(tmp_path: Path, corpus_dir) -> None:
    config = corpus_config(
        tmp_path,
        corpus_dir,
        priority_categories="fan,typing",
        per_category_count=1,
        random_count=1,
        test_duration_s=3,
    )
    assert run(tmp_path, "build-testset", "--config", config, "--synthesize") == 0
    out = tmp_path / "out"
    results = rows(out / "synthetic_no_reverb" / "results.csv")
    assert len(results) == 3
    for row in results:
        assert abs(float(row["achieved_snr"]) - float(row["target_snr"])) <= 0.1
        for key in ("noisy_path", "clean_path", "noise_path"):
            assert (out / "synthetic_no_reverb" / "audio" / row[key]).is_file()
    plan = json.loads((out / "synthetic_no_reverb.plan.json").read_text())
    assert plan["split_counts"] == {"dev": 2, "blind": 1}
