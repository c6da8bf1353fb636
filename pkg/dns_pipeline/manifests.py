"""Delimited-text and JSON Lines persistence for manifests, plans, assignments, ratings, and reports.
Field order is fixed so reruns produce identical bytes."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Iterator, List, Mapping, Sequence, Tuple, Union

from .errors import DataError
from .models import (
    FORMAT_VERSION,
    ClipRecord,
    ComparisonCheck,
    GroupAssignment,
    MixRecipe,
    RatingRecord,
    ScoreSummary,
    SubmissionEntry,
    TestPlan,
)

PathLike = Union[str, Path]

MANIFEST_FIELDS = ["clip_id", "path", "kind", "duration_s", "labels", "speaker_id", "chapter_id", "category"]
RESULTS_FIELDS = [
    "recipe_id",
    "noisy_path",
    "clean_path",
    "noise_path",
    "target_snr",
    "achieved_snr",
    "target_rms",
    "achieved_rms",
    "clipped",
]
RATING_FIELDS = ["rater_id", "clip_id", "group_id", "score", "timestamp"]
SUMMARY_FIELDS = ["subject_id", "mos", "ci95", "n"]
ENTRY_FIELDS = ["entry_id", "mos", "param_count", "per_frame_ms", "track"]
RECIPE_FIELDS = ["recipe_id", "clean_clip_ids", "noise_clip_ids", "target_snr", "target_rms", "duration", "rir_id", "seed"]
ASSIGNMENT_FIELDS = [
    "group_id",
    "clip_ids",
    "gold_position",
    "trap_position",
    "gold_expected",
    "trap_expected",
    "padding_positions",
]
KINDS = ("clean", "noise", "rir")


def _rows(path: PathLike, required: Sequence[str]) -> Iterator[Tuple[int, Dict[str, str]]]:
    """Yield (line_number, row) for a CSV with a header containing every required column."""
    with Path(path).open("r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        missing = [f for f in required if f not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        for row in reader:
            yield reader.line_num, row


def _write_rows(path: PathLike, fields: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(fields), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _parse(path: PathLike, line: int, field: str, value: str, kind: Callable[[str], Any]) -> Any:
    try:
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise DataError(f"{path}:{line}: bad {field} {value!r}") from exc


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def read_manifest(path: PathLike) -> List[ClipRecord]:
    """Relative clip paths resolve against the manifest's directory. An optional rt60_ms column serves RIR rows."""
    base = Path(path).resolve().parent
    records = []
    seen = set()
    for line, row in _rows(path, MANIFEST_FIELDS):
        kind = row["kind"].strip()
        if kind not in KINDS:
            raise DataError(f"{path}:{line}: kind {kind!r} not in {KINDS}")
        labels = frozenset(x.strip() for x in (row["labels"] or "").split("|") if x.strip())
        if kind == "noise" and not labels:
            raise DataError(f"{path}:{line}: noise clip {row['clip_id']!r} has no labels")
        if row["clip_id"] in seen:
            raise DataError(f"{path}:{line}: duplicate clip_id {row['clip_id']!r}")
        seen.add(row["clip_id"])
        clip_path = Path(row["path"])
        rt60 = (row.get("rt60_ms") or "").strip()
        records.append(
            ClipRecord(
                clip_id=row["clip_id"],
                path=str(clip_path if clip_path.is_absolute() else base / clip_path),
                kind=kind,
                duration=_parse(path, line, "duration_s", row["duration_s"], float),
                labels=labels,
                speaker_id=row["speaker_id"] or None,
                chapter_id=row["chapter_id"] or None,
                category=row["category"] or None,
                rt60_ms=_parse(path, line, "rt60_ms", rt60, float) if rt60 else None,
            )
        )
    return records


def write_manifest(records: Iterable[ClipRecord], path: PathLike) -> None:
    records = list(records)
    fields = MANIFEST_FIELDS + (["rt60_ms"] if any(r.rt60_ms is not None for r in records) else [])
    _write_rows(
        path,
        fields,
        (
            {
                "clip_id": r.clip_id,
                "path": r.path,
                "kind": r.kind,
                "duration_s": _fmt(r.duration),
                "labels": "|".join(sorted(r.labels)),
                "speaker_id": r.speaker_id or "",
                "chapter_id": r.chapter_id or "",
                "category": r.category or "",
                **({"rt60_ms": "" if r.rt60_ms is None else _fmt(r.rt60_ms)} if "rt60_ms" in fields else {}),
            }
            for r in records
        ),
    )


def read_speech_probabilities(path: PathLike) -> Dict[str, float]:
    return {
        row["clip_id"]: _parse(path, line, "speech_prob", row["speech_prob"], float)
        for line, row in _rows(path, ["clip_id", "speech_prob"])
    }


def read_chapter_ratings(path: PathLike) -> List[Tuple[str, str, int]]:
    return [
        (row["chapter_id"], row["clip_id"], _parse(path, line, "score", row["score"], int))
        for line, row in _rows(path, ["chapter_id", "clip_id", "score"])
    ]


def read_ratings(path: PathLike) -> List[RatingRecord]:
    records = []
    for line, row in _rows(path, RATING_FIELDS):
        score = _parse(path, line, "score", row["score"], int)
        if not 1 <= score <= 5:
            raise DataError(f"{path}:{line}: score {score} outside 1-5")
        records.append(
            RatingRecord(row["rater_id"], row["clip_id"], row["group_id"], score, row["timestamp"], source_line=line)
        )
    return records


def write_ratings(records: Iterable[RatingRecord], path: PathLike) -> None:
    _write_rows(path, RATING_FIELDS, ({f: getattr(r, f) for f in RATING_FIELDS} for r in records))


def read_comparison_checks(path: PathLike) -> List[ComparisonCheck]:
    truthy = {"1", "true", "yes", "pass", "passed"}
    return [
        ComparisonCheck(row["rater_id"], row["timestamp"], row["passed"].strip().lower() in truthy)
        for _, row in _rows(path, ["rater_id", "timestamp", "passed"])
    ]


def read_condition_map(path: PathLike) -> Dict[str, str]:
    return {row["clip_id"]: row["condition"] for _, row in _rows(path, ["clip_id", "condition"])}


def read_reference_mos(path: PathLike) -> Dict[str, float]:
    return {
        row["condition"]: _parse(path, line, "mos", row["mos"], float)
        for line, row in _rows(path, ["condition", "mos"])
    }


def write_summaries(summaries: Iterable[ScoreSummary], path: PathLike) -> None:
    _write_rows(
        path,
        SUMMARY_FIELDS,
        ({"subject_id": s.subject_id, "mos": _fmt(s.mos), "ci95": _fmt(s.ci95), "n": s.n} for s in summaries),
    )


def read_entries(path: PathLike) -> List[SubmissionEntry]:
    entries = []
    for line, row in _rows(path, ENTRY_FIELDS):
        mos = _parse(path, line, "mos", row["mos"], float)
        if not 1.0 <= mos <= 5.0:
            raise DataError(f"{path}:{line}: mos {mos} outside 1-5")
        entries.append(
            SubmissionEntry(
                entry_id=row["entry_id"],
                mos=mos,
                param_count=_parse(path, line, "param_count", row["param_count"], int),
                per_frame_ms=_parse(path, line, "per_frame_ms", row["per_frame_ms"], float),
                track=_parse(path, line, "track", row["track"], int),
            )
        )
    return entries


def write_ranking(entries: Sequence[SubmissionEntry], path: PathLike) -> None:
    _write_rows(
        path,
        ["rank"] + ENTRY_FIELDS,
        ({"rank": i + 1, **asdict(e)} for i, e in enumerate(entries)),
    )


def write_results_manifest(rows: Iterable[Mapping[str, Any]], path: PathLike) -> None:
    _write_rows(path, RESULTS_FIELDS, rows)


def _write_jsonl(path: PathLike, records: Iterable[Dict[str, Any]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            handle.write(json.dumps(record) + "\n")


def _read_jsonl(path: PathLike) -> Iterator[Tuple[int, Dict[str, Any]]]:
    with Path(path).open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{line_no}: invalid JSON ({exc.msg})") from exc
            if record.get("format_version") != FORMAT_VERSION:
                raise DataError(f"{path}:{line_no}: unsupported format_version {record.get('format_version')!r}")
            yield line_no, record


def recipe_to_record(recipe: MixRecipe) -> Dict[str, Any]:
    data = asdict(recipe)
    record: Dict[str, Any] = {"format_version": FORMAT_VERSION}
    for field in RECIPE_FIELDS:
        value = data[field]
        record[field] = list(value) if isinstance(value, tuple) else value
    return record


def write_recipes(recipes: Iterable[MixRecipe], path: PathLike) -> None:
    _write_jsonl(path, (recipe_to_record(r) for r in recipes))


def read_recipes(path: PathLike) -> List[MixRecipe]:
    recipes = []
    for line, record in _read_jsonl(path):
        try:
            recipes.append(
                MixRecipe(
                    recipe_id=str(record["recipe_id"]),
                    clean_clip_ids=tuple(record["clean_clip_ids"]),
                    noise_clip_ids=tuple(record["noise_clip_ids"]),
                    target_snr=float(record["target_snr"]),
                    target_rms=float(record["target_rms"]),
                    duration=float(record["duration"]),
                    rir_id=record.get("rir_id"),
                    seed=int(record["seed"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{line}: bad recipe record ({exc})") from exc
    return recipes


def write_plan(plan: TestPlan, directory: PathLike) -> Tuple[Path, Path]:
    """Recipes go to <category>.recipes.jsonl; composition and references to <category>.plan.json."""
    directory = Path(directory)
    recipes_path = directory / f"{plan.category}.recipes.jsonl"
    summary_path = directory / f"{plan.category}.plan.json"
    write_recipes(plan.recipes, recipes_path)
    summary = {
        "format_version": FORMAT_VERSION,
        "category": plan.category,
        "recipe_count": len(plan.recipes),
        "composition": plan.composition,
        "references": plan.references,
        "split_counts": {name: sum(1 for s in plan.splits.values() if s == name) for name in ("dev", "blind")},
        "splits": {name: sorted(i for i, s in plan.splits.items() if s == name) for name in ("dev", "blind")},
    }
    summary_path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return recipes_path, summary_path


def write_assignments(assignments: Iterable[GroupAssignment], path: PathLike) -> None:
    def record(a: GroupAssignment) -> Dict[str, Any]:
        data = asdict(a)
        out: Dict[str, Any] = {"format_version": FORMAT_VERSION}
        for field in ASSIGNMENT_FIELDS:
            value = data[field]
            out[field] = list(value) if isinstance(value, tuple) else value
        return out

    _write_jsonl(path, (record(a) for a in assignments))


def read_assignments(path: PathLike) -> List[GroupAssignment]:
    out = []
    for line, record in _read_jsonl(path):
        try:
            out.append(
                GroupAssignment(
                    group_id=str(record["group_id"]),
                    clip_ids=tuple(record["clip_ids"]),
                    gold_position=int(record["gold_position"]),
                    trap_position=int(record["trap_position"]),
                    gold_expected=int(record["gold_expected"]),
                    trap_expected=int(record["trap_expected"]),
                    padding_positions=tuple(record.get("padding_positions") or ()),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{line}: bad assignment record ({exc})") from exc
    return out


def read_pool(path: PathLike, value_field: str) -> List[Tuple[str, int]]:
    """Gold or trap pool: clip_id plus the expected answer column."""
    return [
        (row["clip_id"], _parse(path, line, value_field, row[value_field], int))
        for line, row in _rows(path, ["clip_id", value_field])
    ]


def read_clip_list(path: PathLike) -> List[str]:
    return [row["clip_id"] for _, row in _rows(path, ["clip_id"])]

