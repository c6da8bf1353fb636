"""Offline P.808-style scoring: group assembly with gold and trap clips, spam-rater filtering,
rate-limit and comparison-check validation, MOS with t-based 95% CIs, and Spearman validation."""
from __future__ import annotations

import math
from collections import defaultdict
from datetime import datetime, timedelta, timezone
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .errors import ArgumentError, DataError
from .models import (
    ComparisonCheck,
    FilterReport,
    GroupAssignment,
    GroupVerdict,
    RatingRecord,
    ScoreSummary,
)

ACR_SCALE = (1, 2, 3, 4, 5)


def mos_ci(scores: Sequence[int]) -> Tuple[float, float]:
    """Mean and 95% half-width t(0.975, n-1) * sd / sqrt(n). Zero for n == 1 or no variance."""
    if len(scores) == 0:
        raise ArgumentError("MOS of an empty rating set")
    for s in scores:
        if int(s) != s or int(s) not in ACR_SCALE:
            raise ArgumentError(f"rating {s!r} outside the 1-5 ACR scale")
    values = np.asarray(scores, dtype=np.float64)
    mean = float(np.mean(values))
    n = values.size
    if n < 2:
        return mean, 0.0
    sd = float(np.std(values, ddof=1))
    if sd == 0.0:
        return mean, 0.0
    return mean, float(stats.t.ppf(0.975, n - 1) * sd / math.sqrt(n))


def build_groups(
    clip_ids: Sequence[str],
    gold_pool: Sequence[Tuple[str, int]],
    trap_pool: Sequence[Tuple[str, int]],
    ratings_per_clip: int = 3,
    group_size: int = 10,
    seed: int = 0,
) -> List[GroupAssignment]:
    """Each group holds group_size - 2 distinct real clips plus one gold and one trap at seeded
    positions. Clips with the most slots left are placed first, so every clip fills exactly
    ratings_per_clip slots; the final group is padded with already-covered clips, and those
    padding positions are recorded so their ratings can be dropped."""
    if not gold_pool or not trap_pool:
        raise ArgumentError("gold and trap pools must be non-empty")
    if group_size < 3:
        raise ArgumentError(f"group_size must be >= 3, got {group_size}")
    if ratings_per_clip < 1:
        raise ArgumentError(f"ratings_per_clip must be >= 1, got {ratings_per_clip}")
    clips = sorted(set(clip_ids))
    per_group = group_size - 2
    if len(clips) < per_group:
        raise ArgumentError(f"{len(clips)} clips cannot fill groups of {per_group} distinct real clips")

    rng = np.random.default_rng(seed)
    remaining = {c: ratings_per_clip for c in clips}
    groups: List[GroupAssignment] = []
    n_groups = math.ceil(len(clips) * ratings_per_clip / per_group)
    for g in range(n_groups):
        order = {clips[int(i)]: rank for rank, i in enumerate(rng.permutation(len(clips)))}
        due = sorted((c for c in clips if remaining[c] > 0), key=lambda c: (-remaining[c], order[c]))
        real = due[:per_group]
        for c in real:
            remaining[c] -= 1
        padding = [c for c in sorted(clips, key=order.get) if c not in real][: per_group - len(real)]

        gold_pos, trap_pos = (int(p) for p in rng.choice(group_size, 2, replace=False))
        gold_id, gold_expected = gold_pool[int(rng.integers(len(gold_pool)))]
        trap_id, trap_expected = trap_pool[int(rng.integers(len(trap_pool)))]
        slots: List[Optional[str]] = [None] * group_size
        slots[gold_pos] = gold_id
        slots[trap_pos] = trap_id
        free = [p for p in range(group_size) if slots[p] is None]
        for p, c in zip(free, real + padding):
            slots[p] = c
        groups.append(
            GroupAssignment(
                group_id=f"g{g:05d}",
                clip_ids=tuple(slots),  # type: ignore[arg-type]
                gold_position=gold_pos,
                trap_position=trap_pos,
                gold_expected=int(gold_expected),
                trap_expected=int(trap_expected),
                padding_positions=tuple(free[len(real):]),
            )
        )
    return groups


def judge_group(
    responses: Sequence[Optional[int]],
    assignment: GroupAssignment,
    gold_tolerance: int = 1,
) -> GroupVerdict:
    """Accept iff the trap answer is exact and the gold answer is within gold_tolerance."""
    if len(responses) != len(assignment.clip_ids) or any(r is None for r in responses):
        return GroupVerdict(False, "incomplete")
    if responses[assignment.trap_position] != assignment.trap_expected:
        return GroupVerdict(False, "trap")
    if abs(int(responses[assignment.gold_position]) - assignment.gold_expected) > gold_tolerance:  # type: ignore[arg-type]
        return GroupVerdict(False, "gold")
    return GroupVerdict(True)


def _row_label(index: int, record: RatingRecord) -> str:
    if record.source_line is not None:
        return f"ratings line {record.source_line}"
    return f"rating record {index}"


def filter_ratings(
    records: Sequence[RatingRecord],
    assignments: Iterable[GroupAssignment],
    gold_tolerance: int = 1,
) -> FilterReport:
    """Judge every (rater, group) session and keep the real-clip ratings of accepted sessions.
    Gold, trap and padding positions never come out as clip ratings. A rater scoring the same
    clip twice in one group is a DataError."""
    by_group = {a.group_id: a for a in assignments}
    sessions: Dict[Tuple[str, str], List[Tuple[int, RatingRecord]]] = defaultdict(list)
    seen: Dict[Tuple[str, str, str], str] = {}
    for row, record in enumerate(records):
        where = _row_label(row, record)
        assignment = by_group.get(record.group_id)
        if assignment is None:
            raise DataError(f"{where}: unknown group_id {record.group_id!r}")
        if record.clip_id not in assignment.clip_ids:
            raise DataError(f"{where}: clip {record.clip_id!r} not in group {record.group_id!r}")
        key = (record.rater_id, record.group_id, record.clip_id)
        if key in seen:
            raise DataError(
                f"{where}: rater {record.rater_id!r} already rated clip {record.clip_id!r} "
                f"in group {record.group_id!r} ({seen[key]})"
            )
        seen[key] = where
        sessions[(record.rater_id, record.group_id)].append((row, record))

    report = FilterReport()
    keep_rows: List[int] = []
    for (rater, group_id), rows in sorted(sessions.items()):
        assignment = by_group[group_id]
        position = {c: p for p, c in enumerate(assignment.clip_ids)}
        responses: List[Optional[int]] = [None] * len(assignment.clip_ids)
        for _, record in rows:
            responses[position[record.clip_id]] = record.score
        verdict = judge_group(responses, assignment, gold_tolerance)
        if not verdict.accepted:
            report.rejected_groups += 1
            report.rejections.setdefault(rater, []).append((group_id, verdict.reason or "rejected"))
            continue
        report.accepted_groups += 1
        skip = {assignment.gold_position, assignment.trap_position, *assignment.padding_positions}
        keep_rows.extend(row for row, record in rows if position[record.clip_id] not in skip)

    report.accepted = [records[row] for row in sorted(keep_rows)]
    return report


def parse_timestamp(value: str) -> datetime:
    text = value.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    try:
        stamp = datetime.fromisoformat(text)
    except ValueError as exc:
        raise DataError(f"bad timestamp {value!r}") from exc
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return stamp.astimezone(timezone.utc)


def apply_rate_limit(
    records: Sequence[RatingRecord],
    max_per_day: int,
) -> Tuple[List[RatingRecord], Dict[str, int]]:
    """Keep each rater's first max_per_day ratings per UTC day; return the kept records and drops per rater."""
    if max_per_day < 1:
        raise ArgumentError(f"max_per_day must be >= 1, got {max_per_day}")
    order = sorted(range(len(records)), key=lambda i: (records[i].rater_id, parse_timestamp(records[i].timestamp), i))
    used: Dict[Tuple[str, str], int] = defaultdict(int)
    dropped: Dict[str, int] = defaultdict(int)
    keep = []
    for i in order:
        record = records[i]
        day = parse_timestamp(record.timestamp).date().isoformat()
        if used[(record.rater_id, day)] < max_per_day:
            used[(record.rater_id, day)] += 1
            keep.append(i)
        else:
            dropped[record.rater_id] += 1
    return [records[i] for i in sorted(keep)], dict(dropped)


def apply_comparison_checks(
    records: Sequence[RatingRecord],
    checks: Iterable[ComparisonCheck],
    window_s: float = 3600.0,
) -> Tuple[List[RatingRecord], Dict[str, int]]:
    """Keep a rating only if its rater passed a gold A/B comparison within the preceding window."""
    passed: Dict[str, List[datetime]] = defaultdict(list)
    for check in checks:
        if check.passed:
            passed[check.rater_id].append(parse_timestamp(check.timestamp))
    window = timedelta(seconds=window_s)
    kept: List[RatingRecord] = []
    dropped: Dict[str, int] = defaultdict(int)
    for record in records:
        stamp = parse_timestamp(record.timestamp)
        if any(stamp - window <= t <= stamp for t in passed.get(record.rater_id, ())):
            kept.append(record)
        else:
            dropped[record.rater_id] += 1
    return kept, dict(dropped)


def _summaries(groups: Mapping[str, List[int]]) -> List[ScoreSummary]:
    out = []
    for subject in sorted(groups):
        mos, ci95 = mos_ci(groups[subject])
        out.append(ScoreSummary(subject, mos, ci95, len(groups[subject])))
    return out


def clip_mos(records: Iterable[RatingRecord]) -> List[ScoreSummary]:
    pooled: Dict[str, List[int]] = defaultdict(list)
    for record in records:
        pooled[record.clip_id].append(record.score)
    return _summaries(pooled)


def condition_mos(
    records: Iterable[RatingRecord],
    clip_to_condition: Mapping[str, str],
) -> List[ScoreSummary]:
    """Pool every accepted rating of a condition's clips, then apply mos_ci."""
    pooled: Dict[str, List[int]] = defaultdict(list)
    for record in records:
        condition = clip_to_condition.get(record.clip_id)
        if condition is None:
            raise DataError(f"clip {record.clip_id!r} has no condition")
        pooled[condition].append(record.score)
    return _summaries(pooled)


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of average ranks."""
    if len(x) != len(y):
        raise ArgumentError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise ArgumentError("spearman needs at least two pairs")
    if np.ptp(np.asarray(x, dtype=float)) == 0 or np.ptp(np.asarray(y, dtype=float)) == 0:
        raise ArgumentError("spearman is undefined for a constant input")
    rho, _ = stats.spearmanr(x, y)
    return float(min(1.0, max(-1.0, rho)))


def correlate_with_reference(
    summaries: Iterable[ScoreSummary],
    reference: Mapping[str, float],
) -> Tuple[float, int]:
    """Spearman between measured and reference per-condition MOS over shared conditions.
    Works for lab validation and run-to-run repeatability alike."""
    measured = {s.subject_id: s.mos for s in summaries}
    common = sorted(set(measured) & set(reference))
    if len(common) < 2:
        raise DataError(f"only {len(common)} conditions shared with the reference")
    return spearman([measured[c] for c in common], [reference[c] for c in common]), len(common)
