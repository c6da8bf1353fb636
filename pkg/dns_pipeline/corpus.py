"""Corpus curation and plan generation: chapter MOS and upper-quartile selection, speaker pruning,
10 s segmentation, noise-class balancing, and seeded training/test recipe builders."""
from __future__ import annotations

import math
from collections import defaultdict
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ArgumentError, PlanError
from .models import (
    PRIORITY_CATEGORIES,
    AudioClip,
    BalanceResult,
    ChapterScore,
    ClipRecord,
    MixRecipe,
    QuartileSelection,
    TestPlan,
)
from .p808 import mos_ci
from .seeding import derive_seed

TRAIN_STREAM = 1
TEST_STREAM = 2
SPLIT_STREAM = 3
SELECTION_INDEX = -1
SPLITS = ("dev", "blind")
RANDOM_STRATUM = "random"

_MAX_DRAWS = 10_000


def _stream_seed(master_seed: int, stream: int, index: int) -> int:
    return derive_seed(derive_seed(master_seed, stream), index)


def chapter_mos(chapter_id: str, clip_scores: Sequence[Sequence[int]]) -> ChapterScore:
    """Chapter MOS is the grand mean of every rating across the chapter's sampled clips."""
    pooled = [s for scores in clip_scores for s in scores]
    if not pooled:
        raise ArgumentError(f"chapter {chapter_id!r} has no ratings")
    mos, ci95 = mos_ci(pooled)
    return ChapterScore(chapter_id, tuple(tuple(int(s) for s in c) for c in clip_scores), mos, ci95)


def chapter_scores_from_ratings(rows: Iterable[Tuple[str, str, int]]) -> List[ChapterScore]:
    """Group (chapter_id, clip_id, score) rows into chapter scores, ordered by chapter_id."""
    by_chapter: Dict[str, Dict[str, List[int]]] = defaultdict(lambda: defaultdict(list))
    for chapter_id, clip_id, score in rows:
        by_chapter[chapter_id][clip_id].append(int(score))
    return [
        chapter_mos(chapter_id, [clips[c] for c in sorted(clips)])
        for chapter_id, clips in sorted(by_chapter.items())
    ]


def select_upper_quartile(chapters: Sequence[ChapterScore]) -> QuartileSelection:
    """Top ceil(n/4) chapters by MOS; ties at the cut go to the lower chapter_id."""
    if not chapters:
        raise ArgumentError("no chapters to select from")
    ranked = sorted(chapters, key=lambda c: (-c.mos, c.chapter_id))
    keep = ranked[: math.ceil(len(ranked) / 4)]
    return QuartileSelection(tuple(c.chapter_id for c in keep), min(c.mos for c in keep))


def prune_speakers(records: Iterable[ClipRecord], min_seconds: float = 900.0) -> List[ClipRecord]:
    """Drop every clean clip of a speaker whose total speech is below min_seconds."""
    records = list(records)
    totals: Dict[Optional[str], float] = defaultdict(float)
    for r in records:
        if r.kind == "clean":
            totals[r.speaker_id] += r.duration
    return [r for r in records if r.kind != "clean" or totals[r.speaker_id] >= min_seconds]


def segment_clip(clip: AudioClip, seg_seconds: float = 10.0) -> List[AudioClip]:
    """Consecutive non-overlapping segments; a trailing remainder shorter than seg_seconds is dropped."""
    n = int(round(seg_seconds * clip.sample_rate))
    if n <= 0:
        raise ArgumentError(f"segment length must be positive, got {seg_seconds}")
    return [AudioClip(clip.samples[i * n : (i + 1) * n], clip.sample_rate) for i in range(len(clip) // n)]


def balance_classes(
    records: Iterable[ClipRecord],
    min_per_class: int = 500,
    seed: int = 0,
) -> BalanceResult:
    """Greedy cover, scarcest class first. Each added clip credits all of its labels, so a class
    may already be at quota when its turn comes. Classes with fewer clips than the quota take
    all they have and are reported as under quota."""
    noise = sorted((r for r in records if r.kind == "noise"), key=lambda r: r.clip_id)
    by_label: Dict[str, List[ClipRecord]] = defaultdict(list)
    for r in noise:
        for label in r.labels:
            by_label[label].append(r)

    rng = np.random.default_rng(derive_seed(seed, SELECTION_INDEX))
    selected: Dict[str, ClipRecord] = {}
    counts: Dict[str, int] = defaultdict(int)
    under_quota: Dict[str, int] = {}

    for label in sorted(by_label, key=lambda k: (len(by_label[k]), k)):
        available = len(by_label[label])
        goal = min(min_per_class, available)
        if available < min_per_class:
            under_quota[label] = available
        if counts[label] >= goal:
            continue
        candidates = [r for r in by_label[label] if r.clip_id not in selected]
        for pos in rng.permutation(len(candidates)):
            if counts[label] >= goal:
                break
            chosen = candidates[int(pos)]
            selected[chosen.clip_id] = chosen
            for credited in chosen.labels:
                counts[credited] += 1

    return BalanceResult(tuple(sorted(selected)), dict(sorted(counts.items())), under_quota)


def _draw_until(
    rng: np.random.Generator,
    pool: Sequence[ClipRecord],
    duration: float,
    gap_s: float,
) -> Tuple[str, ...]:
    """Draw clips (with replacement) until their durations plus gaps cover `duration`."""
    picked: List[str] = []
    total = 0.0
    while total < duration:
        if len(picked) >= _MAX_DRAWS:
            raise ArgumentError(f"could not cover {duration} s from the manifest (non-positive durations?)")
        record = pool[int(rng.integers(len(pool)))]
        total += record.duration + (gap_s if picked else 0.0)
        picked.append(record.clip_id)
    return tuple(picked)


def build_training_recipes(
    clean_records: Iterable[ClipRecord],
    noise_records: Iterable[ClipRecord],
    count: int,
    master_seed: int,
    snr_range: Tuple[float, float] = (0.0, 40.0),
    rms_range: Tuple[float, float] = (-35.0, -15.0),
    duration: float = 30.0,
    gap_ms: float = 200.0,
) -> List[MixRecipe]:
    """SNR ~ U(snr_range) dB and RMS ~ U(rms_range) dBFS per recipe. Each recipe draws from its own
    stream keyed by (master_seed, index), so any index can be rebuilt alone."""
    clean = sorted(clean_records, key=lambda r: r.clip_id)
    noise = sorted(noise_records, key=lambda r: r.clip_id)
    if not clean or not noise:
        raise ArgumentError("training recipes need non-empty clean and noise manifests")
    recipes = []
    for index in range(count):
        seed = _stream_seed(master_seed, TRAIN_STREAM, index)
        rng = np.random.default_rng(seed)
        snr = float(rng.uniform(*snr_range))
        rms = float(rng.uniform(*rms_range))
        recipes.append(
            MixRecipe(
                recipe_id=f"train_{index:06d}",
                clean_clip_ids=_draw_until(rng, clean, duration, gap_ms / 1000.0),
                noise_clip_ids=_draw_until(rng, noise, duration, 0.0),
                target_snr=snr,
                target_rms=rms,
                duration=duration,
                seed=seed,
            )
        )
    return recipes


def _bucket(record: ClipRecord) -> Optional[str]:
    if record.category:
        return record.category
    return sorted(record.labels)[0] if record.labels else None


def split_dev_blind(ids: Sequence[str], strata: Sequence[str], master_seed: int) -> Dict[str, str]:
    """Seeded half/half split into a development set and a blind set, done per stratum.
    Odd strata hand their extra item to dev and blind in turn, so the totals differ by at most one."""
    if len(ids) != len(strata):
        raise ArgumentError(f"{len(ids)} ids but {len(strata)} strata")
    members: Dict[str, List[str]] = defaultdict(list)
    for item, stratum in zip(ids, strata):
        members[stratum].append(item)
    rng = np.random.default_rng(_stream_seed(master_seed, SPLIT_STREAM, SELECTION_INDEX))
    splits: Dict[str, str] = {}
    extra_to_dev = True
    for stratum, items in members.items():
        n_dev = len(items) // 2
        if len(items) % 2:
            n_dev += int(extra_to_dev)
            extra_to_dev = not extra_to_dev
        for rank, i in enumerate(rng.permutation(len(items))):
            splits[items[int(i)]] = SPLITS[0] if rank < n_dev else SPLITS[1]
    return splits


def build_test_plan(
    noise_records: Iterable[ClipRecord],
    clean_records: Iterable[ClipRecord],
    master_seed: int,
    priority_categories: Sequence[str] = PRIORITY_CATEGORIES,
    rir_records: Optional[Iterable[ClipRecord]] = None,
    reverb: bool = False,
    per_category: int = 15,
    random_count: int = 120,
    snr_range: Tuple[float, float] = (0.0, 25.0),
    rms_range: Tuple[float, float] = (-35.0, -15.0),
    duration: float = 10.0,
    rt60_range: Tuple[float, float] = (300.0, 1300.0),
    gap_ms: float = 200.0,
) -> TestPlan:
    """Synthetic test set: per_category clips from each priority category plus random_count
    clips from the remaining classes, SNR ~ U(snr_range). With reverb, each recipe gets an
    RIR whose RT60 lies in rt60_range. Recipes are split into dev and blind halves per
    priority category, with the random picks as one more stratum."""
    noise = sorted((r for r in noise_records), key=lambda r: r.clip_id)
    clean = sorted(clean_records, key=lambda r: r.clip_id)
    if not clean:
        raise PlanError("test plan needs clean speech clips")
    rirs: List[ClipRecord] = []
    if reverb:
        lo, hi = rt60_range
        rirs = sorted(
            (r for r in (rir_records or []) if r.rt60_ms is not None and lo <= r.rt60_ms <= hi),
            key=lambda r: r.clip_id,
        )
        if not rirs:
            raise PlanError(f"reverb test plan needs RIRs with RT60 in [{lo}, {hi}] ms, none available")

    by_category: Dict[str, List[ClipRecord]] = defaultdict(list)
    for r in noise:
        by_category[_bucket(r) or ""].append(r)

    picker = np.random.default_rng(_stream_seed(master_seed, TEST_STREAM, SELECTION_INDEX))
    chosen: List[Tuple[str, ClipRecord]] = []
    strata: List[str] = []
    for category in priority_categories:
        pool = by_category.get(category, [])
        if len(pool) < per_category:
            raise PlanError(f"priority category {category!r} has {len(pool)} clips, needs {per_category}")
        for i in sorted(picker.choice(len(pool), per_category, replace=False)):
            chosen.append((category, pool[int(i)]))
            strata.append(category)

    priority = set(priority_categories)
    remaining = [r for r in noise if (_bucket(r) or "") not in priority]
    if len(remaining) < random_count:
        raise PlanError(f"remaining classes have {len(remaining)} clips, needs {random_count}")
    for i in sorted(picker.choice(len(remaining), random_count, replace=False)):
        record = remaining[int(i)]
        chosen.append((_bucket(record) or "unlabeled", record))
        strata.append(RANDOM_STRATUM)

    plan = TestPlan(category="synthetic_reverb" if reverb else "synthetic_no_reverb")
    composition: Dict[str, int] = defaultdict(int)
    for index, (category, record) in enumerate(chosen):
        seed = _stream_seed(master_seed, TEST_STREAM, index)
        rng = np.random.default_rng(seed)
        snr = float(rng.uniform(*snr_range))
        rms = float(rng.uniform(*rms_range))
        clean_ids = _draw_until(rng, clean, duration, gap_ms / 1000.0)
        rir_id = rirs[int(rng.integers(len(rirs)))].clip_id if reverb else None
        plan.recipes.append(
            MixRecipe(
                recipe_id=f"{plan.category}_{index:04d}",
                clean_clip_ids=clean_ids,
                noise_clip_ids=(record.clip_id,),
                target_snr=snr,
                target_rms=rms,
                duration=duration,
                rir_id=rir_id,
                seed=seed,
            )
        )
        composition[category] += 1
    plan.composition = dict(sorted(composition.items()))
    plan.splits = split_dev_blind([r.recipe_id for r in plan.recipes], strata, master_seed)
    return plan


def build_real_reference_set(
    records: Iterable[ClipRecord],
    category: str,
    count: int = 300,
    master_seed: int = 0,
) -> TestPlan:
    """Real recordings need no synthesis; the plan lists them as pass-through references."""
    refs = sorted(r.clip_id for r in records if r.category == category)
    if len(refs) < count:
        raise PlanError(f"real category {category!r} has {len(refs)} clips, needs {count}")
    refs = refs[:count]
    return TestPlan(
        category=category,
        references=refs,
        composition={category: count},
        splits=split_dev_blind(refs, [category] * count, master_seed),
    )

