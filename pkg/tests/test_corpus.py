from __future__ import annotations

from collections import Counter

import numpy as np
import pytest

from dns_pipeline.corpus import (
    balance_classes,
    build_real_reference_set,
    build_test_plan,
    build_training_recipes,
    chapter_mos,
    chapter_scores_from_ratings,
    prune_speakers,
    segment_clip,
    select_upper_quartile,
    split_dev_blind,
)
from dns_pipeline.errors import ArgumentError, PlanError
from dns_pipeline.models import PRIORITY_CATEGORIES, AudioClip, ChapterScore, ClipRecord


def _clean(n: int = 6, duration: float = 4.0):
    return [ClipRecord(f"c{i:02d}", "", "clean", duration, speaker_id=f"s{i % 3}") for i in range(n)]


def _noise(label: str, n: int, start: int = 0, category: bool = True):
    return [
        ClipRecord(f"{label}_{i:03d}", "", "noise", 5.0, frozenset({label}), category=label if category else None)
        for i in range(start, start + n)
    ]


def test_upper_quartile_of_1000_chapters() -> None:
    chapters = [ChapterScore(f"ch{i:04d}", (), 1.0 + 4.0 * i / 999, 0.0) for i in range(1000)]
    selection = select_upper_quartile(chapters[::-1])
    assert len(selection.selected_ids) == 250
    assert set(selection.selected_ids) == {f"ch{i:04d}" for i in range(750, 1000)}
    assert selection.threshold_mos == pytest.approx(chapters[750].mos)


def test_quartile_ties_go_to_lower_chapter_id() -> None:
    chapters = [ChapterScore(c, (), 3.0, 0.0) for c in "edcba"]
    assert select_upper_quartile(chapters).selected_ids == ("a", "b")
    with pytest.raises(ArgumentError):
        select_upper_quartile([])


def test_chapter_mos_pools_all_clip_ratings() -> None:
    score = chapter_mos("ch", [[3, 4], [5]])
    assert score.mos == pytest.approx(4.0)
    assert score.ci95 == pytest.approx(2.484, abs=1e-3)
    rows = [("b", "x", 5), ("a", "y", 1), ("a", "z", 3)]
    assert [(c.chapter_id, c.mos) for c in chapter_scores_from_ratings(rows)] == [("a", 2.0), ("b", 5.0)]


def test_prune_speakers_at_900_seconds() -> None:
    rows = [
        ClipRecord("a1", "", "clean", 450.0, speaker_id="a"),
        ClipRecord("a2", "", "clean", 450.0, speaker_id="a"),
        ClipRecord("b1", "", "clean", 899.0, speaker_id="b"),
        ClipRecord("n1", "", "noise", 1.0, frozenset({"fan"})),
    ]
    assert [r.clip_id for r in prune_speakers(rows)] == ["a1", "a2", "n1"]


def test_segment_clip_drops_remainder() -> None:
    assert len(segment_clip(AudioClip(np.zeros(35 * 16000)), 10.0)) == 3
    pieces = segment_clip(AudioClip(np.arange(25 * 16000) / 1e6), 10.0)
    assert [len(p) for p in pieces] == [160000, 160000]
    assert pieces[1].samples[0] == pytest.approx(160000 / 1e6)


def _recount(records, selected):
    by_id = {r.clip_id: r for r in records}
    counts = {}
    for clip_id in selected:
        for label in by_id[clip_id].labels:
            counts[label] = counts.get(label, 0) + 1
    return counts


@pytest.mark.parametrize("seed", range(200))
def test_balance_meets_quota_or_takes_everything(seed: int) -> None:
    rng = np.random.default_rng(seed)
    labels = ["a", "b", "c", "d", "e"]
    records = []
    for i in range(int(rng.integers(1, 21))):
        k = int(rng.integers(1, 3))
        chosen = frozenset(rng.choice(labels, k, replace=False).tolist())
        records.append(ClipRecord(f"n{i:03d}", "", "noise", 1.0, chosen))
    quota = int(rng.integers(1, 8))
    result = balance_classes(records, quota, seed)

    available = {lab: sum(lab in r.labels for r in records) for lab in labels}
    counts = _recount(records, result.selected_ids)
    assert counts == result.class_counts
    for label, have in available.items():
        if have == 0:
            continue
        assert counts[label] >= min(quota, have)
        assert (label in result.under_quota) == (have < quota)
    assert len(set(result.selected_ids)) == len(result.selected_ids)
    assert balance_classes(records, quota, seed) == result


def test_balance_scarce_class_first() -> None:
    records = [ClipRecord("rare", "", "noise", 1.0, frozenset({"rare", "common"}))]
    records += [ClipRecord(f"c{i}", "", "noise", 1.0, frozenset({"common"})) for i in range(10)]
    result = balance_classes(records, min_per_class=3, seed=0)
    assert "rare" in result.selected_ids
    assert result.class_counts == {"common": 3, "rare": 1}
    assert result.under_quota == {"rare": 1}


def test_training_recipes_are_index_stable() -> None:
    clean, noise = _clean(), _noise("fan", 4)
    recipes = build_training_recipes(clean, noise, 10, master_seed=5)
    assert [r.recipe_id for r in recipes][:2] == ["train_000000", "train_000001"]
    assert build_training_recipes(clean[::-1], noise, 4, master_seed=5) == recipes[:4]
    assert build_training_recipes(clean, noise, 10, master_seed=6) != recipes
    for r in recipes:
        assert 0.0 <= r.target_snr <= 40.0
        assert -35.0 <= r.target_rms <= -15.0
        assert 4.0 * len(r.clean_clip_ids) + 0.2 * (len(r.clean_clip_ids) - 1) >= 30.0
        assert 5.0 * len(r.noise_clip_ids) >= 30.0
    with pytest.raises(ArgumentError):
        build_training_recipes([], noise, 1, 0)


def _test_pool():
    noise = [r for cat in PRIORITY_CATEGORIES for r in _noise(cat, 20)]
    for label in ("rain", "traffic", "music", "wind", "babble", "keys"):
        noise += _noise(label, 25, category=False)
    return noise


def test_test_plan_composition() -> None:
    plan = build_test_plan(_test_pool(), _clean(), master_seed=1)
    assert plan.category == "synthetic_no_reverb"
    assert len(plan.recipes) == 300
    assert all(plan.composition[c] == 15 for c in PRIORITY_CATEGORIES)
    assert sum(plan.composition.values()) == 300
    assert len({r.noise_clip_ids for r in plan.recipes}) == 300
    assert all(0.0 <= r.target_snr <= 25.0 and r.duration == 10.0 and r.rir_id is None for r in plan.recipes)
    assert build_test_plan(_test_pool(), _clean(), master_seed=1).recipes == plan.recipes


def test_test_plan_dev_blind_split_is_balanced() -> None:
    plan = build_test_plan(_test_pool(), _clean(), master_seed=1)
    assert set(plan.splits) == {r.recipe_id for r in plan.recipes}
    assert sorted(Counter(plan.splits.values()).items()) == [("blind", 150), ("dev", 150)]
    ids = [r.recipe_id for r in plan.recipes]
    n_priority = len(PRIORITY_CATEGORIES) * 15
    for k in range(len(PRIORITY_CATEGORIES)):
        dev = sum(plan.splits[i] == "dev" for i in ids[15 * k : 15 * (k + 1)])
        assert dev in (7, 8)
    assert sum(plan.splits[i] == "dev" for i in ids[n_priority:]) == 60
    assert build_test_plan(_test_pool(), _clean(), master_seed=1).splits == plan.splits
    assert build_test_plan(_test_pool(), _clean(), master_seed=2).splits != plan.splits


def test_split_dev_blind_odd_strata_alternate() -> None:
    ids = [f"x{i}" for i in range(9)]
    splits = split_dev_blind(ids, ["a"] * 3 + ["b"] * 3 + ["c"] * 3, master_seed=5)
    per_stratum = [sum(splits[i] == "dev" for i in ids[s : s + 3]) for s in (0, 3, 6)]
    assert per_stratum == [2, 1, 2]
    with pytest.raises(ArgumentError):
        split_dev_blind(ids, ["a"], master_seed=5)


def test_test_plan_reverb_filters_rt60() -> None:
    rirs = [
        ClipRecord("short", "", "rir", 0.5, rt60_ms=200.0),
        ClipRecord("mid", "", "rir", 0.5, rt60_ms=800.0),
    ]
    plan = build_test_plan(_test_pool(), _clean(), 1, rir_records=rirs, reverb=True)
    assert plan.category == "synthetic_reverb"
    assert {r.rir_id for r in plan.recipes} == {"mid"}
    with pytest.raises(PlanError, match="RT60"):
        build_test_plan(_test_pool(), _clean(), 1, rir_records=rirs[:1], reverb=True)


def test_test_plan_short_category() -> None:
    pool = [r for r in _test_pool() if r.clip_id != "fan_000"]
    pool = [r for r in pool if not (r.category == "fan" and r.clip_id > "fan_013")]
    with pytest.raises(PlanError, match="fan"):
        build_test_plan(pool, _clean(), 1)
    with pytest.raises(PlanError):
        build_test_plan(_test_pool(), [], 1)


def test_real_reference_set() -> None:
    rows = [ClipRecord(f"r{i:03d}", "", "clean", 10.0, category="real_internal") for i in range(310)]
    plan = build_real_reference_set(rows, "real_internal", 300)
    assert plan.references[0] == "r000" and len(plan.references) == 300
    assert Counter(plan.splits.values()) == {"dev": 150, "blind": 150}
    assert set(plan.splits) == set(plan.references)
    assert plan.recipes == []
    with pytest.raises(PlanError):
        build_real_reference_set(rows, "real_audioset", 300)

