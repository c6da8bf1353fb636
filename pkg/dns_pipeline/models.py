"""Shared data structures for audio, corpus plans, ratings, and the real-time harness. No business logic."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Tuple

import numpy as np

from .errors import ArgumentError

CANONICAL_RATE = 16_000
PCM_SCALE = 32_768.0
FORMAT_VERSION = 1

# The twelve VoIP-relevant categories sampled 15 clips each for the synthetic test sets.
PRIORITY_CATEGORIES: Tuple[str, ...] = (
    "fan",
    "air_conditioner",
    "typing",
    "door_shutting",
    "clatter",
    "car",
    "munching",
    "creaking_chair",
    "breathing",
    "copy_machine",
    "baby_crying",
    "barking",
)


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = CANONICAL_RATE

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise ArgumentError(f"sample_rate must be positive, got {self.sample_rate}")
        data = np.array(self.samples, dtype=np.float64).reshape(-1)
        data.setflags(write=False)
        object.__setattr__(self, "samples", data)

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration_seconds(self) -> float:
        return len(self) / self.sample_rate

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self.samples))) if len(self) else 0.0


@dataclass(frozen=True)
class Level:
    """RMS level in dBFS. Silence is an explicit marker (dbfs=None), never -inf."""

    dbfs: Optional[float]

    @classmethod
    def silent(cls) -> "Level":
        return cls(None)

    @property
    def is_silent(self) -> bool:
        return self.dbfs is None


@dataclass(frozen=True)
class Gain:
    value: float

    def __post_init__(self) -> None:
        if not self.value >= 0:
            raise ArgumentError(f"gain must be >= 0, got {self.value}")

    @classmethod
    def from_db(cls, db: float) -> "Gain":
        return cls(10.0 ** (db / 20.0))

    @property
    def db(self) -> Optional[float]:
        return 20.0 * math.log10(self.value) if self.value > 0 else None


@dataclass(frozen=True)
class ActivityMask:
    frame_ms: float
    flags: Tuple[bool, ...]

    def __len__(self) -> int:
        return len(self.flags)

    @property
    def active_count(self) -> int:
        return sum(self.flags)


@dataclass(frozen=True)
class SpeechScreenResult:
    clip_id: str
    speech_probability: float
    keep: bool


@dataclass(frozen=True)
class MixRecipe:
    recipe_id: str
    clean_clip_ids: Tuple[str, ...]
    noise_clip_ids: Tuple[str, ...]
    target_snr: float
    target_rms: float
    duration: float = 30.0
    rir_id: Optional[str] = None
    seed: int = 0


@dataclass(frozen=True)
class MixResult:
    recipe_id: str
    mixture: AudioClip
    clean_ref: AudioClip
    noise_ref: AudioClip
    achieved_snr: float
    achieved_rms: float
    clipped_flag: bool
    noise_gain: float = 1.0
    mixture_gain: float = 1.0


@dataclass(frozen=True)
class RirMeta:
    rir_id: str
    impulse: AudioClip
    rt60: float


@dataclass(frozen=True)
class ClipRecord:
    clip_id: str
    path: str
    kind: str  # clean | noise | rir
    duration: float
    labels: FrozenSet[str] = frozenset()
    speaker_id: Optional[str] = None
    chapter_id: Optional[str] = None
    category: Optional[str] = None
    rt60_ms: Optional[float] = None


@dataclass(frozen=True)
class ChapterScore:
    chapter_id: str
    clip_scores: Tuple[Tuple[int, ...], ...]
    mos: float
    ci95: float


@dataclass(frozen=True)
class QuartileSelection:
    selected_ids: Tuple[str, ...]
    threshold_mos: float  # lowest MOS among the selected chapters


@dataclass(frozen=True)
class BalanceResult:
    selected_ids: Tuple[str, ...]
    class_counts: Dict[str, int]
    under_quota: Dict[str, int]  # class -> available count, for classes that cannot reach the quota


@dataclass
class TestPlan:
    __test__ = False  # not a pytest class

    category: str  # synthetic_no_reverb | synthetic_reverb | real_internal | real_audioset
    recipes: List[MixRecipe] = field(default_factory=list)
    composition: Dict[str, int] = field(default_factory=dict)
    references: List[str] = field(default_factory=list)
    splits: Dict[str, str] = field(default_factory=dict)  # recipe or reference id -> dev | blind


@dataclass(frozen=True)
class RatingRecord:
    rater_id: str
    clip_id: str
    group_id: str
    score: int
    timestamp: str = ""
    source_line: Optional[int] = field(default=None, compare=False)  # CSV line, when read from a file


@dataclass(frozen=True)
class GroupAssignment:
    group_id: str
    clip_ids: Tuple[str, ...]
    gold_position: int
    trap_position: int
    gold_expected: int
    trap_expected: int
    padding_positions: Tuple[int, ...] = ()


@dataclass(frozen=True)
class GroupVerdict:
    accepted: bool
    reason: Optional[str] = None  # incomplete | trap | gold


@dataclass(frozen=True)
class ComparisonCheck:
    rater_id: str
    timestamp: str
    passed: bool


@dataclass
class FilterReport:
    accepted: List[RatingRecord] = field(default_factory=list)
    rejections: Dict[str, List[Tuple[str, str]]] = field(default_factory=dict)  # rater -> [(group_id, reason)]
    accepted_groups: int = 0
    rejected_groups: int = 0


@dataclass(frozen=True)
class ScoreSummary:
    subject_id: str
    mos: float
    ci95: float
    n: int


@dataclass(frozen=True)
class StreamConstraints:
    frame_ms: float = 20.0
    lookahead_ms: float = 40.0
    sample_rate: int = CANONICAL_RATE

    @property
    def budget_ms(self) -> float:
        return self.frame_ms / 2.0

    @property
    def frame_samples(self) -> int:
        return int(round(self.frame_ms * self.sample_rate / 1000.0))

    @property
    def lookahead_samples(self) -> int:
        return int(round(self.lookahead_ms * self.sample_rate / 1000.0))


@dataclass(frozen=True)
class SubmissionEntry:
    entry_id: str
    mos: float
    param_count: int
    per_frame_ms: float
    track: int = 1


@dataclass(frozen=True)
class TimingReport:
    mean_ms: float
    p50_ms: float
    p95_ms: float
    max_ms: float
    budget_ms: float
    passed: bool
    frames: int = 0
    host: Dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class ProbeResult:
    passed: bool
    trials: int
    violations: int = 0
    first_frame: Optional[int] = None  # first differing output frame of the first violating trial
    trial: Optional[int] = None


@dataclass
class PipelineConfig:
    master_seed: int = 0
    sample_rate: int = CANONICAL_RATE
    # paths
    clean_manifest: Optional[str] = None
    noise_manifest: Optional[str] = None
    rir_manifest: Optional[str] = None
    output_root: str = "out"
    # training synthesis
    training_count: int = 1000
    snr_range: Tuple[float, float] = (0.0, 40.0)
    rms_range: Tuple[float, float] = (-35.0, -15.0)
    duration_s: float = 30.0
    frame_ms: float = 20.0
    gap_ms: float = 200.0
    loop_speech: bool = True
    headroom_peak: float = 0.99
    # corpus curation
    min_speaker_seconds: float = 900.0
    segment_seconds: float = 10.0
    min_per_class: int = 500
    speech_threshold: float = 0.5
    # test plan
    priority_categories: Tuple[str, ...] = PRIORITY_CATEGORIES
    per_category_count: int = 15
    random_count: int = 120
    test_snr_range: Tuple[float, float] = (0.0, 25.0)
    test_rms_range: Tuple[float, float] = (-35.0, -15.0)
    test_duration_s: float = 10.0
    rt60_range: Tuple[float, float] = (300.0, 1300.0)
    reverb: bool = False
    # p808
    group_size: int = 10
    ratings_per_clip: int = 3
    gold_tolerance: int = 1
    max_ratings_per_rater_per_day: Optional[int] = None
    comparison_window_s: float = 3600.0
    # real-time harness
    lookahead_ms: float = 40.0
    probe_trials: int = 50
    probe_signal_s: float = 2.0
    warmup_frames: int = 10
    timing_frames: int = 200


@dataclass(frozen=True)
class VerifyReport:
    frame_ms: float
    lookahead_ms: float
    lookahead_limit_ms: float
    probe: ProbeResult
    timing: TimingReport
    track: int
