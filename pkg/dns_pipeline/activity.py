"""Frame energy analysis and activity masks for segmental SNR, plus the speech-screening policy for noise clips."""
from __future__ import annotations

import math
from typing import Dict, Iterable, List, Mapping, Tuple

import numpy as np

from .errors import ArgumentError
from .models import ActivityMask, AudioClip, ClipRecord, Level, SpeechScreenResult

DEFAULT_FRAME_MS = 20.0
DEFAULT_REL_THRESHOLD_DB = -40.0
DEFAULT_SPEECH_THRESHOLD = 0.5


def frame_length(sample_rate: int, frame_ms: float) -> int:
    n = int(round(frame_ms * sample_rate / 1000.0))
    if frame_ms <= 0 or n <= 0:
        raise ArgumentError(f"frame_ms must yield at least one sample, got {frame_ms}")
    return n


def frame_powers(clip: AudioClip, frame_ms: float = DEFAULT_FRAME_MS) -> np.ndarray:
    """Mean power per non-overlapping frame; the trailing partial frame is dropped."""
    n = frame_length(clip.sample_rate, frame_ms)
    count = len(clip) // n
    if count < 1:
        raise ArgumentError(f"clip of {len(clip)} samples is shorter than one {frame_ms} ms frame")
    frames = clip.samples[: count * n].reshape(count, n)
    return np.mean(np.square(frames), axis=1)


def frame_rms_db(clip: AudioClip, frame_ms: float = DEFAULT_FRAME_MS) -> List[Level]:
    return [Level(10.0 * math.log10(p)) if p > 0 else Level.silent() for p in frame_powers(clip, frame_ms)]


def _mask_from_powers(powers: np.ndarray, rel_threshold_db: float) -> np.ndarray:
    peak = float(np.max(powers)) if powers.size else 0.0
    if peak <= 0.0:
        return np.zeros(powers.shape, dtype=bool)
    floor = peak * 10.0 ** (rel_threshold_db / 10.0)
    return (powers > 0.0) & (powers >= floor)


def active_mask(
    clip: AudioClip,
    frame_ms: float = DEFAULT_FRAME_MS,
    rel_threshold_db: float = DEFAULT_REL_THRESHOLD_DB,
) -> ActivityMask:
    """A frame is active when its RMS is within rel_threshold_db of the loudest frame.
    The threshold is relative, so the mask does not change under a global gain."""
    flags = _mask_from_powers(frame_powers(clip, frame_ms), rel_threshold_db)
    return ActivityMask(frame_ms, tuple(bool(f) for f in flags))


def intersect(a: ActivityMask, b: ActivityMask) -> ActivityMask:
    if a.frame_ms != b.frame_ms:
        raise ArgumentError(f"frame_ms mismatch: {a.frame_ms} vs {b.frame_ms}")
    return ActivityMask(a.frame_ms, tuple(x and y for x, y in zip(a.flags, b.flags)))


def screen_noise_clip(
    clip_id: str,
    speech_probability: float,
    threshold: float = DEFAULT_SPEECH_THRESHOLD,
) -> SpeechScreenResult:
    """Keep a noise clip only if its detector speech probability is strictly below threshold.
    The probability comes from an external detector; this is the policy only."""
    if not 0.0 <= speech_probability <= 1.0 or math.isnan(speech_probability):
        raise ArgumentError(f"{clip_id}: speech probability {speech_probability} outside [0, 1]")
    return SpeechScreenResult(clip_id, float(speech_probability), speech_probability < threshold)


def screen_manifest(
    records: Iterable[ClipRecord],
    probabilities: Mapping[str, float],
    threshold: float = DEFAULT_SPEECH_THRESHOLD,
) -> Tuple[List[ClipRecord], Dict[str, List[str]]]:
    """Apply the screening policy to every noise row. Rows with no probability are kept and reported."""
    kept: List[ClipRecord] = []
    report: Dict[str, List[str]] = {"dropped": [], "unscreened": []}
    for record in records:
        if record.kind != "noise":
            kept.append(record)
            continue
        if record.clip_id not in probabilities:
            report["unscreened"].append(record.clip_id)
            kept.append(record)
            continue
        verdict = screen_noise_clip(record.clip_id, probabilities[record.clip_id], threshold)
        if verdict.keep:
            kept.append(record)
        else:
            report["dropped"].append(record.clip_id)
    return kept, report
