"""Noisy-speech synthesis: segmental SNR over jointly active frames, closed-form noise gain,
30 s bed augmentation, level-normalized mixing, and RIR convolution."""
from __future__ import annotations

import math
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import fftconvolve

from .activity import DEFAULT_FRAME_MS, active_mask, frame_length, intersect
from .audio import DEFAULT_HEADROOM_PEAK, apply_gain, mean_power, normalize_to_dbfs, read_wav, rms_dbfs
from .errors import ArgumentError, MaterialError, PipelineError, RecipeError, UndefinedSnrError
from .models import AudioClip, ClipRecord, Gain, Level, MixRecipe, MixResult, RirMeta

DEFAULT_GAP_MS = 200.0


def _check_rates(a: AudioClip, b: AudioClip) -> None:
    if a.sample_rate != b.sample_rate:
        raise ArgumentError(f"sample rate mismatch: {a.sample_rate} vs {b.sample_rate}")


def _joint_powers(speech: AudioClip, noise: AudioClip, frame_ms: float) -> Tuple[float, float]:
    """Mean per-sample powers of speech and noise over frames active in both masks."""
    _check_rates(speech, noise)
    joint = intersect(active_mask(speech, frame_ms), active_mask(noise, frame_ms))
    frames = np.flatnonzero(np.asarray(joint.flags, dtype=bool))
    if frames.size == 0:
        raise UndefinedSnrError("no frame where both speech and noise are active")
    n = frame_length(speech.sample_rate, frame_ms)
    idx = (frames[:, None] * n + np.arange(n)[None, :]).reshape(-1)
    return mean_power(speech.samples[idx]), mean_power(noise.samples[idx])


def segmental_snr_db(speech: AudioClip, noise: AudioClip, frame_ms: float = DEFAULT_FRAME_MS) -> float:
    ps, pn = _joint_powers(speech, noise, frame_ms)
    return 10.0 * math.log10(ps / pn)


def noise_gain_for_snr(
    speech: AudioClip,
    noise: AudioClip,
    target: float,
    frame_ms: float = DEFAULT_FRAME_MS,
) -> Gain:
    if not math.isfinite(target):
        raise ArgumentError(f"target SNR must be finite, got {target}")
    ps, pn = _joint_powers(speech, noise, frame_ms)
    return Gain(math.sqrt(ps / (pn * 10.0 ** (target / 10.0))))


def build_long_clip(
    sources: Sequence[AudioClip],
    duration: float,
    gap_ms: float = DEFAULT_GAP_MS,
    loop_if_short: bool = True,
) -> AudioClip:
    """Concatenate sources in order with gap_ms of silence between them, looping from the
    first source when loop_if_short, then cut to exactly `duration` seconds."""
    if not sources:
        raise ArgumentError("build_long_clip needs at least one source")
    if duration <= 0:
        raise ArgumentError(f"duration must be positive, got {duration}")
    rate = sources[0].sample_rate
    for clip in sources[1:]:
        _check_rates(sources[0], clip)
    target = int(round(duration * rate))
    gap = np.zeros(int(round(gap_ms * rate / 1000.0)))
    if not any(len(c) for c in sources):
        raise MaterialError("all sources are empty")

    pieces = []
    total = 0
    i = 0
    while total < target:
        if i >= len(sources) and not loop_if_short:
            raise MaterialError(f"sources provide {total / rate:.2f} s, need {duration:.2f} s")
        if i > 0 and gap.size:
            pieces.append(gap)
            total += gap.size
        clip = sources[i % len(sources)]
        pieces.append(clip.samples)
        total += len(clip)
        i += 1
    return AudioClip(np.concatenate(pieces)[:target], rate)


def convolve_rir(clip: AudioClip, rir: RirMeta) -> AudioClip:
    """Full linear convolution cut to the input length, rescaled to the input's RMS."""
    if len(rir.impulse) == 0:
        raise ArgumentError(f"RIR {rir.rir_id!r} has an empty impulse")
    _check_rates(clip, rir.impulse)
    wet = fftconvolve(clip.samples, rir.impulse.samples, mode="full")[: len(clip)]
    dry_power = mean_power(clip.samples)
    wet_power = mean_power(wet)
    if dry_power > 0 and wet_power > 0:
        wet = wet * math.sqrt(dry_power / wet_power)
    return AudioClip(wet, clip.sample_rate)


def mix(
    recipe: MixRecipe,
    clean_clips: Sequence[AudioClip],
    noise_clips: Sequence[AudioClip],
    rir: Optional[RirMeta] = None,
    frame_ms: float = DEFAULT_FRAME_MS,
    gap_ms: float = DEFAULT_GAP_MS,
    loop_speech: bool = True,
    headroom_peak: float = DEFAULT_HEADROOM_PEAK,
) -> MixResult:
    """Build the speech and noise beds, solve the noise gain for the target segmental SNR,
    then level the mixture with one global gain that is also applied to both references."""
    try:
        speech = build_long_clip(clean_clips, recipe.duration, gap_ms=gap_ms, loop_if_short=loop_speech)
        noise = build_long_clip(noise_clips, recipe.duration, gap_ms=0.0, loop_if_short=True)
        if rir is not None:
            speech = convolve_rir(speech, rir)
        g_n = noise_gain_for_snr(speech, noise, recipe.target_snr, frame_ms)
        scaled_noise = apply_gain(noise, g_n)
        raw = AudioClip(speech.samples + scaled_noise.samples, speech.sample_rate)
        _, g_mix, clipped = normalize_to_dbfs(raw, Level(recipe.target_rms), headroom_peak)
        clean_ref = apply_gain(speech, g_mix)
        noise_ref = apply_gain(scaled_noise, g_mix)
        mixture = AudioClip(clean_ref.samples + noise_ref.samples, speech.sample_rate)
        achieved_snr = segmental_snr_db(clean_ref, noise_ref, frame_ms)
        achieved_rms = rms_dbfs(mixture)
    except PipelineError as exc:
        raise RecipeError(recipe.recipe_id, exc) from exc
    return MixResult(
        recipe_id=recipe.recipe_id,
        mixture=mixture,
        clean_ref=clean_ref,
        noise_ref=noise_ref,
        achieved_snr=achieved_snr,
        achieved_rms=achieved_rms.dbfs if not achieved_rms.is_silent else float("-inf"),
        clipped_flag=clipped,
        noise_gain=g_n.value,
        mixture_gain=g_mix.value,
    )


class ClipResolver:
    """Loads the clips a recipe names from manifest rows, caching each file read."""

    def __init__(self, records: Sequence[ClipRecord], sample_rate: int = 16_000) -> None:
        self.records: Dict[str, ClipRecord] = {r.clip_id: r for r in records}
        self.sample_rate = sample_rate
        self._cache: Dict[str, AudioClip] = {}

    def clip(self, clip_id: str) -> AudioClip:
        if clip_id not in self._cache:
            record = self.records.get(clip_id)
            if record is None:
                raise MaterialError(f"clip {clip_id!r} not in any manifest")
            self._cache[clip_id] = read_wav(record.path, expected_rate=self.sample_rate)
        return self._cache[clip_id]

    def rir(self, rir_id: str) -> RirMeta:
        record = self.records.get(rir_id)
        if record is None:
            raise MaterialError(f"RIR {rir_id!r} not in any manifest")
        return RirMeta(rir_id, self.clip(rir_id), record.rt60_ms if record.rt60_ms is not None else float("nan"))


def resolve_recipe(
    recipe: MixRecipe, resolver: ClipResolver
) -> Tuple[list, list, Optional[RirMeta]]:
    try:
        clean = [resolver.clip(c) for c in recipe.clean_clip_ids]
        noise = [resolver.clip(c) for c in recipe.noise_clip_ids]
        rir = resolver.rir(recipe.rir_id) if recipe.rir_id else None
    except (PipelineError, OSError) as exc:
        raise RecipeError(recipe.recipe_id, exc) from exc
    return clean, noise, rir
