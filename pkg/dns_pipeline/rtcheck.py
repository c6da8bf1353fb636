"""Submission harness: lookahead causality probe, per-frame compute budget, track
classification, and near-tie ranking by complexity."""
from __future__ import annotations

import os
import platform
import time
from contextlib import contextmanager
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Set

import numpy as np

from .errors import ArgumentError, HarnessError
from .models import (
    AudioClip,
    ProbeResult,
    StreamConstraints,
    SubmissionEntry,
    TimingReport,
    VerifyReport,
)
from .processors import FrameProcessor
from .run_logging import RunLogger
from .seeding import rng_for

MAX_FRAME_MS = 40.0
MAX_LOOKAHEAD_MS = 40.0
MOS_TIE_MARGIN = 0.1
MIN_TIMED_FRAMES = 100


def _run_stream(proc: FrameProcessor, signal: np.ndarray, frame: int) -> List[np.ndarray]:
    """Feed the signal frame by frame, flush with zero frames, and return outputs realigned to input frames."""
    proc.reset()
    n_frames = signal.size // frame
    delay = proc.delay_frames
    outputs = []
    for k in range(n_frames + delay):
        chunk = signal[k * frame : (k + 1) * frame] if k < n_frames else np.zeros(frame)
        out = np.asarray(proc.process(chunk), dtype=np.float64)
        if out.shape != (frame,):
            raise HarnessError(f"processor returned {out.shape[0] if out.ndim else 0} samples for a {frame}-sample frame")
        outputs.append(out)
    return outputs[delay:]


def probe_lookahead(
    proc: FrameProcessor,
    constraints: StreamConstraints,
    trials: int = 50,
    signal_seconds: float = 2.0,
    seed: int = 0,
    logger: Optional[RunLogger] = None,
) -> ProbeResult:
    """Per trial: run signal A, then signal B equal to A up to (t+1)*frame + lookahead samples and
    different after. Output frames 0..t must match bit for bit; any difference is a violation."""
    if proc.frame_ms != constraints.frame_ms:
        raise ArgumentError(f"processor frame {proc.frame_ms} ms, constraints frame {constraints.frame_ms} ms")
    frame = constraints.frame_samples
    ahead = constraints.lookahead_samples
    n_frames = int(round(signal_seconds * 1000.0 / constraints.frame_ms))
    last_t = n_frames - 2 - int(np.ceil(ahead / frame))
    if last_t < 0:
        raise ArgumentError(f"{signal_seconds} s signal is too short to probe {constraints.lookahead_ms} ms lookahead")

    violations = 0
    first_frame: Optional[int] = None
    first_trial: Optional[int] = None
    for trial in range(trials):
        rng = rng_for(seed, trial)
        a = 0.1 * rng.standard_normal(n_frames * frame)
        t = int(rng.integers(0, last_t + 1))
        boundary = (t + 1) * frame + ahead
        b = a.copy()
        b[boundary:] = 0.1 * rng.standard_normal(b.size - boundary)
        try:
            out_a = _run_stream(proc, a, frame)
            out_b = _run_stream(proc, b, frame)
        except HarnessError as exc:
            raise HarnessError(f"trial {trial}: {exc}") from exc
        except Exception as exc:
            raise HarnessError(f"trial {trial}: processor crashed ({type(exc).__name__}: {exc})") from exc
        differing = next((k for k in range(t + 1) if not np.array_equal(out_a[k], out_b[k])), None)
        if differing is not None:
            violations += 1
            if first_frame is None:
                first_frame, first_trial = differing, trial
            if logger:
                logger.log_event(f"[rtcheck] violation trial={trial} boundary_frame={t} first_frame={differing}")
    return ProbeResult(violations == 0, trials, violations, first_frame, first_trial)


def host_descriptor() -> Dict[str, str]:
    return {
        "machine": platform.machine(),
        "processor": platform.processor() or "unknown",
        "platform": platform.platform(),
        "cpu_count": str(os.cpu_count() or 0),
        "python": platform.python_version(),
    }


@contextmanager
def _pinned_cpu(child_pids: Sequence[int] = ()) -> Iterator[Optional[int]]:
    """Pin this process and the given children to one CPU. Yields the CPU, or None without pinning."""
    if not hasattr(os, "sched_setaffinity"):
        yield None
        return
    saved: Dict[int, Set[int]] = {}
    try:
        for pid in (0, *child_pids):
            saved[pid] = os.sched_getaffinity(pid)
        cpu = min(saved[0])
        for pid in saved:
            os.sched_setaffinity(pid, {cpu})
    except OSError:
        _restore_affinity(saved)
        yield None
        return
    try:
        yield cpu
    finally:
        _restore_affinity(saved)


def _restore_affinity(saved: Mapping[int, Set[int]]) -> None:
    for pid, cpus in saved.items():
        try:
            os.sched_setaffinity(pid, cpus)
        except OSError:
            pass  # child already gone


def measure_budget(
    proc: FrameProcessor,
    clip: AudioClip,
    constraints: StreamConstraints,
    warmup_frames: int = 10,
) -> TimingReport:
    """Wall-clock time per process() call, warmup excluded. Passes iff the mean is under T/2.
    Times are not rescaled to any reference CPU; the host descriptor travels with the report."""
    frame = constraints.frame_samples
    n_frames = len(clip) // frame
    if n_frames < warmup_frames + MIN_TIMED_FRAMES:
        raise ArgumentError(
            f"clip has {n_frames} frames, need at least {warmup_frames + MIN_TIMED_FRAMES} (warmup + {MIN_TIMED_FRAMES})"
        )
    proc.reset()
    timings = []
    with _pinned_cpu(proc.child_pids()) as cpu:
        for k in range(n_frames):
            chunk = clip.samples[k * frame : (k + 1) * frame]
            start = time.perf_counter()
            proc.process(chunk)
            elapsed = (time.perf_counter() - start) * 1000.0
            if k >= warmup_frames:
                timings.append(elapsed)
    values = np.asarray(timings)
    mean = float(np.mean(values))
    return TimingReport(
        mean_ms=mean,
        p50_ms=float(np.percentile(values, 50)),
        p95_ms=float(np.percentile(values, 95)),
        max_ms=float(np.max(values)),
        budget_ms=constraints.budget_ms,
        passed=mean < constraints.budget_ms,
        frames=int(values.size),
        host={**host_descriptor(), "pinned_cpu": "none" if cpu is None else str(cpu)},
    )


def classify_track(constraints: StreamConstraints, timing: TimingReport) -> int:
    """Track 1 needs the budget met, frames of at most 40 ms and at most 40 ms lookahead."""
    if timing.passed and constraints.frame_ms <= MAX_FRAME_MS and constraints.lookahead_ms <= MAX_LOOKAHEAD_MS:
        return 1
    return 2


def complexity_key(entry: SubmissionEntry) -> tuple:
    return (entry.param_count, entry.per_frame_ms, entry.entry_id)


def _near_tie(a: SubmissionEntry, b: SubmissionEntry) -> bool:
    return round(abs(a.mos - b.mos), 9) < MOS_TIE_MARGIN


def rank(entries: Sequence[SubmissionEntry]) -> List[SubmissionEntry]:
    """MOS descending, then adjacent swaps to a fixpoint: within a MOS gap under 0.1 the lower
    complexity entry moves up. Each swap removes one complexity inversion, so passes terminate."""
    if len({e.track for e in entries}) > 1:
        raise ArgumentError(f"entries span tracks {sorted({e.track for e in entries})}; rank one track at a time")
    order = sorted(entries, key=lambda e: (-e.mos, complexity_key(e)))
    swapped = True
    while swapped:
        swapped = False
        for i in range(len(order) - 1):
            upper, lower = order[i], order[i + 1]
            if _near_tie(upper, lower) and complexity_key(lower) < complexity_key(upper):
                order[i], order[i + 1] = lower, upper
                swapped = True
    return order


def verify(
    proc: FrameProcessor,
    lookahead_limit_ms: float = MAX_LOOKAHEAD_MS,
    trials: int = 50,
    signal_seconds: float = 2.0,
    timing_frames: int = 200,
    warmup_frames: int = 10,
    seed: int = 0,
    logger: Optional[RunLogger] = None,
) -> VerifyReport:
    """Causality probe against the lookahead limit, timing against T/2, and the resulting track."""
    probe_constraints = StreamConstraints(proc.frame_ms, lookahead_limit_ms, proc.sample_rate)
    declared = StreamConstraints(proc.frame_ms, proc.lookahead_ms, proc.sample_rate)
    if logger:
        logger.log_event(
            f"[rtcheck] probe frame_ms={proc.frame_ms:g} declared_lookahead_ms={proc.lookahead_ms:g} "
            f"limit_ms={lookahead_limit_ms:g} trials={trials}"
        )
    probe = probe_lookahead(proc, probe_constraints, trials, signal_seconds, seed, logger)
    rng = rng_for(seed, trials)
    n = (timing_frames + warmup_frames) * declared.frame_samples
    clip = AudioClip(0.1 * rng.standard_normal(n), proc.sample_rate)
    timing = measure_budget(proc, clip, declared, warmup_frames)
    track = classify_track(declared, timing)
    if logger:
        logger.log_event(
            f"[rtcheck] probe_pass={probe.passed} violations={probe.violations} mean_ms={timing.mean_ms:.3f} "
            f"budget_ms={timing.budget_ms:g} track={track}"
        )
    return VerifyReport(proc.frame_ms, proc.lookahead_ms, lookahead_limit_ms, probe, timing, track)
