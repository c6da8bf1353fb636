"""Frame processor contract for the real-time harness, in-process fixtures, and the subprocess plug-in."""
from __future__ import annotations

import math
import re
import subprocess
import time
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import HarnessError
from .models import CANONICAL_RATE

_HEADER = re.compile(r"frame_ms=(\d+)\s+lookahead_ms=(\d+)")


class FrameProcessor:
    """One input frame in, one output frame out, per call. Implementations may keep any amount
    of past state. A processor declaring lookahead L emits its output for frame k on call
    k + ceil(L / frame_ms); the harness flushes with zero frames and realigns."""

    frame_ms: float = 20.0
    lookahead_ms: float = 0.0
    sample_rate: int = CANONICAL_RATE

    @property
    def frame_samples(self) -> int:
        return int(round(self.frame_ms * self.sample_rate / 1000.0))

    @property
    def delay_frames(self) -> int:
        return int(math.ceil(self.lookahead_ms / self.frame_ms - 1e-9)) if self.lookahead_ms > 0 else 0

    def reset(self) -> None:
        raise NotImplementedError

    def process(self, frame: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def child_pids(self) -> Tuple[int, ...]:
        """Processes doing the work on this processor's behalf, pinned along with the harness."""
        return ()


class PassthroughProcessor(FrameProcessor):
    """Causal by construction: output frame k is input frame k."""

    def __init__(self, frame_ms: float = 20.0, sample_rate: int = CANONICAL_RATE) -> None:
        self.frame_ms = frame_ms
        self.lookahead_ms = 0.0
        self.sample_rate = sample_rate

    def reset(self) -> None:
        pass

    def process(self, frame: np.ndarray) -> np.ndarray:
        return np.array(frame, dtype=np.float64)


class FutureAverageProcessor(FrameProcessor):
    """Output frame t = input frame t + mean of the lookahead_ms samples after it."""

    def __init__(
        self,
        lookahead_ms: float,
        frame_ms: float = 20.0,
        sample_rate: int = CANONICAL_RATE,
    ) -> None:
        self.frame_ms = frame_ms
        self.lookahead_ms = lookahead_ms
        self.sample_rate = sample_rate
        self._history: List[np.ndarray] = []

    def reset(self) -> None:
        self._history = []

    def process(self, frame: np.ndarray) -> np.ndarray:
        n = self.frame_samples
        self._history.append(np.array(frame, dtype=np.float64))
        t = len(self._history) - 1 - self.delay_frames
        if t < 0:
            return np.zeros(n)
        signal = np.concatenate(self._history)
        ahead = int(round(self.lookahead_ms * self.sample_rate / 1000.0))
        window = signal[(t + 1) * n : (t + 1) * n + ahead]
        bias = float(np.mean(window)) if window.size else 0.0
        return signal[t * n : (t + 1) * n] + bias


class SleepProcessor(PassthroughProcessor):
    """Passthrough that burns sleep_ms of wall clock per frame."""

    def __init__(self, sleep_ms: float, frame_ms: float = 20.0, sample_rate: int = CANONICAL_RATE) -> None:
        super().__init__(frame_ms, sample_rate)
        self.sleep_ms = sleep_ms

    def process(self, frame: np.ndarray) -> np.ndarray:
        time.sleep(self.sleep_ms / 1000.0)
        return super().process(frame)


class SubprocessProcessor(FrameProcessor):
    """Child process speaking raw little-endian float32 frames over stdin/stdout. The child
    prints `frame_ms=<int> lookahead_ms=<int>` on its first stdout line. reset() restarts it."""

    def __init__(self, command: Sequence[str], sample_rate: int = CANONICAL_RATE, timeout_s: float = 10.0) -> None:
        self.command = list(command)
        self.sample_rate = sample_rate
        self.timeout_s = timeout_s
        self._proc: Optional[subprocess.Popen] = None
        self._start()

    def _start(self) -> None:
        try:
            self._proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.DEVNULL
            )
        except OSError as exc:
            raise HarnessError(f"cannot start processor {self.command!r}: {exc}") from exc
        assert self._proc.stdout is not None
        header = self._proc.stdout.readline().decode("ascii", errors="replace").strip()
        match = _HEADER.fullmatch(header)
        if not match:
            self.close()
            raise HarnessError(f"processor header {header!r}, expected 'frame_ms=<int> lookahead_ms=<int>'")
        self.frame_ms = float(match.group(1))
        self.lookahead_ms = float(match.group(2))

    def reset(self) -> None:
        self.close()
        self._start()

    def child_pids(self) -> Tuple[int, ...]:
        return (self._proc.pid,) if self._proc is not None else ()

    def process(self, frame: np.ndarray) -> np.ndarray:
        if self._proc is None or self._proc.stdin is None or self._proc.stdout is None:
            raise HarnessError("processor is not running")
        payload = np.asarray(frame, dtype="<f4").tobytes()
        try:
            self._proc.stdin.write(payload)
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise HarnessError(f"processor exited (code {self._proc.poll()})") from exc
        chunks = []
        missing = len(payload)
        while missing:
            chunk = self._proc.stdout.read(missing)
            if not chunk:
                raise HarnessError(f"processor closed its output (code {self._proc.poll()})")
            chunks.append(chunk)
            missing -= len(chunk)
        return np.frombuffer(b"".join(chunks), dtype="<f4").astype(np.float64)

    def close(self) -> None:
        if self._proc is None:
            return
        proc, self._proc = self._proc, None
        for stream in (proc.stdin, proc.stdout):
            try:
                if stream:
                    stream.close()
            except OSError:
                pass
        try:
            proc.wait(timeout=self.timeout_s)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()
