"""Bundled plug-in processors for verify-rt: `python -m dns_pipeline.fixtures <name>`.
Speaks the harness protocol: header line, then raw float32 frames on stdin/stdout."""
from __future__ import annotations

import sys
from typing import Callable, Dict

import numpy as np

from .processors import FrameProcessor, FutureAverageProcessor, PassthroughProcessor, SleepProcessor

FIXTURES: Dict[str, Callable[[], FrameProcessor]] = {
    "passthrough": lambda: PassthroughProcessor(),
    "lookahead40": lambda: FutureAverageProcessor(lookahead_ms=40),
    "lookahead60": lambda: FutureAverageProcessor(lookahead_ms=60),
    "sleep1": lambda: SleepProcessor(sleep_ms=1),
    "sleep15": lambda: SleepProcessor(sleep_ms=15),
}


def fixture_command(name: str) -> list:
    return [sys.executable, "-m", "dns_pipeline.fixtures", name]


def serve(processor: FrameProcessor) -> int:
    out = sys.stdout.buffer
    out.write(f"frame_ms={int(processor.frame_ms)} lookahead_ms={int(processor.lookahead_ms)}\n".encode("ascii"))
    out.flush()
    size = processor.frame_samples * 4
    stdin = sys.stdin.buffer
    while True:
        payload = stdin.read(size)
        if len(payload) < size:
            return 0
        frame = np.frombuffer(payload, dtype="<f4").astype(np.float64)
        out.write(np.asarray(processor.process(frame), dtype="<f4").tobytes())
        out.flush()


def main() -> None:
    if len(sys.argv) != 2 or sys.argv[1] not in FIXTURES:
        sys.stderr.write(f"usage: python -m dns_pipeline.fixtures {{{','.join(FIXTURES)}}}\n")
        sys.exit(2)
    sys.exit(serve(FIXTURES[sys.argv[1]]()))


if __name__ == "__main__":
    main()
