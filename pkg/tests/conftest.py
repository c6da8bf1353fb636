"""Synthetic audio and manifest fixtures. Nothing here touches real corpora."""
from __future__ import annotations

from pathlib import Path
from typing import Callable, Dict, Iterable, List

import numpy as np
import pytest
from scipy.signal import lfilter

from dns_pipeline.audio import write_wav
from dns_pipeline.manifests import write_manifest
from dns_pipeline.models import AudioClip, ClipRecord

RATE = 16_000


def tone_bursts(seconds: float, seed: int = 0, on_s: float = 0.3, off_s: float = 0.2) -> AudioClip:
    """Speech stand-in: amplitude-modulated tones separated by silences."""
    rng = np.random.default_rng(seed)
    n = int(round(seconds * RATE))
    t = np.arange(n) / RATE
    f0 = 150.0 + 100.0 * rng.random()
    carrier = 0.3 * np.sin(2 * np.pi * f0 * t) * (0.6 + 0.4 * np.sin(2 * np.pi * 4.0 * t))
    period = int(round((on_s + off_s) * RATE))
    gate = (np.arange(n) % period) < int(round(on_s * RATE))
    return AudioClip(carrier * gate, RATE)


def white_noise(seconds: float, seed: int = 0, scale: float = 0.05) -> AudioClip:
    """Noise stand-in: seeded Gaussian noise through a one-pole low-pass."""
    rng = np.random.default_rng(seed)
    colored = lfilter([1.0], [1.0, -0.7], rng.standard_normal(int(round(seconds * RATE))))
    return AudioClip(scale * colored, RATE)


@pytest.fixture
def speech() -> Callable[..., AudioClip]:
    return tone_bursts


@pytest.fixture
def noise() -> Callable[..., AudioClip]:
    return white_noise


@pytest.fixture
def corpus_dir(tmp_path: Path) -> Dict[str, Path]:
    """Two clean speakers and three noise clips on disk, with clean/noise manifests."""
    root = tmp_path / "corpus"
    clean: List[ClipRecord] = []
    for i in range(4):
        clip = tone_bursts(2.0, seed=i)
        path = root / "clean" / f"c{i}.wav"
        write_wav(clip, path)
        clean.append(ClipRecord(f"c{i}", str(path), "clean", 2.0, speaker_id=f"s{i % 2}", chapter_id=f"ch{i}"))
    noise_rows: List[ClipRecord] = []
    for i, label in enumerate(["fan", "typing", "car"]):
        clip = white_noise(1.5, seed=100 + i)
        path = root / "noise" / f"n{i}.wav"
        write_wav(clip, path)
        noise_rows.append(ClipRecord(f"n{i}", str(path), "noise", 1.5, labels=frozenset({label}), category=label))
    write_manifest(clean, root / "clean.csv")
    write_manifest(noise_rows, root / "noise.csv")
    return {"root": root, "clean": root / "clean.csv", "noise": root / "noise.csv"}


def write_config(path: Path, values: Dict[str, object]) -> Path:
    path.write_text("".join(f"{k}={v}\n" for k, v in values.items()), encoding="utf-8")
    return path


def write_csv(path: Path, header: Iterable[str], rows: Iterable[Iterable[object]]) -> Path:
    lines = [",".join(header)] + [",".join(str(x) for x in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
