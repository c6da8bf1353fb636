"""WAV persistence (16-bit PCM mono) and RMS/dBFS level arithmetic shared by every DSP stage."""
from __future__ import annotations

import math
import struct
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import soundfile as sf

from .errors import ArgumentError, AudioFormatError, CorruptFileError
from .models import CANONICAL_RATE, PCM_SCALE, AudioClip, Gain, Level

PathLike = Union[str, Path]

DEFAULT_HEADROOM_PEAK = 0.99
PCM16_MONO_BLOCK = 2
_UNSIZED = (0, 0xFFFFFFFF)


def _declared_data_bytes(path: Path) -> Optional[int]:
    """Size the RIFF header declares for the `data` chunk, or None when there is no such chunk."""
    with path.open("rb") as handle:
        head = handle.read(12)
        if len(head) < 12 or head[:4] != b"RIFF" or head[8:12] != b"WAVE":
            return None
        while True:
            chunk = handle.read(8)
            if len(chunk) < 8:
                return None
            size = struct.unpack("<I", chunk[4:])[0]
            if chunk[:4] == b"data":
                return size
            handle.seek(size + (size & 1), 1)


def read_wav(path: PathLike, expected_rate: int = CANONICAL_RATE) -> AudioClip:
    """Read a RIFF/WAVE 16-bit PCM mono file. PCM value v maps to v/32768."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    try:
        info = sf.info(str(path))
    except (RuntimeError, sf.SoundFileError) as exc:
        raise CorruptFileError(f"{path}: unreadable or truncated WAV ({exc})") from exc
    if info.format != "WAV":
        raise AudioFormatError(f"{path}: container {info.format!r}, expected WAV")
    if info.subtype != "PCM_16":
        raise AudioFormatError(f"{path}: subtype {info.subtype!r}, expected PCM_16")
    if info.channels != 1:
        raise AudioFormatError(f"{path}: {info.channels} channels, expected mono")
    if expected_rate and info.samplerate != expected_rate:
        raise AudioFormatError(f"{path}: sample rate {info.samplerate} Hz, expected {expected_rate} Hz")
    declared = _declared_data_bytes(path)
    if declared is not None and declared not in _UNSIZED and declared // PCM16_MONO_BLOCK > info.frames:
        raise CorruptFileError(
            f"{path}: truncated, header declares {declared // PCM16_MONO_BLOCK} frames, file holds {info.frames}"
        )
    try:
        pcm, rate = sf.read(str(path), dtype="int16", always_2d=False)
    except (RuntimeError, sf.SoundFileError) as exc:
        raise CorruptFileError(f"{path}: truncated or corrupt data ({exc})") from exc
    if pcm.shape[0] != info.frames:
        raise CorruptFileError(f"{path}: header declares {info.frames} frames, read {pcm.shape[0]}")
    return AudioClip(pcm.astype(np.float64) / PCM_SCALE, int(rate))


def quantize(samples: np.ndarray) -> np.ndarray:
    """Round half away from zero onto the int16 grid, saturating at full scale."""
    scaled = np.asarray(samples, dtype=np.float64) * PCM_SCALE
    rounded = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    return np.clip(rounded, -32768, 32767).astype(np.int16)


def write_wav(clip: AudioClip, path: PathLike) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    sf.write(str(path), quantize(clip.samples), clip.sample_rate, subtype="PCM_16", format="WAV")


def mean_power(samples: np.ndarray) -> float:
    return float(np.mean(np.square(samples, dtype=np.float64)))


def rms_dbfs(clip: AudioClip) -> Level:
    if len(clip) == 0:
        raise ArgumentError("rms of an empty clip is undefined")
    power = mean_power(clip.samples)
    if power == 0.0:
        return Level.silent()
    return Level(10.0 * math.log10(power))


def apply_gain(clip: AudioClip, g: Gain) -> AudioClip:
    """Scale every sample by g. No clamping; clip-safety is the caller's explicit step."""
    return AudioClip(clip.samples * g.value, clip.sample_rate)


def normalize_to_dbfs(
    clip: AudioClip,
    target: Level,
    headroom_peak: float = DEFAULT_HEADROOM_PEAK,
) -> Tuple[AudioClip, Gain, bool]:
    """Gain the clip to the target RMS. If the peak would exceed headroom_peak the gain
    is reduced so the peak lands exactly on headroom_peak and the clipped flag is set."""
    if target.is_silent:
        raise ArgumentError("target level must be finite")
    current = rms_dbfs(clip)
    if current.is_silent:
        raise ArgumentError("cannot normalize a silent clip")
    gain = 10.0 ** ((target.dbfs - current.dbfs) / 20.0)
    clipped = False
    peak = clip.peak
    if peak * gain > headroom_peak:
        gain = headroom_peak / peak
        clipped = True
    return apply_gain(clip, Gain(gain)), Gain(gain), clipped
