"""Noisy-speech corpus synthesis, crowdsourced P.808 scoring, and real-time submission checks."""
__all__ = [
    "audio",
    "activity",
    "synth",
    "corpus",
    "p808",
    "rtcheck",
    "processors",
    "manifests",
    "config",
]
