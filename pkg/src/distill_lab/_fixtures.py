"""Locations of the committed fixture files shipped with the package."""
from __future__ import annotations

import json
from functools import lru_cache
from pathlib import Path

FIXTURE_DIR = Path(__file__).parent / "fixtures"
THRESHOLDS = FIXTURE_DIR / "thresholds.json"
WEIGHTS = FIXTURE_DIR / "denoiser.dlw"
GOLDEN_SCENE0 = FIXTURE_DIR / "scene0_canonical.png"
CONFIG = FIXTURE_DIR / "experiment.json"


@lru_cache(maxsize=1)
def thresholds() -> dict:
    return json.loads(THRESHOLDS.read_text(encoding="utf-8"))


def threshold(key: str):
    try:
        return thresholds()[key]
    except KeyError:
        raise KeyError(f"fixtures/thresholds.json has no entry {key!r}") from None
