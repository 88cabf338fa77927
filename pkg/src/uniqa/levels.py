"""Five-level MOS binning and the per-level word lists shared by the mock
captioner and the synthetic comment generator."""

from __future__ import annotations

import enum
import math
from fractions import Fraction

from .errors import DomainError


class QualityLevel(enum.IntEnum):
    BAD = 1
    POOR = 2
    FAIR = 3
    GOOD = 4
    PERFECT = 5

    @property
    def word(self) -> str:
        return self.name.lower()

    @classmethod
    def from_word(cls, word: str) -> "QualityLevel":
        try:
            return cls[word.strip().upper()]
        except KeyError:
            raise DomainError(f"unknown quality level {word!r}") from None


LEVELS = tuple(QualityLevel)
LEVEL_WORDS = tuple(lv.word for lv in LEVELS)


def bin_level(mos: float, scale: tuple[float, float]) -> QualityLevel:
    """Equal-width five-way bin of ``mos`` over ``scale``.

    Bins are half-open ``[lo + (i-1)w, lo + iw)`` except the top one, which
    also owns ``hi``. So anything in the top 20% of the range is ``perfect``.
    """
    lo, hi = float(scale[0]), float(scale[1])
    if not lo < hi:
        raise DomainError(f"score range must satisfy lo < hi, got ({lo}, {hi})")
    if not lo <= mos <= hi:
        raise DomainError(f"mos {mos} outside score range ({lo}, {hi})")
    # exact rational arithmetic so cut points never drift with round-off
    num = (Fraction(mos) - Fraction(lo)) * 5
    idx = min(math.floor(num / (Fraction(hi) - Fraction(lo))), 4)
    return LEVELS[idx]


# Disjoint across levels within a task; the desk-scale contrastive signal
# depends on it.
LEXICONS: dict[str, dict[QualityLevel, tuple[str, ...]]] = {
    "iqa": {
        QualityLevel.BAD: ("blurry", "noisy", "washed-out", "grainy", "distorted", "degraded"),
        QualityLevel.POOR: ("soft", "hazy", "muddy", "faint", "dull", "uneven"),
        QualityLevel.FAIR: ("acceptable", "moderate", "average", "ordinary", "passable", "adequate"),
        QualityLevel.GOOD: ("clear", "crisp", "clean", "pleasant", "balanced", "detailed"),
        QualityLevel.PERFECT: ("sharp", "vivid", "well-composed", "spotless", "brilliant", "pristine"),
    },
    "iaa": {
        QualityLevel.BAD: ("cluttered", "dim", "awkward", "chaotic", "lifeless", "messy"),
        QualityLevel.POOR: ("plain", "flat", "unbalanced", "murky", "bland", "crowded"),
        QualityLevel.FAIR: ("decent", "reasonable", "standard", "modest", "conventional", "tolerable"),
        QualityLevel.GOOD: ("appealing", "warm", "harmonious", "lovely", "tidy", "bright"),
        QualityLevel.PERFECT: ("stunning", "striking", "graceful", "luminous", "elegant", "captivating"),
    },
}
