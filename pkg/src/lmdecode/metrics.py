"""Word error rate and real-time-factor accounting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class WerCounts:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    reference_words: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        if self.reference_words == 0:
            if self.errors:
                raise ValueError("error rate against an empty reference is undefined")
            return 0.0
        return self.errors / self.reference_words

    def __add__(self, other: "WerCounts") -> "WerCounts":
        return WerCounts(self.substitutions + other.substitutions,
                         self.deletions + other.deletions,
                         self.insertions + other.insertions,
                         self.reference_words + other.reference_words)


def word_error_counts(reference, hypothesis) -> WerCounts:
    """Levenshtein alignment of two word sequences.

    Unit costs for substitution, deletion and insertion; the backtrace
    prefers match/substitution, then deletion, then insertion, so counts
    are deterministic.  A non-empty hypothesis against an empty reference
    raises (the rate would be undefined).
    """
    ref = list(reference)
    hyp = list(hypothesis)
    if not ref and hyp:
        raise ValueError(
            f"hypothesis {hyp!r} scored against an empty reference")
    R, H = len(ref), len(hyp)
    d = np.zeros((R + 1, H + 1), dtype=np.int64)
    d[:, 0] = np.arange(R + 1)
    d[0, :] = np.arange(H + 1)
    for i in range(1, R + 1):
        for j in range(1, H + 1):
            sub = d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            d[i, j] = min(sub, d[i - 1, j] + 1, d[i, j - 1] + 1)
    counts = WerCounts(reference_words=R)
    i, j = R, H
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            counts.substitutions += ref[i - 1] != hyp[j - 1]
            i -= 1
            j -= 1
        elif i > 0 and d[i, j] == d[i - 1, j] + 1:
            counts.deletions += 1
            i -= 1
        else:
            counts.insertions += 1
            j -= 1
    return counts


def wer(reference, hypothesis) -> float:
    """Word error rate of one utterance."""
    return word_error_counts(reference, hypothesis).wer


def corpus_error_counts(pairs) -> WerCounts:
    """Aggregate counts over (reference, hypothesis) pairs."""
    total = WerCounts()
    for ref, hyp in pairs:
        total = total + word_error_counts(ref, hyp)
    return total


@dataclass
class RtfReport:
    """Real-time factor: compute time over audio time.

    ``simulated_seconds`` is LM cost-model time only (deterministic);
    ``compute_seconds`` is measured wall clock.
    """

    audio_seconds: float
    compute_seconds: float = 0.0
    simulated_seconds: float = 0.0

    @property
    def rtf(self) -> float:
        self._check()
        return self.compute_seconds / self.audio_seconds

    @property
    def simulated_rtf(self) -> float:
        self._check()
        return self.simulated_seconds / self.audio_seconds

    def _check(self):
        if self.audio_seconds <= 0:
            raise ValueError(
                f"audio duration must be positive, got {self.audio_seconds}")

    def __add__(self, other: "RtfReport") -> "RtfReport":
        return RtfReport(self.audio_seconds + other.audio_seconds,
                         self.compute_seconds + other.compute_seconds,
                         self.simulated_seconds + other.simulated_seconds)
