"""Token error rate with deletion/insertion/substitution breakdown.

WER here is computed over token ids and pooled at the corpus level: error
counts and reference lengths are summed across utterances and divided once.
Pooled WER is the ratio of sums, never the mean of per-utterance rates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

DEFAULT_BUCKET_EDGES = (8, 16, 32, 64)


@dataclass(frozen=True)
class WerBreakdown:
    """Alignment error counts against a reference of ref_len tokens."""

    ref_len: int
    deletions: int
    insertions: int
    substitutions: int

    @property
    def errors(self) -> int:
        return self.deletions + self.insertions + self.substitutions

    @property
    def wer(self) -> float:
        if self.ref_len == 0:
            raise ValueError("WER is undefined for an empty reference")
        return self.errors / self.ref_len

    @property
    def deletion_rate(self) -> float:
        return self.deletions / self.ref_len

    @property
    def insertion_rate(self) -> float:
        return self.insertions / self.ref_len

    @property
    def substitution_rate(self) -> float:
        return self.substitutions / self.ref_len

    def __add__(self, other: "WerBreakdown") -> "WerBreakdown":
        return WerBreakdown(
            self.ref_len + other.ref_len,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.substitutions + other.substitutions,
        )


def edit_align(ref: Sequence[int], hyp: Sequence[int]) -> WerBreakdown:
    """Minimum-edit-distance alignment with unit costs.

    The traceback breaks cost ties by preferring the diagonal move (match or
    substitution), then deletion, then insertion, so the D/I/S split is
    deterministic; the total always equals the Levenshtein distance.
    """
    ref = [int(t) for t in ref]
    hyp = [int(t) for t in hyp]
    n, m = len(ref), len(hyp)
    cost = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        cost[i][0] = i
    for j in range(1, m + 1):
        cost[0][j] = j
    for i in range(1, n + 1):
        row, prev = cost[i], cost[i - 1]
        r = ref[i - 1]
        for j in range(1, m + 1):
            row[j] = min(
                prev[j - 1] + (r != hyp[j - 1]),
                prev[j] + 1,
                row[j - 1] + 1,
            )
    deletions = insertions = substitutions = 0
    i, j = n, m
    while i > 0 or j > 0:
        here = cost[i][j]
        if i > 0 and j > 0 and here == cost[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            substitutions += ref[i - 1] != hyp[j - 1]
            i -= 1
            j -= 1
        elif i > 0 and here == cost[i - 1][j] + 1:
            deletions += 1
            i -= 1
        else:
            insertions += 1
            j -= 1
    return WerBreakdown(n, deletions, insertions, substitutions)


def bucket_label(ref_len: int, edges: Sequence[int] = DEFAULT_BUCKET_EDGES) -> str:
    lo = 1
    for edge in edges:
        if ref_len <= edge:
            return f"{lo}-{edge}"
        lo = edge + 1
    return f">{edges[-1]}"


def corpus_wer(
    pairs: Sequence[tuple[Sequence[int], Sequence[int]]],
    bucket_edges: Sequence[int] = DEFAULT_BUCKET_EDGES,
) -> tuple[WerBreakdown, dict[str, WerBreakdown]]:
    """Pooled breakdown over (reference, hypothesis) pairs plus per-bucket
    breakdowns keyed by reference-length range."""
    if not pairs:
        raise ValueError("corpus_wer requires at least one (ref, hyp) pair")
    total = WerBreakdown(0, 0, 0, 0)
    buckets: dict[str, WerBreakdown] = {}
    for ref, hyp in pairs:
        one = edit_align(ref, hyp)
        total = total + one
        label = bucket_label(one.ref_len, bucket_edges)
        buckets[label] = buckets.get(label, WerBreakdown(0, 0, 0, 0)) + one
    return total, buckets
