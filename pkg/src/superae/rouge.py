"""Sentence-level ROUGE-1/2/L F1 with corpus averaging."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, p: float, r: float) -> "RougeScore":
        return cls(p, r, 2 * p * r / (p + r) if p + r > 0 else 0.0)

    @classmethod
    def from_counts(cls, overlap: int, n_cand: int, n_ref: int) -> "RougeScore":
        # 2PR/(P+R) rewritten over integer counts, so exact ratios stay exact
        p = overlap / n_cand if n_cand else 0.0
        r = overlap / n_ref if n_ref else 0.0
        f1 = 2 * overlap / (n_cand + n_ref) if overlap else 0.0
        return cls(p, r, f1)


def tokenize(text: str, unit: str = "char") -> list[str]:
    """Character tokens (for unsegmented text such as Chinese) or whitespace tokens."""
    if unit == "char":
        return [ch for ch in text if not ch.isspace()]
    if unit == "whitespace":
        return text.split()
    raise ValueError(f"unknown token unit {unit!r}")


def _ngrams(seq: Sequence[Hashable], n: int) -> Counter:
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def rouge_n(candidate: Sequence[Hashable], reference: Sequence[Hashable], n: int = 1) -> RougeScore:
    if n < 1:
        raise ValueError("n must be >= 1")
    cand, ref = _ngrams(candidate, n), _ngrams(reference, n)
    overlap = sum((cand & ref).values())
    return RougeScore.from_counts(overlap, sum(cand.values()), sum(ref.values()))


def lcs_length(a: Sequence[Hashable], b: Sequence[Hashable]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[Hashable], reference: Sequence[Hashable]) -> RougeScore:
    return RougeScore.from_counts(lcs_length(candidate, reference), len(candidate), len(reference))


METRICS = ("rouge-1", "rouge-2", "rouge-l")


def score_pair(candidate, reference) -> dict[str, RougeScore]:
    return {"rouge-1": rouge_n(candidate, reference, 1),
            "rouge-2": rouge_n(candidate, reference, 2),
            "rouge-l": rouge_l(candidate, reference)}


def corpus_rouge(pairs: Iterable[tuple[Sequence[Hashable], Sequence[Hashable]]]) -> dict[str, RougeScore]:
    """Unweighted mean of per-pair precision, recall and F1 for each metric."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("corpus_rouge: no pairs")
    sums = {m: [0.0, 0.0, 0.0] for m in METRICS}
    for cand, ref in pairs:
        for m, s in score_pair(cand, ref).items():
            acc = sums[m]
            acc[0] += s.precision
            acc[1] += s.recall
            acc[2] += s.f1
    n = len(pairs)
    return {m: RougeScore(p / n, r / n, f / n) for m, (p, r, f) in sums.items()}


def format_table(scores: dict[str, RougeScore]) -> str:
    lines = [f"{'metric':<8} {'P':>8} {'R':>8} {'F1':>8}"]
    for m in METRICS:
        s = scores[m]
        lines.append(f"{m.upper():<8} {s.precision:>8.4f} {s.recall:>8.4f} {s.f1:>8.4f}")
    return "\n".join(lines)
