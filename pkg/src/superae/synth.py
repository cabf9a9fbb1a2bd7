"""Seeded synthetic corpora standing in for the real summarization and review data.

copy          summary equals the text
extract-span  a run of "signal" letters hidden in lowercase noise; the summary is that run
sentiment     like extract-span, but the run is drawn from a per-class letter set and the
              record carries the class label; the summary concentrates the label signal
"""

from __future__ import annotations

import numpy as np

from .corpus import TextPair

TASKS = ("copy", "extract-span", "sentiment")

NOISE = "abcdefghijklm"
SIGNAL = "nopqrstuvwxyz"
SENTIMENT = "ABCDEFGHIJKLMNO"   # three letters per class, up to five classes


def _noise(rng: np.random.Generator, n: int) -> str:
    return "".join(rng.choice(list(NOISE), size=n))


def copy_task(n: int, seed: int, min_len: int = 4, max_len: int = 9, alphabet: str = "abcdefghij") -> list[TextPair]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        s = "".join(rng.choice(list(alphabet), size=int(rng.integers(min_len, max_len + 1))))
        out.append(TextPair(s, s))
    return out


def extract_span_task(n: int, seed: int, noise_len: tuple[int, int] = (8, 12),
                      span_len: tuple[int, int] = (3, 5), scored: bool = False) -> list[TextPair]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        span = "".join(rng.choice(list(SIGNAL), size=int(rng.integers(span_len[0], span_len[1] + 1))))
        noise = _noise(rng, int(rng.integers(noise_len[0], noise_len[1] + 1)))
        cut = int(rng.integers(0, len(noise) + 1))
        score = int(rng.integers(1, 6)) if scored else None
        out.append(TextPair(noise[:cut] + span + noise[cut:], span, score))
    return out


def sentiment_task(n: int, seed: int, k: int = 2, purity: float = 0.8, noise_len: tuple[int, int] = (8, 12),
                   span_len: tuple[int, int] = (3, 4)) -> list[TextPair]:
    if not 2 <= k <= len(SENTIMENT) // 3:
        raise ValueError(f"k must be between 2 and {len(SENTIMENT) // 3}")
    rng = np.random.default_rng(seed)
    groups = [SENTIMENT[3 * c:3 * c + 3] for c in range(k)]
    out = []
    for _ in range(n):
        label = int(rng.integers(0, k))
        chars = []
        for _ in range(int(rng.integers(span_len[0], span_len[1] + 1))):
            # mostly on-class letters, occasionally a distractor from another class
            g = label if rng.random() < purity else int(rng.integers(0, k))
            chars.append(str(rng.choice(list(groups[g]))))
        span = "".join(chars)
        noise = _noise(rng, int(rng.integers(noise_len[0], noise_len[1] + 1)))
        cut = int(rng.integers(0, len(noise) + 1))
        out.append(TextPair(noise[:cut] + span + noise[cut:], span, label=label))
    return out


def generate(task: str, n: int, seed: int, **kwargs) -> list[TextPair]:
    if task == "copy":
        return copy_task(n, seed, **kwargs)
    if task == "extract-span":
        return extract_span_task(n, seed, **kwargs)
    if task == "sentiment":
        return sentiment_task(n, seed, **kwargs)
    raise ValueError(f"unknown task {task!r}; choose from {', '.join(TASKS)}")
